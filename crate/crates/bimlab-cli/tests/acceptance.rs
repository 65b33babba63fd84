//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test --release --test acceptance`, or pick
//! criteria by number: `cargo test --release --test acceptance -- 1 7 13`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::time::{Duration, Instant};

use bimlab::RngStream;
use bimlab_cli::experiments::{
    chain_law, cone_search, coupling_sim, cover_sim, csl, escape_polyline, hitting_bench, kernel_check, xi_estimate,
};
use bimlab_cli::report::Outcome;
use bimlab_cli::Experiment;

const SEED: u64 = 1;

struct Verdict {
    passed: bool,
    detail: String,
}

fn stream(criterion: u64) -> RngStream {
    RngStream::new(SEED, criterion)
}

fn kernel_params() -> kernel_check::Params {
    kernel_check::Params {
        instances: 1000,
        zero_instances: 100,
        ..Default::default()
    }
}

fn properties(results: &[kernel_check::PropertyResult]) -> Verdict {
    let passed = results.iter().all(|r| r.violations == 0);
    let detail = results
        .iter()
        .map(|r| {
            format!(
                "{}: {}/{} violations, worst {:e}",
                r.name, r.violations, r.instances, r.worst
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Verdict { passed, detail }
}

fn outcome(out: Result<Outcome, String>) -> Verdict {
    match out {
        Ok(o) => Verdict {
            passed: o.passed(),
            detail: o
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{}: {}", c.name, c.detail))
                .chain(o.passed().then(|| format!("{} checks passed", o.checks.len())))
                .collect::<Vec<_>>()
                .join("; "),
        },
        Err(e) => Verdict {
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn c1() -> Verdict {
    let p = kernel_params();
    let s = stream(1);
    properties(&[
        kernel_check::run_property("rk_identity", p.instances, &s, |r| {
            kernel_check::rk_identity(&p, false, r)
        }),
        kernel_check::run_property("rk_identity_zeros", p.zero_instances, &s, |r| {
            kernel_check::rk_identity(&p, true, r)
        }),
    ])
}

fn c2() -> Verdict {
    let p = kernel_params();
    let s = stream(2);
    properties(&[
        kernel_check::run_property("submultiplicative_t", p.instances, &s, |r| {
            kernel_check::submult_t(&p, r)
        }),
        kernel_check::run_property("submultiplicative_r", p.instances, &s, |r| {
            kernel_check::submult_r(&p, r)
        }),
    ])
}

fn c3() -> Verdict {
    let p = kernel_params();
    let s = stream(3);
    properties(&[
        kernel_check::run_property("averaging", p.instances, &s, |r| kernel_check::averaging(&p, r)),
        kernel_check::run_property("min_max", p.instances, &s, |r| kernel_check::min_max(&p, r)),
    ])
}

fn c4() -> Verdict {
    let p = kernel_params();
    properties(&[kernel_check::run_property("tricky", 200, &stream(4), |r| {
        kernel_check::tricky(&p, r)
    })])
}

fn c5() -> Verdict {
    let p = kernel_params();
    properties(&[kernel_check::run_property(
        "maximal_coupling",
        p.instances,
        &stream(5),
        |r| kernel_check::coupling(&p, r),
    )])
}

fn c6() -> Verdict {
    // The cone replay is not part of this criterion.
    let p = cover_sim::Params::default();
    let (checked, failed) = match cover_sim::shift_exhaustive(&p) {
        Ok(v) => v,
        Err(e) => {
            return Verdict {
                passed: false,
                detail: e,
            }
        }
    };
    let gap = match cover_sim::cdf_worst_gap(&p, &stream(6)) {
        Ok(g) => g,
        Err(e) => {
            return Verdict {
                passed: false,
                detail: e,
            }
        }
    };
    let cases = cover_sim::chernoff_cases(&p);
    let bad = cases.iter().filter(|c| !(c.bound >= c.tail)).count();
    Verdict {
        passed: failed == 0 && gap <= p.cdf_tolerance && !cases.is_empty() && bad == 0,
        detail: format!(
            "shift {failed}/{checked} failures; cdf worst gap {gap:e}; chernoff {bad}/{} failures",
            cases.len()
        ),
    }
}

fn c7() -> Verdict {
    outcome(chain_law::ChainLaw::run(&chain_law::Params::default(), &stream(7)))
}

fn c8() -> Verdict {
    let p = hitting_bench::Params::default();
    let rows = match hitting_bench::hit_rows(&p, &stream(8)) {
        Ok(r) => r,
        Err(e) => {
            return Verdict {
                passed: false,
                detail: e,
            }
        }
    };
    let envelope = rows
        .iter()
        .all(|r| r.upper_excess <= p.tolerance && r.lower_excess <= p.tolerance);
    let ratio = hitting_bench::scaled_ratio(&rows);
    let worst = rows
        .iter()
        .map(|r| r.upper_excess.max(r.lower_excess))
        .fold(f64::NEG_INFINITY, f64::max);
    Verdict {
        passed: envelope && ratio <= 1.25,
        detail: format!("largest envelope excess {worst:e}; scaled hit max/min {ratio:.4}"),
    }
}

fn c9() -> Verdict {
    let p = cone_search::Params {
        seeds: 100,
        ..Default::default()
    };
    let rows = cone_search::search_all(&p, &stream(9));
    let ok = rows.iter().filter(|r| r.verified).count();
    Verdict {
        passed: ok >= 99,
        detail: format!("{ok} of {} seeds verified", rows.len()),
    }
}

fn c10() -> Verdict {
    outcome(coupling_sim::CouplingSim::run(
        &coupling_sim::Params::default(),
        &stream(10),
    ))
}

fn c11() -> Verdict {
    outcome(csl::Csl::run(&csl::Params::default(), &stream(11)))
}

fn c12() -> Verdict {
    outcome(xi_estimate::XiEstimate::run(
        &xi_estimate::Params::default(),
        &stream(12),
    ))
}

fn c13() -> Verdict {
    let p = escape_polyline::Params::default();
    let rows = escape_polyline::trace_rows(&p, &stream(13));
    let held = rows.iter().filter(|r| r.holds()).count();
    let worst = rows.iter().map(|r| r.c5 / r.bound).fold(0.0, f64::max);
    Verdict {
        passed: rows.len() as u64 == p.traces && held == rows.len(),
        detail: format!("{held} of {} traces hold; largest c5/bound {worst:.3}", rows.len()),
    }
}

type Criterion = (u64, &'static str, Option<Duration>, fn() -> Verdict);

fn criteria() -> Vec<Criterion> {
    let s = Duration::from_secs;
    vec![
        (1, "switching-constant identity", Some(s(10)), c1),
        (2, "submultiplicativity", Some(s(5)), c2),
        (3, "averaging and min/max", Some(s(5)), c3),
        (4, "contraction bound", Some(s(5)), c4),
        (5, "maximal coupling", Some(s(1)), c5),
        (6, "cover-time exactness", Some(s(30)), c6),
        (7, "sphere-chain law", Some(s(30)), c7),
        (8, "cylinder hitting", Some(s(300)), c8),
        (9, "uncovered cones", Some(s(600)), c9),
        (10, "layered coupling", Some(s(120)), c10),
        (11, "conditional separation", Some(s(1200)), c11),
        (12, "intersection exponent", None, c12),
        (13, "escape polyline", Some(s(600)), c13),
    ]
}

fn main() {
    // libtest flags such as --nocapture are ignored; numbers select criteria.
    let picked: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, f) in criteria() {
        if !picked.is_empty() && !picked.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        let took = t.elapsed();
        let in_time = budget.is_none_or(|b| took <= b);
        let ok = v.passed && in_time;
        if !ok {
            failed += 1;
        }
        let limit = budget.map_or("no limit".to_string(), |b| format!("limit {}s", b.as_secs()));
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1}s, {limit}{}]",
            if ok { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            if in_time { "" } else { ", over time" },
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
