//! The experiments exposed by the runner.

pub mod chain_law;
pub mod cone_search;
pub mod coupling_sim;
pub mod cover_sim;
pub mod csl;
pub mod escape_polyline;
pub mod hitting_bench;
pub mod kernel_check;
pub mod layer_k;
pub mod xi_estimate;

use serde_json::{Map, Value};

use crate::report::Outcome;
use crate::{resolve_params, run_typed, Experiment, RunError};

macro_rules! experiments {
    ($($variant:ident => $ty:ty),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
        pub enum ExperimentKind {
            $($variant),*
        }

        impl ExperimentKind {
            pub const ALL: &'static [ExperimentKind] = &[$(ExperimentKind::$variant),*];

            pub fn name(self) -> &'static str {
                match self {
                    $(ExperimentKind::$variant => <$ty as Experiment>::NAME),*
                }
            }

            /// Resolves the parameters over the defaults and runs the
            /// experiment; returns the parameter echo and the outcome.
            pub fn run(self, params: &Map<String, Value>, seed: u64) -> Result<(Value, Outcome), RunError> {
                match self {
                    $(ExperimentKind::$variant => {
                        let p = resolve_params::<$ty>(params)?;
                        run_typed::<$ty>(&p, seed)
                    })*
                }
            }

            pub fn schema(self) -> Value {
                match self {
                    $(ExperimentKind::$variant => serde_json::to_value(
                        schemars::schema_for!(<$ty as Experiment>::Params),
                    )
                    .expect("schema serializes")),*
                }
            }

            pub fn defaults(self) -> Value {
                match self {
                    $(ExperimentKind::$variant => serde_json::to_value(
                        <<$ty as Experiment>::Params as Default>::default(),
                    )
                    .expect("defaults serialize")),*
                }
            }
        }
    };
}

experiments! {
    KernelCheck => kernel_check::KernelCheck,
    ConeSearch => cone_search::ConeSearch,
    CoverSim => cover_sim::CoverSim,
    HittingBench => hitting_bench::HittingBench,
    ChainLaw => chain_law::ChainLaw,
    LayerK => layer_k::LayerK,
    CouplingSim => coupling_sim::CouplingSim,
    Csl => csl::Csl,
    EscapePolyline => escape_polyline::EscapePolyline,
    XiEstimate => xi_estimate::XiEstimate,
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

/// Positive-count check shared by the parameter validators.
pub(crate) fn positive(name: &str, v: u64) -> Result<(), String> {
    if v == 0 {
        Err(format!("{name} must be positive"))
    } else {
        Ok(())
    }
}

/// Finite positive real check shared by the parameter validators.
pub(crate) fn positive_real(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be a finite positive real, got {v}"))
    }
}
