#![no_main]

use bimlab::brownian::Path3D;
use bimlab::geometry::PolylineIndex;
use bimlab::Vec3;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(p) = Path3D::from_json(text) else { return };
    if p.len() > 10_000 || p.points.iter().any(|x| x.norm() > 1e6) {
        return;
    }
    let idx = PolylineIndex::build(std::slice::from_ref(&p), None);
    let d = idx.distance(p.points[0]);
    assert!(d <= 1e-9, "first vertex at distance {d}");
    assert!(idx.distance(Vec3::ZERO) >= 0.0);
});
