#![no_main]

use bimlab::kernelfun::{maximal_coupling, tv_distance, FiniteMeasure};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(m) = FiniteMeasure::from_json(text) else { return };
    if let Ok(tv) = tv_distance(&m, &m) {
        assert!(tv.abs() <= 1e-12);
    }
    let _ = maximal_coupling(&m, &m);
    let back = FiniteMeasure::from_json(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(back, m);
});
