#![no_main]

use bimlab::kernelfun::{extremal_tv, switching_constant, DiscreteKernel};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(k) = DiscreteKernel::from_json(text) else { return };
    if k.rows() * k.cols() > 4096 {
        return;
    }
    let s = switching_constant(&k);
    assert!(s.value() >= 1.0);
    let r = extremal_tv(&k);
    assert!((0.0..=1.0).contains(&r));
    let back = DiscreteKernel::from_json(&serde_json::to_string(&k).unwrap()).unwrap();
    assert_eq!(back, k);
});
