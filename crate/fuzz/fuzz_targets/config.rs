#![no_main]

use bimlab_cli::config::ConfigFile;
use bimlab_cli::experiments::{chain_law, csl, kernel_check, xi_estimate};
use bimlab_cli::resolve_params;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ConfigFile::parse(text) else { return };
    let params = cfg.params.unwrap_or_default();
    // Resolution either succeeds with validated parameters or reports a config error.
    let _ = resolve_params::<kernel_check::KernelCheck>(&params);
    let _ = resolve_params::<chain_law::ChainLaw>(&params);
    let _ = resolve_params::<csl::Csl>(&params);
    let _ = resolve_params::<xi_estimate::XiEstimate>(&params);
});
