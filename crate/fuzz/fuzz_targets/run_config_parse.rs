#![no_main]

use canvasrnn_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::from_json_str(text) {
        let _ = cfg.model.validate();
        let _ = cfg.train.validate();
    }
});
