#![no_main]

use libfuzzer_sys::fuzz_target;
use sfde_cli::config::{NoiseSpectrumConfig, ScalarMapConfig};

// Tagged-enum sub-schemas deserialized on their own.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = serde_json::from_str::<NoiseSpectrumConfig>(text);
    let _ = serde_json::from_str::<ScalarMapConfig>(text);
});
