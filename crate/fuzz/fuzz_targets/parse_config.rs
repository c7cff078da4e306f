#![no_main]

use libfuzzer_sys::fuzz_target;

// The config path is the one place untrusted bytes enter: parsing must never
// panic, and anything that parses must survive full validation.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = sfde_cli::parse_config_str(text) {
        let _ = sfde_cli::validate(config, None);
    }
});
