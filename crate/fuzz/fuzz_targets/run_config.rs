#![no_main]
use libfuzzer_sys::fuzz_target;
use spotscape_cli::config::RunConfig;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = RunConfig::parse(data) {
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        // NaN values parse but never compare equal.
        if cfg == cfg {
            assert_eq!(again, cfg);
        }
    }
});
