#![no_main]
use hsv_greeks::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let again = RunConfig::parse(&cfg.dump()).expect("dumped config must parse");
        assert_eq!(again, cfg);
    }
});
