#![no_main]
use hsv_greeks::dump::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(paths) = decode(data) {
        assert_eq!(encode(&paths), data);
    }
});
