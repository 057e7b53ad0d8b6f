#![no_main]

use libfuzzer_sys::fuzz_target;

// Parsed cases must survive a JSON round trip unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(case) = cloudopf::parse_matpower_case(text) {
        let back = cloudopf::NetworkCase::from_json(&case.to_json()).expect("own dump parses");
        assert_eq!(back, case);
    }
});
