#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(case) = cloudopf::NetworkCase::from_json(text) {
        assert_eq!(cloudopf::NetworkCase::from_json(&case.to_json()).as_ref(), Ok(&case));
    }
});
