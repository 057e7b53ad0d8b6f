#![no_main]

use std::sync::OnceLock;

use cloudopf::uncertainty::{read_samples_csv, write_samples_csv};
use cloudopf::NetworkCase;
use libfuzzer_sys::fuzz_target;

fn case() -> &'static NetworkCase {
    static CASE: OnceLock<NetworkCase> = OnceLock::new();
    CASE.get_or_init(NetworkCase::ieee30)
}

// Accepted files re-serialize to a file that reads back to the same matrix.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((buses, w)) = read_samples_csv(case(), text) {
        let again = write_samples_csv(case(), &buses, &w).expect("accepted samples serialize");
        assert_eq!(read_samples_csv(case(), &again).expect("own output parses"), (buses, w));
    }
});
