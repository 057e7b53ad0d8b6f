#![no_main]

use cloudopf::uncertainty::{read_alpha_csv, write_alpha_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&ng, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let ng = usize::from(ng % 16);
    if let Ok(alpha) = read_alpha_csv(text, ng) {
        assert_eq!(alpha.len(), ng);
        assert_eq!(read_alpha_csv(&write_alpha_csv(&alpha), ng).expect("own output parses"), alpha);
    }
});
