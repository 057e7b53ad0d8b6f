//! Replays the checked-in fuzz seeds through the fuzz targets' properties on
//! stable toolchains.

use std::path::{Path, PathBuf};

use cloudopf::uncertainty::{read_alpha_csv, read_samples_csv, write_alpha_csv, write_samples_csv};
use cloudopf::{parse_matpower_case, NetworkCase};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

/// Every prefix of a seed, which covers truncated inputs.
fn prefixes(bytes: &[u8]) -> impl Iterator<Item = &str> {
    (0..=bytes.len()).step_by(7).filter_map(|n| std::str::from_utf8(&bytes[..n]).ok())
}

#[test]
fn matpower_seeds_parse_and_round_trip() {
    for (path, bytes) in seeds("matpower_case") {
        let case = parse_matpower_case(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(NetworkCase::from_json(&case.to_json()).unwrap(), case);
        for text in prefixes(&bytes) {
            if let Ok(c) = parse_matpower_case(text) {
                assert_eq!(NetworkCase::from_json(&c.to_json()).unwrap(), c);
            }
        }
    }
}

#[test]
fn case_json_seeds_round_trip() {
    for (path, bytes) in seeds("case_json") {
        let case = NetworkCase::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(NetworkCase::from_json(&case.to_json()).unwrap(), case);
        for text in prefixes(&bytes) {
            let _ = NetworkCase::from_json(text);
        }
    }
}

#[test]
fn samples_seeds_round_trip() {
    let case = NetworkCase::ieee30();
    for (path, bytes) in seeds("samples_csv") {
        let (buses, w) = read_samples_csv(&case, std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(w.nrows() > 0);
        let again = write_samples_csv(&case, &buses, &w).unwrap();
        assert_eq!(read_samples_csv(&case, &again).unwrap(), (buses, w));
        for text in prefixes(&bytes) {
            if let Ok((b, w)) = read_samples_csv(&case, text) {
                assert_eq!(read_samples_csv(&case, &write_samples_csv(&case, &b, &w).unwrap()).unwrap(), (b, w));
            }
        }
    }
}

#[test]
fn alpha_seeds_round_trip() {
    for (path, bytes) in seeds("alpha_csv") {
        let (&ng, rest) = bytes.split_first().unwrap();
        let ng = usize::from(ng % 16);
        let alpha = read_alpha_csv(std::str::from_utf8(rest).unwrap(), ng).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(read_alpha_csv(&write_alpha_csv(&alpha), ng).unwrap(), alpha);
    }
}
