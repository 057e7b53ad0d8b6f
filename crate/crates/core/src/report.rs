//! Number formatting for tabular reports.

/// Value rounded to 12 significant digits, printed in the shortest form that
/// reads back to the rounded value. Non-finite values print as `NaN`/`inf`.
pub fn sig12(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    rounded.to_string()
}
