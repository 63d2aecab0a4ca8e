//! Deterministic text serialization helpers shared by every exporter.
//!
//! All floating-point output goes through [`fmt_f64`] so that repeated runs
//! with identical inputs produce byte-identical files.

use std::fmt::Write as _;

/// Format a float with 12 significant digits in scientific notation.
///
/// This is the single formatting path for every numeric CSV/JSON field the
/// crate emits. Negative zero is normalized to zero so that sign noise below
/// the last digit cannot leak into artifacts.
pub fn fmt_f64(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{:.11e}", x)
}

/// Join already-formatted fields into one CSV record.
pub fn csv_row(fields: &[String]) -> String {
    fields.join(",")
}

/// Build a CSV document from a header line and formatted rows.
pub fn csv_document(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::with_capacity(header.len() + rows.len() * 64 + 16);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", csv_row(row));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_has_twelve_significant_digits() {
        assert_eq!(fmt_f64(1.0), "1.00000000000e0");
        assert_eq!(fmt_f64(-0.5), "-5.00000000000e-1");
        assert_eq!(fmt_f64(0.0), "0.00000000000e0");
        assert_eq!(fmt_f64(-0.0), "0.00000000000e0");
        assert_eq!(fmt_f64(std::f64::consts::PI), "3.14159265359e0");
        assert_eq!(fmt_f64(1.5e-11), "1.50000000000e-11");
    }

    #[test]
    fn csv_document_layout() {
        let doc = csv_document(
            "a,b",
            &[vec!["1".into(), "2".into()], vec!["3".into(), "4".into()]],
        );
        assert_eq!(doc, "a,b\n1,2\n3,4\n");
    }
}
