//! Text serialization helpers shared by the dataset files and network
//! checkpoints: floats are written with 17 significant digits, which is
//! enough for `f64` to round-trip bit-exactly through parsing.

/// Formats a float with 17 significant digits (`nan` for NaN).
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Parses a float previously written by [`fmt_f64`] (or any plain literal).
pub fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok()
}

/// Splits a line into whitespace-separated fields, ignoring `#` comments.
/// Returns `None` for blank and comment-only lines.
pub fn data_fields(line: &str) -> Option<Vec<&str>> {
    let body = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let fields: Vec<&str> = body.split_whitespace().collect();
    if fields.is_empty() {
        None
    } else {
        Some(fields)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nan_round_trips() {
        assert!(parse_f64(&fmt_f64(f64::NAN)).unwrap().is_nan());
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        assert_eq!(data_fields("# header"), None);
        assert_eq!(data_fields("   "), None);
        assert_eq!(data_fields("1 2 # trailing"), Some(vec!["1", "2"]));
    }

    proptest! {
        #[test]
        fn floats_round_trip_bit_exactly(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back = parse_f64(&fmt_f64(x)).unwrap();
            prop_assert_eq!(x.to_bits(), back.to_bits());
        }
    }
}
