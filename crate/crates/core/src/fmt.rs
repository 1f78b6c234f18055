//! Float formatting for CSV outputs.

/// Shortest decimal string that round-trips.
pub fn shortest(x: f64) -> String {
    format!("{x}")
}

/// 17 significant digits in scientific notation.
pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5e17] {
            assert_eq!(shortest(x).parse::<f64>().unwrap(), x);
            assert_eq!(sig17(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(shortest(0.5), "0.5");
    }
}
