//! Locale-free numeric formatting for CSV cells.

/// Six significant digits, trailing zeros kept. Plain decimals between
/// 1e-5 and 1e6, scientific notation outside; empty for missing values.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return String::new();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        format!("{x:.*}", (5 - exp).max(0) as usize)
    } else {
        format!("{mantissa}e{exp}")
    }
}

pub fn opt6(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}
