//! Human-report formatting: metrics render as percent with 2 decimals; the
//! machine formats (JSON) keep full precision.

pub fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Column label for a target risk, e.g. 0.05 -> "c@5", 0.125 -> "c@12.5".
pub fn risk_label(r: f64) -> String {
    let scaled = r * 100.0;
    if (scaled - scaled.round()).abs() < 1e-9 {
        format!("c@{}", scaled.round() as i64)
    } else {
        format!("c@{scaled}")
    }
}
