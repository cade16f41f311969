//! Exact rounding helpers shared by the inference, combination and report code.

/// Rounds `num / den` to the nearest integer, ties away from zero. `den` must be positive.
pub fn div_round_half_away(num: i128, den: i128) -> i128 {
    assert!(den > 0, "denominator must be positive");
    let magnitude = (2 * num.abs() + den) / (2 * den);
    if num < 0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Rounds a real value half away from zero and clamps it into `[-2, 2]`.
pub fn round_to_scale(value: f64) -> i8 {
    value.round().clamp(-2.0, 2.0) as i8
}
