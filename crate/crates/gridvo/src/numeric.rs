//! Small numeric helpers shared across modules.

use rand::Rng;

/// Standard normal sample via Box-Muller.
pub fn randn(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Sum that is bitwise invariant to the order of the addends.
///
/// Each addend is rounded to a fixed binary grid relative to the largest
/// magnitude and accumulated in integer arithmetic, so reorderings (e.g.
/// permuted keypoint sets) produce the identical f64 result. The grid sits
/// ~2^-62 below the maximum, far beneath any tolerance used here.
pub fn invariant_sum(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max_abs = xs
        .clone()
        .into_iter()
        .fold(0.0f64, |a, x| a.max(x.abs()));
    if max_abs == 0.0 {
        return 0.0;
    }
    let exp = max_abs.log2().ceil() as i32;
    let factor = 2f64.powi(62 - exp);
    let mut acc: i128 = 0;
    for x in xs {
        acc += (x * factor).round() as i128;
    }
    acc as f64 / factor
}
