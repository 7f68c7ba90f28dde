/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy `-[y ln p + (1-y) ln(1-p)]` on the clamped probability.
#[inline]
pub fn cross_entropy(y_hat: f64, y: f64) -> f64 {
    let p = clamp_prob(y_hat);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`cross_entropy`] with respect to `y_hat`, evaluated at the
/// clamped probability. The clamp only guards the value; it does not zero the
/// gradient of saturated predictions.
#[inline]
pub fn cross_entropy_grad(y_hat: f64, y: f64) -> f64 {
    let p = clamp_prob(y_hat);
    (p - y) / (p * (1.0 - p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_values() {
        assert!((cross_entropy(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(cross_entropy(1.0 - PROB_CLAMP, 1.0) < 1e-6);
        assert!((cross_entropy(0.9, 0.0) - 2.302585092994046).abs() < 1e-9);
        // saturated inputs stay finite
        assert!(cross_entropy(0.0, 1.0).is_finite());
        assert!(cross_entropy(1.0, 0.0).is_finite());
    }

    #[test]
    fn non_negative_and_zero_only_at_clamped_perfect() {
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            for y in [0.0, 1.0] {
                let l = cross_entropy(p, y);
                assert!(l >= 0.0);
            }
        }
        assert!(cross_entropy(0.999, 1.0) > cross_entropy(1.0, 1.0));
    }

    #[test]
    fn gradient_matches_central_difference() {
        for &(p, y) in &[(0.3, 1.0), (0.7, 0.0), (0.5, 1.0), (0.01, 0.0)] {
            let h = 1e-6;
            let fd = (cross_entropy(p + h, y) - cross_entropy(p - h, y)) / (2.0 * h);
            let g = cross_entropy_grad(p, y);
            assert!((fd - g).abs() / g.abs().max(1.0) < 1e-6, "{p} {y}: {fd} vs {g}");
        }
    }
}
