//! Closed-form KL divergences for the relationship posteriors.

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Trigamma ψ₁(x) for x > 0: recurrence up to x ≥ 12, then the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + 0.5 * inv2
        + inv * inv2
            * (1.0 / 6.0
                + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0 - inv2 * 691.0 / 2730.0)))))
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn check_positive(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("{what} parameters must be positive: {values:?}")));
    }
    Ok(())
}

/// KL(Beta(α̂, β̂) ‖ Beta(α, β)).
pub fn beta_kl(alpha_hat: f64, beta_hat: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_positive(&[alpha_hat, beta_hat, alpha, beta], "beta")?;
    if alpha_hat == alpha && beta_hat == beta {
        return Ok(0.0);
    }
    let s_hat = alpha_hat + beta_hat;
    let kl = ln_beta(alpha, beta) - ln_beta(alpha_hat, beta_hat)
        + (alpha_hat - alpha) * digamma(alpha_hat)
        + (beta_hat - beta) * digamma(beta_hat)
        - (alpha_hat - alpha + beta_hat - beta) * digamma(s_hat);
    Ok(kl)
}

/// Gradient of [`beta_kl`] with respect to `(α̂, β̂)`.
pub fn beta_kl_grad(alpha_hat: f64, beta_hat: f64, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    check_positive(&[alpha_hat, beta_hat, alpha, beta], "beta")?;
    let shared = (alpha_hat - alpha + beta_hat - beta) * trigamma(alpha_hat + beta_hat);
    Ok((
        (alpha_hat - alpha) * trigamma(alpha_hat) - shared,
        (beta_hat - beta) * trigamma(beta_hat) - shared,
    ))
}

/// KL between the matrix normal MN(M̂, diag(δ̂), diag(γ̂)) and the zero-mean,
/// identity-scale prior, through the equivalent vectorized Gaussian with
/// covariance diag(γ̂) ⊗ diag(δ̂):
///
/// ½[tr(Γ̂)·tr(Δ̂) + ‖M̂‖² − n² − n·ln|Γ̂| − n·ln|Δ̂|].
pub fn matrix_normal_kl(mean: &[f64], row_scale: &[f64], col_scale: &[f64]) -> Result<f64> {
    let n = row_scale.len();
    if col_scale.len() != n || mean.len() != n * n {
        return Err(Error::LengthMismatch {
            context: "matrix normal posterior",
            left: mean.len(),
            right: n * n,
        });
    }
    check_positive(row_scale, "row scale")?;
    check_positive(col_scale, "column scale")?;
    let nf = n as f64;
    let tr_row: f64 = row_scale.iter().sum();
    let tr_col: f64 = col_scale.iter().sum();
    let ln_det_row: f64 = row_scale.iter().map(|v| v.ln()).sum();
    let ln_det_col: f64 = col_scale.iter().map(|v| v.ln()).sum();
    let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
    Ok(0.5 * (tr_row * tr_col + mean_sq - nf * nf - nf * ln_det_col - nf * ln_det_row))
}

/// Gradient of [`matrix_normal_kl`]: (∂/∂M̂, ∂/∂δ̂, ∂/∂γ̂).
pub fn matrix_normal_kl_grad(
    mean: &[f64],
    row_scale: &[f64],
    col_scale: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    matrix_normal_kl(mean, row_scale, col_scale)?;
    let nf = row_scale.len() as f64;
    let tr_row: f64 = row_scale.iter().sum();
    let tr_col: f64 = col_scale.iter().sum();
    Ok((
        mean.to_vec(),
        row_scale.iter().map(|d| 0.5 * (tr_col - nf / d)).collect(),
        col_scale.iter().map(|g| 0.5 * (tr_row - nf / g)).collect(),
    ))
}

/// `(D² + K² + 1, D²K²)`: relationship parameter counts of the decomposed and
/// full four-dimensional forms.
pub fn count_relationship_parameters(diseases: usize, groups: usize) -> (usize, usize) {
    let (d2, k2) = (diseases * diseases, groups * groups);
    (d2 + k2 + 1, d2 * k2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_kl_at_prior_is_zero() {
        assert_eq!(beta_kl(2.0, 3.0, 2.0, 3.0).unwrap(), 0.0);
        // high-precision reference 0.1250928025613883
        assert!((beta_kl(2.0, 2.0, 1.0, 1.0).unwrap() - 0.12508).abs() < 2e-5);
        assert!((beta_kl(2.0, 2.0, 1.0, 1.0).unwrap() - 0.125_092_802_561_388_3).abs() < 1e-13);
        assert!(beta_kl(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn trigamma_known_values() {
        // ψ₁(1) = π²/6, ψ₁(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-13);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        assert!((trigamma(20.0) - 0.05127082293520312).abs() < 1e-14);
    }

    #[test]
    fn matrix_normal_simple_values() {
        assert_eq!(matrix_normal_kl(&[0.0; 4], &[1.0; 2], &[1.0; 2]).unwrap(), 0.0);
        assert!((matrix_normal_kl(&[0.5], &[1.0], &[1.0]).unwrap() - 0.125).abs() < 1e-15);
        assert!(matrix_normal_kl(&[0.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_relationship_parameters(4, 4), (33, 256));
        assert_eq!(count_relationship_parameters(1, 1), (3, 1));
        assert_eq!(count_relationship_parameters(3, 5), (35, 225));
    }
}
