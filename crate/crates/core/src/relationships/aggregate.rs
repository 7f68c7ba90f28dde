//! Relationship-weighted parameter aggregation.
//!
//! Weighted means are evaluated as `target + sum_j w_j (x_j - target) / sum_j w_j`,
//! which is exact whenever every contributing input equals the target.

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::model::{Block, ModelParams};
use crate::nn::{sigmoid, softplus};

/// Floor added after the softplus so aggregation weights are strictly positive.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Elementwise `softplus(raw) + WEIGHT_FLOOR`.
pub fn to_aggregation_weights(raw: &Matrix) -> Matrix {
    raw.map(|v| softplus(v) + WEIGHT_FLOOR)
}

/// Derivative of [`to_aggregation_weights`] with respect to each raw entry.
pub fn aggregation_weight_slope(raw: &Matrix) -> Matrix {
    raw.map(sigmoid)
}

fn check_thetas(thetas: &[&[f64]]) -> Result<usize> {
    let len = thetas.first().map_or(0, |t| t.len());
    for t in thetas {
        if t.len() != len {
            return Err(Error::LengthMismatch {
                context: "aggregated parameter vectors",
                left: t.len(),
                right: len,
            });
        }
    }
    Ok(len)
}

fn check_weights(row: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &w in row {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::invalid(format!("aggregation weight {w} is not positive")));
        }
        sum += w;
    }
    if !(sum > 0.0) {
        return Err(Error::invalid("aggregation weights sum to zero"));
    }
    Ok(sum)
}

/// Weighted mean of `inputs[j]` with weights `row[j]` into `out`, anchored at `anchor`.
fn weighted_mean_into(anchor: &[f64], inputs: &[&[f64]], row: &[f64], sum: f64, out: &mut [f64]) {
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x, &w) in inputs.iter().zip(row) {
        if w == 0.0 {
            continue;
        }
        for ((o, &xi), &a) in out.iter_mut().zip(x.iter()).zip(anchor) {
            *o += w * (xi - a);
        }
    }
    for (o, &a) in out.iter_mut().zip(anchor) {
        *o = a + *o * inv;
    }
}

/// Full-grid aggregation over `n` cells: the target cell becomes the
/// `weights`-row-weighted mean of every cell's parameters.
pub fn aggregate_4d(thetas: &[&[f64]], weights: &Matrix, target: usize) -> Result<Vec<f64>> {
    let len = check_thetas(thetas)?;
    if weights.n() != thetas.len() || target >= thetas.len() {
        return Err(Error::LengthMismatch {
            context: "4-d relationship tensor vs cells",
            left: weights.n(),
            right: thetas.len(),
        });
    }
    let row = weights.row(target);
    let sum = check_weights(row)?;
    let mut out = vec![0.0; len];
    weighted_mean_into(thetas[target], thetas, row, sum, &mut out);
    Ok(out)
}

/// The two intermediate aggregates of the decomposed form for cell `(d, k)`:
/// the disease-direction mean over `d'` at fixed `k`, and the group-direction
/// mean over `k'` at fixed `d`. Cells are indexed `d * groups + k`.
pub fn decomposed_parts(
    thetas: &[&[f64]],
    groups: usize,
    disease_weights: &Matrix,
    group_weights: &Matrix,
    target: (usize, usize),
) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = check_thetas(thetas)?;
    let diseases = disease_weights.n();
    if group_weights.n() != groups || diseases * groups != thetas.len() {
        return Err(Error::LengthMismatch {
            context: "decomposed relationships vs cells",
            left: diseases * groups,
            right: thetas.len(),
        });
    }
    let (d, k) = target;
    if d >= diseases || k >= groups {
        return Err(Error::invalid(format!("target cell ({d}, {k}) out of range")));
    }
    let anchor = thetas[d * groups + k];

    let column: Vec<&[f64]> = (0..diseases).map(|dd| thetas[dd * groups + k]).collect();
    let drow = disease_weights.row(d);
    let dsum = check_weights(drow)?;
    let mut disease_part = vec![0.0; len];
    weighted_mean_into(anchor, &column, drow, dsum, &mut disease_part);

    let row_cells: Vec<&[f64]> = (0..groups).map(|kk| thetas[d * groups + kk]).collect();
    let grow = group_weights.row(k);
    let gsum = check_weights(grow)?;
    let mut group_part = vec![0.0; len];
    weighted_mean_into(anchor, &row_cells, grow, gsum, &mut group_part);
    Ok((disease_part, group_part))
}

/// `a * disease_part + (1 - a) * group_part`, exact when both parts agree.
pub fn mix(disease_part: &[f64], group_part: &[f64], a: f64) -> Vec<f64> {
    disease_part
        .iter()
        .zip(group_part)
        .map(|(&x, &y)| if x == y { x } else { a * x + (1.0 - a) * y })
        .collect()
}

/// Decomposed aggregation: disease-direction and group-direction weighted
/// means combined with relative weight `a`.
pub fn aggregate_decomposed(
    thetas: &[&[f64]],
    groups: usize,
    disease_weights: &Matrix,
    group_weights: &Matrix,
    a: f64,
    target: (usize, usize),
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::invalid(format!("relative weight {a} outside [0, 1]")));
    }
    let (dp, gp) = decomposed_parts(thetas, groups, disease_weights, group_weights, target)?;
    Ok(mix(&dp, &gp, a))
}

/// Positive weights for one model component.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentWeights {
    pub disease: Matrix,
    pub group: Matrix,
    pub weight: f64,
}

impl ComponentWeights {
    pub fn identity(diseases: usize, groups: usize) -> Self {
        Self {
            disease: Matrix::identity(diseases),
            group: Matrix::identity(groups),
            weight: 0.5,
        }
    }
}

/// Decomposed aggregation restricted to one component block of every cell.
pub fn aggregate_component(
    grid: &[ModelParams],
    groups: usize,
    weights: &ComponentWeights,
    target: (usize, usize),
    block: Block,
) -> Result<Vec<f64>> {
    let thetas: Vec<&[f64]> = grid.iter().map(|p| p.block(block)).collect();
    aggregate_decomposed(
        &thetas,
        groups,
        &weights.disease,
        &weights.group,
        weights.weight,
        target,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn transform_values() {
        let w = to_aggregation_weights(&Matrix::zeros(2));
        assert!(w.data().iter().all(|&v| (v - (std::f64::consts::LN_2 + 1e-6)).abs() < 1e-15));
        let w = to_aggregation_weights(&Matrix::filled(1, 10.0));
        assert!((w.get(0, 0) - (10.000045398899218 + 1e-6)).abs() < 1e-12);
        let w = to_aggregation_weights(&Matrix::filled(1, -800.0));
        assert!(w.get(0, 0) >= 1e-6);
    }

    #[test]
    fn four_d_identity_uniform_and_hand_value() {
        let t = scalars(&[1.0, 2.0, 3.0, 4.0]);
        let r = refs(&t);
        for c in 0..4 {
            assert_eq!(aggregate_4d(&r, &Matrix::identity(4), c).unwrap(), t[c]);
            assert_eq!(aggregate_4d(&r, &Matrix::filled(4, 0.7), c).unwrap(), vec![2.5]);
        }
        let w = Matrix::from_fn(4, |i, j| if i == j { 2.0 } else { 1.0 });
        assert_eq!(aggregate_4d(&r, &w, 0).unwrap(), vec![2.2]);
    }

    #[test]
    fn decomposed_hand_value_and_fixed_points() {
        // theta[d][k] = [[1, 2], [3, 4]]
        let t = scalars(&[1.0, 2.0, 3.0, 4.0]);
        let r = refs(&t);
        let ones = Matrix::filled(2, 1.0);
        let eye = Matrix::identity(2);
        assert_eq!(aggregate_decomposed(&r, 2, &ones, &eye, 0.5, (0, 0)).unwrap(), vec![1.5]);
        for a in [0.0, 0.3, 1.0] {
            for d in 0..2 {
                for k in 0..2 {
                    assert_eq!(
                        aggregate_decomposed(&r, 2, &eye, &eye, a, (d, k)).unwrap(),
                        t[d * 2 + k]
                    );
                }
            }
        }
        // a = 1, uniform disease weights => per-column disease mean
        assert_eq!(aggregate_decomposed(&r, 2, &ones, &eye, 1.0, (1, 1)).unwrap(), vec![3.0]);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let a = vec![1.0, 2.0];
        let b = vec![1.0];
        assert!(aggregate_4d(&[&a, &b], &Matrix::identity(2), 0).is_err());
        assert!(aggregate_decomposed(&[&a, &a], 1, &Matrix::identity(2), &Matrix::identity(1), 1.5, (0, 0)).is_err());
    }
}
