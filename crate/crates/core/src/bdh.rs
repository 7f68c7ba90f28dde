//! The base double-heterogeneity method: every grid cell is re-aggregated from
//! all cells through a learned (D·K)² relationship tensor, trained on its own
//! shard, and the tensor is then moved along the gradient of the total loss.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    cell_losses, check_finite, derive_seed, fresh_adams, shared_init, train_cells, GridPredictor,
    Shards,
};
use crate::model::{AssessmentModel, ModelParams};
use crate::nn::{sigmoid, AdamConfig, AdamState};
use crate::relationships::{aggregate_4d, to_aggregation_weights, Matrix};
use crate::trainer::{LossRecord, Plateau, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct BdhState {
    pub shape: crate::grid::GridShape,
    /// Current θ̃ per cell, flat.
    pub grid: Vec<Vec<f64>>,
    /// Raw relationship tensor over cells; weights are its positivity transform.
    pub relationships: Matrix,
    pub model_adam: Vec<AdamState>,
    pub rel_adam: AdamState,
    pub round: usize,
}

impl BdhState {
    pub fn weights(&self) -> Matrix {
        to_aggregation_weights(&self.relationships)
    }

    pub fn grid_params(&self, model: &AssessmentModel) -> Result<Vec<ModelParams>> {
        self.grid.iter().map(|g| model.params_from_flat(g)).collect()
    }
}

pub fn bdh_init(model: &AssessmentModel, shape: crate::grid::GridShape, cfg: &TrainConfig, seed: u64) -> BdhState {
    let cells = shape.cells();
    let self_raw = cfg.bdh_self_raw;
    let relationships = Matrix::from_fn(cells, |i, j| if i == j { self_raw } else { 0.0 });
    BdhState {
        shape,
        grid: shared_init(model, cells, seed),
        relationships,
        model_adam: fresh_adams(model, cells, cfg.lr_model),
        rel_adam: AdamState::new(cells * cells, AdamConfig::with_lr(cfg.lr_rel)),
        round: 0,
    }
}

/// Aggregates every cell from the whole grid.
pub fn aggregate_grid(grid: &[Vec<f64>], weights: &Matrix) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&[f64]> = grid.iter().map(Vec::as_slice).collect();
    (0..grid.len())
        .into_par_iter()
        .map(|c| aggregate_4d(&refs, weights, c))
        .collect()
}

/// One round: aggregate, train each cell, update the relationship tensor.
/// Returns the per-cell mean losses at the aggregation used for the update.
pub fn bdh_round(
    model: &AssessmentModel,
    state: &mut BdhState,
    shards: &Shards<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if shards.shape != state.shape {
        return Err(Error::invalid("shards and state disagree on the grid shape"));
    }
    let round = state.round;
    let weights = state.weights();
    let aggregated = aggregate_grid(&state.grid, &weights)?;
    let (trained, _) = train_cells(
        model,
        shards,
        aggregated,
        &mut state.model_adam,
        cfg.plan(),
        derive_seed(seed, &[round as u64, 2]),
    )?;
    check_finite(&trained, round)?;
    state.grid = trained;

    // Step 4: total loss through a re-aggregation of the new grid.
    let evaluated = aggregate_grid(&state.grid, &weights)?;
    let losses = cell_losses(model, shards, &evaluated, true)?;
    let n = state.shape.cells();
    let mut grad = vec![0.0; n * n];
    let mut means = Vec::with_capacity(n);
    for (c, (sum, g)) in losses.iter().enumerate() {
        let count = shards.len(c) as f64;
        let mean = sum / count;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                round,
                detail: format!("loss of cell {c} is {mean}"),
            });
        }
        means.push(mean);
        let g = g.as_ref().expect("gradient requested");
        let row_sum: f64 = weights.row(c).iter().sum();
        let theta = &evaluated[c];
        for (c2, other) in state.grid.iter().enumerate() {
            let dot: f64 = g
                .iter()
                .zip(other.iter().zip(theta))
                .map(|(gi, (o, t))| gi * (o - t))
                .sum();
            grad[c * n + c2] = dot / (count * row_sum) * sigmoid(state.relationships.get(c, c2));
        }
    }
    state.rel_adam.step(state.relationships.data_mut(), &grad)?;
    if state.relationships.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            round,
            detail: "relationship tensor became non-finite".into(),
        });
    }
    state.round += 1;
    Ok(means)
}

/// Rounds until the total loss changes by less than `loss_tol` for
/// `patience` consecutive rounds or `max_rounds` is reached. The returned
/// predictor holds the grid aggregated with the final relationships.
pub fn bdh_train(
    model: &AssessmentModel,
    shards: &Shards<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(BdhState, GridPredictor, Vec<LossRecord>)> {
    cfg.validate()?;
    let mut state = bdh_init(model, shards.shape, cfg, seed);
    let mut trace = Vec::new();
    let mut plateau = Plateau::default();
    for _ in 0..cfg.max_rounds {
        let round = state.round;
        let means = bdh_round(model, &mut state, shards, cfg, seed)?;
        let total: f64 = means.iter().sum();
        trace.push(LossRecord {
            round,
            loss: total / means.len() as f64,
        });
        if plateau.update(total, cfg.patience, |a, b| (a - b).abs() < cfg.loss_tol) {
            break;
        }
    }
    let grid = aggregate_grid(&state.grid, &state.weights())?;
    let predictor = GridPredictor {
        shape: state.shape,
        grid,
    };
    Ok((state, predictor, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::model::ModelArchitecture;

    #[test]
    fn init_is_shared_and_diagonal_dominant() {
        let arch = ModelArchitecture {
            conv_filters: 2,
            hidden: 2,
            profile_widths: vec![2],
            head_widths: vec![2],
            ..ModelArchitecture::desk(6, 1, 2)
        };
        let model = AssessmentModel::new(arch).unwrap();
        let s = bdh_init(&model, GridShape::new(2, 2, false), &TrainConfig::default(), 3);
        assert!(s.grid.iter().all(|g| g == &s.grid[0]));
        let w = s.weights();
        assert!((w.get(0, 0) - 2.126928011042972).abs() < 1e-5);
        assert!((w.get(0, 1) - 0.693147).abs() < 1e-5);
        assert_eq!(s, bdh_init(&model, GridShape::new(2, 2, false), &TrainConfig::default(), 3));
    }

    #[test]
    fn uniform_weights_collapse_the_grid() {
        let grid = vec![vec![1.0, -1.0], vec![3.0, 0.0], vec![2.0, 4.0]];
        let out = aggregate_grid(&grid, &Matrix::filled(3, 0.4)).unwrap();
        for o in &out {
            assert!((o[0] - 2.0).abs() < 1e-15 && (o[1] - 1.0).abs() < 1e-15);
        }
    }
}
