//! Training settings shared by every method, and the single-task baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    check_finite, derive_seed, fresh_adams, shared_init, train_cells, EpochPlan, GridPredictor,
    Shards,
};
use crate::model::AssessmentModel;
use crate::relationships::{PosteriorInit, SampleMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Inner epochs per round.
    pub epochs: usize,
    pub lr_model: f64,
    pub lr_rel: f64,
    /// Minibatch size for the inner epochs; 0 trains full batch.
    pub batch_size: usize,
    pub max_rounds: usize,
    /// Consecutive converged rounds required to stop.
    pub patience: usize,
    /// Absolute tolerance on the total training loss (single-task and BDH).
    pub loss_tol: f64,
    /// Relative tolerance on the ELBO (ADH).
    pub elbo_tol: f64,
    /// Draws used by the relationship update; model updates use posterior means.
    pub sample_mode: SampleMode,
    /// Relationship samples averaged per relationship update.
    pub relationship_samples: usize,
    pub posterior_init: PosteriorInit,
    /// Initial raw self-relationship of the BDH tensor.
    pub bdh_self_raw: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            lr_model: 1e-3,
            lr_rel: 1e-2,
            batch_size: 0,
            max_rounds: 200,
            patience: 3,
            loss_tol: 1e-4,
            elbo_tol: 1e-3,
            sample_mode: SampleMode::Sample,
            relationship_samples: 1,
            posterior_init: PosteriorInit::default(),
            bdh_self_raw: 2.0,
        }
    }
}

impl TrainConfig {
    pub fn plan(&self) -> EpochPlan {
        EpochPlan {
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_model, self.lr_rel, self.loss_tol, self.elbo_tol];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config(format!("learning rates and tolerances must be non-negative: {self:?}")));
        }
        if self.relationship_samples == 0 {
            return Err(Error::Config("relationship_samples must be at least 1".into()));
        }
        if !(self.posterior_init.scale > 0.0) || !self.posterior_init.mean_diagonal.is_finite() {
            return Err(Error::Config("posterior_init.scale must be positive".into()));
        }
        Ok(())
    }
}

/// Counts consecutive rounds whose change stays under a tolerance.
#[derive(Clone, Debug, Default)]
pub struct Plateau {
    previous: Option<f64>,
    streak: usize,
}

impl Plateau {
    /// Records `value`; returns true once `patience` consecutive changes pass `converged`.
    pub fn update(&mut self, value: f64, patience: usize, converged: impl Fn(f64, f64) -> bool) -> bool {
        if let Some(prev) = self.previous {
            if converged(prev, value) {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
        }
        self.previous = Some(value);
        patience > 0 && self.streak >= patience
    }
}

/// One entry of a loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub round: usize,
    /// Mean over cells of the per-cell mean training loss.
    pub loss: f64,
}

/// Independent models per grid cell with no aggregation.
pub fn single_train(
    model: &AssessmentModel,
    shards: &Shards<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(GridPredictor, Vec<LossRecord>)> {
    cfg.validate()?;
    let cells = shards.shape.cells();
    let mut grid = shared_init(model, cells, seed);
    let mut adams = fresh_adams(model, cells, cfg.lr_model);
    let mut trace = Vec::new();
    let mut plateau = Plateau::default();
    for round in 0..cfg.max_rounds {
        let (next, losses) = train_cells(model, shards, grid, &mut adams, cfg.plan(), derive_seed(seed, &[round as u64, 1]))?;
        grid = next;
        check_finite(&grid, round)?;
        let loss = losses.iter().sum::<f64>() / cells as f64;
        if !loss.is_finite() && cfg.epochs > 0 {
            return Err(Error::Divergence {
                round,
                detail: format!("single-task loss {loss}"),
            });
        }
        trace.push(LossRecord { round, loss });
        if plateau.update(loss * cells as f64, cfg.patience, |a, b| (a - b).abs() < cfg.loss_tol) {
            break;
        }
    }
    Ok((
        GridPredictor {
            shape: shards.shape,
            grid,
        },
        trace,
    ))
}
