//! The advanced double-heterogeneity method: each model component is
//! aggregated through decomposed inter-disease and inter-group relationships
//! whose variational posteriors are trained jointly with the model grid by
//! coordinate ascent on the ELBO.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    cell_losses, check_finite, derive_seed, fresh_adams, shared_init, train_cells, GridPredictor,
    GridShape, Shards,
};
use crate::grouping::GroupModelIndex;
use crate::model::{AssessmentModel, Block};
use crate::nn::{cross_entropy, AdamConfig, AdamState, Tensor};
use crate::relationships::variational::PosteriorSummary;
use crate::relationships::{
    decomposed_parts, mix, total_kl, ComponentWeights, RelationshipLayout, RelationshipPriors,
    SampleMode, SampledRelationships, VariationalState, WeightGrads,
};
use crate::trainer::{Plateau, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AdhState {
    pub shape: GridShape,
    /// Current θ̃ per cell, flat (θᶠ then θᵖ).
    pub grid: Vec<Vec<f64>>,
    pub variational: VariationalState,
    pub priors: RelationshipPriors,
    pub model_adam: Vec<AdamState>,
    pub rel_adam: AdamState,
    pub trace: Vec<ElboRecord>,
    pub round: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboRecord {
    pub round: usize,
    pub term1: f64,
    pub term2: f64,
    pub elbo: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rounds: Vec<ElboRecord>,
    pub posterior: PosteriorSummary,
    /// Seconds spent in each round. Not part of any deterministic output.
    #[serde(skip)]
    pub wall_clock: Vec<f64>,
}

pub fn adh_init(
    model: &AssessmentModel,
    shape: GridShape,
    shared_components: bool,
    cfg: &TrainConfig,
    priors: RelationshipPriors,
    seed: u64,
) -> AdhState {
    let layout = RelationshipLayout {
        diseases: shape.diseases,
        groups: shape.groups,
        shared_components,
    };
    let variational = VariationalState::init(layout, &priors, &cfg.posterior_init);
    let rel_len = variational.param_len();
    AdhState {
        shape,
        grid: shared_init(model, shape.cells(), seed),
        variational,
        priors,
        model_adam: fresh_adams(model, shape.cells(), cfg.lr_model),
        rel_adam: AdamState::new(rel_len, AdamConfig::with_lr(cfg.lr_rel)),
        trace: Vec::new(),
        round: 0,
    }
}

/// One cell's aggregated parameters with the disease- and group-direction
/// intermediates of both blocks, all laid out like the flat parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CellAggregate {
    pub theta: Vec<f64>,
    pub disease_part: Vec<f64>,
    pub group_part: Vec<f64>,
}

pub fn aggregate_cell(
    grid: &[Vec<f64>],
    shape: GridShape,
    feature_len: usize,
    weights: (&ComponentWeights, &ComponentWeights),
    cell: usize,
) -> Result<CellAggregate> {
    let target = (cell / shape.groups, cell % shape.groups);
    let len = grid[cell].len();
    let mut out = CellAggregate {
        theta: Vec::with_capacity(len),
        disease_part: Vec::with_capacity(len),
        group_part: Vec::with_capacity(len),
    };
    for (block, w) in [(Block::Feature, weights.0), (Block::Prediction, weights.1)] {
        let thetas: Vec<&[f64]> = grid
            .iter()
            .map(|g| match block {
                Block::Feature => &g[..feature_len],
                Block::Prediction => &g[feature_len..],
            })
            .collect();
        let (dp, gp) = decomposed_parts(&thetas, shape.groups, &w.disease, &w.group, target)?;
        out.theta.extend(mix(&dp, &gp, w.weight));
        out.disease_part.extend(dp);
        out.group_part.extend(gp);
    }
    Ok(out)
}

/// Aggregates every cell of `grid` under concrete relationship values.
pub fn aggregate_all(
    grid: &[Vec<f64>],
    shape: GridShape,
    feature_len: usize,
    sample: &SampledRelationships,
) -> Result<Vec<CellAggregate>> {
    let wf = sample.component(Block::Feature);
    let wp = sample.component(Block::Prediction);
    (0..grid.len())
        .into_par_iter()
        .map(|c| aggregate_cell(grid, shape, feature_len, (&wf, &wp), c))
        .collect()
}

/// Prediction for one patient and disease under concrete relationships, and
/// the log-likelihood of `label`.
#[allow(clippy::too_many_arguments)]
pub fn generative_forward(
    model: &AssessmentModel,
    state: &AdhState,
    sample: &SampledRelationships,
    sensor: &Tensor,
    profile: &[f64],
    group: usize,
    disease: usize,
    label: f64,
) -> Result<(f64, f64)> {
    if group >= state.shape.groups || disease >= state.shape.label_count {
        return Err(Error::invalid(format!("cell ({disease}, {group}) outside the grid")));
    }
    let (cell, output) = state.shape.locate(disease, group);
    let wf = sample.component(Block::Feature);
    let wp = sample.component(Block::Prediction);
    let agg = aggregate_cell(&state.grid, state.shape, model.feature_len(), (&wf, &wp), cell)?;
    let y_hat = model.predict_flat(&agg.theta, sensor, profile)?[output];
    Ok((y_hat, -cross_entropy(y_hat, label)))
}

/// Sum over every training pair of the log-likelihood under `sample`.
pub fn elbo_term1(
    model: &AssessmentModel,
    state: &AdhState,
    sample: &SampledRelationships,
    shards: &Shards<'_>,
) -> Result<f64> {
    let aggs = aggregate_all(&state.grid, state.shape, model.feature_len(), sample)?;
    let thetas: Vec<Vec<f64>> = aggs.into_iter().map(|a| a.theta).collect();
    let losses = cell_losses(model, shards, &thetas, false)?;
    Ok(-losses.iter().map(|l| l.0).sum::<f64>())
}

/// `(elbo, term1, term2)` with `elbo = term1 - term2`.
pub fn elbo(
    model: &AssessmentModel,
    state: &AdhState,
    sample: &SampledRelationships,
    shards: &Shards<'_>,
) -> Result<(f64, f64, f64)> {
    let term1 = elbo_term1(model, state, sample, shards)?;
    let term2 = total_kl(&state.variational, &state.priors)?;
    Ok((term1 - term2, term1, term2))
}

fn check_shape(state: &AdhState, shards: &Shards<'_>) -> Result<()> {
    if state.shape != shards.shape {
        return Err(Error::invalid("shards and state disagree on the grid shape"));
    }
    Ok(())
}

/// Aggregates every cell from the current grid with posterior-mean
/// relationships, then trains each cell for the configured epochs.
pub fn model_update_step(
    model: &AssessmentModel,
    state: &mut AdhState,
    shards: &Shards<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<()> {
    check_shape(state, shards)?;
    let round = state.round;
    let start = fold_posterior_means(model, state)?.grid;
    let (trained, _) = train_cells(
        model,
        shards,
        start,
        &mut state.model_adam,
        cfg.plan(),
        derive_seed(seed, &[round as u64, 4]),
    )?;
    check_finite(&trained, round)?;
    state.grid = trained;
    Ok(())
}

/// Adds the gradient of the summed cross-entropy at one aggregated cell into
/// the relationship gradients of both components.
fn chain_cell(
    grid: &[Vec<f64>],
    shape: GridShape,
    feature_len: usize,
    weights: (&ComponentWeights, &ComponentWeights),
    cell: usize,
    agg: &CellAggregate,
    g: &[f64],
    out: (&mut WeightGrads, &mut WeightGrads),
) {
    let (d, k) = (cell / shape.groups, cell % shape.groups);
    let len = g.len();
    let blocks = [(0..feature_len, weights.0, out.0), (feature_len..len, weights.1, out.1)];
    for (range, w, acc) in blocks {
        let gs = &g[range.clone()];
        let a_part = &agg.disease_part[range.clone()];
        let b_part = &agg.group_part[range.clone()];
        acc.weight += gs.iter().zip(a_part.iter().zip(b_part)).map(|(gi, (x, y))| gi * (x - y)).sum::<f64>();
        let a = w.weight;
        let dsum: f64 = w.disease.row(d).iter().sum();
        for d2 in 0..shape.diseases {
            let other = &grid[shape.cell(d2, k)][range.clone()];
            let dot: f64 = gs.iter().zip(other.iter().zip(a_part)).map(|(gi, (o, x))| gi * (o - x)).sum();
            let v = acc.disease.get(d, d2) + a * dot / dsum;
            acc.disease.set(d, d2, v);
        }
        let gsum: f64 = w.group.row(k).iter().sum();
        for k2 in 0..shape.groups {
            let other = &grid[shape.cell(d, k2)][range.clone()];
            let dot: f64 = gs.iter().zip(other.iter().zip(b_part)).map(|(gi, (o, y))| gi * (o - y)).sum();
            let v = acc.group.get(k, k2) + (1.0 - a) * dot / gsum;
            acc.group.set(k, k2, v);
        }
    }
}

/// term1 under `sample` and the gradient of the summed cross-entropy (that
/// is, of −term1) with respect to the flat variational storage.
pub fn term1_and_gradient(
    model: &AssessmentModel,
    state: &AdhState,
    sample: &SampledRelationships,
    shards: &Shards<'_>,
) -> Result<(f64, Vec<f64>)> {
    let flen = model.feature_len();
    let shape = state.shape;
    let aggs = aggregate_all(&state.grid, shape, flen, sample)?;
    let thetas: Vec<Vec<f64>> = aggs.iter().map(|a| a.theta.clone()).collect();
    let losses = cell_losses(model, shards, &thetas, true)?;
    let wf = sample.component(Block::Feature);
    let wp = sample.component(Block::Prediction);
    let mut gf = WeightGrads::zeros(shape.diseases, shape.groups);
    let mut gp = WeightGrads::zeros(shape.diseases, shape.groups);
    let mut ce = 0.0;
    for (c, (sum, g)) in losses.iter().enumerate() {
        ce += sum;
        let g = g.as_ref().expect("gradient requested");
        chain_cell(&state.grid, shape, flen, (&wf, &wp), c, &aggs[c], g, (&mut gf, &mut gp));
    }
    Ok((-ce, state.variational.pullback(sample, &gf, &gp)))
}

/// One Adam step on the variational parameters against −ELBO. With
/// `freeze_term1` only the KL term drives the step (diagnostic mode).
pub fn relationship_update_step(
    model: &AssessmentModel,
    state: &mut AdhState,
    shards: &Shards<'_>,
    cfg: &TrainConfig,
    seed: u64,
    freeze_term1: bool,
) -> Result<ElboRecord> {
    check_shape(state, shards)?;
    let round = state.round;
    let term2 = total_kl(&state.variational, &state.priors)?;
    let mut grad = state.variational.kl_gradient(&state.priors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[round as u64, 5]));
    let samples = cfg.relationship_samples.max(1);
    let mut term1 = 0.0;
    for _ in 0..samples {
        let sample = state.variational.sample(&mut rng, cfg.sample_mode);
        let (t1, g1) = term1_and_gradient(model, state, &sample, shards)?;
        term1 += t1 / samples as f64;
        if !freeze_term1 {
            for (g, v) in grad.iter_mut().zip(g1) {
                *g += v / samples as f64;
            }
        }
    }
    let elbo = term1 - term2;
    if !elbo.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            round,
            detail: format!("ELBO {elbo} (term1 {term1}, term2 {term2})"),
        });
    }
    let mut flat = state.variational.to_flat();
    state.rel_adam.step(&mut flat, &grad)?;
    state.variational.set_flat(&flat)?;
    let record = ElboRecord {
        round,
        term1,
        term2,
        elbo,
    };
    state.trace.push(record);
    Ok(record)
}

/// Grid aggregated with posterior-mean relationships: the start of every
/// model update.
pub fn fold_posterior_means(model: &AssessmentModel, state: &AdhState) -> Result<GridPredictor> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let sample = state.variational.sample(&mut rng, SampleMode::Mean);
    let aggs = aggregate_all(&state.grid, state.shape, model.feature_len(), &sample)?;
    Ok(GridPredictor {
        shape: state.shape,
        grid: aggs.into_iter().map(|a| a.theta).collect(),
    })
}

/// Coordinate ascent until the relative ELBO change stays under `elbo_tol`
/// for `patience` consecutive rounds or `max_rounds` is reached.
pub fn adh_train(
    model: &AssessmentModel,
    shards: &Shards<'_>,
    shared_components: bool,
    cfg: &TrainConfig,
    priors: RelationshipPriors,
    seed: u64,
) -> Result<(AdhState, GridPredictor, TrainReport)> {
    cfg.validate()?;
    priors.validate()?;
    let mut state = adh_init(model, shards.shape, shared_components, cfg, priors, seed);
    let mut plateau = Plateau::default();
    let mut wall_clock = Vec::new();
    for _ in 0..cfg.max_rounds {
        let start = Instant::now();
        model_update_step(model, &mut state, shards, cfg, seed)?;
        let rec = relationship_update_step(model, &mut state, shards, cfg, seed, false)?;
        state.round += 1;
        wall_clock.push(start.elapsed().as_secs_f64());
        let tol = cfg.elbo_tol;
        if plateau.update(rec.elbo, cfg.patience, |a, b| (b - a).abs() <= tol * a.abs().max(f64::MIN_POSITIVE)) {
            break;
        }
    }
    // relationships only shape training; the trained grid is the predictor
    let predictor = GridPredictor {
        shape: state.shape,
        grid: state.grid.clone(),
    };
    let report = TrainReport {
        rounds: state.trace.clone(),
        posterior: state.variational.summary(),
        wall_clock,
    };
    Ok((state, predictor, report))
}

/// Probabilities for every disease for a new patient with a standardized profile.
pub fn predict_new_patient(
    model: &AssessmentModel,
    predictor: &GridPredictor,
    index: &GroupModelIndex,
    sensor: &Tensor,
    profile: &[f64],
) -> Result<Vec<f64>> {
    predictor.predict_patient(model, index, sensor, profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relationships::Matrix;

    #[test]
    fn scalar_grid_hand_value_per_block() {
        // one scalar per block; theta[d][k] = [[1, 2], [3, 4]]
        let grid: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| vec![v, v]).collect();
        let shape = GridShape::new(2, 2, false);
        let w = ComponentWeights {
            disease: Matrix::filled(2, 1.0),
            group: Matrix::identity(2),
            weight: 0.5,
        };
        let agg = aggregate_cell(&grid, shape, 1, (&w, &w), 3).unwrap();
        assert_eq!(agg.theta, vec![3.5, 3.5]);
        let agg = aggregate_cell(&grid, shape, 1, (&w, &w), 0).unwrap();
        assert_eq!(agg.theta, vec![1.5, 1.5]);
    }
}
