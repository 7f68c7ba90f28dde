//! The (disease, group) model grid shared by every trainer: shard layout,
//! minibatch epochs, seed derivation and new-patient prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupModelIndex;
use crate::model::{AssessmentModel, ModelParams, Sample};
use crate::nn::{AdamConfig, AdamState, Tensor};

/// Mixes a base seed with a path of indices into an independent sub-seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Shape of the model grid after ablation ties are applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    /// Disease rows of the grid (1 when diseases are tied).
    pub diseases: usize,
    /// Group columns of the grid (1 when patients are tied).
    pub groups: usize,
    /// Number of diseases in the labels.
    pub label_count: usize,
    /// One multi-label model per group instead of one model per disease.
    pub multi_label: bool,
}

impl GridShape {
    pub fn new(label_count: usize, groups: usize, tie_diseases: bool) -> Self {
        Self {
            diseases: if tie_diseases { 1 } else { label_count },
            groups,
            label_count,
            multi_label: tie_diseases,
        }
    }

    pub fn cells(&self) -> usize {
        self.diseases * self.groups
    }

    /// Outputs of every model in the grid.
    pub fn outputs(&self) -> usize {
        if self.multi_label {
            self.label_count
        } else {
            1
        }
    }

    pub fn cell(&self, disease: usize, group: usize) -> usize {
        disease * self.groups + group
    }

    /// Grid cell and output index that score `disease` for a patient in `group`.
    pub fn locate(&self, disease: usize, group: usize) -> (usize, usize) {
        if self.multi_label {
            (self.cell(0, group), disease)
        } else {
            (self.cell(disease, group), 0)
        }
    }
}

/// Standardized training inputs with their assigned groups.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub sensors: Vec<Tensor>,
    pub profiles: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
    pub groups: Vec<usize>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }
}

/// Per-cell training shards: members of the cell's group with the labels
/// that the cell's model is trained on.
#[derive(Clone, Debug)]
pub struct Shards<'a> {
    pub shape: GridShape,
    set: &'a TrainingSet,
    members: Vec<Vec<usize>>,
    targets: Vec<Vec<Vec<f64>>>,
}

impl<'a> Shards<'a> {
    pub fn build(set: &'a TrainingSet, shape: GridShape) -> Result<Self> {
        let n = set.len();
        if set.profiles.len() != n || set.labels.len() != n || set.groups.len() != n {
            return Err(Error::DataValidation("training set columns differ in length".into()));
        }
        let mut members = vec![Vec::new(); shape.cells()];
        let mut targets = vec![Vec::new(); shape.cells()];
        for p in 0..n {
            let k = set.groups[p];
            if k >= shape.groups {
                return Err(Error::DataValidation(format!("patient {p} has group {k} outside the grid")));
            }
            if set.labels[p].len() != shape.label_count {
                return Err(Error::DataValidation(format!("patient {p} has a label vector of the wrong length")));
            }
            for d in 0..shape.diseases {
                let c = shape.cell(d, k);
                members[c].push(p);
                targets[c].push(if shape.multi_label {
                    set.labels[p].clone()
                } else {
                    vec![set.labels[p][d]]
                });
            }
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::DataValidation(format!(
                "grid cell ({}, {}) has no training patients",
                c / shape.groups,
                c % shape.groups
            )));
        }
        Ok(Self {
            shape,
            set,
            members,
            targets,
        })
    }

    pub fn samples(&self, cell: usize) -> Vec<Sample<'_>> {
        self.members[cell]
            .iter()
            .zip(&self.targets[cell])
            .map(|(&p, t)| Sample {
                sensor: &self.set.sensors[p],
                profile: &self.set.profiles[p],
                labels: t,
            })
            .collect()
    }

    pub fn len(&self, cell: usize) -> usize {
        self.members[cell].len()
    }

    /// Total number of (patient, cell) training pairs.
    pub fn total(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }
}

/// Optimization settings for the inner model epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochPlan {
    pub epochs: usize,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
}

/// Runs `plan.epochs` epochs of Adam on one shard and returns the mean
/// minibatch loss of the last epoch (NaN when no epoch ran).
pub fn run_epochs(
    model: &AssessmentModel,
    flat: &mut [f64],
    adam: &mut AdamState,
    samples: &[Sample<'_>],
    plan: EpochPlan,
    seed: u64,
) -> Result<f64> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::invalid("cannot train on an empty shard"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = if plan.batch_size == 0 || plan.batch_size >= n {
        n
    } else {
        plan.batch_size
    };
    let mut last = f64::NAN;
    let mut buf = Vec::with_capacity(batch);
    for _ in 0..plan.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            buf.clear();
            buf.extend(chunk.iter().map(|&i| samples[i]));
            let (loss, grad) = model.loss_and_grad(flat, &buf)?;
            adam.step(flat, &grad)?;
            total += loss * chunk.len() as f64;
        }
        last = total / n as f64;
    }
    Ok(last)
}

/// Identical initial parameters for every cell.
pub fn shared_init(model: &AssessmentModel, cells: usize, seed: u64) -> Vec<Vec<f64>> {
    let init = model.init_params(seed).to_flat();
    vec![init; cells]
}

pub fn fresh_adams(model: &AssessmentModel, cells: usize, lr: f64) -> Vec<AdamState> {
    (0..cells)
        .map(|_| AdamState::new(model.param_len(), AdamConfig::with_lr(lr)))
        .collect()
}

/// Trains every cell from `start` in parallel; results come back in cell order.
pub fn train_cells(
    model: &AssessmentModel,
    shards: &Shards<'_>,
    start: Vec<Vec<f64>>,
    adams: &mut [AdamState],
    plan: EpochPlan,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let results: Vec<Result<(Vec<f64>, f64)>> = start
        .into_par_iter()
        .zip(adams.par_iter_mut())
        .enumerate()
        .map(|(c, (mut flat, adam))| {
            let samples = shards.samples(c);
            let loss = run_epochs(model, &mut flat, adam, &samples, plan, derive_seed(seed, &[c as u64]))?;
            Ok((flat, loss))
        })
        .collect();
    let mut grid = Vec::with_capacity(results.len());
    let mut losses = Vec::with_capacity(results.len());
    for r in results {
        let (g, l) = r?;
        grid.push(g);
        losses.push(l);
    }
    Ok((grid, losses))
}

/// Sum over each cell's shard of the cross-entropy at `grid[c]`, with the
/// gradient of that sum when requested. Runs cells in parallel.
pub fn cell_losses(
    model: &AssessmentModel,
    shards: &Shards<'_>,
    grid: &[Vec<f64>],
    with_grad: bool,
) -> Result<Vec<(f64, Option<Vec<f64>>)>> {
    (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let samples = shards.samples(c);
            if with_grad {
                let mut g = vec![0.0; grid[c].len()];
                let l = model.accumulate_loss(&grid[c], &samples, Some(&mut g))?;
                Ok((l, Some(g)))
            } else {
                Ok((model.accumulate_loss(&grid[c], &samples, None)?, None))
            }
        })
        .collect()
}

pub fn check_finite(grid: &[Vec<f64>], round: usize) -> Result<()> {
    if grid.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            round,
            detail: "model parameters became non-finite".into(),
        });
    }
    Ok(())
}

/// A trained grid ready for new patients.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPredictor {
    pub shape: GridShape,
    pub grid: Vec<Vec<f64>>,
}

impl GridPredictor {
    pub fn params(&self, model: &AssessmentModel, cell: usize) -> Result<ModelParams> {
        model.params_from_flat(&self.grid[cell])
    }

    /// Probabilities for every disease, given a standardized profile.
    pub fn predict_patient(
        &self,
        model: &AssessmentModel,
        index: &GroupModelIndex,
        sensor: &Tensor,
        profile: &[f64],
    ) -> Result<Vec<f64>> {
        let k = index.assign_group(profile)?;
        if k >= self.shape.groups {
            return Err(Error::invalid(format!("group {k} outside the grid")));
        }
        if self.shape.multi_label {
            model.predict_flat(&self.grid[self.shape.cell(0, k)], sensor, profile)
        } else {
            (0..self.shape.diseases)
                .map(|d| Ok(model.predict_flat(&self.grid[self.shape.cell(d, k)], sensor, profile)?[0]))
                .collect()
        }
    }
}
