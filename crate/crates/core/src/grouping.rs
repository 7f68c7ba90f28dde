//! Profile standardization and K-means group-level modeling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
pub const RESTARTS: usize = 10;

/// Per-column mean and standard deviation fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits column statistics over `rows` vectors of equal length. Columns with
    /// zero spread get a unit standard deviation.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for row in rows {
            if n == 0 {
                sum = vec![0.0; row.len()];
                sum_sq = vec![0.0; row.len()];
            } else if row.len() != sum.len() {
                return Err(Error::LengthMismatch {
                    context: "standardizer rows",
                    left: row.len(),
                    right: sum.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                sum[j] += v;
                sum_sq[j] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("cannot standardize zero rows"));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(&ss, &m)| {
                let var = (ss / nf - m * m).max(0.0);
                let s = var.sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::LengthMismatch {
                context: "standardize",
                left: row.len(),
                right: self.dim(),
            });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// Fitted centroids plus the training assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupModelIndex {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub objective: f64,
    /// Objective after every Lloyd iteration of the winning restart.
    #[serde(skip)]
    pub history: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

impl GroupModelIndex {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn assign_group(&self, profile: &[f64]) -> Result<usize> {
        if profile.len() != self.dim() {
            return Err(Error::LengthMismatch {
                context: "assign_group profile",
                left: profile.len(),
                right: self.dim(),
            });
        }
        Ok(nearest(&self.centroids, profile).0)
    }

    /// A single-group index whose centroid is the mean profile.
    pub fn single(profiles: &[Vec<f64>]) -> Result<Self> {
        kmeans_fit(profiles, 1, 0)
    }
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct LloydRun {
    centroids: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    objective: f64,
    history: Vec<f64>,
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> LloydRun {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        // update step
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // empty clusters take the point farthest from its own centroid
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = points
                    .iter()
                    .zip(&assignment)
                    .enumerate()
                    .filter(|(_, (_, &a))| counts[a] > 1)
                    .map(|(i, (p, &a))| (i, sq_dist(p, &centroids[a])))
                    .fold((usize::MAX, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                if far != usize::MAX {
                    counts[assignment[far]] -= 1;
                    counts[c] = 1;
                    assignment[far] = c;
                    centroids[c] = points[far].clone();
                }
            }
        }
        let objective: f64 = points
            .iter()
            .zip(&assignment)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        history.push(objective);
        // assignment step
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let objective = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    LloydRun {
        centroids,
        assignment,
        objective,
        history,
    }
}

/// Lloyd's algorithm with k-means++ seeding; best of [`RESTARTS`] seeded
/// restarts by objective.
pub fn kmeans_fit(profiles: &[Vec<f64>], k: usize, seed: u64) -> Result<GroupModelIndex> {
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    if profiles.len() < k {
        return Err(Error::invalid(format!(
            "need at least K={k} profiles, got {}",
            profiles.len()
        )));
    }
    let dim = profiles[0].len();
    if profiles.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("profiles have inconsistent dimensions"));
    }
    if profiles.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("profiles contain non-finite values"));
    }
    let mut best: Option<LloydRun> = None;
    for restart in 0..RESTARTS as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(restart));
        let init = kmeans_pp(profiles, k, &mut rng);
        let run = lloyd(profiles, init);
        if best.as_ref().map_or(true, |b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(GroupModelIndex {
        k,
        centroids: best.centroids,
        assignment: best.assignment,
        objective: best.objective,
        history: best.history,
    })
}
