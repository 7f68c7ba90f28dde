//! Variational posteriors over the relationship parameters.
//!
//! Every positive quantity is stored unconstrained and mapped through a
//! softplus, so gradient steps on the flat storage keep positivity by
//! construction. The prior is a zero-mean matrix normal with identity row and
//! column scales for every relationship matrix, and a shared Beta(α, β) for the
//! relative weights.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregation_weight_slope, to_aggregation_weights, ComponentWeights};
use super::kl::{beta_kl, beta_kl_grad, matrix_normal_kl, matrix_normal_kl_grad};
use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::model::Block;
use crate::nn::{sigmoid, softplus, softplus_inverse};

/// Added to the softplus of the Beta storages.
pub const BETA_FLOOR: f64 = 1e-4;

/// Unconstrained value whose `softplus(raw) + offset` is as close to `target`
/// as floating point allows (exactly equal when representable).
pub fn raw_for(target: f64, offset: f64) -> f64 {
    let start = softplus_inverse(target - offset);
    let mut best = start;
    let mut best_err = (softplus(start) + offset - target).abs();
    let mut up = start;
    let mut down = start;
    for _ in 0..64 {
        if best_err == 0.0 {
            break;
        }
        up = f64::from_bits(if up >= 0.0 { up.to_bits() + 1 } else { up.to_bits() - 1 });
        down = f64::from_bits(if down > 0.0 { down.to_bits() - 1 } else { down.to_bits() + 1 });
        for cand in [up, down] {
            let err = (softplus(cand) + offset - target).abs();
            if err < best_err {
                best = cand;
                best_err = err;
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationshipPriors {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RelationshipPriors {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 2.0,
        }
    }
}

impl RelationshipPriors {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::Config(format!(
                "Beta prior hyperparameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// MN(M̂, diag(δ̂), diag(γ̂)) over an `n x n` relationship matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixNormalPosterior {
    pub n: usize,
    pub mean: Vec<f64>,
    pub row_raw: Vec<f64>,
    pub col_raw: Vec<f64>,
}

impl MatrixNormalPosterior {
    /// Zero mean and exactly unit scales.
    pub fn at_prior(n: usize) -> Self {
        let one = raw_for(1.0, 0.0);
        Self {
            n,
            mean: vec![0.0; n * n],
            row_raw: vec![one; n],
            col_raw: vec![one; n],
        }
    }

    /// Mean `diagonal` on the diagonal and zero elsewhere; row and column
    /// scales both equal to `scale`.
    pub fn with_diagonal(n: usize, diagonal: f64, scale: f64) -> Self {
        let raw = raw_for(scale, 0.0);
        Self {
            n,
            mean: Matrix::from_fn(n, |i, j| if i == j { diagonal } else { 0.0 })
                .data()
                .to_vec(),
            row_raw: vec![raw; n],
            col_raw: vec![raw; n],
        }
    }

    pub fn row_scale(&self) -> Vec<f64> {
        self.row_raw.iter().map(|&r| softplus(r)).collect()
    }

    pub fn col_scale(&self) -> Vec<f64> {
        self.col_raw.iter().map(|&r| softplus(r)).collect()
    }

    pub fn mean_matrix(&self) -> Matrix {
        Matrix::new(self.n, self.mean.clone()).expect("n x n mean")
    }

    pub fn kl(&self) -> Result<f64> {
        matrix_normal_kl(&self.mean, &self.row_scale(), &self.col_scale())
    }

    fn param_len(&self) -> usize {
        self.n * self.n + 2 * self.n
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.mean);
        out.extend_from_slice(&self.row_raw);
        out.extend_from_slice(&self.col_raw);
    }

    fn read_flat(&mut self, flat: &[f64]) -> usize {
        let nn = self.n * self.n;
        self.mean.copy_from_slice(&flat[..nn]);
        self.row_raw.copy_from_slice(&flat[nn..nn + self.n]);
        self.col_raw.copy_from_slice(&flat[nn + self.n..nn + 2 * self.n]);
        self.param_len()
    }

    /// `M̂ + diag(δ̂)^{1/2} E diag(γ̂)^{1/2}` with E i.i.d. standard normal.
    fn sample<R: Rng>(&self, rng: &mut R, draw: bool) -> SampledMatrix {
        let n = self.n;
        let noise = if draw {
            let draws: Vec<f64> = (0..n * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Matrix::new(n, draws).expect("n x n noise")
        } else {
            Matrix::zeros(n)
        };
        let rs: Vec<f64> = self.row_scale().iter().map(|v| v.sqrt()).collect();
        let cs: Vec<f64> = self.col_scale().iter().map(|v| v.sqrt()).collect();
        let raw = Matrix::from_fn(n, |i, j| self.mean[i * n + j] + rs[i] * noise.get(i, j) * cs[j]);
        SampledMatrix { raw, noise }
    }

    /// Gradient of an objective with respect to this posterior's flat storage,
    /// given its gradient with respect to the sampled raw matrix.
    fn pullback(&self, sample: &SampledMatrix, grad_raw: &Matrix, out: &mut [f64]) {
        let n = self.n;
        let nn = n * n;
        let rs = self.row_scale();
        let cs = self.col_scale();
        for i in 0..n {
            for j in 0..n {
                let g = grad_raw.get(i, j);
                out[i * n + j] += g;
                let e = sample.noise.get(i, j);
                if e != 0.0 {
                    // ∂R/∂δ_i = E γ_j^{1/2} / (2 δ_i^{1/2}), and likewise for γ_j
                    let dr = g * e * cs[j].sqrt() / (2.0 * rs[i].sqrt());
                    let dc = g * e * rs[i].sqrt() / (2.0 * cs[j].sqrt());
                    out[nn + i] += dr * sigmoid(self.row_raw[i]);
                    out[nn + n + j] += dc * sigmoid(self.col_raw[j]);
                }
            }
        }
    }

    fn kl_pullback(&self, out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let nn = n * n;
        let (gm, gr, gc) = matrix_normal_kl_grad(&self.mean, &self.row_scale(), &self.col_scale())?;
        for (o, g) in out[..nn].iter_mut().zip(gm) {
            *o += g;
        }
        for i in 0..n {
            out[nn + i] += gr[i] * sigmoid(self.row_raw[i]);
            out[nn + n + i] += gc[i] * sigmoid(self.col_raw[i]);
        }
        Ok(())
    }
}

/// Beta(α̂, β̂) over a relative weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub alpha_raw: f64,
    pub beta_raw: f64,
}

impl BetaPosterior {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha_raw: raw_for(alpha, BETA_FLOOR),
            beta_raw: raw_for(beta, BETA_FLOOR),
        }
    }

    pub fn alpha(&self) -> f64 {
        softplus(self.alpha_raw) + BETA_FLOOR
    }

    pub fn beta(&self) -> f64 {
        softplus(self.beta_raw) + BETA_FLOOR
    }

    pub fn mean(&self) -> f64 {
        let (a, b) = (self.alpha(), self.beta());
        a / (a + b)
    }

    pub fn kl(&self, priors: &RelationshipPriors) -> Result<f64> {
        beta_kl(self.alpha(), self.beta(), priors.alpha, priors.beta)
    }
}

/// Which relationship objects exist and whether the two components share them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationshipLayout {
    pub diseases: usize,
    pub groups: usize,
    /// Both components use one inter-disease matrix, one inter-group matrix
    /// and one relative weight.
    pub shared_components: bool,
}

impl RelationshipLayout {
    pub fn disease_active(&self) -> bool {
        self.diseases > 1
    }

    pub fn group_active(&self) -> bool {
        self.groups > 1
    }

    pub fn weight_active(&self) -> bool {
        self.disease_active() || self.group_active()
    }
}

/// Initial posterior used at the start of training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorInit {
    /// Diagonal of the initial posterior means.
    pub mean_diagonal: f64,
    /// Initial row and column scale of every matrix posterior.
    pub scale: f64,
}

impl Default for PosteriorInit {
    fn default() -> Self {
        Self {
            mean_diagonal: 2.0,
            scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub layout: RelationshipLayout,
    pub disease_f: MatrixNormalPosterior,
    pub group_f: MatrixNormalPosterior,
    pub disease_p: MatrixNormalPosterior,
    pub group_p: MatrixNormalPosterior,
    pub weight_f: BetaPosterior,
    pub weight_p: BetaPosterior,
}

/// Matrix samples: the raw draw and the standard-normal noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledMatrix {
    pub raw: Matrix,
    pub noise: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledRelationships {
    pub disease_f: SampledMatrix,
    pub group_f: SampledMatrix,
    pub disease_p: SampledMatrix,
    pub group_p: SampledMatrix,
    pub weight_f: f64,
    pub weight_p: f64,
}

impl SampledRelationships {
    /// Positivity-transformed weights for one component.
    pub fn component(&self, block: Block) -> ComponentWeights {
        let (d, g, a) = match block {
            Block::Feature => (&self.disease_f, &self.group_f, self.weight_f),
            Block::Prediction => (&self.disease_p, &self.group_p, self.weight_p),
        };
        ComponentWeights {
            disease: to_aggregation_weights(&d.raw),
            group: to_aggregation_weights(&g.raw),
            weight: a,
        }
    }
}

/// How relationship values are drawn from the posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Reparameterized matrix draws; relative weights at their posterior mean.
    Sample,
    /// Posterior means everywhere.
    Mean,
    /// Reparameterized matrix draws and single Beta draws for the relative
    /// weights. Diagnostic only: gradients still flow through the Beta mean.
    SampleWithBetaDraw,
}

/// Gradient of an objective with respect to one component's transformed
/// weights and relative weight.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightGrads {
    pub disease: Matrix,
    pub group: Matrix,
    pub weight: f64,
}

impl WeightGrads {
    pub fn zeros(diseases: usize, groups: usize) -> Self {
        Self {
            disease: Matrix::zeros(diseases),
            group: Matrix::zeros(groups),
            weight: 0.0,
        }
    }
}

impl VariationalState {
    pub fn at_priors(layout: RelationshipLayout, priors: &RelationshipPriors) -> Self {
        Self {
            layout,
            disease_f: MatrixNormalPosterior::at_prior(layout.diseases),
            group_f: MatrixNormalPosterior::at_prior(layout.groups),
            disease_p: MatrixNormalPosterior::at_prior(layout.diseases),
            group_p: MatrixNormalPosterior::at_prior(layout.groups),
            weight_f: BetaPosterior::new(priors.alpha, priors.beta),
            weight_p: BetaPosterior::new(priors.alpha, priors.beta),
        }
    }

    pub fn init(layout: RelationshipLayout, priors: &RelationshipPriors, init: &PosteriorInit) -> Self {
        let mut s = Self::at_priors(layout, priors);
        if layout.disease_active() {
            s.disease_f = MatrixNormalPosterior::with_diagonal(layout.diseases, init.mean_diagonal, init.scale);
            s.disease_p = s.disease_f.clone();
        }
        if layout.group_active() {
            s.group_f = MatrixNormalPosterior::with_diagonal(layout.groups, init.mean_diagonal, init.scale);
            s.group_p = s.group_f.clone();
        }
        s
    }

    fn matrices(&self) -> [&MatrixNormalPosterior; 4] {
        [&self.disease_f, &self.group_f, &self.disease_p, &self.group_p]
    }

    pub fn param_len(&self) -> usize {
        self.matrices().iter().map(|m| m.param_len()).sum::<usize>() + 4
    }

    /// Flat storage: disease_f, group_f, disease_p, group_p, then (α, β) raws
    /// for the feature and prediction weights.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_len());
        for m in self.matrices() {
            m.write_flat(&mut v);
        }
        v.extend_from_slice(&[
            self.weight_f.alpha_raw,
            self.weight_f.beta_raw,
            self.weight_p.alpha_raw,
            self.weight_p.beta_raw,
        ]);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_len() {
            return Err(Error::LengthMismatch {
                context: "variational state flat",
                left: flat.len(),
                right: self.param_len(),
            });
        }
        let mut off = 0;
        off += self.disease_f.read_flat(&flat[off..]);
        off += self.group_f.read_flat(&flat[off..]);
        off += self.disease_p.read_flat(&flat[off..]);
        off += self.group_p.read_flat(&flat[off..]);
        self.weight_f.alpha_raw = flat[off];
        self.weight_f.beta_raw = flat[off + 1];
        self.weight_p.alpha_raw = flat[off + 2];
        self.weight_p.beta_raw = flat[off + 3];
        Ok(())
    }

    fn offsets(&self) -> [usize; 5] {
        let a = self.disease_f.param_len();
        let b = a + self.group_f.param_len();
        let c = b + self.disease_p.param_len();
        let d = c + self.group_p.param_len();
        [0, a, b, c, d]
    }

    /// Named KL summands of the active relationship objects.
    pub fn kl_terms(&self, priors: &RelationshipPriors) -> Result<Vec<(&'static str, f64)>> {
        let l = self.layout;
        let mut terms = Vec::new();
        if l.disease_active() {
            terms.push(("disease_f", self.disease_f.kl()?));
        }
        if l.group_active() {
            terms.push(("group_f", self.group_f.kl()?));
        }
        if !l.shared_components {
            if l.disease_active() {
                terms.push(("disease_p", self.disease_p.kl()?));
            }
            if l.group_active() {
                terms.push(("group_p", self.group_p.kl()?));
            }
        }
        if l.weight_active() {
            terms.push(("weight_f", self.weight_f.kl(priors)?));
            if !l.shared_components {
                terms.push(("weight_p", self.weight_p.kl(priors)?));
            }
        }
        Ok(terms)
    }

    /// Gradient of [`total_kl`] with respect to the flat storage.
    pub fn kl_gradient(&self, priors: &RelationshipPriors) -> Result<Vec<f64>> {
        let l = self.layout;
        let mut g = vec![0.0; self.param_len()];
        let o = self.offsets();
        if l.disease_active() {
            self.disease_f.kl_pullback(&mut g[o[0]..o[1]])?;
            if !l.shared_components {
                self.disease_p.kl_pullback(&mut g[o[2]..o[3]])?;
            }
        }
        if l.group_active() {
            self.group_f.kl_pullback(&mut g[o[1]..o[2]])?;
            if !l.shared_components {
                self.group_p.kl_pullback(&mut g[o[3]..o[4]])?;
            }
        }
        if l.weight_active() {
            let mut beta_grad = |post: &BetaPosterior, at: usize| -> Result<()> {
                let (ga, gb) = beta_kl_grad(post.alpha(), post.beta(), priors.alpha, priors.beta)?;
                g[at] += ga * sigmoid(post.alpha_raw);
                g[at + 1] += gb * sigmoid(post.beta_raw);
                Ok(())
            };
            beta_grad(&self.weight_f, o[4])?;
            if !l.shared_components {
                beta_grad(&self.weight_p, o[4] + 2)?;
            }
        }
        Ok(g)
    }

    /// Draws concrete relationship values. Shared layouts reuse the feature
    /// component's draw for the prediction component.
    pub fn sample<R: Rng>(&self, rng: &mut R, mode: SampleMode) -> SampledRelationships {
        let draw = mode != SampleMode::Mean;
        let disease_f = self.disease_f.sample(rng, draw);
        let group_f = self.group_f.sample(rng, draw);
        let (disease_p, group_p) = if self.layout.shared_components {
            (disease_f.clone(), group_f.clone())
        } else {
            (self.disease_p.sample(rng, draw), self.group_p.sample(rng, draw))
        };
        let mut weight = |b: &BetaPosterior| -> f64 {
            if mode == SampleMode::SampleWithBetaDraw {
                Beta::new(b.alpha(), b.beta())
                    .map(|d| d.sample(rng))
                    .unwrap_or_else(|_| b.mean())
            } else {
                b.mean()
            }
        };
        let weight_f = weight(&self.weight_f);
        let weight_p = if self.layout.shared_components {
            weight_f
        } else {
            weight(&self.weight_p)
        };
        SampledRelationships {
            disease_f,
            group_f,
            disease_p,
            group_p,
            weight_f,
            weight_p,
        }
    }

    /// Posterior-mean relationships, positivity-transformed.
    pub fn posterior_mean_weights(&self) -> (ComponentWeights, ComponentWeights) {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let s = self.sample(&mut rng, SampleMode::Mean);
        (s.component(Block::Feature), s.component(Block::Prediction))
    }

    /// Chains gradients with respect to the transformed weights of each
    /// component back to the flat storage. Relative weights are differentiated
    /// through the Beta posterior mean.
    pub fn pullback(
        &self,
        sample: &SampledRelationships,
        grad_f: &WeightGrads,
        grad_p: &WeightGrads,
    ) -> Vec<f64> {
        let l = self.layout;
        let mut g = vec![0.0; self.param_len()];
        let o = self.offsets();
        let raw_grad = |s: &SampledMatrix, gw: &Matrix| -> Matrix {
            let slope = aggregation_weight_slope(&s.raw);
            Matrix::from_fn(s.raw.n(), |i, j| gw.get(i, j) * slope.get(i, j))
        };
        let shared = l.shared_components;
        if l.disease_active() {
            let gf = raw_grad(&sample.disease_f, &grad_f.disease);
            let gp = raw_grad(&sample.disease_p, &grad_p.disease);
            if shared {
                let sum = Matrix::from_fn(gf.n(), |i, j| gf.get(i, j) + gp.get(i, j));
                self.disease_f.pullback(&sample.disease_f, &sum, &mut g[o[0]..o[1]]);
            } else {
                self.disease_f.pullback(&sample.disease_f, &gf, &mut g[o[0]..o[1]]);
                self.disease_p.pullback(&sample.disease_p, &gp, &mut g[o[2]..o[3]]);
            }
        }
        if l.group_active() {
            let gf = raw_grad(&sample.group_f, &grad_f.group);
            let gp = raw_grad(&sample.group_p, &grad_p.group);
            if shared {
                let sum = Matrix::from_fn(gf.n(), |i, j| gf.get(i, j) + gp.get(i, j));
                self.group_f.pullback(&sample.group_f, &sum, &mut g[o[1]..o[2]]);
            } else {
                self.group_f.pullback(&sample.group_f, &gf, &mut g[o[1]..o[2]]);
                self.group_p.pullback(&sample.group_p, &gp, &mut g[o[3]..o[4]]);
            }
        }
        if l.weight_active() {
            let mut beta_grad = |post: &BetaPosterior, ga_mean: f64, at: usize| {
                let (a, b) = (post.alpha(), post.beta());
                let s2 = (a + b) * (a + b);
                g[at] += ga_mean * (b / s2) * sigmoid(post.alpha_raw);
                g[at + 1] += ga_mean * (-a / s2) * sigmoid(post.beta_raw);
            };
            if shared {
                beta_grad(&self.weight_f, grad_f.weight + grad_p.weight, o[4]);
            } else {
                beta_grad(&self.weight_f, grad_f.weight, o[4]);
                beta_grad(&self.weight_p, grad_p.weight, o[4] + 2);
            }
        }
        g
    }

    /// Posterior means of all relationship objects, for reports.
    pub fn summary(&self) -> PosteriorSummary {
        let (f, p) = self.posterior_mean_weights();
        PosteriorSummary {
            disease_f: self.disease_f.mean.clone(),
            group_f: self.group_f.mean.clone(),
            disease_p: self.disease_p.mean.clone(),
            group_p: self.group_p.mean.clone(),
            weight_f: f.weight,
            weight_p: p.weight,
            shared_components: self.layout.shared_components,
        }
    }
}

/// Posterior means (raw matrix means and relative weights).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub disease_f: Vec<f64>,
    pub group_f: Vec<f64>,
    pub disease_p: Vec<f64>,
    pub group_p: Vec<f64>,
    pub weight_f: f64,
    pub weight_p: f64,
    pub shared_components: bool,
}

/// Sum of the KL divergences of every active relationship posterior from its prior.
pub fn total_kl(state: &VariationalState, priors: &RelationshipPriors) -> Result<f64> {
    Ok(state.kl_terms(priors)?.iter().map(|(_, v)| v).sum())
}

/// Free-function form of [`VariationalState::sample`].
pub fn sample_relationships<R: Rng>(
    state: &VariationalState,
    rng: &mut R,
    mode: SampleMode,
) -> SampledRelationships {
    state.sample(rng, mode)
}
