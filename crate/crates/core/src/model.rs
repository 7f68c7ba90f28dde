//! The two-component assessment model.
//!
//! The feature-extraction component runs a temporal convolution and an LSTM
//! over the sensor sequence and a small MLP over the profile vector, and
//! concatenates both outputs. The prediction component is an MLP head with a
//! sigmoid output. Parameters are stored in two disjoint blocks so that the
//! relationship machinery can aggregate each component separately.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy, cross_entropy_grad, Activation, LayerKind, ParamBlock, ParamSpec, Sequential,
    Tensor,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArchitecture {
    pub sensor_len: usize,
    pub sensor_channels: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    /// Average-pooling width applied after the convolution; 1 disables pooling.
    #[serde(default = "one")]
    pub pool_width: usize,
    pub hidden: usize,
    pub profile_dim: usize,
    pub profile_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    #[serde(default = "one")]
    pub outputs: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn one() -> usize {
    1
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl ModelArchitecture {
    /// Desk-scale defaults: conv(8, kernel 5), LSTM(16), profile MLP [8], head MLP [16].
    pub fn desk(sensor_len: usize, sensor_channels: usize, profile_dim: usize) -> Self {
        Self {
            sensor_len,
            sensor_channels,
            conv_filters: 8,
            conv_kernel: 5,
            pool_width: 1,
            hidden: 16,
            profile_dim,
            profile_widths: vec![8],
            head_widths: vec![16],
            outputs: 1,
            activation: Activation::Tanh,
        }
    }

    pub fn profile_out(&self) -> usize {
        self.profile_widths.last().copied().unwrap_or(self.profile_dim)
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden + self.profile_out()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.sensor_len,
            self.sensor_channels,
            self.conv_filters,
            self.conv_kernel,
            self.pool_width,
            self.hidden,
            self.profile_dim,
            self.outputs,
        ];
        if dims.iter().any(|&d| d == 0)
            || self.profile_widths.iter().chain(&self.head_widths).any(|&w| w == 0)
        {
            return Err(Error::Config(format!(
                "architecture dimensions must be positive: {self:?}"
            )));
        }
        if self.sensor_len < self.conv_kernel
            || (self.sensor_len - self.conv_kernel + 1) < self.pool_width
        {
            return Err(Error::Config(format!(
                "sensor length {} too short for kernel {} and pool width {}",
                self.sensor_len, self.conv_kernel, self.pool_width
            )));
        }
        Ok(())
    }
}

/// Parameters of one assessment model: feature block θᶠ and prediction block θᵖ.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub feature: ParamBlock,
    pub prediction: ParamBlock,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.feature.len() + self.prediction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// θᶠ followed by θᵖ.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(self.feature.values());
        v.extend_from_slice(self.prediction.values());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::LengthMismatch {
                context: "model params flat",
                left: flat.len(),
                right: self.len(),
            });
        }
        let nf = self.feature.len();
        self.feature.values_mut().copy_from_slice(&flat[..nf]);
        self.prediction.values_mut().copy_from_slice(&flat[nf..]);
        Ok(())
    }

    pub fn block(&self, block: Block) -> &[f64] {
        match block {
            Block::Feature => self.feature.values(),
            Block::Prediction => self.prediction.values(),
        }
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        match block {
            Block::Feature => self.feature.values_mut(),
            Block::Prediction => self.prediction.values_mut(),
        }
    }
}

/// Which component of the assessment model a parameter block belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Feature,
    Prediction,
}

impl Block {
    pub const ALL: [Block; 2] = [Block::Feature, Block::Prediction];
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub features: Option<Vec<f64>>,
}

impl Prediction {
    pub fn y_hat(&self) -> f64 {
        self.probabilities[0]
    }
}

/// One training example. `labels` holds one 0/1 target per model output.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub sensor: &'a Tensor,
    pub profile: &'a [f64],
    pub labels: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssessmentModel {
    arch: ModelArchitecture,
    sensor_net: Sequential,
    profile_net: Sequential,
    head_net: Sequential,
    feature_layout: Vec<ParamSpec>,
    prediction_layout: Vec<ParamSpec>,
}

impl AssessmentModel {
    pub fn new(arch: ModelArchitecture) -> Result<Self> {
        arch.validate()?;
        let act = LayerKind::Act(arch.activation);
        let mut sensor_layers = vec![
            LayerKind::Conv1d {
                channels: arch.sensor_channels,
                filters: arch.conv_filters,
                kernel: arch.conv_kernel,
            },
            act.clone(),
        ];
        if arch.pool_width > 1 {
            sensor_layers.push(LayerKind::AvgPool1d {
                channels: arch.conv_filters,
                width: arch.pool_width,
            });
        }
        sensor_layers.push(LayerKind::Lstm {
            inputs: arch.conv_filters,
            hidden: arch.hidden,
        });
        let sensor_net =
            Sequential::new(sensor_layers, vec![arch.sensor_len, arch.sensor_channels])?;

        let mut profile_layers = Vec::new();
        let mut width = arch.profile_dim;
        for &w in &arch.profile_widths {
            profile_layers.push(LayerKind::Dense {
                inputs: width,
                outputs: w,
            });
            profile_layers.push(act.clone());
            width = w;
        }
        let profile_net = Sequential::new(profile_layers, vec![arch.profile_dim])?;

        let mut head_layers = Vec::new();
        let mut width = arch.feature_dim();
        for &w in &arch.head_widths {
            head_layers.push(LayerKind::Dense {
                inputs: width,
                outputs: w,
            });
            head_layers.push(act.clone());
            width = w;
        }
        head_layers.push(LayerKind::Dense {
            inputs: width,
            outputs: arch.outputs,
        });
        head_layers.push(LayerKind::Act(Activation::Sigmoid));
        let head_net = Sequential::new(head_layers, vec![arch.feature_dim()])?;

        let mut feature_layout = sensor_net.param_specs("sensor");
        feature_layout.extend(profile_net.param_specs("profile"));
        let prediction_layout = head_net.param_specs("head");
        Ok(Self {
            arch,
            sensor_net,
            profile_net,
            head_net,
            feature_layout,
            prediction_layout,
        })
    }

    pub fn architecture(&self) -> &ModelArchitecture {
        &self.arch
    }

    pub fn feature_len(&self) -> usize {
        self.sensor_net.param_len() + self.profile_net.param_len()
    }

    pub fn prediction_len(&self) -> usize {
        self.head_net.param_len()
    }

    pub fn param_len(&self) -> usize {
        self.feature_len() + self.prediction_len()
    }

    pub fn feature_layout(&self) -> &[ParamSpec] {
        &self.feature_layout
    }

    pub fn prediction_layout(&self) -> &[ParamSpec] {
        &self.prediction_layout
    }

    pub fn zero_params(&self) -> ModelParams {
        ModelParams {
            feature: ParamBlock::zeros(self.feature_layout.clone()),
            prediction: ParamBlock::zeros(self.prediction_layout.clone()),
        }
    }

    pub fn params_from_flat(&self, flat: &[f64]) -> Result<ModelParams> {
        let mut p = self.zero_params();
        p.set_flat(flat)?;
        Ok(p)
    }

    /// Uniform(-s, s) with s = 1/sqrt(fan_in) for every weight and bias.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = self.zero_params();
        let mut fill = |net: &Sequential, values: &mut [f64]| {
            let mut offset = 0;
            for layer in net.layers() {
                let n = layer.param_len();
                let s = 1.0 / (layer.fan_in() as f64).sqrt();
                for v in &mut values[offset..offset + n] {
                    *v = rng.gen_range(-s..s);
                }
                offset += n;
            }
        };
        let ns = self.sensor_net.param_len();
        let (sensor, profile) = p.feature.values_mut().split_at_mut(ns);
        fill(&self.sensor_net, sensor);
        fill(&self.profile_net, profile);
        fill(&self.head_net, p.prediction.values_mut());
        p
    }

    fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.feature_len() {
            return Err(Error::LengthMismatch {
                context: "feature block",
                left: feature.len(),
                right: self.feature_len(),
            });
        }
        Ok(())
    }

    /// Feature vector `e_p`: final LSTM hidden state followed by the profile-MLP output.
    pub fn extract_features(
        &self,
        feature: &[f64],
        sensor: &Tensor,
        profile: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_feature(feature)?;
        let (ps, pp) = feature.split_at(self.sensor_net.param_len());
        let es = self.sensor_net.forward(ps, sensor)?;
        let ep = self.profile_net.forward(pp, &Tensor::vector(profile.to_vec())?)?;
        let mut e = es.into_data();
        e.extend_from_slice(ep.data());
        Ok(e)
    }

    pub fn predict_head(&self, prediction: &[f64], features: &[f64]) -> Result<Vec<f64>> {
        let y = self
            .head_net
            .forward(prediction, &Tensor::vector(features.to_vec())?)?;
        Ok(y.into_data())
    }

    pub fn predict(&self, params: &ModelParams, sensor: &Tensor, profile: &[f64]) -> Result<Prediction> {
        let e = self.extract_features(params.feature.values(), sensor, profile)?;
        let probabilities = self.predict_head(params.prediction.values(), &e)?;
        Ok(Prediction {
            probabilities,
            features: Some(e),
        })
    }

    /// Output probabilities for a flat (θᶠ ++ θᵖ) parameter vector.
    pub fn predict_flat(&self, flat: &[f64], sensor: &Tensor, profile: &[f64]) -> Result<Vec<f64>> {
        let (f, p) = self.split_flat(flat)?;
        let e = self.extract_features(f, sensor, profile)?;
        self.predict_head(p, &e)
    }

    fn split_flat<'a>(&self, flat: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        if flat.len() != self.param_len() {
            return Err(Error::LengthMismatch {
                context: "model params flat",
                left: flat.len(),
                right: self.param_len(),
            });
        }
        Ok(flat.split_at(self.feature_len()))
    }

    /// Sum over samples and outputs of the cross-entropy. When `grad` is given,
    /// the gradient of that sum with respect to `flat` is added into it.
    pub fn accumulate_loss(
        &self,
        flat: &[f64],
        batch: &[Sample<'_>],
        mut grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let (f, p) = self.split_flat(flat)?;
        let (ps, pp) = f.split_at(self.sensor_net.param_len());
        if let Some(g) = grad.as_deref() {
            if g.len() != flat.len() {
                return Err(Error::LengthMismatch {
                    context: "gradient buffer",
                    left: g.len(),
                    right: flat.len(),
                });
            }
        }
        let hidden = self.arch.hidden;
        let mut total = 0.0;
        for s in batch {
            if s.labels.len() != self.arch.outputs {
                return Err(Error::LengthMismatch {
                    context: "sample labels vs model outputs",
                    left: s.labels.len(),
                    right: self.arch.outputs,
                });
            }
            let profile = Tensor::vector(s.profile.to_vec())?;
            match grad.as_deref_mut() {
                None => {
                    let es = self.sensor_net.forward(ps, s.sensor)?;
                    let ep = self.profile_net.forward(pp, &profile)?;
                    let mut e = es.into_data();
                    e.extend_from_slice(ep.data());
                    let y = self.head_net.forward(p, &Tensor::from_parts(vec![e.len()], e))?;
                    total += y
                        .data()
                        .iter()
                        .zip(s.labels)
                        .map(|(&yh, &t)| cross_entropy(yh, t))
                        .sum::<f64>();
                }
                Some(g) => {
                    let (es, rs) = self.sensor_net.forward_recorded(ps, s.sensor)?;
                    let (ep, rp) = self.profile_net.forward_recorded(pp, &profile)?;
                    let mut e = es.into_data();
                    e.extend_from_slice(ep.data());
                    let (y, rh) = self
                        .head_net
                        .forward_recorded(p, &Tensor::from_parts(vec![e.len()], e))?;
                    let mut dy = Vec::with_capacity(y.len());
                    for (&yh, &t) in y.data().iter().zip(s.labels) {
                        total += cross_entropy(yh, t);
                        dy.push(cross_entropy_grad(yh, t));
                    }
                    let (gf, gp) = g.split_at_mut(self.feature_len());
                    let (gs, gpr) = gf.split_at_mut(self.sensor_net.param_len());
                    let de = self.head_net.backward(p, &rh, &dy, gp)?;
                    self.sensor_net.backward(ps, &rs, &de[..hidden], gs)?;
                    self.profile_net.backward(pp, &rp, &de[hidden..], gpr)?;
                }
            }
        }
        Ok(total)
    }

    /// Mean per-sample cross-entropy of a non-empty batch.
    pub fn model_loss(&self, params: &ModelParams, batch: &[Sample<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("model_loss on an empty batch"));
        }
        Ok(self.accumulate_loss(&params.to_flat(), batch, None)? / batch.len() as f64)
    }

    /// Mean loss and its gradient with respect to the flat parameters.
    pub fn loss_and_grad(&self, flat: &[f64], batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("loss_and_grad on an empty batch"));
        }
        let mut g = vec![0.0; flat.len()];
        let total = self.accumulate_loss(flat, batch, Some(&mut g))?;
        let scale = 1.0 / batch.len() as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        Ok((total * scale, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::sigmoid;

    fn tiny(outputs: usize) -> ModelArchitecture {
        ModelArchitecture {
            sensor_len: 6,
            sensor_channels: 2,
            conv_filters: 3,
            conv_kernel: 2,
            pool_width: 1,
            hidden: 3,
            profile_dim: 2,
            profile_widths: vec![2],
            head_widths: vec![3],
            outputs,
            activation: Activation::Tanh,
        }
    }

    fn sensor(t: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(t, c, (0..t * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_zero_features_and_half() {
        let m = AssessmentModel::new(tiny(1)).unwrap();
        let p = m.zero_params();
        let x = sensor(6, 2, 1);
        let e = m.extract_features(p.feature.values(), &x, &[0.3, -0.4]).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
        assert_eq!(m.predict(&p, &x, &[0.3, -0.4]).unwrap().y_hat(), 0.5);
    }

    #[test]
    fn head_bias_ten() {
        let m = AssessmentModel::new(tiny(1)).unwrap();
        let mut p = m.zero_params();
        p.prediction.get_mut("head.2.bias").unwrap()[0] = 10.0;
        let y = m.predict(&p, &sensor(6, 2, 2), &[1.0, 1.0]).unwrap().y_hat();
        assert!((y - 0.9999546021312976).abs() < 1e-12);
    }

    #[test]
    fn identity_profile_path() {
        let mut arch = tiny(1);
        arch.activation = Activation::Identity;
        let m = AssessmentModel::new(arch).unwrap();
        let mut p = m.zero_params();
        p.feature
            .get_mut("profile.0.weight")
            .unwrap()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let e = m.extract_features(p.feature.values(), &sensor(6, 2, 3), &[0.7, -1.3]).unwrap();
        assert_eq!(&e[3..], &[0.7, -1.3]);
    }

    #[test]
    fn predict_is_head_of_features() {
        let m = AssessmentModel::new(tiny(2)).unwrap();
        let p = m.init_params(7);
        let x = sensor(6, 2, 4);
        let pred = m.predict(&p, &x, &[0.2, 0.1]).unwrap();
        let e = m.extract_features(p.feature.values(), &x, &[0.2, 0.1]).unwrap();
        assert_eq!(pred.probabilities, m.predict_head(p.prediction.values(), &e).unwrap());
        assert_eq!(pred.probabilities.len(), 2);
    }

    #[test]
    fn model_loss_values() {
        let m = AssessmentModel::new(tiny(1)).unwrap();
        let mut p = m.zero_params();
        let x = sensor(6, 2, 5);
        let prof = [0.0, 0.0];
        let one = [1.0];
        let zero = [0.0];
        let batch = [
            Sample { sensor: &x, profile: &prof, labels: &one },
            Sample { sensor: &x, profile: &prof, labels: &zero },
        ];
        assert!((m.model_loss(&p, &batch).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        // logit ln 9 => y_hat = 0.9
        p.prediction.get_mut("head.2.bias").unwrap()[0] = 9f64.ln();
        let l1 = m.model_loss(&p, &batch[..1]).unwrap();
        assert!((l1 - 0.10536051565782628).abs() < 1e-9);
        let l2 = m.model_loss(&p, &batch[1..]).unwrap();
        let both = m.model_loss(&p, &batch).unwrap();
        assert!((both - 0.5 * (l1 + l2)).abs() < 1e-12);
        assert!(m.model_loss(&p, &[]).is_err());
    }

    #[test]
    fn partition_boundary_round_trip() {
        let m = AssessmentModel::new(tiny(1)).unwrap();
        let p = m.init_params(11);
        let flat = p.to_flat();
        let q = m.params_from_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.feature.len(), m.feature_len());
        assert_eq!(q.feature.values(), &flat[..m.feature_len()]);
    }

    #[test]
    fn identical_seeds_identical_params() {
        let m = AssessmentModel::new(tiny(1)).unwrap();
        assert_eq!(m.init_params(3), m.init_params(3));
        assert_ne!(m.init_params(3), m.init_params(4));
    }

    #[test]
    fn monotone_single_feature_head() {
        let arch = ModelArchitecture {
            profile_widths: vec![],
            head_widths: vec![],
            profile_dim: 1,
            ..tiny(1)
        };
        let m = AssessmentModel::new(arch).unwrap();
        let mut head = vec![0.0; m.prediction_len()];
        // weights on [hidden(3), profile(1)] then bias
        head[3] = 0.8;
        let mut last = 0.0;
        for i in 0..20 {
            let e = [0.0, 0.0, 0.0, -2.0 + 0.2 * i as f64];
            let y = m.predict_head(&head, &e).unwrap()[0];
            assert!(y > last);
            assert!((y - sigmoid(0.8 * e[3])).abs() < 1e-15);
            last = y;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = AssessmentModel::new(tiny(1)).unwrap();
        let p = m.zero_params();
        assert!(m.predict(&p, &sensor(5, 2, 1), &[0.0, 0.0]).is_err());
        assert!(m.predict(&p, &sensor(6, 3, 1), &[0.0, 0.0]).is_err());
        assert!(m.predict(&p, &sensor(6, 2, 1), &[0.0]).is_err());
    }
}
