//! Fixed set of differentiable layers with hand-written backward passes.
//!
//! Every layer reads its parameters from a flat slice laid out as described
//! by [`LayerKind::param_specs`]. Backward passes accumulate into a caller
//! supplied gradient slice of the same layout so that batch gradients can be
//! summed without intermediate allocations.

use serde::{Deserialize, Serialize};

use super::params::{layout_len, ParamSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// `y = W x + b`, `W` is `outputs x inputs`.
    Dense { inputs: usize, outputs: usize },
    /// Valid-padding, stride-1 convolution over time. Input `T x channels`,
    /// output `(T - kernel + 1) x filters`. Weight layout `filters x kernel x channels`.
    Conv1d {
        channels: usize,
        filters: usize,
        kernel: usize,
    },
    /// Non-overlapping mean over `width` consecutive time steps; a trailing
    /// remainder shorter than `width` is dropped.
    AvgPool1d { channels: usize, width: usize },
    /// Single-layer LSTM returning the final hidden state. Gate order i, f, g, o.
    Lstm { inputs: usize, hidden: usize },
    Act(Activation),
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv1d { .. } => "conv1d",
            LayerKind::AvgPool1d { .. } => "avg_pool1d",
            LayerKind::Lstm { .. } => "lstm",
            LayerKind::Act(_) => "activation",
        }
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        match *self {
            LayerKind::Dense { inputs, outputs } => vec![
                ParamSpec::new(format!("{prefix}.weight"), vec![outputs, inputs]),
                ParamSpec::new(format!("{prefix}.bias"), vec![outputs]),
            ],
            LayerKind::Conv1d {
                channels,
                filters,
                kernel,
            } => vec![
                ParamSpec::new(format!("{prefix}.weight"), vec![filters, kernel, channels]),
                ParamSpec::new(format!("{prefix}.bias"), vec![filters]),
            ],
            LayerKind::Lstm { inputs, hidden } => vec![
                ParamSpec::new(format!("{prefix}.w_ih"), vec![4 * hidden, inputs]),
                ParamSpec::new(format!("{prefix}.w_hh"), vec![4 * hidden, hidden]),
                ParamSpec::new(format!("{prefix}.bias"), vec![4 * hidden]),
            ],
            LayerKind::AvgPool1d { .. } | LayerKind::Act(_) => Vec::new(),
        }
    }

    pub fn param_len(&self) -> usize {
        layout_len(&self.param_specs(""))
    }

    /// Fan-in used for uniform initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv1d {
                channels, kernel, ..
            } => channels * kernel,
            LayerKind::Lstm { hidden, .. } => hidden,
            _ => 1,
        }
    }

    /// Output shape for a given input shape, or a diagnostic naming both shapes.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch {
            layer: self.name().to_string(),
            expected,
            actual: input.to_vec(),
        };
        match *self {
            LayerKind::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(mismatch(vec![inputs]));
                }
                Ok(vec![outputs])
            }
            LayerKind::Conv1d {
                channels,
                filters,
                kernel,
            } => {
                if input.len() != 2 || input[1] != channels || input[0] < kernel {
                    return Err(mismatch(vec![kernel.max(input.first().copied().unwrap_or(0)), channels]));
                }
                Ok(vec![input[0] - kernel + 1, filters])
            }
            LayerKind::AvgPool1d { channels, width } => {
                if input.len() != 2 || input[1] != channels || input[0] < width || width == 0 {
                    return Err(mismatch(vec![width.max(input.first().copied().unwrap_or(0)), channels]));
                }
                Ok(vec![input[0] / width, channels])
            }
            LayerKind::Lstm { inputs, hidden } => {
                if input.len() != 2 || input[1] != inputs || input[0] == 0 {
                    return Err(mismatch(vec![input.first().copied().unwrap_or(1).max(1), inputs]));
                }
                Ok(vec![hidden])
            }
            LayerKind::Act(_) => Ok(input.to_vec()),
        }
    }
}

/// Values a layer keeps from its forward pass for the backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache {
    Dense { input: Vec<f64> },
    Conv1d { input: Vec<f64>, steps: usize },
    AvgPool1d { steps: usize },
    Lstm(LstmCache),
    Act { input: Vec<f64>, output: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    input: Vec<f64>,
    steps: usize,
    /// Post-nonlinearity gate values `[i, f, g, o]` per step, `4H` each.
    gates: Vec<f64>,
    /// Cell states, `(steps + 1) x H`, row 0 is the zero initial state.
    cells: Vec<f64>,
    /// Hidden states, `(steps + 1) x H`.
    hiddens: Vec<f64>,
}

/// Evaluates one layer. Pure and deterministic.
pub fn layer_forward(kind: &LayerKind, params: &[f64], input: &Tensor) -> Result<Tensor> {
    forward_cached(kind, params, input).map(|(t, _)| t)
}

fn check_params(kind: &LayerKind, params: &[f64]) -> Result<()> {
    let n = kind.param_len();
    if params.len() != n {
        return Err(Error::ShapeMismatch {
            layer: format!("{} parameters", kind.name()),
            expected: vec![n],
            actual: vec![params.len()],
        });
    }
    Ok(())
}

#[inline]
fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *o += s;
    }
}

/// Forward pass that also returns the cache needed by [`layer_backward`].
pub fn forward_cached(
    kind: &LayerKind,
    params: &[f64],
    input: &Tensor,
) -> Result<(Tensor, LayerCache)> {
    let out_shape = kind.output_shape(input.shape())?;
    check_params(kind, params)?;
    let x = input.data();
    match *kind {
        LayerKind::Dense { inputs, outputs } => {
            let (w, b) = params.split_at(inputs * outputs);
            let mut y = b.to_vec();
            matvec_acc(w, x, &mut y);
            Ok((
                Tensor::from_parts(out_shape, y),
                LayerCache::Dense { input: x.to_vec() },
            ))
        }
        LayerKind::Conv1d {
            channels,
            filters,
            kernel,
        } => {
            let steps = out_shape[0];
            let (w, b) = params.split_at(filters * kernel * channels);
            let span = kernel * channels;
            let mut y = vec![0.0; steps * filters];
            for t in 0..steps {
                let window = &x[t * channels..t * channels + span];
                let row = &mut y[t * filters..(t + 1) * filters];
                for (f, out) in row.iter_mut().enumerate() {
                    let wf = &w[f * span..(f + 1) * span];
                    let mut s = b[f];
                    for (a, c) in wf.iter().zip(window) {
                        s += a * c;
                    }
                    *out = s;
                }
            }
            Ok((
                Tensor::from_parts(out_shape, y),
                LayerCache::Conv1d {
                    input: x.to_vec(),
                    steps,
                },
            ))
        }
        LayerKind::AvgPool1d { channels, width } => {
            let steps = out_shape[0];
            let mut y = vec![0.0; steps * channels];
            let scale = 1.0 / width as f64;
            for t in 0..steps {
                let row = &mut y[t * channels..(t + 1) * channels];
                for s in 0..width {
                    let src = &x[(t * width + s) * channels..(t * width + s + 1) * channels];
                    for (o, v) in row.iter_mut().zip(src) {
                        *o += v;
                    }
                }
                for o in row.iter_mut() {
                    *o *= scale;
                }
            }
            Ok((
                Tensor::from_parts(out_shape, y),
                LayerCache::AvgPool1d {
                    steps: input.shape()[0],
                },
            ))
        }
        LayerKind::Lstm { inputs, hidden } => {
            let steps = input.shape()[0];
            let h4 = 4 * hidden;
            let (w_ih, rest) = params.split_at(h4 * inputs);
            let (w_hh, bias) = rest.split_at(h4 * hidden);
            let mut gates = vec![0.0; steps * h4];
            let mut cells = vec![0.0; (steps + 1) * hidden];
            let mut hiddens = vec![0.0; (steps + 1) * hidden];
            let mut z = vec![0.0; h4];
            for t in 0..steps {
                z.copy_from_slice(bias);
                matvec_acc(w_ih, &x[t * inputs..(t + 1) * inputs], &mut z);
                matvec_acc(w_hh, &hiddens[t * hidden..(t + 1) * hidden], &mut z);
                let g = &mut gates[t * h4..(t + 1) * h4];
                for j in 0..hidden {
                    let ig = sigmoid(z[j]);
                    let fg = sigmoid(z[hidden + j]);
                    let gg = z[2 * hidden + j].tanh();
                    let og = sigmoid(z[3 * hidden + j]);
                    g[j] = ig;
                    g[hidden + j] = fg;
                    g[2 * hidden + j] = gg;
                    g[3 * hidden + j] = og;
                    let c = fg * cells[t * hidden + j] + ig * gg;
                    cells[(t + 1) * hidden + j] = c;
                    hiddens[(t + 1) * hidden + j] = og * c.tanh();
                }
            }
            let out = hiddens[steps * hidden..].to_vec();
            Ok((
                Tensor::from_parts(out_shape, out),
                LayerCache::Lstm(LstmCache {
                    input: x.to_vec(),
                    steps,
                    gates,
                    cells,
                    hiddens,
                }),
            ))
        }
        LayerKind::Act(act) => {
            let y: Vec<f64> = x.iter().map(|&v| act.apply(v)).collect();
            Ok((
                Tensor::from_parts(out_shape, y.clone()),
                LayerCache::Act {
                    input: x.to_vec(),
                    output: y,
                },
            ))
        }
    }
}

/// Backward pass for one layer. Adds parameter gradients into `grad_params`
/// and returns the gradient with respect to the layer input.
pub fn layer_backward(
    kind: &LayerKind,
    params: &[f64],
    cache: &LayerCache,
    grad_out: &[f64],
    grad_params: &mut [f64],
) -> Result<Vec<f64>> {
    check_params(kind, params)?;
    if grad_params.len() != params.len() {
        return Err(Error::LengthMismatch {
            context: "layer gradient buffer",
            left: grad_params.len(),
            right: params.len(),
        });
    }
    match (kind, cache) {
        (&LayerKind::Dense { inputs, outputs }, LayerCache::Dense { input }) => {
            check_len("dense grad_out", grad_out.len(), outputs)?;
            let (w, _) = params.split_at(inputs * outputs);
            let (gw, gb) = grad_params.split_at_mut(inputs * outputs);
            let mut gx = vec![0.0; inputs];
            for o in 0..outputs {
                let go = grad_out[o];
                gb[o] += go;
                if go == 0.0 {
                    continue;
                }
                let row = &w[o * inputs..(o + 1) * inputs];
                let grow = &mut gw[o * inputs..(o + 1) * inputs];
                for i in 0..inputs {
                    grow[i] += go * input[i];
                    gx[i] += go * row[i];
                }
            }
            Ok(gx)
        }
        (
            &LayerKind::Conv1d {
                channels,
                filters,
                kernel,
            },
            LayerCache::Conv1d { input, steps },
        ) => {
            let steps = *steps;
            check_len("conv1d grad_out", grad_out.len(), steps * filters)?;
            let span = kernel * channels;
            let (w, _) = params.split_at(filters * span);
            let (gw, gb) = grad_params.split_at_mut(filters * span);
            let mut gx = vec![0.0; input.len()];
            for t in 0..steps {
                let window = &input[t * channels..t * channels + span];
                for f in 0..filters {
                    let go = grad_out[t * filters + f];
                    gb[f] += go;
                    let wf = &w[f * span..(f + 1) * span];
                    let gwf = &mut gw[f * span..(f + 1) * span];
                    let gxw = &mut gx[t * channels..t * channels + span];
                    for j in 0..span {
                        gwf[j] += go * window[j];
                        gxw[j] += go * wf[j];
                    }
                }
            }
            Ok(gx)
        }
        (&LayerKind::AvgPool1d { channels, width }, LayerCache::AvgPool1d { steps }) => {
            let out_steps = steps / width;
            check_len("avg_pool1d grad_out", grad_out.len(), out_steps * channels)?;
            let scale = 1.0 / width as f64;
            let mut gx = vec![0.0; steps * channels];
            for t in 0..out_steps {
                let go = &grad_out[t * channels..(t + 1) * channels];
                for s in 0..width {
                    let dst = &mut gx[(t * width + s) * channels..(t * width + s + 1) * channels];
                    for (d, g) in dst.iter_mut().zip(go) {
                        *d = g * scale;
                    }
                }
            }
            Ok(gx)
        }
        (&LayerKind::Lstm { inputs, hidden }, LayerCache::Lstm(c)) => {
            check_len("lstm grad_out", grad_out.len(), hidden)?;
            lstm_backward(inputs, hidden, params, c, grad_out, grad_params)
        }
        (LayerKind::Act(act), LayerCache::Act { input, output }) => {
            check_len("activation grad_out", grad_out.len(), output.len())?;
            Ok(grad_out
                .iter()
                .zip(input.iter().zip(output))
                .map(|(g, (&x, &y))| g * act.derivative(x, y))
                .collect())
        }
        _ => Err(Error::invalid(format!(
            "cache does not belong to a {} layer",
            kind.name()
        ))),
    }
}

fn check_len(context: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::LengthMismatch {
            context,
            left: got,
            right: want,
        });
    }
    Ok(())
}

fn lstm_backward(
    inputs: usize,
    hidden: usize,
    params: &[f64],
    cache: &LstmCache,
    grad_out: &[f64],
    grad_params: &mut [f64],
) -> Result<Vec<f64>> {
    let h4 = 4 * hidden;
    let (w_ih, rest) = params.split_at(h4 * inputs);
    let (w_hh, _) = rest.split_at(h4 * hidden);
    let (g_ih, grest) = grad_params.split_at_mut(h4 * inputs);
    let (g_hh, g_b) = grest.split_at_mut(h4 * hidden);

    let steps = cache.steps;
    let mut gx = vec![0.0; steps * inputs];
    let mut dh = grad_out.to_vec();
    let mut dc = vec![0.0; hidden];
    let mut dz = vec![0.0; h4];
    for t in (0..steps).rev() {
        let g = &cache.gates[t * h4..(t + 1) * h4];
        let c_prev = &cache.cells[t * hidden..(t + 1) * hidden];
        let c_cur = &cache.cells[(t + 1) * hidden..(t + 2) * hidden];
        for j in 0..hidden {
            let (ig, fg, gg, og) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
            let tc = c_cur[j].tanh();
            let d_o = dh[j] * tc;
            let dcj = dc[j] + dh[j] * og * (1.0 - tc * tc);
            dz[j] = dcj * gg * ig * (1.0 - ig);
            dz[hidden + j] = dcj * c_prev[j] * fg * (1.0 - fg);
            dz[2 * hidden + j] = dcj * ig * (1.0 - gg * gg);
            dz[3 * hidden + j] = d_o * og * (1.0 - og);
            dc[j] = dcj * fg;
        }
        let x_t = &cache.input[t * inputs..(t + 1) * inputs];
        let h_prev = &cache.hiddens[t * hidden..(t + 1) * hidden];
        let gx_t = &mut gx[t * inputs..(t + 1) * inputs];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..h4 {
            let d = dz[r];
            g_b[r] += d;
            if d == 0.0 {
                continue;
            }
            let wi = &w_ih[r * inputs..(r + 1) * inputs];
            let gi = &mut g_ih[r * inputs..(r + 1) * inputs];
            for i in 0..inputs {
                gi[i] += d * x_t[i];
                gx_t[i] += d * wi[i];
            }
            let wh = &w_hh[r * hidden..(r + 1) * hidden];
            let gh = &mut g_hh[r * hidden..(r + 1) * hidden];
            for i in 0..hidden {
                gh[i] += d * h_prev[i];
                dh[i] += d * wh[i];
            }
        }
    }
    Ok(gx)
}

/// A chain of layers sharing one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    layers: Vec<LayerKind>,
    offsets: Vec<usize>,
    input_shape: Vec<usize>,
}

/// Caches recorded by [`Sequential::forward_recorded`].
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    caches: Vec<LayerCache>,
}

impl Sequential {
    pub fn new(layers: Vec<LayerKind>, input_shape: Vec<usize>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut offset = 0;
        let mut shape = input_shape.clone();
        for layer in &layers {
            offsets.push(offset);
            offset += layer.param_len();
            shape = layer.output_shape(&shape)?;
        }
        offsets.push(offset);
        Ok(Self {
            layers,
            offsets,
            input_shape,
        })
    }

    pub fn layers(&self) -> &[LayerKind] {
        &self.layers
    }

    pub fn param_len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("validated at construction");
        }
        shape
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_specs(&format!("{prefix}.{i}")))
            .collect()
    }

    fn layer_params<'a>(&self, params: &'a [f64], i: usize) -> &'a [f64] {
        &params[self.offsets[i]..self.offsets[i + 1]]
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            let first = self.layers.first().map_or("sequential", LayerKind::name);
            return Err(Error::ShapeMismatch {
                layer: first.to_string(),
                expected: self.input_shape.clone(),
                actual: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::LengthMismatch {
                context: "sequential parameters",
                left: params.len(),
                right: self.param_len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &Tensor) -> Result<Tensor> {
        self.check(params)?;
        self.check_input(input)?;
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer_forward(layer, self.layer_params(params, i), &x)?;
        }
        Ok(x)
    }

    pub fn forward_recorded(
        &self,
        params: &[f64],
        input: &Tensor,
    ) -> Result<(Tensor, ForwardRecord)> {
        self.check(params)?;
        self.check_input(input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = forward_cached(layer, self.layer_params(params, i), &x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, ForwardRecord { caches }))
    }

    /// Backpropagates `grad_out` through a recorded pass, accumulating into
    /// `grad_params`; returns the gradient with respect to the input.
    pub fn backward(
        &self,
        params: &[f64],
        record: &ForwardRecord,
        grad_out: &[f64],
        grad_params: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check(params)?;
        if grad_params.len() != params.len() {
            return Err(Error::LengthMismatch {
                context: "sequential gradient buffer",
                left: grad_params.len(),
                right: params.len(),
            });
        }
        if record.caches.len() != self.layers.len() {
            return Err(Error::NoForwardPass);
        }
        let mut g = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let range = self.offsets[i]..self.offsets[i + 1];
            g = layer_backward(
                &self.layers[i],
                &params[range.clone()],
                &record.caches[i],
                &g,
                &mut grad_params[range],
            )?;
        }
        Ok(g)
    }
}

/// Records one forward pass of a [`Sequential`] and backpropagates a scalar
/// loss through it.
#[derive(Debug)]
pub struct Tape<'a> {
    net: &'a Sequential,
    record: Option<ForwardRecord>,
}

impl<'a> Tape<'a> {
    pub fn new(net: &'a Sequential) -> Self {
        Self { net, record: None }
    }

    pub fn forward(&mut self, params: &[f64], input: &Tensor) -> Result<Tensor> {
        let (y, record) = self.net.forward_recorded(params, input)?;
        self.record = Some(record);
        Ok(y)
    }

    /// Gradient of `sum(grad_out * output)` with respect to the parameters.
    /// Consumes the recorded pass.
    pub fn backward(&mut self, params: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
        let record = self.record.take().ok_or(Error::NoForwardPass)?;
        let mut grad = vec![0.0; params.len()];
        self.net.backward(params, &record, grad_out, &mut grad)?;
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_zero_weights_pass_bias() {
        let kind = LayerKind::Dense {
            inputs: 3,
            outputs: 2,
        };
        let mut p = vec![0.0; 8];
        p[6] = 1.0;
        p[7] = -1.0;
        let x = Tensor::vector(vec![0.3, -2.0, 5.0]).unwrap();
        assert_eq!(layer_forward(&kind, &p, &x).unwrap().data(), &[1.0, -1.0]);
    }

    #[test]
    fn dense_hand_matvec() {
        let kind = LayerKind::Dense {
            inputs: 2,
            outputs: 2,
        };
        let p = vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0];
        let x = Tensor::vector(vec![1.0, 1.0]).unwrap();
        assert_eq!(layer_forward(&kind, &p, &x).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let y = layer_forward(
            &LayerKind::Act(Activation::Sigmoid),
            &[],
            &Tensor::vector(vec![0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn shape_mismatch_names_layer_and_shapes() {
        let kind = LayerKind::Dense {
            inputs: 3,
            outputs: 2,
        };
        let err = layer_forward(&kind, &[0.0; 8], &Tensor::vector(vec![1.0; 4]).unwrap())
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dense") && msg.contains("[3]") && msg.contains("[4]"), "{msg}");

        let lstm = LayerKind::Lstm {
            inputs: 2,
            hidden: 3,
        };
        let x = Tensor::matrix(4, 3, vec![0.0; 12]).unwrap();
        assert!(layer_forward(&lstm, &vec![0.0; lstm.param_len()], &x).is_err());
    }

    #[test]
    fn backward_without_forward_rejected() {
        let net = Sequential::new(
            vec![LayerKind::Dense {
                inputs: 1,
                outputs: 1,
            }],
            vec![1],
        )
        .unwrap();
        let mut tape = Tape::new(&net);
        assert!(matches!(
            tape.backward(&[1.0, 0.0], &[1.0]),
            Err(Error::NoForwardPass)
        ));
        tape.forward(&[1.0, 0.0], &Tensor::vector(vec![3.0]).unwrap())
            .unwrap();
        // scalar loss = w * x with x = 3
        let g = tape.backward(&[1.0, 0.0], &[1.0]).unwrap();
        assert_eq!(g[0], 3.0);
        // the record is consumed
        assert!(tape.backward(&[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn constant_graph_has_zero_gradient() {
        let net = Sequential::new(
            vec![LayerKind::Dense {
                inputs: 2,
                outputs: 1,
            }],
            vec![2],
        )
        .unwrap();
        let mut tape = Tape::new(&net);
        tape.forward(&[0.4, -0.1, 0.2], &Tensor::vector(vec![1.0, 2.0]).unwrap())
            .unwrap();
        let g = tape.backward(&[0.4, -0.1, 0.2], &[0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softplus_round_trip() {
        for &y in &[1e-6, 0.3, 1.0, 5.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
        assert!((softplus(10.0) - 10.000045398899218).abs() < 1e-12);
    }
}
