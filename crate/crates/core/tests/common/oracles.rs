//! Independent numerical references shared by the oracle tests and the
//! acceptance suite.

use dhmtl::model::{AssessmentModel, Sample};
use dhmtl::nn::{Activation, LayerKind, Sequential, Tape, Tensor};
use dhmtl::relationships::{total_kl, PosteriorInit, RelationshipLayout, RelationshipPriors, VariationalState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tiny_architecture, worst_fd_error};

/// Coordinates probed per finite-difference check.
pub const COORDS: usize = 100;

/// Tanh-sinh quadrature of `exp(log_f(x))` and of `g(x) * exp(log_f(x))`
/// over (0, 1). `log_f` receives `x` and `1 - x`, both computed without
/// cancellation near the endpoints.
pub fn tanh_sinh(log_f: impl Fn(f64, f64) -> f64, g: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let h = 1.0 / 64.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let (mut z, mut m) = (0.0, 0.0);
    let steps = (4.5 / h) as i64;
    for i in -steps..=steps {
        let t = i as f64 * h;
        let u = half_pi * t.sinh();
        let x = 1.0 / (1.0 + (-2.0 * u).exp());
        let y = 1.0 / (1.0 + (2.0 * u).exp());
        if x <= 0.0 || y <= 0.0 {
            continue;
        }
        // dx/dt = x * y * 2 * du/dt
        let w = h * 2.0 * x * y * half_pi * t.cosh();
        let f = (log_f(x, y)).exp() * w;
        z += f;
        m += g(x, y) * f;
    }
    (z, m)
}

/// KL(Beta(a, b) || Beta(c, d)) from the integral definition with
/// numerically integrated normalizers.
pub fn beta_kl_quadrature(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let log_q = |x: f64, y: f64| (a - 1.0) * x.ln() + (b - 1.0) * y.ln();
    let log_p = |x: f64, y: f64| (c - 1.0) * x.ln() + (d - 1.0) * y.ln();
    let (zq, mq) = tanh_sinh(log_q, |x, y| log_q(x, y) - log_p(x, y));
    let (zp, _) = tanh_sinh(log_p, |_, _| 0.0);
    mq / zq - zq.ln() + zp.ln()
}

/// KL of N(vec M, diag(col) ⊗ diag(row)) from N(0, I) with dense linear algebra.
pub fn dense_gaussian_kl(mean: &[f64], row: &[f64], col: &[f64]) -> f64 {
    let n = row.len();
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(col))
        .kronecker(&DMatrix::from_diagonal(&DVector::from_column_slice(row)));
    // vec stacks columns; our mean is row-major
    let mu = DVector::from_fn(n * n, |i, _| mean[(i % n) * n + i / n]);
    let dim = (n * n) as f64;
    0.5 * (sigma.trace() + mu.dot(&mu) - dim - sigma.determinant().ln())
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Worst relative errors of the parameter and input gradients of
/// `sum(r * net(x))`. Also checks that the tape agrees with `backward`.
pub fn network_gradient_errors(layers: Vec<LayerKind>, input_shape: Vec<usize>, seed: u64) -> (f64, f64) {
    let net = Sequential::new(layers, input_shape.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = random_vec(&mut rng, net.param_len(), 0.8);
    let n_in: usize = input_shape.iter().product();
    let input = Tensor::new(input_shape.clone(), random_vec(&mut rng, n_in, 1.5)).unwrap();
    let n_out: usize = net.output_shape().iter().product();
    let weights = random_vec(&mut rng, n_out, 1.0);
    let objective = |p: &[f64], x: &Tensor| -> f64 {
        let y = net.forward(p, x).unwrap();
        y.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
    };

    let (_, record) = net.forward_recorded(&params, &input).unwrap();
    let mut grad = vec![0.0; params.len()];
    let grad_in = net.backward(&params, &record, &weights, &mut grad).unwrap();

    let param_err = if params.is_empty() {
        0.0
    } else {
        worst_fd_error(&params, &grad, COORDS, 1e-6, &mut rng, |p| objective(p, &input))
    };
    let input_err = worst_fd_error(input.data(), &grad_in, COORDS, 1e-6, &mut rng, |x| {
        objective(&params, &Tensor::new(input_shape.clone(), x.to_vec()).unwrap())
    });

    let mut tape = Tape::new(&net);
    tape.forward(&params, &input).unwrap();
    assert_eq!(tape.backward(&params, &weights).unwrap(), grad);
    (param_err, input_err)
}

/// One small network per layer kind and activation, plus a stacked encoder.
pub fn layer_cases() -> Vec<(String, Vec<LayerKind>, Vec<usize>)> {
    let mut cases = vec![
        ("dense".to_string(), vec![LayerKind::Dense { inputs: 7, outputs: 5 }], vec![7]),
        (
            "conv1d".into(),
            vec![LayerKind::Conv1d {
                channels: 3,
                filters: 4,
                kernel: 5,
            }],
            vec![12, 3],
        ),
        ("avg_pool".into(), vec![LayerKind::AvgPool1d { channels: 3, width: 3 }], vec![11, 3]),
        ("lstm".into(), vec![LayerKind::Lstm { inputs: 3, hidden: 4 }], vec![9, 3]),
    ];
    for act in [Activation::Identity, Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
        cases.push((
            format!("{act:?}").to_lowercase(),
            vec![LayerKind::Dense { inputs: 4, outputs: 6 }, LayerKind::Act(act)],
            vec![4],
        ));
    }
    cases.push((
        "sensor_encoder".into(),
        vec![
            LayerKind::Conv1d {
                channels: 2,
                filters: 3,
                kernel: 3,
            },
            LayerKind::Act(Activation::Relu),
            LayerKind::AvgPool1d { channels: 3, width: 2 },
            LayerKind::Lstm { inputs: 3, hidden: 3 },
            LayerKind::Dense { inputs: 3, outputs: 2 },
        ],
        vec![14, 2],
    ));
    cases
}

/// Worst relative error of the mean cross-entropy gradient over the full
/// flattened parameters of a tiny model with `outputs` heads.
pub fn model_loss_gradient_error(outputs: usize, seed: u64) -> f64 {
    let arch = tiny_architecture(outputs);
    let model = AssessmentModel::new(arch.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = random_vec(&mut rng, model.param_len(), 0.7);
    let n_sensor = arch.sensor_len * arch.sensor_channels;
    let sensors: Vec<Tensor> = (0..5)
        .map(|_| Tensor::new(vec![arch.sensor_len, arch.sensor_channels], random_vec(&mut rng, n_sensor, 1.0)).unwrap())
        .collect();
    let profiles: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, arch.profile_dim, 1.0)).collect();
    let labels: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..outputs).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect())
        .collect();
    let batch: Vec<Sample> = (0..5)
        .map(|i| Sample {
            sensor: &sensors[i],
            profile: &profiles[i],
            labels: &labels[i],
        })
        .collect();
    let (_, grad) = model.loss_and_grad(&flat, &batch).unwrap();
    worst_fd_error(&flat, &grad, COORDS, 1e-6, &mut rng, |p| model.loss_and_grad(p, &batch).unwrap().0)
}

/// Worst relative error of the total KL gradient in the unconstrained
/// variational parameters, at a random perturbation of the default start.
pub fn total_kl_gradient_error(shared: bool, seed: u64) -> f64 {
    let priors = RelationshipPriors { alpha: 1.5, beta: 2.5 };
    let layout = RelationshipLayout {
        diseases: 3,
        groups: 2,
        shared_components: shared,
    };
    let mut state = VariationalState::init(layout, &priors, &PosteriorInit::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = state.to_flat().iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
    state.set_flat(&flat).unwrap();
    let grad = state.kl_gradient(&priors).unwrap();
    let mut probe = state.clone();
    // a wider step keeps round-off in the KL sum below the tolerance
    worst_fd_error(&flat, &grad, COORDS, 1e-4, &mut rng, |p| {
        probe.set_flat(p).unwrap();
        total_kl(&probe, &priors).unwrap()
    })
}
