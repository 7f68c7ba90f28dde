#![allow(dead_code)]

pub mod oracles;

use dhmtl::data::{generate, GeneratorSpec};
use dhmtl::grid::TrainingSet;
use dhmtl::model::{AssessmentModel, ModelArchitecture};
use dhmtl::nn::Activation;
use rand::seq::index::sample;
use rand::Rng;

/// Worst relative error between `analytic` and central differences of `f`
/// over up to `coords` randomly chosen coordinates.
pub fn worst_fd_error<R: Rng>(
    x: &[f64],
    analytic: &[f64],
    coords: usize,
    step: f64,
    rng: &mut R,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let picks: Vec<usize> = if x.len() <= coords {
        (0..x.len()).collect()
    } else {
        sample(rng, x.len(), coords).into_vec()
    };
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in picks {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * step);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

pub fn tiny_architecture(outputs: usize) -> ModelArchitecture {
    ModelArchitecture {
        sensor_len: 10,
        sensor_channels: 2,
        conv_filters: 3,
        conv_kernel: 3,
        pool_width: 2,
        hidden: 3,
        profile_dim: 3,
        profile_widths: vec![3],
        head_widths: vec![4],
        outputs,
        activation: Activation::Tanh,
    }
}

/// The tiny reference instance: two diseases, two groups, 40 patients.
pub fn tiny_training_set(seed: u64) -> TrainingSet {
    let spec = GeneratorSpec {
        patients: 40,
        diseases: 2,
        groups: 2,
        sensor_len: 16,
        channels: 2,
        prevalence: vec![0.4, 0.5],
        seed,
        ..GeneratorSpec::default()
    };
    let data = generate(&spec).expect("tiny dataset").dataset;
    let profiles: Vec<Vec<f64>> = data.records.iter().map(|r| r.profile.clone()).collect();
    let std = dhmtl::grouping::Standardizer::fit(profiles.iter().map(Vec::as_slice)).unwrap();
    TrainingSet {
        sensors: data.records.iter().map(|r| r.sensor.clone()).collect(),
        profiles: profiles.iter().map(|p| std.apply(p).unwrap()).collect(),
        labels: data.records.iter().map(|r| r.labels.clone()).collect(),
        groups: data.records.iter().map(|r| r.group).collect(),
    }
}

pub fn tiny_model(outputs: usize) -> AssessmentModel {
    AssessmentModel::new(ModelArchitecture {
        sensor_len: 16,
        sensor_channels: 2,
        conv_filters: 3,
        conv_kernel: 3,
        pool_width: 2,
        hidden: 4,
        profile_dim: 7,
        profile_widths: vec![4],
        head_widths: vec![4],
        outputs,
        activation: Activation::Tanh,
    })
    .unwrap()
}
