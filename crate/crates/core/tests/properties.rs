//! Property tests for aggregation, grouping, parameter storage, sampling and metrics.

use dhmtl::eval::metrics::{compute_metrics, DiseaseMetrics};
use dhmtl::grouping::kmeans_fit;
use dhmtl::model::{AssessmentModel, ModelArchitecture};
use dhmtl::nn::{ParamBlock, ParamSpec};
use dhmtl::relationships::{
    aggregate_4d, aggregate_decomposed, count_relationship_parameters, to_aggregation_weights, Matrix,
    MatrixNormalPosterior, PosteriorInit, RelationshipLayout, RelationshipPriors, SampleMode, VariationalState,
};
use proptest::collection::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A grid of `cells` parameter vectors of length `len`, plus a raw weight matrix.
fn grid_and_raw(cells: usize, len: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (vec(vec(-10.0f64..10.0, len), cells), vec(-5.0f64..5.0, cells * cells))
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

fn in_envelope(out: &[f64], inputs: &[&[f64]]) -> bool {
    out.iter().enumerate().all(|(i, &v)| {
        let lo = inputs.iter().map(|x| x[i]).fold(f64::INFINITY, f64::min);
        let hi = inputs.iter().map(|x| x[i]).fold(f64::NEG_INFINITY, f64::max);
        v >= lo && v <= hi
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn full_aggregation_stays_in_the_convex_envelope((grid, raw) in grid_and_raw(4, 3), target in 0usize..4) {
        let w = to_aggregation_weights(&Matrix::new(4, raw).unwrap());
        let r = refs(&grid);
        prop_assert!(in_envelope(&aggregate_4d(&r, &w, target).unwrap(), &r));
    }

    #[test]
    fn decomposed_aggregation_stays_in_the_convex_envelope(
        (grid, raw_d) in grid_and_raw(6, 3),
        raw_g in vec(-5.0f64..5.0, 4),
        a in 0.0f64..=1.0,
        d in 0usize..3,
        k in 0usize..2,
    ) {
        let wd = to_aggregation_weights(&Matrix::new(3, raw_d[..9].to_vec()).unwrap());
        let wg = to_aggregation_weights(&Matrix::new(2, raw_g).unwrap());
        let r = refs(&grid);
        prop_assert!(in_envelope(&aggregate_decomposed(&r, 2, &wd, &wg, a, (d, k)).unwrap(), &r));
    }

    #[test]
    fn aggregation_ignores_weight_scale(
        (grid, raw) in grid_and_raw(4, 3),
        scale in 0.01f64..100.0,
        target in 0usize..4,
    ) {
        let w = to_aggregation_weights(&Matrix::new(4, raw).unwrap());
        let scaled = w.map(|v| v * scale);
        let r = refs(&grid);
        let a = aggregate_4d(&r, &w, target).unwrap();
        let b = aggregate_4d(&r, &scaled, target).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        let wd = Matrix::new(2, w.data()[..4].to_vec()).unwrap();
        let wg = Matrix::new(2, w.data()[4..8].to_vec()).unwrap();
        let a = aggregate_decomposed(&r, 2, &wd, &wg, 0.3, (1, 0)).unwrap();
        let b = aggregate_decomposed(&r, 2, &wd.map(|v| v * scale), &wg.map(|v| v * scale), 0.3, (1, 0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn identity_weights_are_exact_fixed_points(
        (grid, _) in grid_and_raw(6, 4),
        a in 0.0f64..=1.0,
        diag in 0.1f64..10.0,
    ) {
        let r = refs(&grid);
        let eye = Matrix::identity(6).map(|v| v * diag);
        for c in 0..6 {
            prop_assert_eq!(&aggregate_4d(&r, &eye, c).unwrap(), &grid[c]);
            let out = aggregate_decomposed(&r, 2, &Matrix::identity(3), &Matrix::identity(2), a, (c / 2, c % 2)).unwrap();
            prop_assert_eq!(&out, &grid[c]);
        }
    }

    #[test]
    fn identical_grid_is_a_fixed_point_of_any_weights(
        theta in vec(-10.0f64..10.0, 3),
        raw in vec(-5.0f64..5.0, 16),
        a in 0.0f64..=1.0,
    ) {
        let grid = vec![theta.clone(); 4];
        let r = refs(&grid);
        let w = to_aggregation_weights(&Matrix::new(4, raw.clone()).unwrap());
        prop_assert_eq!(&aggregate_4d(&r, &w, 2).unwrap(), &theta);
        let wd = to_aggregation_weights(&Matrix::new(2, raw[..4].to_vec()).unwrap());
        prop_assert_eq!(&aggregate_decomposed(&r, 2, &wd, &wd, a, (1, 1)).unwrap(), &theta);
    }
}

proptest! {
    #[test]
    fn decomposition_is_cheaper_than_the_full_tensor(d in 2usize..40, k in 2usize..40) {
        let (decomposed, full) = count_relationship_parameters(d, k);
        prop_assert_eq!(decomposed, d * d + k * k + 1);
        prop_assert_eq!(full, d * d * k * k);
        prop_assert!(decomposed < full);
    }

    #[test]
    fn param_block_round_trip(sizes in vec(1usize..6, 1..5), seed in any::<u64>()) {
        let layout: Vec<ParamSpec> = sizes.iter().enumerate().map(|(i, &s)| ParamSpec::new(format!("p{i}"), vec![s, 2])).collect();
        let len: usize = sizes.iter().map(|s| s * 2).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let block = ParamBlock::unflatten(layout.clone(), values.clone()).unwrap();
        prop_assert_eq!(block.flatten(), values.clone());
        prop_assert_eq!(ParamBlock::unflatten(layout, block.flatten()).unwrap(), block);
    }

    #[test]
    fn model_params_round_trip_through_flat(seed in any::<u64>()) {
        let model = AssessmentModel::new(ModelArchitecture::desk(12, 2, 3)).unwrap();
        let params = model.init_params(seed);
        let flat = params.to_flat();
        prop_assert_eq!(model.params_from_flat(&flat).unwrap(), params);
    }

    #[test]
    fn kmeans_assigns_every_point_to_its_nearest_centroid(
        points in vec(vec(-5.0f64..5.0, 3), 8..40),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let index = kmeans_fit(&points, k, seed).unwrap();
        prop_assert_eq!(index.centroids.len(), k);
        let mut objective = 0.0;
        for (p, &a) in points.iter().zip(&index.assignment) {
            prop_assert_eq!(index.assign_group(p).unwrap(), a);
            objective += p.iter().zip(&index.centroids[a]).map(|(x, c)| (x - c) * (x - c)).sum::<f64>();
        }
        prop_assert!((objective - index.objective).abs() <= 1e-9 * (1.0 + objective));
        for w in index.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
        }
        prop_assert_eq!(kmeans_fit(&points, k, seed).unwrap(), index);
    }
}

#[test]
fn kmeans_recovers_separated_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centers = [[-10.0, 0.0], [10.0, 0.0], [0.0, 12.0]];
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..30 {
        for (c, center) in centers.iter().enumerate() {
            points.push(vec![center[0] + rng.gen_range(-1.0..1.0), center[1] + rng.gen_range(-1.0..1.0)]);
            truth.push(c);
        }
    }
    let index = kmeans_fit(&points, 3, 1).unwrap();
    // same partition up to relabeling
    for i in 0..points.len() {
        for j in 0..points.len() {
            assert_eq!(truth[i] == truth[j], index.assignment[i] == index.assignment[j]);
        }
    }
}

#[test]
fn reparameterized_samples_average_to_the_posterior_mean() {
    let priors = RelationshipPriors::default();
    let layout = RelationshipLayout {
        diseases: 2,
        groups: 3,
        shared_components: false,
    };
    let mut state = VariationalState::init(layout, &priors, &PosteriorInit { mean_diagonal: 1.0, scale: 0.7 });
    state.group_p = MatrixNormalPosterior {
        n: 3,
        mean: (0..9).map(|i| i as f64 * 0.3 - 1.0).collect(),
        row_raw: vec![0.2, -0.5, 1.0],
        col_raw: vec![-1.0, 0.4, 0.0],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let mut sum = [0.0; 9];
    let mut sum_sq = [0.0; 9];
    for _ in 0..n {
        let s = state.sample(&mut rng, SampleMode::Sample);
        for (i, v) in s.group_p.raw.data().iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let (rs, cs) = (state.group_p.row_scale(), state.group_p.col_scale());
    for i in 0..9 {
        let mean = sum[i] / n as f64;
        let var = rs[i / 3] * cs[i % 3];
        let se = (var / n as f64).sqrt();
        assert!((mean - state.group_p.mean[i]).abs() < 3.0 * se, "entry {i}: {mean}");
        let empirical_var = sum_sq[i] / n as f64 - mean * mean;
        assert!((empirical_var / var - 1.0).abs() < 0.03, "entry {i} variance {empirical_var} vs {var}");
    }
}

/// Reference metrics from first principles.
fn brute_force(preds: &[Vec<f64>], labels: &[Vec<f64>]) -> Vec<DiseaseMetrics> {
    (0..labels[0].len())
        .map(|d| {
            let pairs: Vec<(bool, bool)> = preds.iter().zip(labels).map(|(p, y)| (p[d] >= 0.5, y[d] > 0.5)).collect();
            let tp = pairs.iter().filter(|&&(p, y)| p && y).count();
            let fp = pairs.iter().filter(|&&(p, y)| p && !y).count();
            let fn_ = pairs.iter().filter(|&&(p, y)| !p && y).count();
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            DiseaseMetrics { precision, recall, f1 }
        })
        .collect()
}

#[test]
fn metrics_agree_with_brute_force_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let d = rng.gen_range(1..5);
        let preds: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        let labels: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect()).collect();
        assert_eq!(compute_metrics(&preds, &labels, 0.5).unwrap(), brute_force(&preds, &labels));
    }
}
