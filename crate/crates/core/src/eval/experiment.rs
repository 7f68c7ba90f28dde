//! Repeated train/test experiments, their reports and on-disk outputs.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{apply_ablation, AblationFlags, EffectiveSetup, ExperimentConfig, Method};
use super::metrics::{
    confusions, macro_f1, median_strata, subgroup_report, Confusion, DiseaseMetrics, MeanStd,
    Stratification, SubgroupReport, THRESHOLD,
};
use crate::adh::{adh_train, ElboRecord};
use crate::bdh::bdh_train;
use crate::data::{read_dataset, split, Dataset};
use crate::error::{Error, Result};
use crate::grid::{derive_seed, GridShape, Shards, TrainingSet};
use crate::grouping::{kmeans_fit, Standardizer};
use crate::model::AssessmentModel;
use crate::relationships::variational::PosteriorSummary;
use crate::trainer::{single_train, LossRecord};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseSummary {
    pub disease: String,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: Vec<Confusion>,
    pub metrics: Vec<DiseaseMetrics>,
    pub macro_f1: f64,
    pub rounds: usize,
    pub kmeans_objective: f64,
    pub posterior: Option<PosteriorSummary>,
    pub subgroups: Vec<SubgroupReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub method: Method,
    pub ablation: AblationFlags,
    pub variant: String,
    pub notes: Vec<String>,
    pub seed: u64,
    pub repeats: usize,
    pub diseases: Vec<String>,
    pub grid: GridShape,
    pub relationship_parameters: usize,
    pub per_disease: Vec<DiseaseSummary>,
    pub macro_f1: MeanStd,
    pub repeat_reports: Vec<RepeatReport>,
    pub config: ExperimentConfig,
    pub traces: Vec<String>,
}

/// Per-round training trace of one repeat.
#[derive(Clone, Debug, PartialEq)]
pub enum Trace {
    Loss(Vec<LossRecord>),
    Elbo(Vec<ElboRecord>),
}

#[derive(Clone, Debug)]
pub struct RepeatOutcome {
    pub report: RepeatReport,
    pub trace: Trace,
    /// Seconds per round when recorded; not part of any deterministic output.
    pub timing: Vec<f64>,
    pub checkpoint: Checkpoint,
    /// Test patients (dataset indices) and their predicted probabilities.
    pub test: Vec<usize>,
    pub predictions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub repeats: Vec<RepeatOutcome>,
}

/// Loads the dataset and runs the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = read_dataset(&cfg.dataset)?;
    run_on_dataset(cfg, &data)
}

pub fn run_on_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentOutput> {
    data.validate()?;
    let setup = apply_ablation(cfg, data.meta.diseases.len())?;
    let mut columns = Vec::with_capacity(cfg.subgroup_columns.len());
    for name in &cfg.subgroup_columns {
        let idx = data
            .meta
            .profile_features
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::Config(format!("subgroup column {name:?} is not a profile feature")))?;
        columns.push((name.clone(), idx));
    }
    let strata: Vec<usize> = data.records.iter().map(|r| r.group).collect();
    let splits = split(&strata, cfg.split_fraction, cfg.repeats, cfg.seed)?;
    let repeats: Vec<RepeatOutcome> = splits
        .par_iter()
        .enumerate()
        .map(|(r, s)| run_repeat(cfg, &setup, data, r, &s.train, &s.test, &columns))
        .collect::<Result<Vec<_>>>()?;

    let d = data.meta.diseases.len();
    let per_disease = (0..d)
        .map(|i| {
            let pick = |f: fn(&DiseaseMetrics) -> f64| -> MeanStd {
                MeanStd::of(&repeats.iter().map(|o| f(&o.report.metrics[i])).collect::<Vec<_>>())
            };
            DiseaseSummary {
                disease: data.meta.diseases[i].clone(),
                precision: pick(|m| m.precision),
                recall: pick(|m| m.recall),
                f1: pick(|m| m.f1),
            }
        })
        .collect();
    let macro_values: Vec<f64> = repeats.iter().map(|o| o.report.macro_f1).collect();
    let report = MetricsReport {
        format_version: REPORT_VERSION,
        method: cfg.method,
        ablation: cfg.ablation,
        variant: cfg.ablation.label(),
        notes: setup.notes.clone(),
        seed: cfg.seed,
        repeats: cfg.repeats,
        diseases: data.meta.diseases.clone(),
        grid: setup.shape,
        relationship_parameters: setup.relationship_parameters,
        per_disease,
        macro_f1: MeanStd::of(&macro_values),
        repeat_reports: repeats.iter().map(|o| o.report.clone()).collect(),
        config: cfg.clone(),
        traces: vec!["trace.csv".into()],
    };
    Ok(ExperimentOutput { report, repeats })
}

fn run_repeat(
    cfg: &ExperimentConfig,
    setup: &EffectiveSetup,
    data: &Dataset,
    repeat: usize,
    train: &[usize],
    test: &[usize],
    columns: &[(String, usize)],
) -> Result<RepeatOutcome> {
    let rseed = derive_seed(cfg.seed, &[3, repeat as u64]);
    let standardizer = Standardizer::fit(train.iter().map(|&i| data.records[i].profile.as_slice()))?;
    let std_profiles = |idx: &[usize]| -> Result<Vec<Vec<f64>>> {
        idx.iter().map(|&i| standardizer.apply(&data.records[i].profile)).collect()
    };
    let train_profiles = std_profiles(train)?;
    let index = kmeans_fit(&train_profiles, setup.shape.groups, derive_seed(rseed, &[0]))?;
    let set = TrainingSet {
        sensors: train.iter().map(|&i| data.records[i].sensor.clone()).collect(),
        profiles: train_profiles,
        labels: train.iter().map(|&i| data.records[i].labels.clone()).collect(),
        groups: index.assignment.clone(),
    };
    let shards = Shards::build(&set, setup.shape)?;
    let sensor = data.records[0].sensor.shape();
    let arch = cfg
        .architecture
        .build(sensor[0], sensor[1], standardizer.dim(), setup.shape.outputs());
    let model = AssessmentModel::new(arch.clone())?;
    let tseed = derive_seed(rseed, &[1]);
    let tc = &cfg.training;
    let (predictor, trace, timing, posterior, variational, bdh_rel) = match cfg.method {
        Method::Single => {
            let (p, t) = single_train(&model, &shards, tc, tseed)?;
            (p, Trace::Loss(t), Vec::new(), None, None, None)
        }
        Method::Bdh => {
            let (state, p, t) = bdh_train(&model, &shards, tc, tseed)?;
            (p, Trace::Loss(t), Vec::new(), None, None, Some(state.relationships))
        }
        Method::Adh => {
            let (state, p, rep) = adh_train(&model, &shards, setup.shared_components, tc, cfg.prior, tseed)?;
            (
                p,
                Trace::Elbo(rep.rounds),
                rep.wall_clock,
                Some(rep.posterior),
                Some((state.variational, state.priors)),
                None,
            )
        }
    };
    let rounds = match &trace {
        Trace::Loss(t) => t.len(),
        Trace::Elbo(t) => t.len(),
    };

    let test_profiles = std_profiles(test)?;
    let predictions = test
        .iter()
        .zip(&test_profiles)
        .map(|(&i, p)| predictor.predict_patient(&model, &index, &data.records[i].sensor, p))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Vec<f64>> = test.iter().map(|&i| data.records[i].labels.clone()).collect();
    let confusion = confusions(&predictions, &labels, THRESHOLD)?;
    let metrics: Vec<DiseaseMetrics> = confusion.iter().map(Confusion::metrics).collect();

    let mut subgroups = Vec::new();
    for (name, col) in columns {
        let values: Vec<f64> = test.iter().map(|&i| data.records[i].profile[*col]).collect();
        subgroups.push(subgroup_report(
            &predictions,
            &labels,
            Stratification::Median(name.clone()),
            &median_strata(&values),
            &["at_or_below_median".into(), "above_median".into()],
        )?);
    }
    let truth: Vec<usize> = test.iter().map(|&i| data.records[i].group).collect();
    let levels = truth.iter().copied().max().map_or(0, |m| m + 1);
    let names: Vec<String> = (0..levels).map(|k| format!("group_{k}")).collect();
    subgroups.push(subgroup_report(&predictions, &labels, Stratification::GroupTruth, &truth, &names)?);

    let report = RepeatReport {
        repeat,
        train_size: train.len(),
        test_size: test.len(),
        macro_f1: macro_f1(&metrics),
        confusion,
        metrics,
        rounds,
        kmeans_objective: index.objective,
        posterior,
        subgroups,
    };
    let checkpoint = Checkpoint {
        method: cfg.method,
        architecture: arch,
        shape: setup.shape,
        diseases: data.meta.diseases.clone(),
        profile_features: data.meta.profile_features.clone(),
        grid: predictor.grid,
        standardizer,
        index,
        variational,
        bdh_relationships: bdh_rel,
    };
    Ok(RepeatOutcome {
        report,
        trace,
        timing,
        checkpoint,
        test: test.to_vec(),
        predictions,
    })
}

/// Predictions of a stored checkpoint for every patient of `data`.
pub fn evaluate_checkpoint(ck: &Checkpoint, data: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<DiseaseMetrics>)> {
    data.validate()?;
    if data.meta.diseases != ck.diseases || data.meta.profile_features != ck.profile_features {
        return Err(Error::DataValidation("dataset does not match the checkpoint's diseases or profile features".into()));
    }
    let model = ck.model()?;
    let predictor = ck.predictor();
    let predictions = data
        .records
        .iter()
        .map(|r| predictor.predict_patient(&model, &ck.index, &r.sensor, &ck.standardizer.apply(&r.profile)?))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Vec<f64>> = data.records.iter().map(|r| r.labels.clone()).collect();
    let metrics = confusions(&predictions, &labels, THRESHOLD)?
        .iter()
        .map(Confusion::metrics)
        .collect();
    Ok((predictions, metrics))
}

fn csv_file(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

pub fn report_json(report: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

pub fn read_report(dir: &Path) -> Result<MetricsReport> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::DataValidation(format!("{}: {e}", path.display())))
}

/// One row per disease and repeat.
pub fn metrics_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["repeat", "disease", "precision", "recall", "f1", "tp", "fp", "fn", "tn"])?;
    for r in &report.repeat_reports {
        for (i, (m, c)) in r.metrics.iter().zip(&r.confusion).enumerate() {
            w.write_record([
                r.repeat.to_string(),
                report.diseases[i].clone(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

/// Summary table: mean and standard deviation per disease and metric.
pub fn summary_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["disease", "precision_mean", "precision_std", "recall_mean", "recall_std", "f1_mean", "f1_std"])?;
    for d in &report.per_disease {
        w.write_record([
            d.disease.clone(),
            d.precision.mean.to_string(),
            d.precision.std.to_string(),
            d.recall.mean.to_string(),
            d.recall.std.to_string(),
            d.f1.mean.to_string(),
            d.f1.std.to_string(),
        ])?;
    }
    w.write_record([
        "macro".to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        report.macro_f1.mean.to_string(),
        report.macro_f1.std.to_string(),
    ])?;
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

/// Writes report.json, metrics.csv, trace.csv, timing.csv and one checkpoint
/// directory per repeat under `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("report.json");
    fs::write(&path, report_json(&out.report)?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("metrics.csv");
    fs::write(&path, metrics_csv(&out.report)?).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("trace.csv");
    let mut w = csv_file(&path)?;
    w.write_record(["repeat", "round", "term1", "term2", "elbo", "loss"])?;
    for o in &out.repeats {
        let r = o.report.repeat.to_string();
        match &o.trace {
            Trace::Loss(t) => {
                for rec in t {
                    w.write_record([r.clone(), rec.round.to_string(), String::new(), String::new(), String::new(), rec.loss.to_string()])?;
                }
            }
            Trace::Elbo(t) => {
                for rec in t {
                    w.write_record([
                        r.clone(),
                        rec.round.to_string(),
                        rec.term1.to_string(),
                        rec.term2.to_string(),
                        rec.elbo.to_string(),
                        String::new(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("timing.csv");
    let mut w = csv_file(&path)?;
    w.write_record(["repeat", "round", "seconds"])?;
    for o in &out.repeats {
        for (i, s) in o.timing.iter().enumerate() {
            w.write_record([o.report.repeat.to_string(), i.to_string(), s.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    for o in &out.repeats {
        o.checkpoint.write(&dir.join("checkpoints").join(format!("repeat_{}", o.report.repeat)))?;
    }
    Ok(())
}
