//! Synthetic gait-sensor cohorts with planted disease and patient
//! heterogeneity, train/test splitting, and the on-disk dataset format.
//!
//! Each patient carries latent traits. Labels follow logistic models over
//! those traits whose coefficients move from a shared base toward disease-,
//! group- and cell-specific offsets as the two heterogeneity knobs grow. The
//! sensor stream shows, for every disease, a windowed sinusoid motif whose
//! template belongs to the patient's (disease, group) cell and whose
//! amplitude is the patient's normalized trait score for that disease.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::derive_seed;
use crate::nn::{sigmoid, Tensor};

pub const FORMAT_VERSION: u32 = 1;

pub const PROFILE_FEATURES: [&str; 7] = [
    "age",
    "family_history_diabetes",
    "family_history_cvd",
    "grip_strength",
    "overweight",
    "physical_inactivity",
    "blood_pressure",
];

/// Center and spread that map standardized profile values to natural units.
const PROFILE_UNITS: [(f64, f64); 7] = [
    (55.0, 12.0),
    (0.5, 0.25),
    (0.5, 0.25),
    (30.0, 8.0),
    (0.5, 0.25),
    (0.5, 0.25),
    (125.0, 15.0),
];

const DEFAULT_DISEASES: [&str; 4] = ["diabetes", "cardiovascular", "high_cholesterol", "depression"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub patients: usize,
    pub diseases: usize,
    pub groups: usize,
    pub sensor_len: usize,
    pub channels: usize,
    /// Target prevalence per disease.
    pub prevalence: Vec<f64>,
    pub disease_heterogeneity: f64,
    pub patient_heterogeneity: f64,
    /// Strength of the latent factor shared by all diseases.
    pub comorbidity: f64,
    pub seed: u64,
    /// Latent traits encoded in the sensor stream.
    pub latent_dims: usize,
    pub sensor_noise: f64,
    pub motif_amplitude: f64,
    pub gait_amplitude: f64,
    /// Distance scale between group centroids in standardized profile space.
    pub group_separation: f64,
    pub profile_noise: f64,
    /// Multiplier of the label logits; larger values give cleaner labels.
    pub label_scale: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            patients: 1785,
            diseases: 4,
            groups: 4,
            sensor_len: 64,
            channels: 3,
            prevalence: vec![0.24, 0.26, 0.55, 0.27],
            disease_heterogeneity: 0.7,
            patient_heterogeneity: 0.7,
            comorbidity: 0.3,
            seed: 0,
            latent_dims: 6,
            sensor_noise: 0.5,
            motif_amplitude: 1.0,
            gait_amplitude: 1.0,
            group_separation: 2.5,
            profile_noise: 0.6,
            label_scale: 12.0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.patients, self.diseases, self.groups, self.sensor_len, self.channels, self.latent_dims];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        if self.prevalence.len() != self.diseases {
            return Err(Error::Config(format!(
                "{} prevalence targets for {} diseases",
                self.prevalence.len(),
                self.diseases
            )));
        }
        if self.prevalence.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Config("prevalence targets must lie in (0, 1)".into()));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.disease_heterogeneity) || !unit(self.patient_heterogeneity) {
            return Err(Error::Config("heterogeneity knobs must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.comorbidity) {
            return Err(Error::Config("comorbidity must lie in [0, 1)".into()));
        }
        let scales = [
            self.sensor_noise,
            self.motif_amplitude,
            self.gait_amplitude,
            self.group_separation,
            self.profile_noise,
            self.label_scale,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("generator scales must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn disease_names(&self) -> Vec<String> {
        if self.diseases == DEFAULT_DISEASES.len() {
            DEFAULT_DISEASES.iter().map(|s| s.to_string()).collect()
        } else {
            let mut names: Vec<String> = (0..self.diseases.saturating_sub(1)).map(|d| format!("disease_{d}")).collect();
            names.push("depression".into());
            names
        }
    }
}

pub fn channel_names(channels: usize) -> Vec<String> {
    const AXES: [&str; 3] = ["acc_x", "acc_y", "acc_z"];
    (0..channels)
        .map(|c| AXES.get(c).map_or_else(|| format!("channel_{c}"), |s| s.to_string()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub patients: usize,
    pub sensor_len: usize,
    pub diseases: Vec<String>,
    pub channels: Vec<String>,
    pub profile_features: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    /// Planted group; kept for diagnostics and stratification only.
    pub group: usize,
    /// `sensor_len x channels`.
    pub sensor: Tensor,
    pub profile: Vec<f64>,
    pub labels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<PatientRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn prevalence(&self) -> Vec<f64> {
        let d = self.meta.diseases.len();
        let n = self.len().max(1) as f64;
        (0..d)
            .map(|i| self.records.iter().map(|r| r.labels[i]).sum::<f64>() / n)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        let bad = |msg: String| Err(Error::DataValidation(msg));
        if self.records.len() != m.patients {
            return bad(format!("meta lists {} patients but {} records exist", m.patients, self.records.len()));
        }
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.patient_id.as_str()) {
                return bad(format!("duplicate patient id {}", r.patient_id));
            }
            if r.labels.len() != m.diseases.len() || r.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
                return bad(format!("patient {} has invalid labels", r.patient_id));
            }
            if r.sensor.shape() != [m.sensor_len, m.channels.len()] {
                return bad(format!("patient {} has sensor shape {:?}", r.patient_id, r.sensor.shape()));
            }
            if r.profile.len() != m.profile_features.len() || r.profile.iter().any(|v| !v.is_finite()) {
                return bad(format!("patient {} has an invalid profile", r.patient_id));
            }
        }
        Ok(())
    }
}

/// Planted quantities behind a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedTruth {
    /// Coefficients per cell `d * groups + k`, over the latent traits.
    pub coefficients: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    /// Group-difference component per cell, before scaling by `patient_heterogeneity`.
    pub group_offsets: Vec<Vec<f64>>,
    /// Per patient: latent traits followed by the shared comorbidity factor.
    pub latents: Vec<Vec<f64>>,
    /// Per patient and disease: the true label probability.
    pub probabilities: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: PlantedTruth,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

struct Motif {
    channel: usize,
    omega: f64,
    phase: f64,
    start: usize,
    len: usize,
}

impl Motif {
    fn value(&self, t: usize) -> f64 {
        if t < self.start || t >= self.start + self.len {
            // pause outside the active window
            return 0.0;
        }
        0.5 + (self.omega * t as f64 + self.phase).sin()
    }
}

fn add_motif(sensor: &mut [f64], channels: usize, m: &Motif, amplitude: f64) {
    for (t, row) in sensor.chunks_mut(channels).enumerate() {
        row[m.channel] += amplitude * m.value(t);
    }
}

/// Smallest intercept whose label count reaches `target * n`, found by bisection.
fn calibrate_intercept(scores: &[f64], uniforms: &[f64], target: f64) -> f64 {
    let count = |b: f64| scores.iter().zip(uniforms).filter(|(&s, &u)| u < sigmoid(b + s)).count();
    let want = (target * scores.len() as f64).round() as usize;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count(mid) >= want {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let (p_count, d_count, k_count) = (spec.patients, spec.diseases, spec.groups);
    let (t_len, c_count, l_count) = (spec.sensor_len, spec.channels, spec.latent_dims);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0]));

    let features = PROFILE_FEATURES.len();
    let centroids: Vec<Vec<f64>> = (0..k_count)
        .map(|_| normal_vec(&mut rng, features, spec.group_separation / 2f64.sqrt()))
        .collect();
    let unit = 1.0 / (l_count as f64).sqrt();
    let base = normal_vec(&mut rng, l_count, unit);
    let per_disease: Vec<Vec<f64>> = (0..d_count).map(|_| normal_vec(&mut rng, l_count, unit)).collect();
    let per_group: Vec<Vec<f64>> = (0..k_count).map(|_| normal_vec(&mut rng, l_count, unit)).collect();
    let per_cell: Vec<Vec<f64>> = (0..d_count * k_count).map(|_| normal_vec(&mut rng, l_count, unit)).collect();
    let (hd, hp) = (spec.disease_heterogeneity, spec.patient_heterogeneity);
    let blend = |b: f64, d: f64, g: f64, c: f64| {
        (1.0 - hd) * (1.0 - hp) * b + hd * (1.0 - hp) * d + hp * (1.0 - hd) * g + hd * hp * c
    };
    let window = (t_len / 2).max(1);
    let template = |rng: &mut ChaCha8Rng| {
        (
            std::f64::consts::PI * (0.05 + 0.25 * rng.gen::<f64>()),
            std::f64::consts::TAU * rng.gen::<f64>(),
            rng.gen_range(0..=t_len / 2) as f64,
        )
    };
    let t_base = template(&mut rng);
    let t_disease: Vec<_> = (0..d_count).map(|_| template(&mut rng)).collect();
    let t_group: Vec<_> = (0..k_count).map(|_| template(&mut rng)).collect();
    let t_cell: Vec<_> = (0..d_count * k_count).map(|_| template(&mut rng)).collect();
    // one template per (disease, group) cell, interpolated like the coefficients
    let motifs: Vec<Motif> = (0..d_count * k_count)
        .map(|c| {
            let (d, k) = (c / k_count, c % k_count);
            let parts = [t_base, t_disease[d], t_group[k], t_cell[c]];
            let mix = |f: fn(&(f64, f64, f64)) -> f64| blend(f(&parts[0]), f(&parts[1]), f(&parts[2]), f(&parts[3]));
            Motif {
                channel: d % c_count,
                omega: mix(|t| t.0),
                phase: mix(|t| t.1),
                start: mix(|t| t.2).round() as usize,
                len: window,
            }
        })
        .collect();
    let (omega, phase, start) = template(&mut rng);
    let comorbidity_motif = Motif {
        channel: d_count % c_count,
        omega,
        phase,
        start: start as usize,
        len: window,
    };
    let gait_period: Vec<f64> = (0..c_count).map(|_| 6.0 + 6.0 * rng.gen::<f64>()).collect();

    let mut coefficients = Vec::with_capacity(d_count * k_count);
    let mut group_offsets = Vec::with_capacity(d_count * k_count);
    for d in 0..d_count {
        for k in 0..k_count {
            let o = &per_cell[d * k_count + k];
            coefficients.push(
                (0..l_count)
                    .map(|j| blend(base[j], per_disease[d][j], per_group[k][j], o[j]))
                    .collect::<Vec<f64>>(),
            );
            group_offsets.push((0..l_count).map(|j| (1.0 - hd) * per_group[k][j] + hd * o[j]).collect());
        }
    }

    // balanced group sizes in a seeded order
    let mut groups: Vec<usize> = (0..p_count).map(|p| p % k_count).collect();
    groups.shuffle(&mut rng);

    let rho = spec.comorbidity;
    let own = (1.0 - rho * rho).sqrt();
    let mut records = Vec::with_capacity(p_count);
    let mut latents = Vec::with_capacity(p_count);
    let mut scores = vec![Vec::with_capacity(p_count); d_count];
    let mut uniforms = vec![Vec::with_capacity(p_count); d_count];
    for (p, &k) in groups.iter().enumerate() {
        let mut prng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1, p as u64]));
        let profile_std: Vec<f64> = centroids[k]
            .iter()
            .map(|c| c + spec.profile_noise * prng.sample::<f64, _>(StandardNormal))
            .collect();
        let profile = profile_std
            .iter()
            .zip(PROFILE_UNITS)
            .map(|(z, (m, s))| m + s * z)
            .collect();
        let z = normal_vec(&mut prng, l_count + 1, 1.0);
        let gait_phase: Vec<f64> = (0..c_count).map(|_| std::f64::consts::TAU * prng.gen::<f64>()).collect();
        let mut sensor = vec![0.0; t_len * c_count];
        for t in 0..t_len {
            for c in 0..c_count {
                let gait = spec.gait_amplitude
                    * (std::f64::consts::TAU * t as f64 / gait_period[c] + gait_phase[c]).sin();
                sensor[t * c_count + c] = gait + spec.sensor_noise * prng.sample::<f64, _>(StandardNormal);
            }
        }
        for d in 0..d_count {
            let w = &coefficients[d * k_count + k];
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let trait_amp = w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / norm;
            add_motif(&mut sensor, c_count, &motifs[d * k_count + k], spec.motif_amplitude * trait_amp);
        }
        add_motif(&mut sensor, c_count, &comorbidity_motif, spec.motif_amplitude * z[l_count]);
        for d in 0..d_count {
            let w = &coefficients[d * k_count + k];
            let trait_score: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
            scores[d].push(spec.label_scale * (own * trait_score + rho * z[l_count]));
            uniforms[d].push(prng.gen::<f64>());
        }
        records.push(PatientRecord {
            patient_id: format!("p{p:05}"),
            group: k,
            sensor: Tensor::new(vec![t_len, c_count], sensor)?,
            profile,
            labels: vec![0.0; d_count],
        });
        latents.push(z);
    }

    let intercepts: Vec<f64> = (0..d_count)
        .map(|d| calibrate_intercept(&scores[d], &uniforms[d], spec.prevalence[d]))
        .collect();
    let mut probabilities = vec![vec![0.0; d_count]; p_count];
    for (p, r) in records.iter_mut().enumerate() {
        for d in 0..d_count {
            let prob = sigmoid(intercepts[d] + scores[d][p]);
            probabilities[p][d] = prob;
            r.labels[d] = if uniforms[d][p] < prob { 1.0 } else { 0.0 };
        }
    }
    let dataset = Dataset {
        meta: DatasetMeta {
            format_version: FORMAT_VERSION,
            patients: p_count,
            sensor_len: t_len,
            diseases: spec.disease_names(),
            channels: channel_names(c_count),
            profile_features: PROFILE_FEATURES.iter().map(|s| s.to_string()).collect(),
        },
        records,
    };
    if p_count >= 1000 {
        let achieved = dataset.prevalence();
        if achieved.iter().zip(&spec.prevalence).any(|(a, t)| (a - t).abs() > 0.02) {
            return Err(Error::DataValidation(format!(
                "prevalence targets {:?} not reachable; achieved {achieved:?}",
                spec.prevalence
            )));
        }
    }
    Ok(Generated {
        dataset,
        truth: PlantedTruth {
            coefficients,
            intercepts,
            group_offsets,
            latents,
            probabilities,
        },
    })
}

/// One train/test partition of patient indices, each side sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Patient-level splits stratified by `strata`, one per repeat. The train
/// side holds `round(fraction * n)` patients, allocated to strata by largest
/// remainder.
pub fn split(strata: &[usize], fraction: f64, repeats: usize, seed: u64) -> Result<Vec<Split>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n = strata.len();
    let total_train = (fraction * n as f64).round() as usize;
    if total_train == 0 || total_train == n {
        return Err(Error::Config(format!("fraction {fraction} leaves one side of {n} patients empty")));
    }
    let levels = strata.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); levels];
    for (i, &s) in strata.iter().enumerate() {
        members[s].push(i);
    }
    let exact: Vec<f64> = members.iter().map(|m| fraction * m.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..levels).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = total_train - quota.iter().sum::<usize>();
    for &s in order.iter().cycle().take(levels * 2) {
        if missing == 0 {
            break;
        }
        if quota[s] < members[s].len() {
            quota[s] += 1;
            missing -= 1;
        }
    }
    (0..repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, r as u64]));
            let mut train = Vec::with_capacity(total_train);
            let mut test = Vec::with_capacity(n - total_train);
            for (s, m) in members.iter().enumerate() {
                let mut shuffled = m.clone();
                shuffled.shuffle(&mut rng);
                train.extend_from_slice(&shuffled[..quota[s]]);
                test.extend_from_slice(&shuffled[quota[s]..]);
            }
            train.sort_unstable();
            test.sort_unstable();
            Ok(Split { train, test })
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

/// Writes meta.json, profiles.csv, labels.csv, groups.csv and sensors/<id>.csv.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    data.validate()?;
    let sensors = dir.join("sensors");
    fs::create_dir_all(&sensors).map_err(io_err(&sensors))?;
    let meta_path = dir.join("meta.json");
    let meta = serde_json::to_string_pretty(&data.meta)? + "\n";
    fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;

    let mut w = csv_writer(&dir.join("profiles.csv"))?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(data.meta.profile_features.iter().cloned());
    w.write_record(&header)?;
    for r in &data.records {
        let mut row = vec![r.patient_id.clone()];
        row.extend(r.profile.iter().map(|&v| fmt_f64(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = csv_writer(&dir.join("labels.csv"))?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(data.meta.diseases.iter().cloned());
    w.write_record(&header)?;
    for r in &data.records {
        let mut row = vec![r.patient_id.clone()];
        row.extend(r.labels.iter().map(|&y| format!("{}", y as u8)));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = csv_writer(&dir.join("groups.csv"))?;
    w.write_record(["patient_id", "group"])?;
    for r in &data.records {
        w.write_record([r.patient_id.clone(), r.group.to_string()])?;
    }
    w.flush().map_err(io_err(dir))?;

    let channels = data.meta.channels.len();
    for r in &data.records {
        let mut w = csv_writer(&sensors.join(format!("{}.csv", r.patient_id)))?;
        w.write_record(&data.meta.channels)?;
        for row in r.sensor.data().chunks(channels) {
            w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
        }
        w.flush().map_err(io_err(dir))?;
    }
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::DataValidation(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| Error::DataValidation(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::DataValidation(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::DataValidation(format!("{}: cannot parse {s:?} as a number", path.display())))?;
    if !v.is_finite() {
        return Err(Error::DataValidation(format!("{}: non-finite value", path.display())));
    }
    Ok(v)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::DataValidation(format!("{}: {e}", meta_path.display())))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| Error::DataValidation(format!("{}: {e}", meta_path.display())))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::DataValidation(format!("unsupported dataset format {}", meta.format_version)));
    }

    let expect_header = |path: &Path, header: &[String], names: &[String]| -> Result<()> {
        if header.first().map(String::as_str) != Some("patient_id") || header[1..] != *names {
            return Err(Error::DataValidation(format!("{}: unexpected header {header:?}", path.display())));
        }
        Ok(())
    };
    let p_path = dir.join("profiles.csv");
    let (ph, prows) = read_table(&p_path)?;
    expect_header(&p_path, &ph, &meta.profile_features)?;
    let l_path = dir.join("labels.csv");
    let (lh, lrows) = read_table(&l_path)?;
    expect_header(&l_path, &lh, &meta.diseases)?;
    let g_path = dir.join("groups.csv");
    let groups: Vec<usize> = if g_path.exists() {
        let (_, grows) = read_table(&g_path)?;
        grows
            .iter()
            .map(|r| {
                r.get(1)
                    .and_then(|g| g.parse().ok())
                    .ok_or_else(|| Error::DataValidation(format!("{}: bad group row", g_path.display())))
            })
            .collect::<Result<_>>()?
    } else {
        vec![0; prows.len()]
    };
    if lrows.len() != prows.len() || groups.len() != prows.len() {
        return Err(Error::DataValidation("profiles, labels and groups differ in row count".into()));
    }

    let mut records = Vec::with_capacity(prows.len());
    for ((prow, lrow), group) in prows.iter().zip(&lrows).zip(groups) {
        let id = prow[0].clone();
        if lrow[0] != id {
            return Err(Error::DataValidation(format!("labels row {} does not match profile row {id}", lrow[0])));
        }
        let profile = prow[1..].iter().map(|s| parse_f64(s, &p_path)).collect::<Result<Vec<_>>>()?;
        let labels = lrow[1..].iter().map(|s| parse_f64(s, &l_path)).collect::<Result<Vec<_>>>()?;
        let s_path = dir.join("sensors").join(format!("{id}.csv"));
        let (sh, srows) = read_table(&s_path)?;
        if sh != meta.channels {
            return Err(Error::DataValidation(format!("{}: channel header mismatch", s_path.display())));
        }
        let mut values = Vec::with_capacity(srows.len() * meta.channels.len());
        for row in &srows {
            for v in row {
                values.push(parse_f64(v, &s_path)?);
            }
        }
        if srows.len() != meta.sensor_len || values.len() != meta.sensor_len * meta.channels.len() {
            return Err(Error::DataValidation(format!("{}: expected {} rows", s_path.display(), meta.sensor_len)));
        }
        records.push(PatientRecord {
            patient_id: id,
            group,
            sensor: Tensor::new(vec![meta.sensor_len, meta.channels.len()], values)?,
            profile,
            labels,
        });
    }
    let data = Dataset { meta, records };
    data.validate()?;
    Ok(data)
}
