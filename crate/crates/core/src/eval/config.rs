//! Experiment configuration and the ablation switches.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::model::ModelArchitecture;
use crate::nn::Activation;
use crate::relationships::RelationshipPriors;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Independent models per grid cell.
    Single,
    /// Full-tensor relationships trained by gradient steps.
    Bdh,
    /// Decomposed relationships with variational posteriors.
    Adh,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// One multi-label model per group.
    pub tie_diseases: bool,
    /// A single group for all patients.
    pub tie_patients: bool,
    /// One relationship set shared by both model components.
    pub share_component_relationships: bool,
}

impl AblationFlags {
    /// Parses a comma-separated list of flag names or their short aliases
    /// (`wo_dh`, `wo_ph`, `wo_dr`).
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut f = Self::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "tie_diseases" | "wo_dh" => f.tie_diseases = true,
                "tie_patients" | "wo_ph" => f.tie_patients = true,
                "share_component_relationships" | "wo_dr" => f.share_component_relationships = true,
                other => return Err(Error::Config(format!("unknown ablation flag {other:?}"))),
            }
        }
        Ok(f)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.tie_diseases {
            parts.push("wo_dh");
        }
        if self.tie_patients {
            parts.push("wo_ph");
        }
        if self.share_component_relationships {
            parts.push("wo_dr");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

/// Architecture knobs; data-dependent sizes come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub pool_width: usize,
    pub hidden: usize,
    pub profile_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        let d = ModelArchitecture::desk(1, 1, 1);
        Self {
            conv_filters: d.conv_filters,
            conv_kernel: d.conv_kernel,
            pool_width: d.pool_width,
            hidden: d.hidden,
            profile_widths: d.profile_widths,
            head_widths: d.head_widths,
            activation: d.activation,
        }
    }
}

impl ArchitectureConfig {
    pub fn build(&self, sensor_len: usize, channels: usize, profile_dim: usize, outputs: usize) -> ModelArchitecture {
        ModelArchitecture {
            sensor_len,
            sensor_channels: channels,
            conv_filters: self.conv_filters,
            conv_kernel: self.conv_kernel,
            pool_width: self.pool_width,
            hidden: self.hidden,
            profile_dim,
            profile_widths: self.profile_widths.clone(),
            head_widths: self.head_widths.clone(),
            outputs,
            activation: self.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Number of profile groups K.
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fraction")]
    pub split_fraction: f64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Profile columns used for median-split subgroup reports.
    #[serde(default = "default_subgroups")]
    pub subgroup_columns: Vec<String>,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default)]
    pub prior: RelationshipPriors,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
}

fn default_groups() -> usize {
    4
}

fn default_fraction() -> f64 {
    0.8
}

fn default_repeats() -> usize {
    5
}

fn default_subgroups() -> Vec<String> {
    vec!["age".into()]
}

impl ExperimentConfig {
    pub fn new(method: Method, dataset: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            method,
            dataset: dataset.into(),
            output: output.into(),
            groups: default_groups(),
            seed: 0,
            split_fraction: default_fraction(),
            repeats: default_repeats(),
            subgroup_columns: default_subgroups(),
            ablation: AblationFlags::default(),
            prior: RelationshipPriors::default(),
            training: TrainConfig::default(),
            architecture: ArchitectureConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths are taken relative to the config file
        if let Some(base) = path.parent() {
            for p in [&mut cfg.dataset, &mut cfg.output] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!("split_fraction {} outside (0, 1)", self.split_fraction)));
        }
        if self.groups == 0 || self.repeats == 0 {
            return Err(Error::Config("groups and repeats must be positive".into()));
        }
        if self.ablation.share_component_relationships && self.method != Method::Adh {
            return Err(Error::Config("share_component_relationships only applies to method = \"adh\"".into()));
        }
        self.prior.validate()?;
        self.training.validate()
    }
}

/// Grid shape and relationship set implied by a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSetup {
    pub shape: GridShape,
    pub shared_components: bool,
    pub relationship_parameters: usize,
    pub notes: Vec<String>,
}

pub fn apply_ablation(cfg: &ExperimentConfig, diseases: usize) -> Result<EffectiveSetup> {
    cfg.validate()?;
    let flags = cfg.ablation;
    let groups = if flags.tie_patients { 1 } else { cfg.groups };
    let shape = GridShape::new(diseases, groups, flags.tie_diseases);
    let mut notes = Vec::new();
    if flags.tie_diseases && flags.tie_patients {
        notes.push("both ties set: one global multi-label model".to_string());
    }
    let relationship_parameters = match cfg.method {
        Method::Single => 0,
        Method::Bdh => shape.cells() * shape.cells(),
        Method::Adh => {
            let d = if shape.diseases > 1 { shape.diseases * shape.diseases } else { 0 };
            let k = if shape.groups > 1 { shape.groups * shape.groups } else { 0 };
            let a = usize::from(d + k > 0);
            let sets = if flags.share_component_relationships { 1 } else { 2 };
            sets * (d + k + a)
        }
    };
    Ok(EffectiveSetup {
        shape,
        shared_components: flags.share_component_relationships,
        relationship_parameters,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(method: Method, flags: AblationFlags) -> ExperimentConfig {
        ExperimentConfig {
            ablation: flags,
            ..ExperimentConfig::new(method, "d", "o")
        }
    }

    #[test]
    fn ablation_shapes() {
        let tp = AblationFlags { tie_patients: true, ..Default::default() };
        let s = apply_ablation(&cfg(Method::Adh, tp), 4).unwrap();
        assert_eq!((s.shape.diseases, s.shape.groups), (4, 1));
        let td = AblationFlags { tie_diseases: true, ..Default::default() };
        let s = apply_ablation(&cfg(Method::Single, td), 4).unwrap();
        assert_eq!((s.shape.diseases, s.shape.groups, s.shape.outputs()), (1, 4, 4));
        assert_eq!(s.relationship_parameters, 0);
        let full = apply_ablation(&cfg(Method::Adh, AblationFlags::default()), 4).unwrap();
        assert_eq!(full.relationship_parameters, 66);
        let both = AblationFlags { tie_diseases: true, tie_patients: true, ..Default::default() };
        let s = apply_ablation(&cfg(Method::Adh, both), 4).unwrap();
        assert_eq!((s.shape.cells(), s.relationship_parameters, s.notes.len()), (1, 0, 1));
        let dr = AblationFlags { share_component_relationships: true, ..Default::default() };
        assert!(apply_ablation(&cfg(Method::Single, dr), 4).is_err());
    }

    #[test]
    fn flags_parse_and_unknown_keys_fail() {
        let f = AblationFlags::parse_list("wo_dh, share_component_relationships").unwrap();
        assert!(f.tie_diseases && f.share_component_relationships && !f.tie_patients);
        assert!(AblationFlags::parse_list("wo_xx").is_err());
        let ok = "method = \"adh\"\ndataset = \"d\"\noutput = \"o\"\n[training]\nepochs = 2\n";
        assert_eq!(ExperimentConfig::from_toml(ok).unwrap().training.epochs, 2);
        assert!(ExperimentConfig::from_toml(&format!("{ok}lr = 3\n")).is_err());
        assert!(ExperimentConfig::from_toml("method = \"adh\"\ndataset = \"d\"\noutput = \"o\"\ngroup = 3\n").is_err());
        let c = cfg(Method::Bdh, AblationFlags::default());
        let text = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }
}
