//! Checkpoint directories: a JSON manifest, raw little-endian f64 arrays for
//! every parameter block and the variational storage, the group centroids and
//! the profile normalization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use crate::error::{Error, Result};
use crate::grid::{GridPredictor, GridShape};
use crate::grouping::{GroupModelIndex, Standardizer};
use crate::model::{AssessmentModel, ModelArchitecture};
use crate::relationships::{Matrix, RelationshipLayout, RelationshipPriors, VariationalState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    pub architecture: ModelArchitecture,
    pub shape: GridShape,
    pub diseases: Vec<String>,
    pub profile_features: Vec<String>,
    /// Final per-cell parameters used for inference.
    pub grid: Vec<Vec<f64>>,
    pub standardizer: Standardizer,
    pub index: GroupModelIndex,
    pub variational: Option<(VariationalState, RelationshipPriors)>,
    pub bdh_relationships: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CellEntry {
    disease: usize,
    group: usize,
    feature: String,
    prediction: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct VariationalEntry {
    file: String,
    layout: RelationshipLayout,
    priors: RelationshipPriors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    method: Method,
    architecture: ModelArchitecture,
    grid: GridShape,
    diseases: Vec<String>,
    profile_features: Vec<String>,
    cells: Vec<CellEntry>,
    variational: Option<VariationalEntry>,
    bdh_relationships: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Normalization {
    features: Vec<String>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::DataValidation(format!("{}: length is not a multiple of 8", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::DataValidation(format!("{}: {e}", path.display())))
}

impl Checkpoint {
    pub fn model(&self) -> Result<AssessmentModel> {
        AssessmentModel::new(self.architecture.clone())
    }

    pub fn predictor(&self) -> GridPredictor {
        GridPredictor {
            shape: self.shape,
            grid: self.grid.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let model = self.model()?;
        let flen = model.feature_len();
        let mut cells = Vec::with_capacity(self.grid.len());
        for (c, flat) in self.grid.iter().enumerate() {
            let (d, k) = (c / self.shape.groups, c % self.shape.groups);
            let entry = CellEntry {
                disease: d,
                group: k,
                feature: format!("cell_{d}_{k}.feature.bin"),
                prediction: format!("cell_{d}_{k}.prediction.bin"),
            };
            write_f64s(&dir.join(&entry.feature), &flat[..flen])?;
            write_f64s(&dir.join(&entry.prediction), &flat[flen..])?;
            cells.push(entry);
        }
        let variational = match &self.variational {
            Some((state, priors)) => {
                let file = "variational.bin".to_string();
                write_f64s(&dir.join(&file), &state.to_flat())?;
                Some(VariationalEntry {
                    file,
                    layout: state.layout,
                    priors: *priors,
                })
            }
            None => None,
        };
        let bdh_relationships = match &self.bdh_relationships {
            Some(m) => {
                let file = "relationships.bin".to_string();
                write_f64s(&dir.join(&file), m.data())?;
                Some(file)
            }
            None => None,
        };
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            method: self.method,
            architecture: self.architecture.clone(),
            grid: self.shape,
            diseases: self.diseases.clone(),
            profile_features: self.profile_features.clone(),
            cells,
            variational,
            bdh_relationships,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        write_json(
            &dir.join("normalization.json"),
            &Normalization {
                features: self.profile_features.clone(),
                mean: self.standardizer.mean.clone(),
                std: self.standardizer.std.clone(),
            },
        )?;
        let path = dir.join("centroids.csv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        let mut header = vec!["group".to_string()];
        header.extend(self.profile_features.iter().cloned());
        w.write_record(&header)?;
        for (k, c) in self.index.centroids.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(c.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(Error::DataValidation(format!("unsupported checkpoint format {}", manifest.format_version)));
        }
        let model = AssessmentModel::new(manifest.architecture.clone())?;
        if manifest.cells.len() != manifest.grid.cells() {
            return Err(Error::DataValidation("manifest cell list does not match the grid".into()));
        }
        let mut grid = Vec::with_capacity(manifest.cells.len());
        for e in &manifest.cells {
            let mut flat = read_f64s(&dir.join(&e.feature))?;
            flat.extend(read_f64s(&dir.join(&e.prediction))?);
            if flat.len() != model.param_len() {
                return Err(Error::DataValidation(format!("cell ({}, {}) has {} parameters", e.disease, e.group, flat.len())));
            }
            grid.push(flat);
        }
        let norm: Normalization = read_json(&dir.join("normalization.json"))?;
        let path = dir.join("centroids.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::DataValidation(format!("{}: {e}", path.display())))?;
        let mut centroids = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::DataValidation(format!("{}: {e}", path.display())))?;
            let row = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| Error::DataValidation(format!("{}: bad number {s:?}", path.display()))))
                .collect::<Result<Vec<f64>>>()?;
            centroids.push(row);
        }
        let variational = match &manifest.variational {
            Some(v) => {
                let mut state = VariationalState::at_priors(v.layout, &v.priors);
                state.set_flat(&read_f64s(&dir.join(&v.file))?)?;
                Some((state, v.priors))
            }
            None => None,
        };
        let bdh_relationships = match &manifest.bdh_relationships {
            Some(f) => Some(Matrix::new(manifest.grid.cells(), read_f64s(&dir.join(f))?)?),
            None => None,
        };
        Ok(Self {
            method: manifest.method,
            architecture: manifest.architecture,
            shape: manifest.grid,
            diseases: manifest.diseases,
            profile_features: manifest.profile_features,
            grid,
            standardizer: Standardizer {
                mean: norm.mean,
                std: norm.std,
            },
            index: GroupModelIndex {
                k: centroids.len(),
                centroids,
                assignment: Vec::new(),
                objective: f64::NAN,
                history: Vec::new(),
            },
            variational,
            bdh_relationships,
        })
    }
}
