use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named tensor slot inside a [`ParamBlock`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter storage with an ordered layout of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    layout: Vec<ParamSpec>,
    values: Vec<f64>,
}

pub fn layout_len(layout: &[ParamSpec]) -> usize {
    layout.iter().map(ParamSpec::size).sum()
}

impl ParamBlock {
    pub fn zeros(layout: Vec<ParamSpec>) -> Self {
        let n = layout_len(&layout);
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn unflatten(layout: Vec<ParamSpec>, values: Vec<f64>) -> Result<Self> {
        let n = layout_len(&layout);
        if n != values.len() {
            return Err(Error::LengthMismatch {
                context: "param block layout vs values",
                left: values.len(),
                right: n,
            });
        }
        Ok(Self { layout, values })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for spec in &self.layout {
            let size = spec.size();
            if spec.name == name {
                return Some(offset..offset + size);
            }
            offset += size;
        }
        None
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.range_of(name).map(|r| &self.values[r])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.range_of(name).map(move |r| &mut self.values[r])
    }
}
