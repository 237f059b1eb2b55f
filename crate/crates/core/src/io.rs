//! JSON documents for fitted models.
//!
//! Floats are written by `serde_json` in shortest round-trip form, so a
//! write/read cycle reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::FitReport;
use crate::error::{Error, Result};
use crate::tensor::{CpdModel, Factor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub rank: usize,
    pub lambda: Vec<f64>,
    /// One matrix per variable, as a list of rows (`I_n` rows of `rank` values).
    pub factors: Vec<Vec<Vec<f64>>>,
    pub dims: Vec<usize>,
    pub label_index: Option<usize>,
    pub seed: Option<u64>,
    pub fit_report: Option<FitReport>,
}

impl ModelDocument {
    pub fn from_model(model: &CpdModel, seed: Option<u64>, fit_report: Option<FitReport>) -> Self {
        Self {
            rank: model.rank(),
            lambda: model.lambda().to_vec(),
            factors: model.factors().iter().map(Factor::to_rows).collect(),
            dims: model.dims(),
            label_index: model.label_index(),
            seed,
            fit_report,
        }
    }

    fn build(&self) -> Result<CpdModel> {
        if self.lambda.len() != self.rank {
            return Err(Error::InvalidModel(format!(
                "rank {} but lambda has {} entries",
                self.rank,
                self.lambda.len()
            )));
        }
        if self.dims.len() != self.factors.len() {
            return Err(Error::InvalidModel("dims and factors disagree in length".into()));
        }
        let factors = self
            .factors
            .iter()
            .zip(&self.dims)
            .enumerate()
            .map(|(n, (rows, &d))| {
                if rows.len() != d {
                    return Err(Error::InvalidModel(format!("factor {n} has {} rows, dims says {d}", rows.len())));
                }
                Factor::from_rows(rows).map_err(|e| Error::InvalidModel(format!("factor {n}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        CpdModel::from_parts_unchecked(self.lambda.clone(), factors, self.label_index)
            .map_err(|e| Error::InvalidModel(e.to_string()))
    }

    /// Model with simplex invariants checked.
    pub fn to_model(&self) -> Result<CpdModel> {
        let m = self.build()?;
        if let Some(v) = m.invariant_violations(crate::tensor::SIMPLEX_TOL).into_iter().next() {
            return Err(Error::InvalidModel(v));
        }
        Ok(m)
    }

    /// Model with only shapes checked, for auditing possibly corrupt files.
    pub fn to_model_unchecked(&self) -> Result<CpdModel> {
        self.build()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}
