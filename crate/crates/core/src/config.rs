//! Declarative model and scenario files (TOML). Matrices are row-major nested arrays.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{Constraints, PlantParts, UncertainPlant};
use crate::serde_mat::from_rows;
use crate::sim::Scenario;
use crate::{Error, Result};

type Rows = Vec<Vec<f64>>;

/// Defaults used by `synth` unless overridden on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisDefaults {
    pub eps: f64,
    pub mu_cl: f64,
    #[serde(default)]
    pub mu_p: Option<Vec<f64>>,
    #[serde(default)]
    pub directions: usize,
    #[serde(default)]
    pub interp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintsFile {
    pub f: Rows,
    pub u_bar: Vec<f64>,
    pub d_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    /// Observability indices, one per output.
    pub indices: Vec<usize>,
    pub a_u: Rows,
    pub a_y: Rows,
    #[serde(default)]
    pub b_h: Option<Rows>,
    #[serde(default)]
    pub c_u: Option<Rows>,
    #[serde(default)]
    pub c_y: Option<Rows>,
    pub a_a: Rows,
    #[serde(default)]
    pub b_a: Option<Rows>,
    #[serde(default)]
    pub c_a: Option<Rows>,
    /// Optional inverse cover `(B_c, C_c)`; computed when absent.
    #[serde(default)]
    pub cover_b: Option<Rows>,
    #[serde(default)]
    pub cover_c: Option<Rows>,
    pub constraints: ConstraintsFile,
    pub synthesis: Option<SynthesisDefaults>,
}

fn mat(name: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    from_rows(rows, None).map_err(|e| Error::Parse(format!("{name}: {e}")))
}

fn opt(name: &str, rows: &Option<Rows>) -> Result<Option<DMatrix<f64>>> {
    rows.as_ref().map(|r| mat(name, r)).transpose()
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn build(&self) -> Result<(UncertainPlant, Constraints)> {
        let cover = match (opt("cover_b", &self.cover_b)?, opt("cover_c", &self.cover_c)?) {
            (Some(b), Some(c)) => Some((b, c)),
            (None, None) => None,
            _ => return Err(Error::Config("cover_b and cover_c must be given together".into())),
        };
        let plant = UncertainPlant::from_parts(PlantParts {
            indices: self.indices.clone(),
            a_u: mat("a_u", &self.a_u)?,
            a_y: mat("a_y", &self.a_y)?,
            b_h: opt("b_h", &self.b_h)?,
            c_u: opt("c_u", &self.c_u)?,
            c_y: opt("c_y", &self.c_y)?,
            a_a: mat("a_a", &self.a_a)?,
            b_a: opt("b_a", &self.b_a)?,
            c_a: opt("c_a", &self.c_a)?,
            cover,
        })?;
        let cons = Constraints {
            f: from_rows(&self.constraints.f, Some(plant.n())).map_err(|e| Error::Parse(format!("f: {e}")))?,
            u_bar: self.constraints.u_bar.clone(),
            d_bar: self.constraints.d_bar.clone(),
        };
        cons.validate(&plant)?;
        Ok((plant, cons))
    }
}

pub fn load_model(path: &Path) -> Result<(ModelFile, UncertainPlant, Constraints)> {
    let file = ModelFile::parse(&std::fs::read_to_string(path)?)?;
    let (plant, cons) = file.build()?;
    Ok((file, plant, cons))
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}
