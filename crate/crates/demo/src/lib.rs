//! WebAssembly bindings for the static demo page in `www/`.
//!
//! A [`Session`] holds one synthesized bundle; the page synthesizes from a model file,
//! then runs scenarios against it and probes the composite barrier at chosen states.

use barrier_pair::bundle::{ArtifactBundle, SynthConfig};
use barrier_pair::config::{parse_scenario, ModelFile};
use barrier_pair::sim::{self, CbfParams};
use barrier_pair::supervisor::SwitchMode;
use barrier_pair::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const PENDULUM_MODEL: &str = include_str!("../../../models/pendulum.toml");
pub const PENDULUM_SCENARIO: &str = include_str!("../../../scenarios/pendulum.toml");
pub const SPRING_MASS_MODEL: &str = include_str!("../../../models/springmass.toml");
pub const SPRING_MASS_SCENARIO: &str = include_str!("../../../scenarios/springmass.toml");

#[derive(Debug, Serialize)]
pub struct Summary {
    pub model: String,
    pub n: usize,
    pub eps: f64,
    pub logdet_y: f64,
    pub r_e: f64,
    pub rho: Vec<f64>,
    pub interpolants: usize,
}

/// Trace columns thinned to at most `max_points` rows.
#[derive(Debug, Serialize)]
pub struct Series {
    pub t: Vec<f64>,
    /// `F_i x_p` per constraint; safe while inside `[-1, 1]`.
    pub s: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub b_true: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub mode: Vec<f64>,
    pub safe: bool,
    pub switches: usize,
}

#[derive(Debug, Serialize)]
pub struct Evaluation {
    pub exact: f64,
    pub interpolated: f64,
    pub gamma: Vec<f64>,
}

#[wasm_bindgen]
pub struct Session {
    bundle: ArtifactBundle,
}

impl Session {
    pub fn build(model_toml: &str, eps: Option<f64>) -> Result<Self> {
        let file = ModelFile::parse(model_toml)?;
        let (plant, cons) = file.build()?;
        let d = file.synthesis.clone();
        let cfg = SynthConfig {
            eps: eps.or(d.as_ref().map(|d| d.eps)).unwrap_or(0.8),
            mu_cl: d.as_ref().map_or(0.1, |d| d.mu_cl),
            mu_p: d.as_ref().and_then(|d| d.mu_p.clone()),
            directions: d.as_ref().map_or(0, |d| d.directions),
            interp: d.as_ref().map_or(0, |d| d.interp),
        };
        let bundle = ArtifactBundle::synthesize(&file.name, &plant, &cons, &cfg, &Default::default(), &Default::default())?;
        Ok(Self { bundle })
    }

    pub fn summary_data(&self) -> Summary {
        let b = &self.bundle;
        Summary {
            model: b.metadata.model_name.clone(),
            n: b.plant.n(),
            eps: b.pair.scalars.eps,
            logdet_y: barrier_pair::lmi::logdet(&b.pair.y).unwrap_or(f64::NAN),
            r_e: b.estimator.r_e,
            rho: b.composite.generators.iter().filter_map(|g| g.rho).collect(),
            interpolants: b.composite.pool.len(),
        }
    }

    pub fn run(&self, scenario_toml: &str, baseline: bool, sigmoidal: bool, max_points: usize) -> Result<Series> {
        let mut sc = parse_scenario(scenario_toml)?;
        if baseline {
            sc.baseline = Some(CbfParams::default());
        }
        if sigmoidal {
            sc.supervisor.mode = SwitchMode::Sigmoidal;
        }
        let tr = sim::run(&sc, self.bundle.artifacts())?;
        let f = &self.bundle.constraints.f;
        let stride = tr.rows.len().div_ceil(max_points.max(1)).max(1);
        let rows: Vec<_> = tr.rows.iter().step_by(stride).collect();
        Ok(Series {
            t: rows.iter().map(|r| r.t).collect(),
            s: f.row_iter()
                .map(|fi| rows.iter().map(|r| fi.iter().zip(&r.x_p).map(|(a, x)| a * x).sum()).collect())
                .collect(),
            u: (0..tr.n_u).map(|i| rows.iter().map(|r| r.u[i]).collect()).collect(),
            b_true: rows.iter().map(|r| r.b_true).collect(),
            b_bar: rows.iter().map(|r| r.b_bar).collect(),
            mode: rows.iter().map(|r| r.mode).collect(),
            safe: tr.is_safe(),
            switches: tr.summary.switches,
        })
    }

    /// Composite barrier at a closed-loop state `(x_p, x_k)`.
    pub fn evaluate_at(&self, x: &[f64]) -> Result<Evaluation> {
        let c = &self.bundle.composite;
        if x.len() != c.dim() {
            return Err(barrier_pair::Error::Mismatch(format!("state has {} entries, expected {}", x.len(), c.dim())));
        }
        let x = nalgebra::DVector::from_column_slice(x);
        let (exact, gamma) = c.eval(&x);
        Ok(Evaluation {
            exact,
            interpolated: c.eval_interpolated(&x),
            gamma,
        })
    }
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

fn json(v: &impl Serialize) -> std::result::Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Session {
    /// Synthesizes from a model file; `eps <= 0` keeps the model's default.
    #[wasm_bindgen(constructor)]
    pub fn new(model_toml: &str, eps: f64) -> std::result::Result<Session, JsError> {
        js(Self::build(model_toml, (eps > 0.0).then_some(eps)))
    }

    pub fn summary(&self) -> std::result::Result<String, JsError> {
        json(&self.summary_data())
    }

    pub fn simulate(&self, scenario_toml: &str, baseline: bool, sigmoidal: bool) -> std::result::Result<String, JsError> {
        json(&js(self.run(scenario_toml, baseline, sigmoidal, 1000))?)
    }

    pub fn evaluate(&self, x: Vec<f64>) -> std::result::Result<String, JsError> {
        json(&js(self.evaluate_at(&x))?)
    }
}

#[wasm_bindgen]
pub fn builtin_model(name: &str) -> Option<String> {
    match name {
        "pendulum" => Some(PENDULUM_MODEL.into()),
        "springmass" => Some(SPRING_MASS_MODEL.into()),
        _ => None,
    }
}

#[wasm_bindgen]
pub fn builtin_scenario(name: &str) -> Option<String> {
    match name {
        "pendulum" => Some(PENDULUM_SCENARIO.into()),
        "springmass" => Some(SPRING_MASS_SCENARIO.into()),
        _ => None,
    }
}
