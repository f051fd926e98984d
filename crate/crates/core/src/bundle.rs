//! Versioned single-file container for a synthesized design.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::composite::{default_directions, CompositeBarrier, CompositeOptions};
use crate::design::{design, DesignOptions};
use crate::estimator::EstimatorConfig;
use crate::model::{Constraints, UncertainPlant};
use crate::sim::Artifacts;
use crate::synthesis::{certificate_margins, BarrierPair, SynthesisScalars};
use crate::{Error, Result};

pub const FORMAT: &str = "barrier-pair-bundle";
pub const VERSION: u32 = 1;

/// Hash of the plant factors and the constraint data.
pub fn model_hash(plant: &UncertainPlant, cons: &Constraints) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(plant.fingerprint().as_bytes());
    for v in cons.f.iter().chain(&cons.u_bar).chain(&cons.d_bar) {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((cons.f.nrows() as u64).to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub eps: f64,
    pub mu_cl: f64,
    pub mu_p: Option<Vec<f64>>,
    pub directions: usize,
    pub interp: usize,
}

impl SynthConfig {
    pub fn scalars(&self, plant: &UncertainPlant) -> Result<SynthesisScalars> {
        let mut s = SynthesisScalars::new(plant, self.eps, self.mu_cl);
        if let Some(mp) = &self.mu_p {
            s.mu_p = mp.clone();
        }
        s.validate(plant)?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub model_name: String,
    pub config: SynthConfig,
    pub design: DesignOptions,
    pub composite: CompositeOptions,
    /// Requested directions that were infeasible, with the reason.
    #[serde(default)]
    pub dropped: Vec<(usize, String)>,
    /// Estimator radius after each accepted design pass.
    #[serde(default)]
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactBundle {
    pub format: String,
    pub version: u32,
    pub model_hash: String,
    pub plant: UncertainPlant,
    pub constraints: Constraints,
    pub pair: BarrierPair,
    pub composite: CompositeBarrier,
    pub estimator: EstimatorConfig,
    pub metadata: Metadata,
}

pub fn tool_version() -> String {
    format!("barrier-pair {}", env!("CARGO_PKG_VERSION"))
}

impl ArtifactBundle {
    /// Full pipeline: pair and estimator, then the composite barrier.
    pub fn synthesize(
        name: &str,
        plant: &UncertainPlant,
        cons: &Constraints,
        cfg: &SynthConfig,
        design_opts: &DesignOptions,
        comp_opts: &CompositeOptions,
    ) -> Result<Self> {
        plant.validate()?;
        cons.validate(plant)?;
        let scalars = cfg.scalars(plant)?;
        let d = design(plant, cons, &scalars, design_opts)?;
        let mut bundle = Self {
            format: FORMAT.into(),
            version: VERSION,
            model_hash: model_hash(plant, cons),
            plant: plant.clone(),
            constraints: cons.clone(),
            composite: CompositeBarrier::new(vec![crate::composite::base_generator(&d.pair)], vec![], d.pair.x.clone(), &scalars)?,
            pair: d.pair,
            estimator: d.estimator,
            metadata: Metadata {
                tool: tool_version(),
                model_name: name.into(),
                config: cfg.clone(),
                design: design_opts.clone(),
                composite: comp_opts.clone(),
                dropped: vec![],
                radii: d.radii,
            },
        };
        bundle.recompose(cfg.directions, cfg.interp, comp_opts)?;
        Ok(bundle)
    }

    /// Rebuilds the composite barrier with new direction and pool counts.
    pub fn recompose(&mut self, directions: usize, interp: usize, opts: &CompositeOptions) -> Result<()> {
        let dirs = default_directions(&self.constraints, directions)?;
        let (c, dropped) = CompositeBarrier::build(&self.plant, &self.constraints, &self.pair, &dirs, interp, opts)?;
        self.composite = c;
        self.metadata.config.directions = directions;
        self.metadata.config.interp = interp;
        self.metadata.composite = opts.clone();
        self.metadata.dropped = dropped.into_iter().map(|(i, e)| (i, e.to_string())).collect();
        Ok(())
    }

    pub fn artifacts(&self) -> Artifacts<'_> {
        Artifacts {
            plant: &self.plant,
            cons: &self.constraints,
            pair: &self.pair,
            composite: &self.composite,
            estimator: &self.estimator,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses without re-verification; see [`Self::load_str`].
    pub fn from_json(text: &str) -> Result<Self> {
        let mut b: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if b.format != FORMAT {
            return Err(Error::Parse(format!("not a bundle: format `{}`", b.format)));
        }
        if b.version != VERSION {
            return Err(Error::Parse(format!("unsupported bundle version {}", b.version)));
        }
        b.composite.prepare()?;
        Ok(b)
    }

    /// Parses and re-verifies every stored certificate.
    pub fn load_str(text: &str) -> Result<Self> {
        let b = Self::from_json(text)?;
        b.check()?;
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_str(&std::fs::read_to_string(path)?)
    }

    /// Writes through a temporary file so a failed write never leaves a partial bundle.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Hash consistency plus the pair, composite and estimator certificates.
    pub fn check(&self) -> Result<()> {
        self.plant.validate()?;
        self.constraints.validate(&self.plant)?;
        let h = model_hash(&self.plant, &self.constraints);
        if h != self.model_hash {
            return Err(Error::Mismatch(format!("bundle records model hash {} but its model hashes to {h}", self.model_hash)));
        }
        let tol = self.metadata.design.synthesis.verify_tol;
        let m = certificate_margins(&self.plant, &self.constraints, &self.pair)?;
        if m.worst_relative() < -tol {
            return Err(Error::Verification(format!("barrier-pair certificate margin {:.3e}", m.worst_relative())));
        }
        self.composite.verify(&self.plant, &self.constraints, &self.pair, self.metadata.composite.verify_tol)?;
        self.estimator.check(&self.plant)?;
        let e = self.estimator.certificate_margin(&self.plant, &self.constraints)?;
        if e < -tol {
            return Err(Error::Verification(format!("estimator certificate margin {e:.3e}")));
        }
        Ok(())
    }

    /// Hard error unless the bundle was built from exactly this model.
    pub fn expect_model(&self, plant: &UncertainPlant, cons: &Constraints) -> Result<()> {
        let h = model_hash(plant, cons);
        if h != self.model_hash {
            return Err(Error::Mismatch(format!("model hash {h} does not match bundle {}", self.model_hash)));
        }
        Ok(())
    }
}
