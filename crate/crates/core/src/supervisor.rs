//! Switching between the original input and the safety controller.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchMode {
    #[default]
    Hysteresis,
    Sigmoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorConfig {
    pub eps_lower: f64,
    pub eps_upper: f64,
    #[serde(default)]
    pub mode: SwitchMode,
    /// Width factor inside the sigmoid, `σ = δ_C / (|δ_C| + δ_ε·width)`.
    #[serde(default = "default_width")]
    pub width: f64,
}

fn default_width() -> f64 {
    1.0 / 20.0
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            eps_lower: 0.98,
            eps_upper: 1.0,
            mode: SwitchMode::Hysteresis,
            width: default_width(),
        }
    }
}

impl SupervisorConfig {
    /// Requires `ε < ε_lower < ε_upper ≤ 1` for the pair's residue level `ε`.
    pub fn validate(&self, eps: f64) -> Result<()> {
        if !(eps < self.eps_lower && self.eps_lower < self.eps_upper && self.eps_upper <= 1.0) {
            return Err(Error::Config(format!(
                "need eps < eps_lower < eps_upper <= 1, got {eps} / {} / {}",
                self.eps_lower, self.eps_upper
            )));
        }
        if !(self.width > 0.0) {
            return Err(Error::Config("sigmoid width must be positive".into()));
        }
        Ok(())
    }

    /// `σ ∈ (−1, 1)`; `−1` selects the original input, `+1` the safety controller.
    pub fn sigma(&self, bound: f64) -> f64 {
        let mid = 0.5 * (self.eps_upper + self.eps_lower);
        let half = 0.5 * (self.eps_upper - self.eps_lower);
        let dc = bound - mid;
        dc / (dc.abs() + half * self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SupervisorState {
    pub engaged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub u: DVector<f64>,
    pub state: SupervisorState,
    /// Value logged in the trace `mode` column: 0/1 for hysteresis, `σ` when blending.
    pub mode_value: f64,
}

/// Hysteresis automaton: engage at `bound ≥ ε_upper`, release below `ε_lower`.
pub fn next_state(state: SupervisorState, cfg: &SupervisorConfig, bound: f64) -> SupervisorState {
    let engaged = if bound >= cfg.eps_upper {
        true
    } else if bound < cfg.eps_lower {
        false
    } else {
        state.engaged
    };
    SupervisorState { engaged }
}

pub fn select(
    state: SupervisorState,
    cfg: &SupervisorConfig,
    bound: f64,
    u_hat: &DVector<f64>,
    u_safe: &DVector<f64>,
) -> Selection {
    let next = next_state(state, cfg, bound);
    match cfg.mode {
        SwitchMode::Hysteresis => Selection {
            u: if next.engaged { u_safe.clone() } else { u_hat.clone() },
            state: next,
            mode_value: if next.engaged { 1.0 } else { 0.0 },
        },
        SwitchMode::Sigmoidal => {
            let s = cfg.sigma(bound);
            Selection {
                u: u_hat * (0.5 * (1.0 - s)) + u_safe * (0.5 * (1.0 + s)),
                state: next,
                mode_value: s,
            }
        }
    }
}
