//! Joint choice of the pair's plant block `X` and the estimator gain.
//!
//! Volume maximization fixes `Y` but leaves `X` largely free, while the estimator
//! radius is measured in the `X` metric. With the gain `B_z` and decay rate held
//! fixed, the estimator condition is linear in `X`, so the two programs can be
//! alternated: each pass re-selects `X` under a tighter radius cap and re-solves
//! the estimator at the new `X`. The objective is
//! `logdet Y + 2n·ln(1 − r_e)`, the log-volume of the set left for free operation.

use serde::{Deserialize, Serialize};

use crate::estimator::{add_error_condition, synthesize_estimator, synthesize_estimator_at, EstimatorConfig, EstimatorOptions};
use crate::model::{Constraints, UncertainPlant};
use crate::synthesis::{build_program, recover_pair, solve_built, synthesize, BarrierPair, SynthesisOptions, SynthesisScalars};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub synthesis: SynthesisOptions,
    pub estimator: EstimatorOptions,
    /// Alternation passes; 0 keeps the volume-maximizing `X`.
    pub passes: usize,
    /// Radius cap factor per trial inside a pass.
    pub shrink: f64,
    pub max_trials: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            // Bounds the plant block so the recovered controller stays moderately stiff.
            synthesis: SynthesisOptions { x_cap: Some(1e4), ..SynthesisOptions::default() },
            estimator: EstimatorOptions::default(),
            passes: 6,
            shrink: 0.8,
            max_trials: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Design {
    pub pair: BarrierPair,
    pub estimator: EstimatorConfig,
    /// `r_e` after the initial solve and after each accepted pass.
    pub radii: Vec<f64>,
}

fn score(plant: &UncertainPlant, logdet: f64, r_e: f64) -> f64 {
    if r_e >= 1.0 {
        f64::NEG_INFINITY
    } else {
        logdet + 2.0 * plant.n() as f64 * (1.0 - r_e).ln()
    }
}

/// Re-selects `X` with the estimator gain fixed and `‖e‖_X ≤ r_cap`.
pub fn reselect_pair(
    plant: &UncertainPlant,
    cons: &Constraints,
    scalars: &SynthesisScalars,
    est: &EstimatorConfig,
    r_cap: f64,
    opts: &DesignOptions,
) -> Result<BarrierPair> {
    let (mut prog, vars) = build_program(plant, cons, scalars, &opts.synthesis)?;
    let lambda = est.mu_e / est.r_e.powi(2);
    add_error_condition(
        &mut prog,
        plant,
        cons,
        &vars.x.expr(),
        &est.b_z,
        lambda,
        r_cap,
        opts.estimator.max_decay,
    )?;
    let sol = solve_built(plant, &prog, &vars, &opts.synthesis)?;
    recover_pair(plant, cons, scalars, sol, &opts.synthesis)
}

pub fn design(
    plant: &UncertainPlant,
    cons: &Constraints,
    scalars: &SynthesisScalars,
    opts: &DesignOptions,
) -> Result<Design> {
    let mut pair = synthesize(plant, cons, scalars, &opts.synthesis)?;
    let mut est = synthesize_estimator(plant, cons, &pair.x, &opts.estimator)?;
    let mut radii = vec![est.r_e];
    for _ in 0..opts.passes {
        let current = score(plant, pair.logdet_y, est.r_e);
        let mut best: Option<(f64, f64, BarrierPair)> = None;
        let mut r = est.r_e;
        for _ in 0..opts.max_trials {
            r *= opts.shrink;
            let Ok(p) = reselect_pair(plant, cons, scalars, &est, r, opts) else { break };
            let s = score(plant, p.logdet_y, r);
            if best.as_ref().is_some_and(|b| s <= b.0) {
                break;
            }
            best = Some((s, r, p));
        }
        let Some((s, r_cap, cand)) = best else { break };
        if s <= current {
            break;
        }
        // The previous gain stays feasible at the new X with radius r_cap, so seed
        // the search with its decay rate before trying the grid.
        let lambda = est.mu_e / est.r_e.powi(2);
        let mut next = synthesize_estimator_at(plant, cons, &cand.x, lambda * r_cap * r_cap, &opts.estimator).ok();
        if let Ok(g) = synthesize_estimator(plant, cons, &cand.x, &opts.estimator) {
            if next.as_ref().is_none_or(|n| g.r_e < n.r_e) {
                next = Some(g);
            }
        }
        let Some(next) = next else { break };
        if next.r_e >= est.r_e {
            break;
        }
        pair = cand;
        est = next;
        radii.push(est.r_e);
    }
    Ok(Design { pair, estimator: est, radii })
}
