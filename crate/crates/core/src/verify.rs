//! Independent re-checks of a synthesized design: stored certificates, sampled
//! sub-level-set containment, sampled decrease, and in-loop bound soundness.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composite::CompositeBarrier;
use crate::estimator::EstimatorConfig;
use crate::model::{assemble_closed_loop, Constraints, UncertainPlant};
use crate::sim::{self, Artifacts, DisturbanceSegment, PlantKind, Scenario, Tracking, TrueParams};
use crate::supervisor::SupervisorConfig;
use crate::synthesis::{certificate_margins, BarrierPair};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Decrease samples; the boundary test uses twice as many and the in-loop test one
    /// short simulation per hundred. Zero leaves only the deterministic checks.
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub sim_horizon: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 500,
            seed: 7,
            tol: 1e-6,
            sim_horizon: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    pub failures: usize,
    /// Worst observed margin; negative values are violations.
    pub worst: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &str, checked: usize, failures: usize, worst: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: failures == 0,
            checked,
            failures,
            worst,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub samples: usize,
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

fn margin_check(name: &str, margins: Result<Vec<f64>>, tol: f64) -> PropertyResult {
    match margins {
        Ok(m) => {
            let worst = m.iter().copied().fold(f64::INFINITY, f64::min);
            let failures = m.iter().filter(|&&v| !(v >= -tol)).count();
            PropertyResult::new(name, m.len(), failures, worst, String::new())
        }
        Err(e) => PropertyResult::new(name, 1, 1, f64::NEG_INFINITY, e.to_string()),
    }
}

/// Relative defects of the partition identities of `P`; a single `1.0` when `P` is not
/// positive definite.
pub fn partition_defects(pair: &BarrierPair) -> Vec<f64> {
    let n = pair.x.nrows();
    let rel = |a: DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / b.amax().max(1.0);
    let eye = DMatrix::identity(n, n);
    let Ok(q) = pair.try_q() else {
        return vec![1.0];
    };
    vec![
        rel(pair.p.view((0, 0), (n, n)).into_owned(), &pair.x),
        rel(q.view((0, 0), (n, n)).into_owned(), &pair.y),
        rel(&pair.v * pair.w.transpose(), &(&eye - &pair.x * &pair.y)),
    ]
}

/// `x = s·P^{-1/2} u` with `u` uniform on the sphere, so that `xᵀPx = s²`.
fn sample_level(rng: &mut ChaCha8Rng, p_inv_sqrt: &DMatrix<f64>, s: f64) -> DVector<f64> {
    let dim = p_inv_sqrt.nrows();
    let mut u = DVector::from_fn(dim, |_, _| gaussian(rng));
    while u.norm() < 1e-12 {
        u = DVector::from_fn(dim, |_, _| gaussian(rng));
    }
    p_inv_sqrt * u.normalize() * s
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn inv_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    let e = p.clone().symmetric_eigen();
    let d = e.eigenvalues.map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

fn vertex(rng: &mut ChaCha8Rng, bar: &[f64]) -> Vec<f64> {
    bar.iter().map(|&b| if rng.random::<bool>() { b } else { -b }).collect()
}

/// Points with `‖x‖_P = 1` must satisfy every state and input limit.
pub fn check_sublevel(plant: &UncertainPlant, cons: &Constraints, pair: &BarrierPair, count: usize, seed: u64, tol: f64) -> PropertyResult {
    let n = plant.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = inv_sqrt(&pair.p);
    let (mut failures, mut worst) = (0, f64::INFINITY);
    for _ in 0..count {
        let x = sample_level(&mut rng, &s, 1.0);
        let xp = x.rows(0, n);
        let xk = x.rows(n, n);
        let mut m = f64::INFINITY;
        for i in 0..cons.n_s() {
            m = m.min(1.0 - (cons.f.row(i) * xp)[0].abs());
        }
        for i in 0..plant.n_u() {
            m = m.min((cons.u_bar[i] - (pair.controller.c_k.row(i) * xk)[0].abs()) / cons.u_bar[i]);
        }
        worst = worst.min(m);
        if m < -tol {
            failures += 1;
        }
    }
    PropertyResult::new("sublevel", count, failures, worst, String::new())
}

/// On the shell `ε ≤ ‖x‖_P ≤ 1`, with a random `Δ` and a vertex disturbance, the
/// derivative of `xᵀPx` along the closed loop must be negative.
pub fn check_decrease(plant: &UncertainPlant, cons: &Constraints, pair: &BarrierPair, count: usize, seed: u64) -> Result<PropertyResult> {
    let cl = assemble_closed_loop(plant, &pair.controller)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = inv_sqrt(&pair.p);
    let eps = pair.scalars.eps;
    let (mut failures, mut ill_posed, mut worst) = (0, 0, f64::INFINITY);
    for _ in 0..count {
        let level = eps + (1.0 - eps) * rng.random::<f64>();
        let x = sample_level(&mut rng, &s, level);
        let d = DVector::from_vec(vertex(&mut rng, &cons.d_bar));
        let delta: Vec<f64> = (0..cl.n_theta()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let Some(p) = cl.resolve_p(&x, &d, &delta) else {
            ill_posed += 1;
            failures += 1;
            continue;
        };
        let dv = 2.0 * x.dot(&(&pair.p * cl.flow(&x, &d, &p)));
        // Normalized by the squared level so the margin is scale free.
        worst = worst.min(-dv / (level * level));
        if !(dv < 0.0) {
            failures += 1;
        }
    }
    let detail = if ill_posed > 0 { format!("{ill_posed} ill-posed uncertainty loops") } else { String::new() };
    Ok(PropertyResult::new("decrease", count, failures, worst, detail))
}

/// Short closed-loop runs of the canonical model at random constant `Δ`, vertex
/// disturbances and constant pushes; the bound must dominate the true composite value.
pub fn check_bound_soundness(
    plant: &UncertainPlant,
    cons: &Constraints,
    art: Artifacts<'_>,
    runs: usize,
    horizon: f64,
    seed: u64,
) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, n_y) = (plant.n(), plant.n_y());
    let (mut failures, mut worst, mut ticks) = (0, f64::INFINITY, 0);
    for k in 0..runs {
        let d = vertex(&mut rng, &cons.d_bar);
        let sc = Scenario {
            name: format!("soundness-{k}"),
            plant: PlantKind::Custom,
            params: TrueParams {
                delta_h: Some((0..plant.n_theta_h()).map(|_| rng.random_range(-1.0..=1.0)).collect()),
                delta_a: Some((0..plant.n_theta_a()).map(|_| rng.random_range(-1.0..=1.0)).collect()),
                ..Default::default()
            },
            dt: 1e-3,
            horizon,
            disturbance: vec![DisturbanceSegment {
                t: 0.0,
                w: d[..n].to_vec(),
                v: d[n..n + n_y].to_vec(),
            }],
            reference: vec![],
            tracking: Tracking {
                gain: vec![vec![0.0; n]; plant.n_u()],
                feedforward: cons.u_bar.iter().map(|&u| rng.random_range(-u..=u)).collect(),
            },
            supervisor: SupervisorConfig::default(),
            supervised: true,
            baseline: None,
            bound: Default::default(),
        };
        let tr = sim::run(&sc, art)?;
        ticks += tr.summary.ticks;
        failures += tr.summary.bound_violations;
        worst = worst.min(tr.summary.worst_bound_gap);
    }
    Ok(PropertyResult::new("bound-soundness", ticks, failures, worst, format!("{runs} runs")))
}

pub fn verify(
    plant: &UncertainPlant,
    cons: &Constraints,
    pair: &BarrierPair,
    composite: &CompositeBarrier,
    estimator: &EstimatorConfig,
    opts: &VerifyOptions,
) -> Result<VerifyReport> {
    let tol = opts.tol;
    let mut props = vec![
        margin_check(
            "certificate",
            certificate_margins(plant, cons, pair).map(|m| vec![m.worst_relative()]),
            tol,
        ),
        margin_check("partition", Ok(partition_defects(pair).into_iter().map(|d| -d).collect()), tol),
        margin_check("composite", composite.margins(plant, cons, pair), tol),
        margin_check("estimator", estimator.certificate_margin(plant, cons).map(|m| vec![m]), tol),
    ];
    if opts.samples > 0 {
        props.push(check_sublevel(plant, cons, pair, 2 * opts.samples, opts.seed, tol));
        props.push(check_decrease(plant, cons, pair, opts.samples, opts.seed.wrapping_add(1))?);
        let art = Artifacts {
            plant,
            cons,
            pair,
            composite,
            estimator,
        };
        let runs = opts.samples.div_ceil(100);
        props.push(check_bound_soundness(plant, cons, art, runs, opts.sim_horizon, opts.seed.wrapping_add(2))?);
    }
    Ok(VerifyReport {
        seed: opts.seed,
        samples: opts.samples,
        properties: props,
    })
}
