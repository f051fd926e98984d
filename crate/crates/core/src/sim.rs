//! Fixed-step simulation of plant, safety controller, estimator and supervisor.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composite::CompositeBarrier;
use crate::estimator::{compute_bound, filter_rate, nominal_state, BoundEval, EstimatorConfig, FilterState};
use crate::model::{Constraints, UncertainPlant};
use crate::supervisor::{select, SupervisorConfig, SupervisorState};
use crate::synthesis::BarrierPair;
use crate::{Error, Result};

pub const GRAVITY: f64 = 9.8;
pub const PENDULUM_MASS: f64 = 1.0 / (9.8 * 9.8);
pub const PENDULUM_LENGTH: f64 = 9.8;
pub const SPRING_MASS: [f64; 2] = [2.0, 2.0];
pub const SPRING_RANGE: (f64, f64) = (0.9, 1.0);

/// `[ÿ, ẏ]` for the state `[ẏ, y]`: `ÿ = (g/r) sin y + u/(m r²) + w₁`.
pub fn pendulum_dynamics(x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let (ydot, y) = (x[0], x[1]);
    let acc = GRAVITY / PENDULUM_LENGTH * y.sin() + u[0] / (PENDULUM_MASS * PENDULUM_LENGTH * PENDULUM_LENGTH);
    DVector::from_vec(vec![acc + w[0], ydot + w[1]])
}

/// State `[ẋ₁, x₁, ẋ₂, x₂]`, outputs are the spring forces plus noise.
pub fn springmass_dynamics(
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    k1: f64,
    k2: f64,
) -> (DVector<f64>, DVector<f64>) {
    let [m1, m2] = SPRING_MASS;
    let (f1, f2) = (k1 * x[1], k2 * (x[3] - x[1]));
    let dx = DVector::from_vec(vec![(u[0] - f1 + f2) / m1, x[0], (u[1] - f2) / m2, x[2]]);
    (dx, DVector::from_vec(vec![f1 + v[0], f2 + v[1]]))
}

/// One classical RK4 step of `ẋ = f(x)`.
pub fn rk4_step(x: &DVector<f64>, dt: f64, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DVector<f64> {
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (dt / 2.0)));
    let k3 = f(&(x + &k2 * (dt / 2.0)));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    Pendulum,
    SpringMass,
    /// The canonical-form model itself at a fixed `Δ`.
    Custom,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub delta_h: Option<Vec<f64>>,
    pub delta_a: Option<Vec<f64>>,
}

/// Constant from `t` until the next segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSegment {
    pub t: f64,
    #[serde(default)]
    pub w: Vec<f64>,
    #[serde(default)]
    pub v: Vec<f64>,
}

/// Reference state, interpolated linearly between waypoints and held after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: Vec<f64>,
}

/// `û = u_ff + K (x_ref − x̄_p)` on the nominal estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracking {
    pub gain: Vec<Vec<f64>>,
    #[serde(default)]
    pub feedforward: Vec<f64>,
}

/// Exponential CBF coefficients: `ḣ + k1 h ≥ 0` for relative degree one,
/// `ḧ + k1 ḣ + k0 h ≥ 0` for relative degree two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbfParams {
    #[serde(default = "default_k")]
    pub k0: f64,
    #[serde(default = "default_k")]
    pub k1: f64,
    /// Use the true state instead of the nominal estimate.
    #[serde(default)]
    pub use_truth: bool,
}

fn default_k() -> f64 {
    4.0
}

impl Default for CbfParams {
    fn default() -> Self {
        Self {
            k0: default_k(),
            k1: default_k(),
            use_truth: false,
        }
    }
}

fn default_dt() -> f64 {
    1e-3
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantKind,
    #[serde(default)]
    pub params: TrueParams,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub disturbance: Vec<DisturbanceSegment>,
    #[serde(default)]
    pub reference: Vec<Waypoint>,
    pub tracking: Tracking,
    #[serde(default)]
    pub supervisor: SupervisorConfig,
    /// `false` applies `û` directly.
    #[serde(default = "yes")]
    pub supervised: bool,
    /// When set, the CBF-QP filter replaces the supervisor.
    #[serde(default)]
    pub baseline: Option<CbfParams>,
    #[serde(default)]
    pub bound: BoundEval,
}

/// Everything a run needs from synthesis.
#[derive(Debug, Clone, Copy)]
pub struct Artifacts<'a> {
    pub plant: &'a UncertainPlant,
    pub cons: &'a Constraints,
    pub pair: &'a BarrierPair,
    pub composite: &'a CompositeBarrier,
    pub estimator: &'a EstimatorConfig,
}

enum Physics {
    Pendulum,
    SpringMass(f64, f64),
    Linear { a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64> },
}

impl Physics {
    fn rate(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        match self {
            Physics::Pendulum => pendulum_dynamics(x, u, w),
            Physics::SpringMass(k1, k2) => springmass_dynamics(x, u, &DVector::zeros(2), *k1, *k2).0 + w,
            Physics::Linear { a, b, .. } => a * x + b * u + w,
        }
    }

    fn output(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Physics::Pendulum => DVector::from_element(1, x[1] + v[0]),
            Physics::SpringMass(k1, k2) => springmass_dynamics(x, &DVector::zeros(2), v, *k1, *k2).1,
            Physics::Linear { c, .. } => c * x + v,
        }
    }
}

impl Scenario {
    pub fn validate(&self, plant: &UncertainPlant, cons: &Constraints) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be nonnegative, got {}", self.horizon)));
        }
        let (n, n_u, n_y) = (plant.n(), plant.n_u(), plant.n_y());
        let dims = |k: PlantKind| match k {
            PlantKind::Pendulum => Some((2, 1, 1)),
            PlantKind::SpringMass => Some((4, 2, 2)),
            PlantKind::Custom => None,
        };
        if let Some(d) = dims(self.plant) {
            if d != (n, n_u, n_y) {
                return Err(Error::Mismatch(format!("{:?} scenario does not fit a plant with (n, n_u, n_y) = {:?}", self.plant, (n, n_u, n_y))));
            }
        }
        if self.plant == PlantKind::SpringMass {
            for k in [self.params.k1, self.params.k2].into_iter().flatten() {
                if !(SPRING_RANGE.0..=SPRING_RANGE.1).contains(&k) {
                    return Err(Error::Config(format!("spring constant {k} outside [0.9, 1.0]")));
                }
            }
        }
        for (d, len) in [(&self.params.delta_h, plant.n_theta_h()), (&self.params.delta_a, plant.n_theta_a())] {
            if let Some(d) = d {
                if d.len() != len || d.iter().any(|v| v.abs() > 1.0) {
                    return Err(Error::Config(format!("Δ realization must have {len} entries in [-1, 1]")));
                }
            }
        }
        for seg in &self.disturbance {
            if !seg.w.is_empty() && seg.w.len() != n || !seg.v.is_empty() && seg.v.len() != n_y {
                return Err(Error::Dimension(format!("disturbance segment at t = {} has wrong length", seg.t)));
            }
        }
        if self.disturbance.windows(2).any(|w| w[1].t < w[0].t) || self.reference.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::Config("disturbance segments and waypoints must be sorted by time".into()));
        }
        if self.reference.iter().any(|w| w.x.len() != n) {
            return Err(Error::Dimension("reference waypoints must have plant dimension".into()));
        }
        if self.tracking.gain.len() != n_u || self.tracking.gain.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("tracking gain must be {n_u}x{n}")));
        }
        if !self.tracking.feedforward.is_empty() && self.tracking.feedforward.len() != n_u {
            return Err(Error::Dimension("feedforward length must equal n_u".into()));
        }
        if let Some(b) = &self.baseline {
            if n_u > 2 {
                return Err(Error::Config("the closed-form CBF-QP handles at most two inputs".into()));
            }
            if !(b.k0 > 0.0 && b.k1 > 0.0) {
                return Err(Error::Config("CBF coefficients must be positive".into()));
            }
        }
        let _ = cons;
        Ok(())
    }

    fn disturbance_at(&self, t: f64, n: usize, n_y: usize) -> (DVector<f64>, DVector<f64>) {
        let seg = self.disturbance.iter().rev().find(|s| s.t <= t);
        let pick = |v: Option<&Vec<f64>>, len| match v {
            Some(v) if !v.is_empty() => DVector::from_column_slice(v),
            _ => DVector::zeros(len),
        };
        (pick(seg.map(|s| &s.w), n), pick(seg.map(|s| &s.v), n_y))
    }

    fn reference_at(&self, t: f64, n: usize) -> DVector<f64> {
        let r = &self.reference;
        match r.iter().position(|w| w.t > t) {
            _ if r.is_empty() => DVector::zeros(n),
            Some(0) => DVector::from_column_slice(&r[0].x),
            Some(i) => {
                let (a, b) = (&r[i - 1], &r[i]);
                let s = (t - a.t) / (b.t - a.t);
                DVector::from_fn(n, |k, _| a.x[k] + s * (b.x[k] - a.x[k]))
            }
            None => DVector::from_column_slice(&r[r.len() - 1].x),
        }
    }

    fn physics(&self, plant: &UncertainPlant) -> Result<Physics> {
        Ok(match self.plant {
            PlantKind::Pendulum => Physics::Pendulum,
            PlantKind::SpringMass => Physics::SpringMass(self.params.k1.unwrap_or(1.0), self.params.k2.unwrap_or(1.0)),
            PlantKind::Custom => {
                let dh = self.params.delta_h.clone().unwrap_or_else(|| vec![0.0; plant.n_theta_h()]);
                let da = self.params.delta_a.clone().unwrap_or_else(|| vec![0.0; plant.n_theta_a()]);
                let (t_u, t_y) = plant.theta_h(&dh);
                let t_c = plant
                    .theta_a(&da)
                    .try_inverse()
                    .ok_or_else(|| Error::Model("Θ_a is singular at this Δ".into()))?;
                let c = &t_c * plant.cbar();
                Physics::Linear {
                    a: plant.abar() + &t_y * &c,
                    b: t_u,
                    c,
                }
            }
        })
    }

    /// Stable hash of the scenario content.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("scenario serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Nominal model `ẋ = A x + G u` seen by the CBF filter.
struct CbfModel {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
}

/// Closed-form CBF-QP: `min ‖u − û‖²` over the linear CBF constraints, by enumeration of
/// active sets of size at most `n_u ≤ 2`, then saturation. Returns `(u, feasible)`.
fn cbf_filter(model: &CbfModel, cons: &Constraints, p: &CbfParams, x: &DVector<f64>, u_hat: &DVector<f64>) -> (DVector<f64>, bool) {
    let n_u = u_hat.len();
    let ax = &model.a * x;
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..cons.n_s() {
        let f = cons.f.row(i).transpose();
        let fg = model.g.transpose() * &f;
        for sign in [1.0, -1.0] {
            // h = 1 − sign·fᵀx
            let h = 1.0 - sign * f.dot(x);
            if fg.norm() > 1e-12 {
                // −sign·fᵀ(Ax + Gu) + k1 h ≥ 0
                rows.push((&fg * sign, -sign * f.dot(&ax) + p.k1 * h));
            } else {
                let fa = model.a.transpose() * &f;
                let fag = model.g.transpose() * &fa;
                let hdot = -sign * f.dot(&ax);
                // −sign·fᵀA(Ax + Gu) + k1 ḣ + k0 h ≥ 0
                rows.push((&fag * sign, -sign * fa.dot(&ax) + p.k1 * hdot + p.k0 * h));
            }
        }
    }
    rows.retain(|(a, _)| a.norm() > 1e-12);
    let feasible = |u: &DVector<f64>| rows.iter().all(|(a, b)| a.dot(u) <= b + 1e-9 * (1.0 + b.abs()));
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |u: DVector<f64>| {
        if feasible(&u) {
            let d = (&u - u_hat).norm_squared();
            if best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, u));
            }
        }
    };
    consider(u_hat.clone());
    for (a, b) in &rows {
        consider(u_hat - a * ((a.dot(u_hat) - b) / a.norm_squared()));
    }
    if n_u == 2 {
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let m = DMatrix::from_rows(&[rows[i].0.transpose(), rows[j].0.transpose()]);
                if let Some(u) = m.lu().solve(&DVector::from_vec(vec![rows[i].1, rows[j].1])) {
                    consider(u);
                }
            }
        }
    }
    match best {
        Some((_, u)) => (u, true),
        None => (u_hat.clone(), false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x_p: Vec<f64>,
    pub x_k: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub b_true: f64,
    pub b_bar: f64,
    pub r_cl: f64,
    pub r_p: f64,
    pub r_e: f64,
    pub mode: f64,
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub ticks: usize,
    pub state_violations: usize,
    pub worst_state_margin: f64,
    pub input_violations: usize,
    pub bound_violations: usize,
    pub worst_bound_gap: f64,
    pub switches: usize,
    pub cbf_infeasible: usize,
    pub max_b_true: f64,
    pub max_b_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub n: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub rows: Vec<TraceRow>,
    pub summary: TraceSummary,
}

impl Trace {
    pub fn header(&self, n_s: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=self.n).map(|i| format!("xp{i}")));
        h.extend((1..=self.n).map(|i| format!("xk{i}")));
        h.extend((1..=self.n_u).map(|i| format!("u{i}")));
        h.extend((1..=self.n_y).map(|i| format!("y{i}")));
        h.extend(["B_true", "B_bar", "r_cl", "r_p", "r_e", "mode"].map(String::from));
        h.extend((1..=n_s).map(|i| format!("margin_{i}")));
        h
    }

    pub fn write_csv(&self, n_s: usize, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.header(n_s).join(","))?;
        for r in &self.rows {
            let mut f: Vec<f64> = vec![r.t];
            f.extend(&r.x_p);
            f.extend(&r.x_k);
            f.extend(&r.u);
            f.extend(&r.y);
            f.extend([r.b_true, r.b_bar, r.r_cl, r.r_p, r.r_e, r.mode]);
            f.extend(&r.margins);
            let line: Vec<String> = f.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn is_safe(&self) -> bool {
        self.summary.state_violations == 0 && self.summary.input_violations == 0
    }
}

/// Number of RK4 sub-steps per tick keeping `ρ(A)·h ≤ 1.5` for the stiffest linear part.
fn substeps(dt: f64, mats: &[&DMatrix<f64>]) -> usize {
    let rho = mats
        .iter()
        .map(|m| (*m).clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    ((rho * dt / 1.5).ceil() as usize).max(1)
}

pub fn run(sc: &Scenario, art: Artifacts<'_>) -> Result<Trace> {
    let plant = art.plant;
    let cons = art.cons;
    sc.validate(plant, cons)?;
    if sc.supervised && sc.baseline.is_none() {
        sc.supervisor.validate(art.pair.scalars.eps)?;
    }
    art.estimator.check(plant)?;
    if (&art.composite.x0 - &art.estimator.x0).amax() > 1e-12 * art.estimator.x0.amax().max(1.0)
        || (&art.pair.x - &art.estimator.x0).amax() > 1e-12 * art.pair.x.amax().max(1.0)
    {
        return Err(Error::Mismatch("pair, composite and estimator disagree on X_0".into()));
    }
    let (n, n_u, n_y) = (plant.n(), plant.n_u(), plant.n_y());
    let physics = sc.physics(plant)?;
    let k = &art.pair.controller;
    let cfg = art.estimator;
    let cbf_model = CbfModel {
        a: plant.a_p(),
        g: plant.a_u.clone(),
    };
    let gain = DMatrix::from_fn(n_u, n, |i, j| sc.tracking.gain[i][j]);
    let ff = if sc.tracking.feedforward.is_empty() {
        DVector::zeros(n_u)
    } else {
        DVector::from_column_slice(&sc.tracking.feedforward)
    };
    let m = substeps(sc.dt, &[&k.a_k, &cfg.a_z]);
    let h_sub = sc.dt / m as f64;
    let ticks = (sc.horizon / sc.dt + 1e-9).floor() as usize;
    let nf = FilterState::flat_len(cfg);

    let mut x_p = DVector::zeros(n);
    let mut x_k = DVector::zeros(n);
    let mut filt = FilterState::zeros(cfg).to_flat();
    let mut sup = SupervisorState::default();
    let mut gamma_bar: Option<Vec<f64>> = None;
    let mut gamma_true: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(if sc.horizon > 0.0 { ticks + 1 } else { 0 });
    let mut summary = TraceSummary {
        worst_state_margin: f64::INFINITY,
        worst_bound_gap: f64::INFINITY,
        ..Default::default()
    };
    let n_ticks = if sc.horizon > 0.0 { ticks + 1 } else { 0 };
    for tick in 0..n_ticks {
        let t = tick as f64 * sc.dt;
        let (w, v) = sc.disturbance_at(t, n, n_y);
        let y = physics.output(&x_p, &v);
        let fs = FilterState::from_flat(cfg, t, &filt);
        let x_bar = nominal_state(&fs, cfg);
        if !sup.engaged {
            x_k = -(&art.pair.v * &x_bar);
        }
        let bound = compute_bound(&fs, cfg, art.composite, &x_k, sc.bound, gamma_bar.as_deref())?;
        if !bound.gamma.is_empty() {
            gamma_bar = Some(bound.gamma.clone());
        }
        let u_hat = &ff + &gain * (sc.reference_at(t, n) - &x_bar);
        let u_safe = &k.c_k * &x_k;
        let (mut u, mode) = if let Some(b) = &sc.baseline {
            let xs = if b.use_truth { &x_p } else { &x_bar };
            let (u, ok) = cbf_filter(&cbf_model, cons, b, xs, &u_hat);
            if !ok {
                summary.cbf_infeasible += 1;
            }
            (u, 0.0)
        } else if sc.supervised {
            let s = select(sup, &sc.supervisor, bound.total, &u_hat, &u_safe);
            if s.state.engaged != sup.engaged {
                summary.switches += 1;
            }
            sup = s.state;
            (s.u, s.mode_value)
        } else {
            (u_hat.clone(), 0.0)
        };
        for i in 0..n_u {
            u[i] = u[i].clamp(-cons.u_bar[i], cons.u_bar[i]);
        }
        let mut x_cl = DVector::zeros(2 * n);
        x_cl.rows_mut(0, n).copy_from(&x_p);
        x_cl.rows_mut(n, n).copy_from(&x_k);
        let (b_true, g) = match &gamma_true {
            Some(g) => art.composite.eval_from(&x_cl, g),
            None => art.composite.eval(&x_cl),
        };
        gamma_true = Some(g);
        let margins = cons.state_margins(&x_p);
        let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
        summary.worst_state_margin = summary.worst_state_margin.min(worst);
        if worst < 0.0 {
            summary.state_violations += 1;
        }
        if (0..n_u).any(|i| u[i].abs() > cons.u_bar[i]) {
            summary.input_violations += 1;
        }
        let gap = bound.total - b_true;
        summary.worst_bound_gap = summary.worst_bound_gap.min(gap);
        if gap < -1e-6 {
            summary.bound_violations += 1;
        }
        summary.max_b_true = summary.max_b_true.max(b_true);
        summary.max_b_bar = summary.max_b_bar.max(bound.total);
        let mut d = w.as_slice().to_vec();
        d.extend(v.iter());
        rows.push(TraceRow {
            t,
            x_p: x_p.as_slice().to_vec(),
            x_k: x_k.as_slice().to_vec(),
            u: u.as_slice().to_vec(),
            y: y.as_slice().to_vec(),
            d,
            b_true,
            b_bar: bound.total,
            r_cl: bound.r_cl,
            r_p: bound.r_p,
            r_e: bound.r_e,
            mode,
            margins,
        });
        if tick + 1 == n_ticks {
            break;
        }

        // Plant, controller and filters share the stage-wise measurement.
        let integrate_k = sup.engaged && sc.baseline.is_none() && sc.supervised;
        let mut z = DVector::zeros(2 * n + nf);
        z.rows_mut(0, n).copy_from(&x_p);
        z.rows_mut(n, n).copy_from(&x_k);
        z.rows_mut(2 * n, nf).copy_from_slice(&filt);
        let rate = |z: &DVector<f64>| {
            let xp = z.rows(0, n).into_owned();
            let xk = z.rows(n, n).into_owned();
            let y = physics.output(&xp, &v);
            let mut h = DVector::zeros(n_u + n_y);
            h.rows_mut(0, n_u).copy_from(&u);
            h.rows_mut(n_u, n_y).copy_from(&y);
            let mut out = DVector::zeros(2 * n + nf);
            out.rows_mut(0, n).copy_from(&physics.rate(&xp, &u, &w));
            if integrate_k {
                out.rows_mut(n, n).copy_from(&(&k.a_k * &xk + &k.b_k * &y));
            }
            filter_rate(cfg, &z.as_slice()[2 * n..], &h, &mut out.as_mut_slice()[2 * n..]);
            out
        };
        for _ in 0..m {
            z = rk4_step(&z, h_sub, rate);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(tick + 1));
        }
        x_p = z.rows(0, n).into_owned();
        x_k = z.rows(n, n).into_owned();
        filt = z.as_slice()[2 * n..].to_vec();
    }
    summary.ticks = rows.len();
    if rows.is_empty() {
        summary.worst_state_margin = 0.0;
        summary.worst_bound_gap = 0.0;
    }
    Ok(Trace { n, n_u, n_y, rows, summary })
}
