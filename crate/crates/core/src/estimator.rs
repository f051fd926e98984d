//! Identifier-based estimator: offline gain synthesis, sensitivity filters, and the
//! runtime upper bound on the composite barrier.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lmi::{self, AffineExpr, MaxDetProgram, SolveStatus, SolverOptions, Structure};
use crate::composite::CompositeBarrier;
use crate::model::{put, Constraints, UncertainPlant};
use crate::{Error, Result};

/// Estimator data derived from the plant factors and a gain `B_z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    #[serde(with = "crate::serde_mat")]
    pub b_z: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub a_z: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub a_hat_h: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub b_hat_h: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub c_hat_h: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub a_hat_d: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub b_hat_d: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub c_hat_d: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub x0: DMatrix<f64>,
    pub r_e: f64,
    pub mu_e: f64,
    pub mu_d: Vec<f64>,
    pub mu_p: Vec<f64>,
}

/// `(Â_h, B̂_h, Ĉ_h, Â_d, B̂_d, Ĉ_d)` for a gain `B_z`.
pub struct LiftedFactors {
    pub a_h: DMatrix<f64>,
    pub b_h: DMatrix<f64>,
    pub c_h: DMatrix<f64>,
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub c_d: DMatrix<f64>,
}

pub fn lifted_factors(plant: &UncertainPlant, b_z: &DMatrix<f64>) -> LiftedFactors {
    let (n, n_u, n_y) = (plant.n(), plant.n_u(), plant.n_y());
    let (th, ta) = (plant.n_theta_h(), plant.n_theta_a());
    let mut a_h = DMatrix::zeros(n, n_u + n_y);
    put(&mut a_h, 0, 0, &plant.a_u);
    put(&mut a_h, 0, n_u, &(&plant.a_y + b_z * &plant.a_a));
    let mut b_h = DMatrix::zeros(n, th + ta);
    put(&mut b_h, 0, 0, &plant.b_h);
    put(&mut b_h, 0, th, &(b_z * &plant.b_a));
    let mut c_h = DMatrix::zeros(th + ta, n_u + n_y);
    put(&mut c_h, 0, 0, &plant.c_u);
    put(&mut c_h, 0, n_u, &plant.c_y);
    put(&mut c_h, th, n_u, &plant.c_a);
    let mut a_d = DMatrix::zeros(n, n + n_y);
    put(&mut a_d, 0, 0, &DMatrix::identity(n, n));
    put(&mut a_d, 0, n, &-(&plant.a_y + b_z * &plant.a_a));
    let b_d = -&b_h;
    let mut c_d = DMatrix::zeros(th + ta, n + n_y);
    put(&mut c_d, 0, n, &plant.c_y);
    put(&mut c_d, th, n, &plant.c_a);
    LiftedFactors {
        a_h,
        b_h,
        c_h,
        a_d,
        b_d,
        c_d,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub solver: SolverOptions,
    /// Candidate `μ̂_e` values as multiples of `Σ d̄²`.
    pub mu_e_grid: Vec<f64>,
    /// Golden-section steps (in `log μ̂_e`) around the best grid point.
    pub refine_steps: usize,
    /// Upper bound on the error decay rate in the `X_0` metric, keeps the filters
    /// from becoming arbitrarily stiff when `φ_e` is unbounded.
    pub max_decay: Option<f64>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            mu_e_grid: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            refine_steps: 8,
            max_decay: Some(20.0),
        }
    }
}

/// Maximizes `φ_e = 1/r_e²` at a fixed `μ̂_e`.
pub fn synthesize_estimator_at(
    plant: &UncertainPlant,
    cons: &Constraints,
    x0: &DMatrix<f64>,
    mu_e: f64,
    opts: &EstimatorOptions,
) -> Result<EstimatorConfig> {
    cons.validate(plant)?;
    let (n, n_y, n_d, n_t) = (plant.n(), plant.n_y(), plant.n_d(), plant.n_theta());
    if x0.shape() != (n, n) {
        return Err(Error::Dimension(format!("X_0 is {:?}, expected {n}x{n}", x0.shape())));
    }
    if !(mu_e > 0.0) {
        return Err(Error::Config(format!("mu_e must be positive, got {mu_e}")));
    }
    let mut p = MaxDetProgram::new();
    let bz_v = p.variable("B_z", n, n_y, Structure::BlockDiagonal(plant.indices.iter().map(|&k| (k, 1)).collect()))?;
    // Channels with a zero bound carry no energy and are dropped, as in synthesis.
    let active = cons.active_d();
    // Without disturbance channels the error stays at zero and `r_e = 0`; the program
    // then only selects a gain, and the decay cap keeps it bounded.
    let undisturbed = active.is_empty();
    if undisturbed && opts.max_decay.is_none() {
        return Err(Error::Config("an undisturbed estimator needs a decay cap".into()));
    }
    let md_v = if undisturbed { None } else { Some(p.diagonal("M_d", active.len())?) };
    let md_e = md_v.as_ref().map(|v| v.expr()).unwrap_or_else(|| AffineExpr::zeros(0, 0));
    let phi_v = p.scalar("phi_e")?;
    let mp_v = if n_t > 0 { Some(p.diagonal("M_p", n_t)?) } else { None };

    let x0e = AffineExpr::constant(x0.clone());
    let x0_bz = x0 * &bz_v.expr();
    let decay = phi_v.scalar_expr(0).times_matrix(&(x0 * mu_e));
    let lmi = error_lmi(plant, &active, &x0e, &x0_bz, &decay, &md_e, mp_v.as_ref().map(|v| v.expr()))?;
    p.nsd_strict("estimator", lmi)?;
    if let Some(md_v) = &md_v {
        p.nonnegative_diagonal("M_d", md_v)?;
    }
    if let Some(mp_v) = &mp_v {
        p.nonnegative_diagonal("M_p", mp_v)?;
    }
    p.psd("phi_e", phi_v.expr())?;
    if let Some(alpha) = opts.max_decay {
        let x0_az = &AffineExpr::constant(x0 * plant.abar()) - &(&x0_bz * &plant.cbar());
        p.psd("decay cap", &x0_az.he() + &AffineExpr::constant(x0 * (2.0 * alpha)))?;
    }
    if let Some(md_v) = &md_v {
        let mut energy = AffineExpr::scalar(0.0);
        for (k, &i) in active.iter().enumerate() {
            energy = &energy + &md_v.scalar_expr(k).scale(cons.d_bar[i].powi(2));
        }
        p.equal(&energy, mu_e)?;
    }
    p.maximize(&phi_v.expr())?;

    let rep = lmi::solve(&p, &opts.solver)?;
    match rep.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(Error::Infeasible {
                family: rep.binding.unwrap_or_else(|| "estimator".into()),
            })
        }
        SolveStatus::MaxIterations => {
            return Err(Error::NotConverged(format!("estimator stopped after {} iterations", rep.iterations)))
        }
    }
    let z = &rep.point;
    let b_z = bz_v.unpack(z);
    let phi = phi_v.unpack(z)[(0, 0)];
    let diag = |m: DMatrix<f64>| (0..m.nrows()).map(|i| m[(i, i)]).collect::<Vec<_>>();
    let mut mu_d = vec![0.0; n_d];
    if let Some(md_v) = &md_v {
        let md = md_v.unpack(z);
        for (k, &i) in active.iter().enumerate() {
            mu_d[i] = md[(k, k)];
        }
    }
    let mu_p = mp_v.map(|v| diag(v.unpack(z))).unwrap_or_default();
    let r_e = if undisturbed { 0.0 } else { 1.0 / phi.sqrt() };
    let cfg = build_config(plant, b_z, x0.clone(), r_e, mu_e, mu_d, mu_p);
    cfg.check(plant)?;
    Ok(cfg)
}

fn selector(n_d: usize, active: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(n_d, active.len(), |i, k| if active[k] == i { 1.0 } else { 0.0 })
}

/// The error-dissipation block
/// `[[X_0A_z + A_zᵀX_0 + decay, ⋆, ⋆], [Â_dᵀX_0, −M̂_d + Ĉ_dᵀM̂_pĈ_d, ⋆], [B̂_dᵀX_0, 0, −M̂_p]]`
/// over the active disturbance channels. `x0_bz` is the product `X_0 B_z`, so exactly one
/// of `X_0`, `B_z` may carry decision variables.
fn error_lmi(
    plant: &UncertainPlant,
    active: &[usize],
    x0: &AffineExpr,
    x0_bz: &AffineExpr,
    decay: &AffineExpr,
    md: &AffineExpr,
    mp: Option<AffineExpr>,
) -> Result<AffineExpr> {
    let (n, n_y) = (plant.n(), plant.n_y());
    let sel = selector(plant.n_d(), active);
    let x0_az = &x0.right_mul(&plant.abar()) - &x0_bz.right_mul(&plant.cbar());
    let a11 = &x0_az.he() + decay;
    let x0_ad = AffineExpr::blocks(&[vec![
        Some(x0.clone()),
        Some(-&(&x0.right_mul(&plant.a_y) + &x0_bz.right_mul(&plant.a_a))),
    ]])?
    .right_mul(&sel);
    let c_d = lifted_factors(plant, &DMatrix::zeros(n, n_y)).c_d * &sel;
    let rows = match mp {
        Some(mp) => {
            let x0_bd = AffineExpr::blocks(&[vec![
                Some(-&x0.right_mul(&plant.b_h)),
                Some(-&x0_bz.right_mul(&plant.b_a)),
            ]])?;
            let d22 = &(&(&c_d.transpose() * &mp) * &c_d) - md;
            vec![
                vec![Some(a11)],
                vec![Some(x0_ad.transpose()), Some(d22)],
                vec![Some(x0_bd.transpose()), Some(AffineExpr::zeros(plant.n_theta(), active.len())), Some(-mp)],
            ]
        }
        None => vec![vec![Some(a11)], vec![Some(x0_ad.transpose()), Some(-md)]],
    };
    Ok(AffineExpr::sym_blocks(&rows)?)
}

/// Adds the estimator error condition with a fixed gain `B_z` to a program in which
/// `x0` is affine in the decision vector: `‖e‖_{X_0} ≤ r_cap` with decay rate `lambda`.
pub fn add_error_condition(
    prog: &mut MaxDetProgram,
    plant: &UncertainPlant,
    cons: &Constraints,
    x0: &AffineExpr,
    b_z: &DMatrix<f64>,
    lambda: f64,
    r_cap: f64,
    max_decay: Option<f64>,
) -> Result<()> {
    let active = cons.active_d();
    let md_v = prog.diagonal("est M_d", active.len())?;
    let mp_v = if plant.n_theta() > 0 { Some(prog.diagonal("est M_p", plant.n_theta())?) } else { None };
    let x0_bz = x0.right_mul(b_z);
    let lmi = error_lmi(plant, &active, x0, &x0_bz, &x0.scale(lambda), &md_v.expr(), mp_v.as_ref().map(|v| v.expr()))?;
    prog.nsd_strict("estimator", lmi)?;
    prog.nonnegative_diagonal("est M_d", &md_v)?;
    if let Some(mp_v) = &mp_v {
        prog.nonnegative_diagonal("est M_p", mp_v)?;
    }
    let mut energy = AffineExpr::scalar(lambda * r_cap * r_cap);
    for (k, &i) in active.iter().enumerate() {
        energy = &energy - &md_v.scalar_expr(k).scale(cons.d_bar[i].powi(2));
    }
    prog.psd("estimator radius", energy)?;
    if let Some(alpha) = max_decay {
        let x0_az = &x0.right_mul(&plant.abar()) - &x0_bz.right_mul(&plant.cbar());
        prog.psd("decay cap", &x0_az.he() + &x0.scale(2.0 * alpha))?;
    }
    Ok(())
}

fn build_config(
    plant: &UncertainPlant,
    b_z: DMatrix<f64>,
    x0: DMatrix<f64>,
    r_e: f64,
    mu_e: f64,
    mu_d: Vec<f64>,
    mu_p: Vec<f64>,
) -> EstimatorConfig {
    let lf = lifted_factors(plant, &b_z);
    EstimatorConfig {
        a_z: plant.abar() - &b_z * plant.cbar(),
        b_z,
        a_hat_h: lf.a_h,
        b_hat_h: lf.b_h,
        c_hat_h: lf.c_h,
        a_hat_d: lf.a_d,
        b_hat_d: lf.b_d,
        c_hat_d: lf.c_d,
        x0,
        r_e,
        mu_e,
        mu_d,
        mu_p,
    }
}

/// Grid over `μ̂_e` followed by golden-section refinement in `log μ̂_e`.
pub fn synthesize_estimator(
    plant: &UncertainPlant,
    cons: &Constraints,
    x0: &DMatrix<f64>,
    opts: &EstimatorOptions,
) -> Result<EstimatorConfig> {
    let base = cons.d_energy();
    if base == 0.0 {
        return synthesize_estimator_at(plant, cons, x0, 1.0, opts);
    }
    let mut best: Option<EstimatorConfig> = None;
    let mut last_err = None;
    let mut try_mu = |mu: f64, best: &mut Option<EstimatorConfig>| -> Option<f64> {
        match synthesize_estimator_at(plant, cons, x0, mu, opts) {
            Ok(c) => {
                let r = c.r_e;
                if best.as_ref().is_none_or(|b| r < b.r_e) {
                    *best = Some(c);
                }
                Some(r)
            }
            Err(e) => {
                last_err = Some(e);
                None
            }
        }
    };
    let mut grid: Vec<f64> = opts.mu_e_grid.iter().map(|g| g * base).collect();
    let mut scores: Vec<f64> = grid.iter().map(|&m| try_mu(m, &mut best).unwrap_or(f64::INFINITY)).collect();
    // Feasibility restoration: keep extending the grid upward by decades.
    let top = grid.iter().copied().fold(0.0, f64::max);
    for k in 1..=6 {
        if best.is_some() {
            break;
        }
        let m = top * 10f64.powi(k);
        grid.push(m);
        scores.push(try_mu(m, &mut best).unwrap_or(f64::INFINITY));
    }
    let Some(k) = (0..grid.len()).filter(|&i| scores[i].is_finite()).min_by(|&a, &b| scores[a].total_cmp(&scores[b])) else {
        return Err(last_err.unwrap_or_else(|| Error::Config("empty mu_e grid".into())));
    };
    if opts.refine_steps > 0 && grid.len() > 1 {
        let mut sorted = grid.clone();
        sorted.sort_by(f64::total_cmp);
        let pos = sorted.iter().position(|&g| g == grid[k]).expect("grid point");
        let lo = sorted[pos.saturating_sub(1)].ln();
        let hi = sorted[(pos + 1).min(sorted.len() - 1)].ln();
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = try_mu(c.exp(), &mut best).unwrap_or(f64::INFINITY);
        let mut fd = try_mu(d.exp(), &mut best).unwrap_or(f64::INFINITY);
        for _ in 0..opts.refine_steps {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = try_mu(c.exp(), &mut best).unwrap_or(f64::INFINITY);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = try_mu(d.exp(), &mut best).unwrap_or(f64::INFINITY);
            }
        }
    }
    Ok(best.expect("at least one grid point succeeded"))
}

impl EstimatorConfig {
    /// Recomputes the derived factors and checks that every `A_z` block is Hurwitz.
    pub fn check(&self, plant: &UncertainPlant) -> Result<()> {
        let n = plant.n();
        if self.b_z.shape() != (n, plant.n_y()) || self.x0.shape() != (n, n) {
            return Err(Error::Dimension("estimator gain or X_0 has the wrong shape".into()));
        }
        let fresh = build_config(
            plant,
            self.b_z.clone(),
            self.x0.clone(),
            self.r_e,
            self.mu_e,
            self.mu_d.clone(),
            self.mu_p.clone(),
        );
        let same = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.shape() == b.shape() && (a - b).amax() <= 1e-12 * (1.0 + b.amax());
        if !(same(&fresh.a_z, &self.a_z)
            && same(&fresh.a_hat_h, &self.a_hat_h)
            && same(&fresh.b_hat_h, &self.b_hat_h)
            && same(&fresh.c_hat_h, &self.c_hat_h)
            && same(&fresh.a_hat_d, &self.a_hat_d)
            && same(&fresh.b_hat_d, &self.b_hat_d)
            && same(&fresh.c_hat_d, &self.c_hat_d))
        {
            return Err(Error::Mismatch("estimator factors disagree with the plant and B_z".into()));
        }
        let mut off = 0;
        for (i, &k) in plant.indices.iter().enumerate() {
            let blk = self.a_z.view((off, off), (k, k)).into_owned();
            let re = blk.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            if !(re < 0.0) {
                return Err(Error::Recovery(format!("A_z block {} is not Hurwitz (max Re λ = {re:.3e})", i + 1)));
            }
            off += k;
        }
        if !(self.r_e.is_finite() && self.r_e >= 0.0) {
            return Err(Error::Recovery(format!("invalid r_e {}", self.r_e)));
        }
        Ok(())
    }

    /// Smallest relative margin of the stored error certificate: the dissipation block at
    /// decay `μ̂_e/r_e²`, and the energy budget `Σ μ_d d̄² ≤ μ̂_e`.
    pub fn certificate_margin(&self, plant: &UncertainPlant, cons: &Constraints) -> Result<f64> {
        let active = cons.active_d();
        if self.mu_d.len() != plant.n_d() || self.mu_p.len() != plant.n_theta() {
            return Err(Error::Dimension("estimator multipliers have the wrong length".into()));
        }
        let x0 = AffineExpr::constant(self.x0.clone());
        let x0_bz = AffineExpr::constant(&self.x0 * &self.b_z);
        if self.r_e == 0.0 && !active.is_empty() {
            return Ok(-1.0);
        }
        let lambda = if self.r_e > 0.0 { self.mu_e / (self.r_e * self.r_e) } else { 0.0 };
        let md = DMatrix::from_fn(active.len(), active.len(), |i, j| if i == j { self.mu_d[active[i]] } else { 0.0 });
        let mp = (!self.mu_p.is_empty()).then(|| AffineExpr::constant(DMatrix::from_diagonal(&DVector::from_column_slice(&self.mu_p))));
        let m = error_lmi(plant, &active, &x0, &x0_bz, &x0.scale(lambda), &AffineExpr::constant(md), mp)?.eval(&[]);
        let block = lmi::min_eigenvalue(&(-&m)) / m.norm().max(1.0);
        let energy: f64 = active.iter().map(|&i| self.mu_d[i] * cons.d_bar[i].powi(2)).sum();
        let budget = (self.mu_e - energy) / self.mu_e.max(1.0);
        Ok(block.min(budget))
    }

    pub fn n_h(&self) -> usize {
        self.a_hat_h.ncols()
    }

    pub fn n_theta(&self) -> usize {
        self.b_hat_h.ncols()
    }
}

/// Sensitivity filters, stored transposed: `eh_t[j] = E_h(j)ᵀ`, `eq_t[j] = E_q(j)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub eh_t: Vec<DMatrix<f64>>,
    pub eq_t: Vec<DMatrix<f64>>,
    pub t: f64,
}

impl FilterState {
    pub fn zeros(cfg: &EstimatorConfig) -> Self {
        let n = cfg.a_z.nrows();
        Self {
            eh_t: vec![DMatrix::zeros(n, n); cfg.n_h()],
            eq_t: vec![DMatrix::zeros(n, n); cfg.n_theta()],
            t: 0.0,
        }
    }

    pub fn flat_len(cfg: &EstimatorConfig) -> usize {
        let n = cfg.a_z.nrows();
        n * n * (cfg.n_h() + cfg.n_theta())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.eh_t.iter().chain(&self.eq_t).flat_map(|m| m.iter().copied()).collect()
    }

    pub fn from_flat(cfg: &EstimatorConfig, t: f64, v: &[f64]) -> Self {
        let n = cfg.a_z.nrows();
        let mut it = v.chunks_exact(n * n).map(|c| DMatrix::from_column_slice(n, n, c));
        let eh_t = it.by_ref().take(cfg.n_h()).collect();
        let eq_t = it.take(cfg.n_theta()).collect();
        Self { eh_t, eq_t, t }
    }
}

/// `Ė_h(j)ᵀ = A_z E_h(j)ᵀ + h_j I` and `Ė_q(j)ᵀ = A_z E_q(j)ᵀ + q̂_h(j) I` with `q̂_h = Ĉ_h h`,
/// written into `out` in the flat layout of [`FilterState::to_flat`].
pub fn filter_rate(cfg: &EstimatorConfig, flat: &[f64], h: &DVector<f64>, out: &mut [f64]) {
    let n = cfg.a_z.nrows();
    let nn = n * n;
    let q_hat = &cfg.c_hat_h * h;
    let drive = h.iter().chain(q_hat.iter());
    for ((src, dst), &u) in flat.chunks_exact(nn).zip(out.chunks_exact_mut(nn)).zip(drive) {
        let m = nalgebra::DMatrixView::from_slice(src, n, n);
        let mut r = &cfg.a_z * m;
        for i in 0..n {
            r[(i, i)] += u;
        }
        dst.copy_from_slice(r.as_slice());
    }
}

/// One RK4 step of the filters with `h = [u; y]` held over the step.
pub fn step_filters(state: &FilterState, cfg: &EstimatorConfig, h: &DVector<f64>, dt: f64) -> FilterState {
    let x = state.to_flat();
    let len = x.len();
    let rate = |v: &[f64]| {
        let mut o = vec![0.0; len];
        filter_rate(cfg, v, h, &mut o);
        o
    };
    let shift = |a: &[f64], k: &[f64], s: f64| a.iter().zip(k).map(|(a, k)| a + s * k).collect::<Vec<_>>();
    let k1 = rate(&x);
    let k2 = rate(&shift(&x, &k1, dt / 2.0));
    let k3 = rate(&shift(&x, &k2, dt / 2.0));
    let k4 = rate(&shift(&x, &k3, dt));
    let next: Vec<f64> = (0..len).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    FilterState::from_flat(cfg, state.t + dt, &next)
}

/// `x̄_p = Σ_j E_h(j)ᵀ Â_h(:, j)`.
pub fn nominal_state(state: &FilterState, cfg: &EstimatorConfig) -> DVector<f64> {
    let n = cfg.a_z.nrows();
    state
        .eh_t
        .iter()
        .enumerate()
        .fold(DVector::zeros(n), |acc, (j, f)| acc + f * cfg.a_hat_h.column(j))
}

/// `φ = Σ_j ‖E_q(j)ᵀ B̂_h(:, j)‖²`.
pub fn phi(state: &FilterState, cfg: &EstimatorConfig) -> f64 {
    state
        .eq_t
        .iter()
        .enumerate()
        .map(|(j, g)| (g * cfg.b_hat_h.column(j)).norm_squared())
        .sum()
}

/// Smallest `r̃_p` with `r̃_p² I − n_θ φ X_0 ⪰ 0`.
pub fn parameter_radius(n_theta: usize, phi: f64, x0: &DMatrix<f64>) -> f64 {
    let lmax = x0.clone().symmetric_eigenvalues().max();
    (n_theta as f64 * phi * lmax).max(0.0).sqrt()
}

/// How `r̄_CL` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundEval {
    /// Exact simplex minimization.
    #[default]
    Exact,
    /// Minimum over the interpolated pool (never below the exact value).
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub r_cl: f64,
    pub r_p: f64,
    pub r_e: f64,
    pub total: f64,
    pub phi: f64,
    /// Minimizing weights for `r̄_CL`; empty for interpolated evaluation.
    pub gamma: Vec<f64>,
}

/// `B̄_C = r̄_CL + r̃_p + r_e` at the current filter state and controller state `x_k`.
/// `warm` seeds the exact simplex search with a previous `γ⋆`.
pub fn compute_bound(
    state: &FilterState,
    cfg: &EstimatorConfig,
    composite: &CompositeBarrier,
    x_k: &DVector<f64>,
    mode: BoundEval,
    warm: Option<&[f64]>,
) -> Result<BoundBreakdown> {
    if composite.x0.shape() != cfg.x0.shape() || (&composite.x0 - &cfg.x0).amax() > 1e-12 * cfg.x0.amax().max(1.0) {
        return Err(Error::Mismatch("estimator and composite barrier use different X_0".into()));
    }
    let xp = nominal_state(state, cfg);
    let n = xp.len();
    let mut x_cl = DVector::zeros(2 * n);
    x_cl.rows_mut(0, n).copy_from(&xp);
    x_cl.rows_mut(n, n).copy_from(x_k);
    let (r_cl, gamma) = match mode {
        BoundEval::Exact => match warm {
            Some(g) => composite.eval_from(&x_cl, g),
            None => composite.eval(&x_cl),
        },
        BoundEval::Interpolated => (composite.eval_interpolated(&x_cl), Vec::new()),
    };
    let phi = phi(state, cfg);
    let r_p = parameter_radius(cfg.n_theta(), phi, &cfg.x0);
    Ok(BoundBreakdown {
        r_cl,
        r_p,
        r_e: cfg.r_e,
        total: r_cl + r_p + cfg.r_e,
        phi,
        gamma,
    })
}
