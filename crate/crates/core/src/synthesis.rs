//! Barrier-pair synthesis: the linearized invariance LMI, state/input limit LMIs,
//! volume maximization and controller recovery.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{self, AffineBlock, AffineExpr, MatrixVariable, MaxDetProgram, Sense, SolveStatus, SolverOptions};
use crate::model::{assemble_closed_loop, put, ClosedLoop, Constraints, Controller, UncertainPlant};

/// Scalars fixed before the synthesis LMI becomes linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisScalars {
    /// Residue level, `0 < ε < 1`.
    pub eps: f64,
    pub mu_cl: f64,
    /// One multiplier per closed-loop uncertainty channel (`Θ_h` then `Θ_c` cover).
    pub mu_p: Vec<f64>,
}

impl SynthesisScalars {
    pub fn new(plant: &UncertainPlant, eps: f64, mu_cl: f64) -> Self {
        Self {
            eps,
            mu_cl,
            mu_p: vec![1.0; plant.n_theta_h() + plant.n_theta_c()],
        }
    }

    pub fn validate(&self, plant: &UncertainPlant) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Config(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.mu_cl > 0.0 && self.mu_cl.is_finite()) {
            return Err(Error::Config("mu_cl must be positive".into()));
        }
        let np = plant.n_theta_h() + plant.n_theta_c();
        if self.mu_p.len() != np {
            return Err(Error::Config(format!("expected {np} mu_p values, got {}", self.mu_p.len())));
        }
        if self.mu_p.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Config("mu_p values must be positive".into()));
        }
        Ok(())
    }

    pub fn m_p(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.mu_p))
    }
}

/// A barrier function `‖x‖_P` with its safety controller and certificate multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierPair {
    pub controller: Controller,
    #[serde(with = "crate::serde_mat")]
    pub p: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub x: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub y: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub v: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub w: DMatrix<f64>,
    pub scalars: SynthesisScalars,
    /// Disturbance multipliers over all `n_d` channels (zero for absent channels).
    pub mu_d: Vec<f64>,
    pub logdet_y: f64,
}

impl BarrierPair {
    /// `Q = P⁻¹`; panics if `P` is not positive definite, see [`Self::try_q`].
    pub fn q(&self) -> DMatrix<f64> {
        self.try_q().expect("P is positive definite")
    }

    pub fn try_q(&self) -> Result<DMatrix<f64>> {
        sym_inverse(&self.p).ok_or_else(|| Error::Verification("P is not positive definite".into()))
    }
}

pub(crate) fn sym_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

/// Decision variables of the synthesis program.
#[derive(Debug, Clone)]
pub struct SynthesisVars {
    pub x: MatrixVariable,
    pub y: MatrixVariable,
    pub e: MatrixVariable,
    pub f: MatrixVariable,
    pub g: MatrixVariable,
    /// Multipliers of the active (non-zero bound) disturbance channels.
    pub m_d: MatrixVariable,
    pub active_d: Vec<usize>,
}

fn column_selector(n: usize, cols: &[usize]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, cols.len());
    for (k, &c) in cols.iter().enumerate() {
        s[(c, k)] = 1.0;
    }
    s
}

fn c(m: DMatrix<f64>) -> Option<AffineExpr> {
    Some(AffineExpr::constant(m))
}

/// The linearized invariance condition as an NSD-strict block in
/// `(X, Y, E, F, G, M_d)` at fixed `μ_CL`, `μ_p`, `ε`.
pub fn assemble_invariance_lmi(
    plant: &UncertainPlant,
    scalars: &SynthesisScalars,
    vars: &SynthesisVars,
) -> Result<AffineBlock> {
    scalars.validate(plant)?;
    let (n, n_y, n_d) = (plant.n(), plant.n_y(), plant.n_d());
    let (nh, nc) = (plant.n_theta_h(), plant.n_theta_c());
    let np = nh + nc;
    let ap = plant.a_p();
    let ac_cbar = &plant.a_c * plant.cbar();
    let (x, y, e, f, g) = (vars.x.expr(), vars.y.expr(), vars.e.expr(), vars.f.expr(), vars.g.expr());

    let m11 = &(&ap * &y) + &(&plant.a_u * &g);
    let m22 = &(&x * &ap) + &(&f * &ac_cbar);
    let core = AffineExpr::blocks(&[vec![Some(m11), c(ap.clone())], vec![Some(e), Some(m22)]])?.he();
    let coupling = AffineExpr::sym_blocks(&[vec![Some(y.clone())], vec![c(DMatrix::identity(n, n)), Some(x.clone())]])?;
    let omega_a = &core + &coupling.scale(scalars.mu_cl / (scalars.eps * scalars.eps));

    let b_d = AffineExpr::blocks(&[
        vec![c(DMatrix::identity(n, n)), c(DMatrix::zeros(n, n_y))],
        vec![Some(x.clone()), Some(f.clone())],
    ])?
    .right_mul(&column_selector(n_d, &vars.active_d));
    let ay_bc = &plant.a_y * &plant.b_c;
    let b_p = AffineExpr::blocks(&[
        vec![c(plant.b_h.clone()), c(ay_bc.clone())],
        vec![Some(&x * &plant.b_h), Some(&(&f * &plant.b_c) + &(&x * &ay_bc))],
    ])?;
    let omega_b = AffineExpr::blocks(&[vec![Some(b_d), Some(b_p)]])?;

    let cy_ac_cbar = &plant.c_y * &ac_cbar;
    let cc_cbar = &plant.c_c * plant.cbar();
    let omega_c = AffineExpr::blocks(&[
        vec![Some(&(&plant.c_u * &g) + &(&cy_ac_cbar * &y)), c(cy_ac_cbar.clone())],
        vec![Some(&cc_cbar * &y), c(cc_cbar)],
    ])?;

    let m_p = scalars.m_p();
    let mut d_p = DMatrix::zeros(np, np);
    put(&mut d_p, 0, nh, &(&plant.c_y * &plant.b_c));
    let nda = vars.active_d.len();
    let mut d_row = DMatrix::zeros(np, nda + np);
    put(&mut d_row, 0, nda, &(&m_p * &d_p));

    let mult = AffineExpr::block_diag(&[-vars.m_d.expr(), AffineExpr::constant(-&m_p)])?;
    let lmi = AffineExpr::sym_blocks(&[
        vec![Some(omega_a)],
        vec![Some(omega_b.transpose()), Some(mult)],
        vec![Some(omega_c.left_mul(&m_p)), c(d_row), c(-&m_p)],
    ])?;
    Ok(AffineBlock::new("invariance", lmi, Sense::NsdStrict)?)
}

/// `1 − f_iᵀ Y f_i ≥ 0` per state limit and
/// `[[Y, ⋆, ⋆], [I, X, ⋆], [G⁽ⁱ⁾, 0, ū_i²]] ⪰ 0` per input.
pub fn assemble_limit_lmis(
    plant: &UncertainPlant,
    cons: &Constraints,
    vars: &SynthesisVars,
) -> Result<Vec<AffineBlock>> {
    cons.validate(plant)?;
    let n = plant.n();
    let y = vars.y.expr();
    let x = vars.x.expr();
    let g = vars.g.expr();
    let mut out = Vec::new();
    for i in 0..cons.n_s() {
        let fi = cons.f.rows(i, 1).transpose();
        let quad = &(&fi.transpose() * &y) * &fi;
        out.push(AffineBlock::new(
            format!("state limit {}", i + 1),
            &AffineExpr::scalar(1.0) - &quad,
            Sense::Psd,
        )?);
    }
    for i in 0..plant.n_u() {
        let m = AffineExpr::sym_blocks(&[
            vec![Some(y.clone())],
            vec![c(DMatrix::identity(n, n)), Some(x.clone())],
            vec![Some(g.row(i)), c(DMatrix::zeros(1, n)), Some(AffineExpr::scalar(cons.u_bar[i].powi(2)))],
        ])?;
        out.push(AffineBlock::new(format!("input limit {}", i + 1), m, Sense::Psd)?);
    }
    Ok(out)
}

/// The full volume-maximization program.
pub fn build_program(
    plant: &UncertainPlant,
    cons: &Constraints,
    scalars: &SynthesisScalars,
    opts: &SynthesisOptions,
) -> Result<(MaxDetProgram, SynthesisVars)> {
    scalars.validate(plant)?;
    cons.validate(plant)?;
    let (n, n_y, n_u) = (plant.n(), plant.n_y(), plant.n_u());
    let active_d = cons.active_d();
    if active_d.is_empty() {
        return Err(Error::Config("at least one disturbance bound must be positive".into()));
    }
    let mut p = MaxDetProgram::new();
    let vars = SynthesisVars {
        x: p.symmetric("X", n)?,
        y: p.symmetric("Y", n)?,
        e: p.full("E", n, n)?,
        f: p.full("F", n, n_y)?,
        g: p.full("G", n_u, n)?,
        m_d: p.diagonal("M_d", active_d.len())?,
        active_d,
    };
    p.add_block(assemble_invariance_lmi(plant, scalars, &vars)?)?;
    for b in assemble_limit_lmis(plant, cons, &vars)? {
        p.add_block(b)?;
    }
    let coupling = AffineExpr::sym_blocks(&[
        vec![Some(vars.y.expr())],
        vec![c(DMatrix::identity(n, n)), Some(vars.x.expr())],
    ])?;
    p.psd_strict("coupling", coupling)?;
    p.psd_strict("X", vars.x.expr())?;
    p.psd_strict("Y", vars.y.expr())?;
    p.nonnegative_diagonal("M_d", &vars.m_d)?;
    let mut energy = AffineExpr::scalar(0.0);
    for (k, &i) in vars.active_d.iter().enumerate() {
        energy = &energy + &vars.m_d.scalar_expr(k).scale(cons.d_bar[i].powi(2));
    }
    p.equal(&energy, scalars.mu_cl)?;
    if let Some(cap) = opts.x_cap {
        p.psd("X cap", &AffineExpr::constant(DMatrix::identity(n, n) * cap) - &vars.x.expr())?;
    }
    p.maximize_logdet(vars.y.expr(), 1.0)?;
    Ok((p, vars))
}

/// Symmetric PSD square root.
pub(crate) fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = ((m + m.transpose()) * 0.5).symmetric_eigen();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Controller and `P` from a solution `(X, Y, E, F, G)` with `VVᵀ = X − Y⁻¹`, `W = −YV`.
pub fn recover_controller(
    plant: &UncertainPlant,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<(Controller, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = plant.n();
    let y_inv = sym_inverse(y).ok_or_else(|| Error::Recovery("Y is not positive definite".into()))?;
    let gap = x - &y_inv;
    let lmin = lmi::min_eigenvalue(&gap);
    if lmin <= 0.0 {
        return Err(Error::Recovery(format!("X - Y^-1 is not positive definite (min eig {lmin:.3e})")));
    }
    let v = sym_sqrt(&gap);
    let w = -(y * &v);
    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Recovery("V is singular".into()))?;
    let wt_inv = w
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Recovery("W is singular".into()))?;
    let ac_cbar = &plant.a_c * plant.cbar();
    let inner = e - f * &ac_cbar * y - x * &plant.a_u * g - x * plant.a_p() * y;
    let k = Controller {
        a_k: &v_inv * inner * &wt_inv,
        b_k: &v_inv * f,
        c_k: g * &wt_inv,
    };
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    put(&mut p, 0, 0, x);
    put(&mut p, 0, n, &v);
    put(&mut p, n, 0, &v.transpose());
    put(&mut p, n, n, &DMatrix::identity(n, n));
    Ok((k, p, v, w))
}

/// The barrier condition at a fixed `P` and controller:
/// `[[A_CLᵀP + PA_CL + (μ_CL/ε²)P, ⋆, ⋆], [B_CLᵀP, −diag(M_d, M_p), ⋆], [M_pC_CL, M_pD_CL, −M_p]]`
/// restricted to the disturbance channels in `active_d`.
pub fn barrier_condition(
    cl: &ClosedLoop,
    p: &DMatrix<f64>,
    mu_d: &[f64],
    active_d: &[usize],
    scalars: &SynthesisScalars,
) -> DMatrix<f64> {
    let n2 = 2 * cl.n;
    let np = cl.n_theta();
    let nda = active_d.len();
    let mut cols: Vec<usize> = active_d.to_vec();
    cols.extend(cl.n_d..cl.n_d + np);
    let sel = column_selector(cl.n_d + np, &cols);
    let b = &cl.b * &sel;
    let dcl = &cl.d * &sel;
    let m_p = scalars.m_p();
    let mut mult = DMatrix::zeros(nda + np, nda + np);
    for (k, &i) in active_d.iter().enumerate() {
        mult[(k, k)] = mu_d[i];
    }
    put(&mut mult, nda, nda, &m_p);
    let dim = n2 + nda + 2 * np;
    let mut m = DMatrix::zeros(dim, dim);
    let a11 = cl.a.transpose() * p + p * &cl.a + p * (scalars.mu_cl / scalars.eps.powi(2));
    put(&mut m, 0, 0, &a11);
    let btp = b.transpose() * p;
    put(&mut m, n2, 0, &btp);
    put(&mut m, 0, n2, &btp.transpose());
    put(&mut m, n2, n2, &(-mult));
    let mc = &m_p * &cl.c;
    put(&mut m, n2 + nda + np, 0, &mc);
    put(&mut m, 0, n2 + nda + np, &mc.transpose());
    let md = &m_p * dcl;
    put(&mut m, n2 + nda + np, n2, &md);
    put(&mut m, n2, n2 + nda + np, &md.transpose());
    put(&mut m, n2 + nda + np, n2 + nda + np, &(-&m_p));
    (&m + m.transpose()) * 0.5
}

/// Margins (non-negative means satisfied) of the fixed-`P` certificates: the barrier
/// condition, each state limit `f_iᵀ S_p Q S_pᵀ f_i ≤ 1`, and each input limit
/// `[[P, ⋆], [C_k⁽ⁱ⁾ S_k, ū_i²]] ⪰ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateMargins {
    pub invariance: f64,
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    /// Frobenius norm of the barrier-condition matrix, the scale for tolerances.
    pub scale: f64,
}

impl CertificateMargins {
    pub fn worst_relative(&self) -> f64 {
        let inv = self.invariance / self.scale.max(1.0);
        self.state.iter().chain(&self.input).copied().fold(inv, f64::min)
    }
}

pub fn certificate_margins(plant: &UncertainPlant, cons: &Constraints, pair: &BarrierPair) -> Result<CertificateMargins> {
    let cl = assemble_closed_loop(plant, &pair.controller)?;
    let active = cons.active_d();
    let m = barrier_condition(&cl, &pair.p, &pair.mu_d, &active, &pair.scalars);
    let scale = m.norm();
    let block = AffineBlock::new("invariance", AffineExpr::constant(m), Sense::NsdStrict)?;
    let invariance = lmi::check_point(&[block], &[])?[0];
    let q = pair.try_q()?;
    let n = plant.n();
    let yq = q.view((0, 0), (n, n)).into_owned();
    let state = (0..cons.n_s())
        .map(|i| {
            let f = cons.f.row(i);
            1.0 - (f * &yq * f.transpose())[0]
        })
        .collect();
    let input = (0..plant.n_u())
        .map(|i| {
            let mut m = DMatrix::zeros(2 * n + 1, 2 * n + 1);
            put(&mut m, 0, 0, &pair.p);
            let row = pair.controller.c_k.rows(i, 1).into_owned();
            put(&mut m, 2 * n, n, &row);
            put(&mut m, n, 2 * n, &row.transpose());
            m[(2 * n, 2 * n)] = cons.u_bar[i].powi(2);
            lmi::min_eigenvalue(&m) / cons.u_bar[i].powi(2).max(1.0)
        })
        .collect();
    Ok(CertificateMargins {
        invariance,
        state,
        input,
        scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub solver: SolverOptions,
    /// Accepted relative certificate defect after recovery.
    pub verify_tol: f64,
    /// Optional cap `X ⪯ x_cap·I`.
    pub x_cap: Option<f64>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            verify_tol: 1e-6,
            x_cap: None,
        }
    }
}

/// Raw solution of the synthesis program before recovery.
#[derive(Debug, Clone)]
pub struct SynthesisSolution {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub mu_d: Vec<f64>,
    pub logdet_y: f64,
    /// Full decision vector, for reading any extra variables.
    pub point: Vec<f64>,
}

pub fn solve_program(
    plant: &UncertainPlant,
    cons: &Constraints,
    scalars: &SynthesisScalars,
    opts: &SynthesisOptions,
) -> Result<SynthesisSolution> {
    let (prog, vars) = build_program(plant, cons, scalars, opts)?;
    solve_built(plant, &prog, &vars, opts)
}

/// Solves a program produced by [`build_program`], possibly with extra constraints added.
pub fn solve_built(
    plant: &UncertainPlant,
    prog: &MaxDetProgram,
    vars: &SynthesisVars,
    opts: &SynthesisOptions,
) -> Result<SynthesisSolution> {
    let rep = lmi::solve(prog, &opts.solver)?;
    match rep.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(Error::Infeasible {
                family: rep.binding.unwrap_or_else(|| "unknown".into()),
            })
        }
        SolveStatus::MaxIterations => {
            return Err(Error::NotConverged(format!("synthesis stopped after {} iterations", rep.iterations)))
        }
    }
    let z = &rep.point;
    let md = vars.m_d.unpack(z);
    let mut mu_d = vec![0.0; plant.n_d()];
    for (k, &i) in vars.active_d.iter().enumerate() {
        mu_d[i] = md[(k, k)];
    }
    let y = vars.y.unpack(z);
    let logdet_y = lmi::logdet(&y).unwrap_or(f64::NEG_INFINITY);
    Ok(SynthesisSolution {
        x: vars.x.unpack(z),
        y,
        e: vars.e.unpack(z),
        f: vars.f.unpack(z),
        g: vars.g.unpack(z),
        mu_d,
        logdet_y,
        point: rep.point,
    })
}

/// Maximizes `logdet Y` and recovers a verified barrier pair.
pub fn synthesize(
    plant: &UncertainPlant,
    cons: &Constraints,
    scalars: &SynthesisScalars,
    opts: &SynthesisOptions,
) -> Result<BarrierPair> {
    let sol = solve_program(plant, cons, scalars, opts)?;
    recover_pair(plant, cons, scalars, sol, opts)
}

/// Controller recovery followed by the fixed-`P` certificate check.
pub fn recover_pair(
    plant: &UncertainPlant,
    cons: &Constraints,
    scalars: &SynthesisScalars,
    sol: SynthesisSolution,
    opts: &SynthesisOptions,
) -> Result<BarrierPair> {
    let (controller, p, v, w) = recover_controller(plant, &sol.x, &sol.y, &sol.e, &sol.f, &sol.g)?;
    let pair = BarrierPair {
        controller,
        p,
        x: sol.x,
        y: sol.y,
        v,
        w,
        scalars: scalars.clone(),
        mu_d: sol.mu_d,
        logdet_y: sol.logdet_y,
    };
    let margins = certificate_margins(plant, cons, &pair)?;
    if margins.worst_relative() < -opts.verify_tol {
        return Err(Error::Verification(format!(
            "recovered certificate violated: invariance {:.3e} (scale {:.3e}), state {:?}, input {:?}",
            margins.invariance, margins.scale, margins.state, margins.input
        )));
    }
    Ok(pair)
}

/// Coordinate search over log-spaced `μ_CL` and `μ_p` maximizing `logdet Y`.
/// `budget` caps the number of synthesis solves. Deterministic.
pub fn tune_multipliers(
    plant: &UncertainPlant,
    cons: &Constraints,
    init: &SynthesisScalars,
    budget: usize,
    opts: &SynthesisOptions,
) -> Result<(SynthesisScalars, f64)> {
    init.validate(plant)?;
    let mut used = 0;
    let eval = |s: &SynthesisScalars, used: &mut usize| -> Option<f64> {
        *used += 1;
        solve_program(plant, cons, s, opts).ok().map(|r| r.logdet_y)
    };
    let mut best = init.clone();
    let mut best_val = eval(&best, &mut used);
    // Feasibility restoration over μ_CL.
    if best_val.is_none() {
        for k in -6..=4 {
            if used >= budget {
                break;
            }
            let mut s = init.clone();
            s.mu_cl = 10f64.powi(k);
            if let Some(v) = eval(&s, &mut used) {
                best = s;
                best_val = Some(v);
                break;
            }
        }
    }
    let Some(mut best_val) = best_val else {
        return Err(Error::Infeasible {
            family: "no feasible multipliers within budget".into(),
        });
    };
    let ncoord = 1 + best.mu_p.len();
    let mut step = vec![4.0f64; ncoord];
    'outer: while used < budget {
        let mut improved = false;
        for c in 0..ncoord {
            for dir in [1.0, -1.0] {
                if used >= budget {
                    break 'outer;
                }
                let mut s = best.clone();
                let factor = step[c].powf(dir);
                if c == 0 {
                    s.mu_cl *= factor;
                } else {
                    s.mu_p[c - 1] *= factor;
                }
                if let Some(v) = eval(&s, &mut used) {
                    if v > best_val + 1e-9 * best_val.abs().max(1.0) {
                        best = s;
                        best_val = v;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            let mut any = false;
            for s in step.iter_mut() {
                *s = s.sqrt();
                any |= *s > 1.05;
            }
            if !any {
                break;
            }
        }
    }
    Ok((best, best_val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{examples, PlantParts};

    fn scalar_stable_plant() -> (UncertainPlant, Constraints) {
        // ẋ = −x + u + w, y = x.
        let plant = UncertainPlant::from_parts(PlantParts {
            indices: vec![1],
            a_u: DMatrix::from_element(1, 1, 1.0),
            a_y: DMatrix::from_element(1, 1, -1.0),
            a_a: DMatrix::identity(1, 1),
            ..Default::default()
        })
        .unwrap();
        let cons = Constraints {
            f: DMatrix::from_element(1, 1, 0.5),
            u_bar: vec![100.0],
            d_bar: vec![0.01, 0.0],
        };
        (plant, cons)
    }

    #[test]
    fn uncertainty_free_third_block_is_minus_mp() {
        let (plant, cons) = scalar_stable_plant();
        let s = SynthesisScalars::new(&plant, 0.5, 1.0);
        let (_, vars) = build_program(&plant, &cons, &s, &SynthesisOptions::default()).unwrap();
        let b = assemble_invariance_lmi(&plant, &s, &vars).unwrap();
        // n_θ = 0: the block is just [[Ω_A, ⋆], [Ω_Bᵀ, −M_d]].
        assert_eq!(b.dim(), 2 + vars.active_d.len());
    }

    #[test]
    fn omega_a_corner_at_unit_point() {
        let (plant, cons) = examples::pendulum();
        let s = SynthesisScalars::new(&plant, 0.8, 0.3);
        let (prog, vars) = build_program(&plant, &cons, &s, &SynthesisOptions::default()).unwrap();
        let mut z = vec![0.0; prog.n_scalars()];
        vars.y.pack(&DMatrix::identity(2, 2), &mut z).unwrap();
        let b = assemble_invariance_lmi(&plant, &s, &vars).unwrap();
        let m = b.expr.eval(&z);
        let ap = plant.a_p();
        let expected = &ap + ap.transpose() + DMatrix::identity(2, 2) * (0.3 / 0.64);
        assert!((m.view((0, 0), (2, 2)) - expected).amax() < 1e-14);
    }

    #[test]
    fn limit_lmi_values() {
        let (plant, cons) = examples::pendulum();
        let s = SynthesisScalars::new(&plant, 0.8, 0.3);
        let (prog, vars) = build_program(&plant, &cons, &s, &SynthesisOptions::default()).unwrap();
        let blocks = assemble_limit_lmis(&plant, &cons, &vars).unwrap();
        let mut z = vec![0.0; prog.n_scalars()];
        // f = e₂ scaled by 2 in the pendulum; use Y = I/4 so f₁ᵀYf₁ = 1 (active).
        vars.y.pack(&(DMatrix::identity(2, 2) * 0.25), &mut z).unwrap();
        let m = lmi::check_point(&blocks, &z).unwrap();
        assert!(m[0].abs() < 1e-15);
        // Input block at G = 0 is [[Y, I], [I, X]] padded with ū² = 9.
        vars.y.pack(&DMatrix::identity(2, 2), &mut z).unwrap();
        vars.x.pack(&(DMatrix::identity(2, 2) * 2.0), &mut z).unwrap();
        let full = blocks[2].expr.eval(&z);
        assert_eq!(full[(4, 4)], 9.0);
        assert_eq!(full[(0, 2)], 1.0);
        // Violated case Y = 4I against f = e₁.
        let e1 = Constraints {
            f: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            ..cons.clone()
        };
        let blocks = assemble_limit_lmis(&plant, &e1, &vars).unwrap();
        vars.y.pack(&(DMatrix::identity(2, 2) * 4.0), &mut z).unwrap();
        assert!((lmi::check_point(&blocks[..1], &z).unwrap()[0] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_plant_reaches_limit() {
        let (plant, cons) = scalar_stable_plant();
        let s = SynthesisScalars::new(&plant, 0.5, 0.5);
        let pair = synthesize(&plant, &cons, &s, &SynthesisOptions::default()).unwrap();
        // Loose limits: the state limit |0.5 x| ≤ 1 caps Y at 1/f² = 4.
        assert!((pair.y[(0, 0)] - 4.0).abs() < 1e-4, "{}", pair.y);
    }

    #[test]
    fn pendulum_pair_recovers_partition() {
        let (plant, cons) = examples::pendulum();
        let s = SynthesisScalars::new(&plant, 0.8, 0.3);
        let pair = synthesize(&plant, &cons, &s, &SynthesisOptions::default()).unwrap();
        let n = 2;
        let q = pair.q();
        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / b.amax().max(1.0);
        assert!(rel(&pair.p.view((0, 0), (n, n)).into_owned(), &pair.x) < 1e-12);
        assert!(rel(&q.view((0, 0), (n, n)).into_owned(), &pair.y) < 1e-6);
        let vwt = &pair.v * pair.w.transpose();
        let target = DMatrix::identity(n, n) - &pair.x * &pair.y;
        assert!(rel(&vwt, &target) < 1e-6);
        let m = certificate_margins(&plant, &cons, &pair).unwrap();
        assert!(m.invariance >= -1e-6 * m.scale);
    }

    #[test]
    fn congruence_matches_transformed_lmi() {
        let (plant, cons) = examples::pendulum();
        let s = SynthesisScalars::new(&plant, 0.8, 0.3);
        let (prog, vars) = build_program(&plant, &cons, &s, &SynthesisOptions::default()).unwrap();
        let sol = solve_program(&plant, &cons, &s, &SynthesisOptions::default()).unwrap();
        let (k, p, v, w) = recover_controller(&plant, &sol.x, &sol.y, &sol.e, &sol.f, &sol.g).unwrap();
        let n = plant.n();
        let cl = assemble_closed_loop(&plant, &k).unwrap();
        let active = cons.active_d();
        let m0 = barrier_condition(&cl, &p, &sol.mu_d, &active, &s);
        // Π₂ = [[Y, I], [Wᵀ, 0]], with Π₁ = PΠ₂ = [[I, X], [0, Vᵀ]].
        let mut pi2 = DMatrix::zeros(2 * n, 2 * n);
        put(&mut pi2, 0, 0, &sol.y);
        put(&mut pi2, 0, n, &DMatrix::identity(n, n));
        put(&mut pi2, n, 0, &w.transpose());
        let mut pi1 = DMatrix::zeros(2 * n, 2 * n);
        put(&mut pi1, 0, 0, &DMatrix::identity(n, n));
        put(&mut pi1, 0, n, &sol.x);
        put(&mut pi1, n, n, &v.transpose());
        assert!((&p * &pi2 - &pi1).amax() < 1e-8 * pi1.amax());
        let dim = m0.nrows();
        let mut t = DMatrix::identity(dim, dim);
        put(&mut t, 0, 0, &pi2);
        let transformed = t.transpose() * &m0 * &t;
        let mut z = vec![0.0; prog.n_scalars()];
        vars.x.pack(&sol.x, &mut z).unwrap();
        vars.y.pack(&sol.y, &mut z).unwrap();
        vars.e.pack(&sol.e, &mut z).unwrap();
        vars.f.pack(&sol.f, &mut z).unwrap();
        vars.g.pack(&sol.g, &mut z).unwrap();
        let md = DMatrix::from_diagonal(&DVector::from_iterator(active.len(), active.iter().map(|&i| sol.mu_d[i])));
        vars.m_d.pack(&md, &mut z).unwrap();
        let direct = assemble_invariance_lmi(&plant, &s, &vars).unwrap().expr.eval(&z);
        let err = (&transformed - &direct).amax() / direct.amax();
        assert!(err < 1e-8, "relative congruence error {err:.3e}");
    }

    #[test]
    fn smaller_disturbance_never_shrinks_volume() {
        let (plant, cons) = examples::pendulum();
        let s = SynthesisScalars::new(&plant, 0.8, 0.3);
        let opts = SynthesisOptions::default();
        let base = solve_program(&plant, &cons, &s, &opts).unwrap().logdet_y;
        let mut half = cons.clone();
        half.d_bar[0] *= 0.5;
        let smaller = solve_program(&plant, &half, &s, &opts).unwrap().logdet_y;
        assert!(smaller >= base - 1e-6 * base.abs().max(1.0), "{smaller} < {base}");
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let (plant, cons) = examples::pendulum();
        let s = SynthesisScalars::new(&plant, 1.5, 0.3);
        assert!(matches!(build_program(&plant, &cons, &s, &SynthesisOptions::default()), Err(Error::Config(_))));
    }
}
