//! Primal log-barrier path following with a phase-I feasibility search.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::expr::AffineExpr;
use super::program::{logdet, AffineBlock, LinearEquality, MaxDetProgram, Sense};
use super::LmiError;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverOptions {
    /// Relative duality-gap target for phase II.
    pub tol: f64,
    /// Budget on Newton steps across both phases.
    pub max_iter: usize,
    /// Strict blocks are enforced as `⪯ −τI` (or `⪰ τI`) with
    /// `τ = tau_rel · max‖constant part‖_F`.
    pub tau_rel: f64,
    /// Every decision scalar is confined to `[−bound, bound]`.
    pub bound: f64,
    /// Barrier parameter growth factor.
    pub mu: f64,
    /// Phase-I optimum above `−feas_tol` is reported as infeasible.
    pub feas_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            tau_rel: 1e-7,
            bound: 1e6,
            mu: 10.0,
            feas_tol: 1e-9,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<(), LmiError> {
        let ok = self.tol > 0.0
            && self.max_iter > 0
            && self.tau_rel >= 0.0
            && self.bound.is_finite()
            && self.bound > 0.0
            && self.mu > 1.0
            && self.feas_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LmiError::Options(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub point: Vec<f64>,
    pub objective: f64,
    /// Raw margins (see [`AffineBlock::margin`]), one per program block.
    pub block_margins: Vec<f64>,
    pub iterations: usize,
    /// Absolute strict-inequality margin that was enforced.
    pub tau: f64,
    /// Final duality-gap bound of phase II.
    pub gap: f64,
    /// For infeasible programs: label of the block carrying the largest dual weight.
    pub binding: Option<String>,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Raw margins of `blocks` at `z`.
pub fn check_point(blocks: &[AffineBlock], z: &[f64]) -> Result<Vec<f64>, LmiError> {
    for b in blocks {
        if let Some(k) = b.expr.max_index() {
            if k >= z.len() {
                return Err(LmiError::Dimension(format!(
                    "block {} needs scalar {k}, point has {}",
                    b.label,
                    z.len()
                )));
            }
        }
    }
    Ok(blocks.iter().map(|b| b.margin(z)).collect())
}

/// `G(y) = c0 + Σ y_j C_j`, dense.
#[derive(Debug, Clone)]
struct Lmi {
    c0: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl Lmi {
    fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.c0.clone();
        for (j, c) in &self.terms {
            if y[*j] != 0.0 {
                add_scaled(&mut m, y[*j], c);
            }
        }
        m
    }

    fn dim(&self) -> usize {
        self.c0.nrows()
    }
}

/// `a + b·y ≥ 0`
#[derive(Debug, Clone)]
struct Lin {
    a: f64,
    b: Vec<(usize, f64)>,
}

impl Lin {
    fn eval(&self, y: &DVector<f64>) -> f64 {
        self.a + self.b.iter().map(|(j, v)| v * y[*j]).sum::<f64>()
    }
}

/// Where an internal constraint came from, for infeasibility attribution.
#[derive(Debug, Clone, Copy)]
enum Origin {
    Block(usize),
    Bound,
    Internal,
}

/// `t·(c·y − w·logdet G0(y)) − Σ logdet G_k(y) − Σ log(a_l + b_l·y)`
struct Barrier {
    nvar: usize,
    lmis: Vec<(Lmi, Origin)>,
    lins: Vec<(Lin, Origin)>,
    c: DVector<f64>,
    logdet: Option<(f64, Lmi)>,
}

struct Derivs {
    g: DVector<f64>,
    h: DMatrix<f64>,
}

impl Barrier {
    fn degree(&self) -> f64 {
        (self.lmis.iter().map(|(l, _)| l.dim()).sum::<usize>() + self.lins.len()) as f64
    }

    fn value(&self, y: &DVector<f64>, t: f64) -> Option<f64> {
        let mut v = t * self.c.dot(y);
        for (l, _) in &self.lmis {
            v -= logdet(&l.eval(y))?;
        }
        for (l, _) in &self.lins {
            let s = l.eval(y);
            if s <= 0.0 || !s.is_finite() {
                return None;
            }
            v -= s.ln();
        }
        if let Some((w, g0)) = &self.logdet {
            let ld = logdet(&g0.eval(y))?;
            v -= t * w * ld;
        }
        v.is_finite().then_some(v)
    }

    fn accumulate_lmi(l: &Lmi, weight: f64, y: &DVector<f64>, d: &mut Derivs) -> Option<()> {
        let g = l.eval(y);
        let chol = g.cholesky()?;
        let lo = chol.l();
        let mut ks = Vec::with_capacity(l.terms.len());
        for (j, c) in &l.terms {
            let m = lo.solve_lower_triangular(c)?;
            let k = lo.solve_lower_triangular(&m.transpose())?;
            d.g[*j] -= weight * k.trace();
            ks.push((*j, k));
        }
        for a in 0..ks.len() {
            for b in a..ks.len() {
                let v = weight * ks[a].1.dot(&ks[b].1);
                let (i, j) = (ks[a].0, ks[b].0);
                d.h[(i, j)] += v;
                if i != j {
                    d.h[(j, i)] += v;
                }
            }
        }
        Some(())
    }

    fn derivs(&self, y: &DVector<f64>, t: f64) -> Option<Derivs> {
        let mut d = Derivs {
            g: &self.c * t,
            h: DMatrix::zeros(self.nvar, self.nvar),
        };
        for (l, _) in &self.lmis {
            Self::accumulate_lmi(l, 1.0, y, &mut d)?;
        }
        for (l, _) in &self.lins {
            let s = l.eval(y);
            if s <= 0.0 {
                return None;
            }
            for (i, bi) in &l.b {
                d.g[*i] -= bi / s;
                for (j, bj) in &l.b {
                    d.h[(*i, *j)] += bi * bj / (s * s);
                }
            }
        }
        if let Some((w, g0)) = &self.logdet {
            if *w > 0.0 && t > 0.0 {
                Self::accumulate_lmi(g0, t * w, y, &mut d)?;
            }
        }
        Some(d)
    }

    /// Newton centering at fixed `t`. Returns steps taken, or `None` on breakdown.
    fn center(&self, y: &mut DVector<f64>, t: f64, budget: usize) -> Option<usize> {
        let mut steps = 0;
        while steps < budget {
            let d = self.derivs(y, t)?;
            let dx = solve_spd(&d.h, &(-&d.g))?;
            let dec = -d.g.dot(&dx);
            if !dec.is_finite() {
                return None;
            }
            if dec < 1e-10 {
                return Some(steps);
            }
            steps += 1;
            let f0 = self.value(y, t)?;
            let slack = 1e-13 * (1.0 + f0.abs());
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-14 {
                let cand = &*y + &dx * alpha;
                if let Some(f) = self.value(&cand, t) {
                    if f <= f0 - 0.25 * alpha * dec + slack {
                        *y = cand;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Stalled at machine precision; the point is as centred as it gets.
                return Some(steps);
            }
        }
        Some(steps)
    }
}

fn add_scaled(m: &mut DMatrix<f64>, a: f64, c: &DMatrix<f64>) {
    m.zip_apply(c, |x, y| *x += a * y);
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut m = h.clone();
        for i in 0..n {
            m[(i, i)] += reg;
        }
        if let Some(c) = m.cholesky() {
            let x = c.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

/// `z = z0 + N·y` parametrizing the solution set of the equalities.
fn eliminate(eqs: &[LinearEquality], m: usize) -> Result<(DVector<f64>, DMatrix<f64>), LmiError> {
    if eqs.is_empty() {
        return Ok((DVector::zeros(m), DMatrix::identity(m, m)));
    }
    let q = eqs.len();
    let mut a = DMatrix::zeros(q, m + 1);
    for (r, e) in eqs.iter().enumerate() {
        for (k, v) in &e.coefficients {
            a[(r, *k)] += v;
        }
        a[(r, m)] = e.rhs;
    }
    let scale = a.amax().max(1.0);
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..m {
        if row == q {
            break;
        }
        let (mut best, mut bv) = (row, 0.0);
        for i in row..q {
            if a[(i, col)].abs() > bv {
                best = i;
                bv = a[(i, col)].abs();
            }
        }
        if bv <= 1e-12 * scale {
            continue;
        }
        a.swap_rows(row, best);
        let p = a[(row, col)];
        for j in 0..=m {
            a[(row, j)] /= p;
        }
        for i in 0..q {
            if i != row && a[(i, col)] != 0.0 {
                let f = a[(i, col)];
                for j in 0..=m {
                    let v = a[(row, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let residual = (row..q).map(|i| a[(i, m)].abs()).fold(0.0, f64::max);
    if residual > 1e-9 * scale {
        return Err(LmiError::InconsistentEqualities(residual));
    }
    let free: Vec<usize> = (0..m).filter(|c| !pivots.contains(c)).collect();
    let mut z0 = DVector::zeros(m);
    let mut n = DMatrix::zeros(m, free.len());
    for (i, &pc) in pivots.iter().enumerate() {
        z0[pc] = a[(i, m)];
    }
    for (k, &f) in free.iter().enumerate() {
        n[(f, k)] = 1.0;
        for (i, &pc) in pivots.iter().enumerate() {
            n[(pc, k)] = -a[(i, f)];
        }
    }
    Ok((z0, n))
}

fn reduce(e: &AffineExpr, factor: f64, shift: f64, z0: &DVector<f64>, n: &DMatrix<f64>) -> Lmi {
    let mut c0 = e.constant_part().clone();
    let mut acc: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    for (i, c) in e.terms() {
        if z0[i] != 0.0 {
            add_scaled(&mut c0, z0[i], c);
        }
        for j in 0..n.ncols() {
            let v = n[(i, j)];
            if v != 0.0 {
                acc.entry(j)
                    .and_modify(|m| add_scaled(m, v, c))
                    .or_insert_with(|| c * v);
            }
        }
    }
    for i in 0..c0.nrows() {
        c0[(i, i)] -= shift;
    }
    Lmi {
        c0: c0 * factor,
        terms: acc
            .into_iter()
            .filter(|(_, m)| m.amax() > 0.0)
            .map(|(j, m)| (j, m * factor))
            .collect(),
    }
}

fn block_scale(e: &AffineExpr) -> f64 {
    let n = e.constant_part().norm();
    if n > 0.0 {
        return 1.0 / n;
    }
    let c = e.terms().map(|(_, m)| m.norm()).fold(0.0, f64::max);
    if c > 0.0 {
        1.0 / c
    } else {
        1.0
    }
}

/// Solves the program. Infeasibility and iteration exhaustion are report statuses;
/// errors are reserved for malformed input.
pub fn solve(program: &MaxDetProgram, opts: &SolverOptions) -> Result<SolveReport, LmiError> {
    opts.validate()?;
    let m = program.n_scalars();
    let (z0, nmat) = eliminate(program.equalities(), m)?;
    let nvar = nmat.ncols();

    let tau = opts.tau_rel
        * program
            .blocks()
            .iter()
            .map(|b| b.expr.constant_part().norm())
            .fold(0.0, f64::max)
            .max(if program.blocks().is_empty() { 0.0 } else { 1.0 });

    let mut lmis = Vec::new();
    let mut lins = Vec::new();
    for (k, b) in program.blocks().iter().enumerate() {
        let sign = match b.sense {
            Sense::Psd | Sense::PsdStrict => 1.0,
            Sense::NsdStrict => -1.0,
        };
        let shift = if b.sense == Sense::Psd { 0.0 } else { tau };
        let oriented = b.expr.scale(sign);
        let l = reduce(&oriented, block_scale(&b.expr), shift, &z0, &nmat);
        if l.dim() == 1 {
            lins.push((
                Lin {
                    a: l.c0[(0, 0)],
                    b: l.terms.iter().map(|(j, c)| (*j, c[(0, 0)])).collect(),
                },
                Origin::Block(k),
            ));
        } else {
            lmis.push((l, Origin::Block(k)));
        }
    }
    for i in 0..m {
        let b: Vec<(usize, f64)> = (0..nvar)
            .filter(|&j| nmat[(i, j)] != 0.0)
            .map(|j| (j, nmat[(i, j)] / opts.bound))
            .collect();
        if b.is_empty() {
            continue;
        }
        let base = z0[i] / opts.bound;
        lins.push((Lin { a: 1.0 - base, b: b.iter().map(|(j, v)| (*j, -v)).collect() }, Origin::Bound));
        lins.push((Lin { a: 1.0 + base, b }, Origin::Bound));
    }

    let mut cz = DVector::zeros(m);
    for (k, v) in &program.objective().linear {
        cz[*k] += v;
    }
    let c = nmat.transpose() * &cz;
    let logdet_term = program
        .objective()
        .logdet
        .as_ref()
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, g)| (*w, reduce(g, 1.0, 0.0, &z0, &nmat)));

    let finish = |y: &DVector<f64>, status: SolveStatus, iterations: usize, gap: f64, binding: Option<String>| {
        let z = &z0 + &nmat * y;
        let point: Vec<f64> = z.iter().copied().collect();
        let block_margins = program.blocks().iter().map(|b| b.margin(&point)).collect();
        let objective = program.objective_value(&point);
        SolveReport {
            status,
            point,
            objective,
            block_margins,
            iterations,
            tau,
            gap,
            binding,
        }
    };

    // Phase I: maximize the common margin s of every constraint (minimize −s ⇒ here
    // minimize s' with G + s'I ⪰ 0).
    let mut phase1_lmis: Vec<(Lmi, Origin)> = lmis
        .iter()
        .map(|(l, o)| {
            let mut l = l.clone();
            l.terms.push((nvar, DMatrix::identity(l.dim(), l.dim())));
            (l, *o)
        })
        .collect();
    if let Some((_, g0)) = &logdet_term {
        let mut l = g0.clone();
        let s = {
            let n = g0.c0.norm();
            let t = g0.terms.iter().map(|(_, m)| m.norm()).fold(0.0, f64::max);
            1.0 / if n > 0.0 { n } else if t > 0.0 { t } else { 1.0 }
        };
        l.c0 *= s;
        for (_, t) in l.terms.iter_mut() {
            *t *= s;
        }
        l.terms.push((nvar, DMatrix::identity(l.dim(), l.dim())));
        phase1_lmis.push((l, Origin::Internal));
    }
    let mut phase1_lins: Vec<(Lin, Origin)> = lins
        .iter()
        .map(|(l, o)| {
            let mut l = l.clone();
            l.b.push((nvar, 1.0));
            (l, *o)
        })
        .collect();
    phase1_lins.push((Lin { a: 1.0, b: vec![(nvar, 1.0)] }, Origin::Internal));

    let mut y = DVector::zeros(nvar);
    let worst = phase1_lmis
        .iter()
        .map(|(l, _)| -super::program::min_eigenvalue(&l.eval(&DVector::zeros(nvar + 1))))
        .chain(phase1_lins.iter().map(|(l, _)| -l.eval(&DVector::zeros(nvar + 1))))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut iterations = 0;
    let phase1_target = 1e-3;

    if worst > -phase1_target {
        let p1 = Barrier {
            nvar: nvar + 1,
            lmis: phase1_lmis,
            lins: phase1_lins,
            c: {
                let mut c = DVector::zeros(nvar + 1);
                c[nvar] = 1.0;
                c
            },
            logdet: None,
        };
        let mut ys = DVector::zeros(nvar + 1);
        ys[nvar] = worst.max(0.0) + 1.0;
        let mut t = 1.0;
        let deg = p1.degree();
        let feasible = loop {
            let budget = opts.max_iter.saturating_sub(iterations);
            match p1.center(&mut ys, t, budget.max(1)) {
                Some(k) => iterations += k,
                None => break None,
            }
            let s = ys[nvar];
            let gap = deg / t;
            if s < -phase1_target {
                break Some(true);
            }
            if s - gap > opts.feas_tol {
                break Some(false);
            }
            if gap < 0.01 * opts.feas_tol {
                break Some(s < -opts.feas_tol);
            }
            if iterations >= opts.max_iter {
                break None;
            }
            t *= opts.mu;
        };
        y = ys.rows(0, nvar).into_owned();
        match feasible {
            Some(true) => {}
            Some(false) => {
                let binding = attribute(&p1, &ys, t, program);
                return Ok(finish(&y, SolveStatus::Infeasible, iterations, f64::INFINITY, binding));
            }
            None => {
                return Ok(finish(&y, SolveStatus::MaxIterations, iterations, f64::INFINITY, None));
            }
        }
    }

    // Phase II.
    let p2 = Barrier {
        nvar,
        lmis,
        lins,
        c,
        logdet: logdet_term,
    };
    let deg = p2.degree();
    let has_objective = p2.c.amax() > 0.0 || p2.logdet.is_some();
    if !has_objective {
        // Pure feasibility: re-centre once for a well-interior point.
        if let Some(k) = p2.center(&mut y, 0.0, opts.max_iter.saturating_sub(iterations)) {
            iterations += k;
        }
        return Ok(finish(&y, SolveStatus::Optimal, iterations, 0.0, None));
    }
    let mut t = initial_t(&p2, &y);
    loop {
        let budget = opts.max_iter.saturating_sub(iterations);
        if budget == 0 {
            return Ok(finish(&y, SolveStatus::MaxIterations, iterations, deg / t, None));
        }
        match p2.center(&mut y, t, budget) {
            Some(k) => iterations += k,
            None => return Ok(finish(&y, SolveStatus::MaxIterations, iterations, deg / t, None)),
        }
        let gap = deg / t;
        let f = p2.value(&y, 1.0).unwrap_or(f64::INFINITY) - p2.value(&y, 0.0).unwrap_or(0.0);
        if gap < opts.tol * f.abs().max(1.0) {
            return Ok(finish(&y, SolveStatus::Optimal, iterations, gap, None));
        }
        t *= opts.mu;
    }
}

/// Balances objective and barrier gradients in the barrier Hessian metric.
fn initial_t(p: &Barrier, y: &DVector<f64>) -> f64 {
    let (Some(d0), Some(d1)) = (p.derivs(y, 0.0), p.derivs(y, 1.0)) else {
        return 1.0;
    };
    let gf = &d1.g - &d0.g;
    let Some(hinv_gf) = solve_spd(&d0.h, &gf) else {
        return 1.0;
    };
    let den = gf.dot(&hinv_gf);
    if den <= 0.0 || !den.is_finite() {
        return 1.0;
    }
    let t = -d0.g.dot(&hinv_gf) / den;
    if t.is_finite() {
        t.clamp(1e-3, 1e6)
    } else {
        1.0
    }
}

/// Label with the largest phase-I dual weight `tr(G_k⁻¹)/t`.
fn attribute(p: &Barrier, y: &DVector<f64>, t: f64, program: &MaxDetProgram) -> Option<String> {
    let mut weight: BTreeMap<String, f64> = BTreeMap::new();
    let label = |o: Origin| match o {
        Origin::Block(k) => Some(program.blocks()[k].label.clone()),
        Origin::Bound => Some("variable bound".to_string()),
        Origin::Internal => None,
    };
    for (l, o) in &p.lmis {
        if let (Some(name), Some(inv)) = (label(*o), l.eval(y).try_inverse()) {
            *weight.entry(name).or_default() += inv.trace() / t;
        }
    }
    for (l, o) in &p.lins {
        if let Some(name) = label(*o) {
            *weight.entry(name).or_default() += 1.0 / (l.eval(y) * t);
        }
    }
    weight
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{AffineExpr, MaxDetProgram};
    use proptest::prelude::*;

    fn scalar_block(a: f64, coeffs: &[(usize, f64)]) -> AffineExpr {
        AffineExpr::from_parts(
            DMatrix::from_element(1, 1, a),
            coeffs.iter().map(|(k, v)| (*k, DMatrix::from_element(1, 1, *v))),
        )
        .unwrap()
    }

    #[test]
    fn logdet_saturates_upper_bound() {
        let mut p = MaxDetProgram::new();
        let y = p.symmetric("y", 1).unwrap();
        p.psd("y<=2", scalar_block(2.0, &[(0, -1.0)])).unwrap();
        p.maximize_logdet(y.expr(), 1.0).unwrap();
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert!(r.is_optimal());
        assert!((r.point[0] - 2.0).abs() < 1e-6, "{}", r.point[0]);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = MaxDetProgram::new();
        let x = p.symmetric("x", 1).unwrap();
        p.psd("x>=1", &x.expr() - &AffineExpr::identity(1)).unwrap();
        p.psd("x<=0", -x.expr()).unwrap();
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.binding.is_some());
    }

    #[test]
    fn schur_radius_matches_scan() {
        let mut p = MaxDetProgram::new();
        let rho = p.scalar("rho").unwrap();
        let m = AffineExpr::sym_blocks(&[
            vec![Some(rho.expr())],
            vec![Some(AffineExpr::scalar(1.0)), Some(AffineExpr::scalar(4.0))],
        ])
        .unwrap();
        p.psd("schur", m).unwrap();
        p.minimize(&rho.expr()).unwrap();
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert!(r.is_optimal());
        // Scan oracle: smallest grid ρ with a PSD 2×2 matrix.
        let scan = (0..=100_000)
            .map(|i| i as f64 * 1e-5)
            .find(|rho| rho * 4.0 - 1.0 >= 0.0 && *rho >= 0.0)
            .unwrap();
        assert!((r.point[0] - scan).abs() < 2e-5);
        assert!((r.point[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn coupling_block_margin_is_one() {
        let mut p = MaxDetProgram::new();
        let y = p.symmetric("Y", 2).unwrap();
        let x = p.symmetric("X", 2).unwrap();
        let m = AffineExpr::sym_blocks(&[
            vec![Some(y.expr())],
            vec![Some(AffineExpr::identity(2)), Some(x.expr())],
        ])
        .unwrap();
        let b = AffineBlock::new("z", m, Sense::PsdStrict).unwrap();
        let mut z = vec![0.0; p.n_scalars()];
        let two = DMatrix::identity(2, 2) * 2.0;
        y.pack(&two, &mut z).unwrap();
        x.pack(&two, &mut z).unwrap();
        let margins = check_point(&[b], &z).unwrap();
        assert!((margins[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equality_is_eliminated() {
        // min a + 2b s.t. a + b = 1, a ≥ 0, b ≥ 0  →  a = 1, b = 0.
        let mut p = MaxDetProgram::new();
        let a = p.scalar("a").unwrap();
        let b = p.scalar("b").unwrap();
        p.equal(&(&a.expr() + &b.expr()), 1.0).unwrap();
        p.psd("a", a.expr()).unwrap();
        p.psd("b", b.expr()).unwrap();
        p.minimize(&(&a.expr() + &b.expr().scale(2.0))).unwrap();
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert!(r.is_optimal());
        assert!((r.point[0] - 1.0).abs() < 1e-6 && r.point[1].abs() < 1e-6);
        assert!((r.point[0] + r.point[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inconsistent_equalities_error() {
        let mut p = MaxDetProgram::new();
        let a = p.scalar("a").unwrap();
        p.equal(&a.expr(), 1.0).unwrap();
        p.equal(&a.expr().scale(2.0), 3.0).unwrap();
        assert!(matches!(
            solve(&p, &SolverOptions::default()),
            Err(LmiError::InconsistentEqualities(_))
        ));
    }

    #[test]
    fn strict_block_keeps_tau() {
        let mut p = MaxDetProgram::new();
        let x = p.symmetric("x", 2).unwrap();
        p.nsd_strict("x<0", x.expr()).unwrap();
        p.psd("x>=-I", &x.expr() + &AffineExpr::identity(2)).unwrap();
        p.maximize(&x.scalar_expr(0)).unwrap();
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert!(r.is_optimal());
        assert!(r.block_margins[0] >= r.tau * (1.0 - 1e-6));
    }

    /// Minimum over a dense grid of `c·(a,b)` subject to `[[1+a, b],[b, 1−a]] ⪰ 0`
    /// (the unit disc), by polar enumeration of the boundary and interior.
    fn disc_grid_min(c: (f64, f64)) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..=2000 {
            let th = i as f64 / 2000.0 * std::f64::consts::TAU;
            for r in [0.0, 0.5, 1.0] {
                best = best.min(c.0 * r * th.cos() + c.1 * r * th.sin());
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 64, rng_seed: proptest::test_runner::RngSeed::Fixed(7), ..ProptestConfig::default() })]

        #[test]
        fn agrees_with_grid_search(c0 in -3.0f64..3.0, c1 in -3.0f64..3.0) {
            prop_assume!(c0.abs() + c1.abs() > 0.1);
            let mut p = MaxDetProgram::new();
            let a = p.scalar("a").unwrap();
            let b = p.scalar("b").unwrap();
            let m = AffineExpr::sym_blocks(&[
                vec![Some(&AffineExpr::scalar(1.0) + &a.expr())],
                vec![Some(b.expr()), Some(&AffineExpr::scalar(1.0) - &a.expr())],
            ]).unwrap();
            p.psd("disc", m).unwrap();
            p.minimize(&(&a.expr().scale(c0) + &b.expr().scale(c1))).unwrap();
            let r = solve(&p, &SolverOptions::default()).unwrap();
            prop_assert!(r.is_optimal());
            let grid = disc_grid_min((c0, c1));
            prop_assert!((r.objective - grid).abs() <= 1e-3 * grid.abs().max(1e-3), "{} vs {}", r.objective, grid);
        }

        #[test]
        fn relaxing_bound_never_hurts(b1 in 0.2f64..5.0, extra in 0.0f64..3.0, coupling in -0.9f64..0.9) {
            let solve_with = |bound: f64| {
                let mut p = MaxDetProgram::new();
                let y = p.symmetric("Y", 2).unwrap();
                p.psd("trace", &AffineExpr::scalar(bound) - &(&y.scalar_expr(0) + &y.scalar_expr(2))).unwrap();
                let c = DMatrix::from_row_slice(2, 2, &[1.0, coupling, coupling, 1.0]);
                p.psd("cap", &AffineExpr::constant(c * 4.0) - &y.expr()).unwrap();
                p.maximize_logdet(y.expr(), 1.0).unwrap();
                solve(&p, &SolverOptions::default()).unwrap()
            };
            let tight = solve_with(b1);
            let loose = solve_with(b1 + extra);
            prop_assert!(tight.is_optimal() && loose.is_optimal());
            prop_assert!(loose.objective <= tight.objective + 1e-6 * tight.objective.abs().max(1.0));
        }
    }
}
