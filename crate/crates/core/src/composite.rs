//! Composite barrier `B_C(x) = min_γ ‖x‖_{Q_γ⁻¹}` over directional generators that
//! share the safety controller of a barrier pair.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::optimal;
use crate::lmi::{self, AffineBlock, AffineExpr, MaxDetProgram, Sense, SolverOptions};
use crate::model::{assemble_closed_loop, ClosedLoop, Constraints, UncertainPlant};
use crate::synthesis::{BarrierPair, SynthesisScalars};
use crate::{Error, Result};

/// Relative duality gap below which a warm-started `γ` is accepted without a fresh solve;
/// the value of `B_C` is then off by at most half of this, relatively.
const CERTIFIED_GAP: f64 = 1e-7;

/// A direction `ξ` in the coordinates `S x_CL`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    #[serde(with = "crate::serde_mat")]
    pub s: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub xi: DVector<f64>,
}

/// One certified generator with its multipliers (`ν_p = 1/μ_p`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    #[serde(with = "crate::serde_mat")]
    pub q: DMatrix<f64>,
    pub mu_d: Vec<f64>,
    pub nu_p: Vec<f64>,
    /// `ρ` reached along the generating direction; `None` for the base set.
    pub rho: Option<f64>,
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeBarrier {
    pub generators: Vec<Generator>,
    /// Simplex weights of the interpolated pool, one entry per generator.
    pub pool: Vec<Vec<f64>>,
    #[serde(with = "crate::serde_mat")]
    pub x0: DMatrix<f64>,
    pub eps: f64,
    pub mu_cl: f64,
    #[serde(skip)]
    cache: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Cache {
    /// Inverses of the generators followed by those of the pool.
    p: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeOptions {
    pub solver: SolverOptions,
    /// Accepted relative margin defect when re-checking stored generators.
    pub verify_tol: f64,
}

impl Default for CompositeOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            verify_tol: 1e-6,
        }
    }
}

/// The fixed-controller invariance condition after congruence with
/// `diag(Q, I, N_p, N_p)`:
/// `[[A Q + Q Aᵀ + (μ_CL/ε²)Q, ⋆, ⋆], [diag(I, N_p)Bᵀ, −diag(M_d, N_p), ⋆], [C Q, D diag(I, N_p), −N_p]]`.
pub fn composite_condition(
    cl: &ClosedLoop,
    active: &[usize],
    q: &AffineExpr,
    md: &AffineExpr,
    np: &AffineExpr,
    eps: f64,
    mu_cl: f64,
) -> Result<AffineExpr> {
    let n_t = cl.n_theta();
    let sel_d = DMatrix::from_fn(cl.n_d, active.len(), |i, k| if active[k] == i { 1.0 } else { 0.0 });
    let b_d = cl.b.columns(0, cl.n_d) * &sel_d;
    let d_d = cl.d.columns(0, cl.n_d) * &sel_d;
    let a11 = &q.left_mul(&cl.a).he() + &q.scale(mu_cl / (eps * eps));
    if n_t == 0 {
        return Ok(AffineExpr::sym_blocks(&[
            vec![Some(a11)],
            vec![Some(AffineExpr::constant(b_d.transpose())), Some(-md)],
        ])?);
    }
    let b_p = cl.b.columns(cl.n_d, n_t).into_owned();
    let d_p = cl.d.columns(cl.n_d, n_t).into_owned();
    let zero = |r, c| Some(AffineExpr::zeros(r, c));
    let nd = active.len();
    Ok(AffineExpr::sym_blocks(&[
        vec![Some(a11)],
        vec![Some(AffineExpr::constant(b_d.transpose())), Some(-md)],
        vec![Some(np.right_mul(&b_p.transpose())), zero(n_t, nd), Some(-np)],
        vec![
            Some(q.left_mul(&cl.c)),
            Some(AffineExpr::constant(d_d)),
            Some(np.left_mul(&d_p)),
            Some(-np),
        ],
    ])?)
}

/// Limits `f_iᵀ S_p Q S_pᵀ f_i ≤ 1` and `C_k⁽ⁱ⁾ S_k Q S_kᵀ C_k⁽ⁱ⁾ᵀ ≤ ū_i²` as scalar margins.
fn limit_exprs(cl: &ClosedLoop, cons: &Constraints, c_k: &DMatrix<f64>, q: &AffineExpr) -> Vec<(String, AffineExpr)> {
    let mut out = Vec::new();
    let s_p = cl.s_p();
    let s_k = cl.s_k();
    for i in 0..cons.n_s() {
        let row: DMatrix<f64> = cons.f.rows(i, 1) * &s_p;
        let v = q.left_mul(&row).right_mul(&row.transpose());
        out.push((format!("state limit {}", i + 1), &AffineExpr::scalar(1.0) - &v));
    }
    for i in 0..c_k.nrows() {
        let row: DMatrix<f64> = c_k.rows(i, 1) * &s_k;
        let v = q.left_mul(&row).right_mul(&row.transpose());
        out.push((format!("input limit {}", i + 1), &AffineExpr::scalar(cons.u_bar[i].powi(2)) - &v));
    }
    out
}

fn quad(p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(p * x))
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// Minimizes `ρ` such that `ξ/√ρ` lies in `{S x : ‖x‖_{Q⁻¹} ≤ 1}` under the invariance
/// condition of the pair's controller.
pub fn synthesize_direction(
    plant: &UncertainPlant,
    cons: &Constraints,
    pair: &BarrierPair,
    dir: &Direction,
    opts: &CompositeOptions,
) -> Result<Generator> {
    let cl = assemble_closed_loop(plant, &pair.controller)?;
    let n2 = 2 * cl.n;
    if dir.s.ncols() != n2 || dir.s.nrows() != dir.xi.len() || dir.xi.len() == 0 {
        return Err(Error::Dimension(format!(
            "direction selector {:?} and ξ of length {} do not fit a {n2}-state loop",
            dir.s.shape(),
            dir.xi.len()
        )));
    }
    if dir.xi.norm() == 0.0 {
        return Err(Error::Config("direction vector must be nonzero".into()));
    }
    let active = cons.active_d();
    let n_t = cl.n_theta();
    let mut p = MaxDetProgram::new();
    let q_v = p.symmetric("Q", n2)?;
    let md_v = p.diagonal("M_d", active.len())?;
    let np_v = p.diagonal("N_p", n_t)?;
    let rho_v = p.scalar("rho")?;
    let q = q_v.expr();
    let lmi = composite_condition(&cl, &active, &q, &md_v.expr(), &np_v.expr(), pair.scalars.eps, pair.scalars.mu_cl)?;
    p.nsd_strict("invariance", lmi)?;
    for (label, e) in limit_exprs(&cl, cons, &pair.controller.c_k, &q) {
        p.psd(&label, e)?;
    }
    p.psd_strict("Q", q.clone())?;
    p.nonnegative_diagonal("M_d", &md_v)?;
    for k in 0..n_t {
        p.psd_strict("N_p", np_v.scalar_expr(k))?;
    }
    let xi = AffineExpr::constant(DMatrix::from_column_slice(dir.xi.len(), 1, dir.xi.as_slice()));
    let sq = q.left_mul(&dir.s).right_mul(&dir.s.transpose());
    p.psd("direction", AffineExpr::sym_blocks(&[vec![Some(rho_v.expr())], vec![Some(xi), Some(sq)]])?)?;
    let mut energy = AffineExpr::scalar(0.0);
    for (k, &i) in active.iter().enumerate() {
        energy = &energy + &md_v.scalar_expr(k).scale(cons.d_bar[i].powi(2));
    }
    p.equal(&energy, pair.scalars.mu_cl)?;
    p.minimize(&rho_v.expr())?;

    let rep = optimal(lmi::solve(&p, &opts.solver)?, "direction")?;
    let z = &rep.point;
    let md = md_v.unpack(z);
    let mut mu_d = vec![0.0; plant.n_d()];
    for (k, &i) in active.iter().enumerate() {
        mu_d[i] = md[(k, k)];
    }
    let nu = np_v.unpack(z);
    Ok(Generator {
        q: q_v.unpack(z),
        mu_d,
        nu_p: (0..n_t).map(|k| nu[(k, k)]).collect(),
        rho: Some(rho_v.unpack(z)[(0, 0)]),
        direction: Some(dir.clone()),
    })
}

/// The base generator `Q_0 = P_0⁻¹` with `N_p = M_p⁻¹`.
pub fn base_generator(pair: &BarrierPair) -> Generator {
    Generator {
        q: pair.q(),
        mu_d: pair.mu_d.clone(),
        nu_p: pair.scalars.mu_p.iter().map(|m| 1.0 / m).collect(),
        rho: None,
        direction: None,
    }
}

/// Candidate directions in plant coordinates: the state-constraint normals, then the
/// coordinate axes not parallel to any earlier candidate. Each `ξ` is scaled to reach
/// the nearest state limit.
pub fn default_directions(cons: &Constraints, count: usize) -> Result<Vec<Direction>> {
    let n = cons.f.ncols();
    let mut cands: Vec<DVector<f64>> = (0..cons.n_s()).map(|i| cons.f.row(i).transpose()).collect();
    cands.extend((0..n).map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })));
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    for c in cands {
        let u = c.normalize();
        if dirs.iter().any(|d| (d.normalize().dot(&u)).abs() > 1.0 - 1e-9) {
            continue;
        }
        let reach = (0..cons.n_s()).map(|i| (cons.f.row(i) * &u)[0].abs()).fold(0.0, f64::max);
        if reach == 0.0 {
            continue;
        }
        dirs.push(u / reach);
    }
    if count > dirs.len() {
        return Err(Error::Config(format!(
            "{count} directions requested but only {} distinct defaults exist; declare the rest explicitly",
            dirs.len()
        )));
    }
    let s = crate::model::selection(n, 0);
    Ok(dirs.into_iter().take(count).map(|xi| Direction { s: s.clone(), xi }).collect())
}

/// Barycentric lattice points of resolution `r` over `k` generators, vertices excluded.
fn lattice(k: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in (0..=left).rev() {
            cur.push(v);
            rec(k - 1, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, r, &mut Vec::new(), &mut out);
    out.retain(|p| p.iter().filter(|&&v| v > 0).count() > 1);
    out
}

/// `size` interior simplex weights from the coarsest barycentric lattice holding at
/// least that many points, thinned with an even stride.
pub fn interpolation_pool(k: usize, size: usize) -> Vec<Vec<f64>> {
    if size == 0 || k < 2 {
        return Vec::new();
    }
    let mut r = 2;
    let pts = loop {
        let l = lattice(k, r);
        if l.len() >= size {
            break l;
        }
        r += 1;
    };
    let stride = pts.len() as f64 / size as f64;
    (0..size)
        .map(|i| {
            let p = &pts[(i as f64 * stride).floor() as usize];
            p.iter().map(|&v| v as f64 / r as f64).collect()
        })
        .collect()
}

impl CompositeBarrier {
    pub fn new(generators: Vec<Generator>, pool: Vec<Vec<f64>>, x0: DMatrix<f64>, scalars: &SynthesisScalars) -> Result<Self> {
        let mut c = Self {
            generators,
            pool,
            x0,
            eps: scalars.eps,
            mu_cl: scalars.mu_cl,
            cache: None,
        };
        c.prepare()?;
        Ok(c)
    }

    /// Synthesizes one generator per direction; directions that turn out infeasible are
    /// skipped and returned with their error.
    pub fn build(
        plant: &UncertainPlant,
        cons: &Constraints,
        pair: &BarrierPair,
        directions: &[Direction],
        interp: usize,
        opts: &CompositeOptions,
    ) -> Result<(Self, Vec<(usize, Error)>)> {
        let mut gens = vec![base_generator(pair)];
        let mut dropped = Vec::new();
        for (i, d) in directions.iter().enumerate() {
            match synthesize_direction(plant, cons, pair, d, opts) {
                Ok(g) => gens.push(g),
                Err(e @ (Error::Infeasible { .. } | Error::NotConverged(_))) => dropped.push((i, e)),
                Err(e) => return Err(e),
            }
        }
        let pool = interpolation_pool(gens.len(), interp);
        Ok((Self::new(gens, pool, pair.x.clone(), &pair.scalars)?, dropped))
    }

    /// Recomputes the inverse cache; required after deserialization.
    pub fn prepare(&mut self) -> Result<()> {
        let k = self.generators.len();
        if k == 0 {
            return Err(Error::Config("composite barrier needs at least one generator".into()));
        }
        let dim = self.generators[0].q.nrows();
        let mut p = Vec::with_capacity(k + self.pool.len());
        for q in self.generators.iter().map(|g| g.q.clone()).chain(self.pool.iter().map(|w| self.combine(w))) {
            if q.shape() != (dim, dim) {
                return Err(Error::Dimension("generators differ in size".into()));
            }
            let ch = Cholesky::new(q).ok_or_else(|| Error::Verification("stored Q is not positive definite".into()))?;
            p.push(ch.inverse());
        }
        for w in &self.pool {
            if w.len() != k || w.iter().any(|&g| g < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Config("interpolation weights must lie on the simplex".into()));
            }
        }
        self.cache = Some(Cache { p });
        Ok(())
    }

    fn cache(&self) -> &Cache {
        self.cache.as_ref().expect("composite barrier used before prepare()")
    }

    pub fn dim(&self) -> usize {
        self.generators[0].q.nrows()
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// `Q_γ = Σ γ_i Q_i`.
    pub fn combine(&self, gamma: &[f64]) -> DMatrix<f64> {
        let dim = self.generators[0].q.nrows();
        gamma
            .iter()
            .zip(&self.generators)
            .fold(DMatrix::zeros(dim, dim), |acc, (g, gen)| acc + &gen.q * *g)
    }

    /// `B_i(x)` for every generator.
    pub fn generator_values(&self, x: &DVector<f64>) -> Vec<f64> {
        self.cache().p[..self.len()].iter().map(|p| quad(p, x).max(0.0).sqrt()).collect()
    }

    /// `B_C(x)` and a minimizing `γ⋆`. The simplex program
    /// `min φ s.t. [[φ, xᵀ], [x, Q_γ]] ⪰ 0` is solved first, then `γ` is polished by
    /// an active-set Newton method on `xᵀQ_γ⁻¹x`.
    pub fn eval(&self, x: &DVector<f64>) -> (f64, Vec<f64>) {
        let k = self.len();
        let mut e0 = vec![0.0; k];
        e0[0] = 1.0;
        if x.iter().all(|&v| v == 0.0) {
            return (0.0, e0);
        }
        if k == 1 {
            return (self.generator_values(x)[0], e0);
        }
        let start = self.eval_sdp(x).unwrap_or_else(|| {
            // Fall back to the best vertex.
            let vals = self.generator_values(x);
            let i = (0..k).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
            let mut g = vec![0.0; k];
            g[i] = 1.0;
            g
        });
        let gamma = self.polish(x, start);
        (self.value_at(x, &gamma).sqrt(), gamma)
    }

    /// Like [`eval`](Self::eval) but starts the Newton polish from `start` instead of
    /// solving the simplex program; the result satisfies the same optimality conditions.
    pub fn eval_from(&self, x: &DVector<f64>, start: &[f64]) -> (f64, Vec<f64>) {
        let k = self.len();
        if start.len() != k || x.iter().all(|&v| v == 0.0) || !(start.iter().sum::<f64>() > 0.0) {
            return self.eval(x);
        }
        let gamma = self.polish(x, start.iter().map(|g| g.max(0.0)).collect());
        if !self.certified(x, &gamma, CERTIFIED_GAP) {
            return self.eval(x);
        }
        (self.value_at(x, &gamma).sqrt(), gamma)
    }

    fn eval_sdp(&self, x: &DVector<f64>) -> Option<Vec<f64>> {
        let k = self.len();
        let dim = self.dim();
        let mut p = MaxDetProgram::new();
        let phi = p.scalar("phi").ok()?;
        let g = p.diagonal("gamma", k).ok()?;
        let mut qg = AffineExpr::zeros(dim, dim);
        for (i, gen) in self.generators.iter().enumerate() {
            qg = &qg + &g.scalar_expr(i).times_matrix(&gen.q);
        }
        let xe = AffineExpr::constant(DMatrix::from_column_slice(dim, 1, x.as_slice()));
        p.psd("epigraph", AffineExpr::sym_blocks(&[vec![Some(phi.expr())], vec![Some(xe), Some(qg)]]).ok()?)
            .ok()?;
        p.nonnegative_diagonal("gamma", &g).ok()?;
        let sum = (0..k).fold(AffineExpr::scalar(0.0), |acc, i| &acc + &g.scalar_expr(i));
        p.equal(&sum, 1.0).ok()?;
        p.minimize(&phi.expr()).ok()?;
        let rep = lmi::solve(&p, &SolverOptions::default()).ok()?;
        if !rep.is_optimal() {
            return None;
        }
        let gm = g.unpack(&rep.point);
        Some((0..k).map(|i| gm[(i, i)]).collect())
    }

    fn value_at(&self, x: &DVector<f64>, gamma: &[f64]) -> f64 {
        match Cholesky::new(self.combine(gamma)) {
            Some(ch) => x.dot(&ch.solve(x)).max(0.0),
            None => f64::INFINITY,
        }
    }

    /// Gradient of `f(γ) = xᵀQ_γ⁻¹x` and the Frank-Wolfe gap `Σ γ_i g_i − min_i g_i`, which
    /// bounds `f(γ) − min f` from above by convexity.
    fn gradient_and_gap(&self, x: &DVector<f64>, gamma: &[f64]) -> Option<(Vec<f64>, f64)> {
        let ch = Cholesky::new(self.combine(gamma))?;
        let z = ch.solve(x);
        let grad: Vec<f64> = self.generators.iter().map(|g| -z.dot(&(&g.q * &z))).collect();
        let lo = grad.iter().copied().fold(f64::INFINITY, f64::min);
        let gap = gamma.iter().zip(&grad).map(|(g, d)| g * d).sum::<f64>() - lo;
        Some((grad, gap.max(0.0)))
    }

    /// True when `γ` is optimal to within `tol` relative to `f(γ)`.
    fn certified(&self, x: &DVector<f64>, gamma: &[f64], tol: f64) -> bool {
        let f = self.value_at(x, gamma);
        self.gradient_and_gap(x, gamma).is_some_and(|(_, gap)| gap <= tol * f.max(f64::MIN_POSITIVE))
    }

    /// Active-set Newton on `f(γ) = xᵀQ_γ⁻¹x` over the simplex, with a Frank-Wolfe step
    /// whenever the Newton step makes no progress. Stops once the duality gap closes.
    fn polish(&self, x: &DVector<f64>, start: Vec<f64>) -> Vec<f64> {
        let k = self.len();
        let mut gamma: Vec<f64> = start.iter().map(|&g| if g < 1e-9 { 0.0 } else { g }).collect();
        let s: f64 = gamma.iter().sum();
        gamma.iter_mut().for_each(|g| *g /= s);
        let mut f = self.value_at(x, &gamma);
        let normalize = |trial: &mut Vec<f64>| {
            for g in trial.iter_mut() {
                if *g < 1e-14 {
                    *g = 0.0;
                }
            }
            let s: f64 = trial.iter().sum();
            trial.iter_mut().for_each(|g| *g /= s);
        };
        for _ in 0..200 {
            let Some(ch) = Cholesky::new(self.combine(&gamma)) else { break };
            let z = ch.solve(x);
            let qz: Vec<DVector<f64>> = self.generators.iter().map(|g| &g.q * &z).collect();
            let grad: Vec<f64> = qz.iter().map(|v| -z.dot(v)).collect();
            let lo = grad.iter().copied().fold(f64::INFINITY, f64::min);
            let gap = gamma.iter().zip(&grad).map(|(g, d)| g * d).sum::<f64>() - lo;
            if gap <= 1e-13 * f.max(f64::MIN_POSITIVE) {
                break;
            }
            let solved: Vec<DVector<f64>> = qz.iter().map(|v| ch.solve(v)).collect();
            let mut active: Vec<usize> = (0..k).filter(|&i| gamma[i] > 0.0).collect();
            // Release an inactive generator if its reduced gradient is negative.
            let lam = active.iter().map(|&i| grad[i]).sum::<f64>() / active.len() as f64;
            let scale = grad.iter().map(|g| g.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            if let Some(j) = (0..k)
                .filter(|&i| gamma[i] == 0.0 && grad[i] < lam - 1e-10 * scale)
                .min_by(|&a, &b| grad[a].total_cmp(&grad[b]))
            {
                active.push(j);
            }
            let m = active.len();
            let mut kkt = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (a, &i) in active.iter().enumerate() {
                for (b, &j) in active.iter().enumerate() {
                    kkt[(a, b)] = 2.0 * qz[i].dot(&solved[j]);
                }
                kkt[(a, a)] += 1e-14 * scale;
                kkt[(a, m)] = 1.0;
                kkt[(m, a)] = 1.0;
                rhs[a] = -grad[i];
            }
            let mut improved = false;
            if let Some(step) = kkt.lu().solve(&rhs) {
                // Largest feasible step, then backtrack on f.
                let mut t: f64 = 1.0;
                for (a, &i) in active.iter().enumerate() {
                    if step[a] < 0.0 {
                        t = t.min(gamma[i] / -step[a]);
                    }
                }
                for _ in 0..30 {
                    let mut trial = gamma.clone();
                    for (a, &i) in active.iter().enumerate() {
                        trial[i] = (trial[i] + t * step[a]).max(0.0);
                    }
                    normalize(&mut trial);
                    let ft = self.value_at(x, &trial);
                    if ft < f {
                        gamma = trial;
                        f = ft;
                        improved = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if !improved {
                // Frank-Wolfe step toward the steepest vertex.
                let j = (0..k).min_by(|&a, &b| grad[a].total_cmp(&grad[b])).unwrap_or(0);
                let mut t = 1.0;
                for _ in 0..50 {
                    let mut trial: Vec<f64> = gamma.iter().map(|g| g * (1.0 - t)).collect();
                    trial[j] += t;
                    normalize(&mut trial);
                    let ft = self.value_at(x, &trial);
                    if ft < f {
                        gamma = trial;
                        f = ft;
                        improved = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if !improved {
                break;
            }
        }
        gamma
    }

    /// `min_i √(xᵀQ_i⁻¹x)` over the generators and the interpolated pool.
    pub fn eval_interpolated(&self, x: &DVector<f64>) -> f64 {
        self.cache().p.iter().map(|p| quad(p, x)).fold(f64::INFINITY, f64::min).max(0.0).sqrt()
    }

    /// `∂B_C²/∂x = 2 Q_γ⋆⁻¹ x`.
    pub fn gradient(&self, x: &DVector<f64>, gamma: &[f64]) -> DVector<f64> {
        let ch = Cholesky::new(self.combine(gamma)).expect("Q_γ is positive definite on the simplex");
        ch.solve(x) * 2.0
    }

    /// Relative margins of every generator and interpolant: invariance, limits and
    /// positivity. Nonnegative means satisfied.
    pub fn margins(&self, plant: &UncertainPlant, cons: &Constraints, pair: &BarrierPair) -> Result<Vec<f64>> {
        let cl = assemble_closed_loop(plant, &pair.controller)?;
        let active = cons.active_d();
        let k = self.len();
        let mut weights: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        weights.extend(self.pool.iter().cloned());
        let mut out = Vec::with_capacity(weights.len());
        for w in &weights {
            let q = self.combine(w);
            let mut mu_d = vec![0.0; plant.n_d()];
            let mut nu = vec![0.0; cl.n_theta()];
            for (g, gen) in w.iter().zip(&self.generators) {
                mu_d.iter_mut().zip(&gen.mu_d).for_each(|(a, b)| *a += g * b);
                nu.iter_mut().zip(&gen.nu_p).for_each(|(a, b)| *a += g * b);
            }
            let md: Vec<f64> = active.iter().map(|&i| mu_d[i]).collect();
            let qe = AffineExpr::constant(q.clone());
            let m = composite_condition(&cl, &active, &qe, &AffineExpr::constant(diag(&md)), &AffineExpr::constant(diag(&nu)), self.eps, self.mu_cl)?
                .eval(&[]);
            let inv = AffineBlock::new("invariance", AffineExpr::constant(m.clone()), Sense::NsdStrict)?;
            let mut worst = lmi::check_point(&[inv], &[])?[0] / m.norm().max(1.0);
            for (_, e) in limit_exprs(&cl, cons, &pair.controller.c_k, &qe) {
                worst = worst.min(e.eval(&[])[(0, 0)]);
            }
            worst = worst.min(lmi::min_eigenvalue(&q) / q.norm().max(1.0));
            out.push(worst);
        }
        Ok(out)
    }

    /// Fails if any stored `Q` misses its certificate by more than `tol` (relative).
    pub fn verify(&self, plant: &UncertainPlant, cons: &Constraints, pair: &BarrierPair, tol: f64) -> Result<()> {
        if (&self.x0 - &pair.x).amax() > 1e-12 * pair.x.amax().max(1.0) {
            return Err(Error::Mismatch("composite X_0 differs from the pair".into()));
        }
        let m = self.margins(plant, cons, pair)?;
        if let Some((i, v)) = m.iter().enumerate().find(|(_, v)| **v < -tol) {
            return Err(Error::Verification(format!("composite member {i} violates its certificate by {v:.3e}")));
        }
        Ok(())
    }
}
