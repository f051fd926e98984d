//! Uncertain plants in output-injection canonical form, constraint sets, dynamic
//! output-feedback controllers and the assembled closed loop.
//!
//! The plant is
//!
//! ```text
//! ẋ_p = Ā x_p + Θ_u u + Θ_y (y − v) + w
//! y   = Θ_c C̄ x_p + v
//! ```
//!
//! with `Θ_h = [Θ_u Θ_y] = A_h + B_h Δ_h C_h`, `Θ_a = Θ_c⁻¹ = A_a + B_a Δ_a C_a` and
//! the inverse covered by `Θ_c ∈ {A_c + B_c Δ_c C_c}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block-diagonal shift-down `Ā` and selector `C̄` for the given observability indices.
pub fn build_canonical(indices: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if indices.is_empty() {
        return Err(Error::Model("empty observability index list".into()));
    }
    if indices.contains(&0) {
        return Err(Error::Model("observability indices must be positive".into()));
    }
    let n: usize = indices.iter().sum();
    let mut a = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(indices.len(), n);
    let mut off = 0;
    for (i, &ni) in indices.iter().enumerate() {
        for k in 1..ni {
            a[(off + k, off + k - 1)] = 1.0;
        }
        c[(i, off + ni - 1)] = 1.0;
        off += ni;
    }
    Ok((a, c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainPlant {
    pub indices: Vec<usize>,
    #[serde(with = "crate::serde_mat")]
    pub a_u: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub a_y: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub b_h: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub c_u: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub c_y: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub a_a: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub b_a: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub c_a: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub a_c: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub b_c: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub c_c: DMatrix<f64>,
}

/// Raw factors as read from a model file; missing uncertainty factors mean "none".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlantParts {
    pub indices: Vec<usize>,
    pub a_u: DMatrix<f64>,
    pub a_y: DMatrix<f64>,
    pub b_h: Option<DMatrix<f64>>,
    pub c_u: Option<DMatrix<f64>>,
    pub c_y: Option<DMatrix<f64>>,
    pub a_a: DMatrix<f64>,
    pub b_a: Option<DMatrix<f64>>,
    pub c_a: Option<DMatrix<f64>>,
    /// Optional user-supplied inverse cover; computed when absent.
    pub cover: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn expect_shape(name: &str, m: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::Dimension(format!("{name} is {:?}, expected {:?}", m.shape(), shape)));
    }
    Ok(())
}

/// Channel count implied by a set of optional factors (columns of B, rows of C).
fn channels(b: &Option<DMatrix<f64>>, cs: &[&Option<DMatrix<f64>>]) -> usize {
    let from_b = b.as_ref().filter(|m| !m.is_empty()).map(|m| m.ncols());
    let from_c = cs.iter().filter_map(|c| c.as_ref().filter(|m| !m.is_empty()).map(|m| m.nrows())).next();
    from_b.or(from_c).unwrap_or(0)
}

fn or_zeros(m: Option<DMatrix<f64>>, shape: (usize, usize)) -> DMatrix<f64> {
    match m {
        Some(m) if !m.is_empty() => m,
        _ => DMatrix::zeros(shape.0, shape.1),
    }
}

impl UncertainPlant {
    pub fn from_parts(p: PlantParts) -> Result<Self> {
        let (abar, cbar) = build_canonical(&p.indices)?;
        let n = abar.nrows();
        let n_y = cbar.nrows();
        let n_u = p.a_u.ncols();
        expect_shape("A_u", &p.a_u, (n, n_u))?;
        expect_shape("A_y", &p.a_y, (n, n_y))?;
        expect_shape("A_a", &p.a_a, (n_y, n_y))?;
        let nh = channels(&p.b_h, &[&p.c_u, &p.c_y]);
        let b_h = or_zeros(p.b_h, (n, nh));
        let c_u = or_zeros(p.c_u, (nh, n_u));
        let c_y = or_zeros(p.c_y, (nh, n_y));
        expect_shape("B_h", &b_h, (n, nh))?;
        expect_shape("C_u", &c_u, (nh, n_u))?;
        expect_shape("C_y", &c_y, (nh, n_y))?;
        let na = channels(&p.b_a, &[&p.c_a]);
        let b_a = or_zeros(p.b_a, (n_y, na));
        let c_a = or_zeros(p.c_a, (na, n_y));
        expect_shape("B_a", &b_a, (n_y, na))?;
        expect_shape("C_a", &c_a, (na, n_y))?;
        let a_c = p
            .a_a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Model("nominal A_a is singular".into()))?;
        let (b_c, c_c) = match p.cover {
            Some((b, c)) => {
                if b.nrows() != n_y || c.ncols() != n_y || b.ncols() != c.nrows() {
                    return Err(Error::Dimension("inverse cover factors do not conform".into()));
                }
                (b, c)
            }
            None => bound_inverse_uncertainty(&p.a_a, &b_a, &c_a)?,
        };
        let plant = Self {
            indices: p.indices,
            a_u: p.a_u,
            a_y: p.a_y,
            b_h,
            c_u,
            c_y,
            a_a: p.a_a,
            b_a,
            c_a,
            a_c,
            b_c,
            c_c,
        };
        plant.validate()?;
        Ok(plant)
    }

    /// Structural checks; also run after deserialization.
    pub fn validate(&self) -> Result<()> {
        let (n, n_y, n_u) = (self.n(), self.n_y(), self.n_u());
        let (nh, na, nc) = (self.n_theta_h(), self.n_theta_a(), self.n_theta_c());
        for (name, m, s) in [
            ("A_u", &self.a_u, (n, n_u)),
            ("A_y", &self.a_y, (n, n_y)),
            ("B_h", &self.b_h, (n, nh)),
            ("C_u", &self.c_u, (nh, n_u)),
            ("C_y", &self.c_y, (nh, n_y)),
            ("A_a", &self.a_a, (n_y, n_y)),
            ("B_a", &self.b_a, (n_y, na)),
            ("C_a", &self.c_a, (na, n_y)),
            ("A_c", &self.a_c, (n_y, n_y)),
            ("B_c", &self.b_c, (n_y, nc)),
            ("C_c", &self.c_c, (nc, n_y)),
        ] {
            expect_shape(name, m, s)?;
        }
        let err = (&self.a_c * &self.a_a - DMatrix::identity(n_y, n_y)).amax();
        if err > 1e-10 {
            return Err(Error::Model(format!("A_c A_a differs from I by {err:.2e}")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.indices.iter().sum()
    }

    pub fn n_y(&self) -> usize {
        self.indices.len()
    }

    pub fn n_u(&self) -> usize {
        self.a_u.ncols()
    }

    pub fn n_d(&self) -> usize {
        self.n() + self.n_y()
    }

    pub fn n_h(&self) -> usize {
        self.n_u() + self.n_y()
    }

    pub fn n_theta_h(&self) -> usize {
        self.b_h.ncols()
    }

    pub fn n_theta_a(&self) -> usize {
        self.b_a.ncols()
    }

    /// Channels of the inverse cover used in the closed loop.
    pub fn n_theta_c(&self) -> usize {
        self.b_c.ncols()
    }

    /// Uncertain channels seen by the estimator (`Θ_h` and `Θ_a`).
    pub fn n_theta(&self) -> usize {
        self.n_theta_h() + self.n_theta_a()
    }

    pub fn abar(&self) -> DMatrix<f64> {
        build_canonical(&self.indices).expect("validated").0
    }

    pub fn cbar(&self) -> DMatrix<f64> {
        build_canonical(&self.indices).expect("validated").1
    }

    /// `A_p = Ā + A_y A_c C̄`
    pub fn a_p(&self) -> DMatrix<f64> {
        self.abar() + &self.a_y * &self.a_c * self.cbar()
    }

    /// `(Θ_u, Θ_y)` for a realization of `Δ_h`.
    pub fn theta_h(&self, delta_h: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(delta_h));
        (
            &self.a_u + &self.b_h * &d * &self.c_u,
            &self.a_y + &self.b_h * &d * &self.c_y,
        )
    }

    pub fn theta_a(&self, delta_a: &[f64]) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(delta_a));
        &self.a_a + &self.b_a * d * &self.c_a
    }

    /// Member of the inverse cover for a realization of its own channels.
    pub fn theta_c_cover(&self, delta_c: &[f64]) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(delta_c));
        &self.a_c + &self.b_c * d * &self.c_c
    }

    /// Canonical hash input: shape data plus every factor, in a fixed order.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for i in &self.indices {
            h.update((*i as u64).to_le_bytes());
        }
        for m in [
            &self.a_u, &self.a_y, &self.b_h, &self.c_u, &self.c_y, &self.a_a, &self.b_a, &self.c_a, &self.a_c,
            &self.b_c, &self.c_c,
        ] {
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Cover of `Θ_a⁻¹` over `‖Δ_a‖ ≤ 1` as `A_a⁻¹ + B_c Δ_c C_c`, `|δ_c| ≤ 1`.
///
/// With `N = C_a A_a⁻¹ B_a` and `β = ‖N‖₂ < 1`,
/// `Θ_a⁻¹ = A_a⁻¹ − A_a⁻¹B_a · Δ(I + NΔ)⁻¹ · C_a A_a⁻¹`. When `N` is diagonal the middle
/// factor is diagonal with entries bounded by `1/(1−|N_ii|)`, which keeps one channel
/// per `Δ_a` channel. Otherwise every entry of the middle factor is bounded by
/// `1/(1−β)` and each entry becomes its own channel.
pub fn bound_inverse_uncertainty(
    a_a: &DMatrix<f64>,
    b_a: &DMatrix<f64>,
    c_a: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n_y = a_a.nrows();
    let a_c = a_a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Model("A_a is singular".into()))?;
    let na = b_a.ncols();
    if na == 0 || b_a.amax() == 0.0 || c_a.amax() == 0.0 {
        return Ok((DMatrix::zeros(n_y, na), c_a * &a_c));
    }
    let left = &a_c * b_a;
    let right = c_a * &a_c;
    let nmat = c_a * &left;
    let beta = nmat.clone().svd(false, false).singular_values.max();
    if beta >= 1.0 {
        return Err(Error::Model(format!(
            "inverse uncertainty unbounded: ||C_a A_a^-1 B_a|| = {beta:.4} >= 1"
        )));
    }
    let off_diag = (0..na)
        .flat_map(|i| (0..na).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| nmat[(i, j)].abs())
        .fold(0.0, f64::max);
    if off_diag == 0.0 {
        let mut b_c = -left;
        for j in 0..na {
            let s = 1.0 / (1.0 - nmat[(j, j)].abs());
            b_c.column_mut(j).scale_mut(s);
        }
        return Ok((b_c, right));
    }
    let s = 1.0 / (1.0 - beta);
    let mut b_c = DMatrix::zeros(n_y, na * na);
    let mut c_c = DMatrix::zeros(na * na, n_y);
    for i in 0..na {
        for j in 0..na {
            let k = i * na + j;
            b_c.set_column(k, &(-left.column(i) * s));
            c_c.set_row(k, &right.row(j));
        }
    }
    Ok((b_c, c_c))
}

/// Safety and actuation limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    /// Rows are `f_iᵀ`; the state constraint is `|f_iᵀ x_p| ≤ 1`.
    #[serde(with = "crate::serde_mat")]
    pub f: DMatrix<f64>,
    pub u_bar: Vec<f64>,
    /// Ordered `[w; v]`. Zero entries declare channels that are absent.
    pub d_bar: Vec<f64>,
}

impl Constraints {
    pub fn validate(&self, plant: &UncertainPlant) -> Result<()> {
        if self.f.ncols() != plant.n() {
            return Err(Error::Dimension(format!("f has {} columns, n = {}", self.f.ncols(), plant.n())));
        }
        for i in 0..self.f.nrows() {
            if self.f.row(i).amax() == 0.0 {
                return Err(Error::Config(format!("state constraint {} is zero", i + 1)));
            }
        }
        if self.u_bar.len() != plant.n_u() {
            return Err(Error::Dimension("u_bar length must equal n_u".into()));
        }
        if self.u_bar.iter().any(|u| !(*u > 0.0 && u.is_finite())) {
            return Err(Error::Config("input bounds must be positive and finite".into()));
        }
        if self.d_bar.len() != plant.n_d() {
            return Err(Error::Dimension(format!("d_bar length must equal n + n_y = {}", plant.n_d())));
        }
        if self.d_bar.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::Config("disturbance bounds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn n_s(&self) -> usize {
        self.f.nrows()
    }

    /// Indices of disturbance channels with a positive bound.
    pub fn active_d(&self) -> Vec<usize> {
        (0..self.d_bar.len()).filter(|&i| self.d_bar[i] > 0.0).collect()
    }

    /// `Σ d̄_i²`
    pub fn d_energy(&self) -> f64 {
        self.d_bar.iter().map(|d| d * d).sum()
    }

    pub fn state_margins(&self, x_p: &DVector<f64>) -> Vec<f64> {
        (0..self.n_s()).map(|i| 1.0 - (self.f.row(i) * x_p)[0].abs()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    #[serde(with = "crate::serde_mat")]
    pub a_k: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub b_k: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub c_k: DMatrix<f64>,
}

impl Controller {
    pub fn zeros(plant: &UncertainPlant) -> Self {
        let n = plant.n();
        Self {
            a_k: DMatrix::zeros(n, n),
            b_k: DMatrix::zeros(n, plant.n_y()),
            c_k: DMatrix::zeros(plant.n_u(), n),
        }
    }

    pub fn check(&self, plant: &UncertainPlant) -> Result<()> {
        let n = plant.n();
        expect_shape("A_k", &self.a_k, (n, n))?;
        expect_shape("B_k", &self.b_k, (n, plant.n_y()))?;
        expect_shape("C_k", &self.c_k, (plant.n_u(), n))
    }
}

/// Closed loop with inputs `[d; p]` (`d = [w; v]`, `p = [p_h; p_c]`) and outputs `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub n: usize,
    pub n_d: usize,
    pub n_theta_h: usize,
    pub n_theta_c: usize,
}

impl ClosedLoop {
    /// `S_p = [I 0]`
    pub fn s_p(&self) -> DMatrix<f64> {
        selection(self.n, 0)
    }

    /// `S_k = [0 I]`
    pub fn s_k(&self) -> DMatrix<f64> {
        selection(self.n, self.n)
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta_h + self.n_theta_c
    }

    /// Uncertainty output `p = Δ q` with `q = C x + D [d; p]`, solved exactly.
    /// `None` when the loop is ill-posed for this `Δ`.
    pub fn resolve_p(&self, x: &DVector<f64>, d: &DVector<f64>, delta: &[f64]) -> Option<DVector<f64>> {
        let np = self.n_theta();
        let dl = DMatrix::from_diagonal(&DVector::from_column_slice(delta));
        let d_d = self.d.columns(0, self.n_d);
        let d_p = self.d.columns(self.n_d, np);
        let lhs = DMatrix::identity(np, np) - &dl * d_p;
        let rhs = &dl * (&self.c * x + d_d * d);
        let lu = lhs.lu();
        if lu.determinant().abs() < 1e-12 {
            return None;
        }
        lu.solve(&rhs)
    }

    pub fn flow(&self, x: &DVector<f64>, d: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        let mut dp = DVector::zeros(self.n_d + p.len());
        dp.rows_mut(0, self.n_d).copy_from(d);
        dp.rows_mut(self.n_d, p.len()).copy_from(p);
        &self.a * x + &self.b * dp
    }
}

pub fn selection(n: usize, offset: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        s[(i, offset + i)] = 1.0;
    }
    s
}

/// Places `m` at `(r, c)` inside `out`.
pub(crate) fn put(out: &mut DMatrix<f64>, r: usize, c: usize, m: &DMatrix<f64>) {
    out.view_mut((r, c), m.shape()).copy_from(m);
}

pub fn assemble_closed_loop(plant: &UncertainPlant, k: &Controller) -> Result<ClosedLoop> {
    k.check(plant)?;
    let n = plant.n();
    let n_y = plant.n_y();
    let n_d = plant.n_d();
    let (nh, nc) = (plant.n_theta_h(), plant.n_theta_c());
    let cbar = plant.cbar();
    let ac_cbar = &plant.a_c * &cbar;

    let mut a = DMatrix::zeros(2 * n, 2 * n);
    put(&mut a, 0, 0, &plant.a_p());
    put(&mut a, 0, n, &(&plant.a_u * &k.c_k));
    put(&mut a, n, 0, &(&k.b_k * &ac_cbar));
    put(&mut a, n, n, &k.a_k);

    let mut b = DMatrix::zeros(2 * n, n_d + nh + nc);
    put(&mut b, 0, 0, &DMatrix::identity(n, n));
    put(&mut b, n, n, &k.b_k);
    put(&mut b, 0, n_d, &plant.b_h);
    put(&mut b, 0, n_d + nh, &(&plant.a_y * &plant.b_c));
    put(&mut b, n, n_d + nh, &(&k.b_k * &plant.b_c));

    let mut c = DMatrix::zeros(nh + nc, 2 * n);
    put(&mut c, 0, 0, &(&plant.c_y * &ac_cbar));
    put(&mut c, 0, n, &(&plant.c_u * &k.c_k));
    put(&mut c, nh, 0, &(&plant.c_c * &cbar));

    let mut d = DMatrix::zeros(nh + nc, n_d + nh + nc);
    put(&mut d, 0, n_d + nh, &(&plant.c_y * &plant.b_c));
    debug_assert_eq!(n_d, n + n_y);

    Ok(ClosedLoop {
        a,
        b,
        c,
        d,
        n,
        n_d,
        n_theta_h: nh,
        n_theta_c: nc,
    })
}

/// Plants from the two reference case studies.
pub mod examples {
    use super::*;

    /// Inverted pendulum with `g/r = 1/(m r²) = 1`, `θ_g ∈ [sin(0.5)/0.5, 1]`,
    /// state `[ẏ, y]`, `|y| ≤ 0.5`, `|ẏ| ≤ 1`, `|u| ≤ 3`, `|w₁| ≤ 0.2`.
    pub fn pendulum() -> (UncertainPlant, Constraints) {
        let lo = 0.5f64.sin() / 0.5;
        let (mid, half) = ((lo + 1.0) / 2.0, (1.0 - lo) / 2.0);
        let plant = UncertainPlant::from_parts(PlantParts {
            indices: vec![2],
            a_u: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            a_y: DMatrix::from_column_slice(2, 1, &[mid, 0.0]),
            b_h: Some(DMatrix::from_column_slice(2, 1, &[half, 0.0])),
            c_u: Some(DMatrix::zeros(1, 1)),
            c_y: Some(DMatrix::from_element(1, 1, 1.0)),
            a_a: DMatrix::identity(1, 1),
            ..Default::default()
        })
        .expect("pendulum model is well formed");
        let cons = Constraints {
            f: DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 0.0]),
            u_bar: vec![3.0],
            d_bar: vec![0.2, 0.0, 0.0],
        };
        (plant, cons)
    }

    /// Double spring-mass, `m₁ = m₂ = 2`, `k₁, k₂ ∈ [0.9, 1]`, state `[ẋ₁, x₁, ẋ₂, x₂]`,
    /// outputs are spring forces. Six state limits of 2, `|u_i| ≤ 10`, `|v_i| ≤ 0.02`.
    pub fn spring_mass() -> (UncertainPlant, Constraints) {
        let m = 2.0;
        let (lo, hi) = (1.0, 1.0 / 0.9);
        let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        let plant = UncertainPlant::from_parts(PlantParts {
            indices: vec![2, 2],
            a_u: DMatrix::from_row_slice(4, 2, &[1.0 / m, 0.0, 0.0, 0.0, 0.0, 1.0 / m, 0.0, 0.0]),
            a_y: DMatrix::from_row_slice(4, 2, &[-1.0 / m, 1.0 / m, 0.0, 0.0, 0.0, -1.0 / m, 0.0, 0.0]),
            a_a: DMatrix::from_row_slice(2, 2, &[mid, 0.0, mid, mid]),
            b_a: Some(DMatrix::from_row_slice(2, 2, &[half, 0.0, half, half])),
            c_a: Some(DMatrix::identity(2, 2)),
            ..Default::default()
        })
        .expect("spring-mass model is well formed");
        #[rustfmt::skip]
        let f = DMatrix::from_row_slice(6, 4, &[
            0.0, -0.5, 0.0, 0.5,
            -0.5, 0.0, 0.5, 0.0,
            0.0, 0.5, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.5,
            0.5, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.5, 0.0,
        ]);
        let cons = Constraints {
            f,
            u_bar: vec![10.0, 10.0],
            d_bar: vec![0.0, 0.0, 0.0, 0.0, 0.02, 0.02],
        };
        (plant, cons)
    }
}
