//! Matrix-valued expressions that are affine in the decision vector.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use super::LmiError;

/// `constant + sum_i z_i * coeff_i` with every matrix of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineExpr {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    /// Builds an expression from raw parts. Coefficients with the wrong shape are rejected.
    pub fn from_parts(
        constant: DMatrix<f64>,
        terms: impl IntoIterator<Item = (usize, DMatrix<f64>)>,
    ) -> Result<Self, LmiError> {
        let shape = constant.shape();
        let mut e = Self::constant(constant);
        for (k, m) in terms {
            if m.shape() != shape {
                return Err(LmiError::Dimension(format!(
                    "coefficient of scalar {k} is {:?}, expected {:?}",
                    m.shape(),
                    shape
                )));
            }
            e.add_term(k, &m, 1.0);
        }
        Ok(e)
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.terms.iter().map(|(k, m)| (*k, m))
    }

    pub fn coefficient(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.terms.get(&k)
    }

    /// Largest scalar index referenced, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    fn add_term(&mut self, k: usize, m: &DMatrix<f64>, s: f64) {
        match self.terms.get_mut(&k) {
            Some(c) => *c += m * s,
            None => {
                self.terms.insert(k, m * s);
            }
        }
    }

    fn prune(mut self) -> Self {
        self.terms.retain(|_, m| m.iter().any(|v| *v != 0.0));
        self
    }

    pub fn eval(&self, z: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            let v = z.get(*k).copied().unwrap_or(0.0);
            if v != 0.0 {
                out += m * v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self {
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|(k, m)| (*k, m.transpose()))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(k, m)| (*k, m * s)).collect(),
        }
        .prune()
    }

    /// Kronecker product of a 1×1 expression with a constant matrix.
    pub fn times_matrix(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(self.shape(), (1, 1), "times_matrix needs a 1x1 expression");
        Self {
            constant: m * self.constant[(0, 0)],
            terms: self.terms.iter().map(|(k, c)| (*k, m * c[(0, 0)])).collect(),
        }
        .prune()
    }

    /// `self + selfᵀ`
    pub fn he(&self) -> Self {
        self + &self.transpose()
    }

    /// `self` with `(self + selfᵀ)/2` symmetrization.
    pub fn symmetrized(&self) -> Self {
        (self + &self.transpose()).scale(0.5)
    }

    pub fn left_mul(&self, m: &DMatrix<f64>) -> Self {
        Self {
            constant: m * &self.constant,
            terms: self.terms.iter().map(|(k, c)| (*k, m * c)).collect(),
        }
        .prune()
    }

    pub fn right_mul(&self, m: &DMatrix<f64>) -> Self {
        Self {
            constant: &self.constant * m,
            terms: self.terms.iter().map(|(k, c)| (*k, c * m)).collect(),
        }
        .prune()
    }

    /// Extracts a sub-block (rows `r0..r0+nr`, cols `c0..c0+nc`).
    pub fn view(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        Self {
            constant: self.constant.view((r0, c0), (nr, nc)).into_owned(),
            terms: self
                .terms
                .iter()
                .map(|(k, m)| (*k, m.view((r0, c0), (nr, nc)).into_owned()))
                .collect(),
        }
        .prune()
    }

    /// Row `i` as a 1×cols expression.
    pub fn row(&self, i: usize) -> Self {
        self.view(i, 0, 1, self.ncols())
    }

    fn check_same(&self, other: &Self, op: &str) {
        assert_eq!(
            self.shape(),
            other.shape(),
            "shape mismatch in affine {op}: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
    }

    /// Assembles a block matrix. Every row of blocks must share a height and every
    /// column of blocks a width; `None` entries are zero and need a sized neighbour.
    pub fn blocks(grid: &[Vec<Option<AffineExpr>>]) -> Result<Self, LmiError> {
        let nbr = grid.len();
        let nbc = grid.first().map_or(0, |r| r.len());
        if grid.iter().any(|r| r.len() != nbc) {
            return Err(LmiError::Dimension("ragged block grid".into()));
        }
        let mut heights = vec![None; nbr];
        let mut widths = vec![None; nbc];
        for (i, row) in grid.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    let (r, c) = b.shape();
                    for (slot, v, what) in [(&mut heights[i], r, "row"), (&mut widths[j], c, "column")] {
                        match slot {
                            Some(prev) if *prev != v => {
                                return Err(LmiError::Dimension(format!(
                                    "block ({i},{j}) breaks {what} size: {v} vs {prev}"
                                )))
                            }
                            _ => *slot = Some(v),
                        }
                    }
                }
            }
        }
        let heights: Vec<usize> = heights
            .into_iter()
            .enumerate()
            .map(|(i, h)| h.ok_or_else(|| LmiError::Dimension(format!("block row {i} has no sized entry"))))
            .collect::<Result<_, _>>()?;
        let widths: Vec<usize> = widths
            .into_iter()
            .enumerate()
            .map(|(j, w)| w.ok_or_else(|| LmiError::Dimension(format!("block column {j} has no sized entry"))))
            .collect::<Result<_, _>>()?;
        let total_r: usize = heights.iter().sum();
        let total_c: usize = widths.iter().sum();
        let mut out = Self::zeros(total_r, total_c);
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    out.constant
                        .view_mut((r0, c0), (heights[i], widths[j]))
                        .copy_from(&b.constant);
                    for (k, m) in &b.terms {
                        let slot = out
                            .terms
                            .entry(*k)
                            .or_insert_with(|| DMatrix::zeros(total_r, total_c));
                        slot.view_mut((r0, c0), (heights[i], widths[j])).copy_from(m);
                    }
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        Ok(out)
    }

    /// Symmetric block matrix from its lower triangle (`lower[i][j]` for `j <= i`);
    /// upper blocks are the transposes.
    pub fn sym_blocks(lower: &[Vec<Option<AffineExpr>>]) -> Result<Self, LmiError> {
        let n = lower.len();
        let mut grid: Vec<Vec<Option<AffineExpr>>> = vec![vec![None; n]; n];
        for (i, row) in lower.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(LmiError::Dimension(format!(
                    "lower-triangular row {i} has {} blocks, expected {}",
                    row.len(),
                    i + 1
                )));
            }
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    if i != j {
                        grid[j][i] = Some(b.transpose());
                    }
                    grid[i][j] = Some(b.clone());
                }
            }
        }
        Self::blocks(&grid)
    }

    /// Block-diagonal stacking.
    pub fn block_diag(parts: &[AffineExpr]) -> Result<Self, LmiError> {
        let n = parts.len();
        let mut grid: Vec<Vec<Option<AffineExpr>>> = vec![vec![None; n]; n];
        for (i, p) in parts.iter().enumerate() {
            grid[i][i] = Some(p.clone());
        }
        // Off-diagonal zeros need explicit sizes.
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    grid[i][j] = Some(Self::zeros(parts[i].nrows(), parts[j].ncols()));
                }
            }
        }
        Self::blocks(&grid)
    }
}

impl From<DMatrix<f64>> for AffineExpr {
    fn from(m: DMatrix<f64>) -> Self {
        Self::constant(m)
    }
}

impl Add for &AffineExpr {
    type Output = AffineExpr;
    fn add(self, rhs: &AffineExpr) -> AffineExpr {
        self.check_same(rhs, "add");
        let mut out = self.clone();
        out.constant += &rhs.constant;
        for (k, m) in &rhs.terms {
            out.add_term(*k, m, 1.0);
        }
        out.prune()
    }
}

impl Sub for &AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: &AffineExpr) -> AffineExpr {
        self.check_same(rhs, "sub");
        let mut out = self.clone();
        out.constant -= &rhs.constant;
        for (k, m) in &rhs.terms {
            out.add_term(*k, m, -1.0);
        }
        out.prune()
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(self, rhs: AffineExpr) -> AffineExpr {
        &self + &rhs
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        &self - &rhs
    }
}

impl Neg for &AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Add<&DMatrix<f64>> for &AffineExpr {
    type Output = AffineExpr;
    fn add(self, rhs: &DMatrix<f64>) -> AffineExpr {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch in affine add");
        let mut out = self.clone();
        out.constant += rhs;
        out
    }
}

impl Mul<&AffineExpr> for &DMatrix<f64> {
    type Output = AffineExpr;
    fn mul(self, rhs: &AffineExpr) -> AffineExpr {
        rhs.left_mul(self)
    }
}

impl Mul<&DMatrix<f64>> for &AffineExpr {
    type Output = AffineExpr;
    fn mul(self, rhs: &DMatrix<f64>) -> AffineExpr {
        self.right_mul(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(k: usize, r: usize, c: usize, i: usize, j: usize) -> AffineExpr {
        let mut m = DMatrix::zeros(r, c);
        m[(i, j)] = 1.0;
        AffineExpr::from_parts(DMatrix::zeros(r, c), [(k, m)]).unwrap()
    }

    #[test]
    fn eval_is_affine() {
        let a = var(0, 2, 2, 0, 1);
        let b = &a.he() + &DMatrix::identity(2, 2);
        let v = b.eval(&[3.0]);
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]));
    }

    #[test]
    fn cancelling_terms_are_pruned() {
        let a = var(4, 1, 1, 0, 0);
        let z = &a - &a;
        assert!(z.is_constant());
    }

    #[test]
    fn sym_blocks_fills_upper_triangle() {
        let x = var(0, 1, 1, 0, 0);
        let m = AffineExpr::sym_blocks(&[
            vec![Some(AffineExpr::identity(2))],
            vec![Some(&x * &DMatrix::from_row_slice(1, 2, &[1.0, 2.0])), Some(x.clone())],
        ])
        .unwrap();
        let v = m.eval(&[2.0]);
        assert_eq!(v, v.transpose());
        assert_eq!(v[(0, 2)], 2.0);
        assert_eq!(v[(1, 2)], 4.0);
        assert_eq!(v[(2, 2)], 2.0);
    }

    #[test]
    fn blocks_reject_mismatched_heights() {
        let r = AffineExpr::blocks(&[vec![Some(AffineExpr::zeros(1, 1)), Some(AffineExpr::zeros(2, 1))]]);
        assert!(r.is_err());
    }
}
