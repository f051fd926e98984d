//! Structured matrix variables, affine matrix inequalities and the program container.

use nalgebra::DMatrix;

use super::expr::AffineExpr;
use super::LmiError;

/// Sparsity/symmetry pattern of a matrix variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Structure {
    Symmetric,
    Diagonal,
    /// Full rectangular blocks laid along the diagonal, given as `(rows, cols)`.
    BlockDiagonal(Vec<(usize, usize)>),
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixVariable {
    name: String,
    rows: usize,
    cols: usize,
    structure: Structure,
    offset: usize,
}

impl MatrixVariable {
    fn new(name: &str, rows: usize, cols: usize, structure: Structure, offset: usize) -> Result<Self, LmiError> {
        match &structure {
            Structure::Symmetric | Structure::Diagonal if rows != cols => {
                return Err(LmiError::Dimension(format!("variable {name}: {rows}x{cols} must be square")))
            }
            Structure::BlockDiagonal(b) => {
                let r: usize = b.iter().map(|s| s.0).sum();
                let c: usize = b.iter().map(|s| s.1).sum();
                if r != rows || c != cols {
                    return Err(LmiError::Dimension(format!(
                        "variable {name}: blocks cover {r}x{c}, declared {rows}x{cols}"
                    )));
                }
            }
            _ => {}
        }
        Ok(Self {
            name: name.to_string(),
            rows,
            cols,
            structure,
            offset,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    /// First decision scalar owned by this variable.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Number of decision scalars.
    pub fn len(&self) -> usize {
        match &self.structure {
            Structure::Symmetric => self.rows * (self.rows + 1) / 2,
            Structure::Diagonal => self.rows,
            Structure::BlockDiagonal(b) => b.iter().map(|(r, c)| r * c).sum(),
            Structure::Full => self.rows * self.cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(row, col)` positions of each scalar, in scalar order. Symmetric variables list
    /// the upper-triangle position only.
    fn positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.len());
        match &self.structure {
            Structure::Symmetric => {
                for i in 0..self.rows {
                    for j in i..self.rows {
                        out.push((i, j));
                    }
                }
            }
            Structure::Diagonal => out.extend((0..self.rows).map(|i| (i, i))),
            Structure::BlockDiagonal(b) => {
                let (mut r0, mut c0) = (0, 0);
                for (r, c) in b {
                    for i in 0..*r {
                        for j in 0..*c {
                            out.push((r0 + i, c0 + j));
                        }
                    }
                    r0 += r;
                    c0 += c;
                }
            }
            Structure::Full => {
                for i in 0..self.rows {
                    for j in 0..self.cols {
                        out.push((i, j));
                    }
                }
            }
        }
        out
    }

    /// The variable as an affine expression of the decision vector.
    pub fn expr(&self) -> AffineExpr {
        let sym = self.structure == Structure::Symmetric;
        let terms = self.positions().into_iter().enumerate().map(|(k, (i, j))| {
            let mut m = DMatrix::zeros(self.rows, self.cols);
            m[(i, j)] = 1.0;
            if sym {
                m[(j, i)] = 1.0;
            }
            (self.offset + k, m)
        });
        AffineExpr::from_parts(DMatrix::zeros(self.rows, self.cols), terms).expect("shapes agree")
    }

    /// Scalar `k` (0-based within the variable) as a 1×1 expression.
    pub fn scalar_expr(&self, k: usize) -> AffineExpr {
        assert!(k < self.len());
        AffineExpr::from_parts(DMatrix::zeros(1, 1), [(self.offset + k, DMatrix::from_element(1, 1, 1.0))])
            .expect("1x1")
    }

    pub fn unpack(&self, z: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        let sym = self.structure == Structure::Symmetric;
        for (k, (i, j)) in self.positions().into_iter().enumerate() {
            let v = z[self.offset + k];
            m[(i, j)] = v;
            if sym {
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Writes `m` into the decision vector. Entries outside the structure are ignored;
    /// symmetric variables read the upper triangle.
    pub fn pack(&self, m: &DMatrix<f64>, z: &mut [f64]) -> Result<(), LmiError> {
        if m.shape() != (self.rows, self.cols) {
            return Err(LmiError::Dimension(format!(
                "pack {}: got {:?}, expected {:?}",
                self.name,
                m.shape(),
                (self.rows, self.cols)
            )));
        }
        for (k, (i, j)) in self.positions().into_iter().enumerate() {
            z[self.offset + k] = m[(i, j)];
        }
        Ok(())
    }
}

/// Which side of zero an [`AffineBlock`] must lie on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Sense {
    /// `F(z) ⪰ 0`
    Psd,
    /// `F(z) ⪰ τI`
    PsdStrict,
    /// `F(z) ⪯ −τI`
    NsdStrict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock {
    pub label: String,
    pub expr: AffineExpr,
    pub sense: Sense,
}

impl AffineBlock {
    pub fn new(label: impl Into<String>, expr: AffineExpr, sense: Sense) -> Result<Self, LmiError> {
        let label = label.into();
        if expr.nrows() != expr.ncols() {
            return Err(LmiError::Dimension(format!("block {label} is {:?}", expr.shape())));
        }
        let asym = |m: &DMatrix<f64>| {
            let scale = m.amax().max(1.0);
            (m - m.transpose()).amax() > 1e-9 * scale
        };
        if asym(expr.constant_part()) || expr.terms().any(|(_, m)| asym(m)) {
            return Err(LmiError::NotSymmetric(label));
        }
        Ok(Self {
            label,
            expr: expr.symmetrized(),
            sense,
        })
    }

    pub fn dim(&self) -> usize {
        self.expr.nrows()
    }

    /// Minimum eigenvalue of the block oriented so that non-negative means satisfied
    /// (`F` for PSD senses, `−F` for NSD).
    pub fn margin(&self, z: &[f64]) -> f64 {
        let m = self.expr.eval(z);
        let m = match self.sense {
            Sense::Psd | Sense::PsdStrict => m,
            Sense::NsdStrict => -m,
        };
        min_eigenvalue(&m)
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

/// `row · z == rhs` over decision scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub coefficients: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Minimize `c·z − weight·logdet(G(z))`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Objective {
    pub linear: Vec<(usize, f64)>,
    pub logdet: Option<(f64, AffineExpr)>,
}

/// A determinant-maximization program over structured matrix variables.
#[derive(Debug, Clone, Default)]
pub struct MaxDetProgram {
    variables: Vec<MatrixVariable>,
    n_scalars: usize,
    blocks: Vec<AffineBlock>,
    equalities: Vec<LinearEquality>,
    objective: Objective,
}

impl MaxDetProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn variable(&mut self, name: &str, rows: usize, cols: usize, structure: Structure) -> Result<MatrixVariable, LmiError> {
        let v = MatrixVariable::new(name, rows, cols, structure, self.n_scalars)?;
        self.n_scalars += v.len();
        self.variables.push(v.clone());
        Ok(v)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Result<MatrixVariable, LmiError> {
        self.variable(name, n, n, Structure::Symmetric)
    }

    pub fn diagonal(&mut self, name: &str, n: usize) -> Result<MatrixVariable, LmiError> {
        self.variable(name, n, n, Structure::Diagonal)
    }

    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> Result<MatrixVariable, LmiError> {
        self.variable(name, rows, cols, Structure::Full)
    }

    pub fn scalar(&mut self, name: &str) -> Result<MatrixVariable, LmiError> {
        self.variable(name, 1, 1, Structure::Full)
    }

    pub fn variables(&self) -> &[MatrixVariable] {
        &self.variables
    }

    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }

    pub fn blocks(&self) -> &[AffineBlock] {
        &self.blocks
    }

    pub fn equalities(&self) -> &[LinearEquality] {
        &self.equalities
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    fn check_expr(&self, e: &AffineExpr, what: &str) -> Result<(), LmiError> {
        if let Some(k) = e.max_index() {
            if k >= self.n_scalars {
                return Err(LmiError::Dimension(format!(
                    "{what} references scalar {k} but the program has {}",
                    self.n_scalars
                )));
            }
        }
        Ok(())
    }

    pub fn add_block(&mut self, block: AffineBlock) -> Result<(), LmiError> {
        self.check_expr(&block.expr, &block.label)?;
        self.blocks.push(block);
        Ok(())
    }

    pub fn psd(&mut self, label: &str, e: AffineExpr) -> Result<(), LmiError> {
        self.add_block(AffineBlock::new(label, e, Sense::Psd)?)
    }

    pub fn psd_strict(&mut self, label: &str, e: AffineExpr) -> Result<(), LmiError> {
        self.add_block(AffineBlock::new(label, e, Sense::PsdStrict)?)
    }

    pub fn nsd_strict(&mut self, label: &str, e: AffineExpr) -> Result<(), LmiError> {
        self.add_block(AffineBlock::new(label, e, Sense::NsdStrict)?)
    }

    /// Every diagonal entry of `v` (a diagonal variable) non-negative.
    pub fn nonnegative_diagonal(&mut self, label: &str, v: &MatrixVariable) -> Result<(), LmiError> {
        for k in 0..v.len() {
            self.psd(label, v.scalar_expr(k))?;
        }
        Ok(())
    }

    /// `e == rhs` for a 1×1 expression.
    pub fn equal(&mut self, e: &AffineExpr, rhs: f64) -> Result<(), LmiError> {
        if e.shape() != (1, 1) {
            return Err(LmiError::Dimension("equality must be scalar".into()));
        }
        self.check_expr(e, "equality")?;
        self.equalities.push(LinearEquality {
            coefficients: e.terms().map(|(k, m)| (k, m[(0, 0)])).collect(),
            rhs: rhs - e.constant_part()[(0, 0)],
        });
        Ok(())
    }

    /// Adds `e` (1×1) to the minimized linear objective.
    pub fn minimize(&mut self, e: &AffineExpr) -> Result<(), LmiError> {
        if e.shape() != (1, 1) {
            return Err(LmiError::Dimension("linear objective must be scalar".into()));
        }
        self.check_expr(e, "objective")?;
        for (k, m) in e.terms() {
            self.objective.linear.push((k, m[(0, 0)]));
        }
        Ok(())
    }

    pub fn maximize(&mut self, e: &AffineExpr) -> Result<(), LmiError> {
        self.minimize(&-e)
    }

    /// Adds `−weight·logdet(g)` to the minimized objective.
    pub fn maximize_logdet(&mut self, g: AffineExpr, weight: f64) -> Result<(), LmiError> {
        if g.nrows() != g.ncols() || weight < 0.0 {
            return Err(LmiError::Dimension("logdet term must be square with weight >= 0".into()));
        }
        self.check_expr(&g, "logdet")?;
        self.objective.logdet = Some((weight, g.symmetrized()));
        Ok(())
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        let mut v: f64 = self.objective.linear.iter().map(|(k, c)| c * z[*k]).sum();
        if let Some((w, g)) = &self.objective.logdet {
            if *w > 0.0 {
                v -= w * logdet(&g.eval(z)).unwrap_or(f64::NEG_INFINITY);
            }
        }
        v
    }
}

pub fn logdet(m: &DMatrix<f64>) -> Option<f64> {
    let c = m.clone().cholesky()?;
    Some(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}
