//! Seeded randomized batteries over the semidefinite solver. Each returns its per-case
//! pass count so callers can apply a rate threshold.

use barrier_pair::lmi::{solve, AffineExpr, MaxDetProgram, SolverOptions, Structure};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Battery {
    pub name: &'static str,
    pub cases: usize,
    pub passed: usize,
    pub first_failure: Option<String>,
}

impl Battery {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            passed: 0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, why: impl FnOnce() -> String) {
        self.cases += 1;
        if ok {
            self.passed += 1;
        } else if self.first_failure.is_none() {
            self.first_failure = Some(why());
        }
    }

    pub fn rate(&self) -> f64 {
        if self.cases == 0 {
            0.0
        } else {
            self.passed as f64 / self.cases as f64
        }
    }
}

fn random_structure(rng: &mut ChaCha8Rng) -> (usize, usize, Structure) {
    match rng.random_range(0..4) {
        0 => {
            let n = rng.random_range(1..7);
            (n, n, Structure::Symmetric)
        }
        1 => {
            let n = rng.random_range(1..7);
            (n, n, Structure::Diagonal)
        }
        2 => (rng.random_range(1..6), rng.random_range(1..6), Structure::Full),
        _ => {
            let b: Vec<(usize, usize)> = (0..rng.random_range(1..4)).map(|_| (rng.random_range(1..3), rng.random_range(1..3))).collect();
            (b.iter().map(|s| s.0).sum(), b.iter().map(|s| s.1).sum(), Structure::BlockDiagonal(b))
        }
    }
}

/// Pack then unpack is the identity on decision vectors and on structured matrices.
pub fn round_trip(cases: usize, seed: u64) -> Battery {
    let mut out = Battery::new("round-trip");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let mut p = MaxDetProgram::new();
        let pad = rng.random_range(0..3);
        if pad > 0 {
            p.full("pad", pad, 1).unwrap();
        }
        let (r, c, s) = random_structure(&mut rng);
        let v = p.variable("v", r, c, s.clone()).unwrap();
        let z: Vec<f64> = (0..p.n_scalars()).map(|_| rng.random_range(-1e3..1e3)).collect();
        let m = v.unpack(&z);
        let mut z2 = z.clone();
        z2[pad..].iter_mut().for_each(|x| *x = f64::NAN);
        let packed = v.pack(&m, &mut z2).is_ok();
        let ok = packed && z2 == z && v.expr().eval(&z) == m && v.unpack(&z2) == m;
        out.record(ok, || format!("{r}x{c} {s:?}"));
    }
    out
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

fn psd2(m: &DMatrix<f64>) -> bool {
    m[(0, 0)] >= 0.0 && m[(1, 1)] >= 0.0 && m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] >= 0.0
}

/// Minimum of `c·z` over `F(z) ⪰ 0, |z_i| ≤ box` by a grid that is refined around the
/// incumbent.
fn grid_min(f: &dyn Fn(f64, f64) -> DMatrix<f64>, c: (f64, f64), bx: f64) -> Option<f64> {
    let scan = |lo: (f64, f64), hi: (f64, f64), k: usize| {
        let mut best: Option<(f64, f64, f64)> = None;
        for i in 0..=k {
            let a = lo.0 + (hi.0 - lo.0) * i as f64 / k as f64;
            for j in 0..=k {
                let b = lo.1 + (hi.1 - lo.1) * j as f64 / k as f64;
                if a.abs() > bx || b.abs() > bx || !psd2(&f(a, b)) {
                    continue;
                }
                let v = c.0 * a + c.1 * b;
                if best.is_none_or(|x| v < x.0) {
                    best = Some((v, a, b));
                }
            }
        }
        best
    };
    let k = 800;
    let mut h = 2.0 * bx / k as f64;
    let mut best = scan((-bx, -bx), (bx, bx), k)?;
    for _ in 0..4 {
        let w = 3.0 * h;
        if let Some(b) = scan((best.1 - w, best.2 - w), (best.1 + w, best.2 + w), 300) {
            if b.0 <= best.0 {
                best = b;
            }
        }
        h = 2.0 * w / 300.0;
    }
    Some(best.0)
}

/// Random two-scalar programs with one 2×2 block, checked against a dense grid.
pub fn grid_agreement(cases: usize, seed: u64) -> Battery {
    let mut out = Battery::new("grid-search agreement");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bx = 2.0;
    for _ in 0..cases {
        let l = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let c0 = &l * l.transpose() + DMatrix::identity(2, 2) * 0.2;
        let (c1, c2) = (random_sym(&mut rng, 2), random_sym(&mut rng, 2));
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        let c = (th.cos(), th.sin());

        let mut p = MaxDetProgram::new();
        let a = p.scalar("a").unwrap();
        let b = p.scalar("b").unwrap();
        let fz = AffineExpr::from_parts(c0.clone(), [(0, c1.clone()), (1, c2.clone())]).unwrap();
        p.psd("F", fz).unwrap();
        for (name, v) in [("a", &a), ("b", &b)] {
            p.psd(&format!("{name}<=box"), &AffineExpr::scalar(bx) - &v.expr()).unwrap();
            p.psd(&format!("{name}>=-box"), &AffineExpr::scalar(bx) + &v.expr()).unwrap();
        }
        p.minimize(&(&a.expr().scale(c.0) + &b.expr().scale(c.1))).unwrap();
        let r = solve(&p, &SolverOptions::default());

        let f = |x: f64, y: f64| &c0 + &c1 * x + &c2 * y;
        let oracle = grid_min(&f, c, bx);
        let (ok, detail) = match (r, oracle) {
            (Ok(r), Some(g)) if r.is_optimal() => {
                let v = c.0 * r.point[0] + c.1 * r.point[1];
                ((v - g).abs() <= 1e-3 * g.abs().max(1.0), format!("solver {v}, grid {g}"))
            }
            (r, g) => (false, format!("solver {:?}, grid {g:?}", r.map(|r| r.status))),
        };
        out.record(ok, || detail);
    }
    out
}

fn logdet_with_bound(bound: f64, m: &DMatrix<f64>) -> Option<f64> {
    let n = m.nrows();
    let mut p = MaxDetProgram::new();
    let y = p.symmetric("Y", n).unwrap();
    p.psd("Y<=M", &AffineExpr::constant(m.clone()) - &y.expr()).unwrap();
    p.psd("Y11<=b", &AffineExpr::scalar(bound) - &y.scalar_expr(0)).unwrap();
    p.maximize_logdet(y.expr(), 1.0).unwrap();
    let r = solve(&p, &SolverOptions::default()).ok()?;
    r.is_optimal().then(|| barrier_pair::lmi::logdet(&y.unpack(&r.point))).flatten()
}

/// Relaxing a scalar bound never lowers the optimal log-determinant (1-D and 2-D).
pub fn monotonicity(cases: usize, seed: u64) -> Battery {
    let mut out = Battery::new("max-det monotonicity");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..cases {
        let n = 1 + k % 2;
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
        let b1 = rng.random_range(0.01..2.0);
        let b2 = b1 + rng.random_range(0.0..1.0);
        let (o1, o2) = (logdet_with_bound(b1, &m), logdet_with_bound(b2, &m));
        let ok = matches!((o1, o2), (Some(x), Some(y)) if y >= x - 1e-6 * x.abs().max(1.0));
        out.record(ok, || format!("n = {n}, b {b1} -> {b2}: {o1:?} -> {o2:?}"));
    }
    out
}
