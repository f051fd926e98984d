//! Co-simulation of the true canonical plant with an independently integrated copy of
//! the sensitivity filters, including the `Δ`-weighted filters that the runtime never sees.

use barrier_pair::estimator::{nominal_state, phi, EstimatorConfig, FilterState};
use barrier_pair::model::UncertainPlant;
use nalgebra::{DMatrix, DVector};

pub struct Reconstruction {
    /// `‖x − x̄ − x̃‖ / max(1, ‖x‖)` at the final time.
    pub terminal_error: f64,
    /// Smallest `n_θ φ − x̃ᵀx̃` over the run.
    pub worst_ellipsoid_slack: f64,
    /// Largest `√(eᵀ X_0 e)` over the run.
    pub max_error_norm: f64,
}

#[derive(Clone)]
struct Aug {
    x: DVector<f64>,
    f: Vec<DMatrix<f64>>,
    g: Vec<DMatrix<f64>>,
    gp: Vec<DMatrix<f64>>,
}

impl Aug {
    fn axpy(&self, k: &Aug, s: f64) -> Aug {
        let z = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| a.iter().zip(b).map(|(a, b)| a + b * s).collect();
        Aug {
            x: &self.x + &k.x * s,
            f: z(&self.f, &k.f),
            g: z(&self.g, &k.g),
            gp: z(&self.gp, &k.gp),
        }
    }
}

/// Open-loop excitation, distinct per input channel.
pub fn excitation(t: f64, n_u: usize) -> DVector<f64> {
    DVector::from_fn(n_u, |i, _| 0.6 * (1.3 * t + i as f64).sin() + 0.3 * (0.4 * t * (i + 1) as f64).cos())
}

pub fn reconstruct(
    plant: &UncertainPlant,
    cfg: &EstimatorConfig,
    delta_h: &[f64],
    delta_a: &[f64],
    d: Option<&[f64]>,
    horizon: f64,
    dt: f64,
) -> Reconstruction {
    let (n, n_u) = (plant.n(), plant.n_u());
    let (abar, cbar) = (plant.abar(), plant.cbar());
    let (th_u, th_y) = plant.theta_h(delta_h);
    let th_c = plant.theta_a(delta_a).try_inverse().expect("Θ_a invertible");
    let zero_d = vec![0.0; plant.n_d()];
    let d = DVector::from_column_slice(d.unwrap_or(&zero_d));
    let (w, v) = (d.rows(0, n).into_owned(), d.rows(n, plant.n_y()).into_owned());
    let delta: Vec<f64> = delta_h.iter().chain(delta_a).copied().collect();
    let eye = DMatrix::<f64>::identity(n, n);

    let h_of = |t: f64, x: &DVector<f64>| {
        let u = excitation(t, n_u);
        let y = &th_c * &cbar * x + &v;
        let mut h = DVector::zeros(n_u + y.len());
        h.rows_mut(0, n_u).copy_from(&u);
        h.rows_mut(n_u, y.len()).copy_from(&y);
        (u, h)
    };
    let rate = |t: f64, s: &Aug| {
        let (u, h) = h_of(t, &s.x);
        let x_dot = (&abar + &th_y * &th_c * &cbar) * &s.x + &th_u * u + &w;
        let q = &cfg.c_hat_h * &h;
        let filt = |ms: &[DMatrix<f64>], drive: &dyn Fn(usize) -> f64| {
            ms.iter().enumerate().map(|(j, m)| &cfg.a_z * m + &eye * drive(j)).collect::<Vec<_>>()
        };
        Aug {
            x: x_dot,
            f: filt(&s.f, &|j| h[j]),
            g: filt(&s.g, &|j| q[j]),
            gp: filt(&s.gp, &|j| delta[j] * q[j]),
        }
    };

    let zeros = |k: usize| vec![DMatrix::zeros(n, n); k];
    let mut s = Aug {
        x: DVector::zeros(n),
        f: zeros(cfg.n_h()),
        g: zeros(cfg.n_theta()),
        gp: zeros(cfg.n_theta()),
    };
    let steps = (horizon / dt).round() as usize;
    let mut out = Reconstruction {
        terminal_error: 0.0,
        worst_ellipsoid_slack: f64::INFINITY,
        max_error_norm: 0.0,
    };
    for k in 0..=steps {
        let fs = FilterState {
            eh_t: s.f.clone(),
            eq_t: s.g.clone(),
            t: k as f64 * dt,
        };
        let x_bar = nominal_state(&fs, cfg);
        let x_tilde = s.gp.iter().enumerate().fold(DVector::zeros(n), |acc, (j, m)| acc + m * cfg.b_hat_h.column(j));
        let e = &s.x - &x_bar - &x_tilde;
        let slack = cfg.n_theta() as f64 * phi(&fs, cfg) - x_tilde.norm_squared();
        out.worst_ellipsoid_slack = out.worst_ellipsoid_slack.min(slack);
        out.max_error_norm = out.max_error_norm.max(e.dot(&(&cfg.x0 * &e)).max(0.0).sqrt());
        out.terminal_error = e.norm() / s.x.norm().max(1.0);
        if k == steps {
            break;
        }
        let t = k as f64 * dt;
        let k1 = rate(t, &s);
        let k2 = rate(t + dt / 2.0, &s.axpy(&k1, dt / 2.0));
        let k3 = rate(t + dt / 2.0, &s.axpy(&k2, dt / 2.0));
        let k4 = rate(t + dt, &s.axpy(&k3, dt));
        s = s.axpy(&k1, dt / 6.0).axpy(&k2, dt / 3.0).axpy(&k3, dt / 3.0).axpy(&k4, dt / 6.0);
    }
    out
}
