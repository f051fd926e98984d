mod common;

use barrier_pair::bundle::ArtifactBundle;
use barrier_pair::sim::*;
use barrier_pair::supervisor::{SupervisorConfig, SwitchMode};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sign(rng: &mut ChaCha8Rng, v: f64) -> f64 {
    if rng.random::<bool>() {
        v
    } else {
        -v
    }
}

/// A ramp that overshoots the position limit at speed beyond the velocity limit.
fn random_pendulum(rng: &mut ChaCha8Rng, k: usize, mode: SwitchMode) -> Scenario {
    let mag = rng.random_range(0.3..0.9);
    let target = sign(rng, mag);
    let speed = rng.random_range(0.5..2.0);
    let t1 = 1.0 + target.abs() / speed;
    let v = speed * target.signum();
    Scenario {
        name: format!("pendulum-{k}"),
        plant: PlantKind::Pendulum,
        params: TrueParams::default(),
        dt: 1e-3,
        horizon: 8.0,
        disturbance: vec![DisturbanceSegment {
            t: 0.0,
            w: vec![sign(rng, 0.2), 0.0],
            v: vec![],
        }],
        reference: vec![
            Waypoint { t: 1.0, x: vec![v, 0.0] },
            Waypoint { t: t1, x: vec![v, target] },
            Waypoint { t: t1, x: vec![0.0, target] },
        ],
        tracking: Tracking {
            gain: vec![vec![rng.random_range(2.0..8.0), rng.random_range(4.0..16.0)]],
            feedforward: vec![],
        },
        supervisor: SupervisorConfig { mode, ..Default::default() },
        supervised: true,
        baseline: None,
        bound: Default::default(),
    }
}

/// Masses pushed apart past the spread limit with a random constant push.
fn random_spring_mass(rng: &mut ChaCha8Rng, k: usize, mode: SwitchMode) -> Scenario {
    let (a, b) = (rng.random_range(0.5..1.6), rng.random_range(0.5..1.6));
    let dur = rng.random_range(0.5..2.0);
    let (va, vb) = (-a / dur, b / dur);
    let (kv, kp) = (rng.random_range(3.0..8.0), rng.random_range(6.0..16.0));
    Scenario {
        name: format!("spring-mass-{k}"),
        plant: PlantKind::SpringMass,
        params: TrueParams {
            k1: Some(rng.random_range(0.9..=1.0)),
            k2: Some(rng.random_range(0.9..=1.0)),
            ..Default::default()
        },
        dt: 1e-3,
        horizon: 8.0,
        disturbance: vec![DisturbanceSegment {
            t: 0.0,
            w: vec![],
            v: vec![sign(rng, 0.02), sign(rng, 0.02)],
        }],
        reference: vec![
            Waypoint { t: 1.0, x: vec![va, 0.0, vb, 0.0] },
            Waypoint { t: 1.0 + dur, x: vec![va, -a, vb, b] },
            Waypoint { t: 1.0 + dur, x: vec![0.0, -a, 0.0, b] },
        ],
        tracking: Tracking {
            gain: vec![vec![kv, kp, 0.0, 0.0], vec![0.0, 0.0, kv, kp]],
            feedforward: vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
        },
        supervisor: SupervisorConfig { mode, ..Default::default() },
        supervised: true,
        baseline: None,
        bound: Default::default(),
    }
}

fn run_all(jobs: Vec<(Scenario, &'static ArtifactBundle)>) -> Vec<(String, Result<Trace, String>)> {
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(sc, b)| s.spawn(move || (sc.name.clone(), run(sc, b.artifacts()).map_err(|e| e.to_string()))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread")).collect()
    })
}

#[test]
fn randomized_battery_is_safe_and_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (p, sm) = (common::pendulum(), common::spring_mass());
    let mut jobs = Vec::new();
    for k in 0..20 {
        let mode = if k % 2 == 0 { SwitchMode::Sigmoidal } else { SwitchMode::Hysteresis };
        jobs.push((random_pendulum(&mut rng, k, mode), p));
        jobs.push((random_spring_mass(&mut rng, k, mode), sm));
    }
    for (name, tr) in run_all(jobs) {
        let tr = tr.unwrap_or_else(|e| panic!("{name}: {e}"));
        let s = &tr.summary;
        assert!(tr.is_safe(), "{name}: {s:?}");
        assert_eq!(s.bound_violations, 0, "{name}: worst gap {}", s.worst_bound_gap);
        assert_eq!(s.ticks, 8001);
    }
}

#[test]
fn unsupervised_tracking_leaves_the_safe_set() {
    // Sanity check that the battery references really are aggressive.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sc = random_pendulum(&mut rng, 0, SwitchMode::Sigmoidal);
    sc.supervised = false;
    sc.reference[1].x = vec![1.5, 0.9];
    sc.reference[2].x = vec![0.0, 0.9];
    let tr = run(&sc, common::pendulum().artifacts()).unwrap();
    assert!(tr.summary.state_violations > 0);
}

#[test]
fn pendulum_rests_at_the_origin() {
    let sc = Scenario {
        name: "rest".into(),
        plant: PlantKind::Pendulum,
        params: TrueParams::default(),
        dt: 1e-3,
        horizon: 2.0,
        disturbance: vec![],
        reference: vec![],
        tracking: Tracking {
            gain: vec![vec![0.0, 0.0]],
            feedforward: vec![],
        },
        supervisor: SupervisorConfig::default(),
        supervised: false,
        baseline: None,
        bound: Default::default(),
    };
    let tr = run(&sc, common::pendulum().artifacts()).unwrap();
    assert!(tr.rows.iter().all(|r| r.x_p.iter().all(|&v| v == 0.0) && r.u[0] == 0.0));
    assert!(tr.rows.iter().all(|r| r.b_bar == common::pendulum().estimator.r_e));
}

#[test]
fn zero_horizon_writes_only_the_header() {
    let b = common::pendulum();
    let mut sc = common::scenario("pendulum");
    sc.horizon = 0.0;
    let tr = run(&sc, b.artifacts()).unwrap();
    let mut out = Vec::new();
    tr.write_csv(b.constraints.n_s(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(
        text.trim_end(),
        "t,xp1,xp2,xk1,xk2,u1,y1,B_true,B_bar,r_cl,r_p,r_e,mode,margin_1,margin_2"
    );
}

#[test]
fn runs_are_bit_identical() {
    let b = common::spring_mass();
    let mut sc = common::scenario("springmass");
    sc.horizon = 3.0;
    let t1 = run(&sc, b.artifacts()).unwrap();
    let t2 = run(&sc, b.artifacts()).unwrap();
    let bits = |t: &Trace| -> Vec<u64> {
        t.rows
            .iter()
            .flat_map(|r| r.x_p.iter().chain(&r.x_k).chain(&r.u).chain([&r.b_bar, &r.b_true, &r.mode]).map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    assert_eq!(bits(&t1), bits(&t2));
}

#[test]
fn trace_grid_and_columns_are_complete() {
    let b = common::spring_mass();
    let mut sc = common::scenario("springmass");
    sc.horizon = 0.5;
    let tr = run(&sc, b.artifacts()).unwrap();
    assert_eq!(tr.rows.len(), 501);
    for (i, r) in tr.rows.iter().enumerate() {
        assert!((r.t - i as f64 * 1e-3).abs() < 1e-12);
        assert_eq!((r.x_p.len(), r.x_k.len(), r.u.len(), r.y.len()), (4, 4, 2, 2));
        assert_eq!(r.margins.len(), b.constraints.n_s());
        assert!(r.b_bar >= r.r_cl + r.r_p + r.r_e - 1e-12);
    }
    let mut out = Vec::new();
    tr.write_csv(b.constraints.n_s(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let width = tr.header(b.constraints.n_s()).len();
    assert!(text.lines().all(|l| l.split(',').count() == width));
}

#[test]
fn rk4_is_fourth_order_on_the_pendulum() {
    let f = |x: &DVector<f64>| pendulum_dynamics(x, &DVector::from_element(1, 0.3), &DVector::zeros(2));
    let x0 = DVector::from_vec(vec![0.2, 0.1]);
    let integrate = |dt: f64| {
        let mut x = x0.clone();
        for _ in 0..(2.0 / dt).round() as usize {
            x = rk4_step(&x, dt, f);
        }
        x
    };
    let reference = integrate(1e-4);
    let errs: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&dt| (integrate(dt) - &reference).norm()).collect();
    for w in errs.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((2.0..=8.0).contains(&slope) && (slope - 4.0).abs() <= 2.0, "slope {slope}");
    }
}

#[test]
fn invalid_scenarios_are_rejected() {
    let b = common::spring_mass();
    let base = common::scenario("springmass");
    let mut sc = base.clone();
    sc.params.k1 = Some(1.2);
    assert!(run(&sc, b.artifacts()).is_err());
    let mut sc = base.clone();
    sc.dt = 0.0;
    assert!(run(&sc, b.artifacts()).is_err());
    let mut sc = base.clone();
    sc.tracking.gain.pop();
    assert!(run(&sc, b.artifacts()).is_err());
    let mut sc = base.clone();
    sc.supervisor.eps_lower = 0.3;
    assert!(run(&sc, b.artifacts()).is_err());
    let p = common::pendulum();
    assert!(run(&base, p.artifacts()).is_err());
}

#[test]
fn mismatched_artifacts_are_rejected() {
    let b = common::spring_mass();
    let mut est = b.estimator.clone();
    est.x0[(0, 0)] *= 1.01;
    let art = Artifacts { estimator: &est, ..b.artifacts() };
    let err = run(&common::scenario("springmass"), art).unwrap_err();
    assert!(matches!(err, barrier_pair::Error::Mismatch(_)));
}

#[test]
fn cbf_baseline_passes_through_deep_inside() {
    let b = common::pendulum();
    let mut sc = common::scenario("pendulum");
    sc.baseline = Some(CbfParams::default());
    sc.reference.clear();
    sc.disturbance.clear();
    sc.horizon = 0.5;
    let tr = run(&sc, b.artifacts()).unwrap();
    assert!(tr.rows.iter().all(|r| r.u[0] == 0.0));
}
