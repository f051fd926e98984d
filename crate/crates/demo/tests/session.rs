use bpair_demo::{Session, PENDULUM_MODEL, PENDULUM_SCENARIO};

#[test]
fn pendulum_session_round_trip() {
    let s = Session::build(PENDULUM_MODEL, None).unwrap();
    let sum = s.summary_data();
    assert_eq!(sum.n, 2);
    assert!(sum.r_e > 0.0 && sum.r_e < 1.0);

    let sup = s.run(PENDULUM_SCENARIO, false, false, 500).unwrap();
    assert!(sup.safe);
    assert!(sup.t.len() <= 500 && sup.t.len() > 400);
    assert_eq!(sup.s.len(), 2);
    assert!(sup.s[0].iter().all(|v| v.abs() <= 1.0));
    assert!(sup.b_true.iter().zip(&sup.b_bar).all(|(t, b)| t <= b));

    let base = s.run(PENDULUM_SCENARIO, true, false, 500).unwrap();
    assert!(!base.safe);
}

#[test]
fn evaluation_checks_dimension_and_orders_values() {
    let s = Session::build(PENDULUM_MODEL, Some(0.7)).unwrap();
    assert_eq!(s.summary_data().eps, 0.7);
    assert!(s.evaluate_at(&[0.1, 0.2]).is_err());
    let e = s.evaluate_at(&[0.1, -0.2, 0.05, 0.0]).unwrap();
    assert!(e.exact > 0.0 && e.interpolated >= e.exact * (1.0 - 1e-9));
    assert!((e.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn invalid_inputs_are_errors() {
    assert!(Session::build("not = [toml", None).is_err());
    assert!(Session::build(PENDULUM_MODEL, Some(1.2)).is_err());
    let s = Session::build(PENDULUM_MODEL, None).unwrap();
    assert!(s.run("name = 'x'", false, false, 10).is_err());
}
