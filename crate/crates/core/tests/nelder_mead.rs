use mloo::{nm_optimize, Bounds, Error, Landscape, NelderMead, NelderMeadOptions};
use proptest::prelude::*;

fn opts(max_evals: usize) -> NelderMeadOptions {
    NelderMeadOptions { max_evals, ..Default::default() }
}

#[test]
fn one_dimensional_quadratic() {
    let r = nm_optimize(&[0.0], &Bounds::new(vec![0.0], vec![1.0]).unwrap(), |x| Ok((x[0] - 0.6).powi(2)), opts(60))
        .unwrap();
    assert!((r.best_x[0] - 0.6).abs() < 1e-3, "{:?}", r.best_x);
    assert!(r.evaluations <= 60);
}

#[test]
fn two_dimensional_quadratic() {
    let f = |x: &[f64]| Ok((x[0] - 0.3).powi(2) + 4.0 * (x[1] - 0.7).powi(2));
    let r = nm_optimize(&[0.9, 0.1], &Bounds::unit(2), f, opts(200)).unwrap();
    assert!((r.best_x[0] - 0.3).abs() < 1e-3 && (r.best_x[1] - 0.7).abs() < 1e-3, "{:?}", r.best_x);
}

#[test]
fn constant_objective_collapses() {
    let r = nm_optimize(&[0.5, 0.5, 0.5], &Bounds::unit(3), |_| Ok(1.25), opts(500)).unwrap();
    assert!(r.converged);
    assert_eq!(r.best_cost, 1.25);
}

#[test]
fn budget_below_simplex_size() {
    let err = nm_optimize(&[0.5, 0.5], &Bounds::unit(2), |_| Ok(0.0), opts(3)).unwrap_err();
    assert!(matches!(err, Error::BudgetTooSmall { budget: 3, needed: 4 }));
}

#[test]
fn bowl_improves_on_start() {
    let start = [0.1, 0.9, 0.2, 0.8];
    let f = |x: &[f64]| Landscape::Bowl.value(x);
    let r = nm_optimize(&start, &Bounds::unit(4), f, opts(400)).unwrap();
    assert!(r.best_cost <= f(&start).unwrap());
    assert!(r.best_cost < 1e-4, "{}", r.best_cost);
}

#[test]
fn failure_values_repel_the_simplex() {
    // the upper half of the box returns a large default cost
    let f = |x: &[f64]| Ok(if x[0] > 0.5 { 2.0 } else { (x[0] - 0.45).powi(2) + (x[1] - 0.5).powi(2) });
    let r = nm_optimize(&[0.3, 0.3], &Bounds::unit(2), f, opts(300)).unwrap();
    assert!(r.best_x[0] <= 0.5);
    assert!((r.best_x[0] - 0.45).abs() < 1e-2, "{:?}", r.best_x);
}

#[test]
fn ask_tell_matches_closed_loop() {
    let f = |x: &[f64]| (x[0] - 0.2).powi(2) + (x[1] - 0.65).powi(2) + x[0] * x[1];
    let closed = nm_optimize(&[0.5, 0.5], &Bounds::unit(2), |x| Ok(f(x)), opts(80)).unwrap();
    let mut nm = NelderMead::new(&[0.5, 0.5], Bounds::unit(2), opts(80)).unwrap();
    while nm.evaluations() < 80 && !nm.converged() {
        let x = nm.ask();
        nm.tell(f(&x));
    }
    let (x, v) = nm.best().unwrap();
    assert_eq!(x, closed.best_x.as_slice());
    assert_eq!(v, closed.best_cost);
}

fn rotated_quadratic(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).enumerate().map(|(j, (v, c))| (j + 1) as f64 * (v - c).powi(2)).sum::<f64>()
        + 0.5 * x.windows(2).map(|w| w[0] * w[1]).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn best_is_monotone_and_points_in_bounds(
        start in prop::collection::vec(0.0..=1.0f64, 1..5),
        seed_c in prop::collection::vec(-0.5..1.5f64, 5),
    ) {
        let m = start.len();
        let c = &seed_c[..m];
        let mut nm = NelderMead::new(&start, Bounds::unit(m), opts(150)).unwrap();
        let mut best = f64::INFINITY;
        while nm.evaluations() < 150 && !nm.converged() {
            let x = nm.ask();
            prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)), "{:?}", x);
            let f = rotated_quadratic(&x, c);
            nm.tell(f);
            best = best.min(f);
            let (_, reported) = nm.best().unwrap();
            prop_assert_eq!(reported, best);
        }
    }

    #[test]
    fn deterministic(start in prop::collection::vec(0.0..=1.0f64, 1..5)) {
        let m = start.len();
        let c = vec![0.4; m];
        let a = nm_optimize(&start, &Bounds::unit(m), |x| Ok(rotated_quadratic(x, &c)), opts(120)).unwrap();
        let b = nm_optimize(&start, &Bounds::unit(m), |x| Ok(rotated_quadratic(x, &c)), opts(120)).unwrap();
        prop_assert_eq!(a, b);
    }
}
