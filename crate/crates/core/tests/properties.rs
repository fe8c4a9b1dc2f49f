use gfbm::covariance::{CovarianceModel, ProcessId};
use gfbm::lamperti::r_u;
use gfbm::simulate::{
    build_gram, max_wick_deviation, oracle_sample_z, simulate, Spacing, TimeGrid,
};
use gfbm::Params;
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn valid_params() -> impl Strategy<Value = Params> {
    (0.0..0.95f64, 0.05..0.95f64).prop_map(|(g, u)| Params::validate(g / 2.0 - 0.5 + u, g).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn covariances_are_symmetric_and_self_similar(p in valid_params(), s in 0.05..3.0f64, t in 0.05..3.0f64) {
        let m = CovarianceModel::new(p).unwrap();
        for process in [ProcessId::X, ProcessId::Y, ProcessId::Z] {
            let a = m.cov(process, s, t).unwrap().value;
            prop_assert_eq!(a, m.cov(process, t, s).unwrap().value);
            for c in [0.5, 2.0, 10.0] {
                let scaled = m.cov(process, c * s, c * t).unwrap().value;
                let expected = c.powf(2.0 * p.hurst) * a;
                prop_assert!((scaled - expected).abs() <= 1e-8 * expected.abs().max(1e-3),
                    "{process:?} c = {c}: {scaled} vs {expected}");
            }
        }
    }

    #[test]
    fn grams_are_positive_semidefinite(p in valid_params(), a in 0.01..1.0f64, len in 0.1..4.0f64, n in 2usize..24) {
        let grid = TimeGrid::uniform(a, a + len, n).unwrap();
        let g = build_gram(&p, &grid, ProcessId::X).unwrap();
        let trace = g.trace();
        let min = SymmetricEigen::new(g).eigenvalues.min();
        prop_assert!(min >= -1e-8 * trace, "min eigenvalue {min} with trace {trace}");
    }

    #[test]
    fn lamperti_covariance_is_even_and_bounded(p in valid_params(), tau in 0.0..6.0f64) {
        prop_assume!(p.alpha < 0.5);
        let r0 = r_u(&p, 0.0).unwrap();
        let r = r_u(&p, tau).unwrap();
        prop_assert_eq!(r, r_u(&p, -tau).unwrap());
        prop_assert!(r.abs() <= r0 * (1.0 + 1e-12));
    }

    #[test]
    fn grid_syntax(a in 0.01..1.0f64, len in 0.5..4.0f64, n in 2usize..50) {
        let b = a + len;
        let u = TimeGrid::parse(&format!("{a}:{b}:{n}")).unwrap();
        let direct = TimeGrid::uniform(a, b, n).unwrap();
        prop_assert_eq!(u.points(), direct.points());
        prop_assert_eq!(u.len(), n);
        let g = TimeGrid::parse(&format!("geometric:{a}:{b}:{n}")).unwrap();
        prop_assert_eq!(g.spacing(), Spacing::Geometric);
        let pts = g.points();
        let ratio = pts[1] / pts[0];
        for w in pts.windows(2) {
            prop_assert!((w[1] / w[0] / ratio - 1.0).abs() < 1e-12);
        }
        prop_assert!((pts[n - 1] - b).abs() < 1e-12 * b);
    }
}

#[test]
fn cholesky_marginals_are_exact() {
    let p = Params::validate(0.3, 0.4).unwrap();
    let grid = TimeGrid::uniform(0.1, 3.0, 30).unwrap();
    let n = 20_000;
    let ens = simulate(&p, &grid, ProcessId::X, n, 11).unwrap();
    let cov = ens.sample_cov();
    let c = CovarianceModel::new(p).unwrap().c_var();
    for (i, t) in grid.points().iter().enumerate() {
        let var = c * t.powf(2.0 * p.hurst);
        assert!(
            (cov[(i, i)] - var).abs() <= 5.0 * (2.0 / n as f64).sqrt() * var,
            "t = {t}"
        );
    }
}

#[test]
fn cholesky_and_oracle_agree_for_z() {
    let p = Params::validate(-0.1, 0.3).unwrap();
    let grid = TimeGrid::uniform(0.25, 2.0, 8).unwrap();
    let n = 10_000;
    let chol = simulate(&p, &grid, ProcessId::Z, n, 1)
        .unwrap()
        .sample_cov();
    let oracle = oracle_sample_z(&p, &grid, 2f64.powi(-12), n, 2)
        .unwrap()
        .sample_cov();
    let gram = build_gram(&p, &grid, ProcessId::Z).unwrap();
    // Difference of two independent estimates: combined band is sqrt 2 wider.
    let diff = &chol - &oracle + &gram;
    assert!(max_wick_deviation(&diff, &gram, n) <= 5.0 * 2f64.sqrt());
}

#[test]
fn paths_vanish_at_the_origin() {
    let p = Params::validate(0.25, 0.5).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 9).unwrap();
    for process in [ProcessId::X, ProcessId::Z] {
        let ens = simulate(&p, &grid, process, 50, 4).unwrap();
        assert!(ens.paths().all(|path| path[0] == 0.0));
        assert!(ens.paths().any(|path| path[8] != 0.0));
    }
}
