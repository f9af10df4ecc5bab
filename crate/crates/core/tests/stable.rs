use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use unavoid::geometry::norm;
use unavoid::stable::*;

// Cauchy process in the plane: P[R <= rho] = 1 - (2/pi) asin(1/rho)
fn cauchy_cdf(rho: f64) -> f64 {
    1.0 - 2.0 / PI * (1.0 / rho).asin()
}

#[test]
fn table_matches_arcsine_law() {
    let t = exit_table(2, 1.0).unwrap();
    assert!(t.validation_error < 1e-9);
    for a in [0.1, 0.5, 1.5, 1.9, 1.99] {
        assert!(ExitTable::new(3, a).unwrap().validation_error < 1e-9);
    }
    for rho in [1.0 + 1e-9, 1.001, 1.1, 2.0, 10.0, 1e3, 1e5] {
        assert!((t.cdf(rho) - cauchy_cdf(rho)).abs() < 1e-10, "rho = {rho}");
    }
    // tail: (2/pi) asin(1e-6)
    assert!((t.tail - 2.0 / PI * 1e-6f64.asin()).abs() < 1e-9);
    assert!((t.cdf(1e7) - cauchy_cdf(1e7)).abs() < 1e-9);
    assert_eq!(t.cdf(0.5), 0.0);
    let q0 = t.quantile(0.0);
    assert!(q0 > 1.0 && q0 < 1.0 + 1e-12);
    assert!(t.quantile(1.0 - 1e-12) > 1e6);
}

#[test]
fn table_rejects_bad_parameters() {
    assert!(ExitTable::new(2, 2.0).is_err());
    assert!(ExitTable::new(1, 1.0).is_err());
    assert!(ExitTable::new(0, 0.5).is_err());
    assert!(ExitTable::new(3, 1.9).is_ok());
}

#[test]
fn table_is_cached() {
    let a = exit_table(3, 1.25).unwrap();
    let b = exit_table(3, 1.25).unwrap();
    assert!(std::sync::Arc::ptr_eq(&a, &b));
}

#[test]
fn exit_samples_follow_the_law() {
    let t = exit_table(2, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut below = 0usize;
    for _ in 0..n {
        let y = stable_exit_sample(&t, &mut rng);
        let r = norm(&y);
        assert!(r > 1.0);
        below += (r <= 2.0) as usize;
    }
    let p = below as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((p - 2.0 / 3.0).abs() < 4.0 * se, "{p}");
}

#[test]
fn positive_stable_laplace_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for beta in [0.3, 0.5, 0.8] {
        let n = 100_000;
        let m: f64 = (0..n)
            .map(|_| (-positive_stable(beta, &mut rng)).exp())
            .sum::<f64>()
            / n as f64;
        assert!((m - (-1.0f64).exp()).abs() < 0.005, "beta {beta}: {m}");
    }
}

#[test]
fn increments_have_stable_characteristic_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (d, alpha, dt) in [(2usize, 1.0, 0.5), (1, 1.5, 1.0), (3, 0.7, 2.0)] {
        let xi = 0.8;
        let n = 100_000;
        let m: f64 = (0..n)
            .map(|_| (xi * stable_increment(d, alpha, dt, &mut rng)[0]).cos())
            .sum::<f64>()
            / n as f64;
        let oracle = (-dt * xi.powf(alpha)).exp();
        assert!((m - oracle).abs() < 0.006, "{d} {alpha}: {m} vs {oracle}");
    }
}

#[test]
fn directions_are_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in 1..5 {
        assert!((norm(&random_direction(d, &mut rng)) - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn quantile_inverts_cdf(u in 1e-6f64..0.999_999, k in 0usize..3) {
        let (d, a) = [(2, 1.0), (3, 1.5), (1, 0.4)][k];
        let t = exit_table(d, a).unwrap();
        let rho = t.quantile(u);
        prop_assert!(rho > 1.0);
        // near rho = 1 one ulp of rho moves the cdf by more than 1e-9
        let ulp = rho * f64::EPSILON;
        let slack = (t.cdf(rho + 4.0 * ulp) - t.cdf(rho - 4.0 * ulp)).abs();
        prop_assert!((t.cdf(rho) - u).abs() < 1e-9 + slack, "{} vs {}", t.cdf(rho), u);
    }

    #[test]
    fn table_cdf_monotone(a in 1.0f64..100.0, f in 1.0001f64..3.0) {
        let t = exit_table(3, 0.9).unwrap();
        prop_assert!(t.cdf(a * f) >= t.cdf(a));
    }
}
