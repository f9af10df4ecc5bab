use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use unavoid::equilibrium::radial_hitting_closed_form;
use unavoid::geometry::Domain;
use unavoid::hitting::*;
use unavoid::kernels::CapacityProfile;
use unavoid::Error;

fn ball(center: Vec<f64>, radius: f64) -> Shape {
    Shape::Ball { center, radius }
}

fn single(center: Vec<f64>, radius: f64) -> Obstacles {
    let d = center.len();
    Obstacles::new(d, "target", vec![ball(center, radius)]).unwrap()
}

fn within(e: &HittingEstimate, oracle: f64, k: f64) {
    assert!(
        (e.p_hat - oracle).abs() < k * e.stderr.max(1e-3),
        "p = {} se = {} oracle = {oracle}",
        e.p_hat,
        e.stderr
    );
}

#[test]
fn shapes() {
    let c = Shape::Cube {
        center: vec![0.0, 0.0],
        half: 1.0,
    };
    assert!((c.distance(&[2.0, 2.0]) - 2f64.sqrt()).abs() < 1e-15);
    assert!((c.reach() - 2f64.sqrt()).abs() < 1e-15);
    let a = Shape::Annulus {
        center: vec![0.0, 0.0],
        inner: 1.0,
        outer: 2.0,
    };
    assert!(a.contains(&[1.5, 0.0]) && !a.contains(&[0.5, 0.0]));
    assert!((a.distance(&[0.25, 0.0]) - 0.75).abs() < 1e-15);
    assert!(Obstacles::new(2, "x", vec![ball(vec![0.0], 1.0)]).is_err());
    assert!(Obstacles::new(1, "x", vec![ball(vec![0.0], 0.0)]).is_err());
}

#[test]
fn brownian_ball_in_ball() {
    // (1/|x| - 1)/(1/s - 1) = 1/3 for s = 1/4, |x| = 1/2
    let p = CapacityProfile::classical(3).unwrap();
    let dom = Domain::Ball {
        center: vec![0.0; 3],
        radius: 1.0,
    };
    let params = WalkParams::for_scale(1.0, 7);
    let e = wos_brownian_hit(
        &dom,
        &single(vec![0.0; 3], 0.25),
        &p,
        &[0.5, 0.0, 0.0],
        &params,
        20_000,
    )
    .unwrap();
    within(&e, 1.0 / 3.0, 4.0);
    assert!(e.valid && e.stalled == 0 && e.truncation_bias_bound == 0.0);
}

#[test]
fn brownian_planar_annulus() {
    let p = CapacityProfile::logarithmic(0.5, None).unwrap();
    let dom = Domain::Ball {
        center: vec![0.0, 0.0],
        radius: 1.0,
    };
    let oracle = radial_hitting_closed_form(&p, 0.1, Some(1.0), 0.5).unwrap();
    let e = wos_brownian_hit(
        &dom,
        &single(vec![0.0, 0.0], 0.1),
        &p,
        &[0.0, -0.5],
        &WalkParams::for_scale(1.0, 3),
        20_000,
    )
    .unwrap();
    within(&e, oracle, 4.0);
}

#[test]
fn brownian_whole_space() {
    // (s/t)^{d-2} = 1/2, less the mass lost beyond the escape radius
    let p = CapacityProfile::classical(3).unwrap();
    let params = WalkParams {
        escape_radius: 50.0,
        ..WalkParams::for_scale(1.0, 9)
    };
    let e = wos_brownian_hit(
        &Domain::WholeSpace { d: 3 },
        &single(vec![1.0, 0.0, 0.0], 0.25),
        &p,
        &[1.0, 0.5, 0.0],
        &params,
        20_000,
    )
    .unwrap();
    assert!(e.truncation_bias_bound > 0.0 && e.truncation_bias_bound < 0.01);
    assert!(
        e.p_hat - 4.0 * e.stderr <= 0.5
            && 0.5 <= e.p_hat + e.truncation_bias_bound + 4.0 * e.stderr
    );
}

#[test]
fn brownian_start_inside_target() {
    let p = CapacityProfile::classical(3).unwrap();
    let dom = Domain::Ball {
        center: vec![0.0; 3],
        radius: 1.0,
    };
    let e = wos_brownian_hit(
        &dom,
        &single(vec![0.0; 3], 0.25),
        &p,
        &[0.1, 0.0, 0.0],
        &WalkParams::for_scale(1.0, 1),
        10,
    )
    .unwrap();
    assert_eq!(e.p_hat, 1.0);
    assert!(wos_brownian_hit(
        &dom,
        &single(vec![0.0; 3], 0.25),
        &p,
        &[2.0, 0.0, 0.0],
        &WalkParams::for_scale(1.0, 1),
        10
    )
    .is_err());
}

#[test]
fn estimators_reject_wrong_processes() {
    let r = CapacityProfile::riesz(2, 1.0).unwrap();
    let c = CapacityProfile::classical(3).unwrap();
    let dom = Domain::Ball {
        center: vec![0.0, 0.0],
        radius: 1.0,
    };
    let t2 = single(vec![0.0, 0.0], 0.1);
    let params = WalkParams::for_scale(1.0, 1);
    assert!(matches!(
        wos_brownian_hit(&dom, &t2, &r, &[0.5, 0.0], &params, 10),
        Err(Error::Unsupported(_))
    ));
    assert!(matches!(
        hit(&dom, &t2, &r, &[0.5, 0.0], &params, 10),
        Err(Error::Unsupported(_))
    ));
    assert!(matches!(
        stable_hit(
            &single(vec![0.0; 3], 0.1),
            &[0.5, 0.0, 0.0],
            &c,
            &params,
            10
        ),
        Err(Error::Unsupported(_))
    ));
    assert!(matches!(
        stable_hit(&t2, &[0.5, 0.0, 0.0], &r, &params, 10),
        Err(Error::DimensionMismatch { .. })
    ));
    let bad = WalkParams {
        eps_shell: 0.0,
        ..params
    };
    assert!(stable_hit(&t2, &[0.5, 0.0], &r, &bad, 10).is_err());
    assert!(stable_hit(&t2, &[0.5, 0.0], &r, &params, 0).is_err());
    // a tiny escape radius leaves a large escape bound
    let near = WalkParams {
        escape_radius: 0.01,
        ..params
    };
    assert!(matches!(
        stable_hit(&single(vec![3.0, 0.0], 2.9), &[0.05, 0.0], &r, &near, 200),
        Err(Error::Walk(_))
    ));
}

#[test]
fn cauchy_disk() {
    // (2/pi) asin(1/2) = 1/3
    let p = CapacityProfile::riesz(2, 1.0).unwrap();
    let params = WalkParams::for_scale(1.0, 11);
    let e = stable_hit(
        &single(vec![0.0, 0.0], 0.5),
        &[1.0, 0.0],
        &p,
        &params,
        40_000,
    )
    .unwrap();
    assert!(e.truncation_bias_bound < 1e-3);
    within(&e, 1.0 / 3.0, 4.0);
    assert!((2.0 / PI * 0.5f64.asin() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn stable_ball_in_three_dimensions() {
    let p = CapacityProfile::riesz(3, 1.5).unwrap();
    let oracle = radial_hitting_closed_form(&p, 0.3, None, 1.0).unwrap();
    let e = stable_hit(
        &single(vec![0.0; 3], 0.3),
        &[0.0, 1.0, 0.0],
        &p,
        &WalkParams::for_scale(1.0, 2),
        40_000,
    )
    .unwrap();
    within(&e, oracle, 4.0);
}

#[test]
fn euler_agrees_with_exit_iteration() {
    let p = CapacityProfile::riesz(2, 1.0).unwrap();
    let params = WalkParams::for_scale(1.0, 4);
    let e = stable_hit_euler(
        &single(vec![0.0, 0.0], 0.5),
        &[1.0, 0.0],
        &p,
        2e-3,
        &params,
        4_000,
    )
    .unwrap();
    within(&e, 1.0 / 3.0, 4.0);
    assert!(stable_hit_euler(
        &single(vec![0.0, 0.0], 0.5),
        &[1.0, 0.0],
        &p,
        0.0,
        &params,
        4
    )
    .is_err());
}

#[test]
fn estimates_are_reproducible() {
    let p = CapacityProfile::riesz(2, 1.0).unwrap();
    let t = single(vec![0.0, 0.0], 0.5);
    let a = stable_hit(&t, &[1.0, 0.0], &p, &WalkParams::for_scale(1.0, 5), 3000).unwrap();
    let b = stable_hit(&t, &[1.0, 0.0], &p, &WalkParams::for_scale(1.0, 5), 3000).unwrap();
    let c = stable_hit(&t, &[1.0, 0.0], &p, &WalkParams::for_scale(1.0, 6), 3000).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.p_hat, c.p_hat);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let d = pool
        .install(|| stable_hit(&t, &[1.0, 0.0], &p, &WalkParams::for_scale(1.0, 5), 3000).unwrap());
    assert_eq!(a, d);
}

#[test]
fn verifier_on_a_large_target() {
    let p = CapacityProfile::classical(3).unwrap();
    let dom = Domain::Ball {
        center: vec![0.0; 3],
        radius: 1.0,
    };
    let t = single(vec![0.0; 3], 0.5);
    let probes = vec![vec![0.6, 0.0, 0.0], vec![0.0, -0.6, 0.0]];
    let free = vec![vec![0.0, 0.0, 0.9]];
    // (1/0.6 - 1)/(1/0.5 - 1) = 2/3
    let r = verify_unavoidable(
        &dom,
        &t,
        &p,
        &probes,
        &free,
        0.5,
        &WalkParams::for_scale(1.0, 8),
        4000,
    )
    .unwrap();
    assert!(r.satisfied, "{}", r.min_lower);
    assert_eq!(r.probes.len(), 2);
    assert_ne!(r.probes[0].seed, r.probes[1].seed);
    let r = verify_unavoidable(
        &dom,
        &t,
        &p,
        &probes,
        &free,
        0.8,
        &WalkParams::for_scale(1.0, 8),
        4000,
    )
    .unwrap();
    assert!(!r.satisfied);
}

#[test]
fn escape_bound_sums_kernels() {
    let p = CapacityProfile::riesz(2, 1.0).unwrap();
    let t = Obstacles::new(
        2,
        "two",
        vec![ball(vec![0.0, 0.0], 0.1), ball(vec![10.0, 0.0], 0.2)],
    )
    .unwrap();
    let b = t.escape_bound(&p, &[5.0, 0.0]);
    assert!((b - (0.1 / 5.0 + 0.2 / 5.0)).abs() < 1e-15);
    assert_eq!(t.escape_bound(&p, &[0.05, 0.0]), 1.0);
}

fn random_shapes(seed: u64, n: usize) -> Vec<Shape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c = vec![
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ];
            // sizes over several decades to exercise the classes
            let r = 10f64.powf(rng.gen_range(-4.0..0.0));
            if i % 3 == 0 {
                Shape::Cube { center: c, half: r }
            } else {
                ball(c, r)
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn index_matches_brute_force(seed in 0u64..50, x in prop::array::uniform3(-15.0f64..15.0)) {
        let shapes = random_shapes(seed, 400);
        let obs = Obstacles::new(3, "r", shapes.clone()).unwrap();
        let exact = shapes.iter().map(|s| s.distance(&x)).fold(f64::INFINITY, f64::min);
        prop_assert!((obs.distance(&x) - exact).abs() < 1e-12);
        let lb = obs.distance_lb(&x);
        prop_assert!(lb <= exact + 1e-12);
        prop_assert!(lb > 0.0 || exact == 0.0);
        prop_assert_eq!(obs.contains(&x), shapes.iter().any(|s| s.contains(&x)));
    }

    #[test]
    fn contains_near_shapes(seed in 0u64..50, k in 0usize..400, f in 0.0f64..0.99) {
        let shapes = random_shapes(seed, 400);
        let obs = Obstacles::new(3, "r", shapes.clone()).unwrap();
        let c = shapes[k].center();
        let r = match &shapes[k] { Shape::Cube { half, .. } => *half, s => s.reach() };
        let x = [c[0] + f * r, c[1], c[2]];
        prop_assert!(obs.contains(&x));
        prop_assert_eq!(obs.distance(&x), 0.0);
    }
}
