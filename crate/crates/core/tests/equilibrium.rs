use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use unavoid::equilibrium::*;
use unavoid::geometry::{dist, Cube};
use unavoid::kernels::CapacityProfile;
use unavoid::Error;

fn riesz2() -> CapacityProfile {
    CapacityProfile::riesz(2, 1.0).unwrap()
}

#[test]
fn discrete_potential() {
    let m = DiscreteMeasure {
        points: vec![vec![0.0, 0.0], vec![3.0, 0.0]],
        weights: vec![2.0, 1.0],
    };
    let p = riesz2();
    assert!((potential_eval(&m, &p, &[0.0, 4.0]) - (0.5 + 0.2)).abs() < 1e-15);
    assert_eq!(m.total_mass(), 3.0);
}

#[test]
fn newtonian_sphere_capacity() {
    // the equilibrium measure of a sphere of radius R is uniform with mass R
    let p = CapacityProfile::classical(3).unwrap();
    for r in [0.2, 1.0] {
        let s = Support::sphere_surface(&[0.1, 0.0, -0.2], r, 600).unwrap();
        let eq = equilibrium_solve(&s, &p, SolverOptions::default()).unwrap();
        assert!(
            (eq.total_mass() / r - 1.0).abs() < 0.01,
            "{}",
            eq.total_mass()
        );
        assert!(eq.residual <= 0.01);
        // constant inside, r/|x| outside
        assert!((eq.potential(&[0.1, 0.05, -0.2]) - 1.0).abs() < 0.01);
        let far = [0.1 + 3.0 * r, 0.0, -0.2];
        assert!((eq.potential(&far) - 1.0 / 3.0).abs() < 0.01);
    }
}

#[test]
fn riesz_disk_capacity() {
    // the disk of radius r has capacity 2r/pi for the kernel 1/|x| in the plane
    let p = riesz2();
    let s = Support::solid_ball(&[0.0, 0.0], 0.3, 24).unwrap();
    let eq = equilibrium_solve(&s, &p, SolverOptions::default()).unwrap();
    let oracle = 2.0 * 0.3 / PI;
    assert!(
        (eq.total_mass() / oracle - 1.0).abs() < 0.03,
        "{} vs {oracle}",
        eq.total_mass()
    );
    assert!(eq.measure.weights.iter().all(|&w| w >= 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        assert!(eq.potential(&x) <= 1.03);
    }
}

#[test]
fn planar_box_union() {
    let p = riesz2();
    let a = Support::solid_box(&[0.0, 0.0], &[0.1, 0.1], 8).unwrap();
    let b = Support::solid_box(&[0.5, 0.0], &[0.6, 0.1], 8).unwrap();
    let one = equilibrium_solve(&a, &p, SolverOptions::default())
        .unwrap()
        .total_mass();
    let two = equilibrium_solve(&a.clone().union(b).unwrap(), &p, SolverOptions::default())
        .unwrap()
        .total_mass();
    // subadditive and more than a single box
    assert!(two < 2.0 * one && two > one);
    let s3 = Support::box_surface(&[0.0; 3], &[1.0; 3], 4).unwrap();
    assert_eq!(s3.len(), 96);
    assert!(a.union(s3).is_err());
}

#[test]
fn solver_rejects_bad_input() {
    let s = Support::sphere_surface(&[0.0, 0.0], 1.0, 16).unwrap();
    let p = CapacityProfile::classical(3).unwrap();
    assert!(matches!(
        equilibrium_solve(&s, &p, SolverOptions::default()),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(Support::sphere_surface(&[0.0; 4], 1.0, 16).is_err());
    assert!(Support::solid_ball(&[0.0, 0.0], 1.0, 1).is_err());
    let tight = SolverOptions {
        tol: 0.0,
        fail_above: 0.0,
        max_iter: 1,
        ..SolverOptions::default()
    };
    let q = Support::solid_ball(&[0.0, 0.0], 1.0, 6).unwrap();
    match equilibrium_solve(&q, &riesz2(), tight) {
        Err(Error::SolverFailed { .. }) | Ok(_) => {}
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn supports_tile_their_sets() {
    let s = Support::solid_ball(&[0.0, 0.0], 1.0, 12).unwrap();
    let area: f64 = s.cells.iter().map(|c| c.measure()).sum();
    assert!((area / PI - 1.0).abs() < 0.05, "{area}");
    let s = Support::solid_ball(&[0.0; 3], 1.0, 8).unwrap();
    let vol: f64 = s.cells.iter().map(|c| c.measure()).sum();
    assert!((vol / (4.0 / 3.0 * PI) - 1.0).abs() < 0.05, "{vol}");
    let s = Support::sphere_surface(&[0.0; 3], 2.0, 300).unwrap();
    let area: f64 = s.cells.iter().map(|c| c.measure()).sum();
    assert!((area / (16.0 * PI) - 1.0).abs() < 1e-12);
    for p in &s.points {
        assert!((dist(p, &[0.0; 3]) - 2.0).abs() < 1e-12);
    }
}

fn midpoint_cube_mean(q: &Cube, p: &CapacityProfile, x: &[f64], n: usize) -> f64 {
    let d = q.dim();
    let h = q.side() / n as f64;
    let total = n.pow(d as u32);
    let mut acc = 0.0;
    for k in 0..total {
        let mut m = k;
        let y: Vec<f64> = (0..d)
            .map(|j| {
                let i = m % n;
                m /= n;
                q.center[j] - 0.5 * q.side() + (i as f64 + 0.5) * h
            })
            .collect();
        acc += p.g(dist(&y, x));
    }
    acc / total as f64
}

#[test]
fn cube_potential_against_midpoint_rule() {
    for (p, x) in [
        (riesz2(), vec![0.9, 0.4]),
        (CapacityProfile::classical(3).unwrap(), vec![0.7, 0.0, 0.5]),
        (
            CapacityProfile::logarithmic(0.5, None).unwrap(),
            vec![0.05, 0.09],
        ),
    ] {
        let d = p.d;
        let q = Cube::new(vec![0.0; d], 0.1 * (d as f64).sqrt()).unwrap();
        let v = cube_potential(&q, &p, &x, 1e-8).unwrap();
        let n = if d == 3 { 100 } else { 600 };
        let oracle = midpoint_cube_mean(&q, &p, &x, n);
        assert!((v - oracle).abs() < 1e-5 * oracle.abs(), "{v} vs {oracle}");
    }
}

#[test]
fn cube_potential_at_centre() {
    // mean of 1/|y| over [-h, h]^2 is 2 ln(1 + sqrt 2)/h
    let q = Cube::new(vec![0.3, -0.1], 0.2).unwrap();
    let h = q.half_side();
    let v = cube_potential(&q, &riesz2(), &q.center, 1e-8).unwrap();
    let oracle = 2.0 * (1.0 + 2f64.sqrt()).ln() / h;
    assert!((v - oracle).abs() < 1e-7 * oracle);
}

#[test]
fn closed_form_hitting() {
    let c3 = CapacityProfile::classical(3).unwrap();
    assert!((radial_hitting_closed_form(&c3, 0.25, None, 0.5).unwrap() - 0.5).abs() < 1e-15);
    // (1/t - 1)/(1/s - 1) with s = 1/4, t = 1/2, R = 1
    assert!(
        (radial_hitting_closed_form(&c3, 0.25, Some(1.0), 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15
    );
    let l = CapacityProfile::logarithmic(0.5, None).unwrap();
    assert!(
        (radial_hitting_closed_form(&l, 0.1, Some(1.0), 0.5).unwrap() - 2f64.ln() / 10f64.ln())
            .abs()
            < 1e-15
    );
    // Cauchy process in the plane: (2/pi) asin(s/t)
    for (s, t) in [(0.5f64, 1.0f64), (0.1, 3.0), (0.9, 1.0)] {
        let v = radial_hitting_closed_form(&riesz2(), s, None, t).unwrap();
        assert!((v - 2.0 / PI * (s / t).asin()).abs() < 1e-12);
    }
    assert_eq!(
        radial_hitting_closed_form(&riesz2(), 0.5, None, 0.2).unwrap(),
        1.0
    );
    assert!(radial_hitting_closed_form(&l, 0.1, None, 0.5).is_err());
    assert!(radial_hitting_closed_form(&c3, 0.5, Some(0.55), 0.6).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn closed_form_is_a_probability(s in 0.01f64..1.0, f in 1.0001f64..50.0, alpha in 0.1f64..1.9) {
        let p = CapacityProfile::riesz(3, alpha).unwrap();
        let v = radial_hitting_closed_form(&p, s, None, s * f).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        let w = radial_hitting_closed_form(&p, s, None, s * f * 1.1).unwrap();
        prop_assert!(w <= v);
    }

    #[test]
    fn cube_potential_scales(a in 0.01f64..2.0, ux in -1.0f64..1.0, uy in -1.0f64..1.0) {
        // G(Q) is homogeneous of degree -(d - alpha)
        let p = riesz2();
        let q1 = Cube::new(vec![0.0, 0.0], 1.0).unwrap();
        let qa = Cube::new(vec![0.0, 0.0], a).unwrap();
        let v1 = cube_potential(&q1, &p, &[ux, uy], 1e-7).unwrap();
        let va = cube_potential(&qa, &p, &[a * ux, a * uy], 1e-7).unwrap();
        prop_assert!((va * a / v1 - 1.0).abs() < 1e-6);
    }
}
