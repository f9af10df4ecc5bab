use proptest::prelude::*;
use std::f64::consts::LN_2;
use unavoid::kernels::*;
use unavoid::Error;

fn profiles() -> Vec<CapacityProfile> {
    vec![
        CapacityProfile::classical(3).unwrap(),
        CapacityProfile::classical(5).unwrap(),
        CapacityProfile::riesz(2, 1.0).unwrap(),
        CapacityProfile::riesz(1, 0.5).unwrap(),
        CapacityProfile::riesz(3, 1.5).unwrap(),
        CapacityProfile::logarithmic(0.5, None).unwrap(),
    ]
}

#[test]
fn constructor_domains() {
    assert!(matches!(
        CapacityProfile::classical(2),
        Err(Error::InvalidArgument(_))
    ));
    assert!(CapacityProfile::riesz(1, 1.0).is_err());
    assert!(CapacityProfile::riesz(3, 2.0).is_err());
    assert!(CapacityProfile::riesz(2, 0.0).is_err());
    assert!(CapacityProfile::logarithmic(1.0, None).is_err());
    assert!(CapacityProfile::logarithmic(0.0, None).is_err());
}

#[test]
fn kernel_values() {
    let p = CapacityProfile::classical(3).unwrap();
    assert_eq!(p.kernel(&[0.0, 0.0, 0.0], &[0.0, 2.0, 0.0]).unwrap(), 0.5);
    assert_eq!(
        p.kernel(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap(),
        f64::INFINITY
    );
    let p = CapacityProfile::riesz(2, 1.0).unwrap();
    assert!((kernel_eval(&p, &[0.0, 0.0], &[3.0, 4.0]).unwrap() - 0.2).abs() < 1e-15);
    let p = CapacityProfile::logarithmic(0.5, None).unwrap();
    assert!((p.g(0.1) - 10f64.ln()).abs() < 1e-15);
    assert!(matches!(
        p.kernel(&[0.0], &[1.0, 0.0]),
        Err(Error::DimensionMismatch {
            expected: 2,
            got: 1
        })
    ));
}

#[test]
fn cap_is_reciprocal_kernel() {
    for p in profiles() {
        for r in [1e-8, 1e-4, 0.01, 0.1] {
            if r > p.r0() {
                continue;
            }
            let c = cap_eval(&p, r).unwrap();
            assert!((c * p.g(r) - 1.0).abs() < 1e-13);
            assert!((c.ln() - p.ln_cap(r.ln())).abs() < 1e-12);
        }
    }
}

#[test]
fn cap_rejects_out_of_range() {
    let p = CapacityProfile::logarithmic(0.5, None).unwrap();
    assert!(matches!(p.cap(0.5), Err(Error::OutOfRange { .. })));
    assert!(p.cap(0.0).is_err());
    assert!(p.cap(f64::NAN).is_err());
    assert!(p.cap_inverse(-1.0).is_err());
    let q = CapacityProfile::classical(3).unwrap();
    assert!(q.cap(1e6).is_ok());
}

#[test]
fn ln_cap_below_float_range() {
    // r = e^{-1000} is not representable but its capacity is
    let p = CapacityProfile::riesz(2, 1.0).unwrap();
    assert_eq!(p.ln_cap(-1000.0), -1000.0);
    let l = CapacityProfile::logarithmic(0.5, None).unwrap();
    assert!((l.ln_cap(-1000.0) + 1000f64.ln()).abs() < 1e-12);
    assert!(l.ln_cap(0.5).is_nan());
}

#[test]
fn integrability_constant_matches_closed_forms() {
    // d r^{-d} cap(r) int_0^r s^{d-1} s^{alpha-d} ds = d / alpha
    for (d, a) in [(2usize, 1.0), (3, 1.5), (1, 0.5)] {
        let p = CapacityProfile::riesz(d, a).unwrap();
        let c = validate_decay(&p, &default_grid(&p)).unwrap();
        assert!((c - d as f64 / a).abs() < 1e-8, "{c}");
        assert!((p.c_g - d as f64 / a).abs() < 1e-15);
    }
    let p = CapacityProfile::classical(4).unwrap();
    assert!((validate_decay(&p, &[0.3]).unwrap() - 2.0).abs() < 1e-8);
    // planar log kernel: 1 + 1/(2 ln(1/r))
    let p = CapacityProfile::logarithmic(0.5, None).unwrap();
    for r in [1e-3f64, 0.05] {
        let oracle = 1.0 + 0.5 / (1.0 / r).ln();
        assert!((validate_decay(&p, &[r]).unwrap() - oracle).abs() < 1e-8);
    }
    assert!(validate_decay(&p, &[0.9]).is_err());
}

#[test]
fn doubling_constant_matches_closed_forms() {
    let p = CapacityProfile::riesz(2, 0.5).unwrap();
    assert!((doubling_constant(&p, &default_grid(&p)).unwrap() - 2f64.powf(1.5)).abs() < 1e-12);
    let p = CapacityProfile::classical(3).unwrap();
    assert!((doubling_constant(&p, &default_grid(&p)).unwrap() - 2.0).abs() < 1e-12);
    let p = CapacityProfile::logarithmic(0.5, None).unwrap();
    let r = 0.01;
    assert!((doubling_constant(&p, &[r]).unwrap() - (1.0 + LN_2 / (1.0 / r).ln())).abs() < 1e-12);
}

#[test]
fn radial_table_profile() {
    let r: Vec<f64> = (0..=12).map(|i| 10f64.powi(i - 12)).collect();
    let g: Vec<f64> = r.iter().map(|x| 1.0 / x).collect();
    let p = CapacityProfile::radial(2, RadialTable::new(r, g).unwrap(), Some(1.0)).unwrap();
    let q = CapacityProfile::riesz(2, 1.0).unwrap();
    for s in [2e-7, 0.3, 0.9] {
        assert!((p.g(s) / q.g(s) - 1.0).abs() < 1e-10);
    }
    assert!((p.c_g - 2.0).abs() < 1e-6);
    assert!((p.c_d - 2.0).abs() < 1e-9);
    assert!((p.cap_inverse(0.25).unwrap() - 0.25).abs() < 1e-12);
    assert!(p.cap_inverse(2.0).is_err());
    assert!(RadialTable::new(vec![1.0, 0.5], vec![1.0, 2.0]).is_err());
    assert!(RadialTable::new(vec![0.5, 1.0], vec![1.0, -2.0]).is_err());
}

#[test]
fn measure_function_h() {
    let p = CapacityProfile::riesz(2, 1.0).unwrap();
    let phi = MeasureFunction::cap_over_log(&p);
    assert!((phi.h(&p, 1e-3) - 1.0 / 1000f64.ln()).abs() < 1e-15);
    assert!((phi.eval(0.01) - 0.01 / 100f64.ln()).abs() < 1e-15);
    assert_eq!(phi.eval(0.0), 0.0);
    let phi = MeasureFunction::cap_times_power(&p, 0.5);
    assert!((phi.h(&p, 0.04) - 0.2).abs() < 1e-14);
    let phi = MeasureFunction::power(1.5);
    assert!((phi.eval(4.0) - 8.0).abs() < 1e-12);
    let phi = MeasureFunction::from_fn("sq", |t| t * t);
    assert!((phi.ln_eval(3f64.ln()) - 9f64.ln()).abs() < 1e-12);
}

#[test]
fn h_scan_picks_largest_dyadic_scale() {
    let p = CapacityProfile::riesz(2, 1.0).unwrap();
    let phi = MeasureFunction::cap_times_power(&p, 1.0);
    // h(t) = t < 0.1: largest 2^{-k} below 0.1 is 1/16
    let t = h_scan(&phi, &p, 0.1, 1.0, ScanOptions::default()).unwrap();
    assert_eq!(t, 0.0625);
    let phi = MeasureFunction::cap(&p);
    assert!(matches!(
        h_scan(&phi, &p, 0.5, 1.0, ScanOptions::default()),
        Err(Error::ScanExhausted(_))
    ));
    assert!(h_scan(&phi, &p, 0.0, 1.0, ScanOptions::default()).is_err());
    let t = dyadic_scan(1.0, 0.3, ScanOptions::default(), |t| t < 0.05).unwrap();
    assert!((t - 0.0375).abs() < 1e-15);
}

proptest! {
    #[test]
    fn cap_inverse_roundtrip(i in 0usize..6, lr in -20.0f64..-0.5) {
        let p = &profiles()[i];
        let r = lr.exp().min(p.r0());
        let c = p.cap(r).unwrap();
        let back = p.cap_inverse(c).unwrap();
        prop_assert!((back / r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cap_increasing(i in 0usize..6, lr in -20.0f64..-1.0, f in 1.01f64..3.0) {
        let p = &profiles()[i];
        let r = lr.exp();
        prop_assume!(f * r <= p.r0());
        prop_assert!(p.cap(f * r).unwrap() > p.cap(r).unwrap());
    }

    #[test]
    fn doubling_bound_holds(i in 0usize..6, lr in -20.0f64..-1.0) {
        let p = &profiles()[i];
        let r = lr.exp();
        prop_assume!(r <= p.r0());
        prop_assert!(p.cap(r).unwrap() <= p.c_d * p.cap(0.5 * r).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn kernel_symmetric(x in prop::array::uniform3(-5.0f64..5.0), y in prop::array::uniform3(-5.0f64..5.0)) {
        let p = CapacityProfile::riesz(3, 1.2).unwrap();
        prop_assert_eq!(p.kernel(&x, &y).unwrap(), p.kernel(&y, &x).unwrap());
    }
}
