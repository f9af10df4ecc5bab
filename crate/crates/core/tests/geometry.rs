use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unavoid::geometry::*;
use unavoid::Error;

#[test]
fn cube_basics() {
    let q = Cube::new(vec![0.0, 0.0], 2f64.sqrt()).unwrap();
    assert!((q.side() - 1.0).abs() < 1e-15);
    assert!(q.contains(&[0.5, -0.5]));
    assert!(!q.contains(&[0.51, 0.0]));
    assert!((q.distance(&[1.5, 1.5]) - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(q.distance(&[0.1, 0.2]), 0.0);
    assert_eq!(q.vertices().len(), 4);
    let far = Cube::new(vec![0.9, 0.0], 2f64.sqrt()).unwrap();
    assert!(q.intersects(&far));
    assert!(!q.intersects(&Cube::new(vec![1.2, 0.0], 2f64.sqrt()).unwrap()));
    assert!(Cube::new(vec![0.0], 0.0).is_err());
    assert!(Ball::new(vec![0.0], -1.0, true).is_err());
}

#[test]
fn subdivision_layout() {
    let q = Cube::new(vec![0.0, 0.0], 2f64.sqrt()).unwrap();
    let kids = cube_subdivide(&q, 2, 0.1).unwrap();
    assert_eq!(kids.len(), 4);
    // last axis fastest
    assert_eq!(kids[0].center, vec![-0.25, -0.25]);
    assert_eq!(kids[1].center, vec![-0.25, 0.25]);
    assert_eq!(kids[2].center, vec![0.25, -0.25]);
    assert!(kids.iter().all(|k| k.a == 0.1));
    // 2r < a/n
    assert!(cube_subdivide(&q, 2, 0.36).is_err());
    assert!(cube_subdivide(&q, 0, 0.1).is_err());
}

#[test]
fn domains() {
    let b = Domain::Ball {
        center: vec![0.0, 0.0, 0.0],
        radius: 1.0,
    };
    assert!((b.boundary_distance(&[0.5, 0.0, 0.0]) - 0.5).abs() < 1e-15);
    assert_eq!(b.boundary_distance(&[2.0, 0.0, 0.0]), 0.0);
    assert!(!b.contains(&[1.0, 0.0, 0.0]));
    let bx = Domain::Box {
        lo: vec![0.0, 0.0],
        hi: vec![2.0, 1.0],
    };
    assert!((bx.boundary_distance(&[1.0, 0.3]) - 0.3).abs() < 1e-15);
    let a = Domain::Annulus {
        center: vec![0.0, 0.0],
        inner: 1.0,
        outer: 3.0,
    };
    assert!((a.boundary_distance(&[1.5, 0.0]) - 0.5).abs() < 1e-15);
    assert_eq!(
        Domain::WholeSpace { d: 2 }.boundary_distance(&[1e9, 0.0]),
        f64::INFINITY
    );
    assert!(Domain::Box {
        lo: vec![1.0],
        hi: vec![0.0]
    }
    .validate()
    .is_err());
    assert!(Domain::Annulus {
        center: vec![0.0],
        inner: 2.0,
        outer: 1.0
    }
    .validate()
    .is_err());
}

#[test]
fn exhaustions() {
    let ex = concentric_exhaustion(
        &Domain::Ball {
            center: vec![0.0, 0.0],
            radius: 2.0,
        },
        4,
    )
    .unwrap();
    let radii: Vec<f64> = ex.levels.iter().map(|r| r.radius().unwrap()).collect();
    assert_eq!(radii, vec![1.0, 1.5, 1.75, 1.875]);
    assert!(ex.level(0).is_none());
    let ws = concentric_exhaustion(&Domain::WholeSpace { d: 3 }, 3).unwrap();
    assert_eq!(ws.level(3).unwrap().radius(), Some(8.0));
    let bx = concentric_exhaustion(
        &Domain::Box {
            lo: vec![0.0, 0.0],
            hi: vec![4.0, 2.0],
        },
        1,
    )
    .unwrap();
    assert_eq!(
        bx.levels[0],
        Region::Box {
            lo: vec![1.0, 0.5],
            hi: vec![3.0, 1.5]
        }
    );
    let an = Domain::Annulus {
        center: vec![0.0],
        inner: 1.0,
        outer: 2.0,
    };
    assert!(matches!(
        concentric_exhaustion(&an, 2),
        Err(Error::Unsupported(_))
    ));
    assert!(concentric_exhaustion(&Domain::WholeSpace { d: 2 }, 0).is_err());
}

#[test]
fn shells_follow_gap_sequence() {
    let ex = concentric_exhaustion(
        &Domain::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        },
        10,
    )
    .unwrap();
    let shells = shell_partition(&ex, &[1, 2, 1, 5]).unwrap();
    let pairs: Vec<(usize, usize)> = shells
        .iter()
        .map(|s| (s.inner_level, s.outer_level))
        .collect();
    // m1 = 0, m2 = 2, m3 = 5, m4 = 7; the last shell would need level 13
    assert_eq!(pairs, vec![(1, 2), (4, 5), (6, 7)]);
    let s = &shells[0];
    assert!(s.contains(&[0.5, 0.0]) && s.contains(&[0.75, 0.0]) && !s.contains(&[0.4, 0.0]));
    assert!(matches!(
        shell_partition(&ex, &[10]),
        Err(Error::InsufficientDepth(_))
    ));
    assert!(shell_partition(&ex, &[]).is_err());
    assert!(shell_partition(&ex, &[1, 0]).is_err());
}

fn check_net(d: usize, radius: f64, eps: f64, seed: u64) {
    let sphere = Ball::new(vec![0.3; d], radius, true).unwrap();
    let net = boundary_net(&sphere, eps, seed).unwrap();
    for z in &net {
        assert!((dist(z, &sphere.center) - radius).abs() < 1e-12);
    }
    // quarter-radius balls are disjoint
    for i in 0..net.len() {
        for j in 0..i {
            assert!(dist(&net[i], &net[j]) > 0.5 * eps);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for _ in 0..3000 {
        let x = random_on_sphere(&sphere, &mut rng);
        assert!(net.iter().any(|z| dist(z, &x) < eps));
    }
}

#[test]
fn nets_cover_and_pack() {
    check_net(2, 1.0, 0.2, 1);
    check_net(3, 0.5, 0.1, 2);
    check_net(4, 1.0, 0.5, 3);
    let one = boundary_net(&Ball::new(vec![0.0, 0.0], 1.0, true).unwrap(), 5.0, 0).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(
        boundary_net(&Ball::new(vec![1.0], 1.0, true).unwrap(), 0.1, 0).unwrap(),
        vec![vec![0.0], vec![2.0]]
    );
}

#[test]
fn nets_are_seeded() {
    let s = Ball::new(vec![0.0; 3], 1.0, true).unwrap();
    assert_eq!(
        boundary_net(&s, 0.2, 9).unwrap(),
        boundary_net(&s, 0.2, 9).unwrap()
    );
    assert_ne!(
        boundary_net(&s, 0.2, 9).unwrap(),
        boundary_net(&s, 0.2, 10).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn net_count_is_bounded_by_packing(eps in 0.05f64..0.8, seed in 0u64..1000) {
        // disjoint caps of radius eps/4 on the circle
        let s = Ball::new(vec![0.0, 0.0], 1.0, true).unwrap();
        let net = boundary_net(&s, eps, seed).unwrap();
        prop_assert!(net.len() as f64 <= 2.0 * std::f64::consts::PI / (0.5 * eps) + 1.0);
        prop_assert!(net.len() as f64 >= 2.0 * std::f64::consts::PI / (2.0 * eps));
    }

    #[test]
    fn subdivision_children_disjoint_and_inside(n in 1usize..6, f in 0.05f64..0.95, d in 1usize..4) {
        let q = Cube::new(vec![0.0; d], 1.0).unwrap();
        let r = 0.5 * f * q.a / n as f64;
        let kids = cube_subdivide(&q, n, r).unwrap();
        prop_assert_eq!(kids.len(), n.pow(d as u32));
        for (i, k) in kids.iter().enumerate() {
            for v in k.vertices() {
                prop_assert!(q.contains(&v));
            }
            for o in &kids[..i] {
                prop_assert!(!k.intersects(o));
            }
        }
    }

    #[test]
    fn ball_levels_increase(r in 0.1f64..10.0, n in 1usize..30) {
        prop_assert!(ball_level_radius(r, n) < ball_level_radius(r, n + 1));
        prop_assert!(ball_level_radius(r, n) < r);
    }
}
