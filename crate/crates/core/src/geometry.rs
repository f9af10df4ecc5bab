//! Points, balls, cubes, domains, exhaustions and nets on spheres.

use crate::error::{invalid, Error, Result};
use crate::spatial::PointGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Point = Vec<f64>;

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    crate::spatial::dist2(a, b).sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn axpy(a: f64, x: &[f64], y: &[f64]) -> Point {
    x.iter().zip(y).map(|(xi, yi)| a * xi + yi).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
    pub closed: bool,
}

impl Ball {
    pub fn new(center: Point, radius: f64, closed: bool) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || center.is_empty() {
            return invalid("ball needs a nonempty center and a positive radius");
        }
        Ok(Self {
            center,
            radius,
            closed,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let r = dist(x, &self.center);
        r < self.radius || (self.closed && r <= self.radius)
    }
}

/// Closed cube of diameter `a`, i.e. of side `a / sqrt(d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Point,
    pub a: f64,
}

impl Cube {
    pub fn new(center: Point, a: f64) -> Result<Self> {
        if !(a > 0.0) || center.is_empty() {
            return invalid("cube needs a nonempty center and a positive diameter");
        }
        Ok(Self { center, a })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn side(&self) -> f64 {
        self.a / (self.dim() as f64).sqrt()
    }

    pub fn half_side(&self) -> f64 {
        0.5 * self.side()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let h = self.half_side();
        x.iter()
            .zip(&self.center)
            .all(|(xi, ci)| (xi - ci).abs() <= h)
    }

    /// Euclidean distance from `x` to the cube (zero inside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        let h = self.half_side();
        x.iter()
            .zip(&self.center)
            .map(|(xi, ci)| ((xi - ci).abs() - h).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn intersects(&self, other: &Cube) -> bool {
        let s = self.half_side() + other.half_side();
        self.center
            .iter()
            .zip(&other.center)
            .all(|(a, b)| (a - b).abs() <= s)
    }

    pub fn vertices(&self) -> Vec<Point> {
        let d = self.dim();
        let h = self.half_side();
        (0..1usize << d)
            .map(|m| {
                (0..d)
                    .map(|j| self.center[j] + if m >> j & 1 == 1 { h } else { -h })
                    .collect()
            })
            .collect()
    }
}

/// Split the cube into `n^d` subcubes and put a cube of diameter `r` at the
/// center of each, in lexicographic order with the last axis fastest.
pub fn cube_subdivide(q: &Cube, n: usize, r: f64) -> Result<Vec<Cube>> {
    if n == 0 {
        return invalid("subdivision count must be positive");
    }
    if !(r > 0.0) || 2.0 * r >= q.a / n as f64 {
        return invalid("child diameter must satisfy 0 < 2r < a/n");
    }
    let d = q.dim();
    let side = q.side();
    let step = side / n as f64;
    let total = n
        .checked_pow(d as u32)
        .ok_or_else(|| Error::InvalidArgument("n^d overflows".into()))?;
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let c: Point = (0..d)
            .map(|j| q.center[j] - 0.5 * side + (idx[j] as f64 + 0.5) * step)
            .collect();
        out.push(Cube { center: c, a: r });
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < n {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    WholeSpace {
        d: usize,
    },
    Ball {
        center: Point,
        radius: f64,
    },
    Box {
        lo: Point,
        hi: Point,
    },
    Annulus {
        center: Point,
        inner: f64,
        outer: f64,
    },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::WholeSpace { d } => *d,
            Domain::Ball { center, .. } | Domain::Annulus { center, .. } => center.len(),
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::WholeSpace { d } if *d == 0 => invalid("dimension must be positive"),
            Domain::Ball { radius, .. } if !(*radius > 0.0) => {
                invalid("domain radius must be positive")
            }
            Domain::Box { lo, hi }
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) =>
            {
                invalid("box needs lo < hi componentwise")
            }
            Domain::Annulus { inner, outer, .. } if !(0.0 <= *inner && inner < outer) => {
                invalid("annulus needs 0 <= inner < outer")
            }
            _ => Ok(()),
        }
    }

    /// Whether `x` lies in the (open) domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.boundary_distance(x) > 0.0
    }

    /// Distance to the complement; `+inf` for the whole space, `0` outside.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::WholeSpace { .. } => f64::INFINITY,
            Domain::Ball { center, radius } => (radius - dist(x, center)).max(0.0),
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(xi, (l, h))| (xi - l).min(h - xi))
                .fold(f64::INFINITY, f64::min)
                .max(0.0),
            Domain::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = dist(x, center);
                (r - inner).min(outer - r).max(0.0)
            }
        }
    }
}

/// One level of an exhaustion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Ball { center: Point, radius: f64 },
    Box { lo: Point, hi: Point },
}

impl Region {
    pub fn contains_open(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => dist(x, center) < *radius,
            Region::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| l < v && v < h),
        }
    }

    pub fn contains_closed(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => dist(x, center) <= *radius,
            Region::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| l <= v && v <= h),
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            Region::Ball { radius, .. } => Some(*radius),
            Region::Box { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exhaustion {
    pub domain: Domain,
    /// `levels[k]` is `V_{k+1}`.
    pub levels: Vec<Region>,
}

impl Exhaustion {
    /// `V_n`, with `V_0` the empty set (`None`).
    pub fn level(&self, n: usize) -> Option<&Region> {
        if n == 0 {
            None
        } else {
            self.levels.get(n - 1)
        }
    }
}

/// Radius of the `n`-th level of the standard exhaustion of a ball of radius `r`.
pub fn ball_level_radius(r: f64, n: usize) -> f64 {
    r * (1.0 - 2f64.powi(-(n as i32)))
}

/// Nested relatively compact open sets exhausting the domain:
/// `B(c, R(1 - 2^{-n}))` for a ball, `B(0, 2^n)` for the whole space and
/// the correspondingly shrunk boxes for a box.
pub fn concentric_exhaustion(domain: &Domain, depth: usize) -> Result<Exhaustion> {
    domain.validate()?;
    if depth == 0 {
        return invalid("depth must be at least 1");
    }
    let levels = (1..=depth)
        .map(|n| match domain {
            Domain::WholeSpace { d } => Ok(Region::Ball {
                center: vec![0.0; *d],
                radius: 2f64.powi(n as i32),
            }),
            Domain::Ball { center, radius } => Ok(Region::Ball {
                center: center.clone(),
                radius: ball_level_radius(*radius, n),
            }),
            Domain::Box { lo, hi } => {
                let f = 1.0 - 2f64.powi(-(n as i32));
                let (l, h): (Vec<f64>, Vec<f64>) = lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| {
                        let (m, w) = (0.5 * (a + b), 0.5 * (b - a) * f);
                        (m - w, m + w)
                    })
                    .unzip();
                Ok(Region::Box { lo: l, hi: h })
            }
            Domain::Annulus { .. } => Err(Error::Unsupported("exhaustion of an annulus".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Exhaustion {
        domain: domain.clone(),
        levels,
    })
}

/// A closed shell `closure(V_outer) \ V_inner`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub index: usize,
    pub inner_level: usize,
    pub outer_level: usize,
    pub inner: Option<Region>,
    pub outer: Region,
}

impl Shell {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.outer.contains_closed(x) && !self.inner.as_ref().is_some_and(|r| r.contains_open(x))
    }
}

/// Shells `B_n = closure(V_{m_{n+1}}) \ V_{m_n + k_n}` with `m_1 = 0` and
/// `m_{n+1} = m_n + k_n + 1`, so each shell is one exhaustion layer thick and
/// consecutive shells are separated by `k_n` layers.
pub fn shell_partition(ex: &Exhaustion, gaps: &[usize]) -> Result<Vec<Shell>> {
    if gaps.is_empty() || gaps.contains(&0) {
        return invalid("gaps must be a nonempty list of positive integers");
    }
    let depth = ex.levels.len();
    let mut shells = Vec::new();
    let mut m = 0usize;
    for (i, &k) in gaps.iter().enumerate() {
        let inner = m + k;
        let outer = inner + 1;
        if outer > depth {
            break;
        }
        shells.push(Shell {
            index: i + 1,
            inner_level: inner,
            outer_level: outer,
            inner: ex.level(inner).cloned(),
            outer: ex.level(outer).cloned().expect("level within depth"),
        });
        m = outer;
    }
    if shells.is_empty() {
        return Err(Error::InsufficientDepth(format!(
            "depth {depth} does not reach the first shell (needs {})",
            gaps[0] + 1
        )));
    }
    Ok(shells)
}

fn random_rotation(d: usize, seed: u64) -> Vec<Vec<f64>> {
    // Gram-Schmidt on a Gaussian matrix
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        for r in &rows {
            let p: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= p * b);
        }
        let n = norm(&v);
        if n > 1e-6 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows
}

/// Visit a grid on the unit sphere `S^{d-1}` whose covering radius (geodesic,
/// hence also chordal) is at most `h`.
fn unit_sphere_grid(d: usize, h: f64, visit: &mut dyn FnMut(&[f64])) {
    let mut buf = vec![0.0; d];
    sphere_grid_rec(d, h, 1.0, 0, &mut buf, visit);
}

// Points of the sphere of radius `rad` in coordinates `start..d`, the
// earlier coordinates already fixed in `buf`. Covering radius at most `h`.
fn sphere_grid_rec(
    d: usize,
    h: f64,
    rad: f64,
    start: usize,
    buf: &mut [f64],
    visit: &mut dyn FnMut(&[f64]),
) {
    let k = d - start;
    if k == 1 {
        for s in [-1.0, 1.0] {
            buf[start] = s * rad;
            visit(buf);
        }
        return;
    }
    if k == 2 {
        // chord covering radius 2 rad sin(step/4) <= rad step / 2
        let n = ((2.0 * PI * rad / (2.0 * h)).ceil() as usize).max(3);
        for j in 0..n {
            let t = 2.0 * PI * j as f64 / n as f64;
            buf[start] = rad * t.cos();
            buf[start + 1] = rad * t.sin();
            visit(buf);
        }
        return;
    }
    // bands in the polar angle, each covered within h/2 along meridians and
    // the remaining h/2 along the band
    let m = ((PI * rad / h).ceil() as usize).max(2);
    let dt = PI / m as f64;
    for j in 0..m {
        let t = (j as f64 + 0.5) * dt;
        buf[start] = rad * t.cos();
        let smax = ((t - 0.5 * dt).sin())
            .max((t + 0.5 * dt).sin())
            .max(if (t - PI / 2.0).abs() < dt { 1.0 } else { 0.0 });
        // sub-sphere radius at the band center, scaled so that the worst
        // latitude in the band is still covered within h/2
        let sub = rad * t.sin();
        let hsub = 0.5 * h * sub / (rad * smax).max(1e-300);
        sphere_grid_rec(d, hsub, sub, start + 1, buf, visit);
    }
}

/// Maximal `0.9 eps`-separated subset of a fine grid on the sphere `∂B`,
/// returned only after the cover `∂B ⊂ ∪ B(z, eps)` has been checked on an
/// independent grid. Balls `B̄(z, eps/4)` are pairwise disjoint.
pub fn boundary_net(sphere: &Ball, eps: f64, seed: u64) -> Result<Vec<Point>> {
    let d = sphere.dim();
    let big_r = sphere.radius;
    if !(eps > 0.0) {
        return invalid("net spacing must be positive");
    }
    if d == 1 {
        return Ok(vec![
            vec![sphere.center[0] - big_r],
            vec![sphere.center[0] + big_r],
        ]);
    }
    let rot = random_rotation(d, seed);
    let place = |u: &[f64]| -> Point {
        (0..d)
            .map(|i| {
                sphere.center[i] + big_r * rot[i].iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    };
    if eps >= 2.0 * big_r {
        // one ball already contains the whole sphere
        let mut first = None;
        unit_sphere_grid(d, 1.0, &mut |u| {
            if first.is_none() {
                first = Some(place(u));
            }
        });
        return Ok(vec![first.expect("nonempty grid")]);
    }
    let h = 0.1 * eps;
    let sep = eps - h;
    let mut net = PointGrid::new(d, eps);
    unit_sphere_grid(d, h / big_r, &mut |u| {
        let p = place(u);
        if !net.any_within(&p, sep, false) {
            net.insert(&p);
        }
    });
    // independent check grid with a different orientation
    let rot2 = random_rotation(d, seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let mut missed = 0usize;
    let mut first_miss: Option<Point> = None;
    unit_sphere_grid(d, h / big_r, &mut |u| {
        let p: Point = (0..d)
            .map(|i| {
                sphere.center[i] + big_r * rot2[i].iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        if !net.any_within(&p, eps, false) {
            missed += 1;
            first_miss.get_or_insert(p);
        }
    });
    if missed > 0 {
        return Err(Error::CoverFailed(format!(
            "{missed} check points uncovered, first at {first_miss:?}"
        )));
    }
    Ok((0..net.len()).map(|i| net.point(i).to_vec()).collect())
}

/// Uniform random point on the sphere `∂B`.
pub fn random_on_sphere<R: Rng>(sphere: &Ball, rng: &mut R) -> Point {
    let d = sphere.dim();
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let n = norm(&v);
        if n > 1e-12 {
            return (0..d)
                .map(|i| sphere.center[i] + sphere.radius * v[i] / n)
                .collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covering_radius_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [2usize, 3, 4] {
            let h = 0.2;
            let mut pts = Vec::new();
            unit_sphere_grid(d, h, &mut |u| pts.push(u.to_vec()));
            let b = Ball::new(vec![0.0; d], 1.0, true).unwrap();
            for _ in 0..2000 {
                let x = random_on_sphere(&b, &mut rng);
                let m = pts
                    .iter()
                    .map(|p| dist(p, &x))
                    .fold(f64::INFINITY, f64::min);
                assert!(m <= h, "d={d} gap {m}");
            }
        }
    }
}
