//! Monte Carlo hitting probabilities: walk on spheres for Brownian motion,
//! exit-from-ball iteration and time stepping for isotropic stable processes,
//! and the unavoidability verifier.

use crate::error::{invalid, Error, Result};
use crate::geometry::{dist, norm, Domain, Point};
use crate::kernels::{CapacityProfile, KernelKind};
use crate::rng::{derive_seed, path_rng};
use crate::spatial::DenseGrid;
use crate::stable::{exit_table, random_direction, stable_exit_sample, stable_increment};
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

/// One closed obstacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ball {
        center: Point,
        radius: f64,
    },
    /// Axis-parallel cube given by its half side.
    Cube {
        center: Point,
        half: f64,
    },
    /// Closed spherical shell `inner <= |x - center| <= outer`.
    Annulus {
        center: Point,
        inner: f64,
        outer: f64,
    },
}

impl Shape {
    pub fn center(&self) -> &[f64] {
        match self {
            Shape::Ball { center, .. }
            | Shape::Cube { center, .. }
            | Shape::Annulus { center, .. } => center,
        }
    }

    /// Radius of the smallest ball around the center containing the shape.
    pub fn reach(&self) -> f64 {
        match self {
            Shape::Ball { radius, .. } => *radius,
            Shape::Cube { center, half } => half * (center.len() as f64).sqrt(),
            Shape::Annulus { outer, .. } => *outer,
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Shape::Ball { center, radius } => (dist(x, center) - radius).max(0.0),
            Shape::Cube { center, half } => x
                .iter()
                .zip(center)
                .map(|(a, c)| ((a - c).abs() - half).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
            Shape::Annulus {
                center,
                inner,
                outer,
            } => {
                let t = dist(x, center);
                (inner - t).max(t - outer).max(0.0)
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Shape::Ball { center, radius } => dist(x, center) <= *radius,
            Shape::Cube { center, half } => {
                x.iter().zip(center).all(|(a, c)| (a - c).abs() <= *half)
            }
            Shape::Annulus {
                center,
                inner,
                outer,
            } => {
                let t = dist(x, center);
                *inner <= t && t <= *outer
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Class {
    grid: DenseGrid,
    ids: Vec<usize>,
    reach: f64,
    /// Radii when every shape of the class is a ball, for a fast path.
    radii: Option<Vec<f64>>,
    /// Occupied cells at sizes `cell 2^k`, `k = 1..`.
    coarse: Vec<FxHashSet<[i64; 3]>>,
}

const COARSE_LEVELS: usize = 8;
// classes this small are scanned exhaustively
const BRUTE_FORCE: usize = 32;

fn coarse_key(x: &[f64], cell: f64) -> [i64; 3] {
    let mut k = [0i64; 3];
    for (j, slot) in k.iter_mut().enumerate().take(x.len().min(3)) {
        *slot = (x[j] / cell).floor().clamp(-9e15, 9e15) as i64;
    }
    k
}

fn ring_occupied(set: &FxHashSet<[i64; 3]>, x: &[f64], cell: f64) -> bool {
    let base = coarse_key(x, cell);
    let kd = x.len().min(3);
    let span = |j: usize| if j < kd { -1..=1 } else { 0..=0 };
    for a in span(0) {
        for b in span(1) {
            for c in span(2) {
                if set.contains(&[base[0] + a, base[1] + b, base[2] + c]) {
                    return true;
                }
            }
        }
    }
    false
}

impl Class {
    fn build(shapes: &[Shape], ids: Vec<usize>, cell: f64, d: usize) -> Self {
        let reach = ids.iter().map(|&i| shapes[i].reach()).fold(0.0, f64::max);
        let centers: Vec<&[f64]> = ids.iter().map(|&i| shapes[i].center()).collect();
        let grid = DenseGrid::new(d, cell.max(4.0 * reach), &centers);
        let radii = ids
            .iter()
            .map(|&i| match shapes[i] {
                Shape::Ball { radius, .. } => Some(radius),
                _ => None,
            })
            .collect();
        let coarse = (1..=COARSE_LEVELS)
            .map(|k| {
                let c = grid.cell() * (1u64 << k) as f64;
                ids.iter()
                    .map(|&i| coarse_key(shapes[i].center(), c))
                    .collect()
            })
            .collect();
        Class {
            grid,
            ids,
            reach,
            radii,
            coarse,
        }
    }
}

/// Union of closed obstacles with a spatial index answering distance queries.
/// Small shapes share one hash grid sized by the mean spacing; larger ones
/// are grouped by size. Each grid carries a pyramid of occupied coarse cells
/// so that far-away queries get a large lower bound cheaply.
#[derive(Clone, Debug)]
pub struct Obstacles {
    pub d: usize,
    pub id: String,
    pub shapes: Vec<Shape>,
    classes: Vec<Class>,
}

impl Obstacles {
    pub fn new(d: usize, id: impl Into<String>, shapes: Vec<Shape>) -> Result<Self> {
        if shapes.iter().any(|s| s.center().len() != d) {
            return invalid("obstacle dimension mismatch");
        }
        if shapes
            .iter()
            .any(|s| !(s.reach() > 0.0 && s.reach().is_finite()))
        {
            return invalid("obstacles need positive finite size");
        }
        let spacing = |ids: &[usize]| {
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for &i in ids {
                for (j, &c) in shapes[i].center().iter().enumerate() {
                    lo[j] = lo[j].min(c);
                    hi[j] = hi[j].max(c);
                }
            }
            let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
            extent / (ids.len() as f64).powf(1.0 / d as f64)
        };
        let all: Vec<usize> = (0..shapes.len()).collect();
        let s = spacing(&all);
        let (small, large): (Vec<usize>, Vec<usize>) =
            all.into_iter().partition(|&i| 4.0 * shapes[i].reach() <= s);
        let mut classes = Vec::new();
        if !small.is_empty() {
            classes.push(Class::build(&shapes, small, 0.5 * s, d));
        }
        let mut groups: Vec<(i32, Vec<usize>)> = Vec::new();
        for i in large {
            let key = shapes[i].reach().log2().floor() as i32;
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(i),
                None => groups.push((key, vec![i])),
            }
        }
        for (_, ids) in groups {
            let cell = spacing(&ids);
            classes.push(Class::build(&shapes, ids, cell, d));
        }
        Ok(Self {
            d,
            id: id.into(),
            shapes,
            classes,
        })
    }

    pub fn empty(d: usize) -> Self {
        Self {
            d,
            id: "empty".into(),
            shapes: Vec::new(),
            classes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    fn brute(&self, c: &Class, x: &[f64]) -> f64 {
        c.ids
            .iter()
            .map(|&i| self.shapes[i].distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    // nearest exact distance among shapes within `rings` cells, and the
    // distance below which nothing was missed
    fn class_scan(&self, c: &Class, x: &[f64], rings: i64) -> (f64, f64) {
        if c.ids.len() <= BRUTE_FORCE {
            return (self.brute(c, x), f64::INFINITY);
        }
        let mut best = f64::INFINITY;
        match &c.radii {
            Some(r) => c.grid.visit_rings(x, rings, |k, q| {
                let t = x
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    - r[k];
                best = best.min(t.max(0.0));
                true
            }),
            None => c.grid.visit_rings(x, rings, |k, _| {
                best = best.min(self.shapes[c.ids[k]].distance(x));
                true
            }),
        }
        (best, rings as f64 * c.grid.cell() - c.reach)
    }

    fn class_lb(&self, c: &Class, x: &[f64]) -> f64 {
        let (best, safe) = self.class_scan(c, x, 1);
        if best.is_finite() || safe.is_infinite() {
            return best.min(safe.max(0.0));
        }
        // nothing nearby: climb the pyramid while the neighbourhood stays empty
        let mut empty_at = c.grid.cell();
        for (k, set) in c.coarse.iter().enumerate() {
            let cell = c.grid.cell() * (2u64 << k) as f64;
            if ring_occupied(set, x, cell) {
                break;
            }
            empty_at = cell;
        }
        (empty_at - c.reach).max(0.0)
    }

    /// A lower bound on the distance from `x` to the union, zero inside and
    /// positive outside.
    pub fn distance_lb(&self, x: &[f64]) -> f64 {
        self.classes
            .iter()
            .map(|c| self.class_lb(c, x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Exact distance from `x` to the union.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.classes
            .iter()
            .map(|c| {
                let mut rings = 2;
                loop {
                    let (best, safe) = self.class_scan(c, x, rings);
                    if best <= safe {
                        return best;
                    }
                    if rings > 64 {
                        return self.brute(c, x);
                    }
                    rings *= 2;
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.classes.iter().any(|c| {
            let mut hit = false;
            c.grid.visit_rings(x, 1, |k, _| {
                hit = self.shapes[c.ids[k]].contains(x);
                !hit
            });
            hit
        })
    }

    /// `min(1, sum_z g(|y - z|)/g(r_z))` over circumscribed balls: an upper
    /// bound for the whole-space hitting probability from `y`.
    pub fn escape_bound(&self, profile: &CapacityProfile, y: &[f64]) -> f64 {
        let mut s = 0.0;
        for sh in &self.shapes {
            let r = sh.reach();
            let t = dist(y, sh.center());
            if t <= r {
                return 1.0;
            }
            s += profile.g(t) / profile.g(r);
            if s >= 1.0 {
                return 1.0;
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    /// Absorption tolerance.
    pub eps_shell: f64,
    pub max_steps: usize,
    /// Paths beyond this radius count as escaped.
    pub escape_radius: f64,
    pub seed: u64,
}

impl WalkParams {
    /// Defaults for a domain of the given length scale.
    pub fn for_scale(scale: f64, seed: u64) -> Self {
        Self {
            eps_shell: 1e-6 * scale,
            max_steps: 1_000_000,
            escape_radius: 1e3 * scale,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps_shell > 0.0) || self.max_steps == 0 || !(self.escape_radius > 0.0) {
            return invalid("walk parameters need eps_shell > 0, max_steps > 0, escape_radius > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Mean over paths of the hitting bound at escape; zero for bounded domains.
    pub truncation_bias_bound: f64,
    pub x: Point,
    pub target_id: String,
    /// Absorptions equidistant from both boundaries, counted as misses.
    pub ties: usize,
    /// Paths stopped by `max_steps`, counted as misses.
    pub stalled: usize,
    /// False when more than 0.1% of the paths stalled.
    pub valid: bool,
    pub mean_steps: f64,
}

impl HittingEstimate {
    fn from_counts(x: &[f64], target: &Obstacles, seed: u64, n: usize, tally: Tally) -> Self {
        let p = tally.hits as f64 / n as f64;
        Self {
            p_hat: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
            n_samples: n,
            seed,
            truncation_bias_bound: tally.bias / n as f64,
            x: x.to_vec(),
            target_id: target.id.clone(),
            ties: tally.ties,
            stalled: tally.stalled,
            valid: (tally.stalled as f64) <= 1e-3 * n as f64,
            mean_steps: tally.steps as f64 / n as f64,
        }
    }

    /// Lower end of the three-sigma interval.
    pub fn lower(&self) -> f64 {
        self.p_hat - 3.0 * self.stderr
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    hits: usize,
    ties: usize,
    stalled: usize,
    steps: usize,
    bias: f64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            hits: self.hits + o.hits,
            ties: self.ties + o.ties,
            stalled: self.stalled + o.stalled,
            steps: self.steps + o.steps,
            bias: self.bias + o.bias,
        }
    }
}

enum Outcome {
    Hit,
    Miss,
    Tie,
    Stalled,
    Escaped(f64),
}

fn tally_paths(n: usize, path: impl Fn(u64) -> (Outcome, usize) + Sync) -> Tally {
    // fixed chunks keep the floating point sum independent of scheduling
    const CHUNK: usize = 1024;
    let chunks: Vec<Tally> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut t = Tally::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let (o, steps) = path(i as u64);
                t.steps += steps;
                match o {
                    Outcome::Hit => t.hits += 1,
                    Outcome::Miss => {}
                    Outcome::Tie => t.ties += 1,
                    Outcome::Stalled => t.stalled += 1,
                    Outcome::Escaped(b) => t.bias += b,
                }
            }
            t
        })
        .collect();
    chunks.into_iter().fold(Tally::default(), Tally::merge)
}

fn check_inputs(d: usize, target: &Obstacles, x: &[f64], n: usize) -> Result<()> {
    if x.len() != d || target.d != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if n == 0 {
        return invalid("need at least one sample");
    }
    Ok(())
}

/// Brownian hitting probability of `target` before leaving `domain`, by walk
/// on spheres. For the whole space, paths beyond the escape radius stop and
/// add their whole-space hitting bound to the truncation bias.
pub fn wos_brownian_hit(
    domain: &Domain,
    target: &Obstacles,
    profile: &CapacityProfile,
    x: &[f64],
    params: &WalkParams,
    n: usize,
) -> Result<HittingEstimate> {
    params.validate()?;
    check_inputs(domain.dim(), target, x, n)?;
    if profile.alpha() != Some(2.0) {
        return Err(Error::Unsupported(
            "walk on spheres needs a Brownian profile".into(),
        ));
    }
    if !domain.contains(x) {
        return invalid("start point outside the domain");
    }
    let d = x.len();
    let eps = params.eps_shell;
    let whole = matches!(domain, Domain::WholeSpace { .. });
    if target.contains(x) {
        return Ok(HittingEstimate::from_counts(
            x,
            target,
            params.seed,
            n,
            Tally {
                hits: n,
                ..Tally::default()
            },
        ));
    }
    let tally = tally_paths(n, |i| {
        let mut rng = path_rng(params.seed, i);
        let mut y = x.to_vec();
        for step in 0..params.max_steps {
            let db = domain.boundary_distance(&y);
            let dt = target.distance_lb(&y);
            if dt <= eps || db <= eps {
                let exact = target.distance(&y);
                let o = if (exact - db).abs() <= 1e-12 {
                    Outcome::Tie
                } else if exact < db {
                    Outcome::Hit
                } else {
                    Outcome::Miss
                };
                return (o, step);
            }
            if whole && norm(&y) > params.escape_radius {
                return (Outcome::Escaped(target.escape_bound(profile, &y)), step);
            }
            let r = db.min(dt);
            let u = random_direction(d, &mut rng);
            y.iter_mut().zip(&u).for_each(|(a, b)| *a += r * b);
        }
        (Outcome::Stalled, params.max_steps)
    });
    Ok(HittingEstimate::from_counts(
        x,
        target,
        params.seed,
        n,
        tally,
    ))
}

fn riesz_alpha(profile: &CapacityProfile) -> Result<f64> {
    match profile.kind {
        KernelKind::Riesz { alpha } if alpha < 2.0 => Ok(alpha),
        _ => Err(Error::Unsupported(
            "stable walks need a Riesz profile with alpha < 2".into(),
        )),
    }
}

/// Whole-space hitting probability for the isotropic stable process: from
/// `y`, jump to the exit position of the largest ball around `y` missing the
/// target, until the landing point is in the target or beyond the escape radius.
pub fn stable_hit(
    target: &Obstacles,
    x: &[f64],
    profile: &CapacityProfile,
    params: &WalkParams,
    n: usize,
) -> Result<HittingEstimate> {
    params.validate()?;
    check_inputs(profile.d, target, x, n)?;
    let alpha = riesz_alpha(profile)?;
    let table = exit_table(profile.d, alpha)?;
    if target.contains(x) {
        return Ok(HittingEstimate::from_counts(
            x,
            target,
            params.seed,
            n,
            Tally {
                hits: n,
                ..Tally::default()
            },
        ));
    }
    if target.is_empty() {
        return Ok(HittingEstimate::from_counts(
            x,
            target,
            params.seed,
            n,
            Tally::default(),
        ));
    }
    let tally = tally_paths(n, |i| {
        let mut rng = path_rng(params.seed, i);
        let mut y = x.to_vec();
        for step in 0..params.max_steps {
            if norm(&y) > params.escape_radius {
                return (Outcome::Escaped(target.escape_bound(profile, &y)), step);
            }
            let rho = target.distance_lb(&y);
            let e = stable_exit_sample(&table, &mut rng);
            y.iter_mut().zip(&e).for_each(|(a, b)| *a += rho * b);
            if target.contains(&y) {
                return (Outcome::Hit, step + 1);
            }
        }
        (Outcome::Stalled, params.max_steps)
    });
    let est = HittingEstimate::from_counts(x, target, params.seed, n, tally);
    check_stable(&est)?;
    Ok(est)
}

fn check_stable(est: &HittingEstimate) -> Result<()> {
    if !est.valid {
        return Err(Error::Walk(format!(
            "{} of {} paths exceeded max_steps",
            est.stalled, est.n_samples
        )));
    }
    if est.truncation_bias_bound > 0.5 {
        return Err(Error::Walk(format!(
            "escape bound {:.3} above 0.5; escape radius too small",
            est.truncation_bias_bound
        )));
    }
    Ok(())
}

/// Independent estimator for [`stable_hit`]: exact increments on a time grid
/// with step `dt` near the target, refined in proportion to
/// `max(1, dist)^alpha` farther out so that the relative resolution stays
/// fixed. The target is monitored at grid times only.
pub fn stable_hit_euler(
    target: &Obstacles,
    x: &[f64],
    profile: &CapacityProfile,
    dt: f64,
    params: &WalkParams,
    n: usize,
) -> Result<HittingEstimate> {
    params.validate()?;
    check_inputs(profile.d, target, x, n)?;
    let alpha = riesz_alpha(profile)?;
    if !(dt > 0.0) {
        return invalid("time step must be positive");
    }
    if target.contains(x) {
        return Ok(HittingEstimate::from_counts(
            x,
            target,
            params.seed,
            n,
            Tally {
                hits: n,
                ..Tally::default()
            },
        ));
    }
    let d = profile.d;
    let tally = tally_paths(n, |i| {
        let mut rng = path_rng(params.seed, i);
        let mut y = x.to_vec();
        for step in 0..params.max_steps {
            if norm(&y) > params.escape_radius {
                return (Outcome::Escaped(target.escape_bound(profile, &y)), step);
            }
            let far = target.distance_lb(&y).max(1.0);
            let inc = stable_increment(d, alpha, dt * far.powf(alpha), &mut rng);
            y.iter_mut().zip(&inc).for_each(|(a, b)| *a += b);
            if target.contains(&y) {
                return (Outcome::Hit, step + 1);
            }
        }
        (Outcome::Stalled, params.max_steps)
    });
    let est = HittingEstimate::from_counts(x, target, params.seed, n, tally);
    check_stable(&est)?;
    Ok(est)
}

/// Hitting estimate with the walk suited to the profile: walk on spheres for
/// Brownian profiles, exit iteration for Riesz profiles in the whole space.
pub fn hit(
    domain: &Domain,
    target: &Obstacles,
    profile: &CapacityProfile,
    x: &[f64],
    params: &WalkParams,
    n: usize,
) -> Result<HittingEstimate> {
    match (&profile.kind, domain) {
        (KernelKind::Riesz { .. }, Domain::WholeSpace { .. }) => {
            stable_hit(target, x, profile, params, n)
        }
        (KernelKind::Riesz { .. }, _) => Err(Error::Unsupported(
            "stable walks are only supported in the whole space".into(),
        )),
        _ => wos_brownian_hit(domain, target, profile, x, params, n),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub kappa: f64,
    pub probes: Vec<HittingEstimate>,
    pub free: Vec<HittingEstimate>,
    /// `min (p_hat - 3 stderr)` over the probes on the reference set.
    pub min_lower: f64,
    pub satisfied: bool,
}

/// Estimate hitting of `target` from probes on a reference unavoidable set
/// and from free points. The criterion holds at level `kappa` when every
/// probe has `p_hat - 3 stderr >= kappa`. Verdicts are statistical.
#[allow(clippy::too_many_arguments)]
pub fn verify_unavoidable(
    domain: &Domain,
    target: &Obstacles,
    profile: &CapacityProfile,
    probes: &[Point],
    free: &[Point],
    kappa: f64,
    params: &WalkParams,
    n: usize,
) -> Result<VerifyReport> {
    let run = |pts: &[Point], tag: u64| -> Result<Vec<HittingEstimate>> {
        pts.iter()
            .enumerate()
            .map(|(k, x)| {
                let p = WalkParams {
                    seed: derive_seed(params.seed, (tag << 32) | k as u64),
                    ..*params
                };
                hit(domain, target, profile, x, &p, n)
            })
            .collect()
    };
    let probes = run(probes, 1)?;
    let free = run(free, 2)?;
    let min_lower = probes
        .iter()
        .map(HittingEstimate::lower)
        .fold(f64::INFINITY, f64::min);
    let satisfied = !probes.is_empty() && min_lower >= kappa && probes.iter().all(|e| e.valid);
    Ok(VerifyReport {
        kappa,
        probes,
        free,
        min_lower,
        satisfied,
    })
}
