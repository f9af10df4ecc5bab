//! Bubble configurations: the boundary cover, the equilibrium-cutting
//! construction and Riesz shells, plus pattern replacement and budgets.

use crate::cantor::CantorLevel;
use crate::equilibrium::{equilibrium_solve, Equilibrium, SolverOptions, Support};
use crate::error::{invalid, Error, Result};
use crate::geometry::{
    boundary_net, concentric_exhaustion, dist, norm, Ball, Domain, Point, Region,
};
use crate::hitting::{stable_hit, Obstacles, Shape, WalkParams};
use crate::kernels::{
    dyadic_scan, h_scan, CapacityProfile, KernelKind, MeasureFunction, ScanOptions,
};
use crate::rng::derive_seed;
use crate::spatial::PointGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub center: Point,
    pub radius: f64,
    pub shell: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BoundaryCover,
    KzCut,
    RieszShell,
    Listed,
}

/// Per-shell bookkeeping of a generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellRecord {
    pub n: usize,
    /// Radius of the sphere (or inner radius of the annulus) carrying the centers.
    pub level_radius: f64,
    /// Budget allowed for the shell, if any.
    pub eta: Option<f64>,
    /// Net spacing.
    pub eps: f64,
    /// Common bubble radius, if the shell has one.
    pub radius: Option<f64>,
    pub count: usize,
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleConfig {
    pub d: usize,
    pub bubbles: Vec<Bubble>,
    pub domain: Domain,
    pub profile: CapacityProfile,
    pub phi_label: String,
    /// `sum cap(r_z) h(r_z) = sum phi(r_z)` as recorded at construction.
    pub budget: f64,
    pub method: Method,
    pub seed: u64,
    pub shells: Vec<ShellRecord>,
}

impl BubbleConfig {
    pub fn len(&self) -> usize {
        self.bubbles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bubbles.is_empty()
    }

    /// Pairwise disjointness of the closed balls, containment in the domain
    /// with `r_z < dist(z, boundary)`, and, for bounded domains,
    /// non-increasing largest radius from shell to shell.
    pub fn validate(&self) -> Result<()> {
        let rmax = self.bubbles.iter().map(|b| b.radius).fold(0.0, f64::max);
        if self
            .bubbles
            .iter()
            .any(|b| b.center.len() != self.d || !(b.radius > 0.0))
        {
            return invalid("bubbles need positive radii and matching dimension");
        }
        if !self.bubbles.is_empty() {
            let mut grid = PointGrid::new(self.d, 2.0 * rmax);
            for b in &self.bubbles {
                grid.insert(&b.center);
            }
            for (i, b) in self.bubbles.iter().enumerate() {
                for (j, t) in grid.within(&b.center, b.radius + rmax) {
                    if j != i && !(t > b.radius + self.bubbles[j].radius) {
                        return Err(Error::Violation(format!("bubbles {i} and {j} intersect")));
                    }
                }
            }
        }
        for (i, b) in self.bubbles.iter().enumerate() {
            let room = self.domain.boundary_distance(&b.center);
            if !(b.radius < room) {
                return Err(Error::Violation(format!(
                    "bubble {i} not inside the domain"
                )));
            }
        }
        let mut per_shell: Vec<(usize, f64)> = Vec::new();
        for b in &self.bubbles {
            match per_shell.iter_mut().find(|(n, _)| *n == b.shell) {
                Some((_, r)) => *r = r.max(b.radius),
                None => per_shell.push((b.shell, b.radius)),
            }
        }
        per_shell.sort_by_key(|(n, _)| *n);
        let bounded = !matches!(self.domain, Domain::WholeSpace { .. });
        if bounded && per_shell.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(Error::Violation(
                "largest radius increases from one shell to the next".into(),
            ));
        }
        Ok(())
    }

    pub fn obstacles(&self) -> Result<Obstacles> {
        let shapes = self
            .bubbles
            .iter()
            .map(|b| Shape::Ball {
                center: b.center.clone(),
                radius: b.radius,
            })
            .collect();
        Obstacles::new(
            self.d,
            format!("{:?}:{}", self.method, self.bubbles.len()),
            shapes,
        )
    }

    /// Flat table `x0,..,x{d-1},radius,shell` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for j in 0..self.d {
            let _ = write!(s, "x{j},");
        }
        s.push_str("radius,shell\n");
        for b in &self.bubbles {
            for c in &b.center {
                let _ = write!(s, "{c},");
            }
            let _ = writeln!(s, "{},{}", b.radius, b.shell);
        }
        s
    }

    /// Bubbles from a table written by [`BubbleConfig::to_csv`].
    pub fn bubbles_from_csv(text: &str) -> Result<Vec<Bubble>> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty table".into()))?;
        let cols = header.split(',').count();
        if cols < 3 {
            return invalid("table needs coordinates, radius and shell");
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != cols {
                    return invalid(format!("row with {} fields, expected {cols}", f.len()));
                }
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("{s}: {e}")))
                };
                let center = f[..cols - 2]
                    .iter()
                    .map(|s| num(s))
                    .collect::<Result<Vec<_>>>()?;
                let radius = num(f[cols - 2])?;
                let shell = f[cols - 1]
                    .trim()
                    .parse()
                    .map_err(|e| Error::InvalidArgument(format!("shell: {e}")))?;
                Ok(Bubble {
                    center,
                    radius,
                    shell,
                })
            })
            .collect()
    }
}

/// Sum of `phi(r_z)` over a set of bubbles, in log space to stay finite.
fn phi_sum<'a>(bubbles: impl Iterator<Item = &'a Bubble>, phi: &MeasureFunction) -> f64 {
    bubbles.map(|b| phi.ln_eval(b.radius.ln()).exp()).sum()
}

/// Boundary-cover construction in a ball: for each exhaustion level `V_n`,
/// a net on `∂V_n` and a common radius `r_n` with `|Z_n| phi(r_n) < eta_n`,
/// `eta_n = (1/2) min(2^{-n} delta, dist(∂V_n, ∂V_{n-1} ∪ ∂V_{n+1}), inf psi(∂V_n))`.
/// The net spacing is `(1/2) min(dist(∂V_n, ∂V_{n±1}), 1/n)`.
pub fn boundary_cover_config(
    domain: &Domain,
    profile: &CapacityProfile,
    phi: &MeasureFunction,
    delta: f64,
    psi: &dyn Fn(&[f64]) -> f64,
    depth: usize,
    seed: u64,
) -> Result<BubbleConfig> {
    if !(delta > 0.0) {
        return invalid("delta must be positive");
    }
    let (center, _) = match domain {
        Domain::Ball { center, radius } => (center.clone(), *radius),
        _ => {
            return Err(Error::Unsupported(
                "boundary cover needs a ball domain".into(),
            ))
        }
    };
    if profile.d != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: profile.d,
            got: domain.dim(),
        });
    }
    let ex = concentric_exhaustion(domain, depth + 1)?;
    let radius_of = |n: usize| ex.level(n).and_then(Region::radius).unwrap_or(0.0);
    let mut bubbles = Vec::new();
    let mut shells = Vec::new();
    for n in 1..=depth {
        let rn = radius_of(n);
        let gap = if n == 1 {
            radius_of(2) - rn
        } else {
            (rn - radius_of(n - 1)).min(radius_of(n + 1) - rn)
        };
        let sphere = Ball::new(center.clone(), rn, true)?;
        let eps = 0.5 * gap.min(1.0 / n as f64);
        let net = boundary_net(&sphere, eps, derive_seed(seed, n as u64))?;
        let psi_inf = net.iter().map(|z| psi(z)).fold(f64::INFINITY, f64::min);
        let eta = 0.5 * (2f64.powi(-(n as i32)) * delta).min(gap).min(psi_inf);
        if !(eta > 0.0) {
            return invalid(format!("eta_{n} is not positive"));
        }
        // h must fall below eta somewhere; phi = cap fails here
        h_scan(phi, profile, eta, eta, ScanOptions { t_min: 1e-300 })?;
        let ln_allow = (eta / net.len() as f64).ln();
        let top = (eta * (1.0 - 1e-12)).min(0.4 * eps);
        let r = dyadic_scan(top, profile.r0(), ScanOptions { t_min: 1e-300 }, |t| {
            phi.ln_eval(t.ln()) < ln_allow
        })?;
        let shell_bubbles: Vec<Bubble> = net
            .into_iter()
            .map(|z| Bubble {
                center: z,
                radius: r,
                shell: n,
            })
            .collect();
        let budget = phi_sum(shell_bubbles.iter(), phi);
        if !(budget < eta) {
            return Err(Error::Violation(format!(
                "shell {n} budget {budget:e} not below eta {eta:e}"
            )));
        }
        shells.push(ShellRecord {
            n,
            level_radius: rn,
            eta: Some(eta),
            eps,
            radius: Some(r),
            count: shell_bubbles.len(),
            budget,
        });
        bubbles.extend(shell_bubbles);
    }
    let budget = phi_sum(bubbles.iter(), phi);
    if !(budget < delta) {
        return Err(Error::Violation(format!(
            "total budget {budget:e} not below delta {delta:e}"
        )));
    }
    let cfg = BubbleConfig {
        d: profile.d,
        bubbles,
        domain: domain.clone(),
        profile: profile.clone(),
        phi_label: phi.label.clone(),
        budget,
        method: Method::BoundaryCover,
        seed,
        shells,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Tuning of the equilibrium-cutting construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KzOptions {
    /// Nodes on a boundary sphere, or rings of a solid ball.
    pub resolution: usize,
    /// Upper limit on the number of points of the refined support.
    pub refine_limit: usize,
    /// Monte Carlo samples for the constant `a` (Riesz profiles).
    pub a_samples: usize,
    pub gamma_grid: usize,
    /// Sample points of `K'` used for `tau`.
    pub tau_samples: usize,
    pub solver: SolverOptions,
}

impl Default for KzOptions {
    fn default() -> Self {
        Self {
            resolution: 2000,
            refine_limit: 3_000_000,
            a_samples: 100_000,
            gamma_grid: 64,
            tau_samples: 400,
            solver: SolverOptions::default(),
        }
    }
}

/// Every intermediate quantity of the equilibrium-cutting construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KzReport {
    pub config: BubbleConfig,
    pub kappa_target: f64,
    pub gamma: f64,
    pub c: f64,
    pub big_c: f64,
    pub a: f64,
    pub a_stderr: f64,
    pub tau: f64,
    pub mu_mass: f64,
    pub big_r: f64,
    pub h_threshold: f64,
    pub local_mass_max: f64,
    pub tau_prime: f64,
    pub delta_sep: f64,
    pub beta: f64,
    pub support_points: usize,
    /// `mu(L_z)` per bubble, in bubble order.
    pub masses: Vec<f64>,
    /// Largest relative error of `cap(r_z) = mu(L_z)/(a gamma tau)`.
    pub cap_inversion_error: f64,
}

/// `(1 - gamma)/(c^2 C^2 (gamma c C + c^2 C^2))`.
pub fn kz_gamma_bound(gamma: f64, c: f64, big_c: f64) -> f64 {
    let cc = c * big_c;
    (1.0 - gamma) / (cc * cc * (gamma * cc + cc * cc))
}

fn region_parts(r: &Region) -> (Point, f64) {
    match r {
        Region::Ball { center, radius } => (center.clone(), *radius),
        Region::Box { lo, hi } => {
            let c: Point = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
            let half = 0.5 * dist(lo, hi);
            (c, half)
        }
    }
}

fn region_gap(inner: &Region, outer: &Region) -> Result<f64> {
    match (inner, outer) {
        (
            Region::Ball {
                center: c1,
                radius: r1,
            },
            Region::Ball {
                center: c2,
                radius: r2,
            },
        ) => Ok(r2 - r1 - dist(c1, c2)),
        (Region::Box { lo: l1, hi: h1 }, Region::Box { lo: l2, hi: h2 }) => Ok(l1
            .iter()
            .zip(l2)
            .map(|(a, b)| a - b)
            .chain(h2.iter().zip(h1).map(|(a, b)| a - b))
            .fold(f64::INFINITY, f64::min)),
        (Region::Box { lo, hi }, Region::Ball { center, radius }) => {
            let far = lo
                .iter()
                .zip(hi)
                .zip(center)
                .map(|((l, h), c)| (l - c).abs().max((h - c).abs()).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok(radius - far)
        }
        (Region::Ball { center, radius }, Region::Box { lo, hi }) => Ok(center
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(c, (l, h))| (c - radius - l).min(h - c - radius))
            .fold(f64::INFINITY, f64::min)),
    }
}

fn sample_region<R: Rng>(r: &Region, rng: &mut R) -> Point {
    match r {
        Region::Ball { center, radius } => loop {
            let p: Point = center
                .iter()
                .map(|c| c + radius * (2.0 * rng.gen::<f64>() - 1.0))
                .collect();
            if dist(&p, center) <= *radius {
                return p;
            }
        },
        Region::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(a, b)| a + (b - a) * rng.gen::<f64>())
            .collect(),
    }
}

fn boundary_sample(r: &Region, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    match r {
        Region::Ball { center, radius } => {
            let b = Ball {
                center: center.clone(),
                radius: *radius,
                closed: true,
            };
            (0..n)
                .map(|_| crate::geometry::random_on_sphere(&b, rng))
                .collect()
        }
        Region::Box { lo, hi } => (0..n)
            .map(|k| {
                let mut p = sample_region(r, rng);
                let j = k % lo.len();
                p[j] = if rng.gen::<bool>() { lo[j] } else { hi[j] };
                p
            })
            .collect(),
    }
}

/// Refine the cells of the equilibrium measure into sub-cells of side at most
/// `spacing`, each carrying its share of the cell mass.
fn refine_measure(
    eq: &Equilibrium,
    spacing: f64,
    limit: usize,
    project: Option<(&[f64], f64)>,
) -> Result<(Vec<Point>, Vec<f64>)> {
    let counts: Vec<Vec<usize>> = eq
        .support
        .cells
        .iter()
        .map(|c| {
            c.half
                .iter()
                .map(|h| ((2.0 * h / spacing).ceil() as usize).max(1))
                .collect()
        })
        .collect();
    let total: f64 = counts
        .iter()
        .map(|k| k.iter().map(|&v| v as f64).product::<f64>())
        .sum();
    if total > limit as f64 {
        return Err(Error::Unsupported(format!(
            "refined support needs {total:.3e} points, above the limit {limit}"
        )));
    }
    let mut pts = Vec::with_capacity(total as usize);
    let mut wts = Vec::with_capacity(total as usize);
    for ((p, cell), (k, w)) in eq
        .support
        .points
        .iter()
        .zip(&eq.support.cells)
        .zip(counts.iter().zip(&eq.measure.weights))
    {
        if *w <= 0.0 {
            continue;
        }
        let n: usize = k.iter().product();
        let share = w / n as f64;
        let mut idx = vec![0usize; k.len()];
        for _ in 0..n {
            let mut q = p.clone();
            for ((axis, h), (&i, &ki)) in cell.axes.iter().zip(&cell.half).zip(idx.iter().zip(k)) {
                let t = -h + (2 * i + 1) as f64 * h / ki as f64;
                q.iter_mut().zip(axis).for_each(|(x, e)| *x += t * e);
            }
            if let Some((c, rad)) = project {
                let v: Vec<f64> = q.iter().zip(c).map(|(x, y)| x - y).collect();
                let l = norm(&v);
                q = c.iter().zip(&v).map(|(y, x)| y + rad * x / l).collect();
            }
            pts.push(q);
            wts.push(share);
            for m in (0..k.len()).rev() {
                idx[m] += 1;
                if idx[m] < k[m] {
                    break;
                }
                idx[m] = 0;
            }
        }
    }
    Ok((pts, wts))
}

/// Estimate of `a` in `R_1^{B(0,1) \ B(0,1/2)}(0) >= a`: one for Brownian
/// profiles, a lower three-sigma Monte Carlo bound for Riesz profiles.
pub fn annulus_constant(
    profile: &CapacityProfile,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    match profile.kind {
        KernelKind::Riesz { alpha } if alpha < 2.0 => {
            let d = profile.d;
            let target = Obstacles::new(
                d,
                "annulus",
                vec![Shape::Annulus {
                    center: vec![0.0; d],
                    inner: 0.5,
                    outer: 1.0,
                }],
            )?;
            let params = WalkParams {
                eps_shell: 1e-9,
                max_steps: 100_000,
                escape_radius: 1e4,
                seed,
            };
            let est = stable_hit(&target, &vec![0.0; d], profile, &params, samples)?;
            Ok(((est.p_hat - 3.0 * est.stderr).min(1.0), est.stderr))
        }
        _ => Ok((1.0, 0.0)),
    }
}

/// The equilibrium-cutting construction on a compact `K` inside a compact
/// neighbourhood `K'`: finitely many disjoint balls in `K'` whose union is
/// hit with probability at least `kappa_target` from every point of `K`,
/// with `sum cap(r_z) h(r_z) < eta`.
#[allow(clippy::too_many_arguments)]
pub fn kz_config(
    k: &Region,
    k_prime: &Region,
    profile: &CapacityProfile,
    phi: &MeasureFunction,
    eta: f64,
    kappa_target: f64,
    seed: u64,
    opts: &KzOptions,
) -> Result<KzReport> {
    if !(eta > 0.0 && eta < 1.0) {
        return invalid("eta must lie in (0, 1)");
    }
    let d = profile.d;
    let c = profile.c;
    let big_c = profile.c_d;
    if !(kappa_target > 0.0 && kappa_target < (c * big_c).powi(-4)) {
        return invalid(format!(
            "kappa must lie in (0, (cC)^-4) = (0, {:e})",
            (c * big_c).powi(-4)
        ));
    }
    let gap = region_gap(k, k_prime)?;
    if !(gap > 0.0) {
        return invalid("K' must be a neighbourhood of K");
    }
    // gamma: largest grid value satisfying the kappa inequality
    let n = opts.gamma_grid.max(1);
    let gamma = (1..=n)
        .rev()
        .map(|i| i as f64 / (n + 1) as f64)
        .find(|&g| kappa_target <= kz_gamma_bound(g, c, big_c))
        .ok_or_else(|| {
            Error::ScanExhausted("no gamma on the grid satisfies the kappa inequality".into())
        })?;
    // equilibrium measure of K
    let brownian = profile.alpha() == Some(2.0);
    let support = match (k, brownian) {
        (Region::Ball { center, radius }, true) => {
            Support::sphere_surface(center, *radius, opts.resolution)?
        }
        (Region::Ball { center, radius }, false) => {
            Support::solid_ball(center, *radius, opts.resolution)?
        }
        (Region::Box { lo, hi }, true) => Support::box_surface(lo, hi, opts.resolution)?,
        (Region::Box { lo, hi }, false) => Support::solid_box(lo, hi, opts.resolution)?,
    };
    let eq = equilibrium_solve(&support, profile, opts.solver)?;
    let mu_mass = eq.total_mass();
    // tau: minimum of G mu over K', conservatively lowered
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut probes = boundary_sample(k_prime, opts.tau_samples / 2, &mut rng);
    probes.extend((0..opts.tau_samples / 2).map(|_| sample_region(k_prime, &mut rng)));
    let gmin = probes
        .iter()
        .map(|x| eq.potential(x))
        .fold(f64::INFINITY, f64::min);
    let tau = gmin.min(1.0) - 3.0 * (1e-4 + eq.residual);
    if !(tau > 0.0) {
        return Err(Error::Violation(format!("tau = {tau:e} is not positive")));
    }
    let (a, a_stderr) = annulus_constant(profile, opts.a_samples, derive_seed(seed, 2))?;
    // R: both conditions of the Kato-type scan
    let h_threshold = a * gamma * tau * eta / mu_mass;
    let tau_prime = a * gamma * tau / (c * big_c.powi(3));
    let eps = gap / 3.0 * (1.0 - 1e-9);
    let h_ok =
        |r: f64| (0..=80).all(|j| phi.ln_h(profile, r.ln() - 0.25 * j as f64) <= h_threshold.ln());
    let mut local_mass_max = f64::NAN;
    let big_r = dyadic_scan(eps / 3.0, profile.r0(), ScanOptions { t_min: 1e-12 }, |r| {
        if !h_ok(r) {
            return false;
        }
        let lm = (0..eq.support.len())
            .map(|i| eq.local_mass_potential(i, r))
            .fold(0.0, f64::max);
        local_mass_max = lm;
        lm <= tau_prime
    })?;
    // delta: comparison of the kernel at nearby points outside B(x, R)
    let (_, krad) = region_parts(k_prime);
    let diam = 2.0 * krad;
    let delta_ok = |dl: f64| {
        (0..=200).all(|j| {
            let s = big_r * (diam / big_r).powf(j as f64 / 200.0);
            profile.g(s) <= big_c * profile.g(s + dl)
        })
    };
    let delta_sep = dyadic_scan(big_r, f64::INFINITY, ScanOptions { t_min: 1e-15 }, delta_ok)?;
    let beta = 0.5 * delta_sep.min(big_r).min(eta).min(profile.r0());
    // refined support, net and partition
    let project = match (k, brownian) {
        (Region::Ball { center, radius }, true) => Some((center.as_slice(), *radius)),
        _ => None,
    };
    let (pts, wts) = refine_measure(&eq, beta / 4.0, opts.refine_limit, project)?;
    let mut net = PointGrid::new(d, beta);
    for p in &pts {
        if !net.any_within(p, 2.0 * beta / 3.0, false) {
            net.insert(p);
        }
    }
    let mut masses = vec![0.0; net.len()];
    for (p, w) in pts.iter().zip(&wts) {
        let close = net.nearest_within(p, beta / 3.0);
        let j = match close {
            Some((j, t)) if t < beta / 3.0 => j,
            _ => {
                let mut first: Option<usize> = None;
                net.visit_rings(p, 1, |j, q| {
                    if dist(p, q) < beta && first.is_none_or(|f| j < f) {
                        first = Some(j);
                    }
                    true
                });
                first.ok_or_else(|| {
                    Error::CoverFailed("support point not within beta of the net".into())
                })?
            }
        };
        masses[j] += w;
    }
    let scale = 1.0 / (a * gamma * tau);
    let mut bubbles = Vec::with_capacity(net.len());
    let mut kept = Vec::with_capacity(net.len());
    let mut cap_inversion_error = 0.0f64;
    for (j, &m) in masses.iter().enumerate() {
        if m <= 0.0 {
            continue;
        }
        let target = m * scale;
        let r = profile.cap_inverse(target)?;
        if !(r < beta / 8.0) {
            return Err(Error::Violation(format!(
                "r_z = {r:e} is not below beta/8 = {:e}; the support is too coarse for this beta",
                beta / 8.0
            )));
        }
        cap_inversion_error = cap_inversion_error.max((profile.cap(r)? - target).abs() / target);
        bubbles.push(Bubble {
            center: net.point(j).to_vec(),
            radius: r,
            shell: 1,
        });
        kept.push(m);
    }
    if bubbles.iter().any(|b| {
        !k_prime.contains_closed(&b.center) || region_gap_ball(&b.center, b.radius, k_prime) < 0.0
    }) {
        return Err(Error::Violation("a bubble leaves K'".into()));
    }
    let budget = phi_sum(bubbles.iter(), phi);
    if !(budget < eta) {
        return Err(Error::Violation(format!(
            "budget {budget:e} not below eta {eta:e}"
        )));
    }
    let domain = match k_prime {
        Region::Ball { center, .. } | Region::Box { lo: center, .. } => {
            Domain::WholeSpace { d: center.len() }
        }
    };
    let count = bubbles.len();
    let config = BubbleConfig {
        d,
        bubbles,
        domain,
        profile: profile.clone(),
        phi_label: phi.label.clone(),
        budget,
        method: Method::KzCut,
        seed,
        shells: vec![ShellRecord {
            n: 1,
            level_radius: krad,
            eta: Some(eta),
            eps: beta,
            radius: None,
            count,
            budget,
        }],
    };
    config.validate()?;
    Ok(KzReport {
        config,
        kappa_target,
        gamma,
        c,
        big_c,
        a,
        a_stderr,
        tau,
        mu_mass,
        big_r,
        h_threshold,
        local_mass_max,
        tau_prime,
        delta_sep,
        beta,
        support_points: pts.len(),
        masses: kept,
        cap_inversion_error,
    })
}

fn region_gap_ball(z: &[f64], r: f64, outer: &Region) -> f64 {
    match outer {
        Region::Ball { center, radius } => radius - dist(z, center) - r,
        Region::Box { lo, hi } => z
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(c, (l, h))| (c - l).min(h - c) - r)
            .fold(f64::INFINITY, f64::min),
    }
}

/// Riesz shells around the origin: annuli `R_n <= |x| <= (1 + delta) R_n`
/// for `alpha <= 1`, spheres `|x| = R_n` otherwise. Each carries a net with
/// packing radius `beta_n` and covering radius below `4 beta_n`, where
/// `beta_n = (1/4) min(dist(B_n, B_{n-1} ∪ B_{n+1}), 1/n)`, and bubbles of
/// radius `beta_n`.
pub fn riesz_shell_config(
    profile: &CapacityProfile,
    radii: &[f64],
    delta_shell: f64,
    seed: u64,
) -> Result<BubbleConfig> {
    let alpha = match profile.kind {
        KernelKind::Riesz { alpha } => alpha,
        _ => {
            return Err(Error::Unsupported(
                "Riesz shells need a Riesz profile".into(),
            ))
        }
    };
    let d = profile.d;
    if d < 2 {
        return Err(Error::Unsupported("Riesz shells need d >= 2".into()));
    }
    if radii.is_empty() || radii.windows(2).any(|w| !(w[0] < w[1])) || !(radii[0] > 0.0) {
        return invalid("shell radii must be positive and increasing");
    }
    let solid = alpha <= 1.0;
    let width = if solid { delta_shell } else { 0.0 };
    if solid && !(delta_shell > 0.0) {
        return invalid("annular shells need delta_shell > 0");
    }
    let outer = |i: usize| radii[i] * (1.0 + width);
    for i in 1..radii.len() {
        if !(outer(i - 1) < radii[i]) {
            return Err(Error::Violation(format!(
                "shells {} and {} overlap",
                i,
                i + 1
            )));
        }
    }
    let mut bubbles = Vec::new();
    let mut shells = Vec::new();
    for (i, &rn) in radii.iter().enumerate() {
        let n = i + 1;
        let below = if i > 0 {
            rn - outer(i - 1)
        } else {
            f64::INFINITY
        };
        let above = if i + 1 < radii.len() {
            radii[i + 1] - outer(i)
        } else {
            f64::INFINITY
        };
        let gap = below.min(above);
        let beta = 0.25 * gap.min(1.0 / n as f64);
        let eps = 2.5 * beta;
        // concentric spheres at spacing between 2.25 beta and 4.5 beta
        let w = outer(i) - rn;
        let layers: Vec<f64> = if w < 2.25 * beta {
            vec![rn + 0.5 * w]
        } else {
            let m = (w / (2.25 * beta)).floor() as usize;
            (0..=m).map(|k| rn + w * k as f64 / m as f64).collect()
        };
        let mut count = 0;
        for (k, &rad) in layers.iter().enumerate() {
            let sphere = Ball::new(vec![0.0; d], rad, true)?;
            for z in boundary_net(
                &sphere,
                eps,
                derive_seed(seed, ((n as u64) << 32) | k as u64),
            )? {
                bubbles.push(Bubble {
                    center: z,
                    radius: beta,
                    shell: n,
                });
                count += 1;
            }
        }
        shells.push(ShellRecord {
            n,
            level_radius: rn,
            eta: None,
            eps,
            radius: Some(beta),
            count,
            budget: 0.0,
        });
    }
    let cap = MeasureFunction::cap(profile);
    for s in shells.iter_mut() {
        s.budget = phi_sum(bubbles.iter().filter(|b| b.shell == s.n), &cap);
    }
    let budget = shells.iter().map(|s| s.budget).sum();
    let cfg = BubbleConfig {
        d,
        bubbles,
        domain: Domain::WholeSpace { d },
        profile: profile.clone(),
        phi_label: cap.label.clone(),
        budget,
        method: Method::RieszShell,
        seed,
        shells,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// A configuration from explicit bubbles, validated like the generated ones.
pub fn listed_config(
    domain: &Domain,
    profile: &CapacityProfile,
    phi: &MeasureFunction,
    bubbles: Vec<Bubble>,
) -> Result<BubbleConfig> {
    let mut shells: Vec<ShellRecord> = Vec::new();
    for b in &bubbles {
        match shells.iter_mut().find(|s| s.n == b.shell) {
            Some(s) => {
                s.count += 1;
                s.level_radius = s.level_radius.max(norm(&b.center));
            }
            None => shells.push(ShellRecord {
                n: b.shell,
                level_radius: norm(&b.center),
                eta: None,
                eps: 0.0,
                radius: None,
                count: 1,
                budget: 0.0,
            }),
        }
    }
    shells.sort_by_key(|s| s.n);
    for s in shells.iter_mut() {
        s.budget = phi_sum(bubbles.iter().filter(|b| b.shell == s.n), phi);
    }
    let cfg = BubbleConfig {
        d: domain.dim(),
        budget: phi_sum(bubbles.iter(), phi),
        bubbles,
        domain: domain.clone(),
        profile: profile.clone(),
        phi_label: phi.label.clone(),
        method: Method::Listed,
        seed: 0,
        shells,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub sum: f64,
    /// `(shell, subtotal)` in shell order.
    pub per_shell: Vec<(usize, f64)>,
    /// Partial sums over shells of `sum_z g(|z|)/g(r_z)` for whole-space
    /// configurations; reported, never asserted.
    pub divergence_partial_sums: Option<Vec<f64>>,
}

/// Recompute `sum phi(r_z)` from the bubbles.
pub fn budget_check(config: &BubbleConfig, phi: &MeasureFunction) -> BudgetReport {
    let mut shells: Vec<usize> = config.bubbles.iter().map(|b| b.shell).collect();
    shells.sort_unstable();
    shells.dedup();
    let per_shell: Vec<(usize, f64)> = shells
        .iter()
        .map(|&n| {
            (
                n,
                phi_sum(config.bubbles.iter().filter(|b| b.shell == n), phi),
            )
        })
        .collect();
    let divergence_partial_sums = matches!(config.domain, Domain::WholeSpace { .. }).then(|| {
        let p = &config.profile;
        let mut acc = 0.0;
        shells
            .iter()
            .map(|&n| {
                acc += config
                    .bubbles
                    .iter()
                    .filter(|b| b.shell == n)
                    .map(|b| p.g(norm(&b.center)) / p.g(b.radius))
                    .sum::<f64>();
                acc
            })
            .collect()
    });
    BudgetReport {
        sum: phi_sum(config.bubbles.iter(), phi),
        per_shell,
        divergence_partial_sums,
    }
}

/// The set placed into every bubble, given inside the unit ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternBase {
    /// `B̄(0, beta)`.
    Ball { beta: f64 },
    /// Union of closed cubes; `ln_count` and `ln_a` describe the level.
    Cubes {
        cubes: Vec<crate::geometry::Cube>,
        ln_count: f64,
        ln_a: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub center: Point,
    pub scale: f64,
    pub bubble: usize,
}

/// Copies `z + r_z F` of a base set, one per bubble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSet {
    pub d: usize,
    pub base: PatternBase,
    pub placements: Vec<Placement>,
}

impl PatternBase {
    pub fn from_level(level: &CantorLevel) -> Result<Self> {
        let cubes = level
            .cubes
            .clone()
            .ok_or_else(|| Error::Unsupported("pattern needs an explicit Cantor level".into()))?;
        Ok(PatternBase::Cubes {
            cubes,
            ln_count: level.ln_count,
            ln_a: level.ln_a,
        })
    }

    fn inside_unit_ball(&self) -> bool {
        match self {
            PatternBase::Ball { beta } => *beta > 0.0 && *beta <= 1.0,
            PatternBase::Cubes { cubes, .. } => cubes
                .iter()
                .all(|q| q.vertices().iter().all(|v| norm(v) <= 1.0)),
        }
    }
}

/// Place `z + r_z F` into every bubble.
pub fn replace_with_pattern(config: &BubbleConfig, base: PatternBase) -> Result<PatternSet> {
    if !base.inside_unit_ball() {
        return invalid("the pattern must lie in the closed unit ball");
    }
    let placements = config
        .bubbles
        .iter()
        .enumerate()
        .map(|(i, b)| Placement {
            center: b.center.clone(),
            scale: b.radius,
            bubble: i,
        })
        .collect();
    Ok(PatternSet {
        d: config.d,
        base,
        placements,
    })
}

impl PatternSet {
    /// Every placed shape, in placement order.
    pub fn shapes(&self) -> Vec<Shape> {
        let mut out = Vec::new();
        for p in &self.placements {
            match &self.base {
                PatternBase::Ball { beta } => out.push(Shape::Ball {
                    center: p.center.clone(),
                    radius: beta * p.scale,
                }),
                PatternBase::Cubes { cubes, .. } => out.extend(cubes.iter().map(|q| {
                    Shape::Cube {
                        center: p
                            .center
                            .iter()
                            .zip(&q.center)
                            .map(|(z, c)| z + p.scale * c)
                            .collect(),
                        half: p.scale * q.half_side(),
                    }
                })),
            }
        }
        out
    }

    pub fn obstacles(&self) -> Result<Obstacles> {
        Obstacles::new(
            self.d,
            format!("pattern:{}", self.placements.len()),
            self.shapes(),
        )
    }

    /// Whether each placed copy lies in the closed ball of its bubble,
    /// checked on the vertices of every cube.
    pub fn check_containment(&self, config: &BubbleConfig) -> Result<()> {
        for p in &self.placements {
            let b = &config.bubbles[p.bubble];
            let tol = 1e-12 * b.radius.max(norm(&b.center));
            let ok = match &self.base {
                PatternBase::Ball { beta } => beta * p.scale <= b.radius,
                PatternBase::Cubes { cubes, .. } => cubes.iter().all(|q| {
                    q.vertices().iter().all(|v| {
                        let w: Vec<f64> = p
                            .center
                            .iter()
                            .zip(v)
                            .map(|(z, c)| z + p.scale * c)
                            .collect();
                        dist(&w, &b.center) <= b.radius + tol
                    })
                }),
            };
            if !ok {
                return Err(Error::Violation(format!(
                    "copy in bubble {} leaves its ball",
                    p.bubble
                )));
            }
        }
        Ok(())
    }

    /// Natural covering sum of the placed copies: every placed cube counts
    /// with `phi` of its scaled diameter, a placed ball with `phi` of its radius.
    pub fn covering_sum(&self, phi: &MeasureFunction) -> f64 {
        self.placements
            .iter()
            .map(|p| match &self.base {
                PatternBase::Ball { beta } => phi.ln_eval((beta * p.scale).ln()).exp(),
                PatternBase::Cubes { ln_count, ln_a, .. } => {
                    (ln_count + phi.ln_eval(p.scale.ln() + ln_a)).exp()
                }
            })
            .sum()
    }
}
