//! Certified Cantor construction of a nonpolar compact set with vanishing
//! `phi`-measure.
//!
//! Level scalars (counts, diameters, radii) are carried as logarithms: after
//! two steps the kernel cubes are far below the f64 range. Levels are
//! materialised as explicit cube lists only while they are small; deeper
//! levels are regular lattices inside their parents and their potentials are
//! evaluated from a window of nearby cubes plus a continuum remainder, with
//! explicit error bounds.

use crate::equilibrium::{box_kernel_integral, cube_potential, DiscreteMeasure, RadialSingularity};
use crate::error::{Error, Result};
use crate::geometry::{cube_subdivide, dist, Cube, Point};
use crate::kernels::{CapacityProfile, KernelKind, MeasureFunction};
use crate::quad;
use crate::rng::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, LN_2, PI};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CantorOptions {
    /// Largest admissible subdivision count per axis; `None` for no cap.
    pub n_max: Option<f64>,
    /// Smallest `ln r` the scan may reach.
    pub ln_r_min: f64,
    /// Largest level that is stored as an explicit list of cubes.
    pub materialize_limit: u64,
    /// Safety margin on condition (i).
    pub margin: f64,
    /// Relative tolerance of cube potentials.
    pub quad_tol: f64,
    /// Neighbouring cubes examined by the sampled check of condition (i).
    pub neighbours: usize,
    /// Half-width, in lattice cells, of the explicit window around a sample.
    pub window: usize,
}

impl Default for CantorOptions {
    fn default() -> Self {
        Self {
            n_max: None,
            ln_r_min: -1e12,
            materialize_limit: 250_000,
            margin: 0.1,
            quad_tol: 1e-6,
            neighbours: 8,
            window: 6,
        }
    }
}

/// Constants of the construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CantorConstants {
    /// `sup G mu_{K_1}`.
    pub c1: f64,
    /// Comparison constant between `cap(a)` and `sup G mu_Q` for cubes of diameter `a`.
    pub c: f64,
    /// `max{3, (1 + 2 sqrt d)^{d - alpha}}`.
    pub big_c: f64,
    /// Potential of the unit-diameter cube at its center.
    pub v_unit: f64,
}

/// One step of the lattice hierarchy as needed by the potential evaluator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeStep {
    pub n: Option<u64>,
    pub ln_n: f64,
    pub ln_a: f64,
    pub ln_r: f64,
    pub ln_count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CantorLevel {
    pub m: usize,
    pub d: usize,
    pub ln_count: f64,
    pub count: Option<u64>,
    /// `ln` of the cube diameter `a`.
    pub ln_a: f64,
    pub consts: CantorConstants,
    pub cubes: Option<Vec<Cube>>,
    pub history: Vec<LatticeStep>,
}

impl CantorLevel {
    pub fn a(&self) -> f64 {
        self.ln_a.exp()
    }

    /// `2^{-(m-1)} c_1`, the bound on `(1/M) sup G mu_Q`.
    pub fn mass_bound(&self) -> f64 {
        2f64.powi(1 - self.m as i32) * self.consts.c1
    }

    /// Quadrature point cloud of `mu_m`: `q^d` Gauss nodes per cube.
    pub fn measure(&self, q: usize) -> Option<DiscreteMeasure> {
        let cubes = self.cubes.as_ref()?;
        let rule = quad::rule(q);
        let d = self.d;
        let mut points = Vec::with_capacity(cubes.len() * q.pow(d as u32));
        let mut weights = Vec::with_capacity(points.capacity());
        let m = cubes.len() as f64;
        for cube in cubes {
            let h = cube.half_side();
            let mut idx = vec![0usize; d];
            loop {
                let mut w = 1.0 / m;
                let p: Point = (0..d)
                    .map(|j| {
                        let (x, wj) = rule[idx[j]];
                        w *= 0.5 * wj;
                        cube.center[j] + h * x
                    })
                    .collect();
                points.push(p);
                weights.push(w);
                let mut j = 0;
                while j < d {
                    idx[j] += 1;
                    if idx[j] < q {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j == d {
                    break;
                }
            }
        }
        Some(DiscreteMeasure { points, weights })
    }

    /// `G mu_m(x)` from the explicit cube list: exact cube potentials near
    /// `x`, Gauss nodes farther away.
    pub fn explicit_potential(
        &self,
        profile: &CapacityProfile,
        x: &[f64],
        tol: f64,
    ) -> Result<f64> {
        let cubes = self
            .cubes
            .as_ref()
            .ok_or_else(|| Error::Unsupported("level is not materialised".into()))?;
        let rule = quad::rule(3);
        let d = self.d;
        let m = cubes.len() as f64;
        let mut sum = 0.0;
        for cube in cubes {
            let r = dist(x, &cube.center);
            if r < 4.0 * cube.a {
                sum += cube_potential(cube, profile, x, tol)?;
                continue;
            }
            let h = cube.half_side();
            let mut idx = vec![0usize; d];
            let mut acc = 0.0;
            loop {
                let mut w = 1.0;
                let mut s2 = 0.0;
                for j in 0..d {
                    let (t, wj) = rule[idx[j]];
                    w *= 0.5 * wj;
                    s2 += (cube.center[j] + h * t - x[j]).powi(2);
                }
                acc += w * profile.g(s2.sqrt());
                let mut j = 0;
                while j < d {
                    idx[j] += 1;
                    if idx[j] < 3 {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j == d {
                    break;
                }
            }
            sum += acc;
        }
        Ok(sum / m)
    }
}

fn unit_cube(d: usize) -> Cube {
    Cube {
        center: vec![0.0; d],
        a: 1.0,
    }
}

fn kernel_alpha(profile: &CapacityProfile) -> Result<f64> {
    match profile.kind {
        KernelKind::Classical | KernelKind::Logarithmic { .. } => Ok(2.0),
        KernelKind::Riesz { alpha } => Ok(alpha),
        KernelKind::Radial { .. } => Err(Error::Unsupported(
            "Cantor construction for tabulated kernels".into(),
        )),
    }
}

/// Compute `c_1`, `c` and `C` for the profile.
pub fn cantor_constants(profile: &CapacityProfile, tol: f64) -> Result<CantorConstants> {
    let d = profile.d;
    let alpha = kernel_alpha(profile)?;
    let unit = unit_cube(d);
    let center = vec![0.0; d];
    let v_unit = cube_potential(&unit, profile, &center, tol)?;
    // the sup of the potential of a cube is attained at its center; a
    // boundary and interior grid guards against surprises
    let mut v_max = v_unit;
    let h = unit.half_side();
    let k = 5usize;
    for idx in 0..k.pow(d as u32) {
        let mut t = idx;
        let x: Vec<f64> = (0..d)
            .map(|_| {
                let i = t % k;
                t /= k;
                -h + 2.0 * h * i as f64 / (k - 1) as f64
            })
            .collect();
        v_max = v_max.max(cube_potential(&unit, profile, &x, tol)?);
    }
    let k1 = Cube {
        center: center.clone(),
        a: 1.0 / E,
    };
    let c1 = cube_potential(&k1, profile, &center, tol)? * v_max / v_unit;
    let c = match profile.kind {
        KernelKind::Logarithmic { .. } => {
            // cap(a) sup G mu_{aK} = 1 + v/ln(1/a) over a = e^{-1}, e^{-2}, ...
            (1..=50)
                .map(|j| {
                    let ratio = 1.0 + v_max / j as f64;
                    ratio.max(1.0 / ratio)
                })
                .fold(1.0f64, f64::max)
        }
        _ => v_max.max(1.0 / v_max),
    };
    let big_c = 3f64.max((1.0 + 2.0 * (d as f64).sqrt()).powf(d as f64 - alpha));
    Ok(CantorConstants {
        c1,
        c,
        big_c,
        v_unit,
    })
}

/// First level: the cube `K_1` of diameter `1/e` centred at the origin.
pub fn init_level(profile: &CapacityProfile, opts: &CantorOptions) -> Result<CantorLevel> {
    let consts = cantor_constants(profile, opts.quad_tol)?;
    let d = profile.d;
    Ok(CantorLevel {
        m: 1,
        d,
        ln_count: 0.0,
        count: Some(1),
        ln_a: -1.0,
        consts,
        cubes: Some(vec![Cube {
            center: vec![0.0; d],
            a: 1.0 / E,
        }]),
        history: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMethod {
    /// Only one cube: nothing to compare.
    Vacuous,
    /// Midpoint-rule bound on `|G nu_j - G mu_{Q_j}|` at the minimal gap.
    Bound,
    /// Sampled maximum over grids in each cube and its nearest neighbours.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckI {
    pub method: CheckMethod,
    /// Observed maximum (sampled) or analytic bound.
    pub value: f64,
    /// Analytic bound, when finite.
    pub analytic: f64,
    /// `2^{-m} c_1`.
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckII {
    pub ln_h: f64,
    pub ln_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckIII {
    /// `ln(2 c^2 cap(a))`.
    pub ln_lower: f64,
    /// `ln(n^d cap(r))`.
    pub ln_value: f64,
    /// `ln(3 c^2 cap(a))`.
    pub ln_upper: f64,
    /// `ln(2r)`.
    pub ln_two_r: f64,
    /// `ln(a/n)`.
    pub ln_a_over_n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringBound {
    /// `ln(M n^d phi(r))`.
    pub ln_bound: f64,
    /// `1/m`.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCertificate {
    pub m: usize,
    pub d: usize,
    pub ln_count: f64,
    pub count: Option<u64>,
    pub ln_a: f64,
    pub c: f64,
    pub c1: f64,
    /// Exact subdivision count when it fits in 53 bits.
    pub n: Option<u64>,
    pub ln_n: f64,
    pub ln_r: f64,
    /// `r` itself; zero once it underflows.
    pub r: f64,
    pub check_i: CheckI,
    pub check_ii: CheckII,
    pub check_iii: CheckIII,
    pub covering: CoveringBound,
}

impl StepCertificate {
    /// Re-assert every recorded inequality from the stored numbers.
    pub fn reassert(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Violation(format!("step {}: {what}", self.m)));
        let i = &self.check_i;
        if i.method != CheckMethod::Vacuous && !(i.value < i.bound * (1.0 - i.margin)) {
            return fail("condition (i)");
        }
        if !(self.check_ii.ln_h < self.check_ii.ln_bound) {
            return fail("condition (ii)");
        }
        let t = &self.check_iii;
        if !(t.ln_lower < t.ln_value && t.ln_value < t.ln_upper) {
            return fail("condition (iii) capacity sandwich");
        }
        if !(t.ln_two_r < t.ln_a_over_n) {
            return fail("condition (iii) 2r < a/n");
        }
        if !(self.ln_r < -(self.m as f64).ln()) {
            return fail("r < 1/m");
        }
        if !(self.covering.ln_bound < self.covering.threshold.ln()) {
            return fail("covering bound");
        }
        Ok(())
    }

    /// Recompute (ii), (iii) and the covering bound from the profile and
    /// `phi`, and compare with the record.
    pub fn reevaluate(&self, profile: &CapacityProfile, phi: &MeasureFunction) -> Result<()> {
        let fresh = StepNumbers::new(
            profile,
            phi,
            self.m,
            self.ln_count,
            self.ln_a,
            self.c,
            self.ln_r,
            self.ln_n,
            self.d,
        );
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        let pairs = [
            (fresh.ii.ln_h, self.check_ii.ln_h),
            (fresh.ii.ln_bound, self.check_ii.ln_bound),
            (fresh.iii.ln_lower, self.check_iii.ln_lower),
            (fresh.iii.ln_value, self.check_iii.ln_value),
            (fresh.iii.ln_upper, self.check_iii.ln_upper),
            (fresh.covering.ln_bound, self.covering.ln_bound),
        ];
        if pairs.iter().all(|&(a, b)| close(a, b)) {
            self.reassert()
        } else {
            Err(Error::Violation(format!(
                "step {}: recomputed values differ from the record",
                self.m
            )))
        }
    }
}

struct StepNumbers {
    ii: CheckII,
    iii: CheckIII,
    covering: CoveringBound,
}

impl StepNumbers {
    #[allow(clippy::too_many_arguments)]
    fn new(
        profile: &CapacityProfile,
        phi: &MeasureFunction,
        m: usize,
        ln_count: f64,
        ln_a: f64,
        c: f64,
        ln_r: f64,
        ln_n: f64,
        d: usize,
    ) -> Self {
        let ln_cap_a = profile.ln_cap(ln_a);
        let ln_c2 = 2.0 * c.ln();
        let ln_cap_r = profile.ln_cap(ln_r);
        Self {
            ii: CheckII {
                ln_h: phi.ln_h(profile, ln_r),
                ln_bound: -((3.0 * m as f64).ln() + ln_count + ln_c2 + ln_cap_a),
            },
            iii: CheckIII {
                ln_lower: 2f64.ln() + ln_c2 + ln_cap_a,
                ln_value: d as f64 * ln_n + ln_cap_r,
                ln_upper: 3f64.ln() + ln_c2 + ln_cap_a,
                ln_two_r: LN_2 + ln_r,
                ln_a_over_n: ln_a - ln_n,
            },
            covering: CoveringBound {
                ln_bound: ln_count + d as f64 * ln_n + phi.ln_eval(ln_r),
                threshold: 1.0 / m as f64,
            },
        }
    }
}

const EXACT_N_LIMIT: f64 = 4.5e15;

/// Hessian-norm bound of the kernel at distance `t`, as a logarithm.
fn ln_hessian_bound(profile: &CapacityProfile, ln_t: f64) -> f64 {
    match profile.power_exponent() {
        Some(p) => (p * (p + 1.0)).ln() - (p + 2.0) * ln_t,
        None => -2.0 * ln_t,
    }
}

/// `ln(e^x - e^y)` for `x > y`.
fn ln_sub(x: f64, y: f64) -> f64 {
    x + (-(y - x).exp()).ln_1p()
}

/// `ln(e^x + e^y)`.
fn ln_add(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln` of the gap between distinct cubes of the level after `hist`.
fn ln_gap(hist: &[LatticeStep], d: usize) -> Option<f64> {
    let last = hist.last()?;
    let ln_s = last.ln_a - last.ln_n - 0.5 * (d as f64).ln();
    let ln_side = last.ln_r - 0.5 * (d as f64).ln();
    if ln_side >= ln_s {
        return None;
    }
    Some(ln_sub(ln_s, ln_side))
}

/// Analytic bound on `|G nu_j - G mu_{Q_j}|` on other cubes of the level:
/// midpoint rule on the child lattice plus child-cube averaging, evaluated
/// with the Hessian bound at the minimal gap.
fn ln_check_i_bound(level: &CantorLevel, profile: &CapacityProfile, ln_n: f64, ln_r: f64) -> f64 {
    let d = level.d as f64;
    let Some(ln_gap) = ln_gap(&level.history, level.d) else {
        return f64::INFINITY;
    };
    let ln_s = level.ln_a - ln_n - 0.5 * d.ln();
    let ln_pref = ln_add(d.ln() + 2.0 * ln_s, 2.0 * ln_r) - 24f64.ln();
    ln_pref + ln_hessian_bound(profile, ln_gap)
}

fn sampled_check_i(
    level: &CantorLevel,
    profile: &CapacityProfile,
    n: usize,
    r: f64,
    opts: &CantorOptions,
) -> Result<f64> {
    let cubes = level.cubes.as_ref().expect("explicit level");
    let d = level.d;
    let mut worst = 0.0f64;
    let k = 5usize;
    let children: Vec<Vec<Cube>> = cubes
        .iter()
        .map(|q| cube_subdivide(q, n, r))
        .collect::<Result<_>>()?;
    for (i, qi) in cubes.iter().enumerate() {
        let mut order: Vec<(f64, usize)> = cubes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, q)| (dist(&q.center, &qi.center), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let h = qi.half_side();
        let mut samples: Vec<Point> = (0..k.pow(d as u32))
            .map(|idx| {
                let mut t = idx;
                (0..d)
                    .map(|j| {
                        let ii = t % k;
                        t /= k;
                        qi.center[j] - h + 2.0 * h * ii as f64 / (k - 1) as f64
                    })
                    .collect()
            })
            .collect();
        samples.extend(qi.vertices());
        for &(_, j) in order.iter().take(opts.neighbours) {
            let qj = &cubes[j];
            for x in &samples {
                let mu = cube_potential(qj, profile, x, opts.quad_tol)?;
                let nu = children[j]
                    .iter()
                    .map(|q| {
                        if dist(&q.center, x) < 4.0 * q.a {
                            cube_potential(q, profile, x, opts.quad_tol)
                        } else {
                            Ok(profile.g(dist(&q.center, x)))
                        }
                    })
                    .sum::<Result<f64>>()?
                    / children[j].len() as f64;
                worst = worst.max((nu - mu).abs());
            }
        }
    }
    Ok(worst)
}

/// Choose `(n, r)` for the next step following the proof: the largest
/// dyadic `r < 1/m` with (ii), then the minimal `n` with the lower capacity
/// bound of (iii), then the remaining inequalities; smaller `r` is tried when
/// one of them fails.
pub fn select_step_params(
    level: &CantorLevel,
    phi: &MeasureFunction,
    profile: &CapacityProfile,
    opts: &CantorOptions,
) -> Result<StepCertificate> {
    let d = level.d;
    let df = d as f64;
    let m = level.m;
    let c = level.consts.c;
    let exhausted = |condition: &str, detail: String| Error::SearchExhausted {
        step: m,
        condition: condition.into(),
        detail,
    };
    let ln_c2 = 2.0 * c.ln();
    let ln_cap_a = profile.ln_cap(level.ln_a);
    let ln_bound_ii = -((3.0 * m as f64).ln() + level.ln_count + ln_c2 + ln_cap_a);
    let ln_start = (-(m as f64).ln()).min(level.ln_a - 2.0 * LN_2) - 1e-9;
    let holds_ii = |k: f64| phi.ln_h(profile, ln_start - k * LN_2) < ln_bound_ii;
    // exponential search for a dyadic exponent with (ii), then bisection
    let k_limit = (ln_start - opts.ln_r_min) / LN_2;
    let mut hi = 0.0f64;
    if !holds_ii(0.0) {
        let mut lo = 0.0f64;
        hi = 1.0;
        while !holds_ii(hi) {
            lo = hi;
            hi *= 2.0;
            if hi > k_limit {
                if holds_ii(k_limit.floor()) {
                    hi = k_limit.floor();
                    break;
                }
                return Err(exhausted(
                    "ii",
                    format!(
                        "h(r) stays above {:.3e} down to ln r = {:e}",
                        ln_bound_ii.exp(),
                        opts.ln_r_min
                    ),
                ));
            }
        }
        while hi - lo > 1.0 {
            let mid = (0.5 * (lo + hi)).floor();
            if holds_ii(mid) {
                hi = mid
            } else {
                lo = mid
            }
        }
    }
    let mut last_err = String::new();
    let mut k = hi;
    for _ in 0..400 {
        if k > k_limit {
            break;
        }
        let ln_r = ln_start - k * LN_2;
        k += 1.0;
        if !holds_ii(k - 1.0) {
            last_err = "(ii) lost at smaller r".into();
            continue;
        }
        let ln_cap_r = profile.ln_cap(ln_r);
        let ln_n_min = (LN_2 + ln_c2 + ln_cap_a - ln_cap_r) / df;
        let (n, ln_n) = if ln_n_min < EXACT_N_LIMIT.ln() {
            let mut n = ln_n_min.exp().floor().max(1.0) as u64;
            while df * (n as f64).ln() + ln_cap_r <= LN_2 + ln_c2 + ln_cap_a {
                n += 1;
            }
            (Some(n), (n as f64).ln())
        } else {
            // integers are dense at this scale: take n^d cap(r) = 2.4 c^2 cap(a)
            (None, ln_n_min + 1.2f64.ln() / df)
        };
        if let Some(n_max) = opts.n_max {
            if ln_n > n_max.ln() {
                return Err(exhausted(
                    "iii",
                    format!("n = {:.3e} exceeds n_max = {n_max}", ln_n.exp()),
                ));
            }
        }
        let nums = StepNumbers::new(
            profile,
            phi,
            m,
            level.ln_count,
            level.ln_a,
            c,
            ln_r,
            ln_n,
            d,
        );
        if !(nums.iii.ln_value < nums.iii.ln_upper) {
            last_err = "(iii) upper capacity bound".into();
            continue;
        }
        if !(nums.iii.ln_two_r < nums.iii.ln_a_over_n) {
            last_err = "(iii) 2r < a/n".into();
            continue;
        }
        // condition (i)
        let thr = 2f64.powi(-(m as i32)) * level.consts.c1;
        let check_i = if level.count == Some(1) {
            CheckI {
                method: CheckMethod::Vacuous,
                value: 0.0,
                analytic: 0.0,
                bound: thr,
                margin: opts.margin,
            }
        } else {
            let analytic = ln_check_i_bound(level, profile, ln_n, ln_r).exp();
            let explicit_ok = level.cubes.is_some()
                && n.is_some_and(|n| {
                    (level.count.unwrap_or(u64::MAX) as f64) * (n as f64).powi(d as i32)
                        <= opts.materialize_limit as f64
                });
            if explicit_ok {
                let v = sampled_check_i(level, profile, n.unwrap() as usize, ln_r.exp(), opts)?;
                CheckI {
                    method: CheckMethod::Sampled,
                    value: v,
                    analytic,
                    bound: thr,
                    margin: opts.margin,
                }
            } else {
                CheckI {
                    method: CheckMethod::Bound,
                    value: analytic,
                    analytic,
                    bound: thr,
                    margin: opts.margin,
                }
            }
        };
        if !(check_i.value < thr * (1.0 - opts.margin)) {
            last_err = format!(
                "(i) deviation {:.3e} not below {:.3e}",
                check_i.value,
                thr * (1.0 - opts.margin)
            );
            continue;
        }
        let cert = StepCertificate {
            m,
            d,
            ln_count: level.ln_count,
            count: level.count,
            ln_a: level.ln_a,
            c,
            c1: level.consts.c1,
            n,
            ln_n,
            ln_r,
            r: ln_r.exp(),
            check_i,
            check_ii: nums.ii,
            check_iii: nums.iii,
            covering: nums.covering,
        };
        cert.reassert()?;
        return Ok(cert);
    }
    Err(exhausted(
        "i/iii",
        format!("no admissible (n, r) found: last failure {last_err}"),
    ))
}

/// Next level: every cube replaced by the `n^d` kernel cubes of diameter `r`.
pub fn refine(
    level: &CantorLevel,
    cert: &StepCertificate,
    opts: &CantorOptions,
) -> Result<CantorLevel> {
    if cert.m != level.m || cert.ln_a != level.ln_a || cert.ln_count != level.ln_count {
        return Err(Error::InvalidArgument(
            "certificate does not belong to this level".into(),
        ));
    }
    let d = level.d;
    let ln_count = level.ln_count + d as f64 * cert.ln_n;
    let count = match (level.count, cert.n) {
        (Some(m), Some(n)) => n.checked_pow(d as u32).and_then(|nd| nd.checked_mul(m)),
        _ => None,
    };
    let r = cert.ln_r.exp();
    let cubes = match (&level.cubes, count, cert.n) {
        (Some(cubes), Some(total), Some(n)) if total <= opts.materialize_limit && r > 0.0 => {
            let mut out = Vec::with_capacity(total as usize);
            for q in cubes {
                out.extend(cube_subdivide(q, n as usize, r)?);
            }
            Some(out)
        }
        _ => None,
    };
    let mut history = level.history.clone();
    history.push(LatticeStep {
        n: cert.n,
        ln_n: cert.ln_n,
        ln_a: level.ln_a,
        ln_r: cert.ln_r,
        ln_count: level.ln_count,
    });
    Ok(CantorLevel {
        m: level.m + 1,
        d,
        ln_count,
        count,
        ln_a: cert.ln_r,
        consts: level.consts,
        cubes,
        history,
    })
}

/// `(m, M n^d phi(r), 1/m)` for each step, recomputed with `phi`.
pub fn covering_certificate(
    certs: &[StepCertificate],
    phi: &MeasureFunction,
) -> Result<Vec<(usize, f64, f64)>> {
    certs
        .iter()
        .map(|c| {
            let ln_b = c.ln_count + c.d as f64 * c.ln_n + phi.ln_eval(c.ln_r);
            let thr = 1.0 / c.m as f64;
            if !(ln_b < thr.ln()) {
                return Err(Error::Violation(format!(
                    "covering bound at step {} is not below 1/{}",
                    c.m, c.m
                )));
            }
            Ok((c.m, ln_b.exp(), thr))
        })
        .collect()
}

/// A complete run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CantorRun {
    pub profile: CapacityProfile,
    pub phi_label: String,
    pub consts: CantorConstants,
    pub certificates: Vec<StepCertificate>,
    pub levels: Vec<CantorLevel>,
}

impl CantorRun {
    pub fn last(&self) -> &CantorLevel {
        self.levels.last().expect("at least the first level")
    }
}

/// Run `steps` certified refinements.
pub fn run_cantor(
    profile: &CapacityProfile,
    phi: &MeasureFunction,
    steps: usize,
    opts: &CantorOptions,
) -> Result<CantorRun> {
    let mut level = init_level(profile, opts)?;
    let consts = level.consts;
    let mut levels = vec![level.clone()];
    let mut certificates = Vec::new();
    for _ in 0..steps {
        let cert = select_step_params(&level, phi, profile, opts)?;
        level = refine(&level, &cert, opts)?;
        certificates.push(cert);
        levels.push(level.clone());
    }
    Ok(CantorRun {
        profile: profile.clone(),
        phi_label: phi.label.clone(),
        consts,
        certificates,
        levels,
    })
}

/// A point near the final level, described scale by scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierPoint {
    /// Lattice index of the chosen child per step, when the count is exact.
    pub index: Vec<Option<Vec<u64>>>,
    /// Offset of the chosen child centre from its parent centre, in units
    /// of the parent diameter.
    pub w: Vec<Vec<f64>>,
    /// Offset of the point from the centre of its deepest cube, in units of
    /// that cube's diameter.
    pub local: Vec<f64>,
}

/// Potential evaluator for `mu_k` at hierarchically described points.
pub struct LatticePotential<'a> {
    pub profile: &'a CapacityProfile,
    pub kernel: RadialSingularity,
    pub level: &'a CantorLevel,
    pub tol: f64,
    pub window: usize,
}

/// One term of the telescoping sum `G mu_k = G mu_1 + sum (G mu_{j+1} - G mu_j)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub value: f64,
    pub error: f64,
}

impl LatticePotential<'_> {
    fn p(&self) -> f64 {
        self.profile.power_exponent().unwrap_or(0.0)
    }

    fn is_log(&self) -> bool {
        matches!(self.profile.kind, KernelKind::Logarithmic { .. })
    }

    /// Normalised cube potential `V(u)` of the unit-diameter cube.
    fn v(&self, u: &[f64]) -> Result<f64> {
        cube_potential(&unit_cube(self.level.d), self.profile, u, self.tol)
    }

    /// Draw a point inside (with probability 0.8) or near a random cube of
    /// level `depth + 1` (after `depth` steps).
    pub fn sample<R: Rng>(&self, depth: usize, rng: &mut R) -> HierPoint {
        let d = self.level.d;
        let half = 0.5 / (d as f64).sqrt();
        let mut index = Vec::new();
        let mut w = Vec::new();
        for st in &self.level.history[..depth] {
            match st.n {
                Some(n) => {
                    let i: Vec<u64> = (0..d).map(|_| rng.gen_range(0..n)).collect();
                    w.push(
                        i.iter()
                            .map(|&i| ((i as f64 + 0.5) / n as f64 - 0.5) * 2.0 * half)
                            .collect(),
                    );
                    index.push(Some(i));
                }
                None => {
                    // astronomically many children: the offset is continuous
                    w.push((0..d).map(|_| rng.gen_range(-half..half)).collect());
                    index.push(None);
                }
            }
        }
        let spread = if rng.gen_bool(0.8) { half } else { 3.0 * half };
        let local = (0..d).map(|_| rng.gen_range(-spread..spread)).collect();
        HierPoint { index, w, local }
    }

    /// Normalised offsets `p_k` of the point from the centre of its level-k
    /// ancestor, `k = 1..=depth+1`.
    fn offsets(&self, x: &HierPoint) -> Vec<Vec<f64>> {
        let depth = x.w.len();
        let mut out = vec![x.local.clone(); depth + 1];
        for k in (0..depth).rev() {
            let st = &self.level.history[k];
            let ratio = (st.ln_r - st.ln_a).exp();
            out[k] = x.w[k]
                .iter()
                .zip(&out[k + 1])
                .map(|(w, p)| w + ratio * p)
                .collect();
        }
        out
    }

    /// Terms `T_1, ..., T_{depth+1}` with `G mu_{k} (x) = T_1 + ... + T_k`.
    pub fn terms(&self, x: &HierPoint) -> Result<Vec<Term>> {
        let d = self.level.d;
        let df = d as f64;
        let p = self.p();
        let offs = self.offsets(x);
        let ln_a1 = -1.0;
        let v1 = self.v(&offs[0])?;
        let t1 = if self.is_log() {
            v1 - ln_a1
        } else {
            (-p * ln_a1).exp() * v1
        };
        let mut terms = vec![Term {
            value: t1,
            error: 1e-9 * t1.abs(),
        }];
        for (k, st) in self.level.history.iter().enumerate().take(x.w.len()) {
            let ln_s = st.ln_a - st.ln_n - 0.5 * df.ln();
            let ln_m_next = st.ln_count + df * st.ln_n;
            let rho = (st.ln_r - ln_s).exp();
            let pk = &offs[k + 1];
            let xr: Vec<f64> = pk.iter().map(|v| rho * v).collect();
            // window of lattice cells around the own child
            let l = self.window as i64;
            let (lo, hi): (Vec<i64>, Vec<i64>) = (0..d)
                .map(|j| match (&x.index[k], st.n) {
                    (Some(idx), Some(n)) => (
                        (-l).max(-(idx[j] as i64)),
                        l.min(n as i64 - 1 - idx[j] as i64),
                    ),
                    _ => (-l, l),
                })
                .unzip();
            let mut sum = 0.0;
            let mut point_err = 0.0;
            let mut j = lo.clone();
            loop {
                if j.iter().any(|&v| v != 0) {
                    let rel: Vec<f64> = xr.iter().zip(&j).map(|(x, &jj)| x - jj as f64).collect();
                    let r = crate::geometry::norm(&rel);
                    if r < 2.0 * rho {
                        let u: Vec<f64> = rel.iter().map(|v| v / rho).collect();
                        let v = self.v(&u)?;
                        sum += if self.is_log() {
                            v - rho.ln()
                        } else {
                            rho.powf(-p) * v
                        };
                    } else {
                        sum += if self.is_log() { -r.ln() } else { r.powf(-p) };
                        let h = if self.is_log() {
                            r.powi(-2)
                        } else {
                            p * (p + 1.0) * r.powf(-p - 2.0)
                        };
                        point_err += rho * rho / 24.0 * h;
                    }
                }
                let mut a = 0;
                while a < d {
                    j[a] += 1;
                    if j[a] <= hi[a] {
                        break;
                    }
                    j[a] = lo[a];
                    a += 1;
                }
                if a == d {
                    break;
                }
            }
            let wlo: Vec<f64> = lo.iter().map(|&v| v as f64 - 0.5).collect();
            let whi: Vec<f64> = hi.iter().map(|&v| v as f64 + 0.5).collect();
            let integral = box_kernel_integral(&wlo, &whi, &xr, self.kernel, 1e-10);
            let lambda = sum - integral;
            let own_v = self.v(pk)?;
            let (value, scale) = if self.is_log() {
                let f = (-ln_m_next).exp();
                (f * ((ln_s - st.ln_r) + own_v + lambda), f)
            } else {
                let own = (-ln_m_next - p * st.ln_r).exp() * own_v;
                let f = (-ln_m_next - p * ln_s).exp();
                (own + f * lambda, f)
            };
            // remainder of the own parent outside the window: distance in
            // cells to the nearest side that still has cells beyond it
            let n_cells = st.n.map(|n| n as i64);
            let mut l_min = i64::MAX;
            for q in 0..d {
                let (below, above) = match (&x.index[k], n_cells) {
                    (Some(idx), Some(n)) => (idx[q] as i64 > l, n - 1 - idx[q] as i64 > l),
                    _ => (true, true),
                };
                if below {
                    l_min = l_min.min(-lo[q]);
                }
                if above {
                    l_min = l_min.min(hi[q]);
                }
            }
            let mut err = scale * (point_err + 1e-7 * (sum.abs() + integral.abs()));
            if l_min != i64::MAX {
                let r1 = l_min as f64 + 0.5 - crate::geometry::norm(&xr);
                let r2 = r1 - df.sqrt();
                if r2 <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "lattice window too small for the remainder bound".into(),
                    ));
                }
                let omega = 2.0 * PI.powf(df / 2.0) / statrs::function::gamma::gamma(df / 2.0);
                let alpha = df - p;
                let hc = if self.is_log() { 1.0 } else { p * (p + 1.0) };
                let radial = if (2.0 - alpha).abs() < 1e-12 {
                    let extent = st.ln_n.exp() * df.sqrt();
                    (extent / r2).ln().max(0.0)
                } else {
                    r2.powf(alpha - 2.0) / (2.0 - alpha)
                };
                let e = hc * omega * (r1 / r2).powf(df - 1.0) * radial;
                err += scale * (1.0 + rho * rho) * df / 24.0 * e;
            }
            // other parents of the same level
            if k >= 1 {
                if let Some(lg) = ln_gap(&self.level.history[..k], d) {
                    let ln_pref = ln_add(df.ln() + 2.0 * ln_s, 2.0 * st.ln_r) - 24f64.ln();
                    err += (ln_pref + ln_hessian_bound(self.profile, lg)).exp();
                } else {
                    err = f64::INFINITY;
                }
            }
            terms.push(Term { value, error: err });
        }
        Ok(terms)
    }
}

/// One row of the growth check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRecord {
    pub m: usize,
    /// Largest sampled upper bound of `G mu_{m+1}`.
    pub lhs_max: f64,
    /// `G mu_m + (C + 1) 2^{-(m-1)} c_1` at the same point.
    pub rhs_at_max: f64,
    /// Largest `lhs - rhs` over the sample (upper bound).
    pub max_gap: f64,
    /// Largest sampled upper bound of `G mu_{m+1}`.
    pub sup_potential: f64,
    pub samples: usize,
}

/// Evaluate `G mu_{m+1} <= G mu_m + (C+1) 2^{-(m-1)} c_1` at random points in
/// and near `F_{m+1}` for every step of the run, and the bound
/// `sup G mu_m <= c_1 (2C + 3)`.
pub fn potential_growth_check(
    run: &CantorRun,
    samples: usize,
    seed: u64,
    opts: &CantorOptions,
) -> Result<Vec<GrowthRecord>> {
    let level = run.last();
    let kernel = RadialSingularity::of(&run.profile)
        .ok_or_else(|| Error::Unsupported("tabulated kernel".into()))?;
    let ev = LatticePotential {
        profile: &run.profile,
        kernel,
        level,
        tol: opts.quad_tol,
        window: opts.window,
    };
    let c1 = run.consts.c1;
    let big_c = run.consts.big_c;
    let mut out = Vec::new();
    for m in 1..=level.history.len() {
        let rows: Vec<Result<(f64, f64, f64)>> = {
            use rayon::prelude::*;
            (0..samples as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, (m as u64) << 32 | i));
                    let x = ev.sample(m, &mut rng);
                    let terms = ev.terms(&x)?;
                    let lower_m: f64 = terms[..m].iter().map(|t| t.value - t.error).sum();
                    let upper_m: f64 = terms[..m].iter().map(|t| t.value + t.error).sum();
                    let lhs = upper_m + terms[m].value + terms[m].error;
                    let rhs = lower_m + (big_c + 1.0) * 2f64.powi(1 - m as i32) * c1;
                    Ok((lhs, rhs, lhs - rhs))
                })
                .collect()
        };
        let mut rec = GrowthRecord {
            m,
            lhs_max: f64::NEG_INFINITY,
            rhs_at_max: f64::NAN,
            max_gap: f64::NEG_INFINITY,
            sup_potential: f64::NEG_INFINITY,
            samples,
        };
        for row in rows {
            let (lhs, rhs, gap) = row?;
            if gap > rec.max_gap {
                rec.max_gap = gap;
            }
            if lhs > rec.lhs_max {
                rec.lhs_max = lhs;
                rec.rhs_at_max = rhs;
            }
            rec.sup_potential = rec.sup_potential.max(lhs);
        }
        if rec.max_gap > 1e-2 * c1 {
            return Err(Error::Violation(format!(
                "potential growth at step {m}: gap {:.3e}",
                rec.max_gap
            )));
        }
        if rec.sup_potential > c1 * (2.0 * big_c + 3.0) * (1.0 + 1e-9) {
            return Err(Error::Violation(format!(
                "potential bound at step {m}: {:.3e}",
                rec.sup_potential
            )));
        }
        out.push(rec);
    }
    Ok(out)
}
