//! Radial Green kernels, capacity profiles and measure functions.

use crate::error::{invalid, Error, Result};
use crate::quad;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Tabulated radial kernel `g`, interpolated linearly in log-log coordinates
/// and extended beyond the knots with the end slopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTable {
    pub r: Vec<f64>,
    pub g: Vec<f64>,
}

impl RadialTable {
    pub fn new(r: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if r.len() < 2 || r.len() != g.len() {
            return invalid("radial table needs at least two knots of matching length");
        }
        if r.windows(2).any(|w| !(w[0] < w[1])) || r[0] <= 0.0 {
            return invalid("radial table radii must be positive and increasing");
        }
        if g.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return invalid("radial table values must be positive and finite");
        }
        Ok(Self { r, g })
    }

    fn ln_g(&self, ln_s: f64) -> f64 {
        let n = self.r.len();
        let lr = |i: usize| self.r[i].ln();
        let lg = |i: usize| self.g[i].ln();
        let seg = if ln_s <= lr(0) {
            0
        } else if ln_s >= lr(n - 1) {
            n - 2
        } else {
            self.r
                .partition_point(|&x| x.ln() <= ln_s)
                .saturating_sub(1)
                .min(n - 2)
        };
        let t = (ln_s - lr(seg)) / (lr(seg + 1) - lr(seg));
        lg(seg) + t * (lg(seg + 1) - lg(seg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Classical,
    Logarithmic { eta: f64 },
    Riesz { alpha: f64 },
    Radial { table: RadialTable },
}

/// A radial kernel `G(x, y) = g(|x - y|)` together with `cap(r) = 1/g(r)` and
/// the constants attached to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityProfile {
    pub kind: KernelKind,
    pub d: usize,
    /// Comparison constant between `cap` and the kernel on balls.
    pub c: f64,
    /// Integrability constant `C_G`.
    pub c_g: f64,
    /// Doubling constant `C_D`.
    pub c_d: f64,
    /// Largest admissible radius; `None` means unbounded.
    pub r0: Option<f64>,
}

impl CapacityProfile {
    /// Newtonian kernel `|x|^{2-d}` for `d >= 3`.
    pub fn classical(d: usize) -> Result<Self> {
        if d < 3 {
            return invalid("classical kernel requires d >= 3");
        }
        Ok(Self {
            kind: KernelKind::Classical,
            d,
            c: 1.0,
            c_g: d as f64 / 2.0,
            c_d: 2f64.powi(d as i32 - 2),
            r0: None,
        })
    }

    /// Planar logarithmic kernel `ln(1/|x|)`, restricted to radii where the
    /// constants are within `1 + eta` of one.
    pub fn logarithmic(eta: f64, r0: Option<f64>) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return invalid("logarithmic eta must lie in (0, 1)");
        }
        let cap_r0 = (-1.0 / eta).exp();
        let r0 = r0.map_or(cap_r0, |r| r.min(cap_r0));
        if !(r0 > 0.0) {
            return invalid("logarithmic r0 must be positive");
        }
        Ok(Self {
            kind: KernelKind::Logarithmic { eta },
            d: 2,
            c: 1.0 + eta,
            c_g: 1.0 + eta / 2.0,
            c_d: 1.0 + eta,
            r0: Some(r0),
        })
    }

    /// Riesz kernel `|x|^{alpha-d}` with `0 < alpha < min(d, 2)`.
    pub fn riesz(d: usize, alpha: f64) -> Result<Self> {
        if d == 0 || !(alpha > 0.0 && alpha < (d as f64).min(2.0)) {
            return invalid("riesz kernel requires 0 < alpha < min(d, 2)");
        }
        let e = d as f64 - alpha;
        Ok(Self {
            kind: KernelKind::Riesz { alpha },
            d,
            c: 1.0,
            c_g: d as f64 / alpha,
            c_d: 2f64.powf(e),
            r0: None,
        })
    }

    /// Tabulated kernel; the constants are computed numerically on the knots.
    pub fn radial(d: usize, table: RadialTable, r0: Option<f64>) -> Result<Self> {
        if d == 0 {
            return invalid("dimension must be positive");
        }
        let mut p = Self {
            kind: KernelKind::Radial { table },
            d,
            c: 1.0,
            c_g: f64::NAN,
            c_d: f64::NAN,
            r0,
        };
        let grid = default_grid(&p);
        p.c_g = validate_decay(&p, &grid)?;
        p.c_d = doubling_constant(&p, &grid)?;
        Ok(p)
    }

    pub fn r0(&self) -> f64 {
        self.r0.unwrap_or(f64::INFINITY)
    }

    /// Stability index of the associated process (2 for Brownian motion).
    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            KernelKind::Classical | KernelKind::Logarithmic { .. } => Some(2.0),
            KernelKind::Riesz { alpha } => Some(alpha),
            KernelKind::Radial { .. } => None,
        }
    }

    /// `d - alpha` for the power kernels.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.kind {
            KernelKind::Classical => Some(self.d as f64 - 2.0),
            KernelKind::Riesz { alpha } => Some(self.d as f64 - alpha),
            _ => None,
        }
    }

    /// Kernel as a function of the distance; `+inf` at zero.
    pub fn g(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return f64::INFINITY;
        }
        match &self.kind {
            KernelKind::Classical => s.powi(2 - self.d as i32),
            KernelKind::Riesz { alpha } => s.powf(alpha - self.d as f64),
            KernelKind::Logarithmic { .. } => -s.ln(),
            KernelKind::Radial { table } => table.ln_g(s.ln()).exp(),
        }
    }

    /// `ln cap(r)` as a function of `ln r`; usable far below the f64 range of
    /// `r` itself. Returns NaN outside the domain of the logarithmic kernel.
    pub fn ln_cap(&self, ln_r: f64) -> f64 {
        match &self.kind {
            KernelKind::Classical => (self.d as f64 - 2.0) * ln_r,
            KernelKind::Riesz { alpha } => (self.d as f64 - alpha) * ln_r,
            KernelKind::Logarithmic { .. } => {
                if ln_r < 0.0 {
                    -(-ln_r).ln()
                } else {
                    f64::NAN
                }
            }
            KernelKind::Radial { table } => -table.ln_g(ln_r),
        }
    }

    /// `cap(r) = 1/g(r)` for `0 < r <= r0`.
    pub fn cap(&self, r: f64) -> Result<f64> {
        let r0 = self.r0();
        if !(r > 0.0) || r > r0 * (1.0 + 1e-12) || r.is_nan() {
            return Err(Error::OutOfRange { r, r0 });
        }
        if let KernelKind::Logarithmic { .. } = self.kind {
            if r >= 1.0 {
                return Err(Error::OutOfRange { r, r0: r0.min(1.0) });
            }
        }
        Ok(1.0 / self.g(r))
    }

    /// Inverse of `cap` on `(0, r0]`.
    pub fn cap_inverse(&self, v: f64) -> Result<f64> {
        if !(v > 0.0) {
            return invalid("capacity value must be positive");
        }
        let r = match &self.kind {
            KernelKind::Classical | KernelKind::Riesz { .. } => {
                v.powf(1.0 / self.power_exponent().unwrap())
            }
            KernelKind::Logarithmic { .. } => (-1.0 / v).exp(),
            KernelKind::Radial { .. } => {
                // cap is increasing; bisect in log radius
                let target = v.ln();
                let (mut lo, mut hi) = (-700.0f64, self.r0().min(1e300).ln());
                if self.ln_cap(hi) < target {
                    return Err(Error::OutOfRange {
                        r: f64::INFINITY,
                        r0: self.r0(),
                    });
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.ln_cap(mid) < target {
                        lo = mid
                    } else {
                        hi = mid
                    }
                }
                hi.exp()
            }
        };
        if r > self.r0() {
            return Err(Error::OutOfRange { r, r0: self.r0() });
        }
        Ok(r)
    }

    /// `G(x, y)`; `+inf` on the diagonal.
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        for p in [x, y] {
            if p.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: p.len(),
                });
            }
        }
        Ok(self.g(crate::geometry::dist(x, y)))
    }
}

/// Evaluate `cap(r)`.
pub fn cap_eval(profile: &CapacityProfile, r: f64) -> Result<f64> {
    profile.cap(r)
}

/// Evaluate `G(x, y)`.
pub fn kernel_eval(profile: &CapacityProfile, x: &[f64], y: &[f64]) -> Result<f64> {
    profile.kernel(x, y)
}

/// 64 log-spaced radii up to `min(r0, 1)` spanning six decades.
pub fn default_grid(profile: &CapacityProfile) -> Vec<f64> {
    let top = profile.r0().min(1.0) * (1.0 - 1e-9);
    let top = if let KernelKind::Logarithmic { .. } = profile.kind {
        top.min(0.5)
    } else {
        top
    };
    (0..64)
        .map(|i| top * 10f64.powf(-6.0 * i as f64 / 63.0))
        .collect()
}

/// `sup_r d/(r^d g(r)) int_0^r s^{d-1} g(s) ds` over the grid, i.e. the
/// constant `C_G` in the integrability bound. Fails if the integral diverges.
pub fn validate_decay(profile: &CapacityProfile, grid: &[f64]) -> Result<f64> {
    let d = profile.d as f64;
    let mut sup = 0.0f64;
    for &r in grid {
        if !(r > 0.0) || r > profile.r0() {
            return Err(Error::OutOfRange {
                r,
                r0: profile.r0(),
            });
        }
        // integrate in the scaled variable u = s/r to keep magnitudes tame
        let gr = profile.g(r);
        let int =
            quad::integrate_from_zero(|u| u.powf(d - 1.0) * profile.g(u * r) / gr, 1.0, 1e-10)?;
        sup = sup.max(d * int);
    }
    Ok(sup)
}

/// `sup_r cap(r)/cap(r/2)` over the grid.
pub fn doubling_constant(profile: &CapacityProfile, grid: &[f64]) -> Result<f64> {
    let mut sup = 0.0f64;
    for &r in grid {
        sup = sup.max(profile.cap(r)? / profile.cap(0.5 * r)?);
    }
    Ok(sup)
}

/// Options for the dyadic scans.
#[derive(Clone, Copy, Debug)]
pub struct ScanOptions {
    pub t_min: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { t_min: 1e-12 }
    }
}

/// Largest `t = t_max 2^{-k}` (capped at `r0`) with `pred(t)`, scanning down to `t_min`.
pub fn dyadic_scan(
    t_max: f64,
    r0: f64,
    opts: ScanOptions,
    mut pred: impl FnMut(f64) -> bool,
) -> Result<f64> {
    let mut t = t_max.min(r0);
    if !(t > 0.0) {
        return invalid("scan start must be positive");
    }
    while t >= opts.t_min {
        if pred(t) {
            return Ok(t);
        }
        t *= 0.5;
    }
    Err(Error::ScanExhausted(format!(
        "no admissible scale down to t_min = {:e}",
        opts.t_min
    )))
}

/// Largest dyadic `t <= min(t_max, r0)` with `h(t) = phi(t)/cap(t) < eta`.
pub fn h_scan(
    phi: &MeasureFunction,
    profile: &CapacityProfile,
    eta: f64,
    t_max: f64,
    opts: ScanOptions,
) -> Result<f64> {
    if !(eta > 0.0) {
        return invalid("eta must be positive");
    }
    dyadic_scan(t_max, profile.r0(), opts, |t| {
        phi.ln_h(profile, t.ln()) < eta.ln()
    })
}

type LnFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A measure function `phi`, stored through `ln phi` as a function of `ln t`
/// so that it can be evaluated at scales below the f64 range.
#[derive(Clone)]
pub struct MeasureFunction {
    pub label: String,
    ln_phi: LnFn,
}

impl fmt::Debug for MeasureFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MeasureFunction({})", self.label)
    }
}

impl MeasureFunction {
    /// From `ln phi` as a function of `ln t`.
    pub fn from_ln(
        label: impl Into<String>,
        ln_phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            ln_phi: Arc::new(ln_phi),
        }
    }

    /// From `phi` itself; only usable where `t` is representable.
    pub fn from_fn(
        label: impl Into<String>,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::from_ln(label, move |lt| phi(lt.exp()).ln())
    }

    /// `t^gamma`.
    pub fn power(gamma: f64) -> Self {
        Self::from_ln(format!("t^{gamma}"), move |lt| gamma * lt)
    }

    /// `cap(t)`.
    pub fn cap(profile: &CapacityProfile) -> Self {
        let p = profile.clone();
        Self::from_ln("cap(t)", move |lt| ln_cap_or_inf(&p, lt))
    }

    /// `cap(t) / log(1/t)`, so that `h(t) = 1/log(1/t)`.
    pub fn cap_over_log(profile: &CapacityProfile) -> Self {
        let p = profile.clone();
        Self::from_ln("cap(t)/log(1/t)", move |lt| {
            if lt >= 0.0 {
                return f64::INFINITY;
            }
            ln_cap_or_inf(&p, lt) - (-lt).ln()
        })
    }

    /// `cap(t) t^eps`, so that `h(t) = t^eps`.
    pub fn cap_times_power(profile: &CapacityProfile, eps: f64) -> Self {
        let p = profile.clone();
        Self::from_ln(format!("cap(t)*t^{eps}"), move |lt| {
            ln_cap_or_inf(&p, lt) + eps * lt
        })
    }

    pub fn ln_eval(&self, ln_t: f64) -> f64 {
        (self.ln_phi)(ln_t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        self.ln_eval(t.ln()).exp()
    }

    /// `ln h(t) = ln phi(t) - ln cap(t)`.
    pub fn ln_h(&self, profile: &CapacityProfile, ln_t: f64) -> f64 {
        self.ln_eval(ln_t) - ln_cap_or_inf(profile, ln_t)
    }

    pub fn h(&self, profile: &CapacityProfile, t: f64) -> f64 {
        self.ln_h(profile, t.ln()).exp()
    }
}

fn ln_cap_or_inf(p: &CapacityProfile, lt: f64) -> f64 {
    let v = p.ln_cap(lt);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}
