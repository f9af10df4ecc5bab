//! Samplers for the isotropic alpha-stable process: exit positions from a
//! ball and exact time increments.

use crate::error::{invalid, Error, Result};
use crate::geometry::Point;
use crate::quad;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// Number of tabulated radii.
pub const TABLE_SIZE: usize = 1 << 12;
/// Largest tabulated exit radius; beyond it the tail is Pareto.
pub const TABLE_MAX_RADIUS: f64 = 1e6;
const MIN_EXCESS: f64 = 1e-10;

/// Radial law of the exit position of the process started at the centre of
/// the unit ball. The radius has density proportional to
/// `(rho^2 - 1)^{-alpha/2} / rho` on `(1, inf)`. In the variable
/// `v = (rho - 1)^{1 - alpha/2}` that density is smooth, so the cumulative
/// distribution is tabulated in `v` and interpolated by cubic Hermite
/// polynomials with the exact density as slope.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExitTable {
    pub d: usize,
    pub alpha: f64,
    /// `v` at the knots; the first knot is `rho = 1`.
    v: Vec<f64>,
    cdf: Vec<f64>,
    /// Density in `v` at the knots.
    slope: Vec<f64>,
    /// `P[R > TABLE_MAX_RADIUS]`.
    pub tail: f64,
    /// Largest deviation of the table from the regularized incomplete beta function.
    pub validation_error: f64,
}

impl ExitTable {
    pub fn new(d: usize, alpha: f64) -> Result<Self> {
        if d == 0 || !(alpha > 0.0 && alpha < 2.0 && alpha < d as f64) {
            return invalid(format!(
                "stable exit law needs 0 < alpha < min(d, 2), got alpha = {alpha}, d = {d}"
            ));
        }
        let k = 1.0 / (1.0 - 0.5 * alpha);
        let norm = 2.0 / statrs::function::beta::beta(0.5 * alpha, 1.0 - 0.5 * alpha);
        // rho = 1 + v^k, d rho = k v^{k-1} dv
        let density = |v: f64| {
            let w = v.powf(k);
            norm * k * (2.0 + w).powf(-0.5 * alpha) / (1.0 + w)
        };
        let (lo, hi) = (MIN_EXCESS.ln(), (TABLE_MAX_RADIUS - 1.0).ln());
        let mut v = Vec::with_capacity(TABLE_SIZE + 1);
        v.push(0.0);
        for i in 0..TABLE_SIZE {
            let e = (lo + (hi - lo) * i as f64 / (TABLE_SIZE - 1) as f64).exp();
            v.push(e.powf(1.0 / k));
        }
        let mut cdf = Vec::with_capacity(v.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in v.windows(2) {
            acc += quad::fixed(density, w[0], w[1], 16);
            // monotone repair
            let last = *cdf.last().unwrap();
            cdf.push(acc.max(last).min(1.0));
        }
        let slope = v.iter().map(|&x| density(x)).collect();
        let tail = 1.0 - *cdf.last().unwrap();
        let mut t = Self {
            d,
            alpha,
            v,
            cdf,
            slope,
            tail,
            validation_error: 0.0,
        };
        // check the interpolant between the knots, where it is least accurate
        let beta_cdf = |rho: f64| {
            1.0 - statrs::function::beta::beta_reg(
                0.5 * alpha,
                1.0 - 0.5 * alpha,
                1.0 / (rho * rho),
            )
        };
        let mut err = 0.0f64;
        for w in t.v.windows(2).step_by(3) {
            let rho = 1.0 + (0.5 * (w[0] + w[1])).powf(k);
            err = err.max((beta_cdf(rho) - t.cdf(rho)).abs());
        }
        if !(err < 1e-9) {
            return Err(Error::Tolerance(format!(
                "exit table deviates from the beta law by {err:e}"
            )));
        }
        t.validation_error = err;
        Ok(t)
    }

    fn hermite(&self, i: usize, vv: f64) -> f64 {
        let h = self.v[i + 1] - self.v[i];
        let t = (vv - self.v[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let f = (2.0 * t3 - 3.0 * t2 + 1.0) * self.cdf[i]
            + (t3 - 2.0 * t2 + t) * h * self.slope[i]
            + (-2.0 * t3 + 3.0 * t2) * self.cdf[i + 1]
            + (t3 - t2) * h * self.slope[i + 1];
        f.clamp(self.cdf[i], self.cdf[i + 1])
    }

    /// `P[R <= rho]` from the table.
    pub fn cdf(&self, rho: f64) -> f64 {
        if rho <= 1.0 {
            return 0.0;
        }
        let k = 1.0 / (1.0 - 0.5 * self.alpha);
        let vv = (rho - 1.0).powf(1.0 / k);
        let last = self.v.len() - 1;
        if vv >= self.v[last] {
            let tail = self.tail * (rho / TABLE_MAX_RADIUS).powf(-self.alpha);
            return 1.0 - tail;
        }
        let i = self.v.partition_point(|&x| x <= vv).clamp(1, last) - 1;
        self.hermite(i, vv)
    }

    /// Inverse of the tabulated distribution function.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = 1.0 / (1.0 - 0.5 * self.alpha);
        let top = *self.cdf.last().unwrap();
        if u >= top {
            let q = ((1.0 - u) / self.tail).max(f64::MIN_POSITIVE);
            return TABLE_MAX_RADIUS * q.powf(-1.0 / self.alpha);
        }
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .clamp(1, self.cdf.len() - 1)
            - 1;
        // bisection on the interpolant within the bracketing interval
        let (mut lo, mut hi) = (self.v[i], self.v[i + 1]);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.hermite(i, mid) < u {
                lo = mid
            } else {
                hi = mid
            }
        }
        1.0 + (0.5 * (lo + hi)).powf(k).max(f64::EPSILON)
    }
}

type TableCache = Mutex<HashMap<(usize, u64), Arc<ExitTable>>>;

static TABLES: OnceLock<TableCache> = OnceLock::new();

/// Cached exit table for `(d, alpha)`.
pub fn exit_table(d: usize, alpha: f64) -> Result<Arc<ExitTable>> {
    let cache = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (d, alpha.to_bits());
    if let Some(t) = cache.lock().expect("table cache").get(&key) {
        return Ok(t.clone());
    }
    let t = Arc::new(ExitTable::new(d, alpha)?);
    cache.lock().expect("table cache").insert(key, t.clone());
    Ok(t)
}

/// Uniform direction on the unit sphere.
pub fn random_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Point {
    loop {
        let v: Point = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Exit position from `B(0, 1)` of the process started at the origin.
pub fn stable_exit_sample<R: Rng + ?Sized>(table: &ExitTable, rng: &mut R) -> Point {
    let rho = table.quantile(rng.gen::<f64>());
    random_direction(table.d, rng)
        .into_iter()
        .map(|x| rho * x)
        .collect()
}

/// Positive stable variable with Laplace transform `exp(-s^beta)`, `0 < beta < 1`.
pub fn positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    let u: f64 = PI * rng.gen::<f64>();
    let e: f64 = Exp1.sample(rng);
    let u = u.max(1e-300);
    (beta * u).sin() / u.sin().powf(1.0 / beta) * ((1.0 - beta) * u).sin().powf((1.0 - beta) / beta)
        / e.powf((1.0 - beta) / beta)
}

/// Increment over time `dt` of the isotropic process with characteristic
/// exponent `|xi|^alpha`, drawn as a Gaussian subordinated by a positive
/// `alpha/2`-stable variable.
pub fn stable_increment<R: Rng + ?Sized>(d: usize, alpha: f64, dt: f64, rng: &mut R) -> Point {
    let a = positive_stable(0.5 * alpha, rng);
    let s = (2.0 * a).sqrt() * dt.powf(1.0 / alpha);
    (0..d)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            s * g
        })
        .collect()
}
