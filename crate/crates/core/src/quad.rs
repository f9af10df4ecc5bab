//! Gauss-Legendre rules and a few integrators built on them.

use crate::error::{Error, Result};
use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

const MAX_ORDER: usize = 48;

static RULES: OnceLock<Vec<Vec<(f64, f64)>>> = OnceLock::new();

/// Nodes and weights on [-1, 1] for `n` points, 1 <= n <= 48.
pub fn rule(n: usize) -> &'static [(f64, f64)] {
    let rules = RULES.get_or_init(|| {
        (0..=MAX_ORDER)
            .map(|k| match NonZeroUsize::new(k) {
                Some(k) => GaussLegendre::new(k).as_node_weight_pairs().to_vec(),
                None => Vec::new(),
            })
            .collect()
    });
    &rules[n.clamp(1, MAX_ORDER)]
}

/// Fixed-order rule on [a, b].
pub fn fixed<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = 0.5 * (b - a);
    let m = 0.5 * (b + a);
    rule(n).iter().map(|&(x, w)| w * f(m + h * x)).sum::<f64>() * h
}

/// Adaptive bisection comparing a 10-point rule with its two halves; stops
/// when they agree to `rel` relative or `abs` absolute accuracy.
pub fn adaptive<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    rel: f64,
    abs: f64,
    depth: u32,
) -> f64 {
    let whole = fixed(&mut *f, a, b, 10);
    let m = 0.5 * (a + b);
    let left = fixed(&mut *f, a, m, 10);
    let right = fixed(&mut *f, m, b, 10);
    let halves = left + right;
    if depth == 0 || (halves - whole).abs() <= abs.max(rel * halves.abs()) {
        return halves;
    }
    adaptive(f, a, m, rel, 0.5 * abs, depth - 1) + adaptive(f, m, b, rel, 0.5 * abs, depth - 1)
}

/// Integral of `f` over (0, r] for an integrand that may be singular at 0.
///
/// The interval is split into dyadic pieces `[r 2^{-k-1}, r 2^{-k}]`; the
/// series is summed until the pieces decay, with a geometric tail correction.
/// A series whose pieces do not decay is reported as divergent.
pub fn integrate_from_zero<F: FnMut(f64) -> f64>(mut f: F, r: f64, rel_tol: f64) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut prev: Option<f64> = None;
    let mut hi = r;
    for k in 0..1000 {
        let lo = 0.5 * hi;
        let piece = adaptive(&mut f, lo, hi, 1e-2 * rel_tol, 0.0, 12);
        if !piece.is_finite() {
            return Err(Error::Divergent);
        }
        sum += piece;
        if let Some(p) = prev {
            let q = if p != 0.0 { piece / p } else { 0.0 };
            if k >= 3 && (0.0..0.995).contains(&q) {
                let tail = piece * q / (1.0 - q);
                if tail.abs() <= rel_tol * sum.abs() {
                    return Ok(sum + tail);
                }
            }
            if piece == 0.0 && p == 0.0 {
                return Ok(sum);
            }
        }
        prev = Some(piece);
        hi = lo;
    }
    Err(Error::Divergent)
}
