//! Covering sums, upper bounds on Hausdorff contents and dimension fits.

use crate::cantor::StepCertificate;
use crate::error::{invalid, Result};
use crate::geometry::Point;
use crate::kernels::MeasureFunction;
use serde::{Deserialize, Serialize};

/// A finite family of balls with radii below `rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cover {
    pub balls: Vec<(Point, f64)>,
    pub rho: f64,
}

impl Cover {
    pub fn new(balls: Vec<(Point, f64)>, rho: f64) -> Result<Self> {
        if let Some((_, r)) = balls.iter().find(|(_, r)| !(*r < rho && *r >= 0.0)) {
            return invalid(format!("cover radius {r} not below rho = {rho}"));
        }
        Ok(Self { balls, rho })
    }
}

/// `sum phi(r_n)` over the balls of the cover.
pub fn covering_sum(cover: &Cover, phi: &MeasureFunction) -> f64 {
    cover
        .balls
        .iter()
        .map(|(_, r)| if *r > 0.0 { phi.eval(*r) } else { 0.0 })
        .sum()
}

/// `ln` of the natural covering sum `count * phi(r)` of a level made of
/// `exp(ln_count)` cubes of diagonal `exp(ln_r)`.
pub fn ln_natural_sum(ln_count: f64, ln_r: f64, phi: &MeasureFunction) -> f64 {
    ln_count + phi.ln_eval(ln_r)
}

/// One point of a content profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentBound {
    pub m: usize,
    pub rho: f64,
    pub ln_bound: f64,
    pub bound: f64,
}

/// Upper bounds on `M_phi^(1/m)` of the limit set, one per certified step,
/// from the natural covers by the cubes of each level. Nothing is asserted:
/// with `phi = cap` the bounds stay of order `c^2 cap(a_m)`.
pub fn content_upper_profile(
    certs: &[StepCertificate],
    phi: &MeasureFunction,
) -> Vec<ContentBound> {
    certs
        .iter()
        .map(|c| {
            let ln_bound = ln_natural_sum(c.ln_count + c.d as f64 * c.ln_n, c.ln_r, phi);
            ContentBound {
                m: c.m,
                rho: 1.0 / c.m as f64,
                ln_bound,
                bound: ln_bound.exp(),
            }
        })
        .collect()
}

/// `(ln N_k, ln r_k)` of the levels produced by the certified steps.
pub fn level_scales(certs: &[StepCertificate]) -> Vec<(f64, f64)> {
    certs
        .iter()
        .map(|c| (c.ln_count + c.d as f64 * c.ln_n, c.ln_r))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub gamma: f64,
    /// No exponent of the grid passed the test; `gamma` is the largest one.
    pub saturated: bool,
    /// Box-counting slopes between consecutive levels.
    pub slopes: Vec<f64>,
}

/// Least `gamma` of the grid for which `N_k r_k^gamma` does not increase from
/// one level to the next. Needs at least three levels.
pub fn dim_upper_fit(levels: &[(f64, f64)], grid: &[f64]) -> Result<DimensionFit> {
    if levels.len() < 3 {
        return invalid(format!(
            "dimension fit needs at least 3 levels, got {}",
            levels.len()
        ));
    }
    if grid.is_empty() {
        return invalid("empty exponent grid");
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let slopes = levels
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) / (w[0].1 - w[1].1))
        .collect();
    let bounded = |g: f64| {
        let s: Vec<f64> = levels.iter().map(|(ln_n, ln_r)| ln_n + g * ln_r).collect();
        s.windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
    };
    match grid.iter().find(|&&g| bounded(g)) {
        Some(&gamma) => Ok(DimensionFit {
            gamma,
            saturated: false,
            slopes,
        }),
        None => Ok(DimensionFit {
            gamma: *grid.last().unwrap(),
            saturated: true,
            slopes,
        }),
    }
}

/// Logarithms of the natural covering sums for `phi = h^gamma`,
/// `h(t) = 1/ln(1/t)`, one row per level and one column per exponent.
pub fn log_dimension_sums(levels: &[(f64, f64)], grid: &[f64]) -> Vec<Vec<f64>> {
    levels
        .iter()
        .map(|&(ln_n, ln_r)| grid.iter().map(|g| ln_n - g * (-ln_r).ln()).collect())
        .collect()
}
