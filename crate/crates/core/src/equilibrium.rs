//! Discrete equilibrium measures, cube potentials and closed-form hitting
//! probabilities of balls.

use crate::error::{invalid, Error, Result};
use crate::geometry::{dist, norm, Cube, Point};
use crate::kernels::{CapacityProfile, KernelKind};
use crate::quad;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Finitely many weighted points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_j w_j G(x, p_j)` with point kernels.
    pub fn potential(&self, profile: &CapacityProfile, x: &[f64]) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * profile.g(dist(x, p)))
            .sum()
    }
}

/// Potential of a discrete measure.
pub fn potential_eval(measure: &DiscreteMeasure, profile: &CapacityProfile, x: &[f64]) -> f64 {
    measure.potential(profile, x)
}

/// A flat `k`-dimensional box `{c + sum t_i e_i : |t_i| <= half_i}` embedded
/// in `R^d`, with orthonormal `axes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub axes: Vec<Vec<f64>>,
    pub half: Vec<f64>,
}

impl Cell {
    pub fn measure(&self) -> f64 {
        self.half.iter().map(|h| 2.0 * h).product()
    }

    pub fn diam(&self) -> f64 {
        2.0 * norm(&self.half)
    }
}

const ADMISSIBLE: f64 = 0.5;

struct BoxIntegrand<'a> {
    tx: Vec<f64>,
    n2: f64,
    f: &'a dyn Fn(f64) -> f64,
    order: usize,
    floor: f64,
}

fn unit_sphere_area(k: usize) -> f64 {
    2.0 * PI.powf(k as f64 / 2.0) / statrs::function::gamma::gamma(k as f64 / 2.0)
}

impl BoxIntegrand<'_> {
    fn gauss(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let k = lo.len();
        let rule = quad::rule(self.order);
        let p = rule.len();
        let mut idx = vec![0usize; k];
        let mut sum = 0.0;
        let jac: f64 = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).product();
        loop {
            let mut w = 1.0;
            let mut r2 = self.n2;
            for j in 0..k {
                let (x, wj) = rule[idx[j]];
                let t = 0.5 * (lo[j] + hi[j]) + 0.5 * (hi[j] - lo[j]) * x;
                r2 += (t - self.tx[j]).powi(2);
                w *= wj;
            }
            sum += w * (self.f)(r2.sqrt());
            let mut j = 0;
            loop {
                if j == k {
                    return sum * jac;
                }
                idx[j] += 1;
                if idx[j] < p {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }

    /// Integral over a `k`-ball of the same volume centred at the projection of x.
    fn ball_equivalent(&self, vol: f64, k: usize) -> f64 {
        let om = unit_sphere_area(k);
        let rho = (vol * k as f64 / om).powf(1.0 / k as f64);
        let n2 = self.n2;
        quad::integrate_from_zero(
            |s| s.powi(k as i32 - 1) * (self.f)((s * s + n2).sqrt()),
            rho,
            1e-8,
        )
        .map(|v| om * v)
        .unwrap_or(f64::INFINITY)
    }

    fn rec(&self, lo: &[f64], hi: &[f64], depth: u32) -> f64 {
        let k = lo.len();
        let mut d2 = self.n2;
        let mut diam2 = 0.0;
        let mut inside = true;
        for j in 0..k {
            let t = self.tx[j];
            let e = (lo[j] - t).max(t - hi[j]).max(0.0);
            if e > 0.0 {
                inside = false;
            }
            d2 += e * e;
            diam2 += (hi[j] - lo[j]).powi(2);
        }
        if d2 > ADMISSIBLE * ADMISSIBLE * diam2 {
            return self.gauss(lo, hi);
        }
        let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
        if inside && self.n2 < 1e-6 * diam2 {
            // cheap size estimate of the singular piece; the accurate
            // ball-equivalent value is computed only once the piece is negligible
            let rho = 0.5 * diam2.sqrt();
            let cheap = vol * (self.f)(0.25 * rho).abs();
            if depth == 0 || cheap <= self.floor {
                return self.ball_equivalent(vol, k);
            }
        } else if depth == 0 {
            return self.gauss(lo, hi);
        }
        // split at the projection of x when it is well inside, else at the midpoint
        let split: Vec<f64> = (0..k)
            .map(|j| {
                let t = self.tx[j];
                let w = hi[j] - lo[j];
                if t > lo[j] + 0.25 * w && t < hi[j] - 0.25 * w {
                    t
                } else {
                    0.5 * (lo[j] + hi[j])
                }
            })
            .collect();
        if (0..k).any(|j| !(split[j] > lo[j] && split[j] < hi[j])) {
            // the box is down to rounding width
            return if inside {
                self.ball_equivalent(vol, k)
            } else {
                self.gauss(lo, hi)
            };
        }
        let mut sum = 0.0;
        let mut clo = vec![0.0; k];
        let mut chi = vec![0.0; k];
        for m in 0..1usize << k {
            for j in 0..k {
                if m >> j & 1 == 0 {
                    clo[j] = lo[j];
                    chi[j] = split[j];
                } else {
                    clo[j] = split[j];
                    chi[j] = hi[j];
                }
            }
            sum += self.rec(&clo, &chi, depth - 1);
        }
        sum
    }
}

/// `int_cell f(|x - y|) dy` over an embedded box cell centred at `center`.
pub fn cell_integral(
    center: &[f64],
    cell: &Cell,
    x: &[f64],
    f: &dyn Fn(f64) -> f64,
    order: usize,
    tol: f64,
) -> f64 {
    let diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
    let tx: Vec<f64> = cell
        .axes
        .iter()
        .map(|e| e.iter().zip(&diff).map(|(a, b)| a * b).sum())
        .collect();
    let n2 =
        (diff.iter().map(|v| v * v).sum::<f64>() - tx.iter().map(|v| v * v).sum::<f64>()).max(0.0);
    let lo: Vec<f64> = cell.half.iter().map(|h| -h).collect();
    let mut bi = BoxIntegrand {
        tx,
        n2,
        f,
        order,
        floor: 0.0,
    };
    let rough = bi.gauss(&lo, &cell.half);
    bi.floor = 1e-2 * tol * rough.abs();
    bi.rec(&lo, &cell.half, 200)
}

/// Radial profile with a closed-form radial integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadialSingularity {
    /// `s^{-p}` with `p < d`.
    Power(f64),
    /// `-ln s`.
    Log,
}

impl RadialSingularity {
    pub fn of(profile: &CapacityProfile) -> Option<Self> {
        match profile.kind {
            KernelKind::Logarithmic { .. } => Some(Self::Log),
            KernelKind::Classical | KernelKind::Riesz { .. } => {
                profile.power_exponent().map(Self::Power)
            }
            KernelKind::Radial { .. } => None,
        }
    }

    pub fn eval(self, s: f64) -> f64 {
        match self {
            Self::Power(p) => s.powf(-p),
            Self::Log => -s.ln(),
        }
    }
}

/// Integral over the face `[0, h_1] x ...` of `k(sqrt(acc2 + |b|^2))`. Each
/// axis is mapped by `b = c sinh u` with `c^2` the accumulated offset, which
/// removes the peak of width `c` at the origin.
fn face_integral(h: &[f64], acc2: f64, k: RadialSingularity, tol: f64) -> f64 {
    match h.split_first() {
        None => match k {
            RadialSingularity::Power(p) => acc2.powf(-0.5 * p),
            RadialSingularity::Log => -0.5 * acc2.ln(),
        },
        Some((&hj, rest)) => {
            let c = acc2.sqrt();
            if rest.is_empty() {
                // closed forms of the last axis
                match k {
                    RadialSingularity::Power(p) if p == 1.0 => return (hj / c).asinh(),
                    RadialSingularity::Log => {
                        let r = (acc2 + hj * hj).sqrt();
                        return hj - hj * r.ln() - c * (hj / c).atan();
                    }
                    _ => {}
                }
            }
            let top = (hj / c).asinh();
            let inner = 1e-2 * tol;
            let mut f = |u: f64| {
                let b = c * u.sinh();
                face_integral(rest, acc2 + b * b, k, inner) * c * u.cosh()
            };
            let scale = quad::fixed(|u| f(u).abs(), 0.0, top, 6);
            quad::adaptive(&mut f, 0.0, top, tol, 1e-2 * tol * scale, 30)
        }
    }
}

/// Integral over `[0, h_1] x ... x [0, h_d]` of `k(|y|)`: one pyramid per far
/// face with the radial factor done in closed form.
fn corner_box(h: &[f64], k: RadialSingularity, tol: f64) -> f64 {
    if h.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    let d = h.len() as f64;
    let mut sum = 0.0;
    let mut face = Vec::with_capacity(h.len());
    for i in 0..h.len() {
        face.clear();
        face.extend(
            h.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v),
        );
        let hi = h[i];
        sum += match k {
            RadialSingularity::Power(p) => hi * face_integral(&face, hi * hi, k, tol) / (d - p),
            RadialSingularity::Log => {
                let area: f64 = face.iter().product();
                hi * (face_integral(&face, hi * hi, k, tol) / d + area / (d * d))
            }
        };
    }
    sum
}

/// `int_{[lo, hi]} k(|x - y|) dy` for an axis-aligned box, as a signed sum
/// of corner boxes anchored at `x`. Accurate for `x` inside or near the box.
pub fn box_kernel_integral(
    lo: &[f64],
    hi: &[f64],
    x: &[f64],
    k: RadialSingularity,
    tol: f64,
) -> f64 {
    let d = x.len();
    let mut sum = 0.0;
    let mut h = vec![0.0; d];
    for mask in 0..(1usize << d) {
        let mut sign = 1.0;
        for j in 0..d {
            let (e, s) = if mask >> j & 1 == 0 {
                (hi[j], 1.0)
            } else {
                (lo[j], -1.0)
            };
            let len = e - x[j];
            sign *= s * len.signum();
            h[j] = len.abs();
        }
        sum += sign * corner_box(&h, k, tol);
    }
    sum
}

/// `int_cell G(x, y) dy` for the profile's kernel: corner boxes when `x`
/// lies in the affine hull of the cell and the kernel has a closed-form
/// radial part, recursive quadrature otherwise.
pub fn cell_kernel_integral(
    center: &[f64],
    cell: &Cell,
    x: &[f64],
    profile: &CapacityProfile,
    tol: f64,
) -> f64 {
    if let Some(k) = RadialSingularity::of(profile) {
        let dim = cell.axes.len();
        let integrable = match k {
            RadialSingularity::Power(p) => p < dim as f64,
            RadialSingularity::Log => true,
        };
        let diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
        let tx: Vec<f64> = cell
            .axes
            .iter()
            .map(|e| e.iter().zip(&diff).map(|(a, b)| a * b).sum())
            .collect();
        let n2 = (norm(&diff).powi(2) - tx.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        let inside = tx.iter().zip(&cell.half).all(|(t, h)| t.abs() <= 1.3 * h);
        if integrable && inside && n2 <= 1e-20 * cell.diam().powi(2) {
            let lo: Vec<f64> = cell.half.iter().map(|h| -h).collect();
            return box_kernel_integral(&lo, &cell.half, &tx, k, tol);
        }
    }
    cell_integral(center, cell, x, &|s| profile.g(s), 6, tol)
}

/// Average of `G(x, .)` over the cube, i.e. the potential of the normalised
/// Lebesgue measure of `Q` at `x`. Two quadrature orders must agree to `tol`.
pub fn cube_potential(q: &Cube, profile: &CapacityProfile, x: &[f64], tol: f64) -> Result<f64> {
    let d = q.dim();
    if x.len() != d || profile.d != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let eval = |center: &[f64], half: f64, x: &[f64], f: &dyn Fn(f64) -> f64| -> Result<f64> {
        let cell = Cell {
            axes: axes.clone(),
            half: vec![half; d],
        };
        let lo = if d >= 3 { 6 } else { 8 };
        let a = cell_integral(center, &cell, x, f, lo, tol) / cell.measure();
        let b = cell_integral(center, &cell, x, f, lo + 4, tol) / cell.measure();
        if (a - b).abs() > tol * b.abs().max(1e-300) {
            return Err(Error::Tolerance(format!(
                "cube potential orders disagree: {a} vs {b}"
            )));
        }
        Ok(b)
    };
    if let Some(k) = RadialSingularity::of(profile) {
        let u: Vec<f64> = x
            .iter()
            .zip(&q.center)
            .map(|(a, b)| (a - b) / q.a)
            .collect();
        let h = 0.5 / (d as f64).sqrt();
        let lo = vec![-h; d];
        let hi = vec![h; d];
        let outside: f64 = u
            .iter()
            .map(|&v| (v.abs() - h).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        if outside < 0.3 {
            let vol = (2.0 * h).powi(d as i32);
            let b = box_kernel_integral(&lo, &hi, &u, k, 1e-2 * tol) / vol;
            return Ok(match k {
                RadialSingularity::Power(e) => q.a.powf(-e) * b,
                RadialSingularity::Log => b - q.a.ln(),
            });
        }
    }
    match &profile.kind {
        KernelKind::Classical | KernelKind::Riesz { .. } => {
            // evaluate on the unit-diameter cube and rescale
            let e = profile.power_exponent().unwrap();
            let u: Vec<f64> = x
                .iter()
                .zip(&q.center)
                .map(|(a, b)| (a - b) / q.a)
                .collect();
            let h = 0.5 / (d as f64).sqrt();
            let v = eval(&vec![0.0; d], h, &u, &|s: f64| s.powf(-e))?;
            Ok(q.a.powf(-e) * v)
        }
        KernelKind::Logarithmic { .. } => {
            let u: Vec<f64> = x
                .iter()
                .zip(&q.center)
                .map(|(a, b)| (a - b) / q.a)
                .collect();
            let h = 0.5 / (d as f64).sqrt();
            let v = eval(&vec![0.0; d], h, &u, &|s: f64| -s.ln())?;
            Ok(v - q.a.ln())
        }
        KernelKind::Radial { .. } => eval(&q.center, q.half_side(), x, &|s: f64| profile.g(s)),
    }
}

/// Nodes of a discretised compact set with one cell per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub d: usize,
    pub points: Vec<Point>,
    pub cells: Vec<Cell>,
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
}

fn tangent_frame(n: &[f64]) -> (Vec<f64>, Vec<f64>) {
    // two orthonormal vectors perpendicular to the unit vector n in R^3
    let a = if n[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let mut t1 = vec![
        a[1] * n[2] - a[2] * n[1],
        a[2] * n[0] - a[0] * n[2],
        a[0] * n[1] - a[1] * n[0],
    ];
    let l = norm(&t1);
    t1.iter_mut().for_each(|v| *v /= l);
    let t2 = vec![
        n[1] * t1[2] - n[2] * t1[1],
        n[2] * t1[0] - n[0] * t1[2],
        n[0] * t1[1] - n[1] * t1[0],
    ];
    (t1, t2)
}

fn fibonacci(n: usize) -> Vec<[f64; 3]> {
    let ga = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let t = ga * i as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

impl Support {
    /// Boundary sphere of a ball: equal arcs in `d = 2`, a Fibonacci lattice
    /// with equal-area cells in `d = 3`.
    pub fn sphere_surface(center: &[f64], radius: f64, n: usize) -> Result<Self> {
        let d = center.len();
        if n < 4 || !(radius > 0.0) {
            return invalid("sphere support needs n >= 4 and a positive radius");
        }
        let mut points = Vec::with_capacity(n);
        let mut cells = Vec::with_capacity(n);
        match d {
            2 => {
                for i in 0..n {
                    let t = 2.0 * PI * (i as f64 + 0.5) / n as f64;
                    points.push(vec![
                        center[0] + radius * t.cos(),
                        center[1] + radius * t.sin(),
                    ]);
                    cells.push(Cell {
                        axes: vec![vec![-t.sin(), t.cos()]],
                        half: vec![PI * radius / n as f64],
                    });
                }
            }
            3 => {
                let s = (4.0 * PI * radius * radius / n as f64).sqrt();
                for u in fibonacci(n) {
                    points.push((0..3).map(|j| center[j] + radius * u[j]).collect());
                    let (t1, t2) = tangent_frame(&u);
                    cells.push(Cell {
                        axes: vec![t1, t2],
                        half: vec![0.5 * s; 2],
                    });
                }
            }
            _ => {
                return Err(Error::Unsupported(format!(
                    "sphere support in dimension {d}"
                )))
            }
        }
        Ok(Self { d, points, cells })
    }

    /// Solid ball in `d = 2` or `3`, with `rings` radial layers graded toward
    /// the boundary and roughly square cells.
    pub fn solid_ball(center: &[f64], radius: f64, rings: usize) -> Result<Self> {
        let d = center.len();
        if rings < 2 || !(radius > 0.0) {
            return invalid("solid ball support needs at least two rings and a positive radius");
        }
        let edge = |j: usize| radius * (1.0 - (1.0 - j as f64 / rings as f64).powf(1.5));
        let mut points = Vec::new();
        let mut cells = Vec::new();
        // central cell
        let r1 = edge(1);
        points.push(center.to_vec());
        let side = match d {
            2 => (PI * r1 * r1).sqrt(),
            3 => (4.0 / 3.0 * PI * r1.powi(3)).cbrt(),
            _ => {
                return Err(Error::Unsupported(format!(
                    "solid ball support in dimension {d}"
                )))
            }
        };
        cells.push(Cell {
            axes: (0..d).map(|i| unit(d, i)).collect(),
            half: vec![0.5 * side; d],
        });
        for j in 1..rings {
            let (a, b) = (edge(j), edge(j + 1));
            let rm = 0.5 * (a + b);
            let dr = b - a;
            match d {
                2 => {
                    let n = ((2.0 * PI * rm / dr).round() as usize).max(6);
                    for i in 0..n {
                        let t = 2.0 * PI * (i as f64 + 0.5 * (j % 2) as f64) / n as f64;
                        let (c, s) = (t.cos(), t.sin());
                        points.push(vec![center[0] + rm * c, center[1] + rm * s]);
                        cells.push(Cell {
                            axes: vec![vec![c, s], vec![-s, c]],
                            half: vec![0.5 * dr, PI * rm / n as f64],
                        });
                    }
                }
                _ => {
                    let n = ((4.0 * PI * rm * rm / (dr * dr)).round() as usize).max(12);
                    let vol = 4.0 / 3.0 * PI * (b.powi(3) - a.powi(3)) / n as f64;
                    let s = (vol / dr).sqrt();
                    for u in fibonacci(n) {
                        points.push((0..3).map(|k| center[k] + rm * u[k]).collect());
                        let (t1, t2) = tangent_frame(&u);
                        cells.push(Cell {
                            axes: vec![u.to_vec(), t1, t2],
                            half: vec![0.5 * dr, 0.5 * s, 0.5 * s],
                        });
                    }
                }
            }
        }
        Ok(Self { d, points, cells })
    }

    /// Uniform grid of `n` cells per axis on a solid box.
    pub fn solid_box(lo: &[f64], hi: &[f64], n: usize) -> Result<Self> {
        let d = lo.len();
        if n == 0 || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return invalid("solid box support needs lo < hi and n >= 1");
        }
        let total = n.pow(d as u32);
        let mut points = Vec::with_capacity(total);
        let mut cells = Vec::with_capacity(total);
        let half: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| 0.5 * (b - a) / n as f64)
            .collect();
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            points.push(
                (0..d)
                    .map(|j| lo[j] + (2 * idx[j] + 1) as f64 * half[j])
                    .collect(),
            );
            cells.push(Cell {
                axes: (0..d).map(|i| unit(d, i)).collect(),
                half: half.clone(),
            });
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] < n {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(Self { d, points, cells })
    }

    /// Faces of a box in `d = 3` (edges of a rectangle in `d = 2`), `n` cells
    /// per edge.
    pub fn box_surface(lo: &[f64], hi: &[f64], n: usize) -> Result<Self> {
        let d = lo.len();
        if n == 0
            || hi.len() != d
            || lo.iter().zip(hi).any(|(a, b)| !(a < b))
            || !(2..=3).contains(&d)
        {
            return invalid("box surface support needs d in {2, 3}, lo < hi and n >= 1");
        }
        let mut points = Vec::new();
        let mut cells = Vec::new();
        for fixed in 0..d {
            for side in [lo[fixed], hi[fixed]] {
                let free: Vec<usize> = (0..d).filter(|&j| j != fixed).collect();
                let half: Vec<f64> = free
                    .iter()
                    .map(|&j| 0.5 * (hi[j] - lo[j]) / n as f64)
                    .collect();
                let total = n.pow(free.len() as u32);
                let mut idx = vec![0usize; free.len()];
                for _ in 0..total {
                    let mut p = vec![0.0; d];
                    p[fixed] = side;
                    for (m, &j) in free.iter().enumerate() {
                        p[j] = lo[j] + (2 * idx[m] + 1) as f64 * half[m];
                    }
                    points.push(p);
                    cells.push(Cell {
                        axes: free.iter().map(|&j| unit(d, j)).collect(),
                        half: half.clone(),
                    });
                    for m in (0..free.len()).rev() {
                        idx[m] += 1;
                        if idx[m] < n {
                            break;
                        }
                        idx[m] = 0;
                    }
                }
            }
        }
        Ok(Self { d, points, cells })
    }

    pub fn union(mut self, other: Support) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        self.points.extend(other.points);
        self.cells.extend(other.cells);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Ridge added to the diagonal.
    pub reg: f64,
    /// Target max-norm residual of `G mu - 1` on the nodes.
    pub tol: f64,
    /// Residual above which the solve is reported as failed.
    pub fail_above: f64,
    pub max_iter: usize,
    /// Cells closer than this many diameters use cell-averaged kernels.
    pub near_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            reg: 0.0,
            tol: 0.01,
            fail_above: 0.05,
            max_iter: 10_000,
            near_factor: 2.0,
        }
    }
}

/// Equilibrium measure carried by cells with piecewise constant density.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Equilibrium {
    pub profile: CapacityProfile,
    pub support: Support,
    pub measure: DiscreteMeasure,
    pub residual: f64,
    pub iterations: usize,
    pub near_factor: f64,
}

fn kernel_fn(profile: &CapacityProfile) -> impl Fn(f64) -> f64 + '_ {
    move |s| profile.g(s)
}

impl Equilibrium {
    pub fn total_mass(&self) -> f64 {
        self.measure.total_mass()
    }

    /// Potential with cell-averaged kernels near each node, point kernels far away.
    pub fn potential(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for ((p, c), w) in self
            .support
            .points
            .iter()
            .zip(&self.support.cells)
            .zip(&self.measure.weights)
        {
            if *w == 0.0 {
                continue;
            }
            let r = dist(x, p);
            if r < self.near_factor * c.diam() {
                v += w * cell_kernel_integral(p, c, x, &self.profile, 1e-4) / c.measure();
            } else {
                v += w * self.profile.g(r);
            }
        }
        v
    }

    /// `G(1_{B(x_i, R)} mu)(x_i)` at the node `i`, with the own cell smeared.
    pub fn local_mass_potential(&self, i: usize, radius: f64) -> f64 {
        let f = kernel_fn(&self.profile);
        let x = &self.support.points[i];
        let mut v = 0.0;
        for (j, (p, c)) in self
            .support
            .points
            .iter()
            .zip(&self.support.cells)
            .enumerate()
        {
            let w = self.measure.weights[j];
            let r = dist(x, p);
            if w == 0.0 || (j != i && r >= radius) {
                continue;
            }
            if j == i || r < self.near_factor * c.diam() {
                // the part of the cell inside the ball is what counts
                let g = |s: f64| if s < radius { f(s) } else { 0.0 };
                v += w * cell_integral(p, c, x, &g, 6, 1e-4) / c.measure();
            } else {
                v += w * self.profile.g(r);
            }
        }
        v
    }
}

/// Solve `G mu = 1` on the support nodes for a nonnegative measure.
///
/// The collocation matrix uses cell averages of the kernel for nearby cells
/// (including the diagonal) and point kernels otherwise. A direct solve is
/// followed, if some weight came out negative, by projected Gauss-Seidel
/// sweeps from the clipped solution.
pub fn equilibrium_solve(
    support: &Support,
    profile: &CapacityProfile,
    opts: SolverOptions,
) -> Result<Equilibrium> {
    let n = support.len();
    if n == 0 {
        return invalid("empty support");
    }
    if support.d != profile.d {
        return Err(Error::DimensionMismatch {
            expected: profile.d,
            got: support.d,
        });
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let (pj, cj) = (&support.points[j], &support.cells[j]);
        let near = opts.near_factor * cj.diam();
        let inv = 1.0 / cj.measure();
        for i in 0..n {
            let r = dist(&support.points[i], pj);
            a[(i, j)] = if i == j || r < near {
                let v = cell_kernel_integral(pj, cj, &support.points[i], profile, 1e-4) * inv;
                if !v.is_finite() {
                    return Err(Error::Divergent);
                }
                v
            } else {
                profile.g(r)
            };
        }
        a[(j, j)] += opts.reg;
    }
    let ones = DVector::from_element(n, 1.0);
    let mut w = a.clone().lu().solve(&ones).ok_or(Error::SolverFailed {
        residual: f64::INFINITY,
        threshold: opts.fail_above,
    })?;
    let residual_of = |w: &DVector<f64>| (&a * w - &ones).amax();
    let mut iterations = 1;
    if w.iter().any(|&v| v < 0.0) {
        w.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut aw = &a * &w;
        while iterations < opts.max_iter && residual_of(&w) > opts.tol {
            for i in 0..n {
                let new = (w[i] + (1.0 - aw[i]) / a[(i, i)]).max(0.0);
                let delta = new - w[i];
                if delta != 0.0 {
                    w[i] = new;
                    aw.axpy(delta, &a.column(i), 1.0);
                }
            }
            iterations += 1;
        }
    }
    let residual = residual_of(&w);
    if !(residual <= opts.fail_above) {
        return Err(Error::SolverFailed {
            residual,
            threshold: opts.fail_above,
        });
    }
    Ok(Equilibrium {
        profile: profile.clone(),
        support: support.clone(),
        measure: DiscreteMeasure {
            points: support.points.clone(),
            weights: w.iter().copied().collect(),
        },
        residual,
        iterations,
        near_factor: opts.near_factor,
    })
}

/// Probability that the process started at distance `t` from the centre hits
/// the closed ball of radius `s`, before leaving the concentric ball of radius
/// `outer` when one is given.
pub fn radial_hitting_closed_form(
    profile: &CapacityProfile,
    s: f64,
    outer: Option<f64>,
    t: f64,
) -> Result<f64> {
    if !(s > 0.0) || !(t >= 0.0) {
        return invalid("radii must be positive");
    }
    if t <= s {
        return Ok(1.0);
    }
    if let Some(r) = outer {
        if !(r > s) || t >= r {
            return invalid("need s < t < outer");
        }
    }
    match (&profile.kind, outer) {
        (KernelKind::Classical, None) => Ok((s / t).powf(profile.d as f64 - 2.0)),
        (KernelKind::Classical, Some(r)) => {
            let e = 2.0 - profile.d as f64;
            Ok((t.powf(e) - r.powf(e)) / (s.powf(e) - r.powf(e)))
        }
        (KernelKind::Logarithmic { .. }, Some(r)) => Ok((r / t).ln() / (r / s).ln()),
        (KernelKind::Riesz { alpha }, None) => {
            let a = 0.5 * (profile.d as f64 - alpha);
            Ok(statrs::function::beta::beta_reg(
                a,
                0.5 * alpha,
                (s / t).powi(2),
            ))
        }
        _ => Err(Error::Unsupported(
            "no closed form for this kernel and domain".into(),
        )),
    }
}
