//! Closed-form exact solutions and fitting targets.
//!
//! Every solution evaluates over any [`Real`], so the same code yields plain
//! values on `f64` and directional second derivatives on [`Dual2`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Dual2, Real};

/// Multi-scale sine sum `sum_{j=0}^{jmax} sin(2^j pi x)`.
pub fn target_g1<R: Real>(x: R, jmax: u32) -> R {
    let mut s = R::cst(0.0);
    for j in 0..=jmax {
        s = s + (R::cst(2f64.powi(j as i32) * PI) * x).sin();
    }
    s
}

fn g1_d2(x: f64, jmax: u32) -> f64 {
    (0..=jmax)
        .map(|j| {
            let w = 2f64.powi(j as i32) * PI;
            -w * w * (w * x).sin()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Solution {
    /// `prod_i g(x_i)`; two-dimensional case is the basic fitting target.
    ProductG { jmax: u32 },
    /// `sum_{i=1}^{terms} g(x_i) g(x_{i+1}) g(x_{i+2})`.
    TripleG { jmax: u32, terms: usize },
    /// `sum_i g(x_i)`.
    AdditiveG { jmax: u32 },
    /// `sum_{i=1}^{terms} sin(w pi x_i) sin(w pi x_{i+1}) sin(w pi x_{i+2})`.
    TripleSin { freq: f64, terms: usize },
    /// `prod_i sin(pi x_i)`.
    ProductSinPi,
    /// `sin(w pi x_1) sin(w pi x_2)`.
    SinProduct2 { freq: f64 },
    /// `r^{2/3} sin(2 theta / 3) + x_2 cos(4 pi (x_1 + 2 x_2))` with `theta in [0, 2 pi)`.
    LShape,
    /// `sum_k sin(2 pi x_k) prod_{i != k} sin(pi x_i)`.
    TensorD2,
    /// `sum_{i=1}^{d-1} sin(16 pi x_i x_{i+1})`.
    NonTensorD3,
    /// `sum_i x_i^degree`; smooth target for convex sanity runs.
    PowerSum { degree: u32 },
}

/// Polar angle measured counterclockwise from the positive `x_1` axis, in `[0, 2 pi)`.
fn polar_angle<R: Real>(x1: R, x2: R) -> R {
    let t = x2.atan2(x1);
    if t.primal() < 0.0 {
        t + R::cst(2.0 * PI)
    } else {
        t
    }
}

/// Exact solution of the L-shaped corner-singularity problem.
pub fn lshape_solution(x1: f64, x2: f64) -> Result<f64> {
    let inside = (-1.0..=1.0).contains(&x1) && (-1.0..=1.0).contains(&x2) && !(x1 > 0.0 && x2 < 0.0);
    if !inside {
        return Err(Error::OutsideDomain(vec![x1, x2]));
    }
    Ok(lshape_value(x1, x2))
}

fn lshape_value<R: Real>(x1: R, x2: R) -> R {
    let r2 = x1 * x1 + x2 * x2;
    let singular = if r2.primal() == 0.0 {
        R::cst(0.0)
    } else {
        r2.powf(1.0 / 3.0) * (R::cst(2.0 / 3.0) * polar_angle(x1, x2)).sin()
    };
    singular + x2 * (R::cst(4.0 * PI) * (x1 + R::cst(2.0) * x2)).cos()
}

impl Solution {
    /// Smallest input dimension the formula needs.
    pub fn min_dim(&self) -> usize {
        match *self {
            Solution::TripleG { terms, .. } | Solution::TripleSin { terms, .. } => terms + 2,
            Solution::SinProduct2 { .. } | Solution::LShape | Solution::NonTensorD3 => 2,
            _ => 1,
        }
    }

    pub fn value<R: Real>(&self, x: &[R]) -> R {
        match *self {
            Solution::ProductG { jmax } => x.iter().fold(R::cst(1.0), |acc, &xi| acc * target_g1(xi, jmax)),
            Solution::TripleG { jmax, terms } => {
                let g: Vec<R> = x.iter().map(|&xi| target_g1(xi, jmax)).collect();
                (0..terms).fold(R::cst(0.0), |acc, i| acc + g[i] * g[i + 1] * g[i + 2])
            }
            Solution::AdditiveG { jmax } => x.iter().fold(R::cst(0.0), |acc, &xi| acc + target_g1(xi, jmax)),
            Solution::TripleSin { freq, terms } => {
                let s: Vec<R> = x.iter().map(|&xi| (R::cst(freq * PI) * xi).sin()).collect();
                (0..terms).fold(R::cst(0.0), |acc, i| acc + s[i] * s[i + 1] * s[i + 2])
            }
            Solution::ProductSinPi => x.iter().fold(R::cst(1.0), |acc, &xi| acc * (R::cst(PI) * xi).sin()),
            Solution::SinProduct2 { freq } => (R::cst(freq * PI) * x[0]).sin() * (R::cst(freq * PI) * x[1]).sin(),
            Solution::LShape => lshape_value(x[0], x[1]),
            Solution::TensorD2 => {
                let s: Vec<R> = x.iter().map(|&xi| (R::cst(PI) * xi).sin()).collect();
                let mut total = R::cst(0.0);
                for k in 0..x.len() {
                    let mut term = (R::cst(2.0 * PI) * x[k]).sin();
                    for (i, &si) in s.iter().enumerate() {
                        if i != k {
                            term = term * si;
                        }
                    }
                    total = total + term;
                }
                total
            }
            Solution::NonTensorD3 => (0..x.len() - 1)
                .fold(R::cst(0.0), |acc, i| acc + (R::cst(16.0 * PI) * x[i] * x[i + 1]).sin()),
            Solution::PowerSum { degree } => x.iter().fold(R::cst(0.0), |acc, &xi| {
                acc + (0..degree).fold(R::cst(1.0), |m, _| m * xi)
            }),
        }
    }

    /// Hand-derived Laplacian.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        match *self {
            Solution::ProductG { jmax } => {
                let g: Vec<f64> = x.iter().map(|&xi| target_g1(xi, jmax)).collect();
                (0..x.len())
                    .map(|k| {
                        let rest: f64 = g.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v).product();
                        g1_d2(x[k], jmax) * rest
                    })
                    .sum()
            }
            Solution::TripleG { jmax, terms } => {
                let g: Vec<f64> = x.iter().map(|&xi| target_g1(xi, jmax)).collect();
                let h: Vec<f64> = x.iter().map(|&xi| g1_d2(xi, jmax)).collect();
                (0..terms)
                    .map(|i| h[i] * g[i + 1] * g[i + 2] + g[i] * h[i + 1] * g[i + 2] + g[i] * g[i + 1] * h[i + 2])
                    .sum()
            }
            Solution::AdditiveG { jmax } => x.iter().map(|&xi| g1_d2(xi, jmax)).sum(),
            Solution::TripleSin { freq, .. } => {
                let w = freq * PI;
                -3.0 * w * w * self.value(x)
            }
            Solution::ProductSinPi => -(x.len() as f64) * PI * PI * self.value(x),
            Solution::SinProduct2 { freq } => {
                let w = freq * PI;
                -2.0 * w * w * self.value(x)
            }
            Solution::LShape => {
                // The singular part is harmonic away from the corner.
                let s = 4.0 * PI * (x[0] + 2.0 * x[1]);
                -80.0 * PI * PI * x[1] * s.cos() - 16.0 * PI * s.sin()
            }
            Solution::TensorD2 => -((x.len() + 3) as f64) * PI * PI * self.value(x),
            Solution::NonTensorD3 => {
                let c = 16.0 * PI;
                (0..x.len() - 1)
                    .map(|i| -c * c * (x[i] * x[i] + x[i + 1] * x[i + 1]) * (c * x[i] * x[i + 1]).sin())
                    .sum()
            }
            Solution::PowerSum { degree } => {
                let k = degree as f64;
                if degree < 2 {
                    0.0
                } else {
                    x.iter().map(|&xi| k * (k - 1.0) * xi.powi(degree as i32 - 2)).sum()
                }
            }
        }
    }

    /// Laplacian by propagating second-order jets through the closed form, one coordinate at a time.
    pub fn laplacian_autodiff(&self, x: &[f64]) -> f64 {
        let mut jets: Vec<Dual2<f64>> = x.iter().map(|&v| Dual2::constant(v)).collect();
        let mut total = 0.0;
        for k in 0..x.len() {
            jets[k] = Dual2::variable(x[k]);
            total += self.value(&jets).d2;
            jets[k] = Dual2::constant(x[k]);
        }
        total
    }
}
