//! Constructive approximants behind the K-HOrderDNN rate results: clipped
//! polynomial inner functions, univariate outer functions, the composite
//! `K_{p,n}` model (closed form and as a network), parameter counts and
//! empirical convergence-rate studies.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::diagnostics::{fit_rate, fmt_float, median};
use crate::diffengine::{Activation, DenseLayer, Layer, Stack};
use crate::error::{invalid, Error, Result};
use crate::models::{Architecture, Model, ModelParams, ModelSpec};
use crate::problems::Problem;
use crate::scalar::Scalar;
use crate::training::{train, TrainConfig, TrainError};

fn relu(t: f64) -> f64 {
    t.max(0.0)
}

/// Error-free sum: `s + e == a + b` exactly, with `s = fl(a + b)`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `1 - ReLU(1 - ReLU(t))`, which is the clamp of `t` to `[0, 1]`.
///
/// The inner `1 - r` is carried as an unevaluated pair so the outer
/// subtraction recovers `r` without rounding; a plain evaluation loses the low
/// bits of small `r`.
pub fn clip_relu(t: f64) -> f64 {
    let r = relu(t);
    let (s, e) = two_sum(1.0, -r);
    // sign(s + e) == sign(s), so the outer ReLU only has to look at `s`.
    let (s, e) = if s > 0.0 { (s, e) } else { (0.0, 0.0) };
    (1.0 - s) - e
}

/// Smooth clip `w tanh((t + delta) / (w (1 + 2 delta)))`.
pub fn clip_tanh(t: f64, w: f64, delta: f64) -> f64 {
    w * ((t + delta) / (w * (1.0 + 2.0 * delta))).tanh()
}

/// `1 - w tanh(1/w)`; decreasing in `w` towards zero.
pub fn tanh_clip_gap(w: f64) -> f64 {
    1.0 - w * (1.0 / w).tanh()
}

/// Candidate widths for [`default_w`]: `2^(k/16)` for `k = 0..=320`.
pub fn w_grid() -> impl Iterator<Item = f64> {
    (0..=320).map(|k| 2f64.powf(k as f64 / 16.0))
}

/// Smallest grid width with `1 - w tanh(1/w) <= delta`.
pub fn default_w(delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(invalid(format!("clip margin must be positive, got {delta}")));
    }
    w_grid()
        .find(|&w| tanh_clip_gap(w) <= delta)
        .ok_or_else(|| invalid(format!("clip margin {delta} is below the width grid's reach")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Clip {
    Relu,
    Tanh { w: f64, delta: f64 },
}

impl Clip {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Clip::Relu => clip_relu(t),
            Clip::Tanh { w, delta } => clip_tanh(t, w, delta),
        }
    }
}

/// The `2d+1` clipped polynomials `clip(sum_j a_{j,q} psi_j(x))` sharing one
/// GLL Lagrange basis on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ClippedPolynomial {
    basis: BasisSet<f64>,
    /// Row `q` holds `a_{1,q}, ..., a_{p+1,q}`.
    coeffs: Vec<f64>,
    count: usize,
    clip: Clip,
}

impl ClippedPolynomial {
    pub fn new(p: usize, count: usize, coeffs: Vec<f64>, clip: Clip) -> Result<Self> {
        let basis = BasisSet::gll(p, 0.0, 1.0)?;
        if coeffs.len() != count * (p + 1) {
            return Err(Error::Dimension { context: "polynomial coefficients", expected: count * (p + 1), found: coeffs.len() });
        }
        Ok(Self { basis, coeffs, count, clip })
    }

    /// Interpolates `phi(q, .)` at the GLL nodes, one polynomial per `q < count`.
    pub fn interpolate(p: usize, count: usize, clip: Clip, phi: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let basis = BasisSet::gll(p, 0.0, 1.0)?;
        let coeffs = (0..count).flat_map(|q| basis.nodes().iter().map(|&x| phi(q, x)).collect::<Vec<_>>()).collect();
        Ok(Self { basis, coeffs, count, clip })
    }

    pub fn order(&self) -> usize {
        self.basis.order()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn clip(&self) -> Clip {
        self.clip
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Unclipped values `L_q(x)` for every `q`.
    pub fn raw(&self, x: f64) -> Vec<f64> {
        let psi = self.basis.eval(x);
        self.coeffs.chunks_exact(psi.len()).map(|row| row.iter().zip(&psi).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.raw(x).into_iter().map(|v| self.clip.apply(v)).collect()
    }
}

/// Piecewise-linear interpolant on `[0, d]` in ReLU form:
/// `offset + slope relu(z) + sum_k weights[k] relu(z - knots[k])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineOuter {
    pub interval: (f64, f64),
    pub offset: f64,
    /// Slope of the first segment (the unit anchored at 0).
    pub slope: f64,
    pub knots: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SplineOuter {
    pub fn eval(&self, z: f64) -> f64 {
        self.knots
            .iter()
            .zip(&self.weights)
            .fold(self.offset + self.slope * relu(z), |acc, (k, w)| acc + w * relu(z - k))
    }

    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }
}

/// Interpolates `g` at `n + 2` equispaced nodes of `[0, d]`: `n` interior
/// knots split the interval into `n + 1` segments.
pub fn build_spline_interpolant(g: impl Fn(f64) -> f64, d: f64, n: usize) -> Result<SplineOuter> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(invalid(format!("spline interval length must be positive, got {d}")));
    }
    let h = d / (n + 1) as f64;
    let nodes: Vec<f64> = (0..=n + 1).map(|k| if k == n + 1 { d } else { k as f64 * h }).collect();
    let values: Vec<f64> = nodes.iter().map(|&z| g(z)).collect();
    let slopes: Vec<f64> = (0..=n).map(|k| (values[k + 1] - values[k]) / (nodes[k + 1] - nodes[k])).collect();
    Ok(SplineOuter {
        interval: (0.0, d),
        offset: values[0],
        slope: slopes[0],
        knots: nodes[1..=n].to_vec(),
        weights: slopes.windows(2).map(|s| s[1] - s[0]).collect(),
    })
}

/// Univariate tanh network `1 -> N-1 -> 6N -> 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TanhOuter {
    pub n: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `6N x (N-1)`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

impl TanhOuter {
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("tanh outer network needs N >= 2, got {n}")));
        }
        let (h1, h2) = (n - 1, 6 * n);
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        Ok(Self { n, w1: draw(h1), b1: draw(h1), w2: draw(h2 * h1), b2: draw(h2), w3: draw(h2), b3: draw(1)[0] })
    }

    pub fn eval(&self, z: f64) -> f64 {
        let a: Vec<f64> = self.w1.iter().zip(&self.b1).map(|(w, b)| (w * z + b).tanh()).collect();
        self.w2
            .chunks_exact(a.len())
            .zip(&self.b2)
            .zip(&self.w3)
            .fold(self.b3, |acc, ((row, b), w)| acc + w * (row.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() + b).tanh())
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outer {
    Spline(SplineOuter),
    Tanh(TanhOuter),
}

impl Outer {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Outer::Spline(s) => s.eval(z),
            Outer::Tanh(t) => t.eval(z),
        }
    }
}

/// `sum_q outer(sum_i lambda_i inner_q(x_i))` over `q = 0..2d`.
#[derive(Clone, Debug)]
pub struct KpnModel {
    d: usize,
    inner: ClippedPolynomial,
    lambda: Vec<f64>,
    outer: Outer,
}

impl KpnModel {
    pub fn new(d: usize, inner: ClippedPolynomial, lambda: Vec<f64>, outer: Outer) -> Result<Self> {
        if d == 0 {
            return Err(invalid("K_{p,n} model needs d >= 1"));
        }
        if inner.count() != 2 * d + 1 {
            return Err(Error::Dimension { context: "inner functions", expected: 2 * d + 1, found: inner.count() });
        }
        if lambda.len() != d {
            return Err(Error::Dimension { context: "lambda weights", expected: d, found: lambda.len() });
        }
        match (&outer, inner.clip()) {
            (Outer::Spline(_), Clip::Relu) | (Outer::Tanh(_), Clip::Tanh { .. }) => {}
            _ => return Err(invalid("ReLU clipping pairs with a spline outer function, tanh clipping with a tanh one")),
        }
        Ok(Self { d, inner, lambda, outer })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn inner(&self) -> &ClippedPolynomial {
        &self.inner
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn outer(&self) -> &Outer {
        &self.outer
    }

    /// The `2d+1` arguments `z_q` of the outer function.
    pub fn arguments(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; 2 * self.d + 1];
        for (&xi, &li) in x.iter().zip(&self.lambda) {
            for (zq, v) in z.iter_mut().zip(self.inner.eval(xi)) {
                *zq += li * v;
            }
        }
        z
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::Dimension { context: "K_{p,n} input", expected: self.d, found: x.len() });
        }
        Ok(self.arguments(x).into_iter().map(|z| self.outer.eval(z)).sum())
    }

    /// Scalars that make up the model: coefficients, `lambda` and the outer
    /// function (for a spline this includes its offset and anchor slope).
    pub fn param_count(&self) -> usize {
        let outer = match &self.outer {
            Outer::Spline(s) => 2 * s.n_knots() + 2,
            Outer::Tanh(t) => t.param_count(),
        };
        self.inner.coeffs().len() + self.lambda.len() + outer
    }

    /// The same function as a K-HOrderDNN with fixed weights.
    ///
    /// ReLU: `hd = 2, hw = 2d+1` realize `1 - relu(1 - relu(L_q))`; one outer
    /// layer holds a unit `relu(z_q - z_k)` per polynomial and spline knot
    /// (the anchor at 0 included). Tanh: `hd = 1` realizes the smooth clip and
    /// two outer layers hold one copy of the tanh network per polynomial,
    /// zero-padded to width `(2d+1) 6N`.
    pub fn to_network(&self) -> Result<Model<f64>> {
        let (d, m) = (self.d, 2 * self.d + 1);
        let p = self.inner.order();
        let np = p + 1;
        let coeffs = self.inner.coeffs();
        let eye = |scale: f64| {
            let mut w = vec![0.0; m * m];
            for q in 0..m {
                w[q * m + q] = scale;
            }
            w
        };
        let layer = |i, o, w, b, activation| -> Result<Layer<f64>> { Ok(Layer { dense: DenseLayer::new(i, o, w, b)?, activation }) };
        match (&self.outer, self.inner.clip()) {
            (Outer::Spline(s), Clip::Relu) => {
                let units = s.n_knots() + 1;
                let gw = m * units;
                let inner = Stack::new(vec![
                    layer(np, m, coeffs.to_vec(), vec![0.0; m], Activation::Relu)?,
                    layer(m, m, eye(-1.0), vec![1.0; m], Activation::Relu)?,
                    layer(m, m, eye(-1.0), vec![1.0; m], Activation::Identity)?,
                ])?;
                let mut w1 = vec![0.0; gw * d * m];
                let mut b1 = vec![0.0; gw];
                let mut w2 = vec![0.0; gw];
                let knots: Vec<f64> = std::iter::once(0.0).chain(s.knots.iter().copied()).collect();
                let weights: Vec<f64> = std::iter::once(s.slope).chain(s.weights.iter().copied()).collect();
                for q in 0..m {
                    for k in 0..units {
                        let unit = q * units + k;
                        for (i, &l) in self.lambda.iter().enumerate() {
                            w1[unit * d * m + i * m + q] = l;
                        }
                        b1[unit] = -knots[k];
                        w2[unit] = weights[k];
                    }
                }
                let outer = Stack::new(vec![
                    layer(d * m, gw, w1, b1, Activation::Relu)?,
                    layer(gw, 1, w2, vec![m as f64 * s.offset], Activation::Identity)?,
                ])?;
                let spec = ModelSpec::khorder(p, d, 2, m, 1, gw, Activation::Relu);
                Model::from_params(spec, ModelParams { stacks: vec![inner, outer] })
            }
            (Outer::Tanh(t), Clip::Tanh { w, delta }) => {
                let scale = w * (1.0 + 2.0 * delta);
                let inner = Stack::new(vec![
                    layer(np, m, coeffs.iter().map(|a| a / scale).collect(), vec![delta / scale; m], Activation::Tanh)?,
                    layer(m, m, eye(w), vec![0.0; m], Activation::Identity)?,
                ])?;
                let (h1, h2) = (t.n - 1, 6 * t.n);
                let gw = m * h2;
                let mut w1 = vec![0.0; gw * d * m];
                let mut b1 = vec![0.0; gw];
                let mut w2 = vec![0.0; gw * gw];
                let mut b2 = vec![0.0; gw];
                let mut w3 = vec![0.0; gw];
                for q in 0..m {
                    let base = q * h2;
                    for a in 0..h1 {
                        for (i, &l) in self.lambda.iter().enumerate() {
                            w1[(base + a) * d * m + i * m + q] = l * t.w1[a];
                        }
                        b1[base + a] = t.b1[a];
                    }
                    for c in 0..h2 {
                        for a in 0..h1 {
                            w2[(base + c) * gw + base + a] = t.w2[c * h1 + a];
                        }
                        b2[base + c] = t.b2[c];
                        w3[base + c] = t.w3[c];
                    }
                }
                let outer = Stack::new(vec![
                    layer(d * m, gw, w1, b1, Activation::Tanh)?,
                    layer(gw, gw, w2, b2, Activation::Tanh)?,
                    layer(gw, 1, w3, vec![m as f64 * t.b3], Activation::Identity)?,
                ])?;
                let spec = ModelSpec::khorder(p, d, 1, m, 2, gw, Activation::Tanh);
                Model::from_params(spec, ModelParams { stacks: vec![inner, outer] })
            }
            _ => unreachable!("checked in KpnModel::new"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OuterKind {
    /// `n` spline knots.
    Relu { n: usize },
    /// Tanh outer network of size `N`.
    Tanh { n: usize },
}

/// Closed-form parameter count of `K_{p,n}` in dimension `d`.
///
/// ReLU: `2n + d + (p+1)(2d+1)`. Tanh: `(2d + 6N + 14)(N - 1) + 13 + (p+1)(2d+1)`,
/// which sizes the first outer layer for a `(2d+1)`-dimensional input.
pub fn kpn_param_count(outer: OuterKind, d: usize, p: usize) -> u64 {
    let (d, p) = (d as u64, p as u64);
    let inner = (p + 1) * (2 * d + 1);
    match outer {
        OuterKind::Relu { n } => 2 * n as u64 + d + inner,
        OuterKind::Tanh { n } => {
            let n = n as u64;
            (2 * d + 6 * n + 14) * n.saturating_sub(1) + 13 + inner
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepKind {
    /// ReLU K-HOrderDNN with outer width `gw = n`.
    #[serde(rename = "vary_n")]
    VaryN,
    /// Basis order `p`, everything else from the base spec.
    #[serde(rename = "vary_p")]
    VaryP,
    /// Tanh K-HOrderDNN with outer width `gw = 6N`.
    #[serde(rename = "vary_N")]
    VaryTanhN,
}

impl SweepKind {
    /// The base spec resized for one sweep point.
    pub fn apply(self, base: &ModelSpec, size: usize) -> Result<ModelSpec> {
        let Architecture::KHOrder { p, hd, hw, gd, gw } = base.arch else {
            return Err(invalid("rate sweeps need a K-HOrderDNN base spec"));
        };
        let mut spec = *base;
        let (p, gw, act) = match self {
            SweepKind::VaryN => (p, size, Activation::Relu),
            SweepKind::VaryP => (size, gw, base.activation),
            SweepKind::VaryTanhN => (p, 6 * size, Activation::Tanh),
        };
        spec.arch = Architecture::KHOrder { p, hd, hw, gd, gw };
        spec.activation = act;
        spec.validate()?;
        Ok(spec)
    }
}

/// One rate study: a base spec, the swept sizes and the seeds trained per size.
#[derive(Clone, Debug)]
pub struct RateStudy {
    pub kind: SweepKind,
    pub sizes: Vec<usize>,
    pub base: ModelSpec,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub size: f64,
    /// Median over seeds of the minimum REL.
    pub rel: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Log-log slope of `rel` against size; `None` below three usable points.
    pub slope: Option<f64>,
}

impl RateTable {
    pub fn from_rows(rows: Vec<RateRow>) -> Self {
        let sizes: Vec<f64> = rows.iter().map(|r| r.size).collect();
        let errs: Vec<f64> = rows.iter().map(|r| r.rel).collect();
        let slope = fit_rate(&sizes, &errs).ok();
        Self { rows, slope }
    }
}

/// Rates from injected errors, no training.
pub fn synthetic_rates(sizes: &[f64], errs: &[f64]) -> Result<RateTable> {
    if sizes.len() != errs.len() {
        return Err(Error::Dimension { context: "synthetic rate inputs", expected: sizes.len(), found: errs.len() });
    }
    Ok(RateTable::from_rows(
        sizes.iter().zip(errs).map(|(&size, &rel)| RateRow { size, rel, per_seed: vec![rel] }).collect(),
    ))
}

/// Trains every (size, seed) pair and tabulates the median minimum REL per size.
pub fn rate_experiment<T: Scalar>(problem: &Problem, study: &RateStudy) -> std::result::Result<RateTable, TrainError<T>> {
    if study.seeds.is_empty() {
        return Err(invalid("rate study needs at least one seed").into());
    }
    let mut rows = Vec::with_capacity(study.sizes.len());
    for &size in &study.sizes {
        let spec = study.kind.apply(&study.base, size)?;
        let mut per_seed = Vec::with_capacity(study.seeds.len());
        for &seed in &study.seeds {
            let config = TrainConfig { seed, ..study.train };
            let outcome = train::<T>(&spec, problem, &config)?;
            per_seed.push(outcome.record.rel_min.unwrap_or(f64::NAN));
        }
        rows.push(RateRow { size: size as f64, rel: median(&per_seed), per_seed });
    }
    Ok(RateTable::from_rows(rows))
}

/// `size,REL,slope`; the slope is repeated on every row and left empty when undefined.
pub fn write_rates_csv(path: &Path, table: &RateTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["size", "REL", "slope"])?;
    let slope = table.slope.map(fmt_float).unwrap_or_default();
    for row in &table.rows {
        w.write_record([fmt_float(row.size), fmt_float(row.rel), slope.clone()])?;
    }
    w.flush()?;
    Ok(())
}
