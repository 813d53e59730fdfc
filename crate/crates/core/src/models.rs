//! PINN, HOrderDNN and K-HOrderDNN: construction, parameter counting,
//! single-point and batched evaluation, gradients and checkpoints.
//!
//! Layer conventions:
//! * PINN: `d -> W`, `L - 1` layers `W -> W`, linear `W -> 1`.
//! * HOrderDNN: tensor basis of `(p+1)^d` functions, then the PINN stack on it.
//! * K-HOrderDNN: one shared inner network `h_p` (basis of size `p+1`,
//!   `hd` hidden layers of width `hw`, linear `hw -> 2d+1`) applied to every
//!   coordinate; the `d(2d+1)` outputs are concatenated in coordinate order and
//!   fed to the outer network (`d(2d+1) -> gw`, `gd - 1` layers `gw -> gw`,
//!   linear `gw -> 1`).

use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{tensor_count, BasisSet};
use crate::diffengine::{forward, forward_jet, Activation, Adjoint, DenseLayer, Jet, JetBatch, Layer, Stack, StackTape};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// HOrderDNN specs with more parameters than this are reported as intractable.
pub const INTRACTABLE_PARAMS: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Architecture {
    Pinn { depth: usize, width: usize },
    #[serde(rename = "horder")]
    HOrder { p: usize, depth: usize, width: usize },
    #[serde(rename = "khorder")]
    KHOrder { p: usize, hd: usize, hw: usize, gd: usize, gw: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub d: usize,
    pub activation: Activation,
    /// Per-coordinate basis interval.
    pub interval: (f64, f64),
}

impl ModelSpec {
    pub fn pinn(d: usize, depth: usize, width: usize, activation: Activation) -> Self {
        Self { arch: Architecture::Pinn { depth, width }, d, activation, interval: (0.0, 1.0) }
    }

    pub fn horder(p: usize, d: usize, depth: usize, width: usize, activation: Activation) -> Self {
        Self { arch: Architecture::HOrder { p, depth, width }, d, activation, interval: (0.0, 1.0) }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn khorder(p: usize, d: usize, hd: usize, hw: usize, gd: usize, gw: usize, activation: Activation) -> Self {
        Self { arch: Architecture::KHOrder { p, hd, hw, gd, gw }, d, activation, interval: (0.0, 1.0) }
    }

    pub fn with_interval(mut self, a: f64, b: f64) -> Self {
        self.interval = (a, b);
        self
    }

    pub fn order(&self) -> Option<usize> {
        match self.arch {
            Architecture::Pinn { .. } => None,
            Architecture::HOrder { p, .. } | Architecture::KHOrder { p, .. } => Some(p),
        }
    }

    /// Short label, e.g. `K-HOrderDNN(5)`.
    pub fn label(&self) -> String {
        match self.arch {
            Architecture::Pinn { .. } => "PINN".into(),
            Architecture::HOrder { p, .. } => format!("HOrderDNN({p})"),
            Architecture::KHOrder { p, .. } => format!("K-HOrderDNN({p})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("input dimension d must be >= 1"));
        }
        let (a, b) = self.interval;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(invalid(format!("interval must satisfy a < b, got ({a}, {b})")));
        }
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(invalid(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        match self.arch {
            Architecture::Pinn { depth, width } => {
                positive("depth", depth)?;
                positive("width", width)
            }
            Architecture::HOrder { p, depth, width } => {
                positive("p", p)?;
                positive("depth", depth)?;
                positive("width", width)
            }
            Architecture::KHOrder { p, hd, hw, gd, gw } => {
                positive("p", p)?;
                positive("hd", hd)?;
                positive("hw", hw)?;
                positive("gd", gd)?;
                positive("gw", gw)
            }
        }
    }

    /// False for HOrderDNN specs whose size makes them impractical to build.
    pub fn is_tractable(&self) -> bool {
        match self.arch {
            Architecture::HOrder { .. } => count_params(self) <= BigUint::from(INTRACTABLE_PARAMS),
            _ => true,
        }
    }
}

fn dense_count(fan_in: &BigUint, out: usize) -> BigUint {
    fan_in * out + out
}

/// Exact parameter total; big-integer so intractable HOrderDNN specs can be counted.
pub fn count_params(spec: &ModelSpec) -> BigUint {
    let hidden = |depth: usize, width: usize| BigUint::from(depth.saturating_sub(1)) * dense_count(&BigUint::from(width), width);
    match spec.arch {
        Architecture::Pinn { depth, width } => {
            dense_count(&BigUint::from(spec.d), width) + hidden(depth, width) + dense_count(&BigUint::from(width), 1)
        }
        Architecture::HOrder { p, depth, width } => {
            let basis = BigUint::from(p + 1).pow(spec.d as u32);
            dense_count(&basis, width) + hidden(depth, width) + dense_count(&BigUint::from(width), 1)
        }
        Architecture::KHOrder { p, hd, hw, gd, gw } => {
            let m = 2 * spec.d + 1;
            let inner =
                dense_count(&BigUint::from(p + 1), hw) + hidden(hd, hw) + dense_count(&BigUint::from(hw), m);
            let outer =
                dense_count(&BigUint::from(spec.d * m), gw) + hidden(gd, gw) + dense_count(&BigUint::from(gw), 1);
            inner + outer
        }
    }
}

/// `1.3545E+05`-style rendering with five significant figures.
pub fn scientific(n: &BigUint) -> String {
    let digits = n.to_string();
    if digits == "0" {
        return "0.0000E+00".into();
    }
    let exp = digits.len() - 1;
    // Round half up on the sixth significant digit.
    let mut head: Vec<u8> = digits.bytes().take(5).map(|b| b - b'0').collect();
    head.resize(5, 0);
    let mut exp = exp;
    if digits.len() > 5 && digits.as_bytes()[5] >= b'5' {
        let mut i = 4;
        loop {
            head[i] += 1;
            if head[i] < 10 {
                break;
            }
            head[i] = 0;
            if i == 0 {
                head.insert(0, 1);
                head.truncate(5);
                exp += 1;
                break;
            }
            i -= 1;
        }
    }
    format!("{}.{}{}{}{}E+{:02}", head[0], head[1], head[2], head[3], head[4], exp)
}

/// Learnable arrays. PINN and HOrderDNN hold one stack; K-HOrderDNN holds
/// the shared inner stack followed by the outer stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelParams<T: Scalar> {
    pub stacks: Vec<Stack<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn param_count(&self) -> usize {
        self.stacks.iter().map(Stack::param_count).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { stacks: self.stacks.iter().map(Stack::zeros_like).collect() }
    }

    pub fn slices(&self) -> impl Iterator<Item = &[T]> {
        self.stacks.iter().flat_map(Stack::slices)
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.stacks.iter_mut().flat_map(Stack::slices_mut)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.slices().flatten().copied().collect()
    }

    /// `self += other`, element-wise over matching shapes.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            stacks: self
                .stacks
                .iter()
                .map(|s| Stack {
                    layers: s
                        .layers
                        .iter()
                        .map(|l| Layer {
                            dense: DenseLayer {
                                in_dim: l.dense.in_dim,
                                out_dim: l.dense.out_dim,
                                weights: l.dense.weights.iter().map(|w| U::cst(w.to_f64_lossy())).collect(),
                                bias: l.dense.bias.iter().map(|b| U::cst(b.to_f64_lossy())).collect(),
                            },
                            activation: l.activation,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// `(in, out, activation)` of every layer, per stack, for a spec.
fn layer_plan(spec: &ModelSpec) -> Result<Vec<Vec<(usize, usize, Activation)>>> {
    let act = spec.activation;
    let plain = |input: usize, depth: usize, width: usize, out: usize| {
        let mut v = vec![(input, width, act)];
        v.extend((1..depth).map(|_| (width, width, act)));
        v.push((width, out, Activation::Identity));
        v
    };
    Ok(match spec.arch {
        Architecture::Pinn { depth, width } => vec![plain(spec.d, depth, width, 1)],
        Architecture::HOrder { p, depth, width } => vec![plain(tensor_count(p + 1, spec.d)?, depth, width, 1)],
        Architecture::KHOrder { p, hd, hw, gd, gw } => {
            let m = 2 * spec.d + 1;
            vec![plain(p + 1, hd, hw, m), plain(spec.d * m, gd, gw, 1)]
        }
    })
}

/// Xavier-initialized parameters; each layer draws from its own ChaCha stream keyed by `seed`.
pub fn build<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<T>> {
    spec.validate()?;
    if !spec.is_tractable() {
        return Err(Error::Capacity { what: "HOrderDNN parameters", count: count_params(spec) });
    }
    let mut index = 0u64;
    let stacks = layer_plan(spec)?
        .into_iter()
        .map(|plan| {
            let layers = plan
                .into_iter()
                .map(|(i, o, activation)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(index);
                    index += 1;
                    Layer { dense: DenseLayer::xavier(i, o, &mut rng), activation }
                })
                .collect();
            Stack { layers }
        })
        .collect();
    Ok(ModelParams { stacks })
}

fn check_shapes<T: Scalar>(spec: &ModelSpec, params: &ModelParams<T>) -> Result<()> {
    let plan = layer_plan(spec)?;
    if plan.len() != params.stacks.len() {
        return Err(Error::Dimension { context: "model stacks", expected: plan.len(), found: params.stacks.len() });
    }
    for (stack_plan, stack) in plan.iter().zip(&params.stacks) {
        if stack_plan.len() != stack.layers.len() {
            return Err(Error::Dimension { context: "stack depth", expected: stack_plan.len(), found: stack.layers.len() });
        }
        for (&(i, o, _), layer) in stack_plan.iter().zip(&stack.layers) {
            if layer.dense.in_dim != i {
                return Err(Error::Dimension { context: "layer input", expected: i, found: layer.dense.in_dim });
            }
            if layer.dense.out_dim != o {
                return Err(Error::Dimension { context: "layer output", expected: o, found: layer.dense.out_dim });
            }
            layer.dense.validate()?;
        }
    }
    Ok(())
}

/// Values of the transform layer at one point and its jets along each coordinate.
struct TensorJets<T> {
    value: Vec<T>,
    d1: Vec<Vec<T>>,
    lap: Vec<T>,
}

/// Tensor-product basis with derivatives, built axis by axis (last axis fastest).
fn tensor_jets<T: Scalar>(basis: &BasisSet<T>, point: &[T], with_derivatives: bool) -> TensorJets<T> {
    let n = basis.len();
    let (mut v1, mut d1, mut d2) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    let mut value = vec![T::one()];
    let mut dirs: Vec<Vec<T>> = Vec::new();
    let mut lap = vec![T::zero()];
    let outer = |a: &[T], b: &[T]| -> Vec<T> { a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect() };
    for &x in point {
        if with_derivatives {
            basis.eval_jet_into(x, &mut v1, &mut d1, &mut d2);
            for dir in &mut dirs {
                *dir = outer(dir, &v1);
            }
            dirs.push(outer(&value, &d1));
            let mut next_lap = outer(&lap, &v1);
            for (l, s) in next_lap.iter_mut().zip(outer(&value, &d2)) {
                *l += s;
            }
            lap = next_lap;
        } else {
            basis.eval_into(x, &mut v1);
        }
        value = outer(&value, &v1);
    }
    TensorJets { value, d1: dirs, lap }
}

/// Recorded batched evaluation.
#[derive(Clone, Debug)]
pub enum ModelTape<T> {
    Plain(StackTape<T>),
    Kolmogorov { inner: StackTape<T>, outer: StackTape<T> },
}

impl<T: Scalar> ModelTape<T> {
    fn output(&self) -> &JetBatch<T> {
        match self {
            ModelTape::Plain(t) => t.output(),
            ModelTape::Kolmogorov { outer, .. } => outer.output(),
        }
    }

    pub fn values(&self) -> &[T] {
        self.output().value()
    }

    pub fn laplacians(&self) -> Option<&[T]> {
        self.output().laplacian()
    }
}

/// A spec with its parameters and (for the high-order families) its 1-D basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    params: ModelParams<T>,
    basis: Option<BasisSet<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = build(&spec, seed)?;
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: ModelSpec, params: ModelParams<T>) -> Result<Self> {
        spec.validate()?;
        check_shapes(&spec, &params)?;
        let basis = match spec.order() {
            Some(p) => Some(BasisSet::gll(p, T::cst(spec.interval.0), T::cst(spec.interval.1))?),
            None => None,
        };
        Ok(Self { spec, params, basis })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    /// Zeroes the outer network of a K-HOrderDNN (or the whole stack otherwise),
    /// leaving a model that is identically zero.
    pub fn zero_outer(&mut self) {
        if let Some(stack) = self.params.stacks.last_mut() {
            for s in stack.slices_mut() {
                s.fill(T::zero());
            }
        }
    }

    fn basis(&self) -> &BasisSet<T> {
        self.basis.as_ref().expect("high-order model carries a basis")
    }

    fn check_point(&self, point: &[T]) -> Result<()> {
        if point.len() != self.spec.d {
            return Err(Error::Dimension { context: "model input", expected: self.spec.d, found: point.len() });
        }
        Ok(())
    }

    /// Output of the shared inner network for one coordinate value.
    fn inner_value(&self, x: T) -> Result<Vec<T>> {
        forward(&self.params.stacks[0], &self.basis().eval(x))
    }

    /// Network output at one point.
    pub fn eval(&self, point: &[T]) -> Result<T> {
        self.check_point(point)?;
        match self.spec.arch {
            Architecture::Pinn { .. } => Ok(forward(&self.params.stacks[0], point)?[0]),
            Architecture::HOrder { .. } => {
                Ok(forward(&self.params.stacks[0], &self.basis().tensor(point)?)?[0])
            }
            Architecture::KHOrder { .. } => {
                let mut z = Vec::with_capacity(self.spec.d * (2 * self.spec.d + 1));
                for &x in point {
                    z.extend(self.inner_value(x)?);
                }
                Ok(forward(&self.params.stacks[1], &z)?[0])
            }
        }
    }

    /// Input Laplacian at one point, by one jet pass per coordinate.
    pub fn eval_laplacian(&self, point: &[T]) -> Result<T> {
        self.check_point(point)?;
        let d = self.spec.d;
        let mut total = T::zero();
        match self.spec.arch {
            Architecture::Pinn { .. } => {
                for k in 0..d {
                    total += forward_jet(&self.params.stacks[0], &Jet::seed(point, k))?.d2[0];
                }
            }
            Architecture::HOrder { .. } => {
                let tj = tensor_jets(self.basis(), point, true);
                for k in 0..d {
                    // Second derivative along k alone: factor k replaced by psi''.
                    let mut d2 = vec![T::one()];
                    let basis = self.basis();
                    let n = basis.len();
                    let (mut v, mut a, mut b) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
                    for (i, &x) in point.iter().enumerate() {
                        basis.eval_jet_into(x, &mut v, &mut a, &mut b);
                        let axis = if i == k { &b } else { &v };
                        d2 = d2.iter().flat_map(|&p| axis.iter().map(move |&q| p * q)).collect();
                    }
                    let jet = Jet { value: tj.value.clone(), d1: tj.d1[k].clone(), d2 };
                    total += forward_jet(&self.params.stacks[0], &jet)?.d2[0];
                }
            }
            Architecture::KHOrder { .. } => {
                let m = 2 * d + 1;
                let inner = &self.params.stacks[0];
                let basis = self.basis();
                let mut values = Vec::with_capacity(d * m);
                for &x in point {
                    values.extend(self.inner_value(x)?);
                }
                for k in 0..d {
                    let seed: Vec<_> = basis.eval_jet(point[k]);
                    let jet = Jet {
                        value: seed.iter().map(|j| j.value).collect(),
                        d1: seed.iter().map(|j| j.d1).collect(),
                        d2: seed.iter().map(|j| j.d2).collect(),
                    };
                    let hk = forward_jet(inner, &jet)?;
                    let mut outer_jet = Jet::constant(&values);
                    outer_jet.d1[k * m..(k + 1) * m].copy_from_slice(&hk.d1);
                    outer_jet.d2[k * m..(k + 1) * m].copy_from_slice(&hk.d2);
                    total += forward_jet(&self.params.stacks[1], &outer_jet)?.d2[0];
                }
            }
        }
        Ok(total)
    }

    fn check_batch(&self, xs: &[T]) -> Result<usize> {
        let d = self.spec.d;
        if !xs.len().is_multiple_of(d) {
            return Err(Error::Dimension { context: "batch coordinates", expected: d, found: xs.len() % d });
        }
        Ok(xs.len() / d)
    }

    /// First-stack input jets for a batch of points (`rows x d`, row-major).
    fn input_batch(&self, xs: &[T], lap: bool) -> JetBatch<T> {
        let d = self.spec.d;
        let rows = xs.len() / d;
        match self.spec.arch {
            Architecture::Pinn { .. } => JetBatch::from_coordinates(xs, d, lap),
            Architecture::HOrder { .. } => {
                let basis = self.basis();
                let width = self.params.stacks[0].in_dim();
                let dirs = if lap { d } else { 0 };
                let mut batch = JetBatch::zeros(rows, width, dirs, lap);
                for (r, point) in xs.chunks_exact(d).enumerate() {
                    let tj = tensor_jets(basis, point, lap);
                    let span = r * width..(r + 1) * width;
                    batch.value_mut()[span.clone()].copy_from_slice(&tj.value);
                    for (k, dir) in tj.d1.iter().enumerate() {
                        batch.dir_mut(k)[span.clone()].copy_from_slice(dir);
                    }
                    if let Some(l) = batch.laplacian_mut() {
                        l[span].copy_from_slice(&tj.lap);
                    }
                }
                batch
            }
            Architecture::KHOrder { p, .. } => {
                // One inner row per (sample, coordinate): row b*d + i holds x_{b,i}.
                let basis = self.basis();
                let n = p + 1;
                let mut batch = JetBatch::zeros(xs.len(), n, usize::from(lap), lap);
                let len = batch.block_len();
                let data = batch.data_mut();
                let (value, rest) = data.split_at_mut(len);
                if lap {
                    let (d1, d2) = rest.split_at_mut(len);
                    for (r, &x) in xs.iter().enumerate() {
                        let span = r * n..(r + 1) * n;
                        basis.eval_jet_into(x, &mut value[span.clone()], &mut d1[span.clone()], &mut d2[span]);
                    }
                } else {
                    for (r, &x) in xs.iter().enumerate() {
                        basis.eval_into(x, &mut value[r * n..(r + 1) * n]);
                    }
                }
                batch
            }
        }
    }

    /// Inner outputs `(B*d) x (2d+1)` regrouped as outer inputs `B x d(2d+1)`.
    fn inner_to_outer(&self, h: &JetBatch<T>, rows: usize) -> JetBatch<T> {
        let d = self.spec.d;
        let m = 2 * d + 1;
        let lap = h.has_laplacian();
        let dirs = if lap { d } else { 0 };
        let mut x = JetBatch::zeros(rows, d * m, dirs, lap);
        x.value_mut().copy_from_slice(h.value());
        if lap {
            let hd = h.dir(0);
            for k in 0..d {
                let dk = x.dir_mut(k);
                for b in 0..rows {
                    let src = (b * d + k) * m;
                    let dst = b * d * m + k * m;
                    dk[dst..dst + m].copy_from_slice(&hd[src..src + m]);
                }
            }
            x.laplacian_mut().unwrap().copy_from_slice(h.laplacian().unwrap());
        }
        x
    }

    /// Adjoint of [`inner_to_outer`](Self::inner_to_outer).
    fn outer_to_inner(&self, xbar: &JetBatch<T>, rows: usize) -> JetBatch<T> {
        let d = self.spec.d;
        let m = 2 * d + 1;
        let lap = xbar.has_laplacian();
        let mut h = JetBatch::zeros(rows * d, m, usize::from(lap), lap);
        h.value_mut().copy_from_slice(xbar.value());
        if lap {
            let hd = h.dir_mut(0);
            for k in 0..d {
                let src_block = xbar.dir(k);
                for b in 0..rows {
                    let dst = (b * d + k) * m;
                    let src = b * d * m + k * m;
                    hd[dst..dst + m].copy_from_slice(&src_block[src..src + m]);
                }
            }
            h.laplacian_mut().unwrap().copy_from_slice(xbar.laplacian().unwrap());
        }
        h
    }

    /// Batched values (and Laplacians with `lap`) at `rows x d` points, recording a tape.
    pub fn forward_tape(&self, xs: &[T], lap: bool) -> Result<ModelTape<T>> {
        let rows = self.check_batch(xs)?;
        let input = self.input_batch(xs, lap);
        Ok(match self.spec.arch {
            Architecture::KHOrder { .. } => {
                let inner = self.params.stacks[0].forward_tape(input);
                let x = self.inner_to_outer(inner.output(), rows);
                let outer = self.params.stacks[1].forward_tape(x);
                ModelTape::Kolmogorov { inner, outer }
            }
            _ => ModelTape::Plain(self.params.stacks[0].forward_tape(input)),
        })
    }

    /// Accumulates parameter gradients given per-sample adjoints of `u` and `Lap u`.
    pub fn backward(&self, tape: &ModelTape<T>, value_bar: &[T], lap_bar: Option<&[T]>, grads: &mut ModelParams<T>) {
        let mut out_bar = tape.output().zeros_like();
        out_bar.value_mut().copy_from_slice(value_bar);
        if let (Some(src), Some(dst)) = (lap_bar, out_bar.laplacian_mut()) {
            dst.copy_from_slice(src);
        }
        match tape {
            ModelTape::Plain(t) => {
                self.params.stacks[0].backward(t, out_bar, &mut grads.stacks[0], false);
            }
            ModelTape::Kolmogorov { inner, outer } => {
                let rows = value_bar.len();
                let xbar = self.params.stacks[1]
                    .backward(outer, out_bar, &mut grads.stacks[1], true)
                    .expect("input adjoint requested");
                let hbar = self.outer_to_inner(&xbar, rows);
                self.params.stacks[0].backward(inner, hbar, &mut grads.stacks[0], false);
            }
        }
    }

    /// Batched values without a tape.
    pub fn eval_batch(&self, xs: &[T]) -> Result<Vec<T>> {
        let rows = self.check_batch(xs)?;
        let input = self.input_batch(xs, false);
        let out = match self.spec.arch {
            Architecture::KHOrder { .. } => {
                let h = self.params.stacks[0].forward_batch(input);
                let x = self.inner_to_outer(&h, rows);
                self.params.stacks[1].forward_batch(x)
            }
            _ => self.params.stacks[0].forward_batch(input),
        };
        Ok(out.into_data())
    }

    /// Batched values and Laplacians without a tape.
    pub fn eval_batch_laplacian(&self, xs: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let tape = self.forward_tape(xs, true)?;
        Ok((tape.values().to_vec(), tape.laplacians().expect("laplacian requested").to_vec()))
    }

    /// Loss and parameter gradient over one batch; see [`crate::diffengine::param_gradient`].
    pub fn param_gradient<F>(&self, xs: &[T], lap: bool, loss: F) -> Result<(T, ModelParams<T>)>
    where
        F: FnOnce(&[T], Option<&[T]>) -> Adjoint<T>,
    {
        if xs.is_empty() {
            return Err(Error::EmptyBatch("model batch"));
        }
        let tape = self.forward_tape(xs, lap)?;
        let adj = loss(tape.values(), tape.laplacians());
        let mut grads = self.params.zeros_like();
        self.backward(&tape, &adj.value, adj.laplacian.as_deref(), &mut grads);
        Ok((adj.loss, grads))
    }
}

/// Free-function form of [`Model::eval`].
pub fn eval<T: Scalar>(spec: &ModelSpec, params: &ModelParams<T>, point: &[T]) -> Result<T> {
    Model::from_params(*spec, params.clone())?.eval(point)
}

/// Free-function form of [`Model::eval_laplacian`].
pub fn eval_laplacian<T: Scalar>(spec: &ModelSpec, params: &ModelParams<T>, point: &[T]) -> Result<T> {
    Model::from_params(*spec, params.clone())?.eval_laplacian(point)
}

const CHECKPOINT_FORMAT: &str = "khorder-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
struct CheckpointFile<T: Scalar> {
    format: String,
    version: u32,
    scalar: String,
    param_count: usize,
    spec: ModelSpec,
    params: ModelParams<T>,
}

/// Writes a JSON checkpoint (spec plus every parameter array in stack/layer order).
pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Model<T>) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        scalar: T::NAME.into(),
        param_count: model.params.param_count(),
        spec: model.spec,
        params: model.params.clone(),
    };
    fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path)?;
    let file: CheckpointFile<T> = serde_json::from_slice(&bytes)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format tag `{}`", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    if file.scalar != T::NAME {
        return Err(Error::Checkpoint(format!("stored as {}, requested {}", file.scalar, T::NAME)));
    }
    if file.param_count != file.params.param_count() {
        return Err(Error::Checkpoint("parameter count does not match arrays".into()));
    }
    Model::from_params(file.spec, file.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn kspec(p: usize, d: usize) -> ModelSpec {
        ModelSpec::khorder(p, d, 2, 4, 2, 5, Activation::Tanh)
    }

    #[test]
    fn reference_counts() {
        assert_eq!(count_params(&ModelSpec::pinn(10, 4, 210, Activation::Tanh)), BigUint::from(135451u32));
        assert_eq!(count_params(&ModelSpec::horder(1, 10, 4, 210, Activation::Tanh)), BigUint::from(348391u32));
        assert_eq!(count_params(&ModelSpec::khorder(1, 2, 3, 45, 2, 90, Activation::Tanh)), BigUint::from(13776u32));
        assert_eq!(count_params(&ModelSpec::khorder(9, 10, 1, 210, 2, 210, Activation::Tanh)), BigUint::from(95572u32));
    }

    #[test]
    fn scientific_rendering() {
        assert_eq!(scientific(&BigUint::from(135451u32)), "1.3545E+05");
        assert_eq!(scientific(&BigUint::from(13776u32)), "1.3776E+04");
        assert_eq!(scientific(&BigUint::from(999_996u32)), "1.0000E+06");
        assert_eq!(scientific(&BigUint::from(7u32)), "7.0000E+00");
        let big = count_params(&ModelSpec::horder(9, 50, 4, 202, Activation::Tanh));
        assert_eq!(scientific(&big), "2.0200E+52");
    }

    #[test]
    fn build_matches_count_and_is_deterministic() {
        for spec in [
            ModelSpec::pinn(3, 2, 7, Activation::Tanh),
            ModelSpec::horder(2, 2, 2, 6, Activation::Relu),
            kspec(3, 3),
        ] {
            let a = build::<f64>(&spec, 5).unwrap();
            let b = build::<f64>(&spec, 5).unwrap();
            assert_eq!(a, b);
            assert_eq!(BigUint::from(a.param_count()), count_params(&spec));
            assert_ne!(a, build::<f64>(&spec, 6).unwrap());
        }
    }

    #[test]
    fn xavier_bound_for_width_one() {
        let spec = ModelSpec::pinn(1, 3, 1, Activation::Tanh);
        let p = build::<f64>(&spec, 1).unwrap();
        for s in p.stacks[0].layers.iter().map(|l| &l.dense.weights) {
            assert!(s.iter().all(|w| w.abs() <= 3f64.sqrt()));
        }
        assert!(p.stacks[0].layers.iter().all(|l| l.dense.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn intractable_horder_refuses_to_build() {
        let spec = ModelSpec::horder(3, 10, 4, 210, Activation::Tanh);
        assert!(!spec.is_tractable());
        assert!(matches!(build::<f64>(&spec, 0), Err(Error::Capacity { .. })));
        assert!(ModelSpec::horder(1, 10, 4, 210, Activation::Tanh).is_tractable());
    }

    #[test]
    fn batched_paths_match_single_point_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for spec in [
            ModelSpec::pinn(3, 2, 6, Activation::Tanh),
            ModelSpec::horder(2, 2, 2, 5, Activation::Tanh),
            kspec(2, 3),
        ] {
            let model = Model::<f64>::build(spec, 3).unwrap();
            let xs: Vec<f64> = (0..spec.d * 7).map(|_| rng.random()).collect();
            let (u, lap) = model.eval_batch_laplacian(&xs).unwrap();
            let plain = model.eval_batch(&xs).unwrap();
            for (r, x) in xs.chunks(spec.d).enumerate() {
                let v = model.eval(x).unwrap();
                assert!((u[r] - v).abs() <= 1e-12 && (plain[r] - v).abs() <= 1e-12, "{}", spec.label());
                let l = model.eval_laplacian(x).unwrap();
                assert!((lap[r] - l).abs() <= 1e-10 * l.abs().max(1.0), "{}: {} vs {}", spec.label(), lap[r], l);
            }
        }
    }

    #[test]
    fn zero_outer_gives_bias_and_no_curvature() {
        let mut model = Model::<f64>::build(kspec(3, 2), 1).unwrap();
        model.zero_outer();
        let last = model.params_mut().stacks[1].layers.last_mut().unwrap();
        last.dense.bias[0] = 0.25;
        assert_eq!(model.eval(&[0.3, 0.9]).unwrap(), 0.25);
        assert_eq!(model.eval_laplacian(&[0.3, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let model = Model::<f64>::build(kspec(3, 2), 4).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let back = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(back, model);
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let params = build::<f64>(&kspec(3, 2), 0).unwrap();
        assert!(Model::from_params(kspec(4, 2), params).is_err());
    }
}
