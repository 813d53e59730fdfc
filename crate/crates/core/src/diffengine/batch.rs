//! Batch-major jet propagation with a recorded tape for reverse mode.
//!
//! A [`JetBatch`] stacks row blocks of equal shape `rows x width`:
//! the values, then one block per first-derivative direction, then optionally
//! one block holding the Laplacian accumulated over all directions. Because
//! affine maps act identically on every block (bias on the value block only),
//! a layer applies to the whole batch with a single GEMM.
//!
//! Through an activation the summed second-order block obeys
//! `L' = s2 * sum_k (D_k)^2 + s1 * L`, so the Laplacian needs one block instead
//! of one per direction.

use crate::scalar::{gemm, Scalar, Strided};

use super::{Activation, DenseLayer, Stack};

#[derive(Clone, Debug, PartialEq)]
pub struct JetBatch<T> {
    rows: usize,
    width: usize,
    dirs: usize,
    lap: bool,
    data: Vec<T>,
}

impl<T: Scalar> JetBatch<T> {
    pub fn zeros(rows: usize, width: usize, dirs: usize, lap: bool) -> Self {
        let blocks = 1 + dirs + usize::from(lap);
        Self { rows, width, dirs, lap, data: vec![T::zero(); blocks * rows * width] }
    }

    /// Raw coordinates `rows x d` as the network input. With `lap`, one unit
    /// direction per coordinate is seeded and the Laplacian block starts at zero.
    pub fn from_coordinates(inputs: &[T], d: usize, lap: bool) -> Self {
        let rows = inputs.len() / d;
        let dirs = if lap { d } else { 0 };
        let mut out = Self::zeros(rows, d, dirs, lap);
        out.value_mut().copy_from_slice(&inputs[..rows * d]);
        for k in 0..dirs {
            for row in out.dir_mut(k).chunks_exact_mut(d) {
                row[k] = T::one();
            }
        }
        out
    }

    /// Value-only batch from a row-major matrix.
    pub fn from_values(values: Vec<T>, width: usize) -> Self {
        let rows = values.len() / width;
        Self { rows, width, dirs: 0, lap: false, data: values }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.width, self.dirs, self.lap)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dirs(&self) -> usize {
        self.dirs
    }

    pub fn has_laplacian(&self) -> bool {
        self.lap
    }

    pub fn blocks(&self) -> usize {
        1 + self.dirs + usize::from(self.lap)
    }

    pub fn block_len(&self) -> usize {
        self.rows * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn value(&self) -> &[T] {
        &self.data[..self.block_len()]
    }

    pub fn value_mut(&mut self) -> &mut [T] {
        let n = self.block_len();
        &mut self.data[..n]
    }

    pub fn dir(&self, k: usize) -> &[T] {
        assert!(k < self.dirs);
        let n = self.block_len();
        &self.data[(1 + k) * n..(2 + k) * n]
    }

    pub fn dir_mut(&mut self, k: usize) -> &mut [T] {
        assert!(k < self.dirs);
        let n = self.block_len();
        &mut self.data[(1 + k) * n..(2 + k) * n]
    }

    pub fn laplacian(&self) -> Option<&[T]> {
        let n = self.block_len();
        self.lap.then(|| &self.data[(1 + self.dirs) * n..(2 + self.dirs) * n])
    }

    pub fn laplacian_mut(&mut self) -> Option<&mut [T]> {
        let n = self.block_len();
        let start = (1 + self.dirs) * n;
        if self.lap {
            Some(&mut self.data[start..start + n])
        } else {
            None
        }
    }

    /// Same blocks reinterpreted with a different row width (`rows * width` preserved).
    pub fn reshape(self, rows: usize, width: usize) -> Self {
        assert_eq!(rows * width, self.block_len(), "reshape must preserve block size");
        Self { rows, width, ..self }
    }
}

/// Intermediate values recorded by [`Stack::forward_tape`].
#[derive(Clone, Debug)]
pub struct StackTape<T> {
    inputs: Vec<JetBatch<T>>,
    pre: Vec<JetBatch<T>>,
    output: JetBatch<T>,
}

impl<T> StackTape<T> {
    pub fn output(&self) -> &JetBatch<T> {
        &self.output
    }
}

impl<T: Scalar> DenseLayer<T> {
    fn affine_batch(&self, x: &JetBatch<T>) -> JetBatch<T> {
        assert_eq!(x.width, self.in_dim, "batch width does not match layer input");
        let mut y = JetBatch::zeros(x.rows, self.out_dim, x.dirs, x.lap);
        for row in y.value_mut().chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(&self.bias);
        }
        let total = x.rows * x.blocks();
        gemm(
            total,
            self.in_dim,
            self.out_dim,
            T::one(),
            Strided::row_major(&x.data, self.in_dim),
            Strided::transposed(&self.weights, self.in_dim),
            T::one(),
            &mut y.data,
        );
        y
    }

    /// Accumulates `dW += Ybar^T X`, `db += colsum(Ybar_value)`.
    fn accumulate_grad(&self, grad: &mut DenseLayer<T>, ybar: &JetBatch<T>, x: &JetBatch<T>) {
        let total = x.rows * x.blocks();
        gemm(
            self.out_dim,
            total,
            self.in_dim,
            T::one(),
            Strided::transposed(&ybar.data, self.out_dim),
            Strided::row_major(&x.data, self.in_dim),
            T::one(),
            &mut grad.weights,
        );
        for row in ybar.value().chunks_exact(self.out_dim) {
            for (g, &v) in grad.bias.iter_mut().zip(row) {
                *g += v;
            }
        }
    }

    /// `Xbar = Ybar W`.
    fn input_adjoint(&self, ybar: &JetBatch<T>) -> JetBatch<T> {
        let mut xbar = JetBatch::zeros(ybar.rows, self.in_dim, ybar.dirs, ybar.lap);
        let total = ybar.rows * ybar.blocks();
        gemm(
            total,
            self.out_dim,
            self.in_dim,
            T::one(),
            Strided::row_major(&ybar.data, self.out_dim),
            Strided::row_major(&self.weights, self.in_dim),
            T::zero(),
            &mut xbar.data,
        );
        xbar
    }
}

/// `(s1, s2, s3)` derivative columns for the value block of `y`, given `z = act(y)`.
fn derivative_columns<T: Scalar>(act: Activation, y: &[T], z: &[T], third: bool) -> [Vec<T>; 3] {
    let n = y.len();
    let (mut s1, mut s2) = (vec![T::zero(); n], vec![T::zero(); n]);
    let mut s3 = if third { vec![T::zero(); n] } else { Vec::new() };
    for e in 0..n {
        let (a, b, c) = act.derivatives(y[e], z[e]);
        s1[e] = a;
        s2[e] = b;
        if third {
            s3[e] = c;
        }
    }
    [s1, s2, s3]
}

// The jet rules below run block by block so each inner loop is a plain
// element-wise pass over contiguous slices.
fn activate<T: Scalar>(act: Activation, y: &JetBatch<T>) -> JetBatch<T> {
    if act == Activation::Identity {
        return y.clone();
    }
    let n = y.block_len();
    let mut z = JetBatch::zeros(y.rows, y.width, y.dirs, y.lap);
    for (t, &v) in z.value_mut().iter_mut().zip(y.value()) {
        *t = act.apply(v);
    }
    if y.dirs == 0 && !y.lap {
        return z;
    }
    let [s1, s2, _] = derivative_columns(act, y.value(), z.value(), false);
    let mut sq = vec![T::zero(); if y.lap { n } else { 0 }];
    for k in 0..y.dirs {
        let yk = y.dir(k);
        for (e, zk) in z.dir_mut(k).iter_mut().enumerate() {
            *zk = s1[e] * yk[e];
        }
        if y.lap {
            for e in 0..n {
                sq[e] += yk[e] * yk[e];
            }
        }
    }
    if let (Some(yl), Some(zl)) = (y.laplacian(), z.laplacian_mut()) {
        for e in 0..n {
            zl[e] = s2[e] * sq[e] + s1[e] * yl[e];
        }
    }
    z
}

/// Adjoint of [`activate`]; overwrites `zbar` with `ybar`.
fn activate_backward<T: Scalar>(act: Activation, y: &JetBatch<T>, z_value: &[T], mut zbar: JetBatch<T>) -> JetBatch<T> {
    if act == Activation::Identity {
        return zbar;
    }
    let n = y.block_len();
    let [s1, s2, s3] = derivative_columns(act, y.value(), z_value, y.lap);
    // Contribution to the value adjoint from the direction and Laplacian blocks.
    let mut acc = vec![T::zero(); n];
    let zl: Vec<T> = zbar.laplacian().map(<[T]>::to_vec).unwrap_or_default();
    let mut sq = vec![T::zero(); if y.lap { n } else { 0 }];
    let two = T::one() + T::one();
    for k in 0..y.dirs {
        let yk = y.dir(k);
        let bk = zbar.dir_mut(k);
        for e in 0..n {
            acc[e] += bk[e] * s2[e] * yk[e];
            bk[e] *= s1[e];
        }
        if y.lap {
            for e in 0..n {
                sq[e] += yk[e] * yk[e];
                bk[e] += two * zl[e] * s2[e] * yk[e];
            }
        }
    }
    if let (Some(yl), Some(bl)) = (y.laplacian(), zbar.laplacian_mut()) {
        for e in 0..n {
            acc[e] += zl[e] * (s3[e] * sq[e] + s2[e] * yl[e]);
            bl[e] *= s1[e];
        }
    }
    for (e, bv) in zbar.value_mut().iter_mut().enumerate() {
        *bv = *bv * s1[e] + acc[e];
    }
    zbar
}

impl<T: Scalar> Stack<T> {
    /// Batched evaluation without recording intermediates.
    pub fn forward_batch(&self, mut x: JetBatch<T>) -> JetBatch<T> {
        for layer in &self.layers {
            let y = layer.dense.affine_batch(&x);
            x = activate(layer.activation, &y);
        }
        x
    }

    /// Batched evaluation recording what [`backward`](Self::backward) needs.
    pub fn forward_tape(&self, x: JetBatch<T>) -> StackTape<T> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            let y = layer.dense.affine_batch(&cur);
            let z = activate(layer.activation, &y);
            inputs.push(cur);
            pre.push(y);
            cur = z;
        }
        StackTape { inputs, pre, output: cur }
    }

    /// Back-propagates output adjoints through the tape, accumulating parameter
    /// gradients into `grads`. Returns the input adjoint when requested.
    pub fn backward(
        &self,
        tape: &StackTape<T>,
        out_bar: JetBatch<T>,
        grads: &mut Stack<T>,
        want_input_bar: bool,
    ) -> Option<JetBatch<T>> {
        let mut zbar = out_bar;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let z_value = if l + 1 < self.layers.len() { tape.inputs[l + 1].value() } else { tape.output.value() };
            let ybar = activate_backward(layer.activation, &tape.pre[l], z_value, zbar);
            layer.dense.accumulate_grad(&mut grads.layers[l].dense, &ybar, &tape.inputs[l]);
            if l == 0 && !want_input_bar {
                return None;
            }
            zbar = layer.dense.input_adjoint(&ybar);
        }
        Some(zbar)
    }
}
