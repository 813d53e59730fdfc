//! Gauss-Lobatto-Legendre nodes and the Lagrange interpolation basis on them.
//!
//! Tensor-product index order is lexicographic with the last coordinate
//! varying fastest: for `d = 2, p = 1` the four functions are
//! `psi_0(x1)psi_0(x2), psi_0(x1)psi_1(x2), psi_1(x1)psi_0(x2), psi_1(x1)psi_1(x2)`.
//! Model weights of the HOrderDNN transform layer depend on this order.

use num_bigint::BigUint;

use crate::error::{invalid, Error, Result};
use crate::scalar::{Dual2, Scalar};

/// Order-`p` Lagrange basis on the `p + 1` GLL nodes of `[a, b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet<T> {
    order: usize,
    interval: (T, T),
    nodes: Vec<T>,
    /// Barycentric weights `1 / prod_{i != j} (x_j - x_i)`.
    weights: Vec<T>,
}

/// Value and first two derivatives of one basis function at a point.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct BasisJet<T> {
    pub value: T,
    pub d1: T,
    pub d2: T,
}

/// Legendre `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64, f64) {
    let (mut p_prev, mut p) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    let nf = n as f64;
    // Interior only: (x^2 - 1) P_n' = n (x P_n - P_{n-1}); Legendre ODE gives P_n''.
    let dp = nf * (x * p - p_prev) / (x * x - 1.0);
    let ddp = (2.0 * x * dp - nf * (nf + 1.0) * p) / (1.0 - x * x);
    (p, dp, ddp)
}

/// GLL nodes on `[-1, 1]`, ascending, symmetric by construction.
fn reference_nodes(p: usize) -> Vec<f64> {
    let mut nodes = vec![0.0; p + 1];
    nodes[0] = -1.0;
    nodes[p] = 1.0;
    // Interior nodes are the roots of P_p'; Newton from Chebyshev-Lobatto guesses.
    for j in 1..p {
        let mut x = -(std::f64::consts::PI * j as f64 / p as f64).cos();
        for _ in 0..100 {
            let (_, dp, ddp) = legendre_and_derivative(p, x);
            let step = dp / ddp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[j] = x;
    }
    for j in 0..=p / 2 {
        let s = 0.5 * (nodes[p - j] - nodes[j]);
        nodes[j] = -s;
        nodes[p - j] = s;
    }
    if p.is_multiple_of(2) {
        nodes[p / 2] = 0.0;
    }
    nodes
}

impl<T: Scalar> BasisSet<T> {
    /// GLL nodes of order `p` on `[a, b]` and the associated Lagrange basis.
    pub fn gll(p: usize, a: T, b: T) -> Result<Self> {
        if p < 1 {
            return Err(invalid(format!("basis order must be >= 1, got {p}")));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(invalid(format!("basis interval must satisfy a < b, got [{a}, {b}]")));
        }
        let (af, bf) = (a.to_f64_lossy(), b.to_f64_lossy());
        let half = 0.5 * (bf - af);
        let mid = 0.5 * (af + bf);
        let reference = reference_nodes(p);
        let mut nodes: Vec<T> = reference.iter().map(|&x| T::cst(mid + half * x)).collect();
        nodes[0] = a;
        nodes[p] = b;
        let weights = (0..=p)
            .map(|j| {
                let prod = (0..=p)
                    .filter(|&i| i != j)
                    .fold(T::one(), |acc, i| acc * (nodes[j] - nodes[i]));
                prod.recip()
            })
            .collect();
        Ok(Self { order: p, interval: (a, b), nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn interval(&self) -> (T, T) {
        self.interval
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    /// `(psi_1(x), ..., psi_{p+1}(x))` by the product formula.
    pub fn eval(&self, x: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: T, out: &mut [T]) {
        let n = self.len();
        debug_assert_eq!(out.len(), n);
        // prefix[j] = prod_{i<j} (x - x_i), filled in place, then swept with the suffix.
        let mut acc = T::one();
        for j in 0..n {
            out[j] = acc;
            acc *= x - self.nodes[j];
        }
        let mut suffix = T::one();
        for j in (0..n).rev() {
            out[j] = out[j] * suffix * self.weights[j];
            suffix *= x - self.nodes[j];
        }
    }

    /// Values with analytic first and second derivatives.
    pub fn eval_jet(&self, x: T) -> Vec<BasisJet<T>> {
        let n = self.len();
        let (mut v, mut d1, mut d2) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
        self.eval_jet_into(x, &mut v, &mut d1, &mut d2);
        (0..n).map(|j| BasisJet { value: v[j], d1: d1[j], d2: d2[j] }).collect()
    }

    /// Slice-output form of [`eval_jet`](Self::eval_jet), used by the batched engine.
    pub fn eval_jet_into(&self, x: T, value: &mut [T], d1: &mut [T], d2: &mut [T]) {
        let n = self.len();
        let factor = |i: usize| Dual2::new(x - self.nodes[i], T::one(), T::zero());
        let mut prefix = Vec::with_capacity(n);
        let mut acc = Dual2::constant(T::one());
        for j in 0..n {
            prefix.push(acc);
            acc = acc * factor(j);
        }
        let mut suffix = Dual2::constant(T::one());
        for j in (0..n).rev() {
            let psi = prefix[j] * suffix;
            let w = self.weights[j];
            value[j] = psi.v * w;
            d1[j] = psi.d1 * w;
            d2[j] = psi.d2 * w;
            suffix = suffix * factor(j);
        }
    }

    /// All `(p+1)^d` tensor-product basis values at `point` (last coordinate fastest).
    pub fn tensor(&self, point: &[T]) -> Result<Vec<T>> {
        let count = tensor_count(self.len(), point.len())?;
        let per_axis: Vec<Vec<T>> = point.iter().map(|&x| self.eval(x)).collect();
        let mut out = Vec::with_capacity(count);
        out.push(T::one());
        for axis in &per_axis {
            let prev = std::mem::take(&mut out);
            out.reserve(prev.len() * axis.len());
            for &head in &prev {
                out.extend(axis.iter().map(|&v| head * v));
            }
        }
        Ok(out)
    }
}

/// Number of tensor-product functions `(p+1)^d`, or a capacity error carrying
/// the exact count when it cannot be materialized.
pub fn tensor_count(per_axis: usize, d: usize) -> Result<usize> {
    if d == 0 {
        return Err(invalid("tensor basis needs d >= 1"));
    }
    let exceeded = || Error::Capacity {
        what: "tensor-product basis",
        count: BigUint::from(per_axis).pow(d as u32),
    };
    let exp = u32::try_from(d).map_err(|_| exceeded())?;
    let count = per_axis.checked_pow(exp).ok_or_else(exceeded)?;
    if count.checked_mul(std::mem::size_of::<f64>()).is_none_or(|bytes| bytes > isize::MAX as usize) {
        return Err(exceeded());
    }
    Ok(count)
}

/// Free-function spelling of [`BasisSet::gll`].
pub fn gll_nodes<T: Scalar>(p: usize, a: T, b: T) -> Result<BasisSet<T>> {
    BasisSet::gll(p, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// (1 - x^2) P_p'(x) through the explicit Legendre sum, independent of the recurrence.
    fn lobatto_poly(p: usize, x: f64) -> f64 {
        // P_p'(x) = sum over k of (2k+1) P_k(x) for k = p-1, p-3, ...
        let legendre = |n: usize, x: f64| {
            // Rodrigues-free closed sum: P_n = 2^-n sum_k C(n,k)^2 (x-1)^(n-k) (x+1)^k
            let mut s = 0.0;
            let mut c = 1.0f64;
            for k in 0..=n {
                if k > 0 {
                    c = c * (n - k + 1) as f64 / k as f64;
                }
                s += c * c * (x - 1.0).powi((n - k) as i32) * (x + 1.0).powi(k as i32);
            }
            s / 2f64.powi(n as i32)
        };
        let mut dp = 0.0;
        let mut k = p as i64 - 1;
        while k >= 0 {
            dp += (2 * k + 1) as f64 * legendre(k as usize, x);
            k -= 2;
        }
        (1.0 - x * x) * dp
    }

    fn bisection_roots(p: usize) -> Vec<f64> {
        let f = |x: f64| lobatto_poly(p, x);
        let n = 20000;
        let mut roots = vec![-1.0];
        for i in 1..n - 1 {
            let (mut lo, mut hi) = (-1.0 + 2.0 * i as f64 / n as f64, -1.0 + 2.0 * (i + 1) as f64 / n as f64);
            if f(lo) == 0.0 {
                roots.push(lo);
                continue;
            }
            if f(lo) * f(hi) >= 0.0 {
                continue;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(lo).signum() == f(mid).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        roots.push(1.0);
        roots
    }

    #[test]
    fn low_orders_are_trivial() {
        let b = BasisSet::<f64>::gll(1, 0.0, 1.0).unwrap();
        assert_eq!(b.nodes(), &[0.0, 1.0]);
        let b = BasisSet::<f64>::gll(2, 0.0, 1.0).unwrap();
        assert_eq!(b.nodes(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn p3_and_p4_reference_nodes() {
        let b = BasisSet::<f64>::gll(3, -1.0, 1.0).unwrap();
        let s = 1.0 / 5f64.sqrt();
        for (got, want) in b.nodes().iter().zip([-1.0, -s, s, 1.0]) {
            assert!((got - want).abs() <= 1e-12);
        }
        let b = BasisSet::<f64>::gll(4, -1.0, 1.0).unwrap();
        let s = (3.0f64 / 7.0).sqrt();
        for (got, want) in b.nodes().iter().zip([-1.0, -s, 0.0, s, 1.0]) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn nodes_match_bisection_oracle() {
        for p in 2..=9 {
            let oracle = bisection_roots(p);
            let b = BasisSet::<f64>::gll(p, -1.0, 1.0).unwrap();
            assert_eq!(oracle.len(), p + 1, "p={p}");
            for (got, want) in b.nodes().iter().zip(&oracle) {
                assert!((got - want).abs() < 1e-12, "p={p}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn newton_residual_is_tiny() {
        for p in 2..=12 {
            for &x in reference_nodes(p).iter().skip(1).take(p - 1) {
                let (_, dp, _) = legendre_and_derivative(p, x);
                assert!(((1.0 - x * x) * dp).abs() <= 1e-13, "p={p}");
            }
        }
    }

    #[test]
    fn nodes_symmetric_and_increasing() {
        for p in 1..=12 {
            let b = BasisSet::<f64>::gll(p, 0.0, 1.0).unwrap();
            let n = b.nodes();
            assert_eq!((n[0], n[p]), (0.0, 1.0));
            for j in 0..=p {
                assert!((n[j] + n[p - j] - 1.0).abs() <= 1e-12);
                if j > 0 {
                    assert!(n[j] > n[j - 1]);
                }
            }
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(matches!(BasisSet::<f64>::gll(0, 0.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(BasisSet::<f64>::gll(2, 1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(BasisSet::<f64>::gll(2, 2.0, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn linear_hats() {
        let b = BasisSet::<f64>::gll(1, 0.0, 1.0).unwrap();
        assert_eq!(b.eval(0.25), vec![0.75, 0.25]);
        for j in b.eval_jet(0.37) {
            assert_eq!(j.d2, 0.0);
        }
        let jets = b.eval_jet(0.37);
        assert!((jets[0].d1 + 1.0).abs() < 1e-15 && (jets[1].d1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jets_match_central_differences() {
        let b = BasisSet::<f64>::gll(3, 0.0, 1.0).unwrap();
        for &x in &[0.05, 0.3, 0.61, 0.97] {
            let jets = b.eval_jet(x);
            let h = 1e-5;
            let (up, down) = (b.eval(x + h), b.eval(x - h));
            for j in 0..4 {
                let d1: f64 = (up[j] - down[j]) / (2.0 * h);
                assert!((jets[j].d1 - d1).abs() <= 1e-6 * d1.abs().max(1.0));
            }
            // Second differences lose digits faster; use a wider step.
            let h = 1e-4;
            let (up, mid, down) = (b.eval(x + h), b.eval(x), b.eval(x - h));
            for j in 0..4 {
                let d2: f64 = (up[j] - 2.0 * mid[j] + down[j]) / (h * h);
                assert!((jets[j].d2 - d2).abs() <= 1e-6 * d2.abs().max(1.0));
            }
        }
    }

    #[test]
    fn identities_hold_for_all_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in 1..=12 {
            let b = BasisSet::<f64>::gll(p, 0.0, 1.0).unwrap();
            for (j, &node) in b.nodes().iter().enumerate() {
                let v = b.eval(node);
                for (i, vi) in v.iter().enumerate() {
                    let want: f64 = if i == j { 1.0 } else { 0.0 };
                    assert!((vi - want).abs() <= 1e-10);
                }
            }
            for _ in 0..100 {
                let x: f64 = rng.random();
                let jets = b.eval_jet(x);
                let s: f64 = jets.iter().map(|j| j.value).sum();
                let s1: f64 = jets.iter().map(|j| j.d1).sum();
                let s2: f64 = jets.iter().map(|j| j.d2).sum();
                assert!((s - 1.0).abs() <= 1e-10);
                assert!(s1.abs() <= 1e-10 * 10f64.powi(p as i32 / 4));
                assert!(s2.abs() <= 1e-8 * 10f64.powi(p as i32 / 3));
            }
        }
    }

    #[test]
    fn tensor_order_and_count() {
        let b = BasisSet::<f64>::gll(1, 0.0, 1.0).unwrap();
        assert_eq!(b.tensor(&[0.3]).unwrap(), b.eval(0.3));
        // node (x1 = 1, x2 = 0) -> multi-index (1, 0) -> position 2
        assert_eq!(b.tensor(&[1.0, 0.0]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        let b3 = BasisSet::<f64>::gll(3, 0.0, 1.0).unwrap();
        let t = b3.tensor(&[0.1, 0.5, 0.9]).unwrap();
        assert_eq!(t.len(), 64);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tensor_capacity_error_carries_count() {
        match tensor_count(10, 50) {
            Err(Error::Capacity { count, .. }) => assert_eq!(count, BigUint::from(10u32).pow(50)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn f32_basis_builds() {
        let b = BasisSet::<f32>::gll(5, 0.0, 1.0).unwrap();
        let s: f32 = b.eval(0.4).iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn partition_of_unity_outside_interval(p in 1usize..8, x in -0.5f64..1.5) {
            let b = BasisSet::<f64>::gll(p, 0.0, 1.0).unwrap();
            let s: f64 = b.eval(x).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
