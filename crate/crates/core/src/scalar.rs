//! Scalar abstractions.
//!
//! [`Scalar`] is the floating-point type the networks, bases and optimizers
//! are generic over (`f32` or `f64`). [`Real`] is the smaller algebra used by
//! closed-form target functions so they can be evaluated either on plain
//! floats or on [`Dual2`] numbers, which carry a value together with its first
//! and second derivative along one input direction.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point element type of every numeric container in this crate.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Short name used in checkpoints and manifests.
    const NAME: &'static str;

    /// `C = alpha * A * B + beta * C` on strided row/column layouts.
    ///
    /// # Safety
    /// All strides must describe in-bounds accesses of the given pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn cst(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided view of a dense matrix stored in a slice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strided<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> Strided<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "gemm operand out of bounds");
        }
    }
}

/// Safe GEMM wrapper: `c (m x n, row-major) = alpha * a (m x k) * b (k x n) + beta * c`.
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: Strided<'_, T>,
    b: Strided<'_, T>,
    beta: T,
    c: &mut [T],
) {
    a.check(m, k);
    b.check(k, n);
    assert!(c.len() >= m * n, "gemm output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: bounds of every operand were checked above for the given strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Arithmetic needed by closed-form solutions and targets.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    /// Primal value (drops derivative parts).
    fn primal(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, e: f64) -> Self;
    /// Four-quadrant arctangent of `self / x`.
    fn atan2(self, x: Self) -> Self;
}

macro_rules! impl_real_float {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn cst(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn primal(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn powf(self, e: f64) -> Self {
                <$t>::powf(self, e as $t)
            }
            #[inline]
            fn atan2(self, x: Self) -> Self {
                <$t>::atan2(self, x)
            }
        }
    };
}

impl_real_float!(f32);
impl_real_float!(f64);

/// Truncated second-order Taylor number `(v, v', v'')` along one direction.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual2<T> {
    pub v: T,
    pub d1: T,
    pub d2: T,
}

impl<T: Float> Dual2<T> {
    pub fn new(v: T, d1: T, d2: T) -> Self {
        Self { v, d1, d2 }
    }

    pub fn constant(v: T) -> Self {
        Self { v, d1: T::zero(), d2: T::zero() }
    }

    /// The independent variable seeded with unit direction.
    pub fn variable(v: T) -> Self {
        Self { v, d1: T::one(), d2: T::zero() }
    }

    /// Applies a scalar function given its value and first two derivatives at `v`.
    #[inline]
    fn chain(self, f: T, df: T, ddf: T) -> Self {
        Self {
            v: f,
            d1: df * self.d1,
            d2: ddf * self.d1 * self.d1 + df * self.d2,
        }
    }
}

impl<T: Float> Add for Dual2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl<T: Float> Sub for Dual2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl<T: Float> Mul for Dual2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let two = T::one() + T::one();
        Self::new(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + two * self.d1 * o.d1 + self.v * o.d2,
        )
    }
}

impl<T: Float> Div for Dual2<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = o.v.recip();
        let two = T::one() + T::one();
        let recip = Self::new(inv, -o.d1 * inv * inv, two * o.d1 * o.d1 * inv * inv * inv - o.d2 * inv * inv);
        self * recip
    }
}

impl<T: Float> Neg for Dual2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.v, -self.d1, -self.d2)
    }
}

impl<T: Float + Debug + FromPrimitive> Real for Dual2<T> {
    fn cst(v: f64) -> Self {
        Self::constant(T::from_f64(v).expect("constant representable"))
    }

    fn primal(self) -> f64 {
        self.v.to_f64().unwrap_or(f64::NAN)
    }

    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    fn tanh(self) -> Self {
        let t = self.v.tanh();
        let s1 = T::one() - t * t;
        self.chain(t, s1, -(t + t) * s1)
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    fn powf(self, e: f64) -> Self {
        let e = T::from_f64(e).expect("exponent representable");
        let one = T::one();
        let f = self.v.powf(e);
        let df = e * self.v.powf(e - one);
        let ddf = e * (e - one) * self.v.powf(e - one - one);
        self.chain(f, df, ddf)
    }

    fn atan2(self, x: Self) -> Self {
        // theta' = (x y' - y x') / r2, differentiated once more for theta''.
        let y = self;
        let two = T::one() + T::one();
        let r2 = x.v * x.v + y.v * y.v;
        let num = x.v * y.d1 - y.v * x.d1;
        let dnum = x.d1 * y.d1 + x.v * y.d2 - y.d1 * x.d1 - y.v * x.d2;
        let dr2 = two * (x.v * x.d1 + y.v * y.d1);
        Self::new(y.v.atan2(x.v), num / r2, (dnum * r2 - num * dr2) / (r2 * r2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd2<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> (f64, f64) {
        let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
        let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        (d1, d2)
    }

    #[test]
    fn dual_matches_finite_differences() {
        let f = |x: Dual2<f64>| {
            let y = x * x + Dual2::cst(0.3);
            (y.sin() * x.exp()) / (Dual2::cst(1.5) + x.tanh()) + y.powf(2.0 / 3.0) - x.cos()
        };
        for &x0 in &[-0.7, 0.1, 0.9, 1.3] {
            let jet = f(Dual2::variable(x0));
            let (d1, d2) = fd2(|x| f(Dual2::constant(x)).v, x0, 1e-4);
            assert!((jet.d1 - d1).abs() < 1e-6 * (1.0 + d1.abs()), "{} vs {}", jet.d1, d1);
            assert!((jet.d2 - d2).abs() < 1e-5 * (1.0 + d2.abs()), "{} vs {}", jet.d2, d2);
        }
    }

    #[test]
    fn atan2_second_derivative() {
        // Direction (1, 2) through the plane, starting at (-0.4, 0.3).
        let theta = |t: Dual2<f64>| {
            let x = Dual2::cst(-0.4) + t;
            let y = Dual2::cst(0.3) + Dual2::cst(2.0) * t;
            y.atan2(x)
        };
        let jet = theta(Dual2::variable(0.0));
        let (d1, d2) = fd2(|t| theta(Dual2::constant(t)).v, 0.0, 1e-4);
        assert!((jet.d1 - d1).abs() < 1e-6);
        assert!((jet.d2 - d2).abs() < 1e-5);
    }

    #[test]
    fn gemm_transposed_operands() {
        // a: 2x3, b^T stored as 2x3 => a * b^T is 2x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0, 0.0, -1.0, 2.0, 1.0, 0.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, 1.0, Strided::row_major(&a, 3), Strided::transposed(&bt, 3), 0.0, &mut c);
        assert_eq!(c, [-2.0, 4.0, -2.0, 13.0]);
    }
}
