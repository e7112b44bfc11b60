//! Forward-mode automatic differentiation.
//!
//! [`Evaluation`] pairs a value with a fixed, compile-time number of partial
//! derivatives and overloads the arithmetic operators so that it can be used
//! in place of `f64`. Property code that should run on both plain numbers and
//! AD numbers is written against the [`Scalar`] trait.
//!
//! At the non-smooth points of `abs`, `min` and `max` the derivative of the
//! first argument is propagated (for `abs`, the derivative at zero is that of
//! the `+x` branch).

use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use thiserror::Error;

/// Elementary functions understood by [`Evaluation::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementary {
    Exp,
    Ln,
    Sqrt,
    Abs,
    Recip,
    Powf(f64),
}

impl fmt::Display for Elementary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Elementary::Exp => write!(f, "exp"),
            Elementary::Ln => write!(f, "ln"),
            Elementary::Sqrt => write!(f, "sqrt"),
            Elementary::Abs => write!(f, "abs"),
            Elementary::Recip => write!(f, "recip"),
            Elementary::Powf(e) => write!(f, "powf({e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("derivative index {index} out of range for {count} derivatives")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("{function} is undefined at {value}")]
    Domain { function: String, value: f64 },
}

impl AdError {
    fn domain(function: impl fmt::Display, value: f64) -> Self {
        AdError::Domain {
            function: function.to_string(),
            value,
        }
    }
}

/// A value together with `N` partial derivatives.
#[derive(Clone, Copy, PartialEq)]
pub struct Evaluation<const N: usize> {
    value: f64,
    derivs: [f64; N],
}

impl<const N: usize> fmt::Debug for Evaluation<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {:?}}}", self.value, self.derivs)
    }
}

impl<const N: usize> Default for Evaluation<N> {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl<const N: usize> From<f64> for Evaluation<N> {
    fn from(v: f64) -> Self {
        Self::constant(v)
    }
}

impl<const N: usize> Evaluation<N> {
    pub const NUM_DERIVS: usize = N;

    pub const fn constant(value: f64) -> Self {
        Self {
            value,
            derivs: [0.0; N],
        }
    }

    /// Independent variable `index` with the given value.
    pub fn variable(value: f64, index: usize) -> Result<Self, AdError> {
        if index >= N {
            return Err(AdError::IndexOutOfRange { index, count: N });
        }
        let mut derivs = [0.0; N];
        derivs[index] = 1.0;
        Ok(Self { value, derivs })
    }

    pub const fn from_parts(value: f64, derivs: [f64; N]) -> Self {
        Self { value, derivs }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    pub fn derivative(&self, index: usize) -> f64 {
        self.derivs[index]
    }

    #[inline]
    pub fn derivatives(&self) -> &[f64; N] {
        &self.derivs
    }

    pub fn set_value(&mut self, value: f64) {
        self.value = value;
    }

    /// Same value with all derivatives dropped.
    pub fn detach(&self) -> Self {
        Self::constant(self.value)
    }

    pub fn is_constant(&self) -> bool {
        self.derivs.iter().all(|d| *d == 0.0)
    }

    /// Applies `value -> f(value)` with `f'` given by `slope`.
    #[inline]
    fn chain(&self, value: f64, slope: f64) -> Self {
        let mut derivs = self.derivs;
        for d in &mut derivs {
            *d *= slope;
        }
        Self { value, derivs }
    }

    /// Checked evaluation of an elementary function.
    pub fn apply(self, f: Elementary) -> Result<Self, AdError> {
        let v = self.value;
        match f {
            Elementary::Exp => Ok(self.exp()),
            Elementary::Ln if v > 0.0 => Ok(self.ln()),
            Elementary::Sqrt if v > 0.0 || (v == 0.0 && self.is_constant()) => Ok(self.sqrt()),
            Elementary::Abs => Ok(self.abs()),
            Elementary::Recip if v != 0.0 => Ok(self.recip()),
            Elementary::Powf(e) if v > 0.0 || (e.fract() == 0.0 && (v != 0.0 || e >= 1.0)) => {
                Ok(self.powf(e))
            }
            _ => Err(AdError::domain(f, v)),
        }
    }

    /// Checked division.
    pub fn try_div(self, rhs: Self) -> Result<Self, AdError> {
        if rhs.value == 0.0 {
            return Err(AdError::domain("div", rhs.value));
        }
        Ok(self / rhs)
    }

    /// Checked `self^exponent` with both operands carrying derivatives.
    pub fn try_pow(self, exponent: Self) -> Result<Self, AdError> {
        if self.value <= 0.0 {
            return Err(AdError::domain("pow", self.value));
        }
        Ok(self.pow(exponent))
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }

    pub fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }

    pub fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        if self.is_constant() {
            return Self::constant(s);
        }
        self.chain(s, 0.5 / s)
    }

    pub fn abs(self) -> Self {
        if self.value < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.value;
        self.chain(r, -r * r)
    }

    pub fn powf(self, exponent: f64) -> Self {
        if exponent == 0.0 {
            return Self::constant(1.0);
        }
        let v = self.value.powf(exponent);
        self.chain(v, exponent * self.value.powf(exponent - 1.0))
    }

    /// `self^exponent`, differentiating through both operands.
    pub fn pow(self, exponent: Self) -> Self {
        let v = self.value.powf(exponent.value);
        let dbase = exponent.value * self.value.powf(exponent.value - 1.0);
        let dexp = v * self.value.ln();
        let mut derivs = [0.0; N];
        for (i, d) in derivs.iter_mut().enumerate() {
            let from_exp = if exponent.derivs[i] == 0.0 {
                0.0
            } else {
                dexp * exponent.derivs[i]
            };
            *d = dbase * self.derivs[i] + from_exp;
        }
        Self { value: v, derivs }
    }

    /// Smaller operand; ties select `self`.
    pub fn min(self, other: Self) -> Self {
        if other.value < self.value {
            other
        } else {
            self
        }
    }

    /// Larger operand; ties select `self`.
    pub fn max(self, other: Self) -> Self {
        if other.value > self.value {
            other
        } else {
            self
        }
    }
}

impl<const N: usize> Neg for Evaluation<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut out = self;
        out.value = -out.value;
        for d in &mut out.derivs {
            *d = -*d;
        }
        out
    }
}

impl<const N: usize> AddAssign for Evaluation<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.value += rhs.value;
        for (d, r) in self.derivs.iter_mut().zip(rhs.derivs.iter()) {
            *d += r;
        }
    }
}

impl<const N: usize> SubAssign for Evaluation<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.value -= rhs.value;
        for (d, r) in self.derivs.iter_mut().zip(rhs.derivs.iter()) {
            *d -= r;
        }
    }
}

impl<const N: usize> MulAssign for Evaluation<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        // (uv)' = u'v + uv'
        let u = self.value;
        let v = rhs.value;
        self.value *= v;
        for (d, r) in self.derivs.iter_mut().zip(rhs.derivs.iter()) {
            *d = *d * v + r * u;
        }
    }
}

impl<const N: usize> DivAssign for Evaluation<N> {
    #[inline]
    fn div_assign(&mut self, rhs: Self) {
        // (u/v)' = (u'v - uv') / v^2
        let u = self.value;
        let v = rhs.value;
        let v2 = v * v;
        self.value /= v;
        for (d, r) in self.derivs.iter_mut().zip(rhs.derivs.iter()) {
            *d = (*d * v - u * r) / v2;
        }
    }
}

impl<const N: usize> AddAssign<f64> for Evaluation<N> {
    #[inline]
    fn add_assign(&mut self, rhs: f64) {
        self.value += rhs;
    }
}

impl<const N: usize> SubAssign<f64> for Evaluation<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: f64) {
        self.value -= rhs;
    }
}

impl<const N: usize> MulAssign<f64> for Evaluation<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: f64) {
        self.value *= rhs;
        for d in &mut self.derivs {
            *d *= rhs;
        }
    }
}

impl<const N: usize> DivAssign<f64> for Evaluation<N> {
    #[inline]
    fn div_assign(&mut self, rhs: f64) {
        // Same rounding as dividing by constant(rhs).
        let v2 = rhs * rhs;
        self.value /= rhs;
        for d in &mut self.derivs {
            *d = (*d * rhs) / v2;
        }
    }
}

macro_rules! binary_ops {
    ($($trait:ident $method:ident $assign:ident;)*) => {$(
        impl<const N: usize> $trait for Evaluation<N> {
            type Output = Self;
            #[inline]
            fn $method(mut self, rhs: Self) -> Self {
                self.$assign(rhs);
                self
            }
        }

        impl<const N: usize> $trait<f64> for Evaluation<N> {
            type Output = Self;
            #[inline]
            fn $method(mut self, rhs: f64) -> Self {
                self.$assign(rhs);
                self
            }
        }

        impl<const N: usize> $trait<Evaluation<N>> for f64 {
            type Output = Evaluation<N>;
            #[inline]
            fn $method(self, rhs: Evaluation<N>) -> Evaluation<N> {
                let mut lhs = Evaluation::constant(self);
                lhs.$assign(rhs);
                lhs
            }
        }
    )*};
}

binary_ops! {
    Add add add_assign;
    Sub sub sub_assign;
    Mul mul mul_assign;
    Div div div_assign;
}

impl<const N: usize> std::iter::Sum for Evaluation<N> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::constant(0.0), |a, b| a + b)
    }
}

/// Arithmetic shared by `f64` and [`Evaluation`].
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn min(self, other: Self) -> Self;
    fn max(self, other: Self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl<const N: usize> Scalar for Evaluation<N> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        Evaluation::exp(self)
    }
    fn ln(self) -> Self {
        Evaluation::ln(self)
    }
    fn sqrt(self) -> Self {
        Evaluation::sqrt(self)
    }
    fn abs(self) -> Self {
        Evaluation::abs(self)
    }
    fn min(self, other: Self) -> Self {
        Evaluation::min(self, other)
    }
    fn max(self, other: Self) -> Self {
        Evaluation::max(self, other)
    }
}

/// Three partial derivatives: one per cell primary variable.
pub type Eval3 = Evaluation<3>;
/// Four partial derivatives: one per standard-well primary variable.
pub type Eval4 = Evaluation<4>;
