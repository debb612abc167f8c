//! Forward-mode dual numbers with one partial slot per active variable.

use crate::Real;

use super::EvalError;

/// A value together with its partial derivatives against a fixed set of
/// active variables. Arithmetic applies the chain rule exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct DualValue<T> {
    pub value: T,
    pub partials: Vec<T>,
}

impl<T: Real> DualValue<T> {
    /// A constant: value with all partials zero.
    pub fn constant(value: T, n_partials: usize) -> Self {
        DualValue {
            value,
            partials: vec![T::zero(); n_partials],
        }
    }

    /// A variable seeded with ∂/∂(variable `seed`) = 1.
    pub fn variable(value: T, n_partials: usize, seed: usize) -> Self {
        let mut partials = vec![T::zero(); n_partials];
        partials[seed] = T::one();
        DualValue { value, partials }
    }

    fn map2(&self, rhs: &Self, value: T, f: impl Fn(T, T) -> T) -> Self {
        let partials = self
            .partials
            .iter()
            .zip(&rhs.partials)
            .map(|(&a, &b)| f(a, b))
            .collect();
        DualValue { value, partials }
    }

    fn map1(&self, value: T, scale: T) -> Self {
        let partials = self.partials.iter().map(|&a| a * scale).collect();
        DualValue { value, partials }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.map2(rhs, self.value + rhs.value, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.map2(rhs, self.value - rhs.value, |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let (x, y) = (self.value, rhs.value);
        self.map2(rhs, x * y, |a, b| a * y + x * b)
    }

    pub fn div(&self, rhs: &Self) -> Result<Self, EvalError> {
        if rhs.value == T::zero() {
            return Err(EvalError::domain("division by zero"));
        }
        let (x, y) = (self.value, rhs.value);
        Ok(self.map2(rhs, x / y, |a, b| (a * y - x * b) / (y * y)))
    }

    pub fn neg(&self) -> Self {
        self.map1(-self.value, -T::one())
    }

    pub fn powi(&self, k: i32) -> Result<Self, EvalError> {
        if self.value == T::zero() && k < 0 {
            return Err(EvalError::domain("zero raised to a negative power"));
        }
        if k == 0 {
            return Ok(Self::constant(T::one(), self.partials.len()));
        }
        let value = self.value.powi(k);
        let scale = T::from_i32(k).expect("i32 exponent") * self.value.powi(k - 1);
        Ok(self.map1(value, scale))
    }

    pub fn sin(&self) -> Self {
        self.map1(self.value.sin(), self.value.cos())
    }

    pub fn cos(&self) -> Self {
        self.map1(self.value.cos(), -self.value.sin())
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.map1(e, e)
    }

    pub fn ln(&self) -> Result<Self, EvalError> {
        if self.value <= T::zero() {
            return Err(EvalError::domain("log of non-positive argument"));
        }
        Ok(self.map1(self.value.ln(), T::one() / self.value))
    }

    pub fn sqrt(&self) -> Result<Self, EvalError> {
        if self.value < T::zero() {
            return Err(EvalError::domain("sqrt of negative argument"));
        }
        if self.value == T::zero() {
            return Err(EvalError::domain("sqrt derivative at zero"));
        }
        let s = self.value.sqrt();
        Ok(self.map1(s, T::lit(0.5) / s))
    }

    pub fn tanh(&self) -> Self {
        let th = self.value.tanh();
        self.map1(th, T::one() - th * th)
    }

    pub fn atan(&self) -> Self {
        self.map1(self.value.atan(), T::one() / (T::one() + self.value * self.value))
    }
}
