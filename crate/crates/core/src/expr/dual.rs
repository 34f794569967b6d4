use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// A first-order dual number `value + derivative·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub value: f64,
    pub derivative: f64,
}

impl Dual {
    pub const fn new(value: f64, derivative: f64) -> Self {
        Dual { value, derivative }
    }

    pub const fn constant(value: f64) -> Self {
        Dual::new(value, 0.0)
    }

    /// Seeds an independent variable (`d/dv v = 1`).
    pub const fn variable(value: f64) -> Self {
        Dual::new(value, 1.0)
    }

    pub fn recip(self) -> Self {
        let inv = 1.0 / self.value;
        Dual::new(inv, -self.derivative * inv * inv)
    }

    pub fn ln(self) -> Self {
        Dual::new(self.value.ln(), self.derivative / self.value)
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        Dual::new(e, self.derivative * e)
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.derivative.is_finite()
    }
}

impl fmt::Display for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}ε", self.value, self.derivative)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.derivative + rhs.derivative)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.derivative - rhs.derivative)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.value * rhs.value, self.value * rhs.derivative + self.derivative * rhs.value)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let v = self.value / rhs.value;
        Dual::new(v, (self.derivative - v * rhs.derivative) / rhs.value)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.derivative)
    }
}

/// Scalar types an [`Expression`](super::Expression) can be evaluated over.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn from_f64(c: f64) -> Self;
    fn value(&self) -> f64;
    /// True when the scalar carries no infinitesimal part.
    fn is_constant(&self) -> bool;
    fn finite(&self) -> bool;
    /// `self^exponent` for a positive base.
    fn powf_positive(self, exponent: Self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
    fn powf_positive(self, exponent: Self) -> Self {
        self.powf(exponent)
    }
}

impl Scalar for Dual {
    fn from_f64(c: f64) -> Self {
        Dual::constant(c)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn is_constant(&self) -> bool {
        self.derivative == 0.0
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
    fn powf_positive(self, exponent: Self) -> Self {
        // a^b = exp(b ln a)
        let v = self.value.powf(exponent.value);
        let d = v * (exponent.derivative * self.value.ln() + exponent.value * self.derivative / self.value);
        Dual::new(v, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_and_nilpotent_part() {
        let a = Dual::new(2.0, 3.0);
        let b = Dual::new(5.0, 7.0);
        assert_eq!(a * b, Dual::new(10.0, 2.0 * 7.0 + 3.0 * 5.0));
        let eps = Dual::new(0.0, 1.0);
        assert_eq!(eps * eps, Dual::new(0.0, 0.0));
    }

    #[test]
    fn quotient_matches_recip_product() {
        let a = Dual::new(1.5, -0.25);
        let b = Dual::new(4.0, 2.0);
        let q = a / b;
        let r = a * b.recip();
        assert!((q.value - r.value).abs() < 1e-15);
        assert!((q.derivative - r.derivative).abs() < 1e-15);
    }

    #[test]
    fn real_power_derivative() {
        // d/dx x^2.5 at 4 = 2.5 * 4^1.5 = 20
        let p = Dual::variable(4.0).powf_positive(Dual::constant(2.5));
        assert!((p.value - 32.0).abs() < 1e-12);
        assert!((p.derivative - 20.0).abs() < 1e-12);
        // d/dy 2^y at y=3 = 8 ln 2
        let q = Dual::constant(2.0).powf_positive(Dual::variable(3.0));
        assert!((q.derivative - 8.0 * 2f64.ln()).abs() < 1e-12);
    }
}
