//! Forward-mode dual numbers `a + εb` with `ε² = 0`.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub primal: f64,
    pub tangent: f64,
}

impl Dual {
    pub fn new(primal: f64, tangent: f64) -> Self {
        Self { primal, tangent }
    }

    /// A constant: zero tangent.
    pub fn constant(primal: f64) -> Self {
        Self::new(primal, 0.0)
    }

    /// The differentiation variable: unit tangent.
    pub fn variable(primal: f64) -> Self {
        Self::new(primal, 1.0)
    }

    pub fn tanh(self) -> Self {
        let t = self.primal.tanh();
        Self::new(t, (1.0 - t * t) * self.tangent)
    }

    pub fn exp(self) -> Self {
        let e = self.primal.exp();
        Self::new(e, e * self.tangent)
    }

    pub fn scale(self, c: f64) -> Self {
        Self::new(c * self.primal, c * self.tangent)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.primal + rhs.primal, self.tangent + rhs.tangent)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.primal - rhs.primal, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.primal * rhs.primal,
            self.primal * rhs.tangent + self.tangent * rhs.primal,
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.primal, -self.tangent)
    }
}
