//! Complex numbers carrying an extra natural-log exponent.
//!
//! A [`Scaled`] value represents `mantissa * exp(log_scale)`. It is used
//! wherever evanescent layers push Bessel/Hankel values past the range of
//! `f64` (|Im z| of a few hundred is routine for deep potentials).

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

const RENORM_HI: f64 = 1e100;
const RENORM_LO: f64 = 1e-100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled {
    pub mantissa: Complex64,
    pub log_scale: f64,
}

impl Scaled {
    pub const ZERO: Scaled = Scaled {
        mantissa: Complex64::new(0.0, 0.0),
        log_scale: 0.0,
    };

    pub fn new(mantissa: Complex64, log_scale: f64) -> Self {
        Self {
            mantissa,
            log_scale,
        }
    }

    pub fn from_complex(z: Complex64) -> Self {
        Self::new(z, 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.re == 0.0 && self.mantissa.im == 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.mantissa.is_finite() && self.log_scale.is_finite()
    }

    /// Unscaled value; may underflow to zero or overflow to infinity.
    pub fn to_complex(self) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        if self.log_scale == 0.0 {
            return self.mantissa;
        }
        let n = self.normalized();
        n.mantissa * n.log_scale.exp()
    }

    /// Value expressed relative to `exp(log_scale)`.
    pub fn mantissa_at(self, log_scale: f64) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        if self.log_scale == log_scale {
            return self.mantissa;
        }
        let n = self.normalized();
        n.mantissa * (n.log_scale - log_scale).exp()
    }

    /// `ln |value|`; `-inf` for zero.
    pub fn ln_abs(&self) -> f64 {
        if self.is_zero() {
            f64::NEG_INFINITY
        } else {
            self.log_scale + self.mantissa.norm().ln()
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_complex().norm()
    }

    /// Mantissa magnitude brought to order one.
    pub fn normalized(self) -> Self {
        let m = self.mantissa.re.abs().max(self.mantissa.im.abs());
        if m == 0.0 || !m.is_finite() {
            return self;
        }
        let e = m.ln();
        Self::new(self.mantissa / m, self.log_scale + e)
    }

    /// Renormalize only when the mantissa drifts far from unity.
    pub fn tidy(self) -> Self {
        let m = self.mantissa.re.abs().max(self.mantissa.im.abs());
        if m > RENORM_HI || (m < RENORM_LO && m > 0.0) {
            self.normalized()
        } else {
            self
        }
    }

    pub fn conj(self) -> Self {
        Self::new(self.mantissa.conj(), self.log_scale)
    }

    pub fn scale(self, c: Complex64) -> Self {
        Self::new(self.mantissa * c, self.log_scale).tidy()
    }
}

impl From<Complex64> for Scaled {
    fn from(z: Complex64) -> Self {
        Self::from_complex(z)
    }
}

impl Mul for Scaled {
    type Output = Scaled;
    fn mul(self, rhs: Scaled) -> Scaled {
        Scaled::new(self.mantissa * rhs.mantissa, self.log_scale + rhs.log_scale).tidy()
    }
}

impl Mul<Complex64> for Scaled {
    type Output = Scaled;
    fn mul(self, rhs: Complex64) -> Scaled {
        self.scale(rhs)
    }
}

impl Mul<f64> for Scaled {
    type Output = Scaled;
    fn mul(self, rhs: f64) -> Scaled {
        self.scale(Complex64::new(rhs, 0.0))
    }
}

impl Div for Scaled {
    type Output = Scaled;
    fn div(self, rhs: Scaled) -> Scaled {
        let a = self.normalized();
        let b = rhs.normalized();
        Scaled::new(a.mantissa / b.mantissa, a.log_scale - b.log_scale).tidy()
    }
}

impl Add for Scaled {
    type Output = Scaled;
    fn add(self, rhs: Scaled) -> Scaled {
        if self.is_zero() {
            return rhs;
        }
        if rhs.is_zero() {
            return self;
        }
        let d = self.log_scale - rhs.log_scale;
        if d >= 0.0 {
            Scaled::new(self.mantissa + rhs.mantissa * (-d).exp(), self.log_scale).tidy()
        } else {
            Scaled::new(self.mantissa * d.exp() + rhs.mantissa, rhs.log_scale).tidy()
        }
    }
}

impl Neg for Scaled {
    type Output = Scaled;
    fn neg(self) -> Scaled {
        Scaled::new(-self.mantissa, self.log_scale)
    }
}

impl Sub for Scaled {
    type Output = Scaled;
    fn sub(self, rhs: Scaled) -> Scaled {
        self + (-rhs)
    }
}
