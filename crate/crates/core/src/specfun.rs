//! Spherical Bessel and Hankel functions of complex argument, plus
//! Legendre polynomials.
//!
//! `j_l` is generated by Miller's downward recurrence on ratios and
//! normalized against the closed forms of `j_0` or `j_1`. `h_l^{(1)}` is
//! generated by upward recurrence in the upper half plane (where it is the
//! dominant solution as `l` grows) and by reflection below the real axis.
//!
//! Once `|Im z|` exceeds [`SCALE_THRESHOLD`] every value carries an explicit
//! natural-log exponent ([`SphericalBasisEval::log_scale`]) so that layers
//! with potentials of thousands of eV never overflow.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scaled::Scaled;

/// Largest partial-wave order any caller may request.
pub const L_MAX: usize = 64;

/// `|Im z|` above which values are returned in scaled form.
pub const SCALE_THRESHOLD: f64 = 30.0;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// One function of the spherical basis at order `l` and argument `z`.
///
/// The true value is `value * exp(log_scale)`, likewise for `derivative`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalBasisEval {
    pub order: usize,
    pub argument: Complex64,
    pub value: Complex64,
    pub derivative: Complex64,
    pub log_scale: f64,
}

impl SphericalBasisEval {
    pub fn scaled_value(&self) -> Scaled {
        Scaled::new(self.value, self.log_scale)
    }

    pub fn scaled_derivative(&self) -> Scaled {
        Scaled::new(self.derivative, self.log_scale)
    }

    pub fn unscaled_value(&self) -> Complex64 {
        self.scaled_value().to_complex()
    }

    pub fn unscaled_derivative(&self) -> Complex64 {
        self.scaled_derivative().to_complex()
    }
}

fn check_order(l: usize) -> Result<()> {
    if l > L_MAX {
        return Err(Error::Domain(format!(
            "partial-wave order {l} exceeds the cap {L_MAX}"
        )));
    }
    Ok(())
}

fn check_argument(z: Complex64) -> Result<()> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("non-finite argument {z}")));
    }
    Ok(())
}

/// `j_l(z)` and `j_l'(z)`.
pub fn sph_bessel_j(l: usize, z: Complex64) -> Result<SphericalBasisEval> {
    Ok(sph_bessel_j_seq(l, z)?.pop().expect("non-empty sequence"))
}

/// `j_0 ..= j_{l_max}` with derivatives.
pub fn sph_bessel_j_seq(l_max: usize, z: Complex64) -> Result<Vec<SphericalBasisEval>> {
    check_order(l_max)?;
    check_argument(z)?;
    let raw = j_raw(l_max + 1, z);
    let base = j_base_scale(z);
    Ok((0..=l_max)
        .map(|l| {
            let d = derivative_symmetric(&raw, l);
            pack(l, z, raw[l], d, base)
        })
        .collect())
}

/// `h_l^{(1)}(z)` and its derivative. `z = 0` is a pole.
pub fn sph_hankel1(l: usize, z: Complex64) -> Result<SphericalBasisEval> {
    Ok(sph_hankel1_seq(l, z)?.pop().expect("non-empty sequence"))
}

/// `h^{(1)}_0 ..= h^{(1)}_{l_max}` with derivatives.
pub fn sph_hankel1_seq(l_max: usize, z: Complex64) -> Result<Vec<SphericalBasisEval>> {
    check_order(l_max)?;
    check_argument(z)?;
    if z == ZERO {
        return Err(Error::Domain(
            "spherical Hankel function has a pole at z = 0".into(),
        ));
    }
    let raw = h1_raw(l_max + 1, z);
    let base = h1_base_scale(z);
    Ok((0..=l_max)
        .map(|l| {
            let d = derivative_symmetric(&raw, l);
            pack(l, z, raw[l], d, base)
        })
        .collect())
}

/// `h_l^{(2)}(z) = 2 j_l(z) - h_l^{(1)}(z)`.
pub fn sph_hankel2(l: usize, z: Complex64) -> Result<SphericalBasisEval> {
    let j = sph_bessel_j(l, z)?;
    let h = sph_hankel1(l, z)?;
    if z.im == 0.0 {
        return Ok(SphericalBasisEval {
            value: h.value.conj(),
            derivative: h.derivative.conj(),
            ..h
        });
    }
    let v = j.scaled_value() * 2.0 - h.scaled_value();
    let d = j.scaled_derivative() * 2.0 - h.scaled_derivative();
    Ok(pack(l, z, v, d, j.log_scale))
}

/// `y_l(z) = (h_l^{(1)}(z) - j_l(z)) / i`.
pub fn sph_bessel_y(l: usize, z: Complex64) -> Result<SphericalBasisEval> {
    let j = sph_bessel_j(l, z)?;
    let h = sph_hankel1(l, z)?;
    if z.im == 0.0 {
        return Ok(SphericalBasisEval {
            value: Complex64::new(h.value.im, 0.0),
            derivative: Complex64::new(h.derivative.im, 0.0),
            ..h
        });
    }
    let v = (h.scaled_value() - j.scaled_value()) * (-I);
    let d = (h.scaled_derivative() - j.scaled_derivative()) * (-I);
    Ok(pack(l, z, v, d, j.log_scale))
}

/// Legendre polynomial `P_l(x)` for `|x| <= 1`.
pub fn legendre_p(l: usize, x: f64) -> Result<f64> {
    let (p, _) = legendre_p_seq(l, x)?;
    Ok(p[l])
}

/// `P_0 ..= P_{l_max}` at `x` together with `dP_l/dx`.
pub fn legendre_p_seq(l_max: usize, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "Legendre argument {x} outside [-1, 1]"
        )));
    }
    let mut p = Vec::with_capacity(l_max + 1);
    let mut dp = Vec::with_capacity(l_max + 1);
    p.push(1.0);
    dp.push(0.0);
    if l_max >= 1 {
        p.push(x);
        dp.push(1.0);
    }
    for l in 1..l_max {
        let lf = l as f64;
        let next = ((2.0 * lf + 1.0) * x * p[l] - lf * p[l - 1]) / (lf + 1.0);
        p.push(next);
        dp.push(dp[l - 1] + (2.0 * lf + 1.0) * p[l]);
    }
    Ok((p, dp))
}

fn j_base_scale(z: Complex64) -> f64 {
    let y = z.im.abs();
    if y > SCALE_THRESHOLD {
        y
    } else {
        0.0
    }
}

fn h1_base_scale(z: Complex64) -> f64 {
    if z.im.abs() > SCALE_THRESHOLD {
        -z.im
    } else {
        0.0
    }
}

/// `f_l' = (l f_{l-1} - (l+1) f_{l+1}) / (2l+1)`, valid for every
/// spherical Bessel family and free of any division by `z`.
fn derivative_symmetric(f: &[Scaled], l: usize) -> Scaled {
    if l == 0 {
        return -f[1];
    }
    let lf = l as f64;
    (f[l - 1] * lf - f[l + 1] * (lf + 1.0)) * (1.0 / (2.0 * lf + 1.0))
}

/// Choose the exponent under which value and derivative are reported.
fn pack(order: usize, z: Complex64, v: Scaled, d: Scaled, base: f64) -> SphericalBasisEval {
    let plain = |s: &Scaled| {
        let m = s.mantissa.re.abs().max(s.mantissa.im.abs());
        m == 0.0 || (s.log_scale == base && m > 1e-290 && m < 1e290)
    };
    if plain(&v) && plain(&d) {
        let at = |s: &Scaled| if s.is_zero() { ZERO } else { s.mantissa };
        return SphericalBasisEval {
            order,
            argument: z,
            value: at(&v),
            derivative: at(&d),
            log_scale: base,
        };
    }
    let fits = |s: f64| {
        let lv = v.ln_abs() - s;
        let ld = d.ln_abs() - s;
        let top = lv.max(ld);
        top < 690.0 && (top > -690.0 || top == f64::NEG_INFINITY)
    };
    let log_scale = if fits(base) {
        base
    } else {
        v.ln_abs().max(d.ln_abs())
    };
    SphericalBasisEval {
        order,
        argument: z,
        value: v.mantissa_at(log_scale),
        derivative: d.mantissa_at(log_scale),
        log_scale,
    }
}

/// `(sin z, cos z) * exp(-shift)` without intermediate overflow.
fn sin_cos_shifted(z: Complex64, shift: f64) -> (Complex64, Complex64) {
    let (x, y) = (z.re, z.im);
    // e^{iz} = e^{-y} e^{ix},  e^{-iz} = e^{y} e^{-ix}
    let ep = Complex64::from_polar((-y - shift).exp(), x);
    let em = Complex64::from_polar((y - shift).exp(), -x);
    ((ep - em) / (2.0 * I), (ep + em) / 2.0)
}

/// `j_0 ..= j_{n_max}` as scaled values.
fn j_raw(n_max: usize, z: Complex64) -> Vec<Scaled> {
    let mut out = vec![Scaled::ZERO; n_max + 1];
    if z == ZERO {
        out[0] = Scaled::from_complex(ONE);
        return out;
    }
    let az = z.norm();
    if az < 0.5 {
        // Miller normalization against j_0 is fine here too, but the series
        // is exact to rounding for every order at small |z|.
        for (l, slot) in out.iter_mut().enumerate() {
            *slot = series_scaled(l, z);
        }
        return out;
    }

    let base = j_base_scale(z);
    let (s, c) = sin_cos_shifted(z, base);
    let j0 = Scaled::new(s / z, base);
    let j1 = Scaled::new((s / z - c) / z, base);

    // ratios r_l = j_l / j_{l-1}, l = 1..=n_max
    let n_start = n_max.max(az.ceil() as usize) + 30 + (4.0 * az.cbrt()).ceil() as usize;
    let mut ratios = vec![ZERO; n_max + 1];
    let mut r = z / (2 * n_start + 3) as f64;
    for l in (1..=n_start).rev() {
        let mut den = (2 * l + 1) as f64 / z - r;
        if den == ZERO {
            den = Complex64::new(1e-300, 0.0);
        }
        r = ONE / den;
        if l <= n_max {
            ratios[l] = r;
        }
    }

    let mut t = vec![Scaled::from_complex(ONE); n_max + 1];
    for l in 1..=n_max {
        t[l] = t[l - 1] * ratios[l];
    }
    let factor = if n_max == 0 || j0.ln_abs() >= j1.ln_abs() {
        j0 / t[0]
    } else {
        j1 / t[1]
    };
    for l in 0..=n_max {
        out[l] = t[l] * factor;
    }
    out
}

fn series_scaled(l: usize, z: Complex64) -> Scaled {
    // z^l/(2l+1)!! underflows past l ~ 60 for tiny |z|; keep the exponent.
    let mut lead = Scaled::from_complex(ONE);
    for k in 0..l {
        lead = lead * (z / (2 * k + 3) as f64);
    }
    let w = -z * z / 2.0;
    let mut term = ONE;
    let mut sum = ONE;
    for k in 1..60 {
        term *= w / (k as f64 * (2 * l + 2 * k + 1) as f64);
        sum += term;
        if term.norm() < 1e-17 * sum.norm() {
            break;
        }
    }
    lead * sum
}

/// `h^{(1)}_0 ..= h^{(1)}_{n_max}` as scaled values, `z != 0`.
fn h1_raw(n_max: usize, z: Complex64) -> Vec<Scaled> {
    if z.im < 0.0 {
        // h1(z) = conj(h2(conj z)) = conj(2 j(conj z) - h1(conj z))
        let w = z.conj();
        let jw = j_raw(n_max, w);
        let hw = h1_raw(n_max, w);
        return jw
            .iter()
            .zip(&hw)
            .map(|(&j, &h)| (j * 2.0 - h).conj())
            .collect();
    }
    let base = h1_base_scale(z);
    let e = Complex64::from_polar((-z.im - base).exp(), z.re);
    let mut out = Vec::with_capacity(n_max + 1);
    let h0 = -I * e / z;
    let h1 = e * (-ONE / z - I / (z * z));
    out.push(Scaled::new(h0, base));
    if n_max == 0 {
        return out;
    }
    out.push(Scaled::new(h1, base));
    let (mut prev, mut cur, mut log) = (h0, h1, base);
    for l in 1..n_max {
        let next = (2 * l + 1) as f64 / z * cur - prev;
        prev = cur;
        cur = next;
        let m = cur.re.abs().max(cur.im.abs());
        if m > 1e150 {
            prev /= m;
            cur /= m;
            log += m.ln();
        }
        out.push(Scaled::new(cur, log));
    }
    out
}
