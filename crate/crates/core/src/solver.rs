//! Per-partial-wave boundary matching and the total cross section.
//!
//! Every region carries `A_l j_l(k r) + B_l h_l^{(1)}(k r)` for each `l`;
//! across an interface both `psi` and `(1/m) dpsi/dr` are continuous. The
//! background coefficients are `(1, a_l)`; the innermost region has no
//! `h_l` component.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{validate, LayerStack, TwoLayerShorthand};
use crate::scaled::Scaled;
use crate::specfun::{sph_bessel_j, sph_hankel1, SphericalBasisEval, L_MAX};

/// Per-term threshold of the adaptive truncation, in units of `4 pi / k0^2`.
pub const TERM_THRESHOLD: f64 = 1e-5;
/// Orders `0..=MIN_ORDERS` are always evaluated.
pub const MIN_ORDERS: usize = 4;
/// Equilibrated condition number above which the matching system is refused.
pub const CONDITION_LIMIT: f64 = 1e12;
/// `|E - V|` in eV above which a layer is handled only by the scaled
/// transfer path.
pub const EXTREME_POTENTIAL: f64 = 100.0;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Coefficients of one region in the `(j_l, h_l^{(1)})` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionCoefficients {
    /// Coefficient of `j_l` (`1` outside, `b_l` in the shell, `d_l` in the core).
    pub regular: Scaled,
    /// Coefficient of `h_l^{(1)}` (`a_l` outside, `c_l` in the shell, zero in the core).
    pub outgoing: Scaled,
}

impl RegionCoefficients {
    fn new(regular: Scaled, outgoing: Scaled) -> Self {
        Self { regular, outgoing }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialWaveSolution {
    pub l: usize,
    pub a_scat: Complex64,
    /// Index 0 is the background, index `i` is `layers[i - 1]`.
    pub regions: Vec<RegionCoefficients>,
}

impl PartialWaveSolution {
    /// `(b_l, c_l)` of the outermost layer.
    pub fn shell_coefficients(&self) -> (Complex64, Complex64) {
        let r = &self.regions[1];
        (r.regular.to_complex(), r.outgoing.to_complex())
    }

    /// `d_l` of the innermost region (may underflow to zero behind deep barriers).
    pub fn innermost_coefficient(&self) -> Complex64 {
        self.regions
            .last()
            .expect("at least one region")
            .regular
            .to_complex()
    }

    /// `| |1 + 2 a_l| - 1 |`.
    pub fn unitarity_residual(&self) -> f64 {
        ((ONE + 2.0 * self.a_scat).norm() - 1.0).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossSectionResult {
    /// Total cross section in nm^2.
    pub sigma: f64,
    /// `sigma / (pi a^2)`.
    pub sigma_normalized: f64,
    /// `(l, 4 pi / k0^2 (2l+1) |a_l|^2)`.
    pub per_l_terms: Vec<(usize, f64)>,
    pub l_max_used: usize,
    #[serde(skip)]
    pub coefficients: Vec<Complex64>,
    #[serde(skip)]
    pub k0: f64,
}

impl CrossSectionResult {
    /// `-(4 pi / k0^2) sum (2l+1) Re a_l`, equal to `sigma` for elastic scattering.
    pub fn optical_theorem_sigma(&self) -> f64 {
        -4.0 * PI / (self.k0 * self.k0)
            * self
                .coefficients
                .iter()
                .enumerate()
                .map(|(l, a)| (2 * l + 1) as f64 * a.re)
                .sum::<f64>()
    }

    pub fn max_unitarity_residual(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|a| ((ONE + 2.0 * a).norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_coefficient(&self, orders: std::ops::RangeInclusive<usize>) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(l, _)| orders.contains(l))
            .map(|(_, a)| a.norm())
            .fold(0.0, f64::max)
    }
}

fn ensure_valid(stack: &LayerStack) -> Result<()> {
    let v = validate(stack);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidStack(v))
    }
}

fn ensure_order(l: usize) -> Result<()> {
    if l > L_MAX {
        return Err(Error::Domain(format!("order {l} exceeds the cap {L_MAX}")));
    }
    Ok(())
}

fn ensure_nondegenerate(stack: &LayerStack) -> Result<()> {
    for region in 0..stack.region_count() {
        if stack.wavenumber(region).is_degenerate() {
            return Err(Error::Degenerate(format!(
                "E equals V in region {region}; the spherical basis collapses at k = 0"
            )));
        }
    }
    Ok(())
}

/// `k / m` of a region, the factor multiplying `f'(kr)` in the flux condition.
fn flux_factor(stack: &LayerStack, region: usize) -> Complex64 {
    stack.wavenumber(region).value() / stack.medium(region).effective_mass
}

struct Basis {
    j: SphericalBasisEval,
    h: SphericalBasisEval,
}

fn basis(l: usize, x: Complex64) -> Result<Basis> {
    Ok(Basis {
        j: sph_bessel_j(l, x)?,
        h: sph_hankel1(l, x)?,
    })
}

/// Closed-form shell coefficients assuming `a_l = 0`:
/// the shell wave alone reproduces the incident `j_l(k0 r)` at `r = a`.
pub fn shell_coefficients_approx(l: usize, stack: &LayerStack) -> Result<(Complex64, Complex64)> {
    let p = approx_parts(l, stack)?;
    let den = p.denominator_explicit;
    Ok(((p.b_num / den).to_complex(), (p.c_num / den).to_complex()))
}

/// Denominator of the closed-form shell coefficients evaluated directly and
/// through the Wronskian `j h' - h j' = i / x^2`.
pub fn approx_denominators(l: usize, stack: &LayerStack) -> Result<(Complex64, Complex64)> {
    let p = approx_parts(l, stack)?;
    Ok((
        p.denominator_explicit.to_complex(),
        p.denominator_wronskian.to_complex(),
    ))
}

struct ApproxParts {
    b_num: Scaled,
    c_num: Scaled,
    denominator_explicit: Scaled,
    denominator_wronskian: Scaled,
}

fn approx_parts(l: usize, stack: &LayerStack) -> Result<ApproxParts> {
    ensure_order(l)?;
    if stack.layers.is_empty() {
        return Err(Error::Domain(
            "closed-form shell coefficients need a shell layer".into(),
        ));
    }
    let ks = stack.wavenumber(1);
    if ks.is_degenerate() {
        return Err(Error::Degenerate("shell wavenumber is zero".into()));
    }
    let a = stack.radius();
    let x1 = Complex64::new(stack.k0() * a, 0.0);
    let x2 = ks.value() * a;
    let y1 = stack.background.effective_mass * a;
    let y2 = stack.layers[0].medium.effective_mass * a;

    let out = basis(l, x1)?;
    let sh = basis(l, x2)?;
    let (j1, j1p) = (out.j.scaled_value(), out.j.scaled_derivative());
    let (j2, j2p) = (sh.j.scaled_value(), sh.j.scaled_derivative());
    let (h2, h2p) = (sh.h.scaled_value(), sh.h.scaled_derivative());
    let c21 = x2 * y1;
    let c12 = x1 * y2;

    let b_num = j1 * h2p * c21 - h2 * j1p * c12;
    let c_num = j2 * j1p * c12 - j1 * j2p * c21;
    let denominator_explicit = (j2 * h2p - h2 * j2p) * c21;
    let denominator_wronskian = Scaled::from_complex(c21 * I / (x2 * x2));
    Ok(ApproxParts {
        b_num,
        c_num,
        denominator_explicit,
        denominator_wronskian,
    })
}

/// `a_l` of a two-layer particle from the closed-form expression in the
/// shorthand variables. An independent check on [`solve_two_layer`].
pub fn scattering_coefficient_closed_form(stack: &LayerStack, l: usize) -> Result<Complex64> {
    ensure_valid(stack)?;
    ensure_order(l)?;
    ensure_nondegenerate(stack)?;
    let s = TwoLayerShorthand::from_stack(stack)?;
    let b1 = basis(l, s.x1)?;
    let b2 = basis(l, s.x2)?;
    let b3 = basis(l, s.x3)?;
    let j4 = sph_bessel_j(l, s.x4)?;

    let (j1, j1p, h1, h1p) = (
        b1.j.scaled_value(),
        b1.j.scaled_derivative(),
        b1.h.scaled_value(),
        b1.h.scaled_derivative(),
    );
    let (j2, j2p, h2, h2p) = (
        b2.j.scaled_value(),
        b2.j.scaled_derivative(),
        b2.h.scaled_value(),
        b2.h.scaled_derivative(),
    );
    let (j3, j3p, h3, h3p) = (
        b3.j.scaled_value(),
        b3.j.scaled_derivative(),
        b3.h.scaled_value(),
        b3.h.scaled_derivative(),
    );
    let (j4v, j4p) = (j4.scaled_value(), j4.scaled_derivative());
    let re = |v: f64| Complex64::new(v, 0.0);

    let a_l = j4v * (j2 * h3p - h2 * j3p) * (re(s.y2) * s.x3 * s.y4);
    let b_l = j4p * (h2 * j3 - j2 * h3) * (re(s.y2 * s.y3) * s.x4);
    let c_l = j4v * (h2p * j3p - h3p * j2p) * (s.x2 * s.x3 * s.y4);
    let d_l = j4p * (j2p * h3 - h2p * j3) * (s.x2 * s.y3 * s.x4);
    let ab = a_l + b_l;
    let cd = c_l + d_l;
    let num = j1p * ab * s.x1 + j1 * cd * s.y1;
    let den = h1p * ab * s.x1 + h1 * cd * s.y1;
    Ok(-(num / den).to_complex())
}

/// Two-layer particle: the 4x4 matching system at `r = a` and `r = ac`,
/// equilibrated and solved with partial pivoting.
pub fn solve_two_layer(stack: &LayerStack, l: usize) -> Result<PartialWaveSolution> {
    ensure_valid(stack)?;
    ensure_order(l)?;
    if stack.layers.len() != 2 {
        return Err(Error::Domain(format!(
            "solve_two_layer needs exactly 2 layers, got {}",
            stack.layers.len()
        )));
    }
    ensure_nondegenerate(stack)?;
    let a = stack.layers[0].outer_radius;
    let ac = stack.layers[1].outer_radius;
    let (k0, ks, kc) = (
        stack.wavenumber(0).value(),
        stack.wavenumber(1).value(),
        stack.wavenumber(2).value(),
    );
    let (f0, fs, fc) = (
        flux_factor(stack, 0),
        flux_factor(stack, 1),
        flux_factor(stack, 2),
    );

    let at_a_out = basis(l, k0 * a)?;
    let at_a_in = basis(l, ks * a)?;
    let at_c_out = basis(l, ks * ac)?;
    let at_c_in = sph_bessel_j(l, kc * ac)?;

    let v = |e: &SphericalBasisEval| e.unscaled_value();
    let d = |e: &SphericalBasisEval| e.unscaled_derivative();
    let z = Complex64::new(0.0, 0.0);

    // unknowns (a_l, b_l, c_l, d_l); flux rows multiplied by the radius
    #[rustfmt::skip]
    let m = Matrix4::new(
        v(&at_a_out.h), -v(&at_a_in.j), -v(&at_a_in.h), z,
        f0 * a * d(&at_a_out.h), -fs * a * d(&at_a_in.j), -fs * a * d(&at_a_in.h), z,
        z, v(&at_c_out.j), v(&at_c_out.h), -v(&at_c_in),
        z, fs * ac * d(&at_c_out.j), fs * ac * d(&at_c_out.h), -fc * ac * d(&at_c_in),
    );
    let rhs = Vector4::new(-v(&at_a_out.j), -f0 * a * d(&at_a_out.j), z, z);
    if m.iter().chain(rhs.iter()).any(|c| !c.is_finite()) {
        return Err(Error::NumericalDegeneracy {
            l,
            condition: f64::INFINITY,
        });
    }

    let (x, condition) = solve_equilibrated(m, rhs).ok_or(Error::NumericalDegeneracy {
        l,
        condition: f64::INFINITY,
    })?;
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::NumericalDegeneracy { l, condition });
    }
    let s = Scaled::from_complex;
    Ok(PartialWaveSolution {
        l,
        a_scat: x[0],
        regions: vec![
            RegionCoefficients::new(s(ONE), s(x[0])),
            RegionCoefficients::new(s(x[1]), s(x[2])),
            RegionCoefficients::new(s(x[3]), Scaled::ZERO),
        ],
    })
}

/// Row/column equilibration, LU with partial pivoting, and a 1-norm
/// condition estimate of the equilibrated matrix.
fn solve_equilibrated(
    m: Matrix4<Complex64>,
    rhs: Vector4<Complex64>,
) -> Option<(Vector4<Complex64>, f64)> {
    let mut m = m;
    let mut rhs = rhs;
    let mut col_scale = [1.0; 4];
    for (c, scale) in col_scale.iter_mut().enumerate() {
        let mx = m.column(c).iter().map(|v| v.norm()).fold(0.0, f64::max);
        if mx == 0.0 {
            return None;
        }
        *scale = 1.0 / mx;
        m.column_mut(c).scale_mut(*scale);
    }
    for r in 0..4 {
        let mx = m.row(r).iter().map(|v| v.norm()).fold(0.0, f64::max);
        if mx == 0.0 {
            return None;
        }
        m.row_mut(r).scale_mut(1.0 / mx);
        rhs[r] /= mx;
    }
    let lu = m.lu();
    let y = lu.solve(&rhs)?;
    let inv = lu.try_inverse()?;
    let norm1 = |a: &Matrix4<Complex64>| {
        (0..4)
            .map(|c| a.column(c).iter().map(|v| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let condition = norm1(&m) * norm1(&inv);
    let x = Vector4::from_fn(|i, _| y[i] * col_scale[i]);
    Some((x, condition))
}

/// Any number of layers: transfer of `(psi, psi'/m)` from the centre
/// outward, one 2x2 matching step per interface, in scaled arithmetic.
pub fn solve_n_layer(stack: &LayerStack, l: usize) -> Result<PartialWaveSolution> {
    ensure_valid(stack)?;
    ensure_order(l)?;
    ensure_nondegenerate(stack)?;
    let n = stack.layers.len();
    let mut regions = vec![RegionCoefficients::new(Scaled::ZERO, Scaled::ZERO); n + 1];
    regions[n] = RegionCoefficients::new(Scaled::from_complex(ONE), Scaled::ZERO);

    for inner in (1..=n).rev() {
        let outer = inner - 1;
        let r = stack.layers[inner - 1].outer_radius;
        let k_in = stack.wavenumber(inner).value();
        let (a_in, b_in) = (regions[inner].regular, regions[inner].outgoing);

        let j_in = sph_bessel_j(l, k_in * r)?;
        let mut psi = a_in * j_in.scaled_value();
        let mut dpsi = a_in * j_in.scaled_derivative();
        if !b_in.is_zero() {
            let h_in = sph_hankel1(l, k_in * r)?;
            psi = psi + b_in * h_in.scaled_value();
            dpsi = dpsi + b_in * h_in.scaled_derivative();
        }
        let phi = dpsi * flux_factor(stack, inner);

        let k_out = stack.wavenumber(outer).value();
        let f = flux_factor(stack, outer);
        let x = k_out * r;
        let b = basis(l, x)?;
        let (j, jp, h, hp) = (
            b.j.scaled_value(),
            b.j.scaled_derivative(),
            b.h.scaled_value(),
            b.h.scaled_derivative(),
        );
        // det [[j, h], [f j', f h']] = f (j h' - h j') = f i / x^2
        let det_inv = x * x / (f * I);
        let a_out = (psi * hp * f - h * phi) * det_inv;
        let b_out = (j * phi - psi * jp * f) * det_inv;
        regions[outer] = RegionCoefficients::new(a_out.normalized(), b_out.normalized());
    }

    let norm = regions[0].regular;
    if norm.is_zero() || !norm.is_finite() {
        return Err(Error::NumericalDegeneracy {
            l,
            condition: f64::INFINITY,
        });
    }
    for reg in regions.iter_mut() {
        reg.regular = reg.regular / norm;
        reg.outgoing = if reg.outgoing.is_zero() {
            Scaled::ZERO
        } else {
            reg.outgoing / norm
        };
    }
    regions[0].regular = Scaled::from_complex(ONE);
    let a_scat = regions[0].outgoing.to_complex();
    Ok(PartialWaveSolution { l, a_scat, regions })
}

fn has_extreme_layer(stack: &LayerStack) -> bool {
    stack
        .layers
        .iter()
        .any(|layer| (stack.energy - layer.medium.potential).abs() > EXTREME_POTENTIAL)
}

/// Canonical solver: the 4x4 system for ordinary two-layer particles, the
/// scaled transfer path for everything else.
pub fn solve(stack: &LayerStack, l: usize) -> Result<PartialWaveSolution> {
    if stack.layers.len() == 2 && !has_extreme_layer(stack) {
        solve_two_layer(stack, l)
    } else {
        solve_n_layer(stack, l)
    }
}

/// Total cross section with adaptive truncation: orders are added until two
/// consecutive terms fall below [`TERM_THRESHOLD`] (in units of
/// `4 pi / k0^2`), never stopping before `l = MIN_ORDERS`.
pub fn cross_section(stack: &LayerStack) -> Result<CrossSectionResult> {
    ensure_valid(stack)?;
    let k0 = stack.k0();
    let unit = 4.0 * PI / (k0 * k0);
    let mut per_l_terms = Vec::new();
    let mut coefficients = Vec::new();
    let mut below_run = 0;
    for l in 0..=L_MAX {
        let sol = solve(stack, l)?;
        let weight = (2 * l + 1) as f64 * sol.a_scat.norm_sqr();
        per_l_terms.push((l, unit * weight));
        coefficients.push(sol.a_scat);
        below_run = if weight < TERM_THRESHOLD {
            below_run + 1
        } else {
            0
        };
        if l >= MIN_ORDERS && below_run >= 2 {
            let sigma: f64 = per_l_terms.iter().map(|(_, t)| t).sum();
            let a = stack.radius();
            return Ok(CrossSectionResult {
                sigma,
                sigma_normalized: sigma / (PI * a * a),
                per_l_terms,
                l_max_used: l,
                coefficients,
                k0,
            });
        }
    }
    Err(Error::TruncationNotConverged { l_max: L_MAX })
}

/// Solved coefficients for `l = 0..=l_max`, the input of every field
/// evaluation.
#[derive(Debug, Clone)]
pub struct SolutionSet {
    pub stack: LayerStack,
    pub waves: Vec<PartialWaveSolution>,
}

impl SolutionSet {
    pub fn solve(stack: &LayerStack, l_max: usize) -> Result<Self> {
        ensure_valid(stack)?;
        ensure_order(l_max)?;
        let waves = (0..=l_max)
            .map(|l| solve(stack, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stack: stack.clone(),
            waves,
        })
    }

    /// Orders sufficient for fields out to radius `r_max`: the incident
    /// plane wave needs `l` somewhat past `k0 r_max`.
    pub fn for_radius(stack: &LayerStack, r_max: f64) -> Result<Self> {
        Self::solve(stack, field_order_for(stack, r_max))
    }

    pub fn l_max(&self) -> usize {
        self.waves.len() - 1
    }

    /// Same field built from other coefficients, e.g. the closed-form shell
    /// coefficients.
    pub fn from_waves(stack: &LayerStack, waves: Vec<PartialWaveSolution>) -> Self {
        Self {
            stack: stack.clone(),
            waves,
        }
    }
}

pub fn field_order_for(stack: &LayerStack, r_max: f64) -> usize {
    let x = stack.k0() * r_max.max(stack.radius());
    let wiscombe = (x + 4.0 * x.cbrt()).ceil() as usize + 15;
    wiscombe.clamp(20, L_MAX)
}
