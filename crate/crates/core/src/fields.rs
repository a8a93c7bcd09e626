//! Real-space fields: wavefunction, probability flux, flux integrals, nodal
//! radii, grids and streamlines.
//!
//! Flux is dimensionless, in units of the incident flux `hbar k0 / m0`, so
//! the bare plane wave carries `J = z`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LayerStack;
use crate::scaled::Scaled;
use crate::solver::SolutionSet;
use crate::specfun::{legendre_p_seq, sph_bessel_j_seq, sph_hankel1_seq};

/// Requested accuracy of the annulus and hemisphere quadratures.
pub const FLUX_QUADRATURE_TOL: f64 = 1e-8;
/// l = 0 and l = 1 zeros closer than this fraction of `a_c` share a node.
pub const COMMON_NODE_TOL: f64 = 0.02;
/// Lower end of the nodal search window as a fraction of `a_c`.
pub const NODAL_WINDOW_START: f64 = 0.2;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn i_pow(l: usize) -> Complex64 {
    match l % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => I,
        2 => Complex64::new(-1.0, 0.0),
        _ => -I,
    }
}

/// Wavefunction and its gradient at one point, in spherical components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalField {
    pub region: usize,
    pub psi: Complex64,
    pub d_r: Complex64,
    /// `(1/r) dpsi/dtheta`.
    pub d_theta: Complex64,
}

impl LocalField {
    /// `(J_r, J_theta)` in units of the incident flux.
    pub fn flux(&self, stack: &LayerStack) -> (f64, f64) {
        let w = stack.background.effective_mass
            / (stack.k0() * stack.medium(self.region).effective_mass);
        (
            w * (self.psi.conj() * self.d_r).im,
            w * (self.psi.conj() * self.d_theta).im,
        )
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!(
            "radius must be finite and non-negative, got {r}"
        )));
    }
    Ok(())
}

/// Series evaluation of `psi` and its gradient at `(r, theta)`.
pub fn local_field(sol: &SolutionSet, r: f64, theta: f64) -> Result<LocalField> {
    check_radius(r)?;
    let stack = &sol.stack;
    let region = stack.region_of(r);
    let k = stack.wavenumber(region).value();
    if r == 0.0 {
        // only l = 0 survives in psi and only l = 1 in the gradient
        let a0 = sol.waves[0].regions[region].regular.to_complex();
        let grad_z = match sol.waves.get(1) {
            Some(w) => I * k * w.regions[region].regular.to_complex(),
            None => Complex64::new(0.0, 0.0),
        };
        let (s, c) = theta.sin_cos();
        return Ok(LocalField {
            region,
            psi: a0,
            d_r: grad_z * c,
            d_theta: -grad_z * s,
        });
    }
    let l_max = sol.l_max();
    let x = k * r;
    let js = sph_bessel_j_seq(l_max, x)?;
    let needs_h = sol
        .waves
        .iter()
        .any(|w| !w.regions[region].outgoing.is_zero());
    let hs = if needs_h {
        Some(sph_hankel1_seq(l_max, x)?)
    } else {
        None
    };
    let (ct, st) = (theta.cos(), theta.sin());
    let (p, dp) = legendre_p_seq(l_max, ct.clamp(-1.0, 1.0))?;

    let mut psi = Complex64::new(0.0, 0.0);
    let mut d_r = psi;
    let mut d_theta = psi;
    for (l, wave) in sol.waves.iter().enumerate() {
        let coeffs = &wave.regions[region];
        let mut g = coeffs.regular * js[l].scaled_value();
        let mut gp = coeffs.regular * js[l].scaled_derivative();
        if let (Some(hs), false) = (&hs, coeffs.outgoing.is_zero()) {
            g = g + coeffs.outgoing * hs[l].scaled_value();
            gp = gp + coeffs.outgoing * hs[l].scaled_derivative();
        }
        let w = i_pow(l) * (2 * l + 1) as f64;
        let (g, gp) = (g.to_complex(), gp.to_complex());
        psi += w * g * p[l];
        d_r += w * k * gp * p[l];
        d_theta += w * g * (-st * dp[l]) / r;
    }
    Ok(LocalField {
        region,
        psi,
        d_r,
        d_theta,
    })
}

pub fn wavefunction(sol: &SolutionSet, r: f64, theta: f64) -> Result<Complex64> {
    Ok(local_field(sol, r, theta)?.psi)
}

/// `(J_r, J_theta)` in units of `hbar k0 / m0`.
pub fn flux(sol: &SolutionSet, r: f64, theta: f64) -> Result<(f64, f64)> {
    Ok(local_field(sol, r, theta)?.flux(&sol.stack))
}

/// Radial part `b j_l(k r) + c h_l(k r)` and its `r`-derivative.
pub fn channel_radial(
    l: usize,
    k: Complex64,
    b: Complex64,
    c: Complex64,
    r: f64,
) -> Result<(Complex64, Complex64)> {
    let x = k * r;
    let j = crate::specfun::sph_bessel_j(l, x)?;
    let mut g = Scaled::from_complex(b) * j.scaled_value();
    let mut gp = Scaled::from_complex(b) * j.scaled_derivative();
    if c != Complex64::new(0.0, 0.0) {
        let h = crate::specfun::sph_hankel1(l, x)?;
        g = g + Scaled::from_complex(c) * h.scaled_value();
        gp = gp + Scaled::from_complex(c) * h.scaled_derivative();
    }
    Ok((g.to_complex(), k * gp.to_complex()))
}

/// `channel_radial` for every order in `shell` at once.
fn channels_at(
    k: Complex64,
    shell: &[(Complex64, Complex64)],
    r: f64,
) -> Result<Vec<(Complex64, Complex64)>> {
    let x = k * r;
    let l_max = shell.len() - 1;
    let js = crate::specfun::sph_bessel_j_seq(l_max, x)?;
    let hs = if shell.iter().any(|&(_, c)| c != Complex64::new(0.0, 0.0)) {
        Some(crate::specfun::sph_hankel1_seq(l_max, x)?)
    } else {
        None
    };
    Ok(shell
        .iter()
        .enumerate()
        .map(|(l, &(b, c))| {
            let mut g = Scaled::from_complex(b) * js[l].scaled_value();
            let mut gp = Scaled::from_complex(b) * js[l].scaled_derivative();
            if let Some(hs) = hs.as_ref().filter(|_| c != Complex64::new(0.0, 0.0)) {
                g = g + Scaled::from_complex(c) * hs[l].scaled_value();
                gp = gp + Scaled::from_complex(c) * hs[l].scaled_derivative();
            }
            (g.to_complex(), k * gp.to_complex())
        })
        .collect())
}

/// Single shell partial wave `i^l (2l+1) [b j_l(k_s r) + c h_l(k_s r)] P_l(cos theta)`,
/// continued to any `r > 0`.
pub fn channel_function(
    l: usize,
    stack: &LayerStack,
    shell: (Complex64, Complex64),
    r: f64,
    theta: f64,
) -> Result<Complex64> {
    check_radius(r)?;
    if stack.layers.is_empty() {
        return Err(Error::Domain("channel function needs a shell layer".into()));
    }
    let ks = stack.wavenumber(1).value();
    let (g, _) = channel_radial(l, ks, shell.0, shell.1, r)?;
    let p = crate::specfun::legendre_p(l, theta.cos().clamp(-1.0, 1.0))?;
    Ok(i_pow(l) * (2 * l + 1) as f64 * g * p)
}

fn integrate(f: impl Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<f64> {
    let err = std::cell::RefCell::new(None);
    let out = quadrature::double_exponential::integrate(
        |x| match f(x) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        a,
        b,
        FLUX_QUADRATURE_TOL,
    );
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    if !out.integral.is_finite() || out.error_estimate > FLUX_QUADRATURE_TOL {
        return Err(Error::Quadrature {
            achieved: out.error_estimate,
            requested: FLUX_QUADRATURE_TOL,
        });
    }
    Ok(out.integral)
}

/// Flux through the equatorial annulus `a_c <= rho <= a` (`z = 0`, along
/// `+z`), as the fraction `F` of `pi a^2` times the incident flux. `a_c` is
/// the outer radius of the second layer.
pub fn flux_through_shell_annulus(sol: &SolutionSet) -> Result<f64> {
    let stack = &sol.stack;
    if stack.layers.len() < 2 {
        return Err(Error::Domain(
            "annulus flux needs a shell and a core".into(),
        ));
    }
    let a = stack.radius();
    let ac = stack.layers[1].outer_radius;
    flux_through_annulus(sol, ac, a).map(|phi| phi / (PI * a * a))
}

/// `int_{r0}^{r1} 2 pi rho J_z(rho, theta = pi/2) d rho`; at the equator `J_z = -J_theta`.
pub fn flux_through_annulus(sol: &SolutionSet, r0: f64, r1: f64) -> Result<f64> {
    integrate(
        |rho| Ok(-2.0 * PI * rho * flux(sol, rho, PI / 2.0)?.1),
        r0,
        r1,
    )
}

/// Flux entering through the lower hemisphere of radius `r`:
/// `-int J_r dA` over `theta in [pi/2, pi]`.
pub fn flux_into_lower_hemisphere(sol: &SolutionSet, r: f64) -> Result<f64> {
    hemisphere(sol, r, PI / 2.0, PI).map(|v| -v)
}

/// Net outward flux through the full sphere of radius `r`.
pub fn net_flux_through_sphere(sol: &SolutionSet, r: f64) -> Result<f64> {
    Ok(hemisphere(sol, r, 0.0, PI / 2.0)? + hemisphere(sol, r, PI / 2.0, PI)?)
}

fn hemisphere(sol: &SolutionSet, r: f64, t0: f64, t1: f64) -> Result<f64> {
    integrate(
        |t| Ok(2.0 * PI * r * r * flux(sol, r, t)?.0 * t.sin()),
        t0,
        t1,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNode {
    pub l: usize,
    /// Outermost zero in the search window, the first met moving inward from `a_c`.
    pub r_n: Option<f64>,
    pub zeros: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalReport {
    pub channels: Vec<ChannelNode>,
    pub common_nodal_radius: Option<f64>,
    /// `|r_n(l=0) - r_n(l=1)|` when both exist.
    pub residual_spread: Option<f64>,
    pub tolerance: f64,
}

impl NodalReport {
    pub fn r_n(&self, l: usize) -> Option<f64> {
        self.channels.iter().find(|c| c.l == l).and_then(|c| c.r_n)
    }
}

const NODAL_SAMPLES: usize = 200;
const NODAL_RELATIVE_DEPTH: f64 = 1e-4;

/// Zeros of the shell radial functions over `(0.2 a_c, a_c]`, one entry of
/// `shell` per order starting at `l = 0`.
pub fn find_nodal_point(
    stack: &LayerStack,
    shell: &[(Complex64, Complex64)],
) -> Result<NodalReport> {
    if stack.layers.len() < 2 {
        return Err(Error::Domain(
            "nodal search needs a shell and a core".into(),
        ));
    }
    let ac = stack.layers[1].outer_radius;
    let ks = stack.wavenumber(1).value();
    let lo = NODAL_WINDOW_START * ac;
    let n = NODAL_SAMPLES;
    let rs: Vec<f64> = (0..=n)
        .map(|i| lo + (ac - lo) * i as f64 / n as f64)
        .collect();
    let mut samples = vec![Vec::with_capacity(n + 1); shell.len()];
    if !shell.is_empty() {
        for &r in &rs {
            for (l, g) in channels_at(ks, shell, r)?.into_iter().enumerate() {
                samples[l].push(g);
            }
        }
    }
    let mut channels = Vec::with_capacity(shell.len());
    for ((l, &(b, c)), vals) in shell.iter().enumerate().zip(samples) {
        let zeros = radial_zeros(l, ks, b, c, &rs, &vals)?;
        channels.push(ChannelNode {
            l,
            r_n: zeros
                .iter()
                .copied()
                .fold(None, |m: Option<f64>, z| Some(m.map_or(z, |m| m.max(z)))),
            zeros,
        });
    }
    let tol = COMMON_NODE_TOL * ac;
    let pick = |l: usize| channels.get(l).and_then(|c| c.r_n);
    let (common, spread) = match (pick(0), pick(1)) {
        (Some(r0), Some(r1)) => {
            let spread = (r0 - r1).abs();
            ((spread <= tol).then_some(0.5 * (r0 + r1)), Some(spread))
        }
        _ => (None, None),
    };
    Ok(NodalReport {
        channels,
        common_nodal_radius: common,
        residual_spread: spread,
        tolerance: tol,
    })
}

/// Local minima of `|g|` that reach (relatively) zero, located by bisection
/// on `d|g|^2/dr = 2 Re(g* g')`.
fn radial_zeros(
    l: usize,
    k: Complex64,
    b: Complex64,
    c: Complex64,
    rs: &[f64],
    vals: &[(Complex64, Complex64)],
) -> Result<Vec<f64>> {
    let n = rs.len() - 1;
    let hi = rs[n];
    let scale = vals.iter().map(|(g, _)| g.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Ok(Vec::new());
    }
    let slope = |(g, gp): (Complex64, Complex64)| (g.conj() * gp).re;
    let mut zeros = Vec::new();
    for i in 0..n {
        let (s0, s1) = (slope(vals[i]), slope(vals[i + 1]));
        if !(s0 < 0.0 && s1 >= 0.0) {
            continue;
        }
        // |g| cannot fall further than twice the slope allows over the bracket
        let (g0, g1) = (vals[i].0.norm(), vals[i + 1].0.norm());
        let reach = (rs[i + 1] - rs[i]) * vals[i].1.norm().max(vals[i + 1].1.norm());
        if g0.min(g1) - reach > NODAL_RELATIVE_DEPTH * scale {
            continue;
        }
        let (mut a, mut z) = (rs[i], rs[i + 1]);
        for _ in 0..200 {
            let m = 0.5 * (a + z);
            if m <= a || m >= z || z - a <= 1e-10 * hi {
                break;
            }
            if slope(channel_radial(l, k, b, c, m)?) < 0.0 {
                a = m;
            } else {
                z = m;
            }
        }
        let r = 0.5 * (a + z);
        if channel_radial(l, k, b, c, r)?.0.norm() <= NODAL_RELATIVE_DEPTH * scale {
            zeros.push(r);
        }
    }
    // a zero sitting exactly on the window's upper edge
    if let Some(&(g, _)) = vals.last() {
        if g.norm() <= NODAL_RELATIVE_DEPTH * scale * 1e-3
            && zeros.last().is_none_or(|&z| hi - z > 1e-9)
        {
            zeros.push(hi);
        }
    }
    Ok(zeros)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Axis-aligned slice `axis = value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub axis: Axis,
    pub value: f64,
}

impl PlaneSpec {
    /// In-plane axes `(u, v)`, right-handed with the normal where possible.
    pub fn in_plane_axes(&self) -> (Axis, Axis) {
        match self.axis {
            Axis::X => (Axis::Y, Axis::Z),
            Axis::Y => (Axis::X, Axis::Z),
            Axis::Z => (Axis::X, Axis::Y),
        }
    }

    fn point(&self, u: f64, v: f64) -> [f64; 3] {
        match self.axis {
            Axis::X => [self.value, u, v],
            Axis::Y => [u, self.value, v],
            Axis::Z => [u, v, self.value],
        }
    }

    fn project(&self, w: [f64; 3]) -> [f64; 2] {
        match self.axis {
            Axis::X => [w[1], w[2]],
            Axis::Y => [w[0], w[2]],
            Axis::Z => [w[0], w[1]],
        }
    }
}

impl Default for PlaneSpec {
    fn default() -> Self {
        Self {
            axis: Axis::X,
            value: 0.0,
        }
    }
}

impl fmt::Display for PlaneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.axis.name(), self.value)
    }
}

impl FromStr for PlaneSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (axis, value) = s
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("plane must look like x=0, got {s:?}")))?;
        let axis = match axis.trim() {
            "x" | "X" => Axis::X,
            "y" | "Y" => Axis::Y,
            "z" | "Z" => Axis::Z,
            other => return Err(Error::Parse(format!("unknown plane axis {other:?}"))),
        };
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad plane offset {value:?}")))?;
        if !value.is_finite() {
            return Err(Error::Parse("plane offset must be finite".into()));
        }
        Ok(Self { axis, value })
    }
}

/// Cartesian `(psi, J)` at a point.
pub fn field_at(sol: &SolutionSet, p: [f64; 3]) -> Result<(usize, Complex64, [f64; 3])> {
    let [x, y, z] = p;
    let rho = x.hypot(y);
    let r = rho.hypot(z);
    let theta = rho.atan2(z);
    let f = local_field(sol, r, theta)?;
    let (jr, jt) = f.flux(&sol.stack);
    let (st, ct) = theta.sin_cos();
    let (cp, sp) = if rho > 0.0 {
        (x / rho, y / rho)
    } else {
        (1.0, 0.0)
    };
    let j_rho = jr * st + jt * ct;
    let j_z = jr * ct - jt * st;
    Ok((f.region, f.psi, [j_rho * cp, j_rho * sp, j_z]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSample {
    pub u_nm: f64,
    pub v_nm: f64,
    pub region: usize,
    pub re_psi: f64,
    pub im_psi: f64,
    /// In-plane flux `(J_u, J_v)`.
    pub j: [f64; 2],
}

impl GridSample {
    pub fn psi(&self) -> Complex64 {
        Complex64::new(self.re_psi, self.im_psi)
    }

    pub fn abs_psi(&self) -> f64 {
        self.psi().norm()
    }
}

/// Row-major samples: row `i` has `v = v_min + i dv`, column `j` has `u = u_min + j du`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub stack: LayerStack,
    pub plane: PlaneSpec,
    pub extent_nm: f64,
    pub resolution: usize,
    pub l_max: usize,
    pub samples: Vec<GridSample>,
}

pub const DEFAULT_RESOLUTION: usize = 201;

/// Default side of the square slice: three particle radii.
pub fn default_extent(stack: &LayerStack) -> f64 {
    3.0 * stack.radius()
}

impl FieldGrid {
    pub fn coordinate(&self, i: usize) -> f64 {
        let half = 0.5 * self.extent_nm;
        -half + self.extent_nm * i as f64 / (self.resolution - 1) as f64
    }

    pub fn spacing(&self) -> f64 {
        self.extent_nm / (self.resolution - 1) as f64
    }

    pub fn sample(&self, row: usize, col: usize) -> &GridSample {
        &self.samples[row * self.resolution + col]
    }

    pub fn axis_names(&self) -> (&'static str, &'static str) {
        let (u, v) = self.plane.in_plane_axes();
        (u.name(), v.name())
    }

    pub fn to_csv(&self) -> String {
        let (u, v) = self.axis_names();
        let mut out = format!("{u}_nm,{v}_nm,region,re_psi,im_psi,abs_psi,j_1,j_2\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                s.u_nm,
                s.v_nm,
                s.region,
                s.re_psi,
                s.im_psi,
                s.abs_psi(),
                s.j[0],
                s.j[1]
            ));
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("grid serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        crate::model::parse_json(text)
    }

    /// Same grid with every flux vector reversed.
    pub fn reversed(&self) -> Self {
        let mut g = self.clone();
        for s in g.samples.iter_mut() {
            s.j = [-s.j[0], -s.j[1]];
        }
        g
    }

    /// Bilinear interpolation of the in-plane flux; `None` outside the grid.
    pub fn flux_at(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let h = self.spacing();
        let origin = self.coordinate(0);
        let fu = (p[0] - origin) / h;
        let fv = (p[1] - origin) / h;
        let last = (self.resolution - 1) as f64;
        if !(0.0..=last).contains(&fu) || !(0.0..=last).contains(&fv) {
            return None;
        }
        let c = (fu.floor() as usize).min(self.resolution - 2);
        let r = (fv.floor() as usize).min(self.resolution - 2);
        let (tu, tv) = (fu - c as f64, fv - r as f64);
        let s00 = self.sample(r, c).j;
        let s01 = self.sample(r, c + 1).j;
        let s10 = self.sample(r + 1, c).j;
        let s11 = self.sample(r + 1, c + 1).j;
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = (1.0 - tv) * ((1.0 - tu) * s00[k] + tu * s01[k])
                + tv * ((1.0 - tu) * s10[k] + tu * s11[k]);
        }
        Some(out)
    }
}

/// Sample `psi` and the in-plane flux on a `resolution x resolution` grid
/// centred on the particle.
pub fn export_field_grid(
    sol: &SolutionSet,
    plane: PlaneSpec,
    resolution: usize,
    extent_nm: Option<f64>,
) -> Result<FieldGrid> {
    if resolution < 2 {
        return Err(Error::Domain(format!(
            "resolution must be at least 2 per axis, got {resolution}"
        )));
    }
    let extent = extent_nm.unwrap_or_else(|| default_extent(&sol.stack));
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::Domain(format!(
            "extent must be positive, got {extent}"
        )));
    }
    let mut grid = FieldGrid {
        stack: sol.stack.clone(),
        plane,
        extent_nm: extent,
        resolution,
        l_max: sol.l_max(),
        samples: Vec::new(),
    };
    let coords: Vec<f64> = (0..resolution).map(|i| grid.coordinate(i)).collect();
    grid.samples = (0..resolution * resolution)
        .into_par_iter()
        .map(|idx| {
            let (u, v) = (coords[idx % resolution], coords[idx / resolution]);
            let (region, psi, j) = field_at(sol, plane.point(u, v))?;
            Ok(GridSample {
                u_nm: u,
                v_nm: v,
                region,
                re_psi: psi.re,
                im_psi: psi.im,
                j: plane.project(j),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamlineOptions {
    /// Arc-length step in nm; defaults to a quarter of the grid spacing.
    pub step: Option<f64>,
    pub max_steps: usize,
    pub min_flux: f64,
}

impl Default for StreamlineOptions {
    fn default() -> Self {
        Self {
            step: None,
            max_steps: 100_000,
            min_flux: 1e-12,
        }
    }
}

/// RK4 integration of `dx/ds = J/|J|` from each seed until the line leaves
/// the grid, the flux vanishes, or `max_steps` is reached.
pub fn trace_streamlines(
    grid: &FieldGrid,
    seeds: &[[f64; 2]],
    opts: StreamlineOptions,
) -> Vec<Vec<[f64; 2]>> {
    let h = opts.step.unwrap_or(0.25 * grid.spacing());
    seeds
        .par_iter()
        .map(|&seed| trace_one(grid, seed, h, &opts))
        .collect()
}

fn trace_one(grid: &FieldGrid, seed: [f64; 2], h: f64, opts: &StreamlineOptions) -> Vec<[f64; 2]> {
    let dir = |p: [f64; 2]| -> Option<[f64; 2]> {
        let j = grid.flux_at(p)?;
        let n = j[0].hypot(j[1]);
        (n >= opts.min_flux).then(|| [j[0] / n, j[1] / n])
    };
    let mut line = Vec::new();
    if dir(seed).is_none() {
        return line;
    }
    line.push(seed);
    let mut p = seed;
    let add = |p: [f64; 2], k: [f64; 2], s: f64| [p[0] + s * k[0], p[1] + s * k[1]];
    for _ in 0..opts.max_steps {
        let Some(k1) = dir(p) else { break };
        let Some(k2) = dir(add(p, k1, 0.5 * h)) else {
            break;
        };
        let Some(k3) = dir(add(p, k2, 0.5 * h)) else {
            break;
        };
        let Some(k4) = dir(add(p, k3, h)) else { break };
        let next = [
            p[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            p[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        if grid.flux_at(next).is_none() {
            break;
        }
        line.push(next);
        p = next;
    }
    line
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamlineSet {
    pub plane: PlaneSpec,
    pub polylines: Vec<Vec<[f64; 2]>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, Medium};
    use crate::solver::{shell_coefficients_approx, solve};

    fn quoted_stack() -> LayerStack {
        LayerStack::new(
            0.01,
            Medium::new(0.8, 0.0),
            vec![
                Layer::new(Medium::new(0.16, -2.34), 2.0),
                Layer::new(Medium::new(0.33, 16.21), 1.7),
            ],
        )
        .unwrap()
    }

    fn identity_stack() -> LayerStack {
        let bg = Medium::new(0.8, 0.0);
        LayerStack::new(0.01, bg, vec![Layer::new(bg, 2.0), Layer::new(bg, 1.7)]).unwrap()
    }

    #[test]
    fn identity_recomposes_plane_wave() {
        let stack = identity_stack();
        let sol = SolutionSet::for_radius(&stack, 4.0).unwrap();
        let k0 = stack.k0();
        for &(r, t) in &[(0.0, 0.0), (0.3, 1.0), (1.8, 2.0), (3.9, 0.4), (2.0, PI)] {
            let psi = wavefunction(&sol, r, t).unwrap();
            let expect = Complex64::new(0.0, k0 * r * f64::cos(t)).exp();
            assert!((psi - expect).norm() < 1e-12, "r={r} t={t}");
            let (jr, jt) = flux(&sol, r, t).unwrap();
            assert!((jr - t.cos()).abs() < 1e-12);
            assert!((jt + t.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_radius_is_rejected() {
        let sol = SolutionSet::solve(&identity_stack(), 4).unwrap();
        assert!(matches!(
            wavefunction(&sol, -1.0, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn origin_limit_matches_nearby_points() {
        let sol = SolutionSet::for_radius(&quoted_stack(), 2.0).unwrap();
        let at0 = local_field(&sol, 0.0, 0.0).unwrap();
        let near = local_field(&sol, 1e-9, 0.0).unwrap();
        assert!((at0.psi - near.psi).norm() <= 1e-6 * at0.psi.norm());
        assert!((at0.d_r - near.d_r).norm() <= 1e-6 * at0.d_r.norm());
    }

    #[test]
    fn psi_is_continuous_across_interfaces() {
        let sol = SolutionSet::for_radius(&quoted_stack(), 2.0).unwrap();
        for &r in &[2.0, 1.7] {
            for &t in &[0.0, 0.7, 2.0, PI] {
                let a = wavefunction(&sol, r, t).unwrap();
                let b = wavefunction(&sol, r * (1.0 + 1e-13), t).unwrap();
                let scale = a.norm().max(b.norm()).max(1e-300);
                assert!((a - b).norm() <= 1e-8 * scale.max(1e-6), "r={r} t={t}");
            }
        }
    }

    #[test]
    fn channel_function_basics() {
        let s = quoted_stack();
        let (b, c) = shell_coefficients_approx(0, &s).unwrap();
        let f0 = channel_function(0, &s, (b, c), 1.3, 0.0).unwrap();
        let f1 = channel_function(0, &s, (b, c), 1.3, PI / 2.0).unwrap();
        assert_eq!(f0, f1);
        let z = Complex64::new(0.0, 0.0);
        assert_eq!(channel_function(2, &s, (z, z), 1.3, 0.3).unwrap(), z);
    }

    #[test]
    fn identity_annulus_fraction_is_geometric() {
        let sol = SolutionSet::for_radius(&identity_stack(), 2.0).unwrap();
        let f = flux_through_shell_annulus(&sol).unwrap();
        assert!((f - (1.0 - 0.85f64 * 0.85)).abs() < 1e-9, "F={f}");
    }

    #[test]
    fn synthetic_node_is_found() {
        let s = quoted_stack();
        let ks = s.wavenumber(1).value();
        let r_star = 1.234567;
        let j = crate::specfun::sph_bessel_j(0, ks * r_star)
            .unwrap()
            .unscaled_value();
        let h = crate::specfun::sph_hankel1(0, ks * r_star)
            .unwrap()
            .unscaled_value();
        let b = Complex64::new(1.0, 0.0);
        let c = -j / h;
        let rep = find_nodal_point(&s, &[(b, c)]).unwrap();
        let got = rep.r_n(0).unwrap();
        assert!((got - r_star).abs() < 1e-6, "{got}");
    }

    #[test]
    fn identity_shell_has_no_nodes() {
        let s = identity_stack();
        let shell: Vec<_> = (0..3)
            .map(|l| shell_coefficients_approx(l, &s).unwrap())
            .collect();
        let rep = find_nodal_point(&s, &shell).unwrap();
        assert!(rep.common_nodal_radius.is_none());
        assert!(rep.channels.iter().all(|c| c.zeros.is_empty()));
    }

    #[test]
    fn quoted_shell_shares_a_node_below_core_radius() {
        let s = quoted_stack();
        let shell: Vec<_> = (0..3)
            .map(|l| solve(&s, l).unwrap().shell_coefficients())
            .collect();
        let rep = find_nodal_point(&s, &shell).unwrap();
        let rn = rep.common_nodal_radius.expect("common node");
        assert!(rn < 1.7 && rn > 0.8 * 1.7, "{rn}");
    }

    #[test]
    fn plane_spec_parses() {
        let p: PlaneSpec = "y=0.5".parse().unwrap();
        assert_eq!(
            p,
            PlaneSpec {
                axis: Axis::Y,
                value: 0.5
            }
        );
        assert!("w=1".parse::<PlaneSpec>().is_err());
        assert!("x".parse::<PlaneSpec>().is_err());
        assert_eq!(p.to_string().parse::<PlaneSpec>().unwrap(), p);
    }

    #[test]
    fn tiny_grid_and_resolution_check() {
        let sol = SolutionSet::for_radius(&identity_stack(), 3.0).unwrap();
        let g = export_field_grid(&sol, PlaneSpec::default(), 2, None).unwrap();
        assert_eq!(g.samples.len(), 4);
        assert!(g.samples.iter().all(|s| (s.abs_psi() - 1.0).abs() < 1e-10));
        assert!(matches!(
            export_field_grid(&sol, PlaneSpec::default(), 1, None),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn identity_streamlines_are_straight() {
        let sol = SolutionSet::for_radius(&identity_stack(), 4.5).unwrap();
        let g = export_field_grid(&sol, PlaneSpec::default(), 21, None).unwrap();
        let lines = trace_streamlines(&g, &[[0.7, -2.9]], StreamlineOptions::default());
        let line = &lines[0];
        assert!(line.len() > 10);
        assert!(line.iter().all(|p| (p[0] - 0.7).abs() < 1e-9));
        assert!(line.last().unwrap()[1] > 2.9);
    }
}
