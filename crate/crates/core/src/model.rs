//! Physical configuration: media, layers, wavenumbers and the JSON schema
//! they are read from.
//!
//! Units are fixed to eV for energies, nm for lengths and the free electron
//! mass `m_e` for masses. [`HBAR2_OVER_2ME`] is the only dimensional constant.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `hbar^2 / (2 m_e)` in eV nm^2.
pub const HBAR2_OVER_2ME: f64 = 0.0380998;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    /// Effective mass in units of `m_e`.
    #[serde(rename = "mass_me")]
    pub effective_mass: f64,
    /// Potential energy in eV.
    #[serde(rename = "potential_eV")]
    pub potential: f64,
}

impl Medium {
    pub const fn new(effective_mass: f64, potential: f64) -> Self {
        Self {
            effective_mass,
            potential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(flatten)]
    pub medium: Medium,
    #[serde(rename = "outer_radius_nm")]
    pub outer_radius: f64,
}

impl Layer {
    pub const fn new(medium: Medium, outer_radius: f64) -> Self {
        Self {
            medium,
            outer_radius,
        }
    }
}

/// Concentric layers, outermost first, inside a background medium.
///
/// Region 0 is the background; region `i >= 1` is `layers[i - 1]`, spanning
/// `layers[i].outer_radius < r <= layers[i - 1].outer_radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    #[serde(rename = "energy_eV")]
    pub energy: f64,
    pub background: Medium,
    pub layers: Vec<Layer>,
}

/// Complex wavenumber in nm^-1 on the branch `Im k >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavenumber(pub Complex64);

impl Wavenumber {
    pub fn value(&self) -> Complex64 {
        self.0
    }

    /// `E == V`: the spherical basis collapses at `k = 0`.
    pub fn is_degenerate(&self) -> bool {
        self.0.re == 0.0 && self.0.im == 0.0
    }

    pub fn is_propagating(&self) -> bool {
        self.0.im == 0.0 && self.0.re > 0.0
    }
}

/// `k = sqrt(m (E - V) / C)` with `C = hbar^2 / 2 m_e`.
pub fn wavenumber(energy: f64, medium: &Medium) -> Wavenumber {
    let q = medium.effective_mass * (energy - medium.potential) / HBAR2_OVER_2ME;
    if q >= 0.0 {
        Wavenumber(Complex64::new(q.sqrt(), 0.0))
    } else {
        Wavenumber(Complex64::new(0.0, (-q).sqrt()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn check_medium(out: &mut Vec<Violation>, name: &str, m: &Medium) {
    if !(m.effective_mass.is_finite() && m.effective_mass > 0.0) {
        out.push(Violation::new(
            format!("{name}.mass_me"),
            "mass must be positive",
        ));
    }
    if !m.potential.is_finite() {
        out.push(Violation::new(
            format!("{name}.potential_eV"),
            "potential must be finite",
        ));
    }
}

/// Every broken invariant of `stack`; empty when the stack is usable.
pub fn validate(stack: &LayerStack) -> Vec<Violation> {
    let mut out = Vec::new();
    check_medium(&mut out, "background", &stack.background);
    if stack.background.potential != 0.0 {
        out.push(Violation::new(
            "background.potential_eV",
            "background potential must be zero",
        ));
    }
    if !stack.energy.is_finite() || stack.energy <= stack.background.potential {
        out.push(Violation::new(
            "energy_eV",
            "energy must exceed the background potential",
        ));
    }
    if stack.layers.is_empty() {
        out.push(Violation::new("layers", "at least one layer is required"));
    }
    for (i, layer) in stack.layers.iter().enumerate() {
        let name = format!("layers[{i}]");
        check_medium(&mut out, &name, &layer.medium);
        if !(layer.outer_radius.is_finite() && layer.outer_radius > 0.0) {
            out.push(Violation::new(
                format!("{name}.outer_radius_nm"),
                "radius must be positive",
            ));
        }
        if i > 0 && layer.outer_radius >= stack.layers[i - 1].outer_radius {
            out.push(Violation::new(
                format!("{name}.outer_radius_nm"),
                "radii not decreasing",
            ));
        }
    }
    out
}

impl LayerStack {
    /// Build and validate.
    pub fn new(energy: f64, background: Medium, layers: Vec<Layer>) -> Result<Self> {
        let stack = Self {
            energy,
            background,
            layers,
        };
        stack.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let v = validate(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidStack(v))
        }
    }

    /// Particle radius `a`.
    pub fn radius(&self) -> f64 {
        self.layers[0].outer_radius
    }

    pub fn region_count(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn medium(&self, region: usize) -> &Medium {
        if region == 0 {
            &self.background
        } else {
            &self.layers[region - 1].medium
        }
    }

    pub fn wavenumber(&self, region: usize) -> Wavenumber {
        wavenumber(self.energy, self.medium(region))
    }

    /// Background wavenumber `k0` (real and positive on a valid stack).
    pub fn k0(&self) -> f64 {
        self.wavenumber(0).value().re
    }

    /// Region containing radius `r`; points on an interface belong inside.
    pub fn region_of(&self, r: f64) -> usize {
        let mut region = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            if r <= layer.outer_radius {
                region = i + 1;
            } else {
                break;
            }
        }
        region
    }

    /// Same stack with one layer's medium swapped.
    pub fn with_layer_medium(&self, layer: usize, medium: Medium) -> Self {
        let mut s = self.clone();
        s.layers[layer].medium = medium;
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        parse_json(text)
    }

    /// Canonical JSON; parsing it back yields a bit-identical stack.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("stack serializes")
    }
}

/// Parse JSON, reporting failures with the byte offset of the error.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let offset = byte_offset(text, e.line(), e.column());
        Error::Parse(format!("{e} (byte offset {offset})"))
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// `|k| R` for one region, against both its own outer radius and the
/// particle radius. The two readings differ for inner layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WavenumberProduct {
    pub region: usize,
    pub k_abs: f64,
    pub propagating: bool,
    pub k_times_own_radius: f64,
    pub k_times_particle_radius: f64,
}

pub fn wavenumber_products(stack: &LayerStack) -> Vec<WavenumberProduct> {
    let a = stack.radius();
    (0..stack.region_count())
        .map(|region| {
            let k = stack.wavenumber(region);
            let own = if region == 0 {
                a
            } else {
                stack.layers[region - 1].outer_radius
            };
            WavenumberProduct {
                region,
                k_abs: k.value().norm(),
                propagating: k.is_propagating(),
                k_times_own_radius: k.value().norm() * own,
                k_times_particle_radius: k.value().norm() * a,
            }
        })
        .collect()
}

/// Dimensionless variables of the closed-form two-layer coefficients:
/// `x1 = k0 a, y1 = m0 a, x2 = ks a, y2 = ms a, x3 = ks ac, x4 = kc ac,
/// y3 = ms ac, y4 = mc ac`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLayerShorthand {
    pub x1: Complex64,
    pub y1: f64,
    pub x2: Complex64,
    pub y2: f64,
    pub x3: Complex64,
    pub x4: Complex64,
    pub y3: f64,
    pub y4: f64,
}

impl TwoLayerShorthand {
    pub fn from_stack(stack: &LayerStack) -> Result<Self> {
        if stack.layers.len() != 2 {
            return Err(Error::Domain(format!(
                "two-layer shorthand needs exactly 2 layers, got {}",
                stack.layers.len()
            )));
        }
        let a = stack.layers[0].outer_radius;
        let ac = stack.layers[1].outer_radius;
        let (m0, ms, mc) = (
            stack.background.effective_mass,
            stack.layers[0].medium.effective_mass,
            stack.layers[1].medium.effective_mass,
        );
        let (k0, ks, kc) = (
            stack.wavenumber(0).value(),
            stack.wavenumber(1).value(),
            stack.wavenumber(2).value(),
        );
        Ok(Self {
            x1: k0 * a,
            y1: m0 * a,
            x2: ks * a,
            y2: ms * a,
            x3: ks * ac,
            x4: kc * ac,
            y3: ms * ac,
            y4: mc * ac,
        })
    }

    /// Recover the physical stack at incident energy `energy`.
    pub fn to_stack(&self, energy: f64) -> LayerStack {
        let c = HBAR2_OVER_2ME;
        // x1^2 = m0 E a^2 / C and y1 = m0 a give a = C x1^2 / (E y1).
        let a = c * (self.x1 * self.x1).re / (energy * self.y1);
        let m0 = self.y1 / a;
        let ms = self.y2 / a;
        let ks2 = (self.x2 * self.x2).re / (a * a);
        let vs = energy - c * ks2 / ms;
        let ac = self.y3 / ms;
        let mc = self.y4 / ac;
        let kc2 = (self.x4 * self.x4).re / (ac * ac);
        let vc = energy - c * kc2 / mc;
        LayerStack {
            energy,
            background: Medium::new(m0, 0.0),
            layers: vec![
                Layer::new(Medium::new(ms, vs), a),
                Layer::new(Medium::new(mc, vc), ac),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

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

    #[test]
    fn background_wavenumber() {
        let k = wavenumber(0.01, &Medium::new(0.8, 0.0));
        assert!(k.is_propagating());
        // sqrt(0.8 * 0.01 / 0.0380998)
        assert!((k.value().re - 0.458230133787655).abs() < 1e-12);
        assert!(k.value().re * 2.0 <= 1.0);
    }

    #[test]
    fn shell_wavenumber_product() {
        let k = wavenumber(0.01, &Medium::new(0.16, -2.34));
        assert!((k.value().norm() * 2.0 - 6.30).abs() < 0.05);
    }

    #[test]
    fn core_wavenumber_both_readings() {
        let p = wavenumber_products(&quoted_stack());
        let core = p[2];
        assert!(!core.propagating);
        assert!((core.k_times_own_radius - 20.06).abs() < 0.2);
        assert!((core.k_times_particle_radius - 23.6).abs() < 0.2);
    }

    #[test]
    fn branch_point_is_zero() {
        let k = wavenumber(1.5, &Medium::new(0.3, 1.5));
        assert!(k.is_degenerate());
    }

    #[test]
    fn evanescent_branch_has_positive_imaginary_part() {
        let k = wavenumber(0.01, &Medium::new(0.33, 16.21));
        assert_eq!(k.value().re, 0.0);
        assert!(k.value().im > 0.0);
    }

    #[test]
    fn validate_accepts_quoted_stack() {
        assert!(validate(&quoted_stack()).is_empty());
    }

    #[test]
    fn validate_rejects_increasing_radii() {
        let mut s = quoted_stack();
        s.layers[0].outer_radius = 1.7;
        s.layers[1].outer_radius = 2.0;
        let v = validate(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "radii not decreasing");
        assert_eq!(v[0].field, "layers[1].outer_radius_nm");
    }

    #[test]
    fn validate_rejects_zero_mass() {
        let mut s = quoted_stack();
        s.layers[1].medium.effective_mass = 0.0;
        let v = validate(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "mass must be positive");
    }

    #[test]
    fn validate_collects_several_violations() {
        let s = LayerStack {
            energy: -1.0,
            background: Medium::new(0.8, 0.5),
            layers: vec![],
        };
        assert_eq!(validate(&s).len(), 3);
    }

    #[test]
    fn region_lookup() {
        let s = quoted_stack();
        assert_eq!(s.region_of(2.5), 0);
        assert_eq!(s.region_of(2.0), 1);
        assert_eq!(s.region_of(1.8), 1);
        assert_eq!(s.region_of(1.7), 2);
        assert_eq!(s.region_of(0.0), 2);
    }

    #[test]
    fn json_schema_and_bit_exact_echo() {
        let text = r#"{
            "energy_eV": 0.01,
            "background": {"mass_me": 0.8, "potential_eV": 0.0},
            "layers": [
                {"mass_me": 0.16, "potential_eV": -2.34, "outer_radius_nm": 2.0},
                {"mass_me": 0.33, "potential_eV": 16.21, "outer_radius_nm": 1.7}
            ]
        }"#;
        let s = LayerStack::from_json_str(text).unwrap();
        assert_eq!(s, quoted_stack());
        let echo = LayerStack::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(echo, s);
    }

    #[test]
    fn parse_error_names_byte_offset() {
        let text = "{\n  \"energy_eV\": 0.01,\n  \"background\": oops\n}";
        let err = LayerStack::from_json_str(text).unwrap_err().to_string();
        let offset = text.find("oops").unwrap();
        assert!(err.contains(&format!("byte offset {offset}")), "{err}");
    }

    proptest! {
        #[test]
        fn magnitude_symmetric_across_branch_point(d in 1e-9f64..1e-3, m in 0.05f64..2.0) {
            let e = 0.01;
            let above = wavenumber(e, &Medium::new(m, e - d)).value().norm();
            let below = wavenumber(e, &Medium::new(m, e + d)).value().norm();
            prop_assert!((above - below).abs() <= 1e-12 * above.max(1e-300));
        }

        #[test]
        fn shorthand_round_trip(
            m0 in 0.05f64..2.0, ms in 0.05f64..2.0, mc in 0.05f64..2.0,
            vs in -10.0f64..10.0, vc in -10.0f64..50.0,
            a in 0.5f64..5.0, frac in 0.1f64..0.95, e in 0.001f64..1.0,
        ) {
            let s = LayerStack {
                energy: e,
                background: Medium::new(m0, 0.0),
                layers: vec![
                    Layer::new(Medium::new(ms, vs), a),
                    Layer::new(Medium::new(mc, vc), a * frac),
                ],
            };
            let back = TwoLayerShorthand::from_stack(&s).unwrap().to_stack(e);
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * (1.0 + y.abs());
            prop_assert!(close(back.background.effective_mass, m0));
            for (l, orig) in back.layers.iter().zip(&s.layers) {
                prop_assert!(close(l.outer_radius, orig.outer_radius));
                prop_assert!(close(l.medium.effective_mass, orig.medium.effective_mass));
                prop_assert!(close(l.medium.potential, orig.medium.potential));
            }
        }
    }
}
