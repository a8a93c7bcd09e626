//! Two-stage cloak search and the hidden-region robustness sweep.
//!
//! Stage one scans `(m_s, V_s)` with the closed-form shell coefficients and
//! keeps cells whose shell wave has a common node just inside the core and
//! carries the target flux through the shell annulus. Stage two tunes
//! `(m_c, V_c)` until the s- and p-wave scattering coefficients cancel, then
//! rechecks everything with the full solver.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{find_nodal_point, flux_through_shell_annulus, NodalReport};
use crate::model::{LayerStack, Medium};
use crate::scaled::Scaled;
use crate::solver::{
    cross_section, field_order_for, shell_coefficients_approx, solve, PartialWaveSolution,
    RegionCoefficients, SolutionSet,
};

/// Half-width of the accepted band around `1 - epsilon`.
pub const FLUX_BAND: f64 = 0.01;
/// Acceptance bound on `max(|a_0|, |a_1|)`.
pub const OBJECTIVE_LIMIT: f64 = 1e-4;
/// Bound on `(2l+1)|a_l|^2` for the orders past the truncation point.
pub const TAIL_LIMIT: f64 = 1e-5;
/// Half-width of the shell-stage screening band on the closed-form flux estimate.
pub const SHELL_SCREEN_BAND: f64 = 0.1;
/// Simplex size, in parameter units, at which refinement stops.
pub const PARAMETER_TOL: f64 = 1e-6;
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Domain(format!("{name}: empty grid")));
        }
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::Domain(format!(
                "{name}: bad range [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellGrid {
    pub mass_me: AxisSpec,
    #[serde(rename = "potential_eV")]
    pub potential: AxisSpec,
}

impl Default for ShellGrid {
    fn default() -> Self {
        Self {
            mass_me: AxisSpec {
                min: 0.01,
                max: 1.0,
                count: 200,
            },
            potential: AxisSpec {
                min: -10.0,
                max: -0.1,
                count: 200,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreBox {
    pub mass_me: Interval,
    #[serde(rename = "potential_eV")]
    pub potential: Interval,
    /// Coarse grid points per axis before simplex refinement.
    #[serde(default = "default_coarse")]
    pub coarse_count: usize,
}

fn default_coarse() -> usize {
    41
}

impl Default for CoreBox {
    fn default() -> Self {
        Self {
            mass_me: Interval {
                min: 0.01,
                max: 2.0,
            },
            potential: Interval {
                min: 0.1,
                max: 50.0,
            },
            coarse_count: default_coarse(),
        }
    }
}

impl CoreBox {
    /// Box of `+-fraction` around a core medium.
    pub fn around(core: Medium, fraction: f64, coarse_count: usize) -> Self {
        let span = |v: f64| Interval {
            min: v - fraction * v.abs(),
            max: v + fraction * v.abs(),
        };
        Self {
            mass_me: span(core.effective_mass),
            potential: span(core.potential),
            coarse_count,
        }
    }

    fn check(&self) -> Result<()> {
        for (name, iv) in [
            ("core mass", self.mass_me),
            ("core potential", self.potential),
        ] {
            if !(iv.min.is_finite() && iv.max.is_finite()) || iv.min > iv.max {
                return Err(Error::Domain(format!(
                    "{name}: empty box [{}, {}]",
                    iv.min, iv.max
                )));
            }
        }
        if self.mass_me.min <= 0.0 {
            return Err(Error::Domain("core mass box must be positive".into()));
        }
        if self.potential.min <= 0.0 {
            return Err(Error::Domain("core potential box must be positive".into()));
        }
        if self.coarse_count < 2 {
            return Err(Error::Domain(
                "core coarse grid needs at least 2 points per axis".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSettings {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub shell_grid: ShellGrid,
    #[serde(default)]
    pub core_box: CoreBox,
    #[serde(default = "default_screen_band")]
    pub shell_flux_band: f64,
    /// Feasible shell cells handed to the core stage, in cell order.
    #[serde(default = "default_candidates")]
    pub max_candidates: usize,
}

fn default_screen_band() -> f64 {
    SHELL_SCREEN_BAND
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_candidates() -> usize {
    1024
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            shell_grid: ShellGrid::default(),
            core_box: CoreBox::default(),
            shell_flux_band: SHELL_SCREEN_BAND,
            max_candidates: default_candidates(),
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 0.2) {
        return Err(Error::Domain(format!(
            "epsilon must lie in (0, 0.2], got {epsilon}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    NoNodalPoint,
    NodesNotCommon,
    FluxOutOfBand,
    ScatteringNotCancelled,
    TailTooLarge,
    ShellNotWell,
    EvaluationError,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::NoNodalPoint => "no_nodal_point",
            Reason::NodesNotCommon => "nodes_not_common",
            Reason::FluxOutOfBand => "flux_out_of_band",
            Reason::ScatteringNotCancelled => "scattering_not_cancelled",
            Reason::TailTooLarge => "tail_too_large",
            Reason::ShellNotWell => "shell_not_well",
            Reason::EvaluationError => "evaluation_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    /// `(row, column)` = (index on axis 0, index on axis 1).
    pub index: [usize; 2],
    pub values: [f64; 2],
    pub objective: Option<f64>,
    pub feasible: bool,
    pub reasons: Vec<Reason>,
    pub flux_fraction: Option<f64>,
    pub nodal_radius: Option<f64>,
    pub error: Option<String>,
}

impl SweepCell {
    fn new(index: [usize; 2], values: [f64; 2]) -> Self {
        Self {
            index,
            values,
            objective: None,
            feasible: false,
            reasons: Vec::new(),
            flux_fraction: None,
            nodal_radius: None,
            error: None,
        }
    }
}

/// Row-major over `axes[0]` then `axes[1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axes: [SweepAxis; 2],
    pub cells: Vec<SweepCell>,
    pub config_hash: String,
}

impl SweepGrid {
    pub fn cell(&self, i: usize, j: usize) -> &SweepCell {
        &self.cells[i * self.axes[1].values.len() + j]
    }

    pub fn feasible_cells(&self) -> impl Iterator<Item = &SweepCell> {
        self.cells.iter().filter(|c| c.feasible)
    }

    /// `(max - min) / mean` of the objective over cells that produced one.
    pub fn relative_spread(&self) -> Option<f64> {
        let v: Vec<f64> = self.cells.iter().filter_map(|c| c.objective).collect();
        if v.is_empty() {
            return None;
        }
        let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mn = v.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Some((mx - mn) / mean)
    }

    pub fn reason_histogram(&self) -> BTreeMap<Reason, usize> {
        let mut h = BTreeMap::new();
        for c in &self.cells {
            for r in &c.reasons {
                *h.entry(*r).or_insert(0) += 1;
            }
        }
        h
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("grid serializes")
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        let spread = opt(self.relative_spread());
        let mut out = format!(
            "{},{},objective,feasible,reasons,flux_fraction,nodal_radius_nm,relative_spread,config_hash\n",
            self.axes[0].name, self.axes[1].name
        );
        for c in &self.cells {
            let reasons: Vec<&str> = c.reasons.iter().map(|r| r.as_str()).collect();
            out.push_str(&format!(
                "{:.16e},{:.16e},{},{},{},{},{},{},{}\n",
                c.values[0],
                c.values[1],
                opt(c.objective),
                c.feasible,
                reasons.join(";"),
                opt(c.flux_fraction),
                opt(c.nodal_radius),
                spread,
                self.config_hash
            ));
        }
        out
    }
}

/// Field built from the closed-form shell coefficients alone: background
/// `(1, 0)`, shell `(b, c)`, nothing inside.
pub fn approximate_shell_solution(stack: &LayerStack) -> Result<SolutionSet> {
    let l_max = field_order_for(stack, stack.radius());
    let n = stack.region_count();
    let waves = (0..=l_max)
        .map(|l| {
            let (b, c) = shell_coefficients_approx(l, stack)?;
            let mut regions = vec![
                RegionCoefficients {
                    regular: Scaled::ZERO,
                    outgoing: Scaled::ZERO
                };
                n
            ];
            regions[0].regular = Scaled::from_complex(Complex64::new(1.0, 0.0));
            regions[1] = RegionCoefficients {
                regular: Scaled::from_complex(b),
                outgoing: Scaled::from_complex(c),
            };
            Ok(PartialWaveSolution {
                l,
                a_scat: Complex64::new(0.0, 0.0),
                regions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SolutionSet::from_waves(stack, waves))
}

fn nodal_reasons(report: &NodalReport, ac: f64) -> Vec<Reason> {
    match (report.r_n(0), report.r_n(1)) {
        (Some(_), Some(_)) => match report.common_nodal_radius {
            Some(r) if r < ac => Vec::new(),
            Some(_) => vec![Reason::NoNodalPoint],
            None => vec![Reason::NodesNotCommon],
        },
        _ => vec![Reason::NoNodalPoint],
    }
}

fn flux_reasons(f: f64, epsilon: f64, band: f64) -> Vec<Reason> {
    if (f - (1.0 - epsilon)).abs() <= band {
        Vec::new()
    } else {
        vec![Reason::FluxOutOfBand]
    }
}

/// Shell-stage verdict for one `(m_s, V_s)`; the objective is `|F - (1 - epsilon)|`.
pub fn evaluate_shell(template: &LayerStack, shell: Medium, epsilon: f64, band: f64) -> SweepCell {
    let mut cell = SweepCell::new([0, 0], [shell.effective_mass, shell.potential]);
    let stack = template.with_layer_medium(0, shell);
    let ac = stack.layers[1].outer_radius;
    let run = || -> Result<(NodalReport, f64)> {
        let shell_coeffs = (0..=2)
            .map(|l| shell_coefficients_approx(l, &stack))
            .collect::<Result<Vec<_>>>()?;
        let report = find_nodal_point(&stack, &shell_coeffs)?;
        let f = flux_through_shell_annulus(&approximate_shell_solution(&stack)?)?;
        Ok((report, f))
    };
    match stack.clone().validated().and_then(|_| run()) {
        Ok((report, f)) => {
            cell.reasons.extend(nodal_reasons(&report, ac));
            cell.reasons.extend(flux_reasons(f, epsilon, band));
            cell.nodal_radius = report.common_nodal_radius;
            cell.flux_fraction = Some(f);
            cell.objective = Some((f - (1.0 - epsilon)).abs());
        }
        Err(e) => {
            cell.reasons.push(Reason::EvaluationError);
            cell.error = Some(e.to_string());
        }
    }
    if shell.potential >= 0.0 {
        cell.reasons.push(Reason::ShellNotWell);
    }
    cell.feasible = cell.reasons.is_empty();
    cell
}

fn check_template(template: &LayerStack) -> Result<()> {
    if template.layers.len() != 2 {
        return Err(Error::Domain(format!(
            "the cloak template needs exactly 2 layers, got {}",
            template.layers.len()
        )));
    }
    let v = crate::model::validate(template);
    if !v.is_empty() {
        return Err(Error::InvalidStack(v));
    }
    Ok(())
}

#[derive(Serialize)]
struct ShellStageKey<'a> {
    stage: &'static str,
    stack: &'a LayerStack,
    grid: &'a ShellGrid,
    epsilon: f64,
    band: f64,
}

/// Shell-stage scan over `(m_s, V_s)` with the template's geometry, energy
/// and background. `band` is the screening half-width around `1 - epsilon`.
pub fn feasible_shell_set(
    template: &LayerStack,
    grid: &ShellGrid,
    epsilon: f64,
    band: f64,
) -> Result<SweepGrid> {
    check_template(template)?;
    check_epsilon(epsilon)?;
    if !(band > 0.0) {
        return Err(Error::Domain(format!(
            "flux band must be positive, got {band}"
        )));
    }
    grid.mass_me.check("shell mass")?;
    grid.potential.check("shell potential")?;
    let masses = grid.mass_me.values();
    if masses[0] <= 0.0 {
        return Err(Error::Domain("shell mass grid must be positive".into()));
    }
    let potentials = grid.potential.values();
    let cols = potentials.len();
    let cells = (0..masses.len() * cols)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / cols, idx % cols);
            let mut cell = evaluate_shell(
                template,
                Medium::new(masses[i], potentials[j]),
                epsilon,
                band,
            );
            cell.index = [i, j];
            cell
        })
        .collect();
    Ok(SweepGrid {
        axes: [
            SweepAxis {
                name: "shell_mass_me".into(),
                values: masses,
            },
            SweepAxis {
                name: "shell_potential_eV".into(),
                values: potentials,
            },
        ],
        cells,
        config_hash: config_hash(&ShellStageKey {
            stage: "shell",
            stack: template,
            grid,
            epsilon,
            band,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub objective: f64,
    pub scattering_abs: Vec<f64>,
    /// Largest `(2l+1)|a_l|^2` over `l >= 2`.
    pub max_higher_order_term: Option<f64>,
    /// Largest `(2l+1)|a_l|^2` over the two orders that closed the truncation.
    pub truncation_tail: Option<f64>,
    pub sigma_normalized: Option<f64>,
    pub flux_fraction: Option<f64>,
    pub nodal_radius: Option<f64>,
    pub nodal: Option<NodalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub stack: LayerStack,
    pub shell: Medium,
    pub core: Medium,
    pub epsilon: f64,
    pub diagnostics: Diagnostics,
    pub feasible: bool,
    pub reasons: Vec<Reason>,
    pub config_hash: String,
}

impl DesignPoint {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("design point serializes")
    }
}

/// `max(|a_0|, |a_1|)`; solver failures count as infinitely bad.
pub fn core_objective(stack: &LayerStack) -> f64 {
    let mut worst = 0.0f64;
    for l in 0..=1 {
        match solve(stack, l) {
            Ok(s) if s.a_scat.is_finite() => worst = worst.max(s.a_scat.norm()),
            _ => return f64::INFINITY,
        }
    }
    worst
}

/// Full-solver recheck of a complete two-layer stack.
pub fn verify_design(stack: &LayerStack, epsilon: f64) -> Result<DesignPoint> {
    check_template(stack)?;
    check_epsilon(epsilon)?;
    let objective = core_objective(stack);
    let mut reasons = Vec::new();
    if !(objective <= OBJECTIVE_LIMIT) {
        reasons.push(Reason::ScatteringNotCancelled);
    }
    let mut diag = Diagnostics {
        objective,
        scattering_abs: Vec::new(),
        max_higher_order_term: None,
        truncation_tail: None,
        sigma_normalized: None,
        flux_fraction: None,
        nodal_radius: None,
        nodal: None,
    };
    let checked = (|| -> Result<()> {
        let cs = cross_section(stack)?;
        diag.scattering_abs = cs.coefficients.iter().map(|a| a.norm()).collect();
        diag.sigma_normalized = Some(cs.sigma_normalized);
        let weights: Vec<f64> = cs
            .coefficients
            .iter()
            .enumerate()
            .map(|(l, a)| (2 * l + 1) as f64 * a.norm_sqr())
            .collect();
        diag.max_higher_order_term = Some(weights.iter().skip(2).copied().fold(0.0, f64::max));
        let tail = weights.iter().rev().take(2).copied().fold(0.0, f64::max);
        diag.truncation_tail = Some(tail);
        if !(tail < TAIL_LIMIT) {
            reasons.push(Reason::TailTooLarge);
        }
        let sol = SolutionSet::for_radius(stack, stack.radius())?;
        let shell: Vec<_> = sol
            .waves
            .iter()
            .take(3)
            .map(|w| w.shell_coefficients())
            .collect();
        let report = find_nodal_point(stack, &shell)?;
        reasons.extend(nodal_reasons(&report, stack.layers[1].outer_radius));
        diag.nodal_radius = report.common_nodal_radius;
        diag.nodal = Some(report);
        let f = flux_through_shell_annulus(&sol)?;
        diag.flux_fraction = Some(f);
        reasons.extend(flux_reasons(f, epsilon, FLUX_BAND));
        Ok(())
    })();
    if checked.is_err() {
        reasons.push(Reason::EvaluationError);
    }
    reasons.sort();
    reasons.dedup();
    Ok(DesignPoint {
        stack: stack.clone(),
        shell: stack.layers[0].medium,
        core: stack.layers[1].medium,
        epsilon,
        diagnostics: diag,
        feasible: reasons.is_empty(),
        reasons,
        config_hash: config_hash(stack),
    })
}

#[derive(Serialize)]
struct CoreStageKey<'a> {
    stage: &'static str,
    stack: &'a LayerStack,
    core_box: &'a CoreBox,
    epsilon: f64,
}

/// Core stage: coarse grid over the box, bounded simplex refinement of the
/// best seeds, then [`verify_design`].
pub fn match_core_parameters(
    template: &LayerStack,
    core_box: &CoreBox,
    epsilon: f64,
) -> Result<DesignPoint> {
    check_template(template)?;
    check_epsilon(epsilon)?;
    core_box.check()?;
    let lo = [core_box.mass_me.min, core_box.potential.min];
    let hi = [core_box.mass_me.max, core_box.potential.max];
    let f = |p: [f64; 2]| core_objective(&template.with_layer_medium(1, Medium::new(p[0], p[1])));

    let n = core_box.coarse_count;
    let at = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64;
    let mut coarse: Vec<(f64, usize, [f64; 2])> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let p = [at(0, idx / n), at(1, idx % n)];
            (f(p), idx, p)
        })
        .collect();
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let step = [
        (hi[0] - lo[0]) / (n - 1) as f64,
        (hi[1] - lo[1]) / (n - 1) as f64,
    ];
    let mut best = (coarse[0].0, coarse[0].2);
    for &(_, _, seed) in coarse.iter().take(SIMPLEX_SEEDS) {
        let (p, v) = nelder_mead(&f, seed, step, lo, hi);
        if v < best.0 {
            best = (v, p);
        }
    }
    let stack = template.with_layer_medium(1, Medium::new(best.1[0], best.1[1]));
    let mut point = verify_design(&stack, epsilon)?;
    point.config_hash = config_hash(&CoreStageKey {
        stage: "core",
        stack: template,
        core_box,
        epsilon,
    });
    Ok(point)
}

const SIMPLEX_SEEDS: usize = 4;
const SIMPLEX_MAX_ITER: usize = 4000;

/// Nelder-Mead on a box; trial points are clamped to the box.
pub fn nelder_mead(
    f: &(impl Fn([f64; 2]) -> f64 + Sync),
    start: [f64; 2],
    step: [f64; 2],
    lo: [f64; 2],
    hi: [f64; 2],
) -> ([f64; 2], f64) {
    let clamp = |p: [f64; 2]| [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])];
    let eval = |p: [f64; 2]| {
        let v = f(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<([f64; 2], f64)> = [
        start,
        [start[0] + step[0], start[1]],
        [start[0], start[1] + step[1]],
    ]
    .into_iter()
    .map(|p| {
        let mut p = clamp(p);
        // a vertex pushed onto the start by the box goes the other way
        if p == start {
            p = clamp([start[0] - step[0], start[1] - step[1]]);
        }
        (p, eval(p))
    })
    .collect();
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| {
        clamp([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
    };
    for _ in 0..SIMPLEX_MAX_ITER {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| {
                (p[0] - simplex[0].0[0])
                    .abs()
                    .max((p[1] - simplex[0].0[1]).abs())
            })
            .fold(0.0, f64::max);
        if size <= PARAMETER_TOL {
            break;
        }
        let centroid = [
            0.5 * (simplex[0].0[0] + simplex[1].0[0]),
            0.5 * (simplex[0].0[1] + simplex[1].0[1]),
        ];
        let worst = simplex[2];
        let xr = lerp(centroid, worst.0, -1.0);
        let fr = eval(xr);
        if fr < simplex[0].1 {
            let xe = lerp(centroid, worst.0, -2.0);
            let fe = eval(xe);
            simplex[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = lerp(centroid, xr, 0.5);
                (x, eval(x))
            } else {
                let x = lerp(centroid, worst.0, 0.5);
                (x, eval(x))
            };
            if fc < worst.1.min(fr) {
                simplex[2] = (xc, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let p = lerp(best, v.0, 0.5);
                    *v = (p, eval(p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutcome {
    pub found: Option<DesignPoint>,
    pub attempts: Vec<DesignPoint>,
    pub shell_cells: usize,
    pub feasible_shell_cells: usize,
    pub reason_histogram: BTreeMap<Reason, usize>,
    pub dominant_reason: Option<Reason>,
    pub config_hash: String,
}

#[derive(Serialize)]
struct DesignKey<'a> {
    stack: &'a LayerStack,
    settings: &'a DesignSettings,
}

/// Shell stage, then the core stage on feasible shell cells in cell order;
/// stops at the first accepted design.
pub fn design_cloak(template: &LayerStack, settings: &DesignSettings) -> Result<DesignOutcome> {
    check_template(template)?;
    settings.core_box.check()?;
    let grid = feasible_shell_set(
        template,
        &settings.shell_grid,
        settings.epsilon,
        settings.shell_flux_band,
    )?;
    let mut histogram = grid.reason_histogram();
    let mut attempts = Vec::new();
    let mut found = None;
    for cell in grid.feasible_cells().take(settings.max_candidates) {
        let shell = Medium::new(cell.values[0], cell.values[1]);
        let stage = template.with_layer_medium(0, shell);
        let point = match_core_parameters(&stage, &settings.core_box, settings.epsilon)?;
        for r in &point.reasons {
            *histogram.entry(*r).or_insert(0) += 1;
        }
        let accepted = point.feasible;
        attempts.push(point.clone());
        if accepted {
            found = Some(point);
            break;
        }
    }
    let dominant_reason = histogram
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(r, _)| *r);
    Ok(DesignOutcome {
        found,
        attempts,
        shell_cells: grid.cells.len(),
        feasible_shell_cells: grid.feasible_cells().count(),
        reason_histogram: histogram,
        dominant_reason,
        config_hash: config_hash(&DesignKey {
            stack: template,
            settings,
        }),
    })
}

#[derive(Serialize)]
struct SweepKey<'a> {
    stage: &'static str,
    stack: &'a LayerStack,
    masses: &'a [f64],
    potentials: &'a [f64],
}

/// Cross section of `stack` with its innermost medium replaced by every
/// `(m_h, V_h)`; per-cell failures are recorded and the sweep continues.
pub fn robustness_sweep(
    stack: &LayerStack,
    masses: &[f64],
    potentials: &[f64],
) -> Result<SweepGrid> {
    let v = crate::model::validate(stack);
    if !v.is_empty() {
        return Err(Error::InvalidStack(v));
    }
    if stack.layers.len() < 3 {
        return Err(Error::Domain(
            "robustness sweep needs a hidden (third) layer".into(),
        ));
    }
    if masses.is_empty() || potentials.is_empty() {
        return Err(Error::Domain("empty sweep axis".into()));
    }
    let hidden = stack.layers.len() - 1;
    let cols = potentials.len();
    let cells = (0..masses.len() * cols)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / cols, idx % cols);
            let mut cell = SweepCell::new([i, j], [masses[i], potentials[j]]);
            let s = stack.with_layer_medium(hidden, Medium::new(masses[i], potentials[j]));
            match cross_section(&s) {
                Ok(cs) => {
                    cell.objective = Some(cs.sigma_normalized);
                    cell.feasible = true;
                }
                Err(e) => {
                    cell.reasons.push(Reason::EvaluationError);
                    cell.error = Some(e.to_string());
                }
            }
            cell
        })
        .collect();
    Ok(SweepGrid {
        axes: [
            SweepAxis {
                name: "hidden_mass_me".into(),
                values: masses.to_vec(),
            },
            SweepAxis {
                name: "hidden_potential_eV".into(),
                values: potentials.to_vec(),
            },
        ],
        cells,
        config_hash: config_hash(&SweepKey {
            stage: "robustness",
            stack,
            masses,
            potentials,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;

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

    fn with_hidden(radius: f64) -> LayerStack {
        let mut s = quoted_stack();
        s.layers
            .push(Layer::new(Medium::new(0.055, -9000.0), radius));
        s.validated().unwrap()
    }

    fn small_settings() -> DesignSettings {
        DesignSettings {
            shell_grid: ShellGrid {
                mass_me: AxisSpec {
                    min: 0.16,
                    max: 0.16,
                    count: 1,
                },
                potential: AxisSpec {
                    min: -3.4,
                    max: -2.8,
                    count: 3,
                },
            },
            ..DesignSettings::default()
        }
    }

    #[test]
    fn axis_values_are_inclusive() {
        let a = AxisSpec {
            min: 1.0,
            max: 2.0,
            count: 5,
        };
        assert_eq!(a.values(), vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        assert_eq!(
            AxisSpec {
                min: 3.0,
                max: 4.0,
                count: 1
            }
            .values(),
            vec![3.0]
        );
    }

    #[test]
    fn bad_inputs_are_domain_errors() {
        let mut g = ShellGrid::default();
        g.mass_me.count = 0;
        assert!(matches!(
            feasible_shell_set(&quoted_stack(), &g, 0.05, 0.1),
            Err(Error::Domain(_))
        ));
        let g = small_settings().shell_grid;
        assert!(matches!(
            feasible_shell_set(&quoted_stack(), &g, 0.0, 0.1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            feasible_shell_set(&quoted_stack(), &g, 0.3, 0.1),
            Err(Error::Domain(_))
        ));
        let mut b = CoreBox::default();
        b.potential = Interval {
            min: -1.0,
            max: 5.0,
        };
        assert!(matches!(
            match_core_parameters(&quoted_stack(), &b, 0.05),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn quoted_shell_has_node_but_closed_form_flux_is_high() {
        let c = evaluate_shell(
            &quoted_stack(),
            Medium::new(0.16, -2.34),
            0.05,
            SHELL_SCREEN_BAND,
        );
        let rn = c.nodal_radius.unwrap();
        assert!((rn - 1.547).abs() < 1e-3, "{rn}");
        let f = c.flux_fraction.unwrap();
        assert!((f - 1.101).abs() < 1e-3, "{f}");
        assert_eq!(c.reasons, vec![Reason::FluxOutOfBand]);
    }

    #[test]
    fn positive_shell_potential_is_never_feasible() {
        let g = ShellGrid {
            mass_me: AxisSpec {
                min: 0.1,
                max: 0.5,
                count: 3,
            },
            potential: AxisSpec {
                min: 0.5,
                max: 5.0,
                count: 3,
            },
        };
        let grid = feasible_shell_set(&quoted_stack(), &g, 0.05, SHELL_SCREEN_BAND).unwrap();
        assert_eq!(grid.cells.len(), 9);
        assert_eq!(grid.feasible_cells().count(), 0);
        assert!(grid
            .cells
            .iter()
            .all(|c| c.reasons.contains(&Reason::ShellNotWell)));
    }

    #[test]
    fn uniform_well_core_does_not_cancel() {
        let s = quoted_stack().with_layer_medium(1, Medium::new(0.16, -2.34));
        assert!(core_objective(&s) > 1e-2);
    }

    #[test]
    fn simplex_finds_box_constrained_minimum() {
        let f = |p: [f64; 2]| (p[0] - 0.3).powi(2) + 10.0 * (p[1] + 2.0).powi(2);
        let (p, _) = nelder_mead(&f, [0.9, 0.9], [0.1, 0.1], [0.0, -1.0], [1.0, 1.0]);
        assert!(
            (p[0] - 0.3).abs() < 1e-5 && (p[1] + 1.0).abs() < 1e-6,
            "{p:?}"
        );
    }

    #[test]
    fn design_found_and_sensitive_to_core_potential() {
        let out = design_cloak(&quoted_stack(), &small_settings()).unwrap();
        let p = out.found.expect("design found");
        let d = &p.diagnostics;
        assert!(d.objective <= OBJECTIVE_LIMIT);
        assert!((d.flux_fraction.unwrap() - 0.95).abs() <= FLUX_BAND);
        assert!(d.nodal_radius.unwrap() < 1.7);
        assert!(d.truncation_tail.unwrap() < TAIL_LIMIT);

        let mut core = p.core;
        core.potential *= 1.1;
        let worse = core_objective(&p.stack.with_layer_medium(1, core));
        assert!(worse > 100.0 * d.objective.max(1e-8), "{worse}");
    }

    #[test]
    fn design_is_deterministic() {
        let a = design_cloak(&quoted_stack(), &small_settings()).unwrap();
        let b = design_cloak(&quoted_stack(), &small_settings()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn excluded_wells_fail_with_nodal_reason() {
        let mut s = small_settings();
        s.shell_grid.potential = AxisSpec {
            min: 0.5,
            max: 3.0,
            count: 3,
        };
        let out = design_cloak(&quoted_stack(), &s).unwrap();
        assert!(out.found.is_none());
        assert_eq!(out.dominant_reason, Some(Reason::NoNodalPoint));
    }

    #[test]
    fn refinement_keeps_feasible_cells() {
        let coarse = ShellGrid {
            mass_me: AxisSpec {
                min: 0.14,
                max: 0.2,
                count: 3,
            },
            potential: AxisSpec {
                min: -4.0,
                max: -2.0,
                count: 3,
            },
        };
        let fine = ShellGrid {
            mass_me: AxisSpec {
                count: 5,
                ..coarse.mass_me
            },
            potential: AxisSpec {
                count: 5,
                ..coarse.potential
            },
        };
        let a = feasible_shell_set(&quoted_stack(), &coarse, 0.05, SHELL_SCREEN_BAND).unwrap();
        let b = feasible_shell_set(&quoted_stack(), &fine, 0.05, SHELL_SCREEN_BAND).unwrap();
        assert!(a.feasible_cells().count() > 0);
        for c in a.feasible_cells() {
            assert!(b.cell(2 * c.index[0], 2 * c.index[1]).feasible);
        }
    }

    #[test]
    fn hidden_region_barely_matters() {
        let g = robustness_sweep(
            &with_hidden(1.0),
            &[0.1, 1.0, 10.0],
            &[-9000.0, 0.0, 9000.0],
        )
        .unwrap();
        assert!(g.cells.iter().all(|c| c.error.is_none()));
        assert!(g.relative_spread().unwrap() < 1e-2);
    }

    #[test]
    fn sweep_records_cell_failures_and_continues() {
        let g = robustness_sweep(&with_hidden(1.0), &[0.5], &[0.01, -1.0]).unwrap();
        assert_eq!(g.cells[0].reasons, vec![Reason::EvaluationError]);
        assert!(g.cells[0].error.as_deref().unwrap().contains("E equals V"));
        assert!(g.cells[1].objective.is_some());
    }

    #[test]
    fn thin_secondary_layer_loses_robustness() {
        let (m, v) = ([0.1, 10.0], [-100.0, 100.0]);
        let thick = robustness_sweep(&with_hidden(1.0), &m, &v).unwrap();
        let thin = robustness_sweep(&with_hidden(1.65), &m, &v).unwrap();
        assert!(thin.relative_spread().unwrap() > 10.0 * thick.relative_spread().unwrap());
    }

    #[test]
    fn sweep_csv_has_header_and_rows() {
        let g = robustness_sweep(&with_hidden(1.0), &[0.5], &[0.0, 1.0]).unwrap();
        let csv = g.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert!(lines[0].starts_with("hidden_mass_me,hidden_potential_eV,objective"));
        assert_eq!(lines.len(), 3);
        let back: SweepGrid = serde_json::from_str(&g.to_json_string()).unwrap();
        assert_eq!(back, g);
    }
}
