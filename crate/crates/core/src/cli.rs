//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::designer::{config_hash, design_cloak, robustness_sweep, DesignSettings};
use crate::error::{Error, Result};
use crate::fields::{
    export_field_grid, trace_streamlines, PlaneSpec, StreamlineOptions, StreamlineSet,
    DEFAULT_RESOLUTION,
};
use crate::model::{parse_json, wavenumber_products, Layer, LayerStack, Medium, WavenumberProduct};
use crate::solver::{cross_section, SolutionSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_INVALID: i32 = 4;
pub const EXIT_DEGENERATE: i32 = 5;
pub const EXIT_INFEASIBLE: i32 = 6;

#[derive(Debug, Parser)]
#[command(
    name = "qcloak",
    version,
    about = "Matter-wave scattering and cloak design for layered nanoparticles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "qcloak-out")]
    pub out: PathBuf,
    /// Worker threads, 0 = one per core.
    #[arg(long, env = "QCLOAK_THREADS", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross section and per-order scattering coefficients.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Field grid on a plane, plus streamlines.
    Field {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value = "x=0")]
        plane: String,
    },
    /// Two-stage cloak search.
    Design {
        #[command(flatten)]
        common: Common,
    },
    /// Hidden-region robustness sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve { common }
            | Command::Field { common, .. }
            | Command::Design { common }
            | Command::Sweep { common } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Solve { .. } => "solve",
            Command::Field { .. } => "field",
            Command::Design { .. } => "design",
            Command::Sweep { .. } => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    #[serde(default = "default_sweep_masses")]
    pub mass_me: Vec<f64>,
    #[serde(rename = "potential_eV", default = "default_sweep_potentials")]
    pub potential: Vec<f64>,
    /// Adds a hidden layer of this radius when the stack has only two layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_radius_nm: Option<f64>,
}

fn default_sweep_masses() -> Vec<f64> {
    vec![0.055, 0.5, 1.0, 5.0, 10.0]
}

fn default_sweep_potentials() -> Vec<f64> {
    vec![-9000.0, -100.0, 0.0, 100.0, 9000.0]
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            mass_me: default_sweep_masses(),
            potential: default_sweep_potentials(),
            hidden_radius_nm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FieldSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent_nm: Option<f64>,
    /// Streamline seeds in plane coordinates; defaults to a row upstream of the particle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<[f64; 2]>>,
}

/// Stack plus optional per-command settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub stack: LayerStack,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub output_dir: String,
    pub config_hash: String,
    pub tool_version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderRow {
    pub l: usize,
    pub a_re: f64,
    pub a_im: f64,
    pub abs_a: f64,
    pub term_nm2: f64,
    pub unitarity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub config_hash: String,
    pub sigma_nm2: f64,
    pub sigma_normalized: f64,
    pub optical_theorem_sigma_nm2: f64,
    pub l_max_used: usize,
    pub orders: Vec<OrderRow>,
    pub wavenumbers: Vec<WavenumberProduct>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSummary {
    pub config_hash: String,
    pub plane: String,
    pub resolution: usize,
    pub l_max: usize,
    /// Largest `|psi|^2` over cells inside the second layer's outer radius.
    pub core_max_abs_psi_sq: Option<f64>,
    /// Same, restricted to half that radius.
    pub core_half_radius_max_abs_psi_sq: Option<f64>,
    /// Same inside the innermost layer, for stacks with three or more layers.
    pub hidden_max_abs_psi_sq: Option<f64>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) => EXIT_USAGE,
        Error::Parse(_) | Error::Json(_) => EXIT_PARSE,
        Error::InvalidStack(_) => EXIT_INVALID,
        Error::Degenerate(_)
        | Error::NumericalDegeneracy { .. }
        | Error::TruncationNotConverged { .. }
        | Error::Quadrature { .. } => EXIT_DEGENERATE,
        Error::Io(_) => EXIT_IO,
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::InvalidStack(v) = &e {
                for x in v {
                    eprintln!("  {x}");
                }
            }
            exit_code(&e)
        }
    }
}

fn set_threads(n: usize) {
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: RunConfig = parse_json(&text)?;
    let v = crate::model::validate(&cfg.stack);
    if !v.is_empty() {
        return Err(Error::InvalidStack(v));
    }
    Ok(cfg)
}

fn write(out: &Path, name: &str, body: &str, written: &mut Vec<String>) -> Result<()> {
    fs::write(out.join(name), body)?;
    written.push(name.to_string());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<i32> {
    let start = Instant::now();
    let common = cli.command.common();
    set_threads(common.threads);
    let cfg = load_config(&common.config)?;
    let hash = config_hash(&cfg);
    fs::create_dir_all(&common.out)?;
    let out = common.out.as_path();
    let mut written = Vec::new();

    let code = match &cli.command {
        Command::Solve { .. } => {
            let report = solve_report(&cfg.stack, &hash)?;
            print_solve(&report);
            write(out, "solve.json", &to_json(&report), &mut written)?;
            EXIT_OK
        }
        Command::Field {
            resolution, plane, ..
        } => {
            let plane: PlaneSpec = plane.parse()?;
            let settings = cfg.field.clone().unwrap_or_default();
            let summary = run_field(
                &cfg.stack,
                plane,
                *resolution,
                &settings,
                &hash,
                out,
                &mut written,
            )?;
            println!(
                "plane {} resolution {} l_max {}",
                summary.plane, summary.resolution, summary.l_max
            );
            if let Some(p) = summary.core_max_abs_psi_sq {
                println!("core max |psi|^2 = {p:.6e}");
            }
            if let Some(p) = summary.core_half_radius_max_abs_psi_sq {
                println!("core (r < a_c/2) max |psi|^2 = {p:.6e}");
            }
            if let Some(p) = summary.hidden_max_abs_psi_sq {
                println!("hidden-region max |psi|^2 = {p:.6e}");
            }
            write(out, "field_summary.json", &to_json(&summary), &mut written)?;
            EXIT_OK
        }
        Command::Design { .. } => {
            let settings = cfg.design.clone().unwrap_or_default();
            let outcome = design_cloak(&cfg.stack, &settings)?;
            write(out, "design.json", &to_json(&outcome), &mut written)?;
            match &outcome.found {
                Some(p) => {
                    println!(
                        "found: shell ({}, {} eV) core ({}, {} eV)",
                        p.shell.effective_mass,
                        p.shell.potential,
                        p.core.effective_mass,
                        p.core.potential
                    );
                    let d = &p.diagnostics;
                    println!(
                        "objective {:.3e}  F {:?}  r_n {:?}  sigma_n {:?}",
                        d.objective, d.flux_fraction, d.nodal_radius, d.sigma_normalized
                    );
                    EXIT_OK
                }
                None => {
                    println!(
                        "infeasible: {} of {} shell cells passed, {} core searches",
                        outcome.feasible_shell_cells,
                        outcome.shell_cells,
                        outcome.attempts.len()
                    );
                    for (r, n) in &outcome.reason_histogram {
                        println!("  {:<26} {n}", r.as_str());
                    }
                    EXIT_INFEASIBLE
                }
            }
        }
        Command::Sweep { .. } => {
            let settings = cfg.sweep.clone().unwrap_or_default();
            let stack = sweep_stack(&cfg.stack, &settings)?;
            let grid = robustness_sweep(&stack, &settings.mass_me, &settings.potential)?;
            write(out, "sweep.csv", &grid.to_csv(), &mut written)?;
            write(out, "sweep.json", &grid.to_json_string(), &mut written)?;
            let failed = grid.cells.iter().filter(|c| c.error.is_some()).count();
            println!(
                "{} cells, {} failed, relative spread {:.3e}",
                grid.cells.len(),
                failed,
                grid.relative_spread().unwrap_or(f64::NAN)
            );
            EXIT_OK
        }
    };

    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        config_path: common.config.display().to_string(),
        output_dir: common.out.display().to_string(),
        config_hash: hash,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: written,
    };
    fs::write(out.join("manifest.json"), to_json(&manifest))?;
    Ok(code)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes")
}

pub fn solve_report(stack: &LayerStack, hash: &str) -> Result<SolveReport> {
    let cs = cross_section(stack)?;
    let orders = cs
        .coefficients
        .iter()
        .zip(&cs.per_l_terms)
        .map(|(a, &(l, term))| OrderRow {
            l,
            a_re: a.re,
            a_im: a.im,
            abs_a: a.norm(),
            term_nm2: term,
            unitarity_residual: ((1.0 + 2.0 * a).norm() - 1.0).abs(),
        })
        .collect();
    Ok(SolveReport {
        config_hash: hash.to_string(),
        sigma_nm2: cs.sigma,
        sigma_normalized: cs.sigma_normalized,
        optical_theorem_sigma_nm2: cs.optical_theorem_sigma(),
        l_max_used: cs.l_max_used,
        orders,
        wavenumbers: wavenumber_products(stack),
    })
}

fn print_solve(r: &SolveReport) {
    println!("sigma            = {:.10e} nm^2", r.sigma_nm2);
    println!("sigma / (pi a^2) = {:.10e}", r.sigma_normalized);
    println!(
        "optical theorem  = {:.10e} nm^2",
        r.optical_theorem_sigma_nm2
    );
    println!(
        "{:>3} {:>24} {:>24} {:>14} {:>10}",
        "l", "Re a_l", "Im a_l", "term nm^2", "unitarity"
    );
    for o in &r.orders {
        println!(
            "{:>3} {:>24.16e} {:>24.16e} {:>14.6e} {:>10.2e}",
            o.l, o.a_re, o.a_im, o.term_nm2, o.unitarity_residual
        );
    }
    for w in &r.wavenumbers {
        println!(
            "region {}: |k| = {:.6} nm^-1, |k| R_own = {:.4}, |k| a = {:.4}{}",
            w.region,
            w.k_abs,
            w.k_times_own_radius,
            w.k_times_particle_radius,
            if w.propagating { "" } else { " (evanescent)" }
        );
    }
}

fn sweep_stack(stack: &LayerStack, s: &SweepSettings) -> Result<LayerStack> {
    let mut stack = stack.clone();
    if let (2, Some(r)) = (stack.layers.len(), s.hidden_radius_nm) {
        let m = s.mass_me.first().copied().unwrap_or(1.0);
        let v = s.potential.first().copied().unwrap_or(0.0);
        stack.layers.push(Layer::new(Medium::new(m, v), r));
    }
    stack.validated()
}

fn default_seeds(extent: f64, stack: &LayerStack) -> Vec<[f64; 2]> {
    let a = stack.radius();
    let v0 = -0.5 * extent + 0.02 * extent;
    (0..=10)
        .map(|i| [-a + 2.0 * a * i as f64 / 10.0, v0])
        .collect()
}

fn run_field(
    stack: &LayerStack,
    plane: PlaneSpec,
    resolution: usize,
    settings: &FieldSettings,
    hash: &str,
    out: &Path,
    written: &mut Vec<String>,
) -> Result<FieldSummary> {
    let extent = settings
        .extent_nm
        .unwrap_or_else(|| crate::fields::default_extent(stack));
    let half_diag = 0.5 * extent * 2f64.sqrt() + plane.value.abs();
    let sol = SolutionSet::for_radius(stack, half_diag)?;
    let grid = export_field_grid(&sol, plane, resolution, Some(extent))?;
    write(out, "field.csv", &grid.to_csv(), written)?;
    #[derive(Serialize)]
    struct Tagged<'a> {
        config_hash: &'a str,
        #[serde(flatten)]
        grid: &'a crate::fields::FieldGrid,
    }
    write(
        out,
        "field.json",
        &serde_json::to_string(&Tagged {
            config_hash: hash,
            grid: &grid,
        })?,
        written,
    )?;

    let seeds = settings
        .seeds
        .clone()
        .unwrap_or_else(|| default_seeds(extent, stack));
    let lines = trace_streamlines(&grid, &seeds, StreamlineOptions::default());
    #[derive(Serialize)]
    struct TaggedLines<'a> {
        config_hash: &'a str,
        #[serde(flatten)]
        set: &'a StreamlineSet,
    }
    let set = StreamlineSet {
        plane,
        polylines: lines,
    };
    write(
        out,
        "streamlines.json",
        &serde_json::to_string(&TaggedLines {
            config_hash: hash,
            set: &set,
        })?,
        written,
    )?;

    let max_inside = |radius: f64| {
        grid.samples
            .iter()
            .filter(|s| {
                let r2 = s.u_nm * s.u_nm + s.v_nm * s.v_nm + plane.value * plane.value;
                r2 < radius * radius
            })
            .map(|s| s.abs_psi().powi(2))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
    };
    let core = stack.layers.get(1).and_then(|l| max_inside(l.outer_radius));
    let core_half = stack
        .layers
        .get(1)
        .and_then(|l| max_inside(0.5 * l.outer_radius));
    let hidden = if stack.layers.len() >= 3 {
        max_inside(stack.layers.last().expect("layers").outer_radius)
    } else {
        None
    };
    Ok(FieldSummary {
        config_hash: hash.to_string(),
        plane: plane.to_string(),
        resolution,
        l_max: sol.l_max(),
        core_max_abs_psi_sq: core,
        core_half_radius_max_abs_psi_sq: core_half,
        hidden_max_abs_psi_sq: hidden,
    })
}
