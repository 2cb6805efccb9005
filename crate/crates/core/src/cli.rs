//! Command-line front end: configuration, subcommands and the end-to-end
//! pipeline. Every file is written atomically, and a pipeline manifest
//! carries everything needed to rerun it.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::DensityOperator;
use crate::error::RotorError;
use crate::io::write_atomic;
use crate::measurement::{
    build_grid, measured_moments, simulate_counts, subtract_background, CountMatrix, SimulationSpec,
    DEFAULT_CARRIER_OFFSET,
};
use crate::rotor::{BasisWindow, TimeWindow, TruncatedRotorState, VonMisesParams};
use crate::seeds::derive_seed;
use crate::spectral::{divergence_demo, fisher_omega, to_spectrum, DivergenceRow, FrequencyGrid};
use crate::tomography::{
    analyze, bootstrap_from, maxlik_reconstruct, state_uncertainties, wigner_from_rho, BootstrapReport,
    MaxLikDiagnostics, MaxLikOptions,
};
use crate::uncertainty::{bounds, report, BoundTable, UncertaintyReport};

/// Sample budgets of the `fisher` divergence table.
pub const DIVERGENCE_BUDGETS: [usize; 3] = [1_000, 10_000, 100_000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSize {
    pub n_m: usize,
    pub n_phi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "T_ps")]
    pub t_ps: f64,
    pub kappa_list: Vec<f64>,
    pub grid: GridSize,
    pub mean_total: f64,
    pub background_per_bin: f64,
    pub carrier_offset: i64,
    pub seed: u64,
    pub trunc: usize,
    pub n_reps: usize,
}

/// Twelve log-spaced values from 0.2 to 8.
pub fn default_kappa_list() -> Vec<f64> {
    (0..12).map(|i| 0.2 * 40f64.powf(i as f64 / 11.0)).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_ps: 28.6,
            kappa_list: default_kappa_list(),
            grid: GridSize { n_m: 20, n_phi: 20 },
            mean_total: 1.5e6,
            background_per_bin: 0.0,
            carrier_offset: DEFAULT_CARRIER_OFFSET,
            seed: 1,
            trunc: 21,
            n_reps: 100,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} = {v} must be positive and finite"))
            }
        };
        positive("T_ps", self.t_ps)?;
        positive("mean_total", self.mean_total)?;
        if !(self.background_per_bin >= 0.0) || !self.background_per_bin.is_finite() {
            return Err(format!("background_per_bin = {} must be >= 0", self.background_per_bin));
        }
        if self.kappa_list.is_empty() {
            return Err("kappa_list is empty".into());
        }
        if let Some(k) = self.kappa_list.iter().find(|k| !(**k > 0.0 && **k <= 16.0)) {
            return Err(format!("kappa {k} outside (0, 16]"));
        }
        if self.grid.n_m < 3 || self.grid.n_phi < 8 {
            return Err(format!("grid {}x{} needs n_m >= 3 and n_phi >= 8", self.grid.n_m, self.grid.n_phi));
        }
        if self.trunc < 3 {
            return Err(format!("trunc = {} must be >= 3", self.trunc));
        }
        if self.n_reps < crate::tomography::MIN_BOOTSTRAP_REPS {
            return Err(format!(
                "n_reps = {} below the minimum of {}",
                self.n_reps,
                crate::tomography::MIN_BOOTSTRAP_REPS
            ));
        }
        Ok(())
    }

    /// Reads a config file, or the `config` member of a pipeline manifest.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let inner = match value.get("config") {
            Some(c) if value.get("tool").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).map_err(|e| e.to_string())
    }

    pub fn window(&self) -> BasisWindow {
        BasisWindow::with_dim(0, self.trunc).expect("trunc validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rotor-tf", version, about = "Quantum-rotor time-frequency toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration (a pipeline manifest is accepted too).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Restrict to a single κ.
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    /// Base seed for simulation and bootstrap streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "rotor-tf-out")]
    pub out: PathBuf,
    /// Table format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Dimension of the reconstruction window.
    #[arg(long, global = true)]
    pub trunc: Option<usize>,
    /// Bootstrap replicates (also the repetitions of the `fisher` table).
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Mean background per bin: added by `simulate` and `pipeline`,
    /// subtracted by `reconstruct`.
    #[arg(long, global = true)]
    pub background: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form bound table.
    Bounds,
    /// Uncertainty report of the von Mises state |0,0⟩ for each κ.
    State,
    /// Simulated count record for one κ.
    Simulate,
    /// MaxLik reconstruction of a count record.
    Reconstruct {
        /// Count CSV with its JSON sidecar next to it.
        counts: PathBuf,
    },
    /// Wigner map and state uncertainties of a density operator.
    Wigner {
        /// Density operator JSON.
        rho: PathBuf,
        /// Angles on the θ axis, an even count of at least 4·dim (default 4·dim).
        #[arg(long)]
        theta_points: Option<usize>,
    },
    /// Frequency Fisher information and the sinc² divergence table.
    Fisher {
        /// Use the flat pulse |l=0⟩ instead of a von Mises state.
        #[arg(long)]
        flat: bool,
    },
    /// Simulation, reconstruction and bootstrap for every κ.
    Pipeline,
}

/// Failure classes, mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

fn numerical(e: RotorError) -> CliError {
    CliError::Numerical(e.to_string())
}

fn input(e: RotorError) -> CliError {
    CliError::Config(e.to_string())
}

/// Config file, then command-line overrides, then validation.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(k) = cli.kappa {
        cfg.kappa_list = vec![k];
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.trunc {
        cfg.trunc = t;
    }
    if let Some(r) = cli.reps {
        cfg.n_reps = r;
    }
    if let Some(b) = cli.background {
        cfg.background_per_bin = b;
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn single_kappa(cfg: &RunConfig, cmd: &str) -> Result<f64, CliError> {
    match cfg.kappa_list.as_slice() {
        [k] => Ok(*k),
        _ => Err(CliError::Config(format!("{cmd} needs a single kappa (use --kappa)"))),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Numerical(e.to_string()))
}

fn write(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(numerical)?;
    written.push(path.to_path_buf());
    Ok(())
}

/// Rows serialised as CSV with a header.
pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Result<String, RotorError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| RotorError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| RotorError::Parse(e.to_string()))
}

/// Reads rows written by [`rows_to_csv`].
pub fn rows_from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, RotorError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(RotorError::from)).collect()
}

fn write_table<T: Serialize>(
    dir: &Path,
    stem: &str,
    format: Format,
    rows: &[T],
    written: &mut Vec<PathBuf>,
) -> Result<(), CliError> {
    let text = match format {
        Format::Csv => rows_to_csv(rows).map_err(numerical)?,
        Format::Json => to_json(&rows)?,
    };
    write(&dir.join(format!("{stem}.{}", format.ext())), &text, written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub kappa: f64,
    #[serde(rename = "D_s")]
    pub d_s: f64,
    pub state_product: f64,
    pub meas_product: f64,
    pub state_norm: f64,
    pub meas_norm: f64,
}

impl From<BoundTable> for BoundsRow {
    fn from(b: BoundTable) -> Self {
        Self {
            kappa: b.kappa,
            d_s: b.dispersion,
            state_product: b.state_product,
            meas_product: b.meas_product,
            state_norm: b.state_norm,
            meas_norm: b.meas_norm.unwrap_or(f64::NAN),
        }
    }
}

pub fn bounds_rows(cfg: &RunConfig) -> Result<Vec<BoundsRow>, RotorError> {
    cfg.kappa_list.iter().map(|&k| bounds(k).map(BoundsRow::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub kappa: f64,
    pub mean_l: f64,
    pub var_l: f64,
    pub var_s: f64,
    pub abs_mean_e: f64,
    pub sigma: f64,
    pub product: f64,
    pub normalized_product: f64,
    pub bound_product: f64,
}

fn state_row(kappa: f64) -> Result<StateRow, RotorError> {
    let s = VonMisesParams::fiducial(kappa)?.state()?;
    let r = report(&s)?;
    Ok(StateRow {
        kappa,
        mean_l: r.mean_l,
        var_l: r.var_l,
        var_s: r.var_s,
        abs_mean_e: r.abs_mean_e(),
        sigma: r.sigma.unwrap_or(f64::NAN),
        product: r.product,
        normalized_product: r.normalized_product.unwrap_or(f64::NAN),
        bound_product: bounds(kappa)?.state_product,
    })
}

/// Flat form of an [`UncertaintyReport`] for tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mean_e_re: f64,
    pub mean_e_im: f64,
    pub mean_l: f64,
    pub var_l: f64,
    pub var_s: f64,
    pub sigma: f64,
    pub product: f64,
    pub normalized_product: f64,
    pub degenerate: bool,
}

impl From<&UncertaintyReport> for ReportRow {
    fn from(r: &UncertaintyReport) -> Self {
        Self {
            mean_e_re: r.mean_e.re,
            mean_e_im: r.mean_e.im,
            mean_l: r.mean_l,
            var_l: r.var_l,
            var_s: r.var_s,
            sigma: r.sigma.unwrap_or(f64::NAN),
            product: r.product,
            normalized_product: r.normalized_product.unwrap_or(f64::NAN),
            degenerate: r.degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReconstructionRecord {
    diagnostics: MaxLikDiagnostics,
    /// Fidelity to `|0,0⟩` with the record's signal κ.
    fidelity_to_nominal: f64,
    measurement: UncertaintyReport,
    bootstrap: Option<BootstrapReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FisherRecord {
    state: String,
    #[serde(rename = "T_ps")]
    t_ps: f64,
    fisher: f64,
    first_term: f64,
    second_term: f64,
    four_var_t: f64,
    cr_floor: f64,
    cr_product: f64,
    divergence: Vec<DivergenceRow>,
}

/// One line of the pipeline summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kappa: f64,
    #[serde(rename = "D_s")]
    pub d_s: f64,
    pub state_bound: f64,
    pub meas_bound: f64,
    pub meas_norm_bound: f64,
    pub state_product: f64,
    pub state_product_lo: f64,
    pub state_product_hi: f64,
    pub state_norm: f64,
    pub state_norm_lo: f64,
    pub state_norm_hi: f64,
    pub meas_product: f64,
    pub meas_product_lo: f64,
    pub meas_product_hi: f64,
    pub meas_norm: f64,
    pub meas_norm_lo: f64,
    pub meas_norm_hi: f64,
    pub fidelity: f64,
    pub iterations: usize,
    pub converged: bool,
    pub bootstrap_failures: usize,
    pub status: String,
}

impl SummaryRow {
    fn failed(kappa: f64, msg: String) -> Self {
        let b = bounds(kappa).ok();
        let nan = f64::NAN;
        Self {
            kappa,
            d_s: b.map_or(nan, |b| b.dispersion),
            state_bound: b.map_or(nan, |b| b.state_product),
            meas_bound: b.map_or(nan, |b| b.meas_product),
            meas_norm_bound: b.and_then(|b| b.meas_norm).unwrap_or(nan),
            state_product: nan,
            state_product_lo: nan,
            state_product_hi: nan,
            state_norm: nan,
            state_norm_lo: nan,
            state_norm_hi: nan,
            meas_product: nan,
            meas_product_lo: nan,
            meas_product_hi: nan,
            meas_norm: nan,
            meas_norm_lo: nan,
            meas_norm_hi: nan,
            fidelity: nan,
            iterations: 0,
            converged: false,
            bootstrap_failures: 0,
            status: format!("failed: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub kappa: f64,
    pub simulation_seed: u64,
    pub bootstrap_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub maxlik: MaxLikOptions,
    pub seeds: Vec<SeedRecord>,
    pub files: Vec<String>,
    pub failed_kappas: Vec<f64>,
}

fn kappa_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("kappa_{index:02}"))
}

/// Seeds of κ index `i`: simulation `derive_seed(seed, [0, i])`, bootstrap
/// `derive_seed(seed, [1, i])`.
pub fn pipeline_seeds(cfg: &RunConfig) -> Vec<SeedRecord> {
    cfg.kappa_list
        .iter()
        .enumerate()
        .map(|(i, &kappa)| SeedRecord {
            kappa,
            simulation_seed: derive_seed(cfg.seed, &[0, i as u64]),
            bootstrap_seed: derive_seed(cfg.seed, &[1, i as u64]),
        })
        .collect()
}

fn interval(r: &BootstrapReport, state: bool, field: &str) -> (f64, f64) {
    let iv = if state {
        r.state_interval(field)
    } else {
        r.measurement_interval(field)
    };
    iv.map_or((f64::NAN, f64::NAN), |i| (i.ci_lo, i.ci_hi))
}

fn pipeline_one(
    cfg: &RunConfig,
    index: usize,
    seeds: &SeedRecord,
    out: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<SummaryRow, CliError> {
    let kappa = seeds.kappa;
    let truth = VonMisesParams::fiducial(kappa).and_then(|p| p.state()).map_err(numerical)?;
    let grid = build_grid(cfg.grid.n_m, cfg.grid.n_phi, kappa).map_err(numerical)?;
    let spec = SimulationSpec {
        mean_total: cfg.mean_total,
        background_per_bin: cfg.background_per_bin,
        seed: seeds.simulation_seed,
        t_ps: cfg.t_ps,
        kappa_s: kappa,
        carrier_offset: cfg.carrier_offset,
        phi_offset: 0.0,
    };
    let raw = simulate_counts(&DensityOperator::pure(&truth), &grid, &spec).map_err(numerical)?;
    let counts = if cfg.background_per_bin > 0.0 {
        subtract_background(&raw, cfg.background_per_bin).map_err(numerical)?
    } else {
        raw.clone()
    };
    let window = cfg.window();
    let opts = MaxLikOptions::default();
    let point = analyze(&counts, &window, &opts).map_err(numerical)?;
    let boot = bootstrap_from(&counts, &point, &window, &opts, cfg.n_reps, seeds.bootstrap_seed)
        .map_err(numerical)?;
    let b = bounds(kappa).map_err(numerical)?;
    let fidelity = point.rho.fidelity_pure(&truth);

    let dir = kappa_dir(out, index);
    let counts_path = dir.join("counts.csv");
    raw.save(&counts_path).map_err(numerical)?;
    written.push(counts_path.clone());
    written.push(CountMatrix::sidecar_path(&counts_path));
    write(&dir.join("rho.json"), &point.rho.to_json().map_err(numerical)?, written)?;
    write(&dir.join("wigner.csv"), &point.wigner.to_csv().map_err(numerical)?, written)?;
    let record = ReconstructionRecord {
        diagnostics: point.diagnostics.clone(),
        fidelity_to_nominal: fidelity,
        measurement: point.measurement.clone(),
        bootstrap: Some(boot.clone()),
    };
    write(&dir.join("report.json"), &to_json(&record)?, written)?;

    let (sp_lo, sp_hi) = interval(&boot, true, "product");
    let (sn_lo, sn_hi) = interval(&boot, true, "normalized_product");
    let (mp_lo, mp_hi) = interval(&boot, false, "product");
    let (mn_lo, mn_hi) = interval(&boot, false, "normalized_product");
    Ok(SummaryRow {
        kappa,
        d_s: b.dispersion,
        state_bound: b.state_product,
        meas_bound: b.meas_product,
        meas_norm_bound: b.meas_norm.unwrap_or(f64::NAN),
        state_product: point.state.product,
        state_product_lo: sp_lo,
        state_product_hi: sp_hi,
        state_norm: point.state.normalized_product.unwrap_or(f64::NAN),
        state_norm_lo: sn_lo,
        state_norm_hi: sn_hi,
        meas_product: point.measurement.product,
        meas_product_lo: mp_lo,
        meas_product_hi: mp_hi,
        meas_norm: point.measurement.normalized_product.unwrap_or(f64::NAN),
        meas_norm_lo: mn_lo,
        meas_norm_hi: mn_hi,
        fidelity,
        iterations: point.diagnostics.iterations,
        converged: point.diagnostics.converged,
        bootstrap_failures: boot.failures,
        status: "ok".into(),
    })
}

/// Runs the full pipeline into `out` and returns the summary rows.
pub fn run_pipeline(
    cfg: &RunConfig,
    out: &Path,
    format: Format,
    written: &mut Vec<PathBuf>,
) -> Result<Vec<SummaryRow>, CliError> {
    let seeds = pipeline_seeds(cfg);
    let results: Vec<(Result<SummaryRow, CliError>, Vec<PathBuf>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut files = Vec::new();
            let r = pipeline_one(cfg, i, s, out, &mut files);
            (r, files)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for ((r, files), s) in results.into_iter().zip(&seeds) {
        written.extend(files);
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                failed.push(s.kappa);
                rows.push(SummaryRow::failed(s.kappa, e.to_string()));
            }
        }
    }
    write_table(out, "summary", format, &rows, written)?;
    let files = written
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).to_string_lossy().into_owned())
        .collect();
    let manifest = Manifest {
        tool: "rotor-tf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "pipeline".into(),
        config: cfg.clone(),
        maxlik: MaxLikOptions::default(),
        seeds,
        files,
        failed_kappas: failed.clone(),
    };
    write(&out.join("manifest.json"), &to_json(&manifest)?, written)?;
    if failed.len() == rows.len() {
        return Err(CliError::Numerical("every kappa failed".into()));
    }
    Ok(rows)
}

/// Executes one parsed command and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let cfg = resolve_config(cli)?;
    let out = cli.out.as_path();
    let mut written = Vec::new();
    match &cli.command {
        Command::Bounds => {
            let rows = bounds_rows(&cfg).map_err(numerical)?;
            write_table(out, "bounds", cli.format, &rows, &mut written)?;
        }
        Command::State => {
            let rows = cfg
                .kappa_list
                .iter()
                .map(|&k| state_row(k))
                .collect::<Result<Vec<_>, _>>()
                .map_err(numerical)?;
            write_table(out, "state", cli.format, &rows, &mut written)?;
        }
        Command::Simulate => {
            let kappa = single_kappa(&cfg, "simulate")?;
            let truth = VonMisesParams::fiducial(kappa).and_then(|p| p.state()).map_err(numerical)?;
            let grid = build_grid(cfg.grid.n_m, cfg.grid.n_phi, kappa).map_err(numerical)?;
            let spec = SimulationSpec {
                mean_total: cfg.mean_total,
                background_per_bin: cfg.background_per_bin,
                seed: cfg.seed,
                t_ps: cfg.t_ps,
                kappa_s: kappa,
                carrier_offset: cfg.carrier_offset,
                phi_offset: 0.0,
            };
            let c = simulate_counts(&DensityOperator::pure(&truth), &grid, &spec).map_err(numerical)?;
            let path = out.join("counts.csv");
            c.save(&path).map_err(numerical)?;
            written.push(path.clone());
            written.push(CountMatrix::sidecar_path(&path));
        }
        Command::Reconstruct { counts } => {
            let mut c = CountMatrix::load(counts).map_err(input)?;
            if let Some(b) = cli.background {
                c = subtract_background(&c, b).map_err(numerical)?;
            }
            let window = cfg.window();
            let opts = MaxLikOptions::default();
            let (rho, diagnostics) = maxlik_reconstruct(&c, &window, &opts).map_err(numerical)?;
            let nominal = VonMisesParams::fiducial(c.meta.kappa_s)
                .and_then(|p| p.state())
                .map_err(numerical)?;
            let bootstrap = match cli.reps {
                Some(_) => {
                    let point = analyze(&c, &window, &opts).map_err(numerical)?;
                    Some(bootstrap_from(&c, &point, &window, &opts, cfg.n_reps, cfg.seed).map_err(numerical)?)
                }
                None => None,
            };
            let record = ReconstructionRecord {
                fidelity_to_nominal: rho.fidelity_pure(&nominal),
                diagnostics,
                measurement: measured_moments(&c).map_err(numerical)?,
                bootstrap,
            };
            write(&out.join("rho.json"), &rho.to_json().map_err(numerical)?, &mut written)?;
            write(&out.join("reconstruction.json"), &to_json(&record)?, &mut written)?;
        }
        Command::Wigner { rho, theta_points } => {
            let rho = DensityOperator::load(rho).map_err(input)?;
            let points = theta_points.unwrap_or(4 * rho.dim());
            let map = wigner_from_rho(&rho, points).map_err(numerical)?;
            write(&out.join("wigner.csv"), &map.to_csv().map_err(numerical)?, &mut written)?;
            let r = state_uncertainties(&map).map_err(numerical)?;
            write_table(out, "state_uncertainty", cli.format, &[ReportRow::from(&r)], &mut written)?;
        }
        Command::Fisher { flat } => {
            let (label, s) = if *flat {
                let w = BasisWindow::centered(0, 1).map_err(numerical)?;
                ("flat".to_string(), TruncatedRotorState::basis(w, 0).map_err(numerical)?)
            } else {
                let kappa = single_kappa(&cfg, "fisher")?;
                (
                    format!("von_mises(kappa={kappa})"),
                    VonMisesParams::fiducial(kappa).and_then(|p| p.state()).map_err(numerical)?,
                )
            };
            let tw = TimeWindow::new(cfg.t_ps, 0.5 * cfg.t_ps).map_err(numerical)?;
            let grid = FrequencyGrid::default_for(&s, &tw);
            let psi = to_spectrum(&s, &tw, &grid).map_err(numerical)?;
            let f = fisher_omega(&psi, &s).map_err(numerical)?;
            let divergence =
                divergence_demo(0, cfg.t_ps, &DIVERGENCE_BUDGETS, cfg.n_reps, cfg.seed).map_err(numerical)?;
            let record = FisherRecord {
                state: label,
                t_ps: cfg.t_ps,
                fisher: f.fisher,
                first_term: f.first_term,
                second_term: f.second_term,
                four_var_t: f.four_var_t,
                cr_floor: f.cr_floor,
                cr_product: f.cr_product,
                divergence,
            };
            write(&out.join("fisher.json"), &to_json(&record)?, &mut written)?;
        }
        Command::Pipeline => {
            run_pipeline(&cfg, out, cli.format, &mut written)?;
        }
    }
    Ok(written)
}
