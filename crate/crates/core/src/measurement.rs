//! Simulated simultaneous time–frequency measurement with a von Mises POVM.
//!
//! The POVM element for outcome `(m, φ)` is `w/2π |m, φ⟩⟨m, φ|` with the
//! ancilla spread `κ_a` and quadrature weight `w = 2π/n_φ`. Count records
//! are Poisson draws around the grid-normalised Q-function.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::DensityOperator;
use crate::error::{Result, RotorError};
use crate::io::write_atomic;
use crate::rotor::{AngleGrid, BasisWindow, Placement, VonMisesParams};
use crate::seeds::derive_seed;
use crate::uncertainty::{rotated_sine_variance, ReportKind, UncertaintyReport};

/// Frequency-shift label of the experiment's central carrier.
pub const DEFAULT_CARRIER_OFFSET: i64 = 10_000;

/// Grid of POVM outcomes: contiguous shifts `m` times midpoint angles `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovmGrid {
    pub m_shifts: Vec<i64>,
    pub phi_values: Vec<f64>,
    pub kappa_a: f64,
    pub quadrature_weight: f64,
}

pub fn build_grid(n_m: usize, n_phi: usize, kappa_a: f64) -> Result<PovmGrid> {
    if n_m < 3 || n_phi < 8 {
        return Err(RotorError::InvalidSize(format!(
            "POVM grid {n_m}x{n_phi}: need n_m >= 3 and n_phi >= 8"
        )));
    }
    if !(kappa_a > 0.0) || !kappa_a.is_finite() {
        return Err(RotorError::Domain(format!("kappa_a {kappa_a} must be > 0")));
    }
    let lo = -((n_m / 2) as i64);
    let phi = AngleGrid::new(n_phi, Placement::Midpoint)?;
    Ok(PovmGrid {
        m_shifts: (lo..lo + n_m as i64).collect(),
        phi_values: phi.angles(),
        kappa_a,
        quadrature_weight: phi.step(),
    })
}

impl PovmGrid {
    pub fn len(&self) -> usize {
        self.m_shifts.len() * self.phi_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Outcomes in row-major order (`m` outer, `φ` inner).
    pub fn outcomes(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.m_shifts
            .iter()
            .flat_map(move |&m| self.phi_values.iter().map(move |&p| (m, p)))
    }

    /// Lab delay `τ_p = φT/2π` of each angle.
    pub fn delays(&self, t_ps: f64) -> Vec<f64> {
        self.phi_values.iter().map(|p| p * t_ps / (2.0 * PI)).collect()
    }

    fn check(&self) -> Result<()> {
        if self.m_shifts.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(RotorError::Parse("m shifts are not contiguous".into()));
        }
        AngleGrid::from_angles(&self.phi_values)?;
        Ok(())
    }
}

/// `⟨l|m, φ⟩` over `window`, without renormalisation to the window.
pub fn povm_vector(m: i64, phi: f64, kappa_a: f64, window: &BasisWindow) -> Result<Vec<Complex64>> {
    Ok(VonMisesParams::new(m, phi, kappa_a)?.raw_amplitudes(window))
}

/// `Q(m, φ) = ⟨m, φ|ρ|m, φ⟩ / 2π`.
pub fn q_function(rho: &DensityOperator, m: i64, phi: f64, kappa_a: f64) -> Result<f64> {
    let v = povm_vector(m, phi, kappa_a, rho.window())?;
    Ok(rho.expectation(&v).max(0.0) / (2.0 * PI))
}

/// Q on every grid outcome, row-major.
pub fn q_grid(rho: &DensityOperator, grid: &PovmGrid) -> Result<Vec<f64>> {
    let outcomes: Vec<(i64, f64)> = grid.outcomes().collect();
    outcomes
        .par_iter()
        .map(|&(m, p)| q_function(rho, m, p, grid.kappa_a))
        .collect()
}

/// Acquisition description stored with every count record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    #[serde(rename = "T_ps")]
    pub t_ps: f64,
    pub kappa_s: f64,
    pub kappa_a: f64,
    pub carrier_offset: i64,
    pub seed: u64,
    pub background_per_bin: f64,
    /// Sum of background estimates removed by [`subtract_background`].
    #[serde(default)]
    pub background_subtracted: f64,
    /// Systematic angle offset applied during simulation.
    #[serde(default)]
    pub phi_offset: f64,
}

/// Simulation settings for [`simulate_counts`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub mean_total: f64,
    pub background_per_bin: f64,
    pub seed: u64,
    pub t_ps: f64,
    pub kappa_s: f64,
    pub carrier_offset: i64,
    /// Misalignment of the time variable: the record samples `Q(m, φ + offset)`.
    pub phi_offset: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            mean_total: 1.5e6,
            background_per_bin: 0.0,
            seed: 0,
            t_ps: 28.6,
            kappa_s: 1.0,
            carrier_offset: DEFAULT_CARRIER_OFFSET,
            phi_offset: 0.0,
        }
    }
}

/// Integer counts per POVM outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    pub grid: PovmGrid,
    /// Row-major `[m][φ]`.
    pub counts: Vec<u64>,
    pub total: u64,
    pub meta: Acquisition,
}

impl CountMatrix {
    pub fn new(grid: PovmGrid, counts: Vec<u64>, meta: Acquisition) -> Result<Self> {
        if counts.len() != grid.len() {
            return Err(RotorError::InvalidSize(format!(
                "{} counts for {} grid outcomes",
                counts.len(),
                grid.len()
            )));
        }
        let total = counts.iter().sum();
        Ok(Self {
            grid,
            counts,
            total,
            meta,
        })
    }

    pub fn get(&self, mi: usize, pj: usize) -> u64 {
        self.counts[mi * self.grid.phi_values.len() + pj]
    }

    /// Relative frequencies; fails on an empty record.
    pub fn frequencies(&self) -> Result<Vec<f64>> {
        if self.total == 0 {
            return Err(RotorError::ZeroTotal);
        }
        let t = self.total as f64;
        Ok(self.counts.iter().map(|&c| c as f64 / t).collect())
    }

    /// CSV with header `m,phi,counts`; the sidecar JSON goes next to it.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["m", "phi", "counts"])?;
        for ((m, p), c) in self.grid.outcomes().zip(&self.counts) {
            w.write_record([m.to_string(), p.to_string(), c.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| RotorError::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| RotorError::Parse(e.to_string()))
    }

    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)?)
    }

    pub fn from_csv(csv_text: &str, sidecar: &str) -> Result<Self> {
        let meta: Acquisition = serde_json::from_str(sidecar)?;
        let mut r = csv::Reader::from_reader(csv_text.as_bytes());
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["m", "phi", "counts"] {
            return Err(RotorError::Parse(format!("unexpected CSV header {header:?}")));
        }
        let mut rows: Vec<(i64, f64, u64)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
            let m = field(0).parse().map_err(|e| RotorError::Parse(format!("m: {e}")))?;
            let p = field(1).parse().map_err(|e| RotorError::Parse(format!("phi: {e}")))?;
            let c = field(2).parse().map_err(|e| RotorError::Parse(format!("counts: {e}")))?;
            rows.push((m, p, c));
        }
        let mut m_shifts: Vec<i64> = Vec::new();
        let mut phi_values: Vec<f64> = Vec::new();
        for &(m, p, _) in &rows {
            if m_shifts.last() != Some(&m) {
                m_shifts.push(m);
            }
            if m_shifts.len() == 1 {
                phi_values.push(p);
            }
        }
        let n_phi = phi_values.len();
        if n_phi == 0 || rows.len() != m_shifts.len() * n_phi {
            return Err(RotorError::Parse("count table is not a full m x phi grid".into()));
        }
        for (k, &(m, p, _)) in rows.iter().enumerate() {
            if m != m_shifts[k / n_phi] || p.to_bits() != phi_values[k % n_phi].to_bits() {
                return Err(RotorError::Parse(format!("row {} out of grid order", k + 2)));
            }
        }
        let grid = PovmGrid {
            m_shifts,
            quadrature_weight: 2.0 * PI / n_phi as f64,
            phi_values,
            kappa_a: meta.kappa_a,
        };
        grid.check()?;
        Self::new(grid, rows.into_iter().map(|r| r.2).collect(), meta)
    }

    /// Path of the JSON sidecar belonging to a CSV path.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        write_atomic(csv_path, self.to_csv()?.as_bytes())?;
        write_atomic(&Self::sidecar_path(csv_path), self.sidecar_json()?.as_bytes())
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let csv_text = std::fs::read_to_string(csv_path)?;
        let side = std::fs::read_to_string(Self::sidecar_path(csv_path))?;
        Self::from_csv(&csv_text, &side)
    }
}

/// Poisson counts with means `mean_total · Q·w / Σ(Q·w) + background`.
///
/// Each bin draws from its own stream seeded by `(seed, m index, φ index)`,
/// so the record does not depend on evaluation order or thread count.
pub fn simulate_counts(
    rho: &DensityOperator,
    grid: &PovmGrid,
    spec: &SimulationSpec,
) -> Result<CountMatrix> {
    if !(spec.mean_total > 0.0) || !spec.mean_total.is_finite() {
        return Err(RotorError::Domain(format!("mean_total {} must be > 0", spec.mean_total)));
    }
    if !(spec.background_per_bin >= 0.0) {
        return Err(RotorError::Domain("background must be >= 0".into()));
    }
    let means = expected_counts(rho, grid, spec.mean_total, spec.phi_offset)?;
    let n_phi = grid.phi_values.len();
    let counts: Vec<u64> = means
        .par_iter()
        .enumerate()
        .map(|(k, &mu)| {
            let path = [(k / n_phi) as u64, (k % n_phi) as u64];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &path));
            poisson(mu + spec.background_per_bin, &mut rng)
        })
        .collect();
    let meta = Acquisition {
        t_ps: spec.t_ps,
        kappa_s: spec.kappa_s,
        kappa_a: grid.kappa_a,
        carrier_offset: spec.carrier_offset,
        seed: spec.seed,
        background_per_bin: spec.background_per_bin,
        background_subtracted: 0.0,
        phi_offset: spec.phi_offset,
    };
    CountMatrix::new(grid.clone(), counts, meta)
}

/// Noise-free bin means `mean_total · Q·w / Σ(Q·w)`, row-major.
pub fn expected_counts(
    rho: &DensityOperator,
    grid: &PovmGrid,
    mean_total: f64,
    phi_offset: f64,
) -> Result<Vec<f64>> {
    let shifted = PovmGrid {
        phi_values: grid.phi_values.iter().map(|p| p + phi_offset).collect(),
        ..grid.clone()
    };
    let q = q_grid(rho, &shifted)?;
    let sum: f64 = q.iter().sum();
    if !(sum > 0.0) {
        return Err(RotorError::ZeroTotal);
    }
    Ok(q.iter().map(|v| mean_total * v / sum).collect())
}

pub(crate) fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(d) => d.sample(rng) as u64,
        Err(_) => 0,
    }
}

/// `max(round(counts - estimate), 0)` per bin.
pub fn subtract_background(c: &CountMatrix, estimate_per_bin: f64) -> Result<CountMatrix> {
    if !(estimate_per_bin >= 0.0) || !estimate_per_bin.is_finite() {
        return Err(RotorError::Domain(format!(
            "background estimate {estimate_per_bin} must be >= 0"
        )));
    }
    let counts = c
        .counts
        .iter()
        .map(|&n| (n as f64 - estimate_per_bin).round().max(0.0) as u64)
        .collect();
    let mut meta = c.meta.clone();
    meta.background_subtracted += estimate_per_bin;
    CountMatrix::new(c.grid.clone(), counts, meta)
}

/// Uncertainties of the joint outcome distribution `P(m, φ)`.
///
/// `⟨𝓛⟩`, `Δ𝓛²` come from the `m` marginal, `⟨𝓔⟩ = Σ P e^{-iφ}` and `Δ𝓢²`
/// from the `φ` marginal by midpoint quadrature.
pub fn measured_moments(c: &CountMatrix) -> Result<UncertaintyReport> {
    let p = c.frequencies()?;
    moments_from_distribution(&c.grid, &p)
}

/// As [`measured_moments`] for any normalised distribution on the grid.
pub fn moments_from_distribution(grid: &PovmGrid, p: &[f64]) -> Result<UncertaintyReport> {
    let n_phi = grid.phi_values.len();
    let sum: f64 = p.iter().sum();
    if !(sum > 0.0) {
        return Err(RotorError::ZeroTotal);
    }
    let (mut m1, mut m2) = (0.0, 0.0);
    let mut e = Complex64::new(0.0, 0.0);
    let mut e2 = Complex64::new(0.0, 0.0);
    for (k, &pk) in p.iter().enumerate() {
        let pk = pk / sum;
        let m = grid.m_shifts[k / n_phi] as f64;
        let phi = grid.phi_values[k % n_phi];
        m1 += m * pk;
        m2 += m * m * pk;
        e += Complex64::from_polar(pk, -phi);
        e2 += Complex64::from_polar(pk, -2.0 * phi);
    }
    let var_l = (m2 - m1 * m1).max(0.0);
    let var_s = rotated_sine_variance(e, e2);
    Ok(UncertaintyReport::from_moments(
        ReportKind::Measurement,
        e,
        m1,
        var_l,
        var_s,
    ))
}
