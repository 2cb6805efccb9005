//! Maximum-likelihood reconstruction from POVM counts, rotor Wigner
//! functions, state uncertainties from Wigner marginals and parametric
//! bootstrap intervals.
//!
//! The reconstruction works in a whitened frame. With `Π_j` the grid's POVM
//! elements restricted to the window and `G = Σ_j Π_j`, the operators
//! `Π̃_j = G^{-1/2} Π_j G^{-1/2}` sum to the identity, and
//! `σ = G^{1/2} ρ G^{1/2} / Tr(·)` has `Tr(σ Π̃_j) = p_j / Σ_k p_k`, the
//! probability of outcome `j` given that some grid outcome was recorded.
//! RρR iterates on `σ`, and the estimate is mapped back at the end.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::DensityOperator;
use crate::error::{Result, RotorError};
use crate::io::write_atomic;
use crate::measurement::{measured_moments, poisson, povm_vector, CountMatrix, PovmGrid};
use crate::rotor::{rotor_fourier_inverse, wrap_angle, AngleGrid, AngleTable, BasisWindow, Placement};
use crate::seeds::derive_seed;
use crate::uncertainty::{rotated_sine_variance, ReportKind, UncertaintyReport, DEGENERATE_E};

/// Floor applied to predicted probabilities of observed bins.
pub const PROBABILITY_FLOOR: f64 = 1e-300;
/// Eigenvalues below this mark the estimate as lying on the boundary.
pub const BOUNDARY_EIGENVALUE: f64 = 1e-6;
/// Fewest bootstrap replicates accepted.
pub const MIN_BOOTSTRAP_REPS: usize = 50;
/// Largest tolerated fraction of failed bootstrap replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxLikOptions {
    pub max_iterations: usize,
    /// Stop once the log-likelihood per count gains less than this.
    pub tolerance: f64,
    /// When set, every step is the diluted `(1 + εR) σ (1 + εR)`.
    pub dilution: Option<f64>,
}

impl Default for MaxLikOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            tolerance: 1e-10,
            dilution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxLikDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// `Σ_j f_j ln p̃_j` at the returned estimate.
    pub log_likelihood: f64,
    /// Steps where plain RρR lowered the likelihood and a diluted step was
    /// taken instead.
    pub diluted_steps: usize,
    /// Smallest eigenvalue fell below [`BOUNDARY_EIGENVALUE`].
    pub boundary: bool,
    pub rank: usize,
    /// Observed bins whose predicted probability hit [`PROBABILITY_FLOOR`].
    pub floored_bins: Vec<usize>,
}

/// Whitened POVM restricted to the observed bins.
///
/// A Hermitian `σ` is stored as `d²` reals: `σ_ii` on the diagonal slots,
/// `Re σ_ik` above and `Im σ_ik` below. Row `j` of `features` is chosen so
/// that `Tr(σ Π̃_j) = features_j · params(σ)`, and `featuresᵀ w` holds the
/// same parameters of `Σ_j w_j Π̃_j` up to a factor 2 off the diagonal. Both
/// products of an iteration are then real matrix-vector products.
struct WhitenedPovm {
    dim: usize,
    features: DMatrix<f64>,
    /// Bin index of each row.
    bins: Vec<usize>,
    /// Relative frequencies of those bins.
    f: DVector<f64>,
    g_inv_half: DMatrix<Complex64>,
    g_half: DMatrix<Complex64>,
}

fn hermitian_power(m: &DMatrix<Complex64>, power: f64) -> DMatrix<Complex64> {
    let eig = m.clone().symmetric_eigen();
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&e| Complex64::new(e.powf(power), 0.0)),
    );
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&d) * v.adjoint()
}

fn whiten(grid: &PovmGrid, freqs: &[f64], window: &BasisWindow) -> Result<WhitenedPovm> {
    let dim = window.dim();
    let scale = Complex64::new((grid.quadrature_weight / (2.0 * PI)).sqrt(), 0.0);
    let mut all = DMatrix::zeros(dim, grid.len());
    for (j, (m, phi)) in grid.outcomes().enumerate() {
        let v = povm_vector(m, phi, grid.kappa_a, window)?;
        for (i, z) in v.into_iter().enumerate() {
            all[(i, j)] = z * scale;
        }
    }
    let g = &all * all.adjoint();
    let eig = g.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > 1e-12 * hi) {
        return Err(RotorError::GridResolution(format!(
            "POVM grid does not span the window [{}, {}] (eigenvalue ratio {:e})",
            window.l_lo(),
            window.l_hi(),
            lo / hi
        )));
    }
    let g_inv_half = hermitian_power(&g, -0.5);
    let g_half = hermitian_power(&g, 0.5);
    let bins: Vec<usize> = (0..freqs.len()).filter(|&j| freqs[j] > 0.0).collect();
    let total: f64 = bins.iter().map(|&j| freqs[j]).sum();
    let f = DVector::from_iterator(bins.len(), bins.iter().map(|&j| freqs[j] / total));
    let mut features = DMatrix::zeros(bins.len(), dim * dim);
    for (row, &j) in bins.iter().enumerate() {
        let u = &g_inv_half * all.column(j);
        for i in 0..dim {
            features[(row, i * dim + i)] = u[i].norm_sqr();
            for k in i + 1..dim {
                let z = u[i].conj() * u[k];
                features[(row, i * dim + k)] = 2.0 * z.re;
                features[(row, k * dim + i)] = -2.0 * z.im;
            }
        }
    }
    Ok(WhitenedPovm {
        dim,
        features,
        bins,
        f,
        g_inv_half,
        g_half,
    })
}

impl WhitenedPovm {
    fn params(&self, sigma: &DMatrix<Complex64>) -> DVector<f64> {
        let d = self.dim;
        let mut s = DVector::zeros(d * d);
        for i in 0..d {
            s[i * d + i] = sigma[(i, i)].re;
            for k in i + 1..d {
                s[i * d + k] = sigma[(i, k)].re;
                s[k * d + i] = sigma[(i, k)].im;
            }
        }
        s
    }

    /// Predicted probabilities, flooring any that underflow.
    fn probabilities(&self, sigma: &DMatrix<Complex64>, floored: &mut Vec<usize>) -> Vec<f64> {
        let p = &self.features * self.params(sigma);
        p.iter()
            .zip(&self.bins)
            .map(|(&p, &bin)| {
                if p < PROBABILITY_FLOOR {
                    floored.push(bin);
                    PROBABILITY_FLOOR
                } else {
                    p
                }
            })
            .collect()
    }

    fn log_likelihood(&self, p: &[f64]) -> f64 {
        self.f.iter().zip(p).map(|(f, p)| f * p.ln()).sum()
    }

    /// `R = Σ_j (f_j / p_j) Π̃_j`.
    fn r_operator(&self, p: &[f64]) -> DMatrix<Complex64> {
        let w = DVector::from_iterator(p.len(), self.f.iter().zip(p).map(|(f, p)| f / p));
        let r = self.features.tr_mul(&w);
        let d = self.dim;
        let mut out = DMatrix::zeros(d, d);
        for i in 0..d {
            out[(i, i)] = Complex64::new(r[i * d + i], 0.0);
            for k in i + 1..d {
                let z = Complex64::new(0.5 * r[i * d + k], 0.5 * r[k * d + i]);
                out[(i, k)] = z;
                out[(k, i)] = z.conj();
            }
        }
        out
    }
}

fn normalized(m: DMatrix<Complex64>) -> DMatrix<Complex64> {
    let herm = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let tr = herm.trace().re;
    herm / Complex64::new(tr, 0.0)
}

fn diluted_step(sigma: &DMatrix<Complex64>, r: &DMatrix<Complex64>, eps: f64) -> DMatrix<Complex64> {
    let dim = sigma.nrows();
    let a = DMatrix::<Complex64>::identity(dim, dim) + r * Complex64::new(eps, 0.0);
    normalized(&a * sigma * &a)
}

/// RρR reconstruction from a count record on the window (in shift
/// coordinates, matching the grid's `m` labels).
pub fn maxlik_reconstruct(
    c: &CountMatrix,
    window: &BasisWindow,
    opts: &MaxLikOptions,
) -> Result<(DensityOperator, MaxLikDiagnostics)> {
    let f = c.frequencies()?;
    maxlik_from_frequencies(&c.grid, &f, window, opts)
}

/// As [`maxlik_reconstruct`] for arbitrary non-negative weights per bin.
pub fn maxlik_from_frequencies(
    grid: &PovmGrid,
    freqs: &[f64],
    window: &BasisWindow,
    opts: &MaxLikOptions,
) -> Result<(DensityOperator, MaxLikDiagnostics)> {
    if freqs.len() != grid.len() {
        return Err(RotorError::InvalidSize(format!(
            "{} frequencies for {} grid outcomes",
            freqs.len(),
            grid.len()
        )));
    }
    if freqs.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(RotorError::Domain("frequencies must be finite and >= 0".into()));
    }
    if !(freqs.iter().sum::<f64>() > 0.0) {
        return Err(RotorError::ZeroTotal);
    }
    let povm = whiten(grid, freqs, window)?;
    let dim = window.dim();
    let mut floored = Vec::new();
    let mut sigma = DMatrix::from_diagonal_element(dim, dim, Complex64::new(1.0 / dim as f64, 0.0));
    let mut p = povm.probabilities(&sigma, &mut floored);
    let mut ll = povm.log_likelihood(&p);
    let mut diluted_steps = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let r = povm.r_operator(&p);
        let mut eps = opts.dilution.unwrap_or(f64::INFINITY);
        let accepted = loop {
            let candidate = if eps.is_infinite() {
                normalized(&r * &sigma * &r)
            } else {
                diluted_step(&sigma, &r, eps)
            };
            let mut fl = Vec::new();
            let cp = povm.probabilities(&candidate, &mut fl);
            let cll = povm.log_likelihood(&cp);
            if cll >= ll {
                floored.extend(fl);
                break Some((candidate, cp, cll));
            }
            // Halve the dilution until the step goes uphill; a step too
            // small to do so means the maximum is reached numerically.
            eps = if eps.is_infinite() { 1.0 } else { 0.5 * eps };
            diluted_steps += usize::from(eps == 1.0);
            if eps < 1e-12 {
                break None;
            }
        };
        let Some((candidate, cp, cll)) = accepted else {
            converged = true;
            break;
        };
        assert!(cll >= ll, "likelihood decreased: {ll} -> {cll}");
        let gain = cll - ll;
        sigma = candidate;
        p = cp;
        ll = cll;
        if gain < opts.tolerance {
            converged = true;
            break;
        }
    }

    let rho_m = &povm.g_inv_half * &sigma * &povm.g_inv_half;
    let rho = DensityOperator::from_positive(*window, rho_m);
    let ev = rho.eigenvalues();
    floored.sort_unstable();
    floored.dedup();
    let diag = MaxLikDiagnostics {
        iterations,
        converged,
        log_likelihood: ll,
        diluted_steps,
        boundary: ev[0] < BOUNDARY_EIGENVALUE,
        rank: ev.iter().filter(|&&e| e >= BOUNDARY_EIGENVALUE).count(),
        floored_bins: floored,
    };
    Ok((rho, diag))
}

/// Log-likelihood `Σ_j f_j ln(p_j / Σ_k p_k)` of `rho` for the record's
/// frequencies, with `p_j = Tr(ρ Π_j)`.
pub fn log_likelihood(rho: &DensityOperator, grid: &PovmGrid, freqs: &[f64]) -> Result<f64> {
    let povm = whiten(grid, freqs, rho.window())?;
    let sigma = normalized(&povm.g_half * rho.matrix() * &povm.g_half);
    let p = povm.probabilities(&sigma, &mut Vec::new());
    Ok(povm.log_likelihood(&p))
}

/// `C_W(l, φ) = e^{ilφ/2} Tr[ρ D(l, φ)] / 2π` with
/// `Tr[ρ D(l, φ)] = Σ_k e^{-i(k+l)φ} ⟨k|ρ|k+l⟩`.
///
/// `φ` is wrapped to `[-π, π)`. At `φ = -π` the phase factor jumps by
/// `(-1)^l` between the two ends of the branch, and the mean of the two
/// limits (zero for odd `l`) is returned.
pub fn wigner_characteristic(rho: &DensityOperator, l: i64, phi: f64) -> Complex64 {
    let phi = wrap_angle(phi);
    if phi == -PI && l.rem_euclid(2) == 1 {
        return Complex64::new(0.0, 0.0);
    }
    let w = rho.window();
    let mut tr = Complex64::new(0.0, 0.0);
    for k in w.indices() {
        let z = rho.element(k, k + l);
        if z != Complex64::new(0.0, 0.0) {
            tr += z * Complex64::from_polar(1.0, -((k + l) as f64) * phi);
        }
    }
    tr * Complex64::from_polar(1.0 / (2.0 * PI), 0.5 * l as f64 * phi)
}

/// Rotor Wigner function on integer `l` times uniform `θ ∈ [-π, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerMap {
    pub l_grid: Vec<i64>,
    pub theta_grid: Vec<f64>,
    /// Row-major `[l][θ]`.
    pub values: Vec<f64>,
    /// Largest imaginary part discarded when the map was computed.
    pub imag_residue: f64,
}

/// Transforms `C_W` on a `theta_points`-point `φ` grid back to `(l, θ)`.
///
/// The `l` axis spans `theta_points` consecutive integers centred on the
/// window, so the discrete transform is free of aliasing. The count must be
/// even: only then does the grid contain `φ = 0`, the column through which
/// the sum over `l` reproduces the angle distribution.
pub fn wigner_from_rho(rho: &DensityOperator, theta_points: usize) -> Result<WignerMap> {
    let dim = rho.dim();
    if theta_points % 2 == 1 {
        return Err(RotorError::GridResolution(format!(
            "{theta_points} theta points; the count must be even"
        )));
    }
    if theta_points < 4 * dim {
        return Err(RotorError::GridResolution(format!(
            "{theta_points} theta points for dimension {dim}; need at least {}",
            4 * dim
        )));
    }
    let grid = AngleGrid::new(theta_points, Placement::Endpoint)?;
    let span = dim as i64 - 1;
    let c = AngleTable::from_fn(-span, 2 * dim - 1, grid, |l, phi| {
        wigner_characteristic(rho, l, phi)
    });
    let w = rho.window();
    let center = (w.l_lo() + w.l_hi()).div_euclid(2);
    let n_lo = center - (theta_points / 2) as i64;
    let table = rotor_fourier_inverse(&c, n_lo, theta_points, grid);
    let imag_residue = table.values.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    Ok(WignerMap {
        l_grid: table.indices().collect(),
        theta_grid: grid.angles(),
        values: table.values.iter().map(|z| z.re).collect(),
        imag_residue,
    })
}

impl WignerMap {
    pub fn get(&self, li: usize, tk: usize) -> f64 {
        self.values[li * self.theta_grid.len() + tk]
    }

    fn theta_step(&self) -> f64 {
        2.0 * PI / self.theta_grid.len() as f64
    }

    /// `P(l) = ∫dθ W(l, θ)`.
    pub fn l_marginal(&self) -> Vec<f64> {
        let nt = self.theta_grid.len();
        let h = self.theta_step();
        self.values.chunks(nt).map(|row| row.iter().sum::<f64>() * h).collect()
    }

    /// `P(θ) = Σ_l W(l, θ)`, a density in `θ`.
    pub fn theta_marginal(&self) -> Vec<f64> {
        let nt = self.theta_grid.len();
        let mut out = vec![0.0; nt];
        for row in self.values.chunks(nt) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// CSV: the header row holds the `θ` values after an `l` label, and each
    /// row starts with its `l`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["l".to_string()];
        header.extend(self.theta_grid.iter().map(|t| t.to_string()));
        w.write_record(&header)?;
        for (i, l) in self.l_grid.iter().enumerate() {
            let mut row = vec![l.to_string()];
            let nt = self.theta_grid.len();
            row.extend(self.values[i * nt..(i + 1) * nt].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| RotorError::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| RotorError::Parse(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| RotorError::Parse("empty Wigner CSV".into()))??;
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| RotorError::Parse(format!("{s:?}: {e}")));
        let theta_grid = header.iter().skip(1).map(parse_f).collect::<Result<Vec<_>>>()?;
        AngleGrid::from_angles(&theta_grid)?;
        let mut l_grid = Vec::new();
        let mut values = Vec::new();
        for rec in records {
            let rec = rec?;
            if rec.len() != theta_grid.len() + 1 {
                return Err(RotorError::Parse(format!("row of {} fields", rec.len())));
            }
            l_grid.push(rec[0].parse::<i64>().map_err(|e| RotorError::Parse(e.to_string()))?);
            for s in rec.iter().skip(1) {
                values.push(parse_f(s)?);
            }
        }
        if l_grid.is_empty() || l_grid.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(RotorError::Parse("l column must be consecutive integers".into()));
        }
        Ok(Self {
            l_grid,
            theta_grid,
            values,
            imag_residue: 0.0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// State uncertainties from the Wigner marginals: `ΔL²` from `P(l)`,
/// `⟨E⟩ = ∫dθ P(θ) e^{-iθ}` and `ΔS²` from the second circular moment.
pub fn state_uncertainties(w: &WignerMap) -> Result<UncertaintyReport> {
    let pl = w.l_marginal();
    let total: f64 = pl.iter().sum();
    if !(total > 0.0) {
        return Err(RotorError::ZeroTotal);
    }
    let (mut m1, mut m2) = (0.0, 0.0);
    for (&l, &p) in w.l_grid.iter().zip(&pl) {
        let p = p / total;
        m1 += l as f64 * p;
        m2 += (l * l) as f64 * p;
    }
    let h = w.theta_step() / total;
    let mut e = Complex64::new(0.0, 0.0);
    let mut e2 = Complex64::new(0.0, 0.0);
    for (&t, &p) in w.theta_grid.iter().zip(&w.theta_marginal()) {
        e += Complex64::from_polar(p * h, -t);
        e2 += Complex64::from_polar(p * h, -2.0 * t);
    }
    if e.norm() < DEGENERATE_E {
        return Err(RotorError::Degenerate(e.norm()));
    }
    Ok(UncertaintyReport::from_moments(
        ReportKind::State,
        e,
        m1,
        (m2 - m1 * m1).max(0.0),
        rotated_sine_variance(e, e2),
    ))
}

/// Everything derived from one count record.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub rho: DensityOperator,
    pub diagnostics: MaxLikDiagnostics,
    pub wigner: WignerMap,
    pub state: UncertaintyReport,
    pub measurement: UncertaintyReport,
}

/// Reconstruction, Wigner map and both uncertainty reports for a record.
/// The Wigner map uses `4·dim` angles.
pub fn analyze(c: &CountMatrix, window: &BasisWindow, opts: &MaxLikOptions) -> Result<Analysis> {
    let (rho, diagnostics) = maxlik_reconstruct(c, window, opts)?;
    let wigner = wigner_from_rho(&rho, 4 * window.dim())?;
    let state = state_uncertainties(&wigner)?;
    let measurement = measured_moments(c)?;
    Ok(Analysis {
        rho,
        diagnostics,
        wigner,
        state,
        measurement,
    })
}

/// Central 68% interval of one scalar across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldInterval {
    pub field: String,
    pub point: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub requested: usize,
    /// Successful replicates.
    pub replicates: usize,
    pub failures: usize,
    /// Replicates whose reconstruction hit the iteration cap.
    pub unconverged: usize,
    pub point: UncertaintyReport,
    pub point_measurement: UncertaintyReport,
    pub state_ci: Vec<FieldInterval>,
    pub measurement_ci: Vec<FieldInterval>,
}

impl BootstrapReport {
    pub fn state_interval(&self, field: &str) -> Option<&FieldInterval> {
        self.state_ci.iter().find(|f| f.field == field)
    }

    pub fn measurement_interval(&self, field: &str) -> Option<&FieldInterval> {
        self.measurement_ci.iter().find(|f| f.field == field)
    }
}

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = q * (sorted.len() - 1) as f64;
    let i = x.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (x - i as f64) * (sorted[j] - sorted[i])
}

fn intervals(point: &UncertaintyReport, reps: &[&UncertaintyReport]) -> Vec<FieldInterval> {
    point
        .scalars()
        .into_iter()
        .enumerate()
        .map(|(k, (name, value))| {
            let mut xs: Vec<f64> = reps.iter().map(|r| r.scalars()[k].1).filter(|v| v.is_finite()).collect();
            xs.sort_by(f64::total_cmp);
            FieldInterval {
                field: name.to_string(),
                point: value,
                ci_lo: percentile(&xs, 0.16),
                ci_hi: percentile(&xs, 0.84),
            }
        })
        .collect()
}

fn resample(c: &CountMatrix, seed: u64) -> Result<CountMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = c.counts.iter().map(|&n| poisson(n as f64, &mut rng)).collect();
    CountMatrix::new(c.grid.clone(), counts, c.meta.clone())
}

/// Parametric bootstrap around `point`: replicate `r` redraws every bin
/// from `Poisson(counts_j)` with seed `derive_seed(seed, [r])` and reruns
/// the full analysis.
pub fn bootstrap_from(
    c: &CountMatrix,
    point: &Analysis,
    window: &BasisWindow,
    opts: &MaxLikOptions,
    n_reps: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if n_reps < MIN_BOOTSTRAP_REPS {
        return Err(RotorError::Domain(format!(
            "{n_reps} bootstrap replicates; need at least {MIN_BOOTSTRAP_REPS}"
        )));
    }
    let runs: Vec<Option<(UncertaintyReport, UncertaintyReport, bool)>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let rc = resample(c, derive_seed(seed, &[r])).ok()?;
            let a = analyze(&rc, window, opts).ok()?;
            Some((a.state, a.measurement, a.diagnostics.converged))
        })
        .collect();
    let ok: Vec<_> = runs.iter().flatten().collect();
    let failures = n_reps - ok.len();
    if failures as f64 >= MAX_FAILURE_FRACTION * n_reps as f64 {
        return Err(RotorError::BootstrapFailure {
            failed: failures,
            total: n_reps,
        });
    }
    let states: Vec<&UncertaintyReport> = ok.iter().map(|r| &r.0).collect();
    let meas: Vec<&UncertaintyReport> = ok.iter().map(|r| &r.1).collect();
    Ok(BootstrapReport {
        requested: n_reps,
        replicates: ok.len(),
        failures,
        unconverged: ok.iter().filter(|r| !r.2).count(),
        point: point.state.clone(),
        point_measurement: point.measurement.clone(),
        state_ci: intervals(&point.state, &states),
        measurement_ci: intervals(&point.measurement, &meas),
    })
}

/// Analyses `c` and bootstraps it with default reconstruction options.
pub fn bootstrap(c: &CountMatrix, window: &BasisWindow, n_reps: usize, seed: u64) -> Result<BootstrapReport> {
    let opts = MaxLikOptions::default();
    let point = analyze(c, window, &opts)?;
    bootstrap_from(c, &point, window, &opts, n_reps, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{build_grid, q_grid, simulate_counts, SimulationSpec};
    use crate::rotor::{bessel_i, rotor_fourier, TruncatedRotorState, VonMisesParams};
    use crate::uncertainty::report;

    fn window21() -> BasisWindow {
        BasisWindow::with_dim(0, 21).unwrap()
    }

    fn vm_rho(n: i64, a: f64, k: f64, w: &BasisWindow) -> (TruncatedRotorState, DensityOperator) {
        let p = VonMisesParams::new(n, a, k).unwrap();
        let s = TruncatedRotorState::normalized(*w, p.raw_amplitudes(w)).unwrap();
        let rho = DensityOperator::pure(&s);
        (s, rho)
    }

    fn exact_frequencies(rho: &DensityOperator, grid: &PovmGrid) -> Vec<f64> {
        let q = q_grid(rho, grid).unwrap();
        let s: f64 = q.iter().sum();
        q.iter().map(|v| v / s).collect()
    }

    fn random_rho(window: BasisWindow, seed: u64) -> DensityOperator {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = window.dim();
        let a = DMatrix::from_fn(d, d, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        DensityOperator::from_positive(window, &a * a.adjoint())
    }

    fn theta_density(rho: &DensityOperator, theta: f64) -> f64 {
        let v: Vec<Complex64> = rho
            .window()
            .indices()
            .map(|l| Complex64::from_polar(1.0, -(l as f64) * theta))
            .collect();
        rho.expectation(&v) / (2.0 * PI)
    }

    #[test]
    fn exact_probabilities_reconstruct_the_state() {
        let w = window21();
        let grid = build_grid(20, 20, 1.0).unwrap();
        let (s, rho) = vm_rho(0, 0.0, 1.0, &w);
        let f = exact_frequencies(&rho, &grid);
        let (est, d) = maxlik_from_frequencies(&grid, &f, &w, &MaxLikOptions::default()).unwrap();
        assert!(d.iterations <= 5000);
        assert!(est.fidelity_pure(&s) >= 0.999, "fidelity {}", est.fidelity_pure(&s));
        assert!(DensityOperator::new(w, est.matrix().clone()).is_ok());
        assert!(d.floored_bins.is_empty());
        // The truth is a maximum of the likelihood, so no estimate beats it.
        assert!(d.log_likelihood <= log_likelihood(&rho, &grid, &f).unwrap() + 1e-12);
    }

    #[test]
    fn poisson_record_reconstructs_the_state() {
        let w = window21();
        let grid = build_grid(20, 20, 1.0).unwrap();
        let (s, rho) = vm_rho(0, 0.0, 1.0, &w);
        let spec = SimulationSpec { seed: 11, ..Default::default() };
        let c = simulate_counts(&rho, &grid, &spec).unwrap();
        let (est, d) = maxlik_reconstruct(&c, &w, &MaxLikOptions::default()).unwrap();
        assert!(d.converged);
        assert!(est.fidelity_pure(&s) >= 0.99);
        assert!(DensityOperator::new(w, est.matrix().clone()).is_ok());
    }

    #[test]
    fn diluted_iteration_reaches_the_same_estimate() {
        let w = BasisWindow::with_dim(0, 9).unwrap();
        let grid = build_grid(12, 12, 1.0).unwrap();
        let (_, rho) = vm_rho(0, 0.4, 0.8, &w);
        let spec = SimulationSpec { seed: 3, mean_total: 2e5, ..Default::default() };
        let c = simulate_counts(&rho, &grid, &spec).unwrap();
        let plain = maxlik_reconstruct(&c, &w, &MaxLikOptions::default()).unwrap();
        let opts = MaxLikOptions { dilution: Some(0.5), ..Default::default() };
        let dil = maxlik_reconstruct(&c, &w, &opts).unwrap();
        assert!((plain.1.log_likelihood - dil.1.log_likelihood).abs() < 1e-7);
        let diff = (plain.0.matrix() - dil.0.matrix()).camax();
        assert!(diff < 1e-2, "max difference {diff}");
    }

    #[test]
    fn single_outcome_record_is_flagged() {
        let w = BasisWindow::with_dim(0, 9).unwrap();
        let grid = build_grid(12, 12, 1.0).unwrap();
        let mut f = vec![0.0; grid.len()];
        f[5 * 12 + 6] = 1.0;
        let opts = MaxLikOptions { max_iterations: 300, ..Default::default() };
        let (est, d) = maxlik_from_frequencies(&grid, &f, &w, &opts).unwrap();
        assert!(d.boundary || !d.converged);
        assert!(est.rank(BOUNDARY_EIGENVALUE) < w.dim());
        assert!(DensityOperator::new(w, est.matrix().clone()).is_ok());
    }

    #[test]
    fn reconstruction_input_errors() {
        let w = BasisWindow::with_dim(0, 9).unwrap();
        let grid = build_grid(12, 12, 1.0).unwrap();
        let opts = MaxLikOptions::default();
        assert!(matches!(
            maxlik_from_frequencies(&grid, &vec![0.0; grid.len()], &w, &opts),
            Err(RotorError::ZeroTotal)
        ));
        assert!(maxlik_from_frequencies(&grid, &[1.0], &w, &opts).is_err());
        // A 3-shift grid cannot resolve a 41-dimensional window.
        let narrow = build_grid(3, 8, 1.0).unwrap();
        let wide = BasisWindow::with_dim(0, 41).unwrap();
        assert!(matches!(
            maxlik_from_frequencies(&narrow, &vec![1.0; narrow.len()], &wide, &opts),
            Err(RotorError::GridResolution(_))
        ));
    }

    #[test]
    fn number_state_wigner_is_flat_in_theta() {
        let w = BasisWindow::with_dim(0, 7).unwrap();
        let rho = DensityOperator::pure(&TruncatedRotorState::basis(w, 0).unwrap());
        let map = wigner_from_rho(&rho, 28).unwrap();
        let nt = map.theta_grid.len();
        for (i, &l) in map.l_grid.iter().enumerate() {
            let expect = if l == 0 { 1.0 / (2.0 * PI) } else { 0.0 };
            for k in 0..nt {
                assert!((map.get(i, k) - expect).abs() < 1e-12);
            }
        }
        let pl = map.l_marginal();
        for (&l, p) in map.l_grid.iter().zip(&pl) {
            assert!((p - f64::from(u8::from(l == 0))).abs() < 1e-12);
        }
        assert!(matches!(state_uncertainties(&map), Err(RotorError::Degenerate(_))));
    }

    #[test]
    fn fiducial_theta_marginal_is_von_mises() {
        let (_, rho) = vm_rho(0, 0.0, 1.0, &window21());
        let map = wigner_from_rho(&rho, 84).unwrap();
        let norm = 2.0 * PI * bessel_i(0, 2.0).unwrap();
        for (&t, p) in map.theta_grid.iter().zip(map.theta_marginal()) {
            let exact = (2.0 * t.cos()).exp() / norm;
            // The window drops a tail of about 1e-17.
            assert!((p - exact).abs() < 1e-8, "theta {t}: {p} vs {exact}");
        }
        let total: f64 = map.l_marginal().iter().sum();
        assert!((total - 1.0).abs() < 1e-8);
        let r = state_uncertainties(&map).unwrap();
        assert!((r.normalized_product.unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn marginals_of_mixed_states() {
        for seed in 0..5 {
            let w = BasisWindow::with_dim(3 - seed as i64, 6 + seed as usize).unwrap();
            let rho = random_rho(w, seed);
            let map = wigner_from_rho(&rho, 4 * w.dim() + 2 * seed as usize).unwrap();
            assert!(map.imag_residue < 1e-10, "imaginary residue {}", map.imag_residue);
            let pl = map.l_marginal();
            for (&l, p) in map.l_grid.iter().zip(&pl) {
                let d = rho.element(l, l).re;
                assert!((p - d).abs() < 1e-8, "l = {l}: {p} vs {d}");
            }
            for (&t, p) in map.theta_grid.iter().zip(map.theta_marginal()) {
                assert!((p - theta_density(&rho, t)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn two_routes_to_state_uncertainties_agree() {
        for seed in 0..6 {
            let w = BasisWindow::with_dim(seed as i64 - 2, 5 + 2 * seed as usize).unwrap();
            let mut m = random_rho(w, 100 + seed).matrix().clone();
            // Add some coherence so that |<E>| is not tiny.
            let (_, pure) = vm_rho(w.l_lo() + (w.dim() / 2) as i64, 0.3 * seed as f64, 1.2, &w);
            m = m * Complex64::new(0.3, 0.0) + pure.matrix() * Complex64::new(0.7, 0.0);
            let rho = DensityOperator::from_positive(w, m);
            let a = report(&rho).unwrap();
            let b = state_uncertainties(&wigner_from_rho(&rho, 4 * w.dim()).unwrap()).unwrap();
            assert_eq!(b.kind, ReportKind::State);
            assert!((a.mean_e - b.mean_e).norm() < 1e-10);
            assert!((a.mean_l - b.mean_l).abs() < 1e-10);
            assert!((a.var_l - b.var_l).abs() < 1e-6);
            assert!((a.var_s - b.var_s).abs() < 1e-6);
            assert!((a.product - b.product).abs() < 1e-6);
        }
    }

    #[test]
    fn smoothing_identity_links_q_and_wigner() {
        for kappa in [0.5, 1.0, 4.0] {
            let p = VonMisesParams::new(1, 0.7, kappa).unwrap();
            let s = p.state().unwrap();
            let rho = DensityOperator::pure(&s);
            let w = rho.window();
            let pad = 30;
            let n_lo = w.l_lo() - pad;
            let n_count = w.dim() + 2 * pad as usize;
            let alpha = AngleGrid::new(4 * w.dim(), Placement::Midpoint).unwrap();
            let q = AngleTable::from_fn(n_lo, n_count, alpha, |n, a| {
                let v = povm_vector(n, a, kappa, w).unwrap();
                Complex64::new(rho.expectation(&v) / (2.0 * PI), 0.0)
            });
            let span = w.dim() as i64 - 1;
            let phi = AngleGrid::new(24, Placement::Midpoint).unwrap();
            let fq = rotor_fourier(&q, -span, 2 * w.dim() - 1, phi);
            let i0 = bessel_i(0, 2.0 * kappa).unwrap();
            for l in -span..=span {
                for k in 0..phi.len() {
                    let ph = phi.angle(k);
                    let filt = bessel_i(l.abs(), 2.0 * kappa * (0.5 * ph).cos()).unwrap() / i0;
                    let expect = wigner_characteristic(&rho, l, ph) * filt;
                    let got = fq.get(l, k);
                    assert!(
                        (got - expect).norm() < 1e-8,
                        "kappa {kappa} l {l} phi {ph}: {got} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn branch_point_averages_odd_orders() {
        let (_, rho) = vm_rho(0, 0.5, 1.0, &BasisWindow::with_dim(0, 11).unwrap());
        assert_eq!(wigner_characteristic(&rho, 1, -PI), Complex64::new(0.0, 0.0));
        assert_eq!(wigner_characteristic(&rho, 3, PI), Complex64::new(0.0, 0.0));
        let even = wigner_characteristic(&rho, 2, -PI);
        let near = wigner_characteristic(&rho, 2, -PI + 1e-9);
        assert!((even - near).norm() < 1e-8);
    }

    #[test]
    fn wigner_resolution_and_csv() {
        let w = BasisWindow::with_dim(2, 5).unwrap();
        let rho = random_rho(w, 9);
        assert!(matches!(wigner_from_rho(&rho, 19), Err(RotorError::GridResolution(_))));
        let map = wigner_from_rho(&rho, 20).unwrap();
        assert_eq!(map.l_grid.len(), 20);
        assert!(map.l_grid.contains(&w.l_lo()) && map.l_grid.contains(&w.l_hi()));
        let text = map.to_csv().unwrap();
        assert!(text.starts_with("l,"));
        let back = WignerMap::from_csv(&text).unwrap();
        assert_eq!(back.l_grid, map.l_grid);
        assert_eq!(back.theta_grid, map.theta_grid);
        assert_eq!(back.values, map.values);
        assert_eq!(back.to_csv().unwrap(), text);
    }

    #[test]
    fn percentiles() {
        let xs: Vec<f64> = (0..101).map(f64::from).collect();
        assert_eq!(percentile(&xs, 0.16), 16.0);
        assert_eq!(percentile(&xs, 0.84), 84.0);
        assert_eq!(percentile(&[2.0], 0.3), 2.0);
        assert!(percentile(&[], 0.5).is_nan());
    }

    #[test]
    fn bootstrap_needs_enough_replicates() {
        let w = BasisWindow::with_dim(0, 7).unwrap();
        let grid = build_grid(8, 8, 1.0).unwrap();
        let (_, rho) = vm_rho(0, 0.0, 1.0, &w);
        let spec = SimulationSpec { mean_total: 1e4, ..Default::default() };
        let c = simulate_counts(&rho, &grid, &spec).unwrap();
        assert!(matches!(bootstrap(&c, &w, 49, 1), Err(RotorError::Domain(_))));
    }
}
