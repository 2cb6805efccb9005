//! Continuous-frequency picture of a rotor state on a finite window.
//!
//! A state with amplitudes `a_l` is the pulse
//! `ψ(t) = Σ_l a_l (-1)^l e^{2πilt/T} / √T` on `t ∈ [0, T]`, which puts the
//! rotor angle `φ = 0` at the middle of the window. Its spectrum is
//!
//! ```text
//! Ψ(ω) = e^{iωτ₀} / √(2π) ∫₀ᵀ ψ(t) e^{-iωt} dt
//! ```
//!
//! with `τ₀ = ⟨t⟩` the mean arrival time. Each mode contributes a sinc
//! lobe centred at `2πl/T`, so `Ψ`, `∂Ψ/∂ω` and the time moments all have
//! closed forms; only the Fisher integral needs quadrature.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RotorError};
use crate::rotor::{BasisWindow, TimeWindow, TruncatedRotorState};
use crate::seeds::derive_seed;
use crate::uncertainty::{sine_variance, RotorMoments};

/// Default number of spectral grid points (4096 Simpson panels).
pub const DEFAULT_POINTS: usize = 4097;
/// Default half-width of the spectral grid, in units of `π/T`.
pub const DEFAULT_HALF_WIDTH_PI_OVER_T: f64 = 80.0;
/// Smallest accepted half-width, in units of `π/T`.
pub const MIN_HALF_WIDTH_PI_OVER_T: f64 = 40.0;
/// Relative change on grid refinement above which quadrature is rejected.
pub const REFINE_TOL: f64 = 1e-3;

const ZERO_DENSITY: f64 = 1e-30;
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Uniform, symmetric frequency grid `center ± half_width` with an odd
/// number of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    center: f64,
    half_width: f64,
    count: usize,
}

impl FrequencyGrid {
    pub fn new(center: f64, half_width: f64, count: usize) -> Result<Self> {
        if count < 3 || count % 2 == 0 {
            return Err(RotorError::InvalidSize(format!(
                "frequency grid needs an odd point count >= 3, got {count}"
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() || !center.is_finite() {
            return Err(RotorError::Domain(format!(
                "frequency grid center {center}, half-width {half_width}"
            )));
        }
        Ok(Self {
            center,
            half_width,
            count,
        })
    }

    /// Grid around the carrier nearest `2π⟨L⟩/T`: `±80π/T` with
    /// `DEFAULT_POINTS` points, widened at the same spacing when the basis
    /// window of `s` reaches closer than `40π/T` to the edge.
    pub fn default_for(s: &TruncatedRotorState, tw: &TimeWindow) -> Self {
        let t = tw.duration();
        let centre_l = s.moments_l().0.round();
        let reach = (s.window().l_lo() as f64 - centre_l)
            .abs()
            .max((s.window().l_hi() as f64 - centre_l).abs());
        let units = DEFAULT_HALF_WIDTH_PI_OVER_T.max(2.0 * reach + MIN_HALF_WIDTH_PI_OVER_T);
        let panels = ((DEFAULT_POINTS - 1) as f64 * units / DEFAULT_HALF_WIDTH_PI_OVER_T).ceil() as usize;
        Self {
            center: centre_l * tw.mode_spacing(),
            half_width: units * PI / t,
            count: panels + panels % 2 + 1,
        }
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.count - 1) as f64
    }

    pub fn omega(&self, k: usize) -> f64 {
        self.center - self.half_width + k as f64 * self.step()
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.omega(k)).collect()
    }

    /// Same span with every interval halved.
    pub fn refined(&self) -> Self {
        Self {
            count: 2 * self.count - 1,
            ..*self
        }
    }
}

/// Spectrum of a truncated rotor state sampled on a [`FrequencyGrid`].
#[derive(Debug, Clone)]
pub struct SpectralAmplitude {
    grid: FrequencyGrid,
    values: Vec<Complex64>,
    derivative: Vec<Complex64>,
    window: TimeWindow,
    tau0: f64,
    modes: Vec<(f64, Complex64)>,
}

impl SpectralAmplitude {
    pub fn omega_grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// `Ψ(ω_k)`.
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `∂Ψ/∂ω` at the grid points.
    pub fn derivative(&self) -> &[Complex64] {
        &self.derivative
    }

    pub fn window(&self) -> &TimeWindow {
        &self.window
    }

    /// Phase reference `τ₀ = ⟨t⟩`.
    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    /// `(Ψ(ω), Ψ'(ω))` at an arbitrary frequency.
    pub fn eval(&self, omega: f64) -> (Complex64, Complex64) {
        eval_modes(&self.modes, self.window.duration(), self.tau0, omega)
    }

    /// Pulse amplitude at the window edge, `ψ(0) = ψ(T)`.
    pub fn edge_amplitude(&self) -> Complex64 {
        let t = self.window.duration();
        self.modes.iter().map(|&(_, b)| b).sum::<Complex64>() / t.sqrt()
    }

    /// `∫|Ψ|² dω`: grid quadrature plus the tails beyond the grid, where
    /// `sin²(ωT/2)` is replaced by its mean.
    pub fn norm(&self) -> f64 {
        let dens: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        let lo = self.grid.center - self.grid.half_width;
        let hi = self.grid.center + self.grid.half_width;
        let tails = envelope_tails(&self.modes, lo, hi) / (PI * self.window.duration());
        simpson(&dens, self.grid.step()) + tails
    }
}

// Ψ(ω) = e^{iωτ₀}/√(2πT) Σ b_l J0(ω - ω_l),  J_k(Δ) = ∫₀ᵀ t^k e^{-iΔt} dt
fn eval_modes(modes: &[(f64, Complex64)], t: f64, tau0: f64, omega: f64) -> (Complex64, Complex64) {
    let mut v = Complex64::new(0.0, 0.0);
    let mut d = Complex64::new(0.0, 0.0);
    for &(wl, b) in modes {
        let delta = omega - wl;
        v += b * j0(delta, t);
        d += b * j1(delta, t);
    }
    let pre = Complex64::from_polar(1.0 / (2.0 * PI * t).sqrt(), omega * tau0);
    let value = pre * v;
    (value, I * tau0 * value - I * pre * d)
}

fn j0(delta: f64, t: f64) -> Complex64 {
    let u = delta * t;
    Complex64::from_polar(t * sinc(0.5 * u), -0.5 * u)
}

fn j1(delta: f64, t: f64) -> Complex64 {
    let u = delta * t;
    if u.abs() < 1.0 {
        // T² Σ_k (-iu)^k / (k! (k + 2))
        let mut pow = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(0.5, 0.0);
        for k in 1..30 {
            pow *= -I * u / k as f64;
            let term = pow / (k + 2) as f64;
            sum += term;
            if term.norm() < 1e-18 {
                break;
            }
        }
        sum * t * t
    } else {
        let e = Complex64::from_polar(1.0, -u);
        (I * e / u + (e - 1.0) / (u * u)) * t * t
    }
}

fn simpson(f: &[f64], h: f64) -> f64 {
    let n = f.len();
    debug_assert!(n % 2 == 1);
    let mut s = f[0] + f[n - 1];
    for (k, v) in f.iter().enumerate().take(n - 1).skip(1) {
        s += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

fn mode_list(s: &TruncatedRotorState, t: f64) -> Vec<(f64, Complex64)> {
    s.window()
        .indices()
        .zip(s.amps())
        .map(|(l, &a)| {
            let sign = if l.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            (2.0 * PI * l as f64 / t, a * sign)
        })
        .collect()
}

/// `(⟨t⟩, Δt²)` of `|ψ(t)|²` on `[0, T]`, in closed form.
pub fn time_moments(s: &TruncatedRotorState, tw: &TimeWindow) -> (f64, f64) {
    let t = tw.duration();
    let modes = mode_list(s, t);
    let mut m1 = Complex64::new(0.0, 0.0);
    let mut m2 = Complex64::new(0.0, 0.0);
    let ls: Vec<i64> = s.window().indices().collect();
    for (i, &(_, bi)) in modes.iter().enumerate() {
        for (j, &(_, bj)) in modes.iter().enumerate() {
            let c = bi.conj() * bj;
            let m = ls[j] - ls[i];
            if m == 0 {
                m1 += c * (0.5 * t);
                m2 += c * (t * t / 3.0);
            } else {
                let w = 2.0 * PI * m as f64;
                m1 += c * Complex64::new(0.0, -t / w);
                m2 += c * Complex64::new(2.0 * t * t / (w * w), -t * t / w);
            }
        }
    }
    let mean = m1.re;
    (mean, (m2.re - mean * mean).max(0.0))
}

/// Spectrum of `s` on `grid`.
pub fn to_spectrum(
    s: &TruncatedRotorState,
    tw: &TimeWindow,
    grid: &FrequencyGrid,
) -> Result<SpectralAmplitude> {
    let t = tw.duration();
    let limit = PI / (4.0 * t);
    if grid.step() > limit {
        return Err(RotorError::GridTooCoarse {
            spacing: grid.step(),
            limit,
        });
    }
    if grid.half_width() < MIN_HALF_WIDTH_PI_OVER_T * PI / t {
        return Err(RotorError::GridResolution(format!(
            "spectral half-width {} below 40π/T",
            grid.half_width()
        )));
    }
    let modes = mode_list(s, t);
    let (lo, hi) = (grid.center - grid.half_width, grid.center + grid.half_width);
    if modes.iter().any(|&(w, _)| w <= lo || w >= hi) {
        return Err(RotorError::GridResolution(
            "spectral grid does not cover every carrier of the state".into(),
        ));
    }
    let tau0 = time_moments(s, tw).0;
    let (values, derivative) = grid
        .omegas()
        .into_iter()
        .map(|w| eval_modes(&modes, t, tau0, w))
        .unzip();
    Ok(SpectralAmplitude {
        grid: *grid,
        values,
        derivative,
        window: *tw,
        tau0,
        modes,
    })
}

/// `⟨ω'|ω''⟩ = (T/2π) e^{i(ω''-ω')T/2} sinc[T(ω'-ω'')/2]`.
pub fn omega_overlap(w1: f64, w2: f64, t: f64) -> Complex64 {
    Complex64::from_polar(t / (2.0 * PI) * sinc(0.5 * t * (w1 - w2)), 0.5 * t * (w2 - w1))
}

/// The constant `T/2π` multiplying the sinc in [`omega_overlap`].
pub fn completeness_constant(t: f64) -> f64 {
    t / (2.0 * PI)
}

/// Components `⟨l|ω⟩ = (-1)^l √(T/2π) e^{iΔT/2} sinc(ΔT/2)`, `Δ = ω - 2πl/T`,
/// over `window`.
pub fn omega_ket(omega: f64, t: f64, window: &BasisWindow) -> Vec<Complex64> {
    let amp = (t / (2.0 * PI)).sqrt();
    window
        .indices()
        .map(|l| {
            let delta = omega - 2.0 * PI * l as f64 / t;
            let sign = if l.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            Complex64::from_polar(sign * amp * sinc(0.5 * delta * t), 0.5 * delta * t)
        })
        .collect()
}

/// `⟨t|ω⟩ = e^{iωt}/√(2π)`.
pub fn time_omega_overlap(t: f64, omega: f64) -> Complex64 {
    Complex64::from_polar(1.0 / (2.0 * PI).sqrt(), omega * t)
}

/// Fisher information for the carrier frequency and its two-term split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    /// `F_ω = ∫ (∂_ω|Ψ|²)² / |Ψ|² dω`.
    pub fisher: f64,
    /// `4 ∫ |Ψ'|² dω`.
    pub first_term: f64,
    /// `4Δt²` from the time-domain density.
    pub four_var_t: f64,
    /// `∫ (Ψ'*Ψ - Ψ*Ψ')² / |Ψ|² dω`, never positive.
    pub second_term: f64,
    /// `1 / F_ω`.
    pub cr_floor: f64,
    /// `Δω_est² Δt²` at the Cramér–Rao floor.
    pub cr_product: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct FisherParts {
    fisher: f64,
    first: f64,
    second: f64,
}

impl FisherParts {
    fn at(v: Complex64, d: Complex64) -> Self {
        let dens = v.norm_sqr();
        let first = 4.0 * d.norm_sqr();
        if dens < ZERO_DENSITY {
            // removable singularity: Ψ ≈ Ψ'δ, so the ratio tends to 4|Ψ'|²
            return Self {
                fisher: first,
                first,
                second: 0.0,
            };
        }
        let c = v.conj() * d;
        Self {
            fisher: 4.0 * c.re * c.re / dens,
            first,
            second: -4.0 * c.im * c.im / dens,
        }
    }

    fn add(self, o: Self) -> Self {
        Self {
            fisher: self.fisher + o.fisher,
            first: self.first + o.first,
            second: self.second + o.second,
        }
    }

    fn scale(self, k: f64) -> Self {
        Self {
            fisher: self.fisher * k,
            first: self.first * k,
            second: self.second * k,
        }
    }
}

/// `∫ g` over `(-∞, lo] ∪ [hi, ∞)` for `g(ω) = |Σ_l b_l/(ω - ω_l)|²`, the
/// slowly varying envelope of `|Ψ|² = (2/πT) sin²(ωT/2) g(ω)`.
fn envelope_tails(modes: &[(f64, Complex64)], lo: f64, hi: f64) -> f64 {
    let mut acc = 0.0;
    for &(a, ba) in modes {
        for &(b, bb) in modes {
            let w = (ba.conj() * bb).re;
            let pair = if a == b {
                1.0 / (hi - a) + 1.0 / (a - lo)
            } else {
                (((hi - b) / (hi - a)).ln() + ((a - lo) / (b - lo)).ln()) / (a - b)
            };
            acc += w * pair;
        }
    }
    acc
}

// Adaptive Simpson on the three integrands; `fa`, `fm`, `fb` are the values
// at the ends and midpoint of [a, b] and `whole` is their Simpson estimate.
#[allow(clippy::too_many_arguments)]
fn adapt(
    psi: &SpectralAmplitude,
    a: f64,
    b: f64,
    fa: FisherParts,
    fm: FisherParts,
    fb: FisherParts,
    whole: FisherParts,
    tol: f64,
    depth: u32,
) -> FisherParts {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let fl = eval_parts(psi, lm);
    let fr = eval_parts(psi, rm);
    let h = (b - a) / 12.0;
    let left = fa.add(fl.scale(4.0)).add(fm).scale(h);
    let right = fm.add(fr.scale(4.0)).add(fb).scale(h);
    let both = left.add(right);
    let err = (both.fisher - whole.fisher)
        .abs()
        .max((both.second - whole.second).abs());
    if depth == 0 || err <= 15.0 * tol {
        return both;
    }
    adapt(psi, a, m, fa, fl, fm, left, 0.5 * tol, depth - 1)
        .add(adapt(psi, m, b, fm, fr, fb, right, 0.5 * tol, depth - 1))
}

fn eval_parts(psi: &SpectralAmplitude, w: f64) -> FisherParts {
    let (v, d) = psi.eval(w);
    FisherParts::at(v, d)
}

fn adaptive(psi: &SpectralAmplitude, a: f64, b: f64, tol: f64) -> FisherParts {
    let (fa, fb) = (eval_parts(psi, a), eval_parts(psi, b));
    let fm = eval_parts(psi, 0.5 * (a + b));
    let whole = fa.add(fm.scale(4.0)).add(fb).scale((b - a) / 6.0);
    adapt(psi, a, b, fa, fm, fb, whole, tol, 40)
}

// Position of the minimum of |Ψ|² in [a, b] by golden-section search.
fn locate_minimum(psi: &SpectralAmplitude, mut a: f64, mut b: f64) -> f64 {
    let dens = |w: f64| psi.eval(w).0.norm_sqr();
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (dens(c), dens(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = dens(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = dens(d);
        }
    }
    0.5 * (a + b)
}

// Composite Simpson over the grid, except that panels next to a local
// minimum of |Ψ|² are integrated adaptively with a breakpoint at the
// minimum: near a zero of Ψ the phase term is a Lorentzian far narrower
// than the grid spacing.
fn fisher_parts(psi: &SpectralAmplitude, grid: &FrequencyGrid) -> FisherParts {
    let t = psi.window.duration();
    let tau0 = psi.tau0;
    let omegas = grid.omegas();
    let samples: Vec<(Complex64, Complex64)> = omegas.iter().map(|&w| psi.eval(w)).collect();
    let parts: Vec<FisherParts> = samples.iter().map(|&(v, d)| FisherParts::at(v, d)).collect();
    let dens: Vec<f64> = samples.iter().map(|(v, _)| v.norm_sqr()).collect();
    let n = omegas.len();
    let h = grid.step();

    let scale = parts.iter().map(|p| p.first).fold(0.0, f64::max) * 2.0 * grid.half_width();
    let panels = (n - 1) / 2;
    let mut breaks: Vec<Vec<f64>> = vec![Vec::new(); panels];
    for k in 1..n - 1 {
        if dens[k] <= dens[k - 1] && dens[k] <= dens[k + 1] {
            let w = locate_minimum(psi, omegas[k - 1], omegas[k + 1]);
            let p = (((w - omegas[0]) / (2.0 * h)).floor() as usize).min(panels - 1);
            breaks[p].push(w);
        }
    }

    let mut total = FisherParts::default();
    for (p, cuts) in breaks.iter_mut().enumerate() {
        let (i0, i1, i2) = (2 * p, 2 * p + 1, 2 * p + 2);
        if cuts.is_empty() {
            let panel = parts[i0].add(parts[i1].scale(4.0)).add(parts[i2]).scale(h / 3.0);
            total = total.add(panel);
            continue;
        }
        cuts.sort_by(f64::total_cmp);
        let mut edges = vec![omegas[i0]];
        edges.extend(cuts.iter().copied().filter(|&c| c > omegas[i0] && c < omegas[i2]));
        edges.push(omegas[i2]);
        for e in edges.windows(2) {
            if e[1] > e[0] {
                total = total.add(adaptive(psi, e[0], e[1], 1e-12 * scale));
            }
        }
    }

    let lo = grid.center() - grid.half_width();
    let hi = grid.center() + grid.half_width();
    let norm_tail = envelope_tails(&psi.modes, lo, hi) / (PI * t);
    let edge = psi.edge_amplitude().norm_sqr();
    let fisher_tail = t * t * norm_tail;
    let first_tail = 4.0 * edge * (tau0 * tau0 + (t - tau0).powi(2)) / (PI * grid.half_width());
    total.add(FisherParts {
        fisher: fisher_tail,
        first: first_tail,
        second: fisher_tail - first_tail,
    })
}

/// Fisher information of the spectrum for a shift of the carrier.
///
/// The quadrature is repeated on a grid with half the spacing and the
/// refined result is returned if the two agree within [`REFINE_TOL`].
pub fn fisher_omega(psi: &SpectralAmplitude, s: &TruncatedRotorState) -> Result<FisherReport> {
    let coarse = fisher_parts(psi, &psi.grid);
    let fine = fisher_parts(psi, &psi.grid.refined());
    let change = ((fine.fisher - coarse.fisher) / fine.fisher).abs();
    if !(change <= REFINE_TOL) {
        return Err(RotorError::NonConvergentQuadrature(change));
    }
    let four_var_t = 4.0 * time_moments(s, &psi.window).1;
    Ok(FisherReport {
        fisher: fine.fisher,
        first_term: fine.first,
        four_var_t,
        second_term: fine.second,
        cr_floor: 1.0 / fine.fisher,
        cr_product: four_var_t / (4.0 * fine.fisher),
    })
}

/// Both sides of `Δsin²t ≥ ⟨cos t⟩² / (4ΔL²)`, evaluated in the frame
/// rotated to `arg⟨E⟩`.
pub fn time_cr_bound(s: &TruncatedRotorState) -> Result<(f64, f64)> {
    let (_, var_l) = s.moments_l();
    if var_l <= 0.0 {
        return Err(RotorError::ZeroMomentumSpread);
    }
    let lhs = sine_variance(s)?;
    let rhs = s.mean_e().norm_sqr() / (4.0 * var_l);
    Ok((lhs, rhs))
}

/// Sampler for `x` with density `sinc²(x)/π` on the real line.
///
/// `|x| ≤ X` is drawn by inverting a tabulated CDF; `|x| > X` is drawn
/// exactly by proposing from `1/x²` and accepting with probability `sin²x`.
pub struct SincSquaredSampler {
    x_max: f64,
    cell: f64,
    cdf: Vec<f64>,
    core_mass: f64,
}

impl SincSquaredSampler {
    pub fn new() -> Self {
        let x_max = 64.0 * PI;
        let cells = 1usize << 17;
        let cell = x_max / cells as f64;
        let dens = |x: f64| 2.0 / PI * sinc(x).powi(2);
        let mut cdf = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for k in 0..cells {
            let a = k as f64 * cell;
            acc += cell / 6.0 * (dens(a) + 4.0 * dens(a + 0.5 * cell) + dens(a + cell));
            cdf.push(acc);
        }
        Self {
            x_max,
            cell,
            core_mass: acc,
            cdf,
        }
    }

    /// Probability of `|x| > X`.
    pub fn tail_mass(&self) -> f64 {
        1.0 - self.core_mass
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mag = if u < self.core_mass {
            let k = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1);
            let (lo, hi) = (self.cdf[k - 1], self.cdf[k]);
            let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
            (k as f64 - 1.0 + frac) * self.cell
        } else {
            loop {
                let v: f64 = 1.0 - rng.gen::<f64>();
                let x = self.x_max / v;
                if rng.gen::<f64>() < x.sin().powi(2) {
                    break x;
                }
            }
        };
        if rng.gen::<bool>() {
            mag
        } else {
            -mag
        }
    }
}

impl Default for SincSquaredSampler {
    fn default() -> Self {
        Self::new()
    }
}

/// One sample budget of [`divergence_demo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub n_samples: usize,
    /// Mean over repetitions of the unbiased sample variance of ω;
    /// `None` for a single sample.
    pub mean_sample_variance: Option<f64>,
    /// Median over repetitions of the same quantity. The mean is dominated
    /// by rare far-tail draws; the median shows the trend with far less
    /// scatter.
    pub median_sample_variance: Option<f64>,
    /// Root-mean-square error of the maximum-likelihood carrier estimate.
    pub ml_rmse: f64,
    /// `1/√(N F_ω)` with `F_ω = T²/3`.
    pub cr_prediction: f64,
}

/// Sample variance and ML centre error of frequencies drawn from the
/// `sinc²` spectrum of `|l⟩`, for each sample budget.
pub fn divergence_demo(
    l: i64,
    t: f64,
    n_samples_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<DivergenceRow>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(RotorError::Domain(format!("window duration {t} must be > 0")));
    }
    if reps == 0 || n_samples_list.iter().any(|&n| n == 0) {
        return Err(RotorError::InvalidSize("sample budgets and repetitions must be > 0".into()));
    }
    if n_samples_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RotorError::InvalidSize("sample budgets must increase".into()));
    }
    let sampler = SincSquaredSampler::new();
    // samples are drawn as x = (ω - 2πl/T)·T/2, so errors are carrier-free
    let _ = l;
    let scale = 2.0 / t;
    n_samples_list
        .iter()
        .enumerate()
        .map(|(row, &n)| {
            let per_rep: Vec<(f64, f64)> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[row as u64, r as u64]));
                    let xs: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
                    let var = sample_variance(&xs) * scale * scale;
                    let centre = ml_centre(&xs) * scale;
                    (var, centre)
                })
                .collect();
            let mean_sample_variance = (n > 1)
                .then(|| per_rep.iter().map(|p| p.0).sum::<f64>() / reps as f64);
            let median_sample_variance = (n > 1).then(|| {
                let mut v: Vec<f64> = per_rep.iter().map(|p| p.0).collect();
                v.sort_by(f64::total_cmp);
                let m = v.len() / 2;
                if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] }
            });
            let mse = per_rep.iter().map(|p| p.1 * p.1).sum::<f64>() / reps as f64;
            Ok(DivergenceRow {
                n_samples: n,
                mean_sample_variance,
                median_sample_variance,
                ml_rmse: mse.sqrt(),
                cr_prediction: 3f64.sqrt() / (t * (n as f64).sqrt()),
            })
        })
        .collect()
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

fn log_likelihood(xs: &[f64], c: f64) -> f64 {
    xs.iter()
        .map(|&x| sinc(x - c).powi(2).max(1e-300).ln())
        .sum()
}

// (ℓ'(c), ℓ''(c)) for ℓ(c) = Σ ln sinc²(x_i - c); with u = x - c,
// dℓ/dc = -2 Σ (cot u - 1/u).
fn score(xs: &[f64], c: f64) -> (f64, f64) {
    let (mut d1, mut d2) = (0.0, 0.0);
    for &x in xs {
        let u = x - c;
        if u.abs() < 1e-4 {
            let u2 = u * u;
            d1 += 2.0 * u * (1.0 / 3.0 + u2 / 45.0);
            d2 -= 2.0 * (1.0 / 3.0 + u2 / 15.0);
        } else {
            let (sn, cs) = u.sin_cos();
            d1 -= 2.0 * (cs / sn - 1.0 / u);
            d2 += 2.0 * (1.0 / (u * u) - 1.0 / (sn * sn));
        }
    }
    (d1, d2)
}

// Maximum-likelihood centre of sinc²(x - c): scan a few median standard
// errors around the sample median, then solve ℓ'(c) = 0 inside the best cell
// by Newton steps safeguarded with bisection.
fn ml_centre(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let n = xs.len() as f64;
    let half = (2.0 * PI / n.sqrt()).min(PI / 2.0);
    let steps = 8;
    let h = half / steps as f64;
    let mut best = (median, log_likelihood(xs, median));
    for k in -steps..=steps {
        let c = median + k as f64 * h;
        let ll = log_likelihood(xs, c);
        if ll > best.1 {
            best = (c, ll);
        }
    }
    let (mut a, mut b) = (best.0 - h, best.0 + h);
    if score(xs, a).0 <= 0.0 || score(xs, b).0 >= 0.0 {
        return golden_max(xs, a, b);
    }
    let mut c = best.0;
    for _ in 0..60 {
        let (d1, d2) = score(xs, c);
        if d1 > 0.0 {
            a = c;
        } else {
            b = c;
        }
        let newton = c - d1 / d2;
        let next = if d2 < 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (next - c).abs() <= 1e-12 * (1.0 + c.abs()) || b - a < 1e-13 {
            return next;
        }
        c = next;
    }
    c
}

fn golden_max(xs: &[f64], mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (log_likelihood(xs, c), log_likelihood(xs, d));
    for _ in 0..50 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = log_likelihood(xs, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = log_likelihood(xs, d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotor::{displace, VonMisesParams};
    use rand_distr::StandardNormal;

    const T: f64 = 28.6;

    fn tw() -> TimeWindow {
        TimeWindow::new(T, 0.0).unwrap()
    }

    fn flat() -> TruncatedRotorState {
        TruncatedRotorState::basis(BasisWindow::centered(0, 3).unwrap(), 0).unwrap()
    }

    fn spectrum(s: &TruncatedRotorState) -> SpectralAmplitude {
        to_spectrum(s, &tw(), &FrequencyGrid::default_for(s, &tw())).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> TruncatedRotorState {
        let w = BasisWindow::with_dim(0, dim).unwrap();
        let amps = (0..dim)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        TruncatedRotorState::normalized(w, amps).unwrap()
    }

    #[test]
    fn number_state_spectrum_is_sinc_squared() {
        let sp = spectrum(&flat());
        for (k, v) in sp.values().iter().enumerate().step_by(97) {
            let w = sp.omega_grid().omega(k);
            let expect = T / (2.0 * PI) * sinc(0.5 * w * T).powi(2);
            assert!((v.norm_sqr() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn shifted_mode_translates_spectrum() {
        let s3 = TruncatedRotorState::basis(BasisWindow::centered(3, 3).unwrap(), 3).unwrap();
        let a = spectrum(&flat());
        let b = spectrum(&s3);
        let shift = 6.0 * PI / T;
        assert!((b.omega_grid().center() - shift).abs() < 1e-12);
        for (va, vb) in a.values().iter().zip(b.values()) {
            assert!((va.norm_sqr() - vb.norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in [
            flat(),
            VonMisesParams::fiducial(1.0).unwrap().state().unwrap(),
            VonMisesParams::new(2, 1.0, 4.0).unwrap().state().unwrap(),
            random_state(&mut rng, 9),
        ] {
            let n = spectrum(&s).norm();
            assert!((n - 1.0).abs() < 1e-6, "norm {n}");
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let s = VonMisesParams::new(1, 0.7, 1.3).unwrap().state().unwrap();
        let sp = spectrum(&s);
        let h = 1e-5;
        for &w in &[-0.7, 0.0, 0.13, 0.219, 2.5] {
            let (_, d) = sp.eval(w);
            let fd = (sp.eval(w + h).0 - sp.eval(w - h).0) / (2.0 * h);
            assert!((d - fd).norm() < 1e-6 * (1.0 + d.norm()), "{w}: {d} vs {fd}");
        }
    }

    #[test]
    fn j1_branches_agree() {
        for &u in &[0.999, 1.001, -0.9999, -1.0001] {
            let d = u / T;
            let lo = j1(d * (1.0 - 1e-9), T);
            let hi = j1(d * (1.0 + 1e-9), T);
            assert!((lo - hi).norm() < 1e-6 * T * T);
        }
    }

    #[test]
    fn time_moments_against_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng, 7);
        let tw = tw();
        let n = 20_000;
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for k in 0..n {
            let t = (k as f64 + 0.5) * T / n as f64;
            let psi: Complex64 = s
                .window()
                .indices()
                .zip(s.amps())
                .map(|(l, a)| a * Complex64::from_polar(1.0, l as f64 * (2.0 * PI * t / T - PI)))
                .sum::<Complex64>()
                / T.sqrt();
            let p = psi.norm_sqr() * T / n as f64;
            m0 += p;
            m1 += t * p;
            m2 += t * t * p;
        }
        let (mean, var) = time_moments(&s, &tw);
        assert!((m0 - 1.0).abs() < 1e-9);
        assert!((mean - m1).abs() < 1e-6);
        assert!((var - (m2 - m1 * m1)).abs() < 1e-5);
    }

    #[test]
    fn flat_pulse_fisher() {
        let s = flat();
        let r = fisher_omega(&spectrum(&s), &s).unwrap();
        let expect = T * T / 3.0;
        assert!(((r.fisher - expect) / expect).abs() < 5e-3, "{}", r.fisher);
        assert!(((r.four_var_t - expect) / expect).abs() < 1e-12);
        assert!(r.second_term.abs() < 1e-6 * expect);
    }

    #[test]
    fn von_mises_fisher_split() {
        let s = VonMisesParams::fiducial(1.0).unwrap().state().unwrap();
        let r = fisher_omega(&spectrum(&s), &s).unwrap();
        assert!(r.fisher <= r.four_var_t * (1.0 + 1e-6));
        assert!(r.second_term <= 1e-9 * r.four_var_t);
        assert!(((r.first_term - r.four_var_t) / r.four_var_t).abs() < 1e-4);
        assert!(r.cr_product >= 0.25 - 1e-6);
    }

    #[test]
    fn random_states_respect_cramer_rao() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..10 {
            let s = random_state(&mut rng, 3 + 2 * (i % 5));
            let r = fisher_omega(&spectrum(&s), &s).unwrap();
            assert!(r.second_term <= 1e-6 * r.four_var_t, "{r:?}");
            assert!(r.cr_product >= 0.25 - 1e-6, "{r:?}");
            assert!(((r.first_term - r.four_var_t) / r.four_var_t).abs() < 1e-3, "{r:?}");
            assert!(((r.fisher - r.first_term - r.second_term) / r.fisher).abs() < 1e-9);
        }
    }

    #[test]
    fn fisher_is_shift_invariant() {
        let s = VonMisesParams::new(0, 0.4, 2.0).unwrap().state().unwrap();
        let base = fisher_omega(&spectrum(&s), &s).unwrap().fisher;
        let moved = displace(&s, 5, 0.0);
        let grid = FrequencyGrid::new(10.0 * PI / T + 0.37 / T, 80.0 * PI / T, DEFAULT_POINTS).unwrap();
        let sp = to_spectrum(&moved, &tw(), &grid).unwrap();
        let f = fisher_omega(&sp, &moved).unwrap().fisher;
        assert!(((f - base) / base).abs() < 1e-3);
    }

    #[test]
    fn grid_checks() {
        let s = flat();
        let coarse = FrequencyGrid::new(0.0, 80.0 * PI / T, 101).unwrap();
        assert!(matches!(to_spectrum(&s, &tw(), &coarse), Err(RotorError::GridTooCoarse { .. })));
        let narrow = FrequencyGrid::new(0.0, 10.0 * PI / T, 1001).unwrap();
        assert!(matches!(to_spectrum(&s, &tw(), &narrow), Err(RotorError::GridResolution(_))));
        assert!(FrequencyGrid::new(0.0, 1.0, 4096).is_err());
    }

    #[test]
    fn overlap_properties() {
        let o = omega_overlap(0.3, 0.3, T);
        assert!((o.re - T / (2.0 * PI)).abs() < 1e-12 && o.im == 0.0);
        assert!(omega_overlap(0.3, 0.3 + 2.0 * PI / T, T).norm() < 1e-14);
        // the overlap is the Gram kernel of the kets
        let w = BasisWindow::centered(0, 6000).unwrap();
        let (a, b) = (0.11, 0.53);
        let direct: Complex64 = omega_ket(a, T, &w)
            .iter()
            .zip(omega_ket(b, T, &w))
            .map(|(x, y)| x.conj() * y)
            .sum();
        assert!((direct - omega_overlap(a, b, T)).norm() < 1e-3);
        assert!((completeness_constant(T) - T / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn kets_resolve_the_identity() {
        // (π/T) Σ_j |ω_j⟩⟨ω_j| over ω_j = jπ/T is exact for band-limited
        // kernels; truncate at ±J and Richardson-extrapolate the 1/J tail
        let w = BasisWindow::centered(0, 5).unwrap();
        let dim = w.dim();
        let partial = |jmax: i64| {
            let mut m = vec![Complex64::new(0.0, 0.0); dim * dim];
            for j in -jmax..=jmax {
                let k = omega_ket(j as f64 * PI / T, T, &w);
                for r in 0..dim {
                    for c in 0..dim {
                        m[r * dim + c] += k[r] * k[c].conj() * (PI / T);
                    }
                }
            }
            m
        };
        let (s1, s2) = (partial(4000), partial(8000));
        for r in 0..dim {
            for c in 0..dim {
                let v = 2.0 * s2[r * dim + c] - s1[r * dim + c];
                let target = if r == c { 1.0 } else { 0.0 };
                assert!((v - target).norm() < 1e-6, "({r},{c}) {v}");
            }
        }
    }

    #[test]
    fn mutually_unbiased() {
        for &(t, w) in &[(0.0, 0.0), (3.1, -2.0), (20.0, 7.7)] {
            assert!((time_omega_overlap(t, w).norm_sqr() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        }
        // cross-check one value through the mode expansion
        let w = BasisWindow::centered(0, 20_000).unwrap();
        let (t, om) = (9.0, 0.37);
        let ket = omega_ket(om, T, &w);
        let s: Complex64 = w
            .indices()
            .zip(ket)
            .map(|(l, k)| {
                let sign = if l.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                Complex64::from_polar(sign / T.sqrt(), 2.0 * PI * l as f64 * t / T) * k
            })
            .sum();
        assert!((s.norm_sqr() - 1.0 / (2.0 * PI)).abs() < 1e-3);
    }

    #[test]
    fn time_cr_bound_cases() {
        let s = VonMisesParams::fiducial(1.0).unwrap().state().unwrap();
        let (l, r) = time_cr_bound(&s).unwrap();
        assert!((l - r).abs() < 1e-8);
        assert!(matches!(time_cr_bound(&flat()), Err(RotorError::ZeroMomentumSpread)));
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let s = random_state(&mut rng, 11);
            let (l, r) = time_cr_bound(&s).unwrap();
            assert!(l >= r - 1e-9);
        }
    }

    #[test]
    fn sampler_matches_distribution() {
        let sampler = SincSquaredSampler::new();
        let tail = 1.0 - sampler.core_mass;
        // tail of sinc²/π beyond X ≈ 1/(πX) for X a multiple of π
        assert!((tail - 1.0 / (PI * sampler.x_max)).abs() < 1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let inside = (0..n)
            .filter(|_| sampler.sample(&mut rng).abs() < PI)
            .count() as f64
            / n as f64;
        // P(|x| < π) = (2/π) ∫₀^π sinc² = 0.902823...
        let mut acc = 0.0;
        let m = 100_000;
        for k in 0..m {
            let x = (k as f64 + 0.5) * PI / m as f64;
            acc += sinc(x).powi(2) * PI / m as f64;
        }
        let expect = 2.0 / PI * acc;
        assert!((inside - expect).abs() < 5.0 * (expect * (1.0 - expect) / n as f64).sqrt());
    }

    #[test]
    fn score_matches_finite_difference() {
        let xs = [0.3, -1.2, 2.9, 0.05, 7.0];
        let c = 0.11;
        let h = 1e-6;
        let fd1 = (log_likelihood(&xs, c + h) - log_likelihood(&xs, c - h)) / (2.0 * h);
        let fd2 = (score(&xs, c + h).0 - score(&xs, c - h).0) / (2.0 * h);
        let (d1, d2) = score(&xs, c);
        assert!((d1 - fd1).abs() < 1e-6 * (1.0 + d1.abs()));
        assert!((d2 - fd2).abs() < 1e-5 * (1.0 + d2.abs()));
        let (s1, s2) = score(&[0.0], 1e-6);
        assert!(s1.abs() < 1e-6 && (s2 + 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn divergence_trend() {
        let rows = divergence_demo(0, T, &[1, 1000, 10_000], 100, 9).unwrap();
        assert!(rows[0].mean_sample_variance.is_none());
        assert!(rows[0].median_sample_variance.is_none());
        // The sinc² tail falls as 1/x², so a typical sample variance grows
        // roughly in proportion to N.
        let m1 = rows[1].median_sample_variance.unwrap();
        let m2 = rows[2].median_sample_variance.unwrap();
        assert!(m2 > 3.0 * m1, "medians {m1} {m2}");
        let v1 = rows[1].mean_sample_variance.unwrap();
        let v2 = rows[2].mean_sample_variance.unwrap();
        assert!(v2 > v1);
        let ratio = rows[2].ml_rmse / rows[2].cr_prediction;
        assert!((1.0 / 1.2..1.2).contains(&ratio), "ratio {ratio}");
        assert_eq!(rows, divergence_demo(0, T, &[1, 1000, 10_000], 100, 9).unwrap());
        assert!(divergence_demo(0, T, &[10, 5], 10, 0).is_err());
    }
}
