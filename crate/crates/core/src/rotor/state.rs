//! Truncated angular-momentum basis, rotor states and von Mises states.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::bessel::{bessel_i_signed, bessel_i_table};
use crate::error::{Result, RotorError};

pub const NORM_TOL: f64 = 1e-10;
pub const TAIL_TOL: f64 = 1e-10;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = a - two_pi * ((a + PI) / two_pi).floor();
    if w >= PI {
        w - two_pi
    } else {
        w
    }
}

/// Inclusive range of angular-momentum indices `l_lo ..= l_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisWindow {
    l_lo: i64,
    l_hi: i64,
}

impl BasisWindow {
    pub fn new(l_lo: i64, l_hi: i64) -> Result<Self> {
        if l_hi < l_lo || l_hi - l_lo + 1 < 3 {
            return Err(RotorError::InvalidSize(format!(
                "basis window [{l_lo}, {l_hi}] must hold at least 3 indices"
            )));
        }
        Ok(Self { l_lo, l_hi })
    }

    /// `center - half ..= center + half`.
    pub fn centered(center: i64, half: i64) -> Result<Self> {
        Self::new(center - half, center + half)
    }

    /// A window of `dim` indices whose middle sits at `center`; even sizes
    /// extend one further below than above.
    pub fn with_dim(center: i64, dim: usize) -> Result<Self> {
        let lo = center - (dim as i64) / 2;
        Self::new(lo, lo + dim as i64 - 1)
    }

    pub fn l_lo(&self) -> i64 {
        self.l_lo
    }

    pub fn l_hi(&self) -> i64 {
        self.l_hi
    }

    pub fn dim(&self) -> usize {
        (self.l_hi - self.l_lo + 1) as usize
    }

    pub fn contains(&self, l: i64) -> bool {
        (self.l_lo..=self.l_hi).contains(&l)
    }

    pub fn index(&self, l: i64) -> Option<usize> {
        self.contains(l).then(|| (l - self.l_lo) as usize)
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.l_lo..=self.l_hi
    }

    pub fn union(&self, other: &BasisWindow) -> BasisWindow {
        BasisWindow {
            l_lo: self.l_lo.min(other.l_lo),
            l_hi: self.l_hi.max(other.l_hi),
        }
    }

    pub fn shifted(&self, by: i64) -> BasisWindow {
        BasisWindow {
            l_lo: self.l_lo + by,
            l_hi: self.l_hi + by,
        }
    }

    /// Default window for a von Mises state: `n ± max(20, ceil(8κ + 10))`.
    pub fn for_von_mises(n: i64, kappa: f64) -> BasisWindow {
        let half = 20.max((8.0 * kappa + 10.0).ceil() as i64);
        BasisWindow {
            l_lo: n - half,
            l_hi: n + half,
        }
    }
}

/// Time window of duration `T` with arrival time `tau0`, both in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    t_ps: f64,
    tau0_ps: f64,
}

impl TimeWindow {
    pub fn new(t_ps: f64, tau0_ps: f64) -> Result<Self> {
        if !(t_ps > 0.0) || !t_ps.is_finite() {
            return Err(RotorError::Domain(format!("window duration {t_ps} must be > 0")));
        }
        if !(0.0..t_ps).contains(&tau0_ps) {
            return Err(RotorError::Domain(format!(
                "arrival time {tau0_ps} outside [0, {t_ps})"
            )));
        }
        Ok(Self { t_ps, tau0_ps })
    }

    pub fn duration(&self) -> f64 {
        self.t_ps
    }

    pub fn tau0(&self) -> f64 {
        self.tau0_ps
    }

    /// Lab time of an internal angle: `t = φ T / 2π + T / 2`.
    pub fn time_of_angle(&self, phi: f64) -> f64 {
        phi / (2.0 * PI) * self.t_ps + 0.5 * self.t_ps
    }

    /// Internal angle of a lab time, wrapped into `[-π, π)`.
    pub fn angle_of_time(&self, t: f64) -> f64 {
        wrap_angle(2.0 * PI * t / self.t_ps - PI)
    }

    /// Carrier spacing `2π / T` in rad/ps.
    pub fn mode_spacing(&self) -> f64 {
        2.0 * PI / self.t_ps
    }
}

/// `(n, α, κ)` labelling a von Mises state `|n, α⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VonMisesParams {
    pub n: i64,
    pub alpha: f64,
    pub kappa: f64,
}

impl VonMisesParams {
    pub fn new(n: i64, alpha: f64, kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(RotorError::Domain(format!("kappa {kappa} must be finite and >= 0")));
        }
        if !alpha.is_finite() {
            return Err(RotorError::Domain(format!("alpha {alpha} must be finite")));
        }
        Ok(Self {
            n,
            alpha: wrap_angle(alpha),
            kappa,
        })
    }

    /// Fiducial state `|0, 0⟩` with spread `kappa`.
    pub fn fiducial(kappa: f64) -> Result<Self> {
        Self::new(0, 0.0, kappa)
    }

    /// Untruncated amplitude `⟨l|n, α⟩ = e^{i(n-l)α} I_{n-l}(κ) / √I₀(2κ)`.
    pub fn amplitude(&self, l: i64) -> Complex64 {
        let k = self.n - l;
        let mag = bessel_i_signed(k, self.kappa) / bessel_i_signed(0, 2.0 * self.kappa).sqrt();
        Complex64::from_polar(1.0, k as f64 * self.alpha) * mag
    }

    /// Untruncated amplitudes over `window`, without renormalization.
    pub fn raw_amplitudes(&self, window: &BasisWindow) -> Vec<Complex64> {
        let reach = (self.n - window.l_lo())
            .unsigned_abs()
            .max((self.n - window.l_hi()).unsigned_abs()) as usize;
        let table = bessel_i_table(reach, self.kappa);
        let norm = bessel_i_signed(0, 2.0 * self.kappa).sqrt();
        window
            .indices()
            .map(|l| {
                let k = self.n - l;
                let mag = table[k.unsigned_abs() as usize] / norm;
                Complex64::from_polar(mag, k as f64 * self.alpha)
            })
            .collect()
    }
}

/// What to do when a window cannot hold a state to the required accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Widen {
    #[default]
    Auto,
    Strict,
}

/// Normalized amplitudes `a_l` on a finite window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedRotorState {
    window: BasisWindow,
    amps: Vec<Complex64>,
}

impl TruncatedRotorState {
    /// Checks the length and unit norm of `amps`.
    pub fn new(window: BasisWindow, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != window.dim() {
            return Err(RotorError::InvalidSize(format!(
                "{} amplitudes for a window of dimension {}",
                amps.len(),
                window.dim()
            )));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(RotorError::Domain(format!("state norm {norm} is not 1")));
        }
        Ok(Self { window, amps })
    }

    /// Rescales `amps` to unit norm.
    pub fn normalized(window: BasisWindow, mut amps: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(RotorError::Domain("cannot normalize a zero vector".into()));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::new(window, amps)
    }

    /// Angular-momentum eigenstate `|l⟩`.
    pub fn basis(window: BasisWindow, l: i64) -> Result<Self> {
        let idx = window
            .index(l)
            .ok_or_else(|| RotorError::Domain(format!("l = {l} outside the window")))?;
        let mut amps = vec![Complex64::new(0.0, 0.0); window.dim()];
        amps[idx] = Complex64::new(1.0, 0.0);
        Ok(Self { window, amps })
    }

    pub fn window(&self) -> &BasisWindow {
        &self.window
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    /// `a_l`, zero outside the window.
    pub fn amp(&self, l: i64) -> Complex64 {
        self.window
            .index(l)
            .map_or(Complex64::new(0.0, 0.0), |i| self.amps[i])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Re-expresses the state on a larger window.
    pub fn embed(&self, window: &BasisWindow) -> Result<Self> {
        if window.l_lo() > self.window.l_lo() || window.l_hi() < self.window.l_hi() {
            return Err(RotorError::WindowMismatch(
                window.l_lo(),
                window.l_hi(),
                self.window.l_lo(),
                self.window.l_hi(),
            ));
        }
        let amps = window.indices().map(|l| self.amp(l)).collect();
        Ok(Self {
            window: *window,
            amps,
        })
    }

    /// `(l, |a_l|²)` pairs.
    pub fn probabilities(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.window
            .indices()
            .zip(self.amps.iter().map(|a| a.norm_sqr()))
    }
}

/// Builds `|n, α⟩` on `window`, checking the dropped tail.
///
/// With [`Widen::Auto`] a window that drops more than [`TAIL_TOL`] of the
/// probability is replaced by its union with the default window.
pub fn von_mises_state(
    p: &VonMisesParams,
    window: &BasisWindow,
    widen: Widen,
) -> Result<TruncatedRotorState> {
    let mut window = *window;
    let mut amps = p.raw_amplitudes(&window);
    let mut kept: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    let mut tail = (1.0 - kept).max(0.0);
    if tail >= TAIL_TOL {
        match widen {
            Widen::Strict => {
                return Err(RotorError::WindowTooNarrow {
                    lo: window.l_lo(),
                    hi: window.l_hi(),
                    tail,
                    tol: TAIL_TOL,
                })
            }
            Widen::Auto => {
                window = window.union(&BasisWindow::for_von_mises(p.n, p.kappa));
                amps = p.raw_amplitudes(&window);
                kept = amps.iter().map(|a| a.norm_sqr()).sum();
                tail = (1.0 - kept).max(0.0);
                if tail >= TAIL_TOL {
                    return Err(RotorError::WindowTooNarrow {
                        lo: window.l_lo(),
                        hi: window.l_hi(),
                        tail,
                        tol: TAIL_TOL,
                    });
                }
            }
        }
    }
    TruncatedRotorState::normalized(window, amps)
}

impl VonMisesParams {
    /// `|n, α⟩` on its default window.
    pub fn state(&self) -> Result<TruncatedRotorState> {
        von_mises_state(self, &BasisWindow::for_von_mises(self.n, self.kappa), Widen::Strict)
    }
}

/// `D(n, α) s` with `(D s)_l = e^{-ilα} s_{l-n}`, on the union of the
/// original and shifted windows.
pub fn displace(s: &TruncatedRotorState, n: i64, alpha: f64) -> TruncatedRotorState {
    let target = s.window.union(&s.window.shifted(n));
    displace_into(s, n, alpha, &target).expect("union window always holds the shifted support")
}

/// `D(n, α) s` expressed on `window`; fails if any nonzero amplitude would
/// fall outside it.
pub fn displace_into(
    s: &TruncatedRotorState,
    n: i64,
    alpha: f64,
    window: &BasisWindow,
) -> Result<TruncatedRotorState> {
    let shifted = s.window.shifted(n);
    for (l, a) in shifted.indices().zip(&s.amps) {
        if !window.contains(l) && a.norm_sqr() > 0.0 {
            return Err(RotorError::SupportOverflow {
                lo: shifted.l_lo(),
                hi: shifted.l_hi(),
            });
        }
    }
    let amps = window
        .indices()
        .map(|l| Complex64::from_polar(1.0, -(l as f64) * alpha) * s.amp(l - n))
        .collect();
    Ok(TruncatedRotorState {
        window: *window,
        amps,
    })
}

/// `⟨s1|s2⟩ = Σ_l conj(a¹_l) a²_l` over the union of both windows.
pub fn overlap(s1: &TruncatedRotorState, s2: &TruncatedRotorState) -> Complex64 {
    let w = s1.window.union(&s2.window);
    w.indices().map(|l| s1.amp(l).conj() * s2.amp(l)).sum()
}

/// Phase-insensitive fidelity `|⟨s1|s2⟩|²`.
pub fn fidelity(s1: &TruncatedRotorState, s2: &TruncatedRotorState) -> f64 {
    overlap(s1, s2).norm_sqr()
}

/// Closed form `|⟨n,α|n',α'⟩|² = I²_{n-n'}[2κ cos((α-α')/2)] / I₀²(2κ)`.
pub fn von_mises_overlap_sq(p1: &VonMisesParams, p2: &VonMisesParams) -> Result<f64> {
    if p1.kappa != p2.kappa {
        return Err(RotorError::UnequalKappa(p1.kappa, p2.kappa));
    }
    let kappa = p1.kappa;
    let arg = 2.0 * kappa * (0.5 * (p1.alpha - p2.alpha)).cos();
    let num = bessel_i_signed(p1.n - p2.n, arg);
    let den = bessel_i_signed(0, 2.0 * kappa);
    Ok((num / den).powi(2))
}
