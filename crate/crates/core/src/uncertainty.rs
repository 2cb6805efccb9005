//! Moments of `E`, `L` and the rotated sine `S`, the uncertainty products
//! built from them, and the closed-form bounds for equal-κ von Mises
//! preparation and measurement.
//!
//! Conventions: `E|l⟩ = |l-1⟩`, so in the angle representation `E = e^{-iφ}`
//! and a state peaked at angle `α` has `arg⟨E⟩ = -α`. The rotated sine
//! `S = (e^{iθ}E† - e^{-iθ}E)/2i` with `θ = arg⟨E⟩` equals `sin(φ - α)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RotorError};
use crate::rotor::bessel::bessel_i_signed;
use crate::rotor::TruncatedRotorState;

/// Below this `|⟨E⟩|` the rotation angle of `S` is undefined.
pub const DEGENERATE_E: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    State,
    Measurement,
}

/// First and second moments needed for the uncertainty products.
pub trait RotorMoments {
    /// `⟨E⟩`.
    fn mean_e(&self) -> Complex64;
    /// `⟨E²⟩`.
    fn mean_e2(&self) -> Complex64;
    /// `(⟨L⟩, ⟨L²⟩ - ⟨L⟩²)`.
    fn moments_l(&self) -> (f64, f64);
}

impl RotorMoments for TruncatedRotorState {
    fn mean_e(&self) -> Complex64 {
        shifted_sum(self, 1)
    }

    fn mean_e2(&self) -> Complex64 {
        shifted_sum(self, 2)
    }

    fn moments_l(&self) -> (f64, f64) {
        let (mut m1, mut m2) = (0.0, 0.0);
        for (l, p) in self.probabilities() {
            m1 += l as f64 * p;
            m2 += (l * l) as f64 * p;
        }
        (m1, (m2 - m1 * m1).max(0.0))
    }
}

// Σ_l conj(a_{l-k}) a_l
fn shifted_sum(s: &TruncatedRotorState, k: usize) -> Complex64 {
    let a = s.amps();
    a.iter()
        .skip(k)
        .zip(a.iter())
        .map(|(hi, lo)| lo.conj() * hi)
        .sum()
}

/// `⟨E⟩` of a state.
pub fn mean_e(s: &TruncatedRotorState) -> Complex64 {
    s.mean_e()
}

/// `(⟨L⟩, ΔL²)` of a state.
pub fn moments_l(s: &TruncatedRotorState) -> (f64, f64) {
    s.moments_l()
}

/// `ΔS² = ⟨S²⟩ = (1 - Re(e^{-2iθ}⟨E²⟩)) / 2`, using `E†E = EE† = 1` and
/// `⟨S⟩ = 0`.
pub fn sine_variance<M: RotorMoments + ?Sized>(m: &M) -> Result<f64> {
    let e = m.mean_e();
    if e.norm() < DEGENERATE_E {
        return Err(RotorError::Degenerate(e.norm()));
    }
    Ok(rotated_sine_variance(e, m.mean_e2()))
}

pub(crate) fn rotated_sine_variance(e: Complex64, e2: Complex64) -> f64 {
    let theta = e.arg();
    let rotated = Complex64::from_polar(1.0, -2.0 * theta) * e2;
    (0.5 * (1.0 - rotated.re)).max(0.0)
}

/// Uncertainty summary of either a state or a measured distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub kind: ReportKind,
    pub mean_e: Complex64,
    pub mean_l: f64,
    pub var_l: f64,
    pub var_s: f64,
    /// `ΔS / |⟨E⟩|`; `None` when `|⟨E⟩|` vanishes.
    pub sigma: Option<f64>,
    /// `ΔL ΔS`.
    pub product: f64,
    /// `ΔL σ`; `None` when `σ` is undefined.
    pub normalized_product: Option<f64>,
    /// Set for point masses and other inputs whose products vanish.
    pub degenerate: bool,
}

impl UncertaintyReport {
    pub fn from_moments(
        kind: ReportKind,
        mean_e: Complex64,
        mean_l: f64,
        var_l: f64,
        var_s: f64,
    ) -> Self {
        let dl = var_l.max(0.0).sqrt();
        let ds = var_s.max(0.0).sqrt();
        let sigma = (mean_e.norm() >= DEGENERATE_E).then(|| ds / mean_e.norm());
        let product = dl * ds;
        Self {
            kind,
            mean_e,
            mean_l,
            var_l,
            var_s,
            sigma,
            product,
            normalized_product: sigma.map(|s| dl * s),
            degenerate: sigma.is_none() || var_l <= 0.0 || var_s <= 0.0,
        }
    }

    /// `|⟨E⟩|`.
    pub fn abs_mean_e(&self) -> f64 {
        self.mean_e.norm()
    }

    /// Named scalar fields, in a fixed order, for tables and intervals.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mean_l", self.mean_l),
            ("var_l", self.var_l),
            ("var_s", self.var_s),
            ("abs_mean_e", self.abs_mean_e()),
            ("sigma", self.sigma.unwrap_or(f64::NAN)),
            ("product", self.product),
            ("normalized_product", self.normalized_product.unwrap_or(f64::NAN)),
        ]
    }
}

/// Operator-moment report for a state or density operator.
pub fn report<M: RotorMoments + ?Sized>(m: &M) -> Result<UncertaintyReport> {
    let e = m.mean_e();
    let var_s = sine_variance(m)?;
    let (mean_l, var_l) = m.moments_l();
    Ok(UncertaintyReport::from_moments(
        ReportKind::State,
        e,
        mean_l,
        var_l,
        var_s,
    ))
}

/// Closed-form products for a von Mises signal measured with an equal-κ
/// von Mises POVM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub kappa: f64,
    /// `½ I₁(2κ)/I₀(2κ)`.
    pub state_product: f64,
    /// `[I₁(2κ)/I₀(2κ)] √(½[1 + I₂(2κ)/I₀(2κ)])`.
    pub meas_product: f64,
    pub state_norm: f64,
    /// `[I₀(2κ)/I₁(2κ)] √(½[1 + I₂(2κ)/I₀(2κ)])`; `None` at `κ = 0`.
    pub meas_norm: Option<f64>,
    /// `√(1 - I₁²(2κ)/I₀²(2κ))`.
    pub dispersion: f64,
}

pub fn bounds(kappa: f64) -> Result<BoundTable> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(RotorError::Domain(format!("kappa {kappa} must be finite and >= 0")));
    }
    let x = 2.0 * kappa;
    let i0 = bessel_i_signed(0, x);
    let r1 = bessel_i_signed(1, x) / i0;
    let r2 = bessel_i_signed(2, x) / i0;
    let root = (0.5 * (1.0 + r2)).sqrt();
    Ok(BoundTable {
        kappa,
        state_product: 0.5 * r1,
        meas_product: r1 * root,
        state_norm: 0.5,
        meas_norm: (r1 > 0.0).then(|| root / r1),
        dispersion: (1.0 - r1 * r1).max(0.0).sqrt(),
    })
}
