//! Discrete-continuous Fourier transform on rotor phase space.
//!
//! A function `f(n, α)` of an integer and an angle maps to
//! `(𝓕f)(l, φ) = Σ_n ∫ dα/2π e^{i(lα - φn)} f(n, α)`. The α integral is the
//! uniform-grid rule, which is exact for trigonometric polynomials of degree
//! below the grid size. The inverse is
//! `f(n, α) = Σ_l e^{-ilα} ∫ dφ/2π e^{iφn} (𝓕f)(l, φ)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::bessel::bessel_i_signed;
use super::state::{wrap_angle, VonMisesParams};
use crate::error::{Result, RotorError};

/// Where the first sample of a uniform grid sits inside its cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// `-π + 2πk/N`; contains `φ = 0` when `N` is even.
    Endpoint,
    /// `-π + (k + ½) 2π/N`.
    Midpoint,
}

/// Uniform grid of `count` angles covering `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleGrid {
    start: f64,
    count: usize,
}

impl AngleGrid {
    pub fn new(count: usize, placement: Placement) -> Result<Self> {
        if count == 0 {
            return Err(RotorError::InvalidSize("angle grid needs at least one point".into()));
        }
        let step = 2.0 * PI / count as f64;
        let start = match placement {
            Placement::Endpoint => -PI,
            Placement::Midpoint => -PI + 0.5 * step,
        };
        Ok(Self { start, count })
    }

    /// Validates that `angles` are equally spaced with spacing `2π / len`.
    pub fn from_angles(angles: &[f64]) -> Result<Self> {
        let count = angles.len();
        if count == 0 {
            return Err(RotorError::InvalidSize("empty angle grid".into()));
        }
        let step = 2.0 * PI / count as f64;
        let start = wrap_angle(angles[0]);
        if start >= -PI + step - 1e-12 {
            return Err(RotorError::NonUniformGrid);
        }
        for (k, &a) in angles.iter().enumerate() {
            if (a - (angles[0] + k as f64 * step)).abs() > 1e-9 {
                return Err(RotorError::NonUniformGrid);
            }
        }
        Ok(Self { start, count })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn step(&self) -> f64 {
        2.0 * PI / self.count as f64
    }

    pub fn angle(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step()
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.angle(k)).collect()
    }
}

/// Complex table over `(integer index, angle)`, row-major in the index.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleTable {
    pub index_lo: i64,
    pub index_count: usize,
    pub grid: AngleGrid,
    pub values: Vec<Complex64>,
}

impl AngleTable {
    pub fn zeros(index_lo: i64, index_count: usize, grid: AngleGrid) -> Self {
        Self {
            index_lo,
            index_count,
            grid,
            values: vec![Complex64::new(0.0, 0.0); index_count * grid.len()],
        }
    }

    /// Tabulates `f(index, angle)`.
    pub fn from_fn(
        index_lo: i64,
        index_count: usize,
        grid: AngleGrid,
        mut f: impl FnMut(i64, f64) -> Complex64,
    ) -> Self {
        let mut values = Vec::with_capacity(index_count * grid.len());
        for i in 0..index_count {
            let n = index_lo + i as i64;
            for k in 0..grid.len() {
                values.push(f(n, grid.angle(k)));
            }
        }
        Self {
            index_lo,
            index_count,
            grid,
            values,
        }
    }

    pub fn get(&self, index: i64, k: usize) -> Complex64 {
        let i = (index - self.index_lo) as usize;
        self.values[i * self.grid.len() + k]
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.index_lo..self.index_lo + self.index_count as i64
    }
}

/// Forward transform onto `l_lo .. l_lo + l_count` and `phi_grid`.
pub fn rotor_fourier(
    f: &AngleTable,
    l_lo: i64,
    l_count: usize,
    phi_grid: AngleGrid,
) -> AngleTable {
    let na = f.grid.len();
    let alphas = f.grid.angles();
    // A(n, l) = (1/N) Σ_k e^{ilα_k} f(n, α_k)
    let mut partial = vec![Complex64::new(0.0, 0.0); f.index_count * l_count];
    for i in 0..f.index_count {
        let row = &f.values[i * na..(i + 1) * na];
        for j in 0..l_count {
            let l = (l_lo + j as i64) as f64;
            let s: Complex64 = row
                .iter()
                .zip(&alphas)
                .map(|(v, &a)| Complex64::from_polar(1.0, l * a) * v)
                .sum();
            partial[i * l_count + j] = s / na as f64;
        }
    }
    let phis = phi_grid.angles();
    let mut out = AngleTable::zeros(l_lo, l_count, phi_grid);
    for j in 0..l_count {
        for (k, &phi) in phis.iter().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..f.index_count {
                let n = (f.index_lo + i as i64) as f64;
                s += Complex64::from_polar(1.0, -phi * n) * partial[i * l_count + j];
            }
            out.values[j * phi_grid.len() + k] = s;
        }
    }
    out
}

/// Inverse transform of a table over `(l, φ)` back onto
/// `n_lo .. n_lo + n_count` and `alpha_grid`.
///
/// Round trips exactly when the forward `l` range spans `alpha_grid.len()`
/// consecutive integers and the `φ` grid has at least `n_count` points.
pub fn rotor_fourier_inverse(
    g: &AngleTable,
    n_lo: i64,
    n_count: usize,
    alpha_grid: AngleGrid,
) -> AngleTable {
    let np = g.grid.len();
    let phis = g.grid.angles();
    // B(n, l) = (1/M) Σ_j e^{iφ_j n} g(l, φ_j)
    let mut partial = vec![Complex64::new(0.0, 0.0); n_count * g.index_count];
    for j in 0..g.index_count {
        let row = &g.values[j * np..(j + 1) * np];
        for i in 0..n_count {
            let n = (n_lo + i as i64) as f64;
            let s: Complex64 = row
                .iter()
                .zip(&phis)
                .map(|(v, &p)| Complex64::from_polar(1.0, p * n) * v)
                .sum();
            partial[i * g.index_count + j] = s / np as f64;
        }
    }
    let alphas = alpha_grid.angles();
    let mut out = AngleTable::zeros(n_lo, n_count, alpha_grid);
    for i in 0..n_count {
        for (k, &a) in alphas.iter().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..g.index_count {
                let l = (g.index_lo + j as i64) as f64;
                s += Complex64::from_polar(1.0, -l * a) * partial[i * g.index_count + j];
            }
            out.values[i * alpha_grid.len() + k] = s;
        }
    }
    out
}

/// `⟨n',α'|D(l,φ)|n',α'⟩ = e^{i(lα'-φn')} e^{-ilφ/2} I_l[2κ cos(φ/2)] / I₀(2κ)`,
/// with `φ` taken on the `[-π, π)` branch.
pub fn displacement_matrix_element(p: &VonMisesParams, l: i64, phi: f64) -> Complex64 {
    let phi = wrap_angle(phi);
    let bessel = bessel_i_signed(l, 2.0 * p.kappa * (0.5 * phi).cos())
        / bessel_i_signed(0, 2.0 * p.kappa);
    let phase = l as f64 * p.alpha - phi * p.n as f64 - 0.5 * l as f64 * phi;
    Complex64::from_polar(bessel, phase)
}

/// Characteristic function of the Q-function of `|n',α'⟩`:
/// `C_Q(l, φ) = e^{i(lα'-φn')} I_l²[2κ cos(φ/2)] / (2π I₀²(2κ))`.
pub fn von_mises_q_characteristic(p: &VonMisesParams, l: i64, phi: f64) -> Complex64 {
    let phi = wrap_angle(phi);
    let r = bessel_i_signed(l, 2.0 * p.kappa * (0.5 * phi).cos())
        / bessel_i_signed(0, 2.0 * p.kappa);
    let phase = l as f64 * p.alpha - phi * p.n as f64;
    Complex64::from_polar(r * r / (2.0 * PI), phase)
}

/// Q-function of `|n',α'⟩` in closed form,
/// `I²_{n-n'}[2κ cos((α-α')/2)] / (2π I₀²(2κ))`.
pub fn von_mises_q(p: &VonMisesParams, n: i64, alpha: f64) -> f64 {
    let r = bessel_i_signed(n - p.n, 2.0 * p.kappa * (0.5 * (alpha - p.alpha)).cos())
        / bessel_i_signed(0, 2.0 * p.kappa);
    r * r / (2.0 * PI)
}
