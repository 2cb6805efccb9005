//! Density operators on a finite angular-momentum window.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RotorError};
use crate::io::write_atomic;
use crate::rotor::{BasisWindow, TruncatedRotorState};
use crate::uncertainty::RotorMoments;

/// Tolerance for the Hermiticity, positivity and trace checks.
pub const DENSITY_TOL: f64 = 1e-10;

/// Hermitian, positive semidefinite, unit-trace matrix indexed by `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    window: BasisWindow,
    matrix: DMatrix<Complex64>,
}

impl DensityOperator {
    pub fn new(window: BasisWindow, matrix: DMatrix<Complex64>) -> Result<Self> {
        let dim = window.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(RotorError::InvalidSize(format!(
                "{}x{} matrix for a window of dimension {dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let asym = (&matrix - matrix.adjoint()).camax();
        if !(asym <= DENSITY_TOL) {
            return Err(RotorError::InvalidDensity(format!("not Hermitian (residue {asym:e})")));
        }
        let trace = matrix.trace();
        if (trace.re - 1.0).abs() > DENSITY_TOL || trace.im.abs() > DENSITY_TOL {
            return Err(RotorError::InvalidDensity(format!("trace {trace} is not 1")));
        }
        let rho = Self { window, matrix };
        let min = rho.eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        if min < -DENSITY_TOL {
            return Err(RotorError::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(rho)
    }

    /// Hermitian part of `matrix` divided by its trace, without the
    /// positivity check. Used for iterates that are positive by construction.
    pub(crate) fn from_positive(window: BasisWindow, matrix: DMatrix<Complex64>) -> Self {
        let herm = (&matrix + matrix.adjoint()) * Complex64::new(0.5, 0.0);
        let tr = herm.trace().re;
        Self {
            window,
            matrix: herm / Complex64::new(tr, 0.0),
        }
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn pure(s: &TruncatedRotorState) -> Self {
        let v = DVector::from_column_slice(s.amps());
        Self::from_positive(*s.window(), &v * v.adjoint())
    }

    /// `1/dim` on the window.
    pub fn maximally_mixed(window: BasisWindow) -> Self {
        let dim = window.dim();
        let m = DMatrix::from_diagonal_element(dim, dim, Complex64::new(1.0 / dim as f64, 0.0));
        Self { window, matrix: m }
    }

    pub fn window(&self) -> &BasisWindow {
        &self.window
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    /// `⟨l|ρ|l'⟩`, zero outside the window.
    pub fn element(&self, l: i64, lp: i64) -> Complex64 {
        match (self.window.index(l), self.window.index(lp)) {
            (Some(i), Some(j)) => self.matrix[(i, j)],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.matrix.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Number of eigenvalues above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.eigenvalues().iter().filter(|&&e| e > tol).count()
    }

    /// `⟨ψ|ρ|ψ⟩` over the indices shared by the two windows.
    pub fn fidelity_pure(&self, s: &TruncatedRotorState) -> f64 {
        let amps: Vec<Complex64> = self.window.indices().map(|l| s.amp(l)).collect();
        let v = DVector::from_vec(amps);
        (v.adjoint() * &self.matrix * &v)[(0, 0)].re
    }

    /// `v† ρ v` for a vector on the window.
    pub fn expectation(&self, v: &[Complex64]) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, vi) in v.iter().enumerate() {
            let row: Complex64 = self.matrix.row(i).iter().zip(v).map(|(r, vj)| r * vj).sum();
            acc += vi.conj() * row;
        }
        acc.re
    }

    /// Diagonal `⟨l|ρ|l⟩`.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let dim = self.dim();
        let mut matrix = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                let z = self.matrix[(i, j)];
                matrix.push([z.re, z.im]);
            }
        }
        let rec = DensityRecord {
            l_lo: self.window.l_lo(),
            l_hi: self.window.l_hi(),
            matrix,
        };
        Ok(serde_json::to_string_pretty(&rec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: DensityRecord = serde_json::from_str(text)?;
        let window = BasisWindow::new(rec.l_lo, rec.l_hi)?;
        let dim = window.dim();
        if rec.matrix.len() != dim * dim {
            return Err(RotorError::Parse(format!(
                "{} matrix entries for dimension {dim}",
                rec.matrix.len()
            )));
        }
        let m = DMatrix::from_row_iterator(
            dim,
            dim,
            rec.matrix.iter().map(|[re, im]| Complex64::new(*re, *im)),
        );
        Self::new(window, m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct DensityRecord {
    l_lo: i64,
    l_hi: i64,
    /// Row-major `(re, im)` pairs.
    matrix: Vec<[f64; 2]>,
}

impl RotorMoments for DensityOperator {
    // Tr(ρE) = Σ_l ⟨l|ρ|l-1⟩
    fn mean_e(&self) -> Complex64 {
        (1..self.dim()).map(|i| self.matrix[(i, i - 1)]).sum()
    }

    fn mean_e2(&self) -> Complex64 {
        (2..self.dim()).map(|i| self.matrix[(i, i - 2)]).sum()
    }

    fn moments_l(&self) -> (f64, f64) {
        let (mut m1, mut m2) = (0.0, 0.0);
        for (l, p) in self.window.indices().zip(self.populations()) {
            m1 += l as f64 * p;
            m2 += (l * l) as f64 * p;
        }
        (m1, (m2 - m1 * m1).max(0.0))
    }
}
