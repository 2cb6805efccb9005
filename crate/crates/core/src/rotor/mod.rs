//! Special functions, the truncated rotor Hilbert space, von Mises states,
//! displacements and the phase-space Fourier transform.

pub mod bessel;
pub mod fourier;
pub mod state;

pub use bessel::bessel_i;
pub use fourier::{
    displacement_matrix_element, rotor_fourier, rotor_fourier_inverse, von_mises_q,
    von_mises_q_characteristic, AngleGrid, AngleTable, Placement,
};
pub use state::{
    displace, displace_into, fidelity, overlap, von_mises_overlap_sq, von_mises_state,
    wrap_angle, BasisWindow, TimeWindow, TruncatedRotorState, VonMisesParams, Widen,
};
