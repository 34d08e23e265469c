//! Detection-time statistics for a particle in a harmonic waveguide ending
//! in an absorbing detector.
//!
//! Units are fixed by `hbar = m = d = 1`, where `d` is the width of the slab
//! holding the initial state; [`model::to_si`] converts at the I/O boundary.

pub mod bohmian;
pub mod grid;
pub mod krylov;
pub mod model;
pub mod observables;
pub mod operators;
pub mod propagator;
pub mod reference;

pub use num_complex::Complex64;
