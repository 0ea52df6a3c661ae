//! Core numerics for a two-fermion quantum gate in a 1D double-well trap
//! near a magnetic Feshbach resonance.
//!
//! The crate is organized around four stages:
//!
//! * [`spbasis`] — single-particle double-well eigenstates in a truncated
//!   harmonic-oscillator basis, localized left/right combinations and
//!   Franck-Condon factors of the momentum-kick operator `e^{ikx}`.
//! * [`feshbach`] — the two-channel configuration-interaction model:
//!   molecular spectrum in the doubled potential, coupling tensor, and
//!   interacting levels versus magnetic field.
//! * [`dynamics`] — driven two-particle evolution per spin-symmetry sector
//!   (Pauli blocking explicit) with unitary steppers, gate phases,
//!   fidelity and leakage.
//! * [`crab`] — pulse parametrization (base envelope plus truncated
//!   randomized-frequency Fourier correction) and derivative-free
//!   optimization with restarts.
//!
//! All internal quantities are in oscillator units: energies in ħω,
//! lengths in `a_ho = sqrt(ħ/mω)`, times in 1/ω. SI conversion happens at
//! the caller's boundary.
//!
//! Core math is generic over the scalar type through the [`Real`] trait;
//! concrete `f64` aliases are exported at the crate root (e.g.
//! [`SingleParticleBasis64`]).

pub mod crab;
pub mod dynamics;
pub mod error;
pub mod feshbach;
pub mod osc;
pub mod quad;
pub mod spbasis;

use num_traits::{FromPrimitive, ToPrimitive};

pub use error::CoreError;

/// Scalar trait for all core math: `f32` and `f64` qualify.
///
/// nalgebra's `RealField` supplies the transcendental methods; the
/// num-traits bounds cover literal conversion both ways.
pub trait Real:
    nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Send + Sync + 'static
{
}

/// Shorthand for converting an `f64` literal into the working scalar.
#[inline]
pub fn r<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal must convert into the scalar type")
}

/// Quadrature / assembly stability target: 1e-12 at f64, floored at
/// 100 eps for lower-precision scalars.
#[inline]
pub fn stability_tol<T: Real>() -> T {
    nalgebra::RealField::max(r(1e-12), T::default_epsilon() * r(100.0))
}

/// Complex number over the working scalar.
pub type C<T> = num_complex::Complex<T>;

pub type Matrix<T> = nalgebra::DMatrix<T>;
pub type Vector<T> = nalgebra::DVector<T>;
pub type CMatrix<T> = nalgebra::DMatrix<C<T>>;
pub type CVector<T> = nalgebra::DVector<C<T>>;

pub type TrapConfig64 = spbasis::TrapConfig<f64>;
pub type SingleParticleBasis64 = spbasis::SingleParticleBasis<f64>;
pub type LocalizedPair64 = spbasis::LocalizedPair<f64>;
pub type FeshbachConfig64 = feshbach::FeshbachConfig<f64>;
pub type MolecularSpectrum64 = feshbach::MolecularSpectrum<f64>;
pub type CouplingTensor64 = feshbach::CouplingTensor<f64>;
pub type SpectrumPoint64 = feshbach::SpectrumPoint<f64>;
pub type SectorHamiltonian64 = dynamics::SectorHamiltonian<f64>;
pub type TwoParticleState64 = dynamics::TwoParticleState<f64>;
pub type GateResult64 = dynamics::GateResult<f64>;
pub type PulseSpec64 = crab::PulseSpec<f64>;
pub type OptimizationReport64 = crab::OptimizationReport<f64>;
