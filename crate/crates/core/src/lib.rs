//! Best linear approximation (BLA) of nonlinear systems driven by random-phase
//! multisines, with process noise entering inside the system.
//!
//! The crate is organised bottom-up:
//!
//! - [`signals`]: multisine and Gaussian noise generation, the unitary DFT and
//!   cross-power spectra.
//! - [`volterra`]: single- and dual-input Volterra kernels and the reduction of
//!   a dual-input kernel to its noise-averaged single-input kernel.
//! - [`systems`]: rational LTI blocks, static polynomial nonlinearities, the
//!   Hammerstein simulator and the closed-loop simulator.
//! - [`estimator`]: the robust BLA estimator (open and closed loop), the
//!   spectral BLA, the four-way output decomposition and variance predictions.
//! - [`analytic`]: closed-form oracles for the Hammerstein example.
//! - [`experiment`]: glue that runs multi-realization, multi-period
//!   experiments and produces [`estimator::ExperimentRecord`]s.

pub mod analytic;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod seed;
pub mod signals;
pub mod systems;
pub mod volterra;

pub use error::{Error, Result};
pub use seed::{Seed, Stream};
