//! Natural KLMS kernel adaptive filtering and its stochastic performance model.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! laboratory:
//!
//! * [`linalg`]: dense symmetric linear algebra (eigendecomposition, PD square
//!   roots, Kronecker products, lexicographic vectorisation).
//! * [`kernel`]: Gaussian kernel, dictionaries and the Gram factorisation that
//!   maps the dictionary subspace onto `R^r`.
//! * [`moments`]: closed-form Gaussian moments of kernel products and the
//!   assembled moment model consumed by the analysis.
//! * [`filters`]: Natural KLMS (full and selective update) and a KNLMS baseline.
//! * [`analysis`]: mean and mean-square stability, transient and steady-state MSE.
//! * [`sim`]: input/plant generators and the Monte-Carlo learning-curve harness.
//!
//! IO, configuration files and the command-line front end live in the `kaflab`
//! companion crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod analysis;
mod error;
pub mod filters;
pub mod kernel;
pub mod linalg;
mod math;
pub mod moments;
pub mod sim;

pub use error::{Error, Result};
