//! POD-DL-ROM: reduced order models for parametrized time-dependent PDEs built from
//! a randomized POD basis and a convolutional autoencoder + feedforward network pair.
//!
//! The pipeline runs in five stages:
//!
//! * [`fom`] solves small finite-difference problems and assembles snapshot datasets.
//! * [`rpod`] compresses snapshots into an orthonormal basis with a randomized SVD.
//! * [`nn`] is the network engine (dense, conv, transposed conv, ELU, Adam).
//! * [`dlrom`] trains and queries the reduced model on POD coordinates.
//! * [`eval`] computes error indicators; [`study`] runs the N / N_train studies and
//!   timings on top of training.
//!
//! Binary file formats shared with the command line tool live in [`io`].

pub mod dlrom;
pub mod error;
pub mod eval;
pub mod fom;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod rpod;
pub mod study;

pub use error::{Error, Result};
