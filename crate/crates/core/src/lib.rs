//! Pseudo-spectral toolkit for the two-dimensional stochastic Navier–Stokes
//! equation on the torus.

pub mod config;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod lp;
pub mod noise;
pub mod paraproduct;
pub mod rng;
pub mod solver;
pub mod stats;
pub mod suites;
pub mod run;

pub use error::{Error, Result};
pub use field::{grad_sym, nonlinear_term, sym_tensor, DealiasRule, PhysicalField, SpectralField, TensorField};
pub use grid::TorusGrid;
pub use lp::{BesovIndex, DyadicSystem, Projection};
