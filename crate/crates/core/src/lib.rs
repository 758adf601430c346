//! Estimation of functionals of unobservable regression errors from the
//! averaged two-step regression quantile process.

pub mod cli;
pub mod error;
pub mod exec;
pub mod functionals;
pub mod io;
pub mod model;
pub mod quadrature;
pub mod quantreg;
pub mod rank;
pub mod simplex;
pub mod simulation;
pub mod two_step;

pub use error::{Error, Result};
pub use model::{Dataset, StepQuantileProcess};
