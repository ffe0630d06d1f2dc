//! Kolmogorov-Arnold network ODE surrogates for chemical kinetics.
//!
//! A [`model::ChemKanModel`] computes species production rates with a
//! two-layer KAN kinetic core and, optionally, a temperature rate through a
//! linear thermodynamic map plus a KAN correction. Models are integrated with
//! the Tsit5 scheme in [`ode`] and trained on trajectory data with forward
//! sensitivities in [`train`]. [`deeponet`] holds the operator-network
//! baseline, [`data`] the reference mechanisms and dataset handling, and
//! [`experiment`] the end-to-end studies driven by the command-line tool.

pub mod checkpoint;
pub mod data;
pub mod deeponet;
pub mod error;
pub mod experiment;
pub mod kan;
pub mod model;
pub mod ode;
pub mod optim;
pub mod par;
pub mod train;

pub use error::{Error, Result};
pub use model::{ChemKanConfig, ChemKanModel, ParamSelector, StateScaling, ThermoState};
pub use par::Execution;
