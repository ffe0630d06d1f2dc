//! Reference mechanisms, element tables, trajectory datasets and their file
//! formats.

pub mod dataset;
pub mod elements;
pub mod ignition;
pub mod io;
pub mod mechanisms;

pub use dataset::{apply_noise, NormalizationSpec, Provenance, Split, Trajectory, TrajectoryDataset};
pub use elements::ElementMatrix;
pub use ignition::{ignition_delay, Ignition};
