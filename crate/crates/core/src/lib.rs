//! Amortized posterior inference of terrain parameters (permittivity, RMS
//! height, RMS slope) from radar-sounder surface peak powers.
//!
//! The pipeline: a facet-based forward model renders a rangeline over a
//! synthetic rough surface; datasets of simulated peak powers are paired with
//! reference-surface powers to form the calibration-free ratio `h`; a
//! conditional normalizing flow learns `q(θ | h)`; simulation-based
//! calibration checks the result; inference conditions the flow on an
//! observed `h` without further simulation.
//!
//! ```
//! use rsnpe::physics::{fresnel_power_reflectance, Permittivity};
//! let r = fresnel_power_reflectance(Permittivity::new(3.1).unwrap());
//! assert!((r - 0.075923).abs() < 1e-6);
//! ```

pub mod calibration;
pub mod datagen;
pub mod error;
pub mod flow;
pub mod inference;
pub mod io;
pub mod nn;
pub mod noise;
pub mod physics;
pub mod rng;
pub mod simulator;
pub mod surface;

pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowModel, TrainConfig};
pub use physics::{Permittivity, PowerDb, PowerLinear};
pub use simulator::{RadarConfig, Simulator, TerrainParams};
