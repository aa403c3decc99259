//! Kolmogorov-Arnold networks with DenseNet-style forward connections and
//! hard-concrete edge/node gates, trained under a minimum-description-length
//! objective so the architecture sparsifies while it fits.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common instantiations.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gate;
pub mod network;
pub mod objective;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod spline;
pub mod trainer;

pub use error::{KanError, Result};
pub use gate::{GateBank, GateParams, GateSample};
pub use network::{ActiveCounts, EdgeKind, GateValues, GatedKan, KanConfig, KanShape, NodeKind};
pub use objective::MdlConfig;
pub use scalar::Real;
pub use spline::{SplineActivation, SplineGrid};
pub use trainer::{Condition, ConditionSpec, TrainConfig};

pub type Kan = GatedKan<f64>;
pub type Kan32 = GatedKan<f32>;
pub type Spline = SplineActivation<f64>;
pub type Spline32 = SplineActivation<f32>;
pub type Grid = SplineGrid<f64>;
pub type Gates = GateBank<f64>;
pub type Mdl = MdlConfig<f64>;
