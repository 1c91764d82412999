//! Guaranteed neural network model reduction and sampled-data reachability.
//!
//! The crate builds the augmented network `Φ̃` of an original controller `Φ`
//! and a reduced controller `Φ̂`, bounds their output gap over a box with
//! interval reachability, and uses the bound to compute sound reach tubes
//! of sampled-data closed loops with the cheaper reduced controller.

pub mod acc;
pub mod closed_loop;
pub mod error;
pub mod interval;
pub mod network;
pub mod ode;
pub mod reach;
pub mod reduction;
pub mod sim;

pub use error::{Error, Result};
pub use interval::{Interval, IntervalBox};
pub use network::{Activation, ActivationSpec, Layer, Network};
pub use reach::{hull, reach_nn, BoxUnion, PartitionConfig};
pub use reduction::{augment, inflate, precision, InflationMode, Precision};
pub use closed_loop::{reach_nncs, verify, ControllerChoice, SafetySpec, SampledNncs, Verdict};
pub use ode::{acc_dynamics, reach_ode_x, reach_ode_y, Dynamics, ReachTube, StepConfig};
