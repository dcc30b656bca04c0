//! Design and simulation of a hybrid distributed observer.
//!
//! Each agent runs a continuous-time observer for the part of the plant state
//! it can see, and at every event time the agents run `q` rounds of projected
//! consensus to recover the full state. The crate builds the decompositions
//! and gains, computes convergence certificates, and simulates the protocol
//! exactly between discrete instants.

// `!(x <= y)` is used on purpose: NaN must fail the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod plant;
pub mod reference;
pub mod sim;
pub mod timing;

pub use design::{Averaging, DesignCertificate, RateSpec};
pub use error::{Error, Result};
pub use graph::{DiGraph, GraphSchedule};
pub use matrix::{BlockMat, Mat, Vector};
pub use plant::{ChannelDecomposition, LtiPlant, NoiseForcing};
pub use timing::{Mode, TimingConfig};
pub use sim::{run_simulation, LostAgent, ResilienceEvent, ResilienceKind, SimSetup, SimTrace};
