//! Distributed online identification of stable linear systems with
//! reverse-experience-replay SGD and gossip averaging.
//!
//! Modules, bottom up: [`matlib`] (small dense linear algebra), [`lti`]
//! (system generation and simulation), [`network`] (mixing matrices and
//! gossip), [`estimator`] (DSGD-RER, SGD-RER, vanilla D-SGD, OLS),
//! [`diagnostics`] (numerical checks of the error analysis) and [`harness`]
//! (configs, sweeps, traces, plots).

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod lti;
pub mod matlib;
pub mod network;
pub mod rng;

pub use diagnostics::{error_metric, McReport};
pub use error::{Error, Result};
pub use estimator::{BufferLayout, Record, RunOptions, RunOutput, StepSizePolicy};
pub use harness::trace::{ErrorTrace, TraceRow};
pub use lti::{InitialState, LtiSystem, NoiseKind, Trajectory};
pub use matlib::{Matrix, MatrixError};
pub use network::{Topology, TopologyKind, TopologySpec};
pub use rng::{Purpose, RngStream};
