//! Transductive active learning with Gaussian processes.
//!
//! Beliefs live on a finite domain; decision rules pick observations in a
//! sample space `S` to reduce uncertainty about a target space `A`.

pub mod acquisition;
pub mod batch;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod safebo;
pub mod theory;

pub use acquisition::{select_next, DecisionRule, ItlForm, ScoreReport, TargetedBelief};
pub use batch::{select_batch, BatchMode, BatchRequest, BatchSelection};
pub use error::{Error, Result};
pub use gp::{FiniteDomain, GaussianBelief, NoiseModel, Observation};
pub use kernels::{Kernel, KernelKind, MaternNu};
