//! Kernelized contextual bandits.
//!
//! * [`kernels`]: joint context-action kernels and kernel matrices.
//! * [`linalg`]: rank-one and bordering updates of SPD inverses.
//! * [`dictionary`]: incremental Nystrom dictionaries sampled online by
//!   ridge leverage scores.
//! * [`policies`]: exact kernel UCB, its Nystrom-projected counterpart,
//!   a resparsifying budgeted baseline and a random control.
//! * [`environments`]: synthetic contextual reward functions.
//! * [`diagnostics`]: effective dimension, information gain and related
//!   offline checks.

pub mod diagnostics;
pub mod dictionary;
pub mod environments;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod policies;

pub use error::{BanditError, Result};
pub use kernels::{KernelSpec, StatePoint};
