//! Output-feedback barrier pairs for uncertain MIMO plants in output-injection
//! canonical form: synthesis, composite barrier evaluation, data-driven barrier
//! bounds and a switching safety supervisor.

pub mod lmi;
pub mod error;
pub mod model;
pub mod serde_mat;

pub use error::{Error, Result};
pub mod synthesis;
pub mod estimator;
pub mod design;
pub mod composite;
pub mod supervisor;
pub mod sim;
pub mod verify;
pub mod config;
pub mod bundle;
