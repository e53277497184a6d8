//! Model predictive control for tracking of propofol/remifentanil hypnosis.
//!
//! The plant is a pair of three-compartment pharmacokinetic models with an
//! effect site per drug, feeding a Hill-type surface model for the bispectral
//! index. Slow compartments are cancelled by a static compensation gain and
//! the remaining fast subsystem is driven by a tracking MPC with an
//! artificial steady input and an invariant terminal set.

pub mod compensation;
pub mod config;
pub mod design;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mpc;
pub mod pkpd;
pub mod qp;
pub mod sim;
pub mod terminal;
pub mod validate;

pub use error::{Error, Result};
