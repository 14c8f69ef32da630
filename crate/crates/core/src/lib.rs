//! Microscopic lane-change simulation.
//!
//! Vehicles follow their leaders with IDM or FVDM and decide lane changes by
//! weighing route, speed, comfort and courtesy incentives against a driving
//! style. A MOBIL baseline is provided for comparison, and the `calib` module
//! fits style parameters to labeled decision samples with logistic regression.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod carfollow;
pub mod decision;
pub mod error;
pub mod incentives;
pub mod mobil;
pub mod network;
pub mod par;
pub mod sim;

pub use error::{Error, Result};
