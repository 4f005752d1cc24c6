//! Sag-free initialization of discrete elastic rod strands.
//!
//! Rest shape and stiffness parameters are optimized so that a strand is in
//! static equilibrium at its authored pose under gravity.

pub mod alm;
pub mod batch;
pub mod bcqp;
pub mod energy;
pub mod error;
pub mod jacobian;
pub mod io;
pub mod linalg;
pub mod sim;
pub mod strand;
pub mod verify;

pub use error::{Error, Result};
