//! Dense-tensor computation tape with reverse-mode gradients.
//!
//! Values are `f64` matrices recorded on an append-only [`Tape`]; a single
//! reverse sweep from a scalar loss produces exact gradients for every bound
//! parameter. [`ParamStore`] owns the trainable arrays between steps and
//! [`AdamState`] updates them.

mod adam;
mod error;
mod gradcheck;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use params::{Binding, ParamStore};
pub use tape::{EdgeIndex, Tape, TensorId};
