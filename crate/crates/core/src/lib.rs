//! Temporal-convolutional-memory network for remaining-useful-life estimation,
//! built from scratch: tensors, layers with hand-written backward passes,
//! turbofan data handling, Adam training with a finite-difference gradient
//! checker, and the prognostics scoring protocol.

pub mod data;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod tensor;

/// Scalar type used for every computation.
pub type Real = f64;
