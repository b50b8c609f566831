//! Dense matrices, a reverse-mode tape, finite-difference checking and Adam.

pub mod gradcheck;
pub mod matrix;
pub mod optim;
pub mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use matrix::Matrix;
pub use optim::{Adam, AdamConfig};
pub use tape::{gelu, Gradients, Tape, Var};
