//! Reverse-mode differentiation, parameter storage and optimization.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use params::{write_atomic, Bindings, ParamEntry, ParamRole, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
