//! Dense `f64` tensors with a reverse-mode tape.

mod gradcheck;
mod lstm;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, numeric_gradient, relative_error, REL_ERR_FLOOR};
pub use ops::{
    activation, column_dot, conv1d, conv_output_len, matmul, sigmoid, unit_normalize_columns,
    Activation, NORM_EPS,
};
pub use tape::{cosine_bce_value, Gradients, Tape, Var, PROB_CLAMP};
pub use tensor::Tensor;
