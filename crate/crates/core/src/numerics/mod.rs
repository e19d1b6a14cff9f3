//! Dense tensors, reverse-mode gradients and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use gradcheck::{check_gradients, GradCheckReport};
pub use tape::{sigmoid, BatchStats, CsrMatrix, Gradients, Tape, Var};
pub use tensor::{argmax, softmax_row, Tensor};
