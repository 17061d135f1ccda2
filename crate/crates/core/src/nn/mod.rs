//! 64-bit tensor core for the toy SE-CNN.

mod gradcheck;
mod io;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
#[doc(hidden)]
pub use gradcheck::grad_check_with_fault;
pub use io::{read_params, read_params_file, write_params, write_params_file};
pub use layers::{se_forward, sigmoid, SeTrace};
pub use loss::{mse_consistency, softmax, softmax_backward, softmax_cross_entropy, softmax_row};
#[doc(hidden)]
pub use model::{backward_with_fault, BackwardFault};
pub use model::{backward, forward, images_to_batch, init_params, predict_logits, ForwardCache, ModelSpec};
pub use optim::sgd_update;
pub use tensor::{ParamSet, Tensor};
