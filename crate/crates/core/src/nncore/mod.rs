//! Dense reverse-mode autodiff, small classification models and parameter
//! vector arithmetic.

mod model;
mod params;
pub mod tape;

pub use model::{
    accuracy, batch_loss_and_grad, directional_derivative, init_bound, init_model,
    per_sample_losses, Activation, Architecture, ModelSpec, SampleBatch,
};
pub use params::{axpy_point, ParamVector};
pub use tape::mean_in_order;
