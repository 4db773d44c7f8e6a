pub mod apps;
pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod tensor;
pub mod wgan;

pub use autograd::{Grads, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Element, Shape, Tensor};
