pub mod augment;
pub mod autograd;
pub mod data;
pub mod distill;
pub mod error;
pub mod optim;
pub mod perceptual;
pub mod selective;
pub mod style_net;
pub mod tensor;
pub mod trace;
pub mod trainer;

pub use error::{Error, Result};
