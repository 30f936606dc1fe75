//! Learn interpretable finite-difference stencils from synthetic space-time
//! PDE data with a tiny fully-convolutional encoder.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod family;
pub mod model;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use family::Family;
pub use tensor::{Kernel2x2, KernelStack, Tensor3};
