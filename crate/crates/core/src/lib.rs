pub mod attention;
pub mod augment;
pub mod autodiff;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod skeleton;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
