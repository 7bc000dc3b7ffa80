pub mod data;
pub mod error;
pub mod losses;
pub mod networks;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
