pub mod env;
pub mod error;
pub mod network;
pub mod optim;
pub mod relay;
pub mod replay;
pub mod selection;
pub mod td;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
