pub mod analysis;
pub mod bench;
pub mod binvec;
pub mod engine;
pub mod error;
mod io_util;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
