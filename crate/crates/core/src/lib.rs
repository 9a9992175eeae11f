pub mod data;
pub mod error;
pub mod fno;
pub mod pde;
pub mod real;
pub mod seeds;
pub mod spectral;

pub use error::{CoreError, Result};
