pub mod bessel;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod mesh;
pub mod observation;
pub mod param;
pub mod pcn;
pub mod prior;
pub mod quadrature;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
