pub mod deform;
pub mod error;
pub mod mesh;

pub use error::{Error, Result};
pub mod fem;
pub mod sparse;
pub mod laplace_eig;
pub mod expm;
pub mod sequence;
pub mod signal;
pub mod btpde;
pub mod spectral;
pub mod metrics;
pub mod inverse;
pub mod experiments;
