pub mod costs;
pub mod data;
pub mod error;
pub mod inference;
pub mod mcmc;
pub mod model;
pub mod optimizer;
pub mod pipeline;
pub mod quadrature;
pub mod simplex;

pub use error::{Error, Result};
