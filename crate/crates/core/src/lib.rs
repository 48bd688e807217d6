pub mod bessel2sb;
pub mod bm_step;
pub mod error;
pub mod mc_oracle;
pub mod montecarlo;
pub mod pricing;
pub mod process;
pub mod quad;
pub mod rng;
pub mod thermo;

pub use error::{Error, Result};
