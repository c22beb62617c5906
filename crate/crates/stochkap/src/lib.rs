//! Reduced-dimensional stochastic modeling of coupled problems.
//!
//! The crate builds polynomial chaos surrogates for two-block uncertain
//! inputs, compresses the block carried across a coupling interface into a
//! few reduced random variables with random coefficients, transforms the
//! reference measure of those variables into discrete form, and synthesizes
//! quadrature rules adapted to them. A one-dimensional coupled
//! neutronics/heat demonstration model and Monte Carlo cross-validation
//! drivers sit on top.

pub mod basis;
pub mod chaos;
pub mod config;
pub mod driver;
pub mod error;
pub mod export;
pub mod field;
pub mod linalg;
pub mod measure;
pub mod mesh;
pub mod quadrature;
pub mod reactor;
pub mod util;

pub use error::{Error, Result};
