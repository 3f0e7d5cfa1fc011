//! Detection and classification of association reversals.
//!
//! A reversal (the marginal and conditional associations of two variables
//! having opposite signs) is judged trustworthy only when the models behind
//! both associations are statistically adequate for the data.

pub mod analysis;
pub mod bernoulli;
pub mod distributions;
pub mod error;
pub mod linalg;
pub mod misspec;
pub mod parameterization;
pub mod regression;
pub mod simulate;
pub mod stats;
pub mod verdict;

pub use error::{Error, Result};
