//! Monte Carlo pricing of American and Asian options by tracking the
//! early-exercise boundary, plus lattice reference prices.

pub mod boundary;
pub mod contract;
pub mod error;
pub mod lattice;
pub mod pricer;
pub mod process;
pub mod rng;
pub mod study;

pub use contract::{ContractSpec, ExerciseStyle, OptionKind};
pub use error::{Error, Result};
pub use pricer::{price_american, price_european, AmericanConfig, PriceEstimate};
pub use process::{ProcessParams, TimeGrid};
