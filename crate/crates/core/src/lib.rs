pub mod baselines;
pub mod config;
pub mod contvalue;
pub mod cost;
pub mod decision;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod profile;
pub mod sim;
pub mod simulation;
pub mod twin;

pub use config::SimConfig;
pub use error::{Error, Result};
