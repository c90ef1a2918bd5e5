pub mod error;
pub mod fitting;
pub mod gates;
pub mod kernel;
pub mod perm_dynamics;
pub mod replica_channel;
pub mod sampled_moments;
pub mod series;
pub mod spectral;
pub mod statevec;
pub mod theory;

pub use error::{Error, Result};
