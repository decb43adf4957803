pub mod dp;
pub mod envs;
pub mod error;
pub mod fr_ppo;
pub mod geometry;
pub mod harness;
pub mod mdp;
pub mod rng;
pub mod surrogates;

pub use error::{Error, Result};
