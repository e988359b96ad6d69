//! Probabilistic search planning.
//!
//! A coverage-reward search environment over Gaussian-mixture probability
//! maps, a recurrent autoencoder that compresses path history into a fixed
//! latent, and SAC/PPO agents that consume either the latent or a
//! frame-stacked path.

pub mod autodiff;
pub mod geom;
pub mod integrate;
pub mod pdm;
pub mod rae;
pub mod env;
pub mod drl;
pub mod harness;
pub mod verify;
