//! Bounds on stationary moments of stochastic hybrid systems.

pub mod mcsim;
pub mod modelfile;
pub mod momentgen;
pub mod models;
pub mod polyalg;
pub mod recast;
pub mod sdpbuild;
pub mod shs;
pub mod solver;
