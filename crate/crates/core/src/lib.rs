//! Mean-field dynamics on the probability simplex driven by Markov rate
//! matrices: generators, revision protocols, deterministic flows, Lyapunov
//! functions, Nash equilibria of population games and finite-population
//! simulation.

pub mod dynamics;
pub mod error;
pub mod games;
pub mod lyapunov;
pub mod markov;
pub mod matrix_io;
pub mod numdiff;
pub mod protocols;
pub mod simplex;
pub mod stochastic;
pub mod transforms;

pub use error::{Error, Result};
pub use markov::{MarkovMatrix, RateMatrix};
pub use simplex::{ChartProjection, SimplexPoint, TangentVector, WeightedInnerProduct};
pub use transforms::{ConvexFunction, MonotoneTransform};
