//! Quasi-stationary analysis of periodic absorbed Markov chains on finite state spaces.
//!
//! A chain is a substochastic kernel on labeled states; the deficit of each row
//! is the probability of jumping to the cemetery. Periodic chains are reduced to
//! their iterated kernel on the first cyclic class, whose Perron data drive the
//! quasi-stationary distribution, the periodic quasi-limiting profiles, the
//! Q-process and the quasi-ergodic distribution.

pub mod analysis;
pub mod chain;
pub mod eigen;
pub mod error;
pub mod instances;
pub mod io;
pub mod linalg;
pub mod monte_carlo;
pub mod periodicity;
pub mod q_process;
pub mod qsd;
pub mod quasi_ergodic;
pub mod quasi_limit;
pub mod spectral;

pub use analysis::ChainAnalysis;
pub use chain::{AbsorbedKernel, CyclicStructure, DiscreteMeasure, StateFunction};
pub use error::{Error, Result};
