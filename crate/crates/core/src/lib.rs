//! Tabular-MDP library for third-person imitation via spectral Markov-chain
//! alignment.
//!
//! The library is organized around a pipeline: a finite MDP plus a behavior
//! policy induce a row-stochastic restart chain ([`mdp::induced_chain`]);
//! rescaling that chain by its stationary distribution yields a matrix whose
//! oriented SVD is equivariant under state permutations ([`spectral`]);
//! matching singular-vector rows with a linear assignment solver recovers the
//! state bijection between a source chain and a permuted copy observed in a
//! target domain ([`alignment`]). The [`sampling`] module estimates the
//! permuted chain from a single observed state trajectory, and
//! [`alignment::ppl`] runs the full threshold-clipped recovery on those
//! estimates. The [`counterexample`] module contains the near-symmetric
//! bandit-like MDP family showing that the online variant of the problem
//! needs Omega(1/eps^2) interactions.
//!
//! All operations are pure functions of immutable inputs and may be invoked
//! concurrently.

pub mod alignment;
pub mod counterexample;
pub mod error;
pub mod generate;
pub mod io;
pub mod mdp;
pub mod oracle;
pub mod sampling;
pub mod spectral;

pub use error::{Error, Result};
pub use mdp::{OccupancyMeasure, PermutationMap, StochasticPolicy, TabularMdp};
pub use sampling::{EmpiricalChain, RngSeed};
pub use spectral::{ChainSummary, FriendlinessCertificate};
