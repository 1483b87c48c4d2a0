//! Reversible graph normalizing flows over node feature sets.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense f64 matrices, the reverse-mode tape, and gradient checking
//! * [`rng`]: counter-based deterministic random numbers
//! * [`graph`]: simple undirected graphs, synthetic datasets, edge-list / DOT I/O
//! * [`mp`]: attention message passing (the shared F/G transform)
//! * [`flow`]: reversible coupling steps, exact inverses and log-determinants,
//!   and the memory-efficient backward pass that reconstructs hidden states
//! * [`density`]: Gaussian-prior likelihoods and point-set density training
//! * [`autoencoder`]: noise-feature graph auto-encoder with a distance decoder
//! * [`generate`]: two-stage graph generation (flow over auto-encoder embeddings)
//! * [`eval`]: degree / clustering / orbit statistics and kernel MMD
//! * [`config`] / [`cli`]: run configuration and the thin subcommand layer
//!
//! Everything is plain Rust with no runtime dependencies; all randomness flows
//! from explicit seeds so equal seeds give byte-identical artifacts.

pub mod autoencoder;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod density;
pub mod engine;
pub mod error;
pub mod eval;
pub mod flow;
pub mod generate;
pub mod graph;
pub mod mp;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod toy;

pub use error::{GnfError, Result};
pub use rng::Rng;
pub use tensor::{Tape, Tensor, TensorId};
