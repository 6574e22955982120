//! Adaptive spectral graph contrastive learning.
//!
//! Two Chebyshev filter channels (low- and high-pass) are projected through a
//! shared MLP and fused per node by a learned reliability gate. Training is a
//! minimax game against a PGD adversary that perturbs structure and features,
//! steering its budget toward the channel each node trusts and penalising the
//! Rayleigh quotient gap between the channels.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`graphcore`] | CSR graphs, Laplacians, homophily, dataset I/O, generators, augmentation |
//! | [`cheb`] | monotone filter reparameterisation and Chebyshev recurrence |
//! | [`diffnet`] | reverse-mode tape, InfoNCE, Adam |
//! | [`model`] | dual-channel encoder with node-wise gate |
//! | [`adversary`] | spectrally targeted PGD and the DICE poisoning baseline |
//! | [`trainer`] | alternating clean / adversarial optimisation |
//! | [`eval`] | linear probes and gate diagnostics |
//! | [`theory`] | numerical checks of the variance and regret results |

pub mod adversary;
pub mod cheb;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod graphcore;
pub mod model;
pub mod seed;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
