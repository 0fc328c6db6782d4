//! Bayesian joint approximate diagonalization of a collection of square
//! matrices that share an (unknown) orthonormal eigenvector basis.
//!
//! The observation model is
//!
//! ```text
//! C_k = B diag(u_k) B' + E_k,        k = 1..K,
//! ```
//!
//! where `B` is an N x M matrix with orthonormal columns, `u_k` are
//! per-matrix eigenvalues and the entries of `E_k` are i.i.d. Gaussian with
//! per-matrix variance `sigma2_k`. Inference runs a Gibbs sampler that
//! alternates conjugate draws of the eigenvalues, the noise variances and
//! the eigenvalue scale with a conditional draw of `B` from a Bingham-type
//! distribution on the Stiefel manifold.
//!
//! Modules:
//! - [`model`]: data types, vectorized design matrix, log-likelihood
//! - [`bingham`]: vector Bingham sampling on the unit sphere
//! - [`matrix_lb`]: conditional updates of the orthonormal basis
//! - [`gibbs`]: the full sampler, chain management, MAP extraction
//! - [`diagnostics`]: ESS, Gelman-Rubin, Amari index, BIC model selection
//! - [`synth`]: synthetic data generators (planted sets, mixtures, CSP)
//! - [`baseline`]: deterministic Jacobi joint diagonalization
//!
//! # Example
//!
//! ```
//! use jointdiag::{gibbs, synth, diagnostics};
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let inst = synth::jd_dataset(6, 3, 20, 0.05, &mut rng).unwrap();
//! let mut config = gibbs::SamplerConfig::default_for(inst.matrices.k_count());
//! config.n_samples = 200;
//! config.burn_in = 100;
//! config.n_chains = 2;
//! let traces = gibbs::run_chains(&inst.matrices, 3, &config).unwrap();
//! let map = gibbs::map_estimate(&traces).unwrap();
//! let p = diagnostics::comparison_matrix(&map.basis, inst.basis.matrix()).unwrap();
//! let api = diagnostics::amari_index(&p).unwrap();
//! assert!(api < 3.0);
//! ```

pub mod baseline;
pub mod bingham;
pub mod diagnostics;
mod error;
pub mod gibbs;
pub mod matrix_lb;
pub mod model;
pub mod synth;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
