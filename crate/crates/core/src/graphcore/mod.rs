//! Graphs, Laplacians, homophily, datasets and augmentation.

pub mod augment;
pub mod graph;
pub mod homophily;
pub mod io;
pub mod laplacian;
pub mod sparse;
pub mod splits;
pub mod synth;

pub use augment::augment;
pub use graph::{Block, DatasetBundle, Graph, MixedMeta};
pub use homophily::{edge_homophily, local_homophily, node_homophily};
pub use io::{load_dataset, write_dataset};
pub use laplacian::{
    dense_eigen, normalized_adjacency, normalized_laplacian, quadratic_trace, rayleigh_quotient,
    rescaled_laplacian, symmetric_eigen,
};
pub use sparse::{SparseMatrix, SparsePattern};
pub use splits::{make_splits, Split, SplitSet};
pub use synth::{generate_mixed_graph, MixedGraphParams};

/// `ρ_i = scale · λ_i^beta`, a per-eigenmode perturbation energy that is
/// non-decreasing in `λ` for any `beta ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPerturbSpec {
    pub beta: f64,
    pub scale: f64,
}

impl SpectralPerturbSpec {
    pub fn new(beta: f64, scale: f64) -> crate::Result<Self> {
        if !(beta >= 0.0) || !(scale > 0.0) {
            return Err(crate::Error::InvalidArgument(format!(
                "need beta >= 0 and scale > 0, got beta={beta}, scale={scale}"
            )));
        }
        Ok(Self { beta, scale })
    }

    pub fn rho(&self, lambda: f64) -> f64 {
        // 0^0 = 1 keeps beta = 0 flat across the whole spectrum.
        self.scale * lambda.max(0.0).powf(self.beta)
    }
}
