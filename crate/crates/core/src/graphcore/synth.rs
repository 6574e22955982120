//! Two-population stochastic block model.
//!
//! The homophilic block connects same-class pairs with probability `p_in` and
//! cross-class pairs with `p_out`; the heterophilic block swaps the two.
//! Optional bridge edges join the blocks uniformly at random.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{Block, DatasetBundle, Graph, MixedMeta};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MixedGraphParams {
    pub n_hom: usize,
    pub n_het: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Probability of an edge between a homophilic and a heterophilic node.
    pub p_bridge: f64,
    pub feat_dim: usize,
    /// Standard deviation of the isotropic feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for MixedGraphParams {
    fn default() -> Self {
        Self {
            n_hom: 200,
            n_het: 200,
            classes: 2,
            p_in: 0.05,
            p_out: 0.005,
            p_bridge: 0.0,
            feat_dim: 16,
            noise: 1.0,
            seed: 0,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {p}")))
    }
}

pub fn generate_mixed_graph(params: &MixedGraphParams) -> Result<DatasetBundle> {
    let MixedGraphParams { n_hom, n_het, classes, p_in, p_out, p_bridge, feat_dim, noise, seed } =
        params.clone();
    if n_hom + n_het == 0 {
        return Err(Error::InvalidArgument("empty graph".into()));
    }
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    check_prob("p_in", p_in)?;
    check_prob("p_out", p_out)?;
    if !(0.0..1.0).contains(&p_bridge) {
        return Err(Error::InvalidArgument(format!("p_bridge must lie in [0, 1), got {p_bridge}")));
    }
    if p_in == p_out {
        log::warn!("p_in == p_out: the two blocks are statistically identical");
    }

    let n = n_hom + n_het;
    let mut rng = seed::rng(seed::derive(seed, "mixed-graph"));

    // Balanced labels within each block, shuffled so classes interleave.
    let mut labels = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(n);
    for (size, block) in [(n_hom, Block::Hom), (n_het, Block::Het)] {
        let mut part: Vec<usize> = (0..size).map(|i| i % classes).collect();
        part.shuffle(&mut rng);
        labels.extend(part);
        blocks.extend(std::iter::repeat_n(block, size));
    }

    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let same = labels[i] == labels[j];
            let p = match (blocks[i], blocks[j]) {
                (Block::Hom, Block::Hom) => if same { p_in } else { p_out },
                (Block::Het, Block::Het) => if same { p_out } else { p_in },
                _ => p_bridge,
            };
            if p > 0.0 && rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    let graph = Graph::from_pairs(n, pairs, true)?;

    let means = Array2::from_shape_fn((classes, feat_dim), |_| rng.sample::<f64, _>(StandardNormal));
    let features = Array2::from_shape_fn((n, feat_dim), |(v, f)| {
        means[[labels[v], f]] + noise * rng.sample::<f64, _>(StandardNormal)
    });

    let mut bundle = DatasetBundle::new("mixed", graph, features, labels)?;
    bundle.num_classes = classes;
    bundle.meta = Some(MixedMeta { het_fraction: n_het as f64 / n as f64, blocks });
    Ok(bundle)
}
