use ndarray::Array2;
use rand::Rng;

use super::graph::Graph;
use crate::seed;
use crate::{Error, Result};

/// Random edge dropping and feature-column masking.
///
/// Each undirected non-self edge is dropped with probability
/// `edge_drop_rate`; each feature column is zeroed with probability
/// `feat_mask_rate`. Self-loops always survive.
pub fn augment(
    g: &Graph,
    x: &Array2<f64>,
    edge_drop_rate: f64,
    feat_mask_rate: f64,
    seed: u64,
) -> Result<(Graph, Array2<f64>)> {
    for (name, r) in [("edge_drop_rate", edge_drop_rate), ("feat_mask_rate", feat_mask_rate)] {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {r}")));
        }
    }
    let mut edge_rng = seed::rng(seed::derive(seed, "edge-drop"));
    let mut feat_rng = seed::rng(seed::derive(seed, "feature-mask"));

    let graph = if edge_drop_rate > 0.0 {
        let mut kept: Vec<(usize, usize, f64)> = (0..g.n())
            .filter(|&v| g.has_edge(v, v))
            .map(|v| (v, v, g.weight(v, v)))
            .collect();
        for (i, j, w) in g.edges() {
            if edge_rng.random::<f64>() >= edge_drop_rate {
                kept.push((i, j, w));
            }
        }
        Graph::from_weighted(g.n(), &kept)?
    } else {
        g.clone()
    };

    let mut feats = x.clone();
    if feat_mask_rate > 0.0 {
        for mut col in feats.columns_mut() {
            if feat_rng.random::<f64>() < feat_mask_rate {
                col.fill(0.0);
            }
        }
    }
    Ok((graph, feats))
}
