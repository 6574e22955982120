use super::graph::Graph;

/// Per-node fraction of non-self neighbours sharing the node's label.
///
/// Nodes without non-self neighbours get 0.
pub fn local_homophily(g: &Graph, labels: &[usize]) -> Vec<f64> {
    (0..g.n())
        .map(|v| {
            let (mut same, mut total) = (0usize, 0usize);
            for (u, _) in g.neighbors(v).filter(|&(u, _)| u != v) {
                total += 1;
                if labels[u] == labels[v] {
                    same += 1;
                }
            }
            if total == 0 {
                0.0
            } else {
                same as f64 / total as f64
            }
        })
        .collect()
}

/// Fraction of undirected non-self edges whose endpoints share a label.
pub fn edge_homophily(g: &Graph, labels: &[usize]) -> f64 {
    let (mut same, mut total) = (0usize, 0usize);
    for (i, j, _) in g.edges() {
        total += 1;
        if labels[i] == labels[j] {
            same += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        same as f64 / total as f64
    }
}

/// Node-averaged local homophily.
pub fn node_homophily(g: &Graph, labels: &[usize]) -> f64 {
    let h = local_homophily(g, labels);
    if h.is_empty() {
        0.0
    } else {
        h.iter().sum::<f64>() / h.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_counts() {
        // node 0 joined to 1..=4; labels 0,0,1,1,1 -> h_0 = 1/4
        let g = Graph::from_pairs(5, [(0, 1), (0, 2), (0, 3), (0, 4)], true).unwrap();
        let h = local_homophily(&g, &[0, 0, 1, 1, 1]);
        assert_eq!(h[0], 0.25);
        assert_eq!(h[1], 1.0);
        assert_eq!(h[2], 0.0);
    }

    #[test]
    fn all_agree() {
        let g = Graph::from_pairs(4, [(0, 1), (0, 2), (0, 3)], true).unwrap();
        assert_eq!(local_homophily(&g, &[2, 2, 2, 2])[0], 1.0);
        assert_eq!(edge_homophily(&g, &[2, 2, 2, 2]), 1.0);
    }

    #[test]
    fn isolated_node_defaults_to_zero() {
        let g = Graph::from_pairs(3, [(0, 1)], true).unwrap();
        assert_eq!(local_homophily(&g, &[0, 0, 0])[2], 0.0);
    }
}
