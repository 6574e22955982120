//! Normalized Laplacians and the Rayleigh quotient.

use ndarray::{Array1, Array2, ArrayView2};

use super::graph::Graph;
use super::sparse::SparseMatrix;
use crate::{Error, Result};

fn inv_sqrt_degrees(g: &Graph) -> Result<Vec<f64>> {
    g.degrees()
        .iter()
        .enumerate()
        .map(|(v, &d)| if d > 0.0 { Ok(1.0 / d.sqrt()) } else { Err(Error::ZeroDegree(v)) })
        .collect()
}

/// `D^{-1/2} A D^{-1/2}` on the adjacency pattern.
pub fn normalized_adjacency(g: &Graph) -> Result<SparseMatrix> {
    let s = inv_sqrt_degrees(g)?;
    let a = g.adjacency();
    let vals = a
        .pattern()
        .entries()
        .map(|(p, r, c)| a.vals()[p] * s[r] * s[c])
        .collect();
    SparseMatrix::new(a.pattern().clone(), vals)
}

/// `L = I - D^{-1/2} A D^{-1/2}`.
pub fn normalized_laplacian(g: &Graph) -> Result<SparseMatrix> {
    let s = inv_sqrt_degrees(g)?;
    let n = g.n();
    let mut triplets = Vec::with_capacity(g.vals().len() + n);
    let mut has_diag = vec![false; n];
    for (p, r, c) in g.adjacency().pattern().entries() {
        let mut v = -g.vals()[p] * s[r] * s[c];
        if r == c {
            v += 1.0;
            has_diag[r] = true;
        }
        triplets.push((r, c, v));
    }
    for (v, present) in has_diag.into_iter().enumerate() {
        if !present {
            triplets.push((v, v, 1.0));
        }
    }
    SparseMatrix::from_triplets(n, &triplets)
}

/// `L̃ = 2 L / λ_max - I`.
///
/// With `λ_max = 2` this is `-D^{-1/2} A D^{-1/2}`, which keeps the adjacency
/// pattern and is the form the encoder and the adversary use.
pub fn rescaled_laplacian(g: &Graph, lambda_max: f64) -> Result<SparseMatrix> {
    if lambda_max == 2.0 {
        let adj = normalized_adjacency(g)?;
        let vals = adj.vals().iter().map(|v| -v).collect();
        return SparseMatrix::new(adj.pattern().clone(), vals);
    }
    if !(lambda_max > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_max must be positive, got {lambda_max}")));
    }
    let l = normalized_laplacian(g)?;
    let scale = 2.0 / lambda_max;
    let vals = l
        .pattern()
        .entries()
        .map(|(p, r, c)| scale * l.vals()[p] - if r == c { 1.0 } else { 0.0 })
        .collect();
    SparseMatrix::new(l.pattern().clone(), vals)
}

/// `Tr(Zᵀ M Z)` accumulated entry by entry over the stored pattern of `M`,
/// `O(nnz · D)`.
pub fn quadratic_trace(m: &SparseMatrix, z: &ArrayView2<f64>) -> f64 {
    m.pattern()
        .entries()
        .map(|(p, r, c)| m.vals()[p] * z.row(r).dot(&z.row(c)))
        .sum()
}

/// Matrix Rayleigh quotient `Tr(ZᵀLZ) / Tr(ZᵀZ)`.
pub fn rayleigh_quotient(l: &SparseMatrix, z: &ArrayView2<f64>) -> Result<f64> {
    if l.n() != z.nrows() {
        return Err(Error::Shape(format!("L is {0}x{0}, Z has {1} rows", l.n(), z.nrows())));
    }
    let denom: f64 = z.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument("zero embedding matrix".into()));
    }
    Ok(quadratic_trace(l, z) / denom)
}

/// Dense eigendecomposition of a symmetric sparse matrix.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns. Intended for small graphs (oracles and the
/// variance study).
pub fn dense_eigen(m: &SparseMatrix) -> (Array1<f64>, Array2<f64>) {
    symmetric_eigen(&m.to_dense())
}

pub fn symmetric_eigen(dense: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = dense.nrows();
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (dense[[i, j]] + dense[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_edge_laplacian() {
        let g = Graph::from_pairs(2, [(0, 1)], false).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        assert_eq!(l.to_dense(), array![[1.0, -1.0], [-1.0, 1.0]]);
        let (vals, _) = dense_eigen(&l);
        assert!(vals[0].abs() < 1e-12 && (vals[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_spectrum() {
        let g = Graph::from_pairs(3, [(0, 1), (1, 2), (0, 2)], false).unwrap();
        let (vals, _) = dense_eigen(&normalized_laplacian(&g).unwrap());
        for (got, want) in vals.iter().zip([0.0, 1.5, 1.5]) {
            assert!((got - want).abs() < 1e-12, "{vals}");
        }
    }

    #[test]
    fn kernel_is_sqrt_degree() {
        let g = Graph::from_pairs(4, [(0, 1), (1, 2), (2, 3), (1, 3)], true).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        let v = Array2::from_shape_fn((4, 1), |(i, _)| g.degrees()[i].sqrt());
        let lv = l.mul_dense(&v.view());
        assert!(lv.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn zero_degree_is_an_error() {
        let g = Graph::from_pairs(3, [(0, 1)], false).unwrap();
        assert!(matches!(normalized_laplacian(&g), Err(Error::ZeroDegree(2))));
    }

    #[test]
    fn rayleigh_on_single_edge() {
        let g = Graph::from_pairs(2, [(0, 1)], false).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        let smooth = array![[1.0], [1.0]];
        let rough = array![[1.0], [-1.0]];
        assert_eq!(rayleigh_quotient(&l, &smooth.view()).unwrap(), 0.0);
        assert_eq!(rayleigh_quotient(&l, &rough.view()).unwrap(), 2.0);
        assert!(rayleigh_quotient(&l, &Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn rescaled_general_matches_fast_path() {
        let g = Graph::from_pairs(4, [(0, 1), (1, 2), (2, 3)], true).unwrap();
        let fast = rescaled_laplacian(&g, 2.0).unwrap().to_dense();
        let l = normalized_laplacian(&g).unwrap().to_dense();
        let slow = &l - &Array2::<f64>::eye(4);
        assert!((&fast - &slow).iter().all(|x| x.abs() < 1e-15));
        let half = rescaled_laplacian(&g, 1.5).unwrap().to_dense();
        let want = &l * (2.0 / 1.5) - &Array2::<f64>::eye(4);
        assert!((&half - &want).iter().all(|x| x.abs() < 1e-15));
    }
}
