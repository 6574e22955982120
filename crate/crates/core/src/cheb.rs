//! Chebyshev filter machinery.
//!
//! A filter is parameterised by `K+1` free reals `δ`. Prefix sums of
//! `ReLU(δ)` give its values `γ` on the Chebyshev grid, monotone by
//! construction: non-decreasing in `λ` for the high-pass channel,
//! non-increasing for the low-pass one. The Chebyshev coefficients `w`
//! follow from `γ` by discrete orthogonality, and the filter is applied to
//! features with the three-term recurrence on `L̃ = L - I` (`λ_max = 2`).

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::graphcore::SparseMatrix;
use crate::{Error, Result};

/// Roots of `T_{K+1}`: `x_j = cos(π (j + 1/2) / (K + 1))`, strictly
/// decreasing in `j`.
pub fn cheb_nodes(k: usize) -> Vec<f64> {
    let m = (k + 1) as f64;
    (0..=k)
        .map(|j| (std::f64::consts::PI * (j as f64 + 0.5) / m).cos())
        .collect()
}

/// The grid `γ` lives on: Chebyshev nodes in ascending order, so `γ_i` is the
/// filter value at the `i`-th smallest rescaled eigenvalue.
pub fn ascending_nodes(k: usize) -> Vec<f64> {
    let mut x = cheb_nodes(k);
    x.reverse();
    x
}

/// `T_0(x), ..., T_k(x)`.
pub fn cheb_polys(k: usize, x: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(k + 1);
    t.push(1.0);
    if k >= 1 {
        t.push(x);
    }
    for i in 2..=k {
        let next = 2.0 * x * t[i - 1] - t[i - 2];
        t.push(next);
    }
    t
}

/// Learnable parameters of the two channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub k: usize,
    pub delta_l: Vec<f64>,
    pub delta_h: Vec<f64>,
}

/// Grid values and Chebyshev coefficients of both channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoeffs {
    pub gamma_l: Vec<f64>,
    pub gamma_h: Vec<f64>,
    pub w_l: Vec<f64>,
    pub w_h: Vec<f64>,
}

impl FilterBank {
    pub fn new(k: usize, delta_l: Vec<f64>, delta_h: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("polynomial order K must be at least 1".into()));
        }
        if delta_l.len() != k + 1 || delta_h.len() != k + 1 {
            return Err(Error::Shape(format!(
                "expected {} deltas per channel, got {} and {}",
                k + 1,
                delta_l.len(),
                delta_h.len()
            )));
        }
        Ok(Self { k, delta_l, delta_h })
    }

    /// Linear ramps: `γ_L` falls from 1 to `1/(K+1)`, `γ_H` rises from
    /// `1/(K+1)` to 1.
    pub fn ramp(k: usize) -> Self {
        let step = 1.0 / (k + 1) as f64;
        let mut delta_l = vec![step; k + 1];
        delta_l[0] = 1.0;
        Self { k, delta_l, delta_h: vec![step; k + 1] }
    }

    pub fn coeffs(&self) -> FilterCoeffs {
        let (gamma_l, gamma_h) = reconstruct_gammas(&self.delta_l, &self.delta_h);
        let nodes = ascending_nodes(self.k);
        let w_l = coeffs_from_gammas(&gamma_l, &nodes);
        let w_h = coeffs_from_gammas(&gamma_h, &nodes);
        FilterCoeffs { gamma_l, gamma_h, w_l, w_h }
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `γ^H_i = Σ_{j≤i} ReLU(δ^H_j)`, `γ^L_i = ReLU(δ^L_0) − Σ_{1≤j≤i} ReLU(δ^L_j)`.
pub fn reconstruct_gammas(delta_l: &[f64], delta_h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gamma_h = delta_h
        .iter()
        .scan(0.0, |acc, &d| {
            *acc += relu(d);
            Some(*acc)
        })
        .collect();
    let gamma_l = delta_l
        .iter()
        .enumerate()
        .scan(0.0, |acc, (j, &d)| {
            if j == 0 {
                *acc = relu(d);
            } else {
                *acc -= relu(d);
            }
            Some(*acc)
        })
        .collect();
    (gamma_l, gamma_h)
}

/// Matrix `M` with `w = γ M`: `M[j, k] = (2/(K+1)) T_k(x_j)`, column 0 halved
/// so that the interpolant passes through every `γ_j`.
pub fn coeff_matrix(nodes: &[f64]) -> Array2<f64> {
    let m = nodes.len();
    let k = m - 1;
    let scale = 2.0 / m as f64;
    let mut out = Array2::zeros((m, m));
    for (j, &x) in nodes.iter().enumerate() {
        for (kk, t) in cheb_polys(k, x).into_iter().enumerate() {
            out[[j, kk]] = scale * t * if kk == 0 { 0.5 } else { 1.0 };
        }
    }
    out
}

/// Chebyshev coefficients of the degree-`K` interpolant of `γ` on `nodes`.
pub fn coeffs_from_gammas(gamma: &[f64], nodes: &[f64]) -> Vec<f64> {
    assert_eq!(gamma.len(), nodes.len(), "one gamma per node");
    let g = Array1::from(gamma.to_vec());
    g.dot(&coeff_matrix(nodes)).to_vec()
}

/// `Σ_k w_k T_k(x)` for `x` in `[-1, 1]`.
pub fn cheb_eval(w: &[f64], x: f64) -> f64 {
    cheb_polys(w.len() - 1, x).iter().zip(w).map(|(t, c)| t * c).sum()
}

/// Response at Laplacian eigenvalue `λ ∈ [0, 2]`, i.e. at `λ̃ = λ − 1`.
pub fn filter_response(w: &[f64], lambda: f64) -> f64 {
    cheb_eval(w, lambda - 1.0)
}

/// `T_0(L̃)X, ..., T_K(L̃)X` by the three-term recurrence.
pub fn cheb_basis(l_tilde: &SparseMatrix, x: &ArrayView2<f64>, k: usize) -> Vec<Array2<f64>> {
    let mut terms = Vec::with_capacity(k + 1);
    terms.push(x.to_owned());
    if k >= 1 {
        terms.push(l_tilde.mul_dense(x));
    }
    for i in 2..=k {
        let mut next = l_tilde.mul_dense(&terms[i - 1].view());
        next *= 2.0;
        next -= &terms[i - 2];
        terms.push(next);
    }
    terms
}

/// `Σ_k w_k T_k(L̃) X`, cost `O(K · nnz · F)`.
pub fn apply_filter(l_tilde: &SparseMatrix, w: &[f64], x: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if w.is_empty() {
        return Err(Error::InvalidArgument("empty coefficient vector".into()));
    }
    if l_tilde.n() != x.nrows() {
        return Err(Error::Shape(format!("L̃ is {0}x{0}, X has {1} rows", l_tilde.n(), x.nrows())));
    }
    let terms = cheb_basis(l_tilde, x, w.len() - 1);
    Ok(combine_basis(&terms, w))
}

pub fn combine_basis(terms: &[Array2<f64>], w: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros(terms[0].raw_dim());
    for (t, &c) in terms.iter().zip(w) {
        out.scaled_add(c, t);
    }
    out
}
