//! InfoNCE with cosine similarity and in-batch negatives.

use std::sync::Arc;

use ndarray::Array2;

use super::tape::{Tape, Var};
use crate::{Error, Result};

/// Which keys act as negatives for each query row.
#[derive(Debug, Clone, Default)]
pub enum Negatives {
    /// Every other row of the key matrix.
    #[default]
    Full,
    /// A shared subset of key rows; a query's own positive is skipped if it
    /// appears in the subset.
    Sampled(Arc<Vec<usize>>),
}

/// Full-batch negatives up to `cap` rows, otherwise `cap` keys drawn
/// uniformly without replacement.
pub fn choose_negatives(n: usize, cap: usize, rng: &mut impl rand::Rng) -> Negatives {
    if n <= cap {
        return Negatives::Full;
    }
    let mut idx = rand::seq::index::sample(rng, n, cap).into_vec();
    idx.sort_unstable();
    Negatives::Sampled(Arc::new(idx))
}

/// Per-row InfoNCE terms `−log(exp(û_v·v̂_v/τ) / Σ_k exp(û_v·k̂/τ))`, `N×1`.
///
/// Rows of `u` and `v` are L2-normalised inside, so similarities are cosines.
pub fn info_nce_rows(tape: &mut Tape, u: Var, v: Var, tau: f64, negatives: &Negatives) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if tape.shape(u) != tape.shape(v) {
        return Err(Error::Shape(format!("info_nce: {:?} vs {:?}", tape.shape(u), tape.shape(v))));
    }
    let n = tape.shape(u).0;
    let un = tape.row_normalize(u);
    let vn = tape.row_normalize(v);
    let pos = tape.row_dot(un, vn)?;
    let (neg, exclude) = match negatives {
        Negatives::Full => (tape.matmul_nt(un, vn)?, (0..n).map(Some).collect()),
        Negatives::Sampled(idx) => {
            let keys = tape.gather_rows(vn, idx.clone())?;
            let mut slot = vec![None; n];
            for (k, &r) in idx.iter().enumerate() {
                slot[r] = Some(k);
            }
            (tape.matmul_nt(un, keys)?, slot)
        }
    };
    tape.nce_rows(pos, neg, Arc::new(exclude), 1.0 / tau)
}

/// Mean InfoNCE over rows, full-batch negatives.
pub fn info_nce(tape: &mut Tape, u: Var, v: Var, tau: f64) -> Result<Var> {
    let rows = info_nce_rows(tape, u, v, tau, &Negatives::Full)?;
    Ok(tape.mean(rows))
}

/// Value-only InfoNCE for plain matrices.
pub fn info_nce_value(u: &Array2<f64>, v: &Array2<f64>, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (u, v) = (tape.constant(u.clone()), tape.constant(v.clone()));
    let loss = info_nce(&mut tape, u, v, tau)?;
    Ok(tape.scalar(loss))
}
