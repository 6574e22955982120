//! Dense reverse-mode tape.
//!
//! Every primitive evaluates eagerly and appends a node. Nodes are stored in
//! recording order, which is a topological order, so `backward` is a single
//! reverse sweep. Scalars are `1×1` matrices and vectors are `n×1`.
//!
//! Gradients only flow into nodes that transitively depend on a leaf created
//! with `requires_grad`; constant sub-graphs cost nothing on the way back.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::graphcore::{sparse::spmm, SparsePattern};
use crate::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Affine(usize, f64),
    ScaleBy(usize, usize),
    BroadcastRows(usize),
    ConcatCols(usize, usize),
    Relu(usize),
    ClampMin0(usize),
    PRelu(usize, usize),
    Sigmoid(usize),
    Dropout(usize, Arc<Array2<f64>>),
    RowNormalize(usize, Array1<f64>),
    RowDot(usize, usize),
    GatherRows(usize, Arc<Vec<usize>>),
    Sum(usize),
    SumSquares(usize),
    Div(usize, usize),
    NceRows { pos: usize, neg: usize, exclude: Arc<Vec<Option<usize>>>, inv_tau: f64 },
    Spmm { pattern: Arc<SparsePattern>, vals: usize, x: usize },
    SymNormalize { pattern: Arc<SparsePattern>, a: usize, degrees: Vec<f64>, frozen: bool },
    Bilinear { pattern: Arc<SparsePattern>, vals: usize, z: usize },
    PolyCombine { w: usize, terms: Vec<usize> },
    IndexAdd { base: usize, src: usize, map: Arc<Vec<(usize, usize)>> },
    ColStandardize { x: usize, inv_std: Array1<f64> },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Row norms below this are treated as this value in [`Tape::row_normalize`].
pub const NORM_EPS: f64 = 1e-12;
/// Variance floor of [`Tape::col_standardize`].
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value, grad: None, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op: Op::Leaf, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient, if `backward` reached this node.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Clear gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    // ---- primitives -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_nt", sa, sb));
        }
        let v = self.value(a).dot(&self.value(b).t());
        Ok(self.push(v, Op::MatMulNt(a.0, b.0), &[a.0, b.0]))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    /// `x + 1·b` for a `1×C` row `b`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb != (1, sx.1) {
            return Err(shape_err("add_row", sx, sb));
        }
        let v = self.value(x) + self.value(b);
        Ok(self.push(v, Op::AddRow(x.0, b.0), &[x.0, b.0]))
    }

    /// Scale row `i` of `x` by `m[i]` for an `N×1` column `m`.
    pub fn mul_col(&mut self, x: Var, m: Var) -> Result<Var> {
        let (sx, sm) = (self.shape(x), self.shape(m));
        if sm != (sx.0, 1) {
            return Err(shape_err("mul_col", sx, sm));
        }
        let v = self.value(x) * self.value(m);
        Ok(self.push(v, Op::MulCol(x.0, m.0), &[x.0, m.0]))
    }

    /// `a·x + b`, elementwise.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let v = self.value(x).mapv(|t| a * t + b);
        self.push(v, Op::Affine(x.0, a), &[x.0])
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Var {
        self.affine(x, a, 0.0)
    }

    /// `s · x` for a `1×1` tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(shape_err("scale_by", self.shape(x), self.shape(s)));
        }
        let v = self.value(x) * self.scalar(s);
        Ok(self.push(v, Op::ScaleBy(x.0, s.0), &[x.0, s.0]))
    }

    /// Repeat a `1×C` row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.0 != 1 {
            return Err(shape_err("broadcast_rows", sx, (1, sx.1)));
        }
        let v = self.value(x).broadcast((n, sx.1)).expect("row broadcast").to_owned();
        Ok(self.push(v, Op::BroadcastRows(x.0), &[x.0]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(shape_err("concat_cols", sa, sb));
        }
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts checked");
        Ok(self.push(v, Op::ConcatCols(a.0, b.0), &[a.0, b.0]))
    }

    /// `max(x, 0)`; subgradient 0 at 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|t| t.max(0.0));
        self.push(v, Op::Relu(x.0), &[x.0])
    }

    /// `max(x, 0)` with the one-sided derivative from above at 0, so entries
    /// sitting exactly on the boundary can still move inward.
    pub fn clamp_min0(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|t| t.max(0.0));
        self.push(v, Op::ClampMin0(x.0), &[x.0])
    }

    /// `x` for `x > 0`, `slope · x` otherwise; `slope` is `1×1`.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.shape(slope) != (1, 1) {
            return Err(shape_err("prelu", self.shape(x), self.shape(slope)));
        }
        let a = self.scalar(slope);
        let v = self.value(x).mapv(|t| if t > 0.0 { t } else { a * t });
        Ok(self.push(v, Op::PRelu(x.0, slope.0), &[x.0, slope.0]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x.0), &[x.0])
    }

    /// Multiply by a precomputed mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, mask: Arc<Array2<f64>>) -> Result<Var> {
        if self.shape(x) != mask.dim() {
            return Err(shape_err("dropout", self.shape(x), mask.dim()));
        }
        let v = self.value(x) * &*mask;
        Ok(self.push(v, Op::Dropout(x.0, mask), &[x.0]))
    }

    /// Scale each row to unit L2 norm.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let norms = xv.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_EPS));
        let mut v = xv.clone();
        for (mut row, &n) in v.rows_mut().into_iter().zip(&norms) {
            row /= n;
        }
        self.push(v, Op::RowNormalize(x.0, norms), &[x.0])
    }

    /// Row-wise inner products, `N×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let d: Vec<f64> = av.rows().into_iter().zip(bv.rows()).map(|(r, q)| r.dot(&q)).collect();
        let v = Array2::from_shape_vec((d.len(), 1), d).expect("column");
        Ok(self.push(v, Op::RowDot(a.0, b.0), &[a.0, b.0]))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let n = self.shape(x).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather_rows: index {bad} >= {n}")));
        }
        let v = self.value(x).select(Axis(0), &idx);
        Ok(self.push(v, Op::GatherRows(x.0, idx), &[x.0]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(v, Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// `Σ x²`, i.e. `Tr(XᵀX)`.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(x).iter().map(|t| t * t).sum());
        self.push(v, Op::SumSquares(x.0), &[x.0])
    }

    /// Quotient of two scalars.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != (1, 1) || self.shape(b) != (1, 1) {
            return Err(shape_err("div", self.shape(a), self.shape(b)));
        }
        let v = Array2::from_elem((1, 1), self.scalar(a) / self.scalar(b));
        Ok(self.push(v, Op::Div(a.0, b.0), &[a.0, b.0]))
    }

    /// Per-row contrastive cross-entropy.
    ///
    /// Row `v` has logits `pos[v]` (the positive) and `neg[v, k]` for every
    /// `k` except `exclude[v]`, all multiplied by `inv_tau`. Output is `N×1`:
    /// `logsumexp(logits) − pos[v]·inv_tau`.
    pub fn nce_rows(
        &mut self,
        pos: Var,
        neg: Var,
        exclude: Arc<Vec<Option<usize>>>,
        inv_tau: f64,
    ) -> Result<Var> {
        let (sp, sn) = (self.shape(pos), self.shape(neg));
        if sp != (sn.0, 1) || exclude.len() != sn.0 {
            return Err(shape_err("nce_rows", sp, sn));
        }
        let (pv, nv) = (self.value(pos), self.value(neg));
        let out: Vec<f64> = (0..sn.0)
            .map(|r| {
                let (lse, _) = row_logsumexp(pv[[r, 0]], nv.row(r), exclude[r], inv_tau);
                lse - pv[[r, 0]] * inv_tau
            })
            .collect();
        let v = Array2::from_shape_vec((sn.0, 1), out).expect("column");
        Ok(self.push(v, Op::NceRows { pos: pos.0, neg: neg.0, exclude, inv_tau }, &[pos.0, neg.0]))
    }

    /// Sparse `S · x` where `S` has the given pattern and `nnz×1` values.
    pub fn spmm(&mut self, pattern: Arc<SparsePattern>, vals: Var, x: Var) -> Result<Var> {
        if self.shape(vals) != (pattern.nnz(), 1) || self.shape(x).0 != pattern.n() {
            return Err(shape_err("spmm", self.shape(vals), self.shape(x)));
        }
        let v = spmm(&pattern, self.value(vals).as_slice().expect("contiguous"), &self.value(x).view());
        Ok(self.push(v, Op::Spmm { pattern, vals: vals.0, x: x.0 }, &[vals.0, x.0]))
    }

    /// `D^{-1/2} A D^{-1/2}` on a pattern, `A` given as `nnz×1` values.
    ///
    /// Degrees are the row sums of `A` and are differentiated through unless
    /// `fixed_degrees` is supplied.
    pub fn sym_normalize(
        &mut self,
        pattern: Arc<SparsePattern>,
        a: Var,
        fixed_degrees: Option<&[f64]>,
    ) -> Result<Var> {
        if self.shape(a) != (pattern.nnz(), 1) {
            return Err(shape_err("sym_normalize", self.shape(a), (pattern.nnz(), 1)));
        }
        let av = self.value(a);
        let degrees: Vec<f64> = match fixed_degrees {
            Some(d) => d.to_vec(),
            None => (0..pattern.n()).map(|r| pattern.row_range(r).map(|p| av[[p, 0]]).sum()).collect(),
        };
        if let Some(v) = degrees.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::ZeroDegree(v));
        }
        let inv: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
        let out: Vec<f64> = pattern.entries().map(|(p, r, c)| av[[p, 0]] * inv[r] * inv[c]).collect();
        let v = Array2::from_shape_vec((out.len(), 1), out).expect("column");
        let frozen = fixed_degrees.is_some();
        Ok(self.push(v, Op::SymNormalize { pattern, a: a.0, degrees, frozen }, &[a.0]))
    }

    /// `Σ_p vals[p] · ⟨z[row p], z[col p]⟩`, i.e. `Tr(Zᵀ S Z)` edge by edge.
    pub fn bilinear(&mut self, pattern: Arc<SparsePattern>, vals: Var, z: Var) -> Result<Var> {
        if self.shape(vals) != (pattern.nnz(), 1) || self.shape(z).0 != pattern.n() {
            return Err(shape_err("bilinear", self.shape(vals), self.shape(z)));
        }
        let (vv, zv) = (self.value(vals), self.value(z));
        let total: f64 = pattern.entries().map(|(p, r, c)| vv[[p, 0]] * zv.row(r).dot(&zv.row(c))).sum();
        let v = Array2::from_elem((1, 1), total);
        Ok(self.push(v, Op::Bilinear { pattern, vals: vals.0, z: z.0 }, &[vals.0, z.0]))
    }

    /// `Σ_k w[k] · terms[k]` with `w` a `1×(K+1)` row.
    pub fn poly_combine(&mut self, w: Var, terms: &[Var]) -> Result<Var> {
        if self.shape(w) != (1, terms.len()) || terms.is_empty() {
            return Err(shape_err("poly_combine", self.shape(w), (1, terms.len())));
        }
        let shape = self.shape(terms[0]);
        for &t in terms {
            if self.shape(t) != shape {
                return Err(shape_err("poly_combine", shape, self.shape(t)));
            }
        }
        let wv = self.value(w);
        let mut v = Array2::zeros(shape);
        for (k, &t) in terms.iter().enumerate() {
            v.scaled_add(wv[[0, k]], self.value(t));
        }
        let inputs: Vec<usize> = std::iter::once(w.0).chain(terms.iter().map(|t| t.0)).collect();
        Ok(self.push(v, Op::PolyCombine { w: w.0, terms: terms.iter().map(|t| t.0).collect() }, &inputs))
    }

    /// `out = base; out[pos] += src[k]` for each `(pos, k)` in `map`.
    pub fn index_add(&mut self, base: Var, src: Var, map: Arc<Vec<(usize, usize)>>) -> Result<Var> {
        let (sb, ss) = (self.shape(base), self.shape(src));
        if sb.1 != 1 || ss.1 != 1 || map.iter().any(|&(p, k)| p >= sb.0 || k >= ss.0) {
            return Err(shape_err("index_add", sb, ss));
        }
        let mut v = self.value(base).clone();
        let sv = self.value(src);
        for &(p, k) in map.iter() {
            v[[p, 0]] += sv[[k, 0]];
        }
        Ok(self.push(v, Op::IndexAdd { base: base.0, src: src.0, map }, &[base.0, src.0]))
    }

    /// Column-wise standardisation with batch statistics (no affine part).
    pub fn col_standardize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mean = xv.mean_axis(Axis(0)).expect("non-empty");
        let centered = xv - &mean;
        let var = centered.mapv(|t| t * t).mean_axis(Axis(0)).expect("non-empty");
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let v = centered * &inv_std;
        self.push(v, Op::ColStandardize { x: x.0, inv_std }, &[x.0])
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulate `∂loss/∂t` into every node that needs a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", self.shape(loss))));
        }
        if self.backward_done {
            return Err(Error::InvalidArgument("backward already ran; call reset_grads first".into()));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contribs = self.node_backward(i, &g);
            self.nodes[i].grad = Some(g);
            for (j, d) in contribs {
                self.accumulate(j, d);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, j: usize, d: Array2<f64>) {
        let node = &mut self.nodes[j];
        if !node.needs_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => *g += &d,
            None => node.grad = Some(d),
        }
    }

    fn needs(&self, j: usize) -> bool {
        self.nodes[j].needs_grad
    }

    fn val(&self, j: usize) -> &Array2<f64> {
        &self.nodes[j].value
    }

    fn node_backward(&self, i: usize, g: &Array2<f64>) -> Vec<(usize, Array2<f64>)> {
        let y = &self.nodes[i].value;
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.dot(&self.val(*b).t())));
                }
                if self.needs(*b) {
                    out.push((*b, self.val(*a).t().dot(g)));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.dot(self.val(*b))));
                }
                if self.needs(*b) {
                    out.push((*b, g.t().dot(self.val(*a))));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, -g));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g * self.val(*b)));
                }
                if self.needs(*b) {
                    out.push((*b, g * self.val(*a)));
                }
            }
            Op::AddRow(x, b) => {
                out.push((*x, g.clone()));
                if self.needs(*b) {
                    out.push((*b, g.sum_axis(Axis(0)).insert_axis(Axis(0))));
                }
            }
            Op::MulCol(x, m) => {
                if self.needs(*x) {
                    out.push((*x, g * self.val(*m)));
                }
                if self.needs(*m) {
                    out.push((*m, (g * self.val(*x)).sum_axis(Axis(1)).insert_axis(Axis(1))));
                }
            }
            Op::Affine(x, a) => out.push((*x, g * *a)),
            Op::ScaleBy(x, s) => {
                if self.needs(*x) {
                    out.push((*x, g * self.val(*s)[[0, 0]]));
                }
                if self.needs(*s) {
                    let d = (g * self.val(*x)).sum();
                    out.push((*s, Array2::from_elem((1, 1), d)));
                }
            }
            Op::BroadcastRows(x) => out.push((*x, g.sum_axis(Axis(0)).insert_axis(Axis(0)))),
            Op::ConcatCols(a, b) => {
                let ca = self.val(*a).ncols();
                out.push((*a, g.slice(s![.., ..ca]).to_owned()));
                out.push((*b, g.slice(s![.., ca..]).to_owned()));
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.val(*x)).for_each(|d, &t| {
                    if t <= 0.0 {
                        *d = 0.0
                    }
                });
                out.push((*x, d));
            }
            Op::ClampMin0(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.val(*x)).for_each(|d, &t| {
                    if t < 0.0 {
                        *d = 0.0
                    }
                });
                out.push((*x, d));
            }
            Op::PRelu(x, slope) => {
                let a = self.val(*slope)[[0, 0]];
                let xv = self.val(*x);
                if self.needs(*x) {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(xv).for_each(|d, &t| {
                        *d *= if t > 0.0 {
                            1.0
                        } else if t < 0.0 {
                            a
                        } else {
                            0.0
                        }
                    });
                    out.push((*x, d));
                }
                if self.needs(*slope) {
                    let mut acc = 0.0;
                    Zip::from(g).and(xv).for_each(|&gg, &t| {
                        if t < 0.0 {
                            acc += gg * t
                        }
                    });
                    out.push((*slope, Array2::from_elem((1, 1), acc)));
                }
            }
            Op::Sigmoid(x) => out.push((*x, g * &y.mapv(|s| s * (1.0 - s)))),
            Op::Dropout(x, mask) => out.push((*x, g * &**mask)),
            Op::RowNormalize(x, norms) => {
                let mut d = g.clone();
                for ((mut dr, yr), &n) in d.rows_mut().into_iter().zip(y.rows()).zip(norms) {
                    let proj = yr.dot(&dr);
                    dr.scaled_add(-proj, &yr);
                    dr /= n;
                }
                // Rows clamped to NORM_EPS have y = x / eps; the projection
                // term is negligible there.
                out.push((*x, d));
            }
            Op::RowDot(a, b) => {
                if self.needs(*a) {
                    out.push((*a, self.val(*b) * g));
                }
                if self.needs(*b) {
                    out.push((*b, self.val(*a) * g));
                }
            }
            Op::GatherRows(x, idx) => {
                let mut d = Array2::zeros(self.val(*x).raw_dim());
                for (k, &r) in idx.iter().enumerate() {
                    let mut row = d.row_mut(r);
                    row += &g.row(k);
                }
                out.push((*x, d));
            }
            Op::Sum(x) => out.push((*x, Array2::from_elem(self.val(*x).raw_dim(), g[[0, 0]]))),
            Op::SumSquares(x) => out.push((*x, self.val(*x) * (2.0 * g[[0, 0]]))),
            Op::Div(a, b) => {
                let (av, bv) = (self.val(*a)[[0, 0]], self.val(*b)[[0, 0]]);
                out.push((*a, Array2::from_elem((1, 1), g[[0, 0]] / bv)));
                out.push((*b, Array2::from_elem((1, 1), -g[[0, 0]] * av / (bv * bv))));
            }
            Op::NceRows { pos, neg, exclude, inv_tau } => {
                let (pv, nv) = (self.val(*pos), self.val(*neg));
                let mut dpos = Array2::zeros(pv.raw_dim());
                let mut dneg = Array2::zeros(nv.raw_dim());
                for r in 0..nv.nrows() {
                    let gr = g[[r, 0]];
                    if gr == 0.0 {
                        continue;
                    }
                    let (lse, _) = row_logsumexp(pv[[r, 0]], nv.row(r), exclude[r], *inv_tau);
                    let p_pos = (pv[[r, 0]] * inv_tau - lse).exp();
                    dpos[[r, 0]] = gr * (p_pos - 1.0) * inv_tau;
                    let mut drow = dneg.row_mut(r);
                    for (k, &s) in nv.row(r).iter().enumerate() {
                        if exclude[r] != Some(k) {
                            drow[k] = gr * (s * inv_tau - lse).exp() * inv_tau;
                        }
                    }
                }
                out.push((*pos, dpos));
                out.push((*neg, dneg));
            }
            Op::Spmm { pattern, vals, x } => {
                let (vv, xv) = (self.val(*vals), self.val(*x));
                if self.needs(*x) {
                    let mut dx = Array2::zeros(xv.raw_dim());
                    for (p, r, c) in pattern.entries() {
                        let v = vv[[p, 0]];
                        if v != 0.0 {
                            let mut row = dx.row_mut(c);
                            row.scaled_add(v, &g.row(r));
                        }
                    }
                    out.push((*x, dx));
                }
                if self.needs(*vals) {
                    let d: Vec<f64> = pattern.entries().map(|(_, r, c)| g.row(r).dot(&xv.row(c))).collect();
                    out.push((*vals, Array2::from_shape_vec((d.len(), 1), d).expect("column")));
                }
            }
            Op::SymNormalize { pattern, a, degrees, frozen } => {
                let inv: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
                let mut d: Vec<f64> =
                    pattern.entries().map(|(p, r, c)| g[[p, 0]] * inv[r] * inv[c]).collect();
                if !frozen {
                    // ∂out_p/∂d_i = -out_p / (2 d_i) for i in {row p, col p}
                    let mut t = vec![0.0; pattern.n()];
                    for (p, r, c) in pattern.entries() {
                        let h = g[[p, 0]] * y[[p, 0]];
                        t[r] -= h / (2.0 * degrees[r]);
                        t[c] -= h / (2.0 * degrees[c]);
                    }
                    for (p, r, _) in pattern.entries() {
                        d[p] += t[r];
                    }
                }
                out.push((*a, Array2::from_shape_vec((d.len(), 1), d).expect("column")));
            }
            Op::Bilinear { pattern, vals, z } => {
                let (vv, zv) = (self.val(*vals), self.val(*z));
                let gs = g[[0, 0]];
                if self.needs(*vals) {
                    let d: Vec<f64> =
                        pattern.entries().map(|(_, r, c)| gs * zv.row(r).dot(&zv.row(c))).collect();
                    out.push((*vals, Array2::from_shape_vec((d.len(), 1), d).expect("column")));
                }
                if self.needs(*z) {
                    let mut dz = Array2::zeros(zv.raw_dim());
                    for (p, r, c) in pattern.entries() {
                        let v = gs * vv[[p, 0]];
                        if v != 0.0 {
                            dz.row_mut(r).scaled_add(v, &zv.row(c));
                            dz.row_mut(c).scaled_add(v, &zv.row(r));
                        }
                    }
                    out.push((*z, dz));
                }
            }
            Op::PolyCombine { w, terms } => {
                let wv = self.val(*w);
                if self.needs(*w) {
                    let d: Vec<f64> = terms.iter().map(|&t| (g * self.val(t)).sum()).collect();
                    out.push((*w, Array2::from_shape_vec((1, d.len()), d).expect("row")));
                }
                for (k, &t) in terms.iter().enumerate() {
                    if self.needs(t) {
                        out.push((t, g * wv[[0, k]]));
                    }
                }
            }
            Op::IndexAdd { base, src, map } => {
                out.push((*base, g.clone()));
                if self.needs(*src) {
                    let mut d = Array2::zeros(self.val(*src).raw_dim());
                    for &(p, k) in map.iter() {
                        d[[k, 0]] += g[[p, 0]];
                    }
                    out.push((*src, d));
                }
            }
            Op::ColStandardize { x, inv_std } => {
                let n = y.nrows() as f64;
                let g_mean = g.sum_axis(Axis(0)) / n;
                let gy_mean = (g * y).sum_axis(Axis(0)) / n;
                let d = (g - &g_mean - &(y * &gy_mean)) * inv_std;
                out.push((*x, d));
            }
        }
        out
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn row_logsumexp(
    pos: f64,
    neg: ndarray::ArrayView1<f64>,
    exclude: Option<usize>,
    inv_tau: f64,
) -> (f64, f64) {
    let mut max = pos * inv_tau;
    for (k, &s) in neg.iter().enumerate() {
        if exclude != Some(k) {
            max = max.max(s * inv_tau);
        }
    }
    let mut acc = (pos * inv_tau - max).exp();
    for (k, &s) in neg.iter().enumerate() {
        if exclude != Some(k) {
            acc += (s * inv_tau - max).exp();
        }
    }
    (max + acc.ln(), max)
}
