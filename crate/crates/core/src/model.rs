//! Dual-channel encoder with a node-wise reliability gate.
//!
//! Both Chebyshev channels feed the same projector `f_θ`. The gate MLP reads
//! `[z_L ‖ z_H]` per node and emits `m_v ∈ (0, 1)`, the weight on the
//! low-pass embedding in the fused output `z_v = m_v z_L + (1 − m_v) z_H`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cheb::{self, FilterBank};
use crate::diffnet::{Tape, Var};
use crate::graphcore::{rescaled_laplacian, Graph, SparseMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Prelu,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    /// Chebyshev order `K`.
    pub k: usize,
    /// Gate hidden width; defaults to `max(out_dim / 2, 16)`.
    pub gate_hidden: Option<usize>,
    pub batch_norm: bool,
    /// Dropout on the filtered inputs in training mode.
    pub dropout: f64,
    pub activation: Activation,
    /// Replace the node-wise gate by one learnable scalar shared by all nodes.
    pub global_gate: bool,
}

impl ModelConfig {
    pub fn new(in_dim: usize) -> Self {
        Self {
            in_dim,
            hidden_dim: 64,
            out_dim: 32,
            k: 5,
            gate_hidden: None,
            batch_norm: false,
            dropout: 0.0,
            activation: Activation::Prelu,
            global_gate: false,
        }
    }

    pub fn gate_width(&self) -> usize {
        self.gate_hidden.unwrap_or((self.out_dim / 2).max(16))
    }
}

/// Named parameter slots of [`AspectModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    DeltaL,
    DeltaH,
    ProjW1,
    ProjB1,
    ProjSlope,
    ProjW2,
    ProjB2,
    GateW1,
    GateB1,
    GateSlope,
    GateW2,
    GateB2,
    GlobalGate,
}

/// Optimiser group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Filters,
    Encoder,
    Gate,
}

impl Param {
    pub const ALL: [Param; 13] = [
        Param::DeltaL,
        Param::DeltaH,
        Param::ProjW1,
        Param::ProjB1,
        Param::ProjSlope,
        Param::ProjW2,
        Param::ProjB2,
        Param::GateW1,
        Param::GateB1,
        Param::GateSlope,
        Param::GateW2,
        Param::GateB2,
        Param::GlobalGate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::DeltaL => "filter.delta_low",
            Param::DeltaH => "filter.delta_high",
            Param::ProjW1 => "projector.w1",
            Param::ProjB1 => "projector.b1",
            Param::ProjSlope => "projector.prelu",
            Param::ProjW2 => "projector.w2",
            Param::ProjB2 => "projector.b2",
            Param::GateW1 => "gate.w1",
            Param::GateB1 => "gate.b1",
            Param::GateSlope => "gate.prelu",
            Param::GateW2 => "gate.w2",
            Param::GateB2 => "gate.b2",
            Param::GlobalGate => "gate.global_logit",
        }
    }

    pub fn group(self) -> ParamGroup {
        match self {
            Param::DeltaL | Param::DeltaH => ParamGroup::Filters,
            Param::ProjW1 | Param::ProjB1 | Param::ProjSlope | Param::ProjW2 | Param::ProjB2 => {
                ParamGroup::Encoder
            }
            _ => ParamGroup::Gate,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Dropout masks for the two filtered inputs, entries `0` or `1/(1-p)`.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub low: Arc<Array2<f64>>,
    pub high: Arc<Array2<f64>>,
}

impl DropoutMasks {
    pub fn sample(rows: usize, cols: usize, p: f64, rng: &mut impl Rng) -> Self {
        let keep = 1.0 - p;
        let mut draw = || {
            Array2::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        };
        let low = Arc::new(draw());
        let high = Arc::new(draw());
        Self { low, high }
    }
}

/// Channel embeddings, gate and fused embedding as plain matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub z_l: Array2<f64>,
    pub z_h: Array2<f64>,
    pub m: Array1<f64>,
    pub z: Array2<f64>,
}

/// Tape handles for one encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncodeVars {
    pub z_l: Var,
    pub z_h: Var,
    /// `N×1`.
    pub m: Var,
    pub z: Var,
}

/// Parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, p: Param) -> Var {
        self.vars[p.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AspectModel {
    pub config: ModelConfig,
    params: Vec<Array2<f64>>,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row")
}

impl AspectModel {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.k == 0 || config.in_dim == 0 || config.hidden_dim == 0 || config.out_dim == 0 {
            return Err(Error::InvalidArgument(format!("degenerate model dimensions: {config:?}")));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must lie in [0, 1), got {}", config.dropout)));
        }
        let bank = FilterBank::ramp(config.k);
        let (f, h, d, g) = (config.in_dim, config.hidden_dim, config.out_dim, config.gate_width());
        let mut params = vec![Array2::zeros((0, 0)); Param::ALL.len()];
        params[Param::DeltaL.index()] = row(&bank.delta_l);
        params[Param::DeltaH.index()] = row(&bank.delta_h);
        params[Param::ProjW1.index()] = glorot(f, h, rng);
        params[Param::ProjB1.index()] = Array2::zeros((1, h));
        params[Param::ProjSlope.index()] = Array2::from_elem((1, 1), 0.25);
        params[Param::ProjW2.index()] = glorot(h, d, rng);
        params[Param::ProjB2.index()] = Array2::zeros((1, d));
        params[Param::GateW1.index()] = glorot(2 * d, g, rng);
        params[Param::GateB1.index()] = Array2::zeros((1, g));
        params[Param::GateSlope.index()] = Array2::from_elem((1, 1), 0.25);
        params[Param::GateW2.index()] = glorot(g, 1, rng);
        params[Param::GateB2.index()] = Array2::zeros((1, 1));
        params[Param::GlobalGate.index()] = Array2::zeros((1, 1));
        Ok(Self { config, params })
    }

    pub fn param(&self, p: Param) -> &Array2<f64> {
        &self.params[p.index()]
    }

    pub fn param_mut(&mut self, p: Param) -> &mut Array2<f64> {
        &mut self.params[p.index()]
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.params.iter_mut().collect()
    }

    pub fn filter_bank(&self) -> FilterBank {
        FilterBank {
            k: self.config.k,
            delta_l: self.param(Param::DeltaL).iter().copied().collect(),
            delta_h: self.param(Param::DeltaH).iter().copied().collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound { vars: self.params.iter().map(|p| tape.leaf(p.clone(), trainable)).collect() }
    }

    /// Chebyshev coefficient rows `(w_L, w_H)`, each `1×(K+1)`.
    pub fn filter_weights(&self, tape: &mut Tape, b: &Bound) -> Result<(Var, Var)> {
        let k = self.config.k;
        let coeff = cheb::coeff_matrix(&cheb::ascending_nodes(k));
        let prefix_h = Array2::from_shape_fn((k + 1, k + 1), |(j, i)| if j <= i { 1.0 } else { 0.0 });
        let prefix_l = Array2::from_shape_fn((k + 1, k + 1), |(j, i)| match (j, i) {
            (0, _) => 1.0,
            (j, i) if j <= i => -1.0,
            _ => 0.0,
        });
        let to_w_h = tape.constant(prefix_h.dot(&coeff));
        let to_w_l = tape.constant(prefix_l.dot(&coeff));
        let dl = tape.relu(b.get(Param::DeltaL));
        let dh = tape.relu(b.get(Param::DeltaH));
        Ok((tape.matmul(dl, to_w_l)?, tape.matmul(dh, to_w_h)?))
    }

    fn activate(&self, tape: &mut Tape, x: Var, slope: Var) -> Result<Var> {
        match self.config.activation {
            Activation::Prelu => tape.prelu(x, slope),
            Activation::Relu => Ok(tape.relu(x)),
        }
    }

    /// Shared projector `f_θ`.
    pub fn project(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, b.get(Param::ProjW1))?;
        let mut h = tape.add_row(h, b.get(Param::ProjB1))?;
        if self.config.batch_norm {
            h = tape.col_standardize(h);
        }
        let h = self.activate(tape, h, b.get(Param::ProjSlope))?;
        let out = tape.matmul(h, b.get(Param::ProjW2))?;
        tape.add_row(out, b.get(Param::ProjB2))
    }

    /// Gate values `m` (`N×1`).
    pub fn gate(&self, tape: &mut Tape, b: &Bound, z_l: Var, z_h: Var) -> Result<Var> {
        let n = tape.shape(z_l).0;
        if self.config.global_gate {
            let s = tape.sigmoid(b.get(Param::GlobalGate));
            return tape.broadcast_rows(s, n);
        }
        let cat = tape.concat_cols(z_l, z_h)?;
        let h = tape.matmul(cat, b.get(Param::GateW1))?;
        let h = tape.add_row(h, b.get(Param::GateB1))?;
        let h = self.activate(tape, h, b.get(Param::GateSlope))?;
        let o = tape.matmul(h, b.get(Param::GateW2))?;
        let o = tape.add_row(o, b.get(Param::GateB2))?;
        Ok(tape.sigmoid(o))
    }

    /// `m ∘ z_L + (1 − m) ∘ z_H`.
    pub fn fuse_vars(tape: &mut Tape, z_l: Var, z_h: Var, m: Var) -> Result<Var> {
        let a = tape.mul_col(z_l, m)?;
        let one_minus = tape.affine(m, -1.0, 1.0);
        let b = tape.mul_col(z_h, one_minus)?;
        tape.add(a, b)
    }

    /// Encoder pass from the Chebyshev basis `T_0(L̃)X, ..., T_K(L̃)X`.
    pub fn encode_basis(
        &self,
        tape: &mut Tape,
        b: &Bound,
        basis: &[Var],
        masks: Option<&DropoutMasks>,
    ) -> Result<EncodeVars> {
        if basis.len() != self.config.k + 1 {
            return Err(Error::Shape(format!("expected {} basis terms, got {}", self.config.k + 1, basis.len())));
        }
        let cols = tape.shape(basis[0]).1;
        if cols != self.config.in_dim {
            return Err(Error::Shape(format!("features have {cols} columns, model expects {}", self.config.in_dim)));
        }
        let (w_l, w_h) = self.filter_weights(tape, b)?;
        let mut x_l = tape.poly_combine(w_l, basis)?;
        let mut x_h = tape.poly_combine(w_h, basis)?;
        if let Some(m) = masks {
            x_l = tape.dropout(x_l, m.low.clone())?;
            x_h = tape.dropout(x_h, m.high.clone())?;
        }
        let z_l = self.project(tape, b, x_l)?;
        let z_h = self.project(tape, b, x_h)?;
        let m = self.gate(tape, b, z_l, z_h)?;
        let z = Self::fuse_vars(tape, z_l, z_h, m)?;
        Ok(EncodeVars { z_l, z_h, m, z })
    }

    /// Constant basis terms on `tape` for a fixed `L̃` and `X`.
    pub fn constant_basis(&self, tape: &mut Tape, l_tilde: &SparseMatrix, x: &Array2<f64>) -> Vec<Var> {
        cheb::cheb_basis(l_tilde, &x.view(), self.config.k)
            .into_iter()
            .map(|t| tape.constant(t))
            .collect()
    }

    /// Evaluate the encoder on `(L̃, X)`. `masks = None` is evaluation mode.
    pub fn encode_rescaled(
        &self,
        l_tilde: &SparseMatrix,
        x: &Array2<f64>,
        masks: Option<&DropoutMasks>,
    ) -> Result<EmbeddingSet> {
        if l_tilde.n() != x.nrows() {
            return Err(Error::Shape(format!("L̃ is {0}x{0}, X has {1} rows", l_tilde.n(), x.nrows())));
        }
        if x.ncols() != self.config.in_dim {
            return Err(Error::Shape(format!("features have {} columns, model expects {}", x.ncols(), self.config.in_dim)));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let basis = self.constant_basis(&mut tape, l_tilde, x);
        let e = self.encode_basis(&mut tape, &b, &basis, masks)?;
        Ok(EmbeddingSet {
            z_l: tape.value(e.z_l).clone(),
            z_h: tape.value(e.z_h).clone(),
            m: tape.value(e.m).index_axis(Axis(1), 0).to_owned(),
            z: tape.value(e.z).clone(),
        })
    }

    /// Evaluation-mode encoding of a graph (`λ_max = 2`).
    pub fn encode(&self, g: &Graph, x: &Array2<f64>) -> Result<EmbeddingSet> {
        self.encode_rescaled(&rescaled_laplacian(g, 2.0)?, x, None)
    }

    // ---- checkpoints -------------------------------------------------------

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = Param::ALL
            .iter()
            .map(|&p| {
                let a = self.param(p);
                let t = StoredTensor { shape: [a.nrows(), a.ncols()], values: a.iter().copied().collect() };
                (p.name().to_string(), t)
            })
            .collect();
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, config: self.config.clone(), params }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let mut params = Vec::with_capacity(Param::ALL.len());
        for p in Param::ALL {
            let t = ck
                .params
                .get(p.name())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name())))?;
            let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.values.clone())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.name())))?;
            params.push(a);
        }
        let model = Self { config: ck.config, params };
        let fresh = Self::new(model.config.clone(), &mut crate::seed::rng(0))?;
        for p in Param::ALL {
            if fresh.param(p).dim() != model.param(p).dim() {
                return Err(Error::Checkpoint(format!("{} has the wrong shape", p.name())));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "aspect-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Row-major tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: BTreeMap<String, StoredTensor>,
}

/// Row-wise convex combination `m_v z_L,v + (1 − m_v) z_H,v`.
pub fn fuse(z_l: &Array2<f64>, z_h: &Array2<f64>, m: &[f64]) -> Result<Array2<f64>> {
    if z_l.dim() != z_h.dim() || m.len() != z_l.nrows() {
        return Err(Error::Shape(format!("fuse: {:?}, {:?}, {} gates", z_l.dim(), z_h.dim(), m.len())));
    }
    if let Some(bad) = m.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("gate value {bad} outside [0, 1]")));
    }
    let mut out = z_l.clone();
    for ((mut o, h), &mv) in out.rows_mut().into_iter().zip(z_h.rows()).zip(m) {
        let l = o.to_owned();
        ndarray::Zip::from(&mut o).and(&l).and(&h).for_each(|o, &l, &h| *o = mv * l + (1.0 - mv) * h);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::Graph;
    use crate::seed;

    fn toy() -> (Graph, Array2<f64>) {
        let g = Graph::from_pairs(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)], true).unwrap();
        let x = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        (g, x)
    }

    fn model(global: bool) -> AspectModel {
        let mut cfg = ModelConfig::new(4);
        cfg.hidden_dim = 8;
        cfg.out_dim = 6;
        cfg.k = 3;
        cfg.global_gate = global;
        AspectModel::new(cfg, &mut seed::rng(1)).unwrap()
    }

    #[test]
    fn fuse_examples() {
        let zl = Array2::from_elem((2, 3), 1.0);
        let zh = Array2::from_elem((2, 3), -1.0);
        assert_eq!(fuse(&zl, &zh, &[1.0, 1.0]).unwrap(), zl);
        assert_eq!(fuse(&zl, &zh, &[0.0, 0.0]).unwrap(), zh);
        assert_eq!(fuse(&zl, &zh, &[0.5, 0.5]).unwrap(), Array2::<f64>::zeros((2, 3)));
        assert!(fuse(&zl, &zh, &[1.5, 0.0]).is_err());
    }

    #[test]
    fn saturated_gate_selects_a_channel() {
        let (g, x) = toy();
        let mut m = model(false);
        *m.param_mut(Param::GateB2) = Array2::from_elem((1, 1), 1e4);
        let e = m.encode(&g, &x).unwrap();
        assert_eq!(e.z, e.z_l);
        *m.param_mut(Param::GateB2) = Array2::from_elem((1, 1), -1e4);
        let e = m.encode(&g, &x).unwrap();
        assert_eq!(e.z, e.z_h);
    }

    #[test]
    fn gate_in_open_interval_and_fusion_exact() {
        let (g, x) = toy();
        let e = model(false).encode(&g, &x).unwrap();
        assert!(e.m.iter().all(|&v| v > 0.0 && v < 1.0));
        let m: Vec<f64> = e.m.to_vec();
        assert_eq!(fuse(&e.z_l, &e.z_h, &m).unwrap(), e.z);
    }

    #[test]
    fn global_gate_is_shared() {
        let (g, x) = toy();
        let e = model(true).encode(&g, &x).unwrap();
        assert!(e.m.iter().all(|&v| v == e.m[0]));
        assert_eq!(e.m[0], 0.5);
    }

    #[test]
    fn zero_high_filter_projects_zero_input() {
        let (g, x) = toy();
        let mut m = model(false);
        *m.param_mut(Param::DeltaH) = Array2::zeros((1, 4));
        *m.param_mut(Param::DeltaL) = row(&[0.7, 0.0, 0.0, 0.0]);
        let e = m.encode(&g, &x).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, false);
        let zero = tape.constant(Array2::zeros((6, 4)));
        let want = m.project(&mut tape, &b, zero).unwrap();
        assert_eq!(&e.z_h, tape.value(want));
        // constant γ_L = 0.7 means the low channel sees 0.7·X
        let scaled = tape.constant(&x * 0.7);
        let want_l = m.project(&mut tape, &b, scaled).unwrap();
        let d = &e.z_l - tape.value(want_l);
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn feature_dimension_checked() {
        let (g, _) = toy();
        assert!(model(false).encode(&g, &Array2::zeros((6, 5))).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let m = model(false);
        let path = tmp.path().join("ck.json");
        m.save(&path).unwrap();
        let back = AspectModel::load(&path).unwrap();
        assert_eq!(back, m);
        for p in Param::ALL {
            for (a, b) in m.param(p).iter().zip(back.param(p)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
