//! Spectrally targeted PGD on `(ΔA, ΔX)` and the DICE poisoning baseline.
//!
//! `ΔA` lives on a candidate set of unordered pairs (clean edges plus sampled
//! non-edges), one weight per pair, mirrored into both triangles. The attack
//! objective is
//!
//! ```text
//! J = Σ_v [ m_v ℓ(z'_L,v, z_v) + (1 − m_v) ℓ(z'_H,v, z_v) ]
//!     + λ_spec (R(A', Z'_L) − R(A', Z'_H))
//! ```
//!
//! with `m` and the anchor `z` taken from a clean evaluation-mode encoding.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffnet::{choose_negatives, info_nce_rows, Negatives, Tape, Var};
use crate::graphcore::io::{format_matrix, parse_matrix};
use crate::graphcore::{rescaled_laplacian, Graph, SparsePattern};
use crate::model::{AspectModel, Bound, EncodeVars};
use crate::seed;
use crate::{Error, Result};

/// Default negative-key cap for InfoNCE; larger graphs sample keys.
pub const NEGATIVE_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackBudget {
    pub eps_a: f64,
    pub eps_x: f64,
    pub eta: f64,
    pub steps: usize,
    pub lambda_spec: f64,
}

impl AttackBudget {
    /// Small synthetic-scale defaults: `T = 5`, `η = 0.01·ε/√T` per component.
    pub fn scaled_default(eps_a: f64, eps_x: f64) -> Self {
        let steps = 5;
        Self { eps_a, eps_x, eta: 0.01 * eps_a.max(eps_x) / (steps as f64).sqrt(), steps, lambda_spec: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.eps_a, self.eps_x, self.eta, self.lambda_spec].iter().all(|v| *v >= 0.0 && v.is_finite());
        if !ok || self.steps == 0 {
            return Err(Error::InvalidArgument(format!("invalid attack budget {self:?}")));
        }
        Ok(())
    }
}

/// Unordered node pairs `i < j` eligible for structural perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEdges {
    pairs: Vec<(usize, usize)>,
    existing: Vec<bool>,
}

impl CandidateEdges {
    /// Candidates from explicit pairs; each is normalised to `i < j`.
    pub fn from_pairs(g: &Graph, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (a, b) in pairs {
            if a >= g.n() || b >= g.n() {
                return Err(Error::NodeOutOfRange { id: a.max(b), n: g.n() });
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self pair ({a}, {a}) is not a candidate")));
            }
            let p = (a.min(b), a.max(b));
            if seen.insert(p) {
                out.push(p);
            }
        }
        let existing = out.iter().map(|&(i, j)| g.has_edge(i, j)).collect();
        Ok(Self { pairs: out, existing })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_existing(&self, k: usize) -> bool {
        self.existing[k]
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Clean non-self edges plus up to `extra_per_node` sampled non-edges per node.
pub fn sample_candidates(g: &Graph, extra_per_node: usize, seed: u64) -> CandidateEdges {
    let n = g.n();
    let mut pairs: Vec<(usize, usize)> = g.edges().map(|(i, j, _)| (i, j)).collect();
    let mut seen: HashSet<(usize, usize)> = pairs.iter().copied().collect();
    let mut rng = seed::rng(seed::derive(seed, "candidates"));
    for v in 0..n {
        let neighbours = g.neighbors(v).filter(|&(u, _)| u != v).count();
        let free = n.saturating_sub(1 + neighbours);
        let want = extra_per_node.min(free);
        let mut got = 0;
        let mut tries = 0;
        while got < want && tries < 50 * want + 100 {
            tries += 1;
            let u = rng.random_range(0..n);
            if u == v || g.has_edge(u, v) {
                continue;
            }
            got += 1;
            let p = (u.min(v), u.max(v));
            if seen.insert(p) {
                pairs.push(p);
            }
        }
    }
    let existing = pairs.iter().map(|&(i, j)| g.has_edge(i, j)).collect();
    CandidateEdges { pairs, existing }
}

/// `ΔA` on candidate pairs plus dense `ΔX`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub pairs: Vec<(usize, usize)>,
    pub delta_a: Vec<f64>,
    pub delta_x: Array2<f64>,
}

impl Perturbation {
    pub fn zero(candidates: &CandidateEdges, rows: usize, cols: usize) -> Self {
        Self {
            pairs: candidates.pairs.clone(),
            delta_a: vec![0.0; candidates.len()],
            delta_x: Array2::zeros((rows, cols)),
        }
    }

    /// Frobenius norm of the symmetric `ΔA` (both triangles).
    pub fn norm_a(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.delta_a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_x(&self) -> f64 {
        self.delta_x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `delta_a.csv` (`i,j,delta_a`) and `delta_x.csv` in features format.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut text = String::from("i,j,delta_a\n");
        for (&(i, j), d) in self.pairs.iter().zip(&self.delta_a) {
            text.push_str(&format!("{i},{j},{d}\n"));
        }
        let pa = dir.join("delta_a.csv");
        fs::write(&pa, text).map_err(|e| Error::io(&pa, e))?;
        let px = dir.join("delta_x.csv");
        fs::write(&px, format_matrix(&self.delta_x)).map_err(|e| Error::io(&px, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let pa = dir.join("delta_a.csv");
        let px = dir.join("delta_x.csv");
        for p in [&pa, &px] {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        let text = fs::read_to_string(&pa).map_err(|e| Error::io(&pa, e))?;
        let mut pairs = Vec::new();
        let mut delta_a = Vec::new();
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { file: "delta_a.csv".into(), line: line_no + 1, msg };
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 3 {
                return Err(bad("expected `i,j,delta_a`".into()));
            }
            let i = cells[0].parse::<usize>().map_err(|e| bad(e.to_string()))?;
            let j = cells[1].parse::<usize>().map_err(|e| bad(e.to_string()))?;
            let d = cells[2].parse::<f64>().map_err(|e| bad(e.to_string()))?;
            pairs.push((i, j));
            delta_a.push(d);
        }
        let xt = fs::read_to_string(&px).map_err(|e| Error::io(&px, e))?;
        Ok(Self { pairs, delta_a, delta_x: parse_matrix(&xt, "delta_x.csv")? })
    }
}

/// `v` scaled onto the Frobenius ball of radius `eps` when outside it.
pub fn project_frobenius(v: &[f64], eps: f64) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if eps <= 0.0 {
        return vec![0.0; v.len()];
    }
    if norm <= eps {
        return v.to_vec();
    }
    let s = eps / norm;
    v.iter().map(|x| x * s).collect()
}

/// `A' = max(0, A + ΔA)` off the diagonal, `X' = X + ΔX`. Entries that end at
/// zero weight are dropped from the sparse structure.
pub fn apply_perturbation(g: &Graph, x: &Array2<f64>, pert: &Perturbation) -> Result<(Graph, Array2<f64>)> {
    if pert.delta_x.dim() != x.dim() || pert.pairs.len() != pert.delta_a.len() {
        return Err(Error::Shape("perturbation does not match the graph".into()));
    }
    let mut w: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for v in 0..g.n() {
        for (u, wt) in g.neighbors(v) {
            if u >= v {
                w.insert((v, u), wt);
            }
        }
    }
    for (&(i, j), &d) in pert.pairs.iter().zip(&pert.delta_a) {
        if i == j || i >= g.n() || j >= g.n() {
            return Err(Error::InvalidArgument(format!("invalid perturbation pair ({i}, {j})")));
        }
        *w.entry((i.min(j), i.max(j))).or_insert(0.0) += d;
    }
    let entries: Vec<(usize, usize, f64)> =
        w.into_iter().filter(|&(_, v)| v > 0.0).map(|((i, j), v)| (i, j, v)).collect();
    Ok((Graph::from_weighted(g.n(), &entries)?, x + &pert.delta_x))
}

/// Sparse support of `A + ΔA` and the scatter map from candidate weights.
#[derive(Debug, Clone)]
pub struct PerturbedStructure {
    pattern: Arc<SparsePattern>,
    base: Array2<f64>,
    map: Arc<Vec<(usize, usize)>>,
    clean_degrees: Vec<f64>,
    n_cand: usize,
}

impl PerturbedStructure {
    pub fn new(g: &Graph, candidates: &CandidateEdges) -> Result<Self> {
        let mut entries: Vec<(usize, usize)> = g.adjacency().pattern().entries().map(|(_, r, c)| (r, c)).collect();
        for &(i, j) in &candidates.pairs {
            if !g.has_edge(i, j) {
                entries.push((i, j));
                entries.push((j, i));
            }
        }
        let pattern = Arc::new(SparsePattern::from_entries(g.n(), &entries)?);
        let base = Array2::from_shape_fn((pattern.nnz(), 1), |(p, _)| {
            let (r, c) = (pattern.row_of()[p], pattern.col_idx()[p]);
            g.weight(r, c)
        });
        let mut map = Vec::with_capacity(2 * candidates.len());
        for (k, &(i, j)) in candidates.pairs.iter().enumerate() {
            for (r, c) in [(i, j), (j, i)] {
                map.push((pattern.find(r, c).expect("candidate in pattern"), k));
            }
        }
        Ok(Self {
            pattern,
            base,
            map: Arc::new(map),
            clean_degrees: g.degrees().to_vec(),
            n_cand: candidates.len(),
        })
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn num_candidates(&self) -> usize {
        self.n_cand
    }

    /// Values of `L̃' = −D'^{-1/2} A' D'^{-1/2}` on the pattern, `nnz×1`.
    pub fn rescaled_vals(&self, tape: &mut Tape, delta_a: Var, frozen_degrees: bool) -> Result<Var> {
        let base = tape.constant(self.base.clone());
        let summed = tape.index_add(base, delta_a, self.map.clone())?;
        let a = tape.clamp_min0(summed);
        let fixed = frozen_degrees.then_some(self.clean_degrees.as_slice());
        let norm = tape.sym_normalize(self.pattern.clone(), a, fixed)?;
        Ok(tape.scale(norm, -1.0))
    }
}

/// `T_0(L̃)X, ..., T_K(L̃)X` recorded on the tape.
pub fn chebyshev_terms(tape: &mut Tape, pattern: &Arc<SparsePattern>, l_vals: Var, x: Var, k: usize) -> Result<Vec<Var>> {
    let mut terms = vec![x];
    if k >= 1 {
        terms.push(tape.spmm(pattern.clone(), l_vals, x)?);
    }
    for i in 2..=k {
        let lt = tape.spmm(pattern.clone(), l_vals, terms[i - 1])?;
        let twice = tape.scale(lt, 2.0);
        terms.push(tape.sub(twice, terms[i - 2])?);
    }
    Ok(terms)
}

/// `R(A', Z) = 1 + Σ_p L̃'_p ⟨z_r, z_c⟩ / Tr(ZᵀZ)`.
pub fn rayleigh_on_tape(tape: &mut Tape, pattern: &Arc<SparsePattern>, l_vals: Var, z: Var) -> Result<Var> {
    let num = tape.bilinear(pattern.clone(), l_vals, z)?;
    let den = tape.sum_squares(z);
    let ratio = tape.div(num, den)?;
    Ok(tape.affine(ratio, 1.0, 1.0))
}

/// Encoder pass on the perturbed inputs plus the per-node channel losses.
#[derive(Debug, Clone, Copy)]
pub struct AdvForward {
    pub enc: EncodeVars,
    /// `ℓ(z'_L,v, z_v)`, `N×1`.
    pub nce_l: Var,
    /// `ℓ(z'_H,v, z_v)`, `N×1`.
    pub nce_h: Var,
    /// `R(A', Z'_L) − R(A', Z'_H)`.
    pub rayleigh_gap: Var,
}

#[derive(Debug, Clone)]
pub struct AdvInputs<'a> {
    pub structure: &'a PerturbedStructure,
    pub tau: f64,
    pub negatives: &'a Negatives,
    pub frozen_degrees: bool,
}

/// Forward through `(A + ΔA, X')` and score both channels against `anchor`.
pub fn adversarial_forward(
    tape: &mut Tape,
    model: &AspectModel,
    bound: &Bound,
    inputs: &AdvInputs<'_>,
    x_pert: Var,
    delta_a: Var,
    anchor: Var,
) -> Result<AdvForward> {
    let s = inputs.structure;
    let l_vals = s.rescaled_vals(tape, delta_a, inputs.frozen_degrees)?;
    let basis = chebyshev_terms(tape, &s.pattern, l_vals, x_pert, model.config.k)?;
    let enc = model.encode_basis(tape, bound, &basis, None)?;
    let nce_l = info_nce_rows(tape, enc.z_l, anchor, inputs.tau, inputs.negatives)?;
    let nce_h = info_nce_rows(tape, enc.z_h, anchor, inputs.tau, inputs.negatives)?;
    let r_l = rayleigh_on_tape(tape, &s.pattern, l_vals, enc.z_l)?;
    let r_h = rayleigh_on_tape(tape, &s.pattern, l_vals, enc.z_h)?;
    let rayleigh_gap = tape.sub(r_l, r_h)?;
    Ok(AdvForward { enc, nce_l, nce_h, rayleigh_gap })
}

/// `Σ_v [m_v ℓ_L,v + (1 − m_v) ℓ_H,v]` for an `N×1` gate `m`.
pub fn gated_channel_loss(tape: &mut Tape, fwd: &AdvForward, m: Var) -> Result<Var> {
    let a = tape.mul(fwd.nce_l, m)?;
    let one_minus = tape.affine(m, -1.0, 1.0);
    let b = tape.mul(fwd.nce_h, one_minus)?;
    let s = tape.add(a, b)?;
    Ok(tape.sum(s))
}

/// Clean gate and fused anchor from an evaluation-mode encoding.
#[derive(Debug, Clone)]
pub struct Anchors {
    /// `N×1`.
    pub m: Array2<f64>,
    pub z: Array2<f64>,
}

impl Anchors {
    pub fn compute(model: &AspectModel, g: &Graph, x: &Array2<f64>) -> Result<Self> {
        let e = model.encode(g, x)?;
        let n = e.m.len();
        Ok(Self { m: e.m.into_shape_with_order((n, 1)).expect("column"), z: e.z })
    }
}

/// Everything the attack needs besides the budget.
#[derive(Debug, Clone)]
pub struct AttackSetup<'a> {
    pub model: &'a AspectModel,
    pub graph: &'a Graph,
    pub x: &'a Array2<f64>,
    pub candidates: &'a CandidateEdges,
    pub tau: f64,
    pub frozen_degrees: bool,
    pub seed: u64,
}

/// Value and gradients of `J` at one perturbation.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub j: f64,
    pub nce: f64,
    pub rayleigh_gap: f64,
    /// `∂J/∂w` per candidate pair weight.
    pub grad_a: Vec<f64>,
    pub grad_x: Array2<f64>,
}

struct Objective<'a> {
    setup: &'a AttackSetup<'a>,
    structure: PerturbedStructure,
    anchors: Anchors,
    negatives: Negatives,
    lambda_spec: f64,
}

impl<'a> Objective<'a> {
    fn new(setup: &'a AttackSetup<'a>, anchors: Option<&Anchors>, lambda_spec: f64) -> Result<Self> {
        let structure = PerturbedStructure::new(setup.graph, setup.candidates)?;
        let anchors = match anchors {
            Some(a) => a.clone(),
            None => Anchors::compute(setup.model, setup.graph, setup.x)?,
        };
        let mut rng = seed::rng(seed::derive(setup.seed, "attack-negatives"));
        let negatives = choose_negatives(setup.graph.n(), NEGATIVE_CAP, &mut rng);
        Ok(Self { setup, structure, anchors, negatives, lambda_spec })
    }

    fn eval(&self, pert: &Perturbation, with_grad: bool) -> Result<ObjectiveEval> {
        let mut tape = Tape::new();
        let bound = self.setup.model.bind(&mut tape, false);
        let n_cand = self.structure.num_candidates();
        let da = Array2::from_shape_vec((n_cand, 1), pert.delta_a.clone()).map_err(|e| Error::Shape(e.to_string()))?;
        let da = tape.leaf(da, with_grad);
        let dx = tape.leaf(pert.delta_x.clone(), with_grad);
        let x = tape.constant(self.setup.x.clone());
        let xp = tape.add(x, dx)?;
        let anchor = tape.constant(self.anchors.z.clone());
        let m = tape.constant(self.anchors.m.clone());
        let inputs = AdvInputs {
            structure: &self.structure,
            tau: self.setup.tau,
            negatives: &self.negatives,
            frozen_degrees: self.setup.frozen_degrees,
        };
        let fwd = adversarial_forward(&mut tape, self.setup.model, &bound, &inputs, xp, da, anchor)?;
        let nce = gated_channel_loss(&mut tape, &fwd, m)?;
        let spec = tape.scale(fwd.rayleigh_gap, self.lambda_spec);
        let j = tape.add(nce, spec)?;
        let mut out = ObjectiveEval {
            j: tape.scalar(j),
            nce: tape.scalar(nce),
            rayleigh_gap: tape.scalar(fwd.rayleigh_gap),
            grad_a: vec![0.0; n_cand],
            grad_x: Array2::zeros(pert.delta_x.raw_dim()),
        };
        if !out.j.is_finite() {
            return Err(Error::Numerical(format!("attack objective is {}", out.j)));
        }
        if with_grad {
            tape.backward(j)?;
            if let Some(g) = tape.grad(da) {
                out.grad_a = g.iter().copied().collect();
            }
            if let Some(g) = tape.grad(dx) {
                out.grad_x = g.clone();
            }
        }
        Ok(out)
    }
}

/// Evaluate `J` and its gradients at `pert`. Anchors default to a clean
/// evaluation-mode encoding.
pub fn adv_objective(
    setup: &AttackSetup<'_>,
    anchors: Option<&Anchors>,
    lambda_spec: f64,
    pert: &Perturbation,
) -> Result<ObjectiveEval> {
    Objective::new(setup, anchors, lambda_spec)?.eval(pert, true)
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub perturbation: Perturbation,
    /// `J` at steps `0..=T`.
    pub trajectory: Vec<f64>,
    /// Rayleigh gap at steps `0..=T`.
    pub rayleigh_gaps: Vec<f64>,
    /// `(‖ΔA‖_F, ‖ΔX‖_F)` after each projection.
    pub step_norms: Vec<(f64, f64)>,
}

impl AttackOutcome {
    /// Fraction of steps whose `J` did not decrease.
    pub fn ascent_fraction(&self) -> f64 {
        let steps = self.trajectory.len().saturating_sub(1);
        if steps == 0 {
            return 1.0;
        }
        let up = self.trajectory.windows(2).filter(|w| w[1] >= w[0]).count();
        up as f64 / steps as f64
    }
}

/// Projected gradient ascent on `J` from the zero perturbation.
///
/// The candidate weight `w_k` stands for the two symmetric entries of `ΔA`,
/// so the matrix-entry gradient is `∂J/∂w_k / 2`. That is the step taken.
pub fn pgd_attack(setup: &AttackSetup<'_>, budget: &AttackBudget, anchors: Option<&Anchors>) -> Result<AttackOutcome> {
    budget.validate()?;
    let obj = Objective::new(setup, anchors, budget.lambda_spec)?;
    let mut pert = Perturbation::zero(setup.candidates, setup.x.nrows(), setup.x.ncols());
    let mut trajectory = Vec::with_capacity(budget.steps + 1);
    let mut gaps = Vec::with_capacity(budget.steps + 1);
    let mut step_norms = Vec::with_capacity(budget.steps);
    let w_radius = budget.eps_a / std::f64::consts::SQRT_2;
    for _ in 0..budget.steps {
        let ev = obj.eval(&pert, true)?;
        trajectory.push(ev.j);
        gaps.push(ev.rayleigh_gap);
        let stepped: Vec<f64> =
            pert.delta_a.iter().zip(&ev.grad_a).map(|(w, g)| w + budget.eta * 0.5 * g).collect();
        pert.delta_a = project_frobenius(&stepped, w_radius);
        let stepped_x = &pert.delta_x + &(&ev.grad_x * budget.eta);
        let flat: Vec<f64> = stepped_x.iter().copied().collect();
        pert.delta_x = Array2::from_shape_vec(stepped_x.raw_dim(), project_frobenius(&flat, budget.eps_x))
            .expect("same shape");
        step_norms.push((pert.norm_a(), pert.norm_x()));
    }
    let last = obj.eval(&pert, false)?;
    trajectory.push(last.j);
    gaps.push(last.rayleigh_gap);
    let out = AttackOutcome { perturbation: pert, trajectory, rayleigh_gaps: gaps, step_norms };
    let frac = out.ascent_fraction();
    if frac < 0.8 {
        warn!("PGD objective rose in only {:.0}% of steps", 100.0 * frac);
    } else {
        info!("PGD: J {:.6} -> {:.6}", out.trajectory[0], out.trajectory[budget.steps]);
    }
    Ok(out)
}

/// Dense recomputation of `J` at a perturbation, used as an oracle.
pub fn adv_objective_dense(
    setup: &AttackSetup<'_>,
    anchors: &Anchors,
    lambda_spec: f64,
    pert: &Perturbation,
) -> Result<f64> {
    use crate::graphcore::{normalized_laplacian, rayleigh_quotient};
    let (g2, x2) = apply_perturbation(setup.graph, setup.x, pert)?;
    let e = setup.model.encode_rescaled(&rescaled_laplacian(&g2, 2.0)?, &x2, None)?;
    let rows = |z: &Array2<f64>| -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let (u, v) = (tape.constant(z.clone()), tape.constant(anchors.z.clone()));
        let r = info_nce_rows(&mut tape, u, v, setup.tau, &Negatives::Full)?;
        Ok(tape.value(r).clone())
    };
    let (l_rows, h_rows) = (rows(&e.z_l)?, rows(&e.z_h)?);
    let nce: f64 = (0..setup.graph.n())
        .map(|v| {
            let m = anchors.m[[v, 0]];
            m * l_rows[[v, 0]] + (1.0 - m) * h_rows[[v, 0]]
        })
        .sum::<f64>();
    let lap = normalized_laplacian(&g2)?;
    let gap = rayleigh_quotient(&lap, &e.z_l.view())? - rayleigh_quotient(&lap, &e.z_h.view())?;
    Ok(nce + lambda_spec * gap)
}

/// Result of a DICE-style poisoning run.
#[derive(Debug, Clone)]
pub struct DiceOutcome {
    pub graph: Graph,
    pub removed: usize,
    pub added: usize,
    pub requested_removals: usize,
    pub requested_additions: usize,
}

/// Remove same-label edges and insert cross-label non-edges.
///
/// `round(rate·|E|)` modifications are split into `⌊·/2⌋` additions and the
/// remainder as deletions. Shortfalls are logged, not compensated.
pub fn dice_attack(g: &Graph, labels: &[usize], rate: f64, seed: u64) -> Result<DiceOutcome> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("DICE rate must lie in [0, 1), got {rate}")));
    }
    if labels.len() != g.n() {
        return Err(Error::Shape(format!("{} labels for {} nodes", labels.len(), g.n())));
    }
    let n = g.n();
    let n_mod = (rate * g.num_edges() as f64).round() as usize;
    let want_add = n_mod / 2;
    let want_del = n_mod - want_add;
    let mut rng = seed::rng(seed::derive(seed, "dice"));

    let mut same: Vec<(usize, usize)> =
        g.edges().filter(|&(i, j, _)| labels[i] == labels[j]).map(|(i, j, _)| (i, j)).collect();
    same.shuffle(&mut rng);
    let removed: HashSet<(usize, usize)> = same.iter().take(want_del).copied().collect();
    if removed.len() < want_del {
        warn!("DICE: only {} of {want_del} same-label edges available for removal", removed.len());
    }

    let mut added: HashSet<(usize, usize)> = HashSet::new();
    let classes: HashSet<usize> = labels.iter().copied().collect();
    if want_add > 0 && classes.len() > 1 {
        let mut tries = 0usize;
        let max_tries = 100 * want_add + 1000;
        while added.len() < want_add && tries < max_tries {
            tries += 1;
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a == b || labels[a] == labels[b] || g.has_edge(a, b) {
                continue;
            }
            added.insert((a.min(b), a.max(b)));
        }
    }
    if added.len() < want_add {
        warn!("DICE: only {} of {want_add} cross-label additions possible", added.len());
    }

    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    for v in 0..n {
        for (u, w) in g.neighbors(v) {
            if u >= v && !removed.contains(&(v, u)) {
                entries.push((v, u, w));
            }
        }
    }
    let mut extra: Vec<_> = added.iter().copied().collect();
    extra.sort_unstable();
    entries.extend(extra.into_iter().map(|(i, j)| (i, j, 1.0)));
    Ok(DiceOutcome {
        graph: Graph::from_weighted(n, &entries)?,
        removed: removed.len(),
        added: added.len(),
        requested_removals: want_del,
        requested_additions: want_add,
    })
}
