//! Shared fixtures: the finite-difference gradient suite and the synthetic
//! mixed-graph setting used by the end-to-end checks.

#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use aspect_core::adversary::{
    adversarial_forward, gated_channel_loss, sample_candidates, AdvInputs, Anchors, PerturbedStructure,
};
use aspect_core::diffnet::{check_gradients, rel_err, GradCheck, Negatives, Tape, Var};
use aspect_core::graphcore::{generate_mixed_graph, DatasetBundle, MixedGraphParams, SparsePattern};
use aspect_core::model::{AspectModel, Param};
use aspect_core::seed;
use aspect_core::trainer::{inner_loop, total_loss_on_tape, TrainConfig, TrainContext};
use aspect_core::Result;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;
pub const FD_FLOOR: f64 = 1e-6;

/// 400 nodes, half homophilic and half heterophilic, low feature noise.
pub fn mechanism_graph(s: u64) -> DatasetBundle {
    generate_mixed_graph(&MixedGraphParams { noise: 0.3, seed: s, ..Default::default() }).expect("synthetic graph")
}

/// Training setup for the synthetic graph. The attack budget is large
/// enough that PGD moves the summed objective on 400 nodes; the final model
/// is the one evaluated.
pub fn mechanism_config(s: u64) -> TrainConfig {
    let mut c = TrainConfig { seed: s, epochs: 150, eval_every: 150, patience: 150, ..Default::default() };
    c.budget.eps_a = 20.0;
    c.budget.eps_x = 20.0;
    c.budget.eta = 20.0;
    c
}

pub fn tiny_graph(s: u64) -> DatasetBundle {
    let p = MixedGraphParams { n_hom: 15, n_het: 15, feat_dim: 6, p_in: 0.3, p_out: 0.05, seed: s, ..Default::default() };
    generate_mixed_graph(&p).expect("tiny graph")
}

pub fn tiny_config(s: u64) -> TrainConfig {
    let mut c = TrainConfig { seed: s, hidden_dim: 8, out_dim: 4, k: 3, dropout: 0.2, ..Default::default() };
    c.budget.steps = 3;
    c
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Entries of magnitude in `[0.2, 1.2)` with random sign, away from kinks.
fn off_zero(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let m = rng.random_range(0.2..1.2);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn positive(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.5..1.5))
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output entry matters.
fn project(tape: &mut Tape, out: Var, salt: u64) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let w = gaussian(r, c, &mut seed::rng(salt));
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn fd(inputs: &[Array2<f64>], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> GradCheck {
    check_gradients(inputs, FD_STEP, FD_TOL, FD_FLOOR, |_, _| true, f).expect("gradient check runs")
}

/// Symmetric pattern with self-loops on `n` nodes.
fn small_pattern(n: usize, rng: &mut impl Rng) -> Arc<SparsePattern> {
    let mut e: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || rng.random::<f64>() < 0.3 {
                e.push((i, j));
                e.push((j, i));
            }
        }
    }
    Arc::new(SparsePattern::from_entries(n, &e).expect("pattern"))
}

/// Symmetric positive values on a pattern, `nnz×1`.
fn symmetric_vals(p: &SparsePattern, rng: &mut impl Rng) -> Array2<f64> {
    let mut v = Array2::zeros((p.nnz(), 1));
    for (k, r, c) in p.entries() {
        if r <= c {
            let w = rng.random_range(0.5..1.5);
            v[[k, 0]] = w;
            v[[p.find(c, r).expect("symmetric"), 0]] = w;
        }
    }
    v
}

/// Central-difference checks of every tape primitive.
pub fn primitive_checks() -> Vec<(&'static str, GradCheck)> {
    let mut rng = seed::rng(seed::derive(11, "primitives"));
    let (n, d) = (6, 4);
    let a = gaussian(n, d, &mut rng);
    let b = gaussian(n, d, &mut rng);
    let c = gaussian(d, 3, &mut rng);
    let row = gaussian(1, d, &mut rng);
    let col = gaussian(n, 1, &mut rng);
    let kinked = off_zero(n, d, &mut rng);
    let slope = Array2::from_elem((1, 1), 0.3);
    let s11 = Array2::from_elem((1, 1), 1.7);
    let pattern = small_pattern(n, &mut rng);
    let vals = gaussian(pattern.nnz(), 1, &mut rng);
    let pos_vals = symmetric_vals(&pattern, &mut rng);
    let degrees: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..3.0)).collect();
    let mask = Arc::new(Array2::from_shape_fn((n, d), |(i, j)| if (i + j) % 3 == 0 { 0.0 } else { 1.25 }));
    let neg = gaussian(n, 5, &mut rng);
    let exclude: Arc<Vec<Option<usize>>> = Arc::new((0..n).map(|r| (r < 5).then_some(r)).collect());
    let gather: Arc<Vec<usize>> = Arc::new(vec![0, 2, 2, 5, 1]);
    let w3 = gaussian(1, 3, &mut rng);
    let small = gaussian(3, 1, &mut rng);
    let scatter: Arc<Vec<(usize, usize)>> = Arc::new(vec![(0, 0), (3, 1), (3, 2), (pattern.nnz() - 1, 0)]);

    let p = pattern.clone();
    vec![
        ("matmul", fd(&[a.clone(), c.clone()], |t, v| {
            let o = t.matmul(v[0], v[1])?;
            project(t, o, 1)
        })),
        ("matmul_nt", fd(&[a.clone(), b.clone()], |t, v| {
            let o = t.matmul_nt(v[0], v[1])?;
            project(t, o, 2)
        })),
        ("add", fd(&[a.clone(), b.clone()], |t, v| {
            let o = t.add(v[0], v[1])?;
            project(t, o, 3)
        })),
        ("sub", fd(&[a.clone(), b.clone()], |t, v| {
            let o = t.sub(v[0], v[1])?;
            project(t, o, 4)
        })),
        ("mul", fd(&[a.clone(), b.clone()], |t, v| {
            let o = t.mul(v[0], v[1])?;
            project(t, o, 5)
        })),
        ("add_row", fd(&[a.clone(), row.clone()], |t, v| {
            let o = t.add_row(v[0], v[1])?;
            project(t, o, 6)
        })),
        ("mul_col", fd(&[a.clone(), col.clone()], |t, v| {
            let o = t.mul_col(v[0], v[1])?;
            project(t, o, 7)
        })),
        ("affine", fd(&[a.clone()], |t, v| {
            let o = t.affine(v[0], -1.5, 0.25);
            project(t, o, 8)
        })),
        ("scale", fd(&[a.clone()], |t, v| {
            let o = t.scale(v[0], 2.5);
            project(t, o, 9)
        })),
        ("scale_by", fd(&[a.clone(), s11.clone()], |t, v| {
            let o = t.scale_by(v[0], v[1])?;
            project(t, o, 10)
        })),
        ("broadcast_rows", fd(&[row.clone()], |t, v| {
            let o = t.broadcast_rows(v[0], n)?;
            project(t, o, 11)
        })),
        ("concat_cols", fd(&[a.clone(), col.clone()], |t, v| {
            let o = t.concat_cols(v[0], v[1])?;
            project(t, o, 12)
        })),
        ("relu", fd(&[kinked.clone()], |t, v| {
            let o = t.relu(v[0]);
            project(t, o, 13)
        })),
        ("clamp_min0", fd(&[kinked.clone()], |t, v| {
            let o = t.clamp_min0(v[0]);
            project(t, o, 14)
        })),
        ("prelu", fd(&[kinked.clone(), slope.clone()], |t, v| {
            let o = t.prelu(v[0], v[1])?;
            project(t, o, 15)
        })),
        ("sigmoid", fd(&[a.clone()], |t, v| {
            let o = t.sigmoid(v[0]);
            project(t, o, 16)
        })),
        ("dropout", fd(&[a.clone()], |t, v| {
            let o = t.dropout(v[0], mask.clone())?;
            project(t, o, 17)
        })),
        ("row_normalize", fd(&[a.clone()], |t, v| {
            let o = t.row_normalize(v[0]);
            project(t, o, 18)
        })),
        ("row_dot", fd(&[a.clone(), b.clone()], |t, v| {
            let o = t.row_dot(v[0], v[1])?;
            project(t, o, 19)
        })),
        ("gather_rows", fd(&[a.clone()], |t, v| {
            let o = t.gather_rows(v[0], gather.clone())?;
            project(t, o, 20)
        })),
        ("sum", fd(&[a.clone()], |t, v| {
            let o = t.mul(v[0], v[0])?;
            Ok(t.sum(o))
        })),
        ("mean", fd(&[a.clone()], |t, v| {
            let o = t.mul(v[0], v[0])?;
            Ok(t.mean(o))
        })),
        ("sum_squares", fd(&[a.clone()], |t, v| Ok(t.sum_squares(v[0])))),
        ("div", fd(&[s11.clone(), Array2::from_elem((1, 1), -0.8)], |t, v| t.div(v[0], v[1]))),
        ("nce_rows", fd(&[col.clone(), neg.clone()], |t, v| {
            let o = t.nce_rows(v[0], v[1], exclude.clone(), 2.0)?;
            project(t, o, 21)
        })),
        ("spmm", fd(&[vals.clone(), a.clone()], |t, v| {
            let o = t.spmm(p.clone(), v[0], v[1])?;
            project(t, o, 22)
        })),
        ("sym_normalize", fd(&[pos_vals.clone()], |t, v| {
            let o = t.sym_normalize(p.clone(), v[0], None)?;
            project(t, o, 23)
        })),
        ("sym_normalize_frozen", fd(&[pos_vals.clone()], |t, v| {
            let o = t.sym_normalize(p.clone(), v[0], Some(&degrees))?;
            project(t, o, 24)
        })),
        ("bilinear", fd(&[vals.clone(), a.clone()], |t, v| t.bilinear(p.clone(), v[0], v[1]))),
        ("poly_combine", fd(&[w3.clone(), a.clone(), b.clone(), kinked.clone()], |t, v| {
            let o = t.poly_combine(v[0], &v[1..])?;
            project(t, o, 25)
        })),
        ("index_add", fd(&[vals.clone(), small.clone()], |t, v| {
            let o = t.index_add(v[0], v[1], scatter.clone())?;
            project(t, o, 26)
        })),
        ("col_standardize", fd(&[a.clone()], |t, v| {
            let o = t.col_standardize(v[0]);
            project(t, o, 27)
        })),
    ]
}

/// Finite differences of `L_total` with respect to every model parameter.
///
/// Analytic gradients come from one tape with trainable leaves; each
/// numerical derivative re-evaluates the loss on a perturbed copy of the
/// model with the adversarial perturbation held fixed.
pub fn total_loss_check(s: u64) -> GradCheck {
    let data = tiny_graph(s);
    let config = tiny_config(s);
    let mut rng = seed::rng(seed::derive(s, "init"));
    let model = AspectModel::new(config.model_config(data.features.ncols()), &mut rng).expect("model");
    let ctx = TrainContext::new(&data.graph, &data.features, config.k).expect("context");
    let epoch = 1;
    let inner = inner_loop(&model, &ctx, &config, epoch).expect("inner loop");
    assert!(inner.structure.is_some());

    let value = |m: &AspectModel| -> f64 {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let (_, total) = total_loss_on_tape(&mut tape, m, &bound, &ctx, &inner, &config, epoch).expect("loss");
        tape.scalar(total)
    };

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let (_, total) = total_loss_on_tape(&mut tape, &model, &bound, &ctx, &inner, &config, epoch).expect("loss");
    tape.backward(total).expect("backward");

    let h = 1e-5;
    let mut report = GradCheck { checked: 0, passed: 0, max_rel_err: 0.0 };
    let mut work = model.clone();
    for &p in Param::ALL.iter() {
        let analytic = tape.grad(bound.get(p)).cloned().unwrap_or_else(|| Array2::zeros(model.param(p).raw_dim()));
        for (idx, &orig) in model.param(p).indexed_iter() {
            work.param_mut(p)[idx] = orig + h;
            let plus = value(&work);
            work.param_mut(p)[idx] = orig - h;
            let minus = value(&work);
            work.param_mut(p)[idx] = orig;
            let err = rel_err(analytic[idx], (plus - minus) / (2.0 * h), FD_FLOOR);
            report.checked += 1;
            if err <= FD_TOL {
                report.passed += 1;
            }
            report.max_rel_err = report.max_rel_err.max(err);
        }
    }
    report
}

/// Finite differences of the attack objective `J` with respect to `ΔA` and
/// `ΔX`, through the renormalised adjacency.
///
/// Candidate weights start away from the clamp at zero: existing edges in
/// `(−0.5, 0.5)`, non-edges in `(0.1, 0.5)`.
pub fn attack_objective_check(s: u64, frozen_degrees: bool) -> GradCheck {
    let data = tiny_graph(s);
    let config = tiny_config(s);
    let mut rng = seed::rng(seed::derive(s, "init"));
    let model = AspectModel::new(config.model_config(data.features.ncols()), &mut rng).expect("model");
    let candidates = sample_candidates(&data.graph, 2, seed::derive(s, "candidates"));
    let structure = PerturbedStructure::new(&data.graph, &candidates).expect("structure");
    let anchors = Anchors::compute(&model, &data.graph, &data.features).expect("anchors");

    let mut rng = seed::rng(seed::derive(s, "start"));
    let da = Array2::from_shape_fn((candidates.len(), 1), |(k, _)| {
        if candidates.is_existing(k) {
            rng.random_range(-0.5..0.5)
        } else {
            rng.random_range(0.1..0.5)
        }
    });
    let dx = gaussian(data.features.nrows(), data.features.ncols(), &mut rng) * 0.1;
    let lambda_spec = 3.0;
    let negatives = Negatives::Full;

    fd(&[da, dx], |t, v| {
        let bound = model.bind(t, false);
        let x = t.constant(data.features.clone());
        let xp = t.add(x, v[1])?;
        let anchor = t.constant(anchors.z.clone());
        let m = t.constant(anchors.m.clone());
        let inputs = AdvInputs { structure: &structure, tau: config.tau, negatives: &negatives, frozen_degrees };
        let fwd = adversarial_forward(t, &model, &bound, &inputs, xp, v[0], anchor)?;
        let nce = gated_channel_loss(t, &fwd, m)?;
        let spec = t.scale(fwd.rayleigh_gap, lambda_spec);
        t.add(nce, spec)
    })
}

/// Every check of the suite, labelled.
pub fn gradient_suite() -> Vec<(String, GradCheck)> {
    let mut out: Vec<(String, GradCheck)> =
        primitive_checks().into_iter().map(|(name, c)| (name.to_string(), c)).collect();
    out.push(("L_total".into(), total_loss_check(5)));
    out.push(("J renormalised degrees".into(), attack_objective_check(6, false)));
    out.push(("J frozen degrees".into(), attack_objective_check(6, true)));
    out
}

pub fn all_passed(c: &GradCheck) -> bool {
    c.checked > 0 && c.passed == c.checked
}
