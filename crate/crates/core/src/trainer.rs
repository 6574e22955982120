//! Alternating minimax training.
//!
//! Each epoch: encode the clean graph in evaluation mode to fix the gate and
//! anchors for the attack, run PGD, then take one Adam step on
//!
//! ```text
//! L_total = L_clean + λ_adv · Σ_v [m_v ℓ(z^adv_L,v, z_v) + (1 − m_v) ℓ(z^adv_H,v, z_v)]
//! ```
//!
//! where `m` and `z` now come from the training-mode clean forward and carry
//! gradient, so the gate can move toward the channel the attack hurts less.

use std::fmt::Write as _;
use std::str::FromStr;

use log::{debug, error, info};
use ndarray::Array2;
use serde::Serialize;

use crate::adversary::{
    adversarial_forward, gated_channel_loss, pgd_attack, sample_candidates, AdvInputs, Anchors, AttackBudget,
    AttackSetup, PerturbedStructure, NEGATIVE_CAP,
};
use crate::cheb::cheb_basis;
use crate::diffnet::{choose_negatives, info_nce_rows, AdamConfig, AdamState, GroupSettings, Negatives, Tape, Var};
use crate::eval::{probe_split, ProbeConfig};
use crate::graphcore::{augment, make_splits, rescaled_laplacian, DatasetBundle, Graph, Split};
use crate::model::{Activation, AspectModel, Bound, DropoutMasks, ModelConfig, Param, ParamGroup};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    NoGate,
    NoRayleigh,
    NoAdversarial,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::NoGate, Ablation::NoRayleigh, Ablation::NoAdversarial];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoGate => "no_gate",
            Ablation::NoRayleigh => "no_rayleigh",
            Ablation::NoAdversarial => "no_adversarial",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Every knob of a training run. Serialised as flat `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub val_probe_steps: usize,

    pub lr_encoder: f64,
    pub lr_filters: f64,
    pub lr_gate: f64,
    pub wd_encoder: f64,
    pub wd_filters: f64,
    pub wd_gate: f64,
    /// Accepted for compatibility with published hyperparameter tables; unused.
    pub lr_alpha: f64,
    pub lr_beta: f64,

    pub tau: f64,
    pub lambda_adv: f64,
    pub budget: AttackBudget,
    pub candidates_per_node: usize,
    pub frozen_degrees: bool,
    pub detach_anchor: bool,

    pub edge_drop_rate: f64,
    pub feat_mask_rate: f64,

    pub hidden_dim: usize,
    pub out_dim: usize,
    pub k: usize,
    pub gate_hidden: Option<usize>,
    pub batch_norm: bool,
    pub dropout: f64,
    pub activation: Activation,

    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            patience: 50,
            eval_every: 5,
            val_probe_steps: 100,
            lr_encoder: 0.005,
            lr_filters: 0.01,
            lr_gate: 0.005,
            wd_encoder: 0.0,
            wd_filters: 0.0,
            wd_gate: 0.0,
            lr_alpha: 0.0,
            lr_beta: 0.0,
            tau: 0.5,
            lambda_adv: 1.0,
            budget: AttackBudget { eps_a: 1.0, eps_x: 1.0, eta: 0.5, steps: 5, lambda_spec: 1.0 },
            candidates_per_node: 2,
            frozen_degrees: false,
            detach_anchor: false,
            edge_drop_rate: 0.2,
            feat_mask_rate: 0.2,
            hidden_dim: 64,
            out_dim: 32,
            k: 5,
            gate_hidden: None,
            batch_norm: false,
            dropout: 0.0,
            activation: Activation::Prelu,
            ablation: Ablation::None,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key} = {v:?}: expected a boolean"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 34] = [
        "epochs", "patience", "eval_every", "val_probe_steps", "lr_encoder", "lr_filters", "lr_gate",
        "wd_encoder", "wd_filters", "wd_gate", "lr_alpha", "lr_beta", "tau", "lambda_adv", "eps_a", "eps_x",
        "pgd_eta", "pgd_steps", "lambda_spec", "candidates_per_node", "frozen_degrees", "detach_anchor",
        "edge_drop_rate", "feat_mask_rate", "hidden_dim", "out_dim", "k", "gate_hidden", "batch_norm",
        "dropout", "activation", "ablation", "seed", "lr",
    ];

    /// Set one field by its config key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "epochs" => self.epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "val_probe_steps" => self.val_probe_steps = parse(key, v)?,
            "lr_encoder" | "lr" => self.lr_encoder = parse(key, v)?,
            "lr_filters" => self.lr_filters = parse(key, v)?,
            "lr_gate" => self.lr_gate = parse(key, v)?,
            "wd_encoder" => self.wd_encoder = parse(key, v)?,
            "wd_filters" => self.wd_filters = parse(key, v)?,
            "wd_gate" => self.wd_gate = parse(key, v)?,
            "lr_alpha" => self.lr_alpha = parse(key, v)?,
            "lr_beta" => self.lr_beta = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "lambda_adv" => self.lambda_adv = parse(key, v)?,
            "eps_a" => self.budget.eps_a = parse(key, v)?,
            "eps_x" => self.budget.eps_x = parse(key, v)?,
            "pgd_eta" => self.budget.eta = parse(key, v)?,
            "pgd_steps" => self.budget.steps = parse(key, v)?,
            "lambda_spec" => self.budget.lambda_spec = parse(key, v)?,
            "candidates_per_node" => self.candidates_per_node = parse(key, v)?,
            "frozen_degrees" => self.frozen_degrees = parse_bool(key, v)?,
            "detach_anchor" => self.detach_anchor = parse_bool(key, v)?,
            "edge_drop_rate" => self.edge_drop_rate = parse(key, v)?,
            "feat_mask_rate" => self.feat_mask_rate = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "out_dim" => self.out_dim = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "gate_hidden" => {
                self.gate_hidden = if v == "auto" { None } else { Some(parse(key, v)?) };
            }
            "batch_norm" => self.batch_norm = parse_bool(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "activation" => {
                self.activation = match v {
                    "prelu" => Activation::Prelu,
                    "relu" => Activation::Relu,
                    _ => return Err(Error::Config(format!("activation = {v:?}: expected prelu or relu"))),
                }
            }
            "ablation" => self.ablation = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical `key = value` rendering that [`TrainConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let b = &self.budget;
        let act = match self.activation {
            Activation::Prelu => "prelu",
            Activation::Relu => "relu",
        };
        let gate_hidden = self.gate_hidden.map_or("auto".to_string(), |g| g.to_string());
        let rows: Vec<(&str, String)> = vec![
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("val_probe_steps", self.val_probe_steps.to_string()),
            ("lr_encoder", self.lr_encoder.to_string()),
            ("lr_filters", self.lr_filters.to_string()),
            ("lr_gate", self.lr_gate.to_string()),
            ("wd_encoder", self.wd_encoder.to_string()),
            ("wd_filters", self.wd_filters.to_string()),
            ("wd_gate", self.wd_gate.to_string()),
            ("lr_alpha", self.lr_alpha.to_string()),
            ("lr_beta", self.lr_beta.to_string()),
            ("tau", self.tau.to_string()),
            ("lambda_adv", self.lambda_adv.to_string()),
            ("eps_a", b.eps_a.to_string()),
            ("eps_x", b.eps_x.to_string()),
            ("pgd_eta", b.eta.to_string()),
            ("pgd_steps", b.steps.to_string()),
            ("lambda_spec", b.lambda_spec.to_string()),
            ("candidates_per_node", self.candidates_per_node.to_string()),
            ("frozen_degrees", self.frozen_degrees.to_string()),
            ("detach_anchor", self.detach_anchor.to_string()),
            ("edge_drop_rate", self.edge_drop_rate.to_string()),
            ("feat_mask_rate", self.feat_mask_rate.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("out_dim", self.out_dim.to_string()),
            ("k", self.k.to_string()),
            ("gate_hidden", gate_hidden),
            ("batch_norm", self.batch_norm.to_string()),
            ("dropout", self.dropout.to_string()),
            ("activation", act.to_string()),
            ("ablation", self.ablation.name().to_string()),
            ("seed", self.seed.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda_adv >= 0.0) {
            return bad(format!("lambda_adv must be non-negative, got {}", self.lambda_adv));
        }
        for (name, r) in [("edge_drop_rate", self.edge_drop_rate), ("feat_mask_rate", self.feat_mask_rate), ("dropout", self.dropout)] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1), got {r}"));
            }
        }
        if self.k == 0 || self.hidden_dim == 0 || self.out_dim == 0 || self.eval_every == 0 {
            return bad("k, hidden_dim, out_dim and eval_every must be positive".into());
        }
        for (name, v) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_filters", self.lr_filters),
            ("lr_gate", self.lr_gate),
            ("wd_encoder", self.wd_encoder),
            ("wd_filters", self.wd_filters),
            ("wd_gate", self.wd_gate),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        self.budget.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self, in_dim: usize) -> ModelConfig {
        ModelConfig {
            in_dim,
            hidden_dim: self.hidden_dim,
            out_dim: self.out_dim,
            k: self.k,
            gate_hidden: self.gate_hidden,
            batch_norm: self.batch_norm,
            dropout: self.dropout,
            activation: self.activation,
            global_gate: self.ablation == Ablation::NoGate,
        }
    }

    pub fn adversarial(&self) -> bool {
        self.ablation != Ablation::NoAdversarial
    }

    /// PGD budget with the Rayleigh weight zeroed under `no_rayleigh`.
    pub fn attack_budget(&self) -> AttackBudget {
        let mut b = self.budget;
        if self.ablation == Ablation::NoRayleigh {
            b.lambda_spec = 0.0;
        }
        b
    }

    fn group_settings(&self, p: Param) -> GroupSettings {
        match p.group() {
            ParamGroup::Filters => GroupSettings { lr: self.lr_filters, weight_decay: self.wd_filters },
            ParamGroup::Encoder => GroupSettings { lr: self.lr_encoder, weight_decay: self.wd_encoder },
            ParamGroup::Gate => GroupSettings { lr: self.lr_gate, weight_decay: self.wd_gate },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_clean: f64,
    pub l_total: f64,
    /// Final PGD objective, absent without the adversary.
    pub j_adv: Option<f64>,
    pub mean_gate: f64,
    /// Validation probe accuracy on evaluation epochs.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("epoch,l_clean,l_total,j_adv,mean_gate,val_acc\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                r.l_clean,
                r.l_total,
                opt(r.j_adv),
                r.mean_gate,
                opt(r.val_acc)
            );
        }
        s
    }
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub l_clean: f64,
    pub l_total: f64,
}

/// Clean contrastive loss: summed InfoNCE between the fused encodings of the
/// graph and of one augmented view, both in training mode.
pub fn clean_loss_on_tape(
    tape: &mut Tape,
    model: &AspectModel,
    bound: &Bound,
    clean_basis: &[Var],
    aug_basis: &[Var],
    masks: (Option<&DropoutMasks>, Option<&DropoutMasks>),
    tau: f64,
    negatives: &Negatives,
) -> Result<(Var, crate::model::EncodeVars)> {
    let clean = model.encode_basis(tape, bound, clean_basis, masks.0)?;
    let aug = model.encode_basis(tape, bound, aug_basis, masks.1)?;
    let rows = info_nce_rows(tape, clean.z, aug.z, tau, negatives)?;
    Ok((tape.sum(rows), clean))
}

/// Value of the clean loss for one augmentation seed, no dropout.
pub fn clean_loss(model: &AspectModel, g: &Graph, x: &Array2<f64>, config: &TrainConfig, seed: u64) -> Result<f64> {
    let (ga, xa) = augment(g, x, config.edge_drop_rate, config.feat_mask_rate, seed)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let cb = model.constant_basis(&mut tape, &rescaled_laplacian(g, 2.0)?, x);
    let ab = model.constant_basis(&mut tape, &rescaled_laplacian(&ga, 2.0)?, &xa);
    let (l, _) = clean_loss_on_tape(&mut tape, model, &bound, &cb, &ab, (None, None), config.tau, &Negatives::Full)?;
    Ok(tape.scalar(l))
}

/// Inputs shared by every epoch of one run.
pub struct TrainContext<'a> {
    pub graph: &'a Graph,
    pub x: &'a Array2<f64>,
    clean_basis: Vec<Array2<f64>>,
}

impl<'a> TrainContext<'a> {
    pub fn new(graph: &'a Graph, x: &'a Array2<f64>, k: usize) -> Result<Self> {
        let lt = rescaled_laplacian(graph, 2.0)?;
        Ok(Self { graph, x, clean_basis: cheb_basis(&lt, &x.view(), k) })
    }
}

/// What one epoch's outer step needs from the inner loop.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub structure: Option<PerturbedStructure>,
    pub delta_a: Vec<f64>,
    pub delta_x: Array2<f64>,
    pub j_final: Option<f64>,
    pub mean_gate: f64,
}

/// Inner maximisation for the current parameters.
pub fn inner_loop(model: &AspectModel, ctx: &TrainContext<'_>, config: &TrainConfig, epoch: usize) -> Result<InnerResult> {
    let anchors = Anchors::compute(model, ctx.graph, ctx.x)?;
    let mean_gate = anchors.m.mean().unwrap_or(f64::NAN);
    if !config.adversarial() {
        return Ok(InnerResult {
            structure: None,
            delta_a: Vec::new(),
            delta_x: Array2::zeros(ctx.x.raw_dim()),
            j_final: None,
            mean_gate,
        });
    }
    let cand_seed = seed::derive_indexed(config.seed, "candidates", epoch as u64);
    let candidates = sample_candidates(ctx.graph, config.candidates_per_node, cand_seed);
    let setup = AttackSetup {
        model,
        graph: ctx.graph,
        x: ctx.x,
        candidates: &candidates,
        tau: config.tau,
        frozen_degrees: config.frozen_degrees,
        seed: seed::derive_indexed(config.seed, "attack", epoch as u64),
    };
    let out = pgd_attack(&setup, &config.attack_budget(), Some(&anchors))?;
    Ok(InnerResult {
        structure: Some(PerturbedStructure::new(ctx.graph, &candidates)?),
        delta_a: out.perturbation.delta_a,
        delta_x: out.perturbation.delta_x,
        j_final: out.trajectory.last().copied(),
        mean_gate,
    })
}

/// Build `L_total` on a tape with trainable parameters bound.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    model: &AspectModel,
    bound: &Bound,
    ctx: &TrainContext<'_>,
    inner: &InnerResult,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(Var, Var)> {
    let n = ctx.graph.n();
    let mut neg_rng = seed::rng(seed::derive_indexed(config.seed, "negatives", epoch as u64));
    let negatives = choose_negatives(n, NEGATIVE_CAP, &mut neg_rng);

    let aug_seed = seed::derive_indexed(config.seed, "augment", epoch as u64);
    let (ga, xa) = augment(ctx.graph, ctx.x, config.edge_drop_rate, config.feat_mask_rate, aug_seed)?;
    let aug_basis: Vec<Var> =
        cheb_basis(&rescaled_laplacian(&ga, 2.0)?, &xa.view(), config.k).into_iter().map(|t| tape.constant(t)).collect();
    let clean_basis: Vec<Var> = ctx.clean_basis.iter().map(|t| tape.constant(t.clone())).collect();

    let (mc, ma) = if config.dropout > 0.0 {
        let mut rng = seed::rng(seed::derive_indexed(config.seed, "dropout", epoch as u64));
        (
            Some(DropoutMasks::sample(n, ctx.x.ncols(), config.dropout, &mut rng)),
            Some(DropoutMasks::sample(n, ctx.x.ncols(), config.dropout, &mut rng)),
        )
    } else {
        (None, None)
    };
    let (l_clean, clean) =
        clean_loss_on_tape(tape, model, bound, &clean_basis, &aug_basis, (mc.as_ref(), ma.as_ref()), config.tau, &negatives)?;

    let total = match (&inner.structure, config.lambda_adv > 0.0) {
        (Some(structure), true) => {
            let n_cand = structure.num_candidates();
            let da = tape.constant(
                Array2::from_shape_vec((n_cand, 1), inner.delta_a.clone()).map_err(|e| Error::Shape(e.to_string()))?,
            );
            let xp = tape.constant(ctx.x + &inner.delta_x);
            let anchor = if config.detach_anchor { tape.constant(tape.value(clean.z).clone()) } else { clean.z };
            let inputs = AdvInputs { structure, tau: config.tau, negatives: &negatives, frozen_degrees: config.frozen_degrees };
            let fwd = adversarial_forward(tape, model, bound, &inputs, xp, da, anchor)?;
            let adv = gated_channel_loss(tape, &fwd, clean.m)?;
            let scaled = tape.scale(adv, config.lambda_adv);
            tape.add(l_clean, scaled)?
        }
        _ => l_clean,
    };
    Ok((l_clean, total))
}

/// Train a freshly initialised model on `data`.
///
/// `split` supplies the validation nodes for early stopping; without it a
/// single seeded 60/20/20 split is drawn.
pub fn train(data: &DatasetBundle, config: &TrainConfig, split: Option<&Split>) -> Result<(AspectModel, TrainHistory)> {
    config.validate()?;
    let mut rng = seed::rng(seed::derive(config.seed, "init"));
    let model = AspectModel::new(config.model_config(data.features.ncols()), &mut rng)?;
    train_model(model, data, config, split)
}

/// Continue training `model` on `data`.
pub fn train_model(
    mut model: AspectModel,
    data: &DatasetBundle,
    config: &TrainConfig,
    split: Option<&Split>,
) -> Result<(AspectModel, TrainHistory)> {
    config.validate()?;
    let owned_split;
    let split = match split {
        Some(s) => s,
        None => {
            owned_split = make_splits(data.graph.n(), 1, seed::derive(config.seed, "val-split"))?.splits.remove(0);
            &owned_split
        }
    };
    let ctx = TrainContext::new(&data.graph, &data.features, model.config.k)?;
    let mut adam = AdamState::new(model.params().iter(), AdamConfig::default());
    let settings: Vec<GroupSettings> = Param::ALL.iter().map(|&p| config.group_settings(p)).collect();
    let probe_cfg = ProbeConfig { steps: config.val_probe_steps, ..ProbeConfig::default() };

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, AspectModel)> = None;
    for epoch in 1..=config.epochs {
        let inner = inner_loop(&model, &ctx, config, epoch)?;

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let (l_clean, total) = total_loss_on_tape(&mut tape, &model, &bound, &ctx, &inner, config, epoch)?;
        let (lc, lt) = (tape.scalar(l_clean), tape.scalar(total));
        if !lc.is_finite() || !lt.is_finite() {
            let norms: Vec<String> = Param::ALL
                .iter()
                .map(|&p| format!("{}={:.3e}", p.name(), model.param(p).iter().map(|v| v * v).sum::<f64>().sqrt()))
                .collect();
            error!("non-finite loss at epoch {epoch}: clean={lc} total={lt}; {}", norms.join(" "));
            return Err(Error::Numerical(format!("non-finite loss at epoch {epoch} (clean={lc}, total={lt})")));
        }
        tape.backward(total)?;
        let grads: Vec<Array2<f64>> = Param::ALL
            .iter()
            .map(|&p| tape.grad(bound.get(p)).cloned().unwrap_or_else(|| Array2::zeros(model.param(p).raw_dim())))
            .collect();
        let grad_refs: Vec<&Array2<f64>> = grads.iter().collect();
        adam.step(&mut model.params_mut(), &grad_refs, &settings)?;

        let val_acc = if epoch % config.eval_every == 0 || epoch == config.epochs {
            let z = model.encode(&data.graph, &data.features)?.z;
            let classes = data.num_classes.max(1);
            Some(probe_split(&z, &data.labels, classes, split, &probe_cfg)?.0)
        } else {
            None
        };
        debug!("epoch {epoch}: clean {lc:.5} total {lt:.5} gate {:.4} val {val_acc:?}", inner.mean_gate);
        history.records.push(EpochRecord {
            epoch,
            l_clean: lc,
            l_total: lt,
            j_adv: inner.j_final,
            mean_gate: inner.mean_gate,
            val_acc,
        });
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, model.clone()));
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= config.patience {
                info!("early stop at epoch {epoch}, best epoch {best_epoch}");
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((acc, epoch, m)) = best {
        history.best_epoch = Some(epoch);
        history.best_val_acc = Some(acc);
        model = m;
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::{generate_mixed_graph, MixedGraphParams};

    fn tiny() -> DatasetBundle {
        let p = MixedGraphParams { n_hom: 15, n_het: 15, feat_dim: 6, p_in: 0.3, p_out: 0.03, seed: 4, ..Default::default() };
        generate_mixed_graph(&p).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig { epochs: 6, eval_every: 2, hidden_dim: 8, out_dim: 6, k: 3, ..TrainConfig::default() }
    }

    #[test]
    fn config_text_roundtrip() {
        let mut c = tiny_config();
        c.ablation = Ablation::NoRayleigh;
        c.gate_hidden = Some(12);
        c.budget.eta = 0.125;
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn config_rejects_unknown_and_invalid() {
        assert!(matches!(TrainConfig::from_text("bogus = 1"), Err(Error::Config(_))));
        assert!(TrainConfig::from_text("tau = 0").is_err());
        assert!(TrainConfig::from_text("edge_drop_rate = 1.0").is_err());
        assert!(TrainConfig::from_text("epochs").is_err());
        let c = TrainConfig::from_text("# comment\nepochs = 3 # trailing\n\nlr = 0.1").unwrap();
        assert_eq!((c.epochs, c.lr_encoder), (3, 0.1));
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let data = tiny();
        let c = TrainConfig { epochs: 0, ..tiny_config() };
        let (m, h) = train(&data, &c, None).unwrap();
        let fresh = AspectModel::new(c.model_config(6), &mut seed::rng(seed::derive(c.seed, "init"))).unwrap();
        assert_eq!(m, fresh);
        assert!(h.records.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny();
        let c = tiny_config();
        let (a, ha) = train(&data, &c, None).unwrap();
        let (b, hb) = train(&data, &c, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.records.len() <= c.epochs);
    }

    #[test]
    fn no_gate_broadcasts_one_scalar() {
        let data = tiny();
        let c = TrainConfig { ablation: Ablation::NoGate, ..tiny_config() };
        let (m, _) = train(&data, &c, None).unwrap();
        let e = m.encode(&data.graph, &data.features).unwrap();
        assert!(e.m.iter().all(|&v| v == e.m[0]));
    }

    #[test]
    fn zero_lambda_adv_total_equals_clean() {
        let data = tiny();
        let c = TrainConfig { lambda_adv: 0.0, ..tiny_config() };
        let (_, h) = train(&data, &c, None).unwrap();
        assert!(h.records.iter().all(|r| r.l_total == r.l_clean));
    }

    #[test]
    fn identical_views_minimise_clean_loss() {
        let data = tiny();
        let c = TrainConfig { edge_drop_rate: 0.0, feat_mask_rate: 0.0, ..tiny_config() };
        let model = AspectModel::new(c.model_config(6), &mut seed::rng(0)).unwrap();
        let l = clean_loss(&model, &data.graph, &data.features, &c, 0).unwrap();
        assert!(l.is_finite() && l >= 0.0);
        let z = model.encode(&data.graph, &data.features).unwrap().z;
        let direct = crate::diffnet::info_nce_value(&z, &z, c.tau).unwrap() * z.nrows() as f64;
        assert!((l - direct).abs() < 1e-12);
    }
}
