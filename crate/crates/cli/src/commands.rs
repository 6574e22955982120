use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use aspect_core::adversary::{
    apply_perturbation, dice_attack, pgd_attack, sample_candidates, AttackSetup,
};
use aspect_core::eval::{
    evaluate_poisoned, gate_diagnostics, gate_vec, gates_csv, histogram_csv, linear_probe, GateDiagnostics,
    ProbeConfig, ProbeResult,
};
use aspect_core::graphcore::{
    edge_homophily, generate_mixed_graph, load_dataset, local_homophily, make_splits, node_homophily,
    write_dataset, DatasetBundle, MixedGraphParams, SplitSet,
};
use aspect_core::model::AspectModel;
use aspect_core::seed;
use aspect_core::theory::run_theory_suite;
use aspect_core::trainer::{train, Ablation, TrainConfig};
use aspect_core::{Error, Result};

use crate::manifest::RunManifest;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,
    pub overrides: Vec<(String, String)>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &serde_json::to_string_pretty(value).expect("json serialises"))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn create_out(out: &Path, inputs: &[&Path]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    let out_c = out.canonicalize().map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    for input in inputs {
        if let Ok(c) = input.canonicalize() {
            if c == out_c || (c.is_dir() && out_c.starts_with(&c)) {
                return Err(Error::InvalidArgument(format!(
                    "output directory {} lies inside input {}",
                    out.display(),
                    input.display()
                )));
            }
        }
    }
    Ok(())
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::InvalidArgument(format!("{flag} is required")))
}

/// Config file, then `--set` overrides, then the dedicated flags.
pub fn resolve_train_config(common: &Common, ablation: Option<Ablation>) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    if let Some(p) = &common.config {
        c.apply_text(&read_text(p)?)?;
    }
    for (k, v) in &common.overrides {
        c.set(k, v)?;
    }
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(a) = ablation {
        c.ablation = a;
    }
    c.validate()?;
    Ok(c)
}

fn config_map(c: &TrainConfig) -> std::collections::BTreeMap<String, String> {
    c.to_text()
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect()
}

fn splits_for(data: &DatasetBundle, n_splits: usize, master: u64) -> Result<SplitSet> {
    make_splits(data.graph.n(), n_splits, seed::derive(master, "splits"))
}

fn note_threads(threads: usize) {
    if threads > 1 {
        info!("--threads {threads}: all kernels run sequentially, results do not depend on it");
    }
}

// ---- synth -----------------------------------------------------------------

fn set_synth(p: &mut MixedGraphParams, key: &str, v: &str) -> Result<()> {
    let v = v.trim();
    let bad = |e: String| Error::Config(format!("{key} = {v:?}: {e}"));
    match key {
        "n_hom" => p.n_hom = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "n_het" => p.n_het = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "classes" => p.classes = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "feat_dim" => p.feat_dim = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "p_in" => p.p_in = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        "p_out" => p.p_out = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        "p_bridge" => p.p_bridge = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        "noise" => p.noise = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        "seed" => p.seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        _ => return Err(Error::Config(format!("unknown synth key {key:?}"))),
    }
    Ok(())
}

pub fn synth(common: &Common, manifest: &mut RunManifest) -> Result<()> {
    let mut p = MixedGraphParams::default();
    if let Some(path) = &common.config {
        manifest.add_input(path)?;
        for (i, raw) in read_text(path)?.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            set_synth(&mut p, k.trim(), v)?;
        }
    }
    for (k, v) in &common.overrides {
        set_synth(&mut p, k, v)?;
    }
    if let Some(s) = common.seed {
        p.seed = s;
    }
    create_out(&common.out, &[])?;
    manifest.seeds.insert("master".into(), p.seed);
    manifest.seeds.insert("mixed-graph".into(), seed::derive(p.seed, "mixed-graph"));
    for (k, v) in [
        ("n_hom", p.n_hom.to_string()),
        ("n_het", p.n_het.to_string()),
        ("classes", p.classes.to_string()),
        ("p_in", p.p_in.to_string()),
        ("p_out", p.p_out.to_string()),
        ("p_bridge", p.p_bridge.to_string()),
        ("feat_dim", p.feat_dim.to_string()),
        ("noise", p.noise.to_string()),
    ] {
        manifest.config.insert(k.into(), v);
    }
    manifest.write()?;

    let bundle = generate_mixed_graph(&p)?;
    write_dataset(&common.out, &bundle)?;
    for f in ["edges.csv", "features.csv", "labels.csv", "meta.json"] {
        manifest.add_output(&common.out.join(f))?;
    }
    Ok(())
}

// ---- train -----------------------------------------------------------------

pub fn train_cmd(common: &Common, ablation: Option<Ablation>, manifest: &mut RunManifest) -> Result<()> {
    note_threads(common.threads);
    let config = resolve_train_config(common, ablation)?;
    let data_dir = require(&common.data, "--data")?;
    manifest.add_input(data_dir)?;
    if let Some(c) = &common.config {
        manifest.add_input(c)?;
    }
    create_out(&common.out, &[data_dir])?;
    manifest.config = config_map(&config);
    manifest.seeds.insert("master".into(), config.seed);
    manifest.seeds.insert("init".into(), seed::derive(config.seed, "init"));
    manifest.seeds.insert("splits".into(), seed::derive(config.seed, "splits"));
    manifest.write()?;

    let data = load_dataset(data_dir)?;
    let splits = splits_for(&data, 1, config.seed)?;
    let (model, history) = train(&data, &config, splits.splits.first())?;

    let ck = common.out.join(CHECKPOINT_FILE);
    model.save(&ck)?;
    let curves = common.out.join("curves.csv");
    write(&curves, &history.to_csv())?;
    let cfg = common.out.join("config.cfg");
    write(&cfg, &config.to_text())?;
    for p in [ck, curves, cfg] {
        manifest.add_output(&p)?;
    }
    Ok(())
}

// ---- attack ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Pgd,
    Dice,
}

#[derive(Debug, Clone, Serialize)]
struct AttackSummary {
    attack: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    removed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    added: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    norm_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    norm_x: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    objective: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    rayleigh_gap: Vec<f64>,
    edge_homophily_before: f64,
    edge_homophily_after: f64,
}

pub fn attack_cmd(
    common: &Common,
    kind: AttackKind,
    rate: f64,
    checkpoint: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<()> {
    note_threads(common.threads);
    let config = resolve_train_config(common, None)?;
    let data_dir = require(&common.data, "--data")?;
    manifest.add_input(data_dir)?;
    if let Some(c) = checkpoint {
        manifest.add_input(c)?;
    }
    create_out(&common.out, &[data_dir])?;
    manifest.config = config_map(&config);
    manifest.config.insert("attack".into(), if kind == AttackKind::Pgd { "pgd" } else { "dice" }.into());
    manifest.config.insert("rate".into(), rate.to_string());
    manifest.seeds.insert("master".into(), config.seed);
    manifest.write()?;

    let data = load_dataset(data_dir)?;
    let before = edge_homophily(&data.graph, &data.labels);
    let poisoned_dir = common.out.join("poisoned");
    let mut outputs = Vec::new();
    let summary = match kind {
        AttackKind::Dice => {
            manifest.seeds.insert("dice".into(), seed::derive(config.seed, "dice"));
            let out = dice_attack(&data.graph, &data.labels, rate, config.seed)?;
            let poisoned = data.with_graph(out.graph);
            write_dataset(&poisoned_dir, &poisoned)?;
            AttackSummary {
                attack: "dice",
                rate: Some(rate),
                removed: Some(out.removed),
                added: Some(out.added),
                norm_a: None,
                norm_x: None,
                objective: Vec::new(),
                rayleigh_gap: Vec::new(),
                edge_homophily_before: before,
                edge_homophily_after: edge_homophily(&poisoned.graph, &poisoned.labels),
            }
        }
        AttackKind::Pgd => {
            let ck = checkpoint.ok_or_else(|| Error::InvalidArgument("--checkpoint is required for pgd".into()))?;
            let model = AspectModel::load(ck)?;
            let cand_seed = seed::derive(config.seed, "candidates");
            let attack_seed = seed::derive(config.seed, "attack");
            manifest.seeds.insert("candidates".into(), cand_seed);
            manifest.seeds.insert("attack".into(), attack_seed);
            let cand = sample_candidates(&data.graph, config.candidates_per_node, cand_seed);
            let setup = AttackSetup {
                model: &model,
                graph: &data.graph,
                x: &data.features,
                candidates: &cand,
                tau: config.tau,
                frozen_degrees: config.frozen_degrees,
                seed: attack_seed,
            };
            let outcome = pgd_attack(&setup, &config.attack_budget(), None)?;
            let (g2, x2) = apply_perturbation(&data.graph, &data.features, &outcome.perturbation)?;
            let mut poisoned = data.with_graph(g2);
            poisoned.features = x2;
            write_dataset(&poisoned_dir, &poisoned)?;
            let pert_dir = common.out.join("perturbation");
            fs::create_dir_all(&pert_dir).map_err(|e| Error::Io { path: pert_dir.clone(), source: e })?;
            outcome.perturbation.write(&pert_dir)?;
            outputs.push(pert_dir);
            AttackSummary {
                attack: "pgd",
                rate: None,
                removed: None,
                added: None,
                norm_a: Some(outcome.perturbation.norm_a()),
                norm_x: Some(outcome.perturbation.norm_x()),
                edge_homophily_after: edge_homophily(&poisoned.graph, &poisoned.labels),
                objective: outcome.trajectory,
                rayleigh_gap: outcome.rayleigh_gaps,
                edge_homophily_before: before,
            }
        }
    };
    let summary_path = common.out.join("attack.json");
    write_json(&summary_path, &summary)?;
    outputs.push(poisoned_dir);
    outputs.push(summary_path);
    for p in outputs {
        manifest.add_output(&p)?;
    }
    Ok(())
}

// ---- eval ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Clean,
    Poisoned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub dataset: String,
    pub protocol: String,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub per_split: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_percent: Option<f64>,
    pub edge_homophily: f64,
    pub node_homophily: f64,
}

pub struct EvalArgs<'a> {
    pub protocol: Protocol,
    pub checkpoint: Option<&'a Path>,
    pub clean_metrics: Option<&'a Path>,
    pub splits: usize,
    pub ablation: Option<Ablation>,
}

pub fn eval_cmd(common: &Common, args: &EvalArgs<'_>, manifest: &mut RunManifest) -> Result<()> {
    note_threads(common.threads);
    let config = resolve_train_config(common, args.ablation)?;
    let data_dir = require(&common.data, "--data")?;
    manifest.add_input(data_dir)?;
    for p in [args.checkpoint, args.clean_metrics].into_iter().flatten() {
        manifest.add_input(p)?;
    }
    create_out(&common.out, &[data_dir])?;
    manifest.config = config_map(&config);
    manifest.config.insert("splits".into(), args.splits.to_string());
    manifest.seeds.insert("master".into(), config.seed);
    manifest.seeds.insert("splits".into(), seed::derive(config.seed, "splits"));
    manifest.write()?;

    let data = load_dataset(data_dir)?;
    let splits = splits_for(&data, args.splits, config.seed)?;
    let probe_cfg = ProbeConfig::default();
    let clean: Option<ProbeResult> = match args.clean_metrics {
        Some(p) => {
            let m: Metrics = serde_json::from_str(&read_text(p)?)
                .map_err(|e| Error::Parse { file: p.display().to_string(), line: 0, msg: e.to_string() })?;
            Some(ProbeResult::from_accuracies(m.per_split.clone(), Vec::new()))
        }
        None => None,
    };

    let (result, protocol, drop) = match args.protocol {
        Protocol::Clean => {
            let model = match args.checkpoint {
                Some(ck) => AspectModel::load(ck)?,
                None => train(&data, &config, splits.splits.first())?.0,
            };
            let z = model.encode(&data.graph, &data.features)?.z;
            (linear_probe(&z, &data.labels, &splits, &probe_cfg)?, "clean", None)
        }
        Protocol::Poisoned => {
            if args.checkpoint.is_some() {
                warn!("--checkpoint ignored: the poisoned protocol retrains on the attacked graph");
            }
            let out = evaluate_poisoned(&config, &data, &splits, clean.as_ref(), &probe_cfg)?;
            (out.probe, "poisoned", out.drop_percent)
        }
    };
    if args.protocol == Protocol::Clean && clean.is_some() {
        warn!("--clean-metrics has no effect under the clean protocol");
    }

    let metrics = Metrics {
        dataset: data.name.clone(),
        protocol: protocol.into(),
        accuracy_mean: result.mean,
        accuracy_std: result.std,
        per_split: result.per_split,
        drop_percent: drop,
        edge_homophily: edge_homophily(&data.graph, &data.labels),
        node_homophily: node_homophily(&data.graph, &data.labels),
    };
    let path = common.out.join("metrics.json");
    write_json(&path, &metrics)?;
    manifest.add_output(&path)?;
    Ok(())
}

// ---- diagnose --------------------------------------------------------------

pub fn diagnose_cmd(common: &Common, checkpoint: &Path, manifest: &mut RunManifest) -> Result<()> {
    note_threads(common.threads);
    let config = resolve_train_config(common, None)?;
    let data_dir = require(&common.data, "--data")?;
    manifest.add_input(data_dir)?;
    manifest.add_input(checkpoint)?;
    create_out(&common.out, &[data_dir])?;
    manifest.config = config_map(&config);
    let cand_seed = seed::derive(config.seed, "candidates");
    let attack_seed = seed::derive(config.seed, "attack");
    manifest.seeds.insert("master".into(), config.seed);
    manifest.seeds.insert("candidates".into(), cand_seed);
    manifest.seeds.insert("attack".into(), attack_seed);
    manifest.write()?;

    let data = load_dataset(data_dir)?;
    let model = AspectModel::load(checkpoint)?;
    let cand = sample_candidates(&data.graph, config.candidates_per_node, cand_seed);
    let setup = AttackSetup {
        model: &model,
        graph: &data.graph,
        x: &data.features,
        candidates: &cand,
        tau: config.tau,
        frozen_degrees: config.frozen_degrees,
        seed: attack_seed,
    };
    let outcome = pgd_attack(&setup, &config.attack_budget(), None)?;
    let (g2, x2) = apply_perturbation(&data.graph, &data.features, &outcome.perturbation)?;
    let m_clean = gate_vec(&model.encode(&data.graph, &data.features)?.m);
    let m_att = gate_vec(&model.encode(&g2, &x2)?.m);
    let h = local_homophily(&data.graph, &data.labels);
    let diag: GateDiagnostics = gate_diagnostics(&m_clean, &m_att, &h)?;

    let gates = common.out.join("gates.csv");
    write(&gates, &gates_csv(&m_clean, &m_att, &h))?;
    let hist = common.out.join("gate_histogram.csv");
    write(&hist, &histogram_csv(&diag))?;
    let summary = common.out.join("diagnostics.json");
    write_json(&summary, &diag)?;
    for p in [gates, hist, summary] {
        manifest.add_output(&p)?;
    }
    Ok(())
}

// ---- verify ----------------------------------------------------------------

pub fn verify_cmd(common: &Common, manifest: &mut RunManifest) -> Result<()> {
    note_threads(common.threads);
    let s = common.seed.unwrap_or(0);
    create_out(&common.out, &[])?;
    manifest.seeds.insert("master".into(), s);
    manifest.write()?;
    let report = run_theory_suite(s)?;
    let path = common.out.join("theory_report.json");
    write_json(&path, &report)?;
    manifest.add_output(&path)?;
    if report.all_pass {
        Ok(())
    } else {
        Err(Error::Numerical(format!("theory checks failed, see {}", path.display())))
    }
}
