//! End-to-end acceptance run. Prints one PASS/FAIL/SKIP line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The Cora smoke run looks for a dataset directory in `ASPECT_CORA_DIR`,
//! falling back to `data/cora` at the workspace root.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use aspect_core::adversary::{apply_perturbation, dice_attack, pgd_attack, sample_candidates, AttackSetup};
use aspect_core::cheb::{apply_filter, ascending_nodes, FilterBank};
use aspect_core::eval::{evaluate_poisoned, fusion_sweep, gate_diagnostics, gate_vec, linear_probe, ProbeConfig};
use aspect_core::graphcore::{
    generate_mixed_graph, load_dataset, local_homophily, make_splits, rescaled_laplacian, DatasetBundle, Graph,
    MixedGraphParams,
};
use aspect_core::model::AspectModel;
use aspect_core::seed;
use aspect_core::theory::run_theory_suite;
use aspect_core::trainer::{train, Ablation, TrainConfig};

use common::{all_passed, gradient_suite, mechanism_config, mechanism_graph};

const SEEDS: u64 = 5;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn judge(ok: bool, elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    let in_time = elapsed < limit;
    let detail = format!("{detail}; {:.1}s of {}s", elapsed.as_secs_f64(), limit.as_secs());
    Outcome { verdict: if ok && in_time { Verdict::Pass } else { Verdict::Fail }, detail }
}

fn report(id: usize, name: &str, o: &Outcome) -> bool {
    let tag = match o.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Skip => "SKIP",
    };
    println!("criterion {id} {tag} {name}: {}", o.detail);
    !matches!(o.verdict, Verdict::Fail)
}

/// `Σ_k w_k T_k(x)` through the trigonometric form, independent of the
/// recurrence.
fn cheb_trig(w: &[f64], x: f64) -> f64 {
    let theta = x.clamp(-1.0, 1.0).acos();
    w.iter().enumerate().map(|(k, c)| c * (k as f64 * theta).cos()).sum()
}

fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    Graph::from_pairs(n, pairs, true).expect("graph")
}

fn filter_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(seed::derive(1, "filter-oracle"));
    let (mut worst_filter, mut worst_interp) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(5..=200);
        let g = random_graph(n, rng.random_range(0.01..0.2), &mut rng);
        let k = rng.random_range(1..=10);
        let delta_l: Vec<f64> = (0..=k).map(|_| rng.random_range(-0.2..1.0)).collect();
        let delta_h: Vec<f64> = (0..=k).map(|_| rng.random_range(-0.2..1.0)).collect();
        let coeffs = FilterBank::new(k, delta_l, delta_h).expect("bank").coeffs();
        let x = Array2::from_shape_fn((n, 3), |_| rng.sample(StandardNormal));

        let lt = rescaled_laplacian(&g, 2.0).expect("laplacian");
        let dense = lt.to_dense();
        let eig = DMatrix::from_fn(n, n, |i, j| dense[[i, j]]).symmetric_eigen();
        let xm = DMatrix::from_fn(n, 3, |i, j| x[[i, j]]);
        for (w, gamma) in [(&coeffs.w_l, &coeffs.gamma_l), (&coeffs.w_h, &coeffs.gamma_h)] {
            let resp = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| cheb_trig(w, l)));
            let oracle = &eig.eigenvectors * resp * eig.eigenvectors.transpose() * &xm;
            let got = apply_filter(&lt, w, &x.view()).expect("filter");
            let diff: f64 = (0..n)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| (got[[i, j]] - oracle[(i, j)]).powi(2))
                .sum::<f64>()
                .sqrt();
            worst_filter = worst_filter.max(diff / oracle.norm().max(1e-300));
            for (xj, gj) in ascending_nodes(k).iter().zip(gamma) {
                worst_interp = worst_interp.max((cheb_trig(w, *xj) - gj).abs());
            }
        }
    }
    judge(
        worst_filter <= 1e-8 && worst_interp <= 1e-10,
        start.elapsed(),
        Duration::from_secs(30),
        format!("max filter rel err {worst_filter:.2e}, max interpolation err {worst_interp:.2e}"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let suite = gradient_suite();
    let failed: Vec<&str> = suite.iter().filter(|(_, c)| !all_passed(c)).map(|(n, _)| n.as_str()).collect();
    let coords: usize = suite.iter().map(|(_, c)| c.checked).sum();
    let worst = suite.iter().map(|(_, c)| c.max_rel_err).fold(0.0, f64::max);
    let detail = if failed.is_empty() {
        format!("{} checks, {coords} coordinates, max rel err {worst:.2e}", suite.len())
    } else {
        format!("failing: {}", failed.join(", "))
    };
    judge(failed.is_empty(), start.elapsed(), Duration::from_secs(120), detail)
}

fn theory() -> (Outcome, Outcome) {
    let start = Instant::now();
    let r = run_theory_suite(2024).expect("theory suite");
    let elapsed = start.elapsed();
    let p = &r.prop1;
    let mc_ok = p.monte_carlo.iter().all(|m| m.within_3se);
    let prop1 = judge(
        p.passed == 100 && p.trials == 100 && mc_ok && !p.monte_carlo.is_empty(),
        elapsed,
        Duration::from_secs(120),
        format!("{}/{} trials, {} Monte-Carlo checks within 3 SE: {mc_ok}", p.passed, p.trials, p.monte_carlo.len()),
    );
    let t = &r.theorem1;
    let thm1 = judge(
        t.passed == 100 && t.cases.len() == 100 && t.point_mass.tight && t.point_mass.argmin_ok,
        elapsed,
        Duration::from_secs(60),
        format!(
            "{}/{} landscapes, min gap {:.2e}, point mass gap {:.1e}, argmin {:.4} vs {:.4}",
            t.passed,
            t.cases.len(),
            t.min_gap,
            t.point_mass.gap,
            t.point_mass.grid_argmin,
            t.point_mass.expected_argmin
        ),
    );
    (prop1, thm1)
}

fn attack_validity() -> Outcome {
    let start = Instant::now();
    let runs = 20;
    let (mut within, mut rose, mut gap_held) = (0, 0, 0);
    for s in 0..runs {
        let data = mechanism_graph(100 + s);
        let mut config = mechanism_config(100 + s);
        config.epochs = 30;
        config.eval_every = 30;
        config.patience = 30;
        let (model, _) = train(&data, &config, None).expect("training");
        let cand = sample_candidates(&data.graph, config.candidates_per_node, seed::derive(s, "eval-candidates"));
        let setup = AttackSetup {
            model: &model,
            graph: &data.graph,
            x: &data.features,
            candidates: &cand,
            tau: config.tau,
            frozen_degrees: config.frozen_degrees,
            seed: seed::derive(s, "eval-attack"),
        };
        let mut budget = config.attack_budget();
        budget.lambda_spec = data.graph.n() as f64;
        let out = pgd_attack(&setup, &budget, None).expect("attack");
        let slack = 1.0 + 1e-9;
        if out.step_norms.len() == budget.steps
            && out.step_norms.iter().all(|&(a, x)| a <= budget.eps_a * slack && x <= budget.eps_x * slack)
        {
            within += 1;
        }
        if out.trajectory.last() > out.trajectory.first() {
            rose += 1;
        }
        if out.rayleigh_gaps.last() >= out.rayleigh_gaps.first() {
            gap_held += 1;
        }
    }
    let ok = within == runs && rose * 100 >= 95 * runs && gap_held * 100 >= 90 * runs;
    judge(
        ok,
        start.elapsed(),
        Duration::from_secs(300),
        format!("budgets held {within}/{runs}, J rose {rose}/{runs}, Rayleigh gap held {gap_held}/{runs}"),
    )
}

struct Seeded {
    data: DatasetBundle,
    model: AspectModel,
    config: TrainConfig,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Clean and poisoned accuracy per variant on the unit-noise graph, where
/// clean accuracy is not saturated.
fn ablation() -> Outcome {
    let start = Instant::now();
    let probe = ProbeConfig::default();
    let mut poisoned_acc = vec![Vec::new(); Ablation::ALL.len()];
    let mut drops = vec![Vec::new(); Ablation::ALL.len()];
    for s in 0..SEEDS {
        let data = generate_mixed_graph(&MixedGraphParams { seed: s, ..Default::default() }).expect("graph");
        let splits = make_splits(data.graph.n(), 5, seed::derive(s, "splits")).expect("splits");
        let dice = dice_attack(&data.graph, &data.labels, 0.1, seed::derive(s, "dice")).expect("dice");
        let poisoned = data.with_graph(dice.graph);
        for (i, &ab) in Ablation::ALL.iter().enumerate() {
            let config = TrainConfig { ablation: ab, ..mechanism_config(s) };
            let (model, _) = train(&data, &config, splits.splits.first()).expect("clean training");
            let z = model.encode(&data.graph, &data.features).expect("encode").z;
            let clean = linear_probe(&z, &data.labels, &splits, &probe).expect("probe");
            let p = evaluate_poisoned(&config, &poisoned, &splits, Some(&clean), &probe).expect("poisoned");
            poisoned_acc[i].push(p.probe.mean);
            drops[i].push(p.drop_percent.expect("drop"));
        }
    }
    let acc: Vec<f64> = poisoned_acc.iter().map(|v| mean(v)).collect();
    let drop: Vec<f64> = drops.iter().map(|v| mean(v)).collect();
    let full_best = acc[1..].iter().all(|&a| acc[0] >= a);
    let no_adv = Ablation::ALL.iter().position(|&a| a == Ablation::NoAdversarial).expect("variant");
    let largest_drop = drop.iter().all(|&d| drop[no_adv] >= d);
    let table: Vec<String> = Ablation::ALL
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{} acc {:.4} drop {:+.2}%", a.name(), acc[i], drop[i]))
        .collect();
    let full = Ablation::ALL.iter().position(|&a| a == Ablation::None).expect("variant");
    let paired = (0..drops[full].len()).filter(|&k| drops[full][k] < drops[no_adv][k]).count();
    judge(
        full_best && largest_drop,
        start.elapsed(),
        Duration::from_secs(1200),
        format!("{}; full model drops less than no_adversarial in {paired}/{SEEDS} seeds", table.join(", ")),
    )
}

fn mechanism_models() -> Vec<Seeded> {
    (0..SEEDS)
        .map(|s| {
            let data = mechanism_graph(s);
            let config = mechanism_config(s);
            let splits = make_splits(data.graph.n(), 5, seed::derive(s, "splits")).expect("splits");
            let (model, _) = train(&data, &config, splits.splits.first()).expect("training");
            Seeded { data, model, config }
        })
        .collect()
}

fn mechanism(models: &[Seeded]) -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut ok = !models.is_empty();
    for (s, m) in models.iter().enumerate() {
        let e = m.model.encode(&m.data.graph, &m.data.features).expect("encode");
        let h = local_homophily(&m.data.graph, &m.data.labels);
        let cand = sample_candidates(&m.data.graph, m.config.candidates_per_node, seed::derive(s as u64, "eval-candidates"));
        let setup = AttackSetup {
            model: &m.model,
            graph: &m.data.graph,
            x: &m.data.features,
            candidates: &cand,
            tau: m.config.tau,
            frozen_degrees: m.config.frozen_degrees,
            seed: seed::derive(s as u64, "eval-attack"),
        };
        let out = pgd_attack(&setup, &m.config.attack_budget(), None).expect("attack");
        let (g2, x2) = apply_perturbation(&m.data.graph, &m.data.features, &out.perturbation).expect("apply");
        let attacked = gate_vec(&m.model.encode(&g2, &x2).expect("encode").m);
        let d = gate_diagnostics(&gate_vec(&e.m), &attacked, &h).expect("diagnostics");
        ok &= d.spearman_rho > 0.0 && d.mean_shift > 0.0;
        rows.push(format!("rho {:+.3} shift {:+.4}", d.spearman_rho, d.mean_shift));
    }
    judge(ok, start.elapsed(), Duration::from_secs(600), format!("per seed: {}", rows.join("; ")))
}

fn fusion_regret(models: &[Seeded]) -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    for (s, m) in models.iter().enumerate() {
        let e = m.model.encode(&m.data.graph, &m.data.features).expect("encode");
        let splits = make_splits(m.data.graph.n(), 5, seed::derive(s as u64, "splits")).expect("splits");
        let sw = fusion_sweep(&e.z_l, &e.z_h, &gate_vec(&e.m), &m.data.labels, &splits.splits[0], 101, &ProbeConfig::default())
            .expect("sweep");
        if sw.nodewise_wins() {
            wins += 1;
        }
        rows.push(format!(
            "node-wise {:.4} vs best global {:.4} at m {:.2}",
            sw.nodewise_risk, sw.best_global_risk, sw.best_global_m
        ));
    }
    judge(
        wins >= 4 && models.len() == SEEDS as usize,
        start.elapsed(),
        Duration::from_secs(1800),
        format!("node-wise wins {wins}/{}: {}", models.len(), rows.join("; ")),
    )
}

fn cora_dir() -> PathBuf {
    std::env::var_os("ASPECT_CORA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/cora"))
}

fn cora_smoke() -> Outcome {
    let dir = cora_dir();
    if !dir.join("edges.csv").exists() {
        return Outcome { verdict: Verdict::Skip, detail: format!("no dataset at {}", dir.display()) };
    }
    let start = Instant::now();
    let data = load_dataset(&dir).expect("Cora loads");
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/cora.cfg");
    let mut config = TrainConfig::from_text(&std::fs::read_to_string(cfg).expect("cora config")).expect("config parses");
    config.epochs = 500;
    let splits = make_splits(data.graph.n(), 10, seed::derive(0, "splits")).expect("splits");
    let (model, _) = train(&data, &config, splits.splits.first()).expect("training");
    let z = model.encode(&data.graph, &data.features).expect("encode").z;
    let acc = linear_probe(&z, &data.labels, &splits, &ProbeConfig::default()).expect("probe");
    judge(acc.mean >= 0.8, start.elapsed(), Duration::from_secs(7200), format!("clean accuracy {:.4}", acc.mean))
}

fn main() {
    let mut ok = true;
    ok &= report(1, "filter oracle", &filter_oracle());
    ok &= report(2, "gradient suite", &gradients());
    let (p1, t1) = theory();
    ok &= report(3, "variance of the channels", &p1);
    ok &= report(4, "global fusion regret bound", &t1);
    ok &= report(5, "attack validity", &attack_validity());
    ok &= report(6, "ablation ordering under poisoning", &ablation());
    let models = mechanism_models();
    ok &= report(7, "gate mechanism", &mechanism(&models));
    ok &= report(8, "node-wise fusion against global sweep", &fusion_regret(&models));
    ok &= report(9, "Cora smoke run", &cora_smoke());
    if !ok {
        std::process::exit(1);
    }
}
