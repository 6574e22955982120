//! Linear probing, poisoning protocol, and gate diagnostics.

use log::warn;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffnet::{AdamConfig, AdamState, GroupSettings};
use crate::graphcore::{DatasetBundle, Split, SplitSet};
use crate::model::{fuse, AspectModel};
use crate::trainer::{train, TrainConfig, TrainHistory};
use crate::{Error, Result};

/// Softmax-regression probe settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { steps: 1000, lr: 0.01, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Test accuracy per split, in split order.
    pub per_split: Vec<f64>,
    pub per_split_val: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `per_split`.
    pub std: f64,
}

impl ProbeResult {
    pub fn from_accuracies(per_split: Vec<f64>, per_split_val: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_split);
        Self { per_split, per_split_val, mean, std }
    }

    pub fn val_mean(&self) -> f64 {
        mean_std(&self.per_split_val).0
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trained probe weights for one split.
#[derive(Debug, Clone)]
pub struct Probe {
    w: Array2<f64>,
    b: Array2<f64>,
}

impl Probe {
    pub fn logits(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.w) + &self.b
    }

    pub fn predict(&self, z: &Array2<f64>) -> Vec<usize> {
        self.logits(z)
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn accuracy(&self, z: &Array2<f64>, labels: &[usize], idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return f64::NAN;
        }
        let zs = z.select(Axis(0), idx);
        let pred = self.predict(&zs);
        let hits = pred.iter().zip(idx).filter(|(p, &i)| **p == labels[i]).count();
        hits as f64 / idx.len() as f64
    }

    /// Mean negative log-likelihood of the true labels over `idx`.
    pub fn cross_entropy(&self, z: &Array2<f64>, labels: &[usize], idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return f64::NAN;
        }
        let logits = self.logits(&z.select(Axis(0), idx));
        let total: f64 = logits
            .rows()
            .into_iter()
            .zip(idx)
            .map(|(r, &i)| {
                let mx = r.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let lse = mx + r.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                lse - r[labels[i]]
            })
            .sum();
        total / idx.len() as f64
    }
}

/// Full-batch multinomial logistic regression on `z[train]`, zero-initialised.
pub fn fit_probe(z: &Array2<f64>, labels: &[usize], classes: usize, train: &[usize], cfg: &ProbeConfig) -> Result<Probe> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("probe input has non-finite entries".into()));
    }
    if z.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} embeddings for {} labels", z.nrows(), labels.len())));
    }
    let classes = classes.max(1);
    let first = train.first().map(|&i| labels[i]);
    if train.iter().all(|&i| Some(labels[i]) == first) {
        warn!("probe training split contains a single class");
    }
    let d = z.ncols();
    let zt = z.select(Axis(0), train);
    let mut y = Array2::<f64>::zeros((train.len(), classes));
    for (r, &i) in train.iter().enumerate() {
        y[[r, labels[i]]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((d, classes));
    let mut b = Array2::<f64>::zeros((1, classes));
    let mut adam = AdamState::new([&w, &b], AdamConfig::default());
    let settings = [
        GroupSettings { lr: cfg.lr, weight_decay: cfg.weight_decay },
        GroupSettings { lr: cfg.lr, weight_decay: 0.0 },
    ];
    let n = train.len().max(1) as f64;
    for _ in 0..cfg.steps {
        let mut p = zt.dot(&w) + &b;
        for mut row in p.rows_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - mx).exp());
            let s = row.sum();
            row /= s;
        }
        let diff = (p - &y) / n;
        let gw = zt.t().dot(&diff);
        let gb = diff.sum_axis(Axis(0)).insert_axis(Axis(0));
        adam.step(&mut [&mut w, &mut b], &[&gw, &gb], &settings)?;
    }
    Ok(Probe { w, b })
}

/// Probe every split; test accuracy is the headline number.
pub fn linear_probe(z: &Array2<f64>, labels: &[usize], splits: &SplitSet, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let mut test = Vec::with_capacity(splits.splits.len());
    let mut val = Vec::with_capacity(splits.splits.len());
    for s in &splits.splits {
        let (v, t) = probe_split(z, labels, classes, s, cfg)?;
        val.push(v);
        test.push(t);
    }
    Ok(ProbeResult::from_accuracies(test, val))
}

/// `(validation, test)` accuracy of a probe fitted on `split.train`.
pub fn probe_split(z: &Array2<f64>, labels: &[usize], classes: usize, split: &Split, cfg: &ProbeConfig) -> Result<(f64, f64)> {
    let probe = fit_probe(z, labels, classes, &split.train, cfg)?;
    Ok((probe.accuracy(z, labels, &split.val), probe.accuracy(z, labels, &split.test)))
}

/// `(clean − attacked) / clean · 100`.
pub fn drop_percent(clean: f64, attacked: f64) -> f64 {
    (clean - attacked) / clean * 100.0
}

#[derive(Debug, Clone)]
pub struct PoisonedEvaluation {
    pub model: AspectModel,
    pub history: TrainHistory,
    pub probe: ProbeResult,
    pub drop_percent: Option<f64>,
}

/// Train on the poisoned bundle and probe on the same poisoned graph.
pub fn evaluate_poisoned(
    config: &TrainConfig,
    poisoned: &DatasetBundle,
    splits: &SplitSet,
    clean: Option<&ProbeResult>,
    probe: &ProbeConfig,
) -> Result<PoisonedEvaluation> {
    let (model, history) = train(poisoned, config, splits.splits.first())?;
    let z = model.encode(&poisoned.graph, &poisoned.features)?.z;
    let result = linear_probe(&z, &poisoned.labels, splits, probe)?;
    let drop = clean.map(|c| drop_percent(c.mean, result.mean));
    if clean.is_none() {
        warn!("no clean metrics supplied; drop percentage omitted");
    }
    Ok(PoisonedEvaluation { model, history, probe: result, drop_percent: drop })
}

/// Ranks starting at 1, ties receive their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation; constant input gives 0 with a warning.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InvalidArgument(format!("spearman needs equal lengths ≥ 3, got {} and {}", x.len(), y.len())));
    }
    match pearson(&average_ranks(x), &average_ranks(y)) {
        Some(r) => Ok(r),
        None => {
            warn!("spearman: constant input, returning 0");
            Ok(0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBin {
    pub h_low: f64,
    pub h_high: f64,
    pub size: usize,
    pub mean_gate: f64,
    pub std_gate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDiagnostics {
    pub spearman_rho: f64,
    pub bins: Vec<QuantileBin>,
    pub mean_clean: f64,
    pub mean_attacked: f64,
    /// `mean(m_attacked) − mean(m_clean)`.
    pub mean_shift: f64,
    /// `median(m_attacked) − median(m_clean)`.
    pub median_shift: f64,
    #[serde(skip)]
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub clean: usize,
    pub attacked: usize,
}

pub const QUANTILE_BINS: usize = 5;
pub const HISTOGRAM_BINS: usize = 50;

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn histogram(v: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &x in v {
        let b = ((x * HISTOGRAM_BINS as f64).floor() as isize).clamp(0, HISTOGRAM_BINS as isize - 1);
        counts[b as usize] += 1;
    }
    counts
}

/// Homophily-quantile gate profile and the clean→attacked distribution shift.
pub fn gate_diagnostics(m_clean: &[f64], m_attacked: &[f64], h: &[f64]) -> Result<GateDiagnostics> {
    let n = m_clean.len();
    if m_attacked.len() != n || h.len() != n {
        return Err(Error::Shape(format!("gate diagnostics: {n}, {}, {} entries", m_attacked.len(), h.len())));
    }
    let rho = spearman(m_clean, h)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| h[a].total_cmp(&h[b]).then(a.cmp(&b)));
    let bins = (0..QUANTILE_BINS)
        .map(|q| {
            let (lo, hi) = (q * n / QUANTILE_BINS, (q + 1) * n / QUANTILE_BINS);
            let members = &order[lo..hi];
            let gates: Vec<f64> = members.iter().map(|&v| m_clean[v]).collect();
            let (mean_gate, std_gate) = mean_std(&gates);
            QuantileBin {
                h_low: members.first().map_or(f64::NAN, |&v| h[v]),
                h_high: members.last().map_or(f64::NAN, |&v| h[v]),
                size: members.len(),
                mean_gate,
                std_gate,
            }
        })
        .collect();
    let (mean_clean, mean_attacked) = (mean_std(m_clean).0, mean_std(m_attacked).0);
    let (hc, ha) = (histogram(m_clean), histogram(m_attacked));
    let histogram = (0..HISTOGRAM_BINS)
        .map(|b| HistogramBin {
            low: b as f64 / HISTOGRAM_BINS as f64,
            high: (b + 1) as f64 / HISTOGRAM_BINS as f64,
            clean: hc[b],
            attacked: ha[b],
        })
        .collect();
    Ok(GateDiagnostics {
        spearman_rho: rho,
        bins,
        mean_clean,
        mean_attacked,
        mean_shift: mean_attacked - mean_clean,
        median_shift: median(m_attacked) - median(m_clean),
        histogram,
    })
}

/// `node,m_clean,m_attacked,homophily` rows.
pub fn gates_csv(m_clean: &[f64], m_attacked: &[f64], h: &[f64]) -> String {
    let mut s = String::from("node,m_clean,m_attacked,homophily\n");
    for (v, ((a, b), c)) in m_clean.iter().zip(m_attacked).zip(h).enumerate() {
        s.push_str(&format!("{v},{a},{b},{c}\n"));
    }
    s
}

pub fn histogram_csv(d: &GateDiagnostics) -> String {
    let mut s = String::from("bin_low,bin_high,count_clean,count_attacked\n");
    for b in &d.histogram {
        s.push_str(&format!("{},{},{},{}\n", b.low, b.high, b.clean, b.attacked));
    }
    s
}

/// Column view of a gate vector.
pub fn gate_vec(m: &Array1<f64>) -> Vec<f64> {
    m.to_vec()
}

/// Validation risk of node-wise fusion against every global mixing weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSweep {
    pub grid: Vec<f64>,
    /// Validation cross-entropy of a probe on `m̄ z_L + (1 − m̄) z_H`, per grid point.
    pub global_risk: Vec<f64>,
    pub best_global_m: f64,
    pub best_global_risk: f64,
    pub nodewise_risk: f64,
}

impl FusionSweep {
    pub fn nodewise_wins(&self) -> bool {
        self.nodewise_risk <= self.best_global_risk
    }
}

/// Fit a probe per fusion and report validation cross-entropy.
///
/// `grid_points` evenly spaced values of `m̄` cover `[0, 1]`.
pub fn fusion_sweep(
    z_l: &Array2<f64>,
    z_h: &Array2<f64>,
    m: &[f64],
    labels: &[usize],
    split: &Split,
    grid_points: usize,
    cfg: &ProbeConfig,
) -> Result<FusionSweep> {
    if grid_points < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 grid points, got {grid_points}")));
    }
    let classes = labels.iter().max().map_or(1, |c| c + 1);
    let risk = |z: &Array2<f64>| -> Result<f64> {
        Ok(fit_probe(z, labels, classes, &split.train, cfg)?.cross_entropy(z, labels, &split.val))
    };
    let grid: Vec<f64> = (0..grid_points).map(|i| i as f64 / (grid_points - 1) as f64).collect();
    let mut global_risk = Vec::with_capacity(grid_points);
    for &g in &grid {
        global_risk.push(risk(&fuse(z_l, z_h, &vec![g; m.len()])?)?);
    }
    let best = (0..grid_points).min_by(|&a, &b| global_risk[a].total_cmp(&global_risk[b])).expect("non-empty grid");
    let nodewise_risk = risk(&fuse(z_l, z_h, m)?)?;
    Ok(FusionSweep { best_global_m: grid[best], best_global_risk: global_risk[best], grid, global_risk, nodewise_risk })
}
