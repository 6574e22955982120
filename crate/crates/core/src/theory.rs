//! Numerical checks of the two theoretical claims.
//!
//! *Variance amplification.* For perturbations `ΔX = U diag(√ρ) G` with
//! energy `ρ_i` per eigenmode, `E‖g(L)ΔX‖²_F / F = Σ_i g(λ_i)² ρ_i`. When
//! `g_H² − g_L²` changes sign once (negative to positive) and `ρ` is
//! non-decreasing, the high-pass channel carries at least as much variance.
//!
//! *Regret of global fusion.* With quadratic node risks
//! `R_v(α) = (μ/2)(α − α_v*)²` and separated optima, the best single `α`
//! pays at least `(μ/2) r (1 − r) Δ²` over per-node choices.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::graphcore::{dense_eigen, normalized_laplacian, Graph, SpectralPerturbSpec};
use crate::seed;
use crate::{Error, Result};

/// `Σ_i g_i² ρ_i`.
pub fn variance_closed_form(g: &[f64], rho: &[f64]) -> Result<f64> {
    if g.len() != rho.len() {
        return Err(Error::Shape(format!("{} responses for {} energies", g.len(), rho.len())));
    }
    if let Some(r) = rho.iter().find(|r| !(**r >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative perturbation energy {r}")));
    }
    Ok(g.iter().zip(rho).map(|(g, r)| g * g * r).sum())
}

/// Eigen-pairs of the normalized Laplacian, ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl Spectrum {
    pub fn of(g: &Graph) -> Result<Self> {
        let (values, vectors) = dense_eigen(&normalized_laplacian(g)?);
        // The spectrum lies in [0, 2]; clip round-off at the ends.
        Ok(Self { values: values.mapv(|l| l.clamp(0.0, 2.0)), vectors })
    }

    pub fn rho(&self, spec: &SpectralPerturbSpec) -> Vec<f64> {
        self.values.iter().map(|&l| spec.rho(l)).collect()
    }

    pub fn response(&self, g: &dyn Fn(f64) -> f64) -> Vec<f64> {
        self.values.iter().map(|&l| g(l)).collect()
    }
}

/// Sample mean and standard error of `‖g(L)ΔX‖²_F / F`.
pub fn variance_monte_carlo(
    g: &dyn Fn(f64) -> f64,
    spectrum: &Spectrum,
    rho: &[f64],
    feat_dim: usize,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 samples, got {n_samples}")));
    }
    let n = spectrum.values.len();
    if rho.len() != n || feat_dim == 0 {
        return Err(Error::Shape(format!("{} energies for {n} modes, F = {feat_dim}", rho.len())));
    }
    let u = &spectrum.vectors;
    let sqrt_rho = Array1::from_iter(rho.iter().map(|r| r.max(0.0).sqrt()));
    let gv = Array1::from_iter(spectrum.values.iter().map(|&l| g(l)));
    // g(L) = U diag(g) Uᵀ
    let g_mat = (u * &gv).dot(&u.t());
    let mut rng = seed::rng(seed::derive(seed, "variance-mc"));
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let gauss = Array2::from_shape_fn((n, feat_dim), |_| rng.sample::<f64, _>(StandardNormal));
        let scaled = &gauss * &sqrt_rho.view().insert_axis(ndarray::Axis(1));
        let dx = u.dot(&scaled);
        let filtered = g_mat.dot(&dx);
        samples.push(filtered.iter().map(|v| v * v).sum::<f64>() / feat_dim as f64);
    }
    let m = samples.iter().sum::<f64>() / n_samples as f64;
    let var = samples.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (n_samples - 1) as f64;
    Ok((m, (var / n_samples as f64).sqrt()))
}

const GUARD_GRID: usize = 2001;

/// `g_H² − g_L²` must change sign at most once, from negative to
/// non-negative, over `[0, 2]`; `ρ` must be non-decreasing there.
pub fn check_prop1_preconditions(
    g_l: &dyn Fn(f64) -> f64,
    g_h: &dyn Fn(f64) -> f64,
    rho: &dyn Fn(f64) -> f64,
) -> Result<()> {
    let grid: Vec<f64> = (0..GUARD_GRID).map(|i| 2.0 * i as f64 / (GUARD_GRID - 1) as f64).collect();
    let mut crossed = false;
    for &l in &grid {
        let d = g_h(l).powi(2) - g_l(l).powi(2);
        if d >= -1e-12 {
            crossed = true;
        } else if crossed {
            return Err(Error::Precondition(format!(
                "filter pair crosses back: |g_H| < |g_L| again at λ = {l:.4}"
            )));
        }
    }
    for w in grid.windows(2) {
        if rho(w[1]) < rho(w[0]) - 1e-12 {
            return Err(Error::Precondition(format!("perturbation energy decreases at λ = {:.4}", w[1])));
        }
    }
    Ok(())
}

/// Erdős–Rényi graph with a random Hamiltonian path added, so no node is
/// isolated. No self-loops, hence `Tr(L) = n`.
pub fn random_connected_graph(n: usize, p: f64, seed: u64) -> Result<Graph> {
    let mut rng = seed::rng(seed::derive(seed, "theory-graph"));
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let mut pairs: Vec<(usize, usize)> = perm.windows(2).map(|w| (w[0], w[1])).collect();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    Graph::from_pairs(n, pairs, false)
}

#[derive(Debug, Clone, Serialize)]
pub struct McCheck {
    pub trial: usize,
    pub channel: &'static str,
    pub closed_form: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub within_3se: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop1Report {
    pub trials: usize,
    pub passed: usize,
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub mean_margin: f64,
    pub monte_carlo: Vec<McCheck>,
    pub pass: bool,
    pub note: &'static str,
}

/// Closed-form `Var(g_H) − Var(g_L)` on `n_trials` random graphs, with a
/// Monte-Carlo cross-check on the first `mc_trials` of them.
#[allow(clippy::too_many_arguments)]
pub fn verify_prop1(
    n_trials: usize,
    graph_gen: &dyn Fn(usize) -> Result<Graph>,
    g_l: &dyn Fn(f64) -> f64,
    g_h: &dyn Fn(f64) -> f64,
    rho: &dyn Fn(f64) -> f64,
    mc_trials: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<Prop1Report> {
    check_prop1_preconditions(g_l, g_h, rho)?;
    let mut margins = Vec::with_capacity(n_trials);
    let mut mc = Vec::new();
    for t in 0..n_trials {
        let g = graph_gen(t)?;
        if g.n() > 200 {
            return Err(Error::InvalidArgument(format!("trial graphs are limited to 200 nodes, got {}", g.n())));
        }
        let sp = Spectrum::of(&g)?;
        let r: Vec<f64> = sp.values.iter().map(|&l| rho(l)).collect();
        let vl = variance_closed_form(&sp.response(g_l), &r)?;
        let vh = variance_closed_form(&sp.response(g_h), &r)?;
        margins.push(vh - vl);
        if t < mc_trials {
            for (channel, g, closed) in [("low", g_l, vl), ("high", g_h, vh)] {
                let (est, se) = variance_monte_carlo(g, &sp, &r, 4, mc_samples, seed::derive_indexed(seed, channel, t as u64))?;
                mc.push(McCheck {
                    trial: t,
                    channel,
                    closed_form: closed,
                    estimate: est,
                    stderr: se,
                    within_3se: (est - closed).abs() <= 3.0 * se,
                });
            }
        }
    }
    let passed = margins.iter().filter(|&&m| m >= -1e-12).count();
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_margin = margins.iter().sum::<f64>() / margins.len().max(1) as f64;
    let pass = passed == n_trials && mc.iter().all(|c| c.within_3se);
    Ok(Prop1Report {
        trials: n_trials,
        passed,
        margins,
        min_margin,
        mean_margin,
        monte_carlo: mc,
        pass,
        note: "variances are per feature column: ‖g(L)ΔX‖²_F divided by F",
    })
}

/// Quadratic per-node risks with separated optima.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskLandscape {
    pub alpha_star: Vec<f64>,
    pub heterophilic: Vec<bool>,
    pub mu: f64,
    /// Requested heterophilic fraction.
    pub r: f64,
    pub alpha0: f64,
    pub alpha1: f64,
}

impl RiskLandscape {
    pub fn n(&self) -> usize {
        self.alpha_star.len()
    }

    /// Realised heterophilic fraction `⌊rn⌋ / n`.
    pub fn r_eff(&self) -> f64 {
        self.heterophilic.iter().filter(|&&h| h).count() as f64 / self.n() as f64
    }

    pub fn delta(&self) -> f64 {
        self.alpha1 - self.alpha0
    }

    /// `(1/n) Σ_v (μ/2)(α − α_v*)²`.
    pub fn mean_risk(&self, alpha: f64) -> f64 {
        let s: f64 = self.alpha_star.iter().map(|a| (alpha - a) * (alpha - a)).sum();
        0.5 * self.mu * s / self.n() as f64
    }

    fn mean_risk_derivatives(&self, alpha: f64) -> (f64, f64) {
        let n = self.n() as f64;
        let d1 = self.mu * self.alpha_star.iter().map(|a| alpha - a).sum::<f64>() / n;
        (d1, self.mu)
    }

    /// `(μ/2) r (1 − r) Δ²` at the realised fraction.
    pub fn bound(&self) -> f64 {
        let r = self.r_eff();
        0.5 * self.mu * r * (1.0 - r) * self.delta().powi(2)
    }
}

/// `⌊rn⌋` heterophilic nodes with `α* ~ U[α1, 1]`, the rest `α* ~ U[0, α0]`.
pub fn build_landscape(n: usize, r: f64, alpha0: f64, alpha1: f64, mu: f64, seed: u64) -> Result<RiskLandscape> {
    if n == 0 || !(0.0 < r && r < 1.0) || !(0.0 <= alpha0 && alpha0 < alpha1 && alpha1 <= 1.0) || !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "landscape needs n > 0, 0 < r < 1, 0 ≤ α0 < α1 ≤ 1, μ > 0; got n={n}, r={r}, α0={alpha0}, α1={alpha1}, μ={mu}"
        )));
    }
    let n_het = (r * n as f64).floor() as usize;
    let mut rng = seed::rng(seed::derive(seed, "landscape"));
    let mut alpha_star = Vec::with_capacity(n);
    let mut het = Vec::with_capacity(n);
    for v in 0..n {
        let h = v < n_het;
        let a = if h {
            alpha1 + (1.0 - alpha1) * rng.random::<f64>()
        } else {
            alpha0 * rng.random::<f64>()
        };
        alpha_star.push(a);
        het.push(h);
    }
    Ok(RiskLandscape { alpha_star, heterophilic: het, mu, r, alpha0, alpha1 })
}

/// Landscape whose optima sit exactly on the separation endpoints.
pub fn point_mass_landscape(n: usize, r: f64, alpha0: f64, alpha1: f64, mu: f64) -> Result<RiskLandscape> {
    let mut l = build_landscape(n, r, alpha0, alpha1, mu, 0)?;
    for (a, &h) in l.alpha_star.iter_mut().zip(&l.heterophilic) {
        *a = if h { alpha1 } else { alpha0 };
    }
    Ok(l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretReport {
    pub r_stat: f64,
    pub r_adapt: f64,
    pub regret: f64,
    pub bound: f64,
    /// Refined minimiser of the mean risk.
    pub argmin_alpha: f64,
    /// Best grid point before refinement.
    pub grid_argmin: f64,
    pub grid_step: f64,
}

/// Grid minimisation of the mean risk over `[0, 1]` plus one Newton step.
pub fn regret_numeric(l: &RiskLandscape, grid_points: usize) -> Result<RegretReport> {
    if grid_points < 1001 {
        return Err(Error::InvalidArgument(format!("need at least 1001 grid points, got {grid_points}")));
    }
    let step = 1.0 / (grid_points - 1) as f64;
    let (mut best_a, mut best_r) = (0.0, f64::INFINITY);
    for i in 0..grid_points {
        let a = i as f64 * step;
        let r = l.mean_risk(a);
        if r < best_r {
            best_r = r;
            best_a = a;
        }
    }
    let (d1, d2) = l.mean_risk_derivatives(best_a);
    let refined = (best_a - d1 / d2).clamp(0.0, 1.0);
    let (argmin, r_stat) = match l.mean_risk(refined) {
        r if r < best_r => (refined, r),
        _ => (best_a, best_r),
    };
    // Every node attains its own optimum with R_v* = 0.
    let r_adapt = 0.0;
    Ok(RegretReport {
        r_stat,
        r_adapt,
        regret: r_stat - r_adapt,
        bound: l.bound(),
        argmin_alpha: argmin,
        grid_argmin: best_a,
        grid_step: step,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LandscapeCase {
    pub n: usize,
    pub r: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub mu: f64,
    pub regret: f64,
    pub bound: f64,
    pub gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointMassCheck {
    pub regret: f64,
    pub bound: f64,
    pub gap: f64,
    pub grid_argmin: f64,
    pub expected_argmin: f64,
    pub grid_step: f64,
    pub tight: bool,
    pub argmin_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    pub cases: Vec<LandscapeCase>,
    pub passed: usize,
    pub min_gap: f64,
    pub point_mass: PointMassCheck,
    /// Regret and bound ratios after scaling μ by 10.
    pub mu_scaling: (f64, f64),
    pub pass: bool,
}

pub const REGRET_GRID: usize = 10001;

/// Random landscapes against the bound, plus the tight two-point case.
pub fn verify_theorem1(n_landscapes: usize, seed: u64) -> Result<Theorem1Report> {
    let mut rng = seed::rng(seed::derive(seed, "theorem1"));
    let mut cases = Vec::with_capacity(n_landscapes);
    for k in 0..n_landscapes {
        let n = rng.random_range(10..=500);
        let r = rng.random_range(0.05..0.95);
        let alpha0 = rng.random_range(0.0..0.5);
        let alpha1 = rng.random_range(alpha0 + 0.01..=1.0);
        let mu = rng.random_range(0.1..10.0);
        let l = build_landscape(n, r, alpha0, alpha1, mu, seed::derive_indexed(seed, "landscape", k as u64))?;
        let rep = regret_numeric(&l, REGRET_GRID)?;
        let gap = rep.regret - rep.bound;
        cases.push(LandscapeCase { n, r, alpha0, alpha1, mu, regret: rep.regret, bound: rep.bound, gap, pass: gap >= -1e-9 });
    }

    let (n, r, a0, a1, mu) = (200, 0.3, 0.2, 0.9, 2.0);
    let pm = point_mass_landscape(n, r, a0, a1, mu)?;
    let rep = regret_numeric(&pm, REGRET_GRID)?;
    let r_eff = pm.r_eff();
    let expected = (1.0 - r_eff) * a0 + r_eff * a1;
    let point_mass = PointMassCheck {
        regret: rep.regret,
        bound: rep.bound,
        gap: rep.regret - rep.bound,
        grid_argmin: rep.grid_argmin,
        expected_argmin: expected,
        grid_step: rep.grid_step,
        tight: (rep.regret - rep.bound).abs() < 1e-9,
        argmin_ok: (rep.grid_argmin - expected).abs() <= rep.grid_step,
    };

    let base = build_landscape(100, 0.4, 0.1, 0.8, 1.5, seed)?;
    let scaled = RiskLandscape { mu: base.mu * 10.0, ..base.clone() };
    let (rb, rs) = (regret_numeric(&base, REGRET_GRID)?, regret_numeric(&scaled, REGRET_GRID)?);
    let mu_scaling = (rs.regret / rb.regret, rs.bound / rb.bound);

    let passed = cases.iter().filter(|c| c.pass).count();
    let min_gap = cases.iter().map(|c| c.gap).fold(f64::INFINITY, f64::min);
    let pass = passed == n_landscapes
        && point_mass.tight
        && point_mass.argmin_ok
        && (mu_scaling.0 - 10.0).abs() < 1e-6
        && (mu_scaling.1 - 10.0).abs() < 1e-9;
    Ok(Theorem1Report { cases, passed, min_gap, point_mass, mu_scaling, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub seed: u64,
    pub prop1: Prop1Report,
    pub theorem1: Theorem1Report,
    pub all_pass: bool,
}

/// Default theory suite: 100 graph trials with `g_L = 1 − λ/2`, `g_H = λ/2`
/// and `ρ = λ²`, Monte-Carlo on the first 5; 100 random landscapes.
pub fn run_theory_suite(seed: u64) -> Result<TheoryReport> {
    let spec = SpectralPerturbSpec::new(2.0, 1.0)?;
    let gen = |t: usize| {
        let s = seed::derive_indexed(seed, "prop1-graph", t as u64);
        let n = 20 + (s % 181) as usize;
        let p = 0.02 + (s >> 8) as f64 / (u64::MAX >> 8) as f64 * 0.1;
        random_connected_graph(n, p, s)
    };
    let g_l = |l: f64| 1.0 - l / 2.0;
    let g_h = |l: f64| l / 2.0;
    let rho = |l: f64| spec.rho(l);
    let prop1 = verify_prop1(100, &gen, &g_l, &g_h, &rho, 5, 2000, seed)?;
    let theorem1 = verify_theorem1(100, seed)?;
    let all_pass = prop1.pass && theorem1.pass;
    Ok(TheoryReport { seed, prop1, theorem1, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(variance_closed_form(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(variance_closed_form(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(variance_closed_form(&[1.0; 3], &[0.5, 1.0, 2.0]).unwrap(), 3.5);
        assert!(variance_closed_form(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn monte_carlo_zero_energy_is_exactly_zero() {
        let g = random_connected_graph(12, 0.2, 1).unwrap();
        let sp = Spectrum::of(&g).unwrap();
        let (m, se) = variance_monte_carlo(&|_| 1.0, &sp, &vec![0.0; 12], 3, 100, 0).unwrap();
        assert_eq!((m, se), (0.0, 0.0));
    }

    #[test]
    fn identity_response_matches_total_energy() {
        let g = random_connected_graph(30, 0.1, 2).unwrap();
        let sp = Spectrum::of(&g).unwrap();
        let rho = sp.rho(&SpectralPerturbSpec::new(1.0, 0.5).unwrap());
        let (m, se) = variance_monte_carlo(&|_| 1.0, &sp, &rho, 4, 2000, 3).unwrap();
        let total: f64 = rho.iter().sum();
        assert!((m - total).abs() <= 3.0 * se, "{m} vs {total} ± {se}");
    }

    #[test]
    fn guard_rejects_non_monotone_energy_and_bad_filters() {
        let g_l = |l: f64| 1.0 - l / 2.0;
        let g_h = |l: f64| l / 2.0;
        assert!(check_prop1_preconditions(&g_l, &g_h, &|l: f64| l).is_ok());
        assert!(matches!(
            check_prop1_preconditions(&g_l, &g_h, &|l: f64| (l - 1.0).abs()),
            Err(Error::Precondition(_))
        ));
        assert!(check_prop1_preconditions(&g_h, &g_l, &|l: f64| l).is_err());
    }

    #[test]
    fn symmetric_filters_with_flat_energy_have_zero_margin() {
        // Bipartite graphs have spectra symmetric about 1.
        let n = 10;
        let pairs: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let g = Graph::from_pairs(n, pairs, false).unwrap();
        let rep = verify_prop1(
            1,
            &|_| Ok(g.clone()),
            &|l: f64| 1.0 - l / 2.0,
            &|l: f64| l / 2.0,
            &|_| 1.0,
            0,
            100,
            0,
        )
        .unwrap();
        assert!(rep.margins[0].abs() < 1e-12);
    }

    #[test]
    fn linear_pair_passes_with_linear_energy() {
        let rep = verify_prop1(
            10,
            &|t| random_connected_graph(40, 0.08, t as u64),
            &|l: f64| 1.0 - l / 2.0,
            &|l: f64| l / 2.0,
            &|l: f64| l,
            0,
            100,
            0,
        )
        .unwrap();
        assert_eq!(rep.passed, 10);
    }

    #[test]
    fn landscape_construction() {
        let l = build_landscape(101, 0.3, 0.2, 0.7, 1.0, 4).unwrap();
        assert_eq!(l.heterophilic.iter().filter(|&&h| h).count(), 30);
        for (&a, &h) in l.alpha_star.iter().zip(&l.heterophilic) {
            assert!(if h { a >= 0.7 && a <= 1.0 } else { a >= 0.0 && a <= 0.2 });
        }
        let d = build_landscape(10, 0.5, 0.0, 1.0, 1.0, 0).unwrap();
        assert!(d.alpha_star.iter().all(|&a| a == 0.0 || a == 1.0));
        assert!(build_landscape(10, 0.0, 0.0, 1.0, 1.0, 0).is_err());
        assert!(build_landscape(10, 0.5, 0.6, 0.5, 1.0, 0).is_err());
    }

    #[test]
    fn two_point_half_split_is_tight() {
        let l = build_landscape(100, 0.5, 0.0, 1.0, 2.0, 0).unwrap();
        let rep = regret_numeric(&l, 10001).unwrap();
        assert!((rep.r_stat - 0.25).abs() < 1e-12);
        assert!((rep.argmin_alpha - 0.5).abs() < 1e-12);
        assert!((rep.regret - rep.bound).abs() < 1e-12);
    }

    #[test]
    fn single_population_limit() {
        let l = build_landscape(100, 0.01, 0.0, 1.0, 1.0, 0).unwrap();
        let rep = regret_numeric(&l, 10001).unwrap();
        assert!(rep.regret + 1e-9 >= rep.bound);
        assert!(rep.bound < 0.01 && rep.regret < 0.01);
    }

    #[test]
    fn grid_size_checked() {
        let l = build_landscape(10, 0.5, 0.0, 1.0, 1.0, 0).unwrap();
        assert!(regret_numeric(&l, 1000).is_err());
    }

    #[test]
    fn theorem_sweep_small() {
        let rep = verify_theorem1(20, 5).unwrap();
        assert!(rep.pass, "{:?}", rep.point_mass);
    }
}
