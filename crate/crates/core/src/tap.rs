//! TAP decomposition of the free energy and its diagnostics.
//!
//! For an overlap `q` the free energy is compared with the sum of three
//! pieces: the ground-state energy on the shell `S_N(q)`, the entropy term
//! `1/2 sum_s lambda_s log(1 - q(s))`, and the free energy of the recentered
//! model with mixture `xi_q`. Expectations over disorder are seed averages
//! with the seed list kept in every report.
//!
//! Ground states come from local search and so underestimate the true
//! maximum. That inflates the gap, so a negative gap below tolerance cannot
//! be caused by the solver.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::overlap;
use crate::ground_state::{solvers, GroundStateSettings, GroundStateSolver};
use crate::hamiltonian::{Backend, HamiltonianInstance};
use crate::mixture::{log_volume_term, nesting_compose, Mixture, OverlapVector, SpeciesLayout};
use crate::seeding::derive_seed;
use crate::stats::{mean, std_error};
use crate::thermo::{estimators, replica_tuples, EstimatorSettings, FreeEnergyEstimate, FreeEnergyEstimator, Region};

/// Disorder seeds required for any expectation.
pub const MIN_SEEDS: usize = 20;
/// Default allowance, per spin, for the downward bias of local-search ground states.
pub const DEFAULT_BIAS_ALLOWANCE: f64 = 0.02;
/// Default width of the tolerance in standard errors.
pub const DEFAULT_SE_MULTIPLIER: f64 = 3.0;

const GS_DIRECTION_NOTE: &str =
    "ground states are lower bounds, so the reported gap is biased upward and a negative gap is a genuine violation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TapConfig {
    /// Registered free-energy estimator.
    pub estimator: String,
    /// Registered ground-state solver.
    pub solver: String,
    pub estimator_settings: EstimatorSettings,
    pub ground_state: GroundStateSettings,
    /// Disorder seeds; every seed is one independent instance.
    pub seeds: Vec<u64>,
    pub bias_allowance: f64,
    pub se_multiplier: f64,
}

impl Default for TapConfig {
    fn default() -> Self {
        Self {
            estimator: "thermo-integration".into(),
            solver: "ascent".into(),
            estimator_settings: EstimatorSettings::default(),
            ground_state: GroundStateSettings::default(),
            seeds: (0..MIN_SEEDS as u64).collect(),
            bias_allowance: DEFAULT_BIAS_ALLOWANCE,
            se_multiplier: DEFAULT_SE_MULTIPLIER,
        }
    }
}

impl TapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.len() < MIN_SEEDS {
            return Err(Error::Precondition(format!(
                "disorder averages need >= {MIN_SEEDS} seeds, got {}",
                self.seeds.len()
            )));
        }
        if !(self.bias_allowance >= 0.0) || !(self.se_multiplier >= 0.0) {
            return Err(Error::Precondition("bias_allowance and se_multiplier must be >= 0".into()));
        }
        Ok(())
    }

    fn estimator(&self) -> Result<Box<dyn FreeEnergyEstimator>> {
        estimators().build(&self.estimator, &self.estimator_settings)
    }

    fn solver(&self) -> Result<Box<dyn GroundStateSolver>> {
        solvers().build(&self.solver, &self.ground_state)
    }
}

/// Mean over disorder seeds of a per-instance quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAverage {
    pub mean: f64,
    /// Standard error of the mean across seeds.
    pub std_error: f64,
    /// Mean of the per-instance estimator errors (zero for exact methods).
    pub estimator_error: f64,
    pub values: Vec<f64>,
}

impl SeedAverage {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self::with_errors(values, &[])
    }

    fn with_errors(values: Vec<f64>, errors: &[f64]) -> Self {
        Self {
            mean: mean(&values),
            std_error: if values.len() > 1 { std_error(&values) } else { 0.0 },
            estimator_error: if errors.is_empty() { 0.0 } else { mean(errors) },
            values,
        }
    }

    fn from_estimates(estimates: &[FreeEnergyEstimate]) -> Self {
        let errors: Vec<f64> = estimates.iter().map(|e| e.std_error).collect();
        Self::with_errors(estimates.iter().map(|e| e.value).collect(), &errors)
    }
}

fn check_q(layout: &SpeciesLayout, q: &OverlapVector) -> Result<()> {
    if q.len() != layout.n_species() {
        return Err(Error::DimensionMismatch { expected: layout.n_species(), got: q.len() });
    }
    q.check_shell()?;
    if let Some((s, &v)) = q.values().iter().enumerate().find(|(_, &v)| v >= 1.0) {
        return Err(Error::OverlapOutOfRange { index: s, value: v, range: "[0, 1)" });
    }
    Ok(())
}

fn merge_flags(flags: &mut Vec<String>, new: &[String], tag: &str) {
    for f in new {
        let f = format!("{tag}: {f}");
        if !flags.contains(&f) {
            flags.push(f);
        }
    }
}

fn instance(xi: &Mixture, layout: &Arc<SpeciesLayout>, seed: u64, path: &str) -> Result<HamiltonianInstance> {
    HamiltonianInstance::build(xi, layout.clone(), derive_seed(seed, path), Backend::CoefficientTensor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapReport {
    pub q: OverlapVector,
    /// `E F_N` of the model.
    pub lhs: SeedAverage,
    /// `E E_{*,N}(q)` from the configured solver.
    pub gs: SeedAverage,
    /// `1/2 sum_s lambda_s log(1 - q(s))`.
    pub logvol: f64,
    /// `E F_N(q)`, the free energy of the model with mixture `xi_q`.
    pub fq: SeedAverage,
    /// `lhs - gs - logvol - fq`.
    pub gap: f64,
    /// Standard error of the gap: seed spread of the paired per-seed gaps
    /// combined with the mean estimator error.
    pub gap_se: f64,
    /// `xi_q(1) / 2`.
    pub onsager: f64,
    /// `gap >= -(se_multiplier * gap_se + bias_allowance)`.
    pub inequality_holds: bool,
    /// `gap >= -se_multiplier * gap_se`, without the ground-state allowance.
    pub inequality_holds_strict: bool,
    pub estimator: String,
    pub solver: String,
    pub note: String,
    pub flags: Vec<String>,
    pub seeds: Vec<u64>,
}

impl TapReport {
    /// Gap recomputed from its parts.
    pub fn recomputed_gap(&self) -> f64 {
        self.lhs.mean - self.gs.mean - self.logvol - self.fq.mean
    }
}

/// `E F_N` of `xi` per seed.
fn lhs_estimates(
    xi: &Mixture,
    layout: &Arc<SpeciesLayout>,
    config: &TapConfig,
) -> Result<Vec<FreeEnergyEstimate>> {
    let est = config.estimator()?;
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let h = instance(xi, layout, seed, "disorder")?;
            est.estimate(&h, &Region::Full, derive_seed(seed, "lhs"))
        })
        .collect()
}

fn evaluate_with_lhs(
    xi: &Mixture,
    layout: &Arc<SpeciesLayout>,
    q: &OverlapVector,
    config: &TapConfig,
    lhs: &[FreeEnergyEstimate],
) -> Result<TapReport> {
    check_q(layout, q)?;
    let est = config.estimator()?;
    let solver = config.solver()?;
    let xi_q = xi.xi_q(q)?;
    let per_seed: Vec<(f64, FreeEnergyEstimate)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let h = instance(xi, layout, seed, "disorder")?;
            let gs = solver.solve(&h, q, derive_seed(seed, "gs"))?.energy_per_spin;
            let hq = instance(&xi_q, layout, seed, "disorder-q")?;
            let fq = est.estimate(&hq, &Region::Full, derive_seed(seed, "fq"))?;
            Ok((gs, fq))
        })
        .collect::<Result<_>>()?;
    let logvol = log_volume_term(layout, q)?;
    let gs = SeedAverage::from_values(per_seed.iter().map(|(g, _)| *g).collect());
    let fq_estimates: Vec<FreeEnergyEstimate> = per_seed.into_iter().map(|(_, f)| f).collect();
    let fq = SeedAverage::from_estimates(&fq_estimates);
    let lhs_avg = SeedAverage::from_estimates(lhs);

    let gaps: Vec<f64> = (0..config.seeds.len())
        .map(|i| lhs_avg.values[i] - gs.values[i] - logvol - fq.values[i])
        .collect();
    let k = gaps.len() as f64;
    let est_var: f64 =
        lhs.iter().zip(&fq_estimates).map(|(a, b)| a.std_error.powi(2) + b.std_error.powi(2)).sum::<f64>() / (k * k);
    let gap_se = std_error(&gaps).hypot(est_var.sqrt());
    let gap = lhs_avg.mean - gs.mean - logvol - fq.mean;

    let mut flags = Vec::new();
    for e in lhs {
        merge_flags(&mut flags, &e.flags, "lhs");
    }
    for e in &fq_estimates {
        merge_flags(&mut flags, &e.flags, "fq");
    }
    let strict = gap >= -config.se_multiplier * gap_se;
    let holds = gap >= -(config.se_multiplier * gap_se + config.bias_allowance);
    if !holds {
        flags.push("inequality violated beyond tolerance".into());
    }
    Ok(TapReport {
        q: q.clone(),
        lhs: lhs_avg,
        gs,
        logvol,
        fq,
        gap,
        gap_se,
        onsager: 0.5 * xi_q.eval_at_one(),
        inequality_holds: holds,
        inequality_holds_strict: strict,
        estimator: config.estimator.clone(),
        solver: config.solver.clone(),
        note: GS_DIRECTION_NOTE.into(),
        flags,
        seeds: config.seeds.clone(),
    })
}

/// All terms of the TAP decomposition of `xi` at `q`, averaged over the
/// configured seeds.
pub fn tap_evaluate(
    xi: &Mixture,
    layout: &Arc<SpeciesLayout>,
    q: &OverlapVector,
    config: &TapConfig,
) -> Result<TapReport> {
    config.validate()?;
    xi.check_layout(layout)?;
    check_q(layout, q)?;
    let lhs = lhs_estimates(xi, layout, config)?;
    evaluate_with_lhs(xi, layout, q, config, &lhs)
}

/// [`tap_evaluate`] over a grid of overlaps; the left-hand side is shared.
pub fn tap_inequality_scan(
    xi: &Mixture,
    layout: &Arc<SpeciesLayout>,
    q_grid: &[OverlapVector],
    config: &TapConfig,
) -> Result<Vec<TapReport>> {
    config.validate()?;
    xi.check_layout(layout)?;
    for q in q_grid {
        check_q(layout, q)?;
    }
    let lhs = lhs_estimates(xi, layout, config)?;
    q_grid.iter().map(|q| evaluate_with_lhs(xi, layout, q, config, &lhs)).collect()
}

/// Index of the report with the smallest `|gap|`, the scan's candidate for a
/// maximal multi-samplable overlap.
pub fn argmin_abs_gap(reports: &[TapReport]) -> Option<usize> {
    reports
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.gap.abs().total_cmp(&b.1.gap.abs()))
        .map(|(i, _)| i)
}

/// Cartesian grid of overlaps with `points` equally spaced values on
/// `[lo, hi]` in every species.
pub fn product_grid(n_species: usize, lo: f64, hi: f64, points: usize) -> Vec<OverlapVector> {
    let axis: Vec<f64> = if points < 2 {
        vec![lo]
    } else {
        (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
    };
    let mut grid = vec![Vec::new()];
    for _ in 0..n_species {
        grid = grid
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    grid.into_iter().map(OverlapVector::new).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsagerReport {
    pub q: OverlapVector,
    pub fq: SeedAverage,
    /// `xi_q(1) / 2`.
    pub onsager: f64,
    /// `fq - onsager`.
    pub difference: f64,
    pub std_error: f64,
    /// `|difference| <= se_multiplier * std_error`.
    pub within_tolerance: bool,
    pub flags: Vec<String>,
    pub seeds: Vec<u64>,
}

/// Compares `E F_N(q)` with `xi_q(1) / 2` at a designated overlap.
pub fn onsager_check(
    xi: &Mixture,
    layout: &Arc<SpeciesLayout>,
    q_star: &OverlapVector,
    config: &TapConfig,
) -> Result<OnsagerReport> {
    config.validate()?;
    xi.check_layout(layout)?;
    check_q(layout, q_star)?;
    let est = config.estimator()?;
    let xi_q = xi.xi_q(q_star)?;
    let estimates: Vec<FreeEnergyEstimate> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let hq = instance(&xi_q, layout, seed, "disorder-q")?;
            est.estimate(&hq, &Region::Full, derive_seed(seed, "fq"))
        })
        .collect::<Result<_>>()?;
    let fq = SeedAverage::from_estimates(&estimates);
    let k = estimates.len() as f64;
    let est_var = estimates.iter().map(|e| e.std_error.powi(2)).sum::<f64>() / (k * k);
    let std_error = fq.std_error.hypot(est_var.sqrt());
    let onsager = 0.5 * xi_q.eval_at_one();
    let difference = fq.mean - onsager;
    let mut flags = Vec::new();
    for e in &estimates {
        merge_flags(&mut flags, &e.flags, "fq");
    }
    Ok(OnsagerReport {
        q: q_star.clone(),
        fq,
        onsager,
        difference,
        std_error,
        within_tolerance: difference.abs() <= config.se_multiplier * std_error,
        flags,
        seeds: config.seeds.clone(),
    })
}

/// Per-species frequency of `|R_s(sigma, sigma')| >= tau` over replica pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsDiagnostic {
    pub tau: f64,
    pub per_species: Vec<f64>,
    /// Largest per-species frequency.
    pub max: f64,
    /// Replica pairs examined.
    pub pairs: usize,
    pub flags: Vec<String>,
}

/// Overlap concentration of the Gibbs measure of `hq` (normally an instance
/// of `xi_q`): pairs are drawn from `n`-tuples of independent replicas.
pub fn replica_symmetry_diagnostic(
    hq: &HamiltonianInstance,
    n: usize,
    tau: f64,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<RsDiagnostic> {
    if n < 2 {
        return Err(Error::Precondition("replica symmetry diagnostic needs n >= 2".into()));
    }
    let n_species = hq.layout().n_species();
    // Overlaps of sphere points never exceed 1 in absolute value.
    if tau > 1.0 + 1e-9 {
        return Ok(RsDiagnostic { tau, per_species: vec![0.0; n_species], max: 0.0, pairs: 0, flags: Vec::new() });
    }
    let (tuples, flags) = replica_tuples(hq, n, settings, seed)?;
    let mut counts = vec![0usize; n_species];
    let mut pairs = 0;
    for t in &tuples {
        for i in 0..t.len() {
            for j in i + 1..t.len() {
                let r = overlap(&t[i], &t[j])?;
                for (c, v) in counts.iter_mut().zip(r.values()) {
                    if v.abs() >= tau {
                        *c += 1;
                    }
                }
                pairs += 1;
            }
        }
    }
    let per_species: Vec<f64> =
        counts.iter().map(|&c| if pairs == 0 { 0.0 } else { c as f64 / pairs as f64 }).collect();
    let max = per_species.iter().copied().fold(0.0, f64::max);
    Ok(RsDiagnostic { tau, per_species, max, pairs, flags })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingReport {
    pub q: OverlapVector,
    pub q_prime: OverlapVector,
    /// `q + (1 - q) q'`.
    pub q_hat: OverlapVector,
    pub logvol_q: f64,
    pub logvol_q_prime: f64,
    pub logvol_q_hat: f64,
    /// `|logvol_q + logvol_q_prime - logvol_q_hat|`.
    pub additivity_error: f64,
    /// Largest coefficient difference between `xi_{q_hat}` and `(xi_q)_{q'}`.
    pub mixture_identity_error: f64,
    /// Ground state of `xi` on `S_N(q)`.
    pub gs_q: SeedAverage,
    /// Ground state of `xi_q` on `S_N(q')`.
    pub gs_inner: SeedAverage,
    /// Ground state of `xi` on `S_N(q_hat)`.
    pub gs_q_hat: SeedAverage,
    /// `gs_q_hat - gs_q - gs_inner`, nonnegative up to vanishing terms.
    pub margin: f64,
    pub margin_se: f64,
    /// `margin >= -(se_multiplier * margin_se + bias_allowance)`.
    pub holds: bool,
    pub seeds: Vec<u64>,
}

fn max_coefficient_difference(a: &Mixture, b: &Mixture) -> f64 {
    let from_a = a.terms().map(|(p, c)| (c - b.coefficient(p.degrees())).abs());
    let from_b = b.terms().map(|(p, c)| (c - a.coefficient(p.degrees())).abs());
    from_a.chain(from_b).fold(0.0, f64::max)
}

/// Composes the decomposition at `q` with the decomposition of `xi_q` at `q'`
/// and compares with the decomposition at `q_hat`.
pub fn nesting_experiment(
    xi: &Mixture,
    layout: &Arc<SpeciesLayout>,
    q: &OverlapVector,
    q_prime: &OverlapVector,
    config: &TapConfig,
) -> Result<NestingReport> {
    config.validate()?;
    xi.check_layout(layout)?;
    check_q(layout, q)?;
    check_q(layout, q_prime)?;
    let q_hat = nesting_compose(q, q_prime)?;
    check_q(layout, &q_hat)?;
    let logvol_q = log_volume_term(layout, q)?;
    let logvol_q_prime = log_volume_term(layout, q_prime)?;
    let logvol_q_hat = log_volume_term(layout, &q_hat)?;
    let xi_q = xi.xi_q(q)?;
    let mixture_identity_error = max_coefficient_difference(&xi.xi_q(&q_hat)?, &xi_q.xi_q(q_prime)?);

    let solver = config.solver()?;
    let per_seed: Vec<[f64; 3]> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let h = instance(xi, layout, seed, "disorder")?;
            let hq = instance(&xi_q, layout, seed, "disorder-q")?;
            // The same solver stream at q and q_hat makes q' = 0 an exact identity.
            let gs_seed = derive_seed(seed, "gs");
            Ok([
                solver.solve(&h, q, gs_seed)?.energy_per_spin,
                solver.solve(&hq, q_prime, derive_seed(seed, "gs-q"))?.energy_per_spin,
                solver.solve(&h, &q_hat, gs_seed)?.energy_per_spin,
            ])
        })
        .collect::<Result<_>>()?;
    let column = |j: usize| SeedAverage::from_values(per_seed.iter().map(|r| r[j]).collect());
    let margins: Vec<f64> = per_seed.iter().map(|r| r[2] - r[0] - r[1]).collect();
    let margin = mean(&margins);
    let margin_se = std_error(&margins);
    Ok(NestingReport {
        q: q.clone(),
        q_prime: q_prime.clone(),
        q_hat,
        logvol_q,
        logvol_q_prime,
        logvol_q_hat,
        additivity_error: (logvol_q + logvol_q_prime - logvol_q_hat).abs(),
        mixture_identity_error,
        gs_q: column(0),
        gs_inner: column(1),
        gs_q_hat: column(2),
        margin,
        margin_se,
        holds: margin >= -(config.se_multiplier * margin_se + config.bias_allowance),
        seeds: config.seeds.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermo::{uniform_grid, SamplerSettings};
    use approx::assert_abs_diff_eq;

    fn layout(sizes: &[usize]) -> Arc<SpeciesLayout> {
        let labels: Vec<String> = (0..sizes.len()).map(|i| format!("s{i}")).collect();
        Arc::new(SpeciesLayout::new(labels, sizes.to_vec()).unwrap())
    }

    fn mixture(l: &SpeciesLayout, terms: &[(&[u32], f64)]) -> Mixture {
        Mixture::from_terms(l.labels().to_vec(), terms.iter().map(|(p, c)| (p.to_vec(), *c))).unwrap()
    }

    fn exact_config() -> TapConfig {
        TapConfig {
            estimator: "enumeration".into(),
            solver: "exhaustive".into(),
            estimator_settings: EstimatorSettings { beta_grid: vec![0.0, 1.0], ..Default::default() },
            ..Default::default()
        }
    }

    fn mc_config() -> TapConfig {
        TapConfig {
            estimator_settings: EstimatorSettings {
                beta_grid: uniform_grid(1.0, 5),
                sampler: SamplerSettings { burn_in: 100, sweeps: 600, thin: 2, ..Default::default() },
                ..Default::default()
            },
            ground_state: GroundStateSettings { restarts: 4, max_iters: 500 },
            ..Default::default()
        }
    }

    #[test]
    fn too_few_seeds_rejected() {
        let l = layout(&[1, 1]);
        let xi = mixture(&l, &[(&[1, 1], 1.0)]);
        let cfg = TapConfig { seeds: vec![1, 2, 3], ..exact_config() };
        assert!(tap_evaluate(&xi, &l, &OverlapVector::zeros(2), &cfg).is_err());
    }

    #[test]
    fn q_of_one_rejected() {
        let l = layout(&[1, 1]);
        let xi = mixture(&l, &[(&[1, 1], 1.0)]);
        let q = OverlapVector::new(vec![0.2, 1.0]);
        assert!(tap_evaluate(&xi, &l, &q, &exact_config()).is_err());
    }

    #[test]
    fn zero_hamiltonian_has_zero_terms() {
        let l = layout(&[3]);
        let xi = Mixture::empty(l.labels().to_vec());
        let r = tap_evaluate(&xi, &l, &OverlapVector::zeros(1), &mc_config()).unwrap();
        assert_eq!((r.lhs.mean, r.gs.mean, r.logvol, r.fq.mean, r.gap, r.onsager), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn exact_gap_at_zero_is_disorder_noise_only() {
        let l = layout(&[1, 1, 1, 1]);
        let xi = mixture(&l, &[(&[1, 1, 0, 0], 1.0), (&[0, 0, 1, 1], 0.5), (&[2, 0, 0, 0], 0.3)]);
        let r = tap_evaluate(&xi, &l, &OverlapVector::zeros(4), &exact_config()).unwrap();
        assert_eq!(r.gs.mean, 0.0);
        assert_eq!(r.logvol, 0.0);
        assert_eq!(r.lhs.estimator_error, 0.0);
        assert_eq!(r.fq.estimator_error, 0.0);
        assert!(r.gap.abs() <= 3.0 * r.gap_se, "{} vs {}", r.gap, r.gap_se);
        assert_abs_diff_eq!(r.gap, r.recomputed_gap(), epsilon = 1e-12);
    }

    #[test]
    fn gap_reconstructs_and_logvol_is_exact() {
        let l = layout(&[1, 1]);
        let xi = mixture(&l, &[(&[1, 1], 1.0)]);
        let q = OverlapVector::new(vec![0.3, 0.6]);
        let r = tap_evaluate(&xi, &l, &q, &exact_config()).unwrap();
        assert_abs_diff_eq!(r.gap, r.recomputed_gap(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.logvol, 0.25 * (0.7f64.ln() + 0.4f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(r.onsager, 0.5 * 0.7 * 0.4, epsilon = 1e-15);
        assert_eq!(r.seeds.len(), MIN_SEEDS);
    }

    #[test]
    fn scan_single_point_matches_evaluate() {
        let l = layout(&[1, 1]);
        let xi = mixture(&l, &[(&[1, 1], 1.0), (&[2, 0], 0.5)]);
        let q = OverlapVector::zeros(2);
        let cfg = exact_config();
        let a = tap_evaluate(&xi, &l, &q, &cfg).unwrap();
        let b = tap_inequality_scan(&xi, &l, &[q], &cfg).unwrap();
        assert_eq!(a, b[0]);
    }

    #[test]
    fn product_grid_shape() {
        let g = product_grid(2, 0.0, 0.8, 5);
        assert_eq!(g.len(), 25);
        assert_eq!(g[0].values(), &[0.0, 0.0]);
        assert_eq!(g[6].values(), &[0.2, 0.2]);
        assert_abs_diff_eq!(g[24].get(1), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn argmin_picks_smallest_gap() {
        let l = layout(&[1, 1]);
        let xi = mixture(&l, &[(&[1, 1], 1.0)]);
        let grid = product_grid(2, 0.0, 0.6, 3);
        let reports = tap_inequality_scan(&xi, &l, &grid, &exact_config()).unwrap();
        let i = argmin_abs_gap(&reports).unwrap();
        assert!(reports.iter().all(|r| r.gap.abs() >= reports[i].gap.abs()));
    }

    #[test]
    fn onsager_trivial_and_exact() {
        let l = layout(&[1, 1]);
        let zero = Mixture::empty(l.labels().to_vec());
        let r = onsager_check(&zero, &l, &OverlapVector::zeros(2), &exact_config()).unwrap();
        assert_eq!((r.fq.mean, r.onsager, r.difference), (0.0, 0.0, 0.0));

        // Exact per seed, so only disorder spread remains.
        let xi = mixture(&l, &[(&[1, 1], 1.0)]);
        let r = onsager_check(&xi, &l, &OverlapVector::zeros(2), &exact_config()).unwrap();
        assert_eq!(r.fq.estimator_error, 0.0);
        assert_abs_diff_eq!(r.difference, r.fq.mean - 0.5, epsilon = 1e-15);
    }

    #[test]
    fn weak_disorder_onsager() {
        let l = layout(&[24]);
        let xi = mixture(&l, &[(&[2], 0.01)]);
        let r = onsager_check(&xi, &l, &OverlapVector::zeros(1), &mc_config()).unwrap();
        assert_abs_diff_eq!(r.onsager, 0.005, epsilon = 1e-15);
        assert!(r.within_tolerance, "{r:?}");
    }

    #[test]
    fn rs_diagnostic_trivial_and_infinite_temperature() {
        let l = layout(&[64]);
        let xi = mixture(&l, &[(&[2], 1.0)]);
        let h = HamiltonianInstance::build(&xi, l, 5, Backend::CoefficientTensor).unwrap();
        let s = EstimatorSettings {
            beta_grid: vec![0.0],
            sampler: SamplerSettings { burn_in: 50, sweeps: 400, thin: 2, ..Default::default() },
            ..Default::default()
        };
        let none = replica_symmetry_diagnostic(&h, 2, 1.5, &s, 1).unwrap();
        assert_eq!(none.max, 0.0);
        // Uniform overlaps have standard deviation 1/8 here; 0.5 is four of them.
        let d = replica_symmetry_diagnostic(&h, 3, 0.5, &s, 1).unwrap();
        assert!(d.pairs > 0);
        assert!(d.max < 0.01, "{d:?}");
        assert!(replica_symmetry_diagnostic(&h, 1, 0.5, &s, 1).is_err());
    }

    #[test]
    fn nesting_identities_exact() {
        let l = layout(&[1, 1]);
        let xi = mixture(&l, &[(&[1, 1], 1.0), (&[2, 1], 0.5), (&[0, 3], 0.25)]);
        let q = OverlapVector::new(vec![0.3, 0.5]);
        let qp = OverlapVector::new(vec![0.4, 0.2]);
        let r = nesting_experiment(&xi, &l, &q, &qp, &exact_config()).unwrap();
        assert!(r.additivity_error < 1e-14);
        assert!(r.mixture_identity_error < 1e-10);
        assert_abs_diff_eq!(r.q_hat.get(0), 0.3 + 0.7 * 0.4, epsilon = 1e-15);
    }

    #[test]
    fn nesting_with_zero_inner_overlap_is_identity() {
        let l = layout(&[4, 4]);
        let xi = mixture(&l, &[(&[1, 1], 1.0), (&[2, 0], 0.5)]);
        let q = OverlapVector::new(vec![0.5, 0.3]);
        let r = nesting_experiment(&xi, &l, &q, &OverlapVector::zeros(2), &mc_config()).unwrap();
        assert_eq!(r.gs_inner.mean, 0.0);
        assert_eq!(r.margin, 0.0);
        assert!(r.holds);
    }
}
