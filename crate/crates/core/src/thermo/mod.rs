//! Free energies: exact corner-scale oracles and Monte Carlo estimators.
//!
//! All values are per spin, `(1/N) log int exp(beta H) d mu` with `mu` the
//! uniform probability measure on `S_N`. The inverse temperature enters only
//! through the integration grid; at `beta = 1` the value is the free energy
//! of the instance itself.
//!
//! The Monte Carlo estimator integrates `(1/N) <H>_beta` over an ascending
//! grid starting at 0 by the composite Simpson rule, with expectations taken
//! from the replica-exchange sampler in [`sampler`]. Band and multi-replica
//! free energies restrict the sampler to the region and add the exact (or,
//! for the pairwise constraint, sampled) log-volume of the region.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{in_multi_band, log_band_volume, sample_band, BandSpec, Configuration};
use crate::hamiltonian::HamiltonianInstance;
use crate::registry::Registry;
use crate::seeding::{derive_seed, rng_from_seed};
use crate::stats::{batch_means_error, simpson_weights, trapezoid_weights};

pub mod multisamp;
pub mod oracle;
pub mod sampler;

pub use multisamp::{
    aggregate_profiles, multisamplability_profile, multisamplability_profiles, replica_tuples, MultisampProfile,
};
pub use oracle::{
    enumerate_region, exact_fe_enumeration, exact_fe_quadrature, penalty_decomposition_enumeration,
    PenaltyDecomposition,
};
pub use sampler::{pt_sampler, GibbsChainState, PtOutput, SamplerSettings};

/// Gauss-Legendre nodes used for exact band volumes.
pub const BAND_VOLUME_NODES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Enumeration,
    Quadrature,
    ThermoIntegration,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Enumeration => "enumeration",
            Method::Quadrature => "quadrature",
            Method::ThermoIntegration => "thermo-integration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub replicas: usize,
    pub beta_grid: Vec<f64>,
    /// Configurations (or tuples) summed over or recorded.
    pub samples: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

impl EstimateMeta {
    pub fn new(beta_grid: Vec<f64>) -> Self {
        Self { replicas: 1, beta_grid, samples: 0, extra: BTreeMap::new() }
    }
}

/// A per-spin free energy with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub value: f64,
    pub std_error: f64,
    #[serde(rename = "estimator")]
    pub method: Method,
    pub meta: EstimateMeta,
    pub flags: Vec<String>,
}

impl FreeEnergyEstimate {
    fn exact_zero(beta_grid: Vec<f64>, method: Method) -> Self {
        Self { value: 0.0, std_error: 0.0, method, meta: EstimateMeta::new(beta_grid), flags: Vec::new() }
    }
}

/// Integration domain of a free energy.
#[derive(Debug, Clone)]
pub enum Region {
    /// The whole of `S_N`.
    Full,
    /// `B(m, delta)`.
    Band { center: Configuration, delta: f64 },
    /// `B(m, n, delta, rho)`.
    MultiBand(BandSpec),
}

impl Region {
    pub fn replicas(&self) -> usize {
        match self {
            Region::MultiBand(spec) => spec.n,
            _ => 1,
        }
    }

    pub fn center(&self) -> Option<&Configuration> {
        match self {
            Region::Full => None,
            Region::Band { center, .. } => Some(center),
            Region::MultiBand(spec) => Some(&spec.center),
        }
    }

    fn delta(&self) -> f64 {
        match self {
            Region::Full => 0.0,
            Region::Band { delta, .. } => *delta,
            Region::MultiBand(spec) => spec.delta,
        }
    }

    pub(crate) fn check(&self, h: &HamiltonianInstance) -> Result<()> {
        if let Some(m) = self.center() {
            if **m.layout() != **h.layout() {
                return Err(Error::LayoutMismatch);
            }
            m.self_overlap().check_shell()?;
            if !(self.delta() >= 0.0) {
                return Err(Error::Precondition(format!("delta = {} must be >= 0", self.delta())));
            }
        }
        Ok(())
    }
}

/// Checks that a grid is finite, strictly ascending and starts at 0.
pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) {
        return Err(Error::Precondition("beta grid must start at 0".into()));
    }
    if grid.iter().any(|b| !b.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("beta grid must be finite and strictly ascending".into()));
    }
    Ok(())
}

/// `nodes` equally spaced inverse temperatures from 0 to `beta`.
pub fn uniform_grid(beta: f64, nodes: usize) -> Vec<f64> {
    if nodes < 2 || beta == 0.0 {
        return vec![0.0];
    }
    (0..nodes).map(|k| beta * k as f64 / (nodes - 1) as f64).collect()
}

/// Settings shared by the free-energy estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    /// Ascending integration grid; its last node is the target inverse temperature.
    pub beta_grid: Vec<f64>,
    pub sampler: SamplerSettings,
    /// Base node count per angle for the quadrature oracle (doubled once).
    pub quadrature_nodes: usize,
    /// Uniform band draws used to estimate the pairwise-constraint volume.
    pub volume_samples: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            beta_grid: uniform_grid(1.0, 21),
            sampler: SamplerSettings::default(),
            quadrature_nodes: 32,
            volume_samples: 20_000,
        }
    }
}

impl EstimatorSettings {
    pub fn beta(&self) -> f64 {
        self.beta_grid.last().copied().unwrap_or(0.0)
    }
}

/// Simpson integral of the sampled mean energy with its standard error.
struct Integral {
    value: f64,
    std_error: f64,
    mc_error: f64,
    grid_error: f64,
    pt: Option<PtOutput>,
}

fn integrate(
    h: &HamiltonianInstance,
    region: &Region,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<Integral> {
    let grid = &settings.beta_grid;
    check_grid(grid)?;
    if grid.len() == 1 {
        return Ok(Integral { value: 0.0, std_error: 0.0, mc_error: 0.0, grid_error: 0.0, pt: None });
    }
    let pt = pt_sampler(h, region, grid, &settings.sampler, derive_seed(seed, "pt"))?;
    let ws = simpson_weights(grid);
    let wt = trapezoid_weights(grid);
    let simpson: f64 = ws.iter().zip(&pt.mean_energy).map(|(w, e)| w * e).sum();
    let trapezoid: f64 = wt.iter().zip(&pt.mean_energy).map(|(w, e)| w * e).sum();
    // Swaps correlate neighbouring chains, so the error is taken on the
    // weighted sum per record rather than summed chain by chain.
    let combined: Vec<f64> = (0..pt.records).map(|t| ws.iter().zip(&pt.traces).map(|(w, tr)| w * tr[t]).sum()).collect();
    let mc_error = batch_means_error(&combined, pt.batches);
    let grid_error = (simpson - trapezoid).abs();
    Ok(Integral {
        value: simpson,
        std_error: mc_error.hypot(grid_error),
        mc_error,
        grid_error,
        pt: Some(pt),
    })
}

fn ti_estimate(value: f64, std_error: f64, integral: &Integral, settings: &EstimatorSettings, replicas: usize) -> FreeEnergyEstimate {
    let mut meta = EstimateMeta::new(settings.beta_grid.clone());
    meta.replicas = replicas;
    let mut flags = Vec::new();
    meta.extra.insert("mc_error".into(), integral.mc_error);
    meta.extra.insert("grid_error".into(), integral.grid_error);
    if let Some(pt) = &integral.pt {
        meta.samples = (pt.records * pt.betas.len()) as u64;
        if let Some(min) = pt.swap_acceptance.iter().copied().reduce(f64::min) {
            meta.extra.insert("min_swap_acceptance".into(), min);
        }
        if let Some(min) = pt.acceptance.iter().copied().reduce(f64::min) {
            meta.extra.insert("min_move_acceptance".into(), min);
        }
        flags.extend(pt.flags.iter().cloned());
    }
    FreeEnergyEstimate { value, std_error, method: Method::ThermoIntegration, meta, flags }
}

/// `F_N` at the last grid node by thermodynamic integration.
pub fn fe_thermo_integration(
    h: &HamiltonianInstance,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    let integral = integrate(h, &Region::Full, settings, seed)?;
    Ok(ti_estimate(integral.value, integral.std_error, &integral, settings, 1))
}

/// `F_N(m, delta)`: band volume plus the band-restricted integral, minus `beta H(m) / N`.
pub fn restricted_fe(
    h: &HamiltonianInstance,
    m: &Configuration,
    delta: f64,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    let region = Region::Band { center: m.clone(), delta };
    region.check(h)?;
    let n = h.n() as f64;
    let logvol = log_band_volume(h.layout(), &m.self_overlap(), delta, BAND_VOLUME_NODES)?;
    if logvol == f64::NEG_INFINITY {
        return Err(Error::Precondition("band is empty".into()));
    }
    let hm = h.energy(m)?;
    let integral = integrate(h, &region, settings, seed)?;
    let value = logvol + integral.value - settings.beta() * hm / n;
    let mut est = ti_estimate(value, integral.std_error, &integral, settings, 1);
    est.meta.extra.insert("log_band_volume".into(), logvol);
    Ok(est)
}

/// `F_N(m, n, delta, rho)` by a joint chain over `n` replicas.
///
/// The log-volume of `B(m, n, delta, rho)` is `n log mu(B(m, delta))` plus the
/// log-probability that `n` independent uniform band points satisfy the
/// pairwise constraint; the latter is estimated from `volume_samples` draws.
pub fn multi_replica_fe(
    h: &HamiltonianInstance,
    spec: &BandSpec,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    let region = Region::MultiBand(spec.clone());
    region.check(h)?;
    let n = h.n() as f64;
    let reps = spec.n as f64;
    let logvol = log_band_volume(h.layout(), &spec.center.self_overlap(), spec.delta, BAND_VOLUME_NODES)?;
    if logvol == f64::NEG_INFINITY {
        return Err(Error::Precondition("band is empty".into()));
    }
    let mut flags = Vec::new();
    let (log_pair, pair_se, draws) = if spec.n == 1 {
        (0.0, 0.0, 0)
    } else {
        let mut rng = rng_from_seed(derive_seed(seed, "volume"));
        let draws = settings.volume_samples.max(1);
        let mut hits = 0usize;
        for _ in 0..draws {
            let reps: Vec<Configuration> =
                (0..spec.n).map(|_| sample_band(&spec.center, spec.delta, &mut rng)).collect::<Result<_>>()?;
            if in_multi_band(&reps, spec)? {
                hits += 1;
            }
        }
        if hits == 0 {
            flags.push(format!("zero-hit pair volume: floor log(0.5/{draws})"));
            ((0.5 / draws as f64).ln(), 0.0, draws)
        } else {
            let p = hits as f64 / draws as f64;
            (p.ln(), ((1.0 - p) / hits as f64).sqrt(), draws)
        }
    };
    let hm = h.energy(&spec.center)?;
    let integral = integrate(h, &region, settings, seed)?;
    let value = logvol + log_pair / (n * reps) + integral.value - settings.beta() * hm / n;
    let se = integral.std_error.hypot(pair_se / (n * reps));
    let mut est = ti_estimate(value, se, &integral, settings, spec.n);
    est.meta.extra.insert("log_band_volume".into(), logvol);
    est.meta.extra.insert("log_pair_probability".into(), log_pair);
    est.meta.extra.insert("volume_draws".into(), draws as f64);
    est.flags.extend(flags);
    Ok(est)
}

/// A free-energy estimator selectable by name.
pub trait FreeEnergyEstimator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Estimate of the per-spin free energy of `region` at the target inverse
    /// temperature. Band regions include the `-H(m)` recentering.
    fn estimate(&self, h: &HamiltonianInstance, region: &Region, seed: u64) -> Result<FreeEnergyEstimate>;
}

struct EnumerationEstimator {
    beta: f64,
}

impl FreeEnergyEstimator for EnumerationEstimator {
    fn name(&self) -> &'static str {
        Method::Enumeration.name()
    }

    fn estimate(&self, h: &HamiltonianInstance, region: &Region, _seed: u64) -> Result<FreeEnergyEstimate> {
        enumerate_region(h, region, self.beta)
    }
}

struct QuadratureEstimator {
    beta: f64,
    nodes: usize,
}

impl FreeEnergyEstimator for QuadratureEstimator {
    fn name(&self) -> &'static str {
        Method::Quadrature.name()
    }

    fn estimate(&self, h: &HamiltonianInstance, region: &Region, _seed: u64) -> Result<FreeEnergyEstimate> {
        match region {
            Region::Full if self.beta == 0.0 => Ok(FreeEnergyEstimate::exact_zero(vec![0.0], Method::Quadrature)),
            Region::Full => exact_fe_quadrature(h, self.nodes, self.beta),
            _ => Err(Error::Unsupported("quadrature over bands".into())),
        }
    }
}

struct ThermoIntegration {
    settings: EstimatorSettings,
}

impl FreeEnergyEstimator for ThermoIntegration {
    fn name(&self) -> &'static str {
        Method::ThermoIntegration.name()
    }

    fn estimate(&self, h: &HamiltonianInstance, region: &Region, seed: u64) -> Result<FreeEnergyEstimate> {
        match region {
            Region::Full => fe_thermo_integration(h, &self.settings, seed),
            Region::Band { center, delta } => restricted_fe(h, center, *delta, &self.settings, seed),
            Region::MultiBand(spec) => multi_replica_fe(h, spec, &self.settings, seed),
        }
    }
}

/// Built-in free-energy estimators.
pub fn estimators() -> Registry<dyn FreeEnergyEstimator, EstimatorSettings> {
    let mut r: Registry<dyn FreeEnergyEstimator, EstimatorSettings> = Registry::new("free-energy estimator");
    r.register("enumeration", "exact average over sign patterns (every species of size 1)", |s| {
        Box::new(EnumerationEstimator { beta: s.beta() })
    });
    r.register("quadrature", "tensor-product quadrature (species of size <= 3)", |s| {
        Box::new(QuadratureEstimator { beta: s.beta(), nodes: s.quadrature_nodes })
    });
    r.register("thermo-integration", "replica exchange plus Simpson integration over the beta grid", |s| {
        Box::new(ThermoIntegration { settings: s.clone() })
    });
    r
}
