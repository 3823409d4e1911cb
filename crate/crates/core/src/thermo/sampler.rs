//! Replica-exchange Metropolis sampler on products of spheres.
//!
//! Each chain runs at one inverse temperature and carries `n` coupled
//! replicas (one for plain Gibbs sampling). A sweep proposes, for every
//! replica and every species, a tangent Gaussian step re-projected to the
//! block sphere (a sign flip when the block has a single coordinate).
//! Proposals leaving the sampling region are rejected outright. After each
//! sweep, adjacent chains attempt a state swap using the lower chain's
//! random stream, so results never depend on thread scheduling.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_band, sample_uniform, Configuration};
use crate::hamiltonian::HamiltonianInstance;
use crate::seeding::{derive_seed, rng_from_seed, SimRng};
use crate::stats::{batch_means_error, mean};

use super::Region;

/// Move acceptance below which a chain is reported as frozen.
pub const FROZEN_ACCEPTANCE: f64 = 1e-3;
/// Swap acceptance below which replica exchange is reported as poor.
pub const POOR_SWAP_ACCEPTANCE: f64 = 0.05;

const MIN_STEP: f64 = 1e-4;
const MAX_STEP: f64 = 10.0;
const INIT_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    /// Sweeps discarded while the step size adapts.
    pub burn_in: usize,
    /// Sweeps after burn-in.
    pub sweeps: usize,
    /// Keep one record every `thin` sweeps.
    pub thin: usize,
    /// Number of batches for batch-means errors.
    pub batches: usize,
    pub target_acceptance: f64,
    /// Sweeps between step-size updates during burn-in.
    pub adapt_interval: usize,
    /// Keep the replicas of the highest-temperature-index chain at each record.
    pub keep_samples: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            sweeps: 10_000,
            thin: 1,
            batches: 20,
            target_acceptance: 0.4,
            adapt_interval: 25,
            keep_samples: false,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.adapt_interval == 0 {
            return Err(Error::Precondition("thin and adapt_interval must be >= 1".into()));
        }
        if self.batches < 2 {
            return Err(Error::Precondition("batches must be >= 2".into()));
        }
        if self.sweeps / self.thin < self.batches {
            return Err(Error::Precondition(format!(
                "{} records cannot fill {} batches",
                self.sweeps / self.thin,
                self.batches
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Precondition("target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-species support constraint derived from a [`Region`].
#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    center: Option<Vec<f64>>,
    center_q: Vec<f64>,
    delta: f64,
    rho: Option<f64>,
}

impl Constraint {
    pub(crate) fn from_region(region: &Region) -> Self {
        match region {
            Region::Full => Self { center: None, center_q: Vec::new(), delta: 0.0, rho: None },
            Region::Band { center, delta } => Self {
                center: Some(center.coords().to_vec()),
                center_q: center.self_overlap().values().to_vec(),
                delta: *delta,
                rho: None,
            },
            Region::MultiBand(spec) => Self {
                center: Some(spec.center.coords().to_vec()),
                center_q: spec.center.self_overlap().values().to_vec(),
                delta: spec.delta,
                rho: (spec.n > 1).then_some(spec.rho),
            },
        }
    }

    /// Whether block `s` of `x` is admissible for replica `r` given the others.
    fn admits(&self, h: &HamiltonianInstance, x: &[f64], r: usize, others: &[Vec<f64>], s: usize) -> bool {
        let Some(m) = &self.center else { return true };
        let layout = h.layout();
        let range = layout.block(s);
        let ns = layout.size(s) as f64;
        let q = self.center_q[s];
        let r_m = dot(&x[range.clone()], &m[range.clone()]) / ns;
        if (r_m - q).abs() > self.delta {
            return false;
        }
        if let Some(rho) = self.rho {
            for (j, y) in others.iter().enumerate() {
                if j != r && (dot(&x[range.clone()], &y[range.clone()]) / ns - q).abs() > rho {
                    return false;
                }
            }
        }
        true
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// State of one temperature index of the replica-exchange sampler.
#[derive(Debug, Clone)]
pub struct GibbsChainState {
    pub beta: f64,
    pub beta_index: usize,
    /// Replica coordinates.
    pub replicas: Vec<Vec<f64>>,
    /// `H` of each replica.
    pub energies: Vec<f64>,
    /// Tangent proposal scale per species.
    pub step: Vec<f64>,
    pub accepted: u64,
    pub proposed: u64,
    window_accepted: Vec<u64>,
    window_proposed: Vec<u64>,
    rng: SimRng,
}

impl GibbsChainState {
    fn total_energy(&self) -> f64 {
        self.energies.iter().sum()
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn sweep(&mut self, h: &HamiltonianInstance, constraint: &Constraint) {
        let layout = h.layout().clone();
        for r in 0..self.replicas.len() {
            for s in 0..layout.n_species() {
                let range = layout.block(s);
                let ns = range.len();
                let mut proposal = self.replicas[r].clone();
                if ns == 1 {
                    proposal[range.start] = -proposal[range.start];
                } else {
                    let block = &mut proposal[range.clone()];
                    let radius_sq = ns as f64;
                    let mut t: Vec<f64> = (0..ns).map(|_| self.rng.sample::<f64, _>(StandardNormal)).collect();
                    let radial = dot(&t, block) / radius_sq;
                    for (ti, bi) in t.iter_mut().zip(block.iter()) {
                        *ti -= radial * bi;
                    }
                    for (bi, ti) in block.iter_mut().zip(&t) {
                        *bi += self.step[s] * ti;
                    }
                    let scale = (radius_sq / dot(block, block)).sqrt();
                    for bi in block.iter_mut() {
                        *bi *= scale;
                    }
                }
                self.proposed += 1;
                self.window_proposed[s] += 1;
                // Uniform draw consumed on every proposal to keep streams aligned.
                let u: f64 = self.rng.random();
                if !constraint.admits(h, &proposal, r, &self.replicas, s) {
                    continue;
                }
                let e = h.energy_coords(&proposal);
                let log_ratio = self.beta * (e - self.energies[r]);
                if metropolis_accept(log_ratio, u) {
                    self.replicas[r] = proposal;
                    self.energies[r] = e;
                    self.accepted += 1;
                    self.window_accepted[s] += 1;
                }
            }
        }
    }

    fn adapt(&mut self, target: f64) {
        for s in 0..self.step.len() {
            if self.window_proposed[s] > 0 {
                let rate = self.window_accepted[s] as f64 / self.window_proposed[s] as f64;
                self.step[s] = (self.step[s] * (rate - target).exp()).clamp(MIN_STEP, MAX_STEP);
            }
            self.window_accepted[s] = 0;
            self.window_proposed[s] = 0;
        }
    }
}

/// Metropolis rule: accept when `log u < log_ratio`.
pub fn metropolis_accept(log_ratio: f64, u: f64) -> bool {
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// Output of [`pt_sampler`].
#[derive(Debug, Clone)]
pub struct PtOutput {
    pub betas: Vec<f64>,
    /// Mean of `(1/(N n)) sum_i H(sigma^i)` per chain.
    pub mean_energy: Vec<f64>,
    /// Batch-means standard error of `mean_energy`.
    pub energy_se: Vec<f64>,
    /// Move acceptance after burn-in per chain.
    pub acceptance: Vec<f64>,
    /// Swap acceptance per adjacent pair.
    pub swap_acceptance: Vec<f64>,
    /// Frozen proposal scales per chain and species.
    pub step_sizes: Vec<Vec<f64>>,
    /// Replicas of the last chain at each record when `keep_samples` is set.
    pub samples: Vec<Vec<Configuration>>,
    /// Recorded energies per chain, aligned by record.
    pub traces: Vec<Vec<f64>>,
    pub batches: usize,
    pub records: usize,
    pub flags: Vec<String>,
}

/// Draws an initial state of `n` replicas in the region.
pub(crate) fn initial_replicas(h: &HamiltonianInstance, region: &Region, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
    let layout = h.layout().clone();
    match region {
        Region::Full => Ok(vec![sample_uniform(&layout, rng).into_coords()]),
        Region::Band { center, delta } => Ok(vec![sample_band(center, *delta, rng)?.into_coords()]),
        Region::MultiBand(spec) => {
            for _ in 0..INIT_ATTEMPTS {
                let reps: Vec<Configuration> =
                    (0..spec.n).map(|_| sample_band(&spec.center, spec.delta, rng)).collect::<Result<_>>()?;
                if crate::geometry::in_multi_band(&reps, spec)? {
                    return Ok(reps.into_iter().map(Configuration::into_coords).collect());
                }
            }
            Err(Error::Precondition(format!(
                "no admissible replica tuple found in {INIT_ATTEMPTS} uniform draws from the band"
            )))
        }
    }
}

/// Replica-exchange sampler over `betas` (ascending, starting at 0).
pub fn pt_sampler(
    h: &HamiltonianInstance,
    region: &Region,
    betas: &[f64],
    settings: &SamplerSettings,
    seed: u64,
) -> Result<PtOutput> {
    settings.validate()?;
    super::check_grid(betas)?;
    region.check(h)?;
    let layout = h.layout().clone();
    let n = layout.total() as f64;
    let constraint = Constraint::from_region(region);
    let mut chains = Vec::with_capacity(betas.len());
    for (k, &beta) in betas.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, &format!("chain/{k}")));
        let replicas = initial_replicas(h, region, &mut rng)?;
        let energies = replicas.iter().map(|x| h.energy_coords(x)).collect();
        let step = (0..layout.n_species()).map(|s| if layout.size(s) == 1 { 0.0 } else { 0.5 }).collect();
        chains.push(GibbsChainState {
            beta,
            beta_index: k,
            replicas,
            energies,
            step,
            accepted: 0,
            proposed: 0,
            window_accepted: vec![0; layout.n_species()],
            window_proposed: vec![0; layout.n_species()],
            rng,
        });
    }
    let n_rep = chains[0].replicas.len() as f64;
    let mut swaps_accepted = vec![0u64; betas.len().saturating_sub(1)];
    let mut swaps_proposed = vec![0u64; betas.len().saturating_sub(1)];
    let mut traces: Vec<Vec<f64>> = vec![Vec::new(); betas.len()];
    let mut samples = Vec::new();

    let total = settings.burn_in + settings.sweeps;
    for sweep in 0..total {
        chains.par_iter_mut().for_each(|c| c.sweep(h, &constraint));
        // Alternate even and odd pairs.
        let mut k = sweep % 2;
        while k + 1 < chains.len() {
            let (lo, hi) = chains.split_at_mut(k + 1);
            let (a, b) = (&mut lo[k], &mut hi[0]);
            let log_ratio = (b.beta - a.beta) * (a.total_energy() - b.total_energy());
            let u: f64 = a.rng.random();
            let counted = sweep >= settings.burn_in;
            if counted {
                swaps_proposed[k] += 1;
            }
            if metropolis_accept(log_ratio, u) {
                std::mem::swap(&mut a.replicas, &mut b.replicas);
                std::mem::swap(&mut a.energies, &mut b.energies);
                if counted {
                    swaps_accepted[k] += 1;
                }
            }
            k += 2;
        }
        if sweep < settings.burn_in {
            if (sweep + 1) % settings.adapt_interval == 0 {
                for c in &mut chains {
                    c.adapt(settings.target_acceptance);
                }
            }
            if sweep + 1 == settings.burn_in {
                for c in &mut chains {
                    c.accepted = 0;
                    c.proposed = 0;
                }
            }
            continue;
        }
        if (sweep - settings.burn_in) % settings.thin == 0 {
            for (t, c) in traces.iter_mut().zip(&chains) {
                t.push(c.total_energy() / (n * n_rep));
            }
            if settings.keep_samples {
                let last = chains.last().expect("at least one chain");
                samples.push(
                    last.replicas
                        .iter()
                        .map(|x| Configuration::new(layout.clone(), x.clone()))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
        }
    }

    let mean_energy: Vec<f64> = traces.iter().map(|t| mean(t)).collect();
    let energy_se: Vec<f64> = traces.iter().map(|t| batch_means_error(t, settings.batches)).collect();
    let acceptance: Vec<f64> = chains.iter().map(GibbsChainState::acceptance).collect();
    let swap_acceptance: Vec<f64> = swaps_accepted
        .iter()
        .zip(&swaps_proposed)
        .map(|(&a, &p)| if p == 0 { 0.0 } else { a as f64 / p as f64 })
        .collect();
    let mut flags = Vec::new();
    if let Some(min) = swap_acceptance.iter().copied().reduce(f64::min) {
        if min < POOR_SWAP_ACCEPTANCE {
            flags.push(format!("poor-swap-mixing: min swap acceptance {min:.3}"));
        }
    }
    if let Some(min) = acceptance.iter().copied().reduce(f64::min) {
        if min < FROZEN_ACCEPTANCE {
            flags.push(format!("frozen-chain: min move acceptance {min:.4}"));
        }
    }
    Ok(PtOutput {
        betas: betas.to_vec(),
        mean_energy,
        energy_se,
        acceptance,
        swap_acceptance,
        step_sizes: chains.iter().map(|c| c.step.clone()).collect(),
        samples,
        records: traces[0].len(),
        batches: settings.batches,
        traces,
        flags,
    })
}
