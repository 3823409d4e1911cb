//! Empirical probability that independent Gibbs replicas share a prescribed
//! pairwise overlap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{overlap, Configuration};
use crate::hamiltonian::HamiltonianInstance;
use crate::mixture::OverlapVector;
use crate::seeding::derive_seed;
use crate::stats::wilson_interval;

use super::{pt_sampler, EstimatorSettings, Region, SamplerSettings};

/// Width of the reported Wilson interval, in standard deviations.
pub const WILSON_Z: f64 = 1.96;

/// `n`-tuples of Gibbs samples at the target inverse temperature, one
/// independent replica-exchange run per tuple position.
///
/// Tuple `t` collects record `t` of every run, so tuples are identically
/// distributed draws of the product measure (up to the mixing of each run).
pub fn replica_tuples(
    h: &HamiltonianInstance,
    n: usize,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<(Vec<Vec<Configuration>>, Vec<String>)> {
    let sampler = SamplerSettings { keep_samples: true, ..settings.sampler.clone() };
    let mut runs = Vec::with_capacity(n);
    let mut flags = Vec::new();
    for i in 0..n {
        let out = pt_sampler(h, &Region::Full, &settings.beta_grid, &sampler, derive_seed(seed, &format!("replica/{i}")))?;
        for f in &out.flags {
            if !flags.contains(f) {
                flags.push(f.clone());
            }
        }
        runs.push(out.samples);
    }
    let records = runs.iter().map(Vec::len).min().unwrap_or(0);
    let tuples = (0..records).map(|t| runs.iter().map(|r| r[t][0].clone()).collect()).collect();
    Ok((tuples, flags))
}

/// Estimate of `(1/N) log G^{(x)n}{ |R_s(sigma^i, sigma^j) - q(s)| < eps for all i < j, s }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisampProfile {
    pub value: f64,
    /// Wilson interval of the hit frequency, mapped to the log scale.
    pub lower: f64,
    pub upper: f64,
    pub hits: usize,
    pub samples: usize,
    /// Set when no tuple satisfied the constraint and `value` is the floor
    /// `log(0.5 / samples) / N`.
    pub floored: bool,
    pub flags: Vec<String>,
}

pub fn multisamplability_profile(
    h: &HamiltonianInstance,
    q: &OverlapVector,
    n: usize,
    eps: f64,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<MultisampProfile> {
    Ok(multisamplability_profiles(h, q, n, &[eps], settings, seed)?.remove(0))
}

/// [`multisamplability_profile`] at several tolerances from one set of tuples.
pub fn multisamplability_profiles(
    h: &HamiltonianInstance,
    q: &OverlapVector,
    n: usize,
    eps: &[f64],
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<Vec<MultisampProfile>> {
    if n < 2 {
        return Err(Error::Precondition("multisamplability needs n >= 2".into()));
    }
    q.check_shell()?;
    if q.len() != h.layout().n_species() {
        return Err(Error::DimensionMismatch { expected: h.layout().n_species(), got: q.len() });
    }
    let tuples = if eps.iter().any(|&e| e < 2.0) { Some(replica_tuples(h, n, settings, seed)?) } else { None };
    let nf = h.n() as f64;
    eps.iter()
        .map(|&e| {
            let Some((tuples, run_flags)) = tuples.as_ref().filter(|_| e < 2.0) else {
                return Ok(MultisampProfile {
                    value: 0.0,
                    lower: 0.0,
                    upper: 0.0,
                    hits: 0,
                    samples: 0,
                    floored: false,
                    flags: vec!["vacuous constraint".into()],
                });
            };
            let mut flags = run_flags.clone();
            let mut hits = 0;
            for t in tuples {
                if tuple_hits(t, q, e)? {
                    hits += 1;
                }
            }
            let samples = tuples.len();
            let (lo, hi) = wilson_interval(hits, samples, WILSON_Z);
            let floored = hits == 0;
            let value = if floored {
                flags.push(format!("zero hits: floor log(0.5/{samples})/N"));
                (0.5 / samples as f64).ln() / nf
            } else {
                (hits as f64 / samples as f64).ln() / nf
            };
            Ok(MultisampProfile { value, lower: lo.ln() / nf, upper: hi.ln() / nf, hits, samples, floored, flags })
        })
        .collect()
}

fn tuple_hits(t: &[Configuration], q: &OverlapVector, eps: f64) -> Result<bool> {
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            let r = overlap(&t[i], &t[j])?;
            if r.values().iter().zip(q.values()).any(|(a, b)| (a - b).abs() >= eps) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Mean of the per-instance values and log of the mean hit frequency, both
/// per spin. The two orderings need not agree at finite `N`.
pub fn aggregate_profiles(profiles: &[MultisampProfile], n_spins: usize) -> (f64, f64) {
    if profiles.is_empty() {
        return (0.0, 0.0);
    }
    let k = profiles.len() as f64;
    let mean_of_log = profiles.iter().map(|p| p.value).sum::<f64>() / k;
    let freqs: Vec<f64> = profiles
        .iter()
        .map(|p| if p.samples == 0 { 1.0 } else { p.hits as f64 / p.samples as f64 })
        .collect();
    let mean_freq = freqs.iter().sum::<f64>() / k;
    let log_of_mean = if mean_freq > 0.0 {
        mean_freq.ln() / n_spins as f64
    } else {
        let total: usize = profiles.iter().map(|p| p.samples).sum();
        (0.5 / total.max(1) as f64).ln() / n_spins as f64
    };
    (mean_of_log, log_of_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Backend;
    use crate::mixture::{Mixture, SpeciesLayout};
    use std::sync::Arc;

    fn instance(n: usize, terms: &[(&[u32], f64)], seed: u64) -> HamiltonianInstance {
        let layout = Arc::new(SpeciesLayout::single(n).unwrap());
        let xi = Mixture::from_terms(layout.labels().to_vec(), terms.iter().map(|(p, c)| (p.to_vec(), *c))).unwrap();
        HamiltonianInstance::build(&xi, layout, seed, Backend::CoefficientTensor).unwrap()
    }

    fn settings(beta: f64) -> EstimatorSettings {
        EstimatorSettings {
            beta_grid: super::super::uniform_grid(beta, 5),
            sampler: SamplerSettings { burn_in: 200, sweeps: 2000, thin: 5, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn vacuous_constraint_is_zero() {
        let h = instance(8, &[(&[2], 1.0)], 1);
        let p = multisamplability_profile(&h, &OverlapVector::zeros(1), 3, 2.0, &settings(1.0), 1).unwrap();
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn uniform_replicas_are_nearly_orthogonal() {
        let h = instance(64, &[(&[2], 1.0)], 2);
        let p = multisamplability_profile(&h, &OverlapVector::zeros(1), 2, 0.4, &settings(0.0), 3).unwrap();
        assert!(p.value > -0.01, "{p:?}");
    }

    #[test]
    fn zero_overlap_beats_large_overlap() {
        let h = instance(32, &[(&[2], 1.0)], 3);
        let s = settings(0.5);
        let zero = multisamplability_profile(&h, &OverlapVector::zeros(1), 2, 0.2, &s, 4).unwrap();
        let high = multisamplability_profile(&h, &OverlapVector::new(vec![0.8]), 2, 0.2, &s, 4).unwrap();
        assert!(zero.value > high.value);
        assert!(high.floored);
        assert!(zero.lower <= zero.value && zero.value <= zero.upper);
    }

    #[test]
    fn several_tolerances_share_tuples() {
        let h = instance(16, &[(&[2], 1.0)], 5);
        let s = settings(0.5);
        let q = OverlapVector::zeros(1);
        let all = multisamplability_profiles(&h, &q, 2, &[0.1, 0.3, 2.5], &s, 9).unwrap();
        let one = multisamplability_profile(&h, &q, 2, 0.3, &s, 9).unwrap();
        assert_eq!(all[1], one);
        assert!(all[0].hits <= all[1].hits);
        assert_eq!(all[2].value, 0.0);
    }

    #[test]
    fn aggregate_orderings() {
        let a = MultisampProfile { value: (0.5f64).ln() / 10.0, lower: 0.0, upper: 0.0, hits: 5, samples: 10, floored: false, flags: vec![] };
        let b = MultisampProfile { value: (0.1f64).ln() / 10.0, lower: 0.0, upper: 0.0, hits: 1, samples: 10, floored: false, flags: vec![] };
        let (mol, lom) = aggregate_profiles(&[a, b], 10);
        assert!(mol <= lom);
        assert!((lom - (0.3f64).ln() / 10.0).abs() < 1e-15);
    }
}
