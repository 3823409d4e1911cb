//! Maximization of the Hamiltonian over a shell `S_N(q)`.
//!
//! The default solver is projected gradient ascent with Armijo backtracking
//! from random starting points on the shell. Every iterate is retracted to
//! the shell by rescaling each species block, and species with `q(s) = 0`
//! stay at the origin. Local search can only under-estimate the maximum.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_on_shell, Configuration};
use crate::hamiltonian::{Backend, HamiltonianInstance};
use crate::mixture::{Mixture, OverlapVector, SpeciesLayout};
use crate::registry::Registry;
use crate::seeding::{derive_seed, rng_from_seed};
use crate::stats::{mean, variance};

pub const DEFAULT_RESTARTS: usize = 32;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
/// Backtracking factor.
pub const ARMIJO_SHRINK: f64 = 0.5;
/// Fraction of the linear increase required of an accepted step.
pub const ARMIJO_SLOPE: f64 = 1e-4;
/// Stop once `|tangent gradient| / N` falls below this.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub min: usize,
    pub mean: f64,
    pub max: usize,
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub maximizer: Configuration,
    pub energy_per_spin: f64,
    pub restarts: usize,
    /// Fraction of restarts that met the gradient tolerance.
    pub converged_fraction: f64,
    pub iterations: IterationStats,
    /// Index of the restart that produced the maximizer.
    pub best_restart: usize,
}

/// Serializable summary of an [`AscentResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentRecord {
    pub solver: String,
    pub energy_per_spin: f64,
    pub restarts: usize,
    pub converged_fraction: f64,
    pub iterations: IterationStats,
    pub best_restart: usize,
}

impl AscentResult {
    pub fn record(&self, solver: &str) -> AscentRecord {
        AscentRecord {
            solver: solver.to_string(),
            energy_per_spin: self.energy_per_spin,
            restarts: self.restarts,
            converged_fraction: self.converged_fraction,
            iterations: self.iterations,
            best_restart: self.best_restart,
        }
    }
}

fn require_tensor(h: &HamiltonianInstance) -> Result<()> {
    if h.backend() != Backend::CoefficientTensor {
        return Err(Error::BackendMismatch("coefficient-tensor"));
    }
    Ok(())
}

fn check_q(layout: &SpeciesLayout, q: &OverlapVector) -> Result<()> {
    if q.len() != layout.n_species() {
        return Err(Error::DimensionMismatch { expected: layout.n_species(), got: q.len() });
    }
    q.check_shell()
}

/// Rescales every block of `x` with `q(s) > 0` to radius `sqrt(N_s q(s))`.
fn retract(layout: &SpeciesLayout, q: &OverlapVector, x: &mut [f64]) {
    for s in 0..layout.n_species() {
        let block = &mut x[layout.block(s)];
        let target = layout.size(s) as f64 * q.get(s);
        if target == 0.0 {
            block.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let norm_sq: f64 = block.iter().map(|v| v * v).sum();
        let scale = (target / norm_sq).sqrt();
        block.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Gradient with the radial component of every block removed.
fn tangent_gradient(h: &HamiltonianInstance, q: &OverlapVector, x: &[f64]) -> Vec<f64> {
    let layout = h.layout();
    let mut g = h.gradient_coords(x);
    for s in 0..layout.n_species() {
        let range = layout.block(s);
        if q.get(s) == 0.0 {
            g[range].iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let xs = &x[range.clone()];
        let radial = g[range.clone()].iter().zip(xs).map(|(a, b)| a * b).sum::<f64>()
            / xs.iter().map(|v| v * v).sum::<f64>();
        for (gi, xi) in g[range].iter_mut().zip(xs) {
            *gi -= radial * xi;
        }
    }
    g
}

struct Climb {
    x: Vec<f64>,
    energy: f64,
    iterations: usize,
    converged: bool,
}

fn climb(h: &HamiltonianInstance, q: &OverlapVector, start: Vec<f64>, max_iters: usize) -> Climb {
    let layout = h.layout().clone();
    let n = layout.total() as f64;
    let mut x = start;
    let mut energy = h.energy_coords(&x);
    let mut step = n.sqrt().recip();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let g = tangent_gradient(h, q, &x);
        let g_sq: f64 = g.iter().map(|v| v * v).sum();
        if g_sq.sqrt() / n < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        let mut t = step;
        let accepted = loop {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + t * b).collect();
            retract(&layout, q, &mut y);
            let e = h.energy_coords(&y);
            if e >= energy + ARMIJO_SLOPE * t * g_sq {
                break Some((y, e));
            }
            t *= ARMIJO_SHRINK;
            if t * g_sq.sqrt() < 1e-15 * n.sqrt() {
                break None;
            }
        };
        let Some((y, e)) = accepted else {
            // No representable ascent step remains.
            converged = g_sq.sqrt() / n < 1e3 * GRADIENT_TOLERANCE;
            break;
        };
        assert!(e >= energy, "Armijo step decreased the energy");
        x = y;
        energy = e;
        step = 2.0 * t;
    }
    Climb { x, energy, iterations, converged }
}

/// Best of `restarts` projected Armijo ascents from uniform points of `S_N(q)`.
///
/// Restart `i` draws its start from `derive_seed(seed, "restart/i")`; ties in
/// energy go to the lowest index, so the result does not depend on threads.
pub fn ascend(
    h: &HamiltonianInstance,
    q: &OverlapVector,
    restarts: usize,
    max_iters: usize,
    seed: u64,
) -> Result<AscentResult> {
    require_tensor(h)?;
    let layout = h.layout().clone();
    check_q(&layout, q)?;
    if restarts == 0 {
        return Err(Error::Precondition("at least one restart".into()));
    }
    let climbs: Vec<Climb> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, &format!("restart/{i}")));
            let start = sample_on_shell(&layout, q, &mut rng)?.into_coords();
            Ok(climb(h, q, start, max_iters))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, c) in climbs.iter().enumerate() {
        if c.energy > climbs[best].energy {
            best = i;
        }
    }
    let iters: Vec<usize> = climbs.iter().map(|c| c.iterations).collect();
    let converged = climbs.iter().filter(|c| c.converged).count();
    let winner = &climbs[best];
    let maximizer = Configuration::new(layout.clone(), winner.x.clone())?;
    let energy_per_spin = h.energy(&maximizer)? / layout.total() as f64;
    Ok(AscentResult {
        maximizer,
        energy_per_spin,
        restarts,
        converged_fraction: converged as f64 / restarts as f64,
        iterations: IterationStats {
            min: iters.iter().copied().min().unwrap_or(0),
            mean: iters.iter().sum::<usize>() as f64 / restarts as f64,
            max: iters.iter().copied().max().unwrap_or(0),
        },
        best_restart: best,
    })
}

/// Species carrying the single `|p| = 2` term of a pure two-spin mixture.
fn pure_two_spin_species(xi: &Mixture) -> Result<usize> {
    let mut terms = xi.terms();
    let shape_error = || Error::Precondition("mixture is not a single two-spin term within one species".into());
    let (p, _) = terms.next().ok_or_else(shape_error)?;
    if terms.next().is_some() {
        return Err(shape_error());
    }
    let mut nonzero = p.degrees().iter().enumerate().filter(|(_, &d)| d > 0);
    match (nonzero.next(), nonzero.next()) {
        (Some((s, &2)), None) => Ok(s),
        _ => Err(shape_error()),
    }
}

/// Exact maximum of a pure two-spin instance on `S_N(q)`:
/// `sqrt(N) N_s q(s) lambda_max(A) / N`, with `A` the symmetrized coupling
/// matrix of the block. The maximizer is the top eigenvector scaled to the
/// shell; other blocks are set to a fixed point of their shell.
pub fn eigen_oracle_2spin(h: &HamiltonianInstance, q: &OverlapVector) -> Result<AscentResult> {
    require_tensor(h)?;
    let layout = h.layout().clone();
    check_q(&layout, q)?;
    if h.external_field().is_some() {
        return Err(Error::Precondition("instance carries an external field".into()));
    }
    let s = pure_two_spin_species(h.mixture())?;
    let n = layout.total();
    let w = h.weighted_tensor(2).expect("two-spin tensor exists");
    let range = layout.block(s);
    let ns = range.len();
    let a = DMatrix::from_fn(ns, ns, |i, j| {
        let (gi, gj) = (range.start + i, range.start + j);
        0.5 * (w[gi * n + gj] + w[gj * n + gi])
    });
    let eig = SymmetricEigen::new(a);
    let (top, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    let mut x = vec![0.0; n];
    for t in 0..layout.n_species() {
        let radius = (layout.size(t) as f64 * q.get(t)).sqrt();
        let r = layout.block(t);
        if t == s {
            for (k, xi) in x[r].iter_mut().enumerate() {
                *xi = radius * eig.eigenvectors[(k, top)];
            }
        } else {
            x[r.start] = radius;
        }
    }
    let maximizer = Configuration::new(layout.clone(), x)?;
    let energy_per_spin = (n as f64).sqrt() * ns as f64 * q.get(s) * lambda / n as f64;
    Ok(AscentResult {
        maximizer,
        energy_per_spin,
        restarts: 1,
        converged_fraction: 1.0,
        iterations: IterationStats { min: 0, mean: 0.0, max: 0 },
        best_restart: 0,
    })
}

/// Exact maximum over the shell when every species has size one: the shell
/// is the set of sign patterns scaled by `sqrt(q(s))`.
pub fn exhaustive_corner(h: &HamiltonianInstance, q: &OverlapVector) -> Result<AscentResult> {
    require_tensor(h)?;
    let layout = h.layout().clone();
    check_q(&layout, q)?;
    let scale: Vec<f64> = q.values().iter().map(|v| v.sqrt()).collect();
    let points = crate::thermo::oracle::corner_points(&layout, &scale)?;
    let mut best = 0;
    let mut best_e = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let e = h.energy(p)?;
        if e > best_e {
            best = i;
            best_e = e;
        }
    }
    Ok(AscentResult {
        maximizer: points[best].clone(),
        energy_per_spin: best_e / layout.total() as f64,
        restarts: points.len(),
        converged_fraction: 1.0,
        iterations: IterationStats { min: 0, mean: 0.0, max: 0 },
        best_restart: best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundStateSettings {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for GroundStateSettings {
    fn default() -> Self {
        Self { restarts: DEFAULT_RESTARTS, max_iters: DEFAULT_MAX_ITERS }
    }
}

/// A ground-state solver selectable by name.
pub trait GroundStateSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, h: &HamiltonianInstance, q: &OverlapVector, seed: u64) -> Result<AscentResult>;
}

struct Ascent(GroundStateSettings);

impl GroundStateSolver for Ascent {
    fn name(&self) -> &'static str {
        "ascent"
    }

    fn solve(&self, h: &HamiltonianInstance, q: &OverlapVector, seed: u64) -> Result<AscentResult> {
        ascend(h, q, self.0.restarts, self.0.max_iters, seed)
    }
}

struct EigenOracle;

impl GroundStateSolver for EigenOracle {
    fn name(&self) -> &'static str {
        "eigen-oracle"
    }

    fn solve(&self, h: &HamiltonianInstance, q: &OverlapVector, _seed: u64) -> Result<AscentResult> {
        eigen_oracle_2spin(h, q)
    }
}

struct Exhaustive;

impl GroundStateSolver for Exhaustive {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn solve(&self, h: &HamiltonianInstance, q: &OverlapVector, _seed: u64) -> Result<AscentResult> {
        exhaustive_corner(h, q)
    }
}

/// Built-in ground-state solvers.
pub fn solvers() -> Registry<dyn GroundStateSolver, GroundStateSettings> {
    let mut r: Registry<dyn GroundStateSolver, GroundStateSettings> = Registry::new("ground-state solver");
    r.register("ascent", "multi-restart projected Armijo ascent", |s| Box::new(Ascent(s.clone())));
    r.register("eigen-oracle", "top eigenvector of a pure two-spin block", |_| Box::new(EigenOracle));
    r.register("exhaustive", "maximum over sign patterns (every species of size 1)", |_| Box::new(Exhaustive));
    r
}

/// Spread of a per-instance statistic across disorder seeds at one size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub seeds: usize,
    pub mean: f64,
    pub variance: f64,
    /// `N * variance`; stays bounded when the statistic concentrates at rate `1/N`.
    pub scaled_variance: f64,
}

/// Evaluates `stat(layout, seed)` over every layout and seed.
pub fn concentration_probe<F>(layouts: &[Arc<SpeciesLayout>], seeds: &[u64], stat: F) -> Result<Vec<ConcentrationRow>>
where
    F: Fn(&Arc<SpeciesLayout>, u64) -> Result<f64> + Sync,
{
    layouts
        .iter()
        .map(|layout| {
            let values: Vec<f64> = seeds.par_iter().map(|&s| stat(layout, s)).collect::<Result<_>>()?;
            let var = variance(&values);
            Ok(ConcentrationRow {
                n: layout.total(),
                seeds: seeds.len(),
                mean: mean(&values),
                variance: var,
                scaled_variance: layout.total() as f64 * var,
            })
        })
        .collect()
}

/// [`concentration_probe`] of the ascent estimate of the ground-state energy.
pub fn gs_concentration_probe(
    xi: &Mixture,
    layouts: &[Arc<SpeciesLayout>],
    q: &OverlapVector,
    seeds: &[u64],
    settings: &GroundStateSettings,
) -> Result<Vec<ConcentrationRow>> {
    if seeds.len() < 20 {
        return Err(Error::Precondition(format!("concentration probe needs >= 20 seeds, got {}", seeds.len())));
    }
    concentration_probe(layouts, seeds, |layout, seed| {
        let h = HamiltonianInstance::build(xi, layout.clone(), seed, Backend::CoefficientTensor)?;
        Ok(ascend(&h, q, settings.restarts, settings.max_iters, derive_seed(seed, "ascent"))?.energy_per_spin)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_on_shell;
    use approx::assert_abs_diff_eq;

    fn layout(sizes: &[usize]) -> Arc<SpeciesLayout> {
        let labels: Vec<String> = (0..sizes.len()).map(|i| format!("s{i}")).collect();
        Arc::new(SpeciesLayout::new(labels, sizes.to_vec()).unwrap())
    }

    fn instance(sizes: &[usize], terms: &[(&[u32], f64)], seed: u64) -> HamiltonianInstance {
        let l = layout(sizes);
        let xi = Mixture::from_terms(l.labels().to_vec(), terms.iter().map(|(p, c)| (p.to_vec(), *c))).unwrap();
        HamiltonianInstance::build(&xi, l, seed, Backend::CoefficientTensor).unwrap()
    }

    #[test]
    fn empty_mixture_has_zero_ground_state() {
        let h = instance(&[5], &[], 1);
        let r = ascend(&h, &OverlapVector::new(vec![0.5]), 4, 100, 1).unwrap();
        assert_eq!(r.energy_per_spin, 0.0);
        assert!(r.maximizer.is_on_shell(&OverlapVector::new(vec![0.5])));
    }

    #[test]
    fn zero_shell_is_origin() {
        let h = instance(&[4], &[(&[2], 1.0)], 2);
        let r = ascend(&h, &OverlapVector::zeros(1), 3, 100, 1).unwrap();
        assert_eq!(r.energy_per_spin, 0.0);
        assert!(r.maximizer.coords().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ascent_matches_eigen_oracle() {
        let h = instance(&[32], &[(&[2], 1.0)], 3);
        let q = OverlapVector::new(vec![0.99]);
        let oracle = eigen_oracle_2spin(&h, &q).unwrap();
        let r = ascend(&h, &q, 8, DEFAULT_MAX_ITERS, 4).unwrap();
        let rel = (r.energy_per_spin - oracle.energy_per_spin).abs() / oracle.energy_per_spin.abs();
        assert!(rel < 1e-6, "{} vs {}", r.energy_per_spin, oracle.energy_per_spin);
        assert!(r.maximizer.is_on_shell(&q));
        assert_abs_diff_eq!(
            r.energy_per_spin,
            h.energy(&r.maximizer).unwrap() / 32.0,
            epsilon = 1e-10
        );
        let e = h.energy(&oracle.maximizer).unwrap() / 32.0;
        assert_abs_diff_eq!(e, oracle.energy_per_spin, epsilon = 1e-10);
    }

    #[test]
    fn oracle_is_linear_in_q() {
        let h = instance(&[10], &[(&[2], 1.0)], 5);
        let a = eigen_oracle_2spin(&h, &OverlapVector::new(vec![0.3])).unwrap().energy_per_spin;
        let b = eigen_oracle_2spin(&h, &OverlapVector::new(vec![0.9])).unwrap().energy_per_spin;
        assert_abs_diff_eq!(a / 0.3, b / 0.9, epsilon = 1e-12);
    }

    #[test]
    fn oracle_rejects_other_mixtures() {
        let h = instance(&[3, 3], &[(&[1, 1], 1.0)], 1);
        assert!(eigen_oracle_2spin(&h, &OverlapVector::new(vec![0.5, 0.5])).is_err());
        let h = instance(&[4], &[(&[2], 1.0), (&[3], 1.0)], 1);
        assert!(eigen_oracle_2spin(&h, &OverlapVector::new(vec![0.5])).is_err());
    }

    #[test]
    fn oracle_ignores_other_species() {
        let h = instance(&[4, 3], &[(&[0, 2], 1.0)], 6);
        let q = OverlapVector::new(vec![0.4, 0.7]);
        let oracle = eigen_oracle_2spin(&h, &q).unwrap();
        assert!(oracle.maximizer.is_on_shell(&q));
        let r = ascend(&h, &q, 8, DEFAULT_MAX_ITERS, 1).unwrap();
        assert!((r.energy_per_spin - oracle.energy_per_spin).abs() < 1e-8 * oracle.energy_per_spin.abs());
    }

    #[test]
    fn best_beats_random_shell_points() {
        let h = instance(&[4, 4], &[(&[1, 1], 1.0), (&[2, 1], 0.5), (&[0, 3], 0.3)], 7);
        let q = OverlapVector::new(vec![0.6, 0.8]);
        let r = ascend(&h, &q, 16, DEFAULT_MAX_ITERS, 2).unwrap();
        let mut rng = rng_from_seed(9);
        for _ in 0..10_000 {
            let p = sample_on_shell(h.layout(), &q, &mut rng).unwrap();
            assert!(h.energy(&p).unwrap() / 8.0 <= r.energy_per_spin + 1e-12);
        }
    }

    #[test]
    fn deterministic_across_threads() {
        let h = instance(&[6], &[(&[3], 1.0)], 8);
        let q = OverlapVector::new(vec![0.7]);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| ascend(&h, &q, 12, 500, 3).unwrap());
        let b = four.install(|| ascend(&h, &q, 12, 500, 3).unwrap());
        assert_eq!(a.energy_per_spin.to_bits(), b.energy_per_spin.to_bits());
        assert_eq!(a.best_restart, b.best_restart);
    }

    #[test]
    fn exhaustive_corner_maximum() {
        let h = instance(&[1, 1], &[(&[1, 1], 1.0)], 9);
        let q = OverlapVector::new(vec![0.5, 0.5]);
        let r = exhaustive_corner(&h, &q).unwrap();
        let j = h.couplings(2).unwrap();
        // H(m) = sqrt(2) sqrt(1/2) (J_01 + J_10) m_0 m_1 with |m_s| = sqrt(0.5).
        let expected = (j[1] + j[2]).abs() * 0.5 / 2.0;
        assert_abs_diff_eq!(r.energy_per_spin, expected, epsilon = 1e-12);
        assert_eq!(r.restarts, 4);
    }

    #[test]
    fn registry_names() {
        assert_eq!(solvers().names(), vec!["ascent", "eigen-oracle", "exhaustive"]);
    }

    #[test]
    fn concentration_probe_on_empty_mixture() {
        let xi = Mixture::empty(vec!["s0"]);
        let seeds: Vec<u64> = (0..20).collect();
        let rows = gs_concentration_probe(
            &xi,
            &[layout(&[4])],
            &OverlapVector::new(vec![0.5]),
            &seeds,
            &GroundStateSettings { restarts: 2, max_iters: 10 },
        )
        .unwrap();
        assert_eq!(rows[0].variance, 0.0);
    }
}
