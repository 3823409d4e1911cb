//! Deterministic free energies at corner scale.
//!
//! With every species of size one, `S_N` is a finite set of sign patterns
//! and integrals against the uniform measure are plain averages. With
//! species of size two or three, the uniform measure on each circle or
//! sphere is integrated by a tensor-product rule: the trapezoid rule in the
//! angle for circles and Gauss-Legendre in the polar cosine times the
//! trapezoid rule in the azimuth for spheres.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{BandSpec, Configuration};
use crate::hamiltonian::{Backend, HamiltonianInstance};
use crate::mixture::SpeciesLayout;
use crate::stats::log_sum_exp;

use super::{EstimateMeta, FreeEnergyEstimate, Method, Region};

/// Largest total angular dimension accepted by the quadrature oracle.
pub const MAX_ANGULAR_DIMENSION: usize = 6;
/// Point budget of one quadrature pass.
pub const MAX_QUADRATURE_POINTS: u64 = 50_000_000;

fn require_tensor(h: &HamiltonianInstance) -> Result<()> {
    if h.backend() != Backend::CoefficientTensor {
        return Err(Error::BackendMismatch("coefficient-tensor"));
    }
    Ok(())
}

/// All `2^S` sign patterns of a layout whose species all have size one.
pub fn sign_patterns(layout: &Arc<SpeciesLayout>) -> Result<Vec<Configuration>> {
    if let Some(s) = (0..layout.n_species()).find(|&s| layout.size(s) != 1) {
        return Err(Error::Precondition(format!(
            "enumeration needs every species of size 1; species {s} has size {}",
            layout.size(s)
        )));
    }
    let n = layout.total();
    if n > 24 {
        return Err(Error::Unsupported(format!("2^{n} sign patterns")));
    }
    Ok((0..1u64 << n)
        .map(|bits| {
            let coords = (0..n).map(|i| if bits >> (n - 1 - i) & 1 == 1 { -1.0 } else { 1.0 }).collect();
            Configuration::new(layout.clone(), coords).expect("length matches layout")
        })
        .collect())
}

/// `(1/N) log` of the average of `exp(beta H)` over all sign patterns.
pub fn exact_fe_enumeration(h: &HamiltonianInstance, beta: f64) -> Result<FreeEnergyEstimate> {
    enumerate_region(h, &Region::Full, beta)
}

/// Exact free energy of `region` at corner scale: `F_N`, `F_N(m, delta)` or
/// `F_N(m, n, delta, rho)` (the latter two already include `-H(m)`).
pub fn enumerate_region(h: &HamiltonianInstance, region: &Region, beta: f64) -> Result<FreeEnergyEstimate> {
    require_tensor(h)?;
    region.check(h)?;
    let layout = h.layout().clone();
    let patterns = sign_patterns(&layout)?;
    let n = layout.total() as f64;
    let log_count = (patterns.len() as f64).ln();
    let value = match region {
        Region::Full => {
            let logs: Vec<f64> = patterns.iter().map(|p| h.energy(p).map(|e| beta * e)).collect::<Result<_>>()?;
            (log_sum_exp(logs) - log_count) / n
        }
        Region::Band { center, delta } => {
            let band = band_members(h, &patterns, center, *delta)?;
            let hm = h.energy(center)?;
            let logs = band.iter().map(|(_, e)| beta * (e - hm));
            (log_sum_exp(logs) - log_count) / n
        }
        Region::MultiBand(spec) => {
            let d = penalty_decomposition_enumeration(h, spec, beta)?;
            d.multi
        }
    };
    let mut meta = EstimateMeta::new(vec![beta]);
    meta.replicas = region.replicas();
    meta.samples = patterns.len() as u64;
    Ok(FreeEnergyEstimate { value, std_error: 0.0, method: Method::Enumeration, meta, flags: Vec::new() })
}

fn band_members<'a>(
    h: &HamiltonianInstance,
    patterns: &'a [Configuration],
    center: &Configuration,
    delta: f64,
) -> Result<Vec<(&'a Configuration, f64)>> {
    let mut out = Vec::new();
    for p in patterns {
        if crate::geometry::in_band(p, center, delta)? {
            out.push((p, h.energy(p)?));
        }
    }
    Ok(out)
}

/// Both sides of the decomposition of the multi-replica free energy into the
/// single-band free energy and the log-probability, under the band-restricted
/// Gibbs measure, that `n` replicas satisfy the pairwise constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyDecomposition {
    /// `F_N(m, n, delta, rho)` summed directly over admissible tuples.
    pub multi: f64,
    /// `F_N(m, delta)`.
    pub single: f64,
    /// `(1/(N n)) log G^{(x)n}{pairs | band}`.
    pub penalty: f64,
}

pub fn penalty_decomposition_enumeration(
    h: &HamiltonianInstance,
    spec: &BandSpec,
    beta: f64,
) -> Result<PenaltyDecomposition> {
    require_tensor(h)?;
    let layout = h.layout().clone();
    let patterns = sign_patterns(&layout)?;
    let n = layout.total() as f64;
    let reps = spec.n;
    let log_count = (patterns.len() as f64).ln();
    let band = band_members(h, &patterns, &spec.center, spec.delta)?;
    if band.is_empty() {
        return Ok(PenaltyDecomposition {
            multi: f64::NEG_INFINITY,
            single: f64::NEG_INFINITY,
            penalty: f64::NAN,
        });
    }
    let hm = h.energy(&spec.center)?;
    let log_w: Vec<f64> = band.iter().map(|(_, e)| beta * (e - hm)).collect();
    let log_z_band = log_sum_exp(log_w.iter().copied());
    let single = (log_z_band - log_count) / n;

    // Pair admissibility table over band members.
    let k = band.len();
    let mut ok = vec![false; k * k];
    for a in 0..k {
        for b in 0..k {
            ok[a * k + b] = spec.pair_ok(band[a].0, band[b].0)?;
        }
    }
    // Log weights of all admissible ordered tuples.
    let mut tuple_logs = Vec::new();
    let mut idx = vec![0usize; reps];
    'outer: loop {
        let admissible = (0..reps).all(|i| (i + 1..reps).all(|j| ok[idx[i] * k + idx[j]]));
        if admissible {
            tuple_logs.push(idx.iter().map(|&i| log_w[i]).sum::<f64>());
        }
        let mut pos = reps;
        while pos > 0 {
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < k {
                continue 'outer;
            }
            idx[pos] = 0;
        }
        break;
    }
    let log_tuples = log_sum_exp(tuple_logs);
    let nn = n * reps as f64;
    let multi = (log_tuples - reps as f64 * log_count) / nn;
    let penalty = (log_tuples - reps as f64 * log_z_band) / nn;
    Ok(PenaltyDecomposition { multi, single, penalty })
}

/// Quadrature rule for one species: points of the block sphere and log weights
/// summing to zero in probability.
fn species_rule(ns: usize, nodes: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let radius = (ns as f64).sqrt();
    match ns {
        1 => Ok(vec![(vec![1.0], 0.5f64.ln()), (vec![-1.0], 0.5f64.ln())]),
        2 => {
            let lw = -(nodes as f64).ln();
            Ok((0..nodes)
                .map(|j| {
                    let t = std::f64::consts::TAU * j as f64 / nodes as f64;
                    (vec![radius * t.cos(), radius * t.sin()], lw)
                })
                .collect())
        }
        3 => {
            let azimuth = 2 * nodes;
            let gl = crate::geometry::gauss_legendre(nodes);
            let mut out = Vec::with_capacity(nodes * azimuth);
            for &(u, w) in &gl {
                let r = (1.0 - u * u).max(0.0).sqrt();
                for j in 0..azimuth {
                    let phi = std::f64::consts::TAU * j as f64 / azimuth as f64;
                    let lw = (w / 2.0).ln() - (azimuth as f64).ln();
                    out.push((vec![radius * r * phi.cos(), radius * r * phi.sin(), radius * u], lw));
                }
            }
            Ok(out)
        }
        _ => Err(Error::Unsupported(format!("quadrature for species of size {ns}"))),
    }
}

fn quadrature_pass(h: &HamiltonianInstance, beta: f64, nodes: usize) -> Result<(f64, u64)> {
    let layout = h.layout().clone();
    let rules: Vec<Vec<(Vec<f64>, f64)>> =
        layout.sizes().iter().map(|&ns| species_rule(ns, nodes)).collect::<Result<_>>()?;
    let points: u64 = rules.iter().map(|r| r.len() as u64).product();
    if points > MAX_QUADRATURE_POINTS {
        return Err(Error::Unsupported(format!("{points} quadrature points exceed the budget")));
    }
    let mut idx = vec![0usize; rules.len()];
    let mut x = vec![0.0; layout.total()];
    // Streaming log-sum-exp.
    let mut max = f64::NEG_INFINITY;
    let mut acc = 0.0;
    loop {
        let mut lw = 0.0;
        for (s, r) in rules.iter().enumerate() {
            let (p, w) = &r[idx[s]];
            x[layout.block(s)].copy_from_slice(p);
            lw += w;
        }
        let v = beta * h.energy_coords(&x) + lw;
        if v > max {
            acc = acc * (max - v).exp() + 1.0;
            max = v;
        } else {
            acc += (v - max).exp();
        }
        let mut s = rules.len();
        let mut done = true;
        while s > 0 {
            s -= 1;
            idx[s] += 1;
            if idx[s] < rules[s].len() {
                done = false;
                break;
            }
            idx[s] = 0;
        }
        if done {
            break;
        }
    }
    Ok(((max + acc.ln()) / layout.total() as f64, points))
}

/// Tensor-product quadrature of `(1/N) log int exp(beta H) d mu` for species of
/// size at most three. The rule is evaluated at `nodes` and `2 nodes`; the
/// finer value is reported and the difference is kept in the metadata and
/// flagged when above `1e-8`.
pub fn exact_fe_quadrature(h: &HamiltonianInstance, nodes_per_angle: usize, beta: f64) -> Result<FreeEnergyEstimate> {
    require_tensor(h)?;
    let layout = h.layout().clone();
    if let Some(&ns) = layout.sizes().iter().find(|&&ns| ns > 3) {
        return Err(Error::Unsupported(format!("quadrature for species of size {ns}")));
    }
    let dim = layout.angular_dimension();
    if dim > MAX_ANGULAR_DIMENSION {
        return Err(Error::Unsupported(format!("angular dimension {dim} > {MAX_ANGULAR_DIMENSION}")));
    }
    if nodes_per_angle < 2 {
        return Err(Error::Precondition("at least two nodes per angle".into()));
    }
    let (coarse, _) = quadrature_pass(h, beta, nodes_per_angle)?;
    let (fine, points) = quadrature_pass(h, beta, 2 * nodes_per_angle)?;
    let diff = (fine - coarse).abs();
    let mut meta = EstimateMeta::new(vec![beta]);
    meta.samples = points;
    meta.extra.insert("nodes_per_angle".into(), (2 * nodes_per_angle) as f64);
    meta.extra.insert("doubling_difference".into(), diff);
    let mut flags = Vec::new();
    if diff > 1e-8 {
        flags.push(format!("unconverged-quadrature: doubling changed value by {diff:.2e}"));
    }
    Ok(FreeEnergyEstimate { value: fine, std_error: 0.0, method: Method::Quadrature, meta, flags })
}

/// Exact ground-state energy per spin at corner scale: maximum of `H` over
/// the sign patterns of the shell, `m_s = +-sqrt(q_s)`.
pub(crate) fn corner_points(layout: &Arc<SpeciesLayout>, scale: &[f64]) -> Result<Vec<Configuration>> {
    Ok(sign_patterns(layout)?.into_iter().map(|p| p.scale_blocks(scale)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{Mixture, OverlapVector};
    use approx::assert_abs_diff_eq;

    fn instance(sizes: &[usize], terms: &[(&[u32], f64)], seed: u64) -> HamiltonianInstance {
        let labels: Vec<String> = (0..sizes.len()).map(|i| format!("s{i}")).collect();
        let layout = Arc::new(SpeciesLayout::new(labels.clone(), sizes.to_vec()).unwrap());
        let xi = Mixture::from_terms(labels, terms.iter().map(|(p, c)| (p.to_vec(), *c))).unwrap();
        HamiltonianInstance::build(&xi, layout, seed, Backend::CoefficientTensor).unwrap()
    }

    #[test]
    fn enumeration_trivial_cases() {
        let h = instance(&[1, 1], &[], 1);
        assert_eq!(exact_fe_enumeration(&h, 1.0).unwrap().value, 0.0);
        // Single spin with xi = x^2: H = c sigma^2 = c.
        let h = instance(&[1], &[(&[2], 1.0)], 3);
        let c = h.couplings(2).unwrap()[0];
        assert_abs_diff_eq!(exact_fe_enumeration(&h, 1.0).unwrap().value, c, epsilon = 1e-12);
    }

    #[test]
    fn enumeration_bipartite_log_cosh() {
        let h = instance(&[1, 1], &[(&[1, 1], 1.0)], 4);
        let j = h.couplings(2).unwrap();
        // Delta_{ij}^2 = 1/2 for mixed pairs, N = 2.
        let g = 2f64.sqrt() * 0.5f64.sqrt() * (j[1] + j[2]);
        let f = exact_fe_enumeration(&h, 1.0).unwrap();
        assert_abs_diff_eq!(f.value, g.cosh().ln() / 2.0, epsilon = 1e-12);
        assert_eq!(f.std_error, 0.0);
    }

    #[test]
    fn enumeration_rejects_continuous_species() {
        let h = instance(&[2], &[(&[2], 1.0)], 1);
        assert!(exact_fe_enumeration(&h, 1.0).is_err());
    }

    #[test]
    fn quadrature_matches_enumeration_on_sign_patterns() {
        let h = instance(&[1, 1], &[(&[1, 1], 1.0), (&[2, 0], 0.5)], 5);
        let a = exact_fe_enumeration(&h, 1.0).unwrap().value;
        let b = exact_fe_quadrature(&h, 4, 1.0).unwrap().value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }

    #[test]
    fn quadrature_zero_and_convergence() {
        let h = instance(&[2, 2], &[], 1);
        assert_abs_diff_eq!(exact_fe_quadrature(&h, 8, 1.0).unwrap().value, 0.0, epsilon = 1e-14);
        let h = instance(&[2, 2], &[(&[1, 1], 1.0), (&[2, 0], 0.3)], 6);
        let f = exact_fe_quadrature(&h, 32, 1.0).unwrap();
        assert!(f.meta.extra["doubling_difference"] < 1e-8, "{:?}", f.meta);
        assert!(f.flags.is_empty());
    }

    #[test]
    fn quadrature_linear_field_on_two_sphere() {
        // H = sqrt(3) (Delta/sqrt(3)) J . sigma: uniform average of exp(a . x) on
        // the sphere of radius sqrt(3) is sinh(r)/r with r = sqrt(3) |a|.
        let h = instance(&[3], &[(&[1], 0.7)], 7);
        let j = h.couplings(1).unwrap();
        let a_norm = 0.7f64.sqrt() * j.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = 3f64.sqrt() * a_norm;
        let exact = (r.sinh() / r).ln() / 3.0;
        let f = exact_fe_quadrature(&h, 16, 1.0).unwrap();
        assert_abs_diff_eq!(f.value, exact, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_dimension_limits() {
        let h = instance(&[4], &[(&[2], 1.0)], 1);
        assert!(matches!(exact_fe_quadrature(&h, 8, 1.0), Err(Error::Unsupported(_))));
        let h = instance(&[3, 3, 3, 3], &[(&[1, 1, 0, 0], 1.0)], 1);
        assert!(matches!(exact_fe_quadrature(&h, 8, 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn penalty_decomposition_is_exact() {
        let h = instance(&[1, 1, 1], &[(&[1, 1, 0], 1.0), (&[0, 1, 1], 0.7), (&[2, 0, 0], 0.4)], 8);
        let layout = h.layout().clone();
        let m = Configuration::new(layout, vec![0.3, -0.2, 0.1]).unwrap();
        for (n, rho) in [(1, 0.5), (2, 1.5), (3, 2.0), (2, 0.95)] {
            let spec = BandSpec::new(m.clone(), 1.0, n, rho).unwrap();
            let d = penalty_decomposition_enumeration(&h, &spec, 1.0).unwrap();
            if d.multi.is_finite() {
                assert_abs_diff_eq!(d.multi, d.single + d.penalty, epsilon = 1e-10);
            }
            let band = enumerate_region(&h, &Region::Band { center: m.clone(), delta: 1.0 }, 1.0).unwrap();
            assert_abs_diff_eq!(band.value, d.single, epsilon = 1e-12);
        }
    }

    #[test]
    fn band_at_origin_is_full_space() {
        let h = instance(&[1, 1], &[(&[1, 1], 1.0)], 9);
        let zero = Configuration::zeros(h.layout().clone());
        let full = exact_fe_enumeration(&h, 1.0).unwrap().value;
        let band = enumerate_region(&h, &Region::Band { center: zero, delta: 0.1 }, 1.0).unwrap().value;
        assert_abs_diff_eq!(full, band, epsilon = 1e-14);
    }

    #[test]
    fn corner_points_lie_on_shell() {
        let h = instance(&[1, 1], &[], 1);
        let q = OverlapVector::new(vec![0.25, 0.64]);
        let scale: Vec<f64> = q.values().iter().map(|v| v.sqrt()).collect();
        let pts = corner_points(h.layout(), &scale).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.iter().all(|p| p.is_on_shell(&q)));
    }
}
