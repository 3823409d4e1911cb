//! Product-of-spheres configuration space.
//!
//! A configuration is a point of `R^N` split into species blocks. The
//! configuration space `S_N` is the product of the spheres of radius
//! `sqrt(N_s)`; the shell `S_N(q)` is the product of spheres of radius
//! `sqrt(N_s q(s))`. Overlaps are never clamped.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{OverlapVector, SpeciesLayout};

/// Relative tolerance for sphere and shell membership.
pub const SHELL_TOLERANCE: f64 = 1e-8;

/// A point of `R^N` with cached per-species squared norms.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    coords: Vec<f64>,
    layout: Arc<SpeciesLayout>,
    norms_sq: Vec<f64>,
}

fn block_norm_sq(block: &[f64]) -> f64 {
    block.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Configuration {
    pub fn new(layout: Arc<SpeciesLayout>, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != layout.total() {
            return Err(Error::DimensionMismatch { expected: layout.total(), got: coords.len() });
        }
        let norms_sq = (0..layout.n_species())
            .map(|s| block_norm_sq(&coords[layout.block(s)]))
            .collect();
        Ok(Self { coords, layout, norms_sq })
    }

    pub fn zeros(layout: Arc<SpeciesLayout>) -> Self {
        let n = layout.total();
        Self::new(layout, vec![0.0; n]).expect("length matches layout")
    }

    pub fn layout(&self) -> &Arc<SpeciesLayout> {
        &self.layout
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn block(&self, s: usize) -> &[f64] {
        &self.coords[self.layout.block(s)]
    }

    /// Cached `sum_{i in I_s} sigma_i^2`.
    pub fn norm_sq(&self, s: usize) -> f64 {
        self.norms_sq[s]
    }

    /// Recomputes the cached norms from the coordinates.
    pub fn recomputed_norms_sq(&self) -> Vec<f64> {
        (0..self.layout.n_species()).map(|s| block_norm_sq(self.block(s))).collect()
    }

    /// `R(sigma, sigma)` from the cached norms.
    pub fn self_overlap(&self) -> OverlapVector {
        OverlapVector(
            self.norms_sq
                .iter()
                .zip(self.layout.sizes())
                .map(|(n2, &ns)| n2 / ns as f64)
                .collect(),
        )
    }

    /// Whether every block has squared norm `N_s q(s)` to [`SHELL_TOLERANCE`].
    pub fn is_on_shell(&self, q: &OverlapVector) -> bool {
        self.norms_sq.iter().zip(self.layout.sizes()).zip(q.values()).all(|((&n2, &ns), &qs)| {
            let target = ns as f64 * qs;
            (n2 - target).abs() <= SHELL_TOLERANCE * target.max(1.0)
        })
    }

    /// Whether the configuration lies on `S_N`.
    pub fn is_on_sphere(&self) -> bool {
        self.is_on_shell(&OverlapVector::constant(self.layout.n_species(), 1.0))
    }

    /// Overwrites block `s`.
    pub fn set_block(&mut self, s: usize, values: &[f64]) {
        let range = self.layout.block(s);
        self.coords[range].copy_from_slice(values);
        self.norms_sq[s] = block_norm_sq(values);
    }

    /// Multiplies block `s` by `factor[s]` for every species.
    pub fn scale_blocks(&self, factors: &[f64]) -> Configuration {
        let mut out = self.clone();
        for (s, &f) in factors.iter().enumerate() {
            for x in &mut out.coords[self.layout.block(s)] {
                *x *= f;
            }
            out.norms_sq[s] = block_norm_sq(out.block(s));
        }
        out
    }

    /// `self + factor * other`.
    pub fn axpy(&self, factor: f64, other: &Configuration) -> Result<Configuration> {
        self.check_same_layout(other)?;
        let coords = self.coords.iter().zip(&other.coords).map(|(a, b)| a + factor * b).collect();
        Configuration::new(self.layout.clone(), coords)
    }

    /// `self - other`.
    pub fn sub(&self, other: &Configuration) -> Result<Configuration> {
        self.axpy(-1.0, other)
    }

    fn check_same_layout(&self, other: &Configuration) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }
}

/// Per-species overlap `R_s(a, b) = N_s^{-1} sum_{i in I_s} a_i b_i`.
pub fn overlap(a: &Configuration, b: &Configuration) -> Result<OverlapVector> {
    a.check_same_layout(b)?;
    let layout = &a.layout;
    Ok(OverlapVector(
        (0..layout.n_species())
            .map(|s| dot(a.block(s), b.block(s)) / layout.size(s) as f64)
            .collect(),
    ))
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Gaussian vector rescaled to norm `radius`.
fn sphere_block<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let g = gaussian_vec(n, rng);
        let norm = block_norm_sq(&g).sqrt();
        if norm > 0.0 {
            return g.into_iter().map(|x| x * radius / norm).collect();
        }
    }
}

/// Uniform point of `S_N` (product of the uniform measures on each sphere).
pub fn sample_uniform<R: Rng + ?Sized>(layout: &Arc<SpeciesLayout>, rng: &mut R) -> Configuration {
    let mut coords = Vec::with_capacity(layout.total());
    for &n in layout.sizes() {
        coords.extend(sphere_block(n, (n as f64).sqrt(), rng));
    }
    Configuration::new(layout.clone(), coords).expect("length matches layout")
}

/// Uniform point of the shell `S_N(q)`; blocks with `q(s) = 0` are zero.
pub fn sample_on_shell<R: Rng + ?Sized>(
    layout: &Arc<SpeciesLayout>,
    q: &OverlapVector,
    rng: &mut R,
) -> Result<Configuration> {
    check_species(layout, q)?;
    q.check_shell()?;
    let mut coords = Vec::with_capacity(layout.total());
    for (&n, &qs) in layout.sizes().iter().zip(q.values()) {
        if qs == 0.0 {
            coords.extend(std::iter::repeat_n(0.0, n));
        } else {
            coords.extend(sphere_block(n, (n as f64 * qs).sqrt(), rng));
        }
    }
    Configuration::new(layout.clone(), coords)
}

/// Uniform point of the closed ball `{sum_{I_s} x_i^2 <= N_s}`, per species.
pub fn sample_in_ball<R: Rng + ?Sized>(layout: &Arc<SpeciesLayout>, rng: &mut R) -> Configuration {
    let mut coords = Vec::with_capacity(layout.total());
    for &n in layout.sizes() {
        let u: f64 = rng.random();
        let radius = (n as f64).sqrt() * u.powf(1.0 / n as f64);
        coords.extend(sphere_block(n, radius, rng));
    }
    Configuration::new(layout.clone(), coords).expect("length matches layout")
}

fn check_species(layout: &SpeciesLayout, q: &OverlapVector) -> Result<()> {
    if q.len() != layout.n_species() {
        return Err(Error::DimensionMismatch { expected: layout.n_species(), got: q.len() });
    }
    Ok(())
}

/// Whether `|R_s(sigma, m) - R_s(m, m)| <= delta` for every species.
pub fn in_band(sigma: &Configuration, m: &Configuration, delta: f64) -> Result<bool> {
    let r = overlap(sigma, m)?;
    let q = m.self_overlap();
    Ok(r.values().iter().zip(q.values()).all(|(a, b)| (a - b).abs() <= delta))
}

/// Center, band half-width, replica count and pairwise tolerance of a
/// multi-replica band `B(m, n, delta, rho)`.
#[derive(Debug, Clone)]
pub struct BandSpec {
    pub center: Configuration,
    pub delta: f64,
    pub n: usize,
    pub rho: f64,
}

impl BandSpec {
    pub fn new(center: Configuration, delta: f64, n: usize, rho: f64) -> Result<Self> {
        if !(delta >= 0.0 && rho >= 0.0) {
            return Err(Error::Precondition(format!("band widths must be >= 0 (delta={delta}, rho={rho})")));
        }
        if n == 0 {
            return Err(Error::Precondition("replica count must be >= 1".into()));
        }
        Ok(Self { center, delta, n, rho })
    }

    /// Whether the pair `(a, b)` satisfies `|R_s(a, b) - R_s(m, m)| <= rho`.
    pub fn pair_ok(&self, a: &Configuration, b: &Configuration) -> Result<bool> {
        let r = overlap(a, b)?;
        let q = self.center.self_overlap();
        Ok(r.values().iter().zip(q.values()).all(|(x, y)| (x - y).abs() <= self.rho))
    }
}

/// Membership in `B(m, n, delta, rho)`.
pub fn in_multi_band(replicas: &[Configuration], spec: &BandSpec) -> Result<bool> {
    if replicas.len() != spec.n {
        return Err(Error::DimensionMismatch { expected: spec.n, got: replicas.len() });
    }
    for (i, a) in replicas.iter().enumerate() {
        if !in_band(a, &spec.center, spec.delta)? {
            return Ok(false);
        }
        for b in &replicas[i + 1..] {
            if !spec.pair_ok(a, b)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn check_center(m: &Configuration, q: &OverlapVector) -> Result<()> {
    check_species(m.layout(), q)?;
    q.check_shell()?;
    if !m.is_on_shell(q) {
        return Err(Error::Precondition(format!(
            "center has self-overlap {:?}, expected {:?}",
            m.self_overlap().values(),
            q.values()
        )));
    }
    Ok(())
}

/// Affine map `sigma_i -> (1 - q(s))^{-1/2} (sigma_i - m_i)` from `B(m, 0)` onto
/// `{sigma in S_N : R(sigma, m) = 0}`.
pub fn tilde_transform(sigma: &Configuration, m: &Configuration, q: &OverlapVector) -> Result<Configuration> {
    check_center(m, q)?;
    let r = overlap(sigma, m)?;
    for s in 0..q.len() {
        if (r.get(s) - q.get(s)).abs() > 1e-8 {
            return Err(Error::Precondition(format!(
                "sigma is not in B(m, 0): R_{s}(sigma, m) = {}, R_{s}(m, m) = {}",
                r.get(s),
                q.get(s)
            )));
        }
    }
    if !sigma.is_on_sphere() {
        return Err(Error::Precondition("sigma is not on S_N".into()));
    }
    let factors: Vec<f64> = q.values().iter().map(|qs| (1.0 - qs).sqrt().recip()).collect();
    Ok(sigma.sub(m)?.scale_blocks(&factors))
}

/// Inverse of [`tilde_transform`]: `sigma_i = m_i + sqrt(1 - q(s)) tilde_i`.
pub fn untilde_transform(tilde: &Configuration, m: &Configuration, q: &OverlapVector) -> Result<Configuration> {
    check_center(m, q)?;
    let factors: Vec<f64> = q.values().iter().map(|qs| (1.0 - qs).sqrt()).collect();
    m.axpy(1.0, &tilde.scale_blocks(&factors))
}

/// Projection `phi(sigma)` onto `B(m, 0)`: the residual of `sigma` orthogonal
/// to `m` is rescaled so that `R_s(pi, m) = R_s(m, m)` and `R_s(pi, pi) = 1`.
/// Species with `R_s(m, m) = 0` pass through unchanged.
pub fn project_phi(sigma: &Configuration, m: &Configuration) -> Result<Configuration> {
    let layout = sigma.layout().clone();
    let r = overlap(sigma, m)?;
    let q = m.self_overlap();
    let mut coords = sigma.coords().to_vec();
    for s in 0..layout.n_species() {
        let qs = q.get(s);
        if qs == 0.0 {
            continue;
        }
        let range = layout.block(s);
        let ratio = r.get(s) / qs;
        let tau: Vec<f64> = sigma.block(s).iter().zip(m.block(s)).map(|(x, y)| x - ratio * y).collect();
        let tau_sq = block_norm_sq(&tau) / layout.size(s) as f64;
        if !(tau_sq > 1e-14) {
            return Err(Error::DegenerateResidual(s));
        }
        let scale = ((1.0 - qs).max(0.0) / tau_sq).sqrt();
        for ((c, t), mi) in coords[range].iter_mut().zip(&tau).zip(m.block(s)) {
            *c = mi + scale * t;
        }
    }
    Configuration::new(layout, coords)
}

/// Dilated center `m(t)` with blocks scaled by `1 + t_s / R_s(m, m)`.
pub fn dilate(m: &Configuration, t: &[f64]) -> Configuration {
    let q = m.self_overlap();
    let factors: Vec<f64> = t
        .iter()
        .zip(q.values())
        .map(|(ts, qs)| if *qs == 0.0 { 1.0 } else { 1.0 + ts / qs })
        .collect();
    m.scale_blocks(&factors)
}

/// Rescales each block of `m_prime` onto the shell `S_N(q)`.
pub fn rescale_to_shell(m_prime: &Configuration, q: &OverlapVector) -> Result<Configuration> {
    check_species(m_prime.layout(), q)?;
    q.check_shell()?;
    let r = m_prime.self_overlap();
    let mut factors = Vec::with_capacity(q.len());
    for s in 0..q.len() {
        let (qs, rs) = (q.get(s), r.get(s));
        if qs == 0.0 {
            factors.push(0.0);
        } else if rs == 0.0 {
            return Err(Error::ZeroBlock(s));
        } else {
            factors.push((qs / rs).sqrt());
        }
    }
    Ok(m_prime.scale_blocks(&factors))
}

/// Range of the cosine `x` between a block and the center direction that
/// keeps `|sqrt(q) x - q| <= delta`; `None` when empty.
fn band_cosine_interval(qs: f64, delta: f64) -> Option<(f64, f64)> {
    let root = qs.sqrt();
    let lo = ((qs - delta) / root).max(-1.0);
    let hi = ((qs + delta) / root).min(1.0);
    (lo <= hi).then_some((lo, hi))
}

/// `log int_0^pi sin^k(theta) d theta`, by the recursion `I_k = (k-1)/k I_{k-2}`.
fn log_sine_power_total(k: usize) -> f64 {
    let mut acc = if k % 2 == 0 { std::f64::consts::PI.ln() } else { 2f64.ln() };
    let mut j = if k % 2 == 0 { 2 } else { 3 };
    while j <= k {
        acc += ((j - 1) as f64 / j as f64).ln();
        j += 2;
    }
    acc
}

/// `log int_a^b sin^k(theta) d theta` by composite Gauss-Legendre, in log space.
fn log_sine_power_integral(k: usize, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return f64::NEG_INFINITY;
    }
    if k == 0 {
        return (b - a).ln();
    }
    let rule = gauss_legendre(16);
    let h = (b - a) / panels as f64;
    let mut logs = Vec::with_capacity(panels * rule.len());
    for p in 0..panels {
        let lo = a + h * p as f64;
        for &(x, w) in &rule {
            let theta = lo + 0.5 * h * (x + 1.0);
            let sin = theta.sin();
            if sin > 0.0 {
                logs.push((0.5 * h * w).ln() + k as f64 * sin.ln());
            }
        }
    }
    crate::stats::log_sum_exp(logs)
}

pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let rule = gauss_quad::legendre::GaussLegendre::new(n.try_into().expect("n >= 1"));
    rule.as_node_weight_pairs().to_vec()
}

/// Per-species `log mu_s(B_s(m, delta))` for a center block with self-overlap
/// `qs` in a sphere of dimension `ns`.
fn log_band_measure_species(ns: usize, qs: f64, delta: f64, panels: usize) -> f64 {
    if qs == 0.0 {
        return 0.0;
    }
    let Some((lo, hi)) = band_cosine_interval(qs, delta) else {
        return f64::NEG_INFINITY;
    };
    if ns == 1 {
        let hits = [-1.0, 1.0].iter().filter(|&&x| lo <= x && x <= hi).count();
        return (hits as f64 / 2.0).ln();
    }
    let (theta_lo, theta_hi) = (hi.acos(), lo.acos());
    if ns == 2 {
        return ((theta_hi - theta_lo) / std::f64::consts::PI).ln();
    }
    let k = ns - 2;
    log_sine_power_integral(k, theta_lo, theta_hi, panels) - log_sine_power_total(k)
}

/// `(1/N) log mu(B(m, delta))` for any center `m` in `S_N(q)`.
///
/// Each species contributes an independent one-dimensional integral of the
/// density `sin^{N_s - 2}(theta)` of the angle to the center direction, so the
/// value is computed by quadrature with `nodes` Gauss-Legendre points (16 per
/// panel). Single-coordinate species are counted exactly.
pub fn log_band_volume(layout: &SpeciesLayout, q: &OverlapVector, delta: f64, nodes: usize) -> Result<f64> {
    check_species(layout, q)?;
    q.check_shell()?;
    if !(delta >= 0.0) {
        return Err(Error::Precondition(format!("delta = {delta} must be >= 0")));
    }
    let panels = (nodes / 16).max(1);
    let total: f64 = (0..layout.n_species())
        .map(|s| log_band_measure_species(layout.size(s), q.get(s), delta, panels))
        .sum();
    Ok(total / layout.total() as f64)
}

/// Exact uniform sample from `B(m, delta)`.
///
/// Per species, the angle to the center direction is drawn from its density
/// restricted to the band by rejection, and the orthogonal direction
/// uniformly.
pub fn sample_band<R: Rng + ?Sized>(m: &Configuration, delta: f64, rng: &mut R) -> Result<Configuration> {
    let layout = m.layout().clone();
    let q = m.self_overlap();
    let mut coords = Vec::with_capacity(layout.total());
    for s in 0..layout.n_species() {
        let ns = layout.size(s);
        let radius = (ns as f64).sqrt();
        let qs = q.get(s);
        if qs == 0.0 {
            coords.extend(sphere_block(ns, radius, rng));
            continue;
        }
        let (lo, hi) = band_cosine_interval(qs, delta)
            .ok_or_else(|| Error::Precondition(format!("band of species {s} is empty")))?;
        let dir: Vec<f64> = m.block(s).iter().map(|x| x / m.norm_sq(s).sqrt()).collect();
        if ns == 1 {
            let allowed: Vec<f64> = [-1.0, 1.0].into_iter().filter(|x| lo <= *x && *x <= hi).collect();
            if allowed.is_empty() {
                return Err(Error::Precondition(format!("band of species {s} is empty")));
            }
            let x = allowed[rng.random_range(0..allowed.len())];
            coords.push(x * dir[0]);
            continue;
        }
        let (theta_lo, theta_hi) = (hi.acos(), lo.acos());
        let k = (ns - 2) as f64;
        let half_pi = std::f64::consts::FRAC_PI_2;
        let max_sin = if theta_lo <= half_pi && half_pi <= theta_hi {
            1.0
        } else {
            theta_lo.sin().max(theta_hi.sin())
        };
        let theta = loop {
            let t = theta_lo + (theta_hi - theta_lo) * rng.random::<f64>();
            let u: f64 = rng.random();
            if k == 0.0 || u.ln() <= k * (t.sin().ln() - max_sin.ln()) {
                break t;
            }
        };
        let perp = loop {
            let g = gaussian_vec(ns, rng);
            let c = dot(&g, &dir);
            let r: Vec<f64> = g.iter().zip(&dir).map(|(gi, di)| gi - c * di).collect();
            let norm = block_norm_sq(&r).sqrt();
            if norm > 1e-12 {
                break r.into_iter().map(|x| x / norm).collect::<Vec<_>>();
            }
        };
        let (c, sn) = (theta.cos(), theta.sin());
        coords.extend(dir.iter().zip(&perp).map(|(d, p)| radius * (c * d + sn * p)));
    }
    Configuration::new(layout, coords)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    schema: String,
    layout: SpeciesLayout,
    count: usize,
    encoding: String,
}

const CHECKPOINT_SCHEMA: &str = "multispin.configurations.v1";

/// Writes configurations as one JSON header line followed by the coordinates
/// as little-endian 8-byte floats, configuration after configuration.
pub fn write_configurations<W: Write>(w: &mut W, configs: &[Configuration]) -> Result<()> {
    let layout = configs
        .first()
        .map(|c| (**c.layout()).clone())
        .ok_or_else(|| Error::Precondition("no configurations to write".into()))?;
    if configs.iter().any(|c| **c.layout() != layout) {
        return Err(Error::LayoutMismatch);
    }
    let header = CheckpointHeader {
        schema: CHECKPOINT_SCHEMA.into(),
        layout,
        count: configs.len(),
        encoding: "f64-le".into(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for c in configs {
        for x in c.coords() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads what [`write_configurations`] wrote.
pub fn read_configurations<R: BufRead>(r: &mut R) -> Result<Vec<Configuration>> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.schema != CHECKPOINT_SCHEMA || header.encoding != "f64-le" {
        return Err(Error::Precondition(format!(
            "unsupported checkpoint {} / {}",
            header.schema, header.encoding
        )));
    }
    let layout = Arc::new(header.layout);
    let n = layout.total();
    let mut out = Vec::with_capacity(header.count);
    let mut buf = [0u8; 8];
    for _ in 0..header.count {
        let mut coords = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            coords.push(f64::from_le_bytes(buf));
        }
        out.push(Configuration::new(layout.clone(), coords)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::log_volume_term;
    use crate::seeding::rng_from_seed;
    use approx::assert_abs_diff_eq;

    fn layout(sizes: &[usize]) -> Arc<SpeciesLayout> {
        let labels: Vec<String> = (0..sizes.len()).map(|i| format!("s{i}")).collect();
        Arc::new(SpeciesLayout::new(labels, sizes.to_vec()).unwrap())
    }

    fn ov(v: &[f64]) -> OverlapVector {
        OverlapVector(v.to_vec())
    }

    #[test]
    fn overlap_of_sphere_points() {
        let l = layout(&[3, 5]);
        let mut rng = rng_from_seed(1);
        let a = sample_uniform(&l, &mut rng);
        let r = overlap(&a, &a).unwrap();
        assert_abs_diff_eq!(r.get(0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.get(1), 1.0, epsilon = 1e-12);
        let neg = a.scale_blocks(&[-1.0, -1.0]);
        let r = overlap(&a, &neg).unwrap();
        assert_abs_diff_eq!(r.get(0), -1.0, epsilon = 1e-12);
        let m = sample_on_shell(&l, &ov(&[0.3, 0.6]), &mut rng).unwrap();
        let r = overlap(&m, &m).unwrap();
        assert_abs_diff_eq!(r.get(0), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(r.get(1), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn overlap_rejects_layout_mismatch() {
        let a = Configuration::zeros(layout(&[2, 2]));
        let b = Configuration::zeros(layout(&[1, 3]));
        assert!(matches!(overlap(&a, &b), Err(Error::LayoutMismatch)));
    }

    #[test]
    fn uniform_samples_are_nearly_orthogonal() {
        let l = layout(&[1000]);
        let mut rng = rng_from_seed(2);
        let a = sample_uniform(&l, &mut rng);
        let b = sample_uniform(&l, &mut rng);
        assert!(overlap(&a, &b).unwrap().get(0).abs() < 5.0 / 1000f64.sqrt());
    }

    #[test]
    fn zero_sphere_coordinates_are_signs() {
        let l = layout(&[1, 1]);
        let mut rng = rng_from_seed(3);
        for _ in 0..20 {
            let a = sample_uniform(&l, &mut rng);
            assert!(a.coords().iter().all(|x| x.abs() == 1.0));
        }
    }

    #[test]
    fn shell_at_zero_is_origin() {
        let l = layout(&[4, 2]);
        let m = sample_on_shell(&l, &ov(&[0.0, 0.0]), &mut rng_from_seed(4)).unwrap();
        assert!(m.coords().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn band_membership() {
        let l = layout(&[6, 4]);
        let mut rng = rng_from_seed(5);
        let q = ov(&[0.4, 0.7]);
        let m = sample_on_shell(&l, &q, &mut rng).unwrap();
        // m pushed radially out to the sphere has R_s(sigma, m) = sqrt(q(s)).
        let sigma = m.scale_blocks(&[1.0 / 0.4f64.sqrt(), 1.0 / 0.7f64.sqrt()]);
        assert!(sigma.is_on_sphere());
        let needed = q.values().iter().map(|x| x.sqrt() - x).fold(0.0, f64::max);
        assert!(in_band(&sigma, &m, needed + 1e-9).unwrap());
        assert!(!in_band(&sigma, &m, needed * 0.5).unwrap());

        let zero = Configuration::zeros(l.clone());
        let u = sample_uniform(&l, &mut rng);
        assert!(in_band(&u, &zero, 0.0).unwrap());
        assert!(!in_band(&u, &m, 0.0).unwrap());
    }

    #[test]
    fn multi_band_membership() {
        let l = layout(&[5, 5]);
        let mut rng = rng_from_seed(6);
        let m = sample_on_shell(&l, &ov(&[0.5, 0.5]), &mut rng).unwrap();
        let sigma = sample_band(&m, 0.0, &mut rng).unwrap();
        let one = BandSpec::new(m.clone(), 0.01, 1, 0.0).unwrap();
        assert_eq!(in_multi_band(&[sigma.clone()], &one).unwrap(), in_band(&sigma, &m, 0.01).unwrap());
        let two = BandSpec::new(m.clone(), 0.01, 2, 0.1).unwrap();
        assert!(!in_multi_band(&[sigma.clone(), sigma.clone()], &two).unwrap());
        assert!(in_multi_band(&[sigma.clone()], &two).is_err());
    }

    #[test]
    fn tilde_transform_properties() {
        let l = layout(&[7, 5]);
        let mut rng = rng_from_seed(7);
        let q = ov(&[0.3, 0.6]);
        let m = sample_on_shell(&l, &q, &mut rng).unwrap();
        let s1 = sample_band(&m, 0.0, &mut rng).unwrap();
        let s2 = sample_band(&m, 0.0, &mut rng).unwrap();
        let t1 = tilde_transform(&s1, &m, &q).unwrap();
        let t2 = tilde_transform(&s2, &m, &q).unwrap();
        assert!(t1.is_on_sphere());
        let r_tm = overlap(&t1, &m).unwrap();
        assert!(r_tm.values().iter().all(|x| x.abs() < 1e-9));
        let r12 = overlap(&s1, &s2).unwrap();
        let rt = overlap(&t1, &t2).unwrap();
        for s in 0..2 {
            assert_abs_diff_eq!(rt.get(s), (r12.get(s) - q.get(s)) / (1.0 - q.get(s)), epsilon = 1e-10);
        }
        let back = untilde_transform(&t1, &m, &q).unwrap();
        for (a, b) in back.coords().iter().zip(s1.coords()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let u = sample_uniform(&l, &mut rng);
        assert!(tilde_transform(&u, &m, &q).is_err());
    }

    #[test]
    fn tilde_transform_at_origin_is_identity() {
        let l = layout(&[3, 3]);
        let mut rng = rng_from_seed(8);
        let u = sample_uniform(&l, &mut rng);
        let zero = Configuration::zeros(l.clone());
        assert_eq!(tilde_transform(&u, &zero, &ov(&[0.0, 0.0])).unwrap(), u);
    }

    #[test]
    fn project_phi_lands_in_band_and_is_idempotent() {
        let l = layout(&[9, 6]);
        let mut rng = rng_from_seed(9);
        let q = ov(&[0.5, 0.0]);
        let m = sample_on_shell(&l, &q, &mut rng).unwrap();
        for _ in 0..20 {
            let sigma = sample_band(&m, 0.05, &mut rng).unwrap();
            let pi = project_phi(&sigma, &m).unwrap();
            let r = overlap(&pi, &m).unwrap();
            assert_abs_diff_eq!(r.get(0), 0.5, epsilon = 1e-9);
            assert!(pi.is_on_sphere());
            // q(s) = 0 blocks pass through.
            assert_eq!(pi.block(1), sigma.block(1));
            let again = project_phi(&pi, &m).unwrap();
            for (a, b) in again.coords().iter().zip(pi.coords()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
            let d = pi.sub(&sigma).unwrap().self_overlap();
            assert!(d.get(0) <= 2.0 * 0.05 / 0.5f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn project_phi_degenerate_residual() {
        let l = layout(&[3]);
        let m = Configuration::new(l.clone(), vec![0.5, 0.0, 0.0]).unwrap();
        let sigma = Configuration::new(l, vec![3f64.sqrt(), 0.0, 0.0]).unwrap();
        assert!(matches!(project_phi(&sigma, &m), Err(Error::DegenerateResidual(0))));
    }

    #[test]
    fn rescale_examples() {
        let l = layout(&[4, 4]);
        let mut rng = rng_from_seed(10);
        let q = ov(&[0.2, 0.8]);
        let m = sample_on_shell(&l, &q, &mut rng).unwrap();
        let same = rescale_to_shell(&m, &q).unwrap();
        for (a, b) in same.coords().iter().zip(m.coords()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let zero = rescale_to_shell(&m, &ov(&[0.0, 0.0])).unwrap();
        assert!(zero.coords().iter().all(|&x| x == 0.0));
        let origin = Configuration::zeros(l);
        assert!(matches!(rescale_to_shell(&origin, &q), Err(Error::ZeroBlock(0))));
    }

    #[test]
    fn band_volume_edge_cases() {
        let l = layout(&[50]);
        assert_eq!(log_band_volume(&l, &ov(&[0.0]), 0.01, 1600).unwrap(), 0.0);
        // Two-sphere: uniform angle, closed form.
        let l2 = layout(&[2]);
        let (lo, hi) = band_cosine_interval(0.5, 0.1).unwrap();
        let expected = ((lo.acos() - hi.acos()) / std::f64::consts::PI).ln() / 2.0;
        assert_abs_diff_eq!(log_band_volume(&l2, &ov(&[0.5]), 0.1, 160).unwrap(), expected, epsilon = 1e-14);
        // Three-sphere: cosine uniform on [-1, 1] (Archimedes).
        let l3 = layout(&[3]);
        let expected = ((hi - lo) / 2.0).ln() / 3.0;
        assert_abs_diff_eq!(log_band_volume(&l3, &ov(&[0.5]), 0.1, 160).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn band_volume_approaches_log_volume_term() {
        let q = ov(&[0.5]);
        let target = log_volume_term(&SpeciesLayout::single(1).unwrap(), &q).unwrap();
        let v = log_band_volume(&layout(&[200]), &q, 0.01, 3200).unwrap();
        assert!((v - target).abs() < 0.01 + 0.02, "{v} vs {target}");
    }

    #[test]
    fn band_sampler_respects_band() {
        let l = layout(&[1, 2, 8]);
        let mut rng = rng_from_seed(11);
        let m = Configuration::new(
            l.clone(),
            vec![0.95, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
        )
        .unwrap();
        for _ in 0..200 {
            let s = sample_band(&m, 0.1, &mut rng).unwrap();
            assert!(s.is_on_sphere());
            assert!(in_band(&s, &m, 0.1 + 1e-12).unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let l = layout(&[2, 3]);
        let mut rng = rng_from_seed(12);
        let cs = vec![sample_uniform(&l, &mut rng), sample_uniform(&l, &mut rng)];
        let mut buf = Vec::new();
        write_configurations(&mut buf, &cs).unwrap();
        let back = read_configurations(&mut buf.as_slice()).unwrap();
        assert_eq!(back, cs);
    }
}
