//! Realizations of the Gaussian Hamiltonian with covariance `N xi(R(sigma, sigma'))`.
//!
//! Two backends are available:
//!
//! * [`Backend::CoefficientTensor`] stores, for every total degree `k` in the
//!   mixture, a dense array of i.i.d. standard normals `J_{i_1..i_k}` over all
//!   ordered index tuples, together with the scale `Delta_{i_1..i_k}` fixed by
//!   the species pattern of the tuple. It can be evaluated and differentiated
//!   anywhere in `R^N`.
//! * [`Backend::CovarianceFactor`] stores only `(mixture, layout, seed)` and
//!   draws the exact joint law of the Hamiltonian on a finite point set.
//!
//! Disorder is always regenerated from the seed; it is never serialized.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{overlap, sample_in_ball, Configuration};
use crate::mixture::{Mixture, MultiDegree, OverlapVector, SpeciesLayout};
use crate::seeding::rng_from_seed;

/// Default cap on the number of stored disorder entries.
pub const DEFAULT_MEMORY_BUDGET: u128 = 1 << 28;

/// Relative eigenvalue clip tolerance of the covariance backend.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    CoefficientTensor,
    CovarianceFactor,
}

impl Backend {
    fn name(self) -> &'static str {
        match self {
            Backend::CoefficientTensor => "coefficient-tensor",
            Backend::CovarianceFactor => "covariance-factor",
        }
    }
}

/// Disorder of one total degree `k`.
#[derive(Debug, Clone)]
struct DegreeTensor {
    k: usize,
    /// `J_{i_1..i_k}`, row-major over `[N]^k`.
    couplings: Vec<f64>,
    /// `Delta_{i_1..i_k} J_{i_1..i_k}`.
    weighted: Vec<f64>,
}

/// Independent one-spin term `sum_s sqrt(N/N_s) Delta_{q,p_s} sum_{i in I_s} J_i sigma_i`.
#[derive(Debug, Clone)]
pub struct ExternalField {
    normals: Vec<f64>,
    species_scale: Vec<f64>,
    coefficients: Vec<f64>,
}

impl ExternalField {
    /// The standard normals `J_i`.
    pub fn normals(&self) -> &[f64] {
        &self.normals
    }

    /// `Delta_{q,p_s}` per species.
    pub fn species_scale(&self) -> &[f64] {
        &self.species_scale
    }

    /// Contribution of the field to the energy at `sigma`.
    pub fn energy(&self, sigma: &[f64]) -> f64 {
        self.coefficients.iter().zip(sigma).map(|(a, b)| a * b).sum()
    }
}

/// A realized Hamiltonian for a mixture on a species layout.
#[derive(Debug, Clone)]
pub struct HamiltonianInstance {
    mixture: Mixture,
    layout: Arc<SpeciesLayout>,
    seed: u64,
    backend: Backend,
    tensors: Vec<DegreeTensor>,
    pattern_delta_sq: HashMap<MultiDegree, f64>,
    field: Option<ExternalField>,
}

/// Header that identifies an instance; the disorder is rebuilt from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceHeader {
    pub schema: String,
    pub mixture: Mixture,
    pub layout: SpeciesLayout,
    pub seed: u64,
    pub backend: Backend,
}

const INSTANCE_SCHEMA: &str = "multispin.instance.v1";

/// `Delta_{i_1..i_k}^2` for a tuple with species counts `p`:
/// `Delta_p^2 prod_s p(s)! / k! prod_s N_s^{-p(s)}`.
pub fn tuple_delta_sq(delta_sq: f64, p: &MultiDegree, layout: &SpeciesLayout) -> f64 {
    let k = p.total();
    let factorial = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let mut v = delta_sq / factorial(k);
    for (s, &ps) in p.degrees().iter().enumerate() {
        v *= factorial(ps) / (layout.size(s) as f64).powi(ps as i32);
    }
    v
}

/// Required disorder entries `sum_k N^k` over the distinct total degrees.
pub fn required_entries(mixture: &Mixture, layout: &SpeciesLayout) -> u128 {
    let n = layout.total() as u128;
    mixture.total_degrees().iter().map(|&k| n.saturating_pow(k)).fold(0u128, u128::saturating_add)
}

impl HamiltonianInstance {
    /// Builds an instance with the default memory budget.
    pub fn build(mixture: &Mixture, layout: Arc<SpeciesLayout>, seed: u64, backend: Backend) -> Result<Self> {
        Self::build_with_budget(mixture, layout, seed, backend, DEFAULT_MEMORY_BUDGET)
    }

    pub fn build_with_budget(
        mixture: &Mixture,
        layout: Arc<SpeciesLayout>,
        seed: u64,
        backend: Backend,
        budget: u128,
    ) -> Result<Self> {
        mixture.check_layout(&layout)?;
        let pattern_delta_sq: HashMap<MultiDegree, f64> = mixture
            .terms()
            .map(|(p, c)| (p.clone(), tuple_delta_sq(c, p, &layout)))
            .collect();
        let mut tensors = Vec::new();
        if backend == Backend::CoefficientTensor {
            let required = required_entries(mixture, &layout);
            if required > budget {
                return Err(Error::MemoryBudget { required, budget });
            }
            let mut rng = rng_from_seed(seed);
            let species_of: Vec<usize> = (0..layout.total()).map(|i| layout.species_of(i)).collect();
            for k in mixture.total_degrees() {
                tensors.push(build_degree(k as usize, &layout, &species_of, &pattern_delta_sq, &mut rng));
            }
        }
        Ok(Self {
            mixture: mixture.clone(),
            layout,
            seed,
            backend,
            tensors,
            pattern_delta_sq,
            field: None,
        })
    }

    pub fn mixture(&self) -> &Mixture {
        &self.mixture
    }

    pub fn layout(&self) -> &Arc<SpeciesLayout> {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn n(&self) -> usize {
        self.layout.total()
    }

    pub fn external_field(&self) -> Option<&ExternalField> {
        self.field.as_ref()
    }

    pub fn header(&self) -> InstanceHeader {
        InstanceHeader {
            schema: INSTANCE_SCHEMA.into(),
            mixture: self.mixture.clone(),
            layout: (*self.layout).clone(),
            seed: self.seed,
            backend: self.backend,
        }
    }

    /// Rebuilds an instance from its checkpoint header.
    pub fn from_header(header: &InstanceHeader) -> Result<Self> {
        if header.schema != INSTANCE_SCHEMA {
            return Err(Error::Precondition(format!("unsupported instance schema '{}'", header.schema)));
        }
        Self::build(&header.mixture, Arc::new(header.layout.clone()), header.seed, header.backend)
    }

    /// `Delta_{i_1..i_k}^2` of an index tuple (0 when its pattern is not in the mixture).
    pub fn tuple_delta_sq(&self, tuple: &[usize]) -> f64 {
        let mut counts = vec![0u32; self.layout.n_species()];
        for &i in tuple {
            counts[self.layout.species_of(i)] += 1;
        }
        self.pattern_delta_sq.get(&MultiDegree(counts)).copied().unwrap_or(0.0)
    }

    /// Weighted coupling tensor `Delta J` of total degree `k`, row-major over `[N]^k`.
    pub fn weighted_tensor(&self, k: usize) -> Option<&[f64]> {
        self.tensors.iter().find(|t| t.k == k).map(|t| t.weighted.as_slice())
    }

    /// Raw standard normals of total degree `k`.
    pub fn couplings(&self, k: usize) -> Option<&[f64]> {
        self.tensors.iter().find(|t| t.k == k).map(|t| t.couplings.as_slice())
    }

    fn require_tensor(&self) -> Result<()> {
        if self.backend != Backend::CoefficientTensor {
            return Err(Error::BackendMismatch(Backend::CoefficientTensor.name()));
        }
        Ok(())
    }

    fn check_point(&self, sigma: &Configuration) -> Result<()> {
        if **sigma.layout() != *self.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    /// `H_N(sigma)`; requires the tensor backend.
    pub fn energy(&self, sigma: &Configuration) -> Result<f64> {
        self.require_tensor()?;
        self.check_point(sigma)?;
        Ok(self.energy_coords(sigma.coords()))
    }

    /// Energy of a raw coordinate vector laid out like the instance.
    pub(crate) fn energy_coords(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut total = 0.0;
        let mut scratch = Vec::new();
        for t in &self.tensors {
            total += contract_all(&t.weighted, t.k, n, x, &mut scratch);
        }
        let mut e = (n as f64).sqrt() * total;
        if let Some(f) = &self.field {
            e += f.energy(x);
        }
        e
    }

    /// Euclidean gradient of [`Self::energy`].
    pub fn gradient(&self, sigma: &Configuration) -> Result<Vec<f64>> {
        self.require_tensor()?;
        self.check_point(sigma)?;
        Ok(self.gradient_coords(sigma.coords()))
    }

    pub(crate) fn gradient_coords(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut g = vec![0.0; n];
        for t in &self.tensors {
            for r in 0..t.k {
                let part = contract_except(&t.weighted, t.k, n, x, r);
                for (gi, pi) in g.iter_mut().zip(part) {
                    *gi += pi;
                }
            }
        }
        let scale = (n as f64).sqrt();
        for gi in &mut g {
            *gi *= scale;
        }
        if let Some(f) = &self.field {
            for (gi, c) in g.iter_mut().zip(&f.coefficients) {
                *gi += c;
            }
        }
        g
    }

    /// Joint draw of `(H(sigma_1), .., H(sigma_M))` for the covariance backend.
    pub fn realize(&self, points: &[Configuration]) -> Result<Vec<f64>> {
        if self.backend != Backend::CovarianceFactor {
            return Err(Error::BackendMismatch(Backend::CovarianceFactor.name()));
        }
        realize_on_points(&self.mixture, &self.layout, points, self.seed)
    }
}

fn build_degree<R: Rng>(
    k: usize,
    layout: &SpeciesLayout,
    species_of: &[usize],
    pattern_delta_sq: &HashMap<MultiDegree, f64>,
    rng: &mut R,
) -> DegreeTensor {
    let n = layout.total();
    let n_species = layout.n_species();
    let len = n.pow(k as u32);
    let couplings: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    // Scale per species pattern, indexed by the counts in radix k + 1.
    let radix = k + 1;
    let mut by_code = vec![0.0; radix.pow(n_species as u32)];
    for (p, &d2) in pattern_delta_sq {
        if p.total() as usize == k {
            let code = p.degrees().iter().rev().fold(0usize, |acc, &c| acc * radix + c as usize);
            by_code[code] = d2.sqrt();
        }
    }
    let weights: Vec<usize> = (0..n_species).map(|s| radix.pow(s as u32)).collect();

    let mut weighted = vec![0.0; len];
    let mut digits = vec![0usize; k];
    let mut code = k * weights[species_of[0]];
    for (idx, w) in weighted.iter_mut().enumerate() {
        *w = by_code[code] * couplings[idx];
        // Odometer increment, last index fastest.
        let mut pos = k;
        while pos > 0 {
            pos -= 1;
            code -= weights[species_of[digits[pos]]];
            digits[pos] += 1;
            if digits[pos] < n {
                code += weights[species_of[digits[pos]]];
                break;
            }
            digits[pos] = 0;
            code += weights[species_of[0]];
        }
    }
    DegreeTensor { k, couplings, weighted }
}

/// `sum_{i_1..i_k} w[i] x_{i_1} .. x_{i_k}` by repeatedly contracting the last index.
fn contract_all(w: &[f64], k: usize, n: usize, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
    if k == 0 {
        return w[0];
    }
    let rows = w.len() / n;
    scratch.clear();
    scratch.extend(w.chunks_exact(n).map(|row| dot(row, x)));
    let mut len = rows;
    for _ in 1..k {
        let next = len / n;
        for a in 0..next {
            let v = dot(&scratch[a * n..a * n + n], x);
            scratch[a] = v;
        }
        len = next;
    }
    scratch[0]
}

/// Contracts every index of `w` except position `r`, leaving a vector of length `n`.
fn contract_except(w: &[f64], k: usize, n: usize, x: &[f64], r: usize) -> Vec<f64> {
    let mut v = w.to_vec();
    // Trailing indices r+1..k.
    for _ in r + 1..k {
        v = v.chunks_exact(n).map(|row| dot(row, x)).collect();
    }
    // Leading indices 0..r.
    for _ in 0..r {
        let stride = v.len() / n;
        let mut out = vec![0.0; stride];
        for (j, xj) in x.iter().enumerate() {
            for (o, vi) in out.iter_mut().zip(&v[j * stride..(j + 1) * stride]) {
                *o += xj * vi;
            }
        }
        v = out;
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `(H(sigma_1), .., H(sigma_M))` jointly Gaussian with covariance
/// `N xi(R(sigma_a, sigma_b))`, by eigendecomposition of the covariance.
///
/// Repeated points receive identical values. Eigenvalues down to
/// `-PSD_TOLERANCE * trace` are clipped to zero; anything more negative is an
/// error, since it means the inputs cannot come from a valid model.
pub fn realize_on_points(
    xi: &Mixture,
    layout: &Arc<SpeciesLayout>,
    points: &[Configuration],
    seed: u64,
) -> Result<Vec<f64>> {
    xi.check_layout(layout)?;
    let mut unique: Vec<&Configuration> = Vec::new();
    let mut index = Vec::with_capacity(points.len());
    for p in points {
        if **p.layout() != **layout {
            return Err(Error::LayoutMismatch);
        }
        match unique.iter().position(|u| u.coords() == p.coords()) {
            Some(i) => index.push(i),
            None => {
                index.push(unique.len());
                unique.push(p);
            }
        }
    }
    let m = unique.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let n = layout.total() as f64;
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let c = n * xi.eval(&overlap(unique[a], unique[b])?);
            cov[(a, b)] = c;
            cov[(b, a)] = c;
        }
    }
    let trace = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let tolerance = -PSD_TOLERANCE * trace.abs();
    let mut roots = Vec::with_capacity(m);
    for &l in eig.eigenvalues.iter() {
        if l < tolerance {
            return Err(Error::NotPositiveSemidefinite { eigenvalue: l, tolerance });
        }
        roots.push(l.max(0.0).sqrt());
    }
    let mut rng = rng_from_seed(seed);
    let z: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let values: Vec<f64> = (0..m)
        .map(|a| (0..m).map(|j| eig.eigenvectors[(a, j)] * roots[j] * z[j]).sum())
        .collect();
    Ok(index.into_iter().map(|i| values[i]).collect())
}

/// Adds the independent one-spin term that turns an instance of `xi_q` into
/// one of the shifted mixture `x -> xi((1-q)x + q) - xi(q)`.
///
/// `hq` must have been built from `xi.xi_q(q)`. The field normals are drawn
/// from `seed`, independently of the disorder of `hq`.
pub fn attach_external_field(
    hq: &HamiltonianInstance,
    xi: &Mixture,
    q: &OverlapVector,
    seed: u64,
) -> Result<HamiltonianInstance> {
    let xi_q = xi.xi_q(q)?;
    let matches = xi_q.len() == hq.mixture.len()
        && xi_q.terms().zip(hq.mixture.terms()).all(|((p, a), (p2, b))| {
            p == p2 && (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
        });
    if !matches {
        return Err(Error::Precondition("instance was not built from xi_q(xi, q)".into()));
    }
    let shifted = xi.shifted_coefficients(q)?;
    let layout = hq.layout.clone();
    let n = layout.total() as f64;
    let species_scale: Vec<f64> = (0..layout.n_species())
        .map(|s| shifted.coefficient(MultiDegree::unit(layout.n_species(), s).degrees()).sqrt())
        .collect();
    let mut rng = rng_from_seed(seed);
    let normals: Vec<f64> = (0..layout.total()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let coefficients = normals
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let s = layout.species_of(i);
            (n / layout.size(s) as f64).sqrt() * species_scale[s] * j
        })
        .collect();
    let mut out = hq.clone();
    out.mixture = shifted;
    out.field = Some(ExternalField { normals, species_scale, coefficients });
    Ok(out)
}

/// Largest observed `|H(sigma) - H(pi)| / (N max_s sqrt(R_s(sigma - pi, sigma - pi)))`
/// over `pairs` random pairs from the closed ball.
///
/// Half of the pairs are independent points of the ball and half are local
/// perturbations of a random point (kept inside the ball), so both the global
/// and the local modulus are probed.
pub fn lipschitz_ratio<R: Rng + ?Sized>(h: &HamiltonianInstance, pairs: usize, rng: &mut R) -> Result<f64> {
    h.require_tensor()?;
    let layout = h.layout.clone();
    let n = layout.total() as f64;
    let mut best: f64 = 0.0;
    for t in 0..pairs {
        let sigma = sample_in_ball(&layout, rng);
        let pi = if t % 2 == 0 {
            sample_in_ball(&layout, rng)
        } else {
            let eps = 10f64.powf(-3.0 * rng.random::<f64>());
            let step = sample_in_ball(&layout, rng);
            let mut p = sigma.axpy(eps, &step)?;
            // Pull back into the ball where the step left it.
            let factors: Vec<f64> = (0..layout.n_species())
                .map(|s| {
                    let r = p.norm_sq(s) / layout.size(s) as f64;
                    if r > 1.0 { r.sqrt().recip() } else { 1.0 }
                })
                .collect();
            p = p.scale_blocks(&factors);
            p
        };
        let d = pi.sub(&sigma)?.self_overlap();
        let dist = d.values().iter().map(|x| x.sqrt()).fold(0.0, f64::max);
        if dist == 0.0 {
            continue;
        }
        let ratio = (h.energy(&sigma)? - h.energy(&pi)?).abs() / (n * dist);
        best = best.max(ratio);
    }
    Ok(best)
}
