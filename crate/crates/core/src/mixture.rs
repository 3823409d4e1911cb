//! Species layouts and the exact algebra of mixture polynomials.
//!
//! A mixture is a finite sparse polynomial
//! `xi(x) = sum_p delta_sq(p) * prod_s x(s)^p(s)` over multi-degrees `p`
//! with `|p| >= 1`. Coefficients are stored as variances (`delta_sq`), never
//! as their square roots.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum_s lambda_s = 1`.
const PROPORTION_TOLERANCE: f64 = 1e-12;

/// Partition of the coordinates `0..N` into contiguous species blocks.
///
/// Block `s` occupies `offset(s)..offset(s) + N_s`, in species order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayoutRepr", into = "LayoutRepr")]
pub struct SpeciesLayout {
    labels: Vec<String>,
    sizes: Vec<usize>,
    proportions: Vec<f64>,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LayoutRepr {
    species: Vec<String>,
    sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    proportions: Option<Vec<f64>>,
}

impl TryFrom<LayoutRepr> for SpeciesLayout {
    type Error = Error;

    fn try_from(repr: LayoutRepr) -> Result<Self> {
        match repr.proportions {
            Some(p) => SpeciesLayout::with_proportions(repr.species, repr.sizes, p),
            None => SpeciesLayout::new(repr.species, repr.sizes),
        }
    }
}

impl From<SpeciesLayout> for LayoutRepr {
    fn from(layout: SpeciesLayout) -> Self {
        let finite = SpeciesLayout::new(layout.labels.clone(), layout.sizes.clone())
            .map(|l| l.proportions == layout.proportions)
            .unwrap_or(false);
        LayoutRepr {
            proportions: if finite { None } else { Some(layout.proportions) },
            species: layout.labels,
            sizes: layout.sizes,
        }
    }
}

impl SpeciesLayout {
    /// Layout whose proportions are the finite-N ratios `N_s / N`.
    pub fn new<S: Into<String>>(labels: Vec<S>, sizes: Vec<usize>) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        let proportions = sizes.iter().map(|&n| n as f64 / total.max(1) as f64).collect();
        Self::with_proportions(labels, sizes, proportions)
    }

    /// Layout with explicitly given limiting proportions.
    pub fn with_proportions<S: Into<String>>(
        labels: Vec<S>,
        sizes: Vec<usize>,
        proportions: Vec<f64>,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidLayout("at least one species is required".into()));
        }
        if labels.len() != sizes.len() || labels.len() != proportions.len() {
            return Err(Error::InvalidLayout(format!(
                "{} labels, {} sizes and {} proportions",
                labels.len(),
                sizes.len(),
                proportions.len()
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidLayout(format!("duplicate species label '{a}'")));
            }
        }
        if let Some(s) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidLayout(format!("species '{}' has size 0", labels[s])));
        }
        // A single species carries the whole mass, so lambda = 1 is admitted.
        if let Some(s) = proportions
            .iter()
            .position(|&l| !(l > 0.0 && l <= 1.0) || (labels.len() > 1 && l >= 1.0))
        {
            return Err(Error::InvalidLayout(format!(
                "proportion {} of species '{}' outside (0, 1)",
                proportions[s], labels[s]
            )));
        }
        let sum: f64 = proportions.iter().sum();
        if (sum - 1.0).abs() > PROPORTION_TOLERANCE {
            return Err(Error::InvalidLayout(format!("proportions sum to {sum}, not 1")));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &n in &sizes {
            offsets.push(acc);
            acc += n;
        }
        Ok(Self { labels, sizes, proportions, offsets })
    }

    /// Single species of size `n` with proportion 1.
    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec!["s"], vec![n])
    }

    pub fn n_species(&self) -> usize {
        self.labels.len()
    }

    /// Total number of coordinates `N`.
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, s: usize) -> usize {
        self.sizes[s]
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn block(&self, s: usize) -> Range<usize> {
        self.offsets[s]..self.offsets[s] + self.sizes[s]
    }

    /// Species index of coordinate `i`.
    pub fn species_of(&self, i: usize) -> usize {
        // Offsets are strictly increasing since every block is nonempty.
        match self.offsets.binary_search(&i) {
            Ok(s) => s,
            Err(s) => s - 1,
        }
    }

    /// Total angular dimension `sum_s (N_s - 1)` of the product of spheres.
    pub fn angular_dimension(&self) -> usize {
        self.sizes.iter().map(|n| n - 1).sum()
    }
}

/// Per-species degree vector `p` of a mixture term. Ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiDegree(pub Vec<u32>);

impl MultiDegree {
    pub fn new(p: Vec<u32>) -> Self {
        Self(p)
    }

    /// Unit degree `p_s` with a single 1 in species `s`.
    pub fn unit(n_species: usize, s: usize) -> Self {
        let mut p = vec![0; n_species];
        p[s] = 1;
        Self(p)
    }

    /// `|p| = sum_s p(s)`.
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn degrees(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Monomial `prod_s x(s)^p(s)`.
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&p, &xs)| ipow(xs, p)).product()
    }

    /// Every degree `p` with `0 <= p <= self` componentwise, in lexicographic order.
    pub fn lower_set(&self) -> Vec<MultiDegree> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; self.0.len()];
        loop {
            out.push(MultiDegree(cur.clone()));
            let mut s = self.0.len();
            loop {
                if s == 0 {
                    return out;
                }
                s -= 1;
                if cur[s] < self.0[s] {
                    cur[s] += 1;
                    break;
                }
                cur[s] = 0;
            }
        }
    }
}

impl fmt::Display for MultiDegree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")")
    }
}

/// `x^p` by repeated multiplication.
pub(crate) fn ipow(x: f64, p: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..p {
        acc *= x;
    }
    acc
}

fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * f64::from(n - i) / f64::from(i + 1);
    }
    acc
}

/// Per-species real vector `q = (q(s))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OverlapVector(pub Vec<f64>);

impl OverlapVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n_species: usize) -> Self {
        Self(vec![0.0; n_species])
    }

    pub fn constant(n_species: usize, value: f64) -> Self {
        Self(vec![value; n_species])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, s: usize) -> f64 {
        self.0[s]
    }

    /// Checks `q(s) in [0, 1)` for every species, as required of shell parameters.
    pub fn check_shell(&self) -> Result<()> {
        for (index, &value) in self.0.iter().enumerate() {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::OverlapOutOfRange { index, value, range: "[0, 1)" });
            }
        }
        Ok(())
    }

    /// Checks that a measured overlap lies in `[-1, 1]` up to rounding.
    pub fn check_measured(&self) -> Result<()> {
        for (index, &value) in self.0.iter().enumerate() {
            if !(value.abs() <= 1.0 + 1e-9) {
                return Err(Error::OverlapOutOfRange { index, value, range: "[-1, 1]" });
            }
        }
        Ok(())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.0.len() });
        }
        Ok(())
    }
}

/// Finite mixture polynomial with variance coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct Mixture {
    species: Vec<String>,
    terms: BTreeMap<MultiDegree, f64>,
    max_total_degree: u32,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    species: Vec<String>,
    terms: Vec<TermRepr>,
}

/// One `{"p": [...], "delta_sq": ...}` entry of the mixture JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRepr {
    pub p: Vec<u32>,
    pub delta_sq: f64,
}

impl TryFrom<MixtureRepr> for Mixture {
    type Error = Error;

    fn try_from(repr: MixtureRepr) -> Result<Self> {
        Mixture::from_terms(repr.species, repr.terms.into_iter().map(|t| (t.p, t.delta_sq)))
    }
}

impl From<Mixture> for MixtureRepr {
    fn from(m: Mixture) -> Self {
        MixtureRepr {
            terms: m.terms_repr(),
            species: m.species,
        }
    }
}

impl Mixture {
    /// Empty mixture (`xi = 0`) over the given species.
    pub fn empty<S: Into<String>>(species: Vec<S>) -> Self {
        Self {
            species: species.into_iter().map(Into::into).collect(),
            terms: BTreeMap::new(),
            max_total_degree: 0,
        }
    }

    /// Builds a mixture from `(p, delta_sq)` pairs. Zero coefficients are
    /// dropped; negative or non-finite ones, `|p| = 0`, wrong arity and
    /// duplicated degrees are rejected.
    pub fn from_terms<S, I>(species: Vec<S>, terms: I) -> Result<Self>
    where
        S: Into<String>,
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut out = Self::empty(species);
        if out.species.is_empty() {
            return Err(Error::InvalidMixture("no species".into()));
        }
        for (p, delta_sq) in terms {
            let p = MultiDegree(p);
            if p.len() != out.species.len() {
                return Err(Error::InvalidMixture(format!(
                    "degree {p} has {} entries for {} species",
                    p.len(),
                    out.species.len()
                )));
            }
            if p.total() == 0 {
                return Err(Error::InvalidMixture("degree with |p| = 0".into()));
            }
            if !(delta_sq.is_finite() && delta_sq >= 0.0) {
                return Err(Error::InvalidMixture(format!(
                    "coefficient {delta_sq} of degree {p} is not a finite nonnegative number"
                )));
            }
            if out.terms.contains_key(&p) {
                return Err(Error::InvalidMixture(format!("degree {p} listed twice")));
            }
            out.insert_raw(p, delta_sq);
        }
        Ok(out)
    }

    fn insert_raw(&mut self, p: MultiDegree, delta_sq: f64) {
        if delta_sq != 0.0 {
            self.max_total_degree = self.max_total_degree.max(p.total());
            self.terms.insert(p, delta_sq);
        }
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    /// Largest `|p|` among the stored terms (0 for the empty mixture).
    pub fn max_total_degree(&self) -> u32 {
        self.max_total_degree
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiDegree, f64)> {
        self.terms.iter().map(|(p, &c)| (p, c))
    }

    pub fn coefficient(&self, p: &[u32]) -> f64 {
        self.terms.get(&MultiDegree(p.to_vec())).copied().unwrap_or(0.0)
    }

    /// Distinct total degrees `|p|` present, ascending.
    pub fn total_degrees(&self) -> Vec<u32> {
        let mut ks: Vec<u32> = self.terms.keys().map(MultiDegree::total).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    pub fn has_linear_terms(&self) -> bool {
        self.terms.keys().any(|p| p.total() == 1)
    }

    pub fn terms_repr(&self) -> Vec<TermRepr> {
        self.terms
            .iter()
            .map(|(p, &c)| TermRepr { p: p.0.clone(), delta_sq: c })
            .collect()
    }

    /// Checks that the mixture's species match `layout` (count and labels).
    pub fn check_layout(&self, layout: &SpeciesLayout) -> Result<()> {
        if self.species != layout.labels() {
            return Err(Error::InvalidMixture(format!(
                "mixture species {:?} do not match layout species {:?}",
                self.species,
                layout.labels()
            )));
        }
        Ok(())
    }

    /// `xi(x)`.
    pub fn eval(&self, x: &OverlapVector) -> f64 {
        debug_assert_eq!(x.len(), self.n_species());
        self.terms.iter().map(|(p, &c)| c * p.monomial(&x.0)).sum()
    }

    /// `xi(1)`, the sum of the coefficients.
    pub fn eval_at_one(&self) -> f64 {
        self.terms.values().sum()
    }

    /// Gradient `(d xi / d x(s))_s`.
    pub fn grad(&self, x: &OverlapVector) -> Vec<f64> {
        let n = self.n_species();
        let mut g = vec![0.0; n];
        for (p, &c) in &self.terms {
            for (s, gs) in g.iter_mut().enumerate() {
                let ps = p.0[s];
                if ps == 0 {
                    continue;
                }
                let mut term = c * f64::from(ps) * ipow(x.0[s], ps - 1);
                for t in (0..n).filter(|&t| t != s) {
                    term *= ipow(x.0[t], p.0[t]);
                }
                *gs += term;
            }
        }
        g
    }

    /// The mixture `x -> xi((1-q)x + q) - xi(q)` with coefficients
    /// `sum_{p' >= p} delta_sq(p') prod_s C(p'(s), p(s)) (1-q(s))^p(s) q(s)^(p'(s)-p(s))`.
    pub fn shifted_coefficients(&self, q: &OverlapVector) -> Result<Mixture> {
        q.check_len(self.n_species())?;
        q.check_shell()?;
        let mut acc: BTreeMap<MultiDegree, f64> = BTreeMap::new();
        for (p_hi, &c) in &self.terms {
            for p in p_hi.lower_set() {
                if p.total() == 0 {
                    continue;
                }
                let mut w = c;
                for s in 0..self.n_species() {
                    let (hi, lo) = (p_hi.0[s], p.0[s]);
                    w *= binomial(hi, lo) * ipow(1.0 - q.0[s], lo) * ipow(q.0[s], hi - lo);
                }
                *acc.entry(p).or_insert(0.0) += w;
            }
        }
        let mut out = Mixture::empty(self.species.clone());
        for (p, c) in acc {
            out.insert_raw(p, c);
        }
        Ok(out)
    }

    /// The recentered mixture `xi_q`: [`Self::shifted_coefficients`] with every
    /// `|p| = 1` term removed.
    pub fn xi_q(&self, q: &OverlapVector) -> Result<Mixture> {
        let mut shifted = self.shifted_coefficients(q)?;
        shifted.terms.retain(|p, _| p.total() >= 2);
        shifted.max_total_degree = shifted.terms.keys().map(MultiDegree::total).max().unwrap_or(0);
        Ok(shifted)
    }

    /// The same mixture without its `|p| = 1` terms.
    pub fn without_linear_terms(&self) -> Mixture {
        let mut out = self.clone();
        out.terms.retain(|p, _| p.total() >= 2);
        out.max_total_degree = out.terms.keys().map(MultiDegree::total).max().unwrap_or(0);
        out
    }

    /// Multiplies every coefficient by `beta^2`, so the Hamiltonian scales by `beta`.
    pub fn scale(&self, beta: f64) -> Result<Mixture> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::Precondition(format!("inverse temperature {beta} must be >= 0")));
        }
        let mut out = Mixture::empty(self.species.clone());
        for (p, &c) in &self.terms {
            out.insert_raw(p.clone(), c * beta * beta);
        }
        Ok(out)
    }

    /// Onsager term `xi_q(1) / 2`.
    pub fn onsager_term(&self, q: &OverlapVector) -> Result<f64> {
        Ok(0.5 * self.xi_q(q)?.eval_at_one())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `q + (1 - q) q'`, componentwise.
pub fn nesting_compose(q: &OverlapVector, q_prime: &OverlapVector) -> Result<OverlapVector> {
    q_prime.check_len(q.len())?;
    q.check_shell()?;
    q_prime.check_shell()?;
    Ok(OverlapVector(
        q.0.iter().zip(&q_prime.0).map(|(&a, &b)| a + (1.0 - a) * b).collect(),
    ))
}

/// Entropy term `1/2 sum_s lambda_s log(1 - q(s))`.
pub fn log_volume_term(layout: &SpeciesLayout, q: &OverlapVector) -> Result<f64> {
    q.check_len(layout.n_species())?;
    q.check_shell()?;
    Ok(0.5
        * layout
            .proportions()
            .iter()
            .zip(&q.0)
            .map(|(&l, &qs)| l * (1.0 - qs).ln())
            .sum::<f64>())
}
