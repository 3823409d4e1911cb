//! Property suite behind `multispin verify`.
//!
//! Every check runs to completion and is reported individually; a failure
//! never stops the suite. Checks that need corner scale use the configured
//! species with one coordinate each.

use std::collections::BTreeMap;
use std::sync::Arc;

use multispin::geometry::{overlap, sample_on_shell, sample_uniform, BandSpec};
use multispin::ground_state::{ascend, eigen_oracle_2spin};
use multispin::mixture::{log_volume_term, nesting_compose};
use multispin::seeding::{derive_seed, rng_from_seed, SimRng};
use multispin::stats::{mean, std_error};
use multispin::tap::{nesting_experiment, tap_evaluate, TapConfig};
use multispin::thermo::oracle::sign_patterns;
use multispin::thermo::{
    exact_fe_enumeration, fe_thermo_integration, penalty_decomposition_enumeration, uniform_grid, EstimatorSettings,
    SamplerSettings,
};
use multispin::{Backend, Configuration, HamiltonianInstance, Mixture, OverlapVector, SpeciesLayout};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mutation};

pub const VERIFY_SCHEMA: &str = "multispin.verify.v1";

/// Largest corner layout (in coordinates) used by enumeration checks.
const CORNER_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema: String,
    pub master_seed: u64,
    pub mutation: Option<Mutation>,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| c.status == Status::Fail).collect()
    }
}

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn judge(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

type ShiftedFormula = fn(&Mixture, &OverlapVector) -> multispin::Result<Mixture>;

struct Context {
    layout: Arc<SpeciesLayout>,
    mixture: Mixture,
    seed: u64,
    shifted: ShiftedFormula,
}

impl Context {
    fn rng(&self, name: &str) -> SimRng {
        rng_from_seed(derive_seed(self.seed, &format!("verify/{name}")))
    }

    fn corner_layout(&self) -> Option<Arc<SpeciesLayout>> {
        let s = self.layout.n_species();
        (s <= CORNER_LIMIT)
            .then(|| Arc::new(SpeciesLayout::new(self.layout.labels().to_vec(), vec![1; s]).expect("valid layout")))
    }

    fn random_q(&self, rng: &mut SimRng) -> OverlapVector {
        OverlapVector::new((0..self.layout.n_species()).map(|_| rng.random::<f64>() * 0.95).collect())
    }

    /// The configured mixture plus two random ones over the same species.
    fn mixtures(&self, rng: &mut SimRng) -> Vec<Mixture> {
        let s = self.layout.n_species();
        let mut out = vec![self.mixture.clone()];
        for _ in 0..2 {
            let mut terms = BTreeMap::new();
            for _ in 0..4 {
                let p: Vec<u32> = (0..s).map(|_| rng.random_range(0..3)).collect();
                if p.iter().sum::<u32>() > 0 {
                    terms.insert(p, 0.1 + rng.random::<f64>());
                }
            }
            out.push(Mixture::from_terms(self.layout.labels().to_vec(), terms).expect("valid mixture"));
        }
        out
    }
}

/// Shifted coefficients with the `(1 - q)^k` factor dropped.
fn mutated_shifted(xi: &Mixture, q: &OverlapVector) -> multispin::Result<Mixture> {
    let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (p_hi, c) in xi.terms() {
        for p in p_hi.lower_set() {
            if p.total() == 0 {
                continue;
            }
            let mut w = c;
            for s in 0..xi.n_species() {
                let (hi, lo) = (p_hi.degrees()[s], p.degrees()[s]);
                w *= binomial(hi, lo) * q.get(s).powi((hi - lo) as i32);
            }
            *acc.entry(p.degrees().to_vec()).or_insert(0.0) += w;
        }
    }
    Mixture::from_terms(xi.species().to_vec(), acc)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

fn shifted_direct(xi: &Mixture, q: &OverlapVector, x: &[f64]) -> f64 {
    let arg = OverlapVector::new(q.values().iter().zip(x).map(|(&a, &b)| a + (1.0 - a) * b).collect());
    xi.eval(&arg) - xi.eval(q)
}

fn check_shifted(ctx: &Context) -> multispin::Result<Outcome> {
    let mut rng = ctx.rng("shifted");
    let mut worst: f64 = 0.0;
    for xi in ctx.mixtures(&mut rng) {
        for _ in 0..100 {
            let q = ctx.random_q(&mut rng);
            let x: Vec<f64> = (0..q.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let formula = (ctx.shifted)(&xi, &q)?.eval(&OverlapVector::new(x.clone()));
            let direct = shifted_direct(&xi, &q, &x);
            worst = worst.max((formula - direct).abs() / (1.0 + direct.abs()));
        }
    }
    Ok(judge(worst <= 1e-10, format!("max relative error {worst:e} (tolerance 1e-10)")))
}

fn check_xi_q(ctx: &Context) -> multispin::Result<Outcome> {
    let mut rng = ctx.rng("xi-q");
    let mut worst: f64 = 0.0;
    for xi in ctx.mixtures(&mut rng) {
        for _ in 0..50 {
            let q = ctx.random_q(&mut rng);
            let x: Vec<f64> = (0..q.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shifted = xi.shifted_coefficients(&q)?;
            let linear: f64 = (0..q.len())
                .map(|s| shifted.coefficient(multispin::MultiDegree::unit(q.len(), s).degrees()) * x[s])
                .sum();
            let xi_q = xi.xi_q(&q)?;
            if xi_q.has_linear_terms() {
                return Ok(Outcome::Fail("xi_q kept a linear term".into()));
            }
            let v = xi_q.eval(&OverlapVector::new(x.clone()));
            worst = worst.max((v - (shifted_direct(&xi, &q, &x) - linear)).abs());
            worst = worst.max((xi.onsager_term(&q)? - 0.5 * xi_q.eval_at_one()).abs());
        }
    }
    Ok(judge(worst <= 1e-10, format!("max error {worst:e} (tolerance 1e-10)")))
}

fn max_coefficient_difference(a: &Mixture, b: &Mixture) -> f64 {
    a.terms()
        .chain(b.terms())
        .map(|(p, _)| (a.coefficient(p.degrees()) - b.coefficient(p.degrees())).abs())
        .fold(0.0, f64::max)
}

fn check_nesting(ctx: &Context) -> multispin::Result<Outcome> {
    let mut rng = ctx.rng("nesting");
    let mut worst: f64 = 0.0;
    let mut logvol: f64 = 0.0;
    for xi in ctx.mixtures(&mut rng) {
        for _ in 0..30 {
            let q = ctx.random_q(&mut rng);
            let qp = ctx.random_q(&mut rng);
            let q_hat = nesting_compose(&q, &qp)?;
            worst = worst.max(max_coefficient_difference(&xi.xi_q(&q_hat)?, &xi.xi_q(&q)?.xi_q(&qp)?));
            let sum = log_volume_term(&ctx.layout, &q)? + log_volume_term(&ctx.layout, &qp)?;
            logvol = logvol.max((sum - log_volume_term(&ctx.layout, &q_hat)?).abs());
        }
    }
    Ok(judge(
        worst <= 1e-10 && logvol <= 1e-12,
        format!("coefficient error {worst:e} (1e-10), log-volume additivity {logvol:e} (1e-12)"),
    ))
}

fn check_overlaps(ctx: &Context) -> multispin::Result<Outcome> {
    let mut rng = ctx.rng("overlaps");
    let mut worst: f64 = 0.0;
    let mut off_shell = 0;
    for _ in 0..200 {
        let a = sample_uniform(&ctx.layout, &mut rng);
        let b = sample_uniform(&ctx.layout, &mut rng);
        worst = worst.max(overlap(&a, &b)?.values().iter().fold(0.0, |m: f64, v| m.max(v.abs())));
        let q = ctx.random_q(&mut rng);
        if !sample_on_shell(&ctx.layout, &q, &mut rng)?.is_on_shell(&q) {
            off_shell += 1;
        }
    }
    Ok(judge(
        worst <= 1.0 + 1e-12 && off_shell == 0,
        format!("max |R_s| = {worst}, off-shell samples {off_shell}"),
    ))
}

fn build(ctx: &Context, layout: &Arc<SpeciesLayout>, seed: u64) -> multispin::Result<HamiltonianInstance> {
    HamiltonianInstance::build(&ctx.mixture, layout.clone(), seed, Backend::CoefficientTensor)
}

fn check_gradient(ctx: &Context) -> multispin::Result<Outcome> {
    let h = match build(ctx, &ctx.layout, derive_seed(ctx.seed, "verify/gradient")) {
        Ok(h) => h,
        Err(multispin::Error::MemoryBudget { .. }) => return Ok(Outcome::Skip("model exceeds the tensor budget".into())),
        Err(e) => return Err(e),
    };
    let mut rng = ctx.rng("gradient");
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let s = sample_uniform(&ctx.layout, &mut rng);
        worst = worst.max(gradient_error(&h, &s)?);
    }
    Ok(judge(worst <= 1e-6, format!("max relative error {worst:e} (tolerance 1e-6)")))
}

/// Relative sup-norm distance between the gradient and central differences.
pub fn gradient_error(h: &HamiltonianInstance, sigma: &Configuration) -> multispin::Result<f64> {
    let g = h.gradient(sigma)?;
    let step = 1e-5;
    let mut diff: f64 = 0.0;
    for i in 0..g.len() {
        let mut plus = sigma.coords().to_vec();
        let mut minus = plus.clone();
        plus[i] += step;
        minus[i] -= step;
        let fd = (h.energy(&Configuration::new(sigma.layout().clone(), plus)?)?
            - h.energy(&Configuration::new(sigma.layout().clone(), minus)?)?)
            / (2.0 * step);
        diff = diff.max((fd - g[i]).abs());
    }
    let scale = g.iter().fold(0.0, |m: f64, v| m.max(v.abs())).max(1.0);
    Ok(diff / scale)
}

fn check_covariance(ctx: &Context) -> multispin::Result<Outcome> {
    let sizes: Vec<usize> = ctx.layout.sizes().iter().map(|&n| n.min(3)).collect();
    let layout = Arc::new(SpeciesLayout::new(ctx.layout.labels().to_vec(), sizes)?);
    let mut rng = ctx.rng("covariance");
    let pairs: Vec<(Configuration, Configuration)> =
        (0..3).map(|_| (sample_uniform(&layout, &mut rng), sample_uniform(&layout, &mut rng))).collect();
    let n = layout.total() as f64;
    let instances = 3000;
    let mut products = vec![Vec::with_capacity(instances); pairs.len()];
    for i in 0..instances {
        let h = build(ctx, &layout, derive_seed(ctx.seed, &format!("verify/covariance/{i}")))?;
        for (k, (a, b)) in pairs.iter().enumerate() {
            products[k].push(h.energy(a)? * h.energy(b)? / n);
        }
    }
    let mut worst: f64 = 0.0;
    for (k, (a, b)) in pairs.iter().enumerate() {
        let expected = ctx.mixture.eval(&overlap(a, b)?);
        let se = std_error(&products[k]);
        let z = if se > 0.0 { (mean(&products[k]) - expected).abs() / se } else { (mean(&products[k]) - expected).abs() * 1e12 };
        worst = worst.max(z);
    }
    Ok(judge(worst <= 4.0, format!("largest deviation {worst:.2} SE over {instances} instances (tolerance 4 SE)")))
}

fn corner(ctx: &Context) -> Result<Arc<SpeciesLayout>, Outcome> {
    ctx.corner_layout().ok_or_else(|| Outcome::Skip(format!("more than {CORNER_LIMIT} species")))
}

fn check_ti_vs_enumeration(ctx: &Context) -> multispin::Result<Outcome> {
    let layout = match corner(ctx) {
        Ok(l) => l,
        Err(o) => return Ok(o),
    };
    let h = build(ctx, &layout, derive_seed(ctx.seed, "verify/ti"))?;
    let exact = exact_fe_enumeration(&h, 1.0)?.value;
    let settings = EstimatorSettings {
        beta_grid: uniform_grid(1.0, 9),
        sampler: SamplerSettings { burn_in: 500, sweeps: 8000, ..Default::default() },
        ..Default::default()
    };
    let est = fe_thermo_integration(&h, &settings, derive_seed(ctx.seed, "verify/ti/run"))?;
    let tol = 4.0 * est.std_error + 1e-3;
    let diff = (est.value - exact).abs();
    Ok(judge(diff <= tol, format!("|TI - exact| = {diff:e}, tolerance 4 SE + 1e-3 = {tol:e}")))
}

fn check_penalty(ctx: &Context) -> multispin::Result<Outcome> {
    let layout = match corner(ctx) {
        Ok(l) => l,
        Err(o) => return Ok(o),
    };
    let mut rng = ctx.rng("penalty");
    let h = build(ctx, &layout, derive_seed(ctx.seed, "verify/penalty"))?;
    let patterns = sign_patterns(&layout)?;
    let mut worst: f64 = 0.0;
    let mut chain_ok = true;
    for _ in 0..5 {
        let m = patterns[rng.random_range(0..patterns.len())].clone();
        let spec = BandSpec::new(m, 2.0 * rng.random::<f64>(), 2, 2.0 * rng.random::<f64>())?;
        let d = penalty_decomposition_enumeration(&h, &spec, 1.0)?;
        worst = worst.max((d.multi - d.single - d.penalty).abs());
        chain_ok &= d.penalty <= 1e-12;
    }
    Ok(judge(
        worst <= 1e-10 && chain_ok,
        format!("identity error {worst:e} (1e-10), penalty nonpositive: {chain_ok}"),
    ))
}

fn check_jensen(ctx: &Context) -> multispin::Result<Outcome> {
    let layout = match corner(ctx) {
        Ok(l) => l,
        Err(o) => return Ok(o),
    };
    let values: Vec<f64> = (0..20)
        .map(|i| exact_fe_enumeration(&build(ctx, &layout, derive_seed(ctx.seed, &format!("verify/jensen/{i}")))?, 1.0))
        .map(|r| r.map(|e| e.value))
        .collect::<multispin::Result<_>>()?;
    let bound = 0.5 * ctx.mixture.eval_at_one();
    let (m, se) = (mean(&values), std_error(&values));
    Ok(judge(m <= bound + 3.0 * se, format!("mean F = {m:.6} +- {se:.2e}, bound xi(1)/2 = {bound:.6}")))
}

fn check_ground_state(ctx: &Context) -> multispin::Result<Outcome> {
    let layout = Arc::new(SpeciesLayout::single(16)?);
    let xi = Mixture::from_terms(layout.labels().to_vec(), [(vec![2], 1.0)])?;
    let q = OverlapVector::constant(1, crate::config::DEFAULT_SHELL);
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        let h = HamiltonianInstance::build(&xi, layout.clone(), derive_seed(ctx.seed, &format!("verify/gs/{i}")), Backend::CoefficientTensor)?;
        let a = ascend(&h, &q, 8, 10_000, derive_seed(ctx.seed, &format!("verify/gs/{i}/ascent")))?.energy_per_spin;
        let o = eigen_oracle_2spin(&h, &q)?.energy_per_spin;
        worst = worst.max((a - o).abs() / o.abs());
    }
    Ok(judge(worst <= 1e-6, format!("pure two-spin N = 16, q = 0.99, max relative error {worst:e} (1e-6)")))
}

fn check_tap(ctx: &Context) -> multispin::Result<Outcome> {
    let layout = match corner(ctx) {
        Ok(l) => l,
        Err(o) => return Ok(o),
    };
    let xi = ctx.mixture.without_linear_terms();
    let config = TapConfig {
        estimator: "enumeration".into(),
        solver: "exhaustive".into(),
        estimator_settings: EstimatorSettings { beta_grid: vec![0.0, 1.0], ..Default::default() },
        seeds: (0..20).map(|i| derive_seed(ctx.seed, &format!("verify/tap/{i}"))).collect(),
        ..Default::default()
    };
    let zero = OverlapVector::zeros(layout.n_species());
    let r = tap_evaluate(&xi, &layout, &zero, &config)?;
    let bookkeeping = (r.gap - r.recomputed_gap()).abs();
    let mut rng = ctx.rng("tap");
    let (q, qp) = (ctx.random_q(&mut rng), ctx.random_q(&mut rng));
    let nest = nesting_experiment(&xi, &layout, &q, &qp, &config)?;
    Ok(judge(
        r.gap.abs() <= 3.0 * r.gap_se && bookkeeping <= 1e-12 && nest.mixture_identity_error <= 1e-10 && nest.additivity_error <= 1e-12,
        format!(
            "q = 0 gap {:.3e} +- {:.3e}, bookkeeping {bookkeeping:e}, nesting identity {:e}",
            r.gap, r.gap_se, nest.mixture_identity_error
        ),
    ))
}

fn check_determinism(ctx: &Context) -> multispin::Result<Outcome> {
    let layout = match corner(ctx) {
        Ok(l) => l,
        Err(o) => return Ok(o),
    };
    let h = build(ctx, &layout, derive_seed(ctx.seed, "verify/determinism"))?;
    let settings = EstimatorSettings {
        beta_grid: uniform_grid(1.0, 5),
        sampler: SamplerSettings { burn_in: 50, sweeps: 400, ..Default::default() },
        ..Default::default()
    };
    let a = fe_thermo_integration(&h, &settings, 11)?;
    let b = fe_thermo_integration(&h, &settings, 11)?;
    Ok(judge(a == b, "repeated estimate with the same seed is identical".into()))
}

fn check_round_trip(config: &ExperimentConfig) -> Outcome {
    let text = config.to_json_pretty();
    match ExperimentConfig::from_json_str(&text, "round-trip") {
        Ok(back) if back == *config && back.to_json_pretty() == text => Outcome::Pass("parse . serialize is the identity".into()),
        Ok(_) => Outcome::Fail("round-trip changed the config".into()),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

type Check = fn(&Context) -> multispin::Result<Outcome>;

const CHECKS: &[(&str, Check)] = &[
    ("mixture.shifted-identity", check_shifted),
    ("mixture.xi-q-identity", check_xi_q),
    ("mixture.nesting-identity", check_nesting),
    ("geometry.overlaps-and-shells", check_overlaps),
    ("hamiltonian.gradient", check_gradient),
    ("hamiltonian.covariance", check_covariance),
    ("thermo.ti-vs-enumeration", check_ti_vs_enumeration),
    ("thermo.penalty-identity", check_penalty),
    ("thermo.jensen-bound", check_jensen),
    ("ground-state.eigen-oracle", check_ground_state),
    ("tap.q-zero-and-nesting", check_tap),
    ("thermo.seed-determinism", check_determinism),
];

/// Runs every check; never stops early.
pub fn run_suite(config: &ExperimentConfig) -> VerifyReport {
    let ctx = Context {
        layout: Arc::new(config.model.layout.clone()),
        mixture: config.model.mixture.clone(),
        seed: config.master_seed,
        shifted: match config.verify.mutation {
            Some(Mutation::ShiftedCoefficients) => mutated_shifted,
            None => Mixture::shifted_coefficients,
        },
    };
    let mut checks: Vec<CheckResult> = CHECKS
        .iter()
        .map(|(name, f)| {
            let outcome = f(&ctx).unwrap_or_else(|e| Outcome::Fail(format!("error: {e}")));
            result(name, outcome)
        })
        .collect();
    checks.push(result("cli.config-round-trip", check_round_trip(config)));
    VerifyReport {
        schema: VERIFY_SCHEMA.into(),
        master_seed: config.master_seed,
        mutation: config.verify.mutation,
        passed: checks.iter().all(|c| c.status != Status::Fail),
        checks,
    }
}

fn result(name: &str, outcome: Outcome) -> CheckResult {
    let (status, detail) = match outcome {
        Outcome::Pass(d) => (Status::Pass, d),
        Outcome::Fail(d) => (Status::Fail, d),
        Outcome::Skip(d) => (Status::Skip, d),
    };
    CheckResult { name: name.into(), status, detail }
}
