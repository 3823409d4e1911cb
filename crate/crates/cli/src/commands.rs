//! Command drivers. Each writes a CSV table and a JSON document into the
//! output directory and returns a human summary.

use std::path::PathBuf;
use std::sync::Arc;

use multispin::ground_state::{eigen_oracle_2spin, solvers};
use multispin::seeding::derive_seed;
use multispin::stats::{mean, std_error};
use multispin::tap::{argmin_abs_gap, product_grid, tap_inequality_scan, TapConfig, TapReport};
use multispin::thermo::{aggregate_profiles, estimators, multisamplability_profiles, MultisampProfile, Region};
use multispin::{Backend, FreeEnergyEstimate, HamiltonianInstance, Mixture, OverlapVector, SpeciesLayout};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, QGrid, DEFAULT_SHELL};
use crate::error::{CliError, CliResult};
use crate::output::{num, short, write_json, write_text, Table};
use crate::verify::{run_suite, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Verify,
    FreeEnergy,
    GroundState,
    TapScan,
    Multisamp,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Verify => "verify",
            CommandKind::FreeEnergy => "free-energy",
            CommandKind::GroundState => "ground-state",
            CommandKind::TapScan => "tap-scan",
            CommandKind::Multisamp => "multisamp",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads; never changes any emitted number.
    pub workers: usize,
    /// Overrides the config's master seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
    pub success: bool,
}

/// Runs `kind` on a pool of `options.workers` threads.
pub fn run(kind: CommandKind, config: &ExperimentConfig, options: &RunOptions) -> CliResult<CommandOutput> {
    let mut config = config.clone();
    if let Some(seed) = options.seed {
        config.master_seed = seed;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    pool.install(|| match kind {
        CommandKind::Verify => verify(&config, options),
        CommandKind::FreeEnergy => free_energy(&config, options),
        CommandKind::GroundState => ground_state(&config, options),
        CommandKind::TapScan => tap_scan(&config, options),
        CommandKind::Multisamp => multisamp(&config, options),
    })
}

/// Disorder seeds of a command: `derive_seed(master, "<command>/instance/<i>")`.
pub fn instance_seeds(master: u64, command: &str, count: usize) -> Vec<u64> {
    (0..count).map(|i| derive_seed(master, &format!("{command}/instance/{i}"))).collect()
}

fn model(config: &ExperimentConfig) -> (Arc<SpeciesLayout>, &Mixture) {
    (Arc::new(config.model.layout.clone()), &config.model.mixture)
}

fn flags_cell(flags: &[String]) -> String {
    flags.join("; ")
}

#[derive(Serialize)]
struct Document<'a, C: Serialize, R: Serialize, S: Serialize> {
    schema: String,
    master_seed: u64,
    model: &'a crate::config::ModelConfig,
    command: &'a C,
    seeds: &'a [u64],
    rows: R,
    summary: S,
}

fn verify(config: &ExperimentConfig, options: &RunOptions) -> CliResult<CommandOutput> {
    let report = run_suite(config);
    let mut table = Table::new(["check", "status", "detail"]);
    for c in &report.checks {
        let status = match c.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Skip => "skip",
        };
        table.push(vec![c.name.clone(), status.into(), c.detail.clone()]);
    }
    let json = write_json(&options.out, "verify.json", &report)?;
    let failures = report.failures().len();
    let summary = format!(
        "{}\n{} checks, {failures} failed\n",
        table.render(),
        report.checks.len()
    );
    Ok(CommandOutput { files: vec![json], summary, success: report.passed })
}

#[derive(Serialize)]
struct FreeEnergyRow {
    instance: usize,
    seed: u64,
    estimate: FreeEnergyEstimate,
    compare: Option<FreeEnergyEstimate>,
}

#[derive(Serialize)]
struct SeedSummary {
    mean: f64,
    std_error: f64,
    instances: usize,
}

fn seed_summary(values: &[f64], single_error: f64) -> SeedSummary {
    let std_error = if values.len() > 1 { std_error(values) } else { single_error };
    SeedSummary { mean: mean(values), std_error, instances: values.len() }
}

fn free_energy(config: &ExperimentConfig, options: &RunOptions) -> CliResult<CommandOutput> {
    let cmd = &config.free_energy;
    let (layout, xi) = model(config);
    let registry = estimators();
    let est = registry.build(&cmd.estimator, &cmd.settings)?;
    let cmp = cmd.compare.as_deref().map(|name| registry.build(name, &cmd.settings)).transpose()?;
    let seeds = instance_seeds(config.master_seed, "free-energy", cmd.instances.max(1));
    let rows: Vec<FreeEnergyRow> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let h = HamiltonianInstance::build(xi, layout.clone(), seed, Backend::CoefficientTensor)?;
            let estimate = est.estimate(&h, &Region::Full, derive_seed(seed, "estimate"))?;
            let compare = cmp.as_ref().map(|c| c.estimate(&h, &Region::Full, derive_seed(seed, "compare"))).transpose()?;
            Ok(FreeEnergyRow { instance: i, seed, estimate, compare })
        })
        .collect::<multispin::Result<_>>()?;

    let mut header = vec!["instance", "seed", "value", "std_error", "estimator"];
    if cmp.is_some() {
        header.extend(["compare_value", "compare_std_error", "difference"]);
    }
    header.push("flags");
    let mut table = Table::new(header);
    for r in &rows {
        let mut row = vec![r.instance.to_string(), r.seed.to_string(), num(r.estimate.value), num(r.estimate.std_error), cmd.estimator.clone()];
        if let Some(c) = &r.compare {
            row.extend([num(c.value), num(c.std_error), num(r.estimate.value - c.value)]);
        }
        row.push(flags_cell(&r.estimate.flags));
        table.push(row);
    }
    let values: Vec<f64> = rows.iter().map(|r| r.estimate.value).collect();
    let summary = seed_summary(&values, rows[0].estimate.std_error);
    let text = format!(
        "free energy ({}, beta = {}): {} +- {} over {} instance(s)\n",
        cmd.estimator,
        cmd.settings.beta(),
        short(summary.mean),
        short(summary.std_error),
        summary.instances
    );
    let doc = Document {
        schema: "multispin.free-energy.v1".into(),
        master_seed: config.master_seed,
        model: &config.model,
        command: cmd,
        seeds: &seeds,
        rows: &rows,
        summary,
    };
    let files = vec![
        write_text(&options.out, "free_energy.csv", &table.to_csv())?,
        write_json(&options.out, "free_energy.json", &doc)?,
    ];
    Ok(CommandOutput { files, summary: text, success: true })
}

#[derive(Serialize)]
struct GroundStateRow {
    instance: usize,
    seed: u64,
    record: multispin::ground_state::AscentRecord,
    oracle: Option<f64>,
    relative_difference: Option<f64>,
}

fn ground_state(config: &ExperimentConfig, options: &RunOptions) -> CliResult<CommandOutput> {
    let cmd = &config.ground_state;
    let (layout, xi) = model(config);
    let q = cmd.q.clone().unwrap_or_else(|| OverlapVector::constant(layout.n_species(), DEFAULT_SHELL));
    let solver = solvers().build(&cmd.solver, &cmd.settings)?;
    let seeds = instance_seeds(config.master_seed, "ground-state", cmd.instances.max(1));
    let rows: Vec<GroundStateRow> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let h = HamiltonianInstance::build(xi, layout.clone(), seed, Backend::CoefficientTensor)?;
            let result = solver.solve(&h, &q, derive_seed(seed, "solve"))?;
            let oracle = if cmd.oracle { Some(eigen_oracle_2spin(&h, &q)?.energy_per_spin) } else { None };
            let relative_difference = oracle.map(|o| (result.energy_per_spin - o).abs() / o.abs().max(f64::MIN_POSITIVE));
            Ok(GroundStateRow { instance: i, seed, record: result.record(&cmd.solver), oracle, relative_difference })
        })
        .collect::<multispin::Result<_>>()?;

    let mut header = vec!["instance", "seed", "energy_per_spin", "converged_fraction", "best_restart"];
    if cmd.oracle {
        header.extend(["oracle", "relative_difference"]);
    }
    let mut table = Table::new(header);
    for r in &rows {
        let mut row = vec![
            r.instance.to_string(),
            r.seed.to_string(),
            num(r.record.energy_per_spin),
            num(r.record.converged_fraction),
            r.record.best_restart.to_string(),
        ];
        if let (Some(o), Some(d)) = (r.oracle, r.relative_difference) {
            row.extend([num(o), num(d)]);
        }
        table.push(row);
    }
    let values: Vec<f64> = rows.iter().map(|r| r.record.energy_per_spin).collect();
    let summary = seed_summary(&values, 0.0);
    let mut text = format!(
        "ground state ({}, q = {:?}): {} +- {} over {} instance(s)\n",
        cmd.solver,
        q.values(),
        short(summary.mean),
        short(summary.std_error),
        summary.instances
    );
    if cmd.oracle {
        let worst = rows.iter().filter_map(|r| r.relative_difference).fold(0.0, f64::max);
        text.push_str(&format!("largest relative difference to the eigen oracle: {worst:e}\n"));
    }
    let doc = Document {
        schema: "multispin.ground-state.v1".into(),
        master_seed: config.master_seed,
        model: &config.model,
        command: cmd,
        seeds: &seeds,
        rows: &rows,
        summary,
    };
    let files = vec![
        write_text(&options.out, "ground_state.csv", &table.to_csv())?,
        write_json(&options.out, "ground_state.json", &doc)?,
    ];
    Ok(CommandOutput { files, summary: text, success: true })
}

#[derive(Serialize)]
struct TapSummary {
    points: usize,
    violations: usize,
    strict_violations: usize,
    argmin_abs_gap: Option<OverlapVector>,
    note: &'static str,
}

/// The tap-scan table: overlap components, every term with its error, and flags.
pub fn tap_table(layout: &SpeciesLayout, reports: &[TapReport]) -> Table {
    let mut header: Vec<String> = layout.labels().iter().map(|l| format!("q_{l}")).collect();
    header.extend(
        [
            "lhs", "lhs_se", "gs", "gs_se", "logvol", "fq", "fq_se", "gap", "gap_se", "onsager", "holds",
            "holds_strict", "flags",
        ]
        .map(String::from),
    );
    let mut table = Table::new(header);
    for r in reports {
        let mut row: Vec<String> = r.q.values().iter().map(|&v| num(v)).collect();
        row.extend([
            num(r.lhs.mean),
            num(r.lhs.std_error),
            num(r.gs.mean),
            num(r.gs.std_error),
            num(r.logvol),
            num(r.fq.mean),
            num(r.fq.std_error),
            num(r.gap),
            num(r.gap_se),
            num(r.onsager),
            r.inequality_holds.to_string(),
            r.inequality_holds_strict.to_string(),
            flags_cell(&r.flags),
        ]);
        table.push(row);
    }
    table
}

fn tap_scan(config: &ExperimentConfig, options: &RunOptions) -> CliResult<CommandOutput> {
    let cmd = &config.tap_scan;
    let (layout, xi) = model(config);
    let grid = match &cmd.grid {
        QGrid::List(list) => list.clone(),
        QGrid::Product { lo, hi, points } => product_grid(layout.n_species(), *lo, *hi, *points),
    };
    let seeds = instance_seeds(config.master_seed, "tap-scan", cmd.instances);
    let tap = TapConfig {
        estimator: cmd.estimator.clone(),
        solver: cmd.solver.clone(),
        estimator_settings: cmd.estimator_settings.clone(),
        ground_state: cmd.ground_state.clone(),
        seeds: seeds.clone(),
        bias_allowance: cmd.bias_allowance,
        se_multiplier: cmd.se_multiplier,
    };
    let reports = tap_inequality_scan(xi, &layout, &grid, &tap)?;
    let table = tap_table(&layout, &reports);
    let summary = TapSummary {
        points: reports.len(),
        violations: reports.iter().filter(|r| !r.inequality_holds).count(),
        strict_violations: reports.iter().filter(|r| !r.inequality_holds_strict).count(),
        argmin_abs_gap: argmin_abs_gap(&reports).map(|i| reports[i].q.clone()),
        note: "ground states are lower bounds, so gaps are biased upward and violations are genuine",
    };
    let text = format!(
        "{}\n{} grid points, {} beyond tolerance ({} without the ground-state allowance); smallest |gap| at {:?}\n",
        table.render(),
        summary.points,
        summary.violations,
        summary.strict_violations,
        summary.argmin_abs_gap.as_ref().map(|q| q.values().to_vec()),
    );
    let doc = Document {
        schema: "multispin.tap-scan.v1".into(),
        master_seed: config.master_seed,
        model: &config.model,
        command: cmd,
        seeds: &seeds,
        rows: &reports,
        summary,
    };
    let files = vec![
        write_text(&options.out, "tap_scan.csv", &table.to_csv())?,
        write_json(&options.out, "tap_scan.json", &doc)?,
    ];
    Ok(CommandOutput { files, summary: text, success: true })
}

#[derive(Serialize)]
struct MultisampRow {
    instance: usize,
    seed: u64,
    eps: f64,
    profile: MultisampProfile,
}

#[derive(Serialize)]
struct MultisampAggregate {
    eps: f64,
    mean_of_log: f64,
    log_of_mean: f64,
}

fn multisamp(config: &ExperimentConfig, options: &RunOptions) -> CliResult<CommandOutput> {
    let cmd = &config.multisamp;
    let (layout, xi) = model(config);
    let q = cmd.q.clone().unwrap_or_else(|| OverlapVector::zeros(layout.n_species()));
    let seeds = instance_seeds(config.master_seed, "multisamp", cmd.instances.max(1));
    let per_instance: Vec<Vec<MultisampProfile>> = seeds
        .par_iter()
        .map(|&seed| {
            let h = HamiltonianInstance::build(xi, layout.clone(), seed, Backend::CoefficientTensor)?;
            multisamplability_profiles(&h, &q, cmd.replicas, &cmd.eps, &cmd.settings, derive_seed(seed, "replicas"))
        })
        .collect::<multispin::Result<_>>()?;

    let mut table = Table::new(["instance", "seed", "eps", "value", "lower", "upper", "hits", "samples", "floored"]);
    let mut rows = Vec::new();
    for (i, (profiles, &seed)) in per_instance.iter().zip(&seeds).enumerate() {
        for (p, &eps) in profiles.iter().zip(&cmd.eps) {
            table.push(vec![
                i.to_string(),
                seed.to_string(),
                num(eps),
                num(p.value),
                num(p.lower),
                num(p.upper),
                p.hits.to_string(),
                p.samples.to_string(),
                p.floored.to_string(),
            ]);
            rows.push(MultisampRow { instance: i, seed, eps, profile: p.clone() });
        }
    }
    let aggregates: Vec<MultisampAggregate> = cmd
        .eps
        .iter()
        .enumerate()
        .map(|(j, &eps)| {
            let column: Vec<MultisampProfile> = per_instance.iter().map(|p| p[j].clone()).collect();
            let (mean_of_log, log_of_mean) = aggregate_profiles(&column, layout.total());
            MultisampAggregate { eps, mean_of_log, log_of_mean }
        })
        .collect();
    let mut summary_table = Table::new(["eps", "mean_of_log", "log_of_mean"]);
    for a in &aggregates {
        summary_table.push(vec![num(a.eps), short(a.mean_of_log), short(a.log_of_mean)]);
    }
    let text = format!("multisamplability at q = {:?}, n = {}\n{}", q.values(), cmd.replicas, summary_table.render());
    let doc = Document {
        schema: "multispin.multisamp.v1".into(),
        master_seed: config.master_seed,
        model: &config.model,
        command: cmd,
        seeds: &seeds,
        rows: &rows,
        summary: &aggregates,
    };
    let files = vec![
        write_text(&options.out, "multisamp.csv", &table.to_csv())?,
        write_json(&options.out, "multisamp.json", &doc)?,
    ];
    Ok(CommandOutput { files, summary: text, success: true })
}
