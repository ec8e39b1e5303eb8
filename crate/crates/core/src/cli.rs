//! Config parsing and subcommand dispatch.
//!
//! Configs are line-oriented `section.key = value` text with `#` comments.
//! Overrides are applied after the file, unknown keys are rejected, and
//! every validation failure names the key. Each subcommand echoes its
//! effective configuration into the output directory so any artifact can be
//! reproduced from its invocation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::analysis;
use crate::engine;
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentSpec};
use crate::grouping;
use crate::model::BatchPolicy;
use crate::rng;
use crate::topology::{ArchitectureConfig, GroupingScheme};

/// Parsed invocation, independent of the flag parser.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum Command {
    GenData,
    Group,
    Run {
        arch: String,
        nodes: Option<usize>,
        dump_schedule: bool,
    },
    Compare,
    Sweep,
    Diagnose,
}

/// Full runtime configuration: the experiment spec plus the architecture
/// and grouping knobs used by single runs and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CliSpec {
    pub experiment: ExperimentSpec,
    pub scheme: GroupingScheme,
    /// Explicit group count; absent means derive from `group_size`.
    pub num_groups: Option<usize>,
    pub group_size: usize,
    pub tau: usize,
    pub tau1: usize,
    pub tau2: usize,
    pub chains: usize,
    pub batch: BatchPolicy,
}

impl Default for CliSpec {
    fn default() -> Self {
        CliSpec {
            experiment: ExperimentSpec::desk_scale(),
            scheme: GroupingScheme::Cluster,
            num_groups: None,
            group_size: 10,
            tau: 100,
            tau1: 10,
            tau2: 10,
            chains: 1,
            batch: BatchPolicy::Full,
        }
    }
}

impl CliSpec {
    fn groups_for(&self, num_nodes: usize) -> usize {
        self.num_groups
            .unwrap_or_else(|| num_nodes.div_ceil(self.group_size))
            .clamp(1, num_nodes)
    }

    /// Architecture for the `run` subcommand; `centralized` is handled by
    /// the dispatcher.
    pub fn architecture(&self, arch: &str, num_nodes: usize) -> Result<ArchitectureConfig> {
        let groups = self.groups_for(num_nodes);
        let cfg = match arch {
            "star" => ArchitectureConfig::star(self.tau),
            "ring" => ArchitectureConfig::ring(self.tau, self.chains),
            "star-stars" => ArchitectureConfig::star_stars(groups, self.scheme, self.tau1, self.tau2),
            "star-rings" => {
                ArchitectureConfig::star_rings(groups, self.scheme, self.chains, self.tau1, self.tau2)
            }
            "ring-stars" => {
                ArchitectureConfig::ring_stars(groups, self.scheme, self.chains, self.tau1, self.tau2)
            }
            "ring-rings" => {
                ArchitectureConfig::ring_rings(groups, self.scheme, self.chains, self.tau1, self.tau2)
            }
            "stars" => ArchitectureConfig::stars(groups, self.scheme, self.tau),
            "rings" => ArchitectureConfig::rings(groups, self.scheme, self.chains, self.tau),
            other => {
                return Err(Error::invalid(format!(
                    "unknown architecture '{other}' (expected star, ring, star-stars, star-rings, \
                     ring-stars, ring-rings, stars, rings, or centralized)"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(key, msg));
        match key {
            "dataset.num_nodes" => self.experiment.dataset.num_nodes = parse_count(key, value)?,
            "dataset.num_classes" => self.experiment.dataset.num_classes = parse_count(key, value)?,
            "dataset.feature_dim" => self.experiment.dataset.feature_dim = parse_count(key, value)?,
            "dataset.examples_per_node" => {
                self.experiment.dataset.examples_per_node = parse_count(key, value)?
            }
            "dataset.test_examples_per_node" => {
                self.experiment.dataset.test_per_node = parse_count(key, value)?
            }
            "dataset.skew" => {
                let skew = parse_real(key, value)?;
                if !(0.0..=1.0).contains(&skew) {
                    return bad("skew must lie in [0, 1]");
                }
                self.experiment.dataset.skew = skew;
            }
            "engine.eta" => {
                let eta = parse_real(key, value)?;
                if !(eta > 0.0) {
                    return bad("eta must be positive");
                }
                self.experiment.eta = eta;
            }
            "engine.steps" => self.experiment.steps = parse_count(key, value)?,
            "engine.eval_every" => self.experiment.eval_every = parse_count(key, value)?,
            "engine.tau" => self.tau = parse_count(key, value)?,
            "engine.tau1" => self.tau1 = parse_count(key, value)?,
            "engine.tau2" => self.tau2 = parse_count(key, value)?,
            "engine.chains" => self.chains = parse_count(key, value)?,
            "engine.batch" => {
                self.batch = if value == "full" {
                    BatchPolicy::Full
                } else {
                    BatchPolicy::Mini(parse_count(key, value)?)
                };
            }
            "grouping.scheme" => {
                self.scheme = match value {
                    "iid" => GroupingScheme::Iid,
                    "cluster" => GroupingScheme::Cluster,
                    "random" => GroupingScheme::Random,
                    "single" => GroupingScheme::SingleGroup,
                    _ => return bad("expected iid, cluster, random, or single"),
                };
            }
            "grouping.num_groups" => {
                let n = parse_usize(key, value)?;
                if n == 0 {
                    return bad("num_groups must be at least 1");
                }
                self.num_groups = Some(n);
            }
            "grouping.group_size" => self.group_size = parse_count(key, value)?,
            "sweep.nodes" => {
                let nodes = value
                    .split(',')
                    .map(|part| parse_usize(key, part.trim()))
                    .collect::<Result<Vec<_>>>()?;
                if nodes.is_empty() || !nodes.windows(2).all(|w| w[0] < w[1]) {
                    return bad("node counts must be strictly increasing");
                }
                self.experiment.sweep_nodes = nodes;
            }
            "sweep.steps" => self.experiment.sweep_steps = parse_count(key, value)?,
            "sweep.target_accuracy" => {
                let acc = parse_real(key, value)?;
                if !(0.0..=1.0).contains(&acc) {
                    return bad("target accuracy must lie in [0, 1]");
                }
                self.experiment.target_accuracy = Some(acc);
            }
            "experiment.seeds" => self.experiment.seeds = parse_count(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment
            .validate()
            .map_err(|e| Error::config("experiment", e.to_string()))?;
        if let Some(n) = self.num_groups {
            if n > self.experiment.dataset.num_nodes {
                return Err(Error::config(
                    "grouping.num_groups",
                    format!(
                        "{n} groups exceed {} nodes",
                        self.experiment.dataset.num_nodes
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` dump, sorted by key.
    pub fn echo(&self, seed: u64) -> String {
        let d = &self.experiment.dataset;
        let mut pairs: Vec<(String, String)> = vec![
            ("dataset.num_nodes".into(), d.num_nodes.to_string()),
            ("dataset.num_classes".into(), d.num_classes.to_string()),
            ("dataset.feature_dim".into(), d.feature_dim.to_string()),
            ("dataset.examples_per_node".into(), d.examples_per_node.to_string()),
            ("dataset.test_examples_per_node".into(), d.test_per_node.to_string()),
            ("dataset.skew".into(), d.skew.to_string()),
            ("engine.eta".into(), self.experiment.eta.to_string()),
            ("engine.steps".into(), self.experiment.steps.to_string()),
            ("engine.eval_every".into(), self.experiment.eval_every.to_string()),
            ("engine.tau".into(), self.tau.to_string()),
            ("engine.tau1".into(), self.tau1.to_string()),
            ("engine.tau2".into(), self.tau2.to_string()),
            ("engine.chains".into(), self.chains.to_string()),
            (
                "engine.batch".into(),
                match self.batch {
                    BatchPolicy::Full => "full".to_string(),
                    BatchPolicy::Mini(b) => b.to_string(),
                },
            ),
            (
                "grouping.scheme".into(),
                match self.scheme {
                    GroupingScheme::Iid => "iid",
                    GroupingScheme::Cluster => "cluster",
                    GroupingScheme::Random => "random",
                    GroupingScheme::SingleGroup => "single",
                }
                .to_string(),
            ),
            ("grouping.group_size".into(), self.group_size.to_string()),
            (
                "sweep.nodes".into(),
                self.experiment
                    .sweep_nodes
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("sweep.steps".into(), self.experiment.sweep_steps.to_string()),
            ("experiment.seeds".into(), self.experiment.seeds.to_string()),
            ("seed".into(), seed.to_string()),
        ];
        if let Some(n) = self.num_groups {
            pairs.push(("grouping.num_groups".into(), n.to_string()));
        }
        if let Some(acc) = self.experiment.target_accuracy {
            pairs.push(("sweep.target_accuracy".into(), acc.to_string()));
        }
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::config(key, format!("'{value}' is not a non-negative integer")))
}

fn parse_count(key: &str, value: &str) -> Result<usize> {
    let n = parse_usize(key, value)?;
    if n == 0 {
        return Err(Error::config(key, "must be at least 1"));
    }
    Ok(n)
}

fn parse_real(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::config(key, format!("'{value}' is not a number")))
}

/// Parse a config file (if given) and apply overrides on top of the
/// desk-scale defaults. An empty file yields the full default spec.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<CliSpec> {
    let mut spec = CliSpec::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                )));
            };
            spec.apply(key.trim(), value.trim())?;
        }
    }
    for entry in overrides {
        let Some((key, value)) = entry.split_once('=') else {
            return Err(Error::Parse(format!(
                "override '{entry}' must have the form KEY=VALUE"
            )));
        };
        spec.apply(key.trim(), value.trim())?;
    }
    spec.validate()?;
    Ok(spec)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 1,
        Error::InvalidArgument(_) | Error::Config { .. } | Error::Parse(_) => 2,
        Error::Diverged { .. } => 3,
        Error::Io(_) | Error::Json(_) => 3,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidArgument(_) => "invalid-argument",
        Error::Parse(_) => "parse",
        Error::Config { .. } => "config",
        Error::Diverged { .. } => "diverged",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

/// Execute a subcommand; returns the process exit status (0 success,
/// 1 usage, 2 validation, 3 runtime).
pub fn dispatch(cli: &CliConfig) -> i32 {
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(err) => {
            let line = json!({
                "error": { "kind": error_kind(&err), "message": err.to_string() }
            });
            eprintln!("{line}");
            exit_code(&err)
        }
    }
}

fn execute(cli: &CliConfig) -> Result<String> {
    let spec = parse_config(cli.config_path.as_deref(), &cli.overrides)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    std::fs::write(cli.out_dir.join("config.echo"), spec.echo(cli.seed))?;

    match &cli.command {
        Command::GenData => cmd_gen_data(cli, &spec),
        Command::Group => cmd_group(cli, &spec),
        Command::Run {
            arch,
            nodes,
            dump_schedule,
        } => cmd_run(cli, &spec, arch, *nodes, *dump_schedule),
        Command::Compare => cmd_compare(cli, &spec),
        Command::Sweep => cmd_sweep(cli, &spec),
        Command::Diagnose => cmd_diagnose(cli, &spec),
    }
}

fn cmd_gen_data(cli: &CliConfig, spec: &CliSpec) -> Result<String> {
    let (train, test) = spec.experiment.dataset.materialize(cli.seed)?;
    let path = cli.out_dir.join("dataset.json");
    let payload = json!({ "train": train, "test": test });
    std::fs::write(&path, serde_json::to_string(&payload)?)?;

    let dists: Vec<_> = train
        .nodes
        .iter()
        .map(|node| {
            crate::dataset::class_distribution(&node.examples, train.num_classes)
                .map(|d| json!({ "node": node.node_id, "probs": d.probs }))
        })
        .collect::<Result<_>>()?;
    std::fs::write(
        cli.out_dir.join("distributions.json"),
        serde_json::to_string_pretty(&json!({ "nodes": dists }))?,
    )?;
    Ok(format!(
        "gen-data: {} nodes x {} train + {} test examples -> {}",
        train.num_nodes(),
        spec.experiment.dataset.examples_per_node,
        spec.experiment.dataset.test_per_node,
        path.display()
    ))
}

fn cmd_group(cli: &CliConfig, spec: &CliSpec) -> Result<String> {
    let (train, _) = spec.experiment.dataset.materialize(cli.seed)?;
    let groups = spec.groups_for(train.num_nodes());
    let sub = rng::sub_seed(cli.seed, "grouping");
    let (assignment, report) = match spec.scheme {
        GroupingScheme::Iid => {
            let (a, r) = grouping::group_by_iid(&train, groups, sub)?;
            (a, Some(r))
        }
        GroupingScheme::Cluster => {
            let (a, r) = grouping::cluster(&train, groups, sub)?;
            (a, Some(r))
        }
        GroupingScheme::Random => (grouping::random_balanced(train.num_nodes(), groups, sub)?, None),
        GroupingScheme::SingleGroup => {
            (grouping::GroupAssignment::single_group(train.num_nodes()), None)
        }
    };
    let path = cli.out_dir.join("grouping.json");
    let payload = json!({
        "num_groups": assignment.num_groups,
        "membership": assignment.membership,
        "report": report,
    });
    std::fs::write(&path, serde_json::to_string_pretty(&payload)?)?;
    let summary = match &report {
        Some(r) => format!(
            "group: {} groups, cost {:.6} -> {:.6} in {} iterations -> {}",
            assignment.num_groups,
            r.initial_cost,
            r.final_cost,
            r.iterations,
            path.display()
        ),
        None => format!(
            "group: {} groups (no cost loop) -> {}",
            assignment.num_groups,
            path.display()
        ),
    };
    Ok(summary)
}

fn cmd_run(
    cli: &CliConfig,
    spec: &CliSpec,
    arch: &str,
    nodes: Option<usize>,
    dump_schedule: bool,
) -> Result<String> {
    let mut dataset = spec.experiment.dataset.clone();
    if let Some(n) = nodes {
        if n == 0 {
            return Err(Error::config("nodes", "must be at least 1"));
        }
        dataset.num_nodes = n;
    }
    let (train, test) = dataset.materialize(cli.seed)?;
    let mut hyper = spec.experiment.hyper(spec.experiment.steps);
    hyper.batch = spec.batch;

    let (result, node_models, label) = if arch == "centralized" {
        let result = engine::run_centralized(&train, &hyper, cli.seed)?;
        let models = vec![result.final_model.clone()];
        (result, models, "centralized".to_string())
    } else {
        let cfg = spec.architecture(arch, train.num_nodes())?;
        if dump_schedule {
            let grouping = engine::prepare_grouping(&cfg, &train, cli.seed)?;
            let rings = crate::topology::build_rings(&cfg, &grouping, cli.seed)?;
            let bytes =
                crate::model::ModelParams::byte_size(train.num_classes, train.feature_dim);
            let plans =
                crate::topology::schedule(&cfg, &grouping, &rings, bytes, hyper.steps)?;
            let file = std::fs::File::create(cli.out_dir.join("schedule.jsonl"))?;
            crate::topology::dump_schedule(&plans, std::io::BufWriter::new(file))?;
        }
        let result = engine::run(&cfg, &train, &test, &hyper, cli.seed)?;
        let models = result.final_node_models.clone();
        (result, models, arch.to_string())
    };

    let csv_path = cli.out_dir.join("run.csv");
    let report = experiment::ComparisonReport {
        runs: vec![experiment::PresetRun {
            preset: label.clone(),
            seed: cli.seed,
            diverged_at: None,
            records: result.records.clone(),
        }],
        sweep: Vec::new(),
    };
    let file = std::fs::File::create(&csv_path)?;
    experiment::write_comparison_csv(&report, std::io::BufWriter::new(file))?;

    let ckpt_path = cli.out_dir.join("final.ckpt");
    engine::write_checkpoint(&ckpt_path, spec.experiment.steps as u64, &node_models)?;

    std::fs::write(
        cli.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&experiment::summary_json(&report))?,
    )?;

    let last = result.final_record();
    Ok(format!(
        "run {label}: step {} train_loss {:.4} train_acc {:.4} test_acc {:.4} bytes {} -> {}",
        last.step,
        last.train_loss,
        last.train_accuracy,
        last.test_accuracy,
        last.cum_comm_bytes,
        csv_path.display()
    ))
}

fn cmd_compare(cli: &CliConfig, spec: &CliSpec) -> Result<String> {
    let report = experiment::run_comparison(&spec.experiment, cli.seed)?;
    let csv_path = cli.out_dir.join("compare.csv");
    let file = std::fs::File::create(&csv_path)?;
    experiment::write_comparison_csv(&report, std::io::BufWriter::new(file))?;
    std::fs::write(
        cli.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&experiment::summary_json(&report))?,
    )?;
    Ok(format!(
        "compare: {} runs over {} presets -> {}",
        report.runs.len(),
        spec.experiment.presets.len(),
        csv_path.display()
    ))
}

fn cmd_sweep(cli: &CliConfig, spec: &CliSpec) -> Result<String> {
    // the sweep defaults to the flat baseline against the chained group-ring
    // heuristic; narrow or extend the preset list to sweep others
    let mut experiment_spec = spec.experiment.clone();
    if experiment_spec.presets.len() == experiment::table_presets().len() {
        experiment_spec.presets = experiment_spec
            .presets
            .into_iter()
            .filter(|p| p.name == "FedAvg" || p.name == "Tornadoes")
            .collect();
    }
    let report =
        experiment::run_scalability_sweep(&experiment_spec, experiment_spec.target_accuracy, cli.seed)?;
    let csv_path = cli.out_dir.join("sweep.csv");
    let file = std::fs::File::create(&csv_path)?;
    experiment::write_sweep_csv(&report, std::io::BufWriter::new(file))?;
    std::fs::write(
        cli.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&experiment::summary_json(&report))?,
    )?;
    Ok(format!(
        "sweep: {} rows over nodes {:?} -> {}",
        report.sweep.len(),
        experiment_spec.sweep_nodes,
        csv_path.display()
    ))
}

fn cmd_diagnose(cli: &CliConfig, spec: &CliSpec) -> Result<String> {
    let (train, _) = spec.experiment.dataset.materialize(cli.seed)?;
    let groups = spec.groups_for(train.num_nodes());
    let cfg = spec.architecture("star-stars", train.num_nodes())?;
    let grouping = engine::prepare_grouping(&cfg, &train, cli.seed)?;
    let hyper = spec.experiment.hyper(spec.experiment.steps);

    let trace = analysis::run_virtual_trace(&cfg, &train, &grouping, &hyper, cli.seed)?;
    let mut probes = analysis::random_probes(64, train.num_classes, train.feature_dim, 0.01, cli.seed);
    probes.extend(trace.snapshots.iter().cloned());

    let divergences = analysis::estimate_divergences(&train, &grouping, &probes)?;
    let smoothness = analysis::estimate_smoothness(&train, &analysis::consecutive_pairs(&probes))?;
    let h1 = analysis::h_bound(spec.experiment.eta, smoothness.beta_hat, spec.tau1)?;
    let h12 = analysis::h_bound(spec.experiment.eta, smoothness.beta_hat, spec.tau1 * spec.tau2)?;
    let bound = (smoothness.rho_hat / smoothness.beta_hat)
        * (divergences.delta * h1.value + divergences.big_delta * h12.value);
    let max_gap = trace.gaps.iter().cloned().fold(0.0f64, f64::max);

    let path = cli.out_dir.join("diagnostics.json");
    let payload = json!({
        "delta": divergences.delta,
        "Delta": divergences.big_delta,
        "D": divergences.local_to_global,
        "beta_hat": smoothness.beta_hat,
        "rho_hat": smoothness.rho_hat,
        "h_tau1": h1.value,
        "h_tau1_tau2": h12.value,
        "drift_bound": bound,
        "max_observed_gap": max_gap,
        "resync_steps": trace.resync_steps,
        "num_groups": groups,
        "probes": probes.len(),
    });
    std::fs::write(&path, serde_json::to_string_pretty(&payload)?)?;
    Ok(format!(
        "diagnose: delta {:.4} Delta {:.4} D {:.4} beta {:.4} rho {:.4} -> {}",
        divergences.delta,
        divergences.big_delta,
        divergences.local_to_global,
        smoothness.beta_hat,
        smoothness.rho_hat,
        path.display()
    ))
}
