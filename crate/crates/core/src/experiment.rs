//! Desk-scale experiment harness: the nine-preset algorithm comparison and
//! the communication-scalability sweep, with CSV/JSON report writers.
//!
//! Reports are a pure function of (spec, seed). Bytes in reports always come
//! from the engine's schedule accounting, never recomputed here.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{self, FederatedDataset};
use crate::engine::{self, EvalRecord};
use crate::error::{Error, Result};
use crate::model::{BatchPolicy, Hyperparams, ModelParams};
use crate::rng;
use crate::topology::{self, ArchitectureConfig, GlobalLevel, GroupLevel, GroupingScheme};

/// Synthetic benchmark shape shared by all presets of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub examples_per_node: usize,
    pub test_per_node: usize,
    pub skew: f64,
}

impl DatasetSpec {
    pub fn desk_scale() -> Self {
        DatasetSpec {
            num_nodes: 20,
            num_classes: 10,
            feature_dim: 32,
            examples_per_node: 200,
            test_per_node: 50,
            skew: 0.8,
        }
    }

    /// Generate one train/test pair; the test shards share each node's label
    /// mixture so pluralistic evaluation is meaningful.
    pub fn materialize(&self, seed: u64) -> Result<(FederatedDataset, FederatedDataset)> {
        let fed = dataset::generate_synthetic(
            self.num_nodes,
            self.num_classes,
            self.feature_dim,
            self.examples_per_node + self.test_per_node,
            self.skew,
            rng::sub_seed(seed, "data"),
        )?;
        dataset::split_per_node(&fed, self.examples_per_node)
    }

    pub fn with_nodes(&self, num_nodes: usize) -> Self {
        DatasetSpec {
            num_nodes,
            ..self.clone()
        }
    }
}

/// A named architecture template; the group count is derived from the
/// target group size at a concrete node count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub global_level: GlobalLevel,
    pub group_level: GroupLevel,
    pub scheme: GroupingScheme,
    /// Target nodes per group; ignored for flat architectures.
    pub group_size: usize,
    pub chains: usize,
    pub tau: usize,
    pub tau1: usize,
    pub tau2: usize,
}

impl Preset {
    pub fn num_groups_for(&self, num_nodes: usize) -> usize {
        if self.group_level == GroupLevel::Flat {
            1
        } else {
            num_nodes.div_ceil(self.group_size).clamp(1, num_nodes)
        }
    }

    pub fn config_for(&self, num_nodes: usize) -> Result<ArchitectureConfig> {
        self.config_with_groups(self.num_groups_for(num_nodes))
    }

    /// Build the config with an explicit group count (the sweep holds it
    /// fixed across node counts).
    pub fn config_with_groups(&self, num_groups: usize) -> Result<ArchitectureConfig> {
        let mut cfg = ArchitectureConfig {
            global_level: self.global_level,
            group_level: self.group_level,
            grouping: self.scheme,
            num_groups,
            chains: self.chains,
            tau: self.tau,
            tau1: self.tau1,
            tau2: self.tau2,
        };
        // a ring over groups cannot carry more chains than its period
        if cfg.global_level == GlobalLevel::Ring && cfg.group_level != GroupLevel::Flat {
            cfg.chains = cfg.chains.min(num_groups);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[allow(clippy::too_many_arguments)]
fn preset(
    name: &str,
    global_level: GlobalLevel,
    group_level: GroupLevel,
    scheme: GroupingScheme,
    group_size: usize,
    chains: usize,
    tau: usize,
    tau1: usize,
    tau2: usize,
) -> Preset {
    Preset {
        name: name.to_string(),
        global_level,
        group_level,
        scheme,
        group_size,
        chains,
        tau,
        tau1,
        tau2,
    }
}

/// The standard comparison matrix: one flat baseline, five consensus-group
/// rows, and three pluralistic rows.
pub fn table_presets() -> Vec<Preset> {
    use GlobalLevel as Gl;
    use GroupLevel as Gr;
    use GroupingScheme as S;
    vec![
        preset("FedAvg", Gl::Star, Gr::Flat, S::SingleGroup, 1, 1, 100, 1, 1),
        preset("HierFAVG", Gl::Star, Gr::Star, S::Random, 5, 1, 1, 10, 10),
        preset("Astraea", Gl::Star, Gr::Ring, S::Iid, 2, 1, 1, 10, 10),
        preset("MM-PSGD", Gl::Ring, Gr::Star, S::Cluster, 10, 1, 1, 10, 10),
        preset("Tornado", Gl::Ring, Gr::Star, S::Iid, 2, 2, 1, 10, 10),
        preset("Tornadoes", Gl::Star, Gr::Ring, S::Cluster, 10, 10, 1, 10, 10),
        preset("IFCA", Gl::None, Gr::Star, S::Cluster, 10, 1, 100, 1, 1),
        preset("SemiCyclic", Gl::None, Gr::Ring, S::Random, 5, 1, 100, 1, 1),
        preset("Tornado-rings", Gl::None, Gr::Ring, S::Cluster, 10, 10, 100, 1, 1),
    ]
}

/// Everything a comparison or sweep needs, reproducible from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub eta: f64,
    pub steps: usize,
    pub eval_every: usize,
    pub presets: Vec<Preset>,
    pub sweep_nodes: Vec<usize>,
    pub sweep_steps: usize,
    pub target_accuracy: Option<f64>,
    pub seeds: usize,
}

impl ExperimentSpec {
    pub fn desk_scale() -> Self {
        ExperimentSpec {
            dataset: DatasetSpec::desk_scale(),
            eta: 0.03,
            steps: 1000,
            eval_every: 10,
            presets: table_presets(),
            sweep_nodes: vec![10, 20, 40, 80],
            sweep_steps: 300,
            target_accuracy: None,
            seeds: 1,
        }
    }

    pub fn hyper(&self, steps: usize) -> Hyperparams {
        Hyperparams {
            eta: self.eta,
            batch: BatchPolicy::Full,
            steps,
            eval_every: self.eval_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.presets.is_empty() {
            return Err(Error::invalid("experiment needs at least one preset"));
        }
        let mut names: Vec<&str> = self.presets.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.presets.len() {
            return Err(Error::invalid("preset names must be unique"));
        }
        if !self.sweep_nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("sweep node counts must be strictly increasing"));
        }
        if self.seeds == 0 {
            return Err(Error::invalid("seeds must be at least 1"));
        }
        self.hyper(self.steps).validate()?;
        Ok(())
    }
}

/// One preset's trajectory under one seed; `records` is empty if the run
/// diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetRun {
    pub preset: String,
    pub seed: u64,
    pub diverged_at: Option<usize>,
    pub records: Vec<EvalRecord>,
}

impl PresetRun {
    pub fn final_record(&self) -> Option<&EvalRecord> {
        self.records.last()
    }
}

/// One node count of the scalability sweep for one preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub preset: String,
    pub num_nodes: usize,
    pub num_groups: usize,
    pub target_accuracy: f64,
    pub reached: bool,
    pub steps_to_target: Option<usize>,
    pub bytes_to_target: u64,
    /// Bytes relative to the smallest node count of the same preset.
    pub relative_bytes: f64,
    /// Concurrent links at the first sync round, from the exact schedule.
    pub links_per_round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub runs: Vec<PresetRun>,
    pub sweep: Vec<SweepRow>,
}

/// Run every preset on the same dataset and seed family. Diverged runs are
/// recorded, not fatal. Runs are ordered by preset name, then seed.
pub fn run_comparison(spec: &ExperimentSpec, seed: u64) -> Result<ComparisonReport> {
    spec.validate()?;
    let mut runs = Vec::new();
    for rep in 0..spec.seeds {
        let rep_seed = seed + rep as u64;
        let (train, test) = spec.dataset.materialize(rep_seed)?;
        let hyper = spec.hyper(spec.steps);
        for preset in &spec.presets {
            let cfg = preset.config_for(spec.dataset.num_nodes)?;
            let run = match engine::run(&cfg, &train, &test, &hyper, rep_seed) {
                Ok(result) => PresetRun {
                    preset: preset.name.clone(),
                    seed: rep_seed,
                    diverged_at: None,
                    records: result.records,
                },
                Err(Error::Diverged { step }) => PresetRun {
                    preset: preset.name.clone(),
                    seed: rep_seed,
                    diverged_at: Some(step),
                    records: Vec::new(),
                },
                Err(other) => return Err(other),
            };
            runs.push(run);
        }
    }
    runs.sort_by(|a, b| a.preset.cmp(&b.preset).then(a.seed.cmp(&b.seed)));
    Ok(ComparisonReport {
        runs,
        sweep: Vec::new(),
    })
}

/// Train each preset across the node-count sweep and record the bytes spent
/// to reach the target train accuracy.
///
/// The group count is frozen at the smallest node count's value so the
/// sweep isolates how communication scales with nodes. When no target is
/// given, each preset targets the train accuracy its smallest run converged
/// to.
pub fn run_scalability_sweep(
    spec: &ExperimentSpec,
    target_accuracy: Option<f64>,
    seed: u64,
) -> Result<ComparisonReport> {
    spec.validate()?;
    if spec.sweep_nodes.is_empty() {
        return Err(Error::invalid("sweep needs at least one node count"));
    }
    let hyper = spec.hyper(spec.sweep_steps);
    let mut sweep = Vec::new();

    for preset in &spec.presets {
        let smallest = spec.sweep_nodes[0];
        let fixed_groups = preset.num_groups_for(smallest);
        let mut cfg = preset.config_with_groups(fixed_groups)?;
        if cfg.group_level == GroupLevel::Ring {
            // freeze the effective chain count at the smallest node count so
            // per-round links stay constant across the sweep
            cfg.chains = cfg.chains.min((smallest / fixed_groups).max(1));
        }
        let mut preset_target = target_accuracy;
        let mut base_bytes: Option<u64> = None;

        for &num_nodes in &spec.sweep_nodes {
            let (train, test) = spec.dataset.with_nodes(num_nodes).materialize(seed)?;
            let result = engine::run(&cfg, &train, &test, &hyper, seed)?;

            let target = match preset_target {
                Some(t) => t,
                None => {
                    let converged = result.final_record().train_accuracy;
                    preset_target = Some(converged);
                    converged
                }
            };

            let hit = result.records.iter().find(|r| r.train_accuracy >= target);
            let (reached, steps_to_target, bytes_to_target) = match hit {
                Some(r) => (true, Some(r.step), r.cum_comm_bytes),
                None => (false, None, result.final_record().cum_comm_bytes),
            };
            let base = *base_bytes.get_or_insert(bytes_to_target);
            let relative_bytes = if base == 0 {
                0.0
            } else {
                bytes_to_target as f64 / base as f64
            };

            sweep.push(SweepRow {
                preset: preset.name.clone(),
                num_nodes,
                num_groups: fixed_groups,
                target_accuracy: target,
                reached,
                steps_to_target,
                bytes_to_target,
                relative_bytes,
                links_per_round: links_per_round(&cfg, &train, seed)?,
            });
        }
    }
    sweep.sort_by(|a, b| a.preset.cmp(&b.preset).then(a.num_nodes.cmp(&b.num_nodes)));
    Ok(ComparisonReport {
        runs: Vec::new(),
        sweep,
    })
}

/// Concurrent links at the first step with sync events, from the exact
/// schedule.
fn links_per_round(cfg: &ArchitectureConfig, fed: &FederatedDataset, seed: u64) -> Result<usize> {
    let grouping = engine::prepare_grouping(cfg, fed, seed)?;
    let rings = topology::build_rings(cfg, &grouping, seed)?;
    let model_bytes = ModelParams::byte_size(fed.num_classes, fed.feature_dim);
    let plans = topology::schedule(cfg, &grouping, &rings, model_bytes, cfg.global_interval())?;
    Ok(plans
        .iter()
        .find(|p| p.links > 0)
        .map(|p| p.links)
        .unwrap_or(0))
}

/// Time-series CSV, one row per (preset, record); the preset column carries
/// `name@seed` when a report holds repeated seeds.
pub fn write_comparison_csv<W: Write>(report: &ComparisonReport, mut out: W) -> Result<()> {
    writeln!(
        out,
        "preset,step,train_loss,train_acc,test_loss,test_acc,cum_bytes,ring_variance"
    )?;
    let multi_seed = {
        let mut names: Vec<&str> = report.runs.iter().map(|r| r.preset.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names.len() != report.runs.len()
    };
    for run in &report.runs {
        let label = if multi_seed {
            format!("{}@{}", run.preset, run.seed)
        } else {
            run.preset.clone()
        };
        for r in &run.records {
            writeln!(
                out,
                "{label},{},{},{},{},{},{},{}",
                r.step,
                r.train_loss,
                r.train_accuracy,
                r.test_loss,
                r.test_accuracy,
                r.cum_comm_bytes,
                r.ring_variance
            )?;
        }
    }
    Ok(())
}

/// Sweep CSV: bytes-to-target per (preset, node count).
pub fn write_sweep_csv<W: Write>(report: &ComparisonReport, mut out: W) -> Result<()> {
    writeln!(
        out,
        "preset,num_nodes,num_groups,target_acc,reached,steps_to_target,bytes_to_target,relative_bytes,links_per_round"
    )?;
    for row in &report.sweep {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.preset,
            row.num_nodes,
            row.num_groups,
            row.target_accuracy,
            row.reached,
            row.steps_to_target.map_or(String::new(), |s| s.to_string()),
            row.bytes_to_target,
            row.relative_bytes,
            row.links_per_round
        )?;
    }
    Ok(())
}

/// Final-metrics summary as a JSON value.
pub fn summary_json(report: &ComparisonReport) -> serde_json::Value {
    let presets: Vec<serde_json::Value> = report
        .runs
        .iter()
        .map(|run| match run.final_record() {
            Some(r) => json!({
                "preset": run.preset,
                "seed": run.seed,
                "diverged_at": run.diverged_at,
                "final_step": r.step,
                "train_loss": r.train_loss,
                "train_accuracy": r.train_accuracy,
                "test_loss": r.test_loss,
                "test_accuracy": r.test_accuracy,
                "cum_comm_bytes": r.cum_comm_bytes,
                "ring_variance": r.ring_variance,
            }),
            None => json!({
                "preset": run.preset,
                "seed": run.seed,
                "diverged_at": run.diverged_at,
            }),
        })
        .collect();
    json!({
        "presets": presets,
        "sweep": report.sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            dataset: DatasetSpec {
                num_nodes: 8,
                num_classes: 4,
                feature_dim: 6,
                examples_per_node: 30,
                test_per_node: 10,
                skew: 0.8,
            },
            eta: 0.05,
            steps: 60,
            eval_every: 10,
            presets: table_presets(),
            sweep_nodes: vec![4, 8],
            sweep_steps: 40,
            target_accuracy: None,
            seeds: 1,
        }
    }

    #[test]
    fn default_presets_match_the_comparison_matrix() {
        let presets = table_presets();
        let names: Vec<&str> = presets.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "FedAvg",
                "HierFAVG",
                "Astraea",
                "MM-PSGD",
                "Tornado",
                "Tornadoes",
                "IFCA",
                "SemiCyclic",
                "Tornado-rings"
            ]
        );
        let tornado = &presets[4];
        assert_eq!(tornado.scheme, GroupingScheme::Iid);
        assert_eq!(tornado.group_size, 2);
        assert_eq!(tornado.chains, 2);
        assert_eq!((tornado.tau1, tornado.tau2), (10, 10));
        let tornadoes = &presets[5];
        assert_eq!(tornadoes.scheme, GroupingScheme::Cluster);
        assert_eq!(tornadoes.group_size, 10);
        assert_eq!(tornadoes.chains, 10);
        let fedavg = &presets[0];
        assert_eq!(fedavg.tau, 100);
        assert_eq!(fedavg.group_level, GroupLevel::Flat);
    }

    #[test]
    fn comparison_is_deterministic_and_losses_fall() {
        let mut spec = tiny_spec();
        // shorten the flat/pluralistic interval so 60 steps see syncs
        for p in &mut spec.presets {
            if p.tau == 100 {
                p.tau = 20;
            }
        }
        let a = run_comparison(&spec, 5).unwrap();
        let b = run_comparison(&spec, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 9);
        for run in &a.runs {
            assert!(run.diverged_at.is_none(), "{} diverged", run.preset);
            let first = &run.records[0];
            let last = run.final_record().unwrap();
            assert!(
                last.train_loss < first.train_loss,
                "{}: {} !< {}",
                run.preset,
                last.train_loss,
                first.train_loss
            );
            for w in run.records.windows(2) {
                assert!(w[1].cum_comm_bytes >= w[0].cum_comm_bytes);
            }
        }
        // ordered by preset name
        let names: Vec<&str> = a.runs.iter().map(|r| r.preset.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(names, sorted);
    }

    #[test]
    fn csv_shape_matches_the_contract() {
        let mut spec = tiny_spec();
        spec.presets.truncate(2);
        spec.steps = 20;
        let report = run_comparison(&spec, 1).unwrap();
        let mut buf = Vec::new();
        write_comparison_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "preset,step,train_loss,train_acc,test_loss,test_acc,cum_bytes,ring_variance"
        );
        let rows: Vec<&str> = lines.collect();
        // 2 presets x (step 0 + 2 evals)
        assert_eq!(rows.len(), 2 * 3);
        assert!(rows.iter().all(|r| r.split(',').count() == 8));
    }

    #[test]
    fn sweep_reports_relative_bytes_and_links() {
        let mut spec = tiny_spec();
        spec.presets = vec![table_presets()[0].clone(), table_presets()[5].clone()];
        spec.presets[0].tau = 10;
        spec.dataset.examples_per_node = 20;
        spec.dataset.test_per_node = 5;
        spec.sweep_nodes = vec![4, 8, 12];
        spec.sweep_steps = 30;
        let report = run_scalability_sweep(&spec, Some(0.9), 3).unwrap();
        assert_eq!(report.sweep.len(), 6);
        for row in &report.sweep {
            assert!(row.links_per_round > 0);
            if row.num_nodes == spec.sweep_nodes[0] {
                assert_eq!(row.relative_bytes, 1.0);
            }
        }
        // flat star: links per round equal the node count
        let fedavg: Vec<&SweepRow> = report.sweep.iter().filter(|r| r.preset == "FedAvg").collect();
        for row in &fedavg {
            assert_eq!(row.links_per_round, row.num_nodes);
        }
        // group rings at fixed group count: links per round stay constant
        let tornadoes: Vec<&SweepRow> =
            report.sweep.iter().filter(|r| r.preset == "Tornadoes").collect();
        let first_links = tornadoes[0].links_per_round;
        for row in &tornadoes {
            assert_eq!(row.links_per_round, first_links);
            assert_eq!(row.num_groups, tornadoes[0].num_groups);
        }
    }

    #[test]
    fn spec_validation_names_problems() {
        let mut spec = tiny_spec();
        spec.presets[1].name = spec.presets[0].name.clone();
        assert!(spec.validate().is_err());

        let mut spec = tiny_spec();
        spec.sweep_nodes = vec![8, 4];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn diverged_runs_are_recorded_not_fatal() {
        let mut spec = tiny_spec();
        spec.presets.truncate(1);
        spec.eta = 1.5e308; // overflows the update within two steps
        spec.steps = 5;
        let report = run_comparison(&spec, 2).unwrap();
        assert_eq!(report.runs.len(), 1);
        assert!(report.runs[0].diverged_at.is_some());
        assert!(report.runs[0].records.is_empty());
        // the summary still carries the entry
        let summary = summary_json(&report);
        assert_eq!(summary["presets"][0]["preset"], "FedAvg");
        assert!(summary["presets"][0]["diverged_at"].is_number());
    }
}
