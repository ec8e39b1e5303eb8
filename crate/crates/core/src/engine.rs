//! Training execution for every architecture, plus the centralized
//! reference run, evaluation, and checkpoint files.
//!
//! A run drives a [`Simulation`] through its schedule: active nodes take one
//! full-batch gradient step on their local shard, then the step's sync
//! events fire. Ring hand-offs are applied in two phases (read all payloads,
//! then write) so chained transfers never observe each other's writes.
//! Inactive nodes keep their models bit-identical between syncs.
//!
//! All reductions run in ascending node order, every random draw comes from
//! a named sub-stream of the master seed, and the reference execution path
//! is sequential, so identical inputs give bit-identical results.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, DivergenceSnapshot};
use crate::dataset::{FederatedDataset, LabeledExample};
use crate::error::{Error, Result};
use crate::grouping::{self, GroupAssignment};
use crate::model::{self, BatchPolicy, Hyperparams, ModelParams};
use crate::rng;
use crate::topology::{
    self, ArchitectureConfig, GlobalSync, GroupSync, GroupingScheme, LevelRings, StepPlan,
};

/// Metrics recorded at one evaluation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub cum_comm_bytes: u64,
    pub ring_variance: f64,
    pub divergence: DivergenceSnapshot,
}

/// Full output of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub records: Vec<EvalRecord>,
    /// Data-weighted consensus readout at the final step.
    pub final_model: ModelParams,
    /// Per-group readouts; the pluralistic deliverable.
    pub final_group_models: Vec<ModelParams>,
    /// Every node's model at the final step, in node-index order; this is
    /// what checkpoints serialize.
    pub final_node_models: Vec<ModelParams>,
}

impl RunResult {
    pub fn final_record(&self) -> &EvalRecord {
        self.records.last().expect("runs record at least step 0")
    }
}

/// Build the grouping a config asks for, from the `grouping` seed stream.
pub fn prepare_grouping(
    cfg: &ArchitectureConfig,
    fed: &FederatedDataset,
    seed: u64,
) -> Result<GroupAssignment> {
    let n = fed.num_nodes();
    if cfg.num_groups > n {
        return Err(Error::invalid(format!(
            "{} groups for {n} nodes",
            cfg.num_groups
        )));
    }
    let sub = rng::sub_seed(seed, "grouping");
    match cfg.grouping {
        GroupingScheme::SingleGroup => {
            if cfg.num_groups != 1 {
                return Err(Error::invalid("SingleGroup grouping requires num_groups = 1"));
            }
            Ok(GroupAssignment::single_group(n))
        }
        GroupingScheme::Iid => Ok(grouping::group_by_iid(fed, cfg.num_groups, sub)?.0),
        GroupingScheme::Cluster => Ok(grouping::cluster(fed, cfg.num_groups, sub)?.0),
        GroupingScheme::Random => grouping::random_balanced(n, cfg.num_groups, sub),
    }
}

/// Mutable training state stepped through a precomputed schedule.
pub struct Simulation<'a> {
    fed: &'a FederatedDataset,
    grouping: GroupAssignment,
    rings: LevelRings,
    plans: Vec<StepPlan>,
    models: Vec<ModelParams>,
    members: Vec<Vec<usize>>,
    global_weights: Vec<f64>,
    group_weights: Vec<Vec<f64>>,
    step: usize,
    cum_bytes: u64,
    eta: f64,
    batch: BatchPolicy,
    data_rng: ChaCha8Rng,
}

impl<'a> Simulation<'a> {
    pub fn new(
        cfg: &ArchitectureConfig,
        fed: &'a FederatedDataset,
        hyper: &Hyperparams,
        seed: u64,
    ) -> Result<Self> {
        let grouping = prepare_grouping(cfg, fed, seed)?;
        Simulation::with_grouping(cfg, fed, hyper, grouping, seed)
    }

    /// Build a simulation around an externally prepared grouping.
    pub fn with_grouping(
        cfg: &ArchitectureConfig,
        fed: &'a FederatedDataset,
        hyper: &Hyperparams,
        grouping: GroupAssignment,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        fed.validate()?;
        hyper.validate()?;
        grouping.validate()?;
        if grouping.num_nodes() != fed.num_nodes() {
            return Err(Error::invalid("grouping does not match the dataset"));
        }

        let rings = topology::build_rings(cfg, &grouping, seed)?;
        let model_bytes = ModelParams::byte_size(fed.num_classes, fed.feature_dim);
        let plans = topology::schedule(cfg, &grouping, &rings, model_bytes, hyper.steps)?;

        let mut init_rng = rng::stream(seed, "init");
        let w0 = ModelParams::random_init(fed.num_classes, fed.feature_dim, 0.01, &mut init_rng);
        let models = vec![w0; fed.num_nodes()];

        let sizes = fed.node_sizes();
        let total: usize = sizes.iter().sum();
        let global_weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / total as f64).collect();
        let members = grouping.members();
        let group_weights: Vec<Vec<f64>> = members
            .iter()
            .map(|group| {
                let group_total: usize = group.iter().map(|&i| sizes[i]).sum();
                group
                    .iter()
                    .map(|&i| sizes[i] as f64 / group_total as f64)
                    .collect()
            })
            .collect();

        Ok(Simulation {
            fed,
            grouping,
            rings,
            plans,
            models,
            members,
            global_weights,
            group_weights,
            step: 0,
            cum_bytes: 0,
            eta: hyper.eta,
            batch: hyper.batch,
            data_rng: rng::stream(seed, "data"),
        })
    }

    pub fn models(&self) -> &[ModelParams] {
        &self.models
    }

    pub fn grouping(&self) -> &GroupAssignment {
        &self.grouping
    }

    pub fn rings(&self) -> &LevelRings {
        &self.rings
    }

    pub fn plans(&self) -> &[StepPlan] {
        &self.plans
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn cum_bytes(&self) -> u64 {
        self.cum_bytes
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.plans.len()
    }

    /// Data-weighted average of all node models.
    pub fn consensus_readout(&self) -> Result<ModelParams> {
        model::weighted_average_of(self.models.iter(), &self.global_weights)
    }

    /// Data-weighted average of one group's member models.
    pub fn group_readout(&self, group: usize) -> Result<ModelParams> {
        model::weighted_average_of(
            self.members[group].iter().map(|&i| &self.models[i]),
            &self.group_weights[group],
        )
    }

    pub fn group_readouts(&self) -> Result<Vec<ModelParams>> {
        (0..self.grouping.num_groups)
            .map(|k| self.group_readout(k))
            .collect()
    }

    /// Execute the next scheduled step: local updates, then sync events.
    pub fn step(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(Error::invalid("simulation already ran all steps"));
        }
        let plan = &self.plans[self.step];
        let t = plan.step;

        for &(_, node) in &plan.active {
            let examples = &self.fed.nodes[node].examples;
            let updated = match self.batch {
                BatchPolicy::Full => model::sgd_step(&self.models[node], examples, self.eta)?,
                BatchPolicy::Mini(size) => {
                    let batch = sample_batch(examples, size, &mut self.data_rng);
                    model::sgd_step(&self.models[node], &batch, self.eta)?
                }
            };
            if !updated.is_finite() {
                return Err(Error::Diverged { step: t });
            }
            self.models[node] = updated;
        }

        // group-level events; ring payloads are all read before any write
        let mut transfers: Vec<(usize, ModelParams)> = Vec::new();
        for sync in &plan.group_syncs {
            match sync {
                GroupSync::StarAggregate { group } => {
                    let aggregate = self.group_readout(*group)?;
                    for &i in &self.members[*group] {
                        self.models[i] = aggregate.clone();
                    }
                }
                GroupSync::RingTransfer { from, to, .. } => {
                    transfers.push((*to, self.models[*from].clone()));
                }
            }
        }
        for (to, payload) in transfers {
            self.models[to] = payload;
        }

        // global-level events; hand-off payloads likewise read first
        let mut handoffs: Vec<(usize, ModelParams)> = Vec::new();
        for sync in &plan.global_syncs {
            match sync {
                GlobalSync::StarAggregate => {
                    let aggregate = self.consensus_readout()?;
                    for m in &mut self.models {
                        *m = aggregate.clone();
                    }
                }
                GlobalSync::RingHandoff {
                    from_group,
                    to_group,
                    source_node,
                } => {
                    let payload = match source_node {
                        Some(node) => self.models[*node].clone(),
                        None => self.group_readout(*from_group)?,
                    };
                    handoffs.push((*to_group, payload));
                }
            }
        }
        for (to_group, payload) in handoffs {
            for &i in &self.members[to_group] {
                self.models[i] = payload.clone();
            }
        }

        self.cum_bytes += plan.bytes;
        self.step = t;
        Ok(())
    }
}

fn sample_batch(
    examples: &[LabeledExample],
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<LabeledExample> {
    let take = size.min(examples.len());
    let picked = rand::seq::index::sample(rng, examples.len(), take);
    picked.iter().map(|i| examples[i].clone()).collect()
}

/// Per-example loss/hit accumulator; the running sum is a single f64 chain
/// so consensus and one-group pluralistic evaluation agree bit for bit.
struct MetricsAccumulator {
    logits: Vec<f64>,
    loss_sum: f64,
    hits: u64,
    total: usize,
}

impl MetricsAccumulator {
    fn new(num_classes: usize) -> Self {
        MetricsAccumulator {
            logits: vec![0.0; num_classes],
            loss_sum: 0.0,
            hits: 0,
            total: 0,
        }
    }

    fn add(&mut self, params: &ModelParams, examples: &[LabeledExample]) -> Result<()> {
        for ex in examples {
            if ex.features.len() != params.feature_dim() || ex.label >= params.num_classes() {
                return Err(Error::invalid("example does not match model dimensions"));
            }
            self.logits.copy_from_slice(&params.logits(&ex.features));
            let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + self.logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            self.loss_sum += lse - self.logits[ex.label];

            let mut best = 0;
            for (c, &z) in self.logits.iter().enumerate().skip(1) {
                if z > self.logits[best] {
                    best = c;
                }
            }
            if best == ex.label {
                self.hits += 1;
            }
        }
        self.total += examples.len();
        Ok(())
    }

    fn finish(self) -> Result<(f64, f64)> {
        if self.total == 0 {
            return Err(Error::invalid("evaluation over an empty example list"));
        }
        let n = self.total as f64;
        Ok((self.loss_sum / n, self.hits as f64 / n))
    }
}

/// Mean loss and accuracy of one model over a test list.
pub fn evaluate_model(params: &ModelParams, examples: &[LabeledExample]) -> Result<(f64, f64)> {
    let mut acc = MetricsAccumulator::new(params.num_classes());
    acc.add(params, examples)?;
    acc.finish()
}

/// Pluralistic evaluation: each group's model scored on its member nodes'
/// shards, reported as the example-weighted mean across groups.
pub fn evaluate_groups(
    group_models: &[ModelParams],
    grouping: &GroupAssignment,
    fed: &FederatedDataset,
) -> Result<(f64, f64)> {
    if group_models.len() != grouping.num_groups {
        return Err(Error::invalid("one model per group required"));
    }
    if grouping.num_nodes() != fed.num_nodes() {
        return Err(Error::invalid("grouping does not match the dataset"));
    }
    let mut acc = MetricsAccumulator::new(fed.num_classes);
    for (k, group) in grouping.members().iter().enumerate() {
        for &i in group {
            acc.add(&group_models[k], &fed.nodes[i].examples)?;
        }
    }
    acc.finish()
}

fn should_eval(t: usize, eval_every: usize, steps: usize) -> bool {
    t % eval_every == 0 || t == steps
}

/// Execute a full training run.
///
/// `test` must mirror the training node structure (same node count and
/// dimensions); pluralistic architectures score each group model on its
/// members' test shards, consensus architectures score the data-weighted
/// readout on the pooled test set.
pub fn run(
    cfg: &ArchitectureConfig,
    fed: &FederatedDataset,
    test: &FederatedDataset,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<RunResult> {
    test.validate()?;
    if test.num_classes != fed.num_classes || test.feature_dim != fed.feature_dim {
        return Err(Error::invalid("test set dimensions do not match training set"));
    }
    if test.num_nodes() != fed.num_nodes() {
        return Err(Error::invalid("test set node count does not match training set"));
    }

    let mut sim = Simulation::new(cfg, fed, hyper, seed)?;
    let pooled_train = fed.pooled();
    let pooled_test = test.pooled();
    let pluralistic = cfg.is_pluralistic();

    let mut records = Vec::new();
    let evaluate = |sim: &Simulation, records: &mut Vec<EvalRecord>, t: usize| -> Result<()> {
        let readout = sim.consensus_readout()?;
        let group_models = sim.group_readouts()?;
        let (train_loss, train_accuracy, test_loss, test_accuracy) = if pluralistic {
            let (trl, tra) = evaluate_groups(&group_models, sim.grouping(), fed)?;
            let (tel, tea) = evaluate_groups(&group_models, sim.grouping(), test)?;
            (trl, tra, tel, tea)
        } else {
            let (trl, tra) = evaluate_model(&readout, &pooled_train)?;
            let (tel, tea) = evaluate_model(&readout, &pooled_test)?;
            (trl, tra, tel, tea)
        };
        let (ring_variance, divergence) = analysis::eval_diagnostics(fed, sim.grouping(), &readout)?;
        records.push(EvalRecord {
            step: t,
            train_loss,
            train_accuracy,
            test_loss,
            test_accuracy,
            cum_comm_bytes: sim.cum_bytes(),
            ring_variance,
            divergence,
        });
        Ok(())
    };

    evaluate(&sim, &mut records, 0)?;
    for t in 1..=hyper.steps {
        sim.step()?;
        if should_eval(t, hyper.eval_every, hyper.steps) {
            evaluate(&sim, &mut records, t)?;
        }
    }

    Ok(RunResult {
        final_model: sim.consensus_readout()?,
        final_group_models: sim.group_readouts()?,
        final_node_models: sim.models().to_vec(),
        records,
    })
}

/// Full-batch gradient descent over the pooled data: the reference
/// trajectory ring variance and unbiasedness are judged against.
pub fn run_centralized(
    fed: &FederatedDataset,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<RunResult> {
    fed.validate()?;
    hyper.validate()?;
    let pooled = fed.pooled();
    let mut init_rng = rng::stream(seed, "init");
    let mut params =
        ModelParams::random_init(fed.num_classes, fed.feature_dim, 0.01, &mut init_rng);

    let mut records = Vec::new();
    let mut record = |params: &ModelParams, t: usize| -> Result<()> {
        let (train_loss, train_accuracy) = evaluate_model(params, &pooled)?;
        records.push(EvalRecord {
            step: t,
            train_loss,
            train_accuracy,
            test_loss: train_loss,
            test_accuracy: train_accuracy,
            cum_comm_bytes: 0,
            ring_variance: 0.0,
            divergence: DivergenceSnapshot::zero(),
        });
        Ok(())
    };

    record(&params, 0)?;
    for t in 1..=hyper.steps {
        params = model::sgd_step(&params, &pooled, hyper.eta)?;
        if !params.is_finite() {
            return Err(Error::Diverged { step: t });
        }
        if should_eval(t, hyper.eval_every, hyper.steps) {
            record(&params, t)?;
        }
    }

    Ok(RunResult {
        final_group_models: vec![params.clone()],
        final_node_models: vec![params.clone()],
        final_model: params,
        records,
    })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"TORN";
const CHECKPOINT_VERSION: u32 = 1;

/// Write a checkpoint: magic, version, K, d_in, step, then each model's
/// flat serialization in node-index order, all little-endian.
pub fn write_checkpoint(path: &Path, step: u64, models: &[ModelParams]) -> Result<()> {
    if models.is_empty() {
        return Err(Error::invalid("checkpoint needs at least one model"));
    }
    let k = models[0].num_classes();
    let d = models[0].feature_dim();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    file.write_all(&(k as u32).to_le_bytes())?;
    file.write_all(&(d as u32).to_le_bytes())?;
    file.write_all(&step.to_le_bytes())?;
    for m in models {
        if m.num_classes() != k || m.feature_dim() != d {
            return Err(Error::invalid("checkpoint models must share dimensions"));
        }
        file.write_all(&m.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Read a checkpoint back; the model count is implied by the file length.
pub fn read_checkpoint(path: &Path) -> Result<(u64, Vec<ModelParams>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 {
        return Err(Error::Parse("truncated checkpoint header".to_string()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Parse("bad checkpoint magic".to_string()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let step = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = &bytes[24..];
    let model_size = (ModelParams::byte_size(k, d)) as usize;
    if model_size == 0 || payload.len() % model_size != 0 {
        return Err(Error::Parse("truncated checkpoint payload".to_string()));
    }
    let models = payload
        .chunks_exact(model_size)
        .map(|chunk| ModelParams::from_le_bytes(k, d, chunk))
        .collect::<Result<Vec<_>>>()?;
    Ok((step, models))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split_per_node};
    use crate::topology::ArchitectureConfig;

    fn desk_dataset(nodes: usize, seed: u64) -> (FederatedDataset, FederatedDataset) {
        let fed = generate_synthetic(nodes, 4, 6, 30, 0.7, seed).unwrap();
        split_per_node(&fed, 24).unwrap()
    }

    fn bits(m: &ModelParams) -> Vec<u64> {
        m.as_slice().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn star_single_node_matches_centralized_bitwise() {
        let (train, test) = desk_dataset(1, 3);
        let hyper = Hyperparams::new(0.05, 40);
        let star = run(&ArchitectureConfig::star(4), &train, &test, &hyper, 9).unwrap();
        let central = run_centralized(&train, &hyper, 9).unwrap();
        assert_eq!(bits(&star.final_model), bits(&central.final_model));
        for (a, b) in star.records.iter().zip(&central.records) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        }
    }

    #[test]
    fn star_stars_degenerates_to_star_bitwise() {
        let (train, test) = desk_dataset(5, 4);
        let hyper = Hyperparams::new(0.05, 30);
        let star = run(&ArchitectureConfig::star(6), &train, &test, &hyper, 2).unwrap();
        let degenerate = ArchitectureConfig::star_stars(1, GroupingScheme::SingleGroup, 6, 1);
        let hier = run(&degenerate, &train, &test, &hyper, 2).unwrap();
        assert_eq!(bits(&star.final_model), bits(&hier.final_model));
        for (a, b) in star.records.iter().zip(&hier.records) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.cum_comm_bytes, b.cum_comm_bytes);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (train, test) = desk_dataset(6, 5);
        let cfg = ArchitectureConfig::ring_stars(2, GroupingScheme::Iid, 2, 2, 2);
        let hyper = Hyperparams::new(0.05, 24);
        let a = run(&cfg, &train, &test, &hyper, 77).unwrap();
        let b = run(&cfg, &train, &test, &hyper, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inactive_nodes_are_frozen_between_syncs() {
        let (train, _) = desk_dataset(5, 6);
        let cfg = ArchitectureConfig::ring(3, 1);
        let hyper = Hyperparams::new(0.05, 12);
        let mut sim = Simulation::new(&cfg, &train, &hyper, 11).unwrap();
        let mut previous: Vec<Vec<u64>> = sim.models().iter().map(bits).collect();
        for _ in 0..12 {
            let plan = sim.plans()[sim.step_index()].clone();
            sim.step().unwrap();
            let touched: Vec<usize> = plan
                .active
                .iter()
                .map(|&(_, n)| n)
                .chain(plan.group_syncs.iter().filter_map(|s| match s {
                    GroupSync::RingTransfer { to, .. } => Some(*to),
                    _ => None,
                }))
                .collect();
            for (node, model) in sim.models().iter().enumerate() {
                if !touched.contains(&node) {
                    assert_eq!(bits(model), previous[node], "node {node} moved while inactive");
                }
            }
            previous = sim.models().iter().map(bits).collect();
        }
    }

    #[test]
    fn cum_bytes_match_closed_form() {
        let (train, test) = desk_dataset(6, 7);
        for cfg in [
            ArchitectureConfig::star(4),
            ArchitectureConfig::ring(2, 2),
            ArchitectureConfig::star_rings(3, GroupingScheme::Random, 1, 2, 2),
            ArchitectureConfig::ring_stars(3, GroupingScheme::Random, 2, 2, 2),
            ArchitectureConfig::rings(2, GroupingScheme::Random, 1, 4),
        ] {
            let steps = cfg.global_interval() * 3;
            let hyper = Hyperparams::new(0.05, steps);
            let mut sim = Simulation::new(&cfg, &train, &hyper, 13).unwrap();
            let expected = topology::comm_cost_grouped(
                &cfg,
                ModelParams::byte_size(train.num_classes, train.feature_dim),
                steps,
                sim.grouping(),
                sim.rings(),
            )
            .unwrap();
            while !sim.is_done() {
                sim.step().unwrap();
            }
            assert_eq!(sim.cum_bytes(), expected.total_bytes);
            let _ = &test;
        }
    }

    #[test]
    fn tornado_chains_with_identical_data_stay_symmetric() {
        // two single-node groups holding identical shards and both chains
        // active: the two trajectories must coincide step for step
        let node = generate_synthetic(1, 3, 4, 20, 0.0, 8).unwrap();
        let fed = FederatedDataset {
            nodes: vec![
                crate::dataset::NodeDataset { node_id: 0, examples: node.nodes[0].examples.clone() },
                crate::dataset::NodeDataset { node_id: 1, examples: node.nodes[0].examples.clone() },
            ],
            num_classes: 3,
            feature_dim: 4,
        };
        let cfg = ArchitectureConfig::ring_stars(2, GroupingScheme::Random, 2, 1, 1);
        let hyper = Hyperparams::new(0.05, 10);
        let mut sim = Simulation::new(&cfg, &fed, &hyper, 21).unwrap();
        for _ in 0..10 {
            sim.step().unwrap();
            assert_eq!(bits(&sim.models()[0]), bits(&sim.models()[1]));
        }
    }

    #[test]
    fn pluralistic_single_group_equals_consensus_evaluation() {
        let (train, test) = desk_dataset(4, 9);
        let grouping = GroupAssignment::single_group(4);
        let model = ModelParams::random_init(4, 6, 0.3, &mut rng::stream(1, "m"));
        let (cl, ca) = evaluate_model(&model, &test.pooled()).unwrap();
        let (pl, pa) = evaluate_groups(&[model], &grouping, &test).unwrap();
        assert_eq!(cl.to_bits(), pl.to_bits());
        assert_eq!(ca.to_bits(), pa.to_bits());
        let _ = train;
    }

    #[test]
    fn evaluation_examples() {
        // perfect classifier on a separable set
        let mut data = Vec::new();
        for c in 0..2 {
            for _ in 0..5 {
                let mut features = vec![0.0; 2];
                features[c] = 1.0;
                data.push(LabeledExample { features, label: c });
            }
        }
        let mut raw = vec![0.0; 6];
        raw[0] = 10.0;
        raw[3] = 10.0;
        let strong = ModelParams::from_vec(2, 2, raw).unwrap();
        let (_, acc) = evaluate_model(&strong, &data).unwrap();
        assert_eq!(acc, 1.0);

        // all-zero model ties every logit and predicts class 0
        let zero = ModelParams::zeros(2, 2);
        let (loss, acc) = evaluate_model(&zero, &data).unwrap();
        assert_eq!(acc, 0.5);
        assert!((loss - 2f64.ln()).abs() < 1e-12);

        assert!(evaluate_model(&zero, &[]).is_err());
    }

    #[test]
    fn centralized_loss_is_non_increasing_for_small_eta() {
        let (train, _) = desk_dataset(4, 10);
        let mut hyper = Hyperparams::new(0.05, 60);
        hyper.eval_every = 1;
        let result = run_centralized(&train, &hyper, 5).unwrap();
        for w in result.records.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss + 1e-12);
        }
    }

    #[test]
    fn centralized_reaches_stationarity_on_tiny_instance() {
        let fed = generate_synthetic(2, 2, 2, 10, 0.3, 12).unwrap();
        let hyper = Hyperparams::new(0.5, 5000);
        let result = run_centralized(&fed, &hyper, 1).unwrap();
        let grad = model::gradient(&result.final_model, &fed.pooled()).unwrap();
        let norm = analysis::dot_self(&grad).sqrt();
        assert!(norm < 1e-4, "gradient norm {norm}");
    }

    #[test]
    fn checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.torn");
        let mut r = rng::stream(3, "ck");
        let models: Vec<ModelParams> = (0..3)
            .map(|_| ModelParams::random_init(2, 3, 0.5, &mut r))
            .collect();
        write_checkpoint(&path, 17, &models).unwrap();
        let (step, back) = read_checkpoint(&path).unwrap();
        assert_eq!(step, 17);
        assert_eq!(models, back);

        let mut broken = std::fs::read(&path).unwrap();
        broken[0] = b'X';
        std::fs::write(&path, &broken).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn mismatched_test_set_is_rejected() {
        let (train, _) = desk_dataset(3, 2);
        let other = generate_synthetic(3, 4, 5, 10, 0.5, 1).unwrap();
        let hyper = Hyperparams::new(0.05, 4);
        assert!(run(&ArchitectureConfig::star(2), &train, &other, &hyper, 0).is_err());
    }

    #[test]
    fn minibatch_policy_is_deterministic_and_trains() {
        let (train, test) = desk_dataset(4, 11);
        let mut hyper = Hyperparams::new(0.05, 30);
        hyper.batch = BatchPolicy::Mini(8);
        let cfg = ArchitectureConfig::star(5);
        let a = run(&cfg, &train, &test, &hyper, 6).unwrap();
        let b = run(&cfg, &train, &test, &hyper, 6).unwrap();
        assert_eq!(a, b);
        assert!(a.final_record().train_loss < a.records[0].train_loss);
    }
}
