//! Numeric diagnostics: gradient divergence estimation across nesting
//! levels, smoothness/Lipschitz estimation, the drift bound factor `h(t)`,
//! virtual-model co-simulation, and the ring variance estimator.
//!
//! Divergences are suprema over all models in principle; here they are
//! maxima over a declared probe set (random models at init scale plus
//! trajectory snapshots), so every bound check is empirical and must use
//! matched probe sets on both sides.

use serde::{Deserialize, Serialize};

use crate::dataset::{FederatedDataset, LabeledExample};
use crate::engine::Simulation;
use crate::error::{Error, Result};
use crate::grouping::GroupAssignment;
use crate::model::{self, Hyperparams, ModelParams};
use crate::rng;
use crate::topology::{ArchKind, ArchitectureConfig};

/// Worst-case gradient disagreement between nesting levels, maximized over a
/// probe set. `delta` is local-to-group, `big_delta` group-to-global, and
/// `local_to_global` the flat counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub delta: f64,
    pub big_delta: f64,
    pub local_to_global: f64,
    /// Per-node local-to-group maxima, indexed by node id.
    pub per_node: Vec<f64>,
    /// Per-group group-to-global maxima.
    pub per_group: Vec<f64>,
    pub probes: usize,
}

/// Instantaneous divergences at a single model, recorded along a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSnapshot {
    pub local_to_group: f64,
    pub group_to_global: f64,
    pub local_to_global: f64,
}

impl DivergenceSnapshot {
    pub fn zero() -> Self {
        DivergenceSnapshot {
            local_to_group: 0.0,
            group_to_global: 0.0,
            local_to_global: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    pub beta_hat: f64,
    pub rho_hat: f64,
    pub probes: usize,
}

/// `h(t) = (eta * beta + 1)^t - 1`, evaluated as `expm1(t * ln1p(eta*beta))`
/// so large exponents saturate instead of overflowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HBound {
    pub value: f64,
    pub overflowed: bool,
}

pub fn h_bound(eta: f64, beta: f64, t: usize) -> Result<HBound> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("eta {eta} must be positive")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta {beta} must be positive")));
    }
    let exponent = t as f64 * (eta * beta).ln_1p();
    if exponent > 700.0 {
        return Ok(HBound {
            value: f64::MAX,
            overflowed: true,
        });
    }
    Ok(HBound {
        value: exponent.exp_m1(),
        overflowed: false,
    })
}

pub(crate) fn dot_self(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-node full-batch gradients at `params`, in node order.
pub fn node_gradients(fed: &FederatedDataset, params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    fed.nodes
        .iter()
        .map(|node| model::gradient(params, &node.examples))
        .collect()
}

/// Data-size weights and per-level pooled gradients shared by the
/// estimators. All reductions run in ascending index order.
struct LevelGradients {
    node_weights: Vec<f64>,
    group_weights: Vec<f64>,
    group_grads: Vec<Vec<f64>>,
    global_grad: Vec<f64>,
}

fn level_gradients(
    fed: &FederatedDataset,
    grouping: &GroupAssignment,
    grads: &[Vec<f64>],
) -> LevelGradients {
    let sizes = fed.node_sizes();
    let total: usize = sizes.iter().sum();
    let node_weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / total as f64).collect();
    let members = grouping.members();
    let dim = grads[0].len();

    let mut group_grads = Vec::with_capacity(members.len());
    let mut group_weights = Vec::with_capacity(members.len());
    for group in &members {
        let group_total: usize = group.iter().map(|&i| sizes[i]).sum();
        let mut g = vec![0.0; dim];
        for &i in group {
            let w = sizes[i] as f64 / group_total as f64;
            for (acc, &v) in g.iter_mut().zip(&grads[i]) {
                *acc += w * v;
            }
        }
        group_grads.push(g);
        group_weights.push(group_total as f64 / total as f64);
    }

    let mut global_grad = vec![0.0; dim];
    for (i, grad) in grads.iter().enumerate() {
        for (acc, &v) in global_grad.iter_mut().zip(grad) {
            *acc += node_weights[i] * v;
        }
    }

    LevelGradients {
        node_weights,
        group_weights,
        group_grads,
        global_grad,
    }
}

/// Empirical divergences: per-node and per-group gradient gaps maximized
/// over the probe models, aggregated with data-size weights.
pub fn estimate_divergences(
    fed: &FederatedDataset,
    grouping: &GroupAssignment,
    probe_models: &[ModelParams],
) -> Result<DivergenceEstimate> {
    if probe_models.is_empty() {
        return Err(Error::invalid("estimate_divergences needs at least one probe"));
    }
    grouping.validate()?;
    if grouping.num_nodes() != fed.num_nodes() {
        return Err(Error::invalid("grouping does not match the dataset"));
    }

    let n = fed.num_nodes();
    let mut per_node = vec![0.0f64; n];
    let mut per_group = vec![0.0f64; grouping.num_groups];
    let mut per_node_global = vec![0.0f64; n];
    let mut node_weights = Vec::new();
    let mut group_weights = Vec::new();

    for probe in probe_models {
        let grads = node_gradients(fed, probe)?;
        let levels = level_gradients(fed, grouping, &grads);
        for i in 0..n {
            let k = grouping.group_of(i);
            per_node[i] = per_node[i].max(diff_norm(&grads[i], &levels.group_grads[k]));
            per_node_global[i] =
                per_node_global[i].max(diff_norm(&grads[i], &levels.global_grad));
        }
        for k in 0..grouping.num_groups {
            per_group[k] =
                per_group[k].max(diff_norm(&levels.group_grads[k], &levels.global_grad));
        }
        node_weights = levels.node_weights;
        group_weights = levels.group_weights;
    }

    let delta: f64 = per_node
        .iter()
        .zip(&node_weights)
        .map(|(&d, &w)| w * d)
        .sum();
    let big_delta: f64 = per_group
        .iter()
        .zip(&group_weights)
        .map(|(&d, &w)| w * d)
        .sum();
    let local_to_global: f64 = per_node_global
        .iter()
        .zip(&node_weights)
        .map(|(&d, &w)| w * d)
        .sum();

    Ok(DivergenceEstimate {
        delta,
        big_delta,
        local_to_global,
        per_node,
        per_group,
        probes: probe_models.len(),
    })
}

/// Instantaneous divergences plus the flat ring variance at one model,
/// computed from a single per-node gradient pass.
pub fn eval_diagnostics(
    fed: &FederatedDataset,
    grouping: &GroupAssignment,
    params: &ModelParams,
) -> Result<(f64, DivergenceSnapshot)> {
    let grads = node_gradients(fed, params)?;
    let levels = level_gradients(fed, grouping, &grads);

    let mut second_moment = 0.0;
    for (grad, &w) in grads.iter().zip(&levels.node_weights) {
        second_moment += w * dot_self(grad);
    }
    let variance = second_moment - dot_self(&levels.global_grad);

    let mut snapshot = DivergenceSnapshot::zero();
    for (i, grad) in grads.iter().enumerate() {
        let k = grouping.group_of(i);
        snapshot.local_to_group +=
            levels.node_weights[i] * diff_norm(grad, &levels.group_grads[k]);
        snapshot.local_to_global += levels.node_weights[i] * diff_norm(grad, &levels.global_grad);
    }
    for (k, group_grad) in levels.group_grads.iter().enumerate() {
        snapshot.group_to_global +=
            levels.group_weights[k] * diff_norm(group_grad, &levels.global_grad);
    }
    Ok((variance, snapshot))
}

/// Which units the variance is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceLevel {
    /// Nodes against the global gradient.
    Flat,
    /// Nodes within each group, averaged over groups with data weights.
    Group,
    /// Group gradients against the global gradient.
    Global,
}

/// Weighted second moment of per-unit gradients minus the squared norm of
/// the weighted mean gradient.
pub fn ring_variance(
    fed: &FederatedDataset,
    params: &ModelParams,
    grouping: Option<&GroupAssignment>,
    level: VarianceLevel,
) -> Result<f64> {
    let flat;
    let grouping = match (level, grouping) {
        (VarianceLevel::Flat, g) => {
            flat = GroupAssignment::single_group(fed.num_nodes());
            g.unwrap_or(&flat)
        }
        (_, Some(g)) => g,
        (_, None) => return Err(Error::invalid("this variance level needs a grouping")),
    };
    let grads = node_gradients(fed, params)?;
    let levels = level_gradients(fed, grouping, &grads);

    let value = match level {
        VarianceLevel::Flat => {
            let mut second = 0.0;
            for (grad, &w) in grads.iter().zip(&levels.node_weights) {
                second += w * dot_self(grad);
            }
            second - dot_self(&levels.global_grad)
        }
        VarianceLevel::Group => {
            let members = grouping.members();
            let sizes = fed.node_sizes();
            let mut total = 0.0;
            for (k, group) in members.iter().enumerate() {
                let group_total: usize = group.iter().map(|&i| sizes[i]).sum();
                let mut second = 0.0;
                for &i in group {
                    let w = sizes[i] as f64 / group_total as f64;
                    second += w * dot_self(&grads[i]);
                }
                let within = second - dot_self(&levels.group_grads[k]);
                total += levels.group_weights[k] * within;
            }
            total
        }
        VarianceLevel::Global => {
            let mut second = 0.0;
            for (group_grad, &w) in levels.group_grads.iter().zip(&levels.group_weights) {
                second += w * dot_self(group_grad);
            }
            second - dot_self(&levels.global_grad)
        }
    };
    Ok(value)
}

/// Running-max estimates of smoothness and the Lipschitz constant of the
/// pooled loss over probe pairs; coincident pairs are skipped.
pub fn estimate_smoothness(
    fed: &FederatedDataset,
    probe_pairs: &[(ModelParams, ModelParams)],
) -> Result<SmoothnessEstimate> {
    if probe_pairs.len() < 10 {
        return Err(Error::invalid(format!(
            "estimate_smoothness needs at least 10 probe pairs, got {}",
            probe_pairs.len()
        )));
    }
    let pooled = fed.pooled();
    let mut beta_hat = 0.0f64;
    let mut rho_hat = 0.0f64;
    let mut used = 0;
    for (a, b) in probe_pairs {
        let dist = diff_norm(a.as_slice(), b.as_slice());
        if dist < 1e-12 {
            continue;
        }
        let ga = model::gradient(a, &pooled)?;
        let gb = model::gradient(b, &pooled)?;
        beta_hat = beta_hat.max(diff_norm(&ga, &gb) / dist);
        let la = model::loss(a, &pooled)?;
        let lb = model::loss(b, &pooled)?;
        rho_hat = rho_hat.max((la - lb).abs() / dist);
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("all probe pairs were coincident"));
    }
    Ok(SmoothnessEstimate {
        beta_hat,
        rho_hat,
        probes: used,
    })
}

/// Seeded Gaussian probe models at the given scale.
pub fn random_probes(
    count: usize,
    num_classes: usize,
    feature_dim: usize,
    scale: f64,
    seed: u64,
) -> Vec<ModelParams> {
    let mut rng = rng::stream(seed, "probes");
    (0..count)
        .map(|_| ModelParams::random_init(num_classes, feature_dim, scale, &mut rng))
        .collect()
}

/// Consecutive pairs of a probe list, for smoothness estimation.
pub fn consecutive_pairs(probes: &[ModelParams]) -> Vec<(ModelParams, ModelParams)> {
    probes
        .windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect()
}

/// Co-simulated centralized trajectories and the loss gap they witness.
///
/// `gaps[t]` is the pooled loss of the federated readout minus the pooled
/// loss of the current interval's virtual global model at step `t`; both
/// resynchronize at global boundaries, where the gap is exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualTrace {
    pub gaps: Vec<f64>,
    pub resync_steps: Vec<usize>,
    /// Readout snapshots at the eval cadence, usable as trajectory probes.
    pub snapshots: Vec<ModelParams>,
    pub final_virtual_global: ModelParams,
    pub final_virtual_groups: Vec<ModelParams>,
}

/// Run a star-global architecture while co-simulating virtual group and
/// global models that do full-batch descent on pooled data and resync at
/// their interval boundaries.
pub fn run_virtual_trace(
    cfg: &ArchitectureConfig,
    fed: &FederatedDataset,
    grouping: &GroupAssignment,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<VirtualTrace> {
    let kind = cfg.kind()?;
    if !matches!(kind, ArchKind::Star | ArchKind::StarStars) {
        return Err(Error::invalid(
            "virtual traces are defined for star-global architectures",
        ));
    }
    let (tau1, tau2) = match kind {
        ArchKind::Star => (cfg.tau, 1),
        _ => (cfg.tau1, cfg.tau2),
    };

    let mut sim = Simulation::with_grouping(cfg, fed, hyper, grouping.clone(), seed)?;
    let members = grouping.members();
    let pooled_global = fed.pooled();
    let pooled_groups: Vec<Vec<LabeledExample>> = members
        .iter()
        .map(|group| {
            let mut pool = Vec::new();
            for &i in group {
                pool.extend(fed.nodes[i].examples.iter().cloned());
            }
            pool
        })
        .collect();

    let w0 = sim.models()[0].clone();
    let mut virtual_global = w0.clone();
    let mut virtual_groups = vec![w0; grouping.num_groups];

    let mut gaps = vec![0.0];
    let mut resync_steps = Vec::new();
    let mut snapshots = vec![sim.consensus_readout()?];

    for t in 1..=hyper.steps {
        sim.step()?;
        virtual_global = model::sgd_step(&virtual_global, &pooled_global, hyper.eta)?;
        for (k, vg) in virtual_groups.iter_mut().enumerate() {
            *vg = model::sgd_step(vg, &pooled_groups[k], hyper.eta)?;
        }

        let readout = sim.consensus_readout()?;
        if t % (tau1 * tau2) == 0 {
            // next interval's virtual models start from the synced state
            virtual_global = readout.clone();
            for (k, vg) in virtual_groups.iter_mut().enumerate() {
                *vg = sim.group_readout(k)?;
            }
            resync_steps.push(t);
        } else if t % tau1 == 0 {
            for (k, vg) in virtual_groups.iter_mut().enumerate() {
                *vg = sim.group_readout(k)?;
            }
        }

        let federated_loss = model::loss(&readout, &pooled_global)?;
        let virtual_loss = model::loss(&virtual_global, &pooled_global)?;
        gaps.push(federated_loss - virtual_loss);

        if t % hyper.eval_every == 0 {
            snapshots.push(readout);
        }
    }

    Ok(VirtualTrace {
        gaps,
        resync_steps,
        snapshots,
        final_virtual_global: virtual_global,
        final_virtual_groups: virtual_groups,
    })
}
