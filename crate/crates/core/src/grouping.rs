//! Node grouping: EMD histogram distance, the generic medoid loop, and the
//! two cost schemes built on it (`group_by_iid`, `cluster`).
//!
//! The loop alternates medoid updates and association reassignments and
//! accepts a candidate state only when the total association cost improves,
//! so the cost trace is non-increasing by construction. Reassignment scans
//! nodes in ascending index order and applies moves in place (batch scans
//! oscillate in two-cycles on symmetric instances). When a group empties
//! out, the worst-assigned node of the largest group moves in and becomes
//! its medoid; on tied landscapes this repair is what re-anchors redundant
//! groups. `group_by_iid` additionally pins each medoid to its own group,
//! because its pooled-tentative cost otherwise collapses every node into
//! one global-looking pool.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{label_counts, ClassDistribution, FederatedDataset};
use crate::error::{Error, Result};
use crate::rng;

const COST_TOLERANCE: f64 = 1e-9;
const MAX_ITERATIONS: usize = 100;

/// Disjoint partition of node indices into non-empty groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub membership: Vec<usize>,
    pub num_groups: usize,
}

impl GroupAssignment {
    pub fn single_group(num_nodes: usize) -> Self {
        GroupAssignment {
            membership: vec![0; num_nodes],
            num_groups: 1,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.membership.len()
    }

    pub fn group_of(&self, node: usize) -> usize {
        self.membership[node]
    }

    /// Member node ids per group, ascending within each group.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_groups];
        for (node, &g) in self.membership.iter().enumerate() {
            out[g].push(node);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_groups == 0 {
            return Err(Error::invalid("num_groups must be positive"));
        }
        if self.membership.is_empty() {
            return Err(Error::invalid("empty membership"));
        }
        let mut seen = vec![false; self.num_groups];
        for (node, &g) in self.membership.iter().enumerate() {
            if g >= self.num_groups {
                return Err(Error::invalid(format!(
                    "node {node} assigned to group {g} out of {}",
                    self.num_groups
                )));
            }
            seen[g] = true;
        }
        if let Some(empty) = seen.iter().position(|&s| !s) {
            return Err(Error::invalid(format!("group {empty} is empty")));
        }
        Ok(())
    }
}

/// Audit trail of the grouping loop; the trace is non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingCostReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub cost_trace: Vec<f64>,
}

impl GroupingCostReport {
    /// Fractional cost reduction achieved by the loop.
    pub fn reduction(&self) -> f64 {
        if self.initial_cost <= 0.0 {
            0.0
        } else {
            (self.initial_cost - self.final_cost) / self.initial_cost
        }
    }
}

/// L1 distance between class histograms; range `[0, 2]`.
pub fn emd(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    if p.probs.len() != q.probs.len() {
        return Err(Error::invalid(format!(
            "distribution length mismatch: {} vs {}",
            p.probs.len(),
            q.probs.len()
        )));
    }
    Ok(emd_raw(&p.probs, &q.probs))
}

fn emd_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// The loop state that cost functions evaluate against. During a
/// reassignment scan, `membership` reflects earlier moves of the same scan;
/// between iterations it is the last accepted assignment.
#[derive(Debug, Clone)]
pub struct GroupingState {
    node_counts: Vec<Vec<u64>>,
    node_dists: Vec<Vec<f64>>,
    global_dist: Vec<f64>,
    membership: Vec<usize>,
    medoids: Vec<usize>,
    group_counts: Vec<Vec<u64>>,
}

impl GroupingState {
    fn new(fed: &FederatedDataset, num_groups: usize) -> Result<Self> {
        let num_classes = fed.num_classes;
        let mut node_counts = Vec::with_capacity(fed.num_nodes());
        let mut global_counts = vec![0u64; num_classes];
        for node in &fed.nodes {
            let counts = label_counts(&node.examples, num_classes)?;
            for (g, c) in global_counts.iter_mut().zip(&counts) {
                *g += c;
            }
            node_counts.push(counts);
        }
        let node_dists = node_counts.iter().map(|c| normalize(c)).collect();
        let global_dist = normalize(&global_counts);
        Ok(GroupingState {
            node_counts,
            node_dists,
            global_dist,
            membership: vec![usize::MAX; fed.num_nodes()],
            medoids: Vec::new(),
            group_counts: vec![vec![0u64; num_classes]; num_groups],
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_dists.len()
    }

    pub fn num_groups(&self) -> usize {
        self.group_counts.len()
    }

    pub fn node_distribution(&self, node: usize) -> &[f64] {
        &self.node_dists[node]
    }

    pub fn global_distribution(&self) -> &[f64] {
        &self.global_dist
    }

    pub fn medoid(&self, group: usize) -> usize {
        self.medoids[group]
    }

    /// Pooled label distribution of a group under the current membership.
    pub fn group_distribution(&self, group: usize) -> Vec<f64> {
        normalize(&self.group_counts[group])
    }

    /// Pooled distribution of `group` with `node` tentatively included,
    /// keeping the current membership for everyone else.
    pub fn group_distribution_with(&self, group: usize, node: usize) -> Vec<f64> {
        let mut counts = self.group_counts[group].clone();
        if self.membership[node] != group {
            for (c, n) in counts.iter_mut().zip(&self.node_counts[node]) {
                *c += n;
            }
        }
        normalize(&counts)
    }

    fn set_membership(&mut self, membership: Vec<usize>) {
        self.membership = membership;
        for counts in &mut self.group_counts {
            counts.iter_mut().for_each(|c| *c = 0);
        }
        for (node, &g) in self.membership.iter().enumerate() {
            if g == usize::MAX {
                continue;
            }
            for (gc, nc) in self.group_counts[g].iter_mut().zip(&self.node_counts[node]) {
                *gc += nc;
            }
        }
    }

    fn move_node(&mut self, node: usize, group: usize) {
        let old = self.membership[node];
        if old == group {
            return;
        }
        if old != usize::MAX {
            for (gc, nc) in self.group_counts[old].iter_mut().zip(&self.node_counts[node]) {
                *gc -= nc;
            }
        }
        for (gc, nc) in self.group_counts[group].iter_mut().zip(&self.node_counts[node]) {
            *gc += nc;
        }
        self.membership[node] = group;
    }

    fn members_of(&self, group: usize) -> Vec<usize> {
        self.membership
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == group)
            .map(|(i, _)| i)
            .collect()
    }

    fn group_node_count(&self, group: usize) -> usize {
        self.membership.iter().filter(|&&g| g == group).count()
    }
}

fn normalize(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

pub type CostFn<'a> = &'a dyn Fn(&GroupingState, usize, usize) -> f64;

/// Medoid-seeded alternating loop over an association cost (assignment) and
/// an update cost (medoid selection). Argmin ties break to the lowest group
/// or node index.
pub fn group(
    fed: &FederatedDataset,
    num_groups: usize,
    cost_a: CostFn,
    cost_u: CostFn,
    seed: u64,
) -> Result<(GroupAssignment, GroupingCostReport)> {
    group_impl(fed, num_groups, cost_a, cost_u, seed, false)
}

fn group_impl(
    fed: &FederatedDataset,
    num_groups: usize,
    cost_a: CostFn,
    cost_u: CostFn,
    seed: u64,
    pin_medoids: bool,
) -> Result<(GroupAssignment, GroupingCostReport)> {
    fed.validate()?;
    let n = fed.num_nodes();
    if num_groups < 1 || num_groups > n {
        return Err(Error::invalid(format!(
            "num_groups {num_groups} must be in 1..={n}"
        )));
    }

    let mut state = GroupingState::new(fed, num_groups)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "medoids"));
    state.medoids = order[..num_groups].to_vec();

    // bootstrap membership: each medoid sits in its own group so pooled
    // costs have something to compare against
    let mut bootstrap = vec![usize::MAX; n];
    for (k, &m) in state.medoids.iter().enumerate() {
        bootstrap[m] = k;
    }
    state.set_membership(bootstrap);

    reassign(&mut state, cost_a, pin_medoids);
    repair(&mut state, cost_a);

    let mut cost = total_association_cost(&state, cost_a);
    let mut trace = vec![cost];

    for _ in 0..MAX_ITERATIONS {
        let mut candidate = state.clone();
        update_medoids(&mut candidate, cost_u);
        reassign(&mut candidate, cost_a, pin_medoids);
        repair(&mut candidate, cost_a);
        let candidate_cost = total_association_cost(&candidate, cost_a);
        if cost - candidate_cost < COST_TOLERANCE {
            break;
        }
        state = candidate;
        cost = candidate_cost;
        trace.push(cost);
    }

    let assignment = GroupAssignment {
        membership: state.membership.clone(),
        num_groups,
    };
    assignment.validate()?;
    let report = GroupingCostReport {
        initial_cost: trace[0],
        final_cost: *trace.last().unwrap(),
        iterations: trace.len() - 1,
        cost_trace: trace,
    };
    Ok((assignment, report))
}

fn reassign(state: &mut GroupingState, cost_a: CostFn, pin_medoids: bool) {
    let mut pinned_to = vec![usize::MAX; state.num_nodes()];
    if pin_medoids {
        for (k, &m) in state.medoids.iter().enumerate() {
            pinned_to[m] = k;
        }
    }
    for node in 0..state.num_nodes() {
        if pinned_to[node] != usize::MAX {
            state.move_node(node, pinned_to[node]);
            continue;
        }
        let mut best_group = 0;
        let mut best_cost = f64::INFINITY;
        for k in 0..state.num_groups() {
            let c = cost_a(state, node, k);
            if c < best_cost {
                best_cost = c;
                best_group = k;
            }
        }
        state.move_node(node, best_group);
    }
}

fn update_medoids(state: &mut GroupingState, cost_u: CostFn) {
    let mut new_medoids = state.medoids.clone();
    for k in 0..state.num_groups() {
        let members = state.members_of(k);
        if members.is_empty() {
            continue;
        }
        let mut best_node = members[0];
        let mut best_cost = f64::INFINITY;
        for &i in &members {
            let c = cost_u(state, i, k);
            if c < best_cost {
                best_cost = c;
                best_node = i;
            }
        }
        new_medoids[k] = best_node;
    }
    state.medoids = new_medoids;
}

fn repair(state: &mut GroupingState, cost_a: CostFn) {
    loop {
        let empty = (0..state.num_groups()).find(|&k| state.group_node_count(k) == 0);
        let Some(empty) = empty else { break };

        let largest = (0..state.num_groups())
            .max_by_key(|&k| state.group_node_count(k))
            .expect("at least one group");
        let members = state.members_of(largest);
        let mut worst: Option<(usize, f64)> = None;
        for &i in &members {
            if i == state.medoids[largest] {
                continue;
            }
            let c = cost_a(state, i, largest);
            if worst.map_or(true, |(_, wc)| c > wc) {
                worst = Some((i, c));
            }
        }
        let (node, _) = worst.expect("largest group has a non-medoid member");
        state.move_node(node, empty);
        // the moved node anchors the repaired group
        state.medoids[empty] = node;
    }
}

fn total_association_cost(state: &GroupingState, cost_a: CostFn) -> f64 {
    (0..state.num_nodes())
        .map(|i| cost_a(state, i, state.membership[i]))
        .sum()
}

/// Grouping that makes every group's pooled distribution resemble the global
/// one: assignment compares the group pool with the candidate node
/// tentatively included against the global distribution; medoid update picks
/// the member closest to the global distribution.
pub fn group_by_iid(
    fed: &FederatedDataset,
    num_groups: usize,
    seed: u64,
) -> Result<(GroupAssignment, GroupingCostReport)> {
    let cost_a = |st: &GroupingState, i: usize, k: usize| {
        emd_raw(&st.group_distribution_with(k, i), st.global_distribution())
    };
    let cost_u = |st: &GroupingState, i: usize, _k: usize| {
        emd_raw(st.node_distribution(i), st.global_distribution())
    };
    group_impl(fed, num_groups, &cost_a, &cost_u, seed, true)
}

/// Grouping that collects nodes with similar distributions: assignment is
/// classic node-to-medoid EMD; medoid update picks the member closest to the
/// group's pooled distribution.
pub fn cluster(
    fed: &FederatedDataset,
    num_groups: usize,
    seed: u64,
) -> Result<(GroupAssignment, GroupingCostReport)> {
    let cost_a = |st: &GroupingState, i: usize, k: usize| {
        emd_raw(st.node_distribution(i), st.node_distribution(st.medoid(k)))
    };
    let cost_u = |st: &GroupingState, i: usize, k: usize| {
        emd_raw(st.node_distribution(i), &st.group_distribution(k))
    };
    group(fed, num_groups, &cost_a, &cost_u, seed)
}

/// Seeded balanced partition, dealing shuffled nodes round-robin.
pub fn random_balanced(num_nodes: usize, num_groups: usize, seed: u64) -> Result<GroupAssignment> {
    if num_groups < 1 || num_groups > num_nodes {
        return Err(Error::invalid(format!(
            "num_groups {num_groups} must be in 1..={num_nodes}"
        )));
    }
    let mut order: Vec<usize> = (0..num_nodes).collect();
    order.shuffle(&mut rng::stream(seed, "random-grouping"));
    let mut membership = vec![0usize; num_nodes];
    for (pos, &node) in order.iter().enumerate() {
        membership[node] = pos % num_groups;
    }
    let assignment = GroupAssignment {
        membership,
        num_groups,
    };
    assignment.validate()?;
    Ok(assignment)
}
