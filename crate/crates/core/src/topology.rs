//! Architectures, rings, per-step schedules, and communication accounting.
//!
//! Steps are 1-indexed: step `t` first runs local updates on the active
//! nodes, then fires any sync events whose interval boundary falls on `t`.
//! A ring level with interval `tau` has segment index `(t - 1) / tau`; the
//! item at that ring position (plus chain offsets) is active, and at
//! `t % tau == 0` it hands its model to the next position. Star levels
//! aggregate and broadcast at their boundary.
//!
//! Byte accounting charges `M` per model crossing a link: a star aggregation
//! over `n` members charges `n * M` uploads (the broadcast rides the same
//! links back), and a ring hand-off charges `M` per chain. Summing the
//! per-step charges over a whole run reproduces the closed forms in
//! [`comm_cost`] exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupAssignment;
use crate::rng;

/// Seeded permutation of item indices; position `j + period` wraps to `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ring {
    order: Vec<usize>,
}

impl Ring {
    fn permuted(mut items: Vec<usize>, rng: &mut impl rand::Rng) -> Self {
        use rand::seq::SliceRandom;
        items.shuffle(rng);
        Ring { order: items }
    }

    pub fn period(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Item at a (wrapping) ring position.
    pub fn at(&self, position: usize) -> usize {
        self.order[position % self.order.len()]
    }
}

/// Seeded uniform random ring over items `0..num_items`.
pub fn build_ring(num_items: usize, seed: u64) -> Result<Ring> {
    if num_items == 0 {
        return Err(Error::invalid("cannot build a ring over zero items"));
    }
    let items: Vec<usize> = (0..num_items).collect();
    Ok(Ring::permuted(items, &mut rng::stream(seed, "ring")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlobalLevel {
    Star,
    Ring,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupLevel {
    Star,
    Ring,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupingScheme {
    Iid,
    Cluster,
    Random,
    SingleGroup,
}

/// The eight architectures spanned by (global level, group level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchKind {
    /// Flat star: all nodes, one global aggregation every `tau`.
    Star,
    /// Flat ring: one traveling model (per chain), hand-off every `tau`.
    Ring,
    StarStars,
    StarRings,
    RingStars,
    RingRings,
    /// Pluralistic stars: independent group aggregations, no global sync.
    Stars,
    /// Pluralistic rings: independent group rings, no global sync.
    Rings,
}

/// Architecture selection plus interval, chain, and grouping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub global_level: GlobalLevel,
    pub group_level: GroupLevel,
    pub grouping: GroupingScheme,
    pub num_groups: usize,
    /// Simultaneous traversals of the chained ring level.
    pub chains: usize,
    /// Sync interval for flat and pluralistic architectures.
    pub tau: usize,
    /// Group sync interval for consensus architectures.
    pub tau1: usize,
    /// Global syncs fire every `tau1 * tau2` steps.
    pub tau2: usize,
}

impl ArchitectureConfig {
    pub fn star(tau: usize) -> Self {
        ArchitectureConfig {
            global_level: GlobalLevel::Star,
            group_level: GroupLevel::Flat,
            grouping: GroupingScheme::SingleGroup,
            num_groups: 1,
            chains: 1,
            tau,
            tau1: 1,
            tau2: 1,
        }
    }

    pub fn ring(tau: usize, chains: usize) -> Self {
        ArchitectureConfig {
            global_level: GlobalLevel::Ring,
            group_level: GroupLevel::Flat,
            grouping: GroupingScheme::SingleGroup,
            num_groups: 1,
            chains,
            tau,
            tau1: 1,
            tau2: 1,
        }
    }

    pub fn star_stars(num_groups: usize, scheme: GroupingScheme, tau1: usize, tau2: usize) -> Self {
        ArchitectureConfig {
            global_level: GlobalLevel::Star,
            group_level: GroupLevel::Star,
            grouping: scheme,
            num_groups,
            chains: 1,
            tau: 1,
            tau1,
            tau2,
        }
    }

    pub fn star_rings(
        num_groups: usize,
        scheme: GroupingScheme,
        chains: usize,
        tau1: usize,
        tau2: usize,
    ) -> Self {
        ArchitectureConfig {
            group_level: GroupLevel::Ring,
            ..ArchitectureConfig::star_stars(num_groups, scheme, tau1, tau2)
        }
        .with_chains(chains)
    }

    pub fn ring_stars(
        num_groups: usize,
        scheme: GroupingScheme,
        chains: usize,
        tau1: usize,
        tau2: usize,
    ) -> Self {
        ArchitectureConfig {
            global_level: GlobalLevel::Ring,
            ..ArchitectureConfig::star_stars(num_groups, scheme, tau1, tau2)
        }
        .with_chains(chains)
    }

    pub fn ring_rings(
        num_groups: usize,
        scheme: GroupingScheme,
        chains: usize,
        tau1: usize,
        tau2: usize,
    ) -> Self {
        ArchitectureConfig {
            global_level: GlobalLevel::Ring,
            group_level: GroupLevel::Ring,
            ..ArchitectureConfig::star_stars(num_groups, scheme, tau1, tau2)
        }
        .with_chains(chains)
    }

    pub fn stars(num_groups: usize, scheme: GroupingScheme, tau: usize) -> Self {
        ArchitectureConfig {
            global_level: GlobalLevel::None,
            group_level: GroupLevel::Star,
            grouping: scheme,
            num_groups,
            chains: 1,
            tau,
            tau1: 1,
            tau2: 1,
        }
    }

    pub fn rings(num_groups: usize, scheme: GroupingScheme, chains: usize, tau: usize) -> Self {
        ArchitectureConfig {
            group_level: GroupLevel::Ring,
            ..ArchitectureConfig::stars(num_groups, scheme, tau)
        }
        .with_chains(chains)
    }

    fn with_chains(mut self, chains: usize) -> Self {
        self.chains = chains;
        self
    }

    pub fn kind(&self) -> Result<ArchKind> {
        match (self.global_level, self.group_level) {
            (GlobalLevel::Star, GroupLevel::Flat) => Ok(ArchKind::Star),
            (GlobalLevel::Ring, GroupLevel::Flat) => Ok(ArchKind::Ring),
            (GlobalLevel::Star, GroupLevel::Star) => Ok(ArchKind::StarStars),
            (GlobalLevel::Star, GroupLevel::Ring) => Ok(ArchKind::StarRings),
            (GlobalLevel::Ring, GroupLevel::Star) => Ok(ArchKind::RingStars),
            (GlobalLevel::Ring, GroupLevel::Ring) => Ok(ArchKind::RingRings),
            (GlobalLevel::None, GroupLevel::Star) => Ok(ArchKind::Stars),
            (GlobalLevel::None, GroupLevel::Ring) => Ok(ArchKind::Rings),
            (GlobalLevel::None, GroupLevel::Flat) => Err(Error::invalid(
                "a pluralistic architecture needs a group level (star or ring)",
            )),
        }
    }

    /// Whether the architecture keeps independent group models (no global
    /// sync).
    pub fn is_pluralistic(&self) -> bool {
        self.global_level == GlobalLevel::None
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if self.num_groups == 0 {
            return Err(Error::invalid("num_groups must be positive"));
        }
        if self.group_level == GroupLevel::Flat && self.num_groups != 1 {
            return Err(Error::invalid("flat architectures require num_groups = 1"));
        }
        if self.chains == 0 {
            return Err(Error::invalid("chains must be at least 1"));
        }
        match kind {
            ArchKind::Star | ArchKind::Ring | ArchKind::Stars | ArchKind::Rings => {
                if self.tau == 0 {
                    return Err(Error::invalid("tau must be at least 1"));
                }
            }
            _ => {
                if self.tau1 == 0 || self.tau2 == 0 {
                    return Err(Error::invalid("tau1 and tau2 must be at least 1"));
                }
            }
        }
        // the chained level's period is known at config time for global rings
        if matches!(kind, ArchKind::RingStars | ArchKind::RingRings) && self.chains > self.num_groups
        {
            return Err(Error::invalid(format!(
                "chain count {} exceeds the group ring period {}",
                self.chains, self.num_groups
            )));
        }
        Ok(())
    }

    /// Steps between consecutive sync boundaries.
    pub fn sync_interval(&self) -> usize {
        match self.kind() {
            Ok(ArchKind::StarStars | ArchKind::StarRings | ArchKind::RingStars | ArchKind::RingRings) => {
                self.tau1
            }
            _ => self.tau,
        }
    }

    /// Steps between consecutive global boundaries (flat architectures sync
    /// globally every `tau`).
    pub fn global_interval(&self) -> usize {
        match self.kind() {
            Ok(ArchKind::StarStars | ArchKind::StarRings | ArchKind::RingStars | ArchKind::RingRings) => {
                self.tau1 * self.tau2
            }
            _ => self.tau,
        }
    }
}

/// The rings an architecture traverses: `outer` runs over group indices for
/// grouped ring-global architectures (or node ids for the flat ring), and
/// `per_group[k]` is an independent permutation of group `k`'s member nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRings {
    pub outer: Option<Ring>,
    pub per_group: Vec<Ring>,
}

/// Build the rings the configuration needs, all from one seeded stream:
/// outer ring first, then per-group rings in ascending group order.
pub fn build_rings(
    cfg: &ArchitectureConfig,
    grouping: &GroupAssignment,
    seed: u64,
) -> Result<LevelRings> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    let mut rng = rng::stream(seed, "rings");

    let outer = match kind {
        ArchKind::Ring => {
            let items: Vec<usize> = (0..grouping.num_nodes()).collect();
            Some(Ring::permuted(items, &mut rng))
        }
        ArchKind::RingStars | ArchKind::RingRings => {
            let items: Vec<usize> = (0..grouping.num_groups).collect();
            Some(Ring::permuted(items, &mut rng))
        }
        _ => None,
    };

    let per_group = match kind {
        ArchKind::StarRings | ArchKind::RingRings | ArchKind::Rings => grouping
            .members()
            .into_iter()
            .map(|members| Ring::permuted(members, &mut rng))
            .collect(),
        _ => Vec::new(),
    };

    Ok(LevelRings { outer, per_group })
}

/// Group-level sync event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupSync {
    /// Aggregate the group's members (weights `|D^{k,i}|/|D^k|`) and
    /// broadcast the aggregate back to every member.
    StarAggregate { group: usize },
    /// Copy node `from`'s model onto node `to` (same ring; `group` is 0 for
    /// the flat ring).
    RingTransfer { group: usize, from: usize, to: usize },
}

/// Global-level sync event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlobalSync {
    /// Aggregate every node (weights `|D^{k,i}|/|D|`) and broadcast to all.
    StarAggregate,
    /// Hand a group-level model to every node of the next ring group.
    /// `source_node: None` sends `from_group`'s star aggregate;
    /// `Some(node)` sends that node's current model.
    RingHandoff {
        from_group: usize,
        to_group: usize,
        source_node: Option<usize>,
    },
}

/// One simulation step: local updates on `active`, then sync events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPlan {
    pub step: usize,
    /// `(group, node)` pairs performing a local update, ascending.
    pub active: Vec<(usize, usize)>,
    pub group_syncs: Vec<GroupSync>,
    pub global_syncs: Vec<GlobalSync>,
    /// Communication bytes charged to this step.
    pub bytes: u64,
    /// Concurrent transfer links used by this step's events.
    pub links: usize,
}

/// Derive the full step sequence for `steps` steps (t = 1..=steps).
pub fn schedule(
    cfg: &ArchitectureConfig,
    grouping: &GroupAssignment,
    rings: &LevelRings,
    model_bytes: u64,
    steps: usize,
) -> Result<Vec<StepPlan>> {
    cfg.validate()?;
    grouping.validate()?;
    let kind = cfg.kind()?;
    if grouping.num_groups != cfg.num_groups {
        return Err(Error::invalid(format!(
            "grouping has {} groups but config expects {}",
            grouping.num_groups, cfg.num_groups
        )));
    }
    let members = grouping.members();
    let sizes: Vec<usize> = members.iter().map(|m| m.len()).collect();
    let n = grouping.num_nodes();
    let m = model_bytes;

    if kind == ArchKind::Ring {
        let ring = rings.outer.as_ref().ok_or_else(|| Error::invalid("flat ring missing"))?;
        if cfg.chains > ring.period() {
            return Err(Error::invalid(format!(
                "chain count {} exceeds the node ring period {}",
                cfg.chains,
                ring.period()
            )));
        }
    }
    if matches!(kind, ArchKind::StarRings | ArchKind::RingRings | ArchKind::Rings)
        && rings.per_group.len() != cfg.num_groups
    {
        return Err(Error::invalid("per-group rings missing"));
    }
    if matches!(kind, ArchKind::RingStars | ArchKind::RingRings) && rings.outer.is_none() {
        return Err(Error::invalid("group ring missing"));
    }

    let all_active = || -> Vec<(usize, usize)> {
        (0..n).map(|i| (grouping.group_of(i), i)).collect()
    };

    let mut plans = Vec::with_capacity(steps);
    for t in 1..=steps {
        let mut plan = StepPlan {
            step: t,
            active: Vec::new(),
            group_syncs: Vec::new(),
            global_syncs: Vec::new(),
            bytes: 0,
            links: 0,
        };

        match kind {
            ArchKind::Star => {
                plan.active = all_active();
                if t % cfg.tau == 0 {
                    plan.global_syncs.push(GlobalSync::StarAggregate);
                    plan.bytes += n as u64 * m;
                    plan.links += n;
                }
            }
            ArchKind::Ring => {
                let ring = rings.outer.as_ref().unwrap();
                let seg = (t - 1) / cfg.tau;
                for c in 0..cfg.chains {
                    plan.active.push((0, ring.at(seg + c)));
                }
                if t % cfg.tau == 0 {
                    for c in 0..cfg.chains {
                        plan.group_syncs.push(GroupSync::RingTransfer {
                            group: 0,
                            from: ring.at(seg + c),
                            to: ring.at(seg + 1 + c),
                        });
                        plan.bytes += m;
                        plan.links += 1;
                    }
                }
            }
            ArchKind::StarStars => {
                plan.active = all_active();
                if t % (cfg.tau1 * cfg.tau2) == 0 {
                    plan.global_syncs.push(GlobalSync::StarAggregate);
                    plan.bytes += n as u64 * m;
                    plan.links += n;
                } else if t % cfg.tau1 == 0 {
                    for k in 0..cfg.num_groups {
                        plan.group_syncs.push(GroupSync::StarAggregate { group: k });
                        plan.bytes += sizes[k] as u64 * m;
                    }
                    plan.links += n;
                }
            }
            ArchKind::StarRings | ArchKind::Rings => {
                let tau1 = if kind == ArchKind::StarRings { cfg.tau1 } else { cfg.tau };
                let seg = (t - 1) / tau1;
                for k in 0..cfg.num_groups {
                    let ring = &rings.per_group[k];
                    let effective = cfg.chains.min(ring.period());
                    for c in 0..effective {
                        plan.active.push((k, ring.at(seg + c)));
                    }
                }
                let global_boundary =
                    kind == ArchKind::StarRings && t % (cfg.tau1 * cfg.tau2) == 0;
                if global_boundary {
                    plan.global_syncs.push(GlobalSync::StarAggregate);
                    plan.bytes += n as u64 * m;
                    plan.links += n;
                } else if t % tau1 == 0 {
                    for k in 0..cfg.num_groups {
                        let ring = &rings.per_group[k];
                        let effective = cfg.chains.min(ring.period());
                        for c in 0..effective {
                            plan.group_syncs.push(GroupSync::RingTransfer {
                                group: k,
                                from: ring.at(seg + c),
                                to: ring.at(seg + 1 + c),
                            });
                            plan.bytes += m;
                            plan.links += 1;
                        }
                    }
                }
            }
            ArchKind::RingStars | ArchKind::RingRings => {
                let outer = rings.outer.as_ref().unwrap();
                let interval = cfg.tau1 * cfg.tau2;
                let seg_global = (t - 1) / interval;
                let seg_group = (t - 1) / cfg.tau1;
                for c in 0..cfg.chains {
                    let k = outer.at(seg_global + c);
                    if kind == ArchKind::RingStars {
                        for &node in &members[k] {
                            plan.active.push((k, node));
                        }
                    } else {
                        let ring = &rings.per_group[k];
                        plan.active.push((k, ring.at(seg_group)));
                    }
                }
                if t % interval == 0 {
                    for c in 0..cfg.chains {
                        let from_group = outer.at(seg_global + c);
                        let to_group = outer.at(seg_global + 1 + c);
                        let source_node = if kind == ArchKind::RingRings {
                            Some(rings.per_group[from_group].at(seg_group))
                        } else {
                            None
                        };
                        plan.global_syncs.push(GlobalSync::RingHandoff {
                            from_group,
                            to_group,
                            source_node,
                        });
                        if kind == ArchKind::RingStars {
                            plan.bytes += sizes[from_group] as u64 * m;
                            plan.links += sizes[from_group];
                        } else {
                            plan.bytes += m;
                            plan.links += 1;
                        }
                    }
                } else if t % cfg.tau1 == 0 {
                    for c in 0..cfg.chains {
                        let k = outer.at(seg_global + c);
                        if kind == ArchKind::RingStars {
                            plan.group_syncs.push(GroupSync::StarAggregate { group: k });
                            plan.bytes += sizes[k] as u64 * m;
                            plan.links += sizes[k];
                        } else {
                            let ring = &rings.per_group[k];
                            plan.group_syncs.push(GroupSync::RingTransfer {
                                group: k,
                                from: ring.at(seg_group),
                                to: ring.at(seg_group + 1),
                            });
                            plan.bytes += m;
                            plan.links += 1;
                        }
                    }
                }
            }
            ArchKind::Stars => {
                plan.active = all_active();
                if t % cfg.tau == 0 {
                    for k in 0..cfg.num_groups {
                        plan.group_syncs.push(GroupSync::StarAggregate { group: k });
                        plan.bytes += sizes[k] as u64 * m;
                    }
                    plan.links += n;
                }
            }
        }

        plan.active.sort_unstable();
        plans.push(plan);
    }
    Ok(plans)
}

/// Totals from the closed-form accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub total_bytes: u64,
    pub bytes_per_round: f64,
    pub peak_concurrent_links: usize,
}

/// Closed-form communication totals assuming `num_groups` equal-size groups.
///
/// `steps` must divide into whole sync intervals, and for grouped
/// architectures the node count must split evenly across groups; use
/// [`comm_cost_grouped`] for arbitrary group sizes.
pub fn comm_cost(
    cfg: &ArchitectureConfig,
    model_bytes: u64,
    steps: usize,
    node_count: usize,
) -> Result<CommReport> {
    cfg.validate()?;
    if node_count == 0 {
        return Err(Error::invalid("node_count must be positive"));
    }
    if node_count % cfg.num_groups != 0 {
        return Err(Error::invalid(format!(
            "node count {node_count} does not split evenly into {} groups; use the grouped accounting",
            cfg.num_groups
        )));
    }
    let group_size = node_count / cfg.num_groups;
    let sizes = vec![group_size; cfg.num_groups];
    // any ring order gives the same totals for equal sizes
    let outer = Ring {
        order: (0..cfg.num_groups).collect(),
    };
    comm_cost_from_sizes(cfg, model_bytes, steps, &sizes, &outer)
}

/// Closed-form communication totals for the actual group sizes and group
/// ring produced for a run.
pub fn comm_cost_grouped(
    cfg: &ArchitectureConfig,
    model_bytes: u64,
    steps: usize,
    grouping: &GroupAssignment,
    rings: &LevelRings,
) -> Result<CommReport> {
    cfg.validate()?;
    grouping.validate()?;
    let sizes: Vec<usize> = grouping.members().iter().map(|m| m.len()).collect();
    let fallback = Ring {
        order: (0..cfg.num_groups).collect(),
    };
    let outer = rings.outer.as_ref().unwrap_or(&fallback);
    comm_cost_from_sizes(cfg, model_bytes, steps, &sizes, outer)
}

fn comm_cost_from_sizes(
    cfg: &ArchitectureConfig,
    model_bytes: u64,
    steps: usize,
    sizes: &[usize],
    outer: &Ring,
) -> Result<CommReport> {
    let kind = cfg.kind()?;
    let n: usize = sizes.iter().sum();
    let m = model_bytes;
    let c = cfg.chains as u64;

    let interval = cfg.global_interval();
    if steps % interval != 0 {
        return Err(Error::invalid(format!(
            "steps {steps} is not a whole number of {interval}-step intervals"
        )));
    }

    // effective chains per group ring: offsets beyond the period collide
    let effective_sum: u64 = sizes
        .iter()
        .map(|&s| cfg.chains.min(s) as u64)
        .sum();

    let (total, rounds, peak) = match kind {
        ArchKind::Star => {
            let tf = (steps / cfg.tau) as u64;
            (m * n as u64 * tf, tf, n)
        }
        ArchKind::Ring => {
            if cfg.chains > n {
                return Err(Error::invalid(format!(
                    "chain count {} exceeds the node ring period {n}",
                    cfg.chains
                )));
            }
            let tf = (steps / cfg.tau) as u64;
            (m * c * tf, tf, cfg.chains)
        }
        ArchKind::StarStars => {
            let tc = (steps / (cfg.tau1 * cfg.tau2)) as u64;
            let rounds = tc * cfg.tau2 as u64;
            (m * n as u64 * cfg.tau2 as u64 * tc, rounds, n)
        }
        ArchKind::StarRings => {
            let tc = (steps / (cfg.tau1 * cfg.tau2)) as u64;
            let ring_part = m * effective_sum * (cfg.tau2 as u64 - 1) * tc;
            let global_part = m * n as u64 * tc;
            let rounds = tc * cfg.tau2 as u64;
            (ring_part + global_part, rounds, effective_sum as usize)
        }
        ArchKind::RingStars => {
            let tc = steps / (cfg.tau1 * cfg.tau2);
            let mut total = 0u64;
            let mut peak = 0usize;
            for l in 0..tc {
                let active: usize = (0..cfg.chains).map(|ch| sizes[outer.at(l + ch)]).sum();
                total += m * active as u64 * cfg.tau2 as u64;
                peak = peak.max(active);
            }
            (total, (tc * cfg.tau2) as u64, peak)
        }
        ArchKind::RingRings => {
            let tc = (steps / (cfg.tau1 * cfg.tau2)) as u64;
            (m * c * cfg.tau2 as u64 * tc, tc * cfg.tau2 as u64, cfg.chains)
        }
        ArchKind::Stars => {
            let tp = (steps / cfg.tau) as u64;
            (m * n as u64 * tp, tp, n)
        }
        ArchKind::Rings => {
            let tp = (steps / cfg.tau) as u64;
            (m * effective_sum * tp, tp, effective_sum as usize)
        }
    };

    Ok(CommReport {
        total_bytes: total,
        bytes_per_round: if rounds == 0 { 0.0 } else { total as f64 / rounds as f64 },
        peak_concurrent_links: peak,
    })
}

/// Debug dump: one JSON StepPlan per line.
pub fn dump_schedule<W: std::io::Write>(plans: &[StepPlan], mut writer: W) -> Result<()> {
    for plan in plans {
        serde_json::to_writer(&mut writer, plan)?;
        writeln!(writer)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::random_balanced;
    use std::collections::HashMap;

    #[test]
    fn single_item_ring() {
        let ring = build_ring(1, 0).unwrap();
        assert_eq!(ring.order(), &[0]);
        assert_eq!(ring.period(), 1);
        assert_eq!(ring.at(5), 0);
    }

    #[test]
    fn rings_are_seed_deterministic() {
        assert_eq!(build_ring(8, 42).unwrap(), build_ring(8, 42).unwrap());
        assert!(build_ring(0, 1).is_err());
    }

    #[test]
    fn ring_permutations_are_near_uniform() {
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let trials = 10_000;
        for seed in 0..trials {
            let ring = build_ring(3, seed).unwrap();
            *counts.entry(ring.order().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, &count) in &counts {
            let freq = count as f64 / trials as f64;
            assert!((freq - 1.0 / 6.0).abs() < 0.02, "freq {freq}");
        }
    }

    fn plans_for(
        cfg: &ArchitectureConfig,
        grouping: &GroupAssignment,
        steps: usize,
    ) -> Vec<StepPlan> {
        let rings = build_rings(cfg, grouping, 7).unwrap();
        schedule(cfg, grouping, &rings, 100, steps).unwrap()
    }

    #[test]
    fn star_schedule_matches_mod_conditions() {
        let cfg = ArchitectureConfig::star(2);
        let grouping = GroupAssignment::single_group(4);
        let plans = plans_for(&cfg, &grouping, 4);
        for plan in &plans {
            assert_eq!(plan.active.len(), 4);
        }
        assert!(plans[0].global_syncs.is_empty());
        assert_eq!(plans[1].global_syncs, vec![GlobalSync::StarAggregate]);
        assert!(plans[2].global_syncs.is_empty());
        assert_eq!(plans[3].global_syncs, vec![GlobalSync::StarAggregate]);
    }

    #[test]
    fn flat_ring_walks_the_ring_one_node_per_step() {
        let cfg = ArchitectureConfig::ring(1, 1);
        let grouping = GroupAssignment::single_group(3);
        let rings = build_rings(&cfg, &grouping, 3).unwrap();
        let order = rings.outer.as_ref().unwrap().order().to_vec();
        let plans = schedule(&cfg, &grouping, &rings, 10, 6).unwrap();
        for (idx, plan) in plans.iter().enumerate() {
            assert_eq!(plan.active.len(), 1);
            assert_eq!(plan.active[0].1, order[idx % 3]);
            assert_eq!(plan.group_syncs.len(), 1);
        }
    }

    #[test]
    fn chained_group_ring_activates_distinct_groups() {
        let cfg = ArchitectureConfig::ring_stars(4, GroupingScheme::Random, 2, 1, 1);
        let grouping = random_balanced(8, 4, 1).unwrap();
        let plans = plans_for(&cfg, &grouping, 8);
        for plan in &plans {
            let mut groups: Vec<usize> = plan.active.iter().map(|&(g, _)| g).collect();
            groups.sort_unstable();
            groups.dedup();
            assert_eq!(groups.len(), 2, "chains must hit distinct groups");
        }
    }

    #[test]
    fn chain_count_validation() {
        assert!(ArchitectureConfig::ring_stars(2, GroupingScheme::Random, 3, 1, 1)
            .validate()
            .is_err());
        let cfg = ArchitectureConfig::ring(1, 5);
        let grouping = GroupAssignment::single_group(3);
        let rings = build_rings(&cfg, &grouping, 0).unwrap();
        assert!(schedule(&cfg, &grouping, &rings, 10, 4).is_err());
    }

    #[test]
    fn comm_cost_star_and_ring_examples() {
        let star = ArchitectureConfig::star(100);
        let report = comm_cost(&star, 1000, 1000, 100).unwrap();
        assert_eq!(report.total_bytes, 1_000_000);
        assert_eq!(report.peak_concurrent_links, 100);

        let ring = ArchitectureConfig::ring(100, 1);
        let report = comm_cost(&ring, 1000, 1000, 100).unwrap();
        assert_eq!(report.total_bytes, 10_000);
        assert_eq!(report.peak_concurrent_links, 1);
    }

    #[test]
    fn star_stars_with_matched_intervals_costs_like_star() {
        // tau_f = tau2 * tau_c exactly when tau = tau1
        let star = ArchitectureConfig::star(10);
        let hier = ArchitectureConfig::star_stars(5, GroupingScheme::Random, 10, 10);
        let a = comm_cost(&star, 64, 2000, 50).unwrap();
        let b = comm_cost(&hier, 64, 2000, 50).unwrap();
        assert_eq!(a.total_bytes, b.total_bytes);
    }

    #[test]
    fn schedule_bytes_equal_closed_forms() {
        let archs: Vec<ArchitectureConfig> = vec![
            ArchitectureConfig::star(5),
            ArchitectureConfig::ring(5, 2),
            ArchitectureConfig::star_stars(3, GroupingScheme::Random, 4, 3),
            ArchitectureConfig::star_rings(3, GroupingScheme::Random, 2, 4, 3),
            ArchitectureConfig::ring_stars(3, GroupingScheme::Random, 2, 4, 3),
            ArchitectureConfig::ring_rings(3, GroupingScheme::Random, 2, 4, 3),
            ArchitectureConfig::stars(3, GroupingScheme::Random, 5),
            ArchitectureConfig::rings(3, GroupingScheme::Random, 2, 5),
        ];
        for (i, cfg) in archs.iter().enumerate() {
            let n = 12;
            let steps = cfg.global_interval() * 5;
            let grouping = if cfg.group_level == GroupLevel::Flat {
                GroupAssignment::single_group(n)
            } else {
                random_balanced(n, cfg.num_groups, i as u64).unwrap()
            };
            let rings = build_rings(cfg, &grouping, i as u64).unwrap();
            let plans = schedule(cfg, &grouping, &rings, 97, steps).unwrap();
            let simulated: u64 = plans.iter().map(|p| p.bytes).sum();
            let closed = comm_cost_grouped(cfg, 97, steps, &grouping, &rings).unwrap();
            assert_eq!(simulated, closed.total_bytes, "arch {i}");
            let uniform = comm_cost(cfg, 97, steps, n).unwrap();
            assert_eq!(simulated, uniform.total_bytes, "arch {i} uniform");
        }
    }

    #[test]
    fn diurnal_property_holds_over_full_periods() {
        // every ring position is active equally often across one full period
        let cfg = ArchitectureConfig::ring(2, 2);
        let grouping = GroupAssignment::single_group(5);
        let rings = build_rings(&cfg, &grouping, 11).unwrap();
        let plans = schedule(&cfg, &grouping, &rings, 10, 2 * 5).unwrap();
        let mut active_counts = vec![0usize; 5];
        for plan in &plans {
            assert_eq!(plan.active.len(), 2);
            for &(_, node) in &plan.active {
                active_counts[node] += 1;
            }
        }
        assert!(active_counts.iter().all(|&c| c == 4), "{active_counts:?}");
    }

    #[test]
    fn star_stars_degenerates_to_star() {
        let star = ArchitectureConfig::star(7);
        let degenerate = ArchitectureConfig::star_stars(1, GroupingScheme::SingleGroup, 7, 1);
        let grouping = GroupAssignment::single_group(6);
        let a = plans_for(&star, &grouping, 21);
        let b = plans_for(&degenerate, &grouping, 21);
        assert_eq!(a, b);
    }

    #[test]
    fn schedule_dump_is_json_lines() {
        let cfg = ArchitectureConfig::star(2);
        let grouping = GroupAssignment::single_group(2);
        let plans = plans_for(&cfg, &grouping, 2);
        let mut buf = Vec::new();
        dump_schedule(&plans, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        for line in text.lines() {
            serde_json::from_str::<StepPlan>(line).unwrap();
        }
    }
}
