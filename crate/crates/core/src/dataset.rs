//! Labeled classification data: synthetic generation, pool partitioning,
//! IDX ingestion, and per-node class histograms.
//!
//! Every generator and partitioner is a pure function of its arguments and
//! seed, so datasets are reproducible byte for byte.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One feature vector with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// The examples held by a single node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDataset {
    pub node_id: usize,
    pub examples: Vec<LabeledExample>,
}

/// Per-node shards plus global class metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedDataset {
    pub nodes: Vec<NodeDataset>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl FederatedDataset {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_examples(&self) -> usize {
        self.nodes.iter().map(|n| n.examples.len()).sum()
    }

    pub fn node_sizes(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.examples.len()).collect()
    }

    /// All examples concatenated in ascending node order.
    pub fn pooled(&self) -> Vec<LabeledExample> {
        let mut out = Vec::with_capacity(self.total_examples());
        for node in &self.nodes {
            out.extend(node.examples.iter().cloned());
        }
        out
    }

    /// Checks node id density, non-emptiness, label range, and dimension
    /// consistency.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("dataset has no nodes"));
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.node_id != idx {
                return Err(Error::invalid(format!(
                    "node ids must be dense: found {} at position {idx}",
                    node.node_id
                )));
            }
            if node.examples.is_empty() {
                return Err(Error::invalid(format!("node {idx} has no examples")));
            }
            for ex in &node.examples {
                if ex.features.len() != self.feature_dim {
                    return Err(Error::invalid(format!(
                        "node {idx}: feature dimension {} != {}",
                        ex.features.len(),
                        self.feature_dim
                    )));
                }
                if ex.label >= self.num_classes {
                    return Err(Error::invalid(format!(
                        "node {idx}: label {} out of range for {} classes",
                        ex.label, self.num_classes
                    )));
                }
                if ex.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("node {idx}: non-finite feature")));
                }
            }
        }
        Ok(())
    }
}

/// Empirical per-class frequencies; entries are non-negative and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("cannot normalize an empty count vector"));
        }
        Ok(ClassDistribution {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Per-class empirical label frequencies of an example list.
pub fn class_distribution(
    examples: &[LabeledExample],
    num_classes: usize,
) -> Result<ClassDistribution> {
    if examples.is_empty() {
        return Err(Error::invalid("class_distribution of an empty example list"));
    }
    let counts = label_counts(examples, num_classes)?;
    ClassDistribution::from_counts(&counts)
}

/// Raw label counts, used where normalized histograms would lose exactness.
pub fn label_counts(examples: &[LabeledExample], num_classes: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; num_classes];
    for ex in examples {
        if ex.label >= num_classes {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                ex.label, num_classes
            )));
        }
        counts[ex.label] += 1;
    }
    Ok(counts)
}

/// Generate per-node shards with a controllable label skew.
///
/// Node `i` draws each label from the mixture
/// `skew * onehot(i mod K) + (1 - skew) * uniform(K)`, so `skew = 0` is fully
/// IID and `skew = 1` gives each node exactly one class, round-robin over
/// classes. Features are Gaussian around seed-determined class means spaced
/// on the unit sphere, unit covariance.
pub fn generate_synthetic(
    num_nodes: usize,
    num_classes: usize,
    feature_dim: usize,
    examples_per_node: usize,
    skew: f64,
    seed: u64,
) -> Result<FederatedDataset> {
    if num_nodes < 1 {
        return Err(Error::invalid("num_nodes must be at least 1"));
    }
    if num_classes < 2 {
        return Err(Error::invalid("num_classes must be at least 2"));
    }
    if feature_dim < 1 {
        return Err(Error::invalid("feature_dim must be at least 1"));
    }
    if examples_per_node == 0 {
        return Err(Error::invalid("examples_per_node must be positive"));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(Error::invalid(format!("skew {skew} outside [0, 1]")));
    }

    let mut rng = rng::stream(seed, "synthetic");
    let means = class_means(num_classes, feature_dim, &mut rng);

    let mut nodes = Vec::with_capacity(num_nodes);
    for node_id in 0..num_nodes {
        let own_class = node_id % num_classes;
        let mut examples = Vec::with_capacity(examples_per_node);
        for _ in 0..examples_per_node {
            let u: f64 = rng.gen();
            let label = if u < skew {
                own_class
            } else {
                rng.gen_range(0..num_classes)
            };
            let features = means[label]
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            examples.push(LabeledExample { features, label });
        }
        nodes.push(NodeDataset { node_id, examples });
    }

    let fed = FederatedDataset {
        nodes,
        num_classes,
        feature_dim,
    };
    fed.validate()?;
    Ok(fed)
}

fn class_means(num_classes: usize, feature_dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        loop {
            let v: Vec<f64> = (0..feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                means.push(v.into_iter().map(|x| x / norm).collect());
                break;
            }
        }
    }
    means
}

/// Label-sorted shard partitioning.
///
/// The pool is truncated to a whole number of shards, sorted by label
/// (original order breaking ties), split into `num_nodes * shards_per_node`
/// contiguous shards, and shards are dealt to nodes by a seeded permutation.
pub fn partition_by_shards(
    pool: &[LabeledExample],
    num_nodes: usize,
    shards_per_node: usize,
    seed: u64,
) -> Result<FederatedDataset> {
    if num_nodes < 1 || shards_per_node < 1 {
        return Err(Error::invalid("num_nodes and shards_per_node must be positive"));
    }
    let total_shards = num_nodes * shards_per_node;
    if pool.len() < total_shards {
        return Err(Error::invalid(format!(
            "pool of {} examples is smaller than {} shards",
            pool.len(),
            total_shards
        )));
    }
    let keep = (pool.len() / total_shards) * total_shards;
    let shard_size = keep / total_shards;

    let mut order: Vec<usize> = (0..keep).collect();
    order.sort_by_key(|&i| (pool[i].label, i));

    let mut shard_ids: Vec<usize> = (0..total_shards).collect();
    shard_ids.shuffle(&mut rng::stream(seed, "shards"));

    let mut nodes = Vec::with_capacity(num_nodes);
    for node_id in 0..num_nodes {
        let mut examples = Vec::with_capacity(shards_per_node * shard_size);
        for s in 0..shards_per_node {
            let shard = shard_ids[node_id * shards_per_node + s];
            for &i in &order[shard * shard_size..(shard + 1) * shard_size] {
                examples.push(pool[i].clone());
            }
        }
        nodes.push(NodeDataset { node_id, examples });
    }

    build_from_pool_nodes(nodes, &pool[..keep])
}

/// Seeded uniform partition of a pool into equal-size node shards; the
/// IID counterpart of [`partition_by_shards`].
pub fn partition_uniform(
    pool: &[LabeledExample],
    num_nodes: usize,
    seed: u64,
) -> Result<FederatedDataset> {
    if num_nodes < 1 {
        return Err(Error::invalid("num_nodes must be positive"));
    }
    if pool.len() < num_nodes {
        return Err(Error::invalid(format!(
            "pool of {} examples is smaller than {num_nodes} nodes",
            pool.len()
        )));
    }
    let per_node = pool.len() / num_nodes;
    let keep = per_node * num_nodes;
    let mut order: Vec<usize> = (0..keep).collect();
    order.shuffle(&mut rng::stream(seed, "uniform"));

    let mut nodes = Vec::with_capacity(num_nodes);
    for node_id in 0..num_nodes {
        let examples = order[node_id * per_node..(node_id + 1) * per_node]
            .iter()
            .map(|&i| pool[i].clone())
            .collect();
        nodes.push(NodeDataset { node_id, examples });
    }

    build_from_pool_nodes(nodes, &pool[..keep])
}

fn build_from_pool_nodes(
    nodes: Vec<NodeDataset>,
    kept_pool: &[LabeledExample],
) -> Result<FederatedDataset> {
    if kept_pool.is_empty() {
        return Err(Error::invalid("empty pool after truncation"));
    }
    let feature_dim = kept_pool[0].features.len();
    let num_classes = kept_pool.iter().map(|e| e.label).max().unwrap_or(0) + 1;
    let fed = FederatedDataset {
        nodes,
        num_classes: num_classes.max(2),
        feature_dim,
    };
    fed.validate()?;
    Ok(fed)
}

/// Split each node's examples into a leading train shard and a trailing test
/// shard, preserving node structure on both sides.
pub fn split_per_node(
    fed: &FederatedDataset,
    train_per_node: usize,
) -> Result<(FederatedDataset, FederatedDataset)> {
    if train_per_node == 0 {
        return Err(Error::invalid("train_per_node must be positive"));
    }
    let mut train_nodes = Vec::with_capacity(fed.nodes.len());
    let mut test_nodes = Vec::with_capacity(fed.nodes.len());
    for node in &fed.nodes {
        if node.examples.len() <= train_per_node {
            return Err(Error::invalid(format!(
                "node {} has {} examples, need more than {train_per_node} to split",
                node.node_id,
                node.examples.len()
            )));
        }
        train_nodes.push(NodeDataset {
            node_id: node.node_id,
            examples: node.examples[..train_per_node].to_vec(),
        });
        test_nodes.push(NodeDataset {
            node_id: node.node_id,
            examples: node.examples[train_per_node..].to_vec(),
        });
    }
    let train = FederatedDataset {
        nodes: train_nodes,
        num_classes: fed.num_classes,
        feature_dim: fed.feature_dim,
    };
    let test = FederatedDataset {
        nodes: test_nodes,
        num_classes: fed.num_classes,
        feature_dim: fed.feature_dim,
    };
    Ok((train, test))
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image/label file pair; pixels are scaled to `[0, 1]` by
/// dividing by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledExample>> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Vec<LabeledExample>> {
    let image_magic = read_be_u32(images, 0, "image magic")?;
    if image_magic != IDX_IMAGE_MAGIC {
        return Err(Error::Parse(format!("bad image magic 0x{image_magic:08x}")));
    }
    let label_magic = read_be_u32(labels, 0, "label magic")?;
    if label_magic != IDX_LABEL_MAGIC {
        return Err(Error::Parse(format!("bad label magic 0x{label_magic:08x}")));
    }
    let image_count = read_be_u32(images, 4, "image count")? as usize;
    let rows = read_be_u32(images, 8, "image rows")? as usize;
    let cols = read_be_u32(images, 12, "image cols")? as usize;
    let label_count = read_be_u32(labels, 4, "label count")? as usize;
    if image_count != label_count {
        return Err(Error::Parse(format!(
            "image/label count mismatch: {image_count} images vs {label_count} labels"
        )));
    }
    let pixels = rows * cols;
    if images.len() != 16 + image_count * pixels {
        return Err(Error::Parse("truncated image data".to_string()));
    }
    if labels.len() != 8 + label_count {
        return Err(Error::Parse("truncated label data".to_string()));
    }

    let mut out = Vec::with_capacity(image_count);
    for i in 0..image_count {
        let start = 16 + i * pixels;
        let features = images[start..start + pixels]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        out.push(LabeledExample {
            features,
            label: labels[8 + i] as usize,
        });
    }
    Ok(out)
}

fn read_be_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::Parse(format!("truncated {field}")))?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}
