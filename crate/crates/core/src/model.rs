//! Multinomial logistic regression: softmax cross-entropy loss, analytic
//! gradients, gradient-descent steps, and weighted model averaging.
//!
//! This single learner is plugged into every architecture. All operations
//! are pure; parameters are immutable values. Gradient accumulation and
//! averaging always run in ascending index order so results are bit-stable.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};

/// Flat classifier parameters: a `K x d_in` weight matrix stored row-major,
/// followed by a length-`K` bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    num_classes: usize,
    feature_dim: usize,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        ModelParams {
            num_classes,
            feature_dim,
            data: vec![0.0; num_classes * feature_dim + num_classes],
        }
    }

    /// Gaussian init at the given scale.
    pub fn random_init(
        num_classes: usize,
        feature_dim: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let len = num_classes * feature_dim + num_classes;
        let data = (0..len)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ModelParams {
            num_classes,
            feature_dim,
            data,
        }
    }

    pub fn from_vec(num_classes: usize, feature_dim: usize, data: Vec<f64>) -> Result<Self> {
        let expect = num_classes * feature_dim + num_classes;
        if data.len() != expect {
            return Err(Error::invalid(format!(
                "parameter vector of length {} does not match K*d_in+K = {expect}",
                data.len()
            )));
        }
        Ok(ModelParams {
            num_classes,
            feature_dim,
            data,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Flat parameter count `K * d_in + K`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn weights_row(&self, class: usize) -> &[f64] {
        let start = class * self.feature_dim;
        &self.data[start..start + self.feature_dim]
    }

    fn bias(&self, class: usize) -> f64 {
        self.data[self.num_classes * self.feature_dim + class]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        self.logits_into(features, &mut out);
        out
    }

    fn logits_into(&self, features: &[f64], out: &mut [f64]) {
        for c in 0..self.num_classes {
            let row = self.weights_row(c);
            let mut z = self.bias(c);
            for (w, x) in row.iter().zip(features) {
                z += w * x;
            }
            out[c] = z;
        }
    }

    /// Predicted class: argmax logit, ties broken by lowest class index.
    pub fn predict(&self, features: &[f64]) -> usize {
        let logits = self.logits(features);
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = c;
            }
        }
        best
    }

    /// Serialized size in bytes: `8 * (K * d_in + K)`.
    pub fn byte_size(num_classes: usize, feature_dim: usize) -> u64 {
        8 * (num_classes * feature_dim + num_classes) as u64
    }

    /// Flat little-endian f64 serialization, weights row-major then bias.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(num_classes: usize, feature_dim: usize, bytes: &[u8]) -> Result<Self> {
        let expect = (num_classes * feature_dim + num_classes) * 8;
        if bytes.len() != expect {
            return Err(Error::Parse(format!(
                "model payload of {} bytes, expected {expect}",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ModelParams::from_vec(num_classes, feature_dim, data)
    }
}

/// Per-step batch policy; full-batch is the default everywhere so measured
/// variance comes from the topology, not minibatch sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchPolicy {
    Full,
    Mini(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub eta: f64,
    pub batch: BatchPolicy,
    pub steps: usize,
    pub eval_every: usize,
}

impl Hyperparams {
    pub fn new(eta: f64, steps: usize) -> Self {
        Hyperparams {
            eta,
            batch: BatchPolicy::Full,
            steps,
            eval_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta {} must be positive", self.eta)));
        }
        if self.steps < 1 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.eval_every < 1 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        if let BatchPolicy::Mini(0) = self.batch {
            return Err(Error::invalid("minibatch size must be positive"));
        }
        Ok(())
    }
}

fn check_data(params: &ModelParams, data: &[LabeledExample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("empty example list"));
    }
    for ex in data {
        if ex.features.len() != params.feature_dim {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match model dimension {}",
                ex.features.len(),
                params.feature_dim
            )));
        }
        if ex.label >= params.num_classes {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                ex.label, params.num_classes
            )));
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy over the example list, log-sum-exp stabilized.
pub fn loss(params: &ModelParams, data: &[LabeledExample]) -> Result<f64> {
    check_data(params, data)?;
    let mut logits = vec![0.0; params.num_classes];
    let mut total = 0.0;
    for ex in data {
        params.logits_into(&ex.features, &mut logits);
        total += log_sum_exp(&logits) - logits[ex.label];
    }
    Ok(total / data.len() as f64)
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
    m + s.ln()
}

/// Analytic gradient of [`loss`], flattened like the parameter vector.
pub fn gradient(params: &ModelParams, data: &[LabeledExample]) -> Result<Vec<f64>> {
    check_data(params, data)?;
    let k = params.num_classes;
    let d = params.feature_dim;
    let mut grad = vec![0.0; params.len()];
    let mut logits = vec![0.0; k];
    for ex in data {
        params.logits_into(&ex.features, &mut logits);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for z in &logits {
            denom += (z - m).exp();
        }
        for c in 0..k {
            let p = (logits[c] - m).exp() / denom;
            let err = p - if c == ex.label { 1.0 } else { 0.0 };
            let row = &mut grad[c * d..(c + 1) * d];
            for (g, x) in row.iter_mut().zip(&ex.features) {
                *g += err * x;
            }
            grad[k * d + c] += err;
        }
    }
    let inv = 1.0 / data.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok(grad)
}

/// One gradient-descent step over the given batch; the input is unmodified.
pub fn sgd_step(params: &ModelParams, data: &[LabeledExample], eta: f64) -> Result<ModelParams> {
    let grad = gradient(params, data)?;
    let data_vec = params
        .data
        .iter()
        .zip(&grad)
        .map(|(p, g)| p - eta * g)
        .collect();
    ModelParams::from_vec(params.num_classes, params.feature_dim, data_vec)
}

/// Coordinate-wise convex combination of models, summed in ascending index
/// order. Weights must be non-negative and sum to one within 1e-9.
pub fn weighted_average(models: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    weighted_average_of(models.iter(), weights)
}

/// Like [`weighted_average`] but over borrowed models, so callers can
/// average a subset without cloning.
pub fn weighted_average_of<'a, I>(models: I, weights: &[f64]) -> Result<ModelParams>
where
    I: IntoIterator<Item = &'a ModelParams>,
{
    let models: Vec<&ModelParams> = models.into_iter().collect();
    if models.is_empty() {
        return Err(Error::invalid("weighted_average of no models"));
    }
    if models.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be non-negative and finite"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("weights sum to {sum}, expected 1")));
    }
    let first = models[0];
    let mut out = vec![0.0; first.len()];
    for (m, &w) in models.iter().zip(weights) {
        if m.num_classes != first.num_classes || m.feature_dim != first.feature_dim {
            return Err(Error::invalid("model dimension mismatch in weighted_average"));
        }
        for (o, &v) in out.iter_mut().zip(m.as_slice()) {
            *o += w * v;
        }
    }
    ModelParams::from_vec(first.num_classes, first.feature_dim, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_data(
        n: usize,
        k: usize,
        d: usize,
        rng: &mut impl Rng,
    ) -> Vec<LabeledExample> {
        (0..n)
            .map(|_| LabeledExample {
                features: (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                label: rng.gen_range(0..k),
            })
            .collect()
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let mut r = rng::stream(0, "t");
        let data = random_data(40, 2, 5, &mut r);
        let l = loss(&ModelParams::zeros(2, 5), &data).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);

        let data = random_data(40, 10, 5, &mut r);
        let l = loss(&ModelParams::zeros(10, 5), &data).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn aligned_params_drive_loss_below_threshold() {
        // features exactly on orthogonal class means; scaling the class-mean
        // classifier separates them arbitrarily well
        let k = 3;
        let d = 4;
        let mut data = Vec::new();
        for c in 0..k {
            for _ in 0..10 {
                let mut features = vec![0.0; d];
                features[c] = 1.0;
                data.push(LabeledExample { features, label: c });
            }
        }
        let mut raw = vec![0.0; k * d + k];
        for c in 0..k {
            raw[c * d + c] = 25.0;
        }
        let params = ModelParams::from_vec(k, d, raw).unwrap();
        let l = loss(&params, &data).unwrap();
        assert!(l < 0.01, "loss {l}");
    }

    fn finite_difference(params: &ModelParams, data: &[LabeledExample], h: f64) -> Vec<f64> {
        let mut fd = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut plus = params.as_slice().to_vec();
            plus[i] += h;
            let mut minus = params.as_slice().to_vec();
            minus[i] -= h;
            let lp = loss(
                &ModelParams::from_vec(params.num_classes(), params.feature_dim(), plus).unwrap(),
                data,
            )
            .unwrap();
            let lm = loss(
                &ModelParams::from_vec(params.num_classes(), params.feature_dim(), minus).unwrap(),
                data,
            )
            .unwrap();
            fd[i] = (lp - lm) / (2.0 * h);
        }
        fd
    }

    pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng::stream(42, "gradcheck");
        for _ in 0..10 {
            let k = r.gen_range(2..5);
            let d = r.gen_range(2..7);
            let data = random_data(15, k, d, &mut r);
            let params = ModelParams::random_init(k, d, 0.5, &mut r);
            let g = gradient(&params, &data).unwrap();
            let fd = finite_difference(&params, &data, 1e-5);
            let err = max_relative_error(&g, &fd);
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn gradient_vanishes_at_optimum_of_non_separable_toy() {
        // overlapping labels at +-10 give a finite optimum; descent reaches
        // a near-stationary point
        let mut data = Vec::new();
        for _ in 0..6 {
            data.push(LabeledExample { features: vec![10.0], label: 0 });
            data.push(LabeledExample { features: vec![-10.0], label: 1 });
        }
        for _ in 0..4 {
            data.push(LabeledExample { features: vec![10.0], label: 1 });
            data.push(LabeledExample { features: vec![-10.0], label: 0 });
        }
        let mut params = ModelParams::zeros(2, 1);
        for _ in 0..5000 {
            params = sgd_step(&params, &data, 0.02).unwrap();
        }
        let g = gradient(&params, &data).unwrap();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn gradient_is_mean_scale_free() {
        let mut r = rng::stream(7, "dup");
        let data = random_data(12, 3, 4, &mut r);
        let mut doubled = data.clone();
        doubled.extend(data.iter().cloned());
        let params = ModelParams::random_init(3, 4, 0.3, &mut r);
        let g1 = gradient(&params, &data).unwrap();
        let g2 = gradient(&params, &doubled).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_step_zero_eta_is_identity() {
        let mut r = rng::stream(1, "sgd");
        let data = random_data(10, 2, 3, &mut r);
        let params = ModelParams::random_init(2, 3, 0.2, &mut r);
        let out = sgd_step(&params, &data, 0.0).unwrap();
        assert_eq!(params, out);
    }

    #[test]
    fn sgd_step_decreases_loss_on_convex_data() {
        let mut r = rng::stream(2, "sgd2");
        let data = random_data(50, 4, 6, &mut r);
        let params = ModelParams::random_init(4, 6, 0.3, &mut r);
        let before = loss(&params, &data).unwrap();
        let after = loss(&sgd_step(&params, &data, 0.03).unwrap(), &data).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn sgd_steps_compose_sequentially() {
        let mut r = rng::stream(3, "sgd3");
        let data = random_data(20, 3, 3, &mut r);
        let p0 = ModelParams::random_init(3, 3, 0.2, &mut r);
        let p1 = sgd_step(&p0, &data, 0.05).unwrap();
        let p2 = sgd_step(&p1, &data, 0.05).unwrap();
        let q1 = sgd_step(&p0, &data, 0.05).unwrap();
        let q2 = sgd_step(&q1, &data, 0.05).unwrap();
        assert_eq!(p2, q2);
        assert_ne!(p1, p2);
    }

    #[test]
    fn weighted_average_identity_and_degenerate_weights() {
        let mut r = rng::stream(4, "avg");
        let m = ModelParams::random_init(2, 3, 1.0, &mut r);
        let n = ModelParams::random_init(2, 3, 1.0, &mut r);

        let same = weighted_average(&[m.clone(), m.clone(), m.clone()], &[0.2, 0.3, 0.5]).unwrap();
        for (a, b) in same.as_slice().iter().zip(m.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }

        let first = weighted_average(&[m.clone(), n], &[1.0, 0.0]).unwrap();
        assert_eq!(first, m);
    }

    #[test]
    fn weighted_average_hand_computed() {
        let a = ModelParams::from_vec(1, 1, vec![1.0, 10.0]).unwrap();
        let b = ModelParams::from_vec(1, 1, vec![2.0, 20.0]).unwrap();
        let c = ModelParams::from_vec(1, 1, vec![4.0, 40.0]).unwrap();
        let avg = weighted_average(&[a, b, c], &[0.2, 0.3, 0.5]).unwrap();
        assert!((avg.as_slice()[0] - 2.8).abs() < 1e-12);
        assert!((avg.as_slice()[1] - 28.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_average_rejects_bad_weights() {
        let m = ModelParams::zeros(2, 2);
        assert!(weighted_average(&[m.clone(), m.clone()], &[0.7, 0.7]).is_err());
        assert!(weighted_average(&[m.clone(), m.clone()], &[1.5, -0.5]).is_err());
        let other = ModelParams::zeros(2, 3);
        assert!(weighted_average(&[m, other], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn loss_is_convex_along_segments() {
        let mut r = rng::stream(5, "convex");
        for _ in 0..20 {
            let data = random_data(25, 3, 4, &mut r);
            let p = ModelParams::random_init(3, 4, 0.8, &mut r);
            let q = ModelParams::random_init(3, 4, 0.8, &mut r);
            let lambda: f64 = r.gen_range(0.01..0.99);
            let mix: Vec<f64> = p
                .as_slice()
                .iter()
                .zip(q.as_slice())
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let mid = loss(&ModelParams::from_vec(3, 4, mix).unwrap(), &data).unwrap();
            let bound = lambda * loss(&p, &data).unwrap() + (1.0 - lambda) * loss(&q, &data).unwrap();
            assert!(mid <= bound + 1e-9, "{mid} > {bound}");
        }
    }

    #[test]
    fn gradient_is_linear_over_data_shards() {
        let mut r = rng::stream(6, "linear");
        let shard_a = random_data(30, 3, 5, &mut r);
        let shard_b = random_data(10, 3, 5, &mut r);
        let params = ModelParams::random_init(3, 5, 0.4, &mut r);
        let ga = gradient(&params, &shard_a).unwrap();
        let gb = gradient(&params, &shard_b).unwrap();
        let mut pooled = shard_a.clone();
        pooled.extend(shard_b.iter().cloned());
        let gp = gradient(&params, &pooled).unwrap();
        let wa = 30.0 / 40.0;
        let wb = 10.0 / 40.0;
        for i in 0..gp.len() {
            let mixed = wa * ga[i] + wb * gb[i];
            assert!((mixed - gp[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn serialization_round_trips_and_sizes_match() {
        let mut r = rng::stream(8, "ser");
        let m = ModelParams::random_init(3, 4, 0.5, &mut r);
        let bytes = m.to_le_bytes();
        assert_eq!(bytes.len() as u64, ModelParams::byte_size(3, 4));
        let back = ModelParams::from_le_bytes(3, 4, &bytes).unwrap();
        assert_eq!(m, back);
    }
}
