//! Desk-scale differentiable models over flattened parameter vectors.
//!
//! Two models: multinomial logistic regression and a one-hidden-layer tanh
//! MLP, both trained with mean softmax cross-entropy. Backprop is written by
//! hand against a documented flattening order so parameter vectors can cross
//! the wire bit-exactly:
//!
//! - logreg: `[W (C x F, row-major) | b (C)]`
//! - mlp1:   `[W1 (H x F) | b1 (H) | W2 (C x H) | b2 (C)]`

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::vector::DenseVector;

/// Model architecture and shape. The flattened parameter dimension is a
/// deterministic function of this value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    LogReg {
        n_features: usize,
        n_classes: usize,
    },
    Mlp1 {
        n_features: usize,
        n_classes: usize,
        hidden_units: usize,
    },
}

impl ModelSpec {
    pub fn logreg(n_features: usize, n_classes: usize) -> Result<Self> {
        let spec = ModelSpec::LogReg {
            n_features,
            n_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mlp1(n_features: usize, n_classes: usize, hidden_units: usize) -> Result<Self> {
        let spec = ModelSpec::Mlp1 {
            n_features,
            n_classes,
            hidden_units,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features() == 0 {
            return Err(Error::InvalidArgument("model needs features".into()));
        }
        if self.n_classes() < 2 {
            return Err(Error::InvalidArgument(
                "model needs at least two classes".into(),
            ));
        }
        if let ModelSpec::Mlp1 { hidden_units, .. } = self {
            if *hidden_units == 0 {
                return Err(Error::InvalidArgument(
                    "mlp1 needs at least one hidden unit".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        match *self {
            ModelSpec::LogReg { n_features, .. } | ModelSpec::Mlp1 { n_features, .. } => n_features,
        }
    }

    pub fn n_classes(&self) -> usize {
        match *self {
            ModelSpec::LogReg { n_classes, .. } | ModelSpec::Mlp1 { n_classes, .. } => n_classes,
        }
    }

    /// Length of the flattened parameter vector.
    pub fn param_dim(&self) -> usize {
        match *self {
            ModelSpec::LogReg {
                n_features,
                n_classes,
            } => n_classes * n_features + n_classes,
            ModelSpec::Mlp1 {
                n_features,
                n_classes,
                hidden_units,
            } => hidden_units * n_features + hidden_units + n_classes * hidden_units + n_classes,
        }
    }
}

/// Glorot-uniform weights, zero biases, drawn in flattening order.
/// Identical seeds give identical vectors.
pub fn init_params(spec: &ModelSpec, seed: u64) -> DenseVector {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(spec.param_dim());
    let mut layer = |fan_in: usize, fan_out: usize, params: &mut Vec<f64>| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            params.push((rng.gen::<f64>() * 2.0 - 1.0) * limit);
        }
        params.extend(std::iter::repeat(0.0).take(fan_out));
    };
    match *spec {
        ModelSpec::LogReg {
            n_features,
            n_classes,
        } => layer(n_features, n_classes, &mut params),
        ModelSpec::Mlp1 {
            n_features,
            n_classes,
            hidden_units,
        } => {
            layer(n_features, hidden_units, &mut params);
            layer(hidden_units, n_classes, &mut params);
        }
    }
    DenseVector::from_vec(params).expect("glorot init is finite")
}

/// A minibatch gathered out of a dataset.
#[derive(Clone, Debug)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<u32>,
    n_features: usize,
}

impl Batch {
    pub fn gather(ds: &Dataset, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("batch must be nonempty".into()));
        }
        let mut features = Vec::with_capacity(indices.len() * ds.n_features());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= ds.n_samples() {
                return Err(Error::InvalidArgument(format!(
                    "sample index {i} out of range"
                )));
            }
            features.extend_from_slice(ds.row(i));
            labels.push(ds.labels()[i]);
        }
        Ok(Batch {
            features,
            labels,
            n_features: ds.n_features(),
        })
    }

    /// The whole dataset as one batch.
    pub fn from_dataset(ds: &Dataset) -> Batch {
        Batch::gather(ds, &(0..ds.n_samples()).collect::<Vec<_>>())
            .expect("dataset is nonempty by construction")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// Without-replacement minibatch cursor over one client's shard: a seeded
/// shuffle per epoch, consecutive chunks (the final chunk of an epoch may be
/// short), then a fresh shuffle.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    indices: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha20Rng,
}

impl BatchSampler {
    pub fn new(indices: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument(
                "sampler needs at least one sample".into(),
            ));
        }
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut sampler = BatchSampler {
            indices,
            cursor: 0,
            batch_size,
            rng: ChaCha20Rng::seed_from_u64(seed),
        };
        sampler.indices.shuffle(&mut sampler.rng);
        Ok(sampler)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.indices.len() {
            self.indices.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let take = self.batch_size.min(self.indices.len() - self.cursor);
        let batch = self.indices[self.cursor..self.cursor + take].to_vec();
        self.cursor += take;
        batch
    }
}

/// Mean softmax cross-entropy over the batch and its exact gradient.
/// Softmax is guarded by max-subtraction; a non-finite loss is an error.
pub fn loss_and_grad(spec: &ModelSpec, w: &DenseVector, batch: &Batch) -> Result<(f64, DenseVector)> {
    check_shapes(spec, w, batch)?;
    let mut grad = vec![0.0f64; spec.param_dim()];
    let mut loss_sum = 0.0f64;
    let b = batch.len() as f64;

    match *spec {
        ModelSpec::LogReg {
            n_features,
            n_classes,
        } => {
            let (weights, biases) = w.values().split_at(n_classes * n_features);
            let (grad_w, grad_b) = grad.split_at_mut(n_classes * n_features);
            let mut logits = vec![0.0f64; n_classes];
            for s in 0..batch.len() {
                let x = batch.row(s);
                for c in 0..n_classes {
                    let row = &weights[c * n_features..(c + 1) * n_features];
                    logits[c] = biases[c] + dot(row, x);
                }
                let y = batch.labels()[s] as usize;
                loss_sum += softmax_cross_entropy(&mut logits, y);
                // logits now holds softmax probabilities; accumulate deltas
                for c in 0..n_classes {
                    let delta = logits[c] - f64::from(c == y);
                    let g_row = &mut grad_w[c * n_features..(c + 1) * n_features];
                    for (g, &xf) in g_row.iter_mut().zip(x) {
                        *g += delta * xf;
                    }
                    grad_b[c] += delta;
                }
            }
        }
        ModelSpec::Mlp1 {
            n_features,
            n_classes,
            hidden_units,
        } => {
            let w1_len = hidden_units * n_features;
            let w2_off = w1_len + hidden_units;
            let w2_len = n_classes * hidden_units;
            let values = w.values();
            let (w1, b1) = (&values[..w1_len], &values[w1_len..w2_off]);
            let (w2, b2) = (
                &values[w2_off..w2_off + w2_len],
                &values[w2_off + w2_len..],
            );
            let mut hidden = vec![0.0f64; hidden_units];
            let mut logits = vec![0.0f64; n_classes];
            let mut delta_hidden = vec![0.0f64; hidden_units];
            for s in 0..batch.len() {
                let x = batch.row(s);
                for h in 0..hidden_units {
                    let row = &w1[h * n_features..(h + 1) * n_features];
                    hidden[h] = (b1[h] + dot(row, x)).tanh();
                }
                for c in 0..n_classes {
                    let row = &w2[c * hidden_units..(c + 1) * hidden_units];
                    logits[c] = b2[c] + dot(row, &hidden);
                }
                let y = batch.labels()[s] as usize;
                loss_sum += softmax_cross_entropy(&mut logits, y);
                for dh in delta_hidden.iter_mut() {
                    *dh = 0.0;
                }
                for c in 0..n_classes {
                    let delta = logits[c] - f64::from(c == y);
                    let g_row =
                        &mut grad[w2_off + c * hidden_units..w2_off + (c + 1) * hidden_units];
                    for (g, &hv) in g_row.iter_mut().zip(&hidden) {
                        *g += delta * hv;
                    }
                    grad[w2_off + w2_len + c] += delta;
                    let w2_row = &w2[c * hidden_units..(c + 1) * hidden_units];
                    for (dh, &w2v) in delta_hidden.iter_mut().zip(w2_row) {
                        *dh += delta * w2v;
                    }
                }
                for h in 0..hidden_units {
                    let da = delta_hidden[h] * (1.0 - hidden[h] * hidden[h]);
                    let g_row = &mut grad[h * n_features..(h + 1) * n_features];
                    for (g, &xf) in g_row.iter_mut().zip(x) {
                        *g += da * xf;
                    }
                    grad[w1_len + h] += da;
                }
            }
        }
    }

    let loss = loss_sum / b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    for g in &mut grad {
        *g /= b;
    }
    Ok((loss, DenseVector::from_vec(grad)?))
}

/// Top-1 accuracy (argmax, ties to the lowest class index) and mean loss
/// over a full dataset.
pub fn evaluate(spec: &ModelSpec, w: &DenseVector, ds: &Dataset) -> Result<(f64, f64)> {
    let batch = Batch::from_dataset(ds);
    check_shapes(spec, w, &batch)?;
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let mut logits = vec![0.0f64; spec.n_classes()];
    let mut hidden: Vec<f64> = Vec::new();
    for s in 0..batch.len() {
        forward(spec, w.values(), batch.row(s), &mut hidden, &mut logits);
        let predicted = argmax_lowest(&logits);
        let y = batch.labels()[s] as usize;
        if predicted == y {
            correct += 1;
        }
        loss_sum += softmax_cross_entropy(&mut logits, y);
    }
    let n = batch.len() as f64;
    let loss = loss_sum / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((correct as f64 / n, loss))
}

fn check_shapes(spec: &ModelSpec, w: &DenseVector, batch: &Batch) -> Result<()> {
    spec.validate()?;
    if w.dim() != spec.param_dim() {
        return Err(Error::DimMismatch {
            expected: spec.param_dim(),
            got: w.dim(),
        });
    }
    if batch.n_features() != spec.n_features() {
        return Err(Error::DimMismatch {
            expected: spec.n_features(),
            got: batch.n_features(),
        });
    }
    if let Some(&l) = batch.labels().iter().find(|&&l| l as usize >= spec.n_classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {l} out of range for {} classes",
            spec.n_classes()
        )));
    }
    Ok(())
}

fn forward(spec: &ModelSpec, values: &[f64], x: &[f64], hidden: &mut Vec<f64>, logits: &mut [f64]) {
    match *spec {
        ModelSpec::LogReg {
            n_features,
            n_classes,
        } => {
            let (weights, biases) = values.split_at(n_classes * n_features);
            for c in 0..n_classes {
                let row = &weights[c * n_features..(c + 1) * n_features];
                logits[c] = biases[c] + dot(row, x);
            }
        }
        ModelSpec::Mlp1 {
            n_features,
            n_classes,
            hidden_units,
        } => {
            hidden.resize(hidden_units, 0.0);
            let w1_len = hidden_units * n_features;
            let w2_off = w1_len + hidden_units;
            let w2_len = n_classes * hidden_units;
            for h in 0..hidden_units {
                let row = &values[h * n_features..(h + 1) * n_features];
                hidden[h] = (values[w1_len + h] + dot(row, x)).tanh();
            }
            for c in 0..n_classes {
                let row = &values[w2_off + c * hidden_units..w2_off + (c + 1) * hidden_units];
                logits[c] = values[w2_off + w2_len + c] + dot(row, hidden);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Replaces `logits` with softmax probabilities and returns the sample's
/// cross-entropy loss, using max-subtraction against overflow.
fn softmax_cross_entropy(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    // exp(z_y - max) is still sitting in logits[label]
    let loss = sum.ln() - logits[label].ln();
    for z in logits.iter_mut() {
        *z /= sum;
    }
    loss
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
