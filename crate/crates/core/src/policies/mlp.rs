//! Dense feed-forward network with exact backpropagation for the MSE and BCE heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value.
    #[inline]
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    #[default]
    Linear,
    Sigmoid,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Weights are row-major: layer `i` has `layer_sizes[i + 1]` rows and `layer_sizes[i]` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct MlpPolicy {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output: OutputHead,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// On-disk checkpoint layout with nested row-major weight arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    layer_sizes: Vec<usize>,
    activation: Activation,
    #[serde(default)]
    output: OutputHead,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl From<MlpPolicy> for Checkpoint {
    fn from(p: MlpPolicy) -> Self {
        let weights = p
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w.chunks(p.layer_sizes[i]).map(<[f64]>::to_vec).collect())
            .collect();
        Checkpoint {
            layer_sizes: p.layer_sizes,
            activation: p.activation,
            output: p.output,
            weights,
            biases: p.biases,
        }
    }
}

impl TryFrom<Checkpoint> for MlpPolicy {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.weights.len() + 1 != c.layer_sizes.len() {
            return Err(Error::Validation(format!(
                "{} weight matrices for {} layer sizes",
                c.weights.len(),
                c.layer_sizes.len()
            )));
        }
        let mut flat = Vec::with_capacity(c.weights.len());
        for (i, rows) in c.weights.into_iter().enumerate() {
            if rows.len() != c.layer_sizes[i + 1] {
                return Err(Error::Validation(format!(
                    "layer {i}: {} rows, expected {}",
                    rows.len(),
                    c.layer_sizes[i + 1]
                )));
            }
            if let Some(bad) = rows.iter().find(|r| r.len() != c.layer_sizes[i]) {
                return Err(Error::Validation(format!(
                    "layer {i}: row of width {}, expected {}",
                    bad.len(),
                    c.layer_sizes[i]
                )));
            }
            flat.push(rows.concat());
        }
        MlpPolicy::from_parts(c.layer_sizes, c.activation, c.output, flat, c.biases)
    }
}

/// Gradients with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(policy: &MlpPolicy) -> Self {
        MlpGrads {
            weights: policy.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: policy.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = value);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|v| v.iter().copied())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|g| g == 0.0)
    }
}

/// Per-sample activations, reused across a batch.
#[derive(Debug, Clone)]
pub(crate) struct Cache {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl MlpPolicy {
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        activation: Activation,
        output: OutputHead,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Validation(
                "need at least two positive layer sizes".into(),
            ));
        }
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Validation(format!(
                "expected {layers} layers of parameters"
            )));
        }
        for i in 0..layers {
            if weights[i].len() != layer_sizes[i] * layer_sizes[i + 1] {
                return Err(Error::shape(
                    layer_sizes[i] * layer_sizes[i + 1],
                    weights[i].len(),
                ));
            }
            if biases[i].len() != layer_sizes[i + 1] {
                return Err(Error::shape(layer_sizes[i + 1], biases[i].len()));
            }
        }
        if weights
            .iter()
            .chain(biases.iter())
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation("non-finite parameter".into()));
        }
        Ok(MlpPolicy {
            layer_sizes,
            activation,
            output,
            weights,
            biases,
        })
    }

    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn random<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        output: OutputHead,
        rng: &mut R,
    ) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let bound = 1.0 / (pair[0] as f64).sqrt();
            weights.push(
                (0..pair[0] * pair[1])
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect(),
            );
            biases.push((0..pair[1]).map(|_| rng.random_range(-bound..=bound)).collect());
        }
        Self::from_parts(layer_sizes.to_vec(), activation, output, weights, biases)
    }

    pub fn zeros(layer_sizes: &[usize], activation: Activation, output: OutputHead) -> Result<Self> {
        let weights = layer_sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect();
        let biases = layer_sizes.windows(2).map(|p| vec![0.0; p[1]]).collect();
        Self::from_parts(layer_sizes.to_vec(), activation, output, weights, biases)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_head(&self) -> OutputHead {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Mutable view over every parameter, weights first then biases, layer order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
    }

    pub(crate) fn cache(&self) -> Cache {
        let widest = *self.layer_sizes.iter().max().unwrap();
        Cache {
            acts: self.layer_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }

    /// Forward pass leaving the pre-head output (logits for the sigmoid head) in the cache.
    fn forward_cached(&self, input: &[f64], cache: &mut Cache) {
        cache.acts[0].copy_from_slice(input);
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let x = &before[l];
            let out = &mut after[0];
            let cols = self.layer_sizes[l];
            let w = &self.weights[l];
            for (r, o) in out.iter_mut().enumerate() {
                let row = &w[r * cols..(r + 1) * cols];
                let z = self.biases[l][r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                *o = if l == last { z } else { self.activation.apply(z) };
            }
        }
    }

    /// Backpropagates `cache.delta` (gradient w.r.t. the pre-head output) into `grads`.
    fn backward_cached(&self, cache: &mut Cache, grads: &mut MlpGrads) {
        for l in (0..self.weights.len()).rev() {
            let cols = self.layer_sizes[l];
            let x = &cache.acts[l];
            let gw = &mut grads.weights[l];
            for (r, &d) in cache.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.biases[l][r] += d;
                for (g, &xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            cache.delta_prev.clear();
            cache.delta_prev.resize(cols, 0.0);
            let w = &self.weights[l];
            for (r, &d) in cache.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (acc, &wi) in cache.delta_prev.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                    *acc += d * wi;
                }
            }
            for (acc, &a) in cache.delta_prev.iter_mut().zip(x) {
                *acc *= self.activation.slope(a);
            }
            std::mem::swap(&mut cache.delta, &mut cache.delta_prev);
        }
    }

    fn head(&self, z: f64) -> f64 {
        match self.output {
            OutputHead::Linear => z,
            OutputHead::Sigmoid => sigmoid(z),
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), input.len()));
        }
        let mut cache = self.cache();
        self.forward_cached(input, &mut cache);
        Ok(cache.acts.last().unwrap().iter().map(|&z| self.head(z)).collect())
    }

    fn check_batch(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>], width: usize) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if inputs.len() != targets.len() {
            return Err(Error::shape(inputs.len(), targets.len()));
        }
        if let Some(bad) = inputs.iter().find(|s| s.len() != self.input_dim()) {
            return Err(Error::shape(self.input_dim(), bad.len()));
        }
        if let Some(bad) = targets.iter().find(|t| t.len() != width) {
            return Err(Error::shape(width, bad.len()));
        }
        Ok(())
    }

    /// Mean squared error over the rows in `rows`; gradients are overwritten.
    pub(crate) fn mse_into(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        rows: &[usize],
        cache: &mut Cache,
        grads: &mut MlpGrads,
    ) -> f64 {
        grads.fill(0.0);
        let m = self.output_dim();
        let scale = 1.0 / (rows.len() * m) as f64;
        let mut loss = 0.0;
        for &i in rows {
            self.forward_cached(&inputs[i], cache);
            cache.delta.clear();
            for (j, &z) in cache.acts.last().unwrap().iter().enumerate() {
                let y = self.head(z);
                let err = y - targets[i][j];
                loss += err * err;
                let dz = match self.output {
                    OutputHead::Linear => 1.0,
                    OutputHead::Sigmoid => y * (1.0 - y),
                };
                cache.delta.push(2.0 * err * scale * dz);
            }
            self.backward_cached(cache, grads);
        }
        loss * scale
    }

    /// Mean binary cross-entropy of a single sigmoid output; gradients are overwritten.
    pub(crate) fn bce_into(
        &self,
        inputs: &[Vec<f64>],
        labels: &[Vec<f64>],
        rows: &[usize],
        cache: &mut Cache,
        grads: &mut MlpGrads,
    ) -> f64 {
        grads.fill(0.0);
        let scale = 1.0 / rows.len() as f64;
        let mut loss = 0.0;
        for &i in rows {
            self.forward_cached(&inputs[i], cache);
            let z = cache.acts.last().unwrap()[0];
            let y = labels[i][0];
            // -[y ln s(z) + (1-y) ln(1-s(z))] = softplus(z) - y z
            loss += softplus(z) - y * z;
            cache.delta.clear();
            cache.delta.push((sigmoid(z) - y) * scale);
            self.backward_cached(cache, grads);
        }
        loss * scale
    }

    pub(crate) fn check_mse_batch(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
        self.check_batch(inputs, targets, self.output_dim())
    }

    pub(crate) fn check_bce_batch(&self, inputs: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<()> {
        if self.output != OutputHead::Sigmoid || self.output_dim() != 1 {
            return Err(Error::Config(
                "binary cross-entropy needs a single sigmoid output".into(),
            ));
        }
        self.check_batch(inputs, labels, 1)?;
        if labels.iter().any(|l| l[0] != 0.0 && l[0] != 1.0) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::from_json(e, text))
    }
}

impl Policy for MlpPolicy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.forward(state)
    }
}

/// Loss and exact gradients of the mean squared error between network outputs and targets.
pub fn mse_loss_and_grads(
    policy: &MlpPolicy,
    states: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<(f64, MlpGrads)> {
    policy.check_mse_batch(states, targets)?;
    let rows: Vec<usize> = (0..states.len()).collect();
    let mut grads = MlpGrads::zeros_like(policy);
    let mut cache = policy.cache();
    let loss = policy.mse_into(states, targets, &rows, &mut cache, &mut grads);
    Ok((loss, grads))
}

/// Loss and exact gradients of the mean binary cross-entropy for a doubt classifier.
pub fn bce_loss_and_grads(
    doubt: &MlpPolicy,
    states: &[Vec<f64>],
    labels: &[f64],
) -> Result<(f64, MlpGrads)> {
    let labels: Vec<Vec<f64>> = labels.iter().map(|&l| vec![l]).collect();
    doubt.check_bce_batch(states, &labels)?;
    let rows: Vec<usize> = (0..states.len()).collect();
    let mut grads = MlpGrads::zeros_like(doubt);
    let mut cache = doubt.cache();
    let loss = doubt.bce_into(states, &labels, &rows, &mut cache, &mut grads);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpPolicy::zeros(&[3, 8, 2], Activation::Tanh, OutputHead::Linear).unwrap();
        assert_eq!(p.forward(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_state_through() {
        let p = MlpPolicy::from_parts(
            vec![2, 2],
            Activation::Tanh,
            OutputHead::Linear,
            vec![vec![1.0, 0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(p.forward(&[0.7, -3.0]).unwrap(), vec![0.7, -3.0]);
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let p = MlpPolicy::zeros(&[3, 2], Activation::Relu, OutputHead::Linear).unwrap();
        assert!(matches!(p.forward(&[1.0]), Err(Error::Shape { expected: 3, got: 1 })));
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_grads() {
        let mut rng = SeedTree::new(1).stream("init");
        let p = MlpPolicy::random(&[2, 5, 1], Activation::Tanh, OutputHead::Linear, &mut rng).unwrap();
        let xs = vec![vec![0.1, 0.2], vec![-0.5, 0.3]];
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| p.forward(x).unwrap()).collect();
        let (loss, grads) = mse_loss_and_grads(&p, &xs, &ys).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.is_zero());
    }

    #[test]
    fn empty_batch_is_rejected() {
        let p = MlpPolicy::zeros(&[2, 1], Activation::Tanh, OutputHead::Sigmoid).unwrap();
        assert!(matches!(mse_loss_and_grads(&p, &[], &[]), Err(Error::EmptyBatch)));
        assert!(matches!(bce_loss_and_grads(&p, &[], &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn half_probability_gives_ln2() {
        let p = MlpPolicy::zeros(&[2, 4, 1], Activation::Tanh, OutputHead::Sigmoid).unwrap();
        let xs = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 0.0]];
        let (loss, _) = bce_loss_and_grads(&p, &xs, &[1.0, 0.0, 1.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_rejects_ragged_rows() {
        let text = r#"{"layer_sizes":[2,1],"activation":"tanh","weights":[[[1.0]]],"biases":[[0.0]]}"#;
        assert!(MlpPolicy::from_json(text).is_err());
    }
}
