//! Minimal feed-forward network with deterministic initialization, a flat
//! parameter view, and manual backpropagation for the squared TD-error loss.
//!
//! Parameters live in `f64` throughout. The flat layout is canonical and
//! load-bearing: layer 0 weights row-major (one row per output unit), then
//! layer 0 biases, then layer 1 weights, and so on. Weight transfer, noise
//! perturbation, and the checkpoint format all index into that layout.

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, policy_from_bytes, policy_to_bytes, save_checkpoint};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("argmax over empty score vector")]
    EmptyScores,
    #[error("backward_td called with an empty batch")]
    EmptyBatch,
    #[error("non-finite TD target at batch index {0}")]
    NonFiniteTarget(usize),
    #[error("action index {action} out of range for {num_actions} outputs")]
    ActionOutOfRange { action: usize, num_actions: usize },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint decode: {0}")]
    Decode(String),
}

/// Element-wise nonlinearity for hidden layers. The output layer is always
/// affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    ReLU,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::ReLU => z.max(0.0),
        }
    }

    /// Derivative expressed in terms of the post-activation value.
    #[inline]
    pub fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::ReLU => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::ReLU => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::ReLU),
            _ => None,
        }
    }
}

/// Architecture of an [`MlpPolicy`]: layer widths plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self, NnError> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidSpec("input_dim must be >= 1".into()));
        }
        if self.output_dim == 0 {
            return Err(NnError::InvalidSpec("output_dim must be >= 1".into()));
        }
        if let Some(pos) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(NnError::InvalidSpec(format!(
                "hidden_dims[{pos}] must be >= 1"
            )));
        }
        Ok(())
    }

    /// Layer widths including input and output: `[in, hidden..., out]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    /// Per-layer `(fan_in, fan_out)` pairs.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let dims = self.layer_dims();
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total parameter count `d = sum over layers of (fan_in + 1) * fan_out`.
    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(fan_in, fan_out)| (fan_in + 1) * fan_out)
            .sum()
    }

    /// Flat-layout offset of the output layer's first parameter, i.e. the
    /// number of parameters belonging to hidden layers.
    pub fn hidden_param_count(&self) -> usize {
        let shapes = self.layer_shapes();
        shapes[..shapes.len() - 1]
            .iter()
            .map(|&(fan_in, fan_out)| (fan_in + 1) * fan_out)
            .sum()
    }
}

/// Flat view of a policy's parameters in the canonical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Debug, Clone)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Row-major, shape `(fan_out, fan_in)`: row `o` feeds output unit `o`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.fan_out {
            let row = &self.weights[o * self.fan_in..(o + 1) * self.fan_in];
            let mut sum = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                sum += w * x;
            }
            out.push(sum);
        }
    }
}

/// One sample of the TD regression batch: push `Q(observation)[action]`
/// toward `target`.
#[derive(Debug, Clone)]
pub struct TdSample {
    pub observation: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

/// Feed-forward policy network. Immutable after construction; training code
/// builds updated copies via [`MlpPolicy::from_flat`].
#[derive(Debug, Clone)]
pub struct MlpPolicy {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl MlpPolicy {
    /// Deterministic initialization: per-layer weights uniform in `(-b, b)`
    /// with `b = sqrt(6 / (fan_in + fan_out))`, biases zero. The draw order
    /// follows the flat layout, so equal seeds give bit-identical policies.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let mut rng = SplitMix64::new(seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.next_range(-bound, bound))
                    .collect();
                Layer {
                    fan_in,
                    fan_out,
                    weights,
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// All-zero network of the given shape.
    pub fn zeros(spec: MlpSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| Layer::zeros(fan_in, fan_out))
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Forward pass: hidden layers apply the spec activation, the final layer
    /// is affine. Returns `spec.output_dim` action scores / Q-values.
    pub fn forward(&self, observation: &[f64]) -> Result<Vec<f64>, NnError> {
        if observation.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                what: "observation",
                expected: self.spec.input_dim,
                got: observation.len(),
            });
        }
        let mut current = observation.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&current, &mut next);
            if k != last {
                for v in next.iter_mut() {
                    *v = self.spec.activation.apply(*v);
                }
            }
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Activations entering the output layer — the observation itself when
    /// the spec has no hidden layers. Lets callers check that two networks
    /// share hidden representations, e.g. after a hidden-only warm start.
    pub fn hidden_activations(&self, observation: &[f64]) -> Result<Vec<f64>, NnError> {
        if observation.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                what: "observation",
                expected: self.spec.input_dim,
                got: observation.len(),
            });
        }
        let mut current = observation.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers[..self.layers.len() - 1] {
            layer.affine(&current, &mut next);
            for v in next.iter_mut() {
                *v = self.spec.activation.apply(*v);
            }
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Flat parameter vector in the canonical layout.
    pub fn to_flat(&self) -> ParameterVector {
        let mut values = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            values.extend_from_slice(&layer.weights);
            values.extend_from_slice(&layer.biases);
        }
        ParameterVector::new(values)
    }

    /// Rebuild a policy from a flat parameter vector. Exact inverse of
    /// [`MlpPolicy::to_flat`].
    pub fn from_flat(spec: MlpSpec, params: &ParameterVector) -> Result<Self, NnError> {
        spec.validate()?;
        let expected = spec.param_count();
        if params.len() != expected {
            return Err(NnError::DimensionMismatch {
                what: "parameter vector",
                expected,
                got: params.len(),
            });
        }
        let mut layers = Vec::new();
        let mut offset = 0usize;
        for (fan_in, fan_out) in spec.layer_shapes() {
            let w_len = fan_in * fan_out;
            let weights = params[offset..offset + w_len].to_vec();
            offset += w_len;
            let biases = params[offset..offset + fan_out].to_vec();
            offset += fan_out;
            layers.push(Layer {
                fan_in,
                fan_out,
                weights,
                biases,
            });
        }
        Ok(Self { spec, layers })
    }

    /// Mean squared TD error over the batch and its gradient in flat layout.
    ///
    /// `loss = (1/B) * sum_j (target_j - Q(obs_j)[action_j])^2`; only the
    /// chosen action's output contributes per sample.
    pub fn backward_td(&self, batch: &[TdSample]) -> Result<(ParameterVector, f64), NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let d = self.param_count();
        let mut grad = vec![0.0; d];
        let mut loss = 0.0;
        let inv_b = 1.0 / batch.len() as f64;
        let last = self.layers.len() - 1;

        // Reused per-sample buffers: post-activation values per layer
        // (index 0 is the input itself).
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);

        for (j, sample) in batch.iter().enumerate() {
            if !sample.target.is_finite() {
                return Err(NnError::NonFiniteTarget(j));
            }
            if sample.observation.len() != self.spec.input_dim {
                return Err(NnError::DimensionMismatch {
                    what: "observation",
                    expected: self.spec.input_dim,
                    got: sample.observation.len(),
                });
            }
            if sample.action >= self.spec.output_dim {
                return Err(NnError::ActionOutOfRange {
                    action: sample.action,
                    num_actions: self.spec.output_dim,
                });
            }

            activations.clear();
            activations.push(sample.observation.clone());
            for (k, layer) in self.layers.iter().enumerate() {
                let mut out = Vec::new();
                layer.affine(activations.last().unwrap(), &mut out);
                if k != last {
                    for v in out.iter_mut() {
                        *v = self.spec.activation.apply(*v);
                    }
                }
                activations.push(out);
            }

            let q = activations.last().unwrap()[sample.action];
            let residual = sample.target - q;
            loss += residual * residual * inv_b;

            // dL/dQ_a per sample; other outputs do not contribute.
            let mut delta = vec![0.0; self.spec.output_dim];
            delta[sample.action] = -2.0 * residual * inv_b;

            // Walk layers backwards, accumulating into the flat gradient.
            let mut offset_end = d;
            for k in (0..self.layers.len()).rev() {
                let layer = &self.layers[k];
                let input = &activations[k];
                let w_len = layer.fan_in * layer.fan_out;
                let bias_start = offset_end - layer.fan_out;
                let weight_start = bias_start - w_len;

                for o in 0..layer.fan_out {
                    let dz = delta[o];
                    if dz != 0.0 {
                        grad[bias_start + o] += dz;
                        let row = weight_start + o * layer.fan_in;
                        for (i, x) in input.iter().enumerate() {
                            grad[row + i] += dz * x;
                        }
                    }
                }

                if k > 0 {
                    let mut d_input = vec![0.0; layer.fan_in];
                    for o in 0..layer.fan_out {
                        let dz = delta[o];
                        if dz != 0.0 {
                            let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                            for (i, w) in row.iter().enumerate() {
                                d_input[i] += w * dz;
                            }
                        }
                    }
                    // Pre-activation gradient of the upstream hidden layer.
                    for (v, a) in d_input.iter_mut().zip(input) {
                        *v *= self.spec.activation.grad_from_output(*a);
                    }
                    delta = d_input;
                }
                offset_end = weight_start;
            }
        }

        Ok((ParameterVector::new(grad), loss))
    }
}

/// Index of the maximum score; ties break toward the lowest index.
pub fn argmax_action(scores: &[f64]) -> Result<usize, NnError> {
    if scores.is_empty() {
        return Err(NnError::EmptyScores);
    }
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(input: usize, hidden: &[usize], output: usize) -> MlpSpec {
        MlpSpec::new(input, hidden.to_vec(), output, Activation::Tanh).unwrap()
    }

    #[test]
    fn param_count_hand_examples() {
        assert_eq!(spec(3, &[4, 4], 2).param_count(), 46);
        assert_eq!(spec(2, &[], 1).param_count(), 3);
        assert_eq!(spec(1, &[1], 1).param_count(), 4);
    }

    #[test]
    fn init_biases_zero_and_deterministic() {
        let s = spec(2, &[], 1);
        let a = MlpPolicy::init(s.clone(), 99).unwrap();
        let b = MlpPolicy::init(s.clone(), 99).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        // Layout for 2 -> 1 linear: [w0, w1, bias].
        let flat = a.to_flat();
        assert_eq!(flat[2], 0.0);
    }

    #[test]
    fn init_weights_within_glorot_bound() {
        let s = spec(5, &[64, 64], 2);
        let p = MlpPolicy::init(s.clone(), 7).unwrap();
        let flat = p.to_flat();
        let mut offset = 0usize;
        for (fan_in, fan_out) in s.layer_shapes() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w_len = fan_in * fan_out;
            for &w in &flat[offset..offset + w_len] {
                assert!(w.abs() < bound);
            }
            for &b in &flat[offset + w_len..offset + w_len + fan_out] {
                assert_eq!(b, 0.0);
            }
            offset += w_len + fan_out;
        }
    }

    #[test]
    fn forward_zero_network_is_zero() {
        let p = MlpPolicy::zeros(spec(3, &[4], 2)).unwrap();
        assert_eq!(p.forward(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_linear_hand_arithmetic() {
        // 1 -> 1 linear net, W = [2], b = [0.5], x = [1] -> 2.5.
        let s = spec(1, &[], 1);
        let p = MlpPolicy::from_flat(s, &vec![2.0, 0.5].into()).unwrap();
        assert_eq!(p.forward(&[1.0]).unwrap(), vec![2.5]);
    }

    #[test]
    fn forward_tanh_hidden_passes_output_bias() {
        // One tanh hidden unit, all weights zero: tanh(0) = 0, so the
        // output equals the output bias exactly.
        let s = spec(1, &[1], 1);
        let p = MlpPolicy::from_flat(s, &vec![0.0, 0.0, 0.0, 0.75].into()).unwrap();
        assert_eq!(p.forward(&[3.0]).unwrap(), vec![0.75]);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let p = MlpPolicy::zeros(spec(3, &[], 1)).unwrap();
        assert!(matches!(
            p.forward(&[1.0, 2.0]),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn argmax_examples_and_tie_break() {
        assert_eq!(argmax_action(&[0.1, 0.9]).unwrap(), 1);
        assert_eq!(argmax_action(&[0.5, 0.5]).unwrap(), 0);
        assert_eq!(argmax_action(&[-1.0, -2.0, -0.5]).unwrap(), 2);
        assert!(matches!(argmax_action(&[]), Err(NnError::EmptyScores)));
    }

    #[test]
    fn flat_round_trip_and_canonical_order() {
        let s = spec(1, &[1], 1);
        let v: ParameterVector = vec![0.5, 0.5, 0.5, 0.5].into();
        let p = MlpPolicy::from_flat(s.clone(), &v).unwrap();
        assert_eq!(p.to_flat().as_slice(), &[0.5, 0.5, 0.5, 0.5]);

        let bad: ParameterVector = vec![0.5; 5].into();
        assert!(matches!(
            MlpPolicy::from_flat(s, &bad),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn backward_zero_residual_gives_zero_gradient() {
        let s = spec(2, &[3], 2);
        let p = MlpPolicy::init(s, 5).unwrap();
        let obs = vec![0.4, -0.2];
        let q = p.forward(&obs).unwrap();
        let batch = vec![
            TdSample {
                observation: obs.clone(),
                action: 0,
                target: q[0],
            },
            TdSample {
                observation: obs,
                action: 1,
                target: q[1],
            },
        ];
        let (grad, loss) = p.backward_td(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_linear_hand_chain_rule() {
        // 1 -> 1 linear net W=[1], b=[0], sample (x=[1], a=0, y=2):
        // loss = 1, dL/dW = -2, dL/db = -2.
        let s = spec(1, &[], 1);
        let p = MlpPolicy::from_flat(s, &vec![1.0, 0.0].into()).unwrap();
        let batch = vec![TdSample {
            observation: vec![1.0],
            action: 0,
            target: 2.0,
        }];
        let (grad, loss) = p.backward_td(&batch).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.as_slice(), &[-2.0, -2.0]);
    }

    #[test]
    fn backward_rejects_bad_batches() {
        let s = spec(2, &[], 2);
        let p = MlpPolicy::zeros(s).unwrap();
        assert!(matches!(p.backward_td(&[]), Err(NnError::EmptyBatch)));
        let nan_batch = vec![TdSample {
            observation: vec![0.0, 0.0],
            action: 0,
            target: f64::NAN,
        }];
        assert!(matches!(
            p.backward_td(&nan_batch),
            Err(NnError::NonFiniteTarget(0))
        ));
        let bad_action = vec![TdSample {
            observation: vec![0.0, 0.0],
            action: 5,
            target: 1.0,
        }];
        assert!(matches!(
            p.backward_td(&bad_action),
            Err(NnError::ActionOutOfRange { .. })
        ));
    }

    /// Central-difference gradient of the batch TD loss, one coordinate at
    /// a time. Slow but independent of the backprop code.
    fn numeric_grad(policy: &MlpPolicy, batch: &[TdSample], step: f64) -> Vec<f64> {
        let flat = policy.to_flat();
        let mut grad = Vec::with_capacity(flat.len());
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus.as_mut_slice()[i] += step;
            let mut minus = flat.clone();
            minus.as_mut_slice()[i] -= step;
            let loss =
                |v: &ParameterVector| -> f64 {
                    let p = MlpPolicy::from_flat(policy.spec().clone(), v).unwrap();
                    batch
                        .iter()
                        .map(|s| {
                            let q = p.forward(&s.observation).unwrap()[s.action];
                            (s.target - q) * (s.target - q)
                        })
                        .sum::<f64>()
                        / batch.len() as f64
                };
            grad.push((loss(&plus) - loss(&minus)) / (2.0 * step));
        }
        grad
    }

    #[test]
    fn backward_matches_numeric_gradients() {
        let mut rng = crate::rng::SplitMix64::new(0xF00D);
        for trial in 0..4 {
            let s = spec(3, &[5, 4], 2);
            let p = MlpPolicy::init(s, 1000 + trial).unwrap();
            let batch: Vec<TdSample> = (0..6)
                .map(|_| TdSample {
                    observation: (0..3).map(|_| rng.next_range(-1.0, 1.0)).collect(),
                    action: rng.next_index(2),
                    target: rng.next_range(-2.0, 2.0),
                })
                .collect();
            let (analytic, _) = p.backward_td(&batch).unwrap();
            let numeric = numeric_grad(&p, &batch, 1e-5);
            for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
                assert!(rel <= 1e-4, "coordinate {i}: analytic {a}, numeric {n}");
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(MlpSpec::new(0, vec![], 1, Activation::Tanh).is_err());
        assert!(MlpSpec::new(1, vec![3, 0], 1, Activation::Tanh).is_err());
        assert!(MlpSpec::new(1, vec![], 0, Activation::ReLU).is_err());
    }
}
