//! Feed-forward scalar reward network.
//!
//! The network scores a (prompt, response) pair by running the concatenation
//! `[prompt ‖ response]` through zero or more dense hidden layers followed by
//! a single-output linear head:
//!
//! ```text
//! a_0 = [x ‖ y]
//! a_l = act(W_l a_{l-1} + b_l)        hidden layers
//! r   = w_head · a_L + b_head         scalar reward
//! ```
//!
//! Gradients are derived by hand (no autodiff); `finite_diff_check` compares
//! them with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real-valued feature vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "feature {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            t => Err(Error::Checkpoint(format!("unknown activation tag {t}"))),
        }
    }
}

/// One affine layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(input).fold(*b, |acc, (w, x)| acc + w * x)),
        );
    }
}

/// Scalar reward scorer `r(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetDocument", into = "NetDocument")]
pub struct RewardNet {
    d_prompt: usize,
    d_response: usize,
    activation: Activation,
    /// Hidden layers followed by the one-output head.
    layers: Vec<Dense>,
}

/// On-disk JSON layout of a [`RewardNet`].
#[derive(Serialize, Deserialize)]
struct NetDocument {
    d_prompt: usize,
    d_response: usize,
    activation: Activation,
    hidden_widths: Vec<usize>,
    layers: Vec<Dense>,
}

impl From<RewardNet> for NetDocument {
    fn from(net: RewardNet) -> Self {
        Self {
            d_prompt: net.d_prompt,
            d_response: net.d_response,
            activation: net.activation,
            hidden_widths: net.hidden_widths(),
            layers: net.layers,
        }
    }
}

impl TryFrom<NetDocument> for RewardNet {
    type Error = Error;

    fn try_from(doc: NetDocument) -> Result<Self> {
        let net = RewardNet::zeros(
            doc.d_prompt,
            doc.d_response,
            &doc.hidden_widths,
            doc.activation,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if doc.layers.len() != net.layers.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} layers, found {}",
                net.layers.len(),
                doc.layers.len()
            )));
        }
        for (i, (want, got)) in net.layers.iter().zip(&doc.layers).enumerate() {
            if want.inputs != got.inputs
                || want.outputs != got.outputs
                || got.weights.len() != want.weights.len()
                || got.bias.len() != want.bias.len()
            {
                return Err(Error::Checkpoint(format!(
                    "layer {i} has inconsistent shape"
                )));
            }
        }
        let net = RewardNet {
            layers: doc.layers,
            ..net
        };
        net.check_finite()?;
        Ok(net)
    }
}

/// Per-layer intermediate values from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the network input; `activations[l]` the output of hidden layer `l`.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values of each hidden layer.
    pre: Vec<Vec<f64>>,
    pub reward: f64,
}

impl Trace {
    /// Sign pattern of the hidden pre-activations (used to detect ReLU kinks).
    fn active_pattern(&self) -> Vec<bool> {
        self.pre.iter().flatten().map(|&z| z > 0.0).collect()
    }
}

/// Parameter gradients, one tensor per parameter tensor of the net
/// (layer 0 weights, layer 0 bias, layer 1 weights, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &RewardNet) -> Self {
        Self {
            tensors: net.tensors().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// Checks that every tensor has the length of the matching parameter tensor.
    pub fn check_congruent(&self, net: &RewardNet) -> Result<()> {
        let lens: Vec<usize> = net.tensors().map(<[f64]>::len).collect();
        if lens.len() != self.tensors.len() {
            return Err(Error::Shape {
                context: "gradient tensor count",
                expected: lens.len(),
                got: self.tensors.len(),
            });
        }
        for (want, got) in lens.iter().zip(&self.tensors) {
            if *want != got.len() {
                return Err(Error::Shape {
                    context: "gradient tensor length",
                    expected: *want,
                    got: got.len(),
                });
            }
        }
        Ok(())
    }

    /// Adds `other` elementwise in tensor order.
    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flatten().copied()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

fn check_dims(d_prompt: usize, d_response: usize, hidden_widths: &[usize]) -> Result<()> {
    if d_prompt == 0 || d_response == 0 {
        return Err(Error::InvalidConfig(format!(
            "input dimensions must be >= 1 (d_prompt={d_prompt}, d_response={d_response})"
        )));
    }
    if let Some(i) = hidden_widths.iter().position(|&w| w == 0) {
        return Err(Error::InvalidConfig(format!(
            "hidden layer {i} has width 0"
        )));
    }
    Ok(())
}

/// Builds a network with Xavier-uniform weights and zero biases.
///
/// Weights of a layer with fan-in `n_in` and fan-out `n_out` are drawn from
/// `U(-b, b)` with `b = sqrt(6 / (n_in + n_out))` using a ChaCha8 stream
/// seeded by `seed`, so equal arguments give bit-identical parameters.
pub fn init_net(
    d_prompt: usize,
    d_response: usize,
    hidden_widths: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<RewardNet> {
    let mut net = RewardNet::zeros(d_prompt, d_response, hidden_widths, activation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut net.layers {
        let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(net)
}

impl RewardNet {
    /// All-zero network of the given architecture.
    pub fn zeros(
        d_prompt: usize,
        d_response: usize,
        hidden_widths: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        check_dims(d_prompt, d_response, hidden_widths)?;
        let mut layers = Vec::with_capacity(hidden_widths.len() + 1);
        let mut fan_in = d_prompt + d_response;
        for &w in hidden_widths {
            layers.push(Dense::zeros(fan_in, w));
            fan_in = w;
        }
        layers.push(Dense::zeros(fan_in, 1));
        Ok(Self {
            d_prompt,
            d_response,
            activation,
            layers,
        })
    }

    /// Pure linear scorer `r = w · [x ‖ y] + b`.
    pub fn linear(
        d_prompt: usize,
        d_response: usize,
        weights: Vec<f64>,
        bias: f64,
    ) -> Result<Self> {
        let mut net = Self::zeros(d_prompt, d_response, &[], Activation::Tanh)?;
        if weights.len() != d_prompt + d_response {
            return Err(Error::Shape {
                context: "linear scorer weights",
                expected: d_prompt + d_response,
                got: weights.len(),
            });
        }
        net.layers[0].weights = weights;
        net.layers[0].bias = vec![bias];
        net.check_finite()?;
        Ok(net)
    }

    pub fn d_prompt(&self) -> usize {
        self.d_prompt
    }

    pub fn d_response(&self) -> usize {
        self.d_response
    }

    pub fn input_dim(&self) -> usize {
        self.d_prompt + self.d_response
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.outputs)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    /// Parameter tensors in canonical order: weights then bias, layer by layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    fn check_finite(&self) -> Result<()> {
        if self.tensors().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain("network has non-finite parameters".into()))
        }
    }

    /// Concatenates prompt and response after checking their dimensions.
    pub fn input(&self, prompt: &FeatureVector, response: &FeatureVector) -> Result<Vec<f64>> {
        if prompt.len() != self.d_prompt {
            return Err(Error::Shape {
                context: "prompt features",
                expected: self.d_prompt,
                got: prompt.len(),
            });
        }
        if response.len() != self.d_response {
            return Err(Error::Shape {
                context: "response features",
                expected: self.d_response,
                got: response.len(),
            });
        }
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(prompt.as_slice());
        input.extend_from_slice(response.as_slice());
        Ok(input)
    }

    /// Reward for one (prompt, response) pair.
    pub fn forward(&self, prompt: &FeatureVector, response: &FeatureVector) -> Result<f64> {
        let input = self.input(prompt, response)?;
        Ok(self.forward_input(&input))
    }

    /// Forward pass on an already-concatenated input of length `input_dim()`.
    pub fn forward_input(&self, input: &[f64]) -> f64 {
        let (head, hidden) = self.layers.split_last().expect("head layer");
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in hidden {
            layer.affine(&cur, &mut next);
            for v in &mut next {
                *v = self.activation.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        head.affine(&cur, &mut next);
        next[0]
    }

    /// Forward pass keeping every intermediate needed by backpropagation.
    pub fn trace(&self, input: &[f64]) -> Trace {
        let (head, hidden) = self.layers.split_last().expect("head layer");
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(hidden.len());
        activations.push(input.to_vec());
        for layer in hidden {
            let mut z = Vec::new();
            layer.affine(activations.last().unwrap(), &mut z);
            let a = z.iter().map(|&v| self.activation.apply(v)).collect();
            pre.push(z);
            activations.push(a);
        }
        let mut out = Vec::new();
        head.affine(activations.last().unwrap(), &mut out);
        Trace {
            activations,
            pre,
            reward: out[0],
        }
    }

    /// Adds `∂(upstream · r)/∂θ` for the traced input into `grads`.
    pub fn accumulate_backward(&self, trace: &Trace, upstream: f64, grads: &mut GradientSet) {
        let mut delta = vec![upstream];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &trace.activations[l];
            let (gw, gb) = {
                let (w, rest) = grads.tensors[2 * l..].split_at_mut(1);
                (&mut w[0], &mut rest[0])
            };
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                if d != 0.0 {
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, x) in row.iter_mut().zip(a_in) {
                        *g += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let z = &trace.pre[l - 1];
            let a = &trace.activations[l];
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            for ((p, &zi), &ai) in prev.iter_mut().zip(z).zip(a) {
                *p *= self.activation.derivative(zi, ai);
            }
            delta = prev;
        }
    }

    /// Gradient of `upstream · r(prompt, response)` with respect to every parameter.
    pub fn backward(
        &self,
        prompt: &FeatureVector,
        response: &FeatureVector,
        upstream: f64,
    ) -> Result<GradientSet> {
        let input = self.input(prompt, response)?;
        let trace = self.trace(&input);
        let mut grads = GradientSet::zeros_like(self);
        self.accumulate_backward(&trace, upstream, &mut grads);
        Ok(grads)
    }

    /// Binary checkpoint: little-endian header followed by raw `f64` parameters.
    ///
    /// Layout: `b"RWNT"`, `u32` version (1), `u8` activation tag, `u32` d_prompt,
    /// `u32` d_response, `u32` hidden count, `u32` per hidden width, then every
    /// parameter tensor in canonical order as `f64` little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.push(self.activation.tag());
        let hidden = self.hidden_widths();
        for v in [self.d_prompt, self.d_response, hidden.len()]
            .into_iter()
            .chain(hidden)
        {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in self.tensors().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Checkpoint("missing RWNT magic".into()));
        }
        let version = cur.u32()?;
        if version != BINARY_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let activation = Activation::from_tag(cur.take(1)?[0])?;
        let d_prompt = cur.u32()? as usize;
        let d_response = cur.u32()? as usize;
        let n_hidden = cur.u32()? as usize;
        let hidden = (0..n_hidden)
            .map(|_| cur.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(d_prompt, d_response, &hidden, activation)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        for tensor in net.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        net.check_finite()?;
        Ok(net)
    }
}

const MAGIC: &[u8; 4] = b"RWNT";
const BINARY_VERSION: u32 = 1;

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Largest relative disagreement between analytic and central-difference gradients.
///
/// Each parameter is perturbed by `±epsilon` and the error is
/// `|analytic − numeric| / max(1, |numeric|)`. For ReLU networks, parameters
/// whose perturbation flips any hidden unit across its kink are skipped.
pub fn finite_diff_check(
    net: &RewardNet,
    prompt: &FeatureVector,
    response: &FeatureVector,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let input = net.input(prompt, response)?;
    let base = net.trace(&input);
    let mut analytic = GradientSet::zeros_like(net);
    net.accumulate_backward(&base, 1.0, &mut analytic);
    let relu = net.activation == Activation::Relu;
    let base_pattern = base.active_pattern();

    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.tensors.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = probe.tensor_value(t, i);
            probe.set_tensor_value(t, i, orig + epsilon);
            let plus = probe.trace(&input);
            probe.set_tensor_value(t, i, orig - epsilon);
            let minus = probe.trace(&input);
            probe.set_tensor_value(t, i, orig);
            if relu
                && (plus.active_pattern() != base_pattern || minus.active_pattern() != base_pattern)
            {
                continue;
            }
            let numeric = (plus.reward - minus.reward) / (2.0 * epsilon);
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}

impl RewardNet {
    fn tensor_value(&self, tensor: usize, index: usize) -> f64 {
        let layer = &self.layers[tensor / 2];
        if tensor.is_multiple_of(2) {
            layer.weights[index]
        } else {
            layer.bias[index]
        }
    }

    fn set_tensor_value(&mut self, tensor: usize, index: usize, value: f64) {
        let layer = &mut self.layers[tensor / 2];
        if tensor.is_multiple_of(2) {
            layer.weights[index] = value;
        } else {
            layer.bias[index] = value;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn random_inputs(net: &RewardNet, seed: u64) -> (FeatureVector, FeatureVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = (0..net.d_prompt())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let r = (0..net.d_response())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        (fv_owned(p), fv_owned(r))
    }

    fn fv_owned(v: Vec<f64>) -> FeatureVector {
        FeatureVector::new(v).unwrap()
    }

    /// Straight-line nested-loop forward pass, independent of `Dense::affine`.
    #[allow(clippy::needless_range_loop)]
    fn naive_forward(net: &RewardNet, input: &[f64]) -> f64 {
        let mut a = input.to_vec();
        let n = net.layers().len();
        for (l, layer) in net.layers().iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            for o in 0..layer.outputs {
                let mut s = layer.bias[o];
                for i in 0..layer.inputs {
                    s += layer.weights[o * layer.inputs + i] * a[i];
                }
                z[o] = s;
            }
            if l + 1 < n {
                for v in &mut z {
                    *v = match net.activation() {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                    };
                }
            }
            a = z;
        }
        a[0]
    }

    #[test]
    fn linear_scorer_shape() {
        let net = init_net(2, 2, &[], Activation::Tanh, 7).unwrap();
        assert_eq!(net.layers().len(), 1);
        assert_eq!(net.layers()[0].weights.len(), 4);
        assert_eq!(net.layers()[0].bias.len(), 1);
        assert_eq!(net.num_params(), 5);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_net(3, 5, &[8, 4], Activation::Tanh, 42).unwrap();
        let b = init_net(3, 5, &[8, 4], Activation::Tanh, 42).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = init_net(3, 5, &[8, 4], Activation::Tanh, 43).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn zero_width_rejected() {
        assert!(matches!(
            init_net(2, 2, &[0], Activation::Tanh, 1),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            init_net(0, 2, &[], Activation::Tanh, 1),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = RewardNet::zeros(3, 3, &[5], Activation::Tanh).unwrap();
        let (p, r) = random_inputs(&net, 9);
        assert_eq!(net.forward(&p, &r).unwrap(), 0.0);
    }

    #[test]
    fn identity_row() {
        let net = RewardNet::linear(2, 2, vec![1.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        let r = net.forward(&fv(&[2.5, 1.0]), &fv(&[1.0, 1.0])).unwrap();
        assert_eq!(r, 2.5);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        for seed in 0..20 {
            let act = if seed % 2 == 0 {
                Activation::Tanh
            } else {
                Activation::Relu
            };
            let net = init_net(4, 6, &[7, 5], act, seed).unwrap();
            let (p, r) = random_inputs(&net, seed + 100);
            let got = net.forward(&p, &r).unwrap();
            let want = naive_forward(&net, &net.input(&p, &r).unwrap());
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1e-300),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = init_net(2, 3, &[], Activation::Tanh, 0).unwrap();
        let err = net.forward(&fv(&[1.0, 2.0]), &fv(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let net = init_net(3, 3, &[4], Activation::Tanh, 5).unwrap();
        let (p, r) = random_inputs(&net, 1);
        let g = net.backward(&p, &r, 0.0).unwrap();
        assert!(g.iter().all(|v| v == 0.0));
    }

    #[test]
    fn linear_gradient_is_input() {
        let net = init_net(2, 2, &[], Activation::Tanh, 3).unwrap();
        let (p, r) = (fv(&[1.0, -2.0]), fv(&[0.5, 3.0]));
        let g = net.backward(&p, &r, 2.0).unwrap();
        assert_eq!(g.tensors[0], vec![2.0, -4.0, 1.0, 6.0]);
        assert_eq!(g.tensors[1], vec![2.0]);
    }

    #[test]
    fn finite_diff_linear_exact() {
        let net = init_net(3, 4, &[], Activation::Tanh, 11).unwrap();
        let (p, r) = random_inputs(&net, 2);
        assert!(finite_diff_check(&net, &p, &r, 1e-5).unwrap() < 1e-9);
    }

    #[test]
    fn finite_diff_zero_net() {
        let net = RewardNet::zeros(2, 2, &[3], Activation::Tanh).unwrap();
        let z = FeatureVector::zeros(2);
        assert_eq!(finite_diff_check(&net, &z, &z, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn finite_diff_two_hidden_tanh() {
        for seed in 0..100 {
            let net = init_net(3, 4, &[6, 5], Activation::Tanh, seed).unwrap();
            let (p, r) = random_inputs(&net, seed ^ 0xabcd);
            let err = finite_diff_check(&net, &p, &r, 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn finite_diff_relu_skips_kinks() {
        for seed in 0..20 {
            let net = init_net(3, 3, &[8], Activation::Relu, seed).unwrap();
            let (p, r) = random_inputs(&net, seed + 7);
            assert!(finite_diff_check(&net, &p, &r, 1e-5).unwrap() < 1e-5);
        }
    }

    #[test]
    fn finite_diff_rejects_bad_epsilon() {
        let net = init_net(1, 1, &[], Activation::Tanh, 0).unwrap();
        let z = FeatureVector::zeros(1);
        assert!(finite_diff_check(&net, &z, &z, 0.0).is_err());
    }

    #[test]
    fn backward_linear_in_upstream() {
        let net = init_net(3, 3, &[5], Activation::Tanh, 8).unwrap();
        let (p, r) = random_inputs(&net, 8);
        let g1 = net.backward(&p, &r, 1.0).unwrap();
        let gc = net.backward(&p, &r, -3.7).unwrap();
        for (a, b) in g1.iter().zip(gc.iter()) {
            assert!((a * -3.7 - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn binary_round_trip_bit_exact() {
        let net = init_net(3, 2, &[4, 3], Activation::Relu, 99).unwrap();
        let bytes = net.to_bytes();
        let back = RewardNet::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(RewardNet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn json_round_trip_value_exact() {
        let net = init_net(3, 2, &[4], Activation::Tanh, 5).unwrap();
        let text = serde_json::to_string(&net).unwrap();
        let back: RewardNet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn json_rejects_inconsistent_layers() {
        let net = init_net(2, 2, &[3], Activation::Tanh, 5).unwrap();
        let mut doc: serde_json::Value = serde_json::to_value(&net).unwrap();
        doc["hidden_widths"] = serde_json::json!([4]);
        assert!(serde_json::from_value::<RewardNet>(doc).is_err());
    }

    #[test]
    fn non_finite_features_rejected() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![f64::INFINITY]).is_err());
    }
}
