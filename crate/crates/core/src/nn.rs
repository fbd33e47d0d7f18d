//! Fixed-topology MLP with analytic backpropagation.
//!
//! Input layer of width E, three hidden layers of width H with scaled
//! exponential linear activations, five sigmoid outputs. Double precision
//! throughout. The loss is a masked mean of squared per-action errors so
//! every action head can participate in one vector update.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::types::{StateVector, ACTION_COUNT};
use crate::{Error, Result};

/// Scale constant of the scaled exponential linear activation.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// Negative-branch constant of the scaled exponential linear activation.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

pub fn selu(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA * z
    } else {
        SELU_LAMBDA * SELU_ALPHA * (z.exp() - 1.0)
    }
}

fn selu_prime(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * z.exp()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One dense layer, row-major weights of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    weights: Vec<f64>,
    biases: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Layer {
    fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        // Fan-in-scaled normal init, the standard pairing for SELU.
        let normal = Normal::new(0.0, (1.0 / in_dim as f64).sqrt()).unwrap();
        Self {
            weights: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
            biases: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: vec![0.0; self.weights.len()],
            biases: vec![0.0; self.biases.len()],
            in_dim: self.in_dim,
            out_dim: self.out_dim,
        }
    }

    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *out_v = acc;
        }
    }
}

/// The Q-network: shapes chain E -> H -> H -> H -> 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    layers: [Layer; 4],
    input_dim: usize,
    hidden_dim: usize,
}

/// Per-parameter gradients, shape-matched to a [`QNetwork`].
#[derive(Debug, Clone)]
pub struct GradientSet {
    layers: [Layer; 4],
}

impl GradientSet {
    fn zeros_like(net: &QNetwork) -> Self {
        Self {
            layers: [
                net.layers[0].zeros_like(),
                net.layers[1].zeros_like(),
                net.layers[2].zeros_like(),
                net.layers[3].zeros_like(),
            ],
        }
    }

    /// Maximum absolute gradient entry, handy for sanity checks.
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Activations recorded during a forward pass, reused by the backward pass.
struct Trace {
    pre: [Vec<f64>; 4],
    post: [Vec<f64>; 3],
    output: [f64; ACTION_COUNT],
}

impl QNetwork {
    /// Fresh network with fan-in-scaled normal weights and zero biases.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                Layer::init(input_dim, hidden_dim, rng),
                Layer::init(hidden_dim, hidden_dim, rng),
                Layer::init(hidden_dim, hidden_dim, rng),
                Layer::init(hidden_dim, ACTION_COUNT, rng),
            ],
            input_dim,
            hidden_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim {
            return Err(Error::ShapeError {
                expected: format!("input of length {}", self.input_dim),
                got: format!("length {len}"),
            });
        }
        Ok(())
    }

    fn trace(&self, input: &[f64]) -> Trace {
        let mut pre = [
            vec![0.0; self.hidden_dim],
            vec![0.0; self.hidden_dim],
            vec![0.0; self.hidden_dim],
            vec![0.0; ACTION_COUNT],
        ];
        let mut post = [
            vec![0.0; self.hidden_dim],
            vec![0.0; self.hidden_dim],
            vec![0.0; self.hidden_dim],
        ];
        self.layers[0].affine(input, &mut pre[0]);
        for i in 0..3 {
            for (a, z) in post[i].iter_mut().zip(pre[i].iter()) {
                *a = selu(*z);
            }
            self.layers[i + 1].affine(&post[i], &mut pre[i + 1]);
        }
        let mut output = [0.0; ACTION_COUNT];
        for (y, z) in output.iter_mut().zip(pre[3].iter()) {
            *y = sigmoid(*z);
        }
        Trace { pre, post, output }
    }

    /// Q-values for all five actions, each strictly inside (0,1).
    pub fn forward(&self, state: &StateVector) -> Result<[f64; ACTION_COUNT]> {
        self.check_input(state.len())?;
        Ok(self.trace(&state.to_f64()).output)
    }

    pub fn forward_dense(&self, input: &[f64]) -> Result<[f64; ACTION_COUNT]> {
        self.check_input(input.len())?;
        Ok(self.trace(input).output)
    }

    /// Masked squared-error loss and its exact analytic gradients.
    ///
    /// `loss = sum over masked cells of (output - target)^2 / #masked cells`.
    pub fn backward(
        &self,
        states: &[Vec<f64>],
        targets: &[[f64; ACTION_COUNT]],
        mask: &[[bool; ACTION_COUNT]],
    ) -> Result<(f64, GradientSet)> {
        if states.len() != targets.len() || states.len() != mask.len() {
            return Err(Error::ShapeError {
                expected: format!("{} target/mask rows", states.len()),
                got: format!("{} targets, {} masks", targets.len(), mask.len()),
            });
        }
        let active: usize = mask
            .iter()
            .map(|row| row.iter().filter(|m| **m).count())
            .sum();
        if active == 0 {
            return Ok((0.0, GradientSet::zeros_like(self)));
        }
        let scale = 1.0 / active as f64;

        let mut loss = 0.0;
        let mut grads = GradientSet::zeros_like(self);
        let mut delta_out = [0.0; ACTION_COUNT];
        let mut delta_hidden = vec![0.0; self.hidden_dim];
        let mut delta_next = vec![0.0; self.hidden_dim];

        for ((input, target), mask_row) in states.iter().zip(targets).zip(mask) {
            self.check_input(input.len())?;
            if input.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalError("batch state".into()));
            }
            if target.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalError("target".into()));
            }
            let trace = self.trace(input);

            for a in 0..ACTION_COUNT {
                let y = trace.output[a];
                if mask_row[a] {
                    let err = y - target[a];
                    loss += err * err * scale;
                    // d loss / d z4 via the sigmoid derivative y(1-y)
                    delta_out[a] = 2.0 * err * scale * y * (1.0 - y);
                } else {
                    delta_out[a] = 0.0;
                }
            }

            // Output layer gradients.
            {
                let layer = &mut grads.layers[3];
                for (o, d) in delta_out.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &mut layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (w, a) in row.iter_mut().zip(trace.post[2].iter()) {
                        *w += d * a;
                    }
                    layer.biases[o] += d;
                }
            }

            // Backpropagate into the last hidden layer.
            for h in 0..self.hidden_dim {
                let mut acc = 0.0;
                for (o, d) in delta_out.iter().enumerate() {
                    acc += d * self.layers[3].weights[o * self.hidden_dim + h];
                }
                delta_hidden[h] = acc * selu_prime(trace.pre[2][h]);
            }

            // Hidden layers 3 -> 2 -> 1, then the input layer.
            for layer_idx in (1..3).rev() {
                {
                    let layer = &mut grads.layers[layer_idx];
                    let prev_act = &trace.post[layer_idx - 1];
                    for (o, d) in delta_hidden.iter().enumerate() {
                        let row = &mut layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (w, a) in row.iter_mut().zip(prev_act.iter()) {
                            *w += d * a;
                        }
                        layer.biases[o] += d;
                    }
                }
                for h in 0..self.hidden_dim {
                    let mut acc = 0.0;
                    for (o, d) in delta_hidden.iter().enumerate() {
                        acc += d * self.layers[layer_idx].weights[o * self.hidden_dim + h];
                    }
                    delta_next[h] = acc * selu_prime(trace.pre[layer_idx - 1][h]);
                }
                std::mem::swap(&mut delta_hidden, &mut delta_next);
            }

            {
                let layer = &mut grads.layers[0];
                for (o, d) in delta_hidden.iter().enumerate() {
                    let row = &mut layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (w, x) in row.iter_mut().zip(input.iter()) {
                        *w += d * x;
                    }
                    layer.biases[o] += d;
                }
            }
        }
        Ok((loss, grads))
    }

    /// Multiply all weight matrices by `factor` (biases untouched); the L2
    /// shrinkage used when weight decay is configured.
    pub fn decay_weights(&mut self, factor: f64) {
        for layer in self.layers.iter_mut() {
            for w in layer.weights.iter_mut() {
                *w *= factor;
            }
        }
    }

    /// Plain gradient step: every parameter moves by `-lr * gradient`.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) {
        for (layer, grad) in self.layers.iter_mut().zip(grads.layers.iter()) {
            for (p, g) in layer.weights.iter_mut().zip(grad.weights.iter()) {
                *p -= lr * g;
            }
            for (p, g) in layer.biases.iter_mut().zip(grad.biases.iter()) {
                *p -= lr * g;
            }
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let container = Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: "qnetwork".into(),
            selu_lambda: SELU_LAMBDA,
            selu_alpha: SELU_ALPHA,
            network: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&container)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<QNetwork> {
        let text = std::fs::read_to_string(path)?;
        let container: Checkpoint = serde_json::from_str(&text)?;
        if container.version != CHECKPOINT_VERSION {
            return Err(Error::ConfigError(format!(
                "unsupported checkpoint version {}",
                container.version
            )));
        }
        container.network.validate_shapes()?;
        Ok(container.network)
    }

    pub(crate) fn validate_shapes(&self) -> Result<()> {
        let dims = [
            (self.input_dim, self.hidden_dim),
            (self.hidden_dim, self.hidden_dim),
            (self.hidden_dim, self.hidden_dim),
            (self.hidden_dim, ACTION_COUNT),
        ];
        for (layer, (in_dim, out_dim)) in self.layers.iter().zip(dims) {
            let ok = layer.in_dim == in_dim
                && layer.out_dim == out_dim
                && layer.weights.len() == in_dim * out_dim
                && layer.biases.len() == out_dim
                && layer.weights.iter().chain(layer.biases.iter()).all(|p| p.is_finite());
            if !ok {
                return Err(Error::ShapeError {
                    expected: format!("layer {in_dim}x{out_dim} with finite parameters"),
                    got: format!("layer {}x{}", layer.in_dim, layer.out_dim),
                });
            }
        }
        Ok(())
    }

    /// Flat copy of all parameters, used by the finite-difference tests.
    pub fn flatten_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    /// Overwrite all parameters from a flat slice in `flatten_params` order.
    pub fn unflatten_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for layer in self.layers.iter_mut() {
            for w in layer.weights.iter_mut() {
                *w = *it.next().expect("flat parameter slice too short");
            }
            for b in layer.biases.iter_mut() {
                *b = *it.next().expect("flat parameter slice too short");
            }
        }
        assert!(it.next().is_none(), "flat parameter slice too long");
    }

    /// Flat copy of a gradient set, aligned with `flatten_params`.
    pub fn flatten_grads(grads: &GradientSet) -> Vec<f64> {
        grads
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    kind: String,
    selu_lambda: f64,
    selu_alpha: f64,
    network: QNetwork,
}

/// Parameter update rule applied each optimisation cycle.
#[derive(Debug)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn sgd() -> Self {
        Optimizer::Sgd
    }

    pub fn adam(net: &QNetwork) -> Self {
        Optimizer::Adam(AdamState::new(net))
    }

    pub fn step(&mut self, net: &mut QNetwork, grads: &GradientSet, lr: f64) {
        match self {
            Optimizer::Sgd => net.sgd_step(grads, lr),
            Optimizer::Adam(state) => state.step(net, grads, lr),
        }
    }
}

/// Adaptive-moment estimation state (first/second moment per parameter).
#[derive(Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(net: &QNetwork) -> Self {
        let n = net.parameter_count();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, net: &mut QNetwork, grads: &GradientSet, lr: f64) {
        self.t += 1;
        let flat_g = QNetwork::flatten_grads(grads);
        let mut flat_p = net.flatten_params();
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..flat_p.len() {
            let g = flat_g[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            flat_p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        net.unflatten_params(&flat_p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::encode_state;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_net(input_dim: usize, hidden_dim: usize) -> QNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = QNetwork::init(input_dim, hidden_dim, &mut rng);
        let zeros = vec![0.0; net.parameter_count()];
        net.unflatten_params(&zeros);
        net
    }

    fn random_states<R: rand::Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| f64::from(rng.random_range(-1i8..=1))).collect())
            .collect()
    }

    #[test]
    fn zero_network_outputs_half() {
        let net = zero_net(4, 8);
        let state = encode_state(&[crate::types::EvidenceAssignment::present(1)], 4).unwrap();
        let out = net.forward(&state).unwrap();
        assert_eq!(out, [0.5; 5]);
    }

    #[test]
    fn selu_constants() {
        assert_eq!(selu(0.0), 0.0);
        assert!((selu(1.0) - SELU_LAMBDA).abs() < 1e-12);
        assert!((SELU_LAMBDA - 1.0507).abs() < 1e-4);
        assert!((SELU_ALPHA - 1.6733).abs() < 1e-4);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = QNetwork::init(6, 10, &mut rng);
        let state = encode_state(&[crate::types::EvidenceAssignment::absent(2)], 6).unwrap();
        assert_eq!(net.forward(&state).unwrap(), net.forward(&state).unwrap());
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = zero_net(4, 8);
        let state = encode_state(&[], 7).unwrap();
        assert!(matches!(net.forward(&state), Err(Error::ShapeError { .. })));
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = QNetwork::init(8, 16, &mut rng);
        for state in random_states(20, 8, &mut rng) {
            for q in net.forward_dense(&state).unwrap() {
                assert!(q > 0.0 && q < 1.0);
            }
        }
    }

    #[test]
    fn loss_zero_at_exact_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = QNetwork::init(5, 9, &mut rng);
        let states = random_states(3, 5, &mut rng);
        let targets: Vec<[f64; 5]> = states
            .iter()
            .map(|s| net.forward_dense(s).unwrap())
            .collect();
        let mask = vec![[true; 5]; 3];
        let (loss, grads) = net.backward(&states, &targets, &mask).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.max_abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_nan_targets() {
        let net = zero_net(3, 4);
        let states = vec![vec![0.0; 3]];
        let targets = vec![[f64::NAN; 5]];
        let mask = vec![[true; 5]];
        assert!(matches!(
            net.backward(&states, &targets, &mask),
            Err(Error::NumericalError(_))
        ));
    }

    /// Central-difference loss gradient, the independent oracle for backprop.
    fn numerical_grads(
        net: &QNetwork,
        states: &[Vec<f64>],
        targets: &[[f64; 5]],
        mask: &[[bool; 5]],
        h: f64,
    ) -> Vec<f64> {
        let flat = net.flatten_params();
        let mut grads = vec![0.0; flat.len()];
        let mut probe = net.clone();
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += h;
            probe.unflatten_params(&plus);
            let (loss_plus, _) = probe.backward(states, targets, mask).unwrap();
            let mut minus = flat.clone();
            minus[i] -= h;
            probe.unflatten_params(&minus);
            let (loss_minus, _) = probe.backward(states, targets, mask).unwrap();
            grads[i] = (loss_plus - loss_minus) / (2.0 * h);
        }
        grads
    }

    fn max_relative_error(analytic: &[f64], numerical: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numerical)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
            .fold(0.0f64, f64::max)
    }

    #[test]
    fn gradient_check_small_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for trial in 0..4 {
            let input_dim = 3 + trial;
            let hidden_dim = 5 + 2 * trial;
            let net = QNetwork::init(input_dim, hidden_dim, &mut rng);
            let states = random_states(2, input_dim, &mut rng);
            let targets: Vec<[f64; 5]> = (0..2)
                .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
                .collect();
            let mask: Vec<[bool; 5]> = (0..2)
                .map(|row| std::array::from_fn(|a| !(row == 1 && a == 4)))
                .collect();
            let (_, analytic) = net.backward(&states, &targets, &mask).unwrap();
            let numerical = numerical_grads(&net, &states, &targets, &mask, 1e-5);
            let rel = max_relative_error(&QNetwork::flatten_grads(&analytic), &numerical);
            assert!(rel < 1e-6, "trial {trial}: max relative error {rel}");
        }
    }

    #[test]
    fn single_head_mask_matches_scalar_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = QNetwork::init(4, 6, &mut rng);
        let states = random_states(1, 4, &mut rng);
        let target = 0.3;
        let head = 2;
        let mut targets = [[0.9_f64; 5]; 1];
        targets[0][head] = target;
        let mut mask = [[false; 5]; 1];
        mask[0][head] = true;

        let (loss, analytic) = net.backward(&states, &targets.to_vec(), &mask.to_vec()).unwrap();
        let q = net.forward_dense(&states[0]).unwrap()[head];
        assert!((loss - (q - target) * (q - target)).abs() < 1e-12);

        // Independent scalar route: central differences of (Q(s,a) - t)^2.
        let flat = net.flatten_params();
        let mut probe = net.clone();
        let h = 1e-5;
        let analytic_flat = QNetwork::flatten_grads(&analytic);
        for i in (0..flat.len()).step_by(7) {
            let mut plus = flat.clone();
            plus[i] += h;
            probe.unflatten_params(&plus);
            let qp = probe.forward_dense(&states[0]).unwrap()[head];
            let mut minus = flat.clone();
            minus[i] -= h;
            probe.unflatten_params(&minus);
            let qm = probe.forward_dense(&states[0]).unwrap()[head];
            let num = ((qp - target).powi(2) - (qm - target).powi(2)) / (2.0 * h);
            let rel = (analytic_flat[i] - num).abs() / analytic_flat[i].abs().max(num.abs()).max(1e-4);
            assert!(rel < 1e-6, "param {i}: rel {rel}");
        }
    }

    #[test]
    fn sgd_step_definition() {
        let mut net = zero_net(2, 3);
        let flat_len = net.parameter_count();
        let mut params = vec![2.0; flat_len];
        net.unflatten_params(&params);
        let states = random_states(1, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let (_, mut grads) = net.backward(&states, &[[0.0; 5]], &[[true; 5]]).unwrap();
        // Overwrite with a constant gradient of 0.5 everywhere.
        for layer in grads.layers.iter_mut() {
            layer.weights.iter_mut().for_each(|g| *g = 0.5);
            layer.biases.iter_mut().for_each(|g| *g = 0.5);
        }
        net.sgd_step(&grads, 1.0);
        params = net.flatten_params();
        assert!(params.iter().all(|p| (*p - 1.5).abs() < 1e-15));

        // Two half-steps equal one full step for constant gradients.
        let mut a = zero_net(2, 3);
        let mut b = zero_net(2, 3);
        a.sgd_step(&grads, 1.0);
        b.sgd_step(&grads, 0.5);
        b.sgd_step(&grads, 0.5);
        assert_eq!(a.flatten_params(), b.flatten_params());
    }

    #[test]
    fn zero_grads_leave_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = QNetwork::init(3, 4, &mut rng);
        let before = net.flatten_params();
        let grads = GradientSet::zeros_like(&net);
        net.sgd_step(&grads, 0.1);
        assert_eq!(net.flatten_params(), before);
    }

    #[test]
    fn checkpoint_round_trip_and_shape_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = QNetwork::init(5, 7, &mut rng);
        let dir = std::env::temp_dir().join("dyqn-nn-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");
        net.save_checkpoint(&path).unwrap();
        let loaded = QNetwork::load_checkpoint(&path).unwrap();
        assert_eq!(loaded, net);

        // Corrupt a shape and make sure the loader rejects it.
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("\"input_dim\":5", "\"input_dim\":6");
        let bad = dir.join("bad.json");
        std::fs::write(&bad, text).unwrap();
        assert!(QNetwork::load_checkpoint(&bad).is_err());
    }
}
