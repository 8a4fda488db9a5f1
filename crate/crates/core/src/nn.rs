//! Small tanh MLPs over flat parameter vectors.
//!
//! Three network shapes cover every trainable component:
//! * [`Mlp`] — generic trunk + single linear head (detectors, gating),
//! * [`PolicyNet`] — shared trunk with an action-logit head and a scalar
//!   value head,
//! * [`GatingNet`] — an [`Mlp`] with two outputs interpreted as
//!   (interpolation-weight logit, residual value).
//!
//! Parameters are stored flat so the optimizer, checkpoints, hashing and the
//! autodiff tape all share one layout: per layer, row-major `W` followed by
//! `b`. Weights use scaled orthogonal-ish init (Gram-Schmidt on Gaussian
//! rows), biases start at zero, and the policy head is scaled down so initial
//! action distributions are near-uniform.

use crate::scalar::Scalar;
use crate::tape::{write_softmax, Tape, Var};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Gain applied to hidden-layer weights (standard choice for tanh trunks).
const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
/// Gain for action-logit heads: keeps the initial policy near-uniform.
pub const POLICY_HEAD_GAIN: f64 = 0.01;

#[derive(Clone, Copy)]
struct LayerView {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

fn layer_views(dims: &[usize]) -> Vec<LayerView> {
    let mut views = Vec::with_capacity(dims.len() - 1);
    let mut off = 0;
    for pair in dims.windows(2) {
        let (cols, rows) = (pair[0], pair[1]);
        views.push(LayerView { w: off, b: off + rows * cols, rows, cols });
        off += rows * cols + rows;
    }
    views
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

/// Fills `out` (rows x cols, row-major) with Gram-Schmidt-orthogonalized
/// Gaussian rows scaled by `gain`. Rows beyond the column count cannot all be
/// orthogonal and are only normalized.
fn init_orthogonalish<T: Scalar>(out: &mut [T], rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) {
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for r in 0..rows {
        for p in 0..r.min(cols) {
            let dot: f64 = m[r].iter().zip(&m[p]).map(|(a, b)| a * b).sum();
            for c in 0..cols {
                m[r][c] -= dot * m[p][c];
            }
        }
        let norm: f64 = m[r].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for c in 0..cols {
            m[r][c] *= gain / norm;
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = T::fl(m[r][c]);
        }
    }
}

/// Trunk of tanh layers followed by one linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Mlp<T: Scalar> {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub params: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        dims
    }

    pub fn zeros(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        let n = param_count(&Self::dims(input, &hidden, output));
        Mlp { input, hidden, output, params: vec![T::zero(); n] }
    }

    pub fn init(input: usize, hidden: Vec<usize>, output: usize, out_gain: f64, seed: u64) -> Self {
        let mut net = Self::zeros(input, hidden, output);
        let dims = Self::dims(net.input, &net.hidden, net.output);
        let views = layer_views(&dims);
        let mut rng = crate::env::rng_from_seed(seed);
        let last = views.len() - 1;
        for (k, v) in views.iter().enumerate() {
            let gain = if k == last { out_gain } else { HIDDEN_GAIN };
            init_orthogonalish(&mut net.params[v.w..v.w + v.rows * v.cols], v.rows, v.cols, gain, &mut rng);
            // biases stay zero
        }
        net
    }

    fn views(&self) -> Vec<LayerView> {
        layer_views(&Self::dims(self.input, &self.hidden, self.output))
    }

    /// Forward pass without a tape. Returns the raw output layer.
    pub fn infer(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.input, "mlp input width mismatch");
        let views = self.views();
        let last = views.len() - 1;
        let mut cur = x.to_vec();
        for (k, v) in views.iter().enumerate() {
            let mut next = vec![T::zero(); v.rows];
            for i in 0..v.rows {
                let mut acc = self.params[v.b + i];
                let row = &self.params[v.w + i * v.cols..v.w + (i + 1) * v.cols];
                for (wij, xj) in row.iter().zip(&cur) {
                    acc = acc + *wij * *xj;
                }
                next[i] = if k == last { acc } else { acc.tanh() };
            }
            cur = next;
        }
        cur
    }

    /// Tape forward pass; must agree with [`Mlp::infer`] exactly.
    pub fn graph<'p>(&self, tape: &mut Tape<'p, T>, x: Var) -> Var {
        let views = self.views();
        let last = views.len() - 1;
        let mut cur = x;
        for (k, v) in views.iter().enumerate() {
            let z = tape.affine(cur, v.w, v.b, v.rows, v.cols);
            cur = if k == last { z } else { tape.tanh(z) };
        }
        cur
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyArch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
}

/// Actor-critic network: tanh trunk, action-logit head, scalar value head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicyNet<T: Scalar> {
    pub arch: PolicyArch,
    pub params: Vec<T>,
}

impl<T: Scalar> PolicyNet<T> {
    fn trunk_dims(arch: &PolicyArch) -> Vec<usize> {
        let mut dims = Vec::with_capacity(arch.hidden.len() + 1);
        dims.push(arch.input);
        dims.extend_from_slice(&arch.hidden);
        dims
    }

    fn layout(arch: &PolicyArch) -> (Vec<LayerView>, LayerView, LayerView) {
        let dims = Self::trunk_dims(arch);
        let trunk = layer_views(&dims);
        let trunk_params = param_count(&dims);
        let feat = *dims.last().unwrap();
        let policy = LayerView { w: trunk_params, b: trunk_params + arch.actions * feat, rows: arch.actions, cols: feat };
        let after_policy = trunk_params + arch.actions * feat + arch.actions;
        let value = LayerView { w: after_policy, b: after_policy + feat, rows: 1, cols: feat };
        (trunk, policy, value)
    }

    pub fn param_count(arch: &PolicyArch) -> usize {
        let dims = Self::trunk_dims(arch);
        let feat = *dims.last().unwrap();
        param_count(&dims) + (arch.actions * feat + arch.actions) + (feat + 1)
    }

    pub fn zeros(arch: PolicyArch) -> Self {
        assert!(!arch.hidden.is_empty(), "policy trunk needs at least one hidden layer");
        let n = Self::param_count(&arch);
        PolicyNet { arch, params: vec![T::zero(); n] }
    }

    pub fn init(arch: PolicyArch, seed: u64) -> Self {
        let mut net = Self::zeros(arch);
        let (trunk, policy, value) = Self::layout(&net.arch);
        let mut rng = crate::env::rng_from_seed(seed);
        for v in &trunk {
            init_orthogonalish(&mut net.params[v.w..v.w + v.rows * v.cols], v.rows, v.cols, HIDDEN_GAIN, &mut rng);
        }
        init_orthogonalish(
            &mut net.params[policy.w..policy.w + policy.rows * policy.cols],
            policy.rows,
            policy.cols,
            POLICY_HEAD_GAIN,
            &mut rng,
        );
        init_orthogonalish(&mut net.params[value.w..value.w + value.cols], 1, value.cols, 1.0, &mut rng);
        net
    }

    /// Raw forward pass: (action logits, state value).
    pub fn infer(&self, obs: &[T]) -> (Vec<T>, T) {
        assert_eq!(obs.len(), self.arch.input, "policy input width mismatch");
        let (trunk, policy, value) = Self::layout(&self.arch);
        let mut cur = obs.to_vec();
        for v in &trunk {
            let mut next = vec![T::zero(); v.rows];
            for i in 0..v.rows {
                let mut acc = self.params[v.b + i];
                let row = &self.params[v.w + i * v.cols..v.w + (i + 1) * v.cols];
                for (wij, xj) in row.iter().zip(&cur) {
                    acc = acc + *wij * *xj;
                }
                next[i] = acc.tanh();
            }
            cur = next;
        }
        let mut logits = vec![T::zero(); policy.rows];
        for i in 0..policy.rows {
            let mut acc = self.params[policy.b + i];
            let row = &self.params[policy.w + i * policy.cols..policy.w + (i + 1) * policy.cols];
            for (wij, xj) in row.iter().zip(&cur) {
                acc = acc + *wij * *xj;
            }
            logits[i] = acc;
        }
        let mut val = self.params[value.b];
        let row = &self.params[value.w..value.w + value.cols];
        for (wij, xj) in row.iter().zip(&cur) {
            val = val + *wij * *xj;
        }
        (logits, val)
    }

    /// Action distribution (softmax over logits) and state value.
    pub fn forward(&self, obs: &[T]) -> (Vec<T>, T) {
        let (logits, value) = self.infer(obs);
        let mut probs = vec![T::zero(); logits.len()];
        write_softmax(&logits, &mut probs);
        (probs, value)
    }

    /// Tape forward pass: (logits node, length-1 value node).
    pub fn graph<'p>(&self, tape: &mut Tape<'p, T>, x: Var) -> (Var, Var) {
        let (trunk, policy, value) = Self::layout(&self.arch);
        let mut cur = x;
        for v in &trunk {
            let z = tape.affine(cur, v.w, v.b, v.rows, v.cols);
            cur = tape.tanh(z);
        }
        let logits = tape.affine(cur, policy.w, policy.b, policy.rows, policy.cols);
        let val = tape.affine(cur, value.w, value.b, 1, value.cols);
        (logits, val)
    }
}

/// Outputs of the gating network on one observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateOut<T> {
    /// Interpolation weight in (0, 1).
    pub omega: T,
    /// Residual value added on top of the frozen cheater value head.
    pub residual_value: T,
}

/// Network producing the interpolation weight and the residual value.
///
/// Output 0 is the weight logit (passed through a sigmoid), output 1 the
/// residual value. The head is initialized with zero bias and tiny weights so
/// training starts at omega close to 0.5 and residual value close to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GatingNet<T: Scalar> {
    pub net: Mlp<T>,
}

impl<T: Scalar> GatingNet<T> {
    pub fn init(input: usize, hidden: Vec<usize>, seed: u64) -> Self {
        GatingNet { net: Mlp::init(input, hidden, 2, POLICY_HEAD_GAIN, seed) }
    }

    pub fn zeros(input: usize, hidden: Vec<usize>) -> Self {
        GatingNet { net: Mlp::zeros(input, hidden, 2) }
    }

    pub fn infer(&self, obs: &[T]) -> GateOut<T> {
        let out = self.net.infer(obs);
        GateOut { omega: crate::tape::sigmoid(out[0]), residual_value: out[1] }
    }

    /// Tape forward pass: (omega node, residual value node), both length 1.
    pub fn graph<'p>(&self, tape: &mut Tape<'p, T>, x: Var) -> (Var, Var) {
        let out = self.net.graph(tape, x);
        let logit = tape.gather(out, 0);
        let omega = tape.sigmoid(logit);
        let residual = tape.gather(out, 1);
        (omega, residual)
    }
}
