//! Actor and critic networks: tanh MLPs with hand-written backprop.
//!
//! Flat parameter layout (used by the GP, the optimizer and checkpoints):
//! layers in order, each as its weight matrix row-major (`out x in`)
//! followed by its bias; the policy's log-std vector comes last.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::gp::ParamVector;

pub const HIDDEN: [usize; 2] = [64, 64];

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Fully connected network, tanh on hidden layers and identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer activations from a forward pass, input first.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// All-zero network with the given layer widths (`[in, hidden.., out]`).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Orthogonal init: hidden layers with gain sqrt(2), output layer with
    /// `output_gain`, all biases zero.
    pub fn orthogonal<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        let last = mlp.layers.len() - 1;
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            let gain = if i == last { output_gain } else { 2f64.sqrt() };
            layer.weights = orthogonal_matrix(layer.outputs, layer.inputs, gain, rng);
        }
        Ok(mlp)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.activations.pop().unwrap_or_default())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        check_dim(self.input_dim(), x.len())?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(activations.last().unwrap());
            if i != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Accumulates `d(out . grad_out)/d(params)` into `grads` (flat layout).
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.num_params());
        let last = self.layers.len() - 1;
        let mut delta = grad_out.to_vec();
        let mut offset = self.num_params();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            offset -= layer.num_params();
            let input = &cache.activations[i];
            let output = &cache.activations[i + 1];
            if i != last {
                for (d, y) in delta.iter_mut().zip(output) {
                    *d *= 1.0 - y * y;
                }
            }
            let (gw, gb) = grads[offset..offset + layer.num_params()].split_at_mut(layer.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, x) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if i > 0 {
                let mut next = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                delta = next;
            }
        }
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    fn read_flat(&mut self, values: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
    }

    pub fn flatten(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.num_params());
        self.write_flat(&mut v);
        ParamVector(v)
    }

    pub fn unflatten(&mut self, v: &ParamVector) -> Result<()> {
        check_dim(self.num_params(), v.dim())?;
        self.read_flat(&v.0);
        Ok(())
    }
}

fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows < cols { q.transpose() } else { q };
    let mut w = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            w.push(gain * q[(i, j)]);
        }
    }
    w
}

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ActionDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws exactly `dim()` standard normals from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let action: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let e: f64 = rng.sample(StandardNormal);
                m + s * e
            })
            .collect();
        let lp = self.log_prob_unchecked(&action);
        (action, lp)
    }

    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        check_dim(self.dim(), action.len())?;
        Ok(self.log_prob_unchecked(action))
    }

    fn log_prob_unchecked(&self, action: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(action)
            .map(|((m, s), a)| {
                let z = (a - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * LN_2PI
            })
            .sum()
    }
}

/// Gaussian policy: MLP mean head plus a state-independent log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub mlp: Mlp,
    pub log_std: Vec<f64>,
}

impl PolicyNet {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let mlp = Mlp::zeros(sizes)?;
        let log_std = vec![0.0; mlp.output_dim()];
        Ok(Self { mlp, log_std })
    }

    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        Self::with_hidden(state_dim, &HIDDEN, action_dim, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: &[usize],
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = layer_sizes(state_dim, hidden, action_dim);
        let mlp = Mlp::orthogonal(&sizes, 0.01, rng)?;
        Ok(Self {
            mlp,
            log_std: vec![0.0; action_dim],
        })
    }

    pub fn state_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params() + self.log_std.len()
    }

    pub fn forward(&self, state: &[f64]) -> Result<ActionDistribution> {
        Ok(ActionDistribution {
            mean: self.mlp.forward(state)?,
            std: self.log_std.iter().map(|l| l.exp()).collect(),
        })
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        self.forward(state)?.log_prob(action)
    }

    /// Log-probabilities of each `(state, action)` pair together with the
    /// gradient of `sum_t coeffs[t] * log_prob_t` with respect to
    /// [`flatten`](Self::flatten).
    pub fn log_prob_grad(
        &self,
        states: &[&[f64]],
        actions: &[&[f64]],
        coeffs: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(states.len(), coeffs.len())?;
        self.log_prob_grad_by(states, actions, |t, _| coeffs[t])
    }

    /// Like [`log_prob_grad`](Self::log_prob_grad), with each coefficient
    /// computed from the sample index and its log-probability in the same
    /// forward pass.
    pub fn log_prob_grad_by<F>(&self, states: &[&[f64]], actions: &[&[f64]], mut coeff: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: FnMut(usize, f64) -> f64,
    {
        check_dim(states.len(), actions.len())?;
        let n_mlp = self.mlp.num_params();
        let mut grad = vec![0.0; self.num_params()];
        let mut log_probs = Vec::with_capacity(states.len());
        let std: Vec<f64> = self.log_std.iter().map(|l| l.exp()).collect();
        let mut z = vec![0.0; self.action_dim()];
        for (t, (s, a)) in states.iter().zip(actions).enumerate() {
            check_dim(self.action_dim(), a.len())?;
            let cache = self.mlp.forward_cached(s)?;
            let mean = cache.output();
            let mut lp = 0.0;
            for i in 0..mean.len() {
                z[i] = (a[i] - mean[i]) / std[i];
                lp += -0.5 * z[i] * z[i] - self.log_std[i] - 0.5 * LN_2PI;
            }
            log_probs.push(lp);
            let c = coeff(t, lp);
            if c != 0.0 {
                // d/dmean = z / std, d/dlog_std = z^2 - 1
                let grad_mean: Vec<f64> = z.iter().zip(&std).map(|(zi, si)| c * zi / si).collect();
                for (i, zi) in z.iter().enumerate() {
                    grad[n_mlp + i] += c * (zi * zi - 1.0);
                }
                self.mlp.backward(&cache, &grad_mean, &mut grad[..n_mlp]);
            }
        }
        Ok((log_probs, grad))
    }

    pub fn flatten(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.num_params());
        self.mlp.write_flat(&mut v);
        v.extend_from_slice(&self.log_std);
        ParamVector(v)
    }

    pub fn unflatten(&mut self, v: &ParamVector) -> Result<()> {
        check_dim(self.num_params(), v.dim())?;
        let n = self.mlp.num_params();
        self.mlp.read_flat(&v.0[..n]);
        self.log_std.copy_from_slice(&v.0[n..]);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, NetKind::Policy, &self.mlp.sizes(), &self.flatten())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (kind, sizes, params) = read_checkpoint(path)?;
        if kind != NetKind::Policy {
            return Err(Error::Checkpoint(format!("expected policy checkpoint, found {kind:?}")));
        }
        let mut net = Self::zeros(&sizes)?;
        net.unflatten(&params)?;
        Ok(net)
    }
}

/// Scalar state-value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub mlp: Mlp,
}

impl ValueNet {
    pub fn zeros(state_dim: usize, hidden: &[usize]) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::zeros(&layer_sizes(state_dim, hidden, 1))?,
        })
    }

    pub fn new<R: Rng + ?Sized>(state_dim: usize, rng: &mut R) -> Result<Self> {
        Self::with_hidden(state_dim, &HIDDEN, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::orthogonal(&layer_sizes(state_dim, hidden, 1), 1.0, rng)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    pub fn forward(&self, state: &[f64]) -> Result<f64> {
        Ok(self.mlp.forward(state)?[0])
    }

    /// Values of each state and the gradient of `sum_t coeffs[t] * V(s_t)`.
    pub fn value_grad(&self, states: &[&[f64]], coeffs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(states.len(), coeffs.len())?;
        self.value_grad_by(states, |t, _| coeffs[t])
    }

    pub fn value_grad_by<F>(&self, states: &[&[f64]], mut coeff: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: FnMut(usize, f64) -> f64,
    {
        let mut grad = vec![0.0; self.num_params()];
        let mut values = Vec::with_capacity(states.len());
        for (t, s) in states.iter().enumerate() {
            let cache = self.mlp.forward_cached(s)?;
            let v = cache.output()[0];
            values.push(v);
            let c = coeff(t, v);
            if c != 0.0 {
                self.mlp.backward(&cache, &[c], &mut grad);
            }
        }
        Ok((values, grad))
    }

    pub fn flatten(&self) -> ParamVector {
        self.mlp.flatten()
    }

    pub fn unflatten(&mut self, v: &ParamVector) -> Result<()> {
        self.mlp.unflatten(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, NetKind::Value, &self.mlp.sizes(), &self.flatten())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (kind, sizes, params) = read_checkpoint(path)?;
        if kind != NetKind::Value {
            return Err(Error::Checkpoint(format!("expected value checkpoint, found {kind:?}")));
        }
        let mut mlp = Mlp::zeros(&sizes)?;
        mlp.unflatten(&params)?;
        Ok(Self { mlp })
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

pub const CHECKPOINT_MAGIC: &str = "gppo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Policy,
    Value,
}

impl NetKind {
    fn as_str(self) -> &'static str {
        match self {
            NetKind::Policy => "policy",
            NetKind::Value => "value",
        }
    }
}

/// Text checkpoint:
///
/// ```text
/// gppo-checkpoint 1
/// kind policy
/// sizes 3 64 64 1
/// dim 4610
/// <dim lines, one f64 each, shortest round-trip decimal>
/// ```
///
/// `dim` covers the flat layout; for a policy that includes the trailing
/// log-std entries (one per output).
pub fn write_checkpoint(path: &Path, kind: NetKind, sizes: &[usize], params: &ParamVector) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(w, "kind {}", kind.as_str())?;
    let sizes: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
    writeln!(w, "sizes {}", sizes.join(" "))?;
    writeln!(w, "dim {}", params.dim())?;
    for v in &params.0 {
        writeln!(w, "{v:?}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(NetKind, Vec<usize>, ParamVector)> {
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let mut header = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))??;
        line.strip_prefix(key)
            .map(|rest| rest.trim().to_string())
            .ok_or_else(|| bad(&format!("expected `{key}` line")))
    };
    let version = header(CHECKPOINT_MAGIC)?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(bad(&format!("unsupported layout version {version}")));
    }
    let kind = match header("kind")?.as_str() {
        "policy" => NetKind::Policy,
        "value" => NetKind::Value,
        other => return Err(bad(&format!("unknown kind {other}"))),
    };
    let sizes = header("sizes")?
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad size")))
        .collect::<Result<Vec<_>>>()?;
    let dim: usize = header("dim")?.parse().map_err(|_| bad("bad dim"))?;
    let mut values = Vec::with_capacity(dim);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        values.push(line.trim().parse::<f64>().map_err(|_| bad("bad value"))?);
    }
    if values.len() != dim {
        return Err(bad(&format!("expected {dim} values, found {}", values.len())));
    }
    Ok((kind, sizes, ParamVector(values)))
}
