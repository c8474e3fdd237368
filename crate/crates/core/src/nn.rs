//! Small dense networks: batched forward pass, analytic backprop, Adam and
//! Polyak averaging.
//!
//! Matrices are row-major `Vec<f64>`. A batch of `B` inputs of width `n` is a
//! `B × n` matrix. Layer weights are `n_out × n_in`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    Tanh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out × n_in`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Multi-layer perceptron with tanh hidden units.
#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<Layer>,
    output: OutputActivation,
    /// Bumped on every parameter change; caches remember the value they
    /// were computed at.
    generation: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.output == other.output
    }
}

/// Activations saved by a forward pass, consumed by [`DenseNet::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    batch: usize,
    input: Vec<f64>,
    /// Post-activation output of every layer.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("network has at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients plus the gradient with respect to the input batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// `B × n_in`.
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// `C = A · B` for strided `A (m × k)` and `B (k × n)`, row-major `C`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
) {
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= last(m, k, a_strides));
    assert!(b.len() >= last(k, n, b_strides));
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl DenseNet {
    /// Builds a network from explicit layers.
    pub fn from_layers(layers: Vec<Layer>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Architecture("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::Architecture(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && layers[i - 1].n_out != l.n_in {
                return Err(Error::Architecture(format!("layer {i} does not chain")));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(Self { layers, output, generation: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.n_out)).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mutable access to the raw parameters. Invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    fn check_batch(&self, input: &[f64], batch: usize) -> Result<()> {
        let expected = batch * self.input_dim();
        if input.len() != expected {
            return Err(Error::Dimension { expected, actual: input.len() });
        }
        Ok(())
    }

    fn layer_forward(&self, idx: usize, x: &[f64], batch: usize) -> Vec<f64> {
        let l = &self.layers[idx];
        let mut z = vec![0.0; batch * l.n_out];
        gemm(batch, l.n_in, l.n_out, x, (l.n_in, 1), &l.weights, (1, l.n_in), &mut z);
        let last = idx + 1 == self.layers.len();
        let tanh = !last || self.output == OutputActivation::Tanh;
        for row in z.chunks_exact_mut(l.n_out) {
            for (v, b) in row.iter_mut().zip(&l.bias) {
                *v += b;
                if tanh {
                    *v = v.tanh();
                }
            }
        }
        z
    }

    /// Forward pass over `batch` row-major inputs, keeping activations.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_batch(input, batch)?;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let x = if i == 0 { input } else { &activations[i - 1] };
            let a = self.layer_forward(i, x, batch);
            activations.push(a);
        }
        let out = activations.last().unwrap().clone();
        Ok((
            out,
            ForwardCache { generation: self.generation, batch, input: input.to_vec(), activations },
        ))
    }

    /// Forward pass without keeping activations.
    pub fn predict_batch(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_batch(input, batch)?;
        let mut x = self.layer_forward(0, input, batch);
        for i in 1..self.layers.len() {
            x = self.layer_forward(i, &x, batch);
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_batch(input, 1)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.predict_batch(input, 1)
    }

    /// Gradients of `Σ output ⊙ grad_output` with respect to every parameter
    /// and to the input batch.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Result<Gradients> {
        if cache.generation != self.generation || cache.activations.len() != self.layers.len() {
            return Err(Error::StaleCache { net: self.generation, cache: cache.generation });
        }
        let batch = cache.batch;
        let expected = batch * self.output_dim();
        if grad_output.len() != expected {
            return Err(Error::Dimension { expected, actual: grad_output.len() });
        }
        let n_layers = self.layers.len();
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(n_layers);
        let mut upstream = grad_output.to_vec();
        for idx in (0..n_layers).rev() {
            let l = &self.layers[idx];
            let out = &cache.activations[idx];
            let tanh = idx + 1 < n_layers || self.output == OutputActivation::Tanh;
            // delta = upstream ⊙ σ'(z)
            let delta: Vec<f64> = if tanh {
                upstream.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect()
            } else {
                upstream
            };
            let x = if idx == 0 { &cache.input } else { &cache.activations[idx - 1] };
            let mut gw = vec![0.0; l.n_out * l.n_in];
            // dW = deltaᵀ · X
            gemm(l.n_out, batch, l.n_in, &delta, (1, l.n_out), x, (l.n_in, 1), &mut gw);
            let mut gb = vec![0.0; l.n_out];
            for row in delta.chunks_exact(l.n_out) {
                for (acc, d) in gb.iter_mut().zip(row) {
                    *acc += d;
                }
            }
            // dX = delta · W
            let mut gx = vec![0.0; batch * l.n_in];
            gemm(batch, l.n_out, l.n_in, &delta, (l.n_out, 1), &l.weights, (l.n_in, 1), &mut gx);
            grads.push(LayerGrad { weights: gw, bias: gb });
            upstream = gx;
        }
        grads.reverse();
        Ok(Gradients { layers: grads, input: upstream })
    }

    fn same_architecture(&self, other: &DenseNet) -> bool {
        self.output == other.output
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.n_in == b.n_in && a.n_out == b.n_out)
    }

    fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Writes a versioned text checkpoint.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        let act = match self.output {
            OutputActivation::Linear => "linear",
            OutputActivation::Tanh => "tanh",
        };
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(s, "output {act}").unwrap();
        writeln!(s, "layers {}", self.layers.len()).unwrap();
        for l in &self.layers {
            writeln!(s, "layer {} {}", l.n_in, l.n_out).unwrap();
            for values in [&l.weights, &l.bias] {
                let line: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
                writeln!(s, "{}", line.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing or unsupported header"));
        }
        let output = match lines.next() {
            Some("output linear") => OutputActivation::Linear,
            Some("output tanh") => OutputActivation::Tanh,
            _ => return Err(bad("bad output activation line")),
        };
        let n_layers: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("layers "))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad("bad layer count"))?;
        let parse_values = |line: Option<&str>, n: usize| -> Result<Vec<f64>> {
            let line = line.ok_or_else(|| bad("truncated"))?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(bad("wrong number of values"));
            }
            Ok(v)
        };
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let header = lines.next().ok_or_else(|| bad("truncated"))?;
            let dims: Vec<usize> = header
                .strip_prefix("layer ")
                .ok_or_else(|| bad("bad layer header"))?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad layer dims")))
                .collect::<Result<_>>()?;
            let [n_in, n_out] = dims[..] else {
                return Err(bad("bad layer dims"));
            };
            let weights = parse_values(lines.next(), n_in * n_out)?;
            let bias = parse_values(lines.next(), n_out)?;
            layers.push(Layer { n_in, n_out, weights, bias });
        }
        DenseNet::from_layers(layers, output)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}

pub const CHECKPOINT_MAGIC: &str = "goalrl-densenet v1";

/// Random initialization.
///
/// Hidden weights are `U(-1/√fan_in, 1/√fan_in)` and hidden biases zero.
/// The last layer draws from the same distribution scaled by `1e-3`, with
/// every bias set to `output_bias`, so the initial output is close to that
/// constant for any input.
pub fn init_net(
    dims: &[usize],
    output: OutputActivation,
    rng: &mut Rng,
    output_bias: f64,
) -> Result<DenseNet> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Architecture(format!("invalid layer widths {dims:?}")));
    }
    let n_layers = dims.len() - 1;
    let layers = (0..n_layers)
        .map(|i| {
            let (n_in, n_out) = (dims[i], dims[i + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let last = i + 1 == n_layers;
            let scale = if last { 1e-3 } else { 1.0 };
            let weights =
                (0..n_in * n_out).map(|_| scale * rng.random_range(-bound..=bound)).collect();
            let bias = vec![if last { output_bias } else { 0.0 }; n_out];
            Layer { n_in, n_out, weights, bias }
        })
        .collect();
    DenseNet::from_layers(layers, output)
}

/// Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// Per layer: weights then bias.
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `net`, with `β1 = 0.9`, `β2 = 0.999`,
    /// `ε = 1e-8`.
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let shapes: Vec<Vec<f64>> = net
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]])
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.clone(),
            second: shapes,
        }
    }
}

/// One bias-corrected Adam descent step.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != net.layers.len() || state.first.len() != 2 * net.layers.len() {
        return Err(Error::Architecture("gradient/optimizer shape mismatch".into()));
    }
    for (i, (l, g)) in net.layers.iter().zip(&grads.layers).enumerate() {
        if g.weights.len() != l.weights.len()
            || g.bias.len() != l.bias.len()
            || state.first[2 * i].len() != l.weights.len()
        {
            return Err(Error::Architecture(format!("layer {i} gradient shape mismatch")));
        }
    }
    state.step += 1;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.learning_rate);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let layers = net.layers_mut();
    for (i, (l, g)) in layers.iter_mut().zip(&grads.layers).enumerate() {
        for (j, (params, grad)) in [(&mut l.weights, &g.weights), (&mut l.bias, &g.bias)]
            .into_iter()
            .enumerate()
        {
            let m = &mut state.first[2 * i + j];
            let v = &mut state.second[2 * i + j];
            for k in 0..params.len() {
                let gk = grad[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    if !net.all_finite() {
        return Err(Error::NonFinite("network parameters after Adam step"));
    }
    Ok(())
}

/// `target ← τ·target + (1 − τ)·source`, elementwise. `τ` is the fraction of
/// the target that is retained.
pub fn polyak_update(target: &mut DenseNet, source: &DenseNet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
    }
    if !target.same_architecture(source) {
        return Err(Error::Architecture("polyak update between different architectures".into()));
    }
    if tau == 1.0 {
        return Ok(());
    }
    for (t, s) in target.layers_mut().iter_mut().zip(&source.layers) {
        for (tv, sv) in t.weights.iter_mut().zip(&s.weights).chain(t.bias.iter_mut().zip(&s.bias)) {
            *tv = tau * *tv + (1.0 - tau) * sv;
        }
    }
    Ok(())
}
