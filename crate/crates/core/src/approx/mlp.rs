use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, SimRng};

/// Fully connected network: ReLU on hidden layers, identity on the output.
///
/// All weights and biases live in one flat vector so that optimizers and
/// target-network copies work on a single slice. Layer `l` stores its
/// `out x in` weight matrix row-major, followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

fn num_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::invalid(format!(
                "layer sizes must have >= 2 positive entries, got {layer_sizes:?}"
            )));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params: vec![0.0; num_params(layer_sizes)],
        })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization of weights and biases.
    pub fn init(layer_sizes: &[usize], rng: &mut SimRng) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let mut off = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, out) = (w[0], w[1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            for p in &mut net.params[off..off + out * fan_in + out] {
                *p = rng.random_range(-bound..bound);
            }
            off += out * fan_in + out;
        }
        Ok(net)
    }

    /// Builds a network from per-layer row-major weights and biases.
    pub fn from_layers(layer_sizes: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::DimensionMismatch {
                context: "mlp layer count",
                expected: layers,
                got: weights.len().min(biases.len()),
            });
        }
        let mut off = 0;
        for (l, w) in layer_sizes.windows(2).enumerate() {
            let (fan_in, out) = (w[0], w[1]);
            if weights[l].len() != out * fan_in || biases[l].len() != out {
                return Err(Error::DimensionMismatch {
                    context: "mlp layer shape",
                    expected: out * fan_in,
                    got: weights[l].len(),
                });
            }
            net.params[off..off + out * fan_in].copy_from_slice(&weights[l]);
            net.params[off + out * fan_in..off + out * fan_in + out].copy_from_slice(&biases[l]);
            off += out * fan_in + out;
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("mlp parameters must be finite"));
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("nonempty layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `(weights, biases)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let mut off = 0;
        for w in self.layer_sizes.windows(2).take(l) {
            off += w[1] * w[0] + w[1];
        }
        let (fan_in, out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        (
            &self.params[off..off + out * fan_in],
            &self.params[off + out * fan_in..off + out * fan_in + out],
        )
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(self.forward_batch(input, 1))
    }

    /// Forward pass over `rows` inputs stored contiguously; returns `rows x out`.
    pub fn forward_batch(&self, inputs: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(inputs.len(), rows * self.input_dim());
        let last = self.layer_sizes.len() - 2;
        let mut act = inputs.to_vec();
        let mut off = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let next = self.affine(off, w[0], w[1], &act, rows, l < last);
            off += w[1] * w[0] + w[1];
            act = next;
        }
        act
    }

    fn affine(&self, off: usize, fan_in: usize, out: usize, input: &[f64], rows: usize, relu: bool) -> Vec<f64> {
        let w = &self.params[off..off + out * fan_in];
        let b = &self.params[off + out * fan_in..off + out * fan_in + out];
        let mut z = vec![0.0; rows * out];
        for r in 0..rows {
            let x = &input[r * fan_in..(r + 1) * fan_in];
            let zr = &mut z[r * out..(r + 1) * out];
            for o in 0..out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(x) {
                    acc += wi * xi;
                }
                zr[o] = if relu && acc < 0.0 { 0.0 } else { acc };
            }
        }
        z
    }

    /// Reverse-mode gradient of a loss given through its output derivative.
    ///
    /// `output_grad` receives the `rows x out` network outputs and must return
    /// `(loss, dloss/doutput)` of the same shape.
    pub fn backprop<F>(&self, inputs: &[f64], rows: usize, output_grad: F) -> (f64, Vec<f64>)
    where
        F: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        let layers = self.layer_sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(off);
            off += w[1] * w[0] + w[1];
        }
        // acts[l] is the input to layer l; acts[layers] is the output.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        acts.push(inputs.to_vec());
        for l in 0..layers {
            let (fan_in, out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let next = self.affine(offsets[l], fan_in, out, &acts[l], rows, l + 1 < layers);
            acts.push(next);
        }
        let (loss, mut delta) = output_grad(&acts[layers]);
        debug_assert_eq!(delta.len(), acts[layers].len());

        let mut grads = vec![0.0; self.params.len()];
        for l in (0..layers).rev() {
            let (fan_in, out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            let w = &self.params[off..off + out * fan_in];
            let (gw, gb) = grads[off..off + out * fan_in + out].split_at_mut(out * fan_in);
            let prev = &acts[l];
            let mut dprev = if l > 0 { vec![0.0; rows * fan_in] } else { Vec::new() };
            for r in 0..rows {
                let x = &prev[r * fan_in..(r + 1) * fan_in];
                for o in 0..out {
                    let d = delta[r * out + o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, xi) in grow.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                    if l > 0 {
                        let wrow = &w[o * fan_in..(o + 1) * fan_in];
                        let dp = &mut dprev[r * fan_in..(r + 1) * fan_in];
                        for (dpi, wi) in dp.iter_mut().zip(wrow) {
                            *dpi += d * wi;
                        }
                    }
                }
            }
            if l > 0 {
                // ReLU derivative: the stored activation is positive iff the unit was active.
                for (dp, a) in dprev.iter_mut().zip(prev) {
                    if *a <= 0.0 {
                        *dp = 0.0;
                    }
                }
                delta = dprev;
            }
        }
        (loss, grads)
    }

    /// Mean over rows of the squared Euclidean output error, and its gradient.
    pub fn mse_grad(&self, inputs: &[f64], targets: &[f64], rows: usize) -> (f64, Vec<f64>) {
        assert!(rows > 0, "mse_grad needs a nonempty batch");
        debug_assert_eq!(targets.len(), rows * self.output_dim());
        self.backprop(inputs, rows, |out| {
            let scale = 1.0 / rows as f64;
            let mut loss = 0.0;
            let grad = out
                .iter()
                .zip(targets)
                .map(|(o, t)| {
                    let e = o - t;
                    loss += e * e;
                    2.0 * e * scale
                })
                .collect();
            (loss * scale, grad)
        })
    }

    /// `(1/B) sum_j (out_j[col_j] - target_j)^2` and its gradient; only the
    /// selected output of each row carries error.
    pub fn selected_mse_grad(&self, inputs: &[f64], cols: &[usize], targets: &[f64]) -> (f64, Vec<f64>) {
        let rows = cols.len();
        assert!(rows > 0, "selected_mse_grad needs a nonempty batch");
        let width = self.output_dim();
        self.backprop(inputs, rows, |out| {
            let scale = 1.0 / rows as f64;
            let mut loss = 0.0;
            let mut grad = vec![0.0; out.len()];
            for (r, (&c, &t)) in cols.iter().zip(targets).enumerate() {
                let e = out[r * width + c] - t;
                loss += e * e;
                grad[r * width + c] = 2.0 * e * scale;
            }
            (loss * scale, grad)
        })
    }

    pub fn mse(&self, inputs: &[f64], targets: &[f64], rows: usize) -> f64 {
        let out = self.forward_batch(inputs, rows);
        out.iter().zip(targets).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / rows as f64
    }

    pub fn to_file(&self, metadata: serde_json::Value) -> MlpFile {
        let layers = self.layer_sizes.len() - 1;
        MlpFile {
            layer_sizes: self.layer_sizes.clone(),
            weights: (0..layers).map(|l| self.layer(l).0.to_vec()).collect(),
            biases: (0..layers).map(|l| self.layer(l).1.to_vec()).collect(),
            metadata,
        }
    }

    pub fn save(&self, path: &Path, metadata: serde_json::Value) -> Result<()> {
        io::write_json(path, &self.to_file(metadata))
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let text = io::read_to_string(path)?;
        let file: MlpFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        file.into_mlp()
    }
}

/// On-disk network: layer sizes, row-major weights, biases, free-form metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpFile {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl MlpFile {
    pub fn into_mlp(self) -> Result<(Mlp, serde_json::Value)> {
        let net = Mlp::from_layers(&self.layer_sizes, &self.weights, &self.biases)?;
        Ok((net, self.metadata))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch Adam on the mean squared error. Epoch `e` shuffles with its own
/// stream derived from `cfg.seed`.
pub fn fit_mlp(net0: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>], cfg: &MlpTrainConfig) -> Result<(Mlp, FitTrace)> {
    if inputs.is_empty() {
        return Err(Error::invalid("fit_mlp needs a nonempty dataset"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "fit_mlp rows",
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let (din, dout) = (net0.input_dim(), net0.output_dim());
    if inputs.iter().any(|x| x.len() != din) || targets.iter().any(|y| y.len() != dout) {
        return Err(Error::DimensionMismatch {
            context: "fit_mlp sample width",
            expected: din,
            got: inputs[0].len(),
        });
    }
    let flat_x: Vec<f64> = inputs.iter().flatten().copied().collect();
    let flat_y: Vec<f64> = targets.iter().flatten().copied().collect();
    let rows = inputs.len();
    let initial_mse = net0.mse(&flat_x, &flat_y, rows);

    let mut net = net0.clone();
    let mut adam = AdamState::new(net.num_params(), AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..rows).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut bx = Vec::with_capacity(cfg.batch_size * din);
    let mut by = Vec::with_capacity(cfg.batch_size * dout);
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&inputs[i]);
                by.extend_from_slice(&targets[i]);
            }
            let (loss, grads) = net.mse_grad(&bx, &by, chunk.len());
            adam.step(net.params_mut(), &grads)?;
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let final_mse = net.mse(&flat_x, &flat_y, rows);
    Ok((
        net,
        FitTrace {
            initial_mse,
            final_mse,
            epoch_losses,
        },
    ))
}
