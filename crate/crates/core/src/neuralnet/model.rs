use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Layout};
use super::tensor::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to probabilities inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
}

/// Stack of stride-1, length-preserving 1-D convolutions with ReLU, followed
/// by a linear layer with sigmoid outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_len: usize,
    pub conv: Vec<ConvSpec>,
    pub outputs: usize,
}

impl Architecture {
    /// Four conv layers (1→128→256→128→64, kernels 5/3/3/3) and a linear
    /// read-out to one logit per line.
    pub fn table1(input_len: usize, outputs: usize) -> Self {
        Self::from_channels(input_len, &[(128, 5), (256, 3), (128, 3), (64, 3)], outputs)
    }

    /// Builds a length-preserving conv stack from `(out_channels, kernel)`.
    pub fn from_channels(input_len: usize, layers: &[(usize, usize)], outputs: usize) -> Self {
        let mut in_channels = 1;
        let conv = layers
            .iter()
            .map(|&(out_channels, kernel)| {
                let spec = ConvSpec {
                    in_channels,
                    out_channels,
                    kernel,
                    padding: kernel.saturating_sub(1) / 2,
                };
                in_channels = out_channels;
                spec
            })
            .collect();
        Self {
            input_len,
            conv,
            outputs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.outputs == 0 || self.conv.is_empty() {
            return Err(Error::ShapeMismatch(format!("degenerate architecture {self:?}")));
        }
        let mut channels = 1;
        for (i, c) in self.conv.iter().enumerate() {
            if c.in_channels != channels || c.out_channels == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "conv layer {i} expects {} input channels, previous layer gives {channels}",
                    c.in_channels
                )));
            }
            if c.kernel % 2 == 0 || c.padding * 2 + 1 != c.kernel {
                return Err(Error::ShapeMismatch(format!(
                    "conv layer {i}: kernel {} with padding {} does not preserve length",
                    c.kernel, c.padding
                )));
            }
            channels = c.out_channels;
        }
        Ok(())
    }

    pub fn flat_features(&self) -> usize {
        self.conv.last().map_or(0, |c| c.out_channels) * self.input_len
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.conv.len() {
            names.push(format!("conv{i}.weight"));
            names.push(format!("conv{i}.bias"));
        }
        names.push("linear.weight".into());
        names.push("linear.bias".into());
        names
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for c in &self.conv {
            shapes.push(vec![c.out_channels, c.in_channels, c.kernel]);
            shapes.push(vec![c.out_channels]);
        }
        shapes.push(vec![self.outputs, self.flat_features()]);
        shapes.push(vec![self.outputs]);
        shapes
    }

    fn fan_ins(&self) -> Vec<usize> {
        let mut fans = Vec::new();
        for c in &self.conv {
            fans.push(c.in_channels * c.kernel);
            fans.push(c.in_channels * c.kernel);
        }
        fans.push(self.flat_features());
        fans.push(self.flat_features());
        fans
    }
}

/// Fixed per-feature input map `(z - shift) / scale`, fitted once on
/// training data and carried with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    /// Feature-wise mean and population standard deviation. Constant
    /// features get scale 1.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        for row in rows {
            if n == 0 {
                mean = vec![0.0; row.len()];
                m2 = vec![0.0; row.len()];
            } else if row.len() != mean.len() {
                return Err(Error::ShapeMismatch(format!(
                    "input rows of length {} and {}",
                    mean.len(),
                    row.len()
                )));
            }
            n += 1;
            // Welford
            for ((mu, s), &v) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
                let d = v - *mu;
                *mu += d / n as f64;
                *s += d * (v - *mu);
            }
        }
        if n == 0 {
            return Err(Error::InvalidConfig("cannot fit an input map on no rows".into()));
        }
        let scale = m2
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Ok(Self { shift: mean, scale })
    }

    pub fn identity(len: usize) -> Self {
        Self {
            shift: vec![0.0; len],
            scale: vec![1.0; len],
        }
    }

    pub fn apply(&self, inputs: &[f64]) -> Vec<f64> {
        let len = self.shift.len();
        inputs
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.shift[i % len]) / self.scale[i % len])
            .collect()
    }

    fn validate(&self, len: usize) -> Result<()> {
        if self.shift.len() != len || self.scale.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "input map covers {} / {} features, model expects {len}",
                self.shift.len(),
                self.scale.len()
            )));
        }
        if self.shift.iter().chain(&self.scale).any(|v| !v.is_finite())
            || self.scale.iter().any(|&v| v <= 0.0)
        {
            return Err(Error::InvalidConfig("input map must be finite with positive scales".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub arch: Architecture,
    pub params: ParamSet,
    /// Applied to raw inputs before the first convolution.
    pub input_norm: Option<InputNorm>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    batch: usize,
    /// im2col buffers, one per conv layer: `(in_channels * kernel) x (batch * len)`.
    cols: Vec<Vec<f64>>,
    /// Post-ReLU outputs per conv layer, laid out `[channel][batch * len]`.
    acts: Vec<Vec<f64>>,
    /// Linear input, `batch x flat_features`.
    flat: Vec<f64>,
    /// Sigmoid outputs, `batch x outputs`.
    pub probs: Vec<f64>,
}

impl CnnModel {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = arch
            .param_shapes()
            .iter()
            .zip(arch.fan_ins())
            .map(|(shape, fan)| {
                let bound = 1.0 / (fan as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::from_vec(shape, data).expect("shape matches")
            })
            .collect();
        Ok(Self {
            arch,
            params: ParamSet(tensors),
            input_norm: None,
        })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let tensors = arch.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Self {
            arch,
            params: ParamSet(tensors),
            input_norm: None,
        })
    }

    pub fn from_params(arch: Architecture, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.param_shapes();
        if params.0.len() != shapes.len()
            || params.0.iter().zip(&shapes).any(|(t, s)| t.shape() != s.as_slice())
        {
            return Err(Error::ShapeMismatch(
                "parameter tensors do not match the architecture".into(),
            ));
        }
        Ok(Self {
            arch,
            params,
            input_norm: None,
        })
    }

    pub fn set_input_norm(&mut self, norm: Option<InputNorm>) -> Result<()> {
        if let Some(n) = &norm {
            n.validate(self.arch.input_len)?;
        }
        self.input_norm = norm;
        Ok(())
    }

    fn check_input(&self, inputs: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || inputs.len() != batch * self.arch.input_len {
            return Err(Error::ShapeMismatch(format!(
                "expected {batch} inputs of length {}, got {} values",
                self.arch.input_len,
                inputs.len()
            )));
        }
        Ok(())
    }

    /// Output probabilities, `batch x outputs`, for `batch` inputs laid out
    /// row-major.
    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward_cached(inputs, batch)?.probs)
    }

    pub fn forward_cached(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        self.check_input(inputs, batch)?;
        let normed;
        let inputs = match &self.input_norm {
            Some(n) => {
                normed = n.apply(inputs);
                &normed[..]
            }
            None => inputs,
        };
        let len = self.arch.input_len;
        let width = batch * len;
        let mut cols = Vec::with_capacity(self.arch.conv.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.arch.conv.len());
        for (i, spec) in self.arch.conv.iter().enumerate() {
            let input = if i == 0 { inputs } else { &acts[i - 1] };
            let (col, mut out) = conv1d_forward(
                input,
                spec,
                self.params.0[2 * i].data(),
                self.params.0[2 * i + 1].data(),
                batch,
                len,
            );
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            cols.push(col);
            acts.push(out);
        }

        let last = acts.last().expect("at least one conv layer");
        let channels = self.arch.conv.last().expect("validated").out_channels;
        let features = self.arch.flat_features();
        let mut flat = vec![0.0; batch * features];
        for c in 0..channels {
            for b in 0..batch {
                let src = &last[c * width + b * len..c * width + (b + 1) * len];
                flat[b * features + c * len..b * features + (c + 1) * len].copy_from_slice(src);
            }
        }

        let outputs = self.arch.outputs;
        let weight = self.params.0[2 * self.arch.conv.len()].data();
        let bias = self.params.0[2 * self.arch.conv.len() + 1].data();
        let mut logits = vec![0.0; batch * outputs];
        for row in logits.chunks_exact_mut(outputs) {
            row.copy_from_slice(bias);
        }
        gemm(
            &flat,
            Layout::row_major(batch, features),
            weight,
            Layout::row_major(outputs, features).t(),
            1.0,
            &mut logits,
            Layout::row_major(batch, outputs),
        );
        let probs: Vec<f64> = logits.iter().map(|&v| sigmoid(v)).collect();
        debug_assert!(probs.iter().all(|p| p.is_finite()), "non-finite forward output");
        Ok(ForwardCache {
            batch,
            cols,
            acts,
            flat,
            probs,
        })
    }

    /// Mean binary cross-entropy and its gradient for a batch; `weight_decay`
    /// adds `λ w` to every parameter gradient (the loss value excludes it).
    pub fn loss_and_gradient(
        &self,
        inputs: &[f64],
        labels: &[f64],
        batch: usize,
        weight_decay: f64,
    ) -> Result<(f64, ParamSet)> {
        let cache = self.forward_cached(inputs, batch)?;
        let loss = bce_loss(&cache.probs, labels)?;
        let mut grads = self.backward(&cache, labels)?;
        if weight_decay != 0.0 {
            grads.add_scaled(weight_decay, &self.params);
        }
        Ok((loss, grads))
    }

    /// Backpropagates the fused sigmoid + mean BCE loss.
    pub fn backward(&self, cache: &ForwardCache, labels: &[f64]) -> Result<ParamSet> {
        let batch = cache.batch;
        let outputs = self.arch.outputs;
        if labels.len() != batch * outputs {
            return Err(Error::ShapeMismatch(format!(
                "expected {} labels, got {}",
                batch * outputs,
                labels.len()
            )));
        }
        let len = self.arch.input_len;
        let width = batch * len;
        let features = self.arch.flat_features();
        let n_conv = self.arch.conv.len();
        let mut grads = self.params.zeros_like();

        let norm = 1.0 / (batch * outputs) as f64;
        let dlogits: Vec<f64> = cache
            .probs
            .iter()
            .zip(labels)
            .map(|(p, y)| (p - y) * norm)
            .collect();

        // linear layer
        gemm(
            &dlogits,
            Layout::row_major(batch, outputs).t(),
            &cache.flat,
            Layout::row_major(batch, features),
            0.0,
            grads.0[2 * n_conv].data_mut(),
            Layout::row_major(outputs, features),
        );
        {
            let db = grads.0[2 * n_conv + 1].data_mut();
            for row in dlogits.chunks_exact(outputs) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let mut dflat = vec![0.0; batch * features];
        gemm(
            &dlogits,
            Layout::row_major(batch, outputs),
            self.params.0[2 * n_conv].data(),
            Layout::row_major(outputs, features),
            0.0,
            &mut dflat,
            Layout::row_major(batch, features),
        );
        let channels = self.arch.conv[n_conv - 1].out_channels;
        let mut dact = vec![0.0; channels * width];
        for c in 0..channels {
            for b in 0..batch {
                dact[c * width + b * len..c * width + (b + 1) * len]
                    .copy_from_slice(&dflat[b * features + c * len..b * features + (c + 1) * len]);
            }
        }

        for i in (0..n_conv).rev() {
            let spec = &self.arch.conv[i];
            let k = spec.in_channels * spec.kernel;
            // through ReLU
            for (d, a) in dact.iter_mut().zip(&cache.acts[i]) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            gemm(
                &dact,
                Layout::row_major(spec.out_channels, width),
                &cache.cols[i],
                Layout::row_major(k, width).t(),
                0.0,
                grads.0[2 * i].data_mut(),
                Layout::row_major(spec.out_channels, k),
            );
            {
                let db = grads.0[2 * i + 1].data_mut();
                for (d, row) in db.iter_mut().zip(dact.chunks_exact(width)) {
                    *d = row.iter().sum();
                }
            }
            if i > 0 {
                let mut dcols = vec![0.0; k * width];
                gemm(
                    self.params.0[2 * i].data(),
                    Layout::row_major(spec.out_channels, k).t(),
                    &dact,
                    Layout::row_major(spec.out_channels, width),
                    0.0,
                    &mut dcols,
                    Layout::row_major(k, width),
                );
                dact = col2im(&dcols, spec, batch, len);
            }
        }
        debug_assert!(grads.is_finite(), "non-finite gradient");
        Ok(grads)
    }
}

/// Pre-activation convolution output `[out_channels][batch * len]` together
/// with the im2col buffer it was computed from.
pub(crate) fn conv1d_forward(
    input: &[f64],
    spec: &ConvSpec,
    weight: &[f64],
    bias: &[f64],
    batch: usize,
    len: usize,
) -> (Vec<f64>, Vec<f64>) {
    let width = batch * len;
    let col = im2col(input, spec, batch, len);
    let mut out = vec![0.0; spec.out_channels * width];
    for (row, b) in out.chunks_exact_mut(width).zip(bias) {
        row.fill(*b);
    }
    let k = spec.in_channels * spec.kernel;
    gemm(
        weight,
        Layout::row_major(spec.out_channels, k),
        &col,
        Layout::row_major(k, width),
        1.0,
        &mut out,
        Layout::row_major(spec.out_channels, width),
    );
    (col, out)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `cols[(ci * k + kk)][b * len + t] = input[ci][b * len + t + kk - pad]`,
/// zero outside the sequence.
fn im2col(input: &[f64], spec: &ConvSpec, batch: usize, len: usize) -> Vec<f64> {
    let width = batch * len;
    let k = spec.kernel;
    let pad = spec.padding as isize;
    let mut cols = vec![0.0; spec.in_channels * k * width];
    for ci in 0..spec.in_channels {
        let chan = &input[ci * width..(ci + 1) * width];
        for kk in 0..k {
            let shift = kk as isize - pad;
            let row = &mut cols[(ci * k + kk) * width..(ci * k + kk + 1) * width];
            let (lo, hi) = valid_range(shift, len);
            for b in 0..batch {
                let base = b * len;
                let src = (base as isize + lo as isize + shift) as usize;
                row[base + lo..base + hi].copy_from_slice(&chan[src..src + (hi - lo)]);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], spec: &ConvSpec, batch: usize, len: usize) -> Vec<f64> {
    let width = batch * len;
    let k = spec.kernel;
    let pad = spec.padding as isize;
    let mut out = vec![0.0; spec.in_channels * width];
    for ci in 0..spec.in_channels {
        let chan = &mut out[ci * width..(ci + 1) * width];
        for kk in 0..k {
            let shift = kk as isize - pad;
            let row = &cols[(ci * k + kk) * width..(ci * k + kk + 1) * width];
            let (lo, hi) = valid_range(shift, len);
            for b in 0..batch {
                let base = b * len;
                let dst = (base as isize + lo as isize + shift) as usize;
                for (d, s) in chan[dst..dst + (hi - lo)].iter_mut().zip(&row[base + lo..base + hi]) {
                    *d += s;
                }
            }
        }
    }
    out
}

/// Output positions `t` in `[lo, hi)` for which `t + shift` is inside `[0, len)`.
fn valid_range(shift: isize, len: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Mean over samples and outputs of `-[y ln p + (1 - y) ln(1 - p)]` with `p`
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}
