//! Discrete-time LIF classifier trained with surrogate-gradient BPTT.
//!
//! Each layer computes, per time step,
//!
//! ```text
//! U[t] = beta * U[t-1] + W x[t] + b - theta * S[t-1]
//! S[t] = (U[t] >= theta)
//! ```
//!
//! The reset term is treated as a constant during backpropagation and the
//! spike derivative is replaced by the arctangent surrogate
//! `(alpha/2) / (1 + (pi/2 * alpha * (U - theta))^2)`.
//!
//! The plain classifier is a single dense layer; the baselines stack a
//! convolutional or dense hidden layer in front of it.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventSample, PolarityMode, SpikeTensor};
use crate::parallel::{map_slice, Execution};

/// Time-binned input in sparse form: per step, `(input index, value)` pairs
/// sorted by index. Index layout is `channel * pixels + pixel`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseFrames {
    pub time_bins: usize,
    pub dim: usize,
    pub steps: Vec<Vec<(u32, f64)>>,
}

impl SparseFrames {
    pub fn from_sample(
        sample: &EventSample,
        bin_width_us: u64,
        mode: PolarityMode,
        time_bins: usize,
        binarize: bool,
    ) -> Self {
        let pixels = sample.geometry.pixels();
        let mut raw: Vec<Vec<u32>> = vec![Vec::new(); time_bins];
        for e in &sample.events {
            let bin = (e.t / bin_width_us) as usize;
            if bin < time_bins {
                raw[bin].push((mode.channel_of(e.p) * pixels + sample.geometry.pixel_index(e.x, e.y)) as u32);
            }
        }
        let steps = raw
            .into_iter()
            .map(|mut idx| {
                idx.sort_unstable();
                let mut out: Vec<(u32, f64)> = Vec::new();
                for i in idx {
                    match out.last_mut() {
                        Some(last) if last.0 == i => last.1 += 1.0,
                        _ => out.push((i, 1.0)),
                    }
                }
                if binarize {
                    out.iter_mut().for_each(|p| p.1 = 1.0);
                }
                out
            })
            .collect();
        Self {
            time_bins,
            dim: pixels * mode.channels(),
            steps,
        }
    }

    pub fn from_tensor(tensor: &SpikeTensor, binarize: bool) -> Self {
        let steps = (0..tensor.time_bins)
            .map(|t| {
                tensor
                    .step(t)
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(i, &c)| (i as u32, if binarize { 1.0 } else { c as f64 }))
                    .collect()
            })
            .collect();
        Self {
            time_bins: tensor.time_bins,
            dim: tensor.step_len(),
            steps,
        }
    }

    pub fn total(&self) -> f64 {
        self.steps.iter().flatten().map(|p| p.1).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerShape {
    Dense { n_in: usize, n_out: usize },
    /// Single output map, stride 1, no padding, over `channels` square
    /// input maps of side `side`.
    Conv { side: usize, channels: usize, kernel: usize },
}

impl LayerShape {
    pub fn n_in(&self) -> usize {
        match *self {
            LayerShape::Dense { n_in, .. } => n_in,
            LayerShape::Conv { side, channels, .. } => side * side * channels,
        }
    }

    pub fn n_out(&self) -> usize {
        match *self {
            LayerShape::Dense { n_out, .. } => n_out,
            LayerShape::Conv { side, kernel, .. } => (side - kernel + 1).pow(2),
        }
    }

    pub fn n_weights(&self) -> usize {
        match *self {
            LayerShape::Dense { n_in, n_out } => n_in * n_out,
            LayerShape::Conv { channels, kernel, .. } => channels * kernel * kernel,
        }
    }

    /// Inputs seen by one output unit.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerShape::Dense { n_in, .. } => n_in,
            LayerShape::Conv { channels, kernel, .. } => channels * kernel * kernel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub shape: LayerShape,
    pub bias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Dense: `w[i * n_out + j]`. Conv: `w[(c * k + dy) * k + dx]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Output positions of a conv layer touched by input coordinate `y` (or `x`).
#[inline]
fn conv_span(pos: usize, kernel: usize, out_side: usize) -> std::ops::Range<usize> {
    let lo = (pos + 1).saturating_sub(kernel);
    let hi = (pos + 1).min(out_side);
    lo..hi.max(lo)
}

impl Layer {
    fn init(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (spec.shape.fan_in() as f64).sqrt();
        let w = (0..spec.shape.n_weights()).map(|_| rng.gen_range(-bound..bound)).collect();
        let b = if spec.bias { vec![0.0; spec.shape.n_out()] } else { Vec::new() };
        Self { spec, w, b }
    }

    /// `out += W x` for a sparse input.
    fn forward_into(&self, input: &[(u32, f64)], out: &mut [f64]) {
        match self.spec.shape {
            LayerShape::Dense { n_out, .. } => {
                for &(i, v) in input {
                    let row = &self.w[i as usize * n_out..(i as usize + 1) * n_out];
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += w * v;
                    }
                }
            }
            LayerShape::Conv { side, kernel, .. } => {
                let os = side - kernel + 1;
                for &(i, v) in input {
                    let (c, y, x) = (i as usize / (side * side), (i as usize / side) % side, i as usize % side);
                    for oy in conv_span(y, kernel, os) {
                        for ox in conv_span(x, kernel, os) {
                            out[oy * os + ox] += self.w[(c * kernel + y - oy) * kernel + x - ox] * v;
                        }
                    }
                }
            }
        }
    }

    /// `gw += g x^T` for a sparse input.
    fn weight_grad(&self, input: &[(u32, f64)], g: &[f64], gw: &mut [f64]) {
        match self.spec.shape {
            LayerShape::Dense { n_out, .. } => {
                for &(i, v) in input {
                    let row = &mut gw[i as usize * n_out..(i as usize + 1) * n_out];
                    for (r, gj) in row.iter_mut().zip(g) {
                        *r += gj * v;
                    }
                }
            }
            LayerShape::Conv { side, kernel, .. } => {
                let os = side - kernel + 1;
                for &(i, v) in input {
                    let (c, y, x) = (i as usize / (side * side), (i as usize / side) % side, i as usize % side);
                    for oy in conv_span(y, kernel, os) {
                        for ox in conv_span(x, kernel, os) {
                            gw[(c * kernel + y - oy) * kernel + x - ox] += g[oy * os + ox] * v;
                        }
                    }
                }
            }
        }
    }

    /// `gin += W^T g`.
    fn input_grad(&self, g: &[f64], gin: &mut [f64]) {
        match self.spec.shape {
            LayerShape::Dense { n_out, .. } => {
                for (i, gi) in gin.iter_mut().enumerate() {
                    let row = &self.w[i * n_out..(i + 1) * n_out];
                    *gi += row.iter().zip(g).map(|(w, gj)| w * gj).sum::<f64>();
                }
            }
            LayerShape::Conv { side, kernel, .. } => {
                let os = side - kernel + 1;
                for (i, gi) in gin.iter_mut().enumerate() {
                    let (c, y, x) = (i / (side * side), (i / side) % side, i % side);
                    for oy in conv_span(y, kernel, os) {
                        for ox in conv_span(x, kernel, os) {
                            *gi += self.w[(c * kernel + y - oy) * kernel + x - ox] * g[oy * os + ox];
                        }
                    }
                }
            }
        }
    }

    /// Synapses with a nonzero weight leaving input `i`.
    pub fn fan_out(&self, i: usize) -> usize {
        match self.spec.shape {
            LayerShape::Dense { n_out, .. } => self.w[i * n_out..(i + 1) * n_out].iter().filter(|w| **w != 0.0).count(),
            LayerShape::Conv { side, kernel, .. } => {
                let os = side - kernel + 1;
                let (c, y, x) = (i / (side * side), (i / side) % side, i % side);
                let mut n = 0;
                for oy in conv_span(y, kernel, os) {
                    for ox in conv_span(x, kernel, os) {
                        n += (self.w[(c * kernel + y - oy) * kernel + x - ox] != 0.0) as usize;
                    }
                }
                n
            }
        }
    }

    /// Distinct synapses with nonzero weight (conv shares parameters across
    /// many synapses).
    pub fn synapse_count(&self) -> usize {
        (0..self.spec.shape.n_in()).map(|i| self.fan_out(i)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub d_in: usize,
    pub n_labels: usize,
    pub beta: f64,
    pub threshold: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub r_correct: f64,
    pub r_incorrect: f64,
    pub seed: u64,
    pub binarize: bool,
    pub layers: Vec<LayerSpec>,
}

impl ClassifierConfig {
    /// Single dense layer from `d_in` inputs to `n_labels` units.
    pub fn linear(d_in: usize, n_labels: usize, threshold: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            d_in,
            n_labels,
            beta: 0.9,
            threshold,
            epochs: 10,
            lr: 0.03,
            batch_size,
            alpha: 2.0,
            r_correct: 1.0,
            r_incorrect: 0.1,
            seed,
            binarize: false,
            layers: vec![LayerSpec {
                shape: LayerShape::Dense { n_in: d_in, n_out: n_labels },
                bias: true,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.threshold > 0.0) {
            return bad(format!("threshold must be positive, got {}", self.threshold));
        }
        if self.batch_size == 0 || self.n_labels == 0 || self.layers.is_empty() {
            return bad("batch size, label count and layer list must be non-empty".into());
        }
        if self.layers[0].shape.n_in() != self.d_in {
            return bad(format!(
                "first layer expects {} inputs, config says {}",
                self.layers[0].shape.n_in(),
                self.d_in
            ));
        }
        for w in self.layers.windows(2) {
            if w[0].shape.n_out() != w[1].shape.n_in() {
                return bad("consecutive layer sizes do not chain".into());
            }
        }
        if let LayerShape::Conv { side, kernel, .. } = self.layers[0].shape {
            if kernel == 0 || kernel > side {
                return bad(format!("kernel {kernel} does not fit input side {side}"));
            }
        }
        if self.layers.iter().skip(1).any(|l| matches!(l.shape, LayerShape::Conv { .. })) {
            return bad("only the first layer may be convolutional".into());
        }
        if self.layers.last().unwrap().shape.n_out() != self.n_labels {
            return bad("last layer must have one unit per label".into());
        }
        Ok(())
    }
}

/// Per-layer membranes and propagated spikes, `[t * n_out + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub time_bins: usize,
    pub u: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
}

impl Trace {
    /// Output spike counts per label unit.
    pub fn counts(&self) -> Vec<f64> {
        let s = self.s.last().unwrap();
        let n = s.len() / self.time_bins.max(1);
        let mut c = vec![0.0; n];
        for t in 0..self.time_bins {
            for j in 0..n {
                c[j] += s[t * n + j];
            }
        }
        c
    }
}

/// `(1/N) * sum_j (count_j - target_j)^2` with targets `T * r_correct` for
/// the label and `T * r_incorrect` elsewhere.
pub fn mse_count_loss(counts: &[f64], label: usize, time_bins: usize, r_correct: f64, r_incorrect: f64) -> f64 {
    let t = time_bins as f64;
    counts
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let target = t * if j == label { r_correct } else { r_incorrect };
            (c - target).powi(2)
        })
        .sum::<f64>()
        / counts.len() as f64
}

/// Index of the largest count, lowest index on ties.
pub fn predict<T: PartialOrd + Copy>(counts: &[T]) -> usize {
    let mut best = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn surrogate(x: f64, alpha: f64) -> f64 {
    let z = PI / 2.0 * alpha * x;
    alpha / 2.0 / (1.0 + z * z)
}

/// Smooth spike whose derivative is the surrogate.
#[inline]
pub fn relaxed_spike(x: f64, alpha: f64) -> f64 {
    0.5 + (PI / 2.0 * alpha * x).atan() / PI
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Gradients in parameter order: layer 0 weights, layer 0 bias, layer 1 ...
pub type Grads = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Mean synaptic events per sample over all layers, counting one event
    /// per unit of input per nonzero synapse.
    pub synaptic_events: f64,
    /// Mean spikes per sample emitted by each layer.
    pub layer_spikes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub layers: Vec<Layer>,
    pub adam: Adam,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ELCK";
const CHECKPOINT_VERSION: u32 = 1;
/// Samples folded together before the fixed-order reduction of a batch.
const GRAD_CHUNK: usize = 8;

impl Classifier {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers: Vec<Layer> = config.layers.iter().map(|s| Layer::init(s.clone(), &mut rng)).collect();
        let sizes: Vec<usize> = layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect();
        let adam = Adam::new(config.lr, &sizes);
        Ok(Self { config, layers, adam })
    }

    fn check_input(&self, x: &SparseFrames) -> Result<()> {
        if x.dim != self.config.d_in {
            return Err(Error::Config(format!(
                "input has dimension {}, classifier expects {}",
                x.dim, self.config.d_in
            )));
        }
        if let Some(&(i, v)) = x.steps.iter().flatten().find(|p| p.0 as usize >= x.dim || !p.1.is_finite()) {
            return Err(Error::Config(format!("bad input entry ({i}, {v})")));
        }
        Ok(())
    }

    /// Runs the network. With `relaxed`, propagated and counted spikes are
    /// the smooth [`relaxed_spike`] while resets still use hard spikes.
    pub fn forward(&self, x: &SparseFrames, relaxed: bool) -> Result<Trace> {
        self.check_input(x)?;
        let (beta, theta, alpha) = (self.config.beta, self.config.threshold, self.config.alpha);
        let t_bins = x.time_bins;
        let mut trace = Trace {
            time_bins: t_bins,
            u: Vec::new(),
            s: Vec::new(),
        };
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.spec.shape.n_out();
            let mut u_all = vec![0.0; t_bins * n];
            let mut s_all = vec![0.0; t_bins * n];
            let mut u_prev = vec![0.0; n];
            let mut hard_prev = vec![false; n];
            let mut current = vec![0.0; n];
            let mut sparse: Vec<(u32, f64)> = Vec::new();
            for t in 0..t_bins {
                let input: &[(u32, f64)] = if l == 0 {
                    &x.steps[t]
                } else {
                    let prev = &trace.s[l - 1];
                    let m = self.layers[l - 1].spec.shape.n_out();
                    sparse.clear();
                    sparse.extend(
                        prev[t * m..(t + 1) * m]
                            .iter()
                            .enumerate()
                            .filter(|(_, &v)| v != 0.0)
                            .map(|(i, &v)| (i as u32, v)),
                    );
                    &sparse
                };
                if layer.b.is_empty() {
                    current.iter_mut().for_each(|c| *c = 0.0);
                } else {
                    current.copy_from_slice(&layer.b);
                }
                layer.forward_into(input, &mut current);
                for j in 0..n {
                    let reset = if hard_prev[j] { theta } else { 0.0 };
                    let u = beta * u_prev[j] + current[j] - reset;
                    if !u.is_finite() {
                        return Err(Error::Diverged(format!("layer {l} unit {j} membrane at step {t} is {u}")));
                    }
                    let hard = u >= theta;
                    u_all[t * n + j] = u;
                    s_all[t * n + j] = if relaxed {
                        relaxed_spike(u - theta, alpha)
                    } else if hard {
                        1.0
                    } else {
                        0.0
                    };
                    u_prev[j] = u;
                    hard_prev[j] = hard;
                }
            }
            trace.u.push(u_all);
            trace.s.push(s_all);
        }
        Ok(trace)
    }

    pub fn loss(&self, trace: &Trace, label: usize) -> f64 {
        mse_count_loss(&trace.counts(), label, trace.time_bins, self.config.r_correct, self.config.r_incorrect)
    }

    /// BPTT gradients of the single-sample loss.
    pub fn backward(&self, x: &SparseFrames, trace: &Trace, label: usize) -> Grads {
        let (beta, theta, alpha) = (self.config.beta, self.config.threshold, self.config.alpha);
        let t_bins = trace.time_bins;
        let n_labels = self.config.n_labels;
        let counts = trace.counts();
        let mut grads: Grads = self.layers.iter().flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]]).collect();

        let mut g_s = vec![0.0; t_bins * n_labels];
        for t in 0..t_bins {
            for j in 0..n_labels {
                let target = t_bins as f64 * if j == label { self.config.r_correct } else { self.config.r_incorrect };
                g_s[t * n_labels + j] = 2.0 * (counts[j] - target) / n_labels as f64;
            }
        }
        let mut sparse: Vec<(u32, f64)> = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let n = layer.spec.shape.n_out();
            let m = layer.spec.shape.n_in();
            let mut g_prev = if l > 0 { vec![0.0; t_bins * m] } else { Vec::new() };
            let mut g_u_next = vec![0.0; n];
            let mut g_u = vec![0.0; n];
            for t in (0..t_bins).rev() {
                for j in 0..n {
                    let u = trace.u[l][t * n + j];
                    g_u[j] = g_s[t * n + j] * surrogate(u - theta, alpha) + beta * g_u_next[j];
                }
                let input: &[(u32, f64)] = if l == 0 {
                    &x.steps[t]
                } else {
                    let prev = &trace.s[l - 1];
                    sparse.clear();
                    sparse.extend(
                        prev[t * m..(t + 1) * m]
                            .iter()
                            .enumerate()
                            .filter(|(_, &v)| v != 0.0)
                            .map(|(i, &v)| (i as u32, v)),
                    );
                    &sparse
                };
                layer.weight_grad(input, &g_u, &mut grads[2 * l]);
                for (gb, gu) in grads[2 * l + 1].iter_mut().zip(&g_u) {
                    *gb += gu;
                }
                if l > 0 {
                    layer.input_grad(&g_u, &mut g_prev[t * m..(t + 1) * m]);
                }
                std::mem::swap(&mut g_u, &mut g_u_next);
            }
            g_s = g_prev;
        }
        grads
    }

    /// Parameter tensor `k` in gradient order.
    pub fn tensor_mut(&mut self, k: usize) -> &mut Vec<f64> {
        let layer = &mut self.layers[k / 2];
        if k % 2 == 0 {
            &mut layer.w
        } else {
            &mut layer.b
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    fn param_name(&self, k: usize) -> String {
        format!("layer{}.{}", k / 2, if k % 2 == 0 { "weight" } else { "bias" })
    }

    /// One Adam step on the batch-mean gradient. Returns the mean loss and
    /// the number of correctly predicted samples.
    pub fn train_batch(&mut self, data: &[&SparseFrames], labels: &[usize], exec: Execution) -> Result<(f64, usize)> {
        let idx: Vec<usize> = (0..data.len()).collect();
        let chunks: Vec<&[usize]> = idx.chunks(GRAD_CHUNK).collect();
        let partials = map_slice(&chunks, exec, |chunk| -> Result<(Grads, f64, usize)> {
            let mut acc: Option<Grads> = None;
            let (mut loss, mut correct) = (0.0, 0);
            for &i in *chunk {
                let trace = self.forward(data[i], false)?;
                let counts = trace.counts();
                loss += self.loss(&trace, labels[i]);
                correct += (predict(&counts) == labels[i]) as usize;
                let g = self.backward(data[i], &trace, labels[i]);
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| a.iter_mut().zip(g).for_each(|(a, g)| *a += g)),
                }
            }
            Ok((acc.unwrap_or_default(), loss, correct))
        });
        let mut total: Option<Grads> = None;
        let (mut loss, mut correct) = (0.0, 0);
        for p in partials {
            let (g, l, c) = p?;
            loss += l;
            correct += c;
            match total.as_mut() {
                None => total = Some(g),
                Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| a.iter_mut().zip(g).for_each(|(a, g)| *a += g)),
            }
        }
        let Some(mut grads) = total else { return Ok((0.0, 0)) };
        let scale = 1.0 / data.len() as f64;
        for (k, g) in grads.iter_mut().enumerate() {
            g.iter_mut().for_each(|v| *v *= scale);
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!("gradient of {} contains {bad}", self.param_name(k))));
            }
        }
        let mut adam = std::mem::replace(&mut self.adam, Adam::new(0.0, &[]));
        adam.update(&mut self.params_mut(), &grads);
        self.adam = adam;
        Ok((loss * scale, correct))
    }

    /// Trains for `config.epochs` epochs with a seeded shuffle.
    pub fn train(&mut self, data: &[SparseFrames], labels: &[usize], exec: Execution) -> Result<Vec<EpochStats>> {
        if data.len() != labels.len() {
            return Err(Error::Config("data and labels differ in length".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.config.n_labels) {
            return Err(Error::Config(format!("label {l} out of range")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut stats = Vec::new();
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let (mut loss, mut correct) = (0.0, 0);
            for batch in order.chunks(self.config.batch_size) {
                let xs: Vec<&SparseFrames> = batch.iter().map(|&i| &data[i]).collect();
                let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let (l, c) = self.train_batch(&xs, &ys, exec)?;
                loss += l * batch.len() as f64;
                correct += c;
            }
            let n = data.len().max(1) as f64;
            let s = EpochStats {
                epoch,
                loss: loss / n,
                train_accuracy: correct as f64 / n,
            };
            log::debug!("epoch {epoch}: loss {:.4} train accuracy {:.3}", s.loss, s.train_accuracy);
            stats.push(s);
        }
        Ok(stats)
    }

    pub fn evaluate(&self, data: &[SparseFrames], labels: &[usize], exec: Execution) -> Result<Evaluation> {
        let per = map_slice(data, exec, |x| -> Result<(usize, f64, Vec<f64>)> {
            let trace = self.forward(x, false)?;
            let mut se = 0.0;
            let mut spikes = Vec::new();
            for (l, layer) in self.layers.iter().enumerate() {
                if l == 0 {
                    for &(i, v) in x.steps.iter().flatten() {
                        se += v * layer.fan_out(i as usize) as f64;
                    }
                } else {
                    let prev = &trace.s[l - 1];
                    let m = layer.spec.shape.n_in();
                    for (k, &v) in prev.iter().enumerate() {
                        if v != 0.0 {
                            se += v * layer.fan_out(k % m) as f64;
                        }
                    }
                }
                spikes.push(trace.s[l].iter().sum());
            }
            Ok((predict(&trace.counts()), se, spikes))
        });
        let n = data.len();
        let mut predictions = Vec::with_capacity(n);
        let mut se = 0.0;
        let mut layer_spikes = vec![0.0; self.layers.len()];
        for p in per {
            let (pred, s, sp) = p?;
            predictions.push(pred);
            se += s;
            layer_spikes.iter_mut().zip(sp).for_each(|(a, b)| *a += b);
        }
        let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        let nf = n.max(1) as f64;
        Ok(Evaluation {
            accuracy: correct as f64 / nf,
            predictions,
            synaptic_events: se / nf,
            layer_spikes: layer_spikes.into_iter().map(|s| s / nf).collect(),
        })
    }

    /// Versioned binary checkpoint: magic, version, JSON config, then every
    /// parameter tensor and its Adam moments as little-endian f64.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        let params = self.layers.iter().flat_map(|l| [&l.w, &l.b]);
        for (k, p) in params.enumerate() {
            for t in [p, &self.adam.m[k], &self.adam.v[k]] {
                for v in t {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::Parse("checkpoint truncated".into()));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not a classifier checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let json_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let config: ClassifierConfig = serde_json::from_slice(take(json_len)?)?;
        let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut c = Classifier::new(config)?;
        c.adam.step = step;
        let n_tensors = c.adam.m.len();
        for k in 0..n_tensors {
            let len = c.adam.m[k].len();
            let mut read = |dst: &mut Vec<f64>| -> Result<()> {
                let raw = take(len * 8)?;
                for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
                    *d = f64::from_le_bytes(chunk.try_into().unwrap());
                }
                Ok(())
            };
            read(c.tensor_mut(k))?;
            read(&mut c.adam.m[k])?;
            read(&mut c.adam.v[k])?;
        }
        if !r.is_empty() {
            return Err(Error::Parse("trailing bytes after checkpoint".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, Polarity, SensorGeometry};
    use crate::synth::synth_two_class;

    fn frames(rng: &mut ChaCha8Rng, t: usize, d: usize, density: f64) -> SparseFrames {
        SparseFrames {
            time_bins: t,
            dim: d,
            steps: (0..t)
                .map(|_| {
                    let mut step = Vec::new();
                    for i in 0..d {
                        if rng.gen_bool(density) {
                            step.push((i as u32, rng.gen_range(1..4) as f64));
                        }
                    }
                    step
                })
                .collect(),
        }
    }

    #[test]
    fn zero_input_zero_spikes() {
        let c = Classifier::new(ClassifierConfig::linear(5, 3, 1.0, 1, 0)).unwrap();
        let x = SparseFrames { time_bins: 6, dim: 5, steps: vec![Vec::new(); 6] };
        let tr = c.forward(&x, false).unwrap();
        assert!(tr.counts().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn threshold_current_spikes_then_resets() {
        let mut cfg = ClassifierConfig::linear(1, 1, 2.0, 1, 0);
        cfg.beta = 0.5;
        let mut c = Classifier::new(cfg).unwrap();
        c.layers[0].w = vec![2.0];
        let x = SparseFrames { time_bins: 3, dim: 1, steps: vec![vec![(0, 1.0)]; 3] };
        let tr = c.forward(&x, false).unwrap();
        // 2 -> spike; 0.5*2 + 2 - 2 = 1; 0.5*1 + 2 = 2.5 -> spike.
        assert_eq!(tr.u[0], vec![2.0, 1.0, 2.5]);
        assert_eq!(tr.s[0], vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let mut cfg = ClassifierConfig::linear(3, 2, 0.4, 1, seed);
            cfg.beta = 0.8;
            let mut c = Classifier::new(cfg).unwrap();
            c.layers[0].b = vec![0.05, -0.02];
            let x = frames(&mut rng, 4, 3, 0.6);
            let tr = c.forward(&x, false).unwrap();
            for j in 0..2 {
                let (mut u, mut s) = (0.0f64, 0.0f64);
                for t in 0..4 {
                    let mut i_t = c.layers[0].b[j];
                    for &(i, v) in &x.steps[t] {
                        i_t += c.layers[0].w[i as usize * 2 + j] * v;
                    }
                    u = 0.8 * u + i_t - 0.4 * s;
                    s = if u >= 0.4 { 1.0 } else { 0.0 };
                    assert_eq!(tr.u[0][t * 2 + j], u);
                    assert_eq!(tr.s[0][t * 2 + j], s);
                }
            }
        }
    }

    #[test]
    fn loss_closed_forms() {
        assert_eq!(mse_count_loss(&[10.0, 0.0], 0, 10, 1.0, 0.0), 0.0);
        assert_eq!(mse_count_loss(&[0.0, 10.0], 0, 10, 1.0, 0.0), 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let counts: Vec<f64> = (0..4).map(|_| rng.gen_range(0..20) as f64).collect();
            let label = rng.gen_range(0..4);
            let mut sum = 0.0;
            for j in 0..4 {
                let target = if j == label { 12.0 } else { 1.2 };
                sum += (counts[j] - target) * (counts[j] - target);
            }
            assert!((mse_count_loss(&counts, label, 12, 1.0, 0.1) - sum / 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_rules() {
        assert_eq!(predict(&[0, 0, 0]), 0);
        assert_eq!(predict(&[3, 7, 1]), 1);
        assert_eq!(predict(&[5.0, 5.0, 2.0]), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let c: Vec<u32> = (0..6).map(|_| rng.gen_range(0..10)).collect();
            let max = *c.iter().max().unwrap();
            assert_eq!(predict(&c), c.iter().position(|&v| v == max).unwrap());
            let scaled: Vec<u32> = c.iter().map(|v| v * 3).collect();
            assert_eq!(predict(&scaled), predict(&c));
        }
    }

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut cfg = ClassifierConfig::linear(2, 2, 1.0, 1, 0);
        cfg.r_correct = 0.0;
        cfg.r_incorrect = 0.0;
        let mut c = Classifier::new(cfg).unwrap();
        let before = c.layers.clone();
        let x = SparseFrames { time_bins: 3, dim: 2, steps: vec![Vec::new(); 3] };
        c.train_batch(&[&x], &[0], Execution::Sequential).unwrap();
        assert_eq!(c.layers, before);
        assert_eq!(c.adam.step, 1);
    }

    fn check_gradients(c: &Classifier, x: &SparseFrames, label: usize) {
        let tr = c.forward(x, true).unwrap();
        let analytic = c.backward(x, &tr, label);
        let h = 1e-6;
        let mut checked = 0;
        for k in 0..analytic.len() {
            for i in 0..analytic[k].len() {
                let mut plus = c.clone();
                let mut minus = c.clone();
                plus.tensor_mut(k)[i] += h;
                minus.tensor_mut(k)[i] -= h;
                let lp = plus.loss(&plus.forward(x, true).unwrap(), label);
                let lm = minus.loss(&minus.forward(x, true).unwrap(), label);
                let fd = (lp - lm) / (2.0 * h);
                let a = analytic[k][i];
                let scale = a.abs().max(fd.abs());
                if scale > 1e-9 {
                    assert!((a - fd).abs() <= 1e-4 * scale, "tensor {k} entry {i}: analytic {a} vs fd {fd}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut cfg = ClassifierConfig::linear(6, 3, 1.0, 1, 2);
        cfg.layers[0].bias = true;
        let mut c = Classifier::new(cfg).unwrap();
        c.layers[0].b = vec![0.1, -0.2, 0.3];
        let x = frames(&mut rng, 4, 6, 0.5);
        check_gradients(&c, &x, 1);
    }

    #[test]
    fn two_layer_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let side = 4;
        let mut cfg = ClassifierConfig::linear(side * side, 2, 0.5, 1, 4);
        cfg.layers = vec![
            LayerSpec { shape: LayerShape::Conv { side, channels: 1, kernel: 2 }, bias: false },
            LayerSpec { shape: LayerShape::Dense { n_in: 9, n_out: 2 }, bias: true },
        ];
        let c = Classifier::new(cfg).unwrap();
        let x = frames(&mut rng, 4, side * side, 0.5);
        check_gradients(&c, &x, 0);

        let mut cfg = ClassifierConfig::linear(6, 2, 0.5, 1, 4);
        cfg.layers = vec![
            LayerSpec { shape: LayerShape::Dense { n_in: 6, n_out: 5 }, bias: false },
            LayerSpec { shape: LayerShape::Dense { n_in: 5, n_out: 2 }, bias: true },
        ];
        let c = Classifier::new(cfg).unwrap();
        let x = frames(&mut rng, 4, 6, 0.5);
        check_gradients(&c, &x, 1);
    }

    #[test]
    fn conv_forward_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (side, k, ch) = (5usize, 3usize, 2usize);
        let spec = LayerSpec { shape: LayerShape::Conv { side, channels: ch, kernel: k }, bias: false };
        let layer = Layer::init(spec, &mut rng);
        let dense: Vec<f64> = (0..side * side * ch).map(|_| rng.gen_range(0..3) as f64).collect();
        let sparse: Vec<(u32, f64)> = dense.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i as u32, *v)).collect();
        let mut out = vec![0.0; 9];
        layer.forward_into(&sparse, &mut out);
        for oy in 0..3 {
            for ox in 0..3 {
                let mut s = 0.0;
                for c in 0..ch {
                    for dy in 0..k {
                        for dx in 0..k {
                            s += layer.w[(c * k + dy) * k + dx] * dense[c * 25 + (oy + dy) * 5 + ox + dx];
                        }
                    }
                }
                assert!((out[oy * 3 + ox] - s).abs() < 1e-12);
            }
        }
        // Corner pixel feeds one output, centre pixel all nine.
        assert_eq!(layer.fan_out(0), 1);
        assert_eq!(layer.fan_out(12), 9);
    }

    #[test]
    fn two_class_trains_to_perfect_accuracy() {
        let g = SensorGeometry::square(8).unwrap();
        for seed in 1..=3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples = synth_two_class(g, 40, 60, 10_000, 0.9, &mut rng);
            let xs: Vec<SparseFrames> =
                samples.iter().map(|s| SparseFrames::from_sample(s, 1000, PolarityMode::Merged, 10, false)).collect();
            let ys: Vec<usize> = samples.iter().map(|s| s.label.unwrap() as usize).collect();
            let mut c = Classifier::new(ClassifierConfig::linear(64, 2, 1.0, 8, seed)).unwrap();
            let stats = c.train(&xs, &ys, Execution::Parallel).unwrap();
            let eval = c.evaluate(&xs, &ys, Execution::Sequential).unwrap();
            assert_eq!(eval.accuracy, 1.0, "seed {seed}: {stats:?}");
        }
    }

    #[test]
    fn training_deterministic_across_execution_modes() {
        let g = SensorGeometry::square(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = synth_two_class(g, 30, 50, 10_000, 0.8, &mut rng);
        let xs: Vec<SparseFrames> =
            samples.iter().map(|s| SparseFrames::from_sample(s, 1000, PolarityMode::Split, 10, false)).collect();
        let ys: Vec<usize> = samples.iter().map(|s| s.label.unwrap() as usize).collect();
        let run = |exec| {
            let mut c = Classifier::new(ClassifierConfig::linear(128, 2, 1.0, 20, 7)).unwrap();
            c.train(&xs, &ys, exec).unwrap();
            c
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = SensorGeometry::square(4).unwrap();
        let s = EventSample::new(vec![Event::new(1, 1, 10, Polarity::On), Event::new(2, 1, 1500, Polarity::Off)], g, Some(1), 3000)
            .unwrap();
        let x = SparseFrames::from_sample(&s, 1000, PolarityMode::Split, 3, false);
        let mut c = Classifier::new(ClassifierConfig::linear(32, 2, 0.5, 1, 1)).unwrap();
        c.train_batch(&[&x], &[1], Execution::Sequential).unwrap();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(Classifier::from_bytes(&bytes).unwrap(), c);
        assert!(Classifier::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Classifier::from_bytes(&bad).is_err());
    }

    #[test]
    fn frames_match_dense_binning() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = SensorGeometry::square(6).unwrap();
        let mut ev: Vec<Event> = (0..200)
            .map(|_| Event::new(rng.gen_range(0..6), rng.gen_range(0..6), rng.gen_range(0..5000), Polarity::from_bit(rng.gen())))
            .collect();
        ev.sort_by_key(|e| e.t);
        let s = EventSample::new(ev, g, None, 5000).unwrap();
        for mode in [PolarityMode::Merged, PolarityMode::Split] {
            let t = crate::event::bin_to_frames(&s, 1000, mode, Some(5));
            assert_eq!(SparseFrames::from_sample(&s, 1000, mode, 5, false), SparseFrames::from_tensor(&t, false));
            assert_eq!(SparseFrames::from_sample(&s, 1000, mode, 5, true), SparseFrames::from_tensor(&t, true));
        }
    }
}
