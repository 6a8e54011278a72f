//! Minimal neural substrate: dense and gated-recurrent layers with
//! backpropagation (through time), two optimizers, and a portable little-
//! endian weight file.
//!
//! All parameters live in one flat `f64` vector; layers address it through
//! per-layer offsets. That keeps the optimizers, finite-difference checks,
//! and serialization straightforward. Files store weights as `f32`, so a
//! loaded model is the deployable artifact: save followed by load is
//! idempotent bit-for-bit from then on.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes opening every model file.
pub const MODEL_MAGIC: &[u8; 4] = b"EFNN";
/// Current model file format version.
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Relu => 3,
            Activation::Softmax => 4,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            3 => Activation::Relu,
            4 => Activation::Softmax,
            _ => return Err(Error::ModelFile(format!("unknown activation tag {tag}"))),
        })
    }

    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Softmax => {
                let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for x in v.iter_mut() {
                    *x = (*x - max).exp();
                    sum += *x;
                }
                for x in v.iter_mut() {
                    *x /= sum;
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation, written in terms of
    /// the post-activation output. Not defined for softmax, which is only
    /// reachable through the fused cross-entropy path.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softmax => unreachable!("softmax has no elementwise derivative"),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    GatedRecurrent,
}

/// Shape and nonlinearity of one layer. For gated-recurrent layers the
/// activation applies to the candidate state; the gates are always
/// sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense,
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn gated_recurrent(input_dim: usize, output_dim: usize) -> Self {
        Self {
            kind: LayerKind::GatedRecurrent,
            input_dim,
            output_dim,
            activation: Activation::Tanh,
        }
    }

    fn param_count(&self) -> usize {
        let (i, o) = (self.input_dim, self.output_dim);
        match self.kind {
            LayerKind::Dense => o * i + o,
            LayerKind::GatedRecurrent => 3 * (o * i + o * o + o),
        }
    }
}

/// Input transform recorded in the model file so inference always feeds
/// the network what it was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preprocessing {
    #[default]
    None,
    /// Divide by (max + 1e-12), then log1p each element.
    Log1pMaxNorm,
}

impl Preprocessing {
    fn tag(self) -> u8 {
        match self {
            Preprocessing::None => 0,
            Preprocessing::Log1pMaxNorm => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Preprocessing::None,
            1 => Preprocessing::Log1pMaxNorm,
            _ => return Err(Error::ModelFile(format!("unknown preprocessing tag {tag}"))),
        })
    }

    pub fn apply(self, input: &[f64]) -> Vec<f64> {
        match self {
            Preprocessing::None => input.to_vec(),
            Preprocessing::Log1pMaxNorm => {
                let max = input.iter().cloned().fold(0.0f64, f64::max);
                let scale = 1.0 / (max + 1e-12);
                input.iter().map(|&x| (x * scale).ln_1p()).collect()
            }
        }
    }
}

/// Offsets of one layer's weight slices inside the flat parameter vector.
/// Dense layers use [w, b]; gated-recurrent layers use
/// [wz, wr, wh, uz, ur, uh, bz, br, bh].
#[derive(Debug, Clone)]
struct Layout {
    offset: usize,
}

/// A feed-forward stack of dense and gated-recurrent layers.
#[derive(Debug, Clone)]
pub struct NeuralModel {
    specs: Vec<LayerSpec>,
    layouts: Vec<Layout>,
    params: Vec<f64>,
    state: Vec<Vec<f64>>,
    preprocessing: Preprocessing,
    fft_size: u32,
}

fn mul_mat_vec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
}

fn mul_mat_t_vec_add(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(y.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * yi;
        }
    }
}

fn add_outer(gw: &mut [f64], rows: usize, cols: usize, y: &[f64], x: &[f64]) {
    debug_assert_eq!(y.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        let row = &mut gw[i * cols..(i + 1) * cols];
        for (g, &xj) in row.iter_mut().zip(x) {
            *g += yi * xj;
        }
    }
}

/// Per-step intermediates kept for backpropagation.
enum StepCache {
    Dense {
        x: Vec<f64>,
        y: Vec<f64>,
    },
    Gru {
        x: Vec<f64>,
        h_prev: Vec<f64>,
        z: Vec<f64>,
        r: Vec<f64>,
        hc: Vec<f64>,
    },
}

impl NeuralModel {
    /// Build a model with freshly initialized weights: Glorot-uniform
    /// matrices, zero biases, all drawn from the given seed.
    pub fn new(
        specs: Vec<LayerSpec>,
        preprocessing: Preprocessing,
        fft_size: u32,
        seed: u64,
    ) -> Result<Self> {
        validate_specs(&specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut layouts = Vec::new();
        for spec in &specs {
            layouts.push(Layout {
                offset: params.len(),
            });
            let (i, o) = (spec.input_dim, spec.output_dim);
            match spec.kind {
                LayerKind::Dense => {
                    glorot(&mut params, &mut rng, o, i);
                    params.extend(std::iter::repeat(0.0).take(o));
                }
                LayerKind::GatedRecurrent => {
                    for _ in 0..3 {
                        glorot(&mut params, &mut rng, o, i);
                    }
                    for _ in 0..3 {
                        glorot(&mut params, &mut rng, o, o);
                    }
                    params.extend(std::iter::repeat(0.0).take(3 * o));
                }
            }
        }
        let state = initial_state(&specs);
        Ok(Self {
            specs,
            layouts,
            params,
            state,
            preprocessing,
            fft_size,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn preprocessing(&self) -> Preprocessing {
        self.preprocessing
    }

    pub fn fft_size(&self) -> u32 {
        self.fft_size
    }

    pub fn input_dim(&self) -> usize {
        self.specs.first().map_or(0, |s| s.input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.specs.last().map_or(0, |s| s.output_dim)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// The flat parameter vector, layer by layer in declaration order.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Forget all recurrent state.
    pub fn reset_state(&mut self) {
        for h in &mut self.state {
            h.fill(0.0);
        }
    }

    /// Run one input through the stack, advancing recurrent state.
    pub fn forward(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::ModelShape {
                expected: self.input_dim(),
                got: input.len(),
                context: "forward input".into(),
            });
        }
        let x = self.preprocessing.apply(input);
        let mut state = std::mem::take(&mut self.state);
        let out = self.step(&x, &mut state, None);
        self.state = state;
        Ok(out)
    }

    /// One step through all layers against caller-held state.
    fn step(
        &self,
        input: &[f64],
        state: &mut [Vec<f64>],
        mut caches: Option<&mut Vec<StepCache>>,
    ) -> Vec<f64> {
        let mut x = input.to_vec();
        for (li, spec) in self.specs.iter().enumerate() {
            let p = self.layer_params(li);
            let (i, o) = (spec.input_dim, spec.output_dim);
            match spec.kind {
                LayerKind::Dense => {
                    let mut y = vec![0.0; o];
                    mul_mat_vec(&p[..o * i], o, i, &x, &mut y);
                    for (v, b) in y.iter_mut().zip(&p[o * i..]) {
                        *v += b;
                    }
                    spec.activation.apply(&mut y);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(StepCache::Dense {
                            x: std::mem::take(&mut x),
                            y: y.clone(),
                        });
                    }
                    x = y;
                }
                LayerKind::GatedRecurrent => {
                    let h_prev = state[li].clone();
                    let (wz, wr, wh, uz, ur, uh, bz, br, bh) = split_gru(p, i, o);
                    let mut z = vec![0.0; o];
                    let mut r = vec![0.0; o];
                    let mut hc = vec![0.0; o];
                    let mut tmp = vec![0.0; o];
                    mul_mat_vec(wz, o, i, &x, &mut z);
                    mul_mat_vec(uz, o, o, &h_prev, &mut tmp);
                    for ((zv, t), b) in z.iter_mut().zip(&tmp).zip(bz) {
                        *zv = sigmoid(*zv + t + b);
                    }
                    mul_mat_vec(wr, o, i, &x, &mut r);
                    mul_mat_vec(ur, o, o, &h_prev, &mut tmp);
                    for ((rv, t), b) in r.iter_mut().zip(&tmp).zip(br) {
                        *rv = sigmoid(*rv + t + b);
                    }
                    let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();
                    mul_mat_vec(wh, o, i, &x, &mut hc);
                    mul_mat_vec(uh, o, o, &rh, &mut tmp);
                    for ((cv, t), b) in hc.iter_mut().zip(&tmp).zip(bh) {
                        *cv += t + b;
                    }
                    spec.activation.apply(&mut hc);
                    let mut h = vec![0.0; o];
                    for (((hv, &zv), &hp), &cv) in
                        h.iter_mut().zip(&z).zip(&h_prev).zip(&hc)
                    {
                        *hv = zv * hp + (1.0 - zv) * cv;
                    }
                    state[li] = h.clone();
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(StepCache::Gru {
                            x: std::mem::take(&mut x),
                            h_prev,
                            z,
                            r,
                            hc,
                        });
                    }
                    x = h;
                }
            }
        }
        x
    }

    fn layer_params(&self, li: usize) -> &[f64] {
        let start = self.layouts[li].offset;
        &self.params[start..start + self.specs[li].param_count()]
    }
}

fn glorot(params: &mut Vec<f64>, rng: &mut ChaCha8Rng, rows: usize, cols: usize) {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    params.extend((0..rows * cols).map(|_| rng.gen_range(-bound..bound)));
}

fn initial_state(specs: &[LayerSpec]) -> Vec<Vec<f64>> {
    specs
        .iter()
        .map(|s| match s.kind {
            LayerKind::Dense => Vec::new(),
            LayerKind::GatedRecurrent => vec![0.0; s.output_dim],
        })
        .collect()
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidConfig("model needs at least one layer".into()));
    }
    for (li, spec) in specs.iter().enumerate() {
        if spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer {li} has a zero dimension"
            )));
        }
        if spec.activation == Activation::Softmax
            && (li + 1 != specs.len() || spec.kind != LayerKind::Dense)
        {
            return Err(Error::InvalidConfig(
                "softmax is only valid on the final dense layer".into(),
            ));
        }
        if li > 0 && specs[li - 1].output_dim != spec.input_dim {
            return Err(Error::InvalidConfig(format!(
                "layer {li} input dim {} does not chain from previous output {}",
                spec.input_dim,
                specs[li - 1].output_dim
            )));
        }
    }
    Ok(())
}

#[allow(clippy::type_complexity)]
fn split_gru(
    p: &[f64],
    i: usize,
    o: usize,
) -> (
    &[f64],
    &[f64],
    &[f64],
    &[f64],
    &[f64],
    &[f64],
    &[f64],
    &[f64],
    &[f64],
) {
    let (wz, rest) = p.split_at(o * i);
    let (wr, rest) = rest.split_at(o * i);
    let (wh, rest) = rest.split_at(o * i);
    let (uz, rest) = rest.split_at(o * o);
    let (ur, rest) = rest.split_at(o * o);
    let (uh, rest) = rest.split_at(o * o);
    let (bz, rest) = rest.split_at(o);
    let (br, bh) = rest.split_at(o);
    (wz, wr, wh, uz, ur, uh, bz, br, bh)
}

/// Per-step training target.
#[derive(Debug, Clone)]
pub enum Target {
    /// Class index for cross-entropy against a softmax output.
    Class(usize),
    /// Regression vector matched by mean squared error.
    Vector(Vec<f64>),
    /// No loss at this step (warm-up frames).
    Masked,
}

/// One training sequence: inputs step by step with aligned targets.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    /// Mean squared error over the output vector (band gains + flags).
    BandGainMse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 10,
            optimizer: Optimizer::Adam,
            seed: 0,
            loss: LossKind::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loss and accuracy for one epoch, in emission order.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + EPS);
        }
    }
}

/// Gradient of the loss with respect to the final pre-activation (fused
/// through softmax for cross-entropy) plus the loss value and whether the
/// prediction counts as correct.
fn loss_backward(
    loss: LossKind,
    output: &[f64],
    target: &Target,
    final_act: Activation,
) -> Result<Option<(Vec<f64>, f64, bool)>> {
    match (loss, target) {
        (_, Target::Masked) => Ok(None),
        (LossKind::CrossEntropy, Target::Class(c)) => {
            if *c >= output.len() {
                return Err(Error::ModelShape {
                    expected: output.len(),
                    got: *c,
                    context: "class target out of range".into(),
                });
            }
            debug_assert_eq!(final_act, Activation::Softmax);
            let mut grad = output.to_vec();
            grad[*c] -= 1.0;
            let loss = -(output[*c].max(1e-12)).ln();
            let pred = output
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            Ok(Some((grad, loss, pred == *c)))
        }
        (LossKind::BandGainMse, Target::Vector(t)) => {
            if t.len() != output.len() {
                return Err(Error::ModelShape {
                    expected: output.len(),
                    got: t.len(),
                    context: "regression target".into(),
                });
            }
            let n = output.len() as f64;
            let mut grad = vec![0.0; output.len()];
            let mut loss = 0.0;
            for ((g, &y), &tv) in grad.iter_mut().zip(output).zip(t) {
                let d = y - tv;
                loss += d * d;
                *g = 2.0 * d / n;
            }
            Ok(Some((grad, loss / n, true)))
        }
        _ => Err(Error::InvalidConfig(
            "loss kind does not match target kind".into(),
        )),
    }
}

/// Forward/backward over one sequence, accumulating parameter gradients.
/// Returns (total loss, loss terms, correct predictions).
fn backprop_sequence(
    model: &NeuralModel,
    sample: &SequenceSample,
    grads: &mut [f64],
) -> Result<(f64, usize, usize)> {
    let t_len = sample.inputs.len();
    if t_len != sample.targets.len() {
        return Err(Error::InvalidConfig(
            "sequence inputs and targets differ in length".into(),
        ));
    }
    let final_act = model.specs.last().unwrap().activation;
    let mut state = initial_state(&model.specs);
    let mut caches: Vec<Vec<StepCache>> = Vec::with_capacity(t_len);
    let mut grad_outputs: Vec<Option<Vec<f64>>> = Vec::with_capacity(t_len);
    let mut total_loss = 0.0;
    let mut terms = 0usize;
    let mut correct = 0usize;

    for (input, target) in sample.inputs.iter().zip(&sample.targets) {
        if input.len() != model.input_dim() {
            return Err(Error::ModelShape {
                expected: model.input_dim(),
                got: input.len(),
                context: "training input".into(),
            });
        }
        let x = model.preprocessing.apply(input);
        let mut step_cache = Vec::with_capacity(model.specs.len());
        let out = model.step(&x, &mut state, Some(&mut step_cache));
        caches.push(step_cache);
        match loss_backward(model.config_loss_kind()?, &out, target, final_act)? {
            Some((grad, loss, ok)) => {
                total_loss += loss;
                terms += 1;
                correct += ok as usize;
                grad_outputs.push(Some(grad));
            }
            None => grad_outputs.push(None),
        }
    }

    // Backward through time: per-layer carried hidden-state gradients.
    let mut dh_carry: Vec<Vec<f64>> = model
        .specs
        .iter()
        .map(|s| match s.kind {
            LayerKind::Dense => Vec::new(),
            LayerKind::GatedRecurrent => vec![0.0; s.output_dim],
        })
        .collect();

    for t in (0..t_len).rev() {
        let mut dx: Option<Vec<f64>> = grad_outputs[t].take();
        for li in (0..model.specs.len()).rev() {
            let spec = &model.specs[li];
            let has_carry = spec.kind == LayerKind::GatedRecurrent
                && dh_carry[li].iter().any(|&v| v != 0.0);
            if dx.is_none() && !has_carry {
                continue;
            }
            let p = model.layer_params(li);
            let g_start = model.layouts[li].offset;
            let g = &mut grads[g_start..g_start + spec.param_count()];
            let (i, o) = (spec.input_dim, spec.output_dim);
            match (&caches[t][li], spec.kind) {
                (StepCache::Dense { x, y }, LayerKind::Dense) => {
                    let dy = dx.take().unwrap();
                    // Fused softmax path already holds pre-activation grads.
                    let da: Vec<f64> = if spec.activation == Activation::Softmax {
                        dy
                    } else {
                        dy.iter()
                            .zip(y)
                            .map(|(&d, &yv)| d * spec.activation.derivative_from_output(yv))
                            .collect()
                    };
                    let (gw, gb) = g.split_at_mut(o * i);
                    add_outer(gw, o, i, &da, x);
                    for (b, &d) in gb.iter_mut().zip(&da) {
                        *b += d;
                    }
                    let mut dxn = vec![0.0; i];
                    mul_mat_t_vec_add(&p[..o * i], o, i, &da, &mut dxn);
                    dx = Some(dxn);
                }
                (
                    StepCache::Gru {
                        x,
                        h_prev,
                        z,
                        r,
                        hc,
                    },
                    LayerKind::GatedRecurrent,
                ) => {
                    let mut dh: Vec<f64> = dh_carry[li].clone();
                    if let Some(d) = dx.take() {
                        for (a, b) in dh.iter_mut().zip(&d) {
                            *a += b;
                        }
                    }
                    let (wz, wr, wh, uz, ur, uh, _bz, _br, _bh) = split_gru(p, i, o);
                    let mut dz = vec![0.0; o];
                    let mut dhc = vec![0.0; o];
                    let mut dh_prev = vec![0.0; o];
                    for k in 0..o {
                        dz[k] = dh[k] * (h_prev[k] - hc[k]);
                        dhc[k] = dh[k] * (1.0 - z[k]);
                        dh_prev[k] = dh[k] * z[k];
                    }
                    // Candidate branch.
                    let da_h: Vec<f64> = dhc
                        .iter()
                        .zip(hc)
                        .map(|(&d, &y)| d * spec.activation.derivative_from_output(y))
                        .collect();
                    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
                    let mut drh = vec![0.0; o];
                    mul_mat_t_vec_add(uh, o, o, &da_h, &mut drh);
                    let mut dr = vec![0.0; o];
                    for k in 0..o {
                        dr[k] = drh[k] * h_prev[k];
                        dh_prev[k] += drh[k] * r[k];
                    }
                    // Gate pre-activations.
                    let da_z: Vec<f64> =
                        dz.iter().zip(z).map(|(&d, &y)| d * y * (1.0 - y)).collect();
                    let da_r: Vec<f64> =
                        dr.iter().zip(r).map(|(&d, &y)| d * y * (1.0 - y)).collect();

                    let (gwz, rest) = g.split_at_mut(o * i);
                    let (gwr, rest) = rest.split_at_mut(o * i);
                    let (gwh, rest) = rest.split_at_mut(o * i);
                    let (guz, rest) = rest.split_at_mut(o * o);
                    let (gur, rest) = rest.split_at_mut(o * o);
                    let (guh, rest) = rest.split_at_mut(o * o);
                    let (gbz, rest) = rest.split_at_mut(o);
                    let (gbr, gbh) = rest.split_at_mut(o);
                    add_outer(gwz, o, i, &da_z, x);
                    add_outer(gwr, o, i, &da_r, x);
                    add_outer(gwh, o, i, &da_h, x);
                    add_outer(guz, o, o, &da_z, h_prev);
                    add_outer(gur, o, o, &da_r, h_prev);
                    add_outer(guh, o, o, &da_h, &rh);
                    for k in 0..o {
                        gbz[k] += da_z[k];
                        gbr[k] += da_r[k];
                        gbh[k] += da_h[k];
                    }

                    let mut dxn = vec![0.0; i];
                    mul_mat_t_vec_add(wz, o, i, &da_z, &mut dxn);
                    mul_mat_t_vec_add(wr, o, i, &da_r, &mut dxn);
                    mul_mat_t_vec_add(wh, o, i, &da_h, &mut dxn);
                    mul_mat_t_vec_add(uz, o, o, &da_z, &mut dh_prev);
                    mul_mat_t_vec_add(ur, o, o, &da_r, &mut dh_prev);
                    dh_carry[li] = dh_prev;
                    dx = Some(dxn);
                }
                _ => unreachable!("cache kind always matches layer kind"),
            }
        }
    }
    Ok((total_loss, terms, correct))
}

impl NeuralModel {
    /// The loss kind is a property of training, not the model; forward
    /// passes never need it. Stored transiently during [`train`] calls.
    fn config_loss_kind(&self) -> Result<LossKind> {
        match self.specs.last().unwrap().activation {
            Activation::Softmax => Ok(LossKind::CrossEntropy),
            _ => Ok(LossKind::BandGainMse),
        }
    }
}

/// Train in place, returning the per-epoch loss curve. Deterministic for a
/// fixed seed: weight init (done at model construction), shuffling, and
/// update order are all derived from it.
pub fn train(
    model: &mut NeuralModel,
    data: &[SequenceSample],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let expects_softmax = config.loss == LossKind::CrossEntropy;
    let has_softmax = model.specs.last().unwrap().activation == Activation::Softmax;
    if expects_softmax != has_softmax {
        return Err(Error::InvalidConfig(
            "cross-entropy requires a softmax head; regression forbids it".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = vec![0.0; model.params.len()];
    let mut adam = Adam::new(model.params.len());
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_terms = 0usize;
        let mut epoch_correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            grads.fill(0.0);
            let mut batch_terms = 0usize;
            for &si in batch {
                let (loss, terms, correct) = backprop_sequence(model, &data[si], &mut grads)?;
                epoch_loss += loss;
                epoch_terms += terms;
                epoch_correct += correct;
                batch_terms += terms;
            }
            if batch_terms == 0 {
                continue;
            }
            let scale = 1.0 / batch_terms as f64;
            for g in &mut grads {
                *g *= scale;
            }
            match config.optimizer {
                Optimizer::Sgd => {
                    for (p, &g) in model.params.iter_mut().zip(&grads) {
                        *p -= config.learning_rate * g;
                    }
                }
                Optimizer::Adam => adam.step(&mut model.params, &grads, config.learning_rate),
            }
        }
        let mean_loss = epoch_loss / epoch_terms.max(1) as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became non-finite at epoch {epoch}; lower the learning rate \
                 (currently {})",
                config.learning_rate
            )));
        }
        curve.push(EpochStats {
            epoch,
            loss: mean_loss,
            accuracy: epoch_correct as f64 / epoch_terms.max(1) as f64,
        });
    }
    model.reset_state();
    Ok(curve)
}

/// Numerical gradient of the total sequence loss for one parameter, by
/// central differences. Test and verification support.
pub fn finite_difference_grad(
    model: &mut NeuralModel,
    sample: &SequenceSample,
    index: usize,
    epsilon: f64,
) -> Result<f64> {
    let original = model.params[index];
    model.params[index] = original + epsilon;
    let plus = sequence_loss(model, sample)?;
    model.params[index] = original - epsilon;
    let minus = sequence_loss(model, sample)?;
    model.params[index] = original;
    Ok((plus - minus) / (2.0 * epsilon))
}

/// Total loss of one sequence with the current weights.
pub fn sequence_loss(model: &NeuralModel, sample: &SequenceSample) -> Result<f64> {
    let final_act = model.specs.last().unwrap().activation;
    let mut state = initial_state(&model.specs);
    let mut total = 0.0;
    for (input, target) in sample.inputs.iter().zip(&sample.targets) {
        let x = model.preprocessing.apply(input);
        let out = model.step(&x, &mut state, None);
        if let Some((_, loss, _)) =
            loss_backward(model.config_loss_kind()?, &out, target, final_act)?
        {
            total += loss;
        }
    }
    Ok(total)
}

/// Backpropagated gradients of the total sequence loss, flattened in
/// parameter order. Test and verification support.
pub fn analytic_grads(model: &NeuralModel, sample: &SequenceSample) -> Result<Vec<f64>> {
    let mut grads = vec![0.0; model.params.len()];
    backprop_sequence(model, sample, &mut grads)?;
    Ok(grads)
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Write the model to the portable little-endian format.
pub fn save_model(model: &NeuralModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    push_u32(&mut buf, MODEL_VERSION);
    buf.push(model.preprocessing.tag());
    push_u32(&mut buf, model.fft_size);
    push_u32(&mut buf, model.specs.len() as u32);
    for spec in &model.specs {
        buf.push(match spec.kind {
            LayerKind::Dense => 0,
            LayerKind::GatedRecurrent => 1,
        });
        push_u32(&mut buf, spec.input_dim as u32);
        push_u32(&mut buf, spec.output_dim as u32);
        buf.push(spec.activation.tag());
    }
    for &p in &model.params {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::ModelFile(format!(
                "truncated file: needed {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Load a model file, validating header, dims, and length.
pub fn load_model(path: impl AsRef<Path>) -> Result<NeuralModel> {
    let mut data = Vec::new();
    fs::File::open(path.as_ref())?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };
    let magic = r.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::ModelFile(format!(
            "bad magic {:02x?}, expected {:02x?}",
            magic, MODEL_MAGIC
        )));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format version {version}, expected {MODEL_VERSION}"
        )));
    }
    let preprocessing = Preprocessing::from_tag(r.u8()?)?;
    let fft_size = r.u32()?;
    let layer_count = r.u32()? as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(Error::ModelFile(format!(
            "implausible layer count {layer_count}"
        )));
    }
    let mut specs = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let kind = match r.u8()? {
            0 => LayerKind::Dense,
            1 => LayerKind::GatedRecurrent,
            t => return Err(Error::ModelFile(format!("unknown layer kind tag {t}"))),
        };
        let input_dim = r.u32()? as usize;
        let output_dim = r.u32()? as usize;
        let activation = Activation::from_tag(r.u8()?)?;
        specs.push(LayerSpec {
            kind,
            input_dim,
            output_dim,
            activation,
        });
    }
    validate_specs(&specs).map_err(|e| Error::ModelFile(e.to_string()))?;
    let total: usize = specs.iter().map(|s| s.param_count()).sum();
    let mut params = Vec::with_capacity(total);
    for _ in 0..total {
        params.push(r.f32()? as f64);
    }
    if r.pos != data.len() {
        return Err(Error::ModelFile(format!(
            "{} trailing bytes after weights",
            data.len() - r.pos
        )));
    }
    let mut layouts = Vec::with_capacity(specs.len());
    let mut offset = 0;
    for spec in &specs {
        layouts.push(Layout { offset });
        offset += spec.param_count();
    }
    let state = initial_state(&specs);
    Ok(NeuralModel {
        specs,
        layouts,
        params,
        state,
        preprocessing,
        fft_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FFT_SIZE;

    fn tiny_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weight_dense_maps_everything_to_zero() {
        let mut model = NeuralModel::new(
            vec![LayerSpec::dense(4, 3, Activation::Identity)],
            Preprocessing::None,
            FFT_SIZE as u32,
            1,
        )
        .unwrap();
        model.params.fill(0.0);
        let out = model.forward(&[1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut model = NeuralModel::new(
            vec![LayerSpec::dense(3, 3, Activation::Identity)],
            Preprocessing::None,
            FFT_SIZE as u32,
            1,
        )
        .unwrap();
        model.params.fill(0.0);
        for i in 0..3 {
            model.params[i * 3 + i] = 1.0;
        }
        let x = vec![0.5, -1.25, 2.0];
        assert_eq!(model.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weight_recurrence_halves_the_state() {
        let mut model = NeuralModel::new(
            vec![LayerSpec::gated_recurrent(2, 3)],
            Preprocessing::None,
            FFT_SIZE as u32,
            1,
        )
        .unwrap();
        model.params.fill(0.0);
        model.state[0] = vec![1.0, -0.5, 2.0];
        let mut expected = model.state[0].clone();
        for _ in 0..4 {
            let out = model.forward(&[0.3, 0.7]).unwrap();
            for e in &mut expected {
                *e *= 0.5;
            }
            for (o, e) in out.iter().zip(&expected) {
                assert!((o - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_outputs_sum_to_one() {
        let mut model = NeuralModel::new(
            vec![
                LayerSpec::dense(6, 5, Activation::Tanh),
                LayerSpec::dense(5, 7, Activation::Softmax),
            ],
            Preprocessing::None,
            FFT_SIZE as u32,
            3,
        )
        .unwrap();
        let mut rng = tiny_rng(9);
        for _ in 0..20 {
            let out = model.forward(&random_vec(&mut rng, 6)).unwrap();
            let sum: f64 = out.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(out.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn state_reset_restores_initial_behavior() {
        let mut model = NeuralModel::new(
            vec![
                LayerSpec::gated_recurrent(3, 4),
                LayerSpec::dense(4, 2, Activation::Identity),
            ],
            Preprocessing::None,
            FFT_SIZE as u32,
            5,
        )
        .unwrap();
        let mut rng = tiny_rng(11);
        let first_input = random_vec(&mut rng, 3);
        let first = model.forward(&first_input).unwrap();
        for _ in 0..10 {
            model.forward(&random_vec(&mut rng, 3)).unwrap();
        }
        model.reset_state();
        assert_eq!(model.forward(&first_input).unwrap(), first);
    }

    #[test]
    fn rejects_mismatched_input_dims() {
        let mut model = NeuralModel::new(
            vec![LayerSpec::dense(4, 2, Activation::Identity)],
            Preprocessing::None,
            FFT_SIZE as u32,
            1,
        )
        .unwrap();
        assert!(matches!(
            model.forward(&[1.0, 2.0]),
            Err(Error::ModelShape { expected: 4, got: 2, .. })
        ));
    }

    #[test]
    fn rejects_broken_specs() {
        for specs in [
            vec![],
            vec![LayerSpec::dense(0, 3, Activation::Identity)],
            vec![
                LayerSpec::dense(3, 4, Activation::Softmax),
                LayerSpec::dense(4, 2, Activation::Identity),
            ],
            vec![
                LayerSpec::dense(3, 4, Activation::Tanh),
                LayerSpec::dense(5, 2, Activation::Identity),
            ],
        ] {
            assert!(NeuralModel::new(specs, Preprocessing::None, 320, 1).is_err());
        }
    }

    fn gradient_check(model: &mut NeuralModel, sample: &SequenceSample) {
        let analytic = analytic_grads(model, sample).unwrap();
        for idx in 0..model.param_count() {
            let numeric = finite_difference_grad(model, sample, idx, 1e-4).unwrap();
            let denom = analytic[idx].abs().max(numeric.abs()).max(1e-2);
            let rel = (analytic[idx] - numeric).abs() / denom;
            assert!(
                rel < 1e-4,
                "param {idx}: analytic {} vs numeric {} (rel {rel})",
                analytic[idx],
                numeric
            );
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = tiny_rng(21);
        let mut model = NeuralModel::new(
            vec![
                LayerSpec::dense(4, 5, Activation::Tanh),
                LayerSpec::dense(5, 3, Activation::Softmax),
            ],
            Preprocessing::None,
            FFT_SIZE as u32,
            7,
        )
        .unwrap();
        let sample = SequenceSample {
            inputs: (0..6).map(|_| random_vec(&mut rng, 4)).collect(),
            targets: (0..6).map(|t| Target::Class(t % 3)).collect(),
        };
        gradient_check(&mut model, &sample);
    }

    #[test]
    fn recurrent_gradients_match_finite_differences_through_time() {
        let mut rng = tiny_rng(22);
        let mut model = NeuralModel::new(
            vec![
                LayerSpec::gated_recurrent(3, 4),
                LayerSpec::dense(4, 2, Activation::Sigmoid),
            ],
            Preprocessing::None,
            FFT_SIZE as u32,
            8,
        )
        .unwrap();
        let sample = SequenceSample {
            inputs: (0..7).map(|_| random_vec(&mut rng, 3)).collect(),
            targets: (0..7)
                .map(|_| Target::Vector(random_vec(&mut rng, 2)))
                .collect(),
        };
        gradient_check(&mut model, &sample);
    }

    #[test]
    fn masked_steps_carry_no_gradient_but_recurrence_still_flows() {
        let mut rng = tiny_rng(23);
        let mut model = NeuralModel::new(
            vec![
                LayerSpec::gated_recurrent(2, 3),
                LayerSpec::dense(3, 4, Activation::Softmax),
            ],
            Preprocessing::None,
            FFT_SIZE as u32,
            9,
        )
        .unwrap();
        let sample = SequenceSample {
            inputs: (0..6).map(|_| random_vec(&mut rng, 2)).collect(),
            targets: vec![
                Target::Masked,
                Target::Masked,
                Target::Class(1),
                Target::Masked,
                Target::Class(3),
                Target::Class(0),
            ],
        };
        gradient_check(&mut model, &sample);
    }

    #[test]
    fn relu_and_preprocessing_gradients_check_out() {
        let mut rng = tiny_rng(24);
        let mut model = NeuralModel::new(
            vec![
                LayerSpec::dense(5, 4, Activation::Relu),
                LayerSpec::gated_recurrent(4, 3),
                LayerSpec::dense(3, 2, Activation::Softmax),
            ],
            Preprocessing::Log1pMaxNorm,
            FFT_SIZE as u32,
            10,
        )
        .unwrap();
        let sample = SequenceSample {
            inputs: (0..5)
                .map(|_| (0..5).map(|_| rng.gen_range(0.0..10.0)).collect())
                .collect(),
            targets: (0..5).map(|t| Target::Class(t % 2)).collect(),
        };
        gradient_check(&mut model, &sample);
    }

    #[test]
    fn separable_two_class_problem_trains_to_accuracy() {
        let mut rng = tiny_rng(31);
        let mut data = Vec::new();
        for _ in 0..60 {
            let class = rng.gen_range(0..2usize);
            let center = if class == 0 { -1.0 } else { 1.0 };
            let x = vec![
                center + rng.gen_range(-0.3..0.3),
                -center + rng.gen_range(-0.3..0.3),
            ];
            data.push(SequenceSample {
                inputs: vec![x],
                targets: vec![Target::Class(class)],
            });
        }
        let mut model = NeuralModel::new(
            vec![LayerSpec::dense(2, 2, Activation::Softmax)],
            Preprocessing::None,
            FFT_SIZE as u32,
            42,
        )
        .unwrap();
        let curve = train(
            &mut model,
            &data,
            &TrainConfig {
                learning_rate: 0.05,
                batch_size: 8,
                epochs: 200,
                optimizer: Optimizer::Sgd,
                seed: 1,
                loss: LossKind::CrossEntropy,
            },
        )
        .unwrap();
        let last = curve.last().unwrap();
        assert!(last.accuracy >= 0.99, "accuracy {}", last.accuracy);
        assert!(last.loss <= curve[0].loss);
    }

    #[test]
    fn adam_memorizes_random_labels() {
        let mut rng = tiny_rng(37);
        let data: Vec<SequenceSample> = (0..16)
            .map(|_| SequenceSample {
                inputs: vec![(0..12).map(|_| rng.gen_range(0.0..4.0)).collect()],
                targets: vec![Target::Class(rng.gen_range(0..6usize))],
            })
            .collect();
        let mut model = NeuralModel::new(
            vec![
                LayerSpec::dense(12, 16, Activation::Tanh),
                LayerSpec::gated_recurrent(16, 12),
                LayerSpec::dense(12, 6, Activation::Softmax),
            ],
            Preprocessing::Log1pMaxNorm,
            FFT_SIZE as u32,
            4,
        )
        .unwrap();
        let curve = train(
            &mut model,
            &data,
            &TrainConfig {
                learning_rate: 5e-3,
                batch_size: 4,
                epochs: 300,
                optimizer: Optimizer::Adam,
                seed: 2,
                loss: LossKind::CrossEntropy,
            },
        )
        .unwrap();
        assert!(
            curve.last().unwrap().accuracy == 1.0,
            "memorization accuracy {}",
            curve.last().unwrap().accuracy
        );
    }

    #[test]
    fn training_is_bit_reproducible() {
        let mut rng = tiny_rng(41);
        let data: Vec<SequenceSample> = (0..8)
            .map(|_| SequenceSample {
                inputs: (0..4).map(|_| random_vec(&mut rng, 3)).collect(),
                targets: (0..4).map(|_| Target::Class(rng.gen_range(0..3))).collect(),
            })
            .collect();
        let run = || {
            let mut model = NeuralModel::new(
                vec![
                    LayerSpec::gated_recurrent(3, 5),
                    LayerSpec::dense(5, 3, Activation::Softmax),
                ],
                Preprocessing::None,
                FFT_SIZE as u32,
                77,
            )
            .unwrap();
            train(&mut model, &data, &TrainConfig::default()).unwrap();
            model.params.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn model_file_round_trips_bit_exactly_once_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let path2 = dir.path().join("model2.bin");
        let model = NeuralModel::new(
            vec![
                LayerSpec::dense(6, 8, Activation::Tanh),
                LayerSpec::gated_recurrent(8, 4),
                LayerSpec::dense(4, 5, Activation::Softmax),
            ],
            Preprocessing::Log1pMaxNorm,
            FFT_SIZE as u32,
            13,
        )
        .unwrap();
        save_model(&model, &path).unwrap();
        let mut loaded = load_model(&path).unwrap();
        assert_eq!(loaded.specs(), model.specs());
        assert_eq!(loaded.preprocessing(), model.preprocessing());
        assert_eq!(loaded.fft_size(), model.fft_size());

        save_model(&loaded, &path2).unwrap();
        let mut reloaded = load_model(&path2).unwrap();
        let mut rng = tiny_rng(51);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..5.0)).collect();
            let a = loaded.forward(&x).unwrap();
            let b = reloaded.forward(&x).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn corrupt_files_are_rejected_with_typed_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = NeuralModel::new(
            vec![LayerSpec::dense(3, 2, Activation::Identity)],
            Preprocessing::None,
            FFT_SIZE as u32,
            1,
        )
        .unwrap();
        save_model(&model, &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFile(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 99;
        fs::write(&path, &bad_version).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFile(_))));

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFile(_))));

        let mut trailing = good.clone();
        trailing.extend_from_slice(&[0, 1, 2, 3]);
        fs::write(&path, &trailing).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFile(_))));
    }

    #[test]
    fn nan_loss_aborts_with_guidance() {
        let data = vec![SequenceSample {
            inputs: vec![vec![1e3, -1e3]],
            targets: vec![Target::Vector(vec![0.0, 0.0])],
        }];
        let mut model = NeuralModel::new(
            vec![LayerSpec::dense(2, 2, Activation::Identity)],
            Preprocessing::None,
            FFT_SIZE as u32,
            1,
        )
        .unwrap();
        let result = train(
            &mut model,
            &data,
            &TrainConfig {
                learning_rate: 1e200,
                epochs: 4,
                optimizer: Optimizer::Sgd,
                loss: LossKind::BandGainMse,
                ..TrainConfig::default()
            },
        );
        match result {
            Err(Error::Numeric(msg)) => assert!(msg.contains("learning rate")),
            other => panic!("expected numeric abort, got {other:?}"),
        }
    }
}
