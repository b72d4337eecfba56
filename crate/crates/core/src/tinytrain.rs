//! Desk-scale trainable MLP members.
//!
//! Fully connected ReLU networks with softmax output, label-smoothed
//! cross-entropy, L2 weight decay, inverted dropout on hidden activations and
//! SGD with momentum under a constant / linear-anneal / constant schedule.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archspace::{ArchFamily, FamilyKind, Outputs};
use crate::datagen::Samples;
use crate::error::{Error, Result};
use crate::seed;

/// Training losses above this are treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Three-phase learning-rate schedule: hold, anneal linearly to
/// `lr * final_ratio`, hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub constant: f64,
    pub anneal: f64,
    pub tail: f64,
    pub final_ratio: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        // 100 / 80 / 20 out of 200 epochs.
        Schedule {
            constant: 0.5,
            anneal: 0.4,
            tail: 0.1,
            final_ratio: 0.01,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.constant, self.anneal, self.tail];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("schedule fractions must be nonnegative".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("schedule fractions must sum to 1".into()));
        }
        if !(self.final_ratio > 0.0 && self.final_ratio <= 1.0) {
            return Err(Error::InvalidInput("final lr ratio must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// First epoch of the anneal phase and first epoch of the tail phase.
    pub fn boundaries(&self, epochs: usize) -> (usize, usize) {
        let e = epochs as f64;
        let start = (self.constant * e).round() as usize;
        let end = ((self.constant + self.anneal) * e).round() as usize;
        (start.min(epochs), end.min(epochs).max(start.min(epochs)))
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, base_lr: f64, epoch: usize, epochs: usize) -> f64 {
        let (start, end) = self.boundaries(epochs);
        let floor = base_lr * self.final_ratio;
        if epoch < start {
            base_lr
        } else if epoch < end {
            let t = (epoch - start) as f64 / (end - start) as f64;
            base_lr + (floor - base_lr) * t
        } else {
            floor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub label_smoothing: f64,
    /// Seed of the shuffling and dropout streams.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr: 0.05,
            weight_decay: 0.0,
            dropout: 0.0,
            momentum: 0.9,
            epochs: 60,
            batch_size: 128,
            schedule: Schedule::default(),
            label_smoothing: 0.0,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("hyperparameter {what} out of range")));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum");
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad("label_smoothing");
        }
        if self.epochs == 0 {
            return bad("epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        self.schedule.validate()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Hyperparams {
            seed,
            ..self.clone()
        }
    }
}

/// Dense layer, weights stored row-major as `fan_out x fan_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    /// `out[r] = W x[r] + b` for every row of `x`.
    fn apply(&self, x: &[f64], rows: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(rows * self.fan_out, 0.0);
        for r in 0..rows {
            let xr = &x[r * self.fan_in..(r + 1) * self.fan_in];
            let or = &mut out[r * self.fan_out..(r + 1) * self.fan_out];
            for (o, w) in self.weights.chunks_exact(self.fan_in).enumerate() {
                let mut acc = self.bias[o];
                for (a, b) in w.iter().zip(xr) {
                    acc += a * b;
                }
                or[o] = acc;
            }
        }
    }
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// Inverted dropout on hidden activations with a mask stream seeded by
    /// `seed`.
    Train { dropout: f64, seed: u64 },
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

/// One ensemble member: architecture identity, weights and training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedMember {
    pub family: FamilyKind,
    pub k: u64,
    pub seed: u64,
    pub layers: Vec<Dense>,
    pub hp: Option<Hyperparams>,
    pub trace: Vec<EpochTrace>,
}

/// Serialized alongside the binary weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberMetadata {
    pub family: FamilyKind,
    pub k: u64,
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub hp: Option<Hyperparams>,
    pub trace: Vec<EpochTrace>,
}

/// Layer sizes `[input, hidden..., classes]` of an MLP family at width `k`.
pub fn mlp_sizes(family: &ArchFamily, k: u64) -> Result<Vec<usize>> {
    if family.kind != FamilyKind::Mlp {
        return Err(Error::InvalidInput(format!(
            "only the mlp family is trainable, got {}",
            family.name()
        )));
    }
    family.check_width(k)?;
    let mut sizes = Vec::with_capacity(family.layers.len() + 1);
    for (i, l) in family.weight_layers().enumerate() {
        if i == 0 {
            sizes.push(l.fan_in.at(k) as usize);
        }
        sizes.push(l.fan_out.at(k) as usize);
    }
    if let Outputs::Classes(c) = family.outputs {
        debug_assert_eq!(*sizes.last().unwrap(), c as usize);
    }
    Ok(sizes)
}

/// Draws a fresh network. Weights and biases are uniform on
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_network(family: &ArchFamily, k: u64, seed: u64) -> Result<TrainedMember> {
    let sizes = mlp_sizes(family, k)?;
    let mut member = TrainedMember::from_sizes(&sizes, seed);
    member.family = family.kind;
    member.k = k;
    Ok(member)
}

/// Reusable buffers for a forward/backward pass.
#[derive(Debug, Default)]
struct Workspace {
    /// Layer inputs; `acts[0]` is the batch itself.
    acts: Vec<Vec<f64>>,
    /// Per hidden unit: 0 where the unit is off, else the dropout scale.
    gates: Vec<Vec<f64>>,
    logits: Vec<f64>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl TrainedMember {
    /// Network with explicit layer sizes, outside any registered family.
    pub fn from_sizes(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                for p in layer.params_mut() {
                    *p = rng.gen_range(-bound..=bound);
                }
                layer
            })
            .collect();
        TrainedMember {
            family: FamilyKind::Mlp,
            k: 0,
            seed,
            layers,
            hp: None,
            trace: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.fan_out));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.params_mut())
    }

    pub fn squared_norm(&self) -> f64 {
        self.params().map(|p| p * p).sum()
    }

    fn check_inputs(&self, inputs: &[f64]) -> Result<usize> {
        let d = self.input_dim();
        if !inputs.len().is_multiple_of(d) {
            return Err(Error::ShapeMismatch {
                what: "input row length",
                got: inputs.len() % d,
                expected: 0,
            });
        }
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite input".into()));
        }
        Ok(inputs.len() / d)
    }

    fn run_forward(&self, inputs: &[f64], rows: usize, mode: Mode, ws: &mut Workspace) {
        let hidden = self.layers.len() - 1;
        ws.acts.resize_with(self.layers.len(), Vec::new);
        ws.gates.resize_with(hidden, Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(inputs);
        let mut rng = match mode {
            Mode::Train { seed, dropout } if dropout > 0.0 => Some((ChaCha8Rng::seed_from_u64(seed), dropout)),
            _ => None,
        };
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            if l == hidden {
                layer.apply(input, rows, &mut ws.logits);
                break;
            }
            let out = &mut tail[0];
            layer.apply(input, rows, out);
            let gate = &mut ws.gates[l];
            gate.clear();
            gate.resize(out.len(), 1.0);
            if let Some((rng, rate)) = rng.as_mut() {
                let keep = 1.0 / (1.0 - *rate);
                for g in gate.iter_mut() {
                    *g = if rng.gen::<f64>() < *rate { 0.0 } else { keep };
                }
            }
            for (z, g) in out.iter_mut().zip(gate.iter_mut()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
                *z *= *g;
            }
        }
    }

    /// Class probabilities, one row of `classes()` values per input row.
    pub fn forward(&self, inputs: &[f64], mode: Mode) -> Result<Vec<f64>> {
        let rows = self.check_inputs(inputs)?;
        let mut ws = Workspace::default();
        self.run_forward(inputs, rows, mode, &mut ws);
        let mut probs = ws.logits;
        for row in probs.chunks_exact_mut(self.classes()) {
            softmax_in_place(row);
        }
        Ok(probs)
    }

    /// Sign pattern of every hidden pre-activation (eval mode).
    pub fn activation_pattern(&self, inputs: &[f64]) -> Result<Vec<bool>> {
        let rows = self.check_inputs(inputs)?;
        let mut ws = Workspace::default();
        self.run_forward(inputs, rows, Mode::Eval, &mut ws);
        Ok(ws.gates.iter().flatten().map(|g| *g > 0.0).collect())
    }

    /// Label-smoothed cross-entropy plus `(wd / 2) ||theta||^2` and its
    /// gradient, laid out like `self.layers`.
    pub fn loss_and_grad(
        &self,
        inputs: &[f64],
        labels: &[usize],
        hp: &Hyperparams,
        mode: Mode,
    ) -> Result<(f64, Vec<Dense>)> {
        let rows = self.check_inputs(inputs)?;
        if rows != labels.len() {
            return Err(Error::ShapeMismatch {
                what: "labels",
                got: labels.len(),
                expected: rows,
            });
        }
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense::zeros(l.fan_in, l.fan_out))
            .collect();
        let mut ws = Workspace::default();
        let loss = self.accumulate_grad(inputs, labels, hp, mode, &mut ws, &mut grads)?;
        Ok((loss, grads))
    }

    fn accumulate_grad(
        &self,
        inputs: &[f64],
        labels: &[usize],
        hp: &Hyperparams,
        mode: Mode,
        ws: &mut Workspace,
        grads: &mut [Dense],
    ) -> Result<f64> {
        let rows = labels.len();
        let classes = self.classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidInput(format!("label {bad} out of range for {classes} classes")));
        }
        self.run_forward(inputs, rows, mode, ws);

        let eps = hp.label_smoothing;
        let off = eps / classes as f64;
        let on = 1.0 - eps + off;
        let inv_rows = 1.0 / rows as f64;
        let mut data_loss = 0.0;
        ws.delta.clear();
        ws.delta.resize(rows * classes, 0.0);
        for ((z, d), &y) in ws
            .logits
            .chunks_exact(classes)
            .zip(ws.delta.chunks_exact_mut(classes))
            .zip(labels)
        {
            let lse = log_sum_exp(z);
            for c in 0..classes {
                let target = if c == y { on } else { off };
                let logp = z[c] - lse;
                data_loss -= target * logp;
                d[c] = (logp.exp() - target) * inv_rows;
            }
        }
        data_loss *= inv_rows;

        for g in grads.iter_mut() {
            g.weights.iter_mut().for_each(|w| *w = 0.0);
            g.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (fi, fo) = (layer.fan_in, layer.fan_out);
            let input = &ws.acts[l];
            let g = &mut grads[l];
            for r in 0..rows {
                let dr = &ws.delta[r * fo..(r + 1) * fo];
                let xr = &input[r * fi..(r + 1) * fi];
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    for (gw, x) in g.weights[o * fi..(o + 1) * fi].iter_mut().zip(xr) {
                        *gw += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            ws.delta_prev.clear();
            ws.delta_prev.resize(rows * fi, 0.0);
            for r in 0..rows {
                let dr = &ws.delta[r * fo..(r + 1) * fo];
                let pr = &mut ws.delta_prev[r * fi..(r + 1) * fi];
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in pr.iter_mut().zip(&layer.weights[o * fi..(o + 1) * fi]) {
                        *p += d * w;
                    }
                }
            }
            for (p, g) in ws.delta_prev.iter_mut().zip(&ws.gates[l - 1]) {
                *p *= g;
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }

        let mut penalty = 0.0;
        if hp.weight_decay > 0.0 {
            for (layer, g) in self.layers.iter().zip(grads.iter_mut()) {
                for (gp, p) in g.params_mut().zip(layer.params()) {
                    *gp += hp.weight_decay * p;
                    penalty += p * p;
                }
            }
            penalty *= 0.5 * hp.weight_decay;
        }
        Ok(data_loss + penalty)
    }

    /// Writes the binary weights file: magic `MSW1`, layer count, then per
    /// layer `fan_in`, `fan_out` (u32 LE) followed by weights and biases
    /// (f64 LE).
    pub fn write_weights(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"MSW1")?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.fan_in as u32).to_le_bytes())?;
            w.write_all(&(l.fan_out as u32).to_le_bytes())?;
            for p in l.params() {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_weights(mut r: impl Read) -> Result<Vec<Dense>> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"MSW1" {
            return Err(Error::InvalidInput("not a weights file".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<usize> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf) as usize)
        };
        let n = read_u32(&mut r)?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let fan_in = read_u32(&mut r)?;
            let fan_out = read_u32(&mut r)?;
            let mut layer = Dense::zeros(fan_in, fan_out);
            let mut buf = [0u8; 8];
            for p in layer.params_mut() {
                r.read_exact(&mut buf)?;
                *p = f64::from_le_bytes(buf);
            }
            layers.push(layer);
        }
        Ok(layers)
    }

    pub fn metadata(&self) -> MemberMetadata {
        MemberMetadata {
            family: self.family,
            k: self.k,
            seed: self.seed,
            sizes: self.sizes(),
            hp: self.hp.clone(),
            trace: self.trace.clone(),
        }
    }

    /// Saves `<stem>.bin` and `<stem>.json` in `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(self.param_count() * 8 + 64);
        self.write_weights(&mut bytes)?;
        std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
        let meta = serde_json::to_vec_pretty(&self.metadata())?;
        std::fs::write(dir.join(format!("{stem}.json")), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta: MemberMetadata =
            serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.json")))?)?;
        let layers = Self::read_weights(std::fs::File::open(dir.join(format!("{stem}.bin")))?)?;
        let member = TrainedMember {
            family: meta.family,
            k: meta.k,
            seed: meta.seed,
            layers,
            hp: meta.hp,
            trace: meta.trace,
        };
        if member.sizes() != meta.sizes {
            return Err(Error::InvalidInput(format!("weights for {stem} do not match metadata")));
        }
        Ok(member)
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(probs: &[f64], labels: &[usize], classes: usize) -> f64 {
    let hits = probs
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch SGD with momentum (`v = mu v + g; theta -= lr v`).
///
/// Shuffling and dropout masks are derived from `hp.seed`, the epoch and the
/// batch index, so the result depends only on the inputs. `val` may be empty.
pub fn train(
    mut member: TrainedMember,
    train_set: &Samples,
    val: &Samples,
    hp: &Hyperparams,
) -> Result<TrainedMember> {
    hp.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training split".into()));
    }
    if train_set.dim != member.input_dim() {
        return Err(Error::ShapeMismatch {
            what: "input dimension",
            got: train_set.dim,
            expected: member.input_dim(),
        });
    }
    let n = train_set.len();
    let dim = train_set.dim;
    let mut order: Vec<usize> = (0..n).collect();
    let mut grads: Vec<Dense> = member
        .layers
        .iter()
        .map(|l| Dense::zeros(l.fan_in, l.fan_out))
        .collect();
    let mut velocity = grads.clone();
    let mut ws = Workspace::default();
    let mut xb = Vec::with_capacity(hp.batch_size * dim);
    let mut yb = Vec::with_capacity(hp.batch_size);
    let start_epoch = member.trace.len();

    for epoch in start_epoch..hp.epochs {
        let lr = hp.schedule.lr_at(hp.lr, epoch, hp.epochs);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed::derive(hp.seed, &[1, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(hp.batch_size).enumerate() {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(train_set.row(i));
                yb.push(train_set.y[i]);
            }
            let mode = Mode::Train {
                dropout: hp.dropout,
                seed: seed::derive(hp.seed, &[2, epoch as u64, b as u64]),
            };
            let loss = member.accumulate_grad(&xb, &yb, hp, mode, &mut ws, &mut grads)?;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            for ((layer, v), g) in member.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((p, vp), gp) in layer.params_mut().zip(v.params_mut()).zip(g.params()) {
                    *vp = hp.momentum * *vp + gp;
                    *p -= lr * *vp;
                }
            }
        }
        let val_accuracy = if val.is_empty() {
            None
        } else {
            let probs = member.forward(&val.x, Mode::Eval)?;
            Some(accuracy(&probs, &val.y, member.classes()))
        };
        member.trace.push(EpochTrace {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            val_accuracy,
        });
    }
    if member.params().any(|p| !p.is_finite()) {
        return Err(Error::Diverged {
            epoch: hp.epochs.saturating_sub(1),
            loss: f64::NAN,
        });
    }
    member.hp = Some(hp.clone());
    Ok(member)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::MlpShape;

    fn tiny_family() -> ArchFamily {
        ArchFamily::mlp(&MlpShape {
            input_dim: 2,
            classes: 2,
            hidden: vec![1, 2],
            k_max: 16,
            standard_k: None,
        })
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let fam = tiny_family();
        let a = init_network(&fam, 4, 1).unwrap();
        let b = init_network(&fam, 4, 1).unwrap();
        let c = init_network(&fam, 4, 2).unwrap();
        assert_eq!(a, b);
        let diff = a
            .params()
            .zip(c.params())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
        assert_eq!(a.param_count() as u64, fam.param_count(4).unwrap());
    }

    #[test]
    fn init_scale_matches_uniform_variance() {
        let m = TrainedMember::from_sizes(&[100, 400], 9);
        let w = &m.layers[0].weights;
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        // U(-a, a) has variance a^2 / 3 with a = 1 / sqrt(100).
        let expected = (0.01f64 / 3.0).sqrt();
        assert!((var.sqrt() / expected - 1.0).abs() < 0.2);
    }

    #[test]
    fn zero_network_is_uniform() {
        let mut m = TrainedMember::from_sizes(&[3, 5, 4], 0);
        m.params_mut().for_each(|p| *p = 0.0);
        let p = m.forward(&[0.3, -1.0, 2.0, 1.0, 1.0, 1.0], Mode::Eval).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn rows_are_distributions_and_eval_is_deterministic() {
        let m = TrainedMember::from_sizes(&[3, 6, 6, 5], 4);
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let p = m.forward(&x, Mode::Eval).unwrap();
        for row in p.chunks(5) {
            assert!(row.iter().all(|v| *v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(p, m.forward(&x, Mode::Eval).unwrap());
        let t = m.forward(&x, Mode::Train { dropout: 0.5, seed: 1 }).unwrap();
        assert_ne!(p, t);
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = TrainedMember::from_sizes(&[2, 3, 2], 0);
        assert!(m.forward(&[f64::NAN, 0.0], Mode::Eval).is_err());
        assert!(m.forward(&[1.0, 0.0, 2.0], Mode::Eval).is_err());
    }

    #[test]
    fn uniform_prediction_loss_is_log_classes() {
        let mut m = TrainedMember::from_sizes(&[2, 3, 5], 0);
        m.params_mut().for_each(|p| *p = 0.0);
        let hp = Hyperparams {
            label_smoothing: 0.1,
            ..Hyperparams::default()
        };
        let (loss, _) = m
            .loss_and_grad(&[1.0, 2.0, -1.0, 0.5], &[0, 4], &hp, Mode::Eval)
            .unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let mut m = TrainedMember::from_sizes(&[1, 2, 2], 0);
        m.params_mut().for_each(|p| *p = 0.0);
        m.layers[1].bias = vec![60.0, -60.0];
        let hp = Hyperparams::default();
        let (loss, _) = m.loss_and_grad(&[0.0], &[0], &hp, Mode::Eval).unwrap();
        assert!(loss < 1e-40);
    }

    #[test]
    fn mismatched_labels_rejected() {
        let m = TrainedMember::from_sizes(&[2, 2, 2], 0);
        let hp = Hyperparams::default();
        assert!(m.loss_and_grad(&[1.0, 2.0], &[0, 1], &hp, Mode::Eval).is_err());
        assert!(m.loss_and_grad(&[1.0, 2.0], &[2], &hp, Mode::Eval).is_err());
    }

    #[test]
    fn schedule_boundaries() {
        let s = Schedule::default();
        let lr = 0.1;
        assert_eq!(s.boundaries(60), (30, 54));
        assert_eq!(s.lr_at(lr, 0, 60), lr);
        assert_eq!(s.lr_at(lr, 29, 60), lr);
        assert!((s.lr_at(lr, 54, 60) - lr / 100.0).abs() < 1e-18);
        assert!((s.lr_at(lr, 59, 60) - lr / 100.0).abs() < 1e-18);
        assert_eq!(s.boundaries(200), (100, 180));
        let lrs: Vec<f64> = (0..60).map(|e| s.lr_at(lr, e, 60)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn invalid_hyperparams() {
        let mut hp = Hyperparams::default();
        hp.schedule.tail = 0.2;
        assert!(hp.validate().is_err());
        let hp = Hyperparams {
            dropout: 1.0,
            ..Hyperparams::default()
        };
        assert!(hp.validate().is_err());
    }

    #[test]
    fn weights_round_trip() {
        let m = TrainedMember::from_sizes(&[4, 3, 2], 11);
        let mut buf = Vec::new();
        m.write_weights(&mut buf).unwrap();
        assert_eq!(TrainedMember::read_weights(buf.as_slice()).unwrap(), m.layers);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path(), "m0").unwrap();
        assert_eq!(TrainedMember::load(dir.path(), "m0").unwrap(), m);
    }
}
