//! Width-parameterized architecture families and exact parameter counting.
//!
//! Every family is a list of layer descriptors whose fan-in, fan-out and
//! auxiliary (normalization scale/shift) sizes are affine in the width
//! factor `k`. The parameter count is therefore a quadratic polynomial in
//! `k`, which [`solve_width`] inverts to find the member width for a given
//! per-member budget.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `per_k * k + constant`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Affine {
    pub per_k: u64,
    pub constant: u64,
}

impl Affine {
    pub const ZERO: Affine = Affine::fixed(0);

    pub const fn scaled(per_k: u64) -> Self {
        Affine { per_k, constant: 0 }
    }

    pub const fn fixed(constant: u64) -> Self {
        Affine { per_k: 0, constant }
    }

    pub const fn times(self, m: u64) -> Self {
        Affine {
            per_k: self.per_k * m,
            constant: self.constant * m,
        }
    }

    pub fn at(self, k: u64) -> u64 {
        self.per_k * k + self.constant
    }
}

/// One weight-bearing layer. Parameters at width `k` are
/// `fan_in(k) * fan_out(k) + [fan_out(k) if bias] + aux(k)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub fan_in: Affine,
    pub fan_out: Affine,
    pub bias: bool,
    pub aux: Affine,
}

impl LayerDesc {
    fn dense(name: impl Into<String>, fan_in: Affine, fan_out: Affine) -> Self {
        LayerDesc {
            name: name.into(),
            fan_in,
            fan_out,
            bias: true,
            aux: Affine::ZERO,
        }
    }

    fn conv3x3(name: impl Into<String>, c_in: Affine, c_out: Affine) -> Self {
        Self::dense(name, c_in.times(9), c_out)
    }

    fn norm(name: impl Into<String>, channels: Affine) -> Self {
        // Scale and shift only; running statistics are buffers, not parameters.
        LayerDesc {
            name: name.into(),
            fan_in: Affine::ZERO,
            fan_out: Affine::ZERO,
            bias: false,
            aux: channels.times(2),
        }
    }

    fn embedding(name: impl Into<String>, vocab: u64) -> Self {
        LayerDesc {
            name: name.into(),
            fan_in: Affine::fixed(vocab),
            fan_out: Affine::scaled(1),
            bias: false,
            aux: Affine::ZERO,
        }
    }

    /// Parameter count of this layer at width `k`.
    pub fn params(&self, k: u64) -> u64 {
        let out = self.fan_out.at(k);
        let bias = if self.bias { out } else { 0 };
        self.fan_in.at(k) * out + bias + self.aux.at(k)
    }

    fn is_weight(&self) -> bool {
        self.fan_in != Affine::ZERO || self.fan_out != Affine::ZERO
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Mlp,
    Vgg16Cifar,
    Wrn28,
    Transformer6,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 4] = [
        FamilyKind::Mlp,
        FamilyKind::Vgg16Cifar,
        FamilyKind::Wrn28,
        FamilyKind::Transformer6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyKind::Mlp => "mlp",
            FamilyKind::Vgg16Cifar => "vgg16-cifar",
            FamilyKind::Wrn28 => "wrn28",
            FamilyKind::Transformer6 => "transformer6",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyKind::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown family '{s}'")))
    }
}

/// Output dimensionality of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outputs {
    Classes(u64),
    Vocab { source: u64, target: u64 },
}

/// Source and target vocabulary sizes for `transformer6`. Their sum is the
/// joint vocabulary that makes the `k = 512` model hold 39.5M parameters
/// (see [`calibrate_joint_vocab`]).
pub const TRANSFORMER_SOURCE_VOCAB: u64 = 7770;
pub const TRANSFORMER_TARGET_VOCAB: u64 = 7770;
pub const TRANSFORMER_STANDARD_PARAMS: u64 = 39_500_000;

/// Shape knobs for the trainable MLP family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: u64,
    pub classes: u64,
    /// Hidden layer widths as multiples of `k`; `[1, 2]` gives `[k, 2k]`.
    pub hidden: Vec<u64>,
    pub k_max: u64,
    /// Width whose count serves as the standard budget (no published
    /// standard exists for this family).
    pub standard_k: Option<u64>,
}

impl Default for MlpShape {
    fn default() -> Self {
        MlpShape {
            input_dim: 16,
            classes: 4,
            hidden: vec![1, 2],
            k_max: 512,
            standard_k: Some(16),
        }
    }
}

/// A width-parameterized architecture family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchFamily {
    pub kind: FamilyKind,
    pub layers: Vec<LayerDesc>,
    pub k_min: u64,
    pub k_max: u64,
    pub outputs: Outputs,
    pub standard_k: Option<u64>,
}

/// Coefficients of `count(k) = a k^2 + b k + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadratic {
    pub a: u64,
    pub b: u64,
    pub c: u64,
}

impl Quadratic {
    pub fn at(&self, k: u64) -> u64 {
        self.a * k * k + self.b * k + self.c
    }
}

/// Result of inverting the parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthSolution {
    pub k: u64,
    /// The target exceeded the count at `k_max`; `k` was clamped.
    pub clamped: bool,
}

/// A parameter budget, also expressed in standard budgets of a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub params: u64,
    pub standard_units: f64,
}

impl ArchFamily {
    /// MLP with hidden widths `[m_1 k, m_2 k, ...]`, ReLU between layers.
    pub fn mlp(shape: &MlpShape) -> Result<Self> {
        if shape.hidden.len() < 2 {
            return Err(Error::InvalidInput(
                "mlp needs at least two hidden layers for a quadratic count".into(),
            ));
        }
        if shape.input_dim == 0 || shape.classes < 2 || shape.hidden.contains(&0) {
            return Err(Error::InvalidInput("mlp dimensions must be positive".into()));
        }
        if shape.k_max < 1 {
            return Err(Error::InvalidInput("mlp k_max must be at least 1".into()));
        }
        let mut layers = Vec::with_capacity(shape.hidden.len() + 1);
        let mut prev = Affine::fixed(shape.input_dim);
        for (i, &m) in shape.hidden.iter().enumerate() {
            let out = Affine::scaled(m);
            layers.push(LayerDesc::dense(format!("fc{i}"), prev, out));
            prev = out;
        }
        layers.push(LayerDesc::dense(
            "out",
            prev,
            Affine::fixed(shape.classes),
        ));
        Ok(ArchFamily {
            kind: FamilyKind::Mlp,
            layers,
            k_min: 1,
            k_max: shape.k_max,
            outputs: Outputs::Classes(shape.classes),
            standard_k: shape.standard_k,
        })
    }

    /// VGG-16 for 32x32 inputs: 13 biased 3x3 convolutions at
    /// `[k,k,2k,2k,4k,4k,4k,8k,8k,8k,8k,8k,8k]` and a classifier
    /// `8k -> 8k -> 8k -> classes`.
    pub fn vgg16_cifar(classes: u64) -> Self {
        const STAGES: [u64; 13] = [1, 1, 2, 2, 4, 4, 4, 8, 8, 8, 8, 8, 8];
        let mut layers = Vec::with_capacity(16);
        let mut prev = Affine::fixed(3);
        for (i, &m) in STAGES.iter().enumerate() {
            let out = Affine::scaled(m);
            layers.push(LayerDesc::conv3x3(format!("conv{i}"), prev, out));
            prev = out;
        }
        let hidden = Affine::scaled(8);
        layers.push(LayerDesc::dense("fc0", hidden, hidden));
        layers.push(LayerDesc::dense("fc1", hidden, hidden));
        layers.push(LayerDesc::dense("fc2", hidden, Affine::fixed(classes)));
        ArchFamily {
            kind: FamilyKind::Vgg16Cifar,
            layers,
            k_min: 2,
            k_max: 181,
            outputs: Outputs::Classes(classes),
            standard_k: Some(64),
        }
    }

    /// WideResNet-28: a 16-filter stem, three groups of four pre-activation
    /// basic blocks at `[k, 2k, 4k]`, final norm and linear head. Convolutions
    /// carry biases; 1x1 shortcut convolutions appear where the channel count
    /// changes.
    pub fn wrn28(classes: u64) -> Self {
        let mut layers = Vec::new();
        let stem = Affine::fixed(16);
        layers.push(LayerDesc::conv3x3("stem", Affine::fixed(3), stem));
        let mut prev = stem;
        for (g, m) in [1u64, 2, 4].into_iter().enumerate() {
            let width = Affine::scaled(m);
            for b in 0..4 {
                let tag = format!("g{g}b{b}");
                layers.push(LayerDesc::norm(format!("{tag}.bn1"), prev));
                layers.push(LayerDesc::conv3x3(format!("{tag}.conv1"), prev, width));
                layers.push(LayerDesc::norm(format!("{tag}.bn2"), width));
                layers.push(LayerDesc::conv3x3(format!("{tag}.conv2"), width, width));
                if b == 0 {
                    layers.push(LayerDesc::dense(format!("{tag}.shortcut"), prev, width));
                }
                prev = width;
            }
        }
        layers.push(LayerDesc::norm("bn_final", prev));
        layers.push(LayerDesc::dense("fc", prev, Affine::fixed(classes)));
        ArchFamily {
            kind: FamilyKind::Wrn28,
            layers,
            k_min: 5,
            k_max: 453,
            outputs: Outputs::Classes(classes),
            standard_k: Some(160),
        }
    }

    /// Encoder-decoder Transformer with 6 + 6 layers, `d_model = k`,
    /// `d_ffn = 2k`, post-norm, sinusoidal positions and a decoder output
    /// projection tied to its input embedding. Head count does not change the
    /// parameter count.
    pub fn transformer6(source_vocab: u64, target_vocab: u64) -> Self {
        let d = Affine::scaled(1);
        let ffn = Affine::scaled(2);
        let mut layers = vec![
            LayerDesc::embedding("embed_src", source_vocab),
            LayerDesc::embedding("embed_tgt", target_vocab),
        ];
        let attention = |layers: &mut Vec<LayerDesc>, tag: String| {
            for proj in ["q", "k", "v", "out"] {
                layers.push(LayerDesc::dense(format!("{tag}.{proj}"), d, d));
            }
        };
        let feed_forward = |layers: &mut Vec<LayerDesc>, tag: &str| {
            layers.push(LayerDesc::dense(format!("{tag}.ffn1"), d, ffn));
            layers.push(LayerDesc::dense(format!("{tag}.ffn2"), ffn, d));
        };
        for i in 0..6 {
            let tag = format!("enc{i}");
            attention(&mut layers, format!("{tag}.self"));
            layers.push(LayerDesc::norm(format!("{tag}.ln1"), d));
            feed_forward(&mut layers, &tag);
            layers.push(LayerDesc::norm(format!("{tag}.ln2"), d));
        }
        for i in 0..6 {
            let tag = format!("dec{i}");
            attention(&mut layers, format!("{tag}.self"));
            layers.push(LayerDesc::norm(format!("{tag}.ln1"), d));
            attention(&mut layers, format!("{tag}.cross"));
            layers.push(LayerDesc::norm(format!("{tag}.ln2"), d));
            feed_forward(&mut layers, &tag);
            layers.push(LayerDesc::norm(format!("{tag}.ln3"), d));
        }
        ArchFamily {
            kind: FamilyKind::Transformer6,
            layers,
            k_min: 32,
            k_max: 1048,
            outputs: Outputs::Vocab {
                source: source_vocab,
                target: target_vocab,
            },
            standard_k: Some(512),
        }
    }

    /// Registered family with its default output sizes (100 classes for the
    /// CIFAR families).
    pub fn by_kind(kind: FamilyKind) -> Self {
        match kind {
            FamilyKind::Mlp => ArchFamily::mlp(&MlpShape::default()).expect("default mlp shape"),
            FamilyKind::Vgg16Cifar => ArchFamily::vgg16_cifar(100),
            FamilyKind::Wrn28 => ArchFamily::wrn28(100),
            FamilyKind::Transformer6 => {
                ArchFamily::transformer6(TRANSFORMER_SOURCE_VOCAB, TRANSFORMER_TARGET_VOCAB)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.as_str()
    }

    pub fn check_width(&self, k: u64) -> Result<()> {
        if k < self.k_min || k > self.k_max {
            return Err(Error::WidthOutOfRange {
                family: self.name().to_string(),
                k,
                min: self.k_min,
                max: self.k_max,
            });
        }
        Ok(())
    }

    /// Evaluates the count formula without the range check.
    fn raw_count(&self, k: u64) -> u64 {
        self.layers.iter().map(|l| l.params(k)).sum()
    }

    /// Exact parameter count at width `k`.
    pub fn param_count(&self, k: u64) -> Result<u64> {
        self.check_width(k)?;
        Ok(self.raw_count(k))
    }

    /// Coefficients of the count polynomial, read off the layer descriptors.
    pub fn quadratic(&self) -> Quadratic {
        let mut q = Quadratic { a: 0, b: 0, c: 0 };
        for l in &self.layers {
            let (fi, fo) = (l.fan_in, l.fan_out);
            q.a += fi.per_k * fo.per_k;
            q.b += fi.per_k * fo.constant + fi.constant * fo.per_k;
            q.c += fi.constant * fo.constant;
            if l.bias {
                q.b += fo.per_k;
                q.c += fo.constant;
            }
            q.b += l.aux.per_k;
            q.c += l.aux.constant;
        }
        q
    }

    /// Weight-bearing layers only (normalization entries dropped).
    pub fn weight_layers(&self) -> impl Iterator<Item = &LayerDesc> {
        self.layers.iter().filter(|l| l.is_weight())
    }

    /// Width factor whose count is nearest to `target_params`.
    ///
    /// Solves `a k^2 + b k + c = target` for the positive root, then compares
    /// the exact counts of the neighbouring integers. Ties go to the smaller
    /// width. Targets beyond `k_max` clamp with `clamped = true`.
    pub fn solve_width(&self, target_params: u64) -> Result<WidthSolution> {
        let min = self.raw_count(self.k_min);
        if target_params < min {
            return Err(Error::BudgetTooSmall {
                family: self.name().to_string(),
                target: target_params,
                min,
            });
        }
        let max = self.raw_count(self.k_max);
        if target_params >= max {
            return Ok(WidthSolution {
                k: self.k_max,
                clamped: target_params > max,
            });
        }
        let q = self.quadratic();
        let (a, b, c) = (q.a as f64, q.b as f64, q.c as f64);
        let rhs = target_params as f64 - c;
        let root = if a > 0.0 {
            (-b + (b * b + 4.0 * a * rhs).sqrt()) / (2.0 * a)
        } else {
            rhs / b
        };
        let guess = root.floor().max(0.0) as u64;
        let lo = guess.saturating_sub(1).max(self.k_min);
        let hi = (guess + 2).min(self.k_max);
        let k = (lo..=hi)
            .min_by_key(|&k| (self.raw_count(k).abs_diff(target_params), k))
            .expect("nonempty candidate range");
        Ok(WidthSolution { k, clamped: false })
    }

    /// Count at the family's standard width. `standard_k` overrides the
    /// registered value (the MLP family takes it from configuration).
    pub fn standard_budget(&self) -> Result<Budget> {
        let k = self.standard_k.ok_or_else(|| {
            Error::InvalidInput(format!("family {} has no standard width", self.name()))
        })?;
        Ok(Budget {
            params: self.param_count(k)?,
            standard_units: 1.0,
        })
    }

    /// Expresses `params` in standard budgets of this family.
    pub fn budget(&self, params: u64) -> Result<Budget> {
        let standard = self.standard_budget()?.params;
        Ok(Budget {
            params,
            standard_units: params as f64 / standard as f64,
        })
    }

    /// Budget of `units` standard budgets, rounded to whole parameters.
    pub fn budget_in_units(&self, units: f64) -> Result<Budget> {
        if !(units.is_finite() && units > 0.0) {
            return Err(Error::InvalidInput(format!("budget must be positive, got {units}")));
        }
        let standard = self.standard_budget()?.params;
        Ok(Budget {
            params: (units * standard as f64).round() as u64,
            standard_units: units,
        })
    }
}

/// Joint (source + target) vocabulary that brings the `k = 512`
/// `transformer6` count closest to `target_params`.
pub fn calibrate_joint_vocab(target_params: u64) -> u64 {
    let bare = ArchFamily::transformer6(0, 0).raw_count(512);
    ((target_params as f64 - bare as f64) / 512.0).round() as u64
}
