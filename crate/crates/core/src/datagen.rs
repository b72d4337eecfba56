//! Deterministic synthetic classification tasks.
//!
//! A task is named by a descriptor string such as
//! `gaussian-blobs:classes=4,dim=16,noise=1.35,clusters=6,train=4000,val=400,test=4000,seed=1`.
//! Labels cycle through the classes by row index, so every split is balanced
//! within one example per class. Each split draws from its own seeded stream;
//! regenerating from the same descriptor is bitwise identical.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

/// Row-major inputs with integer labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub dim: usize,
    pub classes: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Samples {
    pub fn empty(dim: usize, classes: usize) -> Self {
        Samples {
            dim,
            classes,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.y {
            counts[y] += 1;
        }
        counts
    }

    /// Concatenation of `self` and `other`.
    pub fn concat(&self, other: &Samples) -> Samples {
        let mut out = self.clone();
        out.x.extend_from_slice(&other.x);
        out.y.extend_from_slice(&other.y);
        out
    }

    /// CSV with header `x0,...,x{D-1},label`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        out.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.y[i].to_string());
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Isotropic Gaussian clusters around centers drawn from `N(0, I)`;
    /// `clusters` centers per class, spread `noise`.
    GaussianBlobs,
    /// Two interleaved planar spirals with Gaussian jitter `noise`.
    TwoSpirals,
    /// XOR of the signs of the first two coordinates, jitter `noise`, the
    /// remaining coordinates uniform on `[-1, 1]`.
    NoisyXor,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::GaussianBlobs => "gaussian-blobs",
            Generator::TwoSpirals => "two-spirals",
            Generator::NoisyXor => "noisy-xor",
        }
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Generator::GaussianBlobs, Generator::TwoSpirals, Generator::NoisyXor]
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown generator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub generator: Generator,
    pub classes: usize,
    pub dim: usize,
    pub noise: f64,
    pub clusters: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for DatasetDescriptor {
    /// The default desk-scale task: overlapping multi-cluster blobs on which
    /// a single network plateaus well below the Bayes rate.
    fn default() -> Self {
        DatasetDescriptor {
            generator: Generator::GaussianBlobs,
            classes: 4,
            dim: 16,
            noise: 1.35,
            clusters: 6,
            train: 4000,
            val: 400,
            test: 4000,
            seed: 1,
        }
    }
}

impl fmt::Display for DatasetDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:classes={},dim={},noise={:?},clusters={},train={},val={},test={},seed={}",
            self.generator.as_str(),
            self.classes,
            self.dim,
            self.noise,
            self.clusters,
            self.train,
            self.val,
            self.test,
            self.seed
        )
    }
}

impl FromStr for DatasetDescriptor {
    type Err = Error;

    /// Keys not given keep their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let generator: Generator = name.trim().parse()?;
        let mut d = DatasetDescriptor {
            generator,
            ..DatasetDescriptor::default()
        };
        if generator != Generator::GaussianBlobs {
            d.classes = 2;
            d.dim = 2;
            d.clusters = 1;
            d.noise = 0.1;
        }
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected key=value, got '{part}'")))?;
            let bad = |_| Error::InvalidInput(format!("bad value for {key}: '{value}'"));
            let value = value.trim();
            match key.trim() {
                "classes" => d.classes = value.parse().map_err(bad)?,
                "dim" => d.dim = value.parse().map_err(bad)?,
                "clusters" => d.clusters = value.parse().map_err(bad)?,
                "train" => d.train = value.parse().map_err(bad)?,
                "val" => d.val = value.parse().map_err(bad)?,
                "test" => d.test = value.parse().map_err(bad)?,
                "seed" => d.seed = value.parse().map_err(bad)?,
                "noise" => {
                    d.noise = value
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("bad value for noise: '{value}'")))?
                }
                other => return Err(Error::InvalidInput(format!("unknown dataset key '{other}'"))),
            }
        }
        d.validate()?;
        Ok(d)
    }
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidInput("need at least two classes".into()));
        }
        if self.dim == 0 || self.clusters == 0 {
            return Err(Error::InvalidInput("dim and clusters must be positive".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidInput("noise must be finite and nonnegative".into()));
        }
        if self.train < self.classes || self.test < self.classes {
            return Err(Error::InvalidInput(format!(
                "train and test sizes must be at least the number of classes ({})",
                self.classes
            )));
        }
        if self.val != 0 && self.val < self.classes {
            return Err(Error::InvalidInput(format!(
                "validation size must be 0 or at least {}",
                self.classes
            )));
        }
        match self.generator {
            Generator::TwoSpirals if self.classes != 2 || self.dim != 2 => Err(Error::InvalidInput(
                "two-spirals is a 2-class task in 2 dimensions".into(),
            )),
            Generator::NoisyXor if self.classes != 2 || self.dim < 2 => Err(Error::InvalidInput(
                "noisy-xor is a 2-class task in at least 2 dimensions".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Short stable hash of the canonical descriptor string.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_string().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Cluster centers, `classes * clusters` rows of `dim` values; class `c`
    /// owns rows `c * clusters .. (c + 1) * clusters`.
    pub fn centers(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &[0]));
        (0..self.classes * self.clusters * self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
    pub descriptor: DatasetDescriptor,
}

/// Generates the train, validation and test splits for `descriptor`.
pub fn generate(descriptor: &DatasetDescriptor) -> Result<DatasetSplit> {
    descriptor.validate()?;
    let centers = descriptor.centers();
    let make = |tag: u64, n: usize| -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(descriptor.seed, &[tag]));
        let mut s = Samples::empty(descriptor.dim, descriptor.classes);
        s.x.reserve(n * descriptor.dim);
        for i in 0..n {
            let label = i % descriptor.classes;
            sample_row(descriptor, &centers, label, &mut rng, &mut s.x);
            s.y.push(label);
        }
        s
    };
    Ok(DatasetSplit {
        train: make(1, descriptor.train),
        val: make(2, descriptor.val),
        test: make(3, descriptor.test),
        descriptor: descriptor.clone(),
    })
}

fn sample_row(d: &DatasetDescriptor, centers: &[f64], label: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
    match d.generator {
        Generator::GaussianBlobs => {
            let cluster = label * d.clusters + rng.gen_range(0..d.clusters);
            let c = &centers[cluster * d.dim..(cluster + 1) * d.dim];
            for &m in c {
                out.push(m + d.noise * normal(rng));
            }
        }
        Generator::TwoSpirals => {
            let t: f64 = rng.gen_range(0.0..1.0);
            let angle = t.sqrt() * 3.0 * PI;
            let r = angle / (3.0 * PI);
            let phase = if label == 0 { 0.0 } else { PI };
            out.push(r * (angle + phase).cos() + d.noise * normal(rng));
            out.push(r * (angle + phase).sin() + d.noise * normal(rng));
        }
        Generator::NoisyXor => {
            let s0: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let s1 = if label == 0 { s0 } else { -s0 };
            out.push(s0 * rng.gen_range(0.0..1.0) + d.noise * normal(rng));
            out.push(s1 * rng.gen_range(0.0..1.0) + d.noise * normal(rng));
            for _ in 2..d.dim {
                out.push(rng.gen_range(-1.0..1.0));
            }
        }
    }
}

/// Folds validation into training for the final retraining pass.
pub fn retrain_merge(split: &DatasetSplit) -> DatasetSplit {
    DatasetSplit {
        train: split.train.concat(&split.val),
        val: Samples::empty(split.val.dim, split.val.classes),
        test: split.test.clone(),
        descriptor: split.descriptor.clone(),
    }
}
