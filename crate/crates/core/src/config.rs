//! Run configuration files.
//!
//! A config is a TOML document: `key = value` lines grouped under
//! `[run]`, `[data]`, `[train]`, `[tune]` and `[family]` headers. Only
//! `[run]` is required; see the README for every key and its default.
//!
//! ```toml
//! [run]
//! family = "mlp"
//! setting = "A"
//! budgets = [7584, "0.5std"]
//! n_grid = [1, 2, 4, 8, 16]
//! replicates = 5
//! seed = 0
//! output = "runs/default"
//!
//! [data]
//! dataset = "gaussian-blobs:classes=4,dim=16"
//!
//! [train]
//! epochs = 60
//! lr = 0.05
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::archspace::{ArchFamily, Budget, FamilyKind, MlpShape, TRANSFORMER_SOURCE_VOCAB, TRANSFORMER_TARGET_VOCAB};
use crate::datagen::DatasetDescriptor;
use crate::error::{Error, Result};
use crate::hypertune::{BoOptions, Dim, DimKind, HpName, SearchSpace, TuneMethod};
use crate::splitsweep::Setting;
use crate::tinytrain::{Hyperparams, Schedule};

/// A memory budget as written in a config: an absolute parameter count or a
/// multiple of the family's standard budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetSpec {
    Params(u64),
    StdUnits(f64),
}

impl BudgetSpec {
    pub fn resolve(&self, family: &ArchFamily) -> Result<Budget> {
        match *self {
            BudgetSpec::Params(p) => family.budget(p),
            BudgetSpec::StdUnits(u) => family.budget_in_units(u),
        }
    }

    fn is_positive(&self) -> bool {
        match *self {
            BudgetSpec::Params(p) => p > 0,
            BudgetSpec::StdUnits(u) => u.is_finite() && u > 0.0,
        }
    }
}

impl fmt::Display for BudgetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetSpec::Params(p) => write!(f, "{p}"),
            BudgetSpec::StdUnits(u) => write!(f, "{u:?}std"),
        }
    }
}

impl FromStr for BudgetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidInput(format!("bad budget '{s}' (expected a count or '<x>std')"));
        match s.strip_suffix("std") {
            Some(units) => Ok(BudgetSpec::StdUnits(units.trim().parse().map_err(|_| bad())?)),
            None => Ok(BudgetSpec::Params(s.parse().map_err(|_| bad())?)),
        }
    }
}

impl Serialize for BudgetSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BudgetSpec::Params(p) => s.serialize_u64(*p),
            BudgetSpec::StdUnits(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for BudgetSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(p) => Ok(BudgetSpec::Params(p)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A tuned dimension as written in `[tune]`: a list of grid values or a
/// `{ lo, hi }` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimSpec {
    Grid(Vec<f64>),
    Range { lo: f64, hi: f64 },
}

impl DimSpec {
    fn to_dim(&self, name: HpName) -> Dim {
        match self {
            DimSpec::Grid(v) => Dim::grid(name, v),
            DimSpec::Range { lo, hi } => Dim::continuous(name, *lo, *hi),
        }
    }

    fn from_dim(d: &Dim) -> Self {
        match &d.kind {
            DimKind::Grid(v) => DimSpec::Grid(v.clone()),
            DimKind::Continuous { lo, hi } => DimSpec::Range { lo: *lo, hi: *hi },
        }
    }
}

/// Settings of the per-width tuner (setting B only).
#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub method: TuneMethod,
    /// Explicit space; `None` selects the family preset for `method`.
    pub space: Option<SearchSpace>,
    pub bo_iterations: usize,
    pub bo_init_points: usize,
    /// Weight decay held fixed in the first stage of `staged-grid`.
    pub staged_pin: f64,
}

impl TuneConfig {
    pub fn new(method: TuneMethod) -> Self {
        let bo = BoOptions::default();
        TuneConfig {
            method,
            space: None,
            bo_iterations: bo.iterations,
            bo_init_points: bo.init_points,
            staged_pin: 1e-4,
        }
    }

    /// The configured space, or the preset for this family and method.
    pub fn search_space(&self, family: FamilyKind) -> SearchSpace {
        if let Some(s) = &self.space {
            return s.clone();
        }
        match (self.method, family) {
            (TuneMethod::Bo, FamilyKind::Wrn28) => SearchSpace::bo_ranges(0.1),
            (TuneMethod::Bo, _) => SearchSpace::bo_ranges(0.05),
            (_, FamilyKind::Wrn28) => SearchSpace::wrn_grid(),
            (_, FamilyKind::Transformer6) => SearchSpace::transformer_grid(),
            _ => SearchSpace::vgg_grid(),
        }
    }
}

/// Family overrides from `[family]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FamilyOverrides {
    /// Output classes of the convolutional families (default 100).
    pub classes: Option<u64>,
    pub source_vocab: Option<u64>,
    pub target_vocab: Option<u64>,
    /// mlp hidden-width multipliers of `k` (default `[1, 2]`).
    pub hidden: Option<Vec<u64>>,
    pub k_max: Option<u64>,
    pub standard_k: Option<u64>,
}

/// A parsed run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: FamilyKind,
    pub dataset: DatasetDescriptor,
    pub setting: Setting,
    pub tune: Option<TuneConfig>,
    pub budgets: Vec<BudgetSpec>,
    pub n_grid: Vec<u64>,
    pub replicates: u64,
    pub seed: u64,
    pub output: PathBuf,
    pub retrain_full: bool,
    /// Training hyperparameters; the tuned ones are overridden in setting B.
    /// `hp.seed` is unused here since member seeds derive from `seed`.
    pub hp: Hyperparams,
    pub overrides: FamilyOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: FamilyKind::Mlp,
            dataset: DatasetDescriptor::default(),
            setting: Setting::A,
            tune: None,
            budgets: vec![BudgetSpec::Params(7584)],
            n_grid: vec![1, 2, 4, 8, 16],
            replicates: 5,
            seed: 0,
            output: PathBuf::from("runs/default"),
            retrain_full: false,
            hp: Hyperparams::default(),
            overrides: FamilyOverrides::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tune: Option<TuneSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<FamilySection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    family: FamilyKind,
    setting: Setting,
    budgets: Vec<BudgetSpec>,
    n_grid: Vec<u64>,
    replicates: u64,
    seed: u64,
    output: PathBuf,
    #[serde(default)]
    retrain_full: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    dataset: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_smoothing: Option<f64>,
    /// Fractions of the constant, anneal and tail phases.
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_lr_ratio: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuneSection {
    method: TuneMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lr: Option<DimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wd: Option<DimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dr: Option<DimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bo_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bo_init_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    staged_pin: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_vocab: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_vocab: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standard_k: Option<u64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config {
        line: 0,
        msg: msg.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let repr: FileRepr = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            msg: e.message().to_string(),
        })?;
        let cfg = Self::from_repr(repr)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn from_repr(repr: FileRepr) -> Result<Self> {
        let dataset = match repr.data {
            Some(d) => d.dataset.parse().map_err(|e: Error| config_err(e.to_string()))?,
            None => DatasetDescriptor::default(),
        };
        let t = repr.train.unwrap_or_default();
        let defaults = Hyperparams::default();
        let schedule = match (t.schedule, t.final_lr_ratio) {
            (None, None) => defaults.schedule,
            (phases, ratio) => {
                let [constant, anneal, tail] = phases.unwrap_or([
                    defaults.schedule.constant,
                    defaults.schedule.anneal,
                    defaults.schedule.tail,
                ]);
                Schedule {
                    constant,
                    anneal,
                    tail,
                    final_ratio: ratio.unwrap_or(defaults.schedule.final_ratio),
                }
            }
        };
        let hp = Hyperparams {
            lr: t.lr.unwrap_or(defaults.lr),
            weight_decay: t.weight_decay.unwrap_or(defaults.weight_decay),
            dropout: t.dropout.unwrap_or(defaults.dropout),
            momentum: t.momentum.unwrap_or(defaults.momentum),
            epochs: t.epochs.unwrap_or(defaults.epochs),
            batch_size: t.batch_size.unwrap_or(defaults.batch_size),
            schedule,
            label_smoothing: t.label_smoothing.unwrap_or(defaults.label_smoothing),
            seed: 0,
        };
        let tune = match repr.tune {
            None => None,
            Some(s) => {
                let mut tc = TuneConfig::new(s.method);
                let dims: Vec<Dim> = [(HpName::Lr, &s.lr), (HpName::WeightDecay, &s.wd), (HpName::Dropout, &s.dr)]
                    .into_iter()
                    .filter_map(|(name, spec)| spec.as_ref().map(|d| d.to_dim(name)))
                    .collect();
                if !dims.is_empty() {
                    tc.space = Some(SearchSpace { dims });
                }
                tc.bo_iterations = s.bo_iterations.unwrap_or(tc.bo_iterations);
                tc.bo_init_points = s.bo_init_points.unwrap_or(tc.bo_init_points);
                tc.staged_pin = s.staged_pin.unwrap_or(tc.staged_pin);
                Some(tc)
            }
        };
        let f = repr.family.unwrap_or_default();
        Ok(RunConfig {
            family: repr.run.family,
            dataset,
            setting: repr.run.setting,
            tune,
            budgets: repr.run.budgets,
            n_grid: repr.run.n_grid,
            replicates: repr.run.replicates,
            seed: repr.run.seed,
            output: repr.run.output,
            retrain_full: repr.run.retrain_full,
            hp,
            overrides: FamilyOverrides {
                classes: f.classes,
                source_vocab: f.source_vocab,
                target_vocab: f.target_vocab,
                hidden: f.hidden,
                k_max: f.k_max,
                standard_k: f.standard_k,
            },
        })
    }

    fn to_repr(&self) -> FileRepr {
        let s = &self.hp.schedule;
        let o = &self.overrides;
        let family = FamilySection {
            classes: o.classes,
            source_vocab: o.source_vocab,
            target_vocab: o.target_vocab,
            hidden: o.hidden.clone(),
            k_max: o.k_max,
            standard_k: o.standard_k,
        };
        let has_family = *o != FamilyOverrides::default();
        FileRepr {
            run: RunSection {
                family: self.family,
                setting: self.setting,
                budgets: self.budgets.clone(),
                n_grid: self.n_grid.clone(),
                replicates: self.replicates,
                seed: self.seed,
                output: self.output.clone(),
                retrain_full: self.retrain_full,
            },
            data: Some(DataSection {
                dataset: self.dataset.to_string(),
            }),
            train: Some(TrainSection {
                epochs: Some(self.hp.epochs),
                batch_size: Some(self.hp.batch_size),
                lr: Some(self.hp.lr),
                momentum: Some(self.hp.momentum),
                weight_decay: Some(self.hp.weight_decay),
                dropout: Some(self.hp.dropout),
                label_smoothing: Some(self.hp.label_smoothing),
                schedule: Some([s.constant, s.anneal, s.tail]),
                final_lr_ratio: Some(s.final_ratio),
            }),
            tune: self.tune.as_ref().map(|t| {
                let dim = |name: HpName| {
                    t.space
                        .as_ref()
                        .and_then(|sp| sp.dims.iter().find(|d| d.name == name))
                        .map(DimSpec::from_dim)
                };
                TuneSection {
                    method: t.method,
                    lr: dim(HpName::Lr),
                    wd: dim(HpName::WeightDecay),
                    dr: dim(HpName::Dropout),
                    bo_iterations: Some(t.bo_iterations),
                    bo_init_points: Some(t.bo_init_points),
                    staged_pin: Some(t.staged_pin),
                }
            }),
            family: has_family.then_some(family),
        }
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_repr()).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.setting == Setting::A && self.tune.is_some() {
            return Err(config_err(
                "setting A uses fixed hyperparameters; remove the [tune] section",
            ));
        }
        if self.setting == Setting::B && self.tune.is_none() {
            return Err(config_err("setting B needs a [tune] section with a method"));
        }
        if self.budgets.is_empty() {
            return Err(config_err("at least one budget is required"));
        }
        if let Some(b) = self.budgets.iter().find(|b| !b.is_positive()) {
            return Err(config_err(format!("budget {b} must be positive")));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(config_err("n_grid must list positive ensemble sizes"));
        }
        if self.replicates == 0 {
            return Err(config_err("replicates must be at least 1"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(config_err("seed must fit in a signed 64-bit integer"));
        }
        self.hp.validate().map_err(|e| config_err(e.to_string()))?;
        if let Some(t) = &self.tune {
            let space = t.search_space(self.family);
            space.validate().map_err(|e| config_err(e.to_string()))?;
            match t.method {
                TuneMethod::Bo if !space.is_continuous() => {
                    return Err(config_err("bo tuning needs { lo, hi } ranges"))
                }
                TuneMethod::Grid | TuneMethod::StagedGrid if !space.is_grid() => {
                    return Err(config_err("grid tuning needs value lists"))
                }
                TuneMethod::StagedGrid if !space.dims.iter().any(|d| d.name == HpName::WeightDecay) => {
                    return Err(config_err("staged-grid tuning needs a wd dimension"))
                }
                _ => {}
            }
            if t.bo_init_points == 0 {
                return Err(config_err("bo_init_points must be at least 1"));
            }
        }
        self.family().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    /// The architecture family with config overrides applied; the mlp takes
    /// its input and output sizes from the dataset.
    pub fn family(&self) -> Result<ArchFamily> {
        let o = &self.overrides;
        match self.family {
            FamilyKind::Mlp => {
                let d = MlpShape::default();
                ArchFamily::mlp(&MlpShape {
                    input_dim: self.dataset.dim as u64,
                    classes: self.dataset.classes as u64,
                    hidden: o.hidden.clone().unwrap_or(d.hidden),
                    k_max: o.k_max.unwrap_or(d.k_max),
                    standard_k: o.standard_k.or(d.standard_k),
                })
            }
            FamilyKind::Vgg16Cifar => Ok(ArchFamily::vgg16_cifar(o.classes.unwrap_or(100))),
            FamilyKind::Wrn28 => Ok(ArchFamily::wrn28(o.classes.unwrap_or(100))),
            FamilyKind::Transformer6 => Ok(ArchFamily::transformer6(
                o.source_vocab.unwrap_or(TRANSFORMER_SOURCE_VOCAB),
                o.target_vocab.unwrap_or(TRANSFORMER_TARGET_VOCAB),
            )),
        }
    }

    pub fn resolved_budgets(&self) -> Result<Vec<Budget>> {
        let family = self.family()?;
        self.budgets.iter().map(|b| b.resolve(&family)).collect()
    }
}
