//! Per-width hyperparameter selection on the validation split.
//!
//! Grid search enumerates every combination; the staged variant tunes all
//! dimensions but one with that one pinned, then tunes the pinned one.
//! Bayesian optimization maps the space to the unit cube (log-scaled
//! dimensions in log space), fits a Gaussian process after quasi-random
//! starts and picks each next point by expected improvement.

pub mod gp;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archspace::{ArchFamily, FamilyKind};
use crate::datagen::DatasetSplit;
use crate::error::{Error, Result};
use crate::seed;
use crate::splitsweep::{HyperparamSource, Setting};
use crate::store;
use crate::tinytrain::{self, Hyperparams, Mode};

use gp::{expected_improvement, Gp};

pub const EI_CANDIDATES: usize = 1024;
pub const DEDUP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HpName {
    Lr,
    WeightDecay,
    Dropout,
}

impl HpName {
    pub fn as_str(self) -> &'static str {
        match self {
            HpName::Lr => "lr",
            HpName::WeightDecay => "wd",
            HpName::Dropout => "dr",
        }
    }

    fn set(self, hp: &mut Hyperparams, value: f64) {
        match self {
            HpName::Lr => hp.lr = value,
            HpName::WeightDecay => hp.weight_decay = value,
            HpName::Dropout => hp.dropout = value,
        }
    }
}

impl FromStr for HpName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(HpName::Lr),
            "wd" | "weight_decay" => Ok(HpName::WeightDecay),
            "dr" | "dropout" => Ok(HpName::Dropout),
            _ => Err(Error::InvalidInput(format!("unknown hyperparameter '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimKind {
    Grid(Vec<f64>),
    Continuous { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: HpName,
    pub kind: DimKind,
    pub scale: Scale,
}

impl Dim {
    pub fn grid(name: HpName, values: &[f64]) -> Self {
        let scale = if name == HpName::Dropout { Scale::Linear } else { Scale::Log };
        Dim {
            name,
            kind: DimKind::Grid(values.to_vec()),
            scale,
        }
    }

    pub fn continuous(name: HpName, lo: f64, hi: f64) -> Self {
        let scale = if name == HpName::Dropout { Scale::Linear } else { Scale::Log };
        Dim {
            name,
            kind: DimKind::Continuous { lo, hi },
            scale,
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        let DimKind::Continuous { lo, hi } = self.kind else {
            unreachable!("unit mapping needs a continuous dimension")
        };
        match self.scale {
            Scale::Linear => (v - lo) / (hi - lo),
            Scale::Log => (v.ln() - lo.ln()) / (hi.ln() - lo.ln()),
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let DimKind::Continuous { lo, hi } = self.kind else {
            unreachable!("unit mapping needs a continuous dimension")
        };
        let u = u.clamp(0.0, 1.0);
        match self.scale {
            Scale::Linear => lo + u * (hi - lo),
            Scale::Log => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
        }
    }
}

/// An ordered list of tuned dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
}

impl fmt::Display for SearchSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            let scale = match d.scale {
                Scale::Linear => "lin",
                Scale::Log => "log",
            };
            match &d.kind {
                DimKind::Grid(v) => {
                    let vals: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                    write!(f, "{}:{scale}:{{{}}}", d.name.as_str(), vals.join(","))?
                }
                DimKind::Continuous { lo, hi } => {
                    write!(f, "{}:{scale}:[{lo:?},{hi:?}]", d.name.as_str())?
                }
            }
        }
        Ok(())
    }
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        let s = SearchSpace { dims };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidInput("empty search space".into()));
        }
        for d in &self.dims {
            match &d.kind {
                DimKind::Grid(v) if v.is_empty() => {
                    return Err(Error::InvalidInput(format!("empty grid for {}", d.name.as_str())))
                }
                DimKind::Grid(v) if v.iter().any(|x| !x.is_finite()) => {
                    return Err(Error::InvalidInput(format!("non-finite grid value for {}", d.name.as_str())))
                }
                DimKind::Continuous { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                    return Err(Error::InvalidInput(format!("bad bounds for {}", d.name.as_str())))
                }
                DimKind::Continuous { lo, .. } if d.scale == Scale::Log && *lo <= 0.0 => {
                    return Err(Error::InvalidInput(format!(
                        "log-scaled {} needs a positive lower bound",
                        d.name.as_str()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn is_grid(&self) -> bool {
        self.dims.iter().all(|d| matches!(d.kind, DimKind::Grid(_)))
    }

    pub fn is_continuous(&self) -> bool {
        self.dims.iter().all(|d| matches!(d.kind, DimKind::Continuous { .. }))
    }

    /// Short stable hash of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(&Sha256::digest(self.to_string().as_bytes())[..8])
    }

    /// Every grid combination, first dimension most significant.
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::new()];
        for d in &self.dims {
            let DimKind::Grid(values) = &d.kind else {
                return Vec::new();
            };
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        points
    }

    pub fn apply(&self, base: &Hyperparams, point: &[f64]) -> Hyperparams {
        let mut hp = base.clone();
        for (d, &v) in self.dims.iter().zip(point) {
            d.name.set(&mut hp, v);
        }
        hp
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(u).map(|(d, &x)| d.from_unit(x)).collect()
    }

    pub fn to_unit(&self, point: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(point).map(|(d, &x)| d.to_unit(x)).collect()
    }

    /// The setting-B grid used for VGG: `lr x wd x dr`, 24 points.
    pub fn vgg_grid() -> Self {
        SearchSpace {
            dims: vec![
                Dim::grid(HpName::Lr, &[0.005, 0.05]),
                Dim::grid(HpName::WeightDecay, &[1e-4, 3e-4, 1e-3, 3e-3]),
                Dim::grid(HpName::Dropout, &[0.0, 0.25, 0.5]),
            ],
        }
    }

    /// The setting-B grid used for WideResNet: `lr x wd`, 8 points.
    pub fn wrn_grid() -> Self {
        SearchSpace {
            dims: vec![
                Dim::grid(HpName::Lr, &[0.01, 0.1]),
                Dim::grid(HpName::WeightDecay, &[1e-4, 3e-4, 1e-3, 3e-3]),
            ],
        }
    }

    /// The setting-B grid used for the Transformer (tuned in stages, see
    /// [`staged_grid_search`]).
    pub fn transformer_grid() -> Self {
        let lr: Vec<f64> = (1..=50).map(|i| i as f64 * 1e-4).collect();
        let dr: Vec<f64> = (0..=4).map(|i| i as f64 * 0.1).collect();
        SearchSpace {
            dims: vec![
                Dim::grid(HpName::Lr, &lr),
                Dim::grid(HpName::WeightDecay, &[1e-1, 1e-2, 1e-3, 1e-4, 1e-5]),
                Dim::grid(HpName::Dropout, &dr),
            ],
        }
    }

    /// Bayesian-optimization ranges; `lr_max` is 0.05 for VGG and 0.1 for
    /// WideResNet.
    pub fn bo_ranges(lr_max: f64) -> Self {
        SearchSpace {
            dims: vec![
                Dim::continuous(HpName::Lr, 1e-5, lr_max),
                Dim::continuous(HpName::WeightDecay, 1e-7, 0.003),
                Dim::continuous(HpName::Dropout, 0.0, 0.5),
            ],
        }
    }
}

/// One objective call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub point: Vec<f64>,
    /// `-inf` when the objective failed.
    pub score: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Vec<f64>,
    pub best_score: f64,
    pub evaluations: Vec<Evaluation>,
}

impl SearchResult {
    /// Best score seen after each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.evaluations
            .iter()
            .map(|e| {
                best = best.max(e.score);
                best
            })
            .collect()
    }
}

fn evaluate_point<F>(objective: &F, point: Vec<f64>) -> Evaluation
where
    F: Fn(&[f64]) -> Result<f64>,
{
    match objective(&point) {
        Ok(score) if score.is_finite() => Evaluation {
            point,
            score,
            error: None,
        },
        Ok(score) => Evaluation {
            point,
            score: f64::NEG_INFINITY,
            error: Some(format!("non-finite score {score}")),
        },
        Err(e) => Evaluation {
            point,
            score: f64::NEG_INFINITY,
            error: Some(e.to_string()),
        },
    }
}

/// First evaluation with the strictly highest score.
fn pick_best(evaluations: Vec<Evaluation>) -> Result<SearchResult> {
    let mut best: Option<&Evaluation> = None;
    for e in &evaluations {
        if e.error.is_none() && best.is_none_or(|b| e.score > b.score) {
            best = Some(e);
        }
    }
    match best {
        Some(b) => Ok(SearchResult {
            best: b.point.clone(),
            best_score: b.score,
            evaluations: evaluations.clone(),
        }),
        None => Err(Error::AllEvaluationsFailed(
            evaluations
                .iter()
                .map(|e| format!("{:?}: {}", e.point, e.error.as_deref().unwrap_or("?")))
                .collect(),
        )),
    }
}

/// Evaluates every grid combination (in parallel) and returns the argmax;
/// ties go to the combination that comes first in declared order. Failed
/// evaluations score `-inf`.
pub fn grid_search<F>(space: &SearchSpace, objective: F) -> Result<SearchResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    space.validate()?;
    if !space.is_grid() {
        return Err(Error::InvalidInput("grid search needs grid dimensions".into()));
    }
    let evaluations: Vec<Evaluation> = space
        .grid_points()
        .into_par_iter()
        .map(|p| evaluate_point(&objective, p))
        .collect();
    for e in evaluations.iter().filter(|e| e.error.is_some()) {
        log::warn!("grid point {:?} failed: {}", e.point, e.error.as_deref().unwrap_or(""));
    }
    pick_best(evaluations)
}

/// Two-stage grid search: all dimensions but `staged` with `staged` pinned
/// to `pinned`, then `staged` alone with the others fixed at the stage-one
/// winner. Points shared by both stages are evaluated once.
pub fn staged_grid_search<F>(space: &SearchSpace, objective: F, staged: HpName, pinned: f64) -> Result<SearchResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let idx = space
        .dims
        .iter()
        .position(|d| d.name == staged)
        .ok_or_else(|| Error::InvalidInput(format!("no dimension {}", staged.as_str())))?;
    let mut first = space.clone();
    first.dims[idx].kind = DimKind::Grid(vec![pinned]);
    let stage1 = grid_search(&first, &objective)?;

    let mut second = space.clone();
    for (i, d) in second.dims.iter_mut().enumerate() {
        if i != idx {
            d.kind = DimKind::Grid(vec![stage1.best[i]]);
        }
    }
    let seen: HashMap<Vec<u64>, Evaluation> = stage1
        .evaluations
        .iter()
        .map(|e| (e.point.iter().map(|v| v.to_bits()).collect(), e.clone()))
        .collect();
    let stage2: Vec<Evaluation> = second
        .grid_points()
        .into_par_iter()
        .map(|p| {
            let bits: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
            seen.get(&bits).cloned().unwrap_or_else(|| evaluate_point(&objective, p))
        })
        .collect();
    let best = pick_best(stage2)?;
    let mut evaluations = stage1.evaluations;
    evaluations.extend(
        best.evaluations
            .iter()
            .filter(|e| !seen.contains_key(&e.point.iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .cloned(),
    );
    Ok(SearchResult {
        evaluations,
        ..best
    })
}

/// Halton radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Randomly shifted Halton points in the unit cube.
pub fn halton_points(count: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            (0..dim)
                .map(|d| (radical_inverse(i, PRIMES[d % PRIMES.len()]) + shift[d]).fract())
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoOptions {
    pub iterations: usize,
    pub init_points: usize,
    pub seed: u64,
}

impl Default for BoOptions {
    fn default() -> Self {
        BoOptions {
            iterations: 20,
            init_points: 5,
            seed: 0,
        }
    }
}

fn is_duplicate(u: &[f64], seen: &[Vec<f64>]) -> bool {
    seen.iter()
        .any(|s| s.iter().zip(u).all(|(a, b)| (a - b).abs() <= DEDUP_EPS))
}

/// Next point: argmax of expected improvement over random candidates, then
/// refined by a compass search from the best few.
fn propose(gp: &Gp, best: f64, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ei = |u: &[f64]| {
        let (m, v) = gp.predict(u);
        expected_improvement(m, v, best)
    };
    let mut scored: Vec<(f64, Vec<f64>)> = (0..EI_CANDIDATES)
        .map(|_| {
            let u: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            (ei(&u), u)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let bounds = vec![(0.0, 1.0); dim];
    scored
        .into_iter()
        .take(5)
        .map(|(_, u)| gp::compass_search(&ei, u, &bounds, 0.05, 1e-4, 200))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(u, _)| u)
        .expect("candidates")
}

/// Gaussian-process Bayesian optimization (maximization) over a continuous
/// space. Deterministic given `opts.seed`.
pub fn bo_search<F>(space: &SearchSpace, objective: F, opts: BoOptions) -> Result<SearchResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    space.validate()?;
    if !space.is_continuous() {
        return Err(Error::InvalidInput("BO needs continuous dimensions".into()));
    }
    let dim = space.dims.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut evaluations: Vec<Evaluation> = Vec::new();
    let mut unit_seen: Vec<Vec<f64>> = Vec::new();

    for u in halton_points(opts.init_points, dim, &mut rng) {
        evaluations.push(evaluate_point(&objective, space.from_unit(&u)));
        unit_seen.push(u);
    }
    for _ in 0..opts.iterations {
        let ok: Vec<(Vec<f64>, f64)> = unit_seen
            .iter()
            .zip(&evaluations)
            .filter(|(_, e)| e.error.is_none())
            .map(|(u, e)| (u.clone(), e.score))
            .collect();
        let mut next = if ok.len() < 2 {
            (0..dim).map(|_| rng.gen::<f64>()).collect()
        } else {
            let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = ok.into_iter().unzip();
            let params = Gp::fit_hyperparams(&xs, &ys, 4, &mut rng);
            let best = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            match Gp::fit(&xs, &ys, params) {
                Ok(gp) => propose(&gp, best, dim, &mut rng),
                Err(_) => (0..dim).map(|_| rng.gen::<f64>()).collect(),
            }
        };
        if is_duplicate(&next, &unit_seen) {
            next = (0..dim).map(|_| rng.gen::<f64>()).collect();
        }
        evaluations.push(evaluate_point(&objective, space.from_unit(&next)));
        unit_seen.push(next);
    }
    pick_best(evaluations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneMethod {
    Grid,
    StagedGrid,
    Bo,
}

impl TuneMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TuneMethod::Grid => "grid",
            TuneMethod::StagedGrid => "staged-grid",
            TuneMethod::Bo => "bo",
        }
    }
}

impl FromStr for TuneMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(TuneMethod::Grid),
            "staged-grid" => Ok(TuneMethod::StagedGrid),
            "bo" => Ok(TuneMethod::Bo),
            _ => Err(Error::InvalidInput(format!("unknown tuning method '{s}'"))),
        }
    }
}

/// A cached tuning outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    pub family: FamilyKind,
    pub k: u64,
    pub dataset_hash: String,
    pub method: TuneMethod,
    pub space_hash: String,
    pub hp: Hyperparams,
    pub score: f64,
    pub evaluations: usize,
}

impl TuneRecord {
    pub fn key(&self) -> String {
        tune_key(self.family, self.k, &self.dataset_hash, self.method, &self.space_hash)
    }
}

fn tune_key(family: FamilyKind, k: u64, dataset: &str, method: TuneMethod, space: &str) -> String {
    format!("{family}/k{k}/{dataset}/{}/{space}", method.as_str())
}

/// Tuning results keyed by (family, k, dataset, method, space), optionally
/// backed by a JSON-lines file.
#[derive(Debug, Default)]
pub struct TuneCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, TuneRecord>>,
}

impl TuneCache {
    pub fn in_memory() -> Self {
        TuneCache::default()
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let records: Vec<TuneRecord> = store::read_jsonl(&path)?;
        Ok(TuneCache {
            entries: Mutex::new(records.into_iter().map(|r| (r.key(), r)).collect()),
            path: Some(path),
        })
    }

    pub fn get(&self, key: &str) -> Option<TuneRecord> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(&self, record: TuneRecord) -> Result<()> {
        let mut map = self.entries.lock().unwrap();
        if let Some(p) = &self.path {
            store::append_jsonl(p, &record)?;
        }
        map.insert(record.key(), record);
        Ok(())
    }
}

/// Setting B: member hyperparameters tuned for each width on validation
/// accuracy of a single network.
#[derive(Debug)]
pub struct Tuner {
    pub method: TuneMethod,
    pub space: SearchSpace,
    /// Values of everything not being tuned.
    pub base: Hyperparams,
    pub bo: BoOptions,
    /// Pinned value of weight decay in the first stage of the staged grid.
    pub staged_pin: f64,
    pub seed: u64,
    pub cache: TuneCache,
}

impl Tuner {
    pub fn new(method: TuneMethod, space: SearchSpace, base: Hyperparams, seed: u64, cache: TuneCache) -> Result<Self> {
        space.validate()?;
        match method {
            TuneMethod::Bo if !space.is_continuous() => {
                return Err(Error::InvalidInput("bo tuning needs a continuous space".into()))
            }
            TuneMethod::Grid | TuneMethod::StagedGrid if !space.is_grid() => {
                return Err(Error::InvalidInput("grid tuning needs a grid space".into()))
            }
            _ => {}
        }
        Ok(Tuner {
            method,
            space,
            base,
            bo: BoOptions {
                seed: seed::derive(seed, &[0xB0]),
                ..BoOptions::default()
            },
            staged_pin: 1e-4,
            seed,
            cache,
        })
    }

    /// Validation accuracy of one network of width `k` trained with `hp`.
    pub fn validation_score(&self, family: &ArchFamily, k: u64, data: &DatasetSplit, hp: &Hyperparams) -> Result<f64> {
        if data.val.is_empty() {
            return Err(Error::InvalidInput("tuning needs a validation split".into()));
        }
        let s = seed::derive(self.seed, &[0x7E, k]);
        let member = tinytrain::init_network(family, k, s)?;
        let trained = tinytrain::train(member, &data.train, &data.val, &hp.with_seed(s))?;
        let probs = trained.forward(&data.val.x, Mode::Eval)?;
        Ok(tinytrain::accuracy(&probs, &data.val.y, trained.classes()))
    }

    /// Best hyperparameters for width `k`, served from the cache when
    /// possible.
    pub fn tuned_hp_for_size(&self, family: &ArchFamily, k: u64, data: &DatasetSplit) -> Result<TuneRecord> {
        let key = tune_key(
            family.kind,
            k,
            &data.descriptor.hash(),
            self.method,
            &self.space.hash(),
        );
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let objective = |p: &[f64]| self.validation_score(family, k, data, &self.space.apply(&self.base, p));
        let result = match self.method {
            TuneMethod::Grid => grid_search(&self.space, objective)?,
            TuneMethod::StagedGrid => {
                staged_grid_search(&self.space, objective, HpName::WeightDecay, self.staged_pin)?
            }
            TuneMethod::Bo => bo_search(&self.space, objective, self.bo)?,
        };
        let record = TuneRecord {
            family: family.kind,
            k,
            dataset_hash: data.descriptor.hash(),
            method: self.method,
            space_hash: self.space.hash(),
            hp: self.space.apply(&self.base, &result.best),
            score: result.best_score,
            evaluations: result.evaluations.len(),
        };
        log::info!("tuned k={k}: {:?} (val acc {:.4})", result.best, result.best_score);
        self.cache.insert(record.clone())?;
        Ok(record)
    }
}

impl HyperparamSource for Tuner {
    fn setting(&self) -> Setting {
        Setting::B
    }

    fn for_width(&self, family: &ArchFamily, k: u64, data: &DatasetSplit) -> Result<Hyperparams> {
        Ok(self.tuned_hp_for_size(family, k, data)?.hp)
    }
}
