//! Memory-split sweeps: ensemble size against a fixed parameter budget.
//!
//! For a budget `B` and each `N` in the grid, the member width is solved so
//! that one member holds about `B / N` parameters; `N` members are trained
//! from distinct derived seeds, averaged and evaluated. Replicates repeat the
//! cell with fresh seeds. Aggregated per `N`, the records form a split curve
//! whose argmax is the optimal split `N*`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::{ArchFamily, Budget, FamilyKind};
use crate::datagen::{self, DatasetSplit};
use crate::ensemble::{self, CalibratedQuality, EnsembleSpec};
use crate::error::{Error, Result};
use crate::seed;
use crate::store::RunStore;
use crate::tinytrain::{self, Hyperparams};

pub const SCHEMA_VERSION: u32 = 1;
/// Means closer than this are ties; ties go to the smaller ensemble.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    /// Fixed hyperparameters, no regularization.
    A,
    /// Hyperparameters tuned per member width.
    B,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::A => "A",
            Setting::B => "B",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Setting::A),
            "B" | "b" => Ok(Setting::B),
            _ => Err(Error::InvalidInput(format!("unknown setting '{s}' (expected A or B)"))),
        }
    }
}

/// Quality used to rank splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    CalibratedNll,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::CalibratedNll => "calibrated_nll",
        }
    }

    pub fn value(self, q: &CalibratedQuality) -> f64 {
        match self {
            Metric::Accuracy => q.accuracy,
            Metric::CalibratedNll => q.calibrated_nll,
        }
    }

    /// Whether `a` beats `b` by more than the tie tolerance.
    pub fn improves(self, a: f64, b: f64) -> bool {
        match self {
            Metric::Accuracy => a - b > TIE_EPS,
            Metric::CalibratedNll => b - a > TIE_EPS,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "calibrated_nll" | "nll" => Ok(Metric::CalibratedNll),
            _ => Err(Error::InvalidInput(format!("unknown metric '{s}'"))),
        }
    }
}

/// One completed cell of a memory-split plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub schema_version: u32,
    pub family: FamilyKind,
    pub dataset: String,
    pub setting: Setting,
    pub budget_params: u64,
    pub budget_std_units: f64,
    pub n: u64,
    pub k: u64,
    pub member_params: u64,
    pub replicate: u64,
    pub seeds: Vec<u64>,
    pub hp: Hyperparams,
    #[serde(flatten)]
    pub quality: CalibratedQuality,
}

impl SweepRecord {
    pub fn key(&self) -> String {
        format!("b{}-n{}-r{}", self.budget_params, self.n, self.replicate)
    }

    pub fn sort_key(&self) -> (u64, u64, u64) {
        (self.budget_params, self.n, self.replicate)
    }

    pub fn budget(&self) -> Budget {
        Budget {
            params: self.budget_params,
            standard_units: self.budget_std_units,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", self.schema_version));
        }
        if self.n == 0 || self.seeds.len() as u64 != self.n {
            return Err(format!("ensemble size {} with {} seeds", self.n, self.seeds.len()));
        }
        let q = &self.quality;
        if !(0.0..=1.0).contains(&q.accuracy) || !q.nll.is_finite() || !(q.temperature > 0.0) {
            return Err("quality fields out of range".into());
        }
        Ok(())
    }
}

/// Where member hyperparameters come from.
pub trait HyperparamSource: Sync {
    fn setting(&self) -> Setting;

    /// Hyperparameters for a member of width `k`. Their `seed` is replaced
    /// by the member seed before training.
    fn for_width(&self, family: &ArchFamily, k: u64, data: &DatasetSplit) -> Result<Hyperparams>;
}

/// Setting A: one fixed configuration for every width.
#[derive(Debug, Clone)]
pub struct FixedHyperparams(pub Hyperparams);

impl HyperparamSource for FixedHyperparams {
    fn setting(&self) -> Setting {
        Setting::A
    }

    fn for_width(&self, _: &ArchFamily, _: u64, _: &DatasetSplit) -> Result<Hyperparams> {
        Ok(self.0.clone())
    }
}

/// Everything that determines one budget's sweep.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub family: ArchFamily,
    pub budget: Budget,
    /// Candidate ensemble sizes; infeasible ones are skipped.
    pub n_grid: Vec<u64>,
    pub replicates: u64,
    pub root_seed: u64,
    /// Train members on train + validation; the temperature is still fitted
    /// on the validation split.
    pub retrain_full: bool,
}

/// Powers of two `1, 2, 4, ...` up to `max_n`.
pub fn power_of_two_grid(max_n: u64) -> Vec<u64> {
    std::iter::successors(Some(1u64), |n| n.checked_mul(2))
        .take_while(|&n| n <= max_n)
        .collect()
}

/// A feasible `(N, k)` pair of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCell {
    pub n: u64,
    pub k: u64,
    pub member_params: u64,
}

impl SweepPlan {
    /// Solves the member width for every grid size. Sizes whose member would
    /// fall below the smallest width are skipped with a warning.
    pub fn feasible_cells(&self) -> Result<Vec<SplitCell>> {
        let mut cells = Vec::new();
        for &n in &self.n_grid {
            if n == 0 {
                return Err(Error::InvalidInput("ensemble size 0 in grid".into()));
            }
            match self.family.solve_width(self.budget.params / n) {
                Ok(sol) => {
                    if sol.clamped {
                        log::warn!("N = {n}: member width clamped to k_max = {}", sol.k);
                    }
                    cells.push(SplitCell {
                        n,
                        k: sol.k,
                        member_params: self.family.param_count(sol.k)?,
                    });
                }
                Err(Error::BudgetTooSmall { .. }) => {
                    log::warn!("N = {n}: budget {} too small, skipped", self.budget.params);
                }
                Err(e) => return Err(e),
            }
        }
        if cells.is_empty() {
            return Err(Error::NoFeasibleSplit {
                budget: self.budget.params,
            });
        }
        Ok(cells)
    }
}

/// Relative gap `|N * count(k) - B| / B` of a solved split.
pub fn budget_gap(budget: u64, n: u64, member_params: u64) -> f64 {
    (n * member_params).abs_diff(budget) as f64 / budget as f64
}

/// Trains and evaluates one `(N, replicate)` cell.
pub fn run_cell(
    plan: &SweepPlan,
    cell: SplitCell,
    replicate: u64,
    hp: &Hyperparams,
    setting: Setting,
    data: &DatasetSplit,
) -> Result<SweepRecord> {
    let train_set = if plan.retrain_full {
        datagen::retrain_merge(data).train
    } else {
        data.train.clone()
    };
    let seeds: Vec<u64> = (0..cell.n)
        .map(|m| seed::member_seed(plan.root_seed, plan.budget.params, cell.n, replicate, m))
        .collect();
    let members = seeds
        .par_iter()
        .map(|&s| {
            let member = tinytrain::init_network(&plan.family, cell.k, s)?;
            tinytrain::train(member, &train_set, &data.val, &hp.with_seed(s))
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = EnsembleSpec::new(members)?;
    let quality = ensemble::evaluate(&spec, &data.test, &data.val)?;
    Ok(SweepRecord {
        schema_version: SCHEMA_VERSION,
        family: plan.family.kind,
        dataset: data.descriptor.to_string(),
        setting,
        budget_params: plan.budget.params,
        budget_std_units: plan.budget.standard_units,
        n: cell.n,
        k: cell.k,
        member_params: cell.member_params,
        replicate,
        seeds,
        hp: hp.clone(),
        quality,
    })
}

/// Runs every feasible `(N, replicate)` cell of `plan`, skipping cells
/// already present in `store`. Returns this budget's records in canonical
/// order.
pub fn run_sweep(
    plan: &SweepPlan,
    hp_source: &dyn HyperparamSource,
    data: &DatasetSplit,
    store: Option<&RunStore>,
) -> Result<Vec<SweepRecord>> {
    if plan.replicates == 0 {
        return Err(Error::InvalidInput("replicates must be at least 1".into()));
    }
    let cells = plan.feasible_cells()?;
    let setting = hp_source.setting();

    let mut hp_by_k: BTreeMap<u64, Hyperparams> = BTreeMap::new();
    for c in &cells {
        if let std::collections::btree_map::Entry::Vacant(slot) = hp_by_k.entry(c.k) {
            slot.insert(hp_source.for_width(&plan.family, c.k, data)?);
        }
    }

    let probe = |cell: &SplitCell, r: u64| -> String {
        format!("b{}-n{}-r{}", plan.budget.params, cell.n, r)
    };
    let mut done: Vec<SweepRecord> = Vec::new();
    let mut todo = Vec::new();
    for cell in &cells {
        for r in 0..plan.replicates {
            match store.and_then(|s| s.get(&probe(cell, r))) {
                Some(rec) => done.push(rec),
                None => todo.push((*cell, r)),
            }
        }
    }
    log::info!(
        "budget {}: {} cells cached, {} to run",
        plan.budget.params,
        done.len(),
        todo.len()
    );

    let fresh = todo
        .par_iter()
        .map(|&(cell, r)| {
            let rec = run_cell(plan, cell, r, &hp_by_k[&cell.k], setting, data)?;
            log::info!(
                "budget {} N={} k={} r={}: acc {:.4}",
                rec.budget_params,
                rec.n,
                rec.k,
                r,
                rec.quality.accuracy
            );
            if let Some(s) = store {
                s.insert(rec.clone())?;
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    done.extend(fresh);
    done.sort_by_key(SweepRecord::sort_key);
    Ok(done)
}

/// Aggregate of one ensemble size on a split curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPoint {
    pub n: u64,
    pub k: u64,
    pub member_params: u64,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single replicate.
    pub stddev: f64,
    pub replicates: usize,
    /// Keys of the records behind this point.
    pub sources: Vec<String>,
}

/// Memory-split curve of one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCurve {
    pub budget: Budget,
    pub metric: Metric,
    pub points: Vec<SplitPoint>,
    pub optimal_n: u64,
    pub msa_holds: bool,
}

impl SplitCurve {
    pub fn point(&self, n: u64) -> Option<&SplitPoint> {
        self.points.iter().find(|p| p.n == n)
    }

    pub fn optimum(&self) -> &SplitPoint {
        self.point(self.optimal_n).expect("optimum is a grid member")
    }

    /// At least three replicates everywhere except possibly the largest `N`.
    pub fn replicate_policy_ok(&self) -> bool {
        let last = self.points.len().saturating_sub(1);
        self.points
            .iter()
            .enumerate()
            .all(|(i, p)| p.replicates >= 3 || (i == last && p.replicates >= 1))
    }
}

pub fn mean_and_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates one budget's records and locates `N*`.
pub fn optimal_split(records: &[SweepRecord], metric: Metric) -> Result<SplitCurve> {
    let first = records
        .first()
        .ok_or_else(|| Error::EmptySelection("no records for split curve".into()))?;
    if let Some(r) = records.iter().find(|r| r.budget_params != first.budget_params) {
        return Err(Error::InvalidInput(format!(
            "records mix budgets {} and {}",
            first.budget_params, r.budget_params
        )));
    }
    let mut by_n: BTreeMap<u64, Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        by_n.entry(r.n).or_default().push(r);
    }
    let mut points = Vec::with_capacity(by_n.len());
    for (n, mut recs) in by_n {
        recs.sort_by_key(|r| r.replicate);
        let values: Vec<f64> = recs.iter().map(|r| metric.value(&r.quality)).collect();
        let (mean, stddev) = mean_and_stddev(&values);
        points.push(SplitPoint {
            n,
            k: recs[0].k,
            member_params: recs[0].member_params,
            mean,
            stddev,
            replicates: recs.len(),
            sources: recs.iter().map(|r| r.key()).collect(),
        });
    }
    let mut best = &points[0];
    for p in &points[1..] {
        if metric.improves(p.mean, best.mean) {
            best = p;
        }
    }
    let optimal_n = best.n;
    Ok(SplitCurve {
        budget: first.budget(),
        metric,
        points,
        optimal_n,
        msa_holds: optimal_n > 1,
    })
}

/// One split curve per budget, in ascending budget order.
pub fn split_curves(records: &[SweepRecord], metric: Metric) -> Result<Vec<SplitCurve>> {
    let mut by_budget: BTreeMap<u64, Vec<SweepRecord>> = BTreeMap::new();
    for r in records {
        by_budget.entry(r.budget_params).or_default().push(r.clone());
    }
    by_budget
        .values()
        .map(|recs| optimal_split(recs, metric))
        .collect()
}

/// Optimal split of one budget: ensemble size and member size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub budget: Budget,
    pub optimal_n: u64,
    pub k: u64,
    pub member_params: u64,
    pub mean: f64,
    pub stddev: f64,
}

/// How the optimal split moves as the budget grows.
pub fn optimal_trajectory(curves: &[SplitCurve]) -> Result<Vec<TrajectoryRow>> {
    if curves.is_empty() {
        return Err(Error::EmptySelection("no split curves".into()));
    }
    let mut rows: Vec<TrajectoryRow> = curves
        .iter()
        .map(|c| {
            let p = c.optimum();
            TrajectoryRow {
                budget: c.budget,
                optimal_n: c.optimal_n,
                k: p.k,
                member_params: p.member_params,
                mean: p.mean,
                stddev: p.stddev,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.budget.params);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::MlpShape;

    pub(crate) fn record(budget: u64, n: u64, r: u64, acc: f64) -> SweepRecord {
        SweepRecord {
            schema_version: SCHEMA_VERSION,
            family: FamilyKind::Mlp,
            dataset: "test".into(),
            setting: Setting::A,
            budget_params: budget,
            budget_std_units: 1.0,
            n,
            k: 8 / n.max(1),
            member_params: budget / n,
            replicate: r,
            seeds: (0..n).collect(),
            hp: Hyperparams::default(),
            quality: CalibratedQuality {
                accuracy: acc,
                nll: 1.0 - acc,
                calibrated_nll: 0.9 - acc,
                temperature: 1.0,
            },
        }
    }

    #[test]
    fn argmax_of_means() {
        let recs = vec![record(100, 1, 0, 0.80), record(100, 2, 0, 0.82), record(100, 4, 0, 0.81)];
        let c = optimal_split(&recs, Metric::Accuracy).unwrap();
        assert_eq!(c.optimal_n, 2);
        assert!(c.msa_holds);
    }

    #[test]
    fn ties_go_to_smaller_n() {
        let recs = vec![record(100, 1, 0, 0.8), record(100, 2, 0, 0.8)];
        let c = optimal_split(&recs, Metric::Accuracy).unwrap();
        assert_eq!(c.optimal_n, 1);
        assert!(!c.msa_holds);
    }

    #[test]
    fn nll_metric_minimizes() {
        let recs = vec![record(100, 1, 0, 0.5), record(100, 2, 0, 0.7), record(100, 4, 0, 0.6)];
        let c = optimal_split(&recs, Metric::CalibratedNll).unwrap();
        assert_eq!(c.optimal_n, 2);
    }

    #[test]
    fn aggregates_replicates() {
        let recs = vec![
            record(100, 1, 0, 0.70),
            record(100, 1, 1, 0.72),
            record(100, 1, 2, 0.74),
            record(100, 2, 0, 0.80),
        ];
        let c = optimal_split(&recs, Metric::Accuracy).unwrap();
        let p = c.point(1).unwrap();
        assert!((p.mean - 0.72).abs() < 1e-12);
        assert!((p.stddev - 0.02).abs() < 1e-12);
        assert_eq!(p.replicates, 3);
        assert_eq!(c.point(2).unwrap().stddev, 0.0);
        assert!(c.replicate_policy_ok());
    }

    #[test]
    fn mixed_budgets_rejected() {
        let recs = vec![record(100, 1, 0, 0.8), record(200, 1, 0, 0.8)];
        assert!(optimal_split(&recs, Metric::Accuracy).is_err());
        assert_eq!(split_curves(&recs, Metric::Accuracy).unwrap().len(), 2);
        assert!(optimal_split(&[], Metric::Accuracy).is_err());
    }

    #[test]
    fn trajectory_single_budget_echoes_optimum() {
        let recs = vec![record(100, 1, 0, 0.80), record(100, 2, 0, 0.85)];
        let curves = split_curves(&recs, Metric::Accuracy).unwrap();
        let rows = optimal_trajectory(&curves).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].optimal_n, 2);
        assert_eq!(rows[0].member_params, 50);
        assert!(optimal_trajectory(&[]).is_err());
    }

    #[test]
    fn grid_and_feasibility() {
        assert_eq!(power_of_two_grid(20), vec![1, 2, 4, 8, 16]);
        let family = ArchFamily::mlp(&MlpShape::default()).unwrap();
        let k1 = family.param_count(1).unwrap();
        let plan = SweepPlan {
            budget: family.budget(k1 * 3).unwrap(),
            family,
            n_grid: vec![1, 2, 4, 8],
            replicates: 1,
            root_seed: 0,
            retrain_full: false,
        };
        let cells = plan.feasible_cells().unwrap();
        assert_eq!(cells.iter().map(|c| c.n).collect::<Vec<_>>(), vec![1, 2]);
        let tiny = SweepPlan {
            budget: plan.family.budget(k1 - 1).unwrap(),
            ..plan
        };
        assert!(matches!(tiny.feasible_cells(), Err(Error::NoFeasibleSplit { .. })));
    }

    #[test]
    fn standard_wrn_budget_sixteen_members() {
        let family = ArchFamily::wrn28(100);
        let plan = SweepPlan {
            budget: family.standard_budget().unwrap(),
            family,
            n_grid: vec![16],
            replicates: 1,
            root_seed: 0,
            retrain_full: false,
        };
        assert_eq!(plan.feasible_cells().unwrap()[0].k, 40);
    }

    #[test]
    fn record_validation() {
        let mut r = record(100, 2, 0, 0.8);
        assert!(r.validate().is_ok());
        r.seeds.pop();
        assert!(r.validate().is_err());
        let mut r = record(100, 1, 0, 0.8);
        r.schema_version = 99;
        assert!(r.validate().is_err());
    }

    #[test]
    fn record_json_round_trip() {
        let r = record(100, 2, 1, 0.8125);
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains("\"accuracy\":0.8125"));
        assert_eq!(serde_json::from_str::<SweepRecord>(&line).unwrap(), r);
    }
}
