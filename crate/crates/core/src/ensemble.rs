//! Deep-ensemble prediction, quality metrics and temperature scaling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::FamilyKind;
use crate::datagen::Samples;
use crate::error::{Error, Result};
use crate::tinytrain::{self, Mode, TrainedMember};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
/// Relative tolerance on the fitted temperature.
pub const T_REL_TOL: f64 = 1e-4;

/// `E(N, S)`: `N` members of one family at one width factor.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    members: Vec<TrainedMember>,
    family: FamilyKind,
    k: u64,
    member_params: u64,
}

impl EnsembleSpec {
    pub fn new(members: Vec<TrainedMember>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidInput("ensemble needs at least one member".into()))?;
        let (family, k, sizes) = (first.family, first.k, first.sizes());
        if let Some(m) = members
            .iter()
            .find(|m| m.family != family || m.k != k || m.sizes() != sizes)
        {
            return Err(Error::InvalidInput(format!(
                "mixed ensemble: {}@k={} alongside {}@k={}",
                family, k, m.family, m.k
            )));
        }
        let member_params = first.param_count() as u64;
        Ok(EnsembleSpec {
            members,
            family,
            k,
            member_params,
        })
    }

    pub fn members(&self) -> &[TrainedMember] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn family(&self) -> FamilyKind {
        self.family
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn member_params(&self) -> u64 {
        self.member_params
    }

    pub fn total_params(&self) -> u64 {
        self.member_params * self.members.len() as u64
    }

    pub fn classes(&self) -> usize {
        self.members[0].classes()
    }

    /// Post-softmax average of the members' eval-mode predictions.
    ///
    /// Member outputs are computed in parallel and reduced in ascending
    /// member order with compensated summation, so the result is bit-stable
    /// and, for power-of-two ensemble sizes, duplicate members reproduce a
    /// single member exactly.
    pub fn predict(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let outputs: Vec<Vec<f64>> = self
            .members
            .par_iter()
            .map(|m| m.forward(inputs, Mode::Eval))
            .collect::<Result<_>>()?;
        Ok(average_predictions(&outputs))
    }
}

/// Elementwise mean of equally shaped probability tables, summed in index
/// order with Neumaier compensation.
pub fn average_predictions(outputs: &[Vec<f64>]) -> Vec<f64> {
    let n = outputs.len() as f64;
    let len = outputs[0].len();
    let mut sum = vec![0.0f64; len];
    let mut comp = vec![0.0f64; len];
    for out in outputs {
        for ((s, c), &x) in sum.iter_mut().zip(comp.iter_mut()).zip(out) {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
    }
    sum.iter().zip(&comp).map(|(s, c)| (s + c) / n).collect()
}

/// Test-set quality of a model, with and without temperature scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedQuality {
    pub accuracy: f64,
    pub nll: f64,
    pub calibrated_nll: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// Mean NLL on the fitting data at `temperature`.
    pub nll: f64,
    /// Fitting data had a single class; the temperature was left at 1.
    pub degenerate: bool,
}

/// Floors at [`PROB_FLOOR`], renormalizes each row and takes logs.
pub fn log_probs(probs: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len());
    for row in probs.chunks_exact(classes) {
        let total: f64 = row.iter().map(|p| p.max(PROB_FLOOR)).sum();
        out.extend(row.iter().map(|p| (p.max(PROB_FLOOR) / total).ln()));
    }
    out
}

/// Mean NLL of `softmax(log_p / t)` against `labels`.
pub fn nll_at_temperature(log_p: &[f64], labels: &[usize], classes: usize, t: f64) -> f64 {
    let inv_t = 1.0 / t;
    let mut total = 0.0;
    for (row, &y) in log_p.chunks_exact(classes).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) * inv_t;
        let lse = m + row.iter().map(|v| (v * inv_t - m).exp()).sum::<f64>().ln();
        total += lse - row[y] * inv_t;
    }
    total / labels.len() as f64
}

/// Mean `-ln p(label)` with probabilities floored at [`PROB_FLOOR`].
pub fn mean_nll(probs: &[f64], labels: &[usize], classes: usize) -> f64 {
    let total: f64 = probs
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &y)| -row[y].max(PROB_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

/// Rescales probabilities by a temperature: `softmax(log p / t)` per row.
pub fn apply_temperature(probs: &[f64], classes: usize, t: f64) -> Vec<f64> {
    let mut out = log_probs(probs, classes);
    for row in out.chunks_exact_mut(classes) {
        row.iter_mut().for_each(|v| *v /= t);
        tinytrain::softmax_in_place(row);
    }
    out
}

/// Minimizes a unimodal `f` on `[lo, hi]` by golden-section search until
/// the bracket is narrower than `tol`. Returns `(x, f(x))`.
pub fn golden_section_minimize(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Temperature minimizing the mean NLL of `softmax(log p / T)` over
/// `T in [0.05, 20]`, searched on `ln T`. `T = 1` and the interval ends are
/// kept as candidates, so the fit never does worse than no scaling on the
/// fitting data.
pub fn fit_temperature(probs: &[f64], labels: &[usize], classes: usize) -> Result<TemperatureFit> {
    if labels.is_empty() || probs.len() != labels.len() * classes {
        return Err(Error::ShapeMismatch {
            what: "probability table",
            got: probs.len(),
            expected: labels.len() * classes,
        });
    }
    let log_p = log_probs(probs, classes);
    let nll = |t: f64| nll_at_temperature(&log_p, labels, classes, t);
    if labels.iter().all(|&y| y == labels[0]) {
        log::warn!("temperature fit on single-class data; keeping T = 1");
        return Ok(TemperatureFit {
            temperature: 1.0,
            nll: nll(1.0),
            degenerate: true,
        });
    }
    // A bracket of width tol in ln T is a relative tolerance of ~tol on T.
    let (u, f_u) = golden_section_minimize(|u| nll(u.exp()), T_MIN.ln(), T_MAX.ln(), T_REL_TOL);
    let mut best = (u.exp(), f_u);
    for t in [1.0, T_MIN, T_MAX] {
        let v = nll(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    Ok(TemperatureFit {
        temperature: best.0,
        nll: best.1,
        degenerate: false,
    })
}

/// Scores a probability table on `test`, fitting the temperature on `val`
/// (fixed at 1 when `val` is `None` or empty).
pub fn evaluate_probs(
    test_probs: &[f64],
    test: &Samples,
    val: Option<(&[f64], &Samples)>,
    classes: usize,
) -> Result<CalibratedQuality> {
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test split".into()));
    }
    let accuracy = tinytrain::accuracy(test_probs, &test.y, classes);
    let nll = mean_nll(test_probs, &test.y, classes);
    let temperature = match val {
        Some((p, v)) if !v.is_empty() => fit_temperature(p, &v.y, classes)?.temperature,
        _ => 1.0,
    };
    let calibrated_nll = if temperature == 1.0 {
        nll
    } else {
        nll_at_temperature(&log_probs(test_probs, classes), &test.y, classes, temperature)
    };
    Ok(CalibratedQuality {
        accuracy,
        nll,
        calibrated_nll,
        temperature,
    })
}

/// Test accuracy, NLL and calibrated NLL of an ensemble.
pub fn evaluate(spec: &EnsembleSpec, test: &Samples, val: &Samples) -> Result<CalibratedQuality> {
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test split".into()));
    }
    let test_probs = spec.predict(&test.x)?;
    let val_probs = if val.is_empty() {
        None
    } else {
        Some(spec.predict(&val.x)?)
    };
    evaluate_probs(
        &test_probs,
        test,
        val_probs.as_deref().map(|p| (p, val)),
        spec.classes(),
    )
}
