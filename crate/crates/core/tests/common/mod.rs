#![allow(dead_code)]

use memsplit::hypertune::{bo_search, BoOptions, Dim, DimKind, HpName, Scale, SearchSpace};
use memsplit::tinytrain::{Hyperparams, Mode, TrainedMember};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const FD_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct GradReport {
    pub trials: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_rel_err: f64,
}

fn flat(member: &TrainedMember) -> Vec<f64> {
    member.params().copied().collect()
}

fn set_flat(member: &mut TrainedMember, values: &[f64]) {
    for (p, v) in member.params_mut().zip(values) {
        *p = *v;
    }
}

/// Compares analytic gradients with central differences on random networks
/// and batches. Coordinates whose perturbation flips a ReLU are skipped.
pub fn gradient_check(trials: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport {
        trials,
        ..GradReport::default()
    };
    for t in 0..trials {
        let depth = rng.gen_range(1..=3);
        let mut sizes = vec![rng.gen_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.gen_range(1..=7));
        }
        sizes.push(rng.gen_range(2..=5));
        let member = TrainedMember::from_sizes(&sizes, rng.gen());
        let rows = rng.gen_range(1..=12);
        let classes = *sizes.last().unwrap();
        let x: Vec<f64> = (0..rows * sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
        let hp = Hyperparams {
            weight_decay: if t % 2 == 0 { rng.gen_range(0.0..0.1) } else { 0.0 },
            label_smoothing: if t % 3 == 0 { rng.gen_range(0.0..0.3) } else { 0.0 },
            ..Hyperparams::default()
        };
        let (_, grads) = member.loss_and_grad(&x, &y, &hp, Mode::Eval).unwrap();
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.params().copied().collect::<Vec<_>>()).collect();
        let base = flat(&member);
        let pattern = member.activation_pattern(&x).unwrap();
        let mut probe = member.clone();
        for i in 0..base.len() {
            let mut eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                set_flat(&mut probe, &v);
                let flips = probe.activation_pattern(&x).unwrap() != pattern;
                (probe.loss_and_grad(&x, &y, &hp, Mode::Eval).unwrap().0, flips)
            };
            let (up, flip_up) = eval(FD_STEP);
            let (down, flip_down) = eval(-FD_STEP);
            if flip_up || flip_down {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_ABS_FLOOR);
            report.worst_rel_err = report.worst_rel_err.max(rel);
            report.checked += 1;
        }
    }
    report
}

pub fn unit_dim(name: HpName) -> Dim {
    Dim {
        name,
        kind: DimKind::Continuous { lo: 0.0, hi: 1.0 },
        scale: Scale::Linear,
    }
}

pub fn bowl_1d(p: &[f64]) -> f64 {
    -(p[0] - 0.3).powi(2)
}

pub fn bowl_2d(p: &[f64]) -> f64 {
    -((p[0] - 0.3).powi(2) + (p[1] - 0.7).powi(2))
}

/// Seeds (out of `seeds`) for which 20-iteration BO gets within `tol` of
/// the dense-grid optimum value of `f` on the unit cube.
pub fn bo_successes(dims: usize, f: fn(&[f64]) -> f64, seeds: u64, tol: f64) -> (u64, f64) {
    let grid_best = if dims == 1 {
        (0..=10_000).map(|i| f(&[i as f64 / 10_000.0])).fold(f64::NEG_INFINITY, f64::max)
    } else {
        let mut best = f64::NEG_INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                best = best.max(f(&[i as f64 / 200.0, j as f64 / 200.0]));
            }
        }
        best
    };
    let names = [HpName::Lr, HpName::Dropout];
    let space = SearchSpace::new((0..dims).map(|d| unit_dim(names[d])).collect()).unwrap();
    let mut ok = 0;
    for seed in 0..seeds {
        let opts = BoOptions {
            seed,
            ..BoOptions::default()
        };
        let r = bo_search(&space, |p| Ok(f(p)), opts).unwrap();
        if grid_best - r.best_score <= tol {
            ok += 1;
        }
    }
    (ok, grid_best)
}

/// Probability table with labels drawn from the rows themselves, so the
/// table is calibrated by construction. `sharpen` raises each row to that
/// power (then renormalizes) after the labels are drawn.
pub fn synthetic_table(rows: usize, classes: usize, sharpen: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Vec::with_capacity(rows * classes);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let logits: Vec<f64> = (0..classes).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let p: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut label = classes - 1;
        for (c, pc) in p.iter().enumerate() {
            acc += pc;
            if u < acc {
                label = c;
                break;
            }
        }
        labels.push(label);
        let s: Vec<f64> = p.iter().map(|v| v.powf(sharpen)).collect();
        let zs: f64 = s.iter().sum();
        probs.extend(s.iter().map(|v| v / zs));
    }
    (probs, labels)
}

/// Mean NLL of the temperature-scaled table, computed directly.
pub fn nll_at(probs: &[f64], labels: &[usize], classes: usize, t: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in probs.chunks(classes).zip(labels) {
        let logits: Vec<f64> = row.iter().map(|p| p.max(1e-12).ln() / t).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / labels.len() as f64
}

/// 400 log-spaced temperatures over `[0.05, 20]`.
pub fn temperature_grid() -> Vec<f64> {
    (0..400)
        .map(|i| (0.05f64.ln() + (20f64.ln() - 0.05f64.ln()) * i as f64 / 399.0).exp())
        .collect()
}
