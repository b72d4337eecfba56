//! Gaussian-process surrogate with a squared-exponential ARD kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const NOISE_FLOOR: f64 = 1e-6;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GpParams {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpParams {
    pub fn isotropic(dim: usize, lengthscale: f64, signal_var: f64, noise_var: f64) -> Self {
        GpParams {
            lengthscales: vec![lengthscale; dim],
            signal_var,
            noise_var,
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        GpParams {
            lengthscales: v[..d].iter().map(|x| x.exp()).collect(),
            signal_var: v[d].exp(),
            noise_var: v[d + 1].exp(),
        }
    }
}

/// Bounds of the log-parameter search: lengthscales, signal variance (on
/// standardized targets) and noise variance.
fn log_bounds(dim: usize) -> Vec<(f64, f64)> {
    let mut b = vec![(0.01f64.ln(), 10f64.ln()); dim];
    b.push((0.05f64.ln(), 20f64.ln()));
    b.push((NOISE_FLOOR.ln(), 1f64.ln()));
    b
}

pub fn kernel(a: &[f64], b: &[f64], p: &GpParams) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&p.lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    p.signal_var * (-0.5 * r2).exp()
}

/// Cholesky factor of `K + noise I`, adding jitter (doubling from 1e-10)
/// until the factorization succeeds.
fn factorize(x: &[Vec<f64>], p: &GpParams) -> Result<Cholesky<f64, Dyn>> {
    let n = x.len();
    let base = DMatrix::from_fn(n, n, |i, j| {
        kernel(&x[i], &x[j], p) + if i == j { p.noise_var } else { 0.0 }
    });
    if let Some(c) = Cholesky::new(base.clone()) {
        return Ok(c);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX {
        let mut m = base.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok(c);
        }
        jitter *= 2.0;
    }
    Err(Error::InvalidInput("kernel matrix not positive definite".into()))
}

/// Posterior of a zero-mean GP on standardized targets.
#[derive(Debug, Clone)]
pub struct Gp {
    x: Vec<Vec<f64>>,
    params: GpParams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_std: f64,
}

fn standardize(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (y.iter().map(|v| (v - mean) / std).collect(), mean, std)
}

impl Gp {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: GpParams) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::ShapeMismatch {
                what: "gp observations",
                got: y.len(),
                expected: x.len(),
            });
        }
        let (yn, y_mean, y_std) = standardize(y);
        let chol = factorize(x, &params)?;
        let alpha = chol.solve(&DVector::from_vec(yn));
        Ok(Gp {
            x: x.to_vec(),
            params,
            chol,
            alpha,
            y_mean,
            y_std,
        })
    }

    pub fn params(&self) -> &GpParams {
        &self.params
    }

    /// Posterior mean and variance of the latent function at `at`.
    pub fn predict(&self, at: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, at, &self.params)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("triangular solve");
        let var = (self.params.signal_var - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * self.y_std * var)
    }

    /// Log marginal likelihood of standardized `y` under `params`.
    pub fn log_marginal_likelihood(x: &[Vec<f64>], y: &[f64], params: &GpParams) -> f64 {
        let (yn, _, _) = standardize(y);
        let Ok(chol) = factorize(x, params) else {
            return f64::NEG_INFINITY;
        };
        let yv = DVector::from_vec(yn);
        let alpha = chol.solve(&yv);
        let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * yv.dot(&alpha) - log_det - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Marginal-likelihood ascent over log hyperparameters: compass search
    /// from the default and `restarts` random starts.
    pub fn fit_hyperparams(x: &[Vec<f64>], y: &[f64], restarts: usize, rng: &mut impl Rng) -> GpParams {
        let dim = x[0].len();
        let bounds = log_bounds(dim);
        let objective = |v: &[f64]| Gp::log_marginal_likelihood(x, y, &GpParams::from_log(v));
        let mut starts = vec![GpParams::isotropic(dim, 0.3, 1.0, 1e-3).to_log()];
        for _ in 0..restarts {
            starts.push(bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect());
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in starts {
            let (v, f) = compass_search(&objective, s, &bounds, 1.0, 1e-3, 400);
            if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                best = Some((v, f));
            }
        }
        GpParams::from_log(&best.expect("at least one start").0)
    }
}

/// Maximizes `f` by coordinate pattern moves of size `step`, halving the
/// step whenever no move improves, within box `bounds`.
pub fn compass_search(
    f: &impl Fn(&[f64]) -> f64,
    mut x: Vec<f64>,
    bounds: &[(f64, f64)],
    mut step: f64,
    min_step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
    let mut fx = f(&x);
    let mut evals = 1;
    while step >= min_step && evals < max_evals {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut cand = x.clone();
                cand[i] = (cand[i] + dir * step).clamp(bounds[i].0, bounds[i].1);
                if cand[i] == x[i] {
                    continue;
                }
                let fc = f(&cand);
                evals += 1;
                if fc > fx {
                    x = cand;
                    fx = fc;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = var.sqrt();
    let gain = mean - best;
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    (gain * std_normal_cdf(z) + sd * std_normal_pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn observations() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = [0.05, 0.3, 0.55, 0.7, 0.95].iter().map(|&v| vec![v]).collect();
        let y = x.iter().map(|v| (6.0 * v[0]).sin()).collect();
        (x, y)
    }

    #[test]
    fn noiseless_gp_interpolates() {
        let (x, y) = observations();
        let gp = Gp::fit(&x, &y, GpParams::isotropic(1, 0.3, 1.0, 1e-12)).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (m, v) = gp.predict(xi);
            assert!((m - yi).abs() < 1e-6, "{m} vs {yi}");
            assert!(v < 1e-8);
        }
    }

    #[test]
    fn ei_nonnegative_and_vanishes_at_observed_best() {
        let (x, y) = observations();
        let gp = Gp::fit(&x, &y, GpParams::isotropic(1, 0.3, 1.0, 1e-12)).unwrap();
        let best = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..=200 {
            let (m, v) = gp.predict(&[i as f64 / 200.0]);
            assert!(expected_improvement(m, v, best) >= 0.0);
        }
        for xi in &x {
            let (m, v) = gp.predict(xi);
            assert!(expected_improvement(m, v, best) <= 1e-6);
        }
    }

    #[test]
    fn ei_limits() {
        assert_eq!(expected_improvement(1.0, 0.0, 0.5), 0.5);
        assert_eq!(expected_improvement(0.0, 0.0, 0.5), 0.0);
        // z = 0: sd * phi(0).
        let ei = expected_improvement(0.0, 4.0, 0.0);
        assert!((ei - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_factorize_with_jitter() {
        let x = vec![vec![0.5], vec![0.5], vec![0.2]];
        let y = vec![1.0, 1.0, 0.0];
        let gp = Gp::fit(&x, &y, GpParams::isotropic(1, 0.2, 1.0, 0.0)).unwrap();
        let (m, _) = gp.predict(&[0.5]);
        assert!((m - 1.0).abs() < 1e-3);
    }

    #[test]
    fn hyperparameter_fit_beats_default() {
        let (x, y) = observations();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Gp::fit_hyperparams(&x, &y, 4, &mut rng);
        let default = GpParams::isotropic(1, 0.3, 1.0, 1e-3);
        assert!(
            Gp::log_marginal_likelihood(&x, &y, &p) >= Gp::log_marginal_likelihood(&x, &y, &default)
        );
        assert!(p.noise_var >= NOISE_FLOOR * (1.0 - 1e-12));
    }
}
