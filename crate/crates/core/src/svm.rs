//! RBF support vector machine (SMO with second-order working-set selection)
//! and a standardized, grid-searched classifier built on it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::metrics::{d_eer, Polarity, ScoreSet};

const TAU: f64 = 1e-12;
const STOP_EPS: f64 = 1e-3;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pairwise squared distances, row-major `n × n`.
fn gram_sq(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(&x[i], &x[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Dual solution over a precomputed kernel. Returns `(alpha, rho)`.
fn smo(kernel: &[f64], y: &[f64], c: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let k = |i: usize, j: usize| kernel[i * n + j];
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    for _ in 0..max_iter {
        let mut i = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > g_max {
                    g_max = v;
                    i = t;
                }
            }
        }
        let mut j = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            if low(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                g_min = g_min.min(v);
                if i != usize::MAX && v < g_max {
                    let b = g_max - v;
                    let a = (k(i, i) + k(t, t) - 2.0 * k(i, t)).max(TAU);
                    let obj = -(b * b) / a;
                    if obj < obj_min {
                        obj_min = obj;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < STOP_EPS {
            break;
        }
        let (yi, yj) = (y[i], y[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qii = k(i, i);
        let qjj = k(j, j);
        let qij = yi * yj * k(i, j);
        if yi != yj {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (yi * k(t, i) * di + yj * k(t, j) * dj);
        }
    }
    // rho: average over free vectors, else midpoint of the feasible interval
    let (mut ub, mut lb, mut sum, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum += yg;
        }
    }
    let rho = if n_free > 0 { sum / n_free as f64 } else { (ub + lb) / 2.0 };
    (alpha, rho)
}

/// Trained RBF machine; `decision > 0` means the positive (morph) class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfSvm {
    pub gamma: f64,
    pub c: f64,
    pub support: Vec<Vec<f64>>,
    /// `alpha_i · y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
}

impl RbfSvm {
    fn from_kernel(x: &[Vec<f64>], y: &[f64], kernel: &[f64], gamma: f64, c: f64) -> RbfSvm {
        let (alpha, rho) = smo(kernel, y, c, 200 * x.len().max(100));
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for (i, a) in alpha.iter().enumerate() {
            if *a > 0.0 {
                support.push(x[i].clone());
                coef.push(a * y[i]);
            }
        }
        RbfSvm {
            gamma,
            c,
            support,
            coef,
            rho,
        }
    }

    /// Fits on `x` with labels `y ∈ {−1, +1}`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], gamma: f64, c: f64) -> RbfSvm {
        let sq = gram_sq(x);
        let kernel: Vec<f64> = sq.iter().map(|d| (-gamma * d).exp()).collect();
        RbfSvm::from_kernel(x, y, &kernel, gamma, c)
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, a)| a * (-self.gamma * sq_dist(s, x)).exp())
            .sum::<f64>()
            - self.rho
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub c: Vec<f64>,
    /// gamma = 2^k / d for each k.
    pub gamma_exponents: Vec<i32>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            c: vec![0.1, 1.0, 10.0, 100.0],
            gamma_exponents: (-3..=3).collect(),
        }
    }
}

/// Per-feature standardization constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Standardizer {
        let d = x.first().map_or(0, |r| r.len());
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in x {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var.into_iter().map(|v| if v.sqrt() < 1e-12 { 1.0 } else { v.sqrt() }).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Grid-searched, standardized RBF-SVM over fixed-length features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSvm {
    pub input_dim: usize,
    pub scaler: Standardizer,
    pub model: RbfSvm,
    /// D-EER of the chosen grid point on the selection data.
    pub selection_deer: f64,
}

fn signs(labels: &[Label]) -> Vec<f64> {
    labels.iter().map(|l| if l.is_morph() { 1.0 } else { -1.0 }).collect()
}

fn check_xy(x: &[Vec<f64>], labels: &[Label]) -> Result<usize> {
    if x.len() != labels.len() {
        return Err(Error::LengthMismatch(x.len(), labels.len()));
    }
    let d = x.first().map_or(0, |r| r.len());
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput("ragged feature matrix".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature".into()));
    }
    if !labels.iter().any(|l| l.is_morph()) || labels.iter().all(|l| l.is_morph()) {
        return Err(Error::SingleClass("SVM training data".into()));
    }
    Ok(d)
}

fn deer_of(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let ids = (0..scores.len()).map(|i| i.to_string()).collect();
    Ok(d_eer(&ScoreSet::from_raw("svm", "selection", ids, scores, labels, Polarity::LargerIsMorph)?)?.0)
}

impl FeatureSvm {
    /// Fits the grid on `train`, picks the point with the lowest D-EER on
    /// `val` (first grid point on ties), then keeps that model. Without
    /// validation data a seeded 20 % stratified holdout of `train` is used
    /// for selection and the winner is refit on all of `train`.
    pub fn fit(
        train_x: &[Vec<f64>],
        train_y: &[Label],
        val: Option<(&[Vec<f64>], &[Label])>,
        grid: &HyperGrid,
        seed: u64,
    ) -> Result<FeatureSvm> {
        let d = check_xy(train_x, train_y)?;
        if grid.c.is_empty() || grid.gamma_exponents.is_empty() {
            return Err(Error::Config("empty hyper-parameter grid".into()));
        }
        let (fit_idx, sel): (Vec<usize>, Option<(Vec<Vec<f64>>, Vec<Label>)>) = match val {
            Some((vx, vy)) => {
                check_xy(vx, vy)?;
                ((0..train_x.len()).collect(), Some((vx.to_vec(), vy.to_vec())))
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut fit_idx = Vec::new();
                let mut hold = Vec::new();
                for class in [false, true] {
                    let mut idx: Vec<usize> = (0..train_x.len()).filter(|&i| train_y[i].is_morph() == class).collect();
                    idx.shuffle(&mut rng);
                    let n_hold = ((idx.len() as f64) * 0.2).round() as usize;
                    let n_hold = n_hold.clamp(1, idx.len().saturating_sub(1).max(1));
                    if idx.len() < 2 {
                        return Err(Error::SingleClass("too few samples to hold out a selection split".into()));
                    }
                    hold.extend_from_slice(&idx[..n_hold]);
                    fit_idx.extend_from_slice(&idx[n_hold..]);
                }
                fit_idx.sort_unstable();
                hold.sort_unstable();
                let hx = hold.iter().map(|&i| train_x[i].clone()).collect();
                let hy = hold.iter().map(|&i| train_y[i]).collect();
                (fit_idx, Some((hx, hy)))
            }
        };
        let (sel_x, sel_y) = sel.unwrap();
        let fit_x_raw: Vec<Vec<f64>> = fit_idx.iter().map(|&i| train_x[i].clone()).collect();
        let fit_y: Vec<Label> = fit_idx.iter().map(|&i| train_y[i]).collect();
        let scaler = Standardizer::fit(&fit_x_raw);
        let fit_x: Vec<Vec<f64>> = fit_x_raw.iter().map(|r| scaler.apply(r)).collect();
        let sel_xs: Vec<Vec<f64>> = sel_x.iter().map(|r| scaler.apply(r)).collect();
        let y = signs(&fit_y);
        let sq = gram_sq(&fit_x);
        let mut best: Option<(f64, RbfSvm)> = None;
        for &k in &grid.gamma_exponents {
            let gamma = 2f64.powi(k) / d.max(1) as f64;
            let kernel: Vec<f64> = sq.iter().map(|v| (-gamma * v).exp()).collect();
            for &c in &grid.c {
                let model = RbfSvm::from_kernel(&fit_x, &y, &kernel, gamma, c);
                let scores: Vec<f64> = sel_xs.iter().map(|r| model.decision(r)).collect();
                let deer = deer_of(&scores, &sel_y)?;
                log::debug!("svm grid C={c} gamma={gamma:.3e}: selection D-EER {deer:.4}");
                if best.as_ref().map_or(true, |b| deer < b.0) {
                    best = Some((deer, model));
                }
            }
        }
        let (selection_deer, mut model) = best.unwrap();
        let mut scaler = scaler;
        if val.is_none() {
            scaler = Standardizer::fit(train_x);
            let all: Vec<Vec<f64>> = train_x.iter().map(|r| scaler.apply(r)).collect();
            model = RbfSvm::fit(&all, &signs(train_y), model.gamma, model.c);
        }
        Ok(FeatureSvm {
            input_dim: d,
            scaler,
            model,
            selection_deer,
        })
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::LengthMismatch(self.input_dim, x.len()));
        }
        Ok(self.model.decision(&self.scaler.apply(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..2 * n {
            let m = i >= n;
            let off = if m { sep } else { -sep };
            x.push(vec![off + nd.sample(&mut rng), nd.sample(&mut rng), off + nd.sample(&mut rng)]);
            y.push(if m { Label::Imposter } else { Label::Genuine });
        }
        (x, y)
    }

    #[test]
    fn smo_satisfies_the_equality_constraint() {
        let (x, labels) = blobs(30, 1.0, 1);
        let y = signs(&labels);
        let m = RbfSvm::fit(&x, &y, 0.5, 1.0);
        let total: f64 = m.coef.iter().sum();
        assert!(total.abs() < 1e-9);
        assert!(m.coef.iter().all(|c| c.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn separable_blobs_rank_perfectly() {
        let (x, y) = blobs(100, 4.0, 2);
        let svm = FeatureSvm::fit(&x, &y, None, &HyperGrid::default(), 7).unwrap();
        let scores: Vec<f64> = x.iter().map(|r| svm.decision(r).unwrap()).collect();
        assert_eq!(deer_of(&scores, &y).unwrap(), 0.0);
        let again = FeatureSvm::fit(&x, &y, None, &HyperGrid::default(), 7).unwrap();
        assert_eq!(svm, again);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![Label::Genuine, Label::Genuine];
        assert!(matches!(FeatureSvm::fit(&x, &y, None, &HyperGrid::default(), 0), Err(Error::SingleClass(_))));
    }

    #[test]
    fn constant_feature_keeps_unit_scale() {
        let s = Standardizer::fit(&[vec![2.0, 1.0], vec![2.0, 3.0]]);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.apply(&[2.0, 2.0]), vec![0.0, 0.0]);
    }
}
