//! Epsilon-insensitive support vector regression with a Gaussian kernel,
//! trained by sequential minimal optimization.
//!
//! The dual is solved in the doubled form: variables `0..n` carry the
//! upper-tube multipliers (label +1) and `n..2n` the lower-tube multipliers
//! (label -1). Working pairs are chosen with second-order information and the
//! regression function is `f(x) = sum_i (a_i - a*_i) k(x_i, x) + b`.

use serde::{Deserialize, Serialize};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    /// Gaussian width: `k(x, y) = exp(-|x - y|^2 / (2 scale^2))`.
    pub kernel_scale: f64,
    pub c: f64,
    pub epsilon: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            kernel_scale: (6f64).sqrt() / 4.0,
            c: 1.0,
            epsilon: 0.1,
            tol: 1e-4,
            max_iter: 1_000_000,
        }
    }
}

pub fn gaussian_kernel(a: &[f64], b: &[f64], scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * scale * scale)).exp()
}

/// A fitted regression function, keeping only the support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub kernel_scale: f64,
    pub c: f64,
    pub epsilon: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `a_i - a*_i` for each support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
}

impl SvrModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, &c)| c * gaussian_kernel(sv, x, self.kernel_scale))
            .sum::<f64>()
            + self.bias
    }

    pub fn n_support(&self) -> usize {
        self.coefficients.len()
    }
}

/// Full fit result, including the coefficient of every training row.
#[derive(Debug, Clone)]
pub struct SvrFit {
    pub model: SvrModel,
    /// `a_i - a*_i` per training row, in input order.
    pub dual: Vec<f64>,
}

struct Solver<'a> {
    n: usize,
    kernel: &'a [f64],
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
}

impl Solver<'_> {
    #[inline]
    fn sign(&self, t: usize) -> f64 {
        if t < self.n {
            1.0
        } else {
            -1.0
        }
    }

    /// Signed kernel entry `y_s y_t K(s mod n, t mod n)`.
    #[inline]
    fn q(&self, s: usize, t: usize) -> f64 {
        self.sign(s) * self.sign(t) * self.kernel[(s % self.n) * self.n + t % self.n]
    }

    #[inline]
    fn at_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.c
    }

    #[inline]
    fn at_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    /// Returns the working pair, or `None` once the violation is below `tol`.
    fn select(&self, tol: f64) -> Option<(usize, usize)> {
        let m = 2 * self.n;
        let mut gmax = f64::NEG_INFINITY;
        let mut i = None;
        for t in 0..m {
            if self.sign(t) > 0.0 {
                if !self.at_upper(t) && -self.grad[t] >= gmax {
                    gmax = -self.grad[t];
                    i = Some(t);
                }
            } else if !self.at_lower(t) && self.grad[t] >= gmax {
                gmax = self.grad[t];
                i = Some(t);
            }
        }
        let i = i?;
        let qii = self.q(i, i);
        let yi = self.sign(i);

        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = None;
        let mut best_obj = f64::INFINITY;
        for t in 0..m {
            let qtt = self.q(t, t);
            if self.sign(t) > 0.0 {
                if !self.at_lower(t) {
                    let diff = gmax + self.grad[t];
                    gmax2 = gmax2.max(self.grad[t]);
                    if diff > 0.0 {
                        let quad = qii + qtt - 2.0 * yi * self.q(i, t);
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= best_obj {
                            best_obj = obj;
                            j = Some(t);
                        }
                    }
                }
            } else if !self.at_upper(t) {
                let diff = gmax - self.grad[t];
                gmax2 = gmax2.max(-self.grad[t]);
                if diff > 0.0 {
                    let quad = qii + qtt + 2.0 * yi * self.q(i, t);
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best_obj {
                        best_obj = obj;
                        j = Some(t);
                    }
                }
            }
        }
        if gmax + gmax2 < tol {
            return None;
        }
        j.map(|j| (i, j))
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let qij = self.q(i, j);
        let (qii, qjj) = (self.q(i, i), self.q(j, j));
        let (mut ai, mut aj) = (old_i, old_j);

        if self.sign(i) != self.sign(j) {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }

        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..2 * self.n {
            self.grad[t] += self.q(i, t) * di + self.q(j, t) * dj;
        }
    }

    /// Offset from the free multipliers, or the midpoint of the feasible
    /// interval when none are free.
    fn bias(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut free_sum = 0.0;
        let mut free = 0usize;
        for t in 0..2 * self.n {
            let y = self.sign(t);
            let yg = y * self.grad[t];
            if self.at_upper(t) {
                if y < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(t) {
                if y > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        let rho = if free > 0 {
            free_sum / free as f64
        } else {
            (ub + lb) / 2.0
        };
        -rho
    }
}

/// Row-major Gram matrix of `rows` under the Gaussian kernel.
pub fn gram_matrix(rows: &[Vec<f64>], scale: f64) -> Vec<f64> {
    let n = rows.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = gaussian_kernel(&rows[i], &rows[j], scale);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Fits an epsilon-SVR to `(rows, targets)`.
pub fn fit(rows: &[Vec<f64>], targets: &[f64], params: &SvrParams) -> SvrFit {
    let gram = gram_matrix(rows, params.kernel_scale);
    fit_with_gram(rows, targets, &gram, params)
}

/// As [`fit`], reusing a precomputed Gram matrix for `rows`.
pub fn fit_with_gram(rows: &[Vec<f64>], targets: &[f64], gram: &[f64], params: &SvrParams) -> SvrFit {
    let n = rows.len();
    assert_eq!(n, targets.len(), "one target per row");
    assert_eq!(gram.len(), n * n, "gram matrix must be n x n");
    assert!(params.c > 0.0 && params.epsilon >= 0.0 && params.kernel_scale > 0.0);

    let mut grad = Vec::with_capacity(2 * n);
    grad.extend(targets.iter().map(|z| params.epsilon - z));
    grad.extend(targets.iter().map(|z| params.epsilon + z));
    let mut solver = Solver {
        n,
        kernel: gram,
        c: params.c,
        alpha: vec![0.0; 2 * n],
        grad,
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        match solver.select(params.tol) {
            Some((i, j)) => solver.update(i, j),
            None => {
                converged = true;
                break;
            }
        }
        iterations += 1;
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without reaching tol {}", params.tol);
    }

    let bias = solver.bias();
    let dual: Vec<f64> = (0..n).map(|i| solver.alpha[i] - solver.alpha[i + n]).collect();
    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    for (row, &beta) in rows.iter().zip(&dual) {
        if beta != 0.0 {
            support_vectors.push(row.clone());
            coefficients.push(beta);
        }
    }
    SvrFit {
        model: SvrModel {
            kernel_scale: params.kernel_scale,
            c: params.c,
            epsilon: params.epsilon,
            support_vectors,
            coefficients,
            bias,
            iterations,
            converged,
        },
        dual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_needs_no_support_vectors() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0, 0.5]).collect();
        let fit = fit(&rows, &[0.0; 20], &SvrParams::default());
        assert_eq!(fit.model.n_support(), 0);
        assert_eq!(fit.model.predict(&[0.3, 0.1]), 0.0);
    }

    #[test]
    fn fits_a_smooth_curve_inside_the_tube() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 39.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (3.0 * r[0]).sin()).collect();
        let params = SvrParams {
            kernel_scale: 0.3,
            c: 10.0,
            epsilon: 0.05,
            ..Default::default()
        };
        let fit = fit(&rows, &y, &params);
        assert!(fit.model.converged);
        for (r, t) in rows.iter().zip(&y) {
            assert!((fit.model.predict(r) - t).abs() <= 0.05 + 1e-3);
        }
    }

    #[test]
    fn duals_respect_box_and_equality_constraints() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 7) as f64 / 7.0, (i % 5) as f64 / 5.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] - 2.0 * r[1]).collect();
        let params = SvrParams { c: 0.5, ..Default::default() };
        let fit = fit(&rows, &y, &params);
        assert!(fit.dual.iter().all(|b| b.abs() <= 0.5 + 1e-12));
        assert!(fit.dual.iter().sum::<f64>().abs() < 1e-9);
    }
}
