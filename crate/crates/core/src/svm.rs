//! Multi-class RBF support vector machine: one-vs-one decomposition, each
//! binary dual solved by sequential minimal optimization.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gamma {
    /// `1 / (D * var(X))` over all feature entries.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: Gamma,
    /// Stop when the maximal KKT violation drops below this.
    pub kkt_tolerance: f64,
    /// Cap on SMO updates per binary problem.
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            gamma: Gamma::Scale,
            kkt_tolerance: 1e-3,
            max_iterations: 1_000_000,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        if !(self.kkt_tolerance > 0.0) {
            return Err(Error::InvalidConfig("KKT tolerance must be positive".into()));
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::InvalidConfig(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// `exp(-gamma ||x_i - y_j||^2)`.
pub fn rbf_gram(x: &DMatrix<f64>, y: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| {
        let d2: f64 = x.row(i).iter().zip(y.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        (-gamma * d2).exp()
    })
}

pub fn scale_gamma(x: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let g = 1.0 / (x.ncols() as f64 * var);
    if g.is_finite() && g > 0.0 {
        g
    } else {
        1.0
    }
}

/// Solution of `min ½ aᵀQa − eᵀa` s.t. `0 <= a <= C`, `yᵀa = 0`, with
/// `Q_ij = y_i y_j K_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision function offset: `f(x) = sum_i a_i y_i K(x_i, x) + bias`.
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// SMO with maximal-violating-pair working-set selection. `kernel` is the
/// full Gram matrix, `y` holds ±1.
pub fn solve_binary_dual(kernel: &DMatrix<f64>, y: &[f64], c: f64, tol: f64, max_iterations: usize) -> DualSolution {
    const TAU: f64 = 1e-12;
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[(i, j)];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
            let quad = (kernel[(i, i)] + kernel[(j, j)] + 2.0 * qij).max(TAU);
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
            let quad = (kernel[(i, i)] + kernel[(j, j)] - 2.0 * qij).max(TAU);
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
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    if !converged {
        log::warn!("smo: stopped after {iterations} iterations without reaching tolerance {tol}");
    }

    // Offset from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
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
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };
    DualSolution {
        alpha,
        bias: -rho,
        iterations,
        converged,
    }
}

/// One-vs-one machine separating `classes[positive]` (+1) from
/// `classes[negative]` (-1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub positive: usize,
    pub negative: usize,
    /// Indices of support vectors in the training set.
    pub support_indices: Vec<usize>,
    pub support: DMatrix<f64>,
    /// Dual coefficients `alpha_i` (all in (0, C]).
    pub alpha: Vec<f64>,
    /// `alpha_i * y_i`.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
}

impl BinarySvm {
    fn decision(&self, x: &DMatrix<f64>, gamma: f64) -> Vec<f64> {
        if self.support.nrows() == 0 {
            return vec![self.bias; x.nrows()];
        }
        let k = rbf_gram(x, &self.support, gamma);
        (0..x.nrows())
            .map(|r| k.row(r).iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>() + self.bias)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Sorted class labels; indices refer to this order.
    pub classes: Vec<String>,
    pub gamma: f64,
    pub dim: usize,
    pub machines: Vec<BinarySvm>,
    pub config: SvmConfig,
}

pub fn train_svm(x: &DMatrix<f64>, y: &[String], config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::dims("label count", x.nrows(), y.len()));
    }
    if x.nrows() < 2 {
        return Err(Error::EmptyInput("an SVM needs at least two samples"));
    }
    if let Some(row) = (0..x.nrows()).find(|&r| x.row(r).iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteFeature { row });
    }
    let mut classes: Vec<String> = y.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let labels: Vec<usize> = y.iter().map(|l| classes.binary_search(l).expect("label present")).collect();
    let gamma = match config.gamma {
        Gamma::Scale => scale_gamma(x),
        Gamma::Value(g) => g,
    };
    let gram = rbf_gram(x, x, gamma);

    let pairs: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|a| (a + 1..classes.len()).map(move |b| (a, b)))
        .collect();
    let machines = pairs
        .par_iter()
        .map(|&(a, b)| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a || labels[i] == b).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| if labels[i] == a { 1.0 } else { -1.0 }).collect();
            let k = DMatrix::from_fn(idx.len(), idx.len(), |r, c| gram[(idx[r], idx[c])]);
            let sol = solve_binary_dual(&k, &ys, config.c, config.kkt_tolerance, config.max_iterations);
            let sv: Vec<usize> = (0..idx.len()).filter(|&r| sol.alpha[r] > 0.0).collect();
            BinarySvm {
                positive: a,
                negative: b,
                support_indices: sv.iter().map(|&r| idx[r]).collect(),
                support: x.select_rows(sv.iter().map(|&r| &idx[r])),
                alpha: sv.iter().map(|&r| sol.alpha[r]).collect(),
                coef: sv.iter().map(|&r| sol.alpha[r] * ys[r]).collect(),
                bias: sol.bias,
                converged: sol.converged,
            }
        })
        .collect();
    Ok(SvmModel {
        classes,
        gamma,
        dim: x.ncols(),
        machines,
        config: config.clone(),
    })
}

impl SvmModel {
    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dim {
            return Err(Error::dims("SVM feature width", self.dim, x.ncols()));
        }
        Ok(())
    }

    /// Binary decision values, one column per machine.
    pub fn decision_values(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let cols: Vec<Vec<f64>> = self.machines.iter().map(|m| m.decision(x, self.gamma)).collect();
        Ok(DMatrix::from_fn(x.nrows(), cols.len(), |r, c| cols[c][r]))
    }

    /// One-vs-one vote counts; a zero margin votes for the earlier class.
    pub fn votes(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dv = self.decision_values(x)?;
        let mut votes = DMatrix::zeros(x.nrows(), self.classes.len());
        for (k, m) in self.machines.iter().enumerate() {
            for r in 0..x.nrows() {
                let winner = if dv[(r, k)] >= 0.0 { m.positive } else { m.negative };
                votes[(r, winner)] += 1.0;
            }
        }
        Ok(votes)
    }

    /// Votes plus a tiebreak from squashed margins. The tiebreak of each
    /// class lies strictly within ±0.5 and sums to zero across classes, so
    /// each row still sums to the number of machines.
    pub fn decision_scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dv = self.decision_values(x)?;
        let mut scores = self.votes(x)?;
        let denom = 2.0 * (self.classes.len() - 1) as f64;
        for (k, m) in self.machines.iter().enumerate() {
            for r in 0..x.nrows() {
                let f = dv[(r, k)];
                let squashed = f / (1.0 + f.abs()) / denom;
                scores[(r, m.positive)] += squashed;
                scores[(r, m.negative)] -= squashed;
            }
        }
        Ok(scores)
    }

    pub fn predict_indices(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.decision_scores(x)?))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<String>> {
        Ok(self
            .predict_indices(x)?
            .into_iter()
            .map(|i| self.classes[i].clone())
            .collect())
    }
}

/// Per-row argmax; ties go to the lowest column.
pub fn argmax_rows(m: &DMatrix<f64>) -> Vec<usize> {
    (0..m.nrows())
        .map(|r| {
            let mut best = 0;
            for c in 1..m.ncols() {
                if m[(r, c)] > m[(r, best)] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn xor_is_separable() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let y = labels(&["a", "a", "b", "b"]);
        let cfg = SvmConfig {
            c: 10.0,
            gamma: Gamma::Value(1.0),
            ..Default::default()
        };
        let m = train_svm(&x, &y, &cfg).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
        for mac in &m.machines {
            assert!(mac.alpha.iter().all(|&a| a > 0.0 && a <= cfg.c));
        }
    }

    #[test]
    fn two_points_boundary_is_midway() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 1.0]);
        let y = labels(&["p", "q"]);
        let m = train_svm(&x, &y, &SvmConfig::default()).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
        let mid = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        assert!(m.decision_values(&mid).unwrap()[(0, 0)].abs() < 1e-6);
        // Zero margin: tie goes to the first class.
        assert_eq!(m.predict(&mid).unwrap(), vec!["p".to_string()]);
    }

    #[test]
    fn vote_rows_sum_to_machine_count() {
        let x = DMatrix::from_fn(9, 2, |i, j| (i / 3) as f64 * 3.0 + if j == 0 { 0.1 * (i % 3) as f64 } else { 0.0 });
        let y = labels(&["a", "a", "a", "b", "b", "b", "c", "c", "c"]);
        let m = train_svm(&x, &y, &SvmConfig::default()).unwrap();
        let v = m.votes(&x).unwrap();
        let s = m.decision_scores(&x).unwrap();
        for r in 0..9 {
            assert_eq!(v.row(r).sum(), 3.0);
            assert!((s.row(r).sum() - 3.0).abs() < 1e-12);
        }
        assert_eq!(m.predict(&x).unwrap(), y);
    }

    #[test]
    fn error_paths() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(train_svm(&x, &labels(&["a", "a"]), &SvmConfig::default()), Err(Error::SingleClass)));
        let bad = DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN]);
        assert!(matches!(
            train_svm(&bad, &labels(&["a", "b"]), &SvmConfig::default()),
            Err(Error::NonFiniteFeature { row: 1 })
        ));
        let m = train_svm(&x, &labels(&["a", "b"]), &SvmConfig::default()).unwrap();
        assert!(matches!(m.predict(&DMatrix::zeros(1, 2)), Err(Error::DimensionMismatch { .. })));
    }
}
