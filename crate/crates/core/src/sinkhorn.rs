//! Entropic-regularized optimal transport between the words of two sentences.
//!
//! The similarity matrix is treated as a reward: the kernel is
//! `K = exp(S / epsilon)` and the returned plan maximizes transported
//! similarity plus entropy. Plans are M×N with row marginals `1/M` and
//! column marginals `1/N`.
//!
//! `epsilon_entropy` is the single regularization knob. It plays the role of
//! both the regularizer weight and the scale inside the entropy term, which
//! only ever appear as a product.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{Matrix, NumError};

/// Scaling vectors are folded into the kernel once any component leaves
/// `[1/ABSORB_LIMIT, ABSORB_LIMIT]`.
const ABSORB_LIMIT: f64 = 1e150;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SinkhornError {
    #[error("similarity matrix must have at least one row and column, got {0}x{1}")]
    Empty(usize, usize),
    #[error("invalid OT config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in Sinkhorn scaling at iteration {iteration}; use a larger epsilon_entropy (got {epsilon})")]
    NonFinite { iteration: usize, epsilon: f64 },
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtConfig {
    pub epsilon_entropy: f64,
    pub max_iterations: usize,
    pub marginal_tolerance: f64,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            epsilon_entropy: 0.1,
            max_iterations: 500,
            marginal_tolerance: 1e-6,
        }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<(), SinkhornError> {
        if !(self.epsilon_entropy > 0.0 && self.epsilon_entropy.is_finite()) {
            return Err(SinkhornError::InvalidConfig(format!(
                "epsilon_entropy must be positive, got {}",
                self.epsilon_entropy
            )));
        }
        if self.max_iterations == 0 {
            return Err(SinkhornError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.marginal_tolerance > 0.0) {
            return Err(SinkhornError::InvalidConfig(format!(
                "marginal_tolerance must be positive, got {}",
                self.marginal_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub iterations_used: usize,
    /// Max-norm residual over both marginals at exit.
    pub final_marginal_error: f64,
    pub converged: bool,
}

/// Solves the entropic OT problem with Sinkhorn scaling iterations.
///
/// A run that exhausts `max_iterations` still returns its plan, with
/// `converged == false`.
pub fn sinkhorn_solve(similarity: &Matrix, cfg: &OtConfig) -> Result<TransportPlan, SinkhornError> {
    cfg.validate()?;
    let (m, n) = similarity.shape();
    if m == 0 || n == 0 {
        return Err(SinkhornError::Empty(m, n));
    }
    similarity.ensure_finite()?;

    let eps = cfg.epsilon_entropy;
    let row_target = 1.0 / m as f64;
    let col_target = 1.0 / n as f64;

    // Log-kernel centered so every row and then every column peaks at 0.
    // Offsets only rescale u and v, so the fixed point is unchanged.
    let mut log_kernel = similarity.map(|s| s / eps);
    for r in 0..m {
        let row = log_kernel.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|x| *x -= max);
    }
    for c in 0..n {
        let max = (0..m).map(|r| log_kernel[(r, c)]).fold(f64::NEG_INFINITY, f64::max);
        for r in 0..m {
            log_kernel[(r, c)] -= max;
        }
    }

    let mut kernel = log_kernel.map(f64::exp);
    let mut u = vec![1.0; m];
    let mut v = vec![1.0; n];
    let mut kv = mat_vec(&kernel, &v);
    let mut error = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        for (ui, k) in u.iter_mut().zip(&kv) {
            *ui = row_target / k;
        }
        let ktu = mat_t_vec(&kernel, &u);
        for (vj, k) in v.iter_mut().zip(&ktu) {
            *vj = col_target / k;
        }
        if !u.iter().chain(&v).all(|x| x.is_finite() && *x > 0.0) {
            return Err(SinkhornError::NonFinite {
                iteration: iterations,
                epsilon: eps,
            });
        }
        kv = mat_vec(&kernel, &v);
        error = marginal_error(&u, &kv, &v, &ktu, row_target, col_target);
        if error <= cfg.marginal_tolerance {
            break;
        }
        let out_of_range = u
            .iter()
            .chain(&v)
            .any(|&x| !(1.0 / ABSORB_LIMIT..=ABSORB_LIMIT).contains(&x));
        if out_of_range {
            for r in 0..m {
                for c in 0..n {
                    log_kernel[(r, c)] += u[r].ln() + v[c].ln();
                }
            }
            kernel = log_kernel.map(f64::exp);
            u.iter_mut().for_each(|x| *x = 1.0);
            v.iter_mut().for_each(|x| *x = 1.0);
            kv = mat_vec(&kernel, &v);
        }
    }

    let plan = Matrix::from_fn(m, n, |r, c| u[r] * kernel[(r, c)] * v[c]);
    plan.ensure_finite().map_err(|_| SinkhornError::NonFinite {
        iteration: iterations,
        epsilon: eps,
    })?;
    Ok(TransportPlan {
        plan,
        iterations_used: iterations,
        final_marginal_error: error,
        converged: error <= cfg.marginal_tolerance,
    })
}

/// Total transported similarity `sum(plan * similarity)`.
pub fn ot_objective(plan: &Matrix, similarity: &Matrix) -> Result<f64, NumError> {
    plan.ensure_same_shape(similarity)?;
    Ok(plan
        .data()
        .iter()
        .zip(similarity.data())
        .map(|(a, s)| a * s)
        .sum())
}

fn mat_vec(k: &Matrix, v: &[f64]) -> Vec<f64> {
    k.row_iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(k: &Matrix, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; k.cols()];
    for (row, &ui) in k.row_iter().zip(u) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * ui;
        }
    }
    out
}

fn marginal_error(
    u: &[f64],
    kv: &[f64],
    v: &[f64],
    ktu: &[f64],
    row_target: f64,
    col_target: f64,
) -> f64 {
    let rows = u
        .iter()
        .zip(kv)
        .map(|(a, b)| (a * b - row_target).abs());
    let cols = v
        .iter()
        .zip(ktu)
        .map(|(a, b)| (a * b - col_target).abs());
    rows.chain(cols).fold(0.0, f64::max)
}
