//! Independent loop-level reference implementations used as test oracles.
#![allow(dead_code)]

use cl2cm_core::numkit::Matrix;

pub fn mat(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let l = logsumexp(xs);
    xs.iter().map(|x| (x - l).exp()).collect()
}

pub fn infonce(s: &Matrix, tau: f64) -> f64 {
    let b = s.rows();
    let mut total = 0.0;
    for i in 0..b {
        let row: Vec<f64> = (0..b).map(|j| s[(i, j)] / tau).collect();
        let col: Vec<f64> = (0..b).map(|j| s[(j, i)] / tau).collect();
        total += (s[(i, i)] / tau - logsumexp(&row)) + (s[(i, i)] / tau - logsumexp(&col));
    }
    -total / (2.0 * b as f64)
}

pub fn kd(s_cm: &Matrix, s_cl: &Matrix, tau: f64) -> f64 {
    let b = s_cm.rows();
    let mut total = 0.0;
    for i in 0..b {
        let p = softmax(&s_cm.row(i).iter().map(|x| x / tau).collect::<Vec<_>>());
        let q = softmax(&s_cl.row(i).iter().map(|x| x / tau).collect::<Vec<_>>());
        total += p.iter().zip(&q).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / q).ln()).sum::<f64>();
    }
    total / b as f64
}

/// Pseudo-labels by the keep-above rule with row renormalization and argmax fallback.
pub fn pseudo_labels(plan: &Matrix) -> (Matrix, f64, Vec<usize>) {
    let (m, n) = plan.shape();
    let gamma = plan.data().iter().sum::<f64>() / (m * n) as f64;
    let mut out = Matrix::zeros(m, n);
    let mut fallback = Vec::new();
    for r in 0..m {
        let kept: f64 = (0..n).filter(|&c| plan[(r, c)] > gamma).map(|c| plan[(r, c)]).sum();
        if (0..n).any(|c| plan[(r, c)] > gamma) && kept > 0.0 {
            for c in 0..n {
                if plan[(r, c)] > gamma {
                    out.row_mut(r)[c] = plan[(r, c)] / kept;
                }
            }
        } else {
            let mut best = 0;
            for c in 1..n {
                if plan[(r, c)] > plan[(r, best)] {
                    best = c;
                }
            }
            out.row_mut(r)[best] = 1.0;
            fallback.push(r);
        }
    }
    (out, gamma, fallback)
}

/// Mean over rows of cross-entropy between labels and softmax(similarity).
pub fn word_loss(c: &Matrix, labels: &Matrix) -> f64 {
    let m = c.rows();
    let mut total = 0.0;
    for r in 0..m {
        let p = softmax(c.row(r));
        total -= labels.row(r).iter().zip(&p).map(|(a, p)| a * p.ln()).sum::<f64>();
    }
    total / m as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn maxsim(src: &Matrix, tgt: &Matrix) -> f64 {
    let mut total = 0.0;
    for r in 0..src.rows() {
        total += (0..tgt.rows())
            .map(|t| cosine(src.row(r), tgt.row(t)))
            .fold(f64::NEG_INFINITY, f64::max);
    }
    total / src.rows() as f64
}

/// Rank of `gold` in `row` by sorting (descending score, ascending index).
pub fn rank_by_sort(row: &[f64], gold: usize) -> usize {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx.iter().position(|&i| i == gold).unwrap() + 1
}

/// Heap's algorithm over all permutations of 0..n.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(a.clone());
            return;
        }
        go(k - 1, a, out);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            go(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    go(n, &mut a, &mut out);
    out
}

/// Best total similarity of a uniform permutation plan (mass 1/n per matched pair).
pub fn best_permutation_value(s: &Matrix) -> f64 {
    let n = s.rows();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| s[(i, j)]).sum::<f64>() / n as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Central finite differences of `f` at `x`.
pub fn fd_grad(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.data().len() {
        let mut up = x.clone();
        up.data_mut()[i] += h;
        let mut down = x.clone();
        down.data_mut()[i] -= h;
        out.data_mut()[i] = (f(&up) - f(&down)) / (2.0 * h);
    }
    out
}

pub fn max_rel_err(a: &Matrix, n: &Matrix) -> f64 {
    let diff = a.data().iter().zip(n.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.data().iter().chain(n.data()).map(|x| x.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-12)
}
