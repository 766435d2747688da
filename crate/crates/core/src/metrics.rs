//! Total variation, recovery error, optimal chain matching for mixtures,
//! Frobenius error on hitting-time estimates and transition pruning.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::chains::{Chain, MixtureModel, Mode};
use crate::hitting::Mask;
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recovery_error: f64,
    /// Error of each chain of the first mixture against its matched partner.
    pub per_chain_errors: Vec<f64>,
    /// `assignment[i]` is the chain of the second mixture matched to chain `i`.
    pub assignment: Vec<usize>,
    pub frobenius_ht_error: Option<f64>,
}

/// `1/2 sum_v |a_v - b_v|`. Works for arbitrary real rows.
pub fn tv_row(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), found: b.len() });
    }
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

fn row_tv(a: &Matrix, b: &Matrix, u: usize, mode: Mode) -> f64 {
    let n = a.ncols();
    0.5 * (0..n)
        .filter(|&v| mode == Mode::Discrete || v != u)
        .map(|v| (a[(u, v)] - b[(u, v)]).abs())
        .sum::<f64>()
}

/// Mean row total variation. Rate matrices compare off-diagonal rates only.
pub fn recovery_error(a: &Chain, b: &Chain) -> Result<f64> {
    if a.mode() != b.mode() {
        return Err(Error::param(format!("cannot compare a {} chain with a {} chain", a.mode(), b.mode())));
    }
    if a.n() != b.n() {
        return Err(Error::Dimension { expected: a.n(), found: b.n() });
    }
    let n = a.n();
    Ok((0..n).map(|u| row_tv(a.matrix(), b.matrix(), u, a.mode())).sum::<f64>() / n as f64)
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method with
/// potentials, `O(C^3)`). Returns `assignment[row] = column` and the total cost.
pub fn min_cost_assignment(cost: &Matrix) -> Result<(Vec<usize>, f64)> {
    if !cost.is_square() {
        return Err(Error::param("assignment cost matrix must be square"));
    }
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("assignment costs must be finite"));
    }
    let n = cost.nrows();
    // 1-based arrays; index 0 is the virtual column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok((assignment, total))
}

/// Recovery error between mixtures under the best matching of their chains.
pub fn mixture_recovery_error(a: &MixtureModel, b: &MixtureModel) -> Result<EvalReport> {
    if a.num_chains() != b.num_chains() {
        return Err(Error::Dimension { expected: a.num_chains(), found: b.num_chains() });
    }
    let c = a.num_chains();
    let mut cost = Matrix::zeros(c, c);
    for i in 0..c {
        for j in 0..c {
            cost[(i, j)] = recovery_error(&a.chains()[i], &b.chains()[j])?;
        }
    }
    let (assignment, total) = min_cost_assignment(&cost)?;
    let per_chain_errors = assignment.iter().enumerate().map(|(i, &j)| cost[(i, j)]).collect();
    Ok(EvalReport { recovery_error: total / c as f64, per_chain_errors, assignment, frobenius_ht_error: None })
}

/// `sqrt(sum over masked entries of (H_hat - H)^2)`.
pub fn frobenius_error(h_hat: &Matrix, h: &Matrix, mask: &Mask) -> Result<f64> {
    if h_hat.shape() != h.shape() || mask.shape() != h.shape() {
        return Err(Error::param("frobenius_error needs equally shaped inputs"));
    }
    Ok(libm::sqrt(
        h_hat.iter().zip(h.iter()).zip(mask.iter()).filter(|(_, &m)| m).map(|((a, b), _)| (a - b) * (a - b)).sum(),
    ))
}

/// Zeroes every transition at or below `ratio` times its row maximum and
/// renormalizes the rows.
pub fn prune_small_transitions(chain: &Chain, ratio: f64) -> Result<Chain> {
    if chain.mode() != Mode::Discrete {
        return Err(Error::param("pruning applies to discrete chains"));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::param(format!("ratio must lie in [0, 1), got {ratio}")));
    }
    let mut m = chain.matrix().clone();
    for u in 0..chain.n() {
        let threshold = ratio * m.row(u).max();
        let mut row = m.row_mut(u);
        row.apply(|x| {
            if *x <= threshold {
                *x = 0.0
            }
        });
        let sum = row.sum();
        row.scale_mut(1.0 / sum);
    }
    Chain::new(Mode::Discrete, m)
}
