//! Slow reference computations, written without the library's closed forms.

use htmc_core::chains::{laplacian_from_pseudoinverse, random_chain, Chain, Mode, STATIONARY_FLOOR};
use htmc_core::{Matrix, Vector};
use rand::Rng;

/// For each target `v`, solves `L_{-v,-v} h = 1` (first-step analysis).
pub fn linear_system_hitting_times(c: &Chain) -> Matrix {
    let n = c.n();
    let l = c.laplacian().matrix().clone();
    let mut h = Matrix::zeros(n, n);
    for v in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&u| u != v).collect();
        let a = Matrix::from_fn(n - 1, n - 1, |i, j| l[(keep[i], keep[j])]);
        let x = a.lu().solve(&Vector::from_element(n - 1, 1.0)).expect("irreducible chain");
        for (i, &u) in keep.iter().enumerate() {
            h[(u, v)] = x[i];
        }
    }
    h
}

/// An iterate as the learner sees it after projection: `L^+` of a random chain,
/// with the Laplacian recomputed as the rank-`(n-1)` pseudoinverse of `L^+`.
pub fn random_iterate<R: Rng>(mode: Mode, n: usize, rng: &mut R) -> (Matrix, Matrix) {
    let c = random_chain(mode, n, rng).unwrap();
    let x = c.laplacian().pseudoinverse().unwrap().into_matrix();
    let l = laplacian_from_pseudoinverse(&x).unwrap();
    (x, l)
}

/// Gradient by explicit chain rule: for every direction `e_a (e_b - e_a)^T` the
/// full `n x n` derivative of `H` is formed and contracted with the residual.
/// `O(n^5)` time.
pub fn naive_gradient(x: &Matrix, l: &Matrix, target: &Matrix, w: &Matrix) -> Matrix {
    let n = x.nrows();
    let one = Vector::from_element(n, 1.0);
    let eye = Matrix::identity(n, n);
    let d_raw = &one - l * (x * &one);
    let d = d_raw.map(|v| v.max(STATIONARY_FLOOR));
    let total = d.sum();
    let s = &d / total;
    let r = x * &one;
    let h = Matrix::from_fn(n, n, |u, v| if u == v { 0.0 } else { r[u] - r[v] - (x[(u, v)] - x[(v, v)]) / s[v] });
    let resid = Matrix::from_fn(n, n, |u, v| if u == v { 0.0 } else { w[(u, v)] * w[(u, v)] * (h[(u, v)] - target[(u, v)]) });

    let mut g = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let mut dx = Matrix::zeros(n, n);
            dx[(a, b)] = 1.0;
            dx[(a, a)] = -1.0;
            let dl = -(l * &dx * l) + l * l.transpose() * dx.transpose() * (&eye - x * l)
                + (&eye - l * x) * dx.transpose() * l.transpose() * l;
            let mut dd = -((&dl * x + l * &dx) * &one);
            for k in 0..n {
                if d_raw[k] <= STATIONARY_FLOOR {
                    dd[k] = 0.0;
                }
            }
            let ds = &dd / total - &d * (dd.sum() / (total * total));
            let dr = &dx * &one;
            let mut acc = 0.0;
            for u in 0..n {
                for v in 0..n {
                    if u == v {
                        continue;
                    }
                    let dh = dr[u] - dr[v] - (dx[(u, v)] - dx[(v, v)]) / s[v]
                        + (x[(u, v)] - x[(v, v)]) * ds[v] / (s[v] * s[v]);
                    acc += resid[(u, v)] * dh;
                }
            }
            g[(a, b)] = acc;
        }
    }
    g
}
