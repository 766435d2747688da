//! Squared hitting-time loss as a function of the Laplacian pseudoinverse, and
//! its analytic gradient.
//!
//! The loss is `l(X) = 1/2 || W o (H(X) - H_target) ||_F^2` where `X = L^+`,
//! `L = X^+` (rank `n - 1`), `s` is the stationary distribution obtained from
//! `d = 1 - L X 1` and `H(X)` is [`crate::hitting::hitting_matrix`].
//!
//! Gradient coordinates are off-diagonal: entry `(u, v)` is the derivative along
//! `e_u (e_v - e_u)^T`, i.e. raising `X_uv` while lowering `X_uu` by the same
//! amount so that row sums of `X` are unchanged. [`lift`] maps a coordinate
//! matrix back to the corresponding update of `X`.
//!
//! Along these directions `X 1` is constant, so the `r_u - r_v` part of the
//! hitting times does not move. What remains, each `O(n^2)` once the `O(n^3)`
//! products `L X`, `L^T z` and friends are in hand:
//!
//! * the explicit dependence on `X` through `X_uv - X_vv`;
//! * the dependence on `1/s`, which enters through `d = 1 - L X 1` and the
//!   derivative of `L = X^+` along the rank-`(n - 1)` manifold
//!   (`dL = -L dX L + L L^T dX^T (I - X L) + (I - L X) dX^T L^T L`).

use alloc::format;

use crate::chains::{laplacian_from_pseudoinverse, Chain, STATIONARY_FLOOR};
use crate::hitting::hitting_matrix;
use crate::linalg::ones;
use crate::{Error, Matrix, Result, Vector};

/// Buffers of one gradient evaluation. Shapes are fixed by `n`.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    /// Learned hitting times `H(X)`.
    pub hitting: Matrix,
    /// `W o W o (H(X) - H_target)`, zero diagonal.
    pub delta: Matrix,
    pub loss: f64,
    /// `r = X 1`.
    pub r: Vector,
    /// Floored `d = 1 - L X 1`.
    pub d: Vector,
    pub s: Vector,
    /// `z = L X 1`.
    pub llp1: Vector,
    /// Sensitivity of the loss to `d`: `d loss = gamma^T dd` (zero where `d` is floored).
    pub gamma: Vector,
    pub gradient: Matrix,
}

fn check_shapes(lp: &Matrix, l: &Matrix, target: &Matrix, weights: &Matrix) -> Result<usize> {
    let n = lp.nrows();
    for (name, m) in [("L^+", lp), ("L", l), ("target", target), ("weights", weights)] {
        if m.shape() != (n, n) {
            return Err(Error::param(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
        }
    }
    Ok(n)
}

struct Forward {
    hitting: Matrix,
    d_raw: Vector,
    d: Vector,
    s: Vector,
}

fn forward(lp: &Matrix, l: &Matrix) -> Forward {
    let n = lp.nrows();
    let d_raw = ones(n) - l * (lp * ones(n));
    let d = d_raw.map(|x| x.max(STATIONARY_FLOOR));
    let s = &d / d.sum();
    let hitting = hitting_matrix(lp, &s);
    Forward { hitting, d_raw, d, s }
}

fn weighted_residual(hitting: &Matrix, target: &Matrix, weights: &Matrix) -> Matrix {
    let n = hitting.nrows();
    Matrix::from_fn(n, n, |u, v| if u == v { 0.0 } else { weights[(u, v)] * (hitting[(u, v)] - target[(u, v)]) })
}

/// `1/2 || W o (H(X) - H_target) ||_F^2`; `+inf` when the learned hitting times
/// are not finite.
pub fn hitting_loss(lp: &Matrix, l: &Matrix, target: &Matrix, weights: &Matrix) -> Result<f64> {
    check_shapes(lp, l, target, weights)?;
    let f = forward(lp, l);
    if f.hitting.iter().any(|x| !x.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let r = weighted_residual(&f.hitting, target, weights);
    let loss = 0.5 * r.norm_squared();
    Ok(if loss.is_finite() { loss } else { f64::INFINITY })
}

/// Loss of an iterate, deriving its Laplacian as the rank-`(n-1)` pseudoinverse.
pub fn iterate_loss(lp: &Matrix, target: &Matrix, weights: &Matrix) -> Result<f64> {
    let l = laplacian_from_pseudoinverse(lp)?;
    hitting_loss(lp, &l, target, weights)
}

impl GradientWorkspace {
    /// Loss and gradient at `lp`, whose Laplacian `l` must equal its rank-`(n-1)`
    /// pseudoinverse. Fails with [`Error::Numeric`] when the learned hitting
    /// times are not finite.
    pub fn compute(lp: &Matrix, l: &Matrix, target: &Matrix, weights: &Matrix) -> Result<Self> {
        let n = check_shapes(lp, l, target, weights)?;
        let Forward { hitting, d_raw, d, s } = forward(lp, l);
        if hitting.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("learned hitting times are not finite".into()));
        }
        let resid = weighted_residual(&hitting, target, weights);
        let loss = 0.5 * resid.norm_squared();
        if !loss.is_finite() {
            return Err(Error::Numeric("hitting-time loss is not finite".into()));
        }
        let delta = resid.component_mul(weights);

        let col = delta.row_sum().transpose(); // Delta^T 1

        // beta_v = sum_u Delta_uv (X_uv - X_vv)
        let beta = Vector::from_fn(n, |v, _| (0..n).map(|u| delta[(u, v)] * (lp[(u, v)] - lp[(v, v)])).sum());
        let kappa: f64 = (0..n).map(|v| beta[v] / d[v]).sum();
        let gamma = Vector::from_fn(n, |k, _| {
            if d_raw[k] > STATIONARY_FLOOR {
                kappa - beta[k] / (s[k] * d[k])
            } else {
                0.0
            }
        });

        let l_lp = l * lp;
        let z = &l_lp * ones(n);
        let q = Matrix::identity(n, n) - &l_lp;
        let lambda = l.tr_mul(&gamma);
        let mu = l.tr_mul(&z);
        let nu = q.tr_mul(&gamma);

        let gradient = Matrix::from_fn(n, n, |a, b| {
            if a == b {
                return 0.0;
            }
            let explicit = delta[(a, b)] / s[b] + col[a] / s[a];
            let stationary = (z[b] - z[a]) * lambda[a] - mu[a] * (nu[b] - nu[a]);
            -explicit - stationary
        });
        if gradient.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("gradient is not finite".into()));
        }

        Ok(Self { hitting, delta, loss, r: lp.column_sum(), d, s, llp1: z, gamma, gradient })
    }
}

/// Analytic gradient of [`hitting_loss`] in the off-diagonal coordinates; the
/// diagonal is zero.
pub fn grad_hitting_loss(lp: &Matrix, l: &Matrix, target: &Matrix, weights: &Matrix) -> Result<Matrix> {
    Ok(GradientWorkspace::compute(lp, l, target, weights)?.gradient)
}

/// `X` update for off-diagonal coordinates `g`: `sum_uv g_uv e_u (e_v - e_u)^T`.
pub fn lift(g: &Matrix) -> Matrix {
    let n = g.nrows();
    let mut out = g.clone();
    for u in 0..n {
        out[(u, u)] = 0.0;
        let row: f64 = out.row(u).sum();
        out[(u, u)] = -row;
    }
    out
}

/// Central differences of [`iterate_loss`] along every `e_u (e_v - e_u)^T`; the
/// Laplacian is re-derived for each perturbed iterate. Costs `2 n (n - 1)` loss
/// evaluations.
pub fn fd_gradient(lp: &Matrix, target: &Matrix, weights: &Matrix, step: f64) -> Result<Matrix> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param(format!("finite-difference step must be > 0, got {step}")));
    }
    let n = lp.nrows();
    let mut g = Matrix::zeros(n, n);
    let mut x = lp.clone();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            x[(a, b)] += step;
            x[(a, a)] -= step;
            let plus = iterate_loss(&x, target, weights)?;
            x[(a, b)] -= 2.0 * step;
            x[(a, a)] += 2.0 * step;
            let minus = iterate_loss(&x, target, weights)?;
            x[(a, b)] = lp[(a, b)];
            x[(a, a)] = lp[(a, a)];
            g[(a, b)] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(g)
}

/// Forward differences, one extra loss evaluation per coordinate. Only used as
/// the cheaper numerical baseline in timing comparisons.
pub fn fd_gradient_forward(lp: &Matrix, target: &Matrix, weights: &Matrix, step: f64) -> Result<Matrix> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param(format!("finite-difference step must be > 0, got {step}")));
    }
    let n = lp.nrows();
    let base = iterate_loss(lp, target, weights)?;
    let mut g = Matrix::zeros(n, n);
    let mut x = lp.clone();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            x[(a, b)] += step;
            x[(a, a)] -= step;
            g[(a, b)] = (iterate_loss(&x, target, weights)? - base) / step;
            x[(a, b)] = lp[(a, b)];
            x[(a, a)] = lp[(a, a)];
        }
    }
    Ok(g)
}

/// Loss and gradient with respect to the chain entries themselves.
#[derive(Debug, Clone)]
pub struct ChainGradient {
    pub hitting: Matrix,
    pub loss: f64,
    /// Entry `(a, b)` is the derivative along `e_a (e_b - e_a)^T` applied to `M`
    /// (or `K`): mass moves from the diagonal to `(a, b)`. Zero diagonal.
    pub gradient: Matrix,
}

/// Same loss as [`hitting_loss`], differentiated through the fundamental matrix
/// `Z = (L + 1 s^T)^-1`, where `H_uv = (Z_vv - Z_uv) / s_v`, `dZ = -Z (dL + 1 ds^T) Z`
/// and `ds^T = -s^T dL Z`. Exact for every feasible chain, so descent on the
/// entries never leaves the chain set except through clamping.
pub fn chain_gradient(chain: &Chain, target: &Matrix, weights: &Matrix) -> Result<ChainGradient> {
    let n = chain.n();
    for (name, m) in [("target", target), ("weights", weights)] {
        if m.shape() != (n, n) {
            return Err(Error::param(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
        }
    }
    let l = chain.laplacian().matrix().clone();
    let s = chain.stationary()?.into_vector();
    let z = (&l + Matrix::from_fn(n, n, |_, v| s[v]))
        .try_inverse()
        .ok_or_else(|| Error::Numeric("fundamental matrix is singular".into()))?;
    let hitting = Matrix::from_fn(n, n, |u, v| if u == v { 0.0 } else { (z[(v, v)] - z[(u, v)]) / s[v] });
    if hitting.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("learned hitting times are not finite".into()));
    }
    let resid = weighted_residual(&hitting, target, weights);
    let loss = 0.5 * resid.norm_squared();
    if !loss.is_finite() {
        return Err(Error::Numeric("hitting-time loss is not finite".into()));
    }
    let delta = resid.component_mul(weights);

    // d loss = <psi, dZ> + phi^T ds
    let col = delta.row_sum();
    let psi = Matrix::from_fn(n, n, |u, v| if u == v { col[v] / s[v] } else { -delta[(u, v)] / s[v] });
    let phi = Vector::from_fn(n, |v, _| -(0..n).map(|u| delta[(u, v)] * hitting[(u, v)]).sum::<f64>() / s[v]);
    let chi = &z * (phi - &z * psi.row_sum().transpose());
    // gradient in L; the chain moves opposite to L
    let grad_l = -(z.transpose() * &psi * z.transpose()) - &s * chi.transpose();
    let gradient = Matrix::from_fn(n, n, |a, b| if a == b { 0.0 } else { grad_l[(a, a)] - grad_l[(a, b)] });
    if gradient.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("gradient is not finite".into()));
    }
    Ok(ChainGradient { hitting, loss, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::{random_chain, Mode};
    use crate::hitting::chain_hitting_times;
    use crate::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn off_diagonal_ones(n: usize) -> Matrix {
        Matrix::from_fn(n, n, |u, v| if u == v { 0.0 } else { 1.0 })
    }

    fn setup(mode: Mode, n: usize, seed: u64) -> (Matrix, Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_chain(mode, n, &mut rng).unwrap();
        let guess = random_chain(mode, n, &mut rng).unwrap();
        let target = chain_hitting_times(&truth).unwrap().matrix;
        let (l, lp) = guess.laplacian_pair().unwrap();
        (lp.into_matrix(), l.matrix().clone(), target)
    }

    fn rel_inf(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).abs().max() / (1.0 + b.abs().max())
    }

    #[test]
    fn loss_examples() {
        let c = Chain::new(Mode::Discrete, Matrix::from_element(2, 2, 0.5)).unwrap();
        let (l, lp) = c.laplacian_pair().unwrap();
        let w = off_diagonal_ones(2);
        let exact = chain_hitting_times(&c).unwrap().matrix;
        assert!(hitting_loss(lp.matrix(), l.matrix(), &exact, &w).unwrap() < 1e-24);
        assert_eq!(hitting_loss(lp.matrix(), l.matrix(), &exact, &Matrix::zeros(2, 2)).unwrap(), 0.0);
        let target = Matrix::from_row_slice(2, 2, &[0.0, 3.0, 2.0, 0.0]);
        let loss = hitting_loss(lp.matrix(), l.matrix(), &target, &w).unwrap();
        assert!((loss - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_chain(Mode::Discrete, 5, &mut rng).unwrap();
        let (l, lp) = c.laplacian_pair().unwrap();
        let target = chain_hitting_times(&c).unwrap().matrix;
        let g = grad_hitting_loss(lp.matrix(), l.matrix(), &target, &off_diagonal_ones(5)).unwrap();
        assert!(g.abs().max() < 1e-9);
        let fd = fd_gradient(lp.matrix(), &target, &off_diagonal_ones(5), 1e-6).unwrap();
        assert!(fd.abs().max() < 1e-6);
    }

    #[test]
    fn matches_finite_differences() {
        for mode in [Mode::Discrete, Mode::Continuous] {
            for seed in 0..3 {
                let (lp, l, target) = setup(mode, 5, seed);
                let w = off_diagonal_ones(5);
                let g = grad_hitting_loss(&lp, &l, &target, &w).unwrap();
                let fd = fd_gradient(&lp, &target, &w, 1e-6).unwrap();
                assert!(rel_inf(&g, &fd) < 1e-5, "{mode} seed {seed}: {}\n{g}\n{fd}", rel_inf(&g, &fd));
            }
        }
    }

    #[test]
    fn weighted_loss_gradient() {
        let (lp, l, target) = setup(Mode::Discrete, 6, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Matrix::from_fn(6, 6, |u, v| if u == v { 0.0 } else { rng.random::<f64>() });
        let g = grad_hitting_loss(&lp, &l, &target, &w).unwrap();
        let fd = fd_gradient(&lp, &target, &w, 1e-6).unwrap();
        assert!(rel_inf(&g, &fd) < 1e-5, "{}\n{g}\n{fd}", rel_inf(&g, &fd));
    }

    #[test]
    fn off_manifold_iterate() {
        // X + 1 r^T with r orthogonal to s keeps rank n - 1 but breaks 1^T X = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_chain(Mode::Discrete, 5, &mut rng).unwrap();
        let target = chain_hitting_times(&truth).unwrap().matrix;
        let guess = random_chain(Mode::Discrete, 5, &mut rng).unwrap();
        let s = guess.stationary().unwrap().into_vector();
        let mut r = Vector::from_fn(5, |_, _| rng.random::<f64>() - 0.5);
        r -= &s * (r.dot(&s) / s.dot(&s));
        let lp = guess.laplacian_pair().unwrap().1.into_matrix() + ones(5) * r.transpose();
        let l = laplacian_from_pseudoinverse(&lp).unwrap();
        assert!((lp.row_sum()).abs().max() > 1e-3);
        let w = off_diagonal_ones(5);
        let g = grad_hitting_loss(&lp, &l, &target, &w).unwrap();
        let fd = fd_gradient(&lp, &target, &w, 1e-6).unwrap();
        assert!(rel_inf(&g, &fd) < 1e-5, "{}", rel_inf(&g, &fd));
    }

    #[test]
    fn lift_preserves_row_sums() {
        let g = Matrix::from_row_slice(2, 2, &[9.0, 1.0, 2.0, 9.0]);
        assert_eq!(lift(&g), Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]));
    }

    #[test]
    fn fd_step_must_be_positive() {
        let (lp, _, target) = setup(Mode::Discrete, 3, 0);
        assert!(fd_gradient(&lp, &target, &off_diagonal_ones(3), 0.0).is_err());
    }

    fn chain_fd(chain: &Chain, target: &Matrix, w: &Matrix, step: f64) -> Matrix {
        let n = chain.n();
        let loss = |m: &Matrix| chain_gradient(&Chain::new(chain.mode(), m.clone()).unwrap(), target, w).unwrap().loss;
        Matrix::from_fn(n, n, |a, b| {
            if a == b {
                return 0.0;
            }
            let mut p = chain.matrix().clone();
            p[(a, b)] += step;
            p[(a, a)] -= step;
            let mut q = chain.matrix().clone();
            q[(a, b)] -= step;
            q[(a, a)] += step;
            (loss(&p) - loss(&q)) / (2.0 * step)
        })
    }

    #[test]
    fn chain_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [Mode::Discrete, Mode::Continuous] {
            for n in [3, 6] {
                let truth = random_chain(mode, n, &mut rng).unwrap();
                let target = chain_hitting_times(&truth).unwrap().matrix;
                // keep entries away from the boundary so +-step stays feasible
                let guess = random_chain(mode, n, &mut rng).unwrap();
                let m = match mode {
                    Mode::Discrete => guess.matrix() * 0.8 + Matrix::from_element(n, n, 0.2 / n as f64),
                    Mode::Continuous => guess.matrix() + Matrix::from_fn(n, n, |u, v| if u == v { -0.1 * (n - 1) as f64 } else { 0.1 }),
                };
                let guess = Chain::new(mode, m).unwrap();
                let w = Matrix::from_fn(n, n, |u, v| if u == v { 0.0 } else { rng.random::<f64>() });
                let cg = chain_gradient(&guess, &target, &w).unwrap();
                let fd = chain_fd(&guess, &target, &w, 1e-6);
                assert!(rel_inf(&cg.gradient, &fd) < 1e-5, "{mode} n={n}: {}", rel_inf(&cg.gradient, &fd));

                let (l, lp) = guess.laplacian_pair().unwrap();
                let loss = hitting_loss(lp.matrix(), l.matrix(), &target, &w).unwrap();
                assert!((cg.loss - loss).abs() <= 1e-8 * (1.0 + loss));
            }
        }
    }

    #[test]
    fn chain_gradient_vanishes_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = random_chain(Mode::Discrete, 4, &mut rng).unwrap();
        let h = chain_hitting_times(&c).unwrap().matrix;
        let cg = chain_gradient(&c, &h, &off_diagonal_ones(4)).unwrap();
        assert!(cg.loss < 1e-20);
        assert!(cg.gradient.abs().max() < 1e-8);
        assert!(chain_gradient(&c, &Matrix::zeros(3, 3), &off_diagonal_ones(4)).is_err());
    }
}
