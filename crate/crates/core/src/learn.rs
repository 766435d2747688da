//! Single-chain reconstruction: WSBT linear-system initializer, projection onto
//! feasible chains and projected ADAM descent, either on the chain entries or
//! on `L^+`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chains::{chain_matrix_from_laplacian, random_chain, Chain, Mode};
use crate::gradients::{chain_gradient, iterate_loss, lift, GradientWorkspace};
use crate::hitting::{mask_weights, Mask};
use crate::linalg::{lstsq, TruncatedSvd};
use crate::{Error, Matrix, Result, Vector};

/// Where the descent starts.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    #[default]
    Random,
    Wsbt,
    Given(Chain),
}

/// Which parameters ADAM moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Descent {
    /// Off-diagonal chain entries, gradient from [`chain_gradient`]; every
    /// iterate is projected.
    #[default]
    Chain,
    /// `L^+` along `e_u (e_v - e_u)^T`, gradient from [`GradientWorkspace`],
    /// with projection through the chain set every `project_every` steps.
    Pseudoinverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub mode: Mode,
    pub descent: Descent,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// [`Descent::Pseudoinverse`] only: project back onto chains every this many
    /// steps; in between the iterate is only retracted to rank `n - 1`.
    pub project_every: usize,
    pub init: Init,
    pub seed: u64,
    /// Stop as soon as the loss is at or below this value.
    pub loss_tol: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Discrete,
            descent: Descent::Chain,
            iterations: 10_000,
            lr: 1e-4,
            beta1: 0.99,
            beta2: 0.999,
            adam_eps: 1e-8,
            project_every: 1,
            init: Init::Random,
            seed: 0,
            loss_tol: 0.0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::param(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::param(format!("adam_eps must be > 0, got {}", self.adam_eps)));
        }
        if self.project_every == 0 {
            return Err(Error::param("project_every must be >= 1"));
        }
        if self.loss_tol.is_nan() || self.loss_tol < 0.0 {
            return Err(Error::param(format!("loss_tol must be >= 0, got {}", self.loss_tol)));
        }
        if let Init::Given(c) = &self.init {
            if c.mode() != self.mode {
                return Err(Error::param(format!("initial chain is {}, config is {}", c.mode(), self.mode)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnReport {
    /// Lowest-loss chain among the feasible iterates.
    pub chain: Chain,
    /// Loss at the start of every iteration.
    pub loss_curve: Vec<f64>,
    pub iterations_run: usize,
    pub best_loss: f64,
    pub warnings: Vec<String>,
}

/// Clamps to the feasible set: discrete rows are clamped at 0 and renormalized
/// (an all-zero row becomes uniform); continuous off-diagonals are clamped at 0
/// and the diagonal is reset to minus the row sum.
pub fn project_chain(raw: &Matrix, mode: Mode) -> Result<Chain> {
    if !raw.is_square() {
        return Err(Error::param(format!("matrix is {}x{}, expected square", raw.nrows(), raw.ncols())));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("cannot project a matrix with non-finite entries"));
    }
    let n = raw.nrows();
    let mut m = raw.map(|x| x.max(0.0));
    match mode {
        Mode::Discrete => {
            for u in 0..n {
                let sum: f64 = m.row(u).sum();
                if sum > 0.0 {
                    m.row_mut(u).scale_mut(1.0 / sum);
                } else {
                    m.row_mut(u).fill(1.0 / n as f64);
                }
            }
        }
        Mode::Continuous => {
            for u in 0..n {
                m[(u, u)] = 0.0;
                let sum: f64 = m.row(u).sum();
                m[(u, u)] = -sum;
            }
        }
    }
    Chain::new(mode, m)
}

/// Unprojected WSBT solution, one least-squares system per row:
/// `sum_w M_uw H_wv = H_uv - 1` (discrete) or `sum_w K_uw H_wv = -1`
/// (continuous) for `v != u`, together with the row-sum constraint. Warnings
/// name rows whose system was rank deficient.
pub fn wsbt_raw(h: &Matrix, mode: Mode) -> Result<(Matrix, Vec<String>)> {
    if !h.is_square() {
        return Err(Error::param(format!("hitting-time matrix is {}x{}, expected square", h.nrows(), h.ncols())));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("hitting-time matrix has non-finite entries"));
    }
    let n = h.nrows();
    let mut out = Matrix::zeros(n, n);
    let mut warnings = Vec::new();
    for u in 0..n {
        let mut a = Matrix::zeros(n, n);
        let mut b = Vector::zeros(n);
        let mut row = 0;
        for v in (0..n).filter(|&v| v != u) {
            for w in 0..n {
                a[(row, w)] = h[(w, v)];
            }
            b[row] = match mode {
                Mode::Discrete => h[(u, v)] - 1.0,
                Mode::Continuous => -1.0,
            };
            row += 1;
        }
        a.row_mut(row).fill(1.0);
        b[row] = match mode {
            Mode::Discrete => 1.0,
            Mode::Continuous => 0.0,
        };
        let (x, rank) = lstsq(&a, &b)?;
        if rank < n {
            warnings.push(format!("WSBT system for row {u} has rank {rank} < {n}; used minimum-norm solution"));
        }
        out.set_row(u, &x.transpose());
    }
    Ok((out, warnings))
}

/// WSBT reconstruction projected onto feasible chains. Needs every entry of
/// `h`; fill unobserved entries first (see [`crate::hitting::censor_missing`]).
pub fn wsbt_init(h: &Matrix, mask: &Mask, mode: Mode) -> Result<(Chain, Vec<String>)> {
    if mask.shape() != h.shape() {
        return Err(Error::param("mask and hitting-time matrix differ in shape"));
    }
    if mask.iter().any(|&m| !m) {
        return Err(Error::param("WSBT needs a complete hitting-time matrix; fill unobserved entries first"));
    }
    let (raw, warnings) = wsbt_raw(h, mode)?;
    Ok((project_chain(&raw, mode)?, warnings))
}

struct Adam {
    m: Matrix,
    v: Matrix,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: Matrix::zeros(n, n), v: Matrix::zeros(n, n), t: 0 }
    }

    fn step(&mut self, g: &Matrix, cfg: &LearnConfig) -> Matrix {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        self.m.zip_apply(g, |m, g| *m = b1 * *m + (1.0 - b1) * g);
        self.v.zip_apply(g, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
        let c1 = 1.0 - libm::pow(b1, self.t as f64);
        let c2 = 1.0 - libm::pow(b2, self.t as f64);
        self.m.zip_map(&self.v, |m, v| cfg.lr * (m / c1) / (libm::sqrt(v / c2) + cfg.adam_eps))
    }
}

fn initial_chain(target: &Matrix, mask: &Mask, cfg: &LearnConfig, warnings: &mut Vec<String>) -> Result<Chain> {
    let n = target.nrows();
    match &cfg.init {
        Init::Given(c) => {
            if c.n() != n {
                return Err(Error::Dimension { expected: n, found: c.n() });
            }
            Ok(c.clone())
        }
        Init::Random => random_chain(cfg.mode, n, &mut ChaCha8Rng::seed_from_u64(cfg.seed)),
        Init::Wsbt => {
            let mut h = target.clone();
            if mask.iter().any(|&m| !m) {
                let fill = (0..n * n).filter(|&k| mask[k]).map(|k| target[k]).fold(0.0, f64::max);
                warnings.push(format!("WSBT init: unobserved entries filled with {fill}"));
                for k in 0..n * n {
                    if !mask[k] {
                        h[k] = fill;
                    }
                }
            }
            let (raw, w) = wsbt_raw(&h, cfg.mode)?;
            warnings.extend(w);
            project_chain(&raw, cfg.mode)
        }
    }
}

/// Iterate after a gradient step. Projection maps through the chain set and
/// back to an exact `(L, L^+)` pair; otherwise the iterate is only retracted
/// to rank `n - 1`.
fn advance(x: &Matrix, step: &Matrix, project: bool, mode: Mode) -> Result<(Matrix, Matrix, Option<Chain>)> {
    let n = x.nrows();
    let moved = x - lift(step);
    let svd = TruncatedSvd::new(&moved, n.saturating_sub(1))?;
    if project {
        let raw = chain_matrix_from_laplacian(mode, &svd.pseudoinverse());
        let chain = project_chain(&raw, mode)?;
        let (l, lp) = chain.laplacian_pair()?;
        Ok((lp.into_matrix(), l.matrix().clone(), Some(chain)))
    } else {
        Ok((svd.reconstruct(), svd.pseudoinverse(), None))
    }
}

/// Projected ADAM descent on the masked hitting-time loss. Unobserved pairs
/// (mask false) carry zero weight.
pub fn learn_single(target: &Matrix, mask: &Mask, config: &LearnConfig) -> Result<LearnReport> {
    config.validate()?;
    let n = target.nrows();
    if !target.is_square() || mask.shape() != (n, n) {
        return Err(Error::param("target and mask must both be n x n"));
    }
    if target.iter().zip(mask.iter()).any(|(h, &m)| m && !h.is_finite()) {
        return Err(Error::param("observed hitting times must be finite"));
    }
    let weights = mask_weights(mask);
    let mut warnings = Vec::new();
    let chain = initial_chain(target, mask, config, &mut warnings)?;
    if chain.mode() != config.mode {
        return Err(Error::param("initial chain mode differs from config mode"));
    }
    match config.descent {
        Descent::Chain => descend_chain(chain, target, &weights, config, warnings),
        Descent::Pseudoinverse => descend_pseudoinverse(chain, target, &weights, config, warnings),
    }
}

fn descend_chain(
    mut chain: Chain,
    target: &Matrix,
    weights: &Matrix,
    config: &LearnConfig,
    mut warnings: Vec<String>,
) -> Result<LearnReport> {
    let n = chain.n();
    let mut best_loss = f64::INFINITY;
    let mut best = chain.clone();
    let mut loss_curve = Vec::with_capacity(config.iterations);
    let mut adam = Adam::new(n);
    let mut previous: Option<(Chain, Matrix)> = None;
    let mut retried = false;

    let mut it = 0;
    while it < config.iterations {
        let cg = match chain_gradient(&chain, target, weights) {
            Ok(cg) => cg,
            Err(Error::Numeric(msg)) => match previous.take() {
                Some((pc, step)) if !retried => {
                    retried = true;
                    warnings.push(format!("iteration {it}: {msg}; retrying with half step"));
                    chain = project_chain(&(pc.matrix() - lift(&(step * 0.5))), config.mode)?;
                    continue;
                }
                _ => {
                    warnings.push(format!("iteration {it}: {msg}; stopping"));
                    break;
                }
            },
            Err(e) => return Err(e),
        };
        retried = false;
        loss_curve.push(cg.loss);
        if cg.loss < best_loss {
            best_loss = cg.loss;
            best = chain.clone();
        }
        it += 1;
        if cg.loss <= config.loss_tol {
            break;
        }
        let step = adam.step(&cg.gradient, config);
        let next = project_chain(&(chain.matrix() - lift(&step)), config.mode)?;
        previous = Some((core::mem::replace(&mut chain, next), step));
    }

    if it == config.iterations && loss_curve.last().is_some_and(|&v| v > config.loss_tol) {
        if let Ok(cg) = chain_gradient(&chain, target, weights) {
            if cg.loss < best_loss {
                best_loss = cg.loss;
                best = chain;
            }
        }
    }
    Ok(LearnReport { chain: best, iterations_run: loss_curve.len(), loss_curve, best_loss, warnings })
}

fn descend_pseudoinverse(
    mut chain: Chain,
    target: &Matrix,
    weights: &Matrix,
    config: &LearnConfig,
    mut warnings: Vec<String>,
) -> Result<LearnReport> {
    let n = chain.n();

    let (l0, lp0) = chain.laplacian_pair()?;
    let mut x = lp0.into_matrix();
    let mut l = l0.matrix().clone();
    let mut feasible = true;
    let mut best_loss = f64::INFINITY;
    let mut best = chain.clone();
    let mut loss_curve = Vec::with_capacity(config.iterations);
    let mut adam = Adam::new(n);
    // state before the last step, kept for one halved retry
    let mut previous: Option<(Matrix, Matrix, bool, Chain, Matrix)> = None;
    let mut retried = false;

    let mut it = 0;
    while it < config.iterations {
        let ws = match GradientWorkspace::compute(&x, &l, target, weights) {
            Ok(ws) => ws,
            Err(Error::Numeric(msg)) => match previous.take() {
                Some((px, _pl, pf, pc, step)) if !retried => {
                    retried = true;
                    warnings.push(format!("iteration {it}: {msg}; retrying with half step"));
                    let project = pf || (it % config.project_every == 0);
                    let (nx, nl, nc) = advance(&px, &(step * 0.5), project, config.mode)?;
                    x = nx;
                    l = nl;
                    feasible = nc.is_some();
                    chain = nc.unwrap_or(pc);
                    continue;
                }
                _ => {
                    warnings.push(format!("iteration {it}: {msg}; stopping"));
                    break;
                }
            },
            Err(e) => return Err(e),
        };
        retried = false;
        loss_curve.push(ws.loss);
        if feasible && ws.loss < best_loss {
            best_loss = ws.loss;
            best = chain.clone();
        }
        it += 1;
        if ws.loss <= config.loss_tol {
            break;
        }
        let step = adam.step(&ws.gradient, config);
        let project = it % config.project_every == 0;
        let (nx, nl, nc) = advance(&x, &step, project, config.mode)?;
        previous = Some((core::mem::replace(&mut x, nx), core::mem::replace(&mut l, nl), feasible, chain.clone(), step));
        feasible = nc.is_some();
        if let Some(c) = nc {
            chain = c;
        }
    }

    // the iterate produced by the final step has not been scored yet
    if feasible && it == config.iterations && loss_curve.last().is_some_and(|&v| v > config.loss_tol) {
        let loss = iterate_loss(&x, target, weights)?;
        if loss < best_loss {
            best_loss = loss;
            best = chain;
        }
    }
    if best_loss.is_infinite() {
        // nothing feasible was ever scored; report the initial chain
        best_loss = iterate_loss(&x, target, weights).unwrap_or(f64::INFINITY);
    }

    Ok(LearnReport { chain: best, iterations_run: loss_curve.len(), loss_curve, best_loss, warnings })
}
