//! Chain types, generalized Laplacians and their pseudoinverses, stationary
//! distributions, and the synthetic chain generators.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::linalg::{self, ones};
use crate::{Error, Matrix, Result, Vector};

/// Row-sum tolerance for stochastic and rate matrices.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Entrywise floor applied to `d = 1 - L L^+ 1` before normalizing.
pub const STATIONARY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Discrete,
    Continuous,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Discrete => "discrete",
            Mode::Continuous => "continuous",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(Mode::Discrete),
            "continuous" => Ok(Mode::Continuous),
            other => Err(Error::param(format!("unknown mode '{other}' (expected discrete|continuous)"))),
        }
    }
}

/// A stochastic matrix `M` (discrete) or a rate matrix `K` (continuous).
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    mode: Mode,
    matrix: Matrix,
}

impl Chain {
    /// Validates the mode-specific invariants.
    pub fn new(mode: Mode, matrix: Matrix) -> Result<Self> {
        validate(mode, &matrix)?;
        Ok(Self { mode, matrix })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    /// Total rate out of `u` (continuous) or total off-diagonal mass (discrete).
    pub fn out_rate(&self, u: usize) -> f64 {
        self.matrix
            .row(u)
            .iter()
            .enumerate()
            .filter(|&(v, _)| v != u)
            .map(|(_, x)| *x)
            .sum()
    }

    pub fn laplacian(&self) -> GeneralizedLaplacian {
        to_laplacian(self)
    }

    /// Laplacian together with its pseudoinverse.
    pub fn laplacian_pair(&self) -> Result<(GeneralizedLaplacian, LaplacianPseudoinverse)> {
        let l = self.laplacian();
        let lp = l.pseudoinverse()?;
        Ok((l, lp))
    }

    pub fn stationary(&self) -> Result<StationaryDistribution> {
        let (l, lp) = self.laplacian_pair()?;
        Ok(stationary(l.matrix(), lp.matrix()))
    }
}

fn validate(mode: Mode, m: &Matrix) -> Result<()> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::InvalidChain(format!("matrix is {r}x{c}, expected square")));
    }
    if r == 0 {
        return Err(Error::InvalidChain("chain has no states".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidChain("non-finite entry".into()));
    }
    for u in 0..r {
        let row = m.row(u);
        match mode {
            Mode::Discrete => {
                if let Some(v) = (0..r).find(|&v| row[v] < 0.0) {
                    return Err(Error::InvalidChain(format!("negative probability at ({u}, {v})")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidChain(format!("row {u} sums to {sum}, expected 1")));
                }
            }
            Mode::Continuous => {
                if let Some(v) = (0..r).find(|&v| v != u && row[v] < 0.0) {
                    return Err(Error::InvalidChain(format!("negative rate at ({u}, {v})")));
                }
                let sum: f64 = row.iter().sum();
                if sum.abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidChain(format!("row {u} sums to {sum}, expected 0")));
                }
            }
        }
    }
    Ok(())
}

/// `L = I - M` or `L = -K`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedLaplacian {
    mode: Mode,
    matrix: Matrix,
}

impl GeneralizedLaplacian {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn pseudoinverse(&self) -> Result<LaplacianPseudoinverse> {
        Ok(LaplacianPseudoinverse { mode: self.mode, matrix: linalg::pseudoinverse(&self.matrix)? })
    }

    /// Back to chain space: `M = I - L` or `K = -L`, without validation.
    pub fn to_chain_matrix(&self) -> Matrix {
        chain_matrix_from_laplacian(self.mode, &self.matrix)
    }
}

pub(crate) fn chain_matrix_from_laplacian(mode: Mode, l: &Matrix) -> Matrix {
    match mode {
        Mode::Discrete => Matrix::identity(l.nrows(), l.ncols()) - l,
        Mode::Continuous => -l,
    }
}

/// The pseudoinverse `L^+`. Mid-optimization this is an unconstrained iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPseudoinverse {
    mode: Mode,
    matrix: Matrix,
}

impl LaplacianPseudoinverse {
    pub fn from_matrix(mode: Mode, matrix: Matrix) -> Self {
        Self { mode, matrix }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

pub fn to_laplacian(chain: &Chain) -> GeneralizedLaplacian {
    let n = chain.n();
    let matrix = match chain.mode {
        Mode::Discrete => Matrix::identity(n, n) - &chain.matrix,
        Mode::Continuous => -&chain.matrix,
    };
    GeneralizedLaplacian { mode: chain.mode, matrix }
}

/// Moore–Penrose pseudoinverse with the crate-wide relative cutoff.
pub fn pseudoinverse(l: &Matrix) -> Result<Matrix> {
    linalg::pseudoinverse(l)
}

/// Recovers the Laplacian belonging to an iterate `L^+`: the pseudoinverse of
/// its best rank-`(n-1)` approximation.
///
/// The Laplacian of an irreducible chain has rank `n - 1`; gradient steps leave
/// that rank manifold and a plain pseudoinverse would then blow up along the
/// near-null direction.
pub fn laplacian_from_pseudoinverse(lp: &Matrix) -> Result<Matrix> {
    let n = lp.nrows();
    linalg::pseudoinverse_truncated(lp, n.saturating_sub(1))
}

/// Probability vector `s` with `s^T L = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution(Vector);

impl StationaryDistribution {
    pub fn as_vector(&self) -> &Vector {
        &self.0
    }

    pub fn into_vector(self) -> Vector {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Unnormalized weights `d = max(1 - L L^+ 1, floor)`.
pub(crate) fn stationary_weights(l: &Matrix, lp: &Matrix) -> Vector {
    let n = l.nrows();
    let mut d = ones(n) - l * (lp * ones(n));
    d.apply(|x| *x = x.max(STATIONARY_FLOOR));
    d
}

/// `s = d / ||d||_1` with `d = 1 - L L^+ 1`, floored entrywise at
/// [`STATIONARY_FLOOR`] so that iterates off the Laplacian manifold still give a
/// strictly positive vector.
pub fn stationary(l: &Matrix, lp: &Matrix) -> StationaryDistribution {
    let d = stationary_weights(l, lp);
    let total = d.sum();
    StationaryDistribution(d / total)
}

/// Chains sharing mode and state count, with starting probabilities over
/// `(chain, state)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    chains: Vec<Chain>,
    alpha: Matrix,
}

impl MixtureModel {
    pub fn new(chains: Vec<Chain>, alpha: Matrix) -> Result<Self> {
        let first = chains.first().ok_or_else(|| Error::param("mixture needs at least one chain"))?;
        let (mode, n) = (first.mode(), first.n());
        if chains.iter().any(|c| c.mode() != mode || c.n() != n) {
            return Err(Error::param("all chains in a mixture must share mode and state count"));
        }
        if alpha.shape() != (chains.len(), n) {
            return Err(Error::param(format!(
                "alpha is {}x{}, expected {}x{n}",
                alpha.nrows(),
                alpha.ncols(),
                chains.len()
            )));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::param("alpha entries must be finite and nonnegative"));
        }
        let total = alpha.sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::param(format!("alpha sums to {total}, expected 1")));
        }
        Ok(Self { chains, alpha })
    }

    /// Uniform starting probabilities `1 / (C n)`.
    pub fn uniform(chains: Vec<Chain>) -> Result<Self> {
        let c = chains.len();
        let n = chains.first().map_or(0, Chain::n);
        let alpha = Matrix::from_element(c, n, 1.0 / (c * n).max(1) as f64);
        Self::new(chains, alpha)
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn alpha(&self) -> &Matrix {
        &self.alpha
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n(&self) -> usize {
        self.chains[0].n()
    }

    pub fn mode(&self) -> Mode {
        self.chains[0].mode()
    }

    /// Copy with the chains (and alpha rows) reordered: output chain `i` is input
    /// chain `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let c = self.num_chains();
        let mut seen = alloc::vec![false; c];
        if order.len() != c || order.iter().any(|&i| i >= c || core::mem::replace(&mut seen[i], true)) {
            return Err(Error::param("order must be a permutation of the chain indices"));
        }
        let chains = order.iter().map(|&i| self.chains[i].clone()).collect();
        let mut alpha = Matrix::zeros(c, self.n());
        for (row, &i) in order.iter().enumerate() {
            alpha.set_row(row, &self.alpha.row(i));
        }
        Ok(Self { chains, alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Complete,
    Star,
    Lollipop,
    Grid,
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(GraphKind::Complete),
            "star" => Ok(GraphKind::Star),
            "lollipop" => Ok(GraphKind::Lollipop),
            "grid" => Ok(GraphKind::Grid),
            other => Err(Error::param(format!(
                "unknown graph kind '{other}' (expected complete|star|lollipop|grid)"
            ))),
        }
    }
}

/// Uniform random walk on one of the benchmark graphs.
///
/// Numbering: the star's center is node 0; the lollipop is a clique on
/// `0..n/2` joined by the edge `(n/2 - 1, n/2)` to a path on `n/2..n`; the grid
/// is the 4-neighbour lattice on `sqrt(n) x sqrt(n)` nodes in row-major order.
pub fn graph_chain(kind: GraphKind, n: usize) -> Result<Chain> {
    if n < 2 {
        return Err(Error::param(format!("graph chains need n >= 2, got {n}")));
    }
    let mut adj = Matrix::zeros(n, n);
    let mut link = |a: usize, b: usize| {
        adj[(a, b)] = 1.0;
        adj[(b, a)] = 1.0;
    };
    match kind {
        GraphKind::Complete => {
            for a in 0..n {
                for b in a + 1..n {
                    link(a, b);
                }
            }
        }
        GraphKind::Star => {
            for b in 1..n {
                link(0, b);
            }
        }
        GraphKind::Lollipop => {
            if !n.is_multiple_of(2) {
                return Err(Error::param(format!("lollipop graph needs even n, got {n}")));
            }
            let half = n / 2;
            for a in 0..half {
                for b in a + 1..half {
                    link(a, b);
                }
            }
            for a in half - 1..n - 1 {
                link(a, a + 1);
            }
        }
        GraphKind::Grid => {
            let side = isqrt(n);
            if side * side != n {
                return Err(Error::param(format!("grid graph needs n to be a perfect square, got {n}")));
            }
            for r in 0..side {
                for c in 0..side {
                    let a = r * side + c;
                    if c + 1 < side {
                        link(a, a + 1);
                    }
                    if r + 1 < side {
                        link(a, a + side);
                    }
                }
            }
        }
    }
    for u in 0..n {
        let deg: f64 = adj.row(u).sum();
        adj.row_mut(u).scale_mut(1.0 / deg);
    }
    Chain::new(Mode::Discrete, adj)
}

fn isqrt(n: usize) -> usize {
    let mut r = libm::sqrt(n as f64) as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Complete DAG walk: from `u` move uniformly to a later state, the last state
/// is absorbing.
pub fn dag_chain(n: usize) -> Result<Chain> {
    if n < 2 {
        return Err(Error::param(format!("DAG chains need n >= 2, got {n}")));
    }
    let mut m = Matrix::zeros(n, n);
    for u in 0..n - 1 {
        let p = 1.0 / (n - 1 - u) as f64;
        for v in u + 1..n {
            m[(u, v)] = p;
        }
    }
    m[(n - 1, n - 1)] = 1.0;
    Chain::new(Mode::Discrete, m)
}

/// Random chain with `U[0,1]` weights: rows normalized (discrete) or used as
/// off-diagonal rates (continuous).
pub fn random_chain<R: Rng + ?Sized>(mode: Mode, n: usize, rng: &mut R) -> Result<Chain> {
    if n == 0 {
        return Err(Error::param("random chains need n >= 1"));
    }
    let mut m = Matrix::zeros(n, n);
    match mode {
        Mode::Discrete => {
            for u in 0..n {
                for v in 0..n {
                    m[(u, v)] = rng.random::<f64>();
                }
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
                let mut total = 0.0;
                for v in 0..n {
                    if v != u {
                        let rate = rng.random::<f64>();
                        m[(u, v)] = rate;
                        total += rate;
                    }
                }
                m[(u, u)] = -total;
            }
        }
    }
    Chain::new(mode, m)
}

/// `c` independent random chains with uniform starting probabilities.
pub fn random_mixture<R: Rng + ?Sized>(mode: Mode, c: usize, n: usize, rng: &mut R) -> Result<MixtureModel> {
    if c == 0 {
        return Err(Error::param("mixtures need C >= 1"));
    }
    let chains = (0..c).map(|_| random_chain(mode, n, rng)).collect::<Result<Vec<_>>>()?;
    MixtureModel::uniform(chains)
}
