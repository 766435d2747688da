//! ULTRA-MC: EM over trails for mixtures of chains. Each round soft-assigns
//! trails by likelihood, estimates hitting times per chain from the weighted
//! trails and refits every chain by projected descent, warm-started from the
//! previous round.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chains::{random_chain, random_mixture, Chain, MixtureModel, Mode};
use crate::hitting::HittingTimeAccumulator;
use crate::learn::{learn_single, Init, LearnConfig, LearnReport};
use crate::metrics::{mixture_recovery_error, recovery_error};
use crate::simulate::Trail;
use crate::{Error, Matrix, Result};

/// Chains whose total assignment weight falls below this are re-seeded.
pub const EMPTY_CLUSTER_WEIGHT: f64 = 1e-6;

/// Log-probability of a trail under `chain`, ignoring the start state. Discrete:
/// `sum_t log M[x_t][x_{t+1}]`. Continuous: every completed visit adds
/// `log K_uv - h r_u`; the censored last visit adds `-h r_u`. Impossible
/// transitions give `-inf`.
pub fn trail_log_likelihood(chain: &Chain, trail: &Trail) -> Result<f64> {
    if chain.mode() != trail.mode() {
        return Err(Error::param(format!("{} trail under a {} chain", trail.mode(), chain.mode())));
    }
    let n = chain.n();
    let states = trail.states();
    if let Some(&bad) = states.iter().find(|&&x| x >= n) {
        return Err(Error::param(format!("trail visits state {bad}, but n = {n}")));
    }
    let m = chain.matrix();
    let mut total = 0.0;
    match trail.holds() {
        None => {
            for w in states.windows(2) {
                let p = m[(w[0], w[1])];
                if p.is_nan() || p <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                total += libm::log(p);
            }
        }
        Some(holds) => {
            for (t, (&u, &h)) in states.iter().zip(holds).enumerate() {
                total -= h * chain.out_rate(u);
                if let Some(&v) = states.get(t + 1) {
                    let rate = if v == u { 0.0 } else { m[(u, v)] };
                    if rate.is_nan() || rate <= 0.0 {
                        return Ok(f64::NEG_INFINITY);
                    }
                    total += libm::log(rate);
                }
            }
        }
    }
    Ok(total)
}

/// Posterior chain probabilities per trail (`#trails x C`, rows sum to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    pub p: Matrix,
}

impl SoftAssignment {
    /// Mean Shannon entropy (nats) of the rows.
    pub fn entropy(&self) -> f64 {
        let rows = self.p.nrows();
        if rows == 0 {
            return 0.0;
        }
        let total: f64 = self.p.iter().filter(|&&x| x > 0.0).map(|&x| -x * libm::log(x)).sum();
        total / rows as f64
    }
}

/// Softmax over per-chain log-likelihoods, computed with max subtraction. A row
/// that is `-inf` under every chain becomes uniform.
pub fn softmax_row(logs: &[f64]) -> Vec<f64> {
    let c = logs.len();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY || top.is_nan() {
        return alloc::vec![1.0 / c as f64; c];
    }
    let e: Vec<f64> = logs.iter().map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { libm::exp(x - top) }).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

fn trail_logs(mixture: &MixtureModel, trail: &Trail, use_alpha: bool) -> Result<Vec<f64>> {
    let start = trail.states()[0];
    mixture
        .chains()
        .iter()
        .enumerate()
        .map(|(i, chain)| {
            let mut ll = trail_log_likelihood(chain, trail)?;
            if use_alpha {
                let a = mixture.alpha()[(i, start)];
                ll += if a > 0.0 { libm::log(a) } else { f64::NEG_INFINITY };
            }
            Ok(ll)
        })
        .collect()
}

/// Soft assignment from trail likelihoods alone.
pub fn soft_assign(mixture: &MixtureModel, trails: &[Trail]) -> Result<SoftAssignment> {
    soft_assign_with(mixture, trails, false, &Sequential)
}

/// Soft assignment; with `use_alpha` the starting probabilities enter as priors.
pub fn soft_assign_with<E: Executor>(
    mixture: &MixtureModel,
    trails: &[Trail],
    use_alpha: bool,
    exec: &E,
) -> Result<SoftAssignment> {
    let c = mixture.num_chains();
    let rows = exec.map(trails, |_, t| trail_logs(mixture, t, use_alpha).map(|l| softmax_row(&l)));
    let mut p = Matrix::zeros(trails.len(), c);
    for (x, row) in rows.into_iter().enumerate() {
        for (i, v) in row?.into_iter().enumerate() {
            p[(x, i)] = v;
        }
    }
    Ok(SoftAssignment { p })
}

/// Maps a function over a slice; lets callers plug in a thread pool.
pub trait Executor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureConfig {
    pub em_iterations: usize,
    /// Per-chain descent settings for each round; `init` and `mode` are
    /// overridden.
    pub inner: LearnConfig,
    /// Stop once no chain moves by more than this (recovery error between
    /// consecutive rounds).
    pub convergence_tol: f64,
    pub seed: u64,
    /// Include `log alpha` of the start state in the soft assignment.
    pub use_alpha: bool,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            em_iterations: 100,
            inner: LearnConfig { iterations: 2000, ..LearnConfig::default() },
            convergence_tol: 1e-4,
            seed: 0,
            use_alpha: false,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.em_iterations == 0 {
            return Err(Error::param("em_iterations must be >= 1"));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(Error::param(format!("convergence_tol must be >= 0, got {}", self.convergence_tol)));
        }
        LearnConfig { init: Init::Random, ..self.inner.clone() }.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmRound {
    pub round: usize,
    /// Mean entropy of the soft assignment used in this round.
    pub entropy: f64,
    /// Best descent loss per chain; `None` for a re-seeded chain.
    pub losses: Vec<Option<f64>>,
    /// Largest recovery error between a chain and its previous value.
    pub change: f64,
    /// Mixture recovery error against the ground truth, when supplied.
    pub recovery_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub model: MixtureModel,
    pub initial: MixtureModel,
    /// Assignment computed from the final model.
    pub assignment: SoftAssignment,
    pub history: Vec<EmRound>,
    pub warnings: Vec<String>,
}

impl MixtureFit {
    pub fn rounds_run(&self) -> usize {
        self.history.len()
    }
}

fn check_trails(trails: &[Trail], n: usize) -> Result<Mode> {
    let first = trails.first().ok_or_else(|| Error::param("ULTRA-MC needs at least one trail"))?;
    let mode = first.mode();
    for t in trails {
        if t.mode() != mode {
            return Err(Error::param("all trails must share one time mode"));
        }
        if let Some(&bad) = t.states().iter().find(|&&x| x >= n) {
            return Err(Error::param(format!("trail visits state {bad}, but n = {n}")));
        }
    }
    Ok(mode)
}

/// The random mixture EM starts from when no initialization is given.
pub fn random_initial_mixture(mode: Mode, c: usize, n: usize, seed: u64) -> Result<MixtureModel> {
    random_mixture(mode, c, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// ULTRA-MC from a random `c`-chain initialization drawn from `config.seed`.
pub fn ultra_mc(
    trails: &[Trail],
    n: usize,
    c: usize,
    config: &MixtureConfig,
    truth: Option<&MixtureModel>,
) -> Result<MixtureFit> {
    let mode = check_trails(trails, n)?;
    let init = random_initial_mixture(mode, c, n, config.seed)?;
    ultra_mc_with(trails, init, config, truth, &Sequential)
}

/// ULTRA-MC from a given initial mixture; per-trail likelihoods and per-chain
/// refits go through `exec`.
pub fn ultra_mc_with<E: Executor>(
    trails: &[Trail],
    initial: MixtureModel,
    config: &MixtureConfig,
    truth: Option<&MixtureModel>,
    exec: &E,
) -> Result<MixtureFit> {
    config.validate()?;
    let n = initial.n();
    let c = initial.num_chains();
    let mode = check_trails(trails, n)?;
    if initial.mode() != mode {
        return Err(Error::param(format!("initial mixture is {}, trails are {mode}", initial.mode())));
    }
    if let Some(t) = truth {
        if t.num_chains() != c || t.n() != n || t.mode() != mode {
            return Err(Error::param("ground-truth mixture does not match the fitted shape"));
        }
    }

    let mut reseed = ChaCha8Rng::seed_from_u64(config.seed);
    reseed.set_stream(1);
    let mut model = initial.clone();
    let mut history = Vec::new();
    let mut warnings = Vec::new();

    for round in 0..config.em_iterations {
        let assignment = soft_assign_with(&model, trails, config.use_alpha, exec)?;
        let indices: Vec<usize> = (0..c).collect();
        let refits: Vec<Result<Option<LearnReport>>> = exec.map(&indices, |_, &i| {
            let mut acc = HittingTimeAccumulator::new(n);
            let mut total = 0.0;
            for (x, trail) in trails.iter().enumerate() {
                let w = assignment.p[(x, i)] * trail.weight();
                total += w;
                acc.add_weighted(trail, w)?;
            }
            if total < EMPTY_CLUSTER_WEIGHT {
                return Ok(None);
            }
            let est = acc.finish();
            let cfg = LearnConfig { mode, init: Init::Given(model.chains()[i].clone()), ..config.inner.clone() };
            learn_single(est.h(), est.mask(), &cfg).map(Some)
        });

        let mut chains = Vec::with_capacity(c);
        let mut losses = Vec::with_capacity(c);
        for (i, r) in refits.into_iter().enumerate() {
            match r? {
                Some(report) => {
                    warnings.extend(report.warnings.iter().map(|w| format!("round {round}, chain {i}: {w}")));
                    losses.push(Some(report.best_loss));
                    chains.push(report.chain);
                }
                None => {
                    warnings.push(format!("round {round}: chain {i} received no weight; re-seeded at random"));
                    losses.push(None);
                    chains.push(random_chain(mode, n, &mut reseed)?);
                }
            }
        }

        let mut alpha = Matrix::zeros(c, n);
        for (x, trail) in trails.iter().enumerate() {
            let start = trail.states()[0];
            for i in 0..c {
                alpha[(i, start)] += assignment.p[(x, i)] * trail.weight();
            }
        }
        let mass = alpha.sum();
        if mass > 0.0 {
            alpha /= mass;
        } else {
            alpha.fill(1.0 / (c * n) as f64);
        }

        let mut change: f64 = 0.0;
        for (old, new) in model.chains().iter().zip(&chains) {
            change = change.max(recovery_error(old, new)?);
        }
        model = MixtureModel::new(chains, alpha)?;
        let recovery = match truth {
            Some(t) => Some(mixture_recovery_error(&model, t)?.recovery_error),
            None => None,
        };
        history.push(EmRound { round, entropy: assignment.entropy(), losses, change, recovery_error: recovery });
        if change < config.convergence_tol {
            break;
        }
    }

    let assignment = soft_assign_with(&model, trails, config.use_alpha, exec)?;
    Ok(MixtureFit { model, initial, assignment, history, warnings })
}
