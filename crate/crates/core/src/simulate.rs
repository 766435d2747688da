//! Trail generation for single chains and mixtures.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::chains::{Chain, MixtureModel, Mode};
use crate::{Error, Result};

/// An observed realization of a walk.
///
/// Continuous trails carry one holding time per visit; the last one is cut at
/// the observation horizon and is therefore right-censored.
#[derive(Debug, Clone, PartialEq)]
pub struct Trail {
    mode: Mode,
    states: Vec<usize>,
    holds: Option<Vec<f64>>,
    weight: f64,
    label: Option<usize>,
}

impl Trail {
    pub fn discrete(states: Vec<usize>) -> Result<Self> {
        Self::new(Mode::Discrete, states, None, 1.0, None)
    }

    pub fn continuous(states: Vec<usize>, holds: Vec<f64>) -> Result<Self> {
        Self::new(Mode::Continuous, states, Some(holds), 1.0, None)
    }

    pub fn new(
        mode: Mode,
        states: Vec<usize>,
        holds: Option<Vec<f64>>,
        weight: f64,
        label: Option<usize>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::param("trail has no states"));
        }
        check_weight(weight)?;
        match (mode, &holds) {
            (Mode::Discrete, Some(_)) => return Err(Error::param("discrete trails carry no holding times")),
            (Mode::Continuous, None) => return Err(Error::param("continuous trails need holding times")),
            (Mode::Continuous, Some(h)) => {
                if h.len() != states.len() {
                    return Err(Error::param(format!(
                        "{} holding times for {} states",
                        h.len(),
                        states.len()
                    )));
                }
                if let Some(x) = h.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                    return Err(Error::param(format!("holding times must be positive, got {x}")));
                }
            }
            (Mode::Discrete, None) => {}
        }
        Ok(Self { mode, states, holds, weight, label })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn holds(&self) -> Option<&[f64]> {
        self.holds.as_deref()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self> {
        check_weight(weight)?;
        self.weight = weight;
        Ok(self)
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    /// Time at which each visit starts: the index in discrete mode, the sum of
    /// earlier holds in continuous mode.
    pub fn visit_times(&self) -> Vec<f64> {
        match &self.holds {
            None => (0..self.states.len()).map(|t| t as f64).collect(),
            Some(h) => {
                let mut acc = 0.0;
                h.iter()
                    .map(|x| {
                        let start = acc;
                        acc += x;
                        start
                    })
                    .collect()
            }
        }
    }
}

fn check_weight(weight: f64) -> Result<()> {
    if weight.is_finite() && weight >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("trail weight must be finite and >= 0, got {weight}")))
    }
}

/// Trail length for discrete walks, observation horizon for continuous ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrailExtent {
    Steps(usize),
    Horizon(f64),
}

fn draw_weighted<R: Rng + ?Sized>(weights: impl Iterator<Item = (usize, f64)>, total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (v, w) in weights {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = v;
        if target < acc {
            return v;
        }
    }
    // rounding left `target` just past the accumulated mass
    last
}

pub fn sample_trail_discrete<R: Rng + ?Sized>(chain: &Chain, start: usize, length: usize, rng: &mut R) -> Result<Trail> {
    if chain.mode() != Mode::Discrete {
        return Err(Error::param("sample_trail_discrete needs a discrete chain"));
    }
    let n = chain.n();
    if start >= n {
        return Err(Error::param(format!("start state {start} out of range for n = {n}")));
    }
    if length == 0 {
        return Err(Error::param("trail length must be >= 1"));
    }
    let m = chain.matrix();
    let mut states = Vec::with_capacity(length);
    let mut u = start;
    states.push(u);
    while states.len() < length {
        let row = m.row(u);
        let total: f64 = row.iter().sum();
        if total.is_nan() || total <= f64::EPSILON {
            return Err(Error::DeadState { state: u });
        }
        u = draw_weighted(row.iter().copied().enumerate(), total, rng);
        states.push(u);
    }
    Trail::new(Mode::Discrete, states, None, 1.0, None)
}

/// Holding time `Exp(r_u)`, next state proportional to the off-diagonal rates
/// (the law of the minimum of the competing exponentials); the walk is cut at
/// `horizon`. States without outgoing rate are absorbing.
pub fn sample_trail_continuous<R: Rng + ?Sized>(chain: &Chain, start: usize, horizon: f64, rng: &mut R) -> Result<Trail> {
    if chain.mode() != Mode::Continuous {
        return Err(Error::param("sample_trail_continuous needs a continuous chain"));
    }
    let n = chain.n();
    if start >= n {
        return Err(Error::param(format!("start state {start} out of range for n = {n}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::param(format!("horizon must be positive, got {horizon}")));
    }
    let k = chain.matrix();
    let mut states = Vec::new();
    let mut holds = Vec::new();
    let mut elapsed = 0.0;
    let mut u = start;
    loop {
        states.push(u);
        let rate = chain.out_rate(u);
        let remaining = horizon - elapsed;
        if rate.is_nan() || rate <= 0.0 {
            holds.push(remaining);
            break;
        }
        let hold = Exp::new(rate).map_err(|e| Error::Numeric(format!("{e}")))?.sample(rng).max(f64::MIN_POSITIVE);
        if hold >= remaining {
            holds.push(remaining);
            break;
        }
        holds.push(hold);
        elapsed += hold;
        let row = k.row(u);
        u = draw_weighted(row.iter().copied().enumerate().filter(|&(v, _)| v != u), rate, rng);
    }
    Trail::new(Mode::Continuous, states, Some(holds), 1.0, None)
}

/// Per-trail random stream: the same `(base_seed, index)` always yields the same
/// generator, so batches can be split across threads without changing output.
pub fn trail_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

/// One mixture trail on the stream `(base_seed, index)`.
pub fn sample_mixture_trail(mixture: &MixtureModel, extent: TrailExtent, base_seed: u64, index: u64) -> Result<Trail> {
    let mut rng = trail_rng(base_seed, index);
    let alpha = mixture.alpha();
    let n = mixture.n();
    let pick = draw_weighted(
        (0..alpha.nrows()).flat_map(|i| (0..n).map(move |u| (i * n + u, alpha[(i, u)]))),
        alpha.sum(),
        &mut rng,
    );
    let (label, start) = (pick / n, pick % n);
    let chain = &mixture.chains()[label];
    let trail = match (mixture.mode(), extent) {
        (Mode::Discrete, TrailExtent::Steps(len)) => sample_trail_discrete(chain, start, len, &mut rng)?,
        (Mode::Continuous, TrailExtent::Horizon(h)) => sample_trail_continuous(chain, start, h, &mut rng)?,
        (mode, extent) => {
            return Err(Error::param(format!("{extent:?} does not apply to {mode} chains")));
        }
    };
    Ok(trail.with_label(Some(label)))
}

/// Draws a base seed from `rng`; see [`sample_mixture_trail`] for the per-trail
/// stream that makes the batch reproducible.
pub fn mixture_base_seed<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.next_u64()
}

/// `count` independent trails; each draws `(chain, start)` from alpha and
/// records the chain index as its label.
pub fn sample_mixture_trails<R: Rng + ?Sized>(
    mixture: &MixtureModel,
    count: usize,
    extent: TrailExtent,
    rng: &mut R,
) -> Result<Vec<Trail>> {
    if count == 0 {
        return Err(Error::param("trail count must be >= 1"));
    }
    let base = mixture_base_seed(rng);
    (0..count as u64).map(|i| sample_mixture_trail(mixture, extent, base, i)).collect()
}
