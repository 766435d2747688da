//! Hitting times: the closed form in terms of `L^+` and the stationary
//! distribution, a linear-system oracle, estimation from trails, noise models and
//! censoring of unobservable pairs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::chains::{Chain, LaplacianPseudoinverse, StationaryDistribution, STATIONARY_FLOOR};
use crate::simulate::Trail;
use crate::{Error, Matrix, Result, Vector};

/// Boolean matrix marking observed entries.
pub type Mask = DMatrix<bool>;

/// Output of [`exact_hitting_times`].
#[derive(Debug, Clone, PartialEq)]
pub struct HittingTimes {
    pub matrix: Matrix,
    /// Targets whose stationary probability sits at the numerical floor; their
    /// columns are dominated by `1 / s_v` and should not be trusted.
    pub degenerate_targets: Vec<usize>,
}

/// `H_uv = (r_u - r_v) - (L^+_uv - L^+_vv) / s_v` with `r = L^+ 1`; the
/// diagonal is zero. Valid for reversible and non-reversible chains alike.
pub fn hitting_matrix(lp: &Matrix, s: &Vector) -> Matrix {
    let n = lp.nrows();
    let r = lp.column_sum();
    Matrix::from_fn(n, n, |u, v| {
        if u == v {
            0.0
        } else {
            (r[u] - r[v]) - (lp[(u, v)] - lp[(v, v)]) / s[v]
        }
    })
}

/// Hitting times from the pseudoinverse and stationary distribution. The same
/// expression holds for both time modes.
pub fn exact_hitting_times(lp: &LaplacianPseudoinverse, s: &StationaryDistribution) -> HittingTimes {
    let s = s.as_vector();
    let degenerate_targets = (0..s.len()).filter(|&v| s[v] < STATIONARY_FLOOR).collect();
    HittingTimes { matrix: hitting_matrix(lp.matrix(), s), degenerate_targets }
}

/// Hitting times of `chain` through its Laplacian pseudoinverse.
pub fn chain_hitting_times(chain: &Chain) -> Result<HittingTimes> {
    let (l, lp) = chain.laplacian_pair()?;
    let s = crate::chains::stationary(l.matrix(), lp.matrix());
    Ok(exact_hitting_times(&lp, &s))
}

fn without(n: usize, v: usize) -> Vec<usize> {
    (0..n).filter(|&u| u != v).collect()
}

/// Independent route: for every target `v` solve `L_{-v,-v} h = 1` (first-step
/// analysis: `h_u = 1 + sum_w M_uw h_w` for discrete chains,
/// `sum_w K_uw h_w = -1` for rate matrices).
pub fn exact_hitting_times_oracle(chain: &Chain) -> Result<Matrix> {
    let n = chain.n();
    let l = chain.laplacian();
    let l = l.matrix();
    let mut h = Matrix::zeros(n, n);
    for v in 0..n {
        let idx = without(n, v);
        if idx.is_empty() {
            continue;
        }
        let sub = l.select_rows(&idx).select_columns(&idx);
        let x = sub
            .lu()
            .solve(&Vector::from_element(idx.len(), 1.0))
            .ok_or(Error::Reducible { target: v })?;
        if x.iter().any(|t| !t.is_finite()) {
            return Err(Error::Reducible { target: v });
        }
        for (k, &u) in idx.iter().enumerate() {
            h[(u, v)] = x[k];
        }
    }
    Ok(h)
}

/// Expected hitting times conditioned on the target being reached, for chains
/// that need not be irreducible. Pairs whose target is unreachable are left
/// unobserved. For irreducible chains this coincides with the plain hitting
/// times.
pub fn conditional_hitting_times(chain: &Chain) -> Result<HittingTimeEstimate> {
    let n = chain.n();
    let l = chain.laplacian();
    let l = l.matrix();
    let m = chain.matrix();
    let mut est = HittingTimeEstimate::unobserved(n);
    for v in 0..n {
        let reach = reaches(m, v);
        let idx: Vec<usize> = (0..n).filter(|&u| reach[u]).collect();
        if idx.is_empty() {
            continue;
        }
        let sub = l.select_rows(&idx).select_columns(&idx);
        let lu = sub.lu();
        let rhs = Vector::from_iterator(idx.len(), idx.iter().map(|&u| -l[(u, v)]));
        let p = lu.solve(&rhs).ok_or(Error::Reducible { target: v })?;
        let mass = lu.solve(&p).ok_or(Error::Reducible { target: v })?;
        for (k, &u) in idx.iter().enumerate() {
            if p[k] > 0.0 && mass[k].is_finite() {
                est.h[(u, v)] = mass[k] / p[k];
                est.mask[(u, v)] = true;
                est.weight_sum[(u, v)] = p[k];
            }
        }
    }
    Ok(est)
}

/// Hitting times of a possibly reducible chain where `H_wv = fill` is imposed
/// for every state `w` with no path to `v`: for the remaining states the
/// first-step equations `L h = 1` are solved with those entries held fixed.
/// Irreducible chains get their ordinary hitting times.
pub fn filled_hitting_times(chain: &Chain, fill: f64) -> Result<Matrix> {
    if !(fill.is_finite() && fill > 0.0) {
        return Err(Error::param(format!("fill value must be positive, got {fill}")));
    }
    let n = chain.n();
    let l = chain.laplacian();
    let l = l.matrix();
    let mut h = Matrix::zeros(n, n);
    for v in 0..n {
        let reach = reaches(chain.matrix(), v);
        let idx: Vec<usize> = (0..n).filter(|&u| reach[u]).collect();
        for u in (0..n).filter(|&u| u != v && !reach[u]) {
            h[(u, v)] = fill;
        }
        if idx.is_empty() {
            continue;
        }
        let rhs = Vector::from_iterator(
            idx.len(),
            idx.iter().map(|&u| 1.0 - (0..n).filter(|&w| w != v && !reach[w]).map(|w| l[(u, w)] * fill).sum::<f64>()),
        );
        let x = l.select_rows(&idx).select_columns(&idx).lu().solve(&rhs).ok_or(Error::Reducible { target: v })?;
        for (k, &u) in idx.iter().enumerate() {
            h[(u, v)] = x[k];
        }
    }
    Ok(h)
}

/// States other than `v` with a path to `v` that avoids `v`.
fn reaches(m: &Matrix, v: usize) -> Vec<bool> {
    let n = m.nrows();
    let mut reach = vec![false; n];
    let mut stack = vec![v];
    while let Some(w) = stack.pop() {
        for u in 0..n {
            if u != v && u != w && !reach[u] && m[(u, w)] > 0.0 {
                reach[u] = true;
                stack.push(u);
            }
        }
    }
    reach
}

/// Hitting-time matrix with per-entry observation mask and accumulated sample
/// weight.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingTimeEstimate {
    h: Matrix,
    mask: Mask,
    weight_sum: Matrix,
}

impl HittingTimeEstimate {
    pub fn new(h: Matrix, mask: Mask, weight_sum: Matrix) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n || mask.shape() != (n, n) || weight_sum.shape() != (n, n) {
            return Err(Error::param("estimate matrices must all be n x n"));
        }
        for u in 0..n {
            if h[(u, u)] != 0.0 || !mask[(u, u)] {
                return Err(Error::param(format!("diagonal entry {u} must be 0 and observed")));
            }
            for v in 0..n {
                if mask[(u, v)] && !(h[(u, v)] >= 0.0 && h[(u, v)].is_finite()) {
                    return Err(Error::param(format!("observed entry ({u}, {v}) = {} is not a time", h[(u, v)])));
                }
                if weight_sum[(u, v)].is_nan() || weight_sum[(u, v)] < 0.0 {
                    return Err(Error::param(format!("negative weight at ({u}, {v})")));
                }
                if !mask[(u, v)] && weight_sum[(u, v)] != 0.0 {
                    return Err(Error::param(format!("unobserved entry ({u}, {v}) carries weight")));
                }
            }
        }
        Ok(Self { h, mask, weight_sum })
    }

    /// Every pair observed, with unit weight off the diagonal.
    pub fn complete(h: Matrix) -> Result<Self> {
        let n = h.nrows();
        let mut h = h;
        for u in 0..n.min(h.ncols()) {
            h[(u, u)] = 0.0;
        }
        let weight = Matrix::from_fn(n, n, |u, v| if u == v { 0.0 } else { 1.0 });
        Self::new(h, Mask::from_element(n, n, true), weight)
    }

    /// Nothing observed except the diagonal.
    pub fn unobserved(n: usize) -> Self {
        Self {
            h: Matrix::zeros(n, n),
            mask: Mask::from_fn(n, n, |u, v| u == v),
            weight_sum: Matrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn weight_sum(&self) -> &Matrix {
        &self.weight_sum
    }

    /// Loss weights: 1 on observed off-diagonal entries, 0 elsewhere.
    pub fn loss_weights(&self) -> Matrix {
        mask_weights(&self.mask)
    }

    pub fn observed_pairs(&self) -> usize {
        let n = self.n();
        (0..n).flat_map(|u| (0..n).map(move |v| (u, v))).filter(|&(u, v)| u != v && self.mask[(u, v)]).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|m| *m)
    }
}

pub fn mask_weights(mask: &Mask) -> Matrix {
    Matrix::from_fn(mask.nrows(), mask.ncols(), |u, v| if u != v && mask[(u, v)] { 1.0 } else { 0.0 })
}

/// Running sums `T_uv` (weighted elapsed time) and `C_uv` (weight) over trails.
///
/// Accumulators over disjoint trail sets can be merged in any order.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingTimeAccumulator {
    total: Matrix,
    weight: Matrix,
}

impl HittingTimeAccumulator {
    pub fn new(n: usize) -> Self {
        Self { total: Matrix::zeros(n, n), weight: Matrix::zeros(n, n) }
    }

    pub fn n(&self) -> usize {
        self.total.nrows()
    }

    /// Adds one trail using its intrinsic weight.
    pub fn add_trail(&mut self, trail: &Trail) -> Result<()> {
        self.add_weighted(trail, trail.weight())
    }

    /// For every visit `t` of state `u` and every `v != u` occurring at some
    /// `t' >= t`, records `time(t') - time(t)` for the first such `t'`.
    ///
    /// Each state keeps its list of visit indices and a pointer to the first
    /// visit not before the current step; the pointer of the visited state is
    /// advanced once the step has been processed.
    pub fn add_weighted(&mut self, trail: &Trail, weight: f64) -> Result<()> {
        let n = self.n();
        if let Some(&bad) = trail.states().iter().find(|&&x| x >= n) {
            return Err(Error::param(format!("trail visits state {bad}, but n = {n}")));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::param(format!("trail weight must be finite and >= 0, got {weight}")));
        }
        if weight == 0.0 {
            return Ok(());
        }
        let states = trail.states();
        let times = trail.visit_times();
        let mut visits: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (t, &u) in states.iter().enumerate() {
            visits[u].push(t);
        }
        let mut next = vec![0usize; n];
        for (t, &u) in states.iter().enumerate() {
            let now = times[t];
            for v in 0..n {
                if v == u {
                    continue;
                }
                if let Some(&later) = visits[v].get(next[v]) {
                    self.total[(u, v)] += weight * (times[later] - now);
                    self.weight[(u, v)] += weight;
                }
            }
            next[u] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.n() != self.n() {
            return Err(Error::Dimension { expected: self.n(), found: other.n() });
        }
        self.total += &other.total;
        self.weight += &other.weight;
        Ok(())
    }

    pub fn finish(&self) -> HittingTimeEstimate {
        let n = self.n();
        let mut est = HittingTimeEstimate::unobserved(n);
        for u in 0..n {
            for v in 0..n {
                if u != v && self.weight[(u, v)] > 0.0 {
                    est.h[(u, v)] = (self.total[(u, v)] / self.weight[(u, v)]).max(0.0);
                    est.mask[(u, v)] = true;
                    est.weight_sum[(u, v)] = self.weight[(u, v)];
                }
            }
        }
        est
    }
}

/// Weighted average of first-passage samples over all trails.
pub fn estimate_hitting_times(trails: &[Trail], n: usize) -> Result<HittingTimeEstimate> {
    let mut acc = HittingTimeAccumulator::new(n);
    for trail in trails {
        acc.add_trail(trail)?;
    }
    Ok(acc.finish())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// `N(0, sigma^2)` on every off-diagonal entry.
    Homoscedastic { sigma: f64 },
    /// `sigma_uv = 2 H_uv / t_cover`.
    Heteroscedastic { t_cover: f64 },
}

impl NoiseModel {
    pub fn sigma(&self, h_uv: f64) -> f64 {
        match *self {
            NoiseModel::Homoscedastic { sigma } => sigma,
            NoiseModel::Heteroscedastic { t_cover } => 2.0 * h_uv.abs() / t_cover,
        }
    }
}

/// Independent Gaussian noise on the off-diagonal. Negative results are kept.
pub fn add_noise<R: Rng + ?Sized>(h: &Matrix, model: NoiseModel, rng: &mut R) -> Result<Matrix> {
    match model {
        NoiseModel::Homoscedastic { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
            return Err(Error::param(format!("noise sigma must be >= 0, got {sigma}")));
        }
        NoiseModel::Heteroscedastic { t_cover } if !(t_cover > 0.0 && t_cover.is_finite()) => {
            return Err(Error::param(format!("t_cover must be > 0, got {t_cover}")));
        }
        _ => {}
    }
    let n = h.nrows();
    let mut out = h.clone();
    for u in 0..n {
        for v in 0..h.ncols() {
            if u == v {
                continue;
            }
            let sigma = model.sigma(h[(u, v)]);
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).map_err(|e| Error::Numeric(format!("{e}")))?;
                out[(u, v)] += noise.sample(rng);
            }
        }
    }
    Ok(out)
}

/// Fills unobserved entries with `fill_value`; the result is fully observed.
pub fn censor_missing(estimate: &HittingTimeEstimate, fill_value: f64) -> Result<HittingTimeEstimate> {
    if !(fill_value > 0.0 && fill_value.is_finite()) {
        return Err(Error::param(format!("fill value must be > 0, got {fill_value}")));
    }
    let n = estimate.n();
    let mut h = estimate.h.clone();
    for u in 0..n {
        for v in 0..n {
            if !estimate.mask[(u, v)] {
                h[(u, v)] = fill_value;
            }
        }
    }
    Ok(HittingTimeEstimate { h, mask: Mask::from_element(n, n, true), weight_sum: estimate.weight_sum.clone() })
}

/// Largest off-diagonal entry (0 for a single state).
pub fn max_hitting_time(h: &Matrix) -> f64 {
    let n = h.nrows();
    (0..n)
        .flat_map(|u| (0..h.ncols()).map(move |v| (u, v)))
        .filter(|&(u, v)| u != v)
        .map(|(u, v)| h[(u, v)])
        .fold(0.0, f64::max)
}
