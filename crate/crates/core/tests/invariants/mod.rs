//! Invariant checks shared by the property suite and the acceptance run.

#![allow(dead_code)]

use htmc_core::chains::{random_chain, random_mixture, Chain, Mode};
use htmc_core::hitting::{chain_hitting_times, exact_hitting_times_oracle};
use htmc_core::learn::project_chain;
use htmc_core::metrics::min_cost_assignment;
use htmc_core::mixture::soft_assign;
use htmc_core::simulate::{sample_mixture_trails, sample_trail_continuous, sample_trail_discrete, Trail, TrailExtent};
use htmc_core::{Matrix, Vector};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), TestCaseError>;

pub fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Discrete), Just(Mode::Continuous)]
}

pub fn chain(mode: Mode, n: usize, seed: u64) -> Chain {
    random_chain(mode, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn max_abs(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).abs().max()
}

/// `s^T L = 0`, `1^T s = 1`, solved directly with one equation swapped for the
/// normalization.
pub fn null_vector_stationary(c: &Chain) -> Vector {
    let n = c.n();
    let mut a = c.laplacian().matrix().transpose();
    let mut b = Vector::zeros(n);
    a.row_mut(n - 1).fill(1.0);
    b[n - 1] = 1.0;
    a.lu().solve(&b).unwrap()
}

pub fn trails(c: &Chain, count: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<Trail> {
    (0..count)
        .map(|_| {
            let start = rng.random_range(0..c.n());
            match c.mode() {
                Mode::Discrete => sample_trail_discrete(c, start, len, rng).unwrap(),
                Mode::Continuous => sample_trail_continuous(c, start, len as f64, rng).unwrap(),
            }
        })
        .collect()
}

pub fn brute_force(cost: &Matrix) -> f64 {
    fn go(cost: &Matrix, row: usize, used: &mut [bool]) -> f64 {
        if row == cost.nrows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..cost.ncols() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[(row, j)] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.ncols()])
}

pub fn chain_is_valid(mode: Mode, n: usize, seed: u64) -> Check {
    let c = chain(mode, n, seed);
    let target = match mode {
        Mode::Discrete => 1.0,
        Mode::Continuous => 0.0,
    };
    for u in 0..n {
        prop_assert!((c.matrix().row(u).sum() - target).abs() <= 1e-9);
        for v in 0..n {
            if u != v || mode == Mode::Discrete {
                prop_assert!(c.matrix()[(u, v)] >= 0.0);
            }
        }
    }
    prop_assert_eq!(Chain::new(mode, c.matrix().clone()).unwrap(), c);
    Ok(())
}

pub fn mixture_and_trails_are_valid(mode: Mode, c: usize, n: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random_mixture(mode, c, n, &mut rng).unwrap();
    prop_assert_eq!(m.alpha().shape(), (c, n));
    prop_assert!(m.alpha().iter().all(|&a| a >= 0.0));
    prop_assert!((m.alpha().sum() - 1.0).abs() <= 1e-9);
    prop_assert!(m.chains().iter().all(|ch| ch.mode() == mode && ch.n() == n));
    let extent = match mode {
        Mode::Discrete => TrailExtent::Steps(12),
        Mode::Continuous => TrailExtent::Horizon(4.0),
    };
    for t in sample_mixture_trails(&m, 6, extent, &mut rng).unwrap() {
        prop_assert!(!t.is_empty());
        prop_assert!(t.states().iter().all(|&s| s < n));
        prop_assert!(t.label().is_some_and(|l| l < c));
        match (mode, t.holds()) {
            (Mode::Discrete, None) => prop_assert_eq!(t.len(), 12),
            (Mode::Continuous, Some(h)) => {
                prop_assert_eq!(h.len(), t.len());
                prop_assert!(h.iter().all(|&x| x > 0.0 && x.is_finite()));
            }
            _ => prop_assert!(false, "holding times do not match the mode"),
        }
    }
    Ok(())
}

pub fn penrose_identities(mode: Mode, n: usize, seed: u64) -> Check {
    let c = chain(mode, n, seed);
    let (l, x) = c.laplacian_pair().unwrap();
    let (l, x) = (l.matrix(), x.matrix());
    let scale = 1.0 + l.abs().max() * x.abs().max();
    prop_assert!(max_abs(&(l * x * l), l) <= 1e-8 * scale);
    prop_assert!(max_abs(&(x * l * x), x) <= 1e-8 * scale * x.abs().max());
    let lx = l * x;
    let xl = x * l;
    prop_assert!(max_abs(&lx, &lx.transpose()) <= 1e-8);
    prop_assert!(max_abs(&xl, &xl.transpose()) <= 1e-8);
    prop_assert!(x.row_sum().abs().max() <= 1e-8 * (1.0 + x.abs().max()));
    prop_assert!((l * Vector::from_element(n, 1.0)).abs().max() <= 1e-12 * (1.0 + l.abs().max()));
    Ok(())
}

pub fn stationary_matches_null_vector(mode: Mode, n: usize, seed: u64) -> Check {
    let c = chain(mode, n, seed);
    let s = c.stationary().unwrap().into_vector();
    prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
    prop_assert!((s - null_vector_stationary(&c)).abs().max() <= 1e-8);
    Ok(())
}

pub fn closed_form_matches_oracle(mode: Mode, n: usize, seed: u64) -> Check {
    let c = chain(mode, n, seed);
    let h = chain_hitting_times(&c).unwrap().matrix;
    prop_assert!(max_abs(&h, &exact_hitting_times_oracle(&c).unwrap()) <= 1e-8 * (1.0 + h.abs().max()));
    for u in 0..n {
        prop_assert_eq!(h[(u, u)], 0.0);
    }
    Ok(())
}

pub fn projection_is_idempotent(mode: Mode, n: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Matrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
    let once = project_chain(&raw, mode).unwrap();
    let twice = project_chain(once.matrix(), mode).unwrap();
    prop_assert!(max_abs(once.matrix(), twice.matrix()) <= 1e-15);
    Ok(())
}

pub fn soft_assignment_rows_sum_to_one(mode: Mode, c: usize, n: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixture = random_mixture(mode, c, n, &mut rng).unwrap();
    let source = random_chain(mode, n, &mut rng).unwrap();
    let data = trails(&source, 8, 20, &mut rng);
    let p = soft_assign(&mixture, &data).unwrap().p;
    prop_assert_eq!(p.shape(), (8, c));
    for x in 0..8 {
        prop_assert!(p.row(x).iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!((p.row(x).sum() - 1.0).abs() <= 1e-12);
    }
    Ok(())
}

pub fn assignment_equals_brute_force(c: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cost = Matrix::from_fn(c, c, |_, _| rng.random_range(0.0..10.0));
    let (assignment, total) = min_cost_assignment(&cost).unwrap();
    let mut seen = assignment.clone();
    seen.sort_unstable();
    prop_assert_eq!(seen, (0..c).collect::<Vec<_>>());
    prop_assert!((total - brute_force(&cost)).abs() <= 1e-9);
    Ok(())
}
