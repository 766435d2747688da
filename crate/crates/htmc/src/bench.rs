//! Wall-clock comparison of the analytical and finite-difference gradients.

use std::time::Instant;

use htmc_core::chains::{laplacian_from_pseudoinverse, random_chain, Mode};
use htmc_core::gradients::{fd_gradient_forward, grad_hitting_loss};
use htmc_core::hitting::{chain_hitting_times, mask_weights, Mask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Failure, Result};

pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    /// Seconds per analytical gradient, including recovering `L` from `L^+`.
    pub analytical_s: f64,
    /// Seconds per forward-difference gradient.
    pub numerical_s: f64,
    pub ratio: f64,
}

/// Times `iters` analytical and `numerical_iters` numerical gradients per size
/// at a random discrete iterate against the hitting times of another chain.
pub fn bench_gradients(ns: &[usize], iters: usize, numerical_iters: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if ns.is_empty() {
        return Err(Failure::param("need at least one size"));
    }
    if iters == 0 || numerical_iters == 0 {
        return Err(Failure::param("iteration counts must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ns.iter()
        .map(|&n| {
            if n < 2 {
                return Err(Failure::param(format!("sizes must be >= 2, got {n}")));
            }
            let target = chain_hitting_times(&random_chain(Mode::Discrete, n, &mut rng)?)?.matrix;
            let weights = mask_weights(&Mask::from_fn(n, n, |u, v| u != v));
            let lp = random_chain(Mode::Discrete, n, &mut rng)?.laplacian().pseudoinverse()?.into_matrix();

            let start = Instant::now();
            for _ in 0..iters {
                let l = laplacian_from_pseudoinverse(&lp)?;
                std::hint::black_box(grad_hitting_loss(&lp, &l, &target, &weights)?);
            }
            let analytical_s = start.elapsed().as_secs_f64() / iters as f64;

            let start = Instant::now();
            for _ in 0..numerical_iters {
                std::hint::black_box(fd_gradient_forward(&lp, &target, &weights, FD_STEP)?);
            }
            let numerical_s = start.elapsed().as_secs_f64() / numerical_iters as f64;

            Ok(BenchRow { n, analytical_s, numerical_s, ratio: numerical_s / analytical_s })
        })
        .collect()
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "analytical_s", "numerical_s", "ratio"]).expect("in-memory write");
    for r in rows {
        w.write_record([r.n.to_string(), r.analytical_s.to_string(), r.numerical_s.to_string(), r.ratio.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}
