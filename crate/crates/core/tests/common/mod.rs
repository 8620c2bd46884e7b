#![allow(dead_code)]

use std::path::PathBuf;

use mat::layers::{BranchParams, FfnParams, HeadParams};
use mat::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

pub fn rand_var(tape: &mut Tape<f64>, rng: &mut ChaCha8Rng, shape: &[usize]) -> Var {
    let t = rand_tensor(rng, shape);
    tape.constant(t)
}

pub fn rand_branch(tape: &mut Tape<f64>, rng: &mut ChaCha8Rng, d: usize, heads: usize) -> BranchParams<Var> {
    let dk = d / heads;
    BranchParams {
        heads: (0..heads)
            .map(|_| HeadParams {
                w_q: rand_var(tape, rng, &[d, dk]),
                w_k: rand_var(tape, rng, &[d, dk]),
                w_v: rand_var(tape, rng, &[d, dk]),
            })
            .collect(),
        w_o: None,
    }
}

pub fn rand_ffn(tape: &mut Tape<f64>, rng: &mut ChaCha8Rng, d: usize, dh: usize) -> FfnParams<Var> {
    FfnParams {
        w1: rand_var(tape, rng, &[d, dh]),
        b1: rand_var(tape, rng, &[dh]),
        w2: rand_var(tape, rng, &[dh, d]),
        b2: rand_var(tape, rng, &[d]),
    }
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// Bit patterns, so `-0.0 != 0.0` and NaNs compare by payload.
pub fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}
