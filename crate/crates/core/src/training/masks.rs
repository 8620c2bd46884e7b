//! Position-addressed drop-branch draws.
//!
//! Every uniform used by a drop mask is addressed by
//! `(step, sublayer, branch, head)` and read from the counter-based stream of
//! the run seed, so replaying any step (for instance after a resume) yields
//! the same masks without replaying the steps before it.

use crate::rng::{uniform_at, UniformSource};

const STEP_BITS: u32 = 40;
const LAYER_BITS: u32 = 10;
const BRANCH_BITS: u32 = 7;
const HEAD_BITS: u32 = 7;

/// Packs a draw coordinate into a stream counter:
/// `step:40 | sublayer:10 | branch:7 | head slot:7`, head slot 0 meaning the
/// whole branch and `j + 1` meaning head `j`.
pub fn encode_draw(step: u64, layer: usize, branch: usize, head: Option<usize>) -> u64 {
    let slot = head.map_or(0, |j| j as u64 + 1);
    assert!(step < 1 << STEP_BITS, "step {step} exceeds the mask schedule range");
    assert!((layer as u64) < 1 << LAYER_BITS, "sublayer index {layer} out of range");
    assert!((branch as u64) < 1 << BRANCH_BITS, "branch index {branch} out of range");
    assert!(slot < 1 << HEAD_BITS, "head index out of range");
    (step << (LAYER_BITS + BRANCH_BITS + HEAD_BITS))
        | ((layer as u64) << (BRANCH_BITS + HEAD_BITS))
        | ((branch as u64) << HEAD_BITS)
        | slot
}

/// The uniform deciding whether `(branch, head)` of `layer` survives at `step`.
pub fn mask_schedule(step: u64, layer: usize, branch: usize, head: Option<usize>, seed: u64) -> f64 {
    uniform_at(seed, encode_draw(step, layer, branch, head))
}

/// [`UniformSource`] for one sublayer at one training step.
#[derive(Clone, Copy, Debug)]
pub struct LayerDraws {
    pub seed: u64,
    pub step: u64,
    pub layer: usize,
}

impl UniformSource for LayerDraws {
    fn draw(&mut self, branch: usize, head: Option<usize>) -> f64 {
        mask_schedule(self.step, self.layer, branch, head, self.seed)
    }
}
