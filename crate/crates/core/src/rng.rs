//! Counter-based uniform draws.
//!
//! A draw is a pure function of `(seed, counter)`: the ChaCha8 keystream for
//! `seed`, read at word position `2 * counter`. Sequential use through
//! [`RngStream::next_uniform`] and random access through [`uniform_at`]
//! therefore agree.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The uniform in `[0, 1)` at position `counter` of stream `seed`.
pub fn uniform_at(seed: u64, counter: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(u128::from(counter) * 2);
    to_unit(rng.next_u64())
}

fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(u128::from(counter) * 2);
        Self { seed, counter, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Returns the draw at the current counter and advances it.
    pub fn next_uniform(&mut self) -> f64 {
        self.counter += 1;
        to_unit(self.rng.next_u64())
    }
}

/// Supplier of the uniforms that decide which branches (or heads) survive.
///
/// `head` is `None` for a whole-branch draw and `Some(j)` for head `j` of the
/// branch.
pub trait UniformSource {
    fn draw(&mut self, branch: usize, head: Option<usize>) -> f64;
}

impl UniformSource for RngStream {
    fn draw(&mut self, _branch: usize, _head: Option<usize>) -> f64 {
        self.next_uniform()
    }
}

impl<S: UniformSource + ?Sized> UniformSource for &mut S {
    fn draw(&mut self, branch: usize, head: Option<usize>) -> f64 {
        (**self).draw(branch, head)
    }
}

/// Returns the same value for every draw. `Fixed(0.0)` drops everything when
/// the drop rate is positive.
#[derive(Clone, Copy, Debug)]
pub struct Fixed(pub f64);

impl UniformSource for Fixed {
    fn draw(&mut self, _branch: usize, _head: Option<usize>) -> f64 {
        self.0
    }
}

/// Serves every head of a branch with the branch's own draw, so all heads in
/// a branch share one decision. Each branch is drawn from `S` once.
pub struct BranchTied<S> {
    inner: S,
    cache: Vec<Option<f64>>,
}

impl<S: UniformSource> BranchTied<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            cache: Vec::new(),
        }
    }
}

impl<S: UniformSource> UniformSource for BranchTied<S> {
    fn draw(&mut self, branch: usize, _head: Option<usize>) -> f64 {
        if self.cache.len() <= branch {
            self.cache.resize(branch + 1, None);
        }
        if let Some(u) = self.cache[branch] {
            return u;
        }
        let u = self.inner.draw(branch, None);
        self.cache[branch] = Some(u);
        u
    }
}

/// Replays a fixed table of draws indexed by `(branch, head)`; `head = None`
/// maps to the branch's first entry.
#[derive(Clone, Debug)]
pub struct Replay {
    pub table: Vec<Vec<f64>>,
}

impl UniformSource for Replay {
    fn draw(&mut self, branch: usize, head: Option<usize>) -> f64 {
        self.table[branch][head.unwrap_or(0)]
    }
}
