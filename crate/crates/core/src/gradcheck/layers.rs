//! Gradient checks for every layer family, at random binary64 points.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GradCheckReport, GradChecker};
use crate::error::{MatError, Result};
use crate::layers::{
    drop_head_attn, ffn, multi_branch_attn, multi_branch_ffn, multi_head_attn, residual_ffn_drop,
    scaled_dot_attn, BranchParams, BranchSet, DropMode, FfnParams, HeadParams,
};
use crate::rng::Replay;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerOp {
    Attn,
    MultiHead,
    MultiBranch,
    Ffn,
    FfnDrop,
    MultiBranchFfn,
    DropHead,
    LayerNorm,
}

impl LayerOp {
    pub const ALL: [LayerOp; 8] = [
        LayerOp::Attn,
        LayerOp::MultiHead,
        LayerOp::MultiBranch,
        LayerOp::Ffn,
        LayerOp::FfnDrop,
        LayerOp::MultiBranchFfn,
        LayerOp::DropHead,
        LayerOp::LayerNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerOp::Attn => "attn",
            LayerOp::MultiHead => "multi-head",
            LayerOp::MultiBranch => "multi-branch",
            LayerOp::Ffn => "ffn",
            LayerOp::FfnDrop => "ffn-drop",
            LayerOp::MultiBranchFfn => "multi-branch-ffn",
            LayerOp::DropHead => "drop-head",
            LayerOp::LayerNorm => "layer_norm",
        }
    }
}

impl fmt::Display for LayerOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerOp {
    type Err = MatError;

    fn from_str(s: &str) -> Result<Self> {
        LayerOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| MatError::config(format!("unknown layer op `{s}`")))
    }
}

/// Sizes of the random problems.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckDims {
    pub d: usize,
    pub heads: usize,
    pub branches: usize,
    pub queries: usize,
    pub keys: usize,
    pub drop_rate: f64,
}

impl Default for CheckDims {
    fn default() -> Self {
        Self {
            d: 8,
            heads: 2,
            branches: 2,
            queries: 3,
            keys: 4,
            drop_rate: 0.25,
        }
    }
}

impl CheckDims {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.d == 0 || self.d > 16 {
            errors.push(format!("grad-check needs 1 <= d <= 16 (got {})", self.d));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            errors.push(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if self.branches == 0 || self.queries == 0 || self.keys == 0 {
            errors.push("branches, queries and keys must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            errors.push(format!("rho = {} must lie in [0, 1)", self.drop_rate));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(MatError::Config(errors))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: LayerOp,
    /// Worst relative error over all points.
    pub max_rel_error: f64,
    pub points: usize,
    pub coordinates: usize,
    pub flagged: usize,
}

impl OpCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.flagged == 0 && self.max_rel_error < tol
    }
}

/// Sequential reader over the flat list of checked inputs.
struct Cursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        self.pos += 1;
        self.vars[self.pos - 1]
    }

    fn branch(&mut self, heads: usize) -> BranchParams<Var> {
        BranchParams {
            heads: (0..heads)
                .map(|_| HeadParams {
                    w_q: self.next(),
                    w_k: self.next(),
                    w_v: self.next(),
                })
                .collect(),
            w_o: None,
        }
    }

    fn ffn(&mut self) -> FfnParams<Var> {
        FfnParams {
            w1: self.next(),
            b1: self.next(),
            w2: self.next(),
            b2: self.next(),
        }
    }
}

fn input_shapes(op: LayerOp, k: &CheckDims) -> Vec<Vec<usize>> {
    let (d, dk, dh) = (k.d, k.d / k.heads, 2 * k.d);
    let branch = |n: usize| -> Vec<Vec<usize>> { (0..n * k.heads * 3).map(|_| vec![d, dk]).collect() };
    let ffn = || vec![vec![d, dh], vec![dh], vec![dh, d], vec![d]];
    let mut shapes = match op {
        LayerOp::Attn => return vec![vec![k.queries, dk], vec![k.keys, dk], vec![k.keys, dk]],
        LayerOp::LayerNorm => return vec![vec![k.queries, d], vec![d], vec![d]],
        LayerOp::MultiHead | LayerOp::MultiBranch | LayerOp::DropHead => vec![vec![k.queries, d], vec![k.keys, d]],
        LayerOp::Ffn | LayerOp::FfnDrop | LayerOp::MultiBranchFfn => vec![vec![k.queries, d]],
    };
    match op {
        LayerOp::MultiHead => shapes.extend(branch(1)),
        LayerOp::MultiBranch | LayerOp::DropHead => shapes.extend(branch(k.branches)),
        LayerOp::Ffn | LayerOp::FfnDrop => shapes.extend(ffn()),
        LayerOp::MultiBranchFfn => (0..k.branches).for_each(|_| shapes.extend(ffn())),
        LayerOp::Attn | LayerOp::LayerNorm => {}
    }
    shapes
}

/// Draws chosen so the first branch (or head) is dropped and the rest kept,
/// making both the dropped and the rescaled paths part of the graph.
fn replay_table(k: &CheckDims) -> Replay {
    Replay {
        table: (0..k.branches)
            .map(|i| (0..k.heads).map(|j| if i + j == 0 { 0.0 } else { 0.99 }).collect())
            .collect(),
    }
}

fn apply(op: LayerOp, k: &CheckDims, tape: &mut Tape<f64>, vars: &[Var]) -> Result<Var> {
    let mut c = Cursor { vars, pos: 0 };
    let x = c.next();
    match op {
        LayerOp::Attn => {
            let (kk, v) = (c.next(), c.next());
            scaled_dot_attn(tape, x, kk, v, None)
        }
        LayerOp::LayerNorm => {
            let (g, b) = (c.next(), c.next());
            tape.layer_norm(x, g, b)
        }
        LayerOp::MultiHead => {
            let mem = c.next();
            let b = c.branch(k.heads);
            multi_head_attn(tape, x, mem, mem, &b, None)
        }
        LayerOp::MultiBranch | LayerOp::DropHead => {
            let mem = c.next();
            let branches: Vec<_> = (0..k.branches).map(|_| c.branch(k.heads)).collect();
            let mode = if op == LayerOp::DropHead {
                DropMode::Head
            } else {
                DropMode::Branch
            };
            let set = BranchSet::new(&branches, k.drop_rate, mode, true)?;
            let mut src = replay_table(k);
            if op == LayerOp::DropHead {
                drop_head_attn(tape, x, mem, mem, &set, None, &mut src)
            } else {
                multi_branch_attn(tape, x, mem, mem, &set, None, &mut src)
            }
        }
        LayerOp::Ffn => {
            let w = c.ffn();
            ffn(tape, x, &w)
        }
        LayerOp::FfnDrop => {
            let w = c.ffn();
            // keep the single branch so its rescaled gradient is exercised
            let mut src = Replay {
                table: vec![vec![0.99]],
            };
            residual_ffn_drop(tape, x, &w, k.drop_rate, &mut src, true)
        }
        LayerOp::MultiBranchFfn => {
            let ws: Vec<_> = (0..k.branches).map(|_| c.ffn()).collect();
            let mut src = replay_table(k);
            multi_branch_ffn(tape, x, &ws, k.drop_rate, &mut src, true)
        }
    }
}

/// Checks `op` at one random point. The scalar objective is `Σ out ⊙ R`
/// for a fixed random `R`, so every output coordinate carries a distinct
/// weight.
pub fn check_op_at(op: LayerOp, dims: &CheckDims, seed: u64, checker: &GradChecker) -> Result<GradCheckReport> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs: Vec<Tensor<f64>> = input_shapes(op, dims)
        .into_iter()
        .map(|s| Tensor::from_fn(s, |_| rng.random_range(-1.0..1.0)))
        .collect();
    if op == LayerOp::LayerNorm {
        // a gain away from zero keeps the check sensitive to the x-gradient
        inputs[1] = inputs[1].map(|g| 1.0 + 0.5 * g);
    }
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = apply(op, dims, &mut tape, &vars)?;
        tape.shape(out).to_vec()
    };
    let weights = Tensor::from_fn(out_shape, |_| rng.random_range(-1.0..1.0));
    checker.run(
        |tape, vars| {
            let out = apply(op, dims, tape, vars)?;
            let r = tape.constant(weights.clone());
            let y = tape.mul(out, r)?;
            tape.sum(y)
        },
        &inputs,
    )
}

/// Runs every layer op at `points` random points each.
pub fn check_all_ops(dims: &CheckDims, points: usize, seed: u64, checker: &GradChecker) -> Result<Vec<OpCheck>> {
    LayerOp::ALL
        .iter()
        .enumerate()
        .map(|(k, &op)| {
            let mut row = OpCheck {
                op,
                max_rel_error: 0.0,
                points,
                coordinates: 0,
                flagged: 0,
            };
            for p in 0..points {
                let r = check_op_at(op, dims, seed ^ ((k as u64) << 32 | p as u64), checker)?;
                row.max_rel_error = row.max_rel_error.max(r.max_rel_error);
                row.coordinates += r.coordinates;
                row.flagged += r.flagged.len();
            }
            Ok(row)
        })
        .collect()
}
