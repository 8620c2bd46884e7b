//! Attention and feed-forward layers of the multi-branch Transformer.
//!
//! Parameter containers are generic over the leaf type `P`: `Tensor<T>` for
//! stored weights, [`Var`] once bound to a tape. Every layer op takes its
//! weights as `Var`s so the same code serves training, evaluation and
//! gradient checking.

mod attention;
mod ffn;
mod masks;
mod positions;

pub use attention::{
    drop_head_attn, drop_head_delta, multi_branch_attn, multi_branch_delta, multi_head_attn,
    scaled_dot_attn, AttnMask, MASK_SURROGATE,
};
pub use ffn::{ffn, multi_branch_ffn, multi_branch_ffn_delta, residual_ffn_drop};
pub use masks::{draw_branch_masks, drop_factor, BranchMasks};
pub use positions::sinusoidal_positions;

use crate::error::{MatError, Result};
use crate::tape::Var;

/// Query, key and value projections of one head, each `d × d/M`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<P> {
    pub w_q: P,
    pub w_k: P,
    pub w_v: P,
}

impl<P> HeadParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> HeadParams<Q> {
        HeadParams {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        f(format!("{prefix}.w_q"), &self.w_q);
        f(format!("{prefix}.w_k"), &self.w_k);
        f(format!("{prefix}.w_v"), &self.w_v);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{prefix}.w_q"), &mut self.w_q);
        f(format!("{prefix}.w_k"), &mut self.w_k);
        f(format!("{prefix}.w_v"), &mut self.w_v);
    }
}

/// One branch: a complete multi-head attention layer.
///
/// `w_o` is the optional `d × d` output projection applied after the head
/// concatenation.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchParams<P> {
    pub heads: Vec<HeadParams<P>>,
    pub w_o: Option<P>,
}

impl<P> BranchParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> BranchParams<Q> {
        BranchParams {
            heads: self.heads.iter().map(|h| h.map(f)).collect(),
            w_o: self.w_o.as_ref().map(f),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        for (j, h) in self.heads.iter().enumerate() {
            h.visit(&format!("{prefix}.head.{j}"), f);
        }
        if let Some(w_o) = &self.w_o {
            f(format!("{prefix}.w_o"), w_o);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        for (j, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&format!("{prefix}.head.{j}"), f);
        }
        if let Some(w_o) = &mut self.w_o {
            f(format!("{prefix}.w_o"), w_o);
        }
    }
}

/// Position-wise feed-forward weights `d → d_h → d`.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams<P> {
    pub w1: P,
    pub b1: P,
    pub w2: P,
    pub b2: P,
}

impl<P> FfnParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> FfnParams<Q> {
        FfnParams {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        f(format!("{prefix}.w1"), &self.w1);
        f(format!("{prefix}.b1"), &self.b1);
        f(format!("{prefix}.w2"), &self.w2);
        f(format!("{prefix}.b2"), &self.b2);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.b1"), &mut self.b1);
        f(format!("{prefix}.w2"), &mut self.w2);
        f(format!("{prefix}.b2"), &mut self.b2);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<P> {
    pub gain: P,
    pub bias: P,
}

impl<P> NormParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> NormParams<Q> {
        NormParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        f(format!("{prefix}.gain"), &self.gain);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{prefix}.gain"), &mut self.gain);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Granularity of the keep/drop decision inside a multi-branch layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DropMode {
    /// One draw per branch; all heads of a branch share it.
    #[default]
    Branch,
    /// One independent draw per (branch, head).
    Head,
}

impl DropMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DropMode::Branch => "branch",
            DropMode::Head => "head",
        }
    }
}

impl std::str::FromStr for DropMode {
    type Err = MatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "branch" => Ok(DropMode::Branch),
            "head" => Ok(DropMode::Head),
            other => Err(MatError::config(format!(
                "drop_mode must be `branch` or `head`, got `{other}`"
            ))),
        }
    }
}

/// The `N_a` branches of one multi-branch attention layer plus the
/// drop-branch settings that apply to them.
#[derive(Clone, Copy, Debug)]
pub struct BranchSet<'a> {
    branches: &'a [BranchParams<Var>],
    drop_rate: f64,
    mode: DropMode,
    train: bool,
}

impl<'a> BranchSet<'a> {
    pub fn new(
        branches: &'a [BranchParams<Var>],
        drop_rate: f64,
        mode: DropMode,
        train: bool,
    ) -> Result<Self> {
        let mut errors = Vec::new();
        if branches.is_empty() {
            errors.push("a branch set needs at least one branch".to_string());
        }
        if !(0.0..1.0).contains(&drop_rate) {
            errors.push(format!("drop rate must lie in [0, 1), got {drop_rate}"));
        }
        if let Some(first) = branches.first() {
            if first.heads.is_empty() {
                errors.push("a branch needs at least one head".to_string());
            }
            if branches.iter().any(|b| {
                b.heads.len() != first.heads.len() || b.w_o.is_some() != first.w_o.is_some()
            }) {
                errors.push("branches disagree on head count or output projection".to_string());
            }
        }
        if !errors.is_empty() {
            return Err(MatError::Config(errors));
        }
        Ok(Self {
            branches,
            drop_rate,
            mode,
            train,
        })
    }

    pub fn branches(&self) -> &'a [BranchParams<Var>] {
        self.branches
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn num_heads(&self) -> usize {
        self.branches[0].heads.len()
    }

    pub fn drop_rate(&self) -> f64 {
        self.drop_rate
    }

    pub fn mode(&self) -> DropMode {
        self.mode
    }

    pub fn train(&self) -> bool {
        self.train
    }

    pub fn with_mode(mut self, mode: DropMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_train(mut self, train: bool) -> Self {
        self.train = train;
        self
    }
}
