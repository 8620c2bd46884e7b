use super::{draw_branch_masks, BranchMasks, BranchParams, BranchSet, DropMode};
use crate::error::{MatError, Result};
use crate::rng::UniformSource;
use crate::tape::{Tape, Var};
use crate::tensor::{sc, Scalar, Tensor};

/// Additive score for a blocked query/key pair.
pub const MASK_SURROGATE: f64 = -1e9;

/// Which key positions each query may attend to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    queries: usize,
    keys: usize,
    blocked: Vec<bool>,
}

impl AttnMask {
    pub fn new(queries: usize, keys: usize, blocked: Vec<bool>) -> Result<Self> {
        if blocked.len() != queries * keys {
            return Err(MatError::Shape {
                op: "attn_mask",
                lhs: vec![queries, keys],
                rhs: vec![blocked.len()],
            });
        }
        Ok(Self {
            queries,
            keys,
            blocked,
        })
    }

    /// Query `i` sees keys `0..=i`.
    pub fn causal(len: usize) -> Self {
        let blocked = (0..len)
            .flat_map(|i| (0..len).map(move |j| j > i))
            .collect();
        Self {
            queries: len,
            keys: len,
            blocked,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.queries, self.keys)
    }

    fn check(&self, tq: usize, tk: usize) -> Result<()> {
        if (tq, tk) != (self.queries, self.keys) {
            return Err(MatError::Shape {
                op: "attn_mask",
                lhs: vec![self.queries, self.keys],
                rhs: vec![tq, tk],
            });
        }
        for (row, chunk) in self.blocked.chunks(self.keys).enumerate() {
            if chunk.iter().all(|&b| b) {
                return Err(MatError::contract(format!(
                    "attention mask blocks every key for query {row}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .blocked
            .iter()
            .map(|&b| if b { sc(MASK_SURROGATE) } else { T::zero() })
            .collect();
        Tensor::new([self.queries, self.keys], data).expect("mask shape")
    }
}

/// `softmax(Q Kᵀ / √d' + mask) V` for `Q: T_q×d'`, `K, V: T×d'`.
pub fn scaled_dot_attn<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttnMask>,
) -> Result<Var> {
    let (qs, ks, vs) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(MatError::Shape {
            op: "scaled_dot_attn",
            lhs: qs.to_vec(),
            rhs: ks.to_vec(),
        });
    }
    if vs.len() != 2 || vs[0] != ks[0] {
        return Err(MatError::Shape {
            op: "scaled_dot_attn",
            lhs: ks.to_vec(),
            rhs: vs.to_vec(),
        });
    }
    let (tq, width, tk) = (qs[0], qs[1], ks[0]);
    if let Some(mask) = mask {
        mask.check(tq, tk)?;
    }

    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut scores = tape.scale(scores, sc(1.0 / (width as f64).sqrt()))?;
    if let Some(mask) = mask {
        let m = tape.constant(mask.to_tensor());
        scores = tape.add(scores, m)?;
    }
    let weights = tape.softmax_rows(scores)?;
    tape.matmul(weights, v)
}

fn head_outputs<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    branch: &BranchParams<Var>,
    mask: Option<&AttnMask>,
) -> Result<Vec<Var>> {
    let d = tape.value(q).cols();
    let m = branch.heads.len();
    if m == 0 || !d.is_multiple_of(m) {
        return Err(MatError::config(format!(
            "model width {d} is not divisible by head count {m}"
        )));
    }
    branch
        .heads
        .iter()
        .map(|h| {
            let qh = tape.matmul(q, h.w_q)?;
            let kh = tape.matmul(k, h.w_k)?;
            let vh = tape.matmul(v, h.w_v)?;
            scaled_dot_attn(tape, qh, kh, vh, mask)
        })
        .collect()
}

fn project<T: Scalar>(tape: &mut Tape<T>, x: Var, branch: &BranchParams<Var>) -> Result<Var> {
    match branch.w_o {
        Some(w_o) => tape.matmul(x, w_o),
        None => Ok(x),
    }
}

/// Concatenation of `M` attention heads, each on its own projections of the
/// inputs. The output has the shape of `q`.
pub fn multi_head_attn<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    branch: &BranchParams<Var>,
    mask: Option<&AttnMask>,
) -> Result<Var> {
    let heads = head_outputs(tape, q, k, v, branch, mask)?;
    let cat = tape.concat_cols(&heads)?;
    project(tape, cat, branch)
}

fn scaled<T: Scalar>(tape: &mut Tape<T>, x: Var, factor: f64) -> Result<Var> {
    if factor == 1.0 {
        Ok(x)
    } else {
        tape.scale(x, sc(factor))
    }
}

fn zeros_like<T: Scalar>(tape: &mut Tape<T>, q: Var) -> Var {
    let shape = tape.shape(q).to_vec();
    tape.constant(Tensor::zeros(shape))
}

/// The averaged branch term `(1/N_a) Σ_i f_i · MHA(Q, K, V; θ_i)` with one
/// factor per branch. Dropped branches are not evaluated.
pub fn multi_branch_delta<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    set: &BranchSet<'_>,
    mask: Option<&AttnMask>,
    masks: &BranchMasks,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(set.num_branches());
    for (i, branch) in set.branches().iter().enumerate() {
        let f = masks.factor(i, 0);
        let term = if f == 0.0 {
            zeros_like(tape, q)
        } else {
            let out = multi_head_attn(tape, q, k, v, branch, mask)?;
            scaled(tape, out, f)?
        };
        terms.push(term);
    }
    tape.mean(&terms)
}

/// The averaged term with a factor per (branch, head), applied to each head
/// before concatenation.
pub fn drop_head_delta<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    set: &BranchSet<'_>,
    mask: Option<&AttnMask>,
    masks: &BranchMasks,
) -> Result<Var> {
    let m = set.num_heads();
    let mut terms = Vec::with_capacity(set.num_branches());
    for (i, branch) in set.branches().iter().enumerate() {
        if (0..m).all(|j| masks.factor(i, j) == 0.0) {
            terms.push(zeros_like(tape, q));
            continue;
        }
        let heads = head_outputs(tape, q, k, v, branch, mask)?;
        let mut parts = Vec::with_capacity(m);
        for (j, h) in heads.into_iter().enumerate() {
            let f = masks.factor(i, j);
            let part = if f == 0.0 {
                let shape = tape.shape(h).to_vec();
                tape.constant(Tensor::zeros(shape))
            } else {
                scaled(tape, h, f)?
            };
            parts.push(part);
        }
        let cat = tape.concat_cols(&parts)?;
        terms.push(project(tape, cat, branch)?);
    }
    tape.mean(&terms)
}

/// Multi-branch attention with drop-branch:
/// `Q + (1/N_a) Σ_i 1{U_i ≥ ρ}/(1−ρ) · MHA(Q, K, V; θ_i)`.
///
/// One uniform is drawn per branch. With `train` off all factors are 1.
pub fn multi_branch_attn<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    set: &BranchSet<'_>,
    mask: Option<&AttnMask>,
    src: &mut impl UniformSource,
) -> Result<Var> {
    let set = set.with_mode(DropMode::Branch);
    let masks = draw_branch_masks(&set, src);
    let delta = multi_branch_delta(tape, q, k, v, &set, mask, &masks)?;
    tape.add(q, delta)
}

/// Multi-branch attention with per-head drop decisions:
/// `Q + (1/N_a) Σ_i concat_j(1{U_ij ≥ ρ}/(1−ρ) · head_ij)`.
///
/// The residual `Q` is kept so this is a drop-in replacement for
/// [`multi_branch_attn`]; tying every `U_ij` to `U_i` reproduces it exactly.
pub fn drop_head_attn<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    set: &BranchSet<'_>,
    mask: Option<&AttnMask>,
    src: &mut impl UniformSource,
) -> Result<Var> {
    let set = set.with_mode(DropMode::Head);
    let masks = draw_branch_masks(&set, src);
    let delta = drop_head_delta(tape, q, k, v, &set, mask, &masks)?;
    tape.add(q, delta)
}
