use super::{BranchSet, DropMode};
use crate::rng::UniformSource;

/// Keep/scale factor for a single draw: `1{u >= rho} / (1 - rho)`.
pub fn drop_factor(u: f64, rho: f64) -> f64 {
    if u >= rho {
        1.0 / (1.0 - rho)
    } else {
        0.0
    }
}

/// Factors for every branch (and head, in head mode) of a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchMasks {
    factors: Vec<f64>,
    per_branch: usize,
}

impl BranchMasks {
    pub fn ones(branches: usize, per_branch: usize) -> Self {
        Self {
            factors: vec![1.0; branches * per_branch],
            per_branch,
        }
    }

    /// Factor for head `head` of branch `branch`. In branch mode every head
    /// reads the branch factor.
    pub fn factor(&self, branch: usize, head: usize) -> f64 {
        if self.per_branch == 1 {
            self.factors[branch]
        } else {
            self.factors[branch * self.per_branch + head]
        }
    }

    pub fn branch_factor(&self, branch: usize) -> Option<f64> {
        (self.per_branch == 1).then(|| self.factors[branch])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.factors
    }

    pub fn all_dropped(&self) -> bool {
        self.factors.iter().all(|&f| f == 0.0)
    }
}

/// Draws the keep/scale factors for a branch set.
///
/// Branch mode asks `src` for one uniform per branch, head mode for one per
/// `(branch, head)`. Outside training every factor is exactly 1 and `src` is
/// not consulted.
pub fn draw_branch_masks(set: &BranchSet<'_>, src: &mut impl UniformSource) -> BranchMasks {
    let n = set.num_branches();
    let per_branch = match set.mode() {
        DropMode::Branch => 1,
        DropMode::Head => set.num_heads(),
    };
    if !set.train() {
        return BranchMasks::ones(n, per_branch);
    }
    let rho = set.drop_rate();
    let mut factors = Vec::with_capacity(n * per_branch);
    for i in 0..n {
        match set.mode() {
            DropMode::Branch => factors.push(drop_factor(src.draw(i, None), rho)),
            DropMode::Head => {
                for j in 0..per_branch {
                    factors.push(drop_factor(src.draw(i, Some(j)), rho));
                }
            }
        }
    }
    BranchMasks {
        factors,
        per_branch,
    }
}
