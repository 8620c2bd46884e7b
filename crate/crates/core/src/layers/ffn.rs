use super::{drop_factor, FfnParams};
use crate::error::{MatError, Result};
use crate::rng::UniformSource;
use crate::tape::{Tape, Var};
use crate::tensor::{sc, Scalar, Tensor};

/// `max(x W1 + b1, 0) W2 + b2`, row by row.
pub fn ffn<T: Scalar>(tape: &mut Tape<T>, x: Var, w: &FfnParams<Var>) -> Result<Var> {
    let h = tape.matmul(x, w.w1)?;
    let h = tape.add_row(h, w.b1)?;
    let h = tape.relu(h)?;
    let y = tape.matmul(h, w.w2)?;
    tape.add_row(y, w.b2)
}

fn branch_factor(src: &mut impl UniformSource, branch: usize, rho: f64, train: bool) -> f64 {
    if train {
        drop_factor(src.draw(branch, None), rho)
    } else {
        1.0
    }
}

fn check_rate(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(MatError::config(format!("drop rate must lie in [0, 1), got {rho}")))
    }
}

/// `(1/N_f) Σ_i f_i · FFN(x; ω_i)`, the averaged term of a multi-branch FFN.
pub fn multi_branch_ffn_delta<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    branches: &[FfnParams<Var>],
    rho: f64,
    src: &mut impl UniformSource,
    train: bool,
) -> Result<Var> {
    check_rate(rho)?;
    if branches.is_empty() {
        return Err(MatError::config("a multi-branch FFN needs at least one branch"));
    }
    let mut terms = Vec::with_capacity(branches.len());
    for (i, w) in branches.iter().enumerate() {
        let f = branch_factor(src, i, rho, train);
        let term = if f == 0.0 {
            let shape = tape.shape(x).to_vec();
            tape.constant(Tensor::zeros(shape))
        } else {
            let y = ffn(tape, x, w)?;
            if f == 1.0 {
                y
            } else {
                tape.scale(y, sc(f))?
            }
        };
        terms.push(term);
    }
    tape.mean(&terms)
}

/// FFN with drop-branch: `x + 1{U ≥ ρ}/(1−ρ) · FFN(x)`; `x + FFN(x)` when
/// not training.
pub fn residual_ffn_drop<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: &FfnParams<Var>,
    rho: f64,
    src: &mut impl UniformSource,
    train: bool,
) -> Result<Var> {
    check_rate(rho)?;
    let f = branch_factor(src, 0, rho, train);
    if f == 0.0 {
        let shape = tape.shape(x).to_vec();
        let zero = tape.constant(Tensor::zeros(shape));
        return tape.add(x, zero);
    }
    let y = ffn(tape, x, w)?;
    let y = if f == 1.0 { y } else { tape.scale(y, sc(f))? };
    tape.add(x, y)
}

/// Multi-branch FFN: `x + (1/N_f) Σ_i 1{U_i ≥ ρ}/(1−ρ) · FFN(x; ω_i)`.
pub fn multi_branch_ffn<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    branches: &[FfnParams<Var>],
    rho: f64,
    src: &mut impl UniformSource,
    train: bool,
) -> Result<Var> {
    let delta = multi_branch_ffn_delta(tape, x, branches, rho, src, train)?;
    tape.add(x, delta)
}
