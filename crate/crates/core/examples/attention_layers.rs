//! Multi-branch attention on random inputs: the eval output, a few training
//! draws, and the single-branch case against plain multi-head attention.
//!
//! cargo run --example attention_layers

use mat::layers::{multi_branch_attn, multi_head_attn, BranchParams, BranchSet, DropMode, HeadParams};
use mat::rng::{Fixed, RngStream};
use mat::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_var(tape: &mut Tape<f64>, rng: &mut ChaCha8Rng, shape: &[usize]) -> Var {
    tape.constant(Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)))
}

fn branch(tape: &mut Tape<f64>, rng: &mut ChaCha8Rng, d: usize, heads: usize) -> BranchParams<Var> {
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

fn row(t: &Tensor<f64>) -> String {
    t.data()[..4].iter().map(|x| format!("{x:+.4}")).collect::<Vec<_>>().join(" ")
}

fn main() -> mat::Result<()> {
    let (d, heads) = (8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::<f64>::new();
    let q = rand_var(&mut tape, &mut rng, &[3, d]);
    let kv = rand_var(&mut tape, &mut rng, &[5, d]);
    let branches: Vec<_> = (0..3).map(|_| branch(&mut tape, &mut rng, d, heads)).collect();

    let eval = BranchSet::new(&branches, 0.3, DropMode::Branch, false)?;
    let out = multi_branch_attn(&mut tape, q, kv, kv, &eval, None, &mut Fixed(0.5))?;
    println!("eval          {}", row(tape.value(out)));

    let train = BranchSet::new(&branches, 0.3, DropMode::Branch, true)?;
    let mut src = RngStream::new(7, 0);
    for k in 0..4 {
        let out = multi_branch_attn(&mut tape, q, kv, kv, &train, None, &mut src)?;
        println!("train draw {k}  {}", row(tape.value(out)));
    }

    let one = BranchSet::new(&branches[..1], 0.0, DropMode::Branch, false)?;
    let a = multi_branch_attn(&mut tape, q, kv, kv, &one, None, &mut Fixed(0.5))?;
    let mha = multi_head_attn(&mut tape, q, kv, kv, &branches[0], None)?;
    let b = tape.add(q, mha)?;
    println!("N_a=1 equals Q + MHA exactly: {}", tape.value(a) == tape.value(b));
    Ok(())
}
