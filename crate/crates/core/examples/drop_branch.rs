//! Drop-branch masks as training sees them: per-step factors for one
//! sublayer, and the running average of the stochastic output converging to
//! the deterministic one.
//!
//! cargo run --release --example drop_branch

use mat::layers::{draw_branch_masks, multi_branch_attn, BranchParams, BranchSet, DropMode, HeadParams};
use mat::rng::Fixed;
use mat::training::LayerDraws;
use mat::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_var(tape: &mut Tape<f64>, rng: &mut ChaCha8Rng, shape: &[usize]) -> Var {
    tape.constant(Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)))
}

fn main() -> mat::Result<()> {
    let (d, heads, rho) = (4, 2, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::<f64>::new();
    let q = rand_var(&mut tape, &mut rng, &[2, d]);
    let branches: Vec<BranchParams<Var>> = (0..3)
        .map(|_| BranchParams {
            heads: (0..heads)
                .map(|_| HeadParams {
                    w_q: rand_var(&mut tape, &mut rng, &[d, d / heads]),
                    w_k: rand_var(&mut tape, &mut rng, &[d, d / heads]),
                    w_v: rand_var(&mut tape, &mut rng, &[d, d / heads]),
                })
                .collect(),
            w_o: None,
        })
        .collect();
    let mark = tape.len();

    let train = BranchSet::new(&branches, rho, DropMode::Branch, true)?;
    println!("step  factors (branch mode, rho={rho})");
    for step in 1..=6 {
        let masks = draw_branch_masks(&train, &mut LayerDraws { seed: 9, step, layer: 0 });
        let f: Vec<String> = (0..3).map(|b| format!("{:.3}", masks.factor(b, 0))).collect();
        println!("{step:>4}  {}", f.join(" "));
    }

    let eval = BranchSet::new(&branches, rho, DropMode::Branch, false)?;
    let target = {
        let out = multi_branch_attn(&mut tape, q, q, q, &eval, None, &mut Fixed(0.5))?;
        tape.value(out).data()[0]
    };
    tape.truncate(mark);
    let mut mean = 0.0;
    for step in 1..=20_000u64 {
        let out = multi_branch_attn(&mut tape, q, q, q, &train, None, &mut LayerDraws { seed: 9, step, layer: 0 })?;
        mean += (tape.value(out).data()[0] - mean) / step as f64;
        tape.truncate(mark);
        if (step.is_power_of_two() && step >= 16) || step == 20_000 {
            println!("after {step:>5} draws: mean {mean:+.5}  (deterministic {target:+.5})");
        }
    }
    Ok(())
}
