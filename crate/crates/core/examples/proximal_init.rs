//! Trains a single-branch model briefly, widens it to several branches and
//! shows the logits are unchanged.
//!
//! cargo run --release --example proximal_init

use mat::cli::{max_relative_logit_diff, random_inputs};
use mat::data::{generate_task, TaskSpec};
use mat::model::{param_count, proximal_init_branches, Checkpoint, Model, ModelConfig};
use mat::training::{train_loop, TrainConfig};

fn main() -> mat::Result<()> {
    let cfg = ModelConfig {
        d_model: 16,
        d_hidden: 32,
        ..ModelConfig::default()
    };
    let data = generate_task(&TaskSpec {
        train: 1000,
        valid: 0,
        test: 0,
        ..TaskSpec::default()
    })?;
    let mut base = Model::<f32>::build(&cfg, 1)?;
    let train = TrainConfig {
        base_lr: 2e-3,
        warmup_steps: 50,
        max_steps: 200,
        log_every: 200,
        ..TrainConfig::default()
    };
    train_loop(&mut base, &data.train, &train, &mut ())?;
    let ck = Checkpoint::from_model(&base, train.max_steps);
    let inputs = random_inputs(&cfg, 20, 5);
    println!("N_a  params  max relative logit diff");
    for na in [2, 3, 4] {
        let wide: Model<f32> = proximal_init_branches(&ck, na)?;
        let diff = max_relative_logit_diff(&wide, &base, &inputs)?;
        println!("{na:>3}  {:>6}  {diff:e}", param_count(wide.config()));
    }
    Ok(())
}
