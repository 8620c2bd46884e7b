//! Trains a two-branch model on sequence reversal and reports held-out
//! accuracy.
//!
//! cargo run --release --example train_reverse -- [max_steps]

use std::time::Instant;

use mat::data::{evaluate, generate_task, TaskSpec};
use mat::model::{Model, ModelConfig};
use mat::training::{train_loop, MetricsRow, TrainConfig, TrainObserver};

struct Print;

impl TrainObserver for Print {
    fn on_log(&mut self, row: &MetricsRow) -> mat::Result<()> {
        println!("{}", row.csv());
        Ok(())
    }
}

fn main() -> mat::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let task = TaskSpec::default();
    let data = generate_task(&task)?;
    let cfg = ModelConfig {
        branches: 2,
        drop_rate: 0.1,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        base_lr: 2e-3,
        warmup_steps: 400,
        max_steps: steps,
        batch_tokens: 256,
        log_every: 250,
        ..TrainConfig::default()
    };
    let mut model = Model::<f32>::build(&cfg, 1)?;
    println!("{}", MetricsRow::CSV_HEADER);
    let t0 = Instant::now();
    train_loop(&mut model, &data.train, &train, &mut Print)?;
    let elapsed = t0.elapsed();
    let report = evaluate(&model, &data.valid, 0.0)?;
    print!("{}", report.to_kv());
    println!("train_seconds={:.1}", elapsed.as_secs_f64());
    Ok(())
}
