//! Saves a model, reloads it and checks bytes and logits are preserved.
//!
//! cargo run --example checkpoint_roundtrip

use mat::model::{load_checkpoint, save_checkpoint, ForwardOptions, Model, ModelConfig};

fn main() -> mat::Result<()> {
    let cfg = ModelConfig {
        branches: 3,
        d_model: 16,
        d_hidden: 32,
        drop_rate: 0.2,
        ..ModelConfig::default()
    };
    let model = Model::<f32>::build(&cfg, 4)?;
    let path = std::env::temp_dir().join("mat-roundtrip.ckpt");
    save_checkpoint(&model, 123, &path)?;
    let bytes = std::fs::read(&path).map_err(|e| mat::MatError::io(&path, e))?;
    let ck = load_checkpoint(&path)?;
    println!("{} bytes, step {}, {} tensors", bytes.len(), ck.step, ck.tensors.len());
    println!("config: {}", ck.config.tuple());
    println!("re-encoded bytes identical: {}", ck.to_bytes() == bytes);

    let back: Model<f32> = ck.to_model()?;
    let (src, tgt) = ([4, 5, 6, 7], [1, 7, 6]);
    let a = model.forward(&src, &tgt, &ForwardOptions::eval())?;
    let b = back.forward(&src, &tgt, &ForwardOptions::eval())?;
    println!("logits identical: {}", a == b);
    let _ = std::fs::remove_file(&path);
    Ok(())
}
