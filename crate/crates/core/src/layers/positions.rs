use crate::error::{MatError, Result};
use crate::tensor::{sc, Scalar, Tensor};

/// Sinusoidal position table: `pe[p, 2i] = sin(p / 10000^(2i/d))`,
/// `pe[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, d: usize) -> Result<Tensor<T>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(MatError::config(format!(
            "positional encoding needs an even width, got {d}"
        )));
    }
    if len == 0 {
        return Err(MatError::config("positional encoding needs at least one position"));
    }
    Ok(Tensor::from_fn([len, d], |idx| {
        let (p, c) = (idx / d, idx % d);
        let i = (c / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
        sc(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    }))
}
