use crate::error::{MatError, Result};
use crate::model::Model;
use crate::tensor::{sc, Scalar, Tensor};

/// Adam with bias correction. Moments are kept in `f64` per parameter
/// element, so the update does not depend on how parameters are shaped.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    fn prepare<T: Scalar>(&mut self, lens: &[usize], grads: &[&[T]], names: &[String], lr: f64) -> Result<(f64, f64)> {
        if lens.len() != grads.len() || names.len() != grads.len() {
            return Err(MatError::contract("adam: params, grads and names differ in count"));
        }
        for ((&len, g), name) in lens.iter().zip(grads).zip(names) {
            if len != g.len() {
                return Err(MatError::Shape {
                    op: "adam",
                    lhs: vec![len],
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(MatError::NonFiniteGradient(name.clone()));
            }
        }
        if lr.is_nan() || lr <= 0.0 {
            return Err(MatError::contract(format!("adam: learning rate {lr} must be positive")));
        }
        if self.m.is_empty() {
            self.m = lens.iter().map(|&n| vec![0.0; n]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != lens.len() || self.m.iter().zip(lens).any(|(m, &n)| m.len() != n) {
            return Err(MatError::contract("adam: parameter layout changed between steps"));
        }
        self.t += 1;
        let t = self.t as i32;
        Ok((1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t)))
    }

    fn update_slot<T: Scalar>(&mut self, k: usize, p: &mut [T], g: &[T], lr: f64, (c1, c2): (f64, f64)) {
        let (m, v) = (&mut self.m[k], &mut self.v[k]);
        for i in 0..g.len() {
            let gi = g[i].to_f64().unwrap_or(f64::NAN);
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
            let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            p[i] = p[i] - sc::<T>(step);
        }
    }

    /// One update of every slot. `names` label slots in error messages.
    ///
    /// All gradients are checked before anything is written, so a NaN leaves
    /// parameters and moments untouched.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [&mut [T]],
        grads: &[&[T]],
        names: &[String],
        lr: f64,
    ) -> Result<()> {
        let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
        let corr = self.prepare(&lens, grads, names, lr)?;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update_slot(k, p, g, lr, corr);
        }
        Ok(())
    }

    /// Updates every model parameter from gradients given in canonical
    /// parameter order.
    pub fn step_model<T: Scalar>(&mut self, model: &mut Model<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        let mut names = Vec::new();
        let mut lens = Vec::new();
        model.params().visit(&mut |n, t| {
            names.push(n);
            lens.push(t.len());
        });
        let grads: Vec<&[T]> = grads.iter().map(|g| g.data()).collect();
        let corr = self.prepare(&lens, &grads, &names, lr)?;
        let mut k = 0;
        model.params_mut().visit_mut(&mut |_, p| {
            self.update_slot(k, p.data_mut(), grads[k], lr, corr);
            k += 1;
        });
        Ok(())
    }
}
