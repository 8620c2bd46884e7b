//! Central-difference gradient checking in binary64.

mod layers;

pub use layers::{check_all_ops, check_op_at, CheckDims, LayerOp, OpCheck};

use crate::error::{MatError, Result};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)` over all coordinates.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the coordinate attaining the maximum.
    pub worst: Option<(usize, usize)>,
    /// Coordinates whose probes failed to evaluate to a finite value.
    pub flagged: Vec<(usize, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.flagged.is_empty() && self.max_rel_error < tol
    }
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape and one leaf per entry of `inputs` and must
/// return a one-element value.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    GradChecker::new(h).run(f, inputs)
}

#[derive(Clone, Copy, Debug)]
pub struct GradChecker {
    pub step: f64,
    /// Perturbs one backward rule; used to show the check has teeth.
    pub fault: Option<OpKind>,
}

impl GradChecker {
    pub fn new(step: f64) -> Self {
        Self { step, fault: None }
    }

    pub fn with_fault(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    pub fn run<F>(&self, f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        if self.step.is_nan() || self.step <= 0.0 {
            return Err(MatError::contract("finite-difference step must be positive"));
        }
        if inputs.iter().any(|t| t.first_non_finite().is_some()) {
            return Err(MatError::contract("grad_check inputs must be finite"));
        }

        let mut tape = Tape::new();
        if let Some(kind) = self.fault {
            tape.inject_backward_fault(kind);
        }
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        let analytic: Vec<Tensor<f64>> = vars
            .iter()
            .map(|&v| grads.get(v).expect("leaf requires grad").clone())
            .collect();

        let eval = |probe: &[Tensor<f64>]| -> Option<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = probe.iter().map(|t| tape.leaf(t.clone(), false)).collect();
            let out = f(&mut tape, &vars).ok()?;
            let v = tape.value(out).data()[0];
            v.is_finite().then_some(v)
        };

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            flagged: Vec::new(),
            coordinates: 0,
        };
        let mut probe = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            for j in 0..input.len() {
                report.coordinates += 1;
                let x0 = input.data()[j];
                probe[i].data_mut()[j] = x0 + self.step;
                let plus = eval(&probe);
                probe[i].data_mut()[j] = x0 - self.step;
                let minus = eval(&probe);
                probe[i].data_mut()[j] = x0;
                let (Some(plus), Some(minus)) = (plus, minus) else {
                    report.flagged.push((i, j));
                    continue;
                };
                let fd = (plus - minus) / (2.0 * self.step);
                let ad = analytic[i].data()[j];
                let err = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.worst = Some((i, j));
                }
            }
        }
        Ok(report)
    }
}
