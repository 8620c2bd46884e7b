//! Finite-difference check of every layer op, then the same check with a
//! deliberately broken softmax backward.
//!
//! cargo run --release --example grad_check

use mat::gradcheck::{check_all_ops, CheckDims, GradChecker};
use mat::tape::OpKind;

fn main() -> mat::Result<()> {
    let dims = CheckDims::default();
    for (label, checker) in [
        ("clean", GradChecker::new(1e-6)),
        ("softmax fault", GradChecker::new(1e-6).with_fault(OpKind::SoftmaxRows)),
    ] {
        println!("-- {label}");
        for r in check_all_ops(&dims, 3, 1, &checker)? {
            let verdict = if r.passed(1e-4) { "ok" } else { "FAIL" };
            println!("{:<18} {:.2e}  {verdict}", r.op.name(), r.max_rel_error);
        }
    }
    Ok(())
}
