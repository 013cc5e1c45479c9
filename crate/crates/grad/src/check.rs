//! Central finite-difference gradient checking.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn assert_below(&self, rel_tol: f64) {
        assert!(
            self.max_rel_err < rel_tol,
            "gradient check failed: max rel err {:.3e} >= {:.3e} over {} entries (max abs err {:.3e})",
            self.max_rel_err,
            rel_tol,
            self.checked,
            self.max_abs_err
        );
    }
}

/// Compare taped gradients of a scalar-valued builder against central
/// finite differences over every element of every input.
///
/// `build` must construct the function on the given tape from leaves that
/// mirror `inputs` (same order, same shapes) and return the scalar output.
pub fn grad_check(
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    inputs: &[Tensor],
    eps: f64,
    floor: f64,
) -> GradCheckReport {
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    assert_eq!(tape.value(out).len(), 1, "grad_check output must be scalar");
    let grads = tape.backward(out, &vars);
    let analytic: Vec<Tensor> = grads.iter().map(|g| tape.value(*g).clone()).collect();

    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for j in 0..tensor.len() {
            let orig = tensor.data()[j];
            work[ti].data_mut()[j] = orig + eps;
            let plus = eval(&work);
            work[ti].data_mut()[j] = orig - eps;
            let minus = eval(&work);
            work[ti].data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let an = analytic[ti].data()[j];
            let abs = (an - fd).abs();
            let rel = abs / an.abs().max(fd.abs()).max(floor);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    report
}
