//! Finite-difference verification of reverse-mode gradients.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Max relative error between the reverse-mode gradient of scalar `f` at
/// `x` and central differences with the given `step`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> f64
where
    F: Fn(&Graph<f64>, Var) -> Var,
{
    grad_check_many(|g, vs| f(g, vs[0]), std::slice::from_ref(x), step, None).max_rel_error
}

/// Gradient check over several inputs at once. With `max_coords`, at most
/// that many evenly strided coordinates are probed per input.
pub fn grad_check_many<F>(f: F, xs: &[Tensor<f64>], step: f64, max_coords: Option<usize>) -> GradCheckReport
where
    F: Fn(&Graph<f64>, &[Var]) -> Var,
{
    let g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(out);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(xs)
        .map(|(&v, x)| grads.get(v).map(Tensor::into_vec).unwrap_or_else(|| vec![0.0; x.numel()]))
        .collect();
    drop(grads);
    drop(g);

    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let g = Graph::inference();
        let vars: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
        g.value(f(&g, &vars)).item()
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    let mut probe: Vec<Tensor<f64>> = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        let n = x.numel();
        let stride = match max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let base = x.data()[i];
            probe[ti].data_mut()[i] = base + step;
            let plus = eval(&probe);
            probe[ti].data_mut()[i] = base - step;
            let minus = eval(&probe);
            probe[ti].data_mut()[i] = base;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[ti][i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, i);
            }
        }
    }
    report
}
