use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Central-difference step used by [`gradcheck`].
pub const FD_STEP: f64 = 1e-5;

/// Per-input worst-case disagreement between tape and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_error: Vec<f64>,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().cloned().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() < tol
    }
}

/// Relative error with a small absolute floor so that vanishing gradients
/// don't divide by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out).item()
}

/// Compares tape gradients of the scalar function `f` against central
/// differences at every element of every input.
pub fn gradcheck<F>(f: F, inputs: &[Tensor]) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradcheckReport { max_rel_error: Vec::with_capacity(inputs.len()) };
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(v, inputs[i].shape());
        let mut worst: f64 = 0.0;
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
        report.max_rel_error.push(worst);
    }
    Ok(report)
}
