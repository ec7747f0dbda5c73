use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Step used by [`max_relative_error`] unless a caller picks another.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely.
const ABSOLUTE_FLOOR: f64 = 1e-6;

/// Relative error with an absolute fallback for tiny magnitudes.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < ABSOLUTE_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences for every entry of every leaf. Returns the worst error.
///
/// `f` receives a fresh graph and one differentiable leaf per input tensor.
pub fn max_relative_error<F>(leaves: &[Tensor], step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.constant(t)).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.value(root)[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t)).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let mut worst = 0.0f64;
    let mut probe = leaves.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient").to_vec();
        for i in 0..probe[k].len() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    Ok(worst)
}
