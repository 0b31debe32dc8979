use thiserror::Error;

use super::{BoundParams, GradError, Graph, NodeId, ParamVector};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Graph(#[from] GradError),
    #[error("function is not finite when perturbing parameter {index}")]
    NonFinite { index: usize },
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// Returns `max_i |analytic_i − fd_i| / max(|analytic_i|, |fd_i|, s)` with
/// `s = 1e-3 · max_j |analytic_j|` (at least 1e-12), so entries far below the
/// gradient scale are not judged on finite-difference roundoff alone.
pub fn check_gradients<F>(f: F, at: &ParamVector, step: f64) -> Result<f64, GradCheckError>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<NodeId, GradError>,
{
    let mut g = Graph::new();
    let bound = at.bind(&mut g);
    let root = f(&mut g, &bound)?;
    let analytic = bound.flat_gradient(&g.backward(root)?);

    let eval = |p: &ParamVector| -> Result<f64, GradError> {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let r = f(&mut g, &b)?;
        Ok(g.scalar(r))
    };

    let scale = analytic.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    let mut worst: f64 = 0.0;
    let mut probe = at.clone();
    for (index, &an) in analytic.iter().enumerate() {
        let orig = probe.values()[index];
        probe.values_mut()[index] = orig + step;
        let plus = eval(&probe)?;
        probe.values_mut()[index] = orig - step;
        let minus = eval(&probe)?;
        probe.values_mut()[index] = orig;
        if !plus.is_finite() || !minus.is_finite() || !an.is_finite() {
            return Err(GradCheckError::NonFinite { index });
        }
        let fd = (plus - minus) / (2.0 * step);
        let denom = an.abs().max(fd.abs()).max(floor);
        worst = worst.max((an - fd).abs() / denom);
    }
    Ok(worst)
}
