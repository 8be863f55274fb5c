//! Central finite-difference verification of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest per-input `max|analytic - numeric| / max(max|analytic|, max|numeric|)`.
    pub max_rel_error: f64,
    /// Input holding the largest error.
    pub worst_input: usize,
    pub evaluations: usize,
}

fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t)).collect();
    let out = build(&mut g, &vars)?;
    g.scalar(out)
}

/// Compares the gradient of the scalar recorded by `build` with respect to
/// every element of every input against `(f(x + h) - f(x - h)) / 2h`.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheck { max_rel_error: 0.0, worst_input: 0, evaluations: 0 };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut worst_diff = 0.0f64;
        let mut scale = 0.0f64;
        for (j, &a) in analytic.iter().enumerate() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + step;
            let up = evaluate(&probe, &build)?;
            probe[i].data_mut()[j] = x - step;
            let down = evaluate(&probe, &build)?;
            probe[i].data_mut()[j] = x;
            report.evaluations += 2;
            let numeric = (up - down) / (2.0 * step);
            worst_diff = worst_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let rel = if scale > 0.0 { worst_diff / scale } else { 0.0 };
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_input = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_a_quadratic() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = check_gradients(&[x], 1e-5, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9);
        assert_eq!(r.evaluations, 6);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // clamp passes no gradient outside its range, but the probe straddles the edge.
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        let r = check_gradients(&[x], 1e-3, |g, v| {
            let c = g.clamp(v[0], 0.0, 1.0);
            Ok(g.sum(c))
        })
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
