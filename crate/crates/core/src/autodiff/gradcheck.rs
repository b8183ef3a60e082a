use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, FLOOR)` over
    /// unmasked coordinates.
    pub max_rel_error: f64,
    /// `(param index, flat coordinate)` attaining the maximum.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Gradients below this magnitude sit at central-difference resolution
/// (`h = 1e-5` on O(10) losses) and are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;

/// Central finite-difference check of a scalar function of `params`.
///
/// `f` must build its graph on the supplied tape from the parameter
/// vars it is handed and return the scalar output. Coordinates where
/// `exclude[i][j]` is `true` are skipped; use it for coordinates whose
/// analytic gradient is blocked by a stop-gradient.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, exclude: Option<&[Vec<bool>]>) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.grad_or_zeros(&tape, v)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut work = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel_error = 0.0;
    let mut worst = None;
    for (pi, p) in params.iter().enumerate() {
        let mut num = Tensor::zeros(p.rows(), p.cols());
        for j in 0..p.len() {
            if exclude.is_some_and(|m| m[pi][j]) {
                continue;
            }
            let x = p.data()[j];
            work[pi].data_mut()[j] = x + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = x - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = x;
            let d = (plus - minus) / (2.0 * h);
            num.data_mut()[j] = d;
            let a = analytic[pi].data()[j];
            let rel = (a - d).abs() / a.abs().max(d.abs()).max(FLOOR);
            if rel > max_rel_error || worst.is_none() {
                max_rel_error = rel;
                worst = Some((pi, j));
            }
        }
        numeric.push(num);
    }
    Ok(GradCheckReport { max_rel_error, worst, analytic, numeric })
}
