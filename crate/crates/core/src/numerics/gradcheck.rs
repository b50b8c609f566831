use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coordinates: usize,
}

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients of a scalar function against central differences
/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h`, coordinate by coordinate, over every
/// entry of every parameter matrix.
pub fn grad_check<F>(f: F, params: &[Matrix], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).get(0, 0))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out);
    let analytic: Vec<Matrix> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for p in 0..work.len() {
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p].data()[i];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((p, i, a, numeric));
            }
        }
    }
    Ok(report)
}
