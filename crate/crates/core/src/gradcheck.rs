//! Central finite-difference gradient verification.

use crate::autodiff::{Graph, Var};
use crate::error::{DadaError, Result};
use crate::tensor::Tensor;

/// Denominator floor for relative errors, so vanishing gradients are
/// compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ParamError {
    pub index: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub params: Vec<ParamError>,
    pub tol: f64,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares analytic gradients of `f` against central differences.
///
/// `f` builds a scalar from the given parameter vars; it is re-run on a
/// fresh graph for every perturbation.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_masked(f, params, h, tol, |_, _| false)
}

/// Like [`grad_check`], skipping coordinates where `skip(param, coord)` holds
/// (non-smooth points).
pub fn grad_check_masked<F, S>(f: F, params: &[Tensor], h: f64, tol: f64, skip: S) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    S: Fn(usize, usize) -> bool,
{
    if !(h > 0.0 && tol > 0.0) {
        return Err(DadaError::contract("grad_check needs h > 0 and tol > 0"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (pi, grads) in analytic.iter().enumerate() {
        let mut worst = ParamError {
            index: pi,
            max_rel_error: 0.0,
            worst_coord: 0,
            checked: 0,
        };
        for c in 0..params[pi].numel() {
            if skip(pi, c) {
                continue;
            }
            let orig = params[pi].data()[c];
            work[pi].data_mut()[c] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[c] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grads[c], numeric);
            worst.checked += 1;
            if err > worst.max_rel_error || err.is_nan() {
                worst.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                worst.worst_coord = c;
            }
        }
        report.push(worst);
    }
    Ok(GradReport {
        params: report,
        tol,
    })
}
