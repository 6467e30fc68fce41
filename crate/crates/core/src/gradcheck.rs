//! Central-difference verification of tape gradients.

use crate::autodiff::{Fault, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const TOLERANCE: f64 = 1e-4;

/// `|a − f| / max(|a|, |f|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub name: String,
    /// Max relative error per parameter tensor.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    /// Number of scalar coordinates compared.
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

/// Compares `backward` against central differences for every coordinate of
/// every parameter. `builder` must map parameter vars to a scalar root and
/// be deterministic.
pub fn gradcheck<F>(name: &str, params: &[Tensor], builder: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradcheck_with_fault(name, params, None, builder)
}

#[doc(hidden)]
pub fn gradcheck_with_fault<F>(
    name: &str,
    params: &[Tensor],
    fault: Option<Fault>,
    builder: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if let Some(fault) = fault {
        tape.inject_fault(fault);
    }
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = builder(&mut tape, &vars)?;
    if tape.value(root).numel() != 1 {
        return Err(contract("gradcheck builder must return a scalar"));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        let root = builder(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut checked = 0;
    for p in 0..params.len() {
        let mut worst: f64 = 0.0;
        for j in 0..params[p].numel() {
            let original = params[p].data()[j];
            work[p].data_mut()[j] = original + FD_STEP;
            let plus = eval(&work)?;
            work[p].data_mut()[j] = original - FD_STEP;
            let minus = eval(&work)?;
            work[p].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[p].data()[j], numeric));
            checked += 1;
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradcheckReport {
        name: name.to_string(),
        per_param,
        max_rel_error,
        checked,
    })
}
