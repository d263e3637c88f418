//! Finite-difference Hessian-vector products.

use crate::error::{Error, Result};
use crate::tensor::ParamVector;

/// Default displacement for [`hvp_fd`], scaled by 1/|v| internally.
pub const DEFAULT_HVP_DELTA: f64 = 1e-2;

/// Approximate H·v by central differences of a loss gradient:
///
/// (grad(params + eps·v) − grad(params − eps·v)) / (2·eps)
/// with eps = delta / max(|v|, 1e-12).
///
/// `grad` evaluates the gradient of the loss being probed at an arbitrary
/// parameter point; the loss itself is never needed.
pub fn hvp_fd<G>(grad: G, params: &ParamVector, v: &ParamVector, delta: f64) -> Result<ParamVector>
where
    G: Fn(&ParamVector) -> Result<ParamVector>,
{
    if params.dim() == 0 {
        return Err(Error::Contract(
            "hvp_fd: parameter vector has zero dimension".into(),
        ));
    }
    if v.dim() != params.dim() {
        return Err(Error::Contract(format!(
            "hvp_fd: direction has dimension {} but parameters have {}",
            v.dim(),
            params.dim()
        )));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Contract(format!(
            "hvp_fd: delta must be positive, got {delta}"
        )));
    }
    let eps = delta / v.norm().max(1e-12);
    let plus = grad(&params.axpy(eps, v))?;
    let minus = grad(&params.axpy(-eps, v))?;
    Ok(plus.sub(&minus).scale(1.0 / (2.0 * eps)))
}
