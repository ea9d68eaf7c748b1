use crate::error::{Error, Result};

/// Focal loss value with first and second derivatives w.r.t. the logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalTerms {
    pub loss: f64,
    pub grad: f64,
    pub hess: f64,
}

/// `FL = -(1 - p_t)^gamma * ln(p_t)` with `p_t = p` for `y = 1`, `1 - p` otherwise.
pub fn focal_loss(p: f64, y: u8, gamma: f64) -> Result<FocalTerms> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("focal gamma {gamma} must be >= 0")));
    }
    let (pt, sign) = if y == 1 { (p, 1.0) } else { (1.0 - p, -1.0) };
    Ok(terms(pt, sign, gamma))
}

/// Same quantities evaluated from a logit; used inside boosting where the
/// raw score may saturate.
pub(crate) fn focal_from_logit(z: f64, y: u8, gamma: f64) -> FocalTerms {
    let sign = if y == 1 { 1.0 } else { -1.0 };
    let pt = super::sigmoid(sign * z).clamp(1e-15, 1.0 - 1e-15);
    terms(pt, sign, gamma)
}

fn terms(pt: f64, sign: f64, gamma: f64) -> FocalTerms {
    let q = 1.0 - pt;
    let log_pt = pt.ln();
    let qg = q.powf(gamma);
    let loss = -qg * log_pt;
    // d/dz with dp_t/dz = sign * p_t * q
    let grad = sign * (gamma * pt * qg * log_pt - q * qg);
    // gamma * q^(gamma-1) written as gamma * q^gamma / q to stay finite when gamma < 1
    let qg_minus = if q > 0.0 { qg / q } else { 0.0 };
    let inner = gamma * qg * log_pt - gamma * gamma * pt * qg_minus * log_pt
        + gamma * qg
        + (gamma + 1.0) * qg;
    let hess = pt * q * inner;
    FocalTerms { loss, grad, hess }
}
