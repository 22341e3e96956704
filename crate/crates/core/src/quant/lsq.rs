//! Learned step size quantization primitives.
//!
//! The clip range is open for gradients: at v/s = -Qn or v/s = Qp exactly the
//! input gradient is 0 and the step gradient is the clip value.

use super::QuantError;
use crate::tensor::round_half_away;

/// Signed 8-bit range.
pub const QN: f64 = 128.0;
pub const QP: f64 = 127.0;

fn check(s: f64) -> Result<(), QuantError> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(QuantError::BadStep(s))
    }
}

/// clip(round_half_away(v / s), -qn, qp) * s
pub fn lsq_quantize(v: f64, s: f64, qn: f64, qp: f64) -> Result<f64, QuantError> {
    check(s)?;
    Ok(round_half_away(v / s).clamp(-qn, qp) * s)
}

/// d v_hat / d s: -v/s + round(v/s) inside the range, -qn below, qp above.
pub fn lsq_grad_step(v: f64, s: f64, qn: f64, qp: f64) -> Result<f64, QuantError> {
    check(s)?;
    let r = v / s;
    Ok(if r <= -qn {
        -qn
    } else if r >= qp {
        qp
    } else {
        round_half_away(r) - r
    })
}

/// Straight-through input gradient: 1 strictly inside (-qn, qp), else 0.
pub fn lsq_grad_input(v: f64, s: f64, qn: f64, qp: f64) -> Result<f64, QuantError> {
    check(s)?;
    let r = v / s;
    Ok(if -qn < r && r < qp { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        assert_eq!(lsq_quantize(0.26, 0.5, QN, QP).unwrap(), 0.5);
        assert_eq!(lsq_quantize(100.0, 0.5, QN, QP).unwrap(), 63.5);
        assert_eq!(lsq_quantize(-100.0, 0.5, QN, QP).unwrap(), -64.0);
        assert_eq!(lsq_quantize(0.0, 3.0, QN, QP).unwrap(), 0.0);
        assert!((lsq_grad_step(0.26, 0.5, QN, QP).unwrap() - 0.48).abs() < 1e-12);
        assert_eq!(lsq_grad_step(100.0, 0.5, QN, QP).unwrap(), 127.0);
        assert_eq!(lsq_grad_step(-100.0, 0.5, QN, QP).unwrap(), -128.0);
        assert_eq!(lsq_grad_input(0.26, 0.5, QN, QP).unwrap(), 1.0);
        assert_eq!(lsq_grad_input(100.0, 0.5, QN, QP).unwrap(), 0.0);
        assert_eq!(lsq_grad_input(63.5, 0.5, QN, QP).unwrap(), 0.0);
        assert_eq!(lsq_grad_input(-64.0, 0.5, QN, QP).unwrap(), 0.0);
    }

    #[test]
    fn step_must_be_positive() {
        assert!(lsq_quantize(1.0, 0.0, QN, QP).is_err());
        assert!(lsq_grad_step(1.0, -1.0, QN, QP).is_err());
        assert!(lsq_grad_input(1.0, f64::NAN, QN, QP).is_err());
    }
}
