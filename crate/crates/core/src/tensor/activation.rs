use super::{Tensor, TensorError};

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu6(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(0.0, 6.0))
}

/// Constants of the tanh-form GeLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeluVariant {
    /// sqrt(2/pi) and 0.044715.
    #[default]
    Standard,
    /// sqrt(pi/2) and 0.004715, kept for side-by-side comparison only.
    Literal,
}

impl GeluVariant {
    fn constants(self) -> (f64, f64) {
        match self {
            GeluVariant::Standard => ((2.0 / std::f64::consts::PI).sqrt(), 0.044715),
            GeluVariant::Literal => ((std::f64::consts::PI / 2.0).sqrt(), 0.004715),
        }
    }
}

pub fn gelu_tanh_scalar(v: f64, variant: GeluVariant) -> f64 {
    let (a, b) = variant.constants();
    0.5 * v * (1.0 + (a * (v + b * v * v * v)).tanh())
}

pub fn gelu_tanh(x: &Tensor, variant: GeluVariant) -> Tensor {
    x.map(|v| gelu_tanh_scalar(v as f64, variant) as f32)
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>, TensorError> {
    if v.is_empty() {
        return Err(TensorError::EmptySoftmax);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(TensorError::NonFinite("softmax"));
    }
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Tensor {
        Tensor::new([1, 1, 1, 1], vec![v]).unwrap()
    }

    #[test]
    fn relu_family() {
        assert_eq!(relu(&scalar(-1.5)).data()[0], 0.0);
        assert_eq!(relu6(&scalar(7.2)).data()[0], 6.0);
        assert_eq!(relu6(&scalar(3.3)).data()[0], 3.3);
    }

    #[test]
    fn gelu_points() {
        assert_eq!(gelu_tanh_scalar(0.0, GeluVariant::Standard), 0.0);
        // 0.84119199060827670 from a 40-digit evaluation of the formula.
        assert!(
            (gelu_tanh_scalar(1.0, GeluVariant::Standard) - 0.841_191_990_608_276_7).abs() < 1e-12
        );
        for v in [6.0, 7.5, 10.0, 50.0] {
            let g = gelu_tanh_scalar(v, GeluVariant::Standard);
            assert!(((g - v) / v).abs() < 1e-6, "gelu({v}) = {g}");
        }
        // Literal constants give a visibly different curve.
        assert!(
            (gelu_tanh_scalar(1.0, GeluVariant::Literal) - 0.925_424_949_336_708).abs() < 1e-12
        );
    }

    #[test]
    fn gelu_monotone_right_of_minimum() {
        let mut prev = f64::NEG_INFINITY;
        let mut v = -0.7;
        while v < 20.0 {
            let g = gelu_tanh_scalar(v, GeluVariant::Standard);
            assert!(g >= prev, "not monotone at {v}");
            prev = g;
            v += 1e-2;
        }
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let s = softmax(&[1000.0, 0.0]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1].abs() < 1e-12);
        let s = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(softmax(&[]), Err(TensorError::EmptySoftmax));
    }
}
