use crate::error::{Error, Result};
use crate::tensor::kernels::sinusoid_table;
use crate::tensor::{Scalar, Tensor};

/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(..)`.
pub fn sinusoidal_positions<F: Scalar>(max_len: usize, d_model: usize) -> Result<Tensor<F>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!("d_model {d_model} must be even")));
    }
    Tensor::new(&[max_len, d_model], sinusoid_table(max_len, d_model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_alternates_zero_one() {
        let pe = sinusoidal_positions::<f64>(4, 8).unwrap();
        assert_eq!(&pe.values()[..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn closed_form_entries() {
        let pe = sinusoidal_positions::<f64>(3, 4).unwrap();
        assert!((pe.values()[4] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.values()[4] - 0.841471).abs() < 1e-6);
        // pos 2, i = 1: angle 2 / 10000^(2/4) = 0.02
        assert!((pe.values()[2 * 4 + 3] - 0.02f64.cos()).abs() < 1e-15);
        let big = sinusoidal_positions::<f64>(200, 16).unwrap();
        assert!(big.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn odd_width_is_a_config_error() {
        assert!(matches!(sinusoidal_positions::<f32>(2, 5), Err(Error::Config(_))));
    }
}
