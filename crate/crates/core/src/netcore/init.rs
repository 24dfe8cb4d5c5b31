//! He weight initialization.

use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Fan-in of a weight tensor: input-channel count x kernel area for conv
/// kernels (O,C,3,3), input features for dense kernels (O,F).
pub fn fan_in(dims: &[usize]) -> usize {
    match dims {
        [_, c, kh, kw] => c * kh * kw,
        [_, f] => *f,
        other => panic!("no fan-in for dims {other:?}"),
    }
}

/// Zero-mean normal draws with standard deviation sqrt(2 / fan_in).
/// Deterministic in `seed`.
pub fn he_init(dims: &[usize], seed: u64) -> Tensor {
    let std = (2.0 / fan_in(dims) as f64).sqrt();
    let mut rng = CounterRng::new(seed);
    let len: usize = dims.iter().product();
    let data = (0..len).map(|_| (rng.next_normal() * std) as f32).collect();
    Tensor::from_vec(dims, data).expect("dims/product consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_std_matches_he_scale() {
        // 1e5 draws at fan-in 100: std within 3% of sqrt(2/100)
        let t = he_init(&[1000, 100], 42);
        let n = t.len() as f64;
        let mean: f64 = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 =
            t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let expected = (2.0f64 / 100.0).sqrt();
        assert!(
            (var.sqrt() - expected).abs() < 0.03 * expected,
            "std {} vs {expected}",
            var.sqrt()
        );
        assert!(mean.abs() < 0.002);
    }

    #[test]
    fn conv_fan_in_counts_kernel_area() {
        assert_eq!(fan_in(&[32, 16, 3, 3]), 144);
        assert_eq!(fan_in(&[128, 24576]), 24576);
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(he_init(&[8, 8], 7), he_init(&[8, 8], 7));
        assert_ne!(he_init(&[8, 8], 7), he_init(&[8, 8], 8));
    }
}
