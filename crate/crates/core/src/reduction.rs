//! Deterministic fixed-shape pairwise summation.
//!
//! The reduction tree depends only on the slice length, so sums are
//! bit-identical regardless of how the terms were produced (serial loop or
//! parallel workers) and accumulate rounding error as O(log n) instead of
//! O(n).

use std::ops::Add;

const LEAF: usize = 64;

/// Sum `xs` with a fixed-shape pairwise tree.
pub fn pairwise_sum<T>(xs: &[T]) -> T
where
    T: Copy + Add<Output = T> + Default,
{
    match xs.len() {
        0 => T::default(),
        n if n <= LEAF => {
            let mut acc = xs[0];
            for &x in &xs[1..] {
                acc = acc + x;
            }
            acc
        }
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn matches_naive_on_small_input() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 55.0);
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
    }

    #[test]
    fn close_to_exact_on_large_input() {
        let n = 100_001;
        let xs: Vec<f64> = (0..n).map(|i| 1.0 / (i + 1) as f64).collect();
        let exact: f64 = xs.iter().rev().sum(); // ascending magnitudes
        let got = pairwise_sum(&xs);
        assert!(((got - exact) / exact).abs() < 1e-13);
    }

    #[test]
    fn shape_is_length_only() {
        // Same values in the same order must give bitwise-identical sums
        // no matter how the slice was assembled.
        let xs: Vec<Complex64> = (0..4097)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64).cos()))
            .collect();
        let a = pairwise_sum(&xs);
        let ys = xs.clone();
        let b = pairwise_sum(&ys);
        assert_eq!(a, b);
    }
}
