//! Central-difference gradient checking in f64.
//!
//! Used by the test suite to validate every backward kernel against a
//! numerical oracle. The checks run the real tape code instantiated at f64
//! so the comparison is limited by truncation error of the difference
//! quotient, not by storage precision.

use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Default step for central differences; with f64 storage this puts the
/// truncation error well below the 1e-5 acceptance threshold.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error between an analytic and a numerical derivative, guarded
/// against vanishing denominators: `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (1e-8f64).max(analytic.abs() + numeric.abs())
}

/// Central-difference derivative of `f` w.r.t. the listed flat coordinates
/// of `at`, leaving `at` unchanged.
pub fn finite_diff_at<F>(mut f: F, at: &Tensor<f64>, coords: &[usize], h: f64) -> Vec<f64>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let mut x = at.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let fp = f(&x);
            x.data_mut()[i] = orig - h;
            let fm = f(&x);
            x.data_mut()[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error between `analytic` and central differences of `f`
/// over every coordinate of `at`.
pub fn max_relative_error<F>(f: F, at: &Tensor<f64>, analytic: &Tensor<f64>, h: f64) -> f64
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let coords: Vec<usize> = (0..at.numel()).collect();
    max_relative_error_at(f, at, analytic, &coords, h)
}

/// Worst relative error restricted to the listed coordinates. Large
/// parameter tensors are spot-checked this way to keep runtime bounded.
pub fn max_relative_error_at<F>(
    f: F,
    at: &Tensor<f64>,
    analytic: &Tensor<f64>,
    coords: &[usize],
    h: f64,
) -> f64
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let numeric = finite_diff_at(f, at, coords, h);
    coords
        .iter()
        .zip(&numeric)
        .map(|(&i, &n)| relative_error(analytic.data()[i], n))
        .fold(0.0, f64::max)
}

/// Deterministic spread of up to `max_count` coordinates over a tensor of
/// `numel` elements, always including the first and last.
pub fn sample_coords(numel: usize, max_count: usize) -> Vec<usize> {
    if numel <= max_count {
        return (0..numel).collect();
    }
    let mut coords: Vec<usize> = (0..max_count)
        .map(|i| i * (numel - 1) / (max_count - 1))
        .collect();
    coords.dedup();
    coords
}
