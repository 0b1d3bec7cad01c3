//! Gamma correction and brightness matching between image sets.
//!
//! Raising values in `[0, 1]` to a power `γ < 1` brightens, `γ > 1` darkens.
//! [`match_brightness`] finds the `γ` that moves the pooled mean gray level
//! of a set of images to a target, by bisection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A commonly used brightening value for dim outdoor sets.
pub const DEFAULT_GAMMA: f64 = 0.65;
pub const GAMMA_RANGE: (f64, f64) = (0.1, 5.0);
pub const MAX_ITERATIONS: usize = 40;

pub fn gamma_correct<T: Scalar>(img: &Tensor<T>, gamma: f64) -> Result<Tensor<T>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    if img.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::invalid("image values outside [0, 1]"));
    }
    let g = T::lit(gamma);
    Ok(img.map(|v| v.powf(g)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSolution {
    pub gamma: f64,
    /// Pooled mean gray level after correction, on the 0–255 scale.
    pub mean: f64,
    pub iterations: usize,
}

/// Pooled mean gray (`(R+G+B)/3`, 0–255) of `values^γ`. The gray level is a
/// channel average, so pooling every channel value gives the same mean.
fn mean_gray(values: &[f64], gamma: f64) -> f64 {
    255.0 * values.iter().map(|v| v.powf(gamma)).sum::<f64>() / values.len() as f64
}

/// Bisection for `γ ∈ [0.1, 5]` such that the pooled mean gray of the
/// corrected images is `target_mean`.
///
/// The mean is non-increasing in `γ`, so the bracket always holds the root.
/// Iteration stops once the mean is within `tolerance` gray levels or the
/// bracket is narrower than `1e-12`, and never exceeds 40 halvings.
pub fn match_brightness<T: Scalar>(images: &[Tensor<T>], target_mean: f64, tolerance: f64) -> Result<GammaSolution> {
    if images.is_empty() {
        return Err(Error::invalid("no source images"));
    }
    if !(target_mean > 0.0 && target_mean < 255.0) {
        return Err(Error::invalid(format!("target mean {target_mean} not in (0, 255)")));
    }
    let mut values = Vec::new();
    for img in images {
        if img.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::invalid("image values outside [0, 1]"));
        }
        values.extend(img.data().iter().map(|v| v.as_f64()));
    }
    let (mut lo, mut hi) = GAMMA_RANGE;
    let (brightest, darkest) = (mean_gray(&values, lo), mean_gray(&values, hi));
    if target_mean > brightest || target_mean < darkest {
        return Err(Error::OutOfRange {
            target: target_mean,
            low: darkest,
            high: brightest,
        });
    }
    let mut gamma = 0.5 * (lo + hi);
    let mut mean = mean_gray(&values, gamma);
    let mut iterations = 1;
    while iterations < MAX_ITERATIONS && (mean - target_mean).abs() > tolerance && hi - lo > 1e-12 {
        if mean > target_mean {
            lo = gamma;
        } else {
            hi = gamma;
        }
        gamma = 0.5 * (lo + hi);
        mean = mean_gray(&values, gamma);
        iterations += 1;
    }
    Ok(GammaSolution { gamma, mean, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> Tensor<f64> {
        Tensor::full(&[3, 4, 4], v)
    }

    #[test]
    fn gamma_cases() {
        let img = Tensor::<f64>::new(&[3, 1, 1], vec![0.0, 0.4012, 1.0]).unwrap();
        assert_eq!(gamma_correct(&img, 1.0).unwrap(), img);
        let out = gamma_correct(&img, 0.65).unwrap();
        assert_eq!(out.data()[0], 0.0);
        assert_eq!(out.data()[2], 1.0);
        assert!((out.data()[1] - 0.5523).abs() < 5e-5);
        assert!(gamma_correct(&img, 0.0).is_err());
        assert!(gamma_correct(&img, -1.0).is_err());
        assert!(gamma_correct(&constant(1.5), 1.0).is_err());
    }

    #[test]
    fn monotone_in_value_and_gamma() {
        let vals: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let t = Tensor::new(&[99], vals).unwrap();
        let out = gamma_correct(&t, 0.7).unwrap();
        assert!(out.data().windows(2).all(|w| w[0] < w[1]));
        let v = Tensor::<f64>::full(&[1], 0.3);
        let a = gamma_correct(&v, 0.5).unwrap().item();
        let b = gamma_correct(&v, 2.0).unwrap().item();
        assert!(a > b);
    }

    #[test]
    fn constant_set_closed_form() {
        let s = match_brightness(&[constant(0.25)], 127.5, 0.01).unwrap();
        assert!((s.gamma - 0.5).abs() < 1e-3, "{s:?}");
        assert!(s.iterations <= MAX_ITERATIONS);
    }

    #[test]
    fn fixed_point_and_direction() {
        let imgs = [constant(0.3), constant(0.6)];
        let current = 255.0 * 0.45;
        let s = match_brightness(&imgs, current, 0.01).unwrap();
        assert!((s.gamma - 1.0).abs() < 0.02);
        let s = match_brightness(&imgs, 160.0, 0.5).unwrap();
        assert!(s.gamma < 1.0);
        assert!((s.mean - 160.0).abs() <= 0.5);
    }

    #[test]
    fn unreachable_target_reports_range() {
        match match_brightness(&[constant(0.5)], 254.9, 0.01) {
            Err(Error::OutOfRange { low, high, .. }) => {
                assert!(low < high);
                assert!(high < 254.9);
            }
            other => panic!("{other:?}"),
        }
        assert!(match_brightness(&[constant(0.5)], 300.0, 0.01).is_err());
        assert!(match_brightness::<f64>(&[], 100.0, 0.01).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn solved_gamma_hits_target(v in 0.05f64..0.95, target in 20.0f64..235.0) {
                let img = Tensor::<f64>::full(&[3, 2, 2], v);
                // Constant images have a closed form: v^γ = target/255.
                let exact = (target / 255.0).ln() / v.ln();
                prop_assume!(exact > GAMMA_RANGE.0 && exact < GAMMA_RANGE.1);
                let s = match_brightness(&[img], target, 0.01).unwrap();
                prop_assert!((s.mean - target).abs() <= 0.01);
                prop_assert!(s.iterations <= MAX_ITERATIONS);
            }
        }
    }
}
