//! Image quality measures: PSNR, SSIM, MS-SSIM and pooled gray-level
//! statistics.
//!
//! SSIM uses Gaussian-weighted local moments over the valid region (no
//! padding). Colour images are scored per channel and the channel scores are
//! averaged. The SSIM and MS-SSIM routines are written on top of [`Var`] so
//! the training losses can differentiate through them; the `Tensor` entry
//! points below simply evaluate them without gradient tracking.

use std::collections::HashSet;
use std::sync::{Mutex, OnceLock};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gaussian_kernel, Tensor, Var};

/// Reported PSNR never exceeds this, including for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn window<T: Scalar>(&self) -> Tensor<T> {
        gaussian_kernel(self.window_size, self.sigma)
    }
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Per-level exponents `β_m`; the luminance exponent is the last one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSsimConfig {
    pub ssim: SsimConfig,
    pub weights: Vec<f64>,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        Self {
            ssim: SsimConfig::default(),
            weights: MS_SSIM_WEIGHTS.to_vec(),
        }
    }
}

impl MsSsimConfig {
    pub fn levels(&self) -> usize {
        self.weights.len()
    }

    /// Number of levels an `h×w` image supports: the largest `m ≤ M` with
    /// `min(h, w) ≥ window · 2^(m−1)`.
    pub fn usable_levels(&self, h: usize, w: usize) -> usize {
        let side = h.min(w);
        (1..=self.levels())
            .rev()
            .find(|&m| side >= self.ssim.window_size << (m - 1))
            .unwrap_or(0)
    }

    /// Exponents for `levels` scales: the first `levels` defaults, rescaled
    /// to keep their original total when the pyramid had to be shortened.
    fn effective_weights(&self, levels: usize) -> Vec<f64> {
        if levels == self.levels() {
            return self.weights.clone();
        }
        let full: f64 = self.weights.iter().sum();
        let part: f64 = self.weights[..levels].iter().sum();
        self.weights[..levels].iter().map(|w| w * full / part).collect()
    }
}

fn check_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "images differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum();
    Ok(s / a.numel() as f64)
}

/// `10·log10(L² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, dynamic_range: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (dynamic_range * dynamic_range / m).log10()).min(PSNR_CAP_DB))
}

/// Luminance and contrast-structure maps over the valid region.
pub struct SsimMaps<T: Scalar> {
    pub luminance: Var<T>,
    pub contrast_structure: Var<T>,
}

/// Gaussian-weighted SSIM components for rank-4 inputs of equal shape.
pub fn ssim_maps<T: Scalar>(a: &Var<T>, b: &Var<T>, cfg: &SsimConfig) -> Result<SsimMaps<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "images differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (_, _, h, w) = a.value().dims4()?;
    if h < cfg.window_size || w < cfg.window_size {
        return Err(Error::shape(format!(
            "image {h}×{w} smaller than the {0}×{0} SSIM window",
            cfg.window_size
        )));
    }
    let win = cfg.window::<T>();
    let filt = |v: &Var<T>| v.depthwise_conv2d(&win, 1, 0);
    let mu_a = filt(a)?;
    let mu_b = filt(b)?;
    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let mu_ab = mu_a.mul(&mu_b)?;
    let var_a = filt(&a.square())?.sub(&mu_aa)?;
    let var_b = filt(&b.square())?.sub(&mu_bb)?;
    let cov = filt(&a.mul(b)?)?.sub(&mu_ab)?;

    let luminance = mu_ab
        .scale(2.0)
        .add_scalar(cfg.c1())
        .div(&mu_aa.add(&mu_bb)?.add_scalar(cfg.c1()))?;
    let contrast_structure = cov
        .scale(2.0)
        .add_scalar(cfg.c2())
        .div(&var_a.add(&var_b)?.add_scalar(cfg.c2()))?;
    Ok(SsimMaps {
        luminance,
        contrast_structure,
    })
}

/// Mean SSIM as a differentiable scalar.
pub fn ssim_var<T: Scalar>(a: &Var<T>, b: &Var<T>, cfg: &SsimConfig) -> Result<Var<T>> {
    let m = ssim_maps(a, b, cfg)?;
    Ok(m.luminance.mul(&m.contrast_structure)?.mean())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimResult<T> {
    /// Mean over pixels of the valid region and over channels.
    pub mean: f64,
    /// Per-pixel SSIM, `B×C×(H−win+1)×(W−win+1)`.
    pub map: Tensor<T>,
}

pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<SsimResult<T>> {
    check_pair(a, b)?;
    let m = ssim_maps(&Var::constant(a.clone()), &Var::constant(b.clone()), cfg)?;
    let map = m.luminance.mul(&m.contrast_structure)?.value().clone();
    Ok(SsimResult {
        mean: map.mean().as_f64(),
        map,
    })
}

/// 2×2 mean pooling with stride 2 (odd trailing rows/columns dropped).
pub fn downsample2<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    x.depthwise_conv2d(&Tensor::full(&[2, 2], T::lit(0.25)), 2, 0)
}

/// Differentiable MS-SSIM.
///
/// Per image and channel, `Π_{m<M} mean(cs_m)^β_m · mean(l_M·cs_M)^β_M`, then
/// averaged over batch and channels. Powers are taken sign-preservingly so a
/// negative score stays negative. If the image is too small for all `M`
/// levels the pyramid is shortened with a warning.
pub fn ms_ssim_var<T: Scalar>(a: &Var<T>, b: &Var<T>, cfg: &MsSsimConfig) -> Result<Var<T>> {
    if cfg.levels() == 0 {
        return Err(Error::invalid("MS-SSIM needs at least one level"));
    }
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "images differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (_, _, h, w) = a.value().dims4()?;
    let levels = cfg.usable_levels(h, w);
    if levels == 0 {
        return Err(Error::shape(format!(
            "image {h}×{w} smaller than the {0}×{0} SSIM window",
            cfg.ssim.window_size
        )));
    }
    if levels < cfg.levels() && first_warning(h, w) {
        warn!(
            "MS-SSIM: {h}×{w} input supports {levels} of {} levels; using {levels}",
            cfg.levels()
        );
    }
    let weights = cfg.effective_weights(levels);
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut product: Option<Var<T>> = None;
    for (m, &beta) in weights.iter().enumerate() {
        let maps = ssim_maps(&x, &y, &cfg.ssim)?;
        let term = if m + 1 == levels {
            maps.luminance.mul(&maps.contrast_structure)?
        } else {
            maps.contrast_structure
        };
        let factor = term.global_avg_pool()?.signed_pow(beta);
        product = Some(match product {
            None => factor,
            Some(p) => p.mul(&factor)?,
        });
        if m + 1 < levels {
            x = downsample2(&x)?;
            y = downsample2(&y)?;
        }
    }
    Ok(product.expect("at least one level").mean())
}

/// True the first time a given input size is seen, so the level-reduction
/// warning is logged once per size rather than once per training step.
fn first_warning(h: usize, w: usize) -> bool {
    static SEEN: OnceLock<Mutex<HashSet<(usize, usize)>>> = OnceLock::new();
    let mut seen = SEEN.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    seen.insert((h, w))
}

pub fn ms_ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &MsSsimConfig) -> Result<f64> {
    check_pair(a, b)?;
    let v = ms_ssim_var(&Var::constant(a.clone()), &Var::constant(b.clone()), cfg)?;
    Ok(v.item().as_f64())
}

/// Pooled gray-level statistics on the 0–255 scale.
///
/// `std` is the population standard deviation; this is the dispersion figure
/// that brightness-matching compares across datasets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayStats {
    pub mean: f64,
    pub std: f64,
    pub pixels: usize,
}

/// Gray value `(R + G + B)/3 · 255` of each pixel of 3-channel images
/// (`3×H×W` or `B×3×H×W`), pooled over all images.
pub fn gray_stats<T: Scalar>(images: &[Tensor<T>]) -> Result<GrayStats> {
    if images.is_empty() {
        return Err(Error::invalid("gray_stats needs at least one image"));
    }
    let (mut sum, mut sum_sq, mut n) = (0.0f64, 0.0f64, 0usize);
    for img in images {
        for g in gray_values(img)? {
            sum += g;
            sum_sq += g * g;
            n += 1;
        }
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok(GrayStats {
        mean,
        std: var.sqrt(),
        pixels: n,
    })
}

pub(crate) fn gray_values<T: Scalar>(img: &Tensor<T>) -> Result<Vec<f64>> {
    let (b, c, h, w) = match img.shape() {
        [c, h, w] => (1, *c, *h, *w),
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(Error::shape(format!("expected an RGB image, got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = img.data();
    let mut out = Vec::with_capacity(b * plane);
    for bi in 0..b {
        let base = bi * 3 * plane;
        for p in 0..plane {
            let s = d[base + p] + d[base + plane + p] + d[base + 2 * plane + p];
            out.push(s.as_f64() / 3.0 * 255.0);
        }
    }
    Ok(out)
}
