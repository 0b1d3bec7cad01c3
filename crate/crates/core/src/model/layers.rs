//! Building blocks shared by the generator branches.
//!
//! Inside the network the Haar transform is used in its orthonormal scaling
//! (subbands halved), so feature magnitudes do not grow by 4× per level.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Var, DEFAULT_LEAKY_SLOPE};
use crate::wavelet::{dwt2_var, idwt2_var, Subbands};

use super::params::Bound;

/// High-frequency skip `(lh, hl, hh)` handed from a down block to its up block.
pub type HighFreq<T> = [Var<T>; 3];

/// Orthonormal Haar analysis.
pub fn haar_down<T: Scalar>(x: &Var<T>) -> Result<Subbands<Var<T>>> {
    Ok(dwt2_var(x)?.map(|v| v.scale(0.5)))
}

/// Inverse of [`haar_down`].
pub fn haar_up<T: Scalar>(ll: &Var<T>, hf: &HighFreq<T>) -> Result<Var<T>> {
    let s = Subbands {
        ll: ll.scale(2.0),
        lh: hf[0].scale(2.0),
        hl: hf[1].scale(2.0),
        hh: hf[2].scale(2.0),
    };
    idwt2_var(&s)
}

/// Wavelet down-sampling block: `relu(mix(concat(conv_s2(x), ll)))`, plus the
/// detail subbands of `x`.
///
/// Parameters: `{p}.conv` (`c_out − c_in` filters, stride 2) and `{p}.mix`.
pub fn dwt_down<T: Scalar>(b: &Bound<T>, p: &str, x: &Var<T>) -> Result<(Var<T>, HighFreq<T>)> {
    let (_, _, h, w) = x.value().dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("dwt_down needs even size, got {h}×{w}")));
    }
    let bands = haar_down(x)?;
    let learned = b.conv(&format!("{p}.conv"), x, 2)?;
    let cat = Var::concat_channels(&[learned, bands.ll])?;
    let out = b.conv(&format!("{p}.mix"), &cat, 1)?.relu();
    Ok((out, [bands.lh, bands.hl, bands.hh]))
}

/// Plain down-sampling used when wavelet modules are switched off:
/// `relu(mix(relu(conv_s2(x))))`.
pub fn plain_down<T: Scalar>(b: &Bound<T>, p: &str, x: &Var<T>) -> Result<Var<T>> {
    let y = b.conv(&format!("{p}.conv"), x, 2)?.relu();
    Ok(b.conv(&format!("{p}.mix"), &y, 1)?.relu())
}

/// Wavelet up-sampling block.
///
/// `ll = proj(x)` (1×1) is recombined with the skip subbands by the inverse
/// transform; a learned path `pixel_shuffle(learn(x))` runs alongside; the
/// two are concatenated and mixed.
pub fn dwt_up<T: Scalar>(b: &Bound<T>, p: &str, x: &Var<T>, hf: &HighFreq<T>) -> Result<Var<T>> {
    for band in hf {
        let (_, _, h, w) = band.value().dims4()?;
        let (_, _, xh, xw) = x.value().dims4()?;
        if (h, w) != (xh, xw) {
            return Err(Error::shape(format!(
                "skip subband {h}×{w} does not match features {xh}×{xw}"
            )));
        }
    }
    let ll = b.conv(&format!("{p}.proj"), x, 1)?;
    if ll.shape()[1] != hf[0].shape()[1] {
        return Err(Error::shape(format!(
            "projected {} channels, skip has {}",
            ll.shape()[1],
            hf[0].shape()[1]
        )));
    }
    let wav = haar_up(&ll, hf)?;
    let learned = b.conv(&format!("{p}.learn"), x, 1)?.pixel_shuffle(2)?;
    let cat = Var::concat_channels(&[wav, learned])?;
    Ok(b.conv(&format!("{p}.mix"), &cat, 1)?.relu())
}

/// Up-sampling without the wavelet path: `relu(mix(pixel_shuffle(learn(x))))`.
pub fn plain_up<T: Scalar>(b: &Bound<T>, p: &str, x: &Var<T>) -> Result<Var<T>> {
    let up = b.conv(&format!("{p}.learn"), x, 1)?.pixel_shuffle(2)?;
    Ok(b.conv(&format!("{p}.mix"), &up, 1)?.relu())
}

/// `x · σ(W₂ lrelu(W₁ gap(x)))` per channel. Parameters `{p}.ca1`, `{p}.ca2`.
///
/// The bottleneck is leaky so a one-unit squeeze at narrow widths cannot die
/// at init.
pub fn channel_attention<T: Scalar>(b: &Bound<T>, p: &str, x: &Var<T>) -> Result<Var<T>> {
    if b.open_gates {
        return Ok(x.clone());
    }
    let g = x.global_avg_pool()?;
    let g = b.conv(&format!("{p}.ca1"), &g, 1)?.leaky_relu(DEFAULT_LEAKY_SLOPE);
    let g = b.conv(&format!("{p}.ca2"), &g, 1)?.sigmoid();
    x.scale_channels(&g)
}

/// `x · σ(W₂ lrelu(W₁ x))` per pixel. Parameters `{p}.pa1`, `{p}.pa2`.
pub fn pixel_attention<T: Scalar>(b: &Bound<T>, p: &str, x: &Var<T>) -> Result<Var<T>> {
    if b.open_gates {
        return Ok(x.clone());
    }
    let g = b.conv(&format!("{p}.pa1"), x, 1)?.leaky_relu(DEFAULT_LEAKY_SLOPE);
    let g = b.conv(&format!("{p}.pa2"), &g, 1)?.sigmoid();
    x.scale_pixels(&g)
}
