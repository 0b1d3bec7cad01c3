//! Two-dimensional Haar wavelet transform as fixed stride-2 convolutions.
//!
//! The four analysis filters are used unnormalized:
//!
//! ```text
//! f_ll = [ 1  1]   f_lh = [-1 -1]   f_hl = [-1  1]   f_hh = [ 1 -1]
//!        [ 1  1]          [ 1  1]          [-1  1]          [-1  1]
//! ```
//!
//! Each subband is the stride-2 valid cross-correlation of every channel with
//! one filter, so `ll(i, j)` is the plain sum of the 2×2 block at `(2i, 2j)`.
//! The filters are mutually orthogonal with squared norm 4, hence the inverse
//! is the transposed transform scaled by 1/4 and
//! `Σ(ll² + lh² + hl² + hh²) = 4 · Σ x²`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

pub const F_LL: [[f64; 2]; 2] = [[1.0, 1.0], [1.0, 1.0]];
pub const F_LH: [[f64; 2]; 2] = [[-1.0, -1.0], [1.0, 1.0]];
pub const F_HL: [[f64; 2]; 2] = [[-1.0, 1.0], [-1.0, 1.0]];
pub const F_HH: [[f64; 2]; 2] = [[1.0, -1.0], [-1.0, 1.0]];

/// The fixed Haar analysis filters in subband order `ll, lh, hl, hh`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaarFilters;

impl HaarFilters {
    pub const ALL: [[[f64; 2]; 2]; 4] = [F_LL, F_LH, F_HL, F_HH];

    pub fn kernel<T: Scalar>(band: usize) -> Tensor<T> {
        let f = Self::ALL[band];
        Tensor::from_fn(&[2, 2], |i| T::lit(f[i / 2][i % 2]))
    }
}

/// One level of decomposition. All four bands share a shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Subbands<V> {
    pub ll: V,
    pub lh: V,
    pub hl: V,
    pub hh: V,
}

impl<V> Subbands<V> {
    pub fn as_array(&self) -> [&V; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&V) -> U) -> Subbands<U> {
        Subbands {
            ll: f(&self.ll),
            lh: f(&self.lh),
            hl: f(&self.hl),
            hh: f(&self.hh),
        }
    }
}

impl<T: Scalar> Subbands<Tensor<T>> {
    /// `Σ` of squared coefficients over all four bands.
    pub fn energy(&self) -> T {
        self.as_array().iter().map(|b| b.sum_sq()).sum()
    }

    /// Energy of the three detail bands only.
    pub fn detail_energy(&self) -> T {
        self.lh.sum_sq() + self.hl.sum_sq() + self.hh.sum_sq()
    }
}

/// Differentiable forward transform of a rank-4 tensor with even extents.
pub fn dwt2_var<T: Scalar>(x: &Var<T>) -> Result<Subbands<Var<T>>> {
    let (_, _, h, w) = x.value().dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "dwt2 needs even height and width, got {h}×{w} (enable padding for odd sizes)"
        )));
    }
    let band = |i: usize| x.depthwise_conv2d(&HaarFilters::kernel(i), 2, 0);
    Ok(Subbands {
        ll: band(0)?,
        lh: band(1)?,
        hl: band(2)?,
        hh: band(3)?,
    })
}

/// Differentiable inverse: `x = ¼ Σ_b convᵀ(band_b, f_b)`.
pub fn idwt2_var<T: Scalar>(s: &Subbands<Var<T>>) -> Result<Var<T>> {
    let shape = s.ll.shape();
    for b in s.as_array() {
        if b.shape() != shape {
            return Err(Error::shape(format!(
                "subband shapes differ: {:?} vs {:?}",
                b.shape(),
                shape
            )));
        }
    }
    s.ll.value().dims4()?;
    let up = |v: &Var<T>, i: usize| v.depthwise_conv_transpose2d(&HaarFilters::kernel(i), 2);
    let sum = up(&s.ll, 0)?
        .add(&up(&s.lh, 1)?)?
        .add(&up(&s.hl, 2)?)?
        .add(&up(&s.hh, 3)?)?;
    Ok(sum.scale(0.25))
}

/// Forward transform of a plain tensor. Odd extents are an error.
pub fn dwt2<T: Scalar>(x: &Tensor<T>) -> Result<Subbands<Tensor<T>>> {
    let s = dwt2_var(&Var::constant(x.clone()))?;
    Ok(s.map(|v| v.value().clone()))
}

pub fn idwt2<T: Scalar>(s: &Subbands<Tensor<T>>) -> Result<Tensor<T>> {
    let vars = s.map(|t| Var::constant(t.clone()));
    Ok(idwt2_var(&vars)?.value().clone())
}

/// Forward transform that reflect-pads odd extents on the bottom/right edge
/// when `pad` is set, and errors on them otherwise.
pub fn dwt2_padded<T: Scalar>(x: &Tensor<T>, pad: bool) -> Result<Subbands<Tensor<T>>> {
    if pad {
        dwt2(&reflect_pad_even(x)?)
    } else {
        dwt2(x)
    }
}

/// Extends odd height/width by one row/column mirrored about the last one
/// (`x[n] = x[n − 2]`, or a copy of the edge for extent 1).
pub fn reflect_pad_even<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let (ph, pw) = (h + h % 2, w + w % 2);
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let mirror = |i: usize, n: usize| {
        if i < n {
            i
        } else if n >= 2 {
            n - 2
        } else {
            0
        }
    };
    let mut data = Vec::with_capacity(b * c * ph * pw);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..ph {
                for xx in 0..pw {
                    data.push(x.at4(bi, ci, mirror(y, h), mirror(xx, w)));
                }
            }
        }
    }
    Tensor::new(&[b, c, ph, pw], data)
}

/// Keeps the top-left `h×w` window of a rank-4 tensor.
pub fn crop<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (b, c, xh, xw) = x.dims4()?;
    if h > xh || w > xw {
        return Err(Error::shape(format!("cannot crop {xh}×{xw} to {h}×{w}")));
    }
    let mut data = Vec::with_capacity(b * c * h * w);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                let off = x.idx4(bi, ci, y, 0);
                data.extend_from_slice(&x.data()[off..off + w]);
            }
        }
    }
    Tensor::new(&[b, c, h, w], data)
}

/// A cascade of transforms, finest level first.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid<T> {
    pub levels: Vec<Subbands<Tensor<T>>>,
    /// Spatial size of the input to each level, before any padding.
    pub input_sizes: Vec<(usize, usize)>,
}

impl<T: Scalar> Pyramid<T> {
    /// Rebuilds the original input by inverting from the coarsest level up.
    pub fn reconstruct(&self) -> Result<Tensor<T>> {
        let coarsest = self
            .levels
            .last()
            .ok_or_else(|| Error::invalid("empty pyramid"))?;
        let mut ll = coarsest.ll.clone();
        for (level, &(h, w)) in self.levels.iter().zip(&self.input_sizes).rev() {
            let s = Subbands {
                ll,
                lh: level.lh.clone(),
                hl: level.hl.clone(),
                hh: level.hh.clone(),
            };
            ll = crop(&idwt2(&s)?, h, w)?;
        }
        Ok(ll)
    }
}

/// Applies the transform `levels` times, each time to the previous `ll`.
pub fn dwt_multi<T: Scalar>(x: &Tensor<T>, levels: usize, pad: bool) -> Result<Pyramid<T>> {
    if levels == 0 {
        return Err(Error::invalid("levels must be positive"));
    }
    let (_, _, h, w) = x.dims4()?;
    let div = 1usize << levels;
    if !pad && (h % div != 0 || w % div != 0) {
        return Err(Error::shape(format!(
            "{h}×{w} is not divisible by 2^{levels} = {div}"
        )));
    }
    let mut out = Pyramid {
        levels: Vec::with_capacity(levels),
        input_sizes: Vec::with_capacity(levels),
    };
    let mut cur = x.clone();
    for _ in 0..levels {
        let (_, _, ch, cw) = cur.dims4()?;
        out.input_sizes.push((ch, cw));
        let s = dwt2_padded(&cur, pad)?;
        cur = s.ll.clone();
        out.levels.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(h: usize, w: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[1, 1, h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn two_by_two_hand_example() {
        let s = dwt2(&img(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.ll.data(), &[10.0]);
        assert_eq!(s.lh.data(), &[4.0]);
        assert_eq!(s.hl.data(), &[2.0]);
        assert_eq!(s.hh.data(), &[0.0]);
        assert_eq!(idwt2(&s).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_image() {
        let c = 0.37;
        let s = dwt2(&Tensor::<f64>::full(&[2, 3, 6, 4], c)).unwrap();
        assert!(s.ll.data().iter().all(|&v| v == 4.0 * c));
        for b in [&s.lh, &s.hl, &s.hh] {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn inverse_of_constant_ll() {
        let z = img(1, 1, &[0.0]);
        let s = Subbands {
            ll: img(1, 1, &[4.0]),
            lh: z.clone(),
            hl: z.clone(),
            hh: z.clone(),
        };
        assert_eq!(idwt2(&s).unwrap().data(), &[1.0; 4]);
        let zeros = Subbands {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
        };
        assert!(idwt2(&zeros).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_extent_needs_padding() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 4]);
        assert!(dwt2(&x).is_err());
        let s = dwt2_padded(&x, true).unwrap();
        assert_eq!(s.ll.shape(), &[1, 1, 2, 2]);
        let p = reflect_pad_even(&img(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn mismatched_subbands_rejected() {
        let s = Subbands {
            ll: Tensor::<f64>::zeros(&[1, 1, 2, 2]),
            lh: Tensor::zeros(&[1, 1, 2, 2]),
            hl: Tensor::zeros(&[1, 1, 2, 3]),
            hh: Tensor::zeros(&[1, 1, 2, 2]),
        };
        assert!(idwt2(&s).is_err());
    }

    #[test]
    fn filters_are_orthogonal_with_norm_four() {
        for (i, a) in HaarFilters::ALL.iter().enumerate() {
            for (j, b) in HaarFilters::ALL.iter().enumerate() {
                let dot: f64 = (0..4).map(|k| a[k / 2][k % 2] * b[k / 2][k % 2]).sum();
                assert_eq!(dot, if i == j { 4.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn multi_level_constant_and_round_trip() {
        let c = 0.5;
        let p = dwt_multi(&Tensor::<f64>::full(&[1, 2, 16, 8], c), 3, false).unwrap();
        assert_eq!(p.levels.len(), 3);
        let last = p.levels.last().unwrap();
        assert!(last.ll.data().iter().all(|&v| v == 64.0 * c));
        for lvl in &p.levels {
            assert_eq!(lvl.detail_energy(), 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::uniform(&[2, 3, 16, 24], -1.0, 1.0, &mut rng);
        let p = dwt_multi(&x, 3, false).unwrap();
        assert!(p.reconstruct().unwrap().max_abs_diff(&x).unwrap() < 1e-10);
        let one = dwt_multi(&x, 1, false).unwrap();
        assert_eq!(one.levels[0], dwt2(&x).unwrap());
        assert!(dwt_multi(&x, 4, false).is_err());
    }

    #[test]
    fn padded_pyramid_round_trips_odd_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::uniform(&[1, 3, 13, 7], 0.0, 1.0, &mut rng);
        let p = dwt_multi(&x, 2, true).unwrap();
        assert!(p.reconstruct().unwrap().max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(&[1, 2, 8, 8], -1.0, 1.0, &mut rng);
        let y = Tensor::<f64>::uniform(&[1, 2, 8, 8], -1.0, 1.0, &mut rng);
        let (a, b) = (0.75, -2.5);
        let comb = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let (sx, sy, sc) = (dwt2(&x).unwrap(), dwt2(&y).unwrap(), dwt2(&comb).unwrap());
        for ((bx, by), bc) in sx.as_array().iter().zip(sy.as_array()).zip(sc.as_array()) {
            let expect = bx.zip_map(by, |p, q| a * p + b * q).unwrap();
            assert!(expect.max_abs_diff(bc).unwrap() < 1e-12);
        }
    }

    #[test]
    fn gradients_of_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f64>::uniform(&[1, 2, 4, 6], -1.0, 1.0, &mut rng);
        let wts: Vec<Tensor<f64>> = (0..4)
            .map(|_| Tensor::uniform(&[1, 2, 2, 3], -1.0, 1.0, &mut rng))
            .collect();
        let r = grad_check(
            |v| {
                let s = dwt2_var(v)?;
                let mut acc = Var::constant(Tensor::scalar(0.0));
                for (band, w) in s.as_array().into_iter().zip(&wts) {
                    acc = acc.add(&band.mul(&Var::constant(w.clone()))?.sum())?;
                }
                Ok(acc)
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");

        let w = Tensor::<f64>::uniform(&[1, 2, 4, 6], -1.0, 1.0, &mut rng);
        let lh = Tensor::<f64>::uniform(&[1, 2, 2, 3], -1.0, 1.0, &mut rng);
        let r = grad_check(
            |v| {
                let s = Subbands {
                    ll: v.clone(),
                    lh: Var::constant(lh.clone()),
                    hl: v.scale(2.0),
                    hh: v.square(),
                };
                Ok(idwt2_var(&s)?.mul(&Var::constant(w.clone()))?.sum())
            },
            &Tensor::uniform(&[1, 2, 2, 3], -1.0, 1.0, &mut rng),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn round_trip_and_energy(seed in any::<u64>(), hh in 1usize..=16, hw in 1usize..=16, c in 1usize..=3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = Tensor::<f64>::uniform(&[1, c, 2 * hh, 2 * hw], -2.0, 2.0, &mut rng);
                let s = dwt2(&x).unwrap();
                prop_assert!(idwt2(&s).unwrap().max_abs_diff(&x).unwrap() < 1e-12);
                let e = x.sum_sq();
                prop_assert!((s.energy() - 4.0 * e).abs() <= 1e-12 * 4.0 * e);
            }

            #[test]
            fn constant_image_has_no_detail(v in -3.0f64..3.0, h in 1usize..=8, w in 1usize..=8) {
                let x = Tensor::<f64>::full(&[1, 1, 2 * h, 2 * w], v);
                let s = dwt2(&x).unwrap();
                prop_assert_eq!(s.detail_energy(), 0.0);
                prop_assert!(s.ll.data().iter().all(|&l| (l - 4.0 * v).abs() < 1e-12));
            }

            #[test]
            fn padded_pyramid_reconstructs(seed in any::<u64>(), h in 1usize..=24, w in 1usize..=24, levels in 1usize..=3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = Tensor::<f64>::uniform(&[1, 2, h, w], 0.0, 1.0, &mut rng);
                let p = dwt_multi(&x, levels, true).unwrap();
                prop_assert!(p.reconstruct().unwrap().max_abs_diff(&x).unwrap() < 1e-12);
            }
        }
    }
}
