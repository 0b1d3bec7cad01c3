//! Synthetic hazy/clear image pairs from the atmospheric scattering model
//! `I = J·t + A·(1 − t)` with transmission `t = exp(−β·d)`.
//!
//! Homogeneous haze draws `β ~ U[0.6, 1.8]` and a gray airlight
//! `A ~ U[0.7, 1.0]` over a synthetic depth map (ramp, radial or smooth
//! noise, normalized to `[0, 1]`). Non-homogeneous haze skips depth and uses
//! a density field of random anisotropic Gaussian blobs directly as `1 − t`.
//!
//! Generation is deterministic: item `i` of a dataset seeded with `s` uses
//! its own generator seeded with [`item_seed`]`(s, i)`, so items can be
//! produced in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA_RANGE: (f64, f64) = (0.6, 1.8);
pub const AIRLIGHT_RANGE: (f64, f64) = (0.7, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazeMode {
    Homogeneous,
    Nonhomogeneous,
}

impl std::str::FromStr for HazeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogeneous" => Ok(Self::Homogeneous),
            "nonhomogeneous" | "non-homogeneous" => Ok(Self::Nonhomogeneous),
            _ => Err(Error::invalid(format!(
                "unknown haze mode `{s}` (expected homogeneous or nonhomogeneous)"
            ))),
        }
    }
}

/// Spatial haze description, an `H×W` field.
#[derive(Clone, Debug, PartialEq)]
pub enum HazeField {
    /// Relative depth `d ≥ 0` with scattering coefficient `β ≥ 0`.
    Depth { beta: f64, depth: Tensor<f64> },
    /// Haze density `1 − t ∈ [0, 1]`.
    Density(Tensor<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HazeParams {
    /// Atmospheric light per RGB channel.
    pub airlight: [f64; 3],
    pub field: HazeField,
}

impl HazeParams {
    pub fn new(airlight: [f64; 3], field: HazeField) -> Result<Self> {
        if airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid(format!("airlight {airlight:?} outside [0, 1]")));
        }
        match &field {
            HazeField::Depth { beta, depth } => {
                transmission(depth, *beta)?;
            }
            HazeField::Density(d) => {
                if d.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::invalid("density field outside [0, 1]"));
                }
            }
        }
        Ok(Self { airlight, field })
    }

    pub fn mode(&self) -> HazeMode {
        match self.field {
            HazeField::Depth { .. } => HazeMode::Homogeneous,
            HazeField::Density(_) => HazeMode::Nonhomogeneous,
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self.field {
            HazeField::Depth { beta, .. } => Some(beta),
            HazeField::Density(_) => None,
        }
    }

    pub fn transmission(&self) -> Result<Tensor<f64>> {
        match &self.field {
            HazeField::Depth { beta, depth } => transmission(depth, *beta),
            HazeField::Density(d) => Ok(d.map(|v| 1.0 - v)),
        }
    }
}

/// `t = exp(−β·d)` elementwise.
pub fn transmission<T: Scalar>(depth: &Tensor<T>, beta: f64) -> Result<Tensor<T>> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("scattering coefficient {beta} is negative")));
    }
    if depth.data().iter().any(|&d| !(d >= T::zero())) {
        return Err(Error::invalid("depth field has negative entries"));
    }
    let b = T::lit(beta);
    Ok(depth.map(|d| (-b * d).exp()))
}

fn image_dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match img.shape() {
        [3, h, w] => Ok((1, *h, *w)),
        [b, 3, h, w] => Ok((*b, *h, *w)),
        s => Err(Error::shape(format!("expected an RGB image, got shape {s:?}"))),
    }
}

/// `I = J·t + A·(1 − t)` for an RGB image (`3×H×W` or `B×3×H×W`) and an
/// `H×W` transmission field shared by all channels.
pub fn apply_haze<T: Scalar>(clear: &Tensor<T>, t: &Tensor<T>, airlight: [f64; 3]) -> Result<Tensor<T>> {
    let (b, h, w) = image_dims(clear)?;
    if t.shape() != [h, w] {
        return Err(Error::shape(format!(
            "transmission {:?} does not match image {h}×{w}",
            t.shape()
        )));
    }
    let unit = |v: T| v >= T::zero() && v <= T::one();
    if !clear.data().iter().all(|&v| unit(v)) {
        return Err(Error::invalid("clear image values outside [0, 1]"));
    }
    if !t.data().iter().all(|&v| unit(v)) {
        return Err(Error::invalid("transmission values outside [0, 1]"));
    }
    if airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::invalid(format!("airlight {airlight:?} outside [0, 1]")));
    }
    let plane = h * w;
    let mut out = clear.clone();
    for bi in 0..b {
        for (c, &a) in airlight.iter().enumerate() {
            let a = T::lit(a);
            let off = (bi * 3 + c) * plane;
            for (v, &tv) in out.data_mut()[off..off + plane].iter_mut().zip(t.data()) {
                *v = *v * tv + a * (T::one() - tv);
            }
        }
    }
    Ok(out)
}

/// Recovers `J = (I − A·(1 − t)) / t`. Unstable where `t` is small.
pub fn remove_haze<T: Scalar>(hazy: &Tensor<T>, t: &Tensor<T>, airlight: [f64; 3]) -> Result<Tensor<T>> {
    let (b, h, w) = image_dims(hazy)?;
    if t.shape() != [h, w] {
        return Err(Error::shape("transmission does not match image"));
    }
    if t.data().iter().any(|&v| v <= T::zero()) {
        return Err(Error::invalid("transmission must be positive to invert"));
    }
    let plane = h * w;
    let mut out = hazy.clone();
    for bi in 0..b {
        for (c, &a) in airlight.iter().enumerate() {
            let a = T::lit(a);
            let off = (bi * 3 + c) * plane;
            for (v, &tv) in out.data_mut()[off..off + plane].iter_mut().zip(t.data()) {
                *v = (*v - a * (T::one() - tv)) / tv;
            }
        }
    }
    Ok(out)
}

/// Rescales a field linearly onto `[0, 1]`; constant fields become zero.
fn normalize01(field: &mut [f64]) {
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    for v in field.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Sum of a few random low-frequency cosines, a cheap smooth noise.
fn smooth_noise<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, waves: usize) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64, f64)> = (0..waves)
        .map(|_| {
            (
                rng.gen_range(-2.5..2.5),
                rng.gen_range(-2.5..2.5),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let s: f64 = comps
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (std::f64::consts::TAU * (fx * u + fy * v) + ph).cos())
                .sum();
            out.push(s);
        }
    }
    out
}

/// A synthetic relative depth map in `[0, 1]`: a linear ramp, a radial
/// gradient or smooth noise, chosen at random.
pub fn synthetic_depth<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Tensor<f64> {
    let mut d: Vec<f64> = match rng.gen_range(0..3) {
        0 => {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (c, s) = (angle.cos(), angle.sin());
            (0..h * w)
                .map(|i| c * (i % w) as f64 / w as f64 + s * (i / w) as f64 / h as f64)
                .collect()
        }
        1 => {
            let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
            (0..h * w)
                .map(|i| {
                    let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
                    (dy * dy + dx * dx).sqrt()
                })
                .collect()
        }
        _ => smooth_noise(rng, h, w, 4),
    };
    normalize01(&mut d);
    Tensor::new(&[h, w], d).expect("depth shape")
}

pub fn sample_homogeneous<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> HazeParams {
    let beta = rng.gen_range(BETA_RANGE.0..=BETA_RANGE.1);
    let a = rng.gen_range(AIRLIGHT_RANGE.0..=AIRLIGHT_RANGE.1);
    let depth = synthetic_depth(rng, h, w);
    HazeParams {
        airlight: [a; 3],
        field: HazeField::Depth { beta, depth },
    }
}

/// Haze density built from `blobs` random anisotropic Gaussian bumps,
/// clipped to `[0, 1]`.
pub fn nonhomogeneous_field<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, blobs: usize) -> Result<Tensor<f64>> {
    if h < 8 || w < 8 {
        return Err(Error::invalid(format!("density field needs at least 8×8, got {h}×{w}")));
    }
    let mut field = vec![0.0; h * w];
    for _ in 0..blobs {
        let amp = rng.gen_range(0.3..0.9);
        let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let sy = rng.gen_range(0.1..0.45) * h as f64;
        let sx = rng.gen_range(0.1..0.45) * w as f64;
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (c, s) = (theta.cos(), theta.sin());
        for (i, v) in field.iter_mut().enumerate() {
            let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
            let (u, q) = (c * dx + s * dy, -s * dx + c * dy);
            *v += amp * (-0.5 * (u * u / (sx * sx) + q * q / (sy * sy))).exp();
        }
    }
    field.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::new(&[h, w], field)
}

pub fn sample_nonhomogeneous<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Result<HazeParams> {
    let a = rng.gen_range(AIRLIGHT_RANGE.0..=AIRLIGHT_RANGE.1);
    let blobs = rng.gen_range(2..=5);
    Ok(HazeParams {
        airlight: [a; 3],
        field: HazeField::Density(nonhomogeneous_field(rng, h, w, blobs)?),
    })
}

/// A bundled clear image, `1×3×size×size` in `[0, 1]`: checkerboard, colour
/// gradient, smooth coloured noise or stripes, chosen at random.
pub fn procedural_image<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Tensor<f64> {
    let plane = size * size;
    let color = |rng: &mut R| -> [f64; 3] { [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)] };
    let (c0, c1) = (color(rng), color(rng));
    let mix = |t: f64| -> [f64; 3] { [0, 1, 2].map(|c| c0[c] * (1.0 - t) + c1[c] * t) };
    let mut data = vec![0.0; 3 * plane];
    let mut put = |i: usize, rgb: [f64; 3]| {
        for c in 0..3 {
            data[c * plane + i] = rgb[c].clamp(0.0, 1.0);
        }
    };
    match rng.gen_range(0..4) {
        0 => {
            let cell = rng.gen_range(3..=size.max(4) / 2);
            for i in 0..plane {
                let (y, x) = (i / size, i % size);
                put(i, mix(((y / cell + x / cell) % 2) as f64));
            }
        }
        1 => {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (c, s) = (angle.cos(), angle.sin());
            let mut t: Vec<f64> = (0..plane)
                .map(|i| c * (i % size) as f64 + s * (i / size) as f64)
                .collect();
            normalize01(&mut t);
            for (i, &tv) in t.iter().enumerate() {
                put(i, mix(tv));
            }
        }
        2 => {
            let chans: Vec<Vec<f64>> = (0..3)
                .map(|_| {
                    let mut n = smooth_noise(rng, size, size, 5);
                    normalize01(&mut n);
                    n
                })
                .collect();
            for i in 0..plane {
                put(i, [chans[0][i], chans[1][i], chans[2][i]]);
            }
        }
        _ => {
            // text-like: short horizontal strokes of varying length on rows
            let pitch = rng.gen_range(3..=6);
            let strokes: Vec<(usize, usize)> = (0..size)
                .map(|_| {
                    let a = rng.gen_range(0..size);
                    (a, (a + rng.gen_range(2..=size / 2)).min(size))
                })
                .collect();
            for i in 0..plane {
                let (y, x) = (i / size, i % size);
                let row = y / pitch;
                let (a, b) = strokes[row % size];
                let ink = y % pitch < pitch / 2 + 1 && (a..b).contains(&x);
                put(i, mix(if ink { 1.0 } else { 0.0 }));
            }
        }
    }
    Tensor::new(&[1, 3, size, size], data).expect("procedural image")
}

/// SplitMix64 of `seed` combined with an item index.
pub fn item_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HazePair {
    /// `1×3×H×W`
    pub clear: Tensor<f64>,
    pub hazy: Tensor<f64>,
    pub params: HazeParams,
    pub seed: u64,
}

impl HazePair {
    /// Rebuilds the hazy image from the clear one and the stored parameters.
    pub fn rehaze(&self) -> Result<Tensor<f64>> {
        apply_haze(&self.clear, &self.params.transmission()?, self.params.airlight)
    }
}

/// Where clear images come from.
#[derive(Clone, Debug)]
pub enum ImageSource {
    /// Bundled procedural textures of the given side length.
    Procedural { size: usize },
    /// User images, cycled in order.
    Images(Vec<Tensor<f64>>),
}

pub fn make_pair(clear: Tensor<f64>, mode: HazeMode, seed: u64) -> Result<HazePair> {
    let (_, h, w) = image_dims(&clear)?;
    let clear = if clear.rank() == 3 { clear.reshape(&[1, 3, h, w])? } else { clear };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = match mode {
        HazeMode::Homogeneous => sample_homogeneous(&mut rng, h, w),
        HazeMode::Nonhomogeneous => sample_nonhomogeneous(&mut rng, h, w)?,
    };
    let hazy = apply_haze(&clear, &params.transmission()?, params.airlight)?;
    Ok(HazePair {
        clear,
        hazy,
        params,
        seed,
    })
}

/// `n` pairs; item `i` is fully determined by `item_seed(seed, i)`.
pub fn make_dataset(n: usize, mode: HazeMode, source: &ImageSource, seed: u64) -> Result<Vec<HazePair>> {
    if let ImageSource::Images(v) = source {
        if v.is_empty() {
            return Err(Error::invalid("image source is empty"));
        }
    }
    (0..n)
        .map(|i| {
            let s = item_seed(seed, i as u64);
            let clear = match source {
                ImageSource::Procedural { size } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5EED_1A6E);
                    procedural_image(&mut rng, *size)
                }
                ImageSource::Images(v) => v[i % v.len()].clone(),
            };
            make_pair(clear, mode, s)
        })
        .collect()
}

/// One line of the JSON-lines sidecar written next to synthesized pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index: usize,
    pub seed: u64,
    pub beta: Option<f64>,
    #[serde(rename = "A")]
    pub airlight: [f64; 3],
    pub mode: HazeMode,
    pub clear: String,
    pub hazy: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transmission_cases() {
        let d = Tensor::<f64>::new(&[1, 3], vec![0.0, 2f64.ln(), 1.0]).unwrap();
        let t = transmission(&d, 1.0).unwrap();
        assert_eq!(t.data()[0], 1.0);
        assert!((t.data()[1] - 0.5).abs() < 1e-15);
        assert!(transmission(&d, 0.0).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(transmission(&d, -0.1).is_err());
        let neg = Tensor::<f64>::new(&[1], vec![-1.0]).unwrap();
        assert!(transmission(&neg, 1.0).is_err());
    }

    #[test]
    fn apply_haze_cases() {
        let j = Tensor::<f64>::full(&[3, 2, 2], 0.2);
        let ones = Tensor::<f64>::ones(&[2, 2]);
        assert_eq!(apply_haze(&j, &ones, [0.8; 3]).unwrap(), j);
        let zeros = Tensor::<f64>::zeros(&[2, 2]);
        assert!(apply_haze(&j, &zeros, [0.8, 0.7, 0.9]).unwrap().data()[..4].iter().all(|&v| v == 0.8));
        let half = Tensor::<f64>::full(&[2, 2], 0.5);
        let i = apply_haze(&j, &half, [0.8; 3]).unwrap();
        assert!(i.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(apply_haze(&j, &half, [1.2; 3]).is_err());
        assert!(apply_haze(&j.map(|v| v + 1.0), &half, [0.8; 3]).is_err());
        assert!(apply_haze(&j, &Tensor::full(&[2, 3], 0.5), [0.8; 3]).is_err());
    }

    #[test]
    fn sampled_params_in_range_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = sample_homogeneous(&mut rng, 8, 8);
            let b = p.beta().unwrap();
            assert!((0.6..=1.8).contains(&b));
            assert!((0.7..=1.0).contains(&p.airlight[0]));
            if let HazeField::Depth { depth, .. } = &p.field {
                assert!(depth.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        let a = sample_homogeneous(&mut ChaCha8Rng::seed_from_u64(5), 8, 8);
        let b = sample_homogeneous(&mut ChaCha8Rng::seed_from_u64(5), 8, 8);
        assert_eq!(a, b);
    }

    #[test]
    fn density_field_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = nonhomogeneous_field(&mut rng, 8, 8, 0).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let f = nonhomogeneous_field(&mut rng, 16, 12, 12).unwrap();
        assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(f.max_abs() > 0.0);
        assert!(nonhomogeneous_field(&mut rng, 7, 12, 1).is_err());
        let a = nonhomogeneous_field(&mut ChaCha8Rng::seed_from_u64(9), 10, 10, 3).unwrap();
        let b = nonhomogeneous_field(&mut ChaCha8Rng::seed_from_u64(9), 10, 10, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_identity_and_bounds() {
        assert!(make_dataset(0, HazeMode::Homogeneous, &ImageSource::Procedural { size: 16 }, 1)
            .unwrap()
            .is_empty());
        assert!(make_dataset(2, HazeMode::Homogeneous, &ImageSource::Images(vec![]), 1).is_err());
        for mode in [HazeMode::Homogeneous, HazeMode::Nonhomogeneous] {
            let pairs = make_dataset(12, mode, &ImageSource::Procedural { size: 16 }, 3).unwrap();
            for p in &pairs {
                assert_eq!(p.params.mode(), mode);
                assert!(p.rehaze().unwrap().max_abs_diff(&p.hazy).unwrap() <= 1e-12);
                let a = p.params.airlight[0];
                for (&i, &j) in p.hazy.data().iter().zip(p.clear.data()) {
                    assert!(i >= j.min(a) - 1e-15 && i <= j.max(a) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn inversion_recovers_clear() {
        let pairs = make_dataset(4, HazeMode::Homogeneous, &ImageSource::Procedural { size: 16 }, 8).unwrap();
        for p in pairs {
            let t = p.params.transmission().unwrap();
            assert!(t.data().iter().all(|&v| v >= 0.05));
            let j = remove_haze(&p.hazy, &t, p.params.airlight).unwrap();
            assert!(j.max_abs_diff(&p.clear).unwrap() < 1e-10);
        }
    }

    #[test]
    fn item_seeds_differ() {
        assert_ne!(item_seed(1, 0), item_seed(1, 1));
        assert_ne!(item_seed(1, 0), item_seed(2, 0));
        assert_eq!(item_seed(7, 3), item_seed(7, 3));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn haze_inverts_and_stays_in_range(seed in any::<u64>(), t_min in 0.05f64..1.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let j = Tensor::<f64>::uniform(&[1, 3, 6, 5], 0.0, 1.0, &mut rng);
                let t = Tensor::<f64>::uniform(&[6, 5], t_min, 1.0, &mut rng);
                let a = [rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0)];
                let i = apply_haze(&j, &t, a).unwrap();
                prop_assert!(i.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!(remove_haze(&i, &t, a).unwrap().max_abs_diff(&j).unwrap() < 1e-10);
            }

            #[test]
            fn transmission_decreases_with_beta(seed in any::<u64>(), b1 in 0.6f64..1.8, db in 0.0f64..1.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let d = synthetic_depth(&mut rng, 5, 7);
                let lo = transmission(&d, b1).unwrap();
                let hi = transmission(&d, b1 + db).unwrap();
                prop_assert!(lo.data().iter().zip(hi.data()).all(|(a, b)| b <= a && *b > 0.0 && *a <= 1.0));
            }

            #[test]
            fn pairs_regenerate_from_their_seed(seed in any::<u64>()) {
                let pairs = make_dataset(2, HazeMode::Nonhomogeneous, &ImageSource::Procedural { size: 16 }, seed).unwrap();
                for p in &pairs {
                    prop_assert!(p.rehaze().unwrap().max_abs_diff(&p.hazy).unwrap() < 1e-15);
                }
            }
        }
    }
}
