//! Training losses: smooth L1, MS-SSIM, perceptual and adversarial, plus
//! their weighted sum.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{downsample2, ms_ssim_var, MsSsimConfig};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor, Var};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// MS-SSIM weight.
    pub alpha: f64,
    /// Perceptual weight.
    pub beta: f64,
    /// Adversarial weight.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.001,
            gamma: 0.005,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("loss weight {name} = {v} must be ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Which optional terms contribute to the objective. Smooth L1 is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ms_ssim: bool,
    pub perceptual: bool,
    pub adversarial: bool,
}

impl LossTerms {
    pub const ALL: Self = Self {
        ms_ssim: true,
        perceptual: true,
        adversarial: true,
    };
    pub const L1_ONLY: Self = Self {
        ms_ssim: false,
        perceptual: false,
        adversarial: false,
    };
}

/// `0.5·e²`, the branch used for `|e| < 1`.
pub fn smooth_l1_quadratic(e: f64) -> f64 {
    0.5 * e * e
}

/// `|e| − 0.5`, the branch used for `|e| ≥ 1`.
pub fn smooth_l1_linear(e: f64) -> f64 {
    e.abs() - 0.5
}

pub fn smooth_l1_quadratic_slope(e: f64) -> f64 {
    e
}

pub fn smooth_l1_linear_slope(e: f64) -> f64 {
    e.signum()
}

/// Per-term penalty as used by the engine.
pub fn smooth_l1_term(e: f64) -> f64 {
    tensor::smooth_l1_value(e)
}

pub fn smooth_l1_derivative(e: f64) -> f64 {
    tensor::smooth_l1_slope(e)
}

fn same_shape<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean smooth-L1 penalty over every element.
pub fn smooth_l1<T: Scalar>(pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    same_shape(pred, target)?;
    Ok(pred.sub(target)?.smooth_l1().mean())
}

pub fn ms_ssim_loss<T: Scalar>(pred: &Var<T>, target: &Var<T>, cfg: &MsSsimConfig) -> Result<Var<T>> {
    same_shape(pred, target)?;
    Ok(ms_ssim_var(pred, target, cfg)?.neg().add_scalar(1.0))
}

/// A network producing three stages of feature maps from an RGB batch.
pub trait FeatureExtractor<T: Scalar> {
    fn features(&self, x: &Var<T>) -> Result<Vec<Var<T>>>;
}

/// The input itself at full, half and quarter resolution.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn features(&self, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let half = downsample2(x)?;
        let quarter = downsample2(&half)?;
        Ok(vec![x.clone(), half, quarter])
    }
}

/// Fixed three-stage strided convolution encoder (3→8→16→32 channels,
/// 3×3 kernels, stride 2, ReLU). Weights are seeded, never trained, and can
/// be replaced from tensor files.
#[derive(Clone, Debug)]
pub struct ToyExtractor<T: Scalar> {
    stages: Vec<(Tensor<T>, Tensor<T>)>,
}

pub const TOY_EXTRACTOR_WIDTHS: [usize; 4] = [3, 8, 16, 32];

impl<T: Scalar> ToyExtractor<T> {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = TOY_EXTRACTOR_WIDTHS
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] * 9) as f64).sqrt();
                (
                    Tensor::uniform(&[w[1], w[0], 3, 3], -bound, bound, &mut rng),
                    Tensor::zeros(&[w[1]]),
                )
            })
            .collect();
        Self { stages }
    }

    pub fn from_stages(stages: Vec<(Tensor<T>, Tensor<T>)>) -> Result<Self> {
        if stages.len() != 3 {
            return Err(Error::invalid(format!("extractor needs 3 stages, got {}", stages.len())));
        }
        let mut cin = 3;
        for (j, (w, b)) in stages.iter().enumerate() {
            let s = w.shape();
            if s.len() != 4 || s[1] != cin || b.shape() != [s[0]] {
                return Err(Error::shape(format!(
                    "stage {j}: kernel {:?} / bias {:?} do not chain from {cin} channels",
                    s,
                    b.shape()
                )));
            }
            cin = s[0];
        }
        Ok(Self { stages })
    }

    /// Reads `stage{j}.weight.bin` and `stage{j}.bias.bin` for `j = 0, 1, 2`.
    pub fn load(dir: &Path) -> Result<Self> {
        let stages = (0..3)
            .map(|j| {
                Ok((
                    tensor::io::load(&dir.join(format!("stage{j}.weight.bin")))?,
                    tensor::io::load(&dir.join(format!("stage{j}.bias.bin")))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_stages(stages)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (j, (w, b)) in self.stages.iter().enumerate() {
            tensor::io::save(w, &dir.join(format!("stage{j}.weight.bin")))?;
            tensor::io::save(b, &dir.join(format!("stage{j}.bias.bin")))?;
        }
        Ok(())
    }
}

impl<T: Scalar> FeatureExtractor<T> for ToyExtractor<T> {
    fn features(&self, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let mut h = x.clone();
        let mut out = Vec::with_capacity(3);
        for (w, b) in &self.stages {
            let k = kernel_size(w);
            h = h
                .conv2d(&Var::constant(w.clone()), 2, k / 2)?
                .bias_add(&Var::constant(b.clone()))?
                .relu();
            out.push(h.clone());
        }
        Ok(out)
    }
}

fn kernel_size<T: Scalar>(w: &Tensor<T>) -> usize {
    w.shape()[2]
}

/// `Σ_j ‖φ_j(target) − φ_j(pred)‖² / (C_j·H_j·W_j)`, averaged over the batch.
/// The target branch is detached.
pub fn perceptual<T: Scalar>(
    pred: &Var<T>,
    target: &Var<T>,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<Var<T>> {
    same_shape(pred, target)?;
    let fp = extractor.features(pred)?;
    let ft = extractor.features(&target.detach())?;
    if fp.len() != 3 || ft.len() != 3 {
        return Err(Error::invalid(format!(
            "feature extractor returned {} stages, expected 3",
            fp.len()
        )));
    }
    let mut total: Option<Var<T>> = None;
    for (p, t) in fp.iter().zip(&ft) {
        // mean over B·C·H·W is the per-sample normalized norm averaged over B
        let term = p.sub(&t.detach())?.square().mean();
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    Ok(total.expect("three stages"))
}

/// One probability per sample: patch outputs `B×1×h×w` are averaged.
fn per_sample_mean<T: Scalar>(d: &Var<T>) -> Result<Var<T>> {
    let (b, c, h, w) = d.value().dims4()?;
    d.reshape(&[1, b, c * h * w, 1])?.global_avg_pool()
}

/// `Σ_b −log D_b` with `D_b` the clamped mean patch probability of sample `b`.
pub fn adversarial_gen<T: Scalar>(d_out: &Var<T>) -> Result<Var<T>> {
    Ok(per_sample_mean(d_out)?.clamp_min(PROB_FLOOR).ln().neg().sum())
}

/// Mean over patches of `−log D(real) − log(1 − D(fake))`.
pub fn discriminator_loss<T: Scalar>(d_real: &Var<T>, d_fake: &Var<T>) -> Result<Var<T>> {
    let real = d_real.clamp_min(PROB_FLOOR).ln().neg().mean();
    let fake = d_fake.neg().add_scalar(1.0).clamp_min(PROB_FLOOR).ln().neg().mean();
    real.add(&fake)
}

/// Per-term values of one objective evaluation. Disabled terms read 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub ms_ssim: f64,
    pub perceptual: f64,
    pub adv: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,l1,ms_ssim,perceptual,adv,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{}",
            self.l1, self.ms_ssim, self.perceptual, self.adv, self.total
        )
    }
}

/// Everything needed to evaluate the generator objective.
pub struct Criterion<T: Scalar> {
    pub weights: LossWeights,
    pub terms: LossTerms,
    pub ms_ssim: MsSsimConfig,
    pub extractor: Box<dyn FeatureExtractor<T>>,
}

impl<T: Scalar> Criterion<T> {
    pub fn new(weights: LossWeights, terms: LossTerms, extractor: Box<dyn FeatureExtractor<T>>) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            weights,
            terms,
            ms_ssim: MsSsimConfig::default(),
            extractor,
        })
    }

    /// `l1 + α·ms_ssim + β·perceptual + γ·adv` over the enabled terms.
    /// `d_out` is required when the adversarial term is enabled.
    pub fn total_loss(
        &self,
        pred: &Var<T>,
        target: &Var<T>,
        d_out: Option<&Var<T>>,
    ) -> Result<(Var<T>, LossBreakdown)> {
        let mut bd = LossBreakdown::default();
        let l1 = smooth_l1(pred, target)?;
        bd.l1 = l1.item().as_f64();
        let mut total = l1;
        if self.terms.ms_ssim {
            let v = ms_ssim_loss(pred, target, &self.ms_ssim)?;
            bd.ms_ssim = v.item().as_f64();
            total = total.add(&v.scale(self.weights.alpha))?;
        }
        if self.terms.perceptual {
            let v = perceptual(pred, target, self.extractor.as_ref())?;
            bd.perceptual = v.item().as_f64();
            total = total.add(&v.scale(self.weights.beta))?;
        }
        if self.terms.adversarial {
            let d = d_out.ok_or_else(|| Error::invalid("adversarial term needs discriminator output"))?;
            let v = adversarial_gen(d)?;
            bd.adv = v.item().as_f64();
            total = total.add(&v.scale(self.weights.gamma))?;
        }
        bd.total = total.item().as_f64();
        Ok((total, bd))
    }
}

/// Weighted sum of already computed components, in the order the
/// objective accumulates them.
pub fn combine(bd: &LossBreakdown, w: &LossWeights) -> f64 {
    bd.l1 + bd.ms_ssim * w.alpha + bd.perceptual * w.beta + bd.adv * w.gamma
}
