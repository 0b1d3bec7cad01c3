//! Two-branch dehazing generator and patch discriminator.
//!
//! The generator runs two feature branches on the hazy input and fuses them
//! with a 7×7 convolution followed by a sigmoid:
//!
//! * the **wavelet branch** is a U-Net whose down/up blocks carry Haar
//!   subbands ([`layers::dwt_down`], [`layers::dwt_up`]), with additive skips
//!   at every scale;
//! * the **adaptation branch** pairs a feature encoder (a fixed, seeded
//!   strided-conv pyramid by default) with a decoder of
//!   pixel-shuffle → channel attention → pixel attention → conv stages.
//!
//! All widths are configuration; nothing here is normalized.
//!
//! Parameter names follow the layer layout: `dwt.head`, `dwt.down{k}.conv`,
//! `dwt.down{k}.mix`, `dwt.mid{i}`, `dwt.up{k}.{proj,learn,mix}`,
//! `ka.enc{k}`, `ka.dec{j}.{up,ca1,ca2,pa1,pa2,out}`, `ka.skip{j}`, `fuse`,
//! each with `.weight` and `.bias`.

pub mod checkpoint;
pub mod layers;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var, DEFAULT_LEAKY_SLOPE};

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use params::{Bound, Init, Param, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branches {
    pub dwt: bool,
    pub ka: bool,
}

impl Branches {
    pub const BOTH: Self = Self { dwt: true, ka: true };

    pub fn count(&self) -> usize {
        self.dwt as usize + self.ka as usize
    }
}

/// Seeded strided-conv pyramid used as the adaptation-branch encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Output channels per stage; each stage halves the resolution.
    pub widths: Vec<usize>,
    pub seed: u64,
    pub trainable: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 24, 32, 48],
            seed: 0x0E1C_0DE5,
            trainable: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub base_channels: usize,
    /// Down-sampling stages of the wavelet branch.
    pub depth: usize,
    pub use_dwt_modules: bool,
    pub branches: Branches,
    pub encoder: EncoderConfig,
    pub attention_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            depth: 3,
            use_dwt_modules: true,
            branches: Branches::BOTH,
            encoder: EncoderConfig::default(),
            attention_reduction: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::invalid("depth must be at least 1"));
        }
        if self.base_channels < 4 {
            return Err(Error::invalid("base_channels must be at least 4"));
        }
        if self.branches.count() == 0 {
            return Err(Error::invalid("at least one branch must be enabled"));
        }
        if self.encoder.widths.len() < 3 || self.encoder.widths.contains(&0) {
            return Err(Error::invalid("encoder needs at least 3 non-empty stages"));
        }
        if self.attention_reduction == 0 {
            return Err(Error::invalid("attention_reduction must be positive"));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn size_divisor(&self) -> usize {
        let mut d = 1;
        if self.branches.dwt {
            d = d.max(1 << self.depth);
        }
        if self.branches.ka {
            d = d.max(1 << self.encoder.widths.len());
        }
        d
    }

    /// Width of the wavelet branch at level `k`.
    fn width(&self, k: usize) -> usize {
        self.base_channels << k
    }

    /// Parameters added to the wavelet branch by enabling the wavelet
    /// modules: `2·c²·(4^depth − 1)/3` for base width `c`.
    ///
    /// Per level `k` with width `c_k`, the down block trades a `c_k → 2c_k`
    /// strided conv for a `c_k → c_k` one (−9c_k² − c_k) and the up block
    /// gains a 1×1 projection and a doubled mixing input (+11c_k² + c_k).
    pub fn dwt_param_delta(&self) -> usize {
        let c = self.base_channels;
        2 * c * c * ((1usize << (2 * self.depth)) - 1) / 3
    }
}

pub struct Generator<T: Scalar> {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let c = config.base_channels;
        if config.branches.dwt {
            init.conv(&mut params, "dwt.head", c, 3, 3, true)?;
            for k in 0..config.depth {
                let (ci, co) = (config.width(k), config.width(k + 1));
                let p = format!("dwt.down{k}");
                if config.use_dwt_modules {
                    init.conv(&mut params, &format!("{p}.conv"), co - ci, ci, 3, true)?;
                } else {
                    init.conv(&mut params, &format!("{p}.conv"), co, ci, 3, true)?;
                }
                init.conv(&mut params, &format!("{p}.mix"), co, co, 3, true)?;
            }
            let cd = config.width(config.depth);
            for i in 0..2 {
                init.conv(&mut params, &format!("dwt.mid{i}"), cd, cd, 3, true)?;
            }
            for k in (0..config.depth).rev() {
                let (co, ci) = (config.width(k), config.width(k + 1));
                let p = format!("dwt.up{k}");
                if config.use_dwt_modules {
                    init.conv(&mut params, &format!("{p}.proj"), co, ci, 1, true)?;
                }
                init.conv(&mut params, &format!("{p}.learn"), 4 * co, ci, 3, true)?;
                let mix_in = if config.use_dwt_modules { 2 * co } else { co };
                init.conv(&mut params, &format!("{p}.mix"), co, mix_in, 3, true)?;
            }
        }
        if config.branches.ka {
            let enc = &config.encoder;
            let mut enc_init = Init::new(enc.seed);
            let mut cin = 3;
            for (k, &w) in enc.widths.iter().enumerate() {
                enc_init.conv(&mut params, &format!("ka.enc{k}"), w, cin, 3, enc.trainable)?;
                cin = w;
            }
            let s = enc.widths.len();
            let r = (c / config.attention_reduction).max(1);
            for j in 0..s {
                let p = format!("ka.dec{j}");
                let cin = if j == 0 { enc.widths[s - 1] } else { c };
                init.conv(&mut params, &format!("{p}.up"), 4 * c, cin, 3, true)?;
                init.conv(&mut params, &format!("{p}.ca1"), r, c, 1, true)?;
                init.conv(&mut params, &format!("{p}.ca2"), c, r, 1, true)?;
                init.conv(&mut params, &format!("{p}.pa1"), r, c, 1, true)?;
                init.conv(&mut params, &format!("{p}.pa2"), 1, r, 1, true)?;
                init.conv(&mut params, &format!("{p}.out"), c, c, 3, true)?;
                if j + 2 <= s {
                    init.conv(&mut params, &format!("ka.skip{j}"), c, enc.widths[s - 2 - j], 1, true)?;
                }
            }
        }
        init.conv(&mut params, "fuse", 3, c * config.branches.count(), 7, true)?;
        Ok(Self { config, seed, params })
    }

    pub fn check_input(&self, x: &Var<T>) -> Result<()> {
        let (_, ch, h, w) = x.value().dims4()?;
        let d = self.config.size_divisor();
        if ch != 3 {
            return Err(Error::shape(format!("generator expects 3 channels, got {ch}")));
        }
        if h % d != 0 || w % d != 0 {
            return Err(Error::shape(format!(
                "input {h}×{w} is not divisible by {d}"
            )));
        }
        Ok(())
    }

    pub fn dwt_branch(&self, b: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let cfg = &self.config;
        let mut h = b.conv("dwt.head", x, 1)?.relu();
        let mut skips = Vec::with_capacity(cfg.depth);
        for k in 0..cfg.depth {
            let p = format!("dwt.down{k}");
            let (next, hf) = if cfg.use_dwt_modules {
                let (y, hf) = layers::dwt_down(b, &p, &h)?;
                (y, Some(hf))
            } else {
                (layers::plain_down(b, &p, &h)?, None)
            };
            skips.push((h, hf));
            h = next;
        }
        for i in 0..2 {
            h = b.conv(&format!("dwt.mid{i}"), &h, 1)?.relu();
        }
        for k in (0..cfg.depth).rev() {
            let p = format!("dwt.up{k}");
            let (skip, hf) = &skips[k];
            let up = match hf {
                Some(hf) => layers::dwt_up(b, &p, &h, hf)?,
                None => layers::plain_up(b, &p, &h)?,
            };
            h = up.add(skip)?;
        }
        Ok(h)
    }

    /// Encoder stages, shallowest first.
    pub fn encode(&self, b: &Bound<T>, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let mut h = x.clone();
        let mut stages = Vec::new();
        for k in 0..self.config.encoder.widths.len() {
            h = b.conv(&format!("ka.enc{k}"), &h, 2)?.relu();
            stages.push(h.clone());
        }
        Ok(stages)
    }

    pub fn ka_branch(&self, b: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let stages = self.encode(b, x)?;
        let s = stages.len();
        let mut h = stages[s - 1].clone();
        for j in 0..s {
            let p = format!("ka.dec{j}");
            h = b.conv(&format!("{p}.up"), &h, 1)?.pixel_shuffle(2)?;
            h = layers::channel_attention(b, &p, &h)?;
            h = layers::pixel_attention(b, &p, &h)?;
            h = b.conv(&format!("{p}.out"), &h, 1)?.relu();
            if j + 2 <= s {
                let skip = b.conv(&format!("ka.skip{j}"), &stages[s - 2 - j], 1)?;
                h = h.add(&skip)?;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, b: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        self.check_input(x)?;
        let mut feats = Vec::with_capacity(2);
        if self.config.branches.dwt {
            feats.push(self.dwt_branch(b, x)?);
        }
        if self.config.branches.ka {
            feats.push(self.ka_branch(b, x)?);
        }
        let cat = if feats.len() == 1 {
            feats.pop().unwrap()
        } else {
            Var::concat_channels(&feats)?
        };
        Ok(b.conv("fuse", &cat, 1)?.sigmoid())
    }

    /// Inference on a `B×3×H×W` batch without gradient tracking.
    pub fn dehaze(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.params.bind(false);
        Ok(self.forward(&b, &Var::constant(x.clone()))?.value().clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscConfig {
    pub base_channels: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self { base_channels: 8 }
    }
}

/// Four 4×4 stride-2 convolutions with leaky ReLU (widths `b, 2b, 4b, 8b`),
/// then a 3×3 convolution to one channel and a sigmoid.
///
/// The output is an `H/16 × W/16` patch map; each patch sees 78×78 input
/// pixels.
pub struct Discriminator<T: Scalar> {
    pub config: DiscConfig,
    pub seed: u64,
    pub params: ParamStore<T>,
}

pub const DISC_STAGES: usize = 4;

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscConfig, seed: u64) -> Result<Self> {
        if config.base_channels == 0 {
            return Err(Error::invalid("discriminator width must be positive"));
        }
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let mut cin = 3;
        for k in 0..DISC_STAGES {
            let co = config.base_channels << k;
            init.conv(&mut params, &format!("d{k}"), co, cin, 4, true)?;
            cin = co;
        }
        init.conv(&mut params, "head", 1, cin, 3, true)?;
        Ok(Self { config, seed, params })
    }

    pub fn forward(&self, b: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let (_, _, h, w) = x.value().dims4()?;
        let d = 1 << DISC_STAGES;
        if h % d != 0 || w % d != 0 {
            return Err(Error::shape(format!("discriminator input {h}×{w} not divisible by {d}")));
        }
        let mut y = x.clone();
        for k in 0..DISC_STAGES {
            y = b.conv_padded(&format!("d{k}"), &y, 2, 1)?.leaky_relu(DEFAULT_LEAKY_SLOPE);
        }
        Ok(b.conv("head", &y, 1)?.sigmoid())
    }

    pub fn probabilities(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.params.bind(false);
        Ok(self.forward(&b, &Var::constant(x.clone()))?.value().clone())
    }
}
