//! GAN training: Adam, the step-decay schedule, paired augmentation, the
//! alternating discriminator/generator loop and the ablation harness.

use std::fmt::Write as _;
use std::path::PathBuf;

use indexmap::IndexMap;
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazesim::{item_seed, make_dataset, HazeMode, HazePair, ImageSource};
use crate::losses::{discriminator_loss, Criterion, LossBreakdown, LossTerms, LossWeights, ToyExtractor};
use crate::metrics::{psnr, ssim, SsimConfig};
use crate::model::{save_checkpoint, Branches, DiscConfig, Discriminator, Generator, ModelConfig, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub crop: usize,
    pub batch: usize,
    pub lr0: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Fractions of `total_steps` at which the rate is multiplied by `decay`.
    pub milestones: Vec<f64>,
    pub decay: f64,
    pub total_steps: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub terms: LossTerms,
    /// Held-out evaluation cadence in steps; 0 evaluates only at the end.
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub held_out_fraction: f64,
    /// Seed of the fixed perceptual feature extractor.
    pub extractor_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            crop: 64,
            batch: 4,
            lr0: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            milestones: vec![3.0 / 8.0, 5.0 / 8.0, 6.0 / 8.0],
            decay: 0.5,
            total_steps: 800,
            seed: 0,
            weights: LossWeights::default(),
            terms: LossTerms::ALL,
            eval_every: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            held_out_fraction: 0.2,
            extractor_seed: 0x9E6C,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.batch == 0 {
            return Err(Error::invalid("crop and batch must be positive"));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::invalid("lr0 must be positive"));
        }
        if !(0.0 < self.decay && self.decay < 1.0) {
            return Err(Error::invalid("decay factor must lie in (0, 1)"));
        }
        if self.milestones.iter().any(|&m| !(0.0 < m && m < 1.0))
            || self.milestones.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid("milestones must be ascending fractions in (0, 1)"));
        }
        if !(0.0 < self.held_out_fraction && self.held_out_fraction < 1.0) {
            return Err(Error::invalid("held_out_fraction must lie in (0, 1)"));
        }
        self.weights.validate()
    }
}

/// `lr0 · decay^k` where `k` counts milestones at or before `step`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let frac = step as f64 / cfg.total_steps.max(1) as f64;
    let passed = cfg.milestones.iter().filter(|&&m| frac >= m).count();
    cfg.lr0 * cfg.decay.powi(passed as i32)
}

/// Per-parameter moment buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
    pub step: u64,
}

/// One bias-corrected Adam update of every parameter present in `grads`.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    for (name, g) in grads {
        if g.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite {
                name: name.clone(),
                detail: "gradient contains NaN".into(),
            });
        }
        let p = params.get(name)?;
        if p.value.shape() != g.shape() {
            return Err(Error::shape(format!("gradient for `{name}` has wrong shape")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(betas.0), T::lit(betas.1));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::lit(lr), T::lit(eps));
    for (name, g) in grads {
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let p = params.get_mut(name)?;
        for (((pv, mv), vv), &gv) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let mh = *mv / c1;
            let vh = *vv / c2;
            *pv -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Spatial transform applied identically to both images of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    pub top: usize,
    pub left: usize,
    /// Counter-clockwise quarter turns.
    pub rot: usize,
    pub flip: bool,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            top: 0,
            left: 0,
            rot: 0,
            flip: false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, crop: usize) -> Result<Self> {
        if h < crop || w < crop {
            return Err(Error::invalid(format!("image {h}×{w} smaller than crop {crop}")));
        }
        Ok(Self {
            top: rng.gen_range(0..=h - crop),
            left: rng.gen_range(0..=w - crop),
            rot: rng.gen_range(0..4),
            flip: rng.gen_bool(0.5),
        })
    }

    /// Crop, then rotate, then flip horizontally. `img` is `1×C×H×W`.
    pub fn apply<T: Scalar>(&self, img: &Tensor<T>, crop: usize) -> Result<Tensor<T>> {
        let (b, c, h, w) = img.dims4()?;
        if self.top + crop > h || self.left + crop > w {
            return Err(Error::invalid(format!("crop {crop} at ({}, {}) leaves {h}×{w}", self.top, self.left)));
        }
        let n = crop;
        let mut out = Tensor::zeros(&[b, c, n, n]);
        for bc in 0..b * c {
            let src = &img.data()[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out.data_mut()[bc * n * n..(bc + 1) * n * n];
            for y in 0..n {
                for x in 0..n {
                    let xf = if self.flip { n - 1 - x } else { x };
                    // undo rot quarter turns: (y, xf) in rotated frame → crop frame
                    let (mut sy, mut sx) = (y, xf);
                    for _ in 0..self.rot {
                        (sy, sx) = (sx, n - 1 - sy);
                    }
                    dst[y * n + x] = src[(self.top + sy) * w + self.left + sx];
                }
            }
        }
        Ok(out)
    }
}

/// Random crop, quarter turn and flip, shared by both images of the pair.
pub fn augment<R: Rng + ?Sized>(pair: &HazePair, crop: usize, rng: &mut R) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let (_, _, h, w) = pair.clear.dims4()?;
    let t = Transform::sample(rng, h, w, crop)?;
    Ok((t.apply(&pair.clear, crop)?, t.apply(&pair.hazy, crop)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean PSNR/SSIM of `pred` images against `clear` ones.
fn score(preds: &[Tensor<f64>], clear: &[&Tensor<f64>], step: usize) -> Result<EvalRow> {
    let cfg = SsimConfig::default();
    let (mut p, mut s) = (0.0, 0.0);
    for (a, b) in preds.iter().zip(clear) {
        p += psnr(a, b, 1.0)?;
        s += ssim(a, b, &cfg)?.mean;
    }
    let n = preds.len() as f64;
    Ok(EvalRow {
        step,
        psnr: p / n,
        ssim: s / n,
    })
}

/// Held-out scores of the generator at full size.
pub fn evaluate<T: Scalar>(gen: &Generator<T>, pairs: &[HazePair], step: usize) -> Result<EvalRow> {
    let preds = pairs
        .iter()
        .map(|p| Ok(gen.dehaze(&p.hazy.cast::<T>())?.cast::<f64>()))
        .collect::<Result<Vec<_>>>()?;
    score(&preds, &pairs.iter().map(|p| &p.clear).collect::<Vec<_>>(), step)
}

/// Scores of the hazy inputs themselves.
pub fn identity_baseline(pairs: &[HazePair]) -> Result<EvalRow> {
    let hazy: Vec<Tensor<f64>> = pairs.iter().map(|p| p.hazy.clone()).collect();
    score(&hazy, &pairs.iter().map(|p| &p.clear).collect::<Vec<_>>(), 0)
}

/// Splits off the last `fraction` of pairs (at least one each side).
pub fn split_held_out(pairs: &[HazePair], fraction: f64) -> Result<(&[HazePair], &[HazePair])> {
    if pairs.len() < 2 {
        return Err(Error::invalid("need at least two pairs to hold one out"));
    }
    let held = ((pairs.len() as f64 * fraction).round() as usize).clamp(1, pairs.len() - 1);
    Ok(pairs.split_at(pairs.len() - held))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// One row per step, steps numbered from 1.
    pub losses: Vec<LossBreakdown>,
    pub disc_losses: Vec<f64>,
    pub evals: Vec<EvalRow>,
    pub baseline: Option<EvalRow>,
    pub final_digest: String,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from(LossBreakdown::CSV_HEADER);
        s.push('\n');
        for (i, row) in self.losses.iter().enumerate() {
            s.push_str(&row.csv_row(i + 1));
            s.push('\n');
        }
        s
    }

    pub fn eval_csv(&self) -> String {
        let mut s = String::from("step,psnr_db,ssim\n");
        for e in &self.evals {
            let _ = writeln!(s, "{},{},{}", e.step, e.psnr, e.ssim);
        }
        s
    }
}

/// Everything a training run mutates.
pub struct Trainer<T: Scalar> {
    pub gen: Generator<T>,
    pub disc: Discriminator<T>,
    pub cfg: TrainConfig,
    criterion: Criterion<T>,
    gen_opt: AdamState<T>,
    disc_opt: AdamState<T>,
    rng: ChaCha8Rng,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(gen: Generator<T>, disc: Discriminator<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let criterion = Criterion::new(cfg.weights, cfg.terms, Box::new(ToyExtractor::seeded(cfg.extractor_seed)))?;
        let rng = ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, u64::MAX));
        Ok(Self {
            gen,
            disc,
            cfg,
            criterion,
            gen_opt: AdamState::default(),
            disc_opt: AdamState::default(),
            rng,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    fn batch(&mut self, train: &[HazePair]) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut clear = Vec::with_capacity(self.cfg.batch);
        let mut hazy = Vec::with_capacity(self.cfg.batch);
        for _ in 0..self.cfg.batch {
            let i = self.rng.gen_range(0..train.len());
            let (c, h) = augment(&train[i], self.cfg.crop, &mut self.rng)?;
            clear.push(c.cast());
            hazy.push(h.cast());
        }
        Ok((Tensor::stack_batch(&clear)?, Tensor::stack_batch(&hazy)?))
    }

    /// One discriminator update (when the adversarial term is on) followed
    /// by one generator update. Returns the generator breakdown and the
    /// discriminator loss.
    pub fn step(&mut self, train: &[HazePair]) -> Result<(LossBreakdown, Option<f64>)> {
        let lr = lr_at(self.step, &self.cfg);
        let (clear, hazy) = self.batch(train)?;
        let clear = Var::constant(clear);
        let hazy = Var::constant(hazy);
        let adversarial = self.cfg.terms.adversarial;

        let mut d_loss = None;
        if adversarial {
            let fake = Var::constant(self.gen.dehaze(hazy.value())?);
            let db = self.disc.params.bind(true);
            let loss = discriminator_loss(&self.disc.forward(&db, &clear)?, &self.disc.forward(&db, &fake)?)?;
            let v = loss.item().as_f64();
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    name: "discriminator loss".into(),
                    detail: format!("{v} at step {}", self.step + 1),
                });
            }
            loss.backward()?;
            adam_step(&mut self.disc.params, &db.grads(), &mut self.disc_opt, lr, self.cfg.betas, self.cfg.eps)?;
            d_loss = Some(v);
        }

        let gb = self.gen.params.bind(true);
        let pred = self.gen.forward(&gb, &hazy)?;
        let d_out = if adversarial {
            Some(self.disc.forward(&self.disc.params.bind(false), &pred)?)
        } else {
            None
        };
        let (total, bd) = self.criterion.total_loss(&pred, &clear, d_out.as_ref())?;
        if !bd.total.is_finite() {
            return Err(Error::NonFinite {
                name: "total loss".into(),
                detail: format!("{} at step {}", bd.total, self.step + 1),
            });
        }
        total.backward()?;
        adam_step(&mut self.gen.params, &gb.grads(), &mut self.gen_opt, lr, self.cfg.betas, self.cfg.eps)?;
        self.step += 1;
        Ok((bd, d_loss))
    }

    fn checkpoint(&self) -> Result<()> {
        if let Some(dir) = &self.cfg.checkpoint_dir {
            let sub = dir.join(format!("step-{:06}", self.step));
            save_checkpoint(&sub, &self.gen, Some(&self.disc), self.step)?;
            save_checkpoint(&dir.join("latest"), &self.gen, Some(&self.disc), self.step)?;
        }
        Ok(())
    }

    /// Runs `cfg.total_steps` steps on the training part of `pairs`,
    /// evaluating on the held-out part.
    pub fn run(&mut self, pairs: &[HazePair]) -> Result<TrainReport> {
        let (train, held) = split_held_out(pairs, self.cfg.held_out_fraction)?;
        let mut report = TrainReport {
            baseline: Some(identity_baseline(held)?),
            ..TrainReport::default()
        };
        self.checkpoint()?;
        let total = self.cfg.total_steps;
        for s in 1..=total {
            let (bd, d) = self.step(train)?;
            report.losses.push(bd);
            if let Some(d) = d {
                report.disc_losses.push(d);
            }
            if self.cfg.eval_every > 0 && s % self.cfg.eval_every == 0 && s < total {
                let e = evaluate(&self.gen, held, s)?;
                info!("step {s}: loss {:.5}, held-out {:.3} dB / {:.4}", bd.total, e.psnr, e.ssim);
                report.evals.push(e);
            }
            if self.cfg.checkpoint_every > 0 && s % self.cfg.checkpoint_every == 0 && s < total {
                self.checkpoint()?;
            }
        }
        report.evals.push(evaluate(&self.gen, held, total)?);
        if total > 0 {
            self.checkpoint()?;
        }
        report.final_digest = self.gen.params.digest();
        Ok(report)
    }
}

/// Builds fresh models from `seed` and trains them.
pub fn train_gan(
    model: &ModelConfig,
    disc: &DiscConfig,
    pairs: &[HazePair],
    cfg: &TrainConfig,
) -> Result<(Trainer<f64>, TrainReport)> {
    let gen = Generator::new(model.clone(), item_seed(cfg.seed, 1))?;
    let d = Discriminator::new(disc.clone(), item_seed(cfg.seed, 2))?;
    let mut trainer = Trainer::new(gen, d, cfg.clone())?;
    let report = trainer.run(pairs)?;
    Ok((trainer, report))
}

/// Reference scores of the seven configurations at full scale.
pub const ABLATION_REFERENCE: [(f64, f64); 7] = [
    (18.15, 0.7483),
    (20.15, 0.8156),
    (21.35, 0.8273),
    (21.52, 0.8403),
    (21.67, 0.852),
    (21.86, 0.8555),
    (21.99, 0.856),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub label: String,
    pub branches: Branches,
    pub use_dwt_modules: bool,
    pub terms: LossTerms,
}

/// The seven rows: branch layout first, then loss terms added one by one.
pub fn ablation_variants() -> Vec<AblationVariant> {
    let l1 = LossTerms::L1_ONLY;
    let per = LossTerms {
        perceptual: true,
        ..l1
    };
    let per_ms = LossTerms { ms_ssim: true, ..per };
    let v = |label: &str, branches, dwt, terms| AblationVariant {
        label: label.to_string(),
        branches,
        use_dwt_modules: dwt,
        terms,
    };
    vec![
        v("(1) vanilla DWT branch", Branches { dwt: true, ka: false }, false, l1),
        v("(2) knowledge adaptation branch", Branches { dwt: false, ka: true }, true, l1),
        v("(3) Two-branch", Branches::BOTH, false, l1),
        v("(4) Two-branch+DWT", Branches::BOTH, true, l1),
        v("(5) Two-branch+DWT", Branches::BOTH, true, per),
        v("(6) Two-branch+DWT", Branches::BOTH, true, per_ms),
        v("(7) Two-branch+DWT", Branches::BOTH, true, LossTerms::ALL),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSetup {
    pub model: ModelConfig,
    pub disc: DiscConfig,
    pub train: TrainConfig,
    pub pairs: usize,
    pub image_size: usize,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    /// Held-out PSNR and SSIM per seed.
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub reference: (f64, f64),
}

impl AblationRow {
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.ssim.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
    pub baseline_psnr: Vec<f64>,
}

impl AblationReport {
    /// Markdown table of the configurations with measured and reference columns.
    pub fn markdown(&self) -> String {
        let tick = |b: bool| if b { "✓" } else { "" };
        let mut s = String::from(
            "| Config | L1 | MS-SSIM | Perceptual | Adversarial | PSNR (dB) | SSIM | Reference PSNR / SSIM (not reproduced) |\n\
             |---|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let t = r.variant.terms;
            let _ = writeln!(
                s,
                "| {} | ✓ | {} | {} | {} | {:.2} | {:.4} | {} / {} |",
                r.variant.label,
                tick(t.ms_ssim),
                tick(t.perceptual),
                tick(t.adversarial),
                r.mean_psnr(),
                r.mean_ssim(),
                r.reference.0,
                r.reference.1
            );
        }
        let _ = writeln!(
            s,
            "\nSeeds: {:?}. Measured at toy scale on synthetic haze; reference values are full-scale results and are not reproduced here.",
            self.seeds
        );
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("config,l1,ms_ssim,perceptual,adv,psnr_db,ssim,ref_psnr_db,ref_ssim,reference_status\n");
        for r in &self.rows {
            let t = r.variant.terms;
            let _ = writeln!(
                s,
                "\"{}\",1,{},{},{},{},{},{},{},not-reproduced",
                r.variant.label,
                t.ms_ssim as u8,
                t.perceptual as u8,
                t.adversarial as u8,
                r.mean_psnr(),
                r.mean_ssim(),
                r.reference.0,
                r.reference.1
            );
        }
        s
    }
}

/// Trains every variant for every seed on the same synthetic data.
pub fn ablation_run(setup: &AblationSetup) -> Result<AblationReport> {
    if setup.seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let variants = ablation_variants();
    let mut rows: Vec<AblationRow> = variants
        .iter()
        .zip(ABLATION_REFERENCE)
        .map(|(v, reference)| AblationRow {
            variant: v.clone(),
            psnr: Vec::new(),
            ssim: Vec::new(),
            reference,
        })
        .collect();
    let mut baseline_psnr = Vec::new();
    for &seed in &setup.seeds {
        let pairs = make_dataset(
            setup.pairs,
            HazeMode::Homogeneous,
            &ImageSource::Procedural { size: setup.image_size },
            seed,
        )?;
        let (_, held) = split_held_out(&pairs, setup.train.held_out_fraction)?;
        baseline_psnr.push(identity_baseline(held)?.psnr);
        for row in rows.iter_mut() {
            let v = &row.variant;
            let model = ModelConfig {
                branches: v.branches,
                use_dwt_modules: v.use_dwt_modules,
                ..setup.model.clone()
            };
            let cfg = TrainConfig {
                seed,
                terms: v.terms,
                checkpoint_dir: None,
                ..setup.train.clone()
            };
            let (_, report) = train_gan(&model, &setup.disc, &pairs, &cfg)?;
            let last = report.evals.last().expect("final evaluation");
            info!("{} seed {seed}: {:.3} dB / {:.4}", v.label, last.psnr, last.ssim);
            row.psnr.push(last.psnr);
            row.ssim.push(last.ssim);
        }
    }
    Ok(AblationReport {
        rows,
        seeds: setup.seeds.clone(),
        baseline_psnr,
    })
}
