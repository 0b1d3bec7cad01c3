//! Command-line front end. [`run`] parses arguments and returns the process
//! exit code: 0 on success, 1 on runtime failure, 2 on usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::{gamma_correct, match_brightness, DEFAULT_GAMMA};
use crate::hazesim::{make_dataset, HazeMode, HazePair, ImageSource, PairRecord};
use crate::imageio::{as_batch, read_image, write_image};
use crate::losses::LossTerms;
use crate::metrics::{gray_stats, ms_ssim, psnr, ssim, MsSsimConfig, SsimConfig};
use crate::model::{load_checkpoint, DiscConfig, ModelConfig};
use crate::tensor::{self, Tensor};
use crate::train::{ablation_run, train_gan, AblationSetup, TrainConfig};
use crate::wavelet::{dwt_multi, Pyramid, Subbands};

pub const SEED_ENV: &str = "DWGAN_SEED";

#[derive(Parser, Debug)]
#[command(name = "dwgan", version, about = "Wavelet two-branch dehazing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate hazy/clear pairs from the scattering model.
    Synthesize(SynthesizeArgs),
    /// Haar-decompose an image into subband files.
    Dwt(DwtArgs),
    /// Reassemble an image from a `dwt` output directory.
    Idwt(IdwtArgs),
    /// PSNR / SSIM / MS-SSIM between image sets, as CSV.
    Metrics(MetricsArgs),
    /// Apply or solve a gamma correction.
    Gamma(GammaArgs),
    /// Train the GAN on synthetic or synthesized pairs.
    Train(TrainArgs),
    /// Run the seven-configuration ablation.
    Ablate(AblateArgs),
    /// Run a checkpoint on images.
    Dehaze(DehazeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Homogeneous,
    Nonhomogeneous,
}

impl From<ModeArg> for HazeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Homogeneous => HazeMode::Homogeneous,
            ModeArg::Nonhomogeneous => HazeMode::Nonhomogeneous,
        }
    }
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[arg(long, value_enum, default_value = "homogeneous")]
    mode: ModeArg,
    #[arg(long)]
    n: usize,
    /// Side length of the procedural clear images.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Clear images (P6 files or directories) to haze instead of procedural ones.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write clear, hazy and transmission tensors in binary form.
    #[arg(long)]
    raw: bool,
}

#[derive(Args, Debug)]
struct DwtArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    levels: usize,
}

#[derive(Args, Debug)]
struct IdwtArgs {
    /// Directory written by `dwt`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long, num_args = 1..)]
    pred: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    target: Vec<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GammaArgs {
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Exponent to apply; defaults to 0.65 unless solving.
    #[arg(long, conflicts_with = "target_mean")]
    gamma: Option<f64>,
    /// Solve for the gamma that brings the pooled mean gray (0–255) here.
    #[arg(long)]
    target_mean: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    tolerance: f64,
    /// Write corrected images here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct RunFlags {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Extra `key=value` settings, as in the config file.
    #[arg(long = "set", num_args = 1..)]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Directory from `synthesize` to train on instead of generated pairs.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Comma-separated seeds; defaults to three consecutive seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DehazeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth images, matched to inputs in order.
    #[arg(long, num_args = 1..)]
    gt: Vec<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Errors are printed to stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synthesize(a) => synthesize(a),
        Command::Dwt(a) => dwt(a),
        Command::Idwt(a) => idwt(a),
        Command::Metrics(a) => metrics(a),
        Command::Gamma(a) => gamma(a),
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::Dehaze(a) => dehaze(a),
    }
}

/// `--seed`, else `DWGAN_SEED`, else 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Files named directly plus the `.ppm` files of named directories, the
/// latter in name order.
fn collect_images(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "ppm"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no input images"));
    }
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let mode: HazeMode = a.mode.into();
    let source = if a.input.is_empty() {
        ImageSource::Procedural { size: a.size }
    } else {
        let imgs = collect_images(&a.input)?
            .iter()
            .map(|p| as_batch(&read_image::<f64>(p)?))
            .collect::<Result<Vec<_>>>()?;
        ImageSource::Images(imgs)
    };
    let pairs = make_dataset(a.n, mode, &source, seed)?;
    mkdir(&a.out)?;
    let mut jsonl = String::new();
    for (i, p) in pairs.iter().enumerate() {
        let (clear, hazy) = (format!("{i:04}_clear.ppm"), format!("{i:04}_hazy.ppm"));
        write_image(&a.out.join(&clear), &p.clear)?;
        write_image(&a.out.join(&hazy), &p.hazy)?;
        if a.raw {
            tensor::io::save(&p.clear, &a.out.join(format!("{i:04}_clear.bin")))?;
            tensor::io::save(&p.hazy, &a.out.join(format!("{i:04}_hazy.bin")))?;
            tensor::io::save(&p.params.transmission()?, &a.out.join(format!("{i:04}_transmission.bin")))?;
        }
        let rec = PairRecord {
            index: i,
            seed: p.seed,
            beta: p.params.beta(),
            airlight: p.params.airlight,
            mode,
            clear,
            hazy,
        };
        jsonl.push_str(&serde_json::to_string(&rec)?);
        jsonl.push('\n');
    }
    write_text(&a.out.join("pairs.jsonl"), &jsonl)?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

/// Affine map used to show a subband as an image: `shown = (raw − offset) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BandEntry {
    level: usize,
    band: String,
    raw: String,
    image: String,
    offset: f64,
    scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SubbandSidecar {
    input_sizes: Vec<(usize, usize)>,
    bands: Vec<BandEntry>,
}

const BAND_NAMES: [&str; 4] = ["ll", "lh", "hl", "hh"];

fn dwt(a: DwtArgs) -> Result<()> {
    let img = as_batch(&read_image::<f64>(&a.input)?)?;
    let pyr = dwt_multi(&img, a.levels, true)?;
    mkdir(&a.out)?;
    let mut bands = Vec::new();
    for (l, s) in pyr.levels.iter().enumerate() {
        for (name, t) in BAND_NAMES.iter().zip(s.as_array()) {
            let raw = format!("level{l}_{name}.bin");
            let image = format!("level{l}_{name}.ppm");
            tensor::io::save(t, &a.out.join(&raw))?;
            let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let scale = if hi > lo { hi - lo } else { 1.0 };
            write_image(&a.out.join(&image), &t.map(|v| (v - lo) / scale))?;
            bands.push(BandEntry {
                level: l,
                band: name.to_string(),
                raw,
                image,
                offset: lo,
                scale,
            });
        }
    }
    let sidecar = SubbandSidecar {
        input_sizes: pyr.input_sizes.clone(),
        bands,
    };
    write_text(&a.out.join("subbands.json"), &(serde_json::to_string_pretty(&sidecar)? + "\n"))?;
    println!("wrote {} levels to {}", a.levels, a.out.display());
    Ok(())
}

fn idwt(a: IdwtArgs) -> Result<()> {
    let path = a.input.join("subbands.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: SubbandSidecar = serde_json::from_str(&text)?;
    let levels = sidecar.input_sizes.len();
    let mut pyr = Pyramid {
        levels: Vec::with_capacity(levels),
        input_sizes: sidecar.input_sizes.clone(),
    };
    for l in 0..levels {
        let load = |name: &str| -> Result<Tensor<f64>> {
            let e = sidecar
                .bands
                .iter()
                .find(|b| b.level == l && b.band == name)
                .ok_or_else(|| Error::invalid(format!("sidecar lacks level {l} {name}")))?;
            tensor::io::load(&a.input.join(&e.raw))
        };
        pyr.levels.push(Subbands {
            ll: load("ll")?,
            lh: load("lh")?,
            hl: load("hl")?,
            hh: load("hh")?,
        });
    }
    write_image(&a.out, &pyr.reconstruct()?)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

/// CSV rows `filename,psnr_db,ssim,ms_ssim` for matched image lists.
pub fn metrics_csv(pred: &[PathBuf], target: &[PathBuf]) -> Result<String> {
    if pred.len() != target.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut csv = String::from("filename,psnr_db,ssim,ms_ssim\n");
    for (p, t) in pred.iter().zip(target) {
        let a = as_batch(&read_image::<f64>(p)?)?;
        let b = as_batch(&read_image::<f64>(t)?)?;
        let row = (
            psnr(&a, &b, 1.0)?,
            ssim(&a, &b, &SsimConfig::default())?.mean,
            ms_ssim(&a, &b, &MsSsimConfig::default())?,
        );
        let _ = writeln!(csv, "{},{},{},{}", file_name(p), row.0, row.1, row.2);
    }
    Ok(csv)
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let csv = metrics_csv(&collect_images(&a.pred)?, &collect_images(&a.target)?)?;
    match a.out {
        Some(p) => write_text(&p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct GammaReport {
    gamma: f64,
    mean_before: f64,
    mean_after: f64,
    iterations: Option<usize>,
}

fn gamma(a: GammaArgs) -> Result<()> {
    let files = collect_images(&a.input)?;
    let imgs = files.iter().map(|p| read_image::<f64>(p)).collect::<Result<Vec<_>>>()?;
    let before = gray_stats(&imgs)?.mean;
    let (g, iterations) = match a.target_mean {
        Some(t) => {
            let s = match_brightness(&imgs, t, a.tolerance)?;
            (s.gamma, Some(s.iterations))
        }
        None => (a.gamma.unwrap_or(DEFAULT_GAMMA), None),
    };
    let corrected = imgs.iter().map(|i| gamma_correct(i, g)).collect::<Result<Vec<_>>>()?;
    if let Some(out) = &a.out {
        mkdir(out)?;
        for (p, img) in files.iter().zip(&corrected) {
            write_image(&out.join(file_name(p)), img)?;
        }
    }
    let report = GammaReport {
        gamma: g,
        mean_before: before,
        mean_after: gray_stats(&corrected)?.mean,
        iterations,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// Everything `train` and `ablate` need, settable from a flat config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub disc: DiscConfig,
    pub pairs: usize,
    pub image_size: usize,
    pub mode: HazeMode,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                crop: 32,
                ..TrainConfig::default()
            },
            model: ModelConfig {
                depth: 2,
                ..ModelConfig::default()
            },
            disc: DiscConfig::default(),
            pairs: 64,
            image_size: 48,
            mode: HazeMode::Homogeneous,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("bad value {v:?} for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("bad boolean {v:?} for `{key}`"))),
    }
}

impl RunSpec {
    /// Recognized keys: `seed steps crop batch lr0 milestones decay alpha
    /// beta gamma terms eval_every checkpoint_every pairs image_size mode
    /// base_channels depth use_dwt_modules encoder_trainable
    /// attention_reduction disc_channels`. `terms` is a comma list drawn
    /// from `ms_ssim, perceptual, adv` (smooth L1 is always on).
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, v)?,
            "steps" | "total_steps" => t.total_steps = parse(key, v)?,
            "crop" => t.crop = parse(key, v)?,
            "batch" => t.batch = parse(key, v)?,
            "lr0" | "lr" => t.lr0 = parse(key, v)?,
            "milestones" => {
                t.milestones = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            "decay" => t.decay = parse(key, v)?,
            "alpha" => t.weights.alpha = parse(key, v)?,
            "beta" => t.weights.beta = parse(key, v)?,
            "gamma" => t.weights.gamma = parse(key, v)?,
            "terms" => {
                let mut terms = LossTerms::L1_ONLY;
                for term in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match term {
                        "l1" => {}
                        "ms_ssim" => terms.ms_ssim = true,
                        "perceptual" => terms.perceptual = true,
                        "adv" => terms.adversarial = true,
                        other => return Err(Error::invalid(format!("unknown loss term `{other}`"))),
                    }
                }
                t.terms = terms;
            }
            "eval_every" => t.eval_every = parse(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            "pairs" => self.pairs = parse(key, v)?,
            "image_size" | "size" => self.image_size = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "base_channels" => self.model.base_channels = parse(key, v)?,
            "depth" => self.model.depth = parse(key, v)?,
            "use_dwt_modules" => self.model.use_dwt_modules = parse_bool(key, v)?,
            "encoder_trainable" => self.model.encoder.trainable = parse_bool(key, v)?,
            "attention_reduction" => self.model.attention_reduction = parse(key, v)?,
            "disc_channels" => self.disc.base_channels = parse(key, v)?,
            _ => return Err(Error::invalid(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    fn from_flags(f: &RunFlags) -> Result<Self> {
        let mut settings = Self::default();
        settings.train.seed = resolve_seed(None)?;
        if let Some(p) = &f.config {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            settings.apply_text(&text)?;
        }
        for kv in &f.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("--set expects key=value, got {kv:?}")))?;
            settings.set(k.trim(), v.trim())?;
        }
        let t = &mut settings.train;
        if let Some(v) = f.seed {
            t.seed = v;
        }
        if let Some(v) = f.steps {
            t.total_steps = v;
        }
        if let Some(v) = f.crop {
            t.crop = v;
        }
        if let Some(v) = f.batch {
            t.batch = v;
        }
        if let Some(v) = f.lr {
            t.lr0 = v;
        }
        if let Some(v) = f.pairs {
            settings.pairs = v;
        }
        if let Some(v) = f.size {
            settings.image_size = v;
        }
        if let Some(v) = f.base_channels {
            settings.model.base_channels = v;
        }
        if let Some(v) = f.depth {
            settings.model.depth = v;
        }
        Ok(settings)
    }
}

/// Pairs listed in a `synthesize` output directory.
fn load_pairs(dir: &Path) -> Result<Vec<HazePair>> {
    let path = dir.join("pairs.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut pairs = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: PairRecord = serde_json::from_str(line)?;
        let clear = as_batch(&read_image::<f64>(&dir.join(&rec.clear))?)?;
        let hazy = as_batch(&read_image::<f64>(&dir.join(&rec.hazy))?)?;
        let (_, _, h, w) = clear.dims4()?;
        // Stored images are quantized; parameters are kept for reference only.
        let params = crate::hazesim::HazeParams {
            airlight: rec.airlight,
            field: crate::hazesim::HazeField::Density(Tensor::zeros(&[h, w])),
        };
        pairs.push(HazePair {
            clear,
            hazy,
            params,
            seed: rec.seed,
        });
    }
    Ok(pairs)
}

fn train(a: TrainArgs) -> Result<()> {
    let settings = RunSpec::from_flags(&a.run)?;
    let pairs = match &a.data {
        Some(d) => load_pairs(d)?,
        None => make_dataset(
            settings.pairs,
            settings.mode,
            &ImageSource::Procedural { size: settings.image_size },
            settings.train.seed,
        )?,
    };
    mkdir(&a.out)?;
    let cfg = TrainConfig {
        checkpoint_dir: Some(a.out.join("checkpoints")),
        ..settings.train.clone()
    };
    write_text(&a.out.join("run.json"), &(serde_json::to_string_pretty(&settings)? + "\n"))?;
    let (_, report) = train_gan(&settings.model, &settings.disc, &pairs, &cfg)?;
    write_text(&a.out.join("loss.csv"), &report.loss_csv())?;
    write_text(&a.out.join("eval.csv"), &report.eval_csv())?;
    let last = report.evals.last().expect("final evaluation");
    if let Some(b) = report.baseline {
        println!("hazy baseline: {:.3} dB, SSIM {:.4}", b.psnr, b.ssim);
    }
    println!("held-out after {} steps: {:.3} dB, SSIM {:.4}", cfg.total_steps, last.psnr, last.ssim);
    println!("checkpoint digest {}", report.final_digest);
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let settings = RunSpec::from_flags(&a.run)?;
    let seeds = if a.seeds.is_empty() {
        (0..3).map(|i| settings.train.seed + i).collect()
    } else {
        a.seeds.clone()
    };
    let setup = AblationSetup {
        model: settings.model,
        disc: settings.disc,
        train: settings.train,
        pairs: settings.pairs,
        image_size: settings.image_size,
        seeds,
    };
    let report = ablation_run(&setup)?;
    let md = report.markdown();
    if let Some(out) = &a.out {
        mkdir(out)?;
        write_text(&out.join("ablation.md"), &md)?;
        write_text(&out.join("ablation.csv"), &report.csv())?;
        write_text(&out.join("ablation.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    print!("{md}");
    Ok(())
}

/// Edge-replicates the bottom/right border up to multiples of `d`.
fn pad_to_multiple(x: &Tensor<f64>, d: usize) -> Result<Tensor<f64>> {
    let (b, c, h, w) = x.dims4()?;
    let (ph, pw) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(&[b, c, ph, pw]);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..ph {
                for xx in 0..pw {
                    let i = out.idx4(bi, ci, y, xx);
                    out.data_mut()[i] = x.at4(bi, ci, y.min(h - 1), xx.min(w - 1));
                }
            }
        }
    }
    Ok(out)
}

fn dehaze(a: DehazeArgs) -> Result<()> {
    let (gen, _, _) = load_checkpoint::<f64>(&a.checkpoint)?;
    let inputs = collect_images(&a.input)?;
    mkdir(&a.out)?;
    let d = gen.config.size_divisor();
    let mut outputs = Vec::with_capacity(inputs.len());
    for p in &inputs {
        let x = as_batch(&read_image::<f64>(p)?)?;
        let (_, _, h, w) = x.dims4()?;
        let y = gen.dehaze(&pad_to_multiple(&x, d)?)?;
        let y = crate::wavelet::crop(&y, h, w)?;
        let dest = a.out.join(file_name(p));
        write_image(&dest, &y)?;
        outputs.push(dest);
    }
    if !a.gt.is_empty() {
        let csv = metrics_csv(&outputs, &collect_images(&a.gt)?)?;
        write_text(&a.out.join("metrics.csv"), &csv)?;
        print!("{csv}");
    }
    println!("wrote {} images to {}", outputs.len(), a.out.display());
    Ok(())
}
