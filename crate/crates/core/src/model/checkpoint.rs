//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/generator/<param>.bin
//! <dir>/discriminator/<param>.bin   (optional)
//! ```
//!
//! Parameter files use the tensor binary format. The manifest records the
//! configuration, init seed, training step, parameter list and a digest of
//! the generator parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{load_params, save_params, ParamStore};
use super::{DiscConfig, Discriminator, Generator, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT: &str = "dwgan-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub discriminator: Option<DiscConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: CheckpointConfig,
    pub seed: u64,
    pub disc_seed: Option<u64>,
    pub step: usize,
    pub generator: Vec<ParamEntry>,
    pub discriminator: Vec<ParamEntry>,
    pub digest: String,
}

fn entries<T: Scalar>(store: &ParamStore<T>, sub: &str) -> Vec<ParamEntry> {
    store
        .iter()
        .map(|(n, p)| ParamEntry {
            name: n.clone(),
            file: format!("{sub}/{n}.bin"),
            shape: p.value.shape().to_vec(),
            trainable: p.trainable,
        })
        .collect()
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    gen: &Generator<T>,
    disc: Option<&Discriminator<T>>,
    step: usize,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_params(&gen.params, &dir.join("generator"), "")?;
    if let Some(d) = disc {
        save_params(&d.params, &dir.join("discriminator"), "")?;
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        config: CheckpointConfig {
            model: gen.config.clone(),
            discriminator: disc.map(|d| d.config.clone()),
        },
        seed: gen.seed,
        disc_seed: disc.map(|d| d.seed),
        step,
        generator: entries(&gen.params, "generator"),
        discriminator: disc.map(|d| entries(&d.params, "discriminator")).unwrap_or_default(),
        digest: gen.params.digest(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn check_names<T: Scalar>(store: &ParamStore<T>, listed: &[ParamEntry], what: &str) -> Result<()> {
    let have: Vec<&str> = store.names().collect();
    let want: Vec<&str> = listed.iter().map(|e| e.name.as_str()).collect();
    if have != want {
        return Err(Error::invalid(format!(
            "{what} parameter list in manifest does not match its configuration"
        )));
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::invalid(format!(
            "unsupported checkpoint format `{}` (expected `{FORMAT}`)",
            m.format
        )));
    }
    Ok(m)
}

pub type Loaded<T> = (Generator<T>, Option<Discriminator<T>>, Manifest);

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Loaded<T>> {
    let m = read_manifest(dir)?;
    let mut gen = Generator::new(m.config.model.clone(), m.seed)?;
    check_names(&gen.params, &m.generator, "generator")?;
    load_params(&mut gen.params, &dir.join("generator"), "")?;
    for e in &m.generator {
        gen.params.get_mut(&e.name)?.trainable = e.trainable;
    }
    let disc = match &m.config.discriminator {
        Some(cfg) => {
            let mut d = Discriminator::new(cfg.clone(), m.disc_seed.unwrap_or(0))?;
            check_names(&d.params, &m.discriminator, "discriminator")?;
            load_params(&mut d.params, &dir.join("discriminator"), "")?;
            Some(d)
        }
        None => None,
    };
    Ok((gen, disc, m))
}
