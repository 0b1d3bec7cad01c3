use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{io, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar> {
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters in creation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, Param { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// Replaces a value, keeping the shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    /// Wraps every parameter as a graph leaf. With `track` set, trainable
    /// parameters require gradients.
    pub fn bind(&self, track: bool) -> Bound<T> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(n, p)| (n.clone(), Var::leaf(p.value.clone(), track && p.trainable)))
                .collect(),
            open_gates: false,
        }
    }

    /// SHA-256 over names, shapes and values, as lowercase hex.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update(io::encode(&p.value));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parameters bound as graph leaves for one forward/backward pass.
pub struct Bound<T: Scalar> {
    vars: IndexMap<String, Var<T>>,
    /// Test hook: attention gates output exactly 1.
    pub open_gates: bool,
}

impl<T: Scalar> Bound<T> {
    pub fn var(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// `name.weight` (`O×I×k×k`) then `name.bias`, padding `k/2`.
    pub fn conv(&self, name: &str, x: &Var<T>, stride: usize) -> Result<Var<T>> {
        let w = self.var(&format!("{name}.weight"))?;
        let k = w.shape()[2];
        self.conv_padded(name, x, stride, k / 2)
    }

    pub fn conv_padded(&self, name: &str, x: &Var<T>, stride: usize, padding: usize) -> Result<Var<T>> {
        let w = self.var(&format!("{name}.weight"))?;
        let b = self.var(&format!("{name}.bias"))?;
        x.conv2d(w, stride, padding)?.bias_add(b)
    }

    /// Gradients of tracked parameters after a backward pass. Tracked
    /// parameters that did not take part in the graph get zeros.
    pub fn grads(&self) -> IndexMap<String, Tensor<T>> {
        self.vars
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(n, v)| {
                (
                    n.clone(),
                    v.grad().unwrap_or_else(|| Tensor::zeros(v.shape())),
                )
            })
            .collect()
    }

    /// Names of tracked parameters that received no gradient.
    pub fn untouched(&self) -> Vec<String> {
        self.vars
            .iter()
            .filter(|(_, v)| v.requires_grad() && v.grad().is_none())
            .map(|(n, _)| n.clone())
            .collect()
    }
}

/// Seeded Kaiming-style uniform initialization: weights in
/// `±sqrt(6 / fan_in)`, biases zero.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn conv<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        name: &str,
        cout: usize,
        cin: usize,
        k: usize,
        trainable: bool,
    ) -> Result<()> {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        let w = Tensor::uniform(&[cout, cin, k, k], -bound, bound, &mut self.rng);
        store.insert(format!("{name}.weight"), w, trainable)?;
        store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]), trainable)
    }
}

/// Writes every parameter to `dir/<name>.bin`.
pub fn save_params<T: Scalar>(store: &ParamStore<T>, dir: &std::path::Path, prefix: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, p) in store.iter() {
        io::save(&p.value, &dir.join(format!("{prefix}{name}.bin")))?;
    }
    Ok(())
}

/// Overwrites every parameter of `store` from `dir/<name>.bin`.
pub fn load_params<T: Scalar>(store: &mut ParamStore<T>, dir: &std::path::Path, prefix: &str) -> Result<()> {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let t = io::load(&dir.join(format!("{prefix}{name}.bin")))?;
        store.set(&name, t)?;
    }
    Ok(())
}
