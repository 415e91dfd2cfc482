//! Named parameter storage and the on-disk checkpoint container.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;

/// Whether a parameter survives into the inference-time model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    /// Convolution, fully connected and learned mapping weights.
    Model,
    /// Keys, queries and fusion weights; dropped once mappings are exported.
    Attention,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub role: ParamRole,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: Arc<HashMap<String, usize>>,
}

/// Tape variables for every stored parameter, created by [`ParamStore::bind`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
    index: Arc<HashMap<String, usize>>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Var {
        self.try_var(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: Arc::new(HashMap::new()),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, role: ParamRole) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        Arc::make_mut(&mut self.index).insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            value,
            role,
            trainable: true,
        });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].value)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        self.entries[i].trainable = trainable;
        Ok(())
    }

    pub fn remove_role(&mut self, role: ParamRole) {
        self.entries.retain(|e| e.role != role);
        self.index = Arc::new(
            self.entries
                .iter()
                .enumerate()
                .map(|(i, e)| (e.name.clone(), i))
                .collect(),
        );
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count, optionally restricted to one role.
    pub fn count(&self, role: Option<ParamRole>) -> usize {
        self.entries
            .iter()
            .filter(|e| role.map_or(true, |r| e.role == r))
            .map(|e| e.value.len())
            .sum()
    }

    /// Records every parameter as a leaf; frozen ones become constants.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if e.trainable {
                    tape.param(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Bindings {
            vars,
            index: Arc::clone(&self.index),
        }
    }

    /// Bindings over caller-created variables, one per entry in order.
    pub fn bindings_from(&self, vars: &[Var]) -> Result<Bindings> {
        if vars.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.entries.len()
            )));
        }
        Ok(Bindings {
            vars: vars.to_vec(),
            index: Arc::clone(&self.index),
        })
    }

    /// Gradients aligned with [`entries`](Self::entries); frozen entries get zeros.
    pub fn collect_grads(&self, bindings: &Bindings, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.entries
            .iter()
            .zip(bindings.vars())
            .map(|(e, &v)| {
                if e.trainable {
                    grads.get(v)
                } else {
                    Tensor::zeros(e.value.shape())
                }
            })
            .collect()
    }

    pub fn values_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.entries.iter_mut().map(|e| &mut e.value).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut blob = Vec::with_capacity(self.count(None) * 8);
        let mut params = Vec::with_capacity(self.entries.len());
        let mut offset = 0;
        for e in &self.entries {
            params.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                offset,
                role: e.role,
                trainable: e.trainable,
            });
            for v in e.value.data() {
                blob.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
            offset += e.value.len();
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            dtype: "f64".to_string(),
            blob: BLOB_NAME.to_string(),
            params,
        };
        write_atomic(&dir.join(BLOB_NAME), &blob)?;
        write_atomic(
            &dir.join(MANIFEST_NAME),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_NAME))?)?;
        if manifest.format != MANIFEST_FORMAT || manifest.dtype != "f64" {
            return Err(Error::UnsupportedFormat(format!(
                "checkpoint format {} / {}",
                manifest.format, manifest.dtype
            )));
        }
        let blob = fs::read(dir.join(&manifest.blob))?;
        let mut store = Self::new();
        for p in manifest.params {
            let n: usize = p.shape.iter().product();
            let start = p.offset * 8;
            let bytes = blob.get(start..start + n * 8).ok_or_else(|| {
                Error::Contract(format!("checkpoint blob too short for {}", p.name))
            })?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            store.insert(p.name.clone(), Tensor::new(p.shape, data)?, p.role)?;
            store.set_trainable(&p.name, p.trainable)?;
        }
        Ok(store)
    }
}

const MANIFEST_FORMAT: &str = "meshattn-params-v1";
const MANIFEST_NAME: &str = "params.json";
const BLOB_NAME: &str = "params.bin";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    blob: String,
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    role: ParamRole,
    trainable: bool,
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f64>::new();
        store
            .insert("w", Tensor::matrix(2, 2, vec![0.1, -1e-300, 3.5, f64::MIN_POSITIVE]).unwrap(), ParamRole::Model)
            .unwrap();
        store
            .insert("keys", Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap(), ParamRole::Attention)
            .unwrap();
        store.set_trainable("keys", false).unwrap();
        store.save(dir.path()).unwrap();
        let back = ParamStore::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.entries(), store.entries());
    }

    #[test]
    fn counts_by_role_and_removal() {
        let mut store = ParamStore::<f64>::new();
        store.insert("a", Tensor::zeros(&[3, 4]), ParamRole::Model).unwrap();
        store.insert("k", Tensor::zeros(&[5, 2]), ParamRole::Attention).unwrap();
        assert_eq!(store.count(None), 22);
        assert_eq!(store.count(Some(ParamRole::Model)), 12);
        store.remove_role(ParamRole::Attention);
        assert_eq!(store.count(None), 12);
        assert!(store.get("k").is_none());
        assert!(store.get("a").is_some());
        assert!(store.insert("a", Tensor::zeros(&[1, 1]), ParamRole::Model).is_err());
    }
}
