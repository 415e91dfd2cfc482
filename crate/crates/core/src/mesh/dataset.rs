//! Registered mesh collections and per-vertex standardization.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{write_atomic, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::io::{parse_obj, serialize_obj};
use super::TriMesh;

/// Lower bound applied to every per-vertex standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// 80/10/10 by sample index: the first `⌊0.8n⌋` train, the next `⌊0.1n⌋` validation.
    pub fn by_fraction(n: usize) -> Self {
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        Self {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "val" | "validation" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Index { op: "split", index: i as i64, bound: n });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract(format!("sample {i} appears in more than one split")));
            }
        }
        Ok(())
    }
}

/// Per-vertex, per-coordinate mean and (floored) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Normalization<T> {
    pub fn fit(samples: &[Vec<[T; 3]>], indices: &[usize]) -> Result<Self> {
        let Some(&first) = indices.first() else {
            return Err(Error::Contract("normalization needs a non-empty training split".into()));
        };
        let len = samples[first].len() * 3;
        let count = T::from_usize(indices.len()).unwrap();
        let mut mean = vec![T::zero(); len];
        for &i in indices {
            for (m, &v) in mean.iter_mut().zip(samples[i].iter().flatten()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![T::zero(); len];
        for &i in indices {
            for ((s, &v), &m) in var.iter_mut().zip(samples[i].iter().flatten()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let floor = T::lit(STD_FLOOR);
        let std = var.into_iter().map(|s| (s / count).sqrt().max(floor)).collect();
        Ok(Self { mean, std })
    }

    /// `(x − mean) / std`, flattened `n×3`.
    pub fn normalize(&self, positions: &[[T; 3]]) -> Vec<T> {
        positions
            .iter()
            .flatten()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, flat: &[T]) -> Vec<[T; 3]> {
        let out: Vec<T> = flat
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| x * s + m)
            .collect();
        super::unflatten_positions(&out)
    }
}

/// A template plus registered samples sharing its faces.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshSequenceDataset<T> {
    template: TriMesh<T>,
    samples: Vec<Vec<[T; 3]>>,
    split: Split,
    normalization: Option<Normalization<T>>,
}

impl<T: Real> MeshSequenceDataset<T> {
    pub fn new(template: TriMesh<T>, samples: Vec<Vec<[T; 3]>>, split: Split) -> Result<Self> {
        let n = template.num_vertices();
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != n) {
            return Err(Error::Dimension {
                op: "dataset",
                detail: format!("sample {i} has {} vertices, template has {n}", s.len()),
            });
        }
        split.validate(samples.len())?;
        Ok(Self {
            template,
            samples,
            split,
            normalization: None,
        })
    }

    pub fn template(&self) -> &TriMesh<T> {
        &self.template
    }

    pub fn samples(&self) -> &[Vec<[T; 3]>] {
        &self.samples
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn normalization(&self) -> Option<&Normalization<T>> {
        self.normalization.as_ref()
    }

    /// Fits standardization statistics on the training split.
    pub fn normalize(&mut self) -> Result<&Normalization<T>> {
        let stats = Normalization::fit(&self.samples, &self.split.train)?;
        Ok(self.normalization.insert(stats))
    }

    fn stats(&self) -> Result<&Normalization<T>> {
        self.normalization
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset has not been normalized".into()))
    }

    /// Standardized sample as an `n×3` tensor.
    pub fn normalized_sample(&self, i: usize) -> Result<Tensor<T>> {
        let flat = self.stats()?.normalize(&self.samples[i]);
        Tensor::matrix(self.template.num_vertices(), 3, flat)
    }

    pub fn denormalize(&self, features: &Tensor<T>) -> Result<Vec<[T; 3]>> {
        Ok(self.stats()?.denormalize(features.data()))
    }

    /// Writes `manifest.json`, `template.obj` and one OBJ per sample under `samples/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("samples"))?;
        let mut buf = Vec::new();
        serialize_obj(&self.template, &mut buf)?;
        write_atomic(&dir.join("template.obj"), &buf)?;
        let mut names = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            let name = format!("samples/sample_{i:05}.obj");
            let mut buf = Vec::new();
            serialize_obj(&self.template.with_positions(s.clone())?, &mut buf)?;
            write_atomic(&dir.join(&name), &buf)?;
            names.push(name);
        }
        let manifest = DatasetManifest {
            template: "template.obj".into(),
            samples: names,
            split: self.split.clone(),
            normalization: self.normalization.as_ref().map(|n| Normalization {
                mean: n.mean.iter().map(|v| v.to_f64_lossy()).collect(),
                std: n.std.iter().map(|v| v.to_f64_lossy()).collect(),
            }),
        };
        write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let read_mesh = |rel: &str| -> Result<TriMesh<T>> {
            parse_obj(BufReader::new(fs::File::open(dir.join(rel))?))
        };
        let template = read_mesh(&manifest.template)?;
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for rel in &manifest.samples {
            let m = read_mesh(rel)?;
            if m.faces() != template.faces() {
                return Err(Error::Structure(format!("{rel} does not share the template topology")));
            }
            samples.push(m.positions().to_vec());
        }
        let mut ds = Self::new(template, samples, manifest.split)?;
        ds.normalization = manifest.normalization.map(|n| Normalization {
            mean: n.mean.into_iter().map(T::lit).collect(),
            std: n.std.into_iter().map(T::lit).collect(),
        });
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    template: String,
    samples: Vec<String>,
    split: Split,
    normalization: Option<Normalization<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_synthetic_dataset, SynthConfig};

    fn small() -> MeshSequenceDataset<f64> {
        let cfg = SynthConfig { n_samples: 20, subdivisions: 1, harmonic_order: 3, amplitude: 0.2, seed: 4 };
        generate_synthetic_dataset(&cfg).unwrap()
    }

    #[test]
    fn split_is_80_10_10() {
        let s = Split::by_fraction(80);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (64, 8, 8));
        assert_eq!(s.val[0], 64);
        assert_eq!(s.test[0], 72);
    }

    #[test]
    fn normalize_denormalize_is_identity() {
        let mut ds = small();
        ds.normalize().unwrap();
        for i in 0..ds.len() {
            let x = ds.normalized_sample(i).unwrap();
            let back = ds.denormalize(&x).unwrap();
            for (a, b) in back.iter().flatten().zip(ds.samples()[i].iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn training_split_has_zero_mean() {
        let mut ds = small();
        ds.normalize().unwrap();
        let train = ds.split().train.clone();
        let n = ds.template().num_vertices() * 3;
        let mut acc = vec![0.0; n];
        for &i in &train {
            for (a, v) in acc.iter_mut().zip(ds.normalized_sample(i).unwrap().data()) {
                *a += v;
            }
        }
        for a in acc {
            assert!((a / train.len() as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_coordinate_hits_floor() {
        let template = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let samples: Vec<Vec<[f64; 3]>> = (0..10)
            .map(|k| vec![[k as f64, 2.0, 0.0], [1.0, k as f64, 0.0], [0.0, 1.0, 3.0]])
            .collect();
        let mut ds = MeshSequenceDataset::new(template, samples, Split::by_fraction(10)).unwrap();
        let stats = ds.normalize().unwrap().clone();
        assert_eq!(stats.std[1], STD_FLOOR);
        assert_eq!(ds.normalized_sample(0).unwrap().data()[1], 0.0);
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let mut ds = small();
        ds.split.train.clear();
        assert!(ds.normalize().is_err());
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = small();
        ds.normalize().unwrap();
        ds.save(dir.path()).unwrap();
        let back = MeshSequenceDataset::<f64>::load(dir.path()).unwrap();
        assert_eq!(back, ds);
    }
}
