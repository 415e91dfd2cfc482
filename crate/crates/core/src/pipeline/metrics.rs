use std::io::Write;

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::mesh::MeshSequenceDataset;
use crate::model::Autoencoder;
use crate::scalar::Real;

/// Number of thresholds on the cumulative error curve.
pub const CURVE_POINTS: usize = 256;

/// Anything that maps normalized inputs to normalized reconstructions.
pub trait Reconstructor<T: Real>: Sync {
    fn reconstruct(&self, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>>;
}

impl<T: Real> Reconstructor<T> for Autoencoder<T> {
    fn reconstruct(&self, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        self.forward_batch(inputs)
    }
}

/// Per-vertex Euclidean reconstruction error statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub max: f64,
    /// Number of (sample, vertex) errors aggregated.
    pub count: usize,
    /// Factor applied to every distance (1 for model units).
    pub scale: f64,
    /// `(threshold, fraction of errors ≤ threshold)`, thresholds evenly spaced on `[0, max]`.
    pub curve: Vec<(f64, f64)>,
}

impl Metrics {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "metric,value")?;
        for (k, v) in [
            ("mean", self.mean),
            ("std", self.std),
            ("median", self.median),
            ("max", self.max),
            ("count", self.count as f64),
            ("scale", self.scale),
        ] {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    }

    pub fn write_curve_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "threshold,fraction")?;
        for (t, f) in &self.curve {
            writeln!(w, "{t},{f}")?;
        }
        Ok(())
    }
}

/// Summary statistics of raw per-vertex errors.
pub fn metrics_from_errors(errors: &[f64], scale: f64) -> Result<Metrics> {
    if errors.is_empty() {
        return Err(Error::Contract("no errors to summarize".into()));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let std = (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
    let mut sorted = errors.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
    let max = *sorted.last().unwrap();
    let curve = (0..CURVE_POINTS)
        .map(|i| {
            let t = max * i as f64 / (CURVE_POINTS - 1) as f64;
            let below = sorted.partition_point(|&e| e <= t);
            (t, below as f64 / n)
        })
        .collect();
    Ok(Metrics {
        mean,
        std,
        median,
        max,
        count: errors.len(),
        scale,
        curve,
    })
}

/// Distances between denormalized reconstructions and the raw samples of `split`,
/// sample-major, multiplied by `scale`.
pub fn per_vertex_errors<T: Real, R: Reconstructor<T>>(
    model: &R,
    dataset: &MeshSequenceDataset<T>,
    split: &str,
    scale: f64,
) -> Result<Vec<f64>> {
    let indices = dataset.split().get(split)?.to_vec();
    if indices.is_empty() {
        return Err(Error::Contract(format!("split {split} is empty")));
    }
    let chunks: Vec<Vec<f64>> = indices
        .par_chunks(16)
        .map(|chunk| -> Result<Vec<f64>> {
            let inputs = chunk.iter().map(|&i| dataset.normalized_sample(i)).collect::<Result<Vec<_>>>()?;
            let outputs = model.reconstruct(&inputs)?;
            let mut errs = Vec::new();
            for (&i, y) in chunk.iter().zip(&outputs) {
                let recon = dataset.denormalize(y)?;
                for (p, q) in recon.iter().zip(&dataset.samples()[i]) {
                    let d: f64 = (0..3).map(|k| (p[k] - q[k]).to_f64_lossy().powi(2)).sum::<f64>().sqrt();
                    errs.push(d * scale);
                }
            }
            Ok(errs)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

pub fn evaluate<T: Real, R: Reconstructor<T>>(
    model: &R,
    dataset: &MeshSequenceDataset<T>,
    split: &str,
    scale: f64,
) -> Result<Metrics> {
    metrics_from_errors(&per_vertex_errors(model, dataset, split, scale)?, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_synthetic_dataset, SynthConfig};

    struct Identity;
    impl Reconstructor<f64> for Identity {
        fn reconstruct(&self, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
            Ok(inputs.to_vec())
        }
    }

    /// Shifts the reconstruction by one model unit along x.
    struct Offset<'a>(&'a MeshSequenceDataset<f64>);
    impl Reconstructor<f64> for Offset<'_> {
        fn reconstruct(&self, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
            let stats = self.0.normalization().unwrap();
            Ok(inputs
                .iter()
                .map(|x| {
                    let mut y = x.clone();
                    for (v, row) in y.data_mut().chunks_mut(3).enumerate() {
                        row[0] += 1.0 / stats.std[3 * v];
                    }
                    y
                })
                .collect())
        }
    }

    fn data() -> MeshSequenceDataset<f64> {
        let cfg = SynthConfig { n_samples: 20, subdivisions: 1, harmonic_order: 2, amplitude: 0.1, seed: 2 };
        let mut ds = generate_synthetic_dataset(&cfg).unwrap();
        ds.normalize().unwrap();
        ds
    }

    #[test]
    fn identity_has_zero_error() {
        let m = evaluate(&Identity, &data(), "test", 1.0).unwrap();
        assert_eq!(m.mean, 0.0);
        assert_eq!(m.curve.last().unwrap().1, 1.0);
    }

    #[test]
    fn unit_offset_gives_unit_error() {
        let ds = data();
        let m = evaluate(&Offset(&ds), &ds, "test", 1.0).unwrap();
        assert!((m.mean - 1.0).abs() < 1e-9);
        assert!(m.std < 1e-9);
        let mm = evaluate(&Offset(&ds), &ds, "test", 1000.0).unwrap();
        assert!((mm.mean - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn statistics_match_brute_force() {
        let errors = [0.5, 0.1, 0.9, 0.3];
        let m = metrics_from_errors(&errors, 1.0).unwrap();
        assert!((m.mean - 0.45).abs() < 1e-15);
        assert!((m.median - 0.4).abs() < 1e-15);
        let var = errors.iter().map(|e| (e - 0.45f64).powi(2)).sum::<f64>() / 4.0;
        assert!((m.std - var.sqrt()).abs() < 1e-15);
        assert_eq!(m.curve.len(), CURVE_POINTS);
        assert!(m.curve.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(m.curve[CURVE_POINTS - 1], (0.9, 1.0));
        assert!(metrics_from_errors(&[], 1.0).is_err());
    }

    #[test]
    fn empty_split_rejected() {
        let mut ds = data();
        let mut split = ds.split().clone();
        split.test.clear();
        ds = MeshSequenceDataset::new(ds.template().clone(), ds.samples().to_vec(), split).unwrap();
        ds.normalize().unwrap();
        assert!(evaluate(&Identity, &ds, "test", 1.0).is_err());
    }
}
