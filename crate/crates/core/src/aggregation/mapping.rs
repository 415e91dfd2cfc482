use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::write_atomic;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::SparseMatrix;

/// Where a mapping matrix came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Qem,
    Attention,
    Fused,
    Exported,
    Average,
    Full,
    Variant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MappingMatrix<T> {
    pub matrix: SparseMatrix<T>,
    pub provenance: Provenance,
}

/// JSON metadata stored next to an exported mapping's CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingSidecar {
    pub provenance: Provenance,
    pub level: usize,
    /// `down` (encoder) or `up` (decoder).
    pub direction: String,
    pub rows: usize,
    pub cols: usize,
    pub k: Option<usize>,
    pub c: Option<usize>,
    pub w_a: Option<f64>,
}

impl<T: Real> MappingMatrix<T> {
    pub fn new(matrix: SparseMatrix<T>, provenance: Provenance) -> Self {
        Self { matrix, provenance }
    }

    /// Largest `|row sum − 1|`.
    pub fn max_row_sum_error(&self) -> f64 {
        self.matrix
            .row_sums()
            .into_iter()
            .map(|s| (s.to_f64_lossy() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str, sidecar: &MappingSidecar) -> Result<()> {
        let mut buf = Vec::new();
        self.matrix.write_csv(&mut buf)?;
        write_atomic(&dir.join(format!("{stem}.csv")), &buf)?;
        write_atomic(
            &dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(sidecar)?.as_bytes(),
        )
    }

    pub fn read(dir: &Path, stem: &str) -> Result<(Self, MappingSidecar)> {
        let sidecar: MappingSidecar = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
        let file = fs::File::open(dir.join(format!("{stem}.csv")))?;
        let matrix = SparseMatrix::read_csv(BufReader::new(file), sidecar.rows, sidecar.cols)?;
        Ok((Self::new(matrix, sidecar.provenance), sidecar))
    }
}

/// Dense row `vertex` of `m`: the weights the output vertex draws from each input vertex.
pub fn receptive_field<T: Real>(m: &SparseMatrix<T>, vertex: usize) -> Result<Vec<T>> {
    if vertex >= m.rows() {
        return Err(Error::Index {
            op: "receptive_field",
            index: vertex as i64,
            bound: m.rows(),
        });
    }
    Ok(m.dense_row(vertex))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = MappingMatrix::new(
            SparseMatrix::from_triplets(2, 3, vec![(0, 1, 1.0), (1, 0, 0.25), (1, 2, 0.75)]).unwrap(),
            Provenance::Exported,
        );
        let side = MappingSidecar {
            provenance: Provenance::Exported,
            level: 1,
            direction: "up".into(),
            rows: 2,
            cols: 3,
            k: Some(32),
            c: Some(21),
            w_a: Some(0.2),
        };
        m.write(dir.path(), "up_1", &side).unwrap();
        let (back, s) = MappingMatrix::<f64>::read(dir.path(), "up_1").unwrap();
        assert_eq!(back, m);
        assert_eq!(s, side);
        assert_eq!(m.max_row_sum_error(), 0.0);
    }

    #[test]
    fn receptive_field_rows() {
        let m = SparseMatrix::from_triplets(2, 4, vec![(1, 0, 0.2), (1, 1, 0.3), (1, 3, 0.5)]).unwrap();
        let rf = receptive_field(&m, 1).unwrap();
        assert_eq!(rf, vec![0.2, 0.3, 0.0, 0.5]);
        assert!((rf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(receptive_field(&m, 2).is_err());
    }
}
