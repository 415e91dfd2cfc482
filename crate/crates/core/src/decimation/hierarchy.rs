use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::write_atomic;
use crate::error::{Error, Result};
use crate::mesh::{parse_obj, serialize_obj, TriMesh};
use crate::scalar::Real;
use crate::sparse::SparseMatrix;

use super::mapping::{downsample_matrix, upsample_matrix};
use super::qem::qem_decimate;

/// Meshes from coarsest (level 0) to finest (level `L`), with the mappings
/// between each pair of consecutive levels.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshHierarchy<T> {
    levels: Vec<TriMesh<T>>,
    kept: Vec<Vec<usize>>,
    down: Vec<SparseMatrix<T>>,
    up: Vec<SparseMatrix<T>>,
}

impl<T: Real> MeshHierarchy<T> {
    /// Number of down/up steps `L`.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &TriMesh<T> {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[TriMesh<T>] {
        &self.levels
    }

    pub fn finest(&self) -> &TriMesh<T> {
        self.levels.last().expect("hierarchy has at least one level")
    }

    /// Vertex counts `n_0..=n_L`.
    pub fn counts(&self) -> Vec<usize> {
        self.levels.iter().map(|m| m.num_vertices()).collect()
    }

    /// Indices into level `l + 1` of the vertices kept at level `l`.
    pub fn kept(&self, l: usize) -> &[usize] {
        &self.kept[l]
    }

    /// Selection `n_l × n_{l+1}`.
    pub fn down(&self, l: usize) -> &SparseMatrix<T> {
        &self.down[l]
    }

    /// Barycentric interpolation `n_{l+1} × n_l`.
    pub fn up(&self, l: usize) -> &SparseMatrix<T> {
        &self.up[l]
    }

    /// Writes `hierarchy.json`, `level_<l>.obj` and `down_<l>.csv` / `up_<l>.csv`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = HierarchyManifest {
            levels: Vec::new(),
            kept: self.kept.clone(),
            down: Vec::new(),
            up: Vec::new(),
        };
        for (l, m) in self.levels.iter().enumerate() {
            let name = format!("level_{l}.obj");
            let mut buf = Vec::new();
            serialize_obj(m, &mut buf)?;
            write_atomic(&dir.join(&name), &buf)?;
            manifest.levels.push(LevelEntry {
                mesh: name,
                vertices: m.num_vertices(),
                faces: m.num_faces(),
            });
        }
        for l in 0..self.depth() {
            for (kind, mat, list) in [
                ("down", &self.down[l], &mut manifest.down),
                ("up", &self.up[l], &mut manifest.up),
            ] {
                let name = format!("{kind}_{l}.csv");
                let mut buf = Vec::new();
                mat.write_csv(&mut buf)?;
                write_atomic(&dir.join(&name), &buf)?;
                list.push(name);
            }
        }
        write_atomic(&dir.join("hierarchy.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
    }

    pub fn import(dir: &Path) -> Result<Self> {
        let manifest: HierarchyManifest = serde_json::from_slice(&fs::read(dir.join("hierarchy.json"))?)?;
        let mut levels = Vec::new();
        for e in &manifest.levels {
            let m: TriMesh<T> = parse_obj(BufReader::new(fs::File::open(dir.join(&e.mesh))?))?;
            if m.num_vertices() != e.vertices || m.num_faces() != e.faces {
                return Err(Error::Structure(format!("{} does not match its manifest entry", e.mesh)));
            }
            levels.push(m);
        }
        if levels.is_empty()
            || manifest.down.len() + 1 != levels.len()
            || manifest.up.len() + 1 != levels.len()
            || manifest.kept.len() + 1 != levels.len()
        {
            return Err(Error::Structure("inconsistent hierarchy manifest".into()));
        }
        let read = |name: &str, rows: usize, cols: usize| -> Result<SparseMatrix<T>> {
            SparseMatrix::read_csv(BufReader::new(fs::File::open(dir.join(name))?), rows, cols)
        };
        let mut down = Vec::new();
        let mut up = Vec::new();
        for l in 0..levels.len() - 1 {
            let (nc, nf) = (levels[l].num_vertices(), levels[l + 1].num_vertices());
            down.push(read(&manifest.down[l], nc, nf)?);
            up.push(read(&manifest.up[l], nf, nc)?);
        }
        Ok(Self {
            levels,
            kept: manifest.kept,
            down,
            up,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct HierarchyManifest {
    levels: Vec<LevelEntry>,
    kept: Vec<Vec<usize>>,
    down: Vec<String>,
    up: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LevelEntry {
    mesh: String,
    vertices: usize,
    faces: usize,
}

/// Repeated decimation with targets `n_l = ⌈n_{l+1} / factor⌉`.
///
/// Requires `n ≥ factor^levels · 4`.
pub fn build_hierarchy<T: Real>(template: &TriMesh<T>, levels: usize, factor: usize) -> Result<MeshHierarchy<T>> {
    if levels == 0 || factor < 2 {
        return Err(Error::Config(format!("need levels ≥ 1 and factor ≥ 2 (got {levels}, {factor})")));
    }
    let n = template.num_vertices();
    let min_n = factor
        .checked_pow(levels as u32)
        .and_then(|p| p.checked_mul(4))
        .unwrap_or(usize::MAX);
    if n < min_n {
        return Err(Error::Contract(format!(
            "template has {n} vertices; {levels} levels at factor {factor} need at least {min_n}"
        )));
    }
    let mut counts = Vec::with_capacity(levels);
    let mut c = n;
    for _ in 0..levels {
        c = c.div_ceil(factor);
        counts.push(c);
    }
    build_hierarchy_with_counts(template, &counts)
}

/// Decimates to each count in `counts` (finest to coarsest, strictly decreasing).
pub fn build_hierarchy_with_counts<T: Real>(template: &TriMesh<T>, counts: &[usize]) -> Result<MeshHierarchy<T>> {
    let mut prev = template.num_vertices();
    for &c in counts {
        if c >= prev || c < 3 {
            return Err(Error::Config(format!("level counts must decrease and stay ≥ 3: {counts:?}")));
        }
        prev = c;
    }
    let mut fine_to_coarse = vec![template.clone()];
    let mut kept = Vec::new();
    let mut down = Vec::new();
    let mut up = Vec::new();
    for &c in counts {
        let fine = fine_to_coarse.last().unwrap();
        let d = qem_decimate(fine, c)?;
        down.push(downsample_matrix(fine.num_vertices(), &d.kept)?);
        up.push(upsample_matrix(fine, &d.mesh, &d.kept)?);
        kept.push(d.kept);
        fine_to_coarse.push(d.mesh);
    }
    fine_to_coarse.reverse();
    kept.reverse();
    down.reverse();
    up.reverse();
    Ok(MeshHierarchy {
        levels: fine_to_coarse,
        kept,
        down,
        up,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn icosphere_depth_precondition() {
        let m = icosphere::<f64>(2);
        assert!(build_hierarchy(&m, 4, 4).is_err());
        assert!(build_hierarchy(&m, 3, 4).is_err());
        let h = build_hierarchy(&m, 2, 4).unwrap();
        assert_eq!(h.counts(), vec![11, 41, 162]);
    }

    #[test]
    fn mapping_shapes_and_reconstruction() {
        let h = build_hierarchy(&icosphere::<f64>(2), 2, 4).unwrap();
        for l in 0..h.depth() {
            let (nc, nf) = (h.level(l).num_vertices(), h.level(l + 1).num_vertices());
            assert_eq!((h.down(l).rows(), h.down(l).cols()), (nc, nf));
            assert_eq!((h.up(l).rows(), h.up(l).cols()), (nf, nc));
            let p = h.level(l + 1).flat_positions();
            let coarse = h.down(l).matmul_dense(&p, 3);
            assert_eq!(coarse, h.level(l).flat_positions());
            let back = h.up(l).matmul_dense(&coarse, 3);
            for &k in h.kept(l) {
                assert_eq!(&back[k * 3..k * 3 + 3], &p[k * 3..k * 3 + 3]);
            }
        }
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = build_hierarchy(&icosphere::<f64>(2), 2, 4).unwrap();
        h.export(dir.path()).unwrap();
        assert_eq!(MeshHierarchy::<f64>::import(dir.path()).unwrap(), h);
    }
}
