use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{dim_err, Error, Result};
use crate::mesh::TriMesh;
use crate::scalar::Real;

/// Per-vertex spiral index table, `n × length`, `-1` marking padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpiralTable {
    length: usize,
    index: Arc<Vec<i64>>,
}

impl SpiralTable {
    pub fn num_vertices(&self) -> usize {
        self.index.len() / self.length
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.index[i * self.length..(i + 1) * self.length]
    }

    /// Flattened row-major indices.
    pub fn indices(&self) -> &Arc<Vec<i64>> {
        &self.index
    }

    /// One line per vertex, comma-separated indices.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.num_vertices() {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Ordered 1-ring of `v`: counterclockwise, starting at the smallest neighbour
/// on a closed ring or at the first boundary neighbour on an open one.
fn ordered_ring<T: Real>(mesh: &TriMesh<T>, v: usize, incident: &[usize]) -> Result<Vec<usize>> {
    let bad = |why: &str| Error::Structure(format!("vertex {v}: {why}"));
    // each incident face (v, a, b) in ccw order contributes the step a → b
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    let mut has_prev: BTreeMap<usize, bool> = BTreeMap::new();
    for &f in incident {
        let face = mesh.faces()[f];
        let k = face.iter().position(|&u| u == v).unwrap();
        let (a, b) = (face[(k + 1) % 3], face[(k + 2) % 3]);
        if next.insert(a, b).is_some() {
            return Err(bad("inconsistent face orientation around this vertex"));
        }
        has_prev.entry(a).or_insert(false);
        if has_prev.insert(b, true) == Some(true) {
            return Err(bad("inconsistent face orientation around this vertex"));
        }
    }
    let starts: Vec<usize> = has_prev.iter().filter(|(_, &p)| !p).map(|(&u, _)| u).collect();
    let start = match starts.len() {
        0 => match has_prev.keys().next() {
            Some(&s) => s,
            None => return Ok(Vec::new()),
        },
        1 => starts[0],
        _ => return Err(bad("neighbourhood is not a single fan")),
    };
    let mut ring = vec![start];
    let mut cur = start;
    while let Some(&nx) = next.get(&cur) {
        if nx == start {
            break;
        }
        ring.push(nx);
        cur = nx;
        if ring.len() > has_prev.len() {
            return Err(bad("neighbourhood is not a single fan"));
        }
    }
    if ring.len() != has_prev.len() {
        return Err(bad("neighbourhood is not a single fan"));
    }
    Ok(ring)
}

fn incident_faces<T: Real>(mesh: &TriMesh<T>) -> Vec<Vec<usize>> {
    let mut inc = vec![Vec::new(); mesh.num_vertices()];
    for (f, face) in mesh.faces().iter().enumerate() {
        for &v in face {
            inc[v].push(f);
        }
    }
    inc
}

/// `1 +` the largest 1-ring size.
pub fn spiral_length<T: Real>(mesh: &TriMesh<T>) -> Result<usize> {
    let inc = incident_faces(mesh);
    let mut best = 0;
    for v in 0..mesh.num_vertices() {
        best = best.max(ordered_ring(mesh, v, &inc[v])?.len());
    }
    Ok(best + 1)
}

/// Row `i` is `[i, ring(i)...]`, truncated to `length` and padded with `-1`.
pub fn spiral_sequences<T: Real>(mesh: &TriMesh<T>, length: usize) -> Result<SpiralTable> {
    if length == 0 {
        return Err(Error::Config("spiral length must be at least 1".into()));
    }
    let inc = incident_faces(mesh);
    let n = mesh.num_vertices();
    let mut index = vec![-1i64; n * length];
    for v in 0..n {
        let row = &mut index[v * length..(v + 1) * length];
        row[0] = v as i64;
        let ring = ordered_ring(mesh, v, &inc[v])?;
        for (slot, u) in row[1..].iter_mut().zip(ring) {
            *slot = u as i64;
        }
    }
    Ok(SpiralTable {
        length,
        index: Arc::new(index),
    })
}

/// Linear map over concatenated spiral neighbourhoods; weights are `(ℓ·d_in) × d_out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpiralLayer {
    pub length: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl SpiralLayer {
    pub fn new(length: usize, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            length,
            d_in,
            d_out,
            bias,
        }
    }

    pub fn weight_shape(&self) -> [usize; 2] {
        [self.length * self.d_in, self.d_out]
    }

    pub fn num_params(&self) -> usize {
        self.length * self.d_in * self.d_out + if self.bias { self.d_out } else { 0 }
    }

    pub fn init_weight<T: Real, R: Rng>(&self, rng: &mut R) -> Tensor<T> {
        super::glorot(self.length * self.d_in, self.d_out, rng)
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        spirals: &SpiralTable,
        weight: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        let (n, d) = tape.value(x).dims2("spiral_conv")?;
        if d != self.d_in || spirals.num_vertices() != n || spirals.length() != self.length {
            return dim_err(
                "spiral_conv",
                format!(
                    "features {n}x{d}, table {}x{}, layer expects length {} and d_in {}",
                    spirals.num_vertices(),
                    spirals.length(),
                    self.length,
                    self.d_in
                ),
            );
        }
        if tape.value(weight).shape() != self.weight_shape() {
            return dim_err("spiral_conv", format!("weight shape {:?}, expected {:?}", tape.value(weight).shape(), self.weight_shape()));
        }
        let g = tape.gather_rows(x, Arc::clone(spirals.indices()))?;
        let g = tape.reshape(g, &[n, self.length * d])?;
        let y = tape.matmul(g, weight)?;
        match (self.bias, bias) {
            (true, Some(b)) => tape.add_bias(y, b),
            (false, None) => Ok(y),
            (expected, _) => dim_err("spiral_conv", format!("layer bias flag is {expected} but bias argument disagrees")),
        }
    }
}
