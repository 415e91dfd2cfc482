//! Greedy quadric-error edge collapse restricted to the input vertex set.
//!
//! Each collapse merges one endpoint into the other, which keeps its
//! position, so every coarse vertex is traceable to a fine vertex.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::scalar::Real;

use super::geom::{dot, face_normal};
use super::quadric::{vertex_quadrics, Quadric};

/// One step of the collapse trace: `removed` was absorbed by `survivor`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Collapse {
    pub removed: usize,
    pub survivor: usize,
}

#[derive(Clone, Debug)]
pub struct Decimation<T> {
    pub mesh: TriMesh<T>,
    /// Surviving input indices, strictly increasing; row `r` of the coarse
    /// mesh is input vertex `kept[r]`.
    pub kept: Vec<usize>,
    pub trace: Vec<Collapse>,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    cost: f64,
    lo: usize,
    hi: usize,
    survivor: usize,
    stamp: (u64, u64),
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // BinaryHeap is a max-heap: the cheapest, lexicographically smallest edge must compare greatest
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| (other.lo, other.hi).cmp(&(self.lo, self.hi)))
            .then_with(|| other.stamp.cmp(&self.stamp))
    }
}

struct Collapser<T> {
    pos: Vec<[T; 3]>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<usize>>,
    alive: Vec<bool>,
    version: Vec<u64>,
    quadrics: Vec<Quadric<T>>,
}

impl<T: Real> Collapser<T> {
    fn new(mesh: &TriMesh<T>) -> Self {
        let n = mesh.num_vertices();
        let mut vert_faces = vec![Vec::new(); n];
        for (fi, f) in mesh.faces().iter().enumerate() {
            for &v in f {
                vert_faces[v].push(fi);
            }
        }
        Self {
            pos: mesh.positions().to_vec(),
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; mesh.num_faces()],
            vert_faces,
            alive: vec![true; n],
            version: vec![0; n],
            quadrics: vertex_quadrics(mesh).quadrics,
        }
    }

    fn live_faces(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.vert_faces[v].iter().copied().filter(|&f| self.face_alive[f])
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .live_faces(v)
            .flat_map(|f| self.faces[f])
            .filter(|&u| u != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn edge_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.live_faces(a)
            .filter(|&f| self.faces[f].contains(&b))
            .collect()
    }

    fn is_boundary(&self, v: usize) -> bool {
        self.neighbors(v)
            .into_iter()
            .any(|u| self.edge_faces(v, u).len() == 1)
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (lo, hi) = (a.min(b), a.max(b));
        let q = self.quadrics[lo].add(&self.quadrics[hi]);
        let cost_lo = q.evaluate(self.pos[lo]).to_f64_lossy();
        let cost_hi = q.evaluate(self.pos[hi]).to_f64_lossy();
        let (cost, survivor) = if cost_hi < cost_lo { (cost_hi, hi) } else { (cost_lo, lo) };
        Candidate {
            cost,
            lo,
            hi,
            survivor,
            stamp: (self.version[lo], self.version[hi]),
        }
    }

    fn is_current(&self, c: &Candidate) -> bool {
        self.alive[c.lo]
            && self.alive[c.hi]
            && (self.version[c.lo], self.version[c.hi]) == c.stamp
    }

    fn is_legal(&self, removed: usize, survivor: usize) -> bool {
        let shared = self.edge_faces(removed, survivor);
        if shared.is_empty() {
            return false;
        }
        // link condition: the only common neighbours are the apexes of the shared faces
        let mut apexes: Vec<usize> = shared
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&v| v != removed && v != survivor)
            .collect();
        apexes.sort_unstable();
        apexes.dedup();
        let nr = self.neighbors(removed);
        let ns = self.neighbors(survivor);
        let common = nr.iter().filter(|v| ns.binary_search(v).is_ok()).count();
        if common != apexes.len() {
            return false;
        }
        if shared.len() >= 2 && self.is_boundary(removed) && self.is_boundary(survivor) {
            return false;
        }
        // no vertex may be left without faces
        if apexes
            .iter()
            .any(|&a| self.live_faces(a).all(|f| shared.contains(&f)))
        {
            return false;
        }
        // orientation: no surviving face may flip or collapse to zero area
        for f in self.live_faces(removed) {
            let face = self.faces[f];
            if face.contains(&survivor) {
                continue;
            }
            let before = face_normal(self.pos[face[0]], self.pos[face[1]], self.pos[face[2]]);
            let moved = face.map(|v| if v == removed { survivor } else { v });
            let after = face_normal(self.pos[moved[0]], self.pos[moved[1]], self.pos[moved[2]]);
            if !(dot(before, after) > T::zero()) {
                return false;
            }
        }
        true
    }

    fn collapse(&mut self, removed: usize, survivor: usize) {
        let incident: Vec<usize> = self.live_faces(removed).collect();
        for f in incident {
            if self.faces[f].contains(&survivor) {
                self.face_alive[f] = false;
            } else {
                for v in self.faces[f].iter_mut() {
                    if *v == removed {
                        *v = survivor;
                    }
                }
                self.vert_faces[survivor].push(f);
            }
        }
        self.vert_faces[survivor].retain(|&f| self.face_alive[f]);
        self.quadrics[survivor] = self.quadrics[survivor].add(&self.quadrics[removed]);
        self.alive[removed] = false;
        self.vert_faces[removed].clear();
    }
}

/// Collapses edges in order of increasing quadric cost until `target_n` vertices remain.
///
/// Equal costs are resolved by the smallest `(min index, max index)` edge, and
/// within an edge by keeping the lower index.
pub fn qem_decimate<T: Real>(mesh: &TriMesh<T>, target_n: usize) -> Result<Decimation<T>> {
    let n = mesh.num_vertices();
    if target_n > n || target_n < 3 {
        return Err(Error::Contract(format!(
            "decimation target {target_n} must lie in [3, {n}]"
        )));
    }
    let mut st = Collapser::new(mesh);
    let mut heap = BinaryHeap::new();
    for v in 0..n {
        for u in st.neighbors(v) {
            if v < u {
                heap.push(st.candidate(v, u));
            }
        }
    }

    let mut remaining = n;
    let mut trace = Vec::with_capacity(n - target_n);
    while remaining > target_n {
        let Some(c) = heap.pop() else {
            return Err(Error::DecimationStuck {
                target: target_n,
                achieved: remaining,
            });
        };
        if !st.is_current(&c) {
            continue;
        }
        let removed = if c.survivor == c.lo { c.hi } else { c.lo };
        if !st.is_legal(removed, c.survivor) {
            continue;
        }
        st.collapse(removed, c.survivor);
        trace.push(Collapse {
            removed,
            survivor: c.survivor,
        });
        remaining -= 1;

        // costs and legality change for every edge touching the survivor's 1-ring
        let ring = st.neighbors(c.survivor);
        st.version[c.survivor] += 1;
        for &u in &ring {
            st.version[u] += 1;
        }
        let mut touched = ring.clone();
        touched.push(c.survivor);
        for &a in &touched {
            for b in st.neighbors(a) {
                heap.push(st.candidate(a, b));
            }
        }
    }

    let kept: Vec<usize> = (0..n).filter(|&v| st.alive[v]).collect();
    let mut remap = vec![usize::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        remap[v] = i;
    }
    let positions = kept.iter().map(|&v| mesh.positions()[v]).collect();
    let faces = st
        .faces
        .iter()
        .zip(&st.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| f.map(|v| remap[v]))
        .collect();
    Ok(Decimation {
        mesh: TriMesh::new(positions, faces)?,
        kept,
        trace,
    })
}
