//! Synthetic shape classes with dense correspondence by construction.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::dataset::{MeshSequenceDataset, Split};
use super::TriMesh;

const ICO_FACES: [[usize; 3]; 20] = [
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
];

/// Regular icosahedron inscribed in the unit sphere, faces oriented outward.
pub fn icosahedron<T: Real>() -> TriMesh<T> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0], [1.0, phi, 0.0], [-1.0, -phi, 0.0], [1.0, -phi, 0.0],
        [0.0, -1.0, phi], [0.0, 1.0, phi], [0.0, -1.0, -phi], [0.0, 1.0, -phi],
        [phi, 0.0, -1.0], [phi, 0.0, 1.0], [-phi, 0.0, -1.0], [-phi, 0.0, 1.0],
    ];
    let r = (1.0 + phi * phi).sqrt();
    let positions = raw.iter().map(|p| p.map(|v| T::lit(v / r))).collect();
    TriMesh::new(positions, ICO_FACES.to_vec()).expect("static icosahedron is valid")
}

/// Loop-style midpoint subdivision of the icosahedron, projected to the unit sphere.
///
/// Level `s` has `10·4^s + 2` vertices and `20·4^s` faces.
pub fn icosphere<T: Real>(subdivisions: usize) -> TriMesh<T> {
    let ico = icosahedron::<f64>();
    let mut positions: Vec<[f64; 3]> = ico.positions().to_vec();
    let mut faces = ico.faces().to_vec();
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, positions: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (pa, pb) = (positions[a], positions[b]);
                let m = [pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]];
                let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                positions.push(m.map(|v| v / len));
                positions.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut positions);
            let bc = mid(b, c, &mut positions);
            let ca = mid(c, a, &mut positions);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let positions = positions.into_iter().map(|p| p.map(T::lit)).collect();
    TriMesh::new(positions, faces).expect("subdivision preserves validity")
}

/// Open height-field patch with exactly `n` vertices (rows of `ceil(√n)`, last row partial).
///
/// Used as a stand-in template when a specific vertex count is needed.
pub fn grid_patch<T: Real>(n: usize) -> Result<TriMesh<T>> {
    if n < 4 {
        return Err(Error::Config(format!("grid patch needs at least 4 vertices, got {n}")));
    }
    let w = (n as f64).sqrt().ceil() as usize;
    let full_rows = n / w;
    let rem = n % w;
    let scale = (w - 1) as f64;
    let height = |x: f64, y: f64| {
        0.35 * (-((x - 0.5).powi(2) + (y - 0.45).powi(2)) / 0.06).exp()
            + 0.08 * (3.1 * x).sin() * (2.3 * y + 0.4).cos()
            + 0.05 * x * y
    };
    let mut positions = Vec::with_capacity(n);
    for k in 0..n {
        let (i, j) = (k / w, k % w);
        let (x, y) = (j as f64 / scale, i as f64 / scale);
        positions.push([T::lit(x), T::lit(y), T::lit(height(x, y))]);
    }
    let id = |i: usize, j: usize| i * w + j;
    let mut faces = Vec::new();
    for i in 0..full_rows.saturating_sub(1) {
        for j in 0..w - 1 {
            let (a, b, c, d) = (id(i, j), id(i, j + 1), id(i + 1, j), id(i + 1, j + 1));
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    if rem > 0 {
        let i = full_rows - 1;
        for j in 0..rem - 1 {
            let (a, b, c, d) = (id(i, j), id(i, j + 1), id(i + 1, j), id(i + 1, j + 1));
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
        faces.push([id(i, rem - 1), id(i, rem), id(i + 1, rem - 1)]);
    }
    TriMesh::new(positions, faces)
}

/// Orthonormal real spherical harmonics `Y_lm` for `l ≤ order`, ordered by `(l, m = −l..=l)`.
pub fn real_spherical_harmonics(order: usize, dir: [f64; 3]) -> Vec<f64> {
    let r = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let (x, y, z) = (dir[0] / r, dir[1] / r, dir[2] / r);
    let cos_t = z.clamp(-1.0, 1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = y.atan2(x);

    // associated Legendre P_l^m(cos θ), Condon-Shortley phase included
    let mut p = vec![vec![0.0; order + 1]; order + 1];
    p[0][0] = 1.0;
    for m in 1..=order {
        p[m][m] = -(2.0 * m as f64 - 1.0) * sin_t * p[m - 1][m - 1];
    }
    for m in 0..order {
        p[m + 1][m] = (2.0 * m as f64 + 1.0) * cos_t * p[m][m];
    }
    for m in 0..=order {
        for l in m + 2..=order {
            p[l][m] = ((2.0 * l as f64 - 1.0) * cos_t * p[l - 1][m]
                - (l + m - 1) as f64 * p[l - 2][m])
                / (l - m) as f64;
        }
    }
    let factorial_ratio = |l: usize, m: usize| -> f64 {
        // (l - m)! / (l + m)!
        ((l - m + 1)..=(l + m)).fold(1.0, |acc, k| acc / k as f64)
    };
    let mut out = Vec::with_capacity((order + 1) * (order + 1));
    for l in 0..=order {
        for m in -(l as i64)..=(l as i64) {
            let am = m.unsigned_abs() as usize;
            let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial_ratio(l, am)).sqrt();
            let v = match m {
                0 => k * p[l][0],
                m if m > 0 => 2f64.sqrt() * k * (m as f64 * phi).cos() * p[l][am],
                _ => 2f64.sqrt() * k * (am as f64 * phi).sin() * p[l][am],
            };
            out.push(v);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub subdivisions: usize,
    pub harmonic_order: usize,
    pub amplitude: f64,
    pub seed: u64,
}

/// Icosphere template with each sample displaced radially by a random
/// real-spherical-harmonic field; coefficients `~ uniform(−amplitude, amplitude)`.
pub fn generate_synthetic_dataset<T: Real>(cfg: &SynthConfig) -> Result<MeshSequenceDataset<T>> {
    if !(cfg.amplitude > 0.0) {
        return Err(Error::Config(format!("amplitude must be positive, got {}", cfg.amplitude)));
    }
    let template = icosphere::<f64>(cfg.subdivisions);
    let basis: Vec<Vec<f64>> = template
        .positions()
        .iter()
        .map(|&p| real_spherical_harmonics(cfg.harmonic_order, p))
        .collect();
    let n_basis = (cfg.harmonic_order + 1).pow(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let coeffs: Vec<f64> = (0..n_basis)
            .map(|_| rng.gen_range(-cfg.amplitude..cfg.amplitude))
            .collect();
        let sample: Vec<[T; 3]> = template
            .positions()
            .iter()
            .zip(&basis)
            .map(|(p, y)| {
                let disp: f64 = coeffs.iter().zip(y).map(|(c, b)| c * b).sum();
                p.map(|v| T::lit(v * (1.0 + disp)))
            })
            .collect();
        samples.push(sample);
    }
    MeshSequenceDataset::new(template.cast(), samples, Split::by_fraction(cfg.n_samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    }

    #[test]
    fn icosahedron_faces_point_outward() {
        let ico = icosahedron::<f64>();
        for f in ico.faces() {
            let p: Vec<[f64; 3]> = f.iter().map(|&i| ico.positions()[i]).collect();
            let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]];
            let e2 = [p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]];
            let n = cross(e1, e2);
            let c: f64 = (0..3).map(|k| n[k] * (p[0][k] + p[1][k] + p[2][k])).sum();
            assert!(c > 0.0);
        }
    }

    #[test]
    fn icosphere_counts() {
        for s in 0..4 {
            let m = icosphere::<f64>(s);
            assert_eq!(m.num_vertices(), 10 * 4usize.pow(s as u32) + 2);
            assert_eq!(m.num_faces(), 20 * 4usize.pow(s as u32));
        }
        let m = icosphere::<f64>(2);
        assert_eq!((m.num_vertices(), m.num_faces()), (162, 320));
    }

    #[test]
    fn grid_patch_has_requested_count() {
        for n in [4, 5, 12, 100, 5023, 6890] {
            let m = grid_patch::<f64>(n).unwrap();
            assert_eq!(m.num_vertices(), n);
            let mut used = vec![false; n];
            m.faces().iter().flatten().for_each(|&i| used[i] = true);
            assert!(used.iter().all(|&u| u), "isolated vertex for n={n}");
        }
    }

    #[test]
    fn low_order_harmonics_closed_form() {
        let d = [0.3, -0.4, 0.5];
        let r = (0.5f64).sqrt();
        let y = real_spherical_harmonics(1, d);
        assert!((y[0] - 0.5 / PI.sqrt()).abs() < 1e-14);
        let k = (3.0 / (4.0 * PI)).sqrt();
        assert!((y[2] - k * 0.5 / r).abs() < 1e-14);
        // Condon-Shortley phase makes Y_11 ∝ −x
        assert!((y[3] + k * 0.3 / r).abs() < 1e-14);
        assert!((y[1] + k * (-0.4) / r).abs() < 1e-14);
    }

    #[test]
    fn harmonics_are_orthonormal_under_sphere_quadrature() {
        // midpoint rule in (θ, φ)
        let order = 3;
        let nb = (order + 1) * (order + 1);
        let (nt, np) = (200, 400);
        let mut gram = vec![0.0; nb * nb];
        for i in 0..nt {
            let t = (i as f64 + 0.5) * PI / nt as f64;
            for j in 0..np {
                let p = (j as f64 + 0.5) * 2.0 * PI / np as f64;
                let d = [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()];
                let y = real_spherical_harmonics(order, d);
                let w = t.sin() * (PI / nt as f64) * (2.0 * PI / np as f64);
                for a in 0..nb {
                    for b in 0..nb {
                        gram[a * nb + b] += w * y[a] * y[b];
                    }
                }
            }
        }
        for a in 0..nb {
            for b in 0..nb {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * nb + b] - expect).abs() < 1e-3, "({a},{b}) {}", gram[a * nb + b]);
            }
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = SynthConfig { n_samples: 6, subdivisions: 1, harmonic_order: 3, amplitude: 0.1, seed: 9 };
        let a = generate_synthetic_dataset::<f64>(&cfg).unwrap();
        let b = generate_synthetic_dataset::<f64>(&cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = generate_synthetic_dataset::<f64>(&SynthConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn vanishing_amplitude_reproduces_template() {
        let cfg = SynthConfig { n_samples: 3, subdivisions: 1, harmonic_order: 2, amplitude: 1e-300, seed: 1 };
        let d = generate_synthetic_dataset::<f64>(&cfg).unwrap();
        for s in d.samples() {
            assert_eq!(s.as_slice(), d.template().positions());
        }
        let bad = SynthConfig { amplitude: 0.0, ..cfg };
        assert!(generate_synthetic_dataset::<f64>(&bad).is_err());
    }
}
