//! OBJ (ASCII) and PLY (binary little-endian) mesh files.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::TriMesh;

/// Reads `v x y z` and `f i j k` records; other records are ignored.
pub fn parse_obj<T: Real, R: BufRead>(reader: R) -> Result<TriMesh<T>> {
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = no + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut p = [T::zero(); 3];
                for slot in p.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: "vertex record needs three coordinates".into(),
                    })?;
                    let v: f64 = tok.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("invalid coordinate {tok:?}"),
                    })?;
                    *slot = T::lit(v);
                }
                positions.push(p);
            }
            Some("f") => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() > 3 {
                    return Err(Error::UnsupportedFormat(format!(
                        "line {lineno}: face with {} vertices (triangles only)",
                        refs.len()
                    )));
                }
                if refs.len() < 3 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "face record needs three vertex references".into(),
                    });
                }
                let mut f = [0usize; 3];
                for (slot, r) in f.iter_mut().zip(refs) {
                    let head = r.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("invalid vertex reference {r:?}"),
                    })?;
                    let resolved = match idx {
                        i if i > 0 => i - 1,
                        i if i < 0 => positions.len() as i64 + i,
                        _ => -1,
                    };
                    if resolved < 0 {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: format!("vertex reference {idx} out of range"),
                        });
                    }
                    *slot = resolved as usize;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    TriMesh::new(positions, faces)
}

/// Shortest round-trip decimal for each coordinate, 1-based face indices.
pub fn serialize_obj<T: Real, W: Write>(mesh: &TriMesh<T>, mut w: W) -> Result<()> {
    for p in mesh.positions() {
        writeln!(w, "v {} {} {}", p[0], p[1], p[2])?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Diverging ramp: blue (0, 0, 255) at `t = 0`, white at `t = 0.5`, red (255, 0, 0) at `t = 1`.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.5 } else { t.clamp(0.0, 1.0) };
    let q = |x: f64| (255.0 * x).round() as u8;
    if t <= 0.5 {
        let s = t / 0.5;
        [q(s), q(s), 255]
    } else {
        let s = (t - 0.5) / 0.5;
        [255, q(1.0 - s), q(1.0 - s)]
    }
}

/// Binary little-endian PLY; per-vertex scalars become ramp colors over `[min, max]`.
///
/// A constant scalar field maps every vertex to the ramp midpoint.
pub fn serialize_ply<T: Real>(mesh: &TriMesh<T>, scalars: Option<&[T]>) -> Result<Vec<u8>> {
    let n = mesh.num_vertices();
    let colors = match scalars {
        Some(s) if s.len() != n => {
            return Err(Error::Dimension {
                op: "serialize_ply",
                detail: format!("{} scalars for {n} vertices", s.len()),
            })
        }
        Some(s) => {
            let lo = s.iter().map(|v| v.to_f64_lossy()).fold(f64::INFINITY, f64::min);
            let hi = s.iter().map(|v| v.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
            Some(
                s.iter()
                    .map(|v| {
                        let t = if hi > lo { (v.to_f64_lossy() - lo) / (hi - lo) } else { 0.5 };
                        ramp_color(t)
                    })
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };

    let mut out = Vec::new();
    write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {n}\n")?;
    write!(out, "property float x\nproperty float y\nproperty float z\n")?;
    if colors.is_some() {
        write!(out, "property uchar red\nproperty uchar green\nproperty uchar blue\n")?;
    }
    write!(
        out,
        "element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.num_faces()
    )?;
    for (i, p) in mesh.positions().iter().enumerate() {
        for v in p {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        if let Some(c) = &colors {
            out.extend_from_slice(&c[i]);
        }
    }
    for f in mesh.faces() {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads the PLY layout written by [`serialize_ply`]; returns the mesh and any vertex colors.
pub fn parse_ply<T: Real>(bytes: &[u8]) -> Result<(TriMesh<T>, Option<Vec<[u8; 3]>>)> {
    const END: &[u8] = b"end_header\n";
    let header_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::UnsupportedFormat("PLY header not terminated".into()))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::UnsupportedFormat("PLY header is not UTF-8".into()))?;

    let mut n_vertices = None;
    let mut n_faces = None;
    let mut vertex_props = Vec::new();
    let mut current = "";
    for (no, line) in header.lines().enumerate() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["ply"] | ["end_header"] | [] => {}
            ["comment", ..] => {}
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::UnsupportedFormat(format!("PLY format {fmt}")));
                }
            }
            ["element", name, count] => {
                let c: usize = count.parse().map_err(|_| Error::Parse {
                    line: no + 1,
                    msg: format!("bad element count {count:?}"),
                })?;
                current = name;
                match *name {
                    "vertex" => n_vertices = Some(c),
                    "face" => n_faces = Some(c),
                    other => return Err(Error::UnsupportedFormat(format!("PLY element {other}"))),
                }
            }
            ["property", "list", "uchar", "uint" | "uint32", _] if current == "face" => {}
            ["property", ty, name] if current == "vertex" => vertex_props.push((*ty, *name)),
            _ => {
                return Err(Error::UnsupportedFormat(format!(
                    "unsupported PLY header line {}: {line}",
                    no + 1
                )))
            }
        }
    }
    let xyz = [("float", "x"), ("float", "y"), ("float", "z")];
    let rgb = [("uchar", "red"), ("uchar", "green"), ("uchar", "blue")];
    let has_color = match vertex_props.as_slice() {
        p if p == xyz => false,
        p if p.len() == 6 && p[..3] == xyz && p[3..] == rgb => true,
        _ => return Err(Error::UnsupportedFormat("PLY vertex layout".into())),
    };
    let n = n_vertices.ok_or_else(|| Error::UnsupportedFormat("PLY without vertices".into()))?;
    let m = n_faces.unwrap_or(0);

    let mut cur = header_end;
    let mut take = |len: usize| -> Result<&[u8]> {
        let s = bytes
            .get(cur..cur + len)
            .ok_or_else(|| Error::UnsupportedFormat("PLY body truncated".into()))?;
        cur += len;
        Ok(s)
    };
    let mut positions = Vec::with_capacity(n);
    let mut colors = has_color.then(Vec::new);
    for _ in 0..n {
        let mut p = [T::zero(); 3];
        for v in p.iter_mut() {
            *v = T::lit(f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64);
        }
        positions.push(p);
        if let Some(c) = colors.as_mut() {
            let b = take(3)?;
            c.push([b[0], b[1], b[2]]);
        }
    }
    let mut faces = Vec::with_capacity(m);
    for _ in 0..m {
        let k = take(1)?[0];
        if k != 3 {
            return Err(Error::UnsupportedFormat(format!("PLY face with {k} vertices")));
        }
        let mut f = [0usize; 3];
        for i in f.iter_mut() {
            *i = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        }
        faces.push(f);
    }
    Ok((TriMesh::new(positions, faces)?, colors))
}
