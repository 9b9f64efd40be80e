//! Triangulated face mesh with one UV coordinate per vertex, plus a
//! Wavefront OBJ reader/writer restricted to the `v`/`vt`/`f` subset.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{add, cross, norm, normalize, sub, Vec3};

/// Normal assigned to vertices with no incident face.
pub const DEFAULT_NORMAL: Vec3 = [0.0, 0.0, -1.0];

/// Area threshold under which a triangle counts as degenerate.
const DEGENERATE_AREA: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct FaceMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    uv: Vec<[f64; 2]>,
    normals: Vec<Vec3>,
    isolated: Vec<usize>,
    dropped_degenerate: usize,
}

impl FaceMesh {
    /// Validates the raw arrays, drops zero-area triangles, and derives
    /// per-vertex normals.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>, uv: Vec<[f64; 2]>) -> Result<Self> {
        let n = vertices.len();
        if uv.len() != n {
            return Err(Error::InvalidMesh(format!(
                "{} vertices but {} uv coordinates",
                n,
                uv.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        for (i, t) in uv.iter().enumerate() {
            if !(0.0..=1.0).contains(&t[0]) || !(0.0..=1.0).contains(&t[1]) {
                return Err(Error::InvalidMesh(format!(
                    "uv of vertex {i} ({}, {}) outside [0,1]",
                    t[0], t[1]
                )));
            }
        }
        for (f, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {f} references vertex {bad} but mesh has {n}"
                )));
            }
        }
        let before = triangles.len();
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|t| triangle_area(&vertices, t) > DEGENERATE_AREA)
            .collect();
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no non-degenerate triangle".into()));
        }
        let dropped_degenerate = before - triangles.len();
        let (normals, isolated) = vertex_normals(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            uv,
            normals,
            isolated,
            dropped_degenerate,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn uv(&self) -> &[[f64; 2]] {
        &self.uv
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    /// Vertices that no triangle references; their normal is [`DEFAULT_NORMAL`].
    pub fn isolated_vertices(&self) -> &[usize] {
        &self.isolated
    }

    pub fn dropped_degenerate(&self) -> usize {
        self.dropped_degenerate
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Recomputes normals, e.g. after vertices were edited.
    pub fn recompute_normals(&mut self) {
        let (normals, isolated) = vertex_normals(&self.vertices, &self.triangles);
        self.normals = normals;
        self.isolated = isolated;
    }

    /// Parses the OBJ subset: `v x y z`, `vt u v`, and `f` records whose
    /// corners use identical vertex and texture indices (`f 1/1 2/2 3/3`).
    /// Polygons are fan-triangulated. Texture `v` is flipped so that row 0 of
    /// a texture image is `v = 1` in the file.
    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut uv = Vec::new();
        let mut faces = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let err = |message: String| Error::MeshParse { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            let mut parts = content.split_whitespace();
            let Some(tag) = parts.next() else { continue };
            match tag {
                "v" => {
                    let xs = parse_reals(parts, 3, 4).map_err(err)?;
                    vertices.push([xs[0], xs[1], xs[2]]);
                }
                "vt" => {
                    let xs = parse_reals(parts, 2, 3).map_err(err)?;
                    uv.push([xs[0], 1.0 - xs[1]]);
                }
                "f" => {
                    let mut corners = Vec::new();
                    for token in parts {
                        corners.push(parse_corner(token, vertices.len(), uv.len()).map_err(&err)?);
                    }
                    if corners.len() < 3 {
                        return Err(err(format!("face with {} corners", corners.len())));
                    }
                    for k in 1..corners.len() - 1 {
                        faces.push([corners[0], corners[k], corners[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        if uv.len() != vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "expected one vt per v, found {} v and {} vt",
                vertices.len(),
                uv.len()
            )));
        }
        FaceMesh::new(vertices, faces, uv)
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.uv {
            let _ = writeln!(out, "vt {} {}", t[0], 1.0 - t[1]);
        }
        for f in &self.triangles {
            let _ = writeln!(
                out,
                "f {0}/{0} {1}/{1} {2}/{2}",
                f[0] + 1,
                f[1] + 1,
                f[2] + 1
            );
        }
        out
    }
}

fn triangle_area(vertices: &[Vec3], t: &[usize; 3]) -> f64 {
    0.5 * norm(cross(
        sub(vertices[t[1]], vertices[t[0]]),
        sub(vertices[t[2]], vertices[t[0]]),
    ))
}

/// Area-weighted vertex normals (the unnormalized face cross product already
/// carries twice the area). Returns the normals and the isolated vertices.
pub fn vertex_normals(vertices: &[Vec3], triangles: &[[usize; 3]]) -> (Vec<Vec3>, Vec<usize>) {
    let mut acc = vec![[0.0; 3]; vertices.len()];
    for t in triangles {
        let n = cross(
            sub(vertices[t[1]], vertices[t[0]]),
            sub(vertices[t[2]], vertices[t[0]]),
        );
        for &v in t {
            acc[v] = add(acc[v], n);
        }
    }
    let mut isolated = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            normalize(n).unwrap_or_else(|| {
                isolated.push(i);
                DEFAULT_NORMAL
            })
        })
        .collect();
    (normals, isolated)
}

fn parse_reals<'a>(parts: impl Iterator<Item = &'a str>, min: usize, max: usize) -> Result<Vec<f64>, String> {
    let xs = parts
        .map(|p| p.parse::<f64>().map_err(|_| format!("bad number {p:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if xs.len() < min || xs.len() > max {
        return Err(format!("expected {min}..={max} numbers, got {}", xs.len()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err("non-finite number".into());
    }
    Ok(xs)
}

fn parse_corner(token: &str, nv: usize, nvt: usize) -> Result<usize, String> {
    let mut fields = token.split('/');
    let v = parse_index(fields.next().unwrap_or(""), nv)?;
    let vt = match fields.next() {
        Some(s) if !s.is_empty() => parse_index(s, nvt)?,
        _ => return Err(format!("corner {token:?} lacks a texture index")),
    };
    if v != vt {
        return Err(format!("corner {token:?} uses different v and vt indices"));
    }
    Ok(v)
}

fn parse_index(s: &str, count: usize) -> Result<usize, String> {
    let i: usize = s.parse().map_err(|_| format!("bad index {s:?}"))?;
    if i == 0 || i > count {
        return Err(format!("index {i} out of range 1..={count}"));
    }
    Ok(i - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    #[test]
    fn single_ccw_triangle_normals_point_up() {
        let mesh = FaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        )
        .unwrap();
        for n in mesh.normals() {
            assert_eq!(*n, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn flat_quad_normals_identical() {
        let mesh = FaceMesh::new(
            vec![[0.0, 0.0, 2.0], [3.0, 0.0, 2.0], [3.0, 1.0, 2.0], [0.0, 1.0, 2.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        )
        .unwrap();
        let n0 = mesh.normals()[0];
        assert!(mesh.normals().iter().all(|n| *n == n0));
    }

    #[test]
    fn icosphere_normals_follow_positions() {
        let mesh = crate::scene::icosphere(2);
        let cos2 = 2.0f64.to_radians().cos();
        for (v, n) in mesh.vertices().iter().zip(mesh.normals()) {
            let p = normalize(*v).unwrap();
            assert!(dot(p, *n) >= cos2, "normal deviates more than 2 degrees");
            assert!((norm(*n) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn isolated_vertex_gets_default_normal() {
        let mesh = FaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]],
            vec![[0, 1, 2]],
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5]],
        )
        .unwrap();
        assert_eq!(mesh.isolated_vertices(), &[3]);
        assert_eq!(mesh.normals()[3], DEFAULT_NORMAL);
    }

    #[test]
    fn all_degenerate_mesh_is_rejected() {
        let err = FaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
            vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidMesh(_)));
    }

    #[test]
    fn obj_round_trip_and_rejections() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n";
        let mesh = FaceMesh::parse_obj(text).unwrap();
        assert_eq!(mesh.uv()[2], [0.0, 0.0]);
        assert_eq!(FaceMesh::parse_obj(&mesh.to_obj()).unwrap(), mesh);

        let mismatched = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/2 2/1 3/3\n";
        assert!(FaceMesh::parse_obj(mismatched).is_err());
        let missing_vt = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\n";
        assert!(FaceMesh::parse_obj(missing_vt).is_err());
        let out_of_range_uv = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 2 0\nvt 0 1\nf 1/1 2/2 3/3\n";
        assert!(FaceMesh::parse_obj(out_of_range_uv).is_err());
    }
}
