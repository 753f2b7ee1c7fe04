//! Conforming triangular meshes of the unit disk.
//!
//! Meshes are built from concentric rings of vertices: ring `i` of `n` has
//! radius `i / n` and `6 i` equally spaced vertices, and consecutive rings
//! are stitched by an angular sweep. The result is quasi-uniform with
//! `6 n^2` triangles and `1 + 3 n (n + 1)` vertices.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertices within this distance of the unit circle are snapped onto it.
pub const BOUNDARY_SNAP_TOL: f64 = 1e-10;
const DUPLICATE_TOL: f64 = 1e-12;

/// Named mesh resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshPreset {
    /// About 5 000 elements.
    Desk,
    /// About 25 000 elements.
    Inversion,
    /// About 75 000 elements, used for data generation.
    Data,
    /// Explicit ring count.
    #[serde(untagged)]
    Rings(usize),
}

impl MeshPreset {
    pub fn rings(self) -> usize {
        match self {
            MeshPreset::Desk => 29,
            MeshPreset::Inversion => 65,
            MeshPreset::Data => 112,
            MeshPreset::Rings(n) => n,
        }
    }

    pub fn build(self) -> TriMesh {
        disk_mesh_with_rings(self.rings())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<usize>,
    on_boundary: Vec<bool>,
}

impl TriMesh {
    /// Builds a mesh and checks every invariant.
    pub fn new(
        mut vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary: Vec<usize>,
    ) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::MeshInvariant("mesh has no vertices or triangles".into()));
        }
        let n = vertices.len();
        let mut on_boundary = vec![false; n];
        for &b in &boundary {
            if b >= n {
                return Err(Error::MeshInvariant(format!("boundary index {b} out of range")));
            }
            if on_boundary[b] {
                return Err(Error::MeshInvariant(format!("boundary index {b} repeated")));
            }
            let r = norm(vertices[b]);
            if (r - 1.0).abs() > BOUNDARY_SNAP_TOL {
                return Err(Error::MeshInvariant(format!(
                    "boundary vertex {b} has radius {r}, off the unit circle"
                )));
            }
            vertices[b] = [vertices[b][0] / r, vertices[b][1] / r];
            on_boundary[b] = true;
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(Error::MeshInvariant(format!("vertex {i} is not finite")));
            }
            if !on_boundary[i] && norm(*v) >= 1.0 {
                return Err(Error::MeshInvariant(format!(
                    "interior vertex {i} lies outside the open disk"
                )));
            }
        }
        let mut used = vec![false; n];
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(Error::MeshInvariant(format!("triangle {t} references vertex {i}")));
                }
                used[i] = true;
            }
            let area = signed_area(&[vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]]);
            if area <= 0.0 {
                return Err(Error::MeshInvariant(format!(
                    "triangle {t} has non-positive signed area {area}"
                )));
            }
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::MeshInvariant(format!("vertex {i} belongs to no triangle")));
        }
        check_duplicates(&vertices)?;
        let mut boundary = boundary;
        boundary.sort_unstable();
        Ok(TriMesh {
            vertices,
            triangles,
            boundary,
            on_boundary,
        })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Sorted boundary vertex indices.
    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.on_boundary[v]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn element_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_points(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.triangle_points(t))
    }

    pub fn areas(&self) -> Vec<f64> {
        (0..self.element_count()).map(|t| self.area(t)).collect()
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let p = self.triangle_points(t);
        [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ]
    }

    pub fn centroids(&self) -> Vec<[f64; 2]> {
        (0..self.element_count()).map(|t| self.centroid(t)).collect()
    }

    pub fn total_area(&self) -> f64 {
        total_area(self)
    }

    pub fn edge_count(&self) -> usize {
        let mut edges = HashSet::with_capacity(3 * self.triangles.len() / 2 + 8);
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// `V - E + F`, counting the unbounded outer face.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.element_count() as i64 + 1
    }

    /// Longest edge in the mesh.
    pub fn max_edge_length(&self) -> f64 {
        let mut h: f64 = 0.0;
        for t in 0..self.element_count() {
            let p = self.triangle_points(t);
            for k in 0..3 {
                let q = p[(k + 1) % 3];
                h = h.max(((p[k][0] - q[0]).powi(2) + (p[k][1] - q[1]).powi(2)).sqrt());
            }
        }
        h
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "trimesh {} {} {}",
            self.vertex_count(),
            self.element_count(),
            self.boundary.len()
        );
        for v in &self.vertices {
            let _ = writeln!(s, "{:.16e} {:.16e}", v[0], v[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for b in &self.boundary {
            let _ = writeln!(s, "{b}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty mesh file".into(),
        })?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 4 || head[0] != "trimesh" {
            return Err(Error::Parse {
                line,
                msg: format!("expected `trimesh <N_m> <N_e> <N_b>`, got `{header}`"),
            });
        }
        let count = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad count `{s}`: {e}"),
            })
        };
        let (nm, ne, nb) = (count(head[1])?, count(head[2])?, count(head[3])?);

        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("unexpected end of file while reading {what}"),
            })
        };
        let mut vertices = Vec::with_capacity(nm);
        for _ in 0..nm {
            let (line, l) = next("vertices")?;
            let xs = parse_fields::<f64>(l, 2, line)?;
            vertices.push([xs[0], xs[1]]);
        }
        let mut triangles = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (line, l) = next("triangles")?;
            let ix = parse_fields::<usize>(l, 3, line)?;
            triangles.push([ix[0], ix[1], ix[2]]);
        }
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (line, l) = next("boundary indices")?;
            boundary.push(parse_fields::<usize>(l, 1, line)?[0]);
        }
        if let Some((line, _)) = lines.next() {
            return Err(Error::Parse {
                line,
                msg: "trailing content after boundary section".into(),
            });
        }
        TriMesh::new(vertices, triangles, boundary)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_fields<T: std::str::FromStr>(l: &str, n: usize, line: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = l.split_whitespace().collect();
    if parts.len() != n {
        return Err(Error::Parse {
            line,
            msg: format!("expected {n} fields, got {}", parts.len()),
        });
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<T>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad value `{p}`: {e}"),
            })
        })
        .collect()
}

fn check_duplicates(vertices: &[[f64; 2]]) -> Result<()> {
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&a, &b| vertices[a][0].total_cmp(&vertices[b][0]));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if vertices[j][0] - vertices[i][0] > DUPLICATE_TOL {
                break;
            }
            if (vertices[j][1] - vertices[i][1]).abs() <= DUPLICATE_TOL {
                return Err(Error::MeshInvariant(format!("vertices {i} and {j} coincide")));
            }
        }
    }
    Ok(())
}

#[inline]
fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Signed area, positive for counter-clockwise vertex order.
#[inline]
pub fn signed_area(p: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

pub fn total_area(mesh: &TriMesh) -> f64 {
    (0..mesh.element_count()).map(|t| mesh.area(t)).sum()
}

/// Disk mesh with `2^refinement` rings, so element count grows 4x per level.
pub fn generate_disk_mesh(refinement: u32) -> Result<TriMesh> {
    if refinement == 0 || refinement > 12 {
        return Err(Error::InvalidArgument(format!(
            "refinement must be in 1..=12, got {refinement}"
        )));
    }
    Ok(disk_mesh_with_rings(1 << refinement))
}

pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TriMesh::from_text(&text)
}

/// Ring-structured disk mesh with `rings` concentric rings (at least one).
pub fn disk_mesh_with_rings(rings: usize) -> TriMesh {
    let rings = rings.max(1);
    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize];
    for i in 1..=rings {
        ring_start.push(vertices.len());
        let r = i as f64 / rings as f64;
        let count = 6 * i;
        for j in 0..count {
            let a = 2.0 * PI * j as f64 / count as f64;
            if i == rings {
                vertices.push([a.cos(), a.sin()]);
            } else {
                vertices.push([r * a.cos(), r * a.sin()]);
            }
        }
    }

    let mut triangles = Vec::with_capacity(6 * rings * rings);
    for i in 1..=rings {
        let inner_n = if i == 1 { 1 } else { 6 * (i - 1) };
        let outer_n = 6 * i;
        let inner = |k: usize| ring_start[i - 1] + k % inner_n;
        let outer = |k: usize| ring_start[i] + k % outer_n;
        let (mut p, mut q) = (0usize, 0usize);
        while p < inner_n || q < outer_n {
            let next_inner = if i == 1 {
                f64::INFINITY
            } else {
                (p + 1) as f64 / inner_n as f64
            };
            let next_outer = (q + 1) as f64 / outer_n as f64;
            let advance_outer = q < outer_n && (p >= inner_n || next_outer <= next_inner);
            let tri = if advance_outer {
                let t = [inner(p), outer(q), outer(q + 1)];
                q += 1;
                t
            } else {
                let t = [inner(p), outer(q), inner(p + 1)];
                p += 1;
                t
            };
            let pts = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            if signed_area(&pts) > 0.0 {
                triangles.push(tri);
            } else {
                triangles.push([tri[0], tri[2], tri[1]]);
            }
            if i == 1 && q == outer_n {
                break;
            }
        }
    }

    let boundary: Vec<usize> = (ring_start[rings]..vertices.len()).collect();
    TriMesh::new(vertices, triangles, boundary).expect("ring construction yields a valid mesh")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_mesh_is_close_to_the_disk() {
        let m = generate_disk_mesh(1).unwrap();
        assert!(m.element_count() >= 8);
        assert!((m.total_area() - PI).abs() / PI < 0.15);
    }

    #[test]
    fn element_count_grows_fourfold() {
        let counts: Vec<usize> = (1..=5)
            .map(|r| generate_disk_mesh(r).unwrap().element_count())
            .collect();
        for w in counts.windows(2) {
            assert_eq!(w[1], 4 * w[0]);
        }
    }

    #[test]
    fn refinement_four_matches_inscribed_polygon() {
        let m = generate_disk_mesh(4).unwrap();
        let n = m.boundary_vertices().len() as f64;
        let polygon = n / 2.0 * (2.0 * PI / n).sin();
        assert!((m.total_area() - polygon).abs() < 1e-12);
        assert!((m.total_area() - PI).abs() / PI < 0.01);
    }

    #[test]
    fn area_is_monotone_and_bounded() {
        let mut prev = 0.0;
        for r in 1..=6 {
            let a = generate_disk_mesh(r).unwrap().total_area();
            assert!(a >= prev && a <= PI);
            prev = a;
        }
    }

    #[test]
    fn euler_characteristic_is_two() {
        for rings in [1, 2, 7, 29, 65] {
            assert_eq!(disk_mesh_with_rings(rings).euler_characteristic(), 2, "rings={rings}");
        }
    }

    #[test]
    fn presets_hit_their_targets() {
        let desk = MeshPreset::Desk.build();
        assert!((desk.element_count() as f64 - 5e3).abs() < 0.05 * 5e3);
        let inv = MeshPreset::Inversion.build();
        assert!((inv.element_count() as f64 - 25054.0).abs() < 0.02 * 25054.0);
        assert_eq!(inv.euler_characteristic(), 2);
    }

    #[test]
    fn single_right_triangle_area() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(signed_area(&tri), 0.5);
    }

    #[test]
    fn rejects_clockwise_and_off_disk() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let err = TriMesh::new(v.clone(), vec![[0, 2, 1]], vec![1, 2]).unwrap_err();
        assert!(matches!(err, Error::MeshInvariant(_)));
        let err = TriMesh::new(
            vec![[0.0, 0.0], [1.1, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![1, 2],
        )
        .unwrap_err();
        assert!(matches!(err, Error::MeshInvariant(_)));
        assert!(TriMesh::new(v, vec![[0, 1, 2]], vec![1, 2]).is_ok());
    }

    #[test]
    fn rejects_duplicates_and_orphans() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        assert!(TriMesh::new(v, vec![[0, 1, 2], [3, 1, 2]], vec![1, 2]).is_err());
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.1, 0.1]];
        assert!(TriMesh::new(v, vec![[0, 1, 2]], vec![1, 2]).is_err());
    }

    #[test]
    fn text_round_trip_is_identical() {
        let m = generate_disk_mesh(2).unwrap();
        let back = TriMesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(TriMesh::from_text(""), Err(Error::Parse { .. })));
        assert!(matches!(TriMesh::from_text("trimesh 3 1"), Err(Error::Parse { .. })));
        assert!(matches!(
            TriMesh::from_text("trimesh 3 1 2\n0 0\n1 0\n"),
            Err(Error::Parse { .. })
        ));
        let text = "trimesh 3 1 2\n0 0\n1 0\n0 1\n0 2 1\n1\n2\n";
        assert!(matches!(TriMesh::from_text(text), Err(Error::MeshInvariant(_))));
    }
}
