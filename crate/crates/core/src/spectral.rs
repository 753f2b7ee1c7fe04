//! Orthonormal Dirichlet-Laplacian eigenbasis of the unit disk and the
//! projection of finite element fields onto it.
//!
//! Each eigenfunction is `c J_m(j_{m,k} r) cos(m phi)` or the `sin` variant,
//! with eigenvalue `j_{m,k}^2` and `c` fixed by
//! `int_0^1 J_m(j r)^2 r dr = J_{m+1}(j)^2 / 2`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::bessel::{bessel_j_orders, bessel_j_with_derivative, bessel_zeros_below};
use crate::error::{Error, Result};
use crate::fem::Field;
use crate::mesh::TriMesh;
use crate::quadrature::{to_cartesian, ORDER4};

const RADIAL_GRID: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Parity {
    Cos,
    Sin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenMode {
    /// Angular order.
    pub m: usize,
    /// Radial index, starting at 1.
    pub k: usize,
    /// `j_{m,k}`, the k-th positive zero of `J_m`.
    pub zero: f64,
    pub parity: Parity,
    pub eigenvalue: f64,
    pub normalization: f64,
    radial: usize,
}

/// `J_m(j r)` tabulated on `[0, 1]` with its derivative, evaluated by cubic
/// Hermite interpolation (error well below 1e-12 for the zeros in use).
#[derive(Debug, Clone)]
struct RadialTable {
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl RadialTable {
    fn new(m: usize, zero: f64) -> Self {
        let mut values = Vec::with_capacity(RADIAL_GRID + 1);
        let mut slopes = Vec::with_capacity(RADIAL_GRID + 1);
        for i in 0..=RADIAL_GRID {
            let r = i as f64 / RADIAL_GRID as f64;
            let (v, d) = bessel_j_with_derivative(m, zero * r);
            values.push(v);
            slopes.push(zero * d);
        }
        RadialTable { values, slopes }
    }

    #[inline]
    fn eval(&self, r: f64) -> f64 {
        let s = (r.clamp(0.0, 1.0)) * RADIAL_GRID as f64;
        let i = (s as usize).min(RADIAL_GRID - 1);
        let t = s - i as f64;
        let h = 1.0 / RADIAL_GRID as f64;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[i]
            + h10 * h * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.slopes[i + 1]
    }
}

#[derive(Debug, Clone)]
pub struct DiskEigenbasis {
    modes: Vec<EigenMode>,
    radial: Vec<RadialTable>,
    max_m: usize,
}

impl DiskEigenbasis {
    /// The first `n_d` eigenfunctions ordered by (eigenvalue, m, parity).
    pub fn build(n_d: usize) -> Result<Self> {
        if n_d == 0 {
            return Err(Error::InvalidArgument("basis size must be positive".into()));
        }
        // Weyl: about lambda / 4 eigenvalues below lambda on the unit disk
        let mut cutoff = 2.0 * (n_d as f64).sqrt() + 6.0;
        loop {
            let table = bessel_zeros_below(cutoff);
            let mut candidates = Vec::new();
            for (m, zeros) in table.iter().enumerate() {
                for (ki, &z) in zeros.iter().enumerate() {
                    candidates.push((z, m, ki + 1, Parity::Cos));
                    if m > 0 {
                        candidates.push((z, m, ki + 1, Parity::Sin));
                    }
                }
            }
            if candidates.len() < n_d {
                cutoff *= 1.25;
                continue;
            }
            candidates.sort_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then(a.1.cmp(&b.1))
                    .then(a.3.cmp(&b.3))
            });
            candidates.truncate(n_d);

            let mut radial = Vec::new();
            let mut radial_key: Vec<(usize, usize)> = Vec::new();
            let mut modes = Vec::with_capacity(n_d);
            for (zero, m, k, parity) in candidates {
                let idx = match radial_key.iter().position(|&key| key == (m, k)) {
                    Some(i) => i,
                    None => {
                        radial_key.push((m, k));
                        radial.push(RadialTable::new(m, zero));
                        radial.len() - 1
                    }
                };
                let jm1 = bessel_j_orders(m + 1, zero)[m + 1];
                let angular = if m == 0 { 2.0 * PI } else { PI };
                let normalization = 1.0 / (angular * 0.5 * jm1 * jm1).sqrt();
                modes.push(EigenMode {
                    m,
                    k,
                    zero,
                    parity,
                    eigenvalue: zero * zero,
                    normalization,
                    radial: idx,
                });
            }
            let max_m = modes.iter().map(|e| e.m).max().unwrap_or(0);
            return Ok(DiskEigenbasis {
                modes,
                radial,
                max_m,
            });
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[EigenMode] {
        &self.modes
    }

    /// `e_k(x)` for the mode at position `k` (0-based).
    pub fn eval(&self, k: usize, x: [f64; 2]) -> f64 {
        let mode = &self.modes[k];
        let r = x[0].hypot(x[1]);
        let phi = x[1].atan2(x[0]);
        let angular = match (mode.m, mode.parity) {
            (0, _) => 1.0,
            (m, Parity::Cos) => (m as f64 * phi).cos(),
            (m, Parity::Sin) => (m as f64 * phi).sin(),
        };
        mode.normalization * self.radial[mode.radial].eval(r) * angular
    }

    /// All basis functions at `x`, written into `out` (length `len()`).
    pub fn eval_all(&self, x: [f64; 2], out: &mut [f64], scratch: &mut Vec<f64>) {
        let r = x[0].hypot(x[1]);
        scratch.clear();
        scratch.extend(self.radial.iter().map(|t| t.eval(r)));
        let (c1, s1) = if r > 0.0 { (x[0] / r, x[1] / r) } else { (1.0, 0.0) };
        let mut cos_m = vec![1.0; self.max_m + 1];
        let mut sin_m = vec![0.0; self.max_m + 1];
        for m in 1..=self.max_m {
            cos_m[m] = cos_m[m - 1] * c1 - sin_m[m - 1] * s1;
            sin_m[m] = sin_m[m - 1] * c1 + cos_m[m - 1] * s1;
        }
        for (o, mode) in out.iter_mut().zip(&self.modes) {
            let angular = match mode.parity {
                Parity::Cos => cos_m[mode.m],
                Parity::Sin => sin_m[mode.m],
            };
            *o = mode.normalization * scratch[mode.radial] * angular;
        }
    }

    /// Keeps the first `n` modes.
    pub fn truncated(&self, n: usize) -> DiskEigenbasis {
        let mut b = self.clone();
        b.modes.truncate(n.min(b.modes.len()));
        b
    }
}

const CHUNK: usize = 256;

/// `<f, e_k>_{L^2(D)}` for all `k`, by the order-4 rule on every element.
pub fn project(mesh: &TriMesh, field: &Field, basis: &DiskEigenbasis) -> Result<Vec<f64>> {
    field.check(mesh)?;
    let nd = basis.len();
    let partial: Vec<Vec<f64>> = (0..mesh.element_count())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; nd];
            let mut vals = vec![0.0; nd];
            let mut scratch = Vec::new();
            for &t in chunk {
                let p = mesh.triangle_points(t);
                let area = mesh.area(t);
                for q in &ORDER4 {
                    let x = to_cartesian(&p, &q.bary);
                    let w = area * q.weight * field.at(mesh, t, &q.bary);
                    if w == 0.0 {
                        continue;
                    }
                    basis.eval_all(x, &mut vals, &mut scratch);
                    for (a, v) in acc.iter_mut().zip(&vals) {
                        *a += w * v;
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; nd];
    for p in partial {
        for (o, v) in out.iter_mut().zip(&p) {
            *o += v;
        }
    }
    Ok(out)
}

/// Precomputed projection weights for repeated projections on one mesh:
/// `int_E e_k` per element and `int psi_v e_k` per vertex.
#[derive(Debug, Clone)]
pub struct Projector {
    n_d: usize,
    element_weights: Vec<f64>,
    nodal_weights: Vec<f64>,
    n_elements: usize,
    n_vertices: usize,
}

impl Projector {
    pub fn new(mesh: &TriMesh, basis: &DiskEigenbasis) -> Self {
        let nd = basis.len();
        let ne = mesh.element_count();
        let nm = mesh.vertex_count();
        // per element: [int_E e_k] followed by [int psi_a e_k] for a = 0..3
        let local: Vec<Vec<f64>> = (0..ne)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut buf = vec![0.0; chunk.len() * 4 * nd];
                let mut vals = vec![0.0; nd];
                let mut scratch = Vec::new();
                for (i, &t) in chunk.iter().enumerate() {
                    let p = mesh.triangle_points(t);
                    let area = mesh.area(t);
                    let block = &mut buf[i * 4 * nd..(i + 1) * 4 * nd];
                    for q in &ORDER4 {
                        basis.eval_all(to_cartesian(&p, &q.bary), &mut vals, &mut scratch);
                        let w = area * q.weight;
                        for (k, v) in vals.iter().enumerate() {
                            block[k] += w * v;
                            for a in 0..3 {
                                block[(a + 1) * nd + k] += w * q.bary[a] * v;
                            }
                        }
                    }
                }
                buf
            })
            .collect();
        let mut element_weights = Vec::with_capacity(ne * nd);
        let mut nodal_weights = vec![0.0; nm * nd];
        let mut t = 0;
        for buf in local {
            for block in buf.chunks(4 * nd) {
                element_weights.extend_from_slice(&block[..nd]);
                let tri = mesh.triangles()[t];
                for a in 0..3 {
                    let dst = &mut nodal_weights[tri[a] * nd..(tri[a] + 1) * nd];
                    for (d, s) in dst.iter_mut().zip(&block[(a + 1) * nd..(a + 2) * nd]) {
                        *d += s;
                    }
                }
                t += 1;
            }
        }
        Projector {
            n_d: nd,
            element_weights,
            nodal_weights,
            n_elements: ne,
            n_vertices: nm,
        }
    }

    pub fn len(&self) -> usize {
        self.n_d
    }

    pub fn is_empty(&self) -> bool {
        self.n_d == 0
    }

    pub fn project(&self, field: &Field) -> Result<Vec<f64>> {
        let (weights, n) = match field {
            Field::Element(_) => (&self.element_weights, self.n_elements),
            Field::Nodal(_) => (&self.nodal_weights, self.n_vertices),
        };
        if field.values().len() != n {
            return Err(Error::MeshMismatch {
                expected: n,
                got: field.values().len(),
            });
        }
        let mut out = vec![0.0; self.n_d];
        for (f, row) in field.values().iter().zip(weights.chunks(self.n_d)) {
            if *f == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += f * w;
            }
        }
        Ok(out)
    }
}

/// CSV rows `k,value` with 1-based `k`.
pub fn coefficients_to_csv(coeffs: &[f64]) -> String {
    let mut s = String::from("k,value\n");
    for (k, v) in coeffs.iter().enumerate() {
        let _ = writeln!(s, "{},{:.16e}", k + 1, v);
    }
    s
}

pub fn coefficients_from_csv(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(_), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected `k,value`, got `{line}`"),
            });
        };
        out.push(v.trim().parse::<f64>().map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
