//! P1 Galerkin discretization of `-div(mu grad u) + gamma u = 0` on the disk
//! with Dirichlet data `u = g` on the boundary, and the forward map
//! `gamma -> H = gamma u`.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, Mat, Par, Side};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::quadrature::{to_cartesian, ORDER4};

/// Relative residual tolerance of the Dirichlet solve.
pub const SOLVER_TOL: f64 = 1e-10;

/// One value per mesh vertex (P1 carrier).
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub values: Vec<f64>,
}

/// One value per triangle (P0 carrier).
#[derive(Debug, Clone, PartialEq)]
pub struct ElementField {
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn new(mesh: &TriMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.vertex_count() {
            return Err(Error::MeshMismatch {
                expected: mesh.vertex_count(),
                got: values.len(),
            });
        }
        Ok(NodalField { values })
    }

    pub fn constant(mesh: &TriMesh, c: f64) -> Self {
        NodalField {
            values: vec![c; mesh.vertex_count()],
        }
    }

    pub fn from_fn(mesh: &TriMesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        NodalField {
            values: mesh.vertices().iter().map(|&v| f(v)).collect(),
        }
    }
}

impl ElementField {
    pub fn new(mesh: &TriMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.element_count() {
            return Err(Error::MeshMismatch {
                expected: mesh.element_count(),
                got: values.len(),
            });
        }
        Ok(ElementField { values })
    }

    pub fn constant(mesh: &TriMesh, c: f64) -> Self {
        ElementField {
            values: vec![c; mesh.element_count()],
        }
    }

    /// Samples `f` at element centroids.
    pub fn from_fn(mesh: &TriMesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        ElementField {
            values: (0..mesh.element_count()).map(|t| f(mesh.centroid(t))).collect(),
        }
    }
}

/// A scalar field on either carrier.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Element(ElementField),
    Nodal(NodalField),
}

impl Field {
    pub fn values(&self) -> &[f64] {
        match self {
            Field::Element(f) => &f.values,
            Field::Nodal(f) => &f.values,
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Field::Element(f) => &mut f.values,
            Field::Nodal(f) => &mut f.values,
        }
    }

    pub fn carrier(&self) -> Carrier {
        match self {
            Field::Element(_) => Carrier::Element,
            Field::Nodal(_) => Carrier::Node,
        }
    }

    pub fn check(&self, mesh: &TriMesh) -> Result<()> {
        let expected = self.carrier().size(mesh);
        let got = self.values().len();
        if expected != got {
            return Err(Error::MeshMismatch { expected, got });
        }
        Ok(())
    }

    /// Value at barycentric point `bary` of triangle `t`.
    #[inline]
    pub fn at(&self, mesh: &TriMesh, t: usize, bary: &[f64; 3]) -> f64 {
        match self {
            Field::Element(f) => f.values[t],
            Field::Nodal(f) => {
                let tri = mesh.triangles()[t];
                bary[0] * f.values[tri[0]] + bary[1] * f.values[tri[1]] + bary[2] * f.values[tri[2]]
            }
        }
    }

    fn element_mean(&self, mesh: &TriMesh, t: usize) -> f64 {
        match self {
            Field::Element(f) => f.values[t],
            Field::Nodal(f) => {
                let [a, b, c] = mesh.triangles()[t];
                (f.values[a] + f.values[b] + f.values[c]) / 3.0
            }
        }
    }
}

impl From<ElementField> for Field {
    fn from(f: ElementField) -> Self {
        Field::Element(f)
    }
}

impl From<NodalField> for Field {
    fn from(f: NodalField) -> Self {
        Field::Nodal(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Carrier {
    Element,
    Node,
}

impl Carrier {
    pub fn size(self, mesh: &TriMesh) -> usize {
        match self {
            Carrier::Element => mesh.element_count(),
            Carrier::Node => mesh.vertex_count(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Carrier::Element => "element",
            Carrier::Node => "node",
        }
    }
}

/// `sqrt(int_D f^2)` with the order-4 rule (exact for P0 and P1 carriers).
pub fn l2_norm(mesh: &TriMesh, f: &Field) -> f64 {
    (0..mesh.element_count())
        .map(|t| {
            let area = mesh.area(t);
            match f {
                Field::Element(e) => area * e.values[t] * e.values[t],
                Field::Nodal(_) => {
                    area * ORDER4
                        .iter()
                        .map(|q| q.weight * f.at(mesh, t, &q.bary).powi(2))
                        .sum::<f64>()
                }
            }
        })
        .sum::<f64>()
        .sqrt()
}

/// `||f - g||_{L^2(D)}`; mixed carriers are compared at quadrature points.
pub fn l2_distance(mesh: &TriMesh, f: &Field, g: &Field) -> f64 {
    (0..mesh.element_count())
        .map(|t| {
            mesh.area(t)
                * ORDER4
                    .iter()
                    .map(|q| q.weight * (f.at(mesh, t, &q.bary) - g.at(mesh, t, &q.bary)).powi(2))
                    .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// `sqrt(int_D (f - exact)^2)` for an analytic reference.
pub fn l2_error_against(mesh: &TriMesh, f: &Field, exact: impl Fn([f64; 2]) -> f64) -> f64 {
    (0..mesh.element_count())
        .map(|t| {
            let p = mesh.triangle_points(t);
            mesh.area(t)
                * ORDER4
                    .iter()
                    .map(|q| {
                        let x = to_cartesian(&p, &q.bary);
                        q.weight * (f.at(mesh, t, &q.bary) - exact(x)).powi(2)
                    })
                    .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Symmetric sparse matrix stored as full CSR (both triangles).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry magnitude.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

/// Element stiffness `int grad psi_a . grad psi_b` and mass `int psi_a psi_b`
/// matrices of a P1 triangle.
pub fn element_matrices(p: &[[f64; 2]; 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let (grads, area) = p1_gradients(p);
    let mut k = [[0.0; 3]; 3];
    let mut m = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
            m[a][b] = area / 12.0 * if a == b { 2.0 } else { 1.0 };
        }
    }
    (k, m)
}

fn p1_gradients(p: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let area = crate::mesh::signed_area(p);
    let inv = 1.0 / (2.0 * area);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let b = p[(a + 1) % 3];
        let c = p[(a + 2) % 3];
        g[a] = [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv];
    }
    (g, area)
}

/// Sparsity pattern and element geometry of the P1 space on one mesh.
/// Reused across many assemblies with different coefficients.
#[derive(Debug)]
pub struct FemSpace {
    mesh: Arc<TriMesh>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    slots: Vec<[usize; 9]>,
    stiffness: Vec<[f64; 9]>,
    areas: Vec<f64>,
}

impl FemSpace {
    pub fn new(mesh: Arc<TriMesh>) -> Self {
        let n = mesh.vertex_count();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tri in mesh.triangles() {
            for &a in tri {
                for &b in tri {
                    neighbors[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut neighbors {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let slot = |i: usize, j: usize| {
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            row_ptr[i] + row.binary_search(&j).expect("pattern contains element couplings")
        };
        let mut slots = Vec::with_capacity(mesh.element_count());
        let mut stiffness = Vec::with_capacity(mesh.element_count());
        let mut areas = Vec::with_capacity(mesh.element_count());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let mut s = [0usize; 9];
            for a in 0..3 {
                for b in 0..3 {
                    s[3 * a + b] = slot(tri[a], tri[b]);
                }
            }
            slots.push(s);
            let (k, _) = element_matrices(&mesh.triangle_points(t));
            stiffness.push([
                k[0][0], k[0][1], k[0][2], k[1][0], k[1][1], k[1][2], k[2][0], k[2][1], k[2][2],
            ]);
            areas.push(mesh.area(t));
        }
        FemSpace {
            mesh,
            row_ptr,
            col_idx,
            slots,
            stiffness,
            areas,
        }
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// `int mu grad psi_i . grad psi_j` values in this space's pattern.
    pub fn stiffness_values(&self, mu: &Field) -> Result<Vec<f64>> {
        mu.check(&self.mesh)?;
        if let Some(&bad) = mu.values().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::NonPositiveCoefficient(bad));
        }
        let mut values = vec![0.0; self.col_idx.len()];
        for t in 0..self.slots.len() {
            // mu is constant or linear on the element; grad psi is constant, so
            // the element mean integrates it exactly
            let m = mu.element_mean(&self.mesh, t);
            for k in 0..9 {
                values[self.slots[t][k]] += m * self.stiffness[t][k];
            }
        }
        Ok(values)
    }

    /// Adds `int gamma psi_i psi_j` to `values`.
    pub fn add_mass(&self, gamma: &Field, values: &mut [f64]) -> Result<()> {
        gamma.check(&self.mesh)?;
        if let Some(&bad) = gamma.values().iter().find(|&&v| !(v >= 0.0)) {
            return Err(Error::NonPositiveCoefficient(bad));
        }
        match gamma {
            Field::Element(g) => {
                for t in 0..self.slots.len() {
                    let c = g.values[t] * self.areas[t] / 12.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            let w = if a == b { 2.0 } else { 1.0 };
                            values[self.slots[t][3 * a + b]] += c * w;
                        }
                    }
                }
            }
            Field::Nodal(g) => {
                // exact: int psi_a psi_b psi_c = area * {1/10, 1/30, 1/60}
                // for {all equal, two equal, all distinct}
                for (t, tri) in self.mesh.triangles().iter().enumerate() {
                    let gv = [g.values[tri[0]], g.values[tri[1]], g.values[tri[2]]];
                    let sum = gv[0] + gv[1] + gv[2];
                    let area = self.areas[t];
                    for a in 0..3 {
                        for b in 0..3 {
                            let v = if a == b {
                                area * (gv[a] / 10.0 + (sum - gv[a]) / 30.0)
                            } else {
                                let c = 3 - a - b;
                                area * ((gv[a] + gv[b]) / 30.0 + gv[c] / 60.0)
                            };
                            values[self.slots[t][3 * a + b]] += v;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn matrix_from_values(&self, values: Vec<f64>) -> SparseSymMatrix {
        debug_assert_eq!(values.len(), self.col_idx.len());
        SparseSymMatrix {
            dim: self.mesh.vertex_count(),
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        }
    }

    pub fn assemble(&self, mu: &Field, gamma: &Field) -> Result<SparseSymMatrix> {
        let mut values = self.stiffness_values(mu)?;
        self.add_mass(gamma, &mut values)?;
        Ok(self.matrix_from_values(values))
    }
}

/// Assembles the bilinear form `int mu grad u . grad v + int gamma u v`.
pub fn assemble(mesh: &TriMesh, mu: &Field, gamma: &Field) -> Result<SparseSymMatrix> {
    FemSpace::new(Arc::new(mesh.clone())).assemble(mu, gamma)
}

/// Positive Dirichlet data on the unit circle.
#[derive(Clone)]
pub struct BoundaryData {
    eval: Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
    g_min: f64,
    g_max: f64,
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryData")
            .field("g_min", &self.g_min)
            .field("g_max", &self.g_max)
            .finish_non_exhaustive()
    }
}

impl BoundaryData {
    pub fn new(
        eval: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        g_min: f64,
        g_max: f64,
    ) -> Result<Self> {
        if !(g_min > 0.0) || !(g_max >= g_min) {
            return Err(Error::InvalidArgument(format!(
                "boundary data needs 0 < g_min <= g_max, got [{g_min}, {g_max}]"
            )));
        }
        Ok(BoundaryData {
            eval: Arc::new(eval),
            g_min,
            g_max,
        })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(move |_| c, c, c)
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        (self.eval)(x)
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.g_min, self.g_max)
    }

    /// Multiplies the data by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let inner = Arc::clone(&self.eval);
        Self::new(move |x| s * inner(x), s * self.g_min, s * self.g_max)
    }

    /// Values at the boundary vertices, checked against the declared bounds.
    pub fn boundary_values(&self, mesh: &TriMesh) -> Result<Vec<(usize, f64)>> {
        let tol = 1e-12 * self.g_max;
        mesh.boundary_vertices()
            .iter()
            .map(|&b| {
                let v = self.eval(mesh.vertices()[b]);
                if !(v >= self.g_min - tol && v <= self.g_max + tol) {
                    return Err(Error::InvalidArgument(format!(
                        "boundary value {v} at vertex {b} outside [{}, {}]",
                        self.g_min, self.g_max
                    )));
                }
                Ok((b, v))
            })
            .collect()
    }
}

/// Solves the Dirichlet problem by elimination: boundary values are fixed,
/// their couplings move to the right-hand side, and the interior block is
/// solved by Jacobi-preconditioned conjugate gradients.
pub fn solve_dirichlet(a: &SparseSymMatrix, mesh: &TriMesh, g: &BoundaryData) -> Result<NodalField> {
    solve_dirichlet_from(a, mesh, g, None)
}

/// As [`solve_dirichlet`], starting the iteration from `guess` (interior values).
pub fn solve_dirichlet_from(
    a: &SparseSymMatrix,
    mesh: &TriMesh,
    g: &BoundaryData,
    guess: Option<&[f64]>,
) -> Result<NodalField> {
    let n = mesh.vertex_count();
    if a.dim() != n {
        return Err(Error::MeshMismatch {
            expected: n,
            got: a.dim(),
        });
    }
    let mut boundary = vec![0.0; n];
    for (b, v) in g.boundary_values(mesh)? {
        boundary[b] = v;
    }
    let mut rhs = vec![0.0; n];
    a.matvec(&boundary, &mut rhs);
    for i in 0..n {
        rhs[i] = if mesh.is_boundary(i) { 0.0 } else { -rhs[i] };
    }
    let mut x = match guess {
        Some(x0) if x0.len() == n => x0.to_vec(),
        _ => vec![0.0; n],
    };
    for i in mesh.boundary_vertices() {
        x[*i] = 0.0;
    }
    pcg_masked(a, &rhs, &mut x, |i| mesh.is_boundary(i), SOLVER_TOL, 10 * n)?;
    for &b in mesh.boundary_vertices() {
        x[b] = boundary[b];
    }
    Ok(NodalField { values: x })
}

/// Jacobi PCG on the rows/columns where `fixed(i)` is false.
fn pcg_masked(
    a: &SparseSymMatrix,
    rhs: &[f64],
    x: &mut [f64],
    fixed: impl Fn(usize) -> bool,
    tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = rhs.len();
    let free: Vec<bool> = (0..n).map(|i| !fixed(i)).collect();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .zip(&free)
        .map(|(&d, &f)| if f && d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        a.matvec(v, out);
        for i in 0..n {
            if !free[i] {
                out[i] = 0.0;
            }
        }
    };
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();

    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = rhs[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / rhs_norm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(it);
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverNotConverged {
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt() / rhs_norm;
    }
    if res <= tol {
        return Ok(max_iter);
    }
    Err(Error::SolverNotConverged {
        iterations: max_iter,
        residual: res,
    })
}

/// Forms `H = gamma u`. Element-wise gamma gives an element-wise H equal to
/// `gamma|_E` times the mean of `u` over the element vertices; nodal gamma
/// gives the nodal product.
pub fn absorbed_energy(mesh: &TriMesh, gamma: &Field, u: &NodalField) -> Field {
    match gamma {
        Field::Element(g) => Field::Element(ElementField {
            values: mesh
                .triangles()
                .iter()
                .zip(&g.values)
                .map(|(&[a, b, c], &gv)| gv * (u.values[a] + u.values[b] + u.values[c]) / 3.0)
                .collect(),
        }),
        Field::Nodal(g) => Field::Nodal(NodalField {
            values: g.values.iter().zip(&u.values).map(|(g, u)| g * u).collect(),
        }),
    }
}

/// Linear solver used by [`ForwardOperator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Sparse Cholesky of the interior block; the symbolic analysis is done
    /// once per mesh.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients, as in [`solve_dirichlet`].
    Pcg,
}

/// Interior block of the system matrix in lower-triangular CSC form.
struct InteriorFactor {
    interior: Vec<usize>,
    pattern: SymbolicSparseColMat<usize>,
    symbolic: SymbolicCholesky<usize>,
    scratch: StackReq,
    /// Source slot in the full CSR values for every stored entry.
    gather: Vec<usize>,
    /// `(interior row, full slot, boundary vertex)` couplings.
    couplings: Vec<(usize, usize, usize)>,
}

impl InteriorFactor {
    fn new(space: &FemSpace) -> Result<Self> {
        let mesh = space.mesh();
        let n = mesh.vertex_count();
        let mut local = vec![usize::MAX; n];
        let interior: Vec<usize> = (0..n).filter(|&v| !mesh.is_boundary(v)).collect();
        for (k, &v) in interior.iter().enumerate() {
            local[v] = k;
        }
        let mut col_ptr = vec![0usize];
        let mut row_idx = Vec::new();
        let mut gather = Vec::new();
        let mut couplings = Vec::new();
        // the full pattern is symmetric, so row v of the CSR holds column v
        for (j, &v) in interior.iter().enumerate() {
            for k in space.row_ptr[v]..space.row_ptr[v + 1] {
                let w = space.col_idx[k];
                if mesh.is_boundary(w) {
                    couplings.push((j, k, w));
                } else if local[w] >= j {
                    row_idx.push(local[w]);
                    gather.push(k);
                }
            }
            col_ptr.push(row_idx.len());
        }
        let ni = interior.len();
        let pattern = SymbolicSparseColMat::new_checked(ni, ni, col_ptr, None, row_idx);
        let symbolic = factorize_symbolic_cholesky(
            pattern.as_ref(),
            Side::Lower,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams {
                supernodal_flop_ratio_threshold: SupernodalThreshold::AUTO,
                ..Default::default()
            },
        )
        .map_err(factor_error)?;
        let scratch = StackReq::any_of(&[
            symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()),
            symbolic.solve_in_place_scratch::<f64>(1, Par::Seq),
        ]);
        Ok(InteriorFactor {
            interior,
            pattern,
            symbolic,
            scratch,
            gather,
            couplings,
        })
    }

    fn solve(&self, values: &[f64], boundary: &[(usize, f64)], n: usize) -> Result<NodalField> {
        let mut g = vec![0.0; n];
        for &(b, v) in boundary {
            g[b] = v;
        }
        let block: Vec<f64> = self.gather.iter().map(|&k| values[k]).collect();
        let a = SparseColMatRef::new(self.pattern.as_ref(), &block);
        let mut buf = MemBuffer::new(self.scratch);
        let stack = MemStack::new(&mut buf);
        let mut l_values = vec![0.0; self.symbolic.len_val()];
        let llt: LltRef<'_, usize, f64> = self
            .symbolic
            .factorize_numeric_llt(&mut l_values, a, Side::Lower, Default::default(), Par::Seq, stack, Default::default())
            .map_err(factor_error)?;
        let mut rhs = Mat::<f64>::zeros(self.interior.len(), 1);
        for &(j, k, w) in &self.couplings {
            rhs[(j, 0)] -= values[k] * g[w];
        }
        llt.solve_in_place_with_conj(Conj::No, rhs.as_mut(), Par::Seq, stack);
        let mut u = g;
        for (j, &v) in self.interior.iter().enumerate() {
            u[v] = rhs[(j, 0)];
        }
        Ok(NodalField { values: u })
    }
}

fn factor_error(e: impl std::fmt::Debug) -> Error {
    Error::Factorization(format!("{e:?}"))
}

impl std::fmt::Debug for InteriorFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InteriorFactor")
            .field("interior", &self.interior.len())
            .field("stored", &self.gather.len())
            .finish()
    }
}

/// Forward operator with a fixed diffusion field and illumination, reused
/// for many absorption fields.
#[derive(Debug)]
pub struct ForwardOperator {
    space: FemSpace,
    stiffness: Vec<f64>,
    g: BoundaryData,
    boundary: Vec<(usize, f64)>,
    factor: Option<InteriorFactor>,
}

impl ForwardOperator {
    pub fn new(mesh: Arc<TriMesh>, mu: &Field, g: BoundaryData) -> Result<Self> {
        Self::with_solver(mesh, mu, g, LinearSolver::default())
    }

    pub fn with_solver(mesh: Arc<TriMesh>, mu: &Field, g: BoundaryData, solver: LinearSolver) -> Result<Self> {
        let space = FemSpace::new(mesh);
        let stiffness = space.stiffness_values(mu)?;
        let boundary = g.boundary_values(space.mesh())?;
        let factor = match solver {
            LinearSolver::Cholesky => Some(InteriorFactor::new(&space)?),
            LinearSolver::Pcg => None,
        };
        Ok(ForwardOperator {
            space,
            stiffness,
            g,
            boundary,
            factor,
        })
    }

    pub fn solver(&self) -> LinearSolver {
        if self.factor.is_some() {
            LinearSolver::Cholesky
        } else {
            LinearSolver::Pcg
        }
    }

    pub fn mesh(&self) -> &TriMesh {
        self.space.mesh()
    }

    pub fn mesh_arc(&self) -> &Arc<TriMesh> {
        self.space.mesh_arc()
    }

    pub fn boundary_data(&self) -> &BoundaryData {
        &self.g
    }

    /// Light fluence `u` for absorption `gamma`. `guess` only seeds the
    /// iterative solver.
    pub fn fluence(&self, gamma: &Field, guess: Option<&[f64]>) -> Result<NodalField> {
        let mut values = self.stiffness.clone();
        self.space.add_mass(gamma, &mut values)?;
        match &self.factor {
            Some(f) => f.solve(&values, &self.boundary, self.mesh().vertex_count()),
            None => {
                let a = self.space.matrix_from_values(values);
                solve_dirichlet_from(&a, self.space.mesh(), &self.g, guess)
            }
        }
    }

    pub fn apply(&self, gamma: &Field) -> Result<Field> {
        self.apply_from(gamma, None)
    }

    pub fn apply_from(&self, gamma: &Field, guess: Option<&[f64]>) -> Result<Field> {
        let u = self.fluence(gamma, guess)?;
        Ok(absorbed_energy(self.space.mesh(), gamma, &u))
    }
}

/// `H = gamma u` where `u` solves the boundary value problem.
pub fn forward_map(mesh: &TriMesh, mu: &Field, gamma: &Field, g: &BoundaryData) -> Result<Field> {
    let a = assemble(mesh, mu, gamma)?;
    let u = solve_dirichlet(&a, mesh, g)?;
    Ok(absorbed_energy(mesh, gamma, &u))
}

/// Empirical stability ratios for a pair of absorption fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzRatios {
    /// `||H1 - H2|| / ||gamma1 - gamma2||`
    pub forward: f64,
    /// `||gamma1 - gamma2|| / ||H1 - H2||`
    pub inverse: f64,
}

pub fn lipschitz_probe(
    op: &ForwardOperator,
    pairs: &[(Field, Field)],
) -> Result<Vec<LipschitzRatios>> {
    let mesh = op.mesh();
    pairs
        .iter()
        .map(|(g1, g2)| {
            let dg = l2_distance(mesh, g1, g2);
            if dg == 0.0 {
                return Err(Error::InvalidArgument(
                    "lipschitz probe needs distinct absorption fields".into(),
                ));
            }
            let h1 = op.apply(g1)?;
            let h2 = op.apply(g2)?;
            let dh = l2_distance(mesh, &h1, &h2);
            Ok(LipschitzRatios {
                forward: dh / dg,
                inverse: dg / dh,
            })
        })
        .collect()
}
