//! Push-forward maps from Gaussian fields to piecewise-constant absorption:
//! star-shaped inclusions around fixed centers and a smoothed multi-level
//! set. Also the geometric measurements used to study their continuity.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{Carrier, ElementField, Field, NodalField};
use crate::mesh::TriMesh;
use crate::prior::{KlField, KlSpec};
use crate::quadrature::{to_cartesian, ORDER4};

/// Threshold on `|grad theta|` inside a tube below which a level is flagged
/// as (numerically) critical.
pub const CRITICAL_GRADIENT: f64 = 1e-3;

pub fn heaviside(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Piecewise-linear Heaviside approximation of half-width `eps`.
pub fn h_eps(z: f64, eps: f64) -> f64 {
    if z < -eps {
        0.0
    } else if z < eps {
        z / (2.0 * eps) + 0.5
    } else {
        1.0
    }
}

/// The sharp map for `eps == 0`.
fn step(z: f64, eps: f64) -> f64 {
    if eps > 0.0 {
        h_eps(z, eps)
    } else {
        heaviside(z)
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2 pi for tiny negative input
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

fn polar(x: [f64; 2], center: [f64; 2]) -> (f64, f64) {
    let dx = x[0] - center[0];
    let dy = x[1] - center[1];
    (dx.hypot(dy), normalize_angle(dy.atan2(dx)))
}

pub fn star_boundary_radius(theta: &KlField, angle: f64) -> f64 {
    theta.value(&[normalize_angle(angle)]).exp()
}

/// Membership in `center + {s exp(theta(a)) (cos a, sin a) : 0 <= s <= 1}`.
pub fn point_in_star(x: [f64; 2], center: [f64; 2], theta: &KlField) -> bool {
    let (r, a) = polar(x, center);
    r <= theta.value(&[a]).exp()
}

/// Star-shaped multi-inclusion: `kappa[0] + sum_i kappa[i+1] 1_{A_i}`.
#[derive(Debug, Clone)]
pub struct StarConfig {
    pub centers: Vec<[f64; 2]>,
    pub kappa: Vec<f64>,
    pub thetas: Vec<KlField>,
}

impl StarConfig {
    pub fn new(centers: Vec<[f64; 2]>, kappa: Vec<f64>, thetas: Vec<KlField>) -> Result<Self> {
        validate_star(&centers, &kappa)?;
        if thetas.len() != centers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} boundary fields for {} centers",
                thetas.len(),
                centers.len()
            )));
        }
        if thetas.iter().any(|t| !matches!(t.spec, KlSpec::Circle(_))) {
            return Err(Error::InvalidArgument("star boundaries need circle fields".into()));
        }
        Ok(StarConfig { centers, kappa, thetas })
    }
}

fn validate_star(centers: &[[f64; 2]], kappa: &[f64]) -> Result<()> {
    if kappa.len() != centers.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "need {} absorption values, got {}",
            centers.len() + 1,
            kappa.len()
        )));
    }
    if let Some(k) = kappa.iter().find(|k| !(**k > 0.0)) {
        return Err(Error::InvalidArgument(format!("absorption value {k} is not positive")));
    }
    if let Some(c) = centers.iter().find(|c| !(c[0].hypot(c[1]) < 1.0)) {
        return Err(Error::InvalidArgument(format!("center {c:?} is outside the open disk")));
    }
    Ok(())
}

pub type Region<'a> = &'a (dyn Fn([f64; 2]) -> bool + Sync);

/// Centroid classification: `kappa[0] + sum_i kappa[i+1] [centroid in region i]`.
pub fn rasterize_regions(mesh: &TriMesh, kappa: &[f64], regions: &[Region<'_>]) -> Result<ElementField> {
    if kappa.len() != regions.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "need {} absorption values, got {}",
            regions.len() + 1,
            kappa.len()
        )));
    }
    let values = mesh
        .centroids()
        .par_iter()
        .map(|&c| {
            kappa[0]
                + regions
                    .iter()
                    .zip(&kappa[1..])
                    .filter(|(inside, _)| inside(c))
                    .map(|(_, k)| k)
                    .sum::<f64>()
        })
        .collect();
    ElementField::new(mesh, values)
}

pub fn rasterize_star(config: &StarConfig, mesh: &TriMesh) -> ElementField {
    let specs: Vec<KlSpec> = config.thetas.iter().map(|t| t.spec).collect();
    let map = StarMap::new(mesh, config.centers.clone(), config.kappa.clone(), specs)
        .expect("StarConfig is validated on construction");
    let xi: Vec<f64> = config.thetas.iter().flat_map(|t| t.xi.iter().copied()).collect();
    map.rasterize(&xi)
}

/// Smoothed multi-level set: thresholds `levels` split the range of `theta`
/// into `levels.len() + 1` cells with values `kappa`.
#[derive(Debug, Clone)]
pub struct LevelSetConfig {
    pub levels: Vec<f64>,
    pub kappa: Vec<f64>,
    pub eps: f64,
}

impl LevelSetConfig {
    pub fn new(levels: Vec<f64>, kappa: Vec<f64>, eps: f64) -> Result<Self> {
        let c = LevelSetConfig { levels, kappa, eps };
        c.validate()?;
        Ok(c)
    }

    /// Same as [`LevelSetConfig::new`] but also accepts `eps = 0`, the sharp map.
    pub fn sharp(levels: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        let c = LevelSetConfig { levels, kappa, eps: 0.0 };
        c.validate_shape()?;
        Ok(c)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.kappa.len() != self.levels.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "need {} material values, got {}",
                self.levels.len() + 1,
                self.kappa.len()
            )));
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("level thresholds must increase strictly".into()));
        }
        if let Some(k) = self.kappa.iter().find(|k| !(**k > 0.0)) {
            return Err(Error::InvalidArgument(format!("material value {k} is not positive")));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("smoothing width must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    /// `sum_i kappa_i [H(z - c_{i-1}) - H(z - c_i)]` with `H(z - c_0) = 1`
    /// and `H(z - c_N) = 0`.
    pub fn value(&self, z: f64) -> f64 {
        let n = self.kappa.len();
        let mut out = 0.0;
        let mut lower = 1.0;
        for i in 0..n {
            let upper = if i + 1 < n { step(z - self.levels[i], self.eps) } else { 0.0 };
            out += self.kappa[i] * (lower - upper);
            lower = upper;
        }
        out
    }

    /// Weights of each cell at `z`; they always sum to one.
    pub fn cell_weights(&self, z: f64) -> Vec<f64> {
        let n = self.kappa.len();
        let mut out = Vec::with_capacity(n);
        let mut lower = 1.0;
        for i in 0..n {
            let upper = if i + 1 < n { step(z - self.levels[i], self.eps) } else { 0.0 };
            out.push(lower - upper);
            lower = upper;
        }
        out
    }
}

pub fn apply_levelset(config: &LevelSetConfig, theta: &KlField, mesh: &TriMesh) -> Result<NodalField> {
    let KlSpec::Square(s) = theta.spec else {
        return Err(Error::InvalidArgument("level-set map needs a square-torus field".into()));
    };
    if s.half_width <= 1.0 {
        return Err(Error::InvalidArgument("torus must contain the unit disk".into()));
    }
    let values = mesh
        .vertices()
        .par_iter()
        .map(|v| config.value(theta.value(v)))
        .collect();
    NodalField::new(mesh, values)
}

/// A scalar function on the plane with a gradient.
pub trait PlanarField: Sync {
    fn value(&self, x: [f64; 2]) -> f64;
    fn gradient(&self, x: [f64; 2]) -> [f64; 2];
}

impl PlanarField for KlField {
    fn value(&self, x: [f64; 2]) -> f64 {
        KlField::value(self, &x)
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        KlField::gradient(self, x)
    }
}

/// Analytic field from a value closure and a gradient closure.
pub struct Analytic<F, G>(pub F, pub G);

impl<F, G> PlanarField for Analytic<F, G>
where
    F: Fn([f64; 2]) -> f64 + Sync,
    G: Fn([f64; 2]) -> [f64; 2] + Sync,
{
    fn value(&self, x: [f64; 2]) -> f64 {
        (self.0)(x)
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        (self.1)(x)
    }
}

/// Sum over elements and order-4 quadrature points of `area * weight * f(x)`.
fn integrate<T: Send, F>(mesh: &TriMesh, f: F) -> Vec<T>
where
    F: Fn(f64, [f64; 2]) -> T + Sync,
{
    (0..mesh.element_count())
        .into_par_iter()
        .flat_map_iter(|t| {
            let p = mesh.triangle_points(t);
            let area = mesh.area(t);
            ORDER4
                .iter()
                .map(move |q| (area * q.weight, to_cartesian(&p, &q.bary)))
                .collect::<Vec<_>>()
        })
        .map(|(w, x)| f(w, x))
        .collect()
}

/// Area of `{x in D : |theta(x) - c| < eps}` by order-4 point counting.
pub fn tube_measure(theta: &dyn PlanarField, c: f64, eps: f64, mesh: &TriMesh) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("tube width must be positive, got {eps}")));
    }
    let parts = integrate(mesh, |w, x| if (theta.value(x) - c).abs() < eps { w } else { 0.0 });
    Ok(parts.iter().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxErrorReport {
    /// `||Phi_eps(theta) - Phi(theta)||_{L^2(D)}` for each requested width.
    pub errors: Vec<f64>,
    /// Smallest `|grad theta|` at quadrature points inside the widest tube
    /// around any threshold (infinite when every tube is empty).
    pub min_gradient: f64,
    pub admissible: bool,
}

/// L2 distance between the smoothed and the sharp level-set maps, with
/// `theta` evaluated exactly at quadrature points. A level with a near-critical
/// gradient inside its tube is reported through `admissible`.
pub fn phi_eps_approx_error(
    theta: &dyn PlanarField,
    config: &LevelSetConfig,
    eps_list: &[f64],
    mesh: &TriMesh,
) -> Result<ApproxErrorReport> {
    if let Some(e) = eps_list.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidArgument(format!("smoothing width must be positive, got {e}")));
    }
    let sharp = LevelSetConfig::sharp(config.levels.clone(), config.kappa.clone())?;
    let widest = eps_list.iter().copied().fold(0.0, f64::max);
    let rows = integrate(mesh, |w, x| {
        let z = theta.value(x);
        let exact = sharp.value(z);
        let errs: Vec<f64> = eps_list
            .iter()
            .map(|&eps| {
                let smooth = LevelSetConfig { eps, ..sharp.clone() }.value(z);
                w * (smooth - exact).powi(2)
            })
            .collect();
        let in_tube = config.levels.iter().any(|c| (z - c).abs() < widest);
        let grad = if in_tube {
            let g = theta.gradient(x);
            g[0].hypot(g[1])
        } else {
            f64::INFINITY
        };
        (errs, grad)
    });
    let mut errors = vec![0.0; eps_list.len()];
    let mut min_gradient = f64::INFINITY;
    for (errs, g) in rows {
        for (acc, e) in errors.iter_mut().zip(errs) {
            *acc += e;
        }
        min_gradient = min_gradient.min(g);
    }
    Ok(ApproxErrorReport {
        errors: errors.into_iter().map(f64::sqrt).collect(),
        min_gradient,
        admissible: min_gradient > CRITICAL_GRADIENT,
    })
}

/// Angular nodes of the symmetric-difference quadrature.
pub const SYM_DIFF_ANGLES: usize = 4096;

/// Area of `A(theta1) Δ A(theta2)` for two stars with a common center,
/// integrating `|det DK|` for `K(s, a) = (s e^{theta1} + (1-s) e^{theta2}) v(a)`
/// over `[0,1] x [0,2 pi]`. The integrand is linear in `s`, so two
/// Gauss-Legendre nodes are exact there; the periodic trapezoid rule is used
/// in the angle.
pub fn sym_diff_area(theta1: &KlField, theta2: &KlField) -> f64 {
    sym_diff_area_with(theta1, theta2, SYM_DIFF_ANGLES)
}

pub fn sym_diff_area_with(theta1: &KlField, theta2: &KlField, angles: usize) -> f64 {
    let g = 0.5 / 3f64.sqrt();
    let nodes = [0.5 - g, 0.5 + g];
    let h = 2.0 * PI / angles as f64;
    (0..angles)
        .into_par_iter()
        .map(|i| {
            let a = i as f64 * h;
            let e1 = theta1.value(&[a]).exp();
            let e2 = theta2.value(&[a]).exp();
            let d1 = e1 * theta1.angular_derivative(a);
            let d2 = e2 * theta2.angular_derivative(a);
            let (sin, cos) = a.sin_cos();
            nodes
                .iter()
                .map(|&s| {
                    let rho = s * e1 + (1.0 - s) * e2;
                    let drho = s * d1 + (1.0 - s) * d2;
                    let ks = [(e1 - e2) * cos, (e1 - e2) * sin];
                    let ka = [drho * cos - rho * sin, drho * sin + rho * cos];
                    0.5 * (ks[0] * ka[1] - ks[1] * ka[0]).abs()
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        * h
}

/// `sqrt(sum_i kappa[i+1]^2 |A_i Δ Ã_i|)`, the L2 distance of two star maps
/// whose symmetric differences are pairwise disjoint (plane measure).
pub fn star_l2_distance(a: &StarConfig, b: &StarConfig) -> Result<f64> {
    if a.centers != b.centers || a.kappa != b.kappa {
        return Err(Error::InvalidArgument("star configurations differ in centers or values".into()));
    }
    Ok(a.thetas
        .iter()
        .zip(&b.thetas)
        .zip(&a.kappa[1..])
        .map(|((t1, t2), k)| k * k * sym_diff_area(t1, t2))
        .sum::<f64>()
        .sqrt())
}

/// Sends a whitened coefficient vector to an absorption field.
pub trait PushForward: Send + Sync {
    fn dim(&self) -> usize;
    fn carrier(&self) -> Carrier;
    fn apply(&self, xi: &[f64]) -> Field;
}

/// Star map on a fixed mesh with precomputed element polar coordinates and
/// basis rows. Elements are sorted by distance to each center so only those
/// within the largest possible radius are tested.
pub struct StarMap {
    kappa: Vec<f64>,
    specs: Vec<KlSpec>,
    offsets: Vec<usize>,
    // per inclusion: (element, distance) sorted by distance, and basis rows
    // in the same order
    order: Vec<Vec<(usize, f64)>>,
    rows: Vec<Vec<f64>>,
    sup_norms: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    elements: usize,
}

impl StarMap {
    pub fn new(mesh: &TriMesh, centers: Vec<[f64; 2]>, kappa: Vec<f64>, specs: Vec<KlSpec>) -> Result<Self> {
        validate_star(&centers, &kappa)?;
        if specs.len() != centers.len() {
            return Err(Error::InvalidArgument("one prior per center is required".into()));
        }
        let mut offsets = vec![0];
        let mut order = Vec::new();
        let mut rows = Vec::new();
        let mut sup_norms = Vec::new();
        let mut weights = Vec::new();
        let centroids = mesh.centroids();
        for (c, spec) in centers.iter().zip(&specs) {
            spec.validate()?;
            let KlSpec::Circle(s) = spec else {
                return Err(Error::InvalidArgument("star boundaries need circle fields".into()));
            };
            offsets.push(offsets.last().unwrap() + spec.len());
            let polar: Vec<(usize, f64, f64)> = centroids
                .iter()
                .enumerate()
                .map(|(t, &x)| {
                    let (r, a) = polar(x, *c);
                    (t, r, a)
                })
                .collect();
            let mut sorted = polar;
            sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let w = spec.weights();
            let mut r = Vec::with_capacity(sorted.len() * spec.len());
            for &(_, _, a) in &sorted {
                r.extend(spec.basis_values(&[a]));
            }
            let sup: Vec<f64> = s
                .indices()
                .into_iter()
                .map(|l| if l == 0 { 1.0 / (2.0 * PI).sqrt() } else { 1.0 / PI.sqrt() })
                .collect();
            order.push(sorted.iter().map(|&(t, d, _)| (t, d)).collect());
            rows.push(r);
            sup_norms.push(sup);
            weights.push(w);
        }
        Ok(StarMap {
            kappa,
            specs,
            offsets,
            order,
            rows,
            sup_norms,
            weights,
            elements: mesh.element_count(),
        })
    }

    pub fn specs(&self) -> &[KlSpec] {
        &self.specs
    }

    /// Coefficient slice of inclusion `i` inside a stacked vector.
    pub fn block<'a>(&self, xi: &'a [f64], i: usize) -> &'a [f64] {
        &xi[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn rasterize(&self, xi: &[f64]) -> ElementField {
        assert_eq!(xi.len(), self.dim(), "coefficient vector length");
        let mut values = vec![self.kappa[0]; self.elements];
        for (i, spec) in self.specs.iter().enumerate() {
            let block = self.block(xi, i);
            let w = &self.weights[i];
            let mean = spec.mean();
            let bound: f64 = block
                .iter()
                .zip(w)
                .zip(&self.sup_norms[i])
                .map(|((x, w), s)| (x * w).abs() * s)
                .sum();
            let r_max = (mean + bound).exp() * (1.0 + 1e-12);
            let n = block.len();
            let coef: Vec<f64> = w.iter().zip(block).map(|(w, x)| w * x).collect();
            for (k, &(t, d)) in self.order[i].iter().enumerate() {
                if d > r_max {
                    break;
                }
                let row = &self.rows[i][k * n..(k + 1) * n];
                let theta = mean + row.iter().zip(&coef).map(|(p, c)| p * c).sum::<f64>();
                if d <= theta.exp() {
                    values[t] += self.kappa[i + 1];
                }
            }
        }
        ElementField { values }
    }
}

impl PushForward for StarMap {
    fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn carrier(&self) -> Carrier {
        Carrier::Element
    }

    fn apply(&self, xi: &[f64]) -> Field {
        Field::Element(self.rasterize(xi))
    }
}

/// Level-set map on a fixed mesh with a precomputed design matrix, sampled
/// at vertices (nodal carrier) or at centroids (element carrier).
pub struct LevelSetMap {
    config: LevelSetConfig,
    spec: KlSpec,
    design: Vec<f64>,
    carrier: Carrier,
}

impl LevelSetMap {
    pub fn new(mesh: &TriMesh, config: LevelSetConfig, spec: KlSpec) -> Result<Self> {
        Self::with_carrier(mesh, config, spec, Carrier::Node)
    }

    pub fn with_carrier(mesh: &TriMesh, config: LevelSetConfig, spec: KlSpec, carrier: Carrier) -> Result<Self> {
        spec.validate()?;
        match spec {
            KlSpec::Square(s) if s.half_width > 1.0 => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "level-set map needs a square torus containing the disk".into(),
                ))
            }
        }
        let points: Vec<Vec<f64>> = match carrier {
            Carrier::Node => mesh.vertices().iter().map(|v| v.to_vec()).collect(),
            Carrier::Element => mesh.centroids().iter().map(|v| v.to_vec()).collect(),
        };
        Ok(LevelSetMap {
            design: spec.design_matrix(&points),
            config,
            spec,
            carrier,
        })
    }

    pub fn spec(&self) -> &KlSpec {
        &self.spec
    }

    pub fn config(&self) -> &LevelSetConfig {
        &self.config
    }

    /// Values of `theta` at the sample points for the coefficients `xi`.
    pub fn theta(&self, xi: &[f64]) -> Vec<f64> {
        let n = self.spec.len();
        assert_eq!(xi.len(), n, "coefficient vector length");
        self.design
            .par_chunks(n)
            .map(|row| row.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    pub fn levelset(&self, xi: &[f64]) -> Vec<f64> {
        self.theta(xi).into_iter().map(|z| self.config.value(z)).collect()
    }
}

impl PushForward for LevelSetMap {
    fn dim(&self) -> usize {
        self.spec.len()
    }

    fn carrier(&self) -> Carrier {
        self.carrier
    }

    fn apply(&self, xi: &[f64]) -> Field {
        let values = self.levelset(xi);
        match self.carrier {
            Carrier::Node => Field::Nodal(NodalField { values }),
            Carrier::Element => Field::Element(ElementField { values }),
        }
    }
}

/// CSV with a `# carrier=element|node` line and rows `carrier_index,value`.
pub fn field_to_csv(field: &Field) -> String {
    let mut s = format!("# carrier={}\ncarrier_index,value\n", field.carrier().name());
    for (i, v) in field.values().iter().enumerate() {
        let _ = writeln!(s, "{i},{v:.16e}");
    }
    s
}

pub fn field_from_csv(text: &str) -> Result<Field> {
    let mut lines = text.lines().enumerate();
    let carrier = match lines.next() {
        Some((_, "# carrier=element")) => Carrier::Element,
        Some((_, "# carrier=node")) => Carrier::Node,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "expected `# carrier=element` or `# carrier=node`".into(),
            })
        }
    };
    match lines.next() {
        Some((_, "carrier_index,value")) => {}
        _ => {
            return Err(Error::Parse {
                line: 2,
                msg: "expected header `carrier_index,value`".into(),
            })
        }
    }
    let mut values = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.into() };
        let (idx, v) = line.split_once(',').ok_or_else(|| bad("expected two columns"))?;
        let idx: usize = idx.trim().parse().map_err(|_| bad("bad index"))?;
        if idx != values.len() {
            return Err(bad("indices must be consecutive from 0"));
        }
        values.push(v.trim().parse::<f64>().map_err(|_| bad("bad value"))?);
    }
    Ok(match carrier {
        Carrier::Element => Field::Element(ElementField { values }),
        Carrier::Node => Field::Nodal(NodalField { values }),
    })
}

/// Whether every entry lies in `[1/lambda, lambda]`.
pub fn within_bounds(field: &Field, lambda: f64) -> bool {
    field.values().iter().all(|v| (1.0 / lambda..=lambda).contains(v))
}
