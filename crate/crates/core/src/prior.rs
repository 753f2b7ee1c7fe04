//! Truncated Karhunen-Loeve Gaussian fields on the circle and on the square
//! torus `[-m, m]^2`, with weights `w_l = q (tau^2 + |l|^2)^(-delta/2)`.
//!
//! Basis functions are the real trigonometric orthonormal system indexed by
//! integers: `l > 0` is a cosine, `l < 0` a sine and `l = 0` the constant.
//! In 2D the basis is the tensor product over the two axes.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::NodalField;
use crate::mesh::TriMesh;

/// Deterministic generator used everywhere: ChaCha20 keyed by `seed`, with
/// an independent `stream` per consumer.
pub fn rng_from_seed(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a base seed with a path of indices (SplitMix64 finalizer), giving
/// well-separated seeds for replicates and noise levels.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p.wrapping_mul(0xd1b5_4a32_d192_ed03));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

pub fn standard_normals(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlSpec1d {
    /// Retains `|l| <= max_freq`.
    pub max_freq: usize,
    pub q: f64,
    pub tau: f64,
    pub delta: f64,
    /// Constant offset added to the series.
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlSpec2d {
    /// Retains `max(|l1|, |l2|) <= max_freq`.
    pub max_freq: usize,
    pub q: f64,
    pub tau: f64,
    pub delta: f64,
    /// The torus is the square `[-half_width, half_width]^2`.
    pub half_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "torus", rename_all = "lowercase")]
pub enum KlSpec {
    Circle(KlSpec1d),
    Square(KlSpec2d),
}

fn weight(q: f64, tau: f64, delta: f64, norm_sq: f64) -> f64 {
    q * (tau * tau + norm_sq).powf(-delta / 2.0)
}

/// Normalized 1D trig function on a period of length `2 half`.
#[inline]
fn trig(l: i32, x: f64, half: f64) -> f64 {
    let k = PI / half;
    match l {
        0 => 1.0 / (2.0 * half).sqrt(),
        l if l > 0 => (k * l as f64 * x).cos() / half.sqrt(),
        l => (k * (-l) as f64 * x).sin() / half.sqrt(),
    }
}

#[inline]
fn trig_derivative(l: i32, x: f64, half: f64) -> f64 {
    let k = PI / half;
    match l {
        0 => 0.0,
        l if l > 0 => -(k * l as f64) * (k * l as f64 * x).sin() / half.sqrt(),
        l => (k * (-l) as f64) * (k * (-l) as f64 * x).cos() / half.sqrt(),
    }
}

fn axis_parity(l: i32) -> char {
    match l {
        0 => '1',
        l if l > 0 => 'c',
        _ => 's',
    }
}

impl KlSpec1d {
    fn validate(&self) -> Result<()> {
        if !(self.q > 0.0) {
            return Err(Error::InvalidArgument(format!("amplitude q must be positive, got {}", self.q)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive so the constant-mode weight is finite, got {}",
                self.tau
            )));
        }
        if !(self.delta > 0.5) {
            return Err(Error::InvalidArgument(format!("delta must exceed 1/2, got {}", self.delta)));
        }
        if !self.mean.is_finite() {
            return Err(Error::InvalidArgument("mean offset must be finite".into()));
        }
        Ok(())
    }

    /// Indices in basis order: 0, 1, -1, 2, -2, ...
    pub fn indices(&self) -> Vec<i32> {
        let mut out = vec![0];
        for l in 1..=self.max_freq as i32 {
            out.push(l);
            out.push(-l);
        }
        out
    }
}

impl KlSpec2d {
    fn validate(&self) -> Result<()> {
        if !(self.q > 0.0) {
            return Err(Error::InvalidArgument(format!("amplitude q must be positive, got {}", self.q)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive so the constant-mode weight is finite, got {}",
                self.tau
            )));
        }
        if !(self.delta > 1.0) {
            return Err(Error::InvalidArgument(format!("delta must exceed 1, got {}", self.delta)));
        }
        if !(self.half_width > 0.0) {
            return Err(Error::InvalidArgument("torus half-width must be positive".into()));
        }
        Ok(())
    }

    /// Index pairs ordered by (max(|l1|, |l2|), l1, l2).
    pub fn indices(&self) -> Vec<(i32, i32)> {
        let n = self.max_freq as i32;
        let mut out: Vec<(i32, i32)> = (-n..=n)
            .flat_map(|a| (-n..=n).map(move |b| (a, b)))
            .collect();
        out.sort_by_key(|&(a, b)| (a.abs().max(b.abs()), a, b));
        out
    }
}

impl KlSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KlSpec::Circle(s) => s.validate(),
            KlSpec::Square(s) => s.validate(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            KlSpec::Circle(s) => s.mean,
            KlSpec::Square(_) => 0.0,
        }
    }

    /// Number of retained basis functions.
    pub fn len(&self) -> usize {
        match self {
            KlSpec::Circle(s) => 2 * s.max_freq + 1,
            KlSpec::Square(s) => (2 * s.max_freq + 1).pow(2),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// KL weights in basis order.
    pub fn weights(&self) -> Vec<f64> {
        match self {
            KlSpec::Circle(s) => s
                .indices()
                .into_iter()
                .map(|l| weight(s.q, s.tau, s.delta, (l * l) as f64))
                .collect(),
            KlSpec::Square(s) => s
                .indices()
                .into_iter()
                .map(|(a, b)| weight(s.q, s.tau, s.delta, (a * a + b * b) as f64))
                .collect(),
        }
    }

    /// Basis function `j` at `x` (an angle in 1D, a point in 2D), periodic.
    pub fn basis_values(&self, x: &[f64]) -> Vec<f64> {
        match self {
            KlSpec::Circle(s) => s.indices().into_iter().map(|l| trig(l, x[0], PI)).collect(),
            KlSpec::Square(s) => {
                let h = s.half_width;
                let n = s.max_freq as i32;
                let ax: Vec<f64> = (-n..=n).map(|l| trig(l, x[0], h)).collect();
                let ay: Vec<f64> = (-n..=n).map(|l| trig(l, x[1], h)).collect();
                s.indices()
                    .into_iter()
                    .map(|(a, b)| ax[(a + n) as usize] * ay[(b + n) as usize])
                    .collect()
            }
        }
    }

    /// Rows of `w_j phi_j(x_i)` for each point, row-major.
    pub fn design_matrix(&self, points: &[Vec<f64>]) -> Vec<f64> {
        let w = self.weights();
        let mut out = Vec::with_capacity(points.len() * w.len());
        for p in points {
            out.extend(self.basis_values(p).iter().zip(&w).map(|(phi, w)| phi * w));
        }
        out
    }

    /// `sum_j w_j^2 phi_j(x) phi_j(y)`, the covariance of the truncated field.
    pub fn covariance(&self, x: &[f64], y: &[f64]) -> f64 {
        let w = self.weights();
        self.basis_values(x)
            .iter()
            .zip(self.basis_values(y))
            .zip(&w)
            .map(|((a, b), w)| w * w * a * b)
            .sum()
    }

    /// Labels `(l1, l2, parity)` for each coefficient.
    pub fn labels(&self) -> Vec<(i32, i32, String)> {
        match self {
            KlSpec::Circle(s) => s
                .indices()
                .into_iter()
                .map(|l| (l, 0, axis_parity(l).to_string()))
                .collect(),
            KlSpec::Square(s) => s
                .indices()
                .into_iter()
                .map(|(a, b)| (a, b, format!("{}{}", axis_parity(a), axis_parity(b))))
                .collect(),
        }
    }

    /// Position of the coefficient with index `(l1, l2)` (use `l2 = 0` in 1D).
    pub fn position(&self, l1: i32, l2: i32) -> Option<usize> {
        match self {
            KlSpec::Circle(s) => s.indices().iter().position(|&l| l == l1),
            KlSpec::Square(s) => s.indices().iter().position(|&p| p == (l1, l2)),
        }
    }
}

/// One realization of a truncated KL expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct KlField {
    pub spec: KlSpec,
    /// Standard-normal coefficients, one per basis function.
    pub xi: Vec<f64>,
    weights: Vec<f64>,
}

impl KlField {
    pub fn new(spec: KlSpec, xi: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if xi.len() != spec.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                spec.len(),
                xi.len()
            )));
        }
        Ok(KlField {
            weights: spec.weights(),
            spec,
            xi,
        })
    }

    pub fn zeros(spec: KlSpec) -> Result<Self> {
        Self::new(spec, vec![0.0; spec.len()])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Field value at `x` with periodic wrap-around.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.spec.mean()
            + self
                .spec
                .basis_values(x)
                .iter()
                .zip(&self.weights)
                .zip(&self.xi)
                .map(|((phi, w), xi)| phi * w * xi)
                .sum::<f64>()
    }

    /// Derivative of a circle field with respect to the angle.
    pub fn angular_derivative(&self, angle: f64) -> f64 {
        match self.spec {
            KlSpec::Circle(s) => s
                .indices()
                .into_iter()
                .zip(&self.weights)
                .zip(&self.xi)
                .map(|((l, w), xi)| trig_derivative(l, angle, PI) * w * xi)
                .sum(),
            KlSpec::Square(_) => f64::NAN,
        }
    }

    /// Gradient of a square-torus field.
    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        match self.spec {
            KlSpec::Square(s) => {
                let h = s.half_width;
                let mut g = [0.0; 2];
                for (((a, b), w), xi) in s.indices().into_iter().zip(&self.weights).zip(&self.xi) {
                    let c = w * xi;
                    g[0] += c * trig_derivative(a, x[0], h) * trig(b, x[1], h);
                    g[1] += c * trig(a, x[0], h) * trig_derivative(b, x[1], h);
                }
                g
            }
            KlSpec::Circle(_) => [f64::NAN; 2],
        }
    }

    /// CSV rows `index,l1,l2,parity,xi`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,l1,l2,parity,xi\n");
        for (i, ((l1, l2, p), xi)) in self.spec.labels().into_iter().zip(&self.xi).enumerate() {
            let _ = writeln!(s, "{i},{l1},{l2},{p},{xi:.16e}");
        }
        s
    }
}

/// Draws i.i.d. standard-normal coefficients.
pub fn sample(spec: &KlSpec, rng: &mut ChaCha20Rng) -> Result<KlField> {
    spec.validate()?;
    KlField::new(*spec, standard_normals(rng, spec.len()))
}

pub fn sample_seeded(spec: &KlSpec, seed: u64) -> Result<KlField> {
    sample(spec, &mut rng_from_seed(seed, 0))
}

/// Evaluates at points inside the field's fundamental domain: angles in
/// `[0, 2 pi)` on the circle, points of `[-m, m]^2` on the square.
pub fn evaluate(field: &KlField, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            let inside = match field.spec {
                KlSpec::Circle(_) => p.len() == 1 && (0.0..2.0 * PI).contains(&p[0]),
                KlSpec::Square(s) => {
                    p.len() == 2 && p.iter().all(|c| c.abs() <= s.half_width)
                }
            };
            if !inside {
                return Err(Error::OutsideDomain(format!("{p:?}")));
            }
            Ok(field.value(p))
        })
        .collect()
}

/// Nodal values of a square-torus field on a disk mesh.
pub fn restrict_to_disk(field: &KlField, mesh: &TriMesh) -> Result<NodalField> {
    match field.spec {
        KlSpec::Square(s) if s.half_width > 1.0 => Ok(NodalField::from_fn(mesh, |v| {
            field.value(&[v[0], v[1]])
        })),
        KlSpec::Square(s) => Err(Error::InvalidArgument(format!(
            "torus half-width {} does not contain the unit disk",
            s.half_width
        ))),
        KlSpec::Circle(_) => Err(Error::InvalidArgument(
            "restriction to the disk needs a square-torus field".into(),
        )),
    }
}
