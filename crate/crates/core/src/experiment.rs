//! Phantom, illumination and the simulate / sample / study pipeline.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{l2_distance, BoundaryData, Carrier, ElementField, Field};
use crate::mesh::{MeshPreset, TriMesh};
use crate::observation::{add_noise, estimate_approx_error, DataModel, Likelihood, LikelihoodConvention, Observation};
use crate::param::{field_to_csv, rasterize_regions, LevelSetConfig, LevelSetMap, PushForward, StarMap};
use crate::pcn::{posterior_mean, run, ChainRecord, LogLikelihood, SamplerConfig};
use crate::prior::{derive_seed, KlSpec, KlSpec1d, KlSpec2d};
use crate::spectral::DiskEigenbasis;

// ---------------------------------------------------------------------------
// phantom

/// Two-inclusion test absorption `kappa1 + kappa2 1_{A1} + kappa3 1_{A2}`
/// with a fixed diffusion derived from it.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub kappa: [f64; 3],
    /// Closed polygon approximating the boundary of the first inclusion.
    pub polygon: Vec<[f64; 2]>,
    pub center2: [f64; 2],
    smoother: GridSmoother,
}

const POLYGON_VERTICES: usize = 2048;

impl Phantom {
    pub fn new(sigma: f64, grid: usize) -> Result<Self> {
        let c1 = [-0.4, 0.4];
        let polygon = (0..POLYGON_VERTICES)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / POLYGON_VERTICES as f64;
                [
                    c1[0] + 0.18 * (t.cos() + 0.65 * (2.0 * t).cos()),
                    c1[1] + 0.18 * 1.5 * t.sin(),
                ]
            })
            .collect();
        let mut p = Phantom {
            kappa: [0.1, 0.4, 0.2],
            polygon,
            center2: [0.4, -0.4],
            smoother: GridSmoother::empty(),
        };
        let scatter = |x: [f64; 2]| 100.0 * p.gamma(x);
        let smoother = GridSmoother::new(&scatter, grid, sigma)?;
        p.smoother = smoother;
        Ok(p)
    }

    pub fn radius2(angle: f64) -> f64 {
        0.12 * (0.8 + 0.8 * ((4.0 * angle).cos() - 1.0).powi(2)).sqrt()
    }

    pub fn in_first(&self, x: [f64; 2]) -> bool {
        point_in_polygon(x, &self.polygon)
    }

    pub fn in_second(&self, x: [f64; 2]) -> bool {
        let dx = x[0] - self.center2[0];
        let dy = x[1] - self.center2[1];
        dx.hypot(dy) <= Self::radius2(dy.atan2(dx))
    }

    pub fn gamma(&self, x: [f64; 2]) -> f64 {
        let mut g = self.kappa[0];
        if self.in_first(x) {
            g += self.kappa[1];
        }
        if self.in_second(x) {
            g += self.kappa[2];
        }
        g
    }

    /// Smoothed scattering `mu_s`.
    pub fn scattering(&self, x: [f64; 2]) -> f64 {
        self.smoother.eval(x)
    }

    /// `mu = 1 / (2 (gamma + 0.2 mu_s))`.
    pub fn mu(&self, x: [f64; 2]) -> f64 {
        0.5 / (self.gamma(x) + 0.2 * self.scattering(x))
    }

    /// Centroid rasterization of the absorption.
    pub fn rasterize(&self, mesh: &TriMesh) -> ElementField {
        rasterize_regions(
            mesh,
            &self.kappa,
            &[&|x| self.in_first(x), &|x| self.in_second(x)],
        )
        .expect("three values for two regions")
    }

    pub fn mu_field(&self, mesh: &TriMesh) -> ElementField {
        ElementField::from_fn(mesh, |x| self.mu(x))
    }
}

/// Even-odd rule.
pub fn point_in_polygon(x: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > x[1]) != (b[1] > x[1]) {
            let t = (x[1] - a[1]) / (b[1] - a[1]);
            if x[0] < a[0] + t * (b[0] - a[0]) {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Gaussian blur of a function sampled on a square grid over `[-1, 1]^2`,
/// with edge replication and bilinear read-back.
#[derive(Debug, Clone)]
struct GridSmoother {
    n: usize,
    values: Vec<f64>,
}

impl GridSmoother {
    fn empty() -> Self {
        GridSmoother { n: 0, values: vec![] }
    }

    fn new(f: &dyn Fn([f64; 2]) -> f64, n: usize, sigma: f64) -> Result<Self> {
        if n < 2 || !(sigma > 0.0) {
            return Err(Error::InvalidArgument("smoothing needs a grid of at least 2 and sigma > 0".into()));
        }
        let h = 2.0 / n as f64;
        let coord = |i: usize| -1.0 + (i as f64 + 0.5) * h;
        let mut img: Vec<f64> = (0..n * n).map(|k| f([coord(k % n), coord(k / n)])).collect();
        let s = sigma / h;
        let radius = (4.0 * s).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * s * s)).exp()).collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
        let mut tmp = vec![0.0; n * n];
        for row in 0..n {
            for col in 0..n {
                tmp[row * n + col] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * img[row * n + clamp(col as isize + k as isize - radius)])
                    .sum();
            }
        }
        for row in 0..n {
            for col in 0..n {
                img[row * n + col] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * tmp[clamp(row as isize + k as isize - radius) * n + col])
                    .sum();
            }
        }
        Ok(GridSmoother { n, values: img })
    }

    fn eval(&self, x: [f64; 2]) -> f64 {
        let n = self.n;
        let h = 2.0 / n as f64;
        let pos = |c: f64| {
            let u = ((c + 1.0) / h - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 2);
            (i, u - i as f64)
        };
        let (i, fx) = pos(x[0]);
        let (j, fy) = pos(x[1]);
        let v = |a: usize, b: usize| self.values[b * n + a];
        (1.0 - fy) * ((1.0 - fx) * v(i, j) + fx * v(i + 1, j)) + fy * ((1.0 - fx) * v(i, j + 1) + fx * v(i + 1, j + 1))
    }
}

// ---------------------------------------------------------------------------
// illumination

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    pub centers: Vec<[f64; 2]>,
    pub strengths: Vec<f64>,
}

impl Default for Illumination {
    fn default() -> Self {
        let m1 = [0.5 * SQRT_2, 0.5 * SQRT_2];
        Illumination {
            centers: vec![m1, [-m1[0], m1[1]], [-m1[0], -m1[1]]],
            strengths: vec![10.0, 2.0, 5.0],
        }
    }
}

impl Illumination {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.centers
            .iter()
            .zip(&self.strengths)
            .map(|(m, s)| s * (-2.0 * ((x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2))).exp())
            .sum()
    }

    /// Dirichlet data with bounds taken from a dense sampling of the circle.
    pub fn boundary_data(&self) -> Result<BoundaryData> {
        let samples: Vec<f64> = (0..4096)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 4096.0;
                self.eval([t.cos(), t.sin()])
            })
            .collect();
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(0.0, f64::max);
        let this = self.clone();
        BoundaryData::new(move |x| this.eval(x), 0.99 * lo, 1.01 * hi)
    }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Star,
    Level,
}

impl PathKind {
    pub fn name(self) -> &'static str {
        match self {
            PathKind::Star => "star",
            PathKind::Level => "level",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarPrior {
    pub max_freq: usize,
    pub tau: f64,
    pub delta: f64,
    pub mean: f64,
    pub centers: Vec<[f64; 2]>,
    pub kappa: Vec<f64>,
}

impl Default for StarPrior {
    fn default() -> Self {
        StarPrior {
            max_freq: 12,
            tau: 4.0,
            delta: 2.5,
            mean: -2.0,
            centers: vec![[0.37, -0.43], [-0.44, 0.36]],
            kappa: vec![0.1, 0.2, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelPrior {
    pub max_freq: usize,
    pub tau: f64,
    pub delta: f64,
    pub half_width: f64,
    pub levels: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl Default for LevelPrior {
    fn default() -> Self {
        LevelPrior {
            max_freq: 4,
            tau: 10.0,
            delta: 1.2,
            half_width: 1.1,
            levels: vec![-1.0, 1.0],
            kappa: vec![0.3, 0.1, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerBudget {
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "hundred")]
    pub subsample: usize,
    #[serde(default = "hundred")]
    pub adapt_batch: usize,
    #[serde(default = "gain")]
    pub adapt_gain: f64,
    #[serde(default = "target")]
    pub target_acceptance: f64,
}

fn hundred() -> usize {
    100
}
fn gain() -> f64 {
    0.05
}
fn target() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub chain: u64,
    pub approx: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodOptions {
    #[serde(default)]
    pub convention: LikelihoodConvention,
    /// Add the discretization error level to the noise variance.
    #[serde(default)]
    pub approx_error: bool,
    #[serde(default = "approx_samples")]
    pub approx_samples: usize,
}

fn approx_samples() -> usize {
    200
}

impl Default for LikelihoodOptions {
    fn default() -> Self {
        LikelihoodOptions {
            convention: LikelihoodConvention::Numerics,
            approx_error: false,
            approx_samples: approx_samples(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomOptions {
    /// Standard deviation of the scattering blur in physical units.
    pub smoothing_sigma: f64,
    pub smoothing_grid: usize,
}

impl Default for PhantomOptions {
    fn default() -> Self {
        PhantomOptions {
            smoothing_sigma: 0.1,
            smoothing_grid: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub path: PathKind,
    pub data_mesh: MeshPreset,
    pub inversion_mesh: MeshPreset,
    pub n_d: usize,
    /// Relative noise targets, largest first.
    pub noise_levels: Vec<f64>,
    /// Prior amplitude per noise level.
    pub q: Vec<f64>,
    /// Initial pCN step per noise level.
    pub step: Vec<f64>,
    /// Level-set smoothing width per noise level (level path only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    pub sampler: SamplerBudget,
    pub seeds: Seeds,
    pub replicates: usize,
    #[serde(default)]
    pub star: StarPrior,
    #[serde(default)]
    pub level: LevelPrior,
    #[serde(default)]
    pub likelihood: LikelihoodOptions,
    #[serde(default)]
    pub phantom: PhantomOptions,
    #[serde(default)]
    pub illumination: Illumination,
}

pub const PRESETS: [&str; 4] = ["desk-star", "desk-level", "paper-star", "paper-level"];

const STAR_Q: [f64; 5] = [7.0 / 20.0, 6.0 / 20.0, 5.0 / 20.0, 4.0 / 20.0, 3.0 / 20.0];
const STAR_B: [f64; 5] = [0.1, 0.045, 0.035, 0.025, 0.015];
const LEVEL_Q: [f64; 5] = [2.5, 2.0, 1.5, 1.0, 0.75];
const LEVEL_B: [f64; 5] = [0.05, 0.01, 0.006, 0.003, 0.002];
const NOISE: [f64; 5] = [0.16, 0.08, 0.04, 0.02, 0.01];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let star_q: Vec<f64> = STAR_Q.iter().map(|f| 10f64.powf(1.5) * f).collect();
        let level_q: Vec<f64> = LEVEL_Q.iter().map(|f| 5.0 * f).collect();
        let base = |path, data_mesh, inversion_mesh, iterations, burn_in, replicates| ExperimentConfig {
            name: name.to_string(),
            path,
            data_mesh,
            inversion_mesh,
            n_d: 182,
            noise_levels: NOISE.to_vec(),
            q: vec![],
            step: vec![],
            eps: None,
            sampler: SamplerBudget {
                iterations,
                burn_in,
                subsample: 100,
                adapt_batch: 100,
                adapt_gain: 0.05,
                target_acceptance: 0.3,
            },
            seeds: Seeds {
                data: 20240601,
                chain: 7001,
                approx: 99,
            },
            replicates,
            star: StarPrior::default(),
            level: LevelPrior::default(),
            likelihood: LikelihoodOptions::default(),
            phantom: PhantomOptions::default(),
            illumination: Illumination::default(),
        };
        let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let c = match name {
            "desk-star" => ExperimentConfig {
                q: star_q,
                step: STAR_B.to_vec(),
                ..base(PathKind::Star, MeshPreset::Inversion, MeshPreset::Desk, 20_000, 10_000, 3)
            },
            "desk-level" => {
                let idx = [0, 2, 4];
                ExperimentConfig {
                    noise_levels: pick(&NOISE, &idx),
                    q: pick(&level_q, &idx),
                    step: pick(&LEVEL_B, &idx),
                    eps: Some(vec![0.1; 3]),
                    ..base(PathKind::Level, MeshPreset::Inversion, MeshPreset::Desk, 20_000, 10_000, 3)
                }
            }
            "paper-star" => ExperimentConfig {
                q: star_q,
                step: STAR_B.to_vec(),
                ..base(PathKind::Star, MeshPreset::Data, MeshPreset::Inversion, 1_000_000, 500_000, 5)
            },
            "paper-level" => ExperimentConfig {
                q: level_q,
                step: LEVEL_B.to_vec(),
                eps: Some(vec![0.1; 5]),
                ..base(PathKind::Level, MeshPreset::Data, MeshPreset::Inversion, 1_000_000, 1_200_000, 5)
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = self.noise_levels.len();
        if self.q.len() != n || self.step.len() != n {
            return bad(format!("need one q and one step per noise level ({n})"));
        }
        if let Some(eps) = &self.eps {
            if eps.len() != n || eps.iter().any(|e| !(*e > 0.0)) {
                return bad("eps needs one positive width per noise level".into());
            }
        }
        if self.noise_levels.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return bad("noise levels must lie in (0, 1)".into());
        }
        if self.noise_levels.windows(2).any(|w| w[0] <= w[1]) {
            return bad("noise levels must be sorted in decreasing order".into());
        }
        if self.q.iter().any(|q| !(*q > 0.0)) {
            return bad("prior amplitudes must be positive".into());
        }
        if self.step.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return bad("step sizes must lie in (0, 1]".into());
        }
        for m in [self.data_mesh, self.inversion_mesh] {
            if m.rings() == 0 || m.rings() > 4096 {
                return bad(format!("mesh preset {m:?} does not exist"));
            }
        }
        if self.n_d == 0 {
            return bad("N_d must be positive".into());
        }
        if self.replicates == 0 {
            return bad("at least one replicate is required".into());
        }
        if self.sampler.subsample == 0 || self.sampler.adapt_batch == 0 {
            return bad("subsample and adaptation batch must be positive".into());
        }
        if self.likelihood.approx_error && self.likelihood.approx_samples < 2 {
            return bad("approximation error needs at least two samples".into());
        }
        Ok(())
    }

    pub fn sampler_config(&self, level: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            step: self.step[level],
            target_acceptance: self.sampler.target_acceptance,
            iterations: self.sampler.iterations,
            burn_in: self.sampler.burn_in,
            subsample: self.sampler.subsample,
            adapt_batch: self.sampler.adapt_batch,
            adapt_gain: self.sampler.adapt_gain,
            seed,
        }
    }

    pub fn star_spec(&self, level: usize) -> KlSpec {
        KlSpec::Circle(KlSpec1d {
            max_freq: self.star.max_freq,
            q: self.q[level],
            tau: self.star.tau,
            delta: self.star.delta,
            mean: self.star.mean,
        })
    }

    pub fn level_spec(&self, level: usize) -> KlSpec {
        KlSpec::Square(KlSpec2d {
            max_freq: self.level.max_freq,
            q: self.q[level],
            tau: self.level.tau,
            delta: self.level.delta,
            half_width: self.level.half_width,
        })
    }

    pub fn level_eps(&self, level: usize) -> f64 {
        self.eps.as_ref().map_or(0.1, |e| e[level])
    }

    /// Seed of the noise draw for a noise level and replicate.
    pub fn noise_seed(&self, level: usize, replicate: usize) -> u64 {
        derive_seed(self.seeds.data, &[replicate as u64, level as u64])
    }

    pub fn chain_seed(&self, level: usize, replicate: usize) -> u64 {
        derive_seed(self.seeds.chain, &[replicate as u64, level as u64])
    }
}

// ---------------------------------------------------------------------------
// problem assembly

/// Meshes, basis, phantom and models shared by every run of one config.
pub struct Setup {
    pub config: ExperimentConfig,
    pub phantom: Phantom,
    pub basis: DiskEigenbasis,
    pub data_mesh: Arc<TriMesh>,
    pub inversion_mesh: Arc<TriMesh>,
    pub data_model: DataModel,
    pub inversion_model: DataModel,
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let phantom = Phantom::new(config.phantom.smoothing_sigma, config.phantom.smoothing_grid)?;
        let basis = DiskEigenbasis::build(config.n_d)?;
        let g = config.illumination.boundary_data()?;
        let data_mesh = Arc::new(config.data_mesh.build());
        let inversion_mesh = if config.inversion_mesh == config.data_mesh {
            Arc::clone(&data_mesh)
        } else {
            Arc::new(config.inversion_mesh.build())
        };
        let data_model = DataModel::new(
            Arc::clone(&data_mesh),
            &phantom.mu_field(&data_mesh).into(),
            g.clone(),
            &basis,
        )?;
        let inversion_model = DataModel::new(
            Arc::clone(&inversion_mesh),
            &phantom.mu_field(&inversion_mesh).into(),
            g,
            &basis,
        )?;
        Ok(Setup {
            config,
            phantom,
            basis,
            data_mesh,
            inversion_mesh,
            data_model,
            inversion_model,
        })
    }

    /// Noiseless projected data of the phantom on the data mesh.
    pub fn clean_data(&self) -> Result<Vec<f64>> {
        self.data_model.predict(&self.phantom.rasterize(&self.data_mesh).into())
    }

    pub fn truth(&self) -> Field {
        self.phantom.rasterize(&self.inversion_mesh).into()
    }

    pub fn map_on(&self, mesh: &TriMesh, level: usize, carrier: Carrier) -> Result<Box<dyn PushForward>> {
        let c = &self.config;
        Ok(match c.path {
            PathKind::Star => Box::new(StarMap::new(
                mesh,
                c.star.centers.clone(),
                c.star.kappa.clone(),
                vec![c.star_spec(level); c.star.centers.len()],
            )?),
            PathKind::Level => Box::new(LevelSetMap::with_carrier(
                mesh,
                LevelSetConfig::new(c.level.levels.clone(), c.level.kappa.clone(), c.level_eps(level))?,
                c.level_spec(level),
                carrier,
            )?),
        })
    }

    /// Push-forward on the inversion mesh in the carrier matching the path.
    pub fn inversion_map(&self, level: usize) -> Result<Box<dyn PushForward>> {
        let carrier = match self.config.path {
            PathKind::Star => Carrier::Element,
            PathKind::Level => Carrier::Node,
        };
        self.map_on(&self.inversion_mesh, level, carrier)
    }

    /// Initial coefficients: unit constant mode for every star boundary,
    /// or `theta = 2 phi_(0,-1)` for the level set.
    pub fn initial_state(&self, level: usize) -> Vec<f64> {
        let c = &self.config;
        match c.path {
            PathKind::Star => {
                let spec = c.star_spec(level);
                let mut xi = vec![0.0; spec.len() * c.star.centers.len()];
                for i in 0..c.star.centers.len() {
                    xi[i * spec.len()] = 1.0;
                }
                xi
            }
            PathKind::Level => {
                let spec = c.level_spec(level);
                let mut xi = vec![0.0; spec.len()];
                if let Some(j) = spec.position(0, -1) {
                    xi[j] = 2.0 / spec.weights()[j];
                }
                xi
            }
        }
    }

    /// Discretization error between the data model (element path on the
    /// data mesh) and the inversion model, over prior draws of this level.
    pub fn approx_error(&self, level: usize) -> Result<f64> {
        let fine = self.map_on(&self.data_mesh, level, Carrier::Element)?;
        let coarse = self.inversion_map(level)?;
        estimate_approx_error(
            (&self.data_model, fine.as_ref()),
            (&self.inversion_model, coarse.as_ref()),
            self.config.likelihood.approx_samples,
            derive_seed(self.config.seeds.approx, &[level as u64]),
        )
    }

    pub fn observation(&self, clean: &[f64], level: usize, replicate: usize) -> Result<Observation> {
        add_noise(clean, self.config.noise_levels[level], self.config.noise_seed(level, replicate))
    }
}

/// Posterior target on the inversion mesh; the fluence of the current
/// state warm-starts the next solve.
pub struct PosteriorTarget<'a> {
    pub map: &'a dyn PushForward,
    pub model: &'a DataModel,
    pub likelihood: Likelihood,
}

impl LogLikelihood for PosteriorTarget<'_> {
    type Aux = Vec<f64>;

    fn eval(&self, xi: &[f64], previous: Option<&Vec<f64>>) -> Result<(f64, Vec<f64>)> {
        let gamma = self.map.apply(xi);
        let (pred, u) = self.model.predict_from(&gamma, previous.map(|v| v.as_slice()))?;
        Ok((self.likelihood.eval(&pred), u.values))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: ChainRecord,
    pub mean: Field,
    pub l2_error: f64,
    pub observation: Observation,
    pub approx_error: Option<f64>,
    pub chain_seed: u64,
}

/// One chain for one noise level against a given observation.
pub fn run_chain(
    setup: &Setup,
    level: usize,
    obs: Observation,
    approx_error: Option<f64>,
    chain_seed: u64,
) -> Result<RunOutput> {
    let c = &setup.config;
    let map = setup.inversion_map(level)?;
    let variance = obs.meta.epsilon.powi(2) + approx_error.map_or(0.0, |e| e * e);
    let target = PosteriorTarget {
        map: map.as_ref(),
        model: &setup.inversion_model,
        likelihood: Likelihood::with_variance(&obs, variance, c.likelihood.convention),
    };
    let record = run(&c.sampler_config(level, chain_seed), &target, setup.initial_state(level))?;
    let (mean, l2_error) = if record.states.is_empty() {
        (map.apply(&setup.initial_state(level)), f64::NAN)
    } else {
        let mean = posterior_mean(&record, map.as_ref())?;
        let err = l2_distance(&setup.inversion_mesh, &mean, &setup.truth());
        (mean, err)
    };
    Ok(RunOutput {
        record,
        mean,
        l2_error,
        observation: obs,
        approx_error,
        chain_seed,
    })
}

// ---------------------------------------------------------------------------
// commands

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub fn experiment_dir(out: &Path, config: &ExperimentConfig) -> PathBuf {
    out.join(&config.name)
}

/// Writes one observation per noise target under `<out>/<name>/data/`.
pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    if config.noise_levels.is_empty() {
        return Ok(vec![]);
    }
    let setup = Setup::new(config.clone())?;
    let clean = setup.clean_data()?;
    let dir = experiment_dir(out, config).join("data");
    let mut written = Vec::new();
    for level in 0..config.noise_levels.len() {
        let obs = setup.observation(&clean, level, 0)?;
        let stem = format!("noise_{level}");
        obs.save(&dir, &stem)?;
        written.push(dir.join(format!("{stem}.csv")));
    }
    write(&dir.join("clean.csv"), &crate::spectral::coefficients_to_csv(&clean))?;
    Ok(written)
}

fn approx_error_for(setup: &Setup, level: usize) -> Result<Option<f64>> {
    if setup.config.likelihood.approx_error {
        Ok(Some(setup.approx_error(level)?))
    } else {
        Ok(None)
    }
}

fn write_run(dir: &Path, setup: &Setup, level: usize, replicate: Option<usize>, out: &RunOutput) -> Result<()> {
    out.observation.save(dir, "observation")?;
    write(&dir.join("trace.csv"), &out.record.trace_csv())?;
    write(&dir.join("states.csv"), &out.record.states_csv())?;
    write(&dir.join("posterior_mean.csv"), &field_to_csv(&out.mean))?;
    let c = &setup.config;
    let meta = serde_json::json!({
        "git_describe": git_describe(),
        "preset": c.name,
        "path": c.path.name(),
        "noise_index": level,
        "relative_noise": c.noise_levels[level],
        "replicate": replicate,
        "data_seed": out.observation.meta.seed,
        "chain_seed": out.chain_seed,
        "data_mesh_rings": c.data_mesh.rings(),
        "inversion_mesh_rings": c.inversion_mesh.rings(),
        "N_d": c.n_d,
        "q": c.q[level],
        "initial_step": c.step[level],
        "final_step": out.record.final_step,
        "accepted": out.record.accepted,
        "rejected": out.record.rejected,
        "failed": out.record.failed,
        "epsilon": out.observation.meta.epsilon,
        "approx_error": out.approx_error,
        "l2_error": out.l2_error,
        "scattering_smoothing": {
            "sigma": c.phantom.smoothing_sigma,
            "grid": c.phantom.smoothing_grid,
            "note": "physical-width stand-in for a pixel-unit blur"
        }
    });
    write(&dir.join("meta.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))
}

/// Runs one chain against the simulated observation of `level`.
pub fn cmd_sample(config: &ExperimentConfig, level: usize, seed: Option<u64>, out: &Path) -> Result<RunOutput> {
    config.validate()?;
    if level >= config.noise_levels.len() {
        return Err(Error::Config(format!(
            "noise index {level} out of range (have {})",
            config.noise_levels.len()
        )));
    }
    let base = experiment_dir(out, config);
    let obs = Observation::load(&base.join("data"), &format!("noise_{level}"))?;
    if obs.meta.n_d != config.n_d {
        return Err(Error::Config(format!(
            "observation has N_d = {}, config expects {}",
            obs.meta.n_d, config.n_d
        )));
    }
    let setup = Setup::new(config.clone())?;
    let chain_seed = seed.unwrap_or_else(|| config.chain_seed(level, 0));
    let result = run_chain(&setup, level, obs, approx_error_for(&setup, level)?, chain_seed)?;
    let dir = base.join(format!("noise_{level}")).join(format!("seed_{chain_seed}"));
    write_run(&dir, &setup, level, None, &result)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub path: PathKind,
    pub level: usize,
    pub noise: f64,
    pub replicate: usize,
    pub l2_error: f64,
    pub acceptance: f64,
    pub final_step: f64,
    /// Smallest and largest value of the posterior mean.
    pub mean_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSummary {
    pub noise: f64,
    pub mean: f64,
    /// `(max - min) / mean` over replicates.
    pub spread: f64,
}

pub fn summarize(rows: &[StudyRow], levels: &[f64]) -> Vec<LevelSummary> {
    levels
        .iter()
        .enumerate()
        .map(|(i, &noise)| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.level == i).map(|r| r.l2_error).collect();
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let max = errs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = errs.iter().copied().fold(f64::INFINITY, f64::min);
            LevelSummary {
                noise,
                mean,
                spread: (max - min) / mean,
            }
        })
        .collect()
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut s = String::from("path,noise,replicate,l2_error\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.16e},{},{:.16e}", r.path.name(), r.noise, r.replicate, r.l2_error);
    }
    s
}

pub fn summary_csv(path: PathKind, summary: &[LevelSummary]) -> String {
    let mut s = String::from("path,noise,mean_l2_error,relative_spread\n");
    for l in summary {
        let _ = writeln!(s, "{},{:.16e},{:.16e},{:.16e}", path.name(), l.noise, l.mean, l.spread);
    }
    s
}

/// All (noise level x replicate) chains, run on at most `workers` threads.
/// Replicate `r` uses its own noise realization and chain seed.
pub fn cmd_study(config: &ExperimentConfig, workers: usize, out: Option<&Path>) -> Result<(Vec<StudyRow>, Vec<LevelSummary>)> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        use rayon::prelude::*;
        let setup = Setup::new(config.clone())?;
        let clean = setup.clean_data()?;
        let levels = config.noise_levels.len();
        let approx = (0..levels)
            .into_par_iter()
            .map(|l| approx_error_for(&setup, l))
            .collect::<Result<Vec<_>>>()?;
        let tasks: Vec<(usize, usize)> = (0..levels)
            .flat_map(|l| (0..config.replicates).map(move |r| (l, r)))
            .collect();
        let rows = tasks
            .par_iter()
            .map(|&(level, replicate)| {
                let obs = setup.observation(&clean, level, replicate)?;
                let result = run_chain(&setup, level, obs, approx[level], config.chain_seed(level, replicate))?;
                if let Some(out) = out {
                    let dir = experiment_dir(out, config)
                        .join(format!("noise_{level}"))
                        .join(format!("rep_{replicate}"));
                    write_run(&dir, &setup, level, Some(replicate), &result)?;
                }
                Ok(StudyRow {
                    path: config.path,
                    level,
                    noise: config.noise_levels[level],
                    replicate,
                    l2_error: result.l2_error,
                    acceptance: result.record.post_burn_in_acceptance(config.sampler.burn_in),
                    final_step: result.record.final_step,
                    mean_range: result.mean.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                        (a.min(v), b.max(v))
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let summary = summarize(&rows, &config.noise_levels);
        if let Some(out) = out {
            let dir = experiment_dir(out, config);
            write(&dir.join("study.csv"), &study_csv(&rows))?;
            write(&dir.join("study_summary.csv"), &summary_csv(config.path, &summary))?;
            let mut diag = String::from("noise,replicate,acceptance,final_step\n");
            for r in &rows {
                let _ = writeln!(diag, "{:.16e},{},{:.16e},{:.16e}", r.noise, r.replicate, r.acceptance, r.final_step);
            }
            write(&dir.join("study_diagnostics.csv"), &diag)?;
        }
        Ok((rows, summary))
    })
}

/// Per-level means strictly decreasing from the first to the last level,
/// allowing at most `allowed` adjacent inversions.
pub fn count_inversions(means: &[f64]) -> usize {
    means.windows(2).filter(|w| w[1] >= w[0]).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = ExperimentConfig::preset(name).unwrap();
            assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn paper_values_resolve() {
        let c = ExperimentConfig::preset("paper-star").unwrap();
        assert_eq!(c.step, vec![0.1, 0.045, 0.035, 0.025, 0.015]);
        assert!((c.q[0] - 10f64.powf(1.5) * 0.35).abs() < 1e-12);
        assert_eq!(c.star.kappa, vec![0.1, 0.2, 0.4]);
        assert_eq!((c.sampler.iterations, c.sampler.burn_in), (1_000_000, 500_000));
        let l = ExperimentConfig::preset("paper-level").unwrap();
        assert_eq!(l.q, vec![12.5, 10.0, 7.5, 5.0, 3.75]);
        assert_eq!(l.step, vec![0.05, 0.01, 0.006, 0.003, 0.002]);
        assert_eq!(l.sampler.burn_in, 1_200_000);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ExperimentConfig::preset("desk-star").unwrap();
        c.noise_levels.reverse();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::preset("desk-star").unwrap();
        c.q.pop();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json("{\"name\": 1}").is_err());
    }

    #[test]
    fn phantom_values_and_shape() {
        let p = Phantom::new(0.1, 64).unwrap();
        assert_eq!(p.gamma([-0.4, 0.4]), 0.5);
        assert!((p.gamma([0.4, -0.4]) - 0.3).abs() < 1e-15);
        assert_eq!(p.gamma([0.0, 0.0]), 0.1);
        assert!((Phantom::radius2(0.0) - 0.12 * 0.8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn first_inclusion_boundary_is_simple() {
        let p = Phantom::new(0.1, 16).unwrap();
        let poly: Vec<[f64; 2]> = p.polygon.iter().step_by(8).copied().collect();
        let n = poly.len();
        let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                let (c, d) = (poly[j], poly[(j + 1) % n]);
                let hit = cross(a, b, c) * cross(a, b, d) < 0.0 && cross(c, d, a) * cross(c, d, b) < 0.0;
                assert!(!hit, "segments {i} and {j} cross");
            }
        }
    }

    #[test]
    fn polygon_membership() {
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(point_in_polygon([0.5, 0.5], &square));
        assert!(!point_in_polygon([1.5, 0.5], &square));
    }

    #[test]
    fn smoothing_preserves_constants() {
        let s = GridSmoother::new(&|_| 3.0, 32, 0.2).unwrap();
        for x in [[0.0, 0.0], [0.99, -0.99], [-1.0, 1.0]] {
            assert!((s.eval(x) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn illumination_is_positive_on_the_boundary() {
        let g = Illumination::default().boundary_data().unwrap();
        let mesh = crate::mesh::disk_mesh_with_rings(8);
        let vals = g.boundary_values(&mesh).unwrap();
        assert!(vals.iter().all(|(_, v)| *v > 0.0));
    }

    #[test]
    fn initial_states() {
        let c = ExperimentConfig::preset("desk-level").unwrap();
        let spec = c.level_spec(0);
        let j = spec.position(0, -1).unwrap();
        let setup_xi = {
            let mut xi = vec![0.0; spec.len()];
            xi[j] = 2.0 / spec.weights()[j];
            xi
        };
        let theta = crate::prior::KlField::new(spec, setup_xi).unwrap();
        let phi = (PI / 1.1 * 0.5).sin() / (1.1 * SQRT_2);
        assert!((theta.value(&[0.3, 0.5]) - 2.0 * phi).abs() < 1e-12);
    }

    #[test]
    fn inversion_counting() {
        assert_eq!(count_inversions(&[5.0, 4.0, 3.0, 2.0, 1.0]), 0);
        assert_eq!(count_inversions(&[5.0, 4.0, 4.5, 2.0, 1.0]), 1);
    }
}
