//! Projected noisy data, noise calibration, discretization error and the
//! Gaussian log-likelihood.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BoundaryData, Field, ForwardOperator, NodalField};
use crate::mesh::TriMesh;
use crate::param::PushForward;
use crate::prior::{rng_from_seed, standard_normals};
use crate::spectral::{DiskEigenbasis, Projector};

/// Forward solve followed by projection onto the first `N_d` eigenfunctions.
#[derive(Debug)]
pub struct DataModel {
    forward: ForwardOperator,
    projector: Projector,
}

impl DataModel {
    pub fn new(mesh: Arc<TriMesh>, mu: &Field, g: BoundaryData, basis: &DiskEigenbasis) -> Result<Self> {
        let projector = Projector::new(&mesh, basis);
        let forward = ForwardOperator::new(mesh, mu, g)?;
        Ok(DataModel { forward, projector })
    }

    pub fn mesh(&self) -> &TriMesh {
        self.forward.mesh()
    }

    pub fn forward(&self) -> &ForwardOperator {
        &self.forward
    }

    pub fn n_d(&self) -> usize {
        self.projector.len()
    }

    pub fn predict(&self, gamma: &Field) -> Result<Vec<f64>> {
        Ok(self.predict_from(gamma, None)?.0)
    }

    /// Projected energy and the fluence; `guess` seeds the linear solver.
    pub fn predict_from(&self, gamma: &Field, guess: Option<&[f64]>) -> Result<(Vec<f64>, NodalField)> {
        let u = self.forward.fluence(gamma, guess)?;
        let h = crate::fem::absorbed_energy(self.forward.mesh(), gamma, &u);
        Ok((self.projector.project(&h)?, u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMeta {
    pub epsilon: f64,
    #[serde(rename = "N_d")]
    pub n_d: usize,
    pub seed: u64,
    pub relative_error_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    pub meta: ObservationMeta,
}

/// `Y = c + eps xi` with `xi ~ N(0, I)` and `eps = rel ||c|| / ||xi||`, so
/// that `||Y - c|| / ||c|| = rel` for the realized draw.
pub fn add_noise(clean: &[f64], relative_error: f64, seed: u64) -> Result<Observation> {
    if !(relative_error > 0.0 && relative_error < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "relative error must lie in (0, 1), got {relative_error}"
        )));
    }
    let signal = norm(clean);
    if !(signal > 0.0) || !signal.is_finite() {
        return Err(Error::InvalidArgument("noiseless data has no signal".into()));
    }
    let xi = standard_normals(&mut rng_from_seed(seed, 0), clean.len());
    let epsilon = relative_error * signal / norm(&xi);
    Ok(Observation {
        y: clean.iter().zip(&xi).map(|(c, x)| c + epsilon * x).collect(),
        meta: ObservationMeta {
            epsilon,
            n_d: clean.len(),
            seed,
            relative_error_target: relative_error,
        },
    })
}

pub fn simulate(gamma: &Field, model: &DataModel, relative_error: f64, seed: u64) -> Result<Observation> {
    add_noise(&model.predict(gamma)?, relative_error, seed)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn relative_error(obs: &Observation, clean: &[f64]) -> f64 {
    let diff: Vec<f64> = obs.y.iter().zip(clean).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(clean)
}

/// `sqrt(tr(C) / N_d)` for the sample covariance `C` of the difference vectors.
pub fn approx_error_from_differences(diffs: &[Vec<f64>]) -> Result<f64> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least two samples, got {n}")));
    }
    let d = diffs[0].len();
    if d == 0 || diffs.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidArgument("difference vectors must share a nonzero length".into()));
    }
    let mut trace = 0.0;
    for k in 0..d {
        let mean = diffs.iter().map(|v| v[k]).sum::<f64>() / n as f64;
        trace += diffs.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    Ok((trace / d as f64).sqrt())
}

/// Discretization error level between a fine and a coarse data model:
/// prior draws `xi_j` (stream `j` of `seed`) are pushed forward on each
/// mesh, and the spread of the projected differences is summarized.
pub fn estimate_approx_error(
    fine: (&DataModel, &dyn PushForward),
    coarse: (&DataModel, &dyn PushForward),
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!("need at least two samples, got {n_samples}")));
    }
    if fine.1.dim() != coarse.1.dim() {
        return Err(Error::InvalidArgument("fine and coarse parametrizations differ in dimension".into()));
    }
    let diffs = (0..n_samples)
        .into_par_iter()
        .map(|j| {
            let xi = standard_normals(&mut rng_from_seed(seed, j as u64), fine.1.dim());
            let a = fine.0.predict(&fine.1.apply(&xi))?;
            let b = coarse.0.predict(&coarse.1.apply(&xi))?;
            Ok(a.iter().zip(&b).map(|(a, b)| a - b).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    approx_error_from_differences(&diffs)
}

/// Scale of the quadratic misfit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodConvention {
    /// `-(1/sigma^2) sum (Y_k - c_k)^2`
    #[default]
    Numerics,
    /// `-(1/(2 sigma^2)) sum (Y_k - c_k)^2`
    Gaussian,
}

#[derive(Debug, Clone)]
pub struct Likelihood {
    pub y: Vec<f64>,
    /// Variance `sigma^2` used in the misfit.
    pub variance: f64,
    pub convention: LikelihoodConvention,
}

impl Likelihood {
    pub fn new(obs: &Observation, convention: LikelihoodConvention) -> Self {
        Self::with_variance(obs, obs.meta.epsilon.powi(2), convention)
    }

    pub fn with_variance(obs: &Observation, variance: f64, convention: LikelihoodConvention) -> Self {
        Likelihood {
            y: obs.y.clone(),
            variance,
            convention,
        }
    }

    /// Log-likelihood of predicted coefficients; extra predicted
    /// coefficients beyond the data length are ignored.
    pub fn eval(&self, predicted: &[f64]) -> f64 {
        let misfit: f64 = self.y.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
        let factor = match self.convention {
            LikelihoodConvention::Numerics => 1.0,
            LikelihoodConvention::Gaussian => 0.5,
        };
        -factor * misfit / self.variance
    }
}

pub fn log_likelihood(
    gamma: &Field,
    obs: &Observation,
    model: &DataModel,
    convention: LikelihoodConvention,
) -> Result<f64> {
    if !(obs.meta.epsilon > 0.0) {
        return Err(Error::InvalidArgument("noise level must be positive".into()));
    }
    if model.n_d() < obs.y.len() {
        return Err(Error::InvalidArgument(format!(
            "model projects onto {} functions, data has {}",
            model.n_d(),
            obs.y.len()
        )));
    }
    Ok(Likelihood::new(obs, convention).eval(&model.predict(gamma)?))
}

impl Observation {
    /// CSV rows `k,Y_k` with 1-based `k`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,Y_k\n");
        for (k, v) in self.y.iter().enumerate() {
            let _ = writeln!(s, "{},{v:.16e}", k + 1);
        }
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.meta)? + "\n";
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        for p in [&csv, &json] {
            if !p.exists() {
                return Err(Error::MissingInput(p.clone()));
            }
        }
        let text = std::fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?;
        let meta: ObservationMeta =
            serde_json::from_str(&std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?)?;
        let mut y = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.into() };
            let (k, v) = line.split_once(',').ok_or_else(|| bad("expected `k,Y_k`"))?;
            if k.trim().parse::<usize>().ok() != Some(y.len() + 1) {
                return Err(bad("indices must run 1, 2, ..."));
            }
            y.push(v.trim().parse::<f64>().map_err(|_| bad("bad value"))?);
        }
        if y.len() != meta.n_d {
            return Err(Error::Parse {
                line: 0,
                msg: format!("{} coefficients, sidecar says {}", y.len(), meta.n_d),
            });
        }
        Ok(Observation { y, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realized_relative_error_is_exact() {
        let clean: Vec<f64> = (0..50).map(|k| (k as f64 * 0.7).sin() + 0.1).collect();
        for rel in [0.01, 0.02, 0.04, 0.08, 0.16] {
            let obs = add_noise(&clean, rel, 42).unwrap();
            assert!((relative_error(&obs, &clean) - rel).abs() < 1e-14);
        }
    }

    #[test]
    fn noise_is_deterministic() {
        let clean = vec![1.0, 2.0, 3.0];
        assert_eq!(add_noise(&clean, 0.1, 3).unwrap(), add_noise(&clean, 0.1, 3).unwrap());
        assert_ne!(add_noise(&clean, 0.1, 3).unwrap().y, add_noise(&clean, 0.1, 4).unwrap().y);
    }

    #[test]
    fn zero_signal_is_rejected() {
        assert!(add_noise(&[0.0; 4], 0.1, 1).is_err());
        assert!(add_noise(&[1.0; 4], 0.0, 1).is_err());
        assert!(add_noise(&[1.0; 4], 1.0, 1).is_err());
    }

    #[test]
    fn likelihood_scaling() {
        let obs = add_noise(&[1.0, -2.0, 0.5], 0.1, 9).unwrap();
        let like = Likelihood::new(&obs, LikelihoodConvention::Numerics);
        assert_eq!(like.eval(&obs.y), 0.0);
        let pred = [0.0, 0.0, 0.0];
        let l1 = like.eval(&pred);
        assert!(l1 < 0.0);
        let doubled = Likelihood::with_variance(&obs, 4.0 * like.variance, like.convention);
        assert!((doubled.eval(&pred) - l1 / 4.0).abs() < 1e-12 * l1.abs());
        let half = Likelihood { convention: LikelihoodConvention::Gaussian, ..like.clone() };
        assert!((half.eval(&pred) - l1 / 2.0).abs() < 1e-12 * l1.abs());
        assert_eq!(like.eval(&[0.0, 0.0, 0.0, 7.0]), l1);
    }

    #[test]
    fn approx_error_summary() {
        let same = vec![vec![0.5, -1.0]; 5];
        assert_eq!(approx_error_from_differences(&same).unwrap(), 0.0);
        let diffs = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        // variance 2 in the first coordinate, trace 2, N_d = 2
        assert!((approx_error_from_differences(&diffs).unwrap() - 1.0).abs() < 1e-15);
        let mut rev = diffs.clone();
        rev.reverse();
        assert_eq!(
            approx_error_from_differences(&diffs).unwrap(),
            approx_error_from_differences(&rev).unwrap()
        );
        assert!(approx_error_from_differences(&diffs[..1]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let obs = add_noise(&[1.0, 2.0, 3.0, 4.0], 0.05, 1).unwrap();
        obs.save(dir.path(), "obs").unwrap();
        assert_eq!(Observation::load(dir.path(), "obs").unwrap(), obs);
        assert!(matches!(Observation::load(dir.path(), "nope"), Err(Error::MissingInput(_))));
    }
}
