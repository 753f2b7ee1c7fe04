//! Named property suites. Every suite returns a report of individual checks;
//! a failing check is an entry, not an error.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::{cmd_study, count_inversions, ExperimentConfig, Illumination, Phantom};
use crate::fem::{l2_error_against, lipschitz_probe, BoundaryData, ElementField, Field, ForwardOperator};
use crate::mesh::{disk_mesh_with_rings, MeshPreset, TriMesh};
use crate::param::{
    h_eps, heaviside, phi_eps_approx_error, point_in_star, star_boundary_radius, sym_diff_area, tube_measure,
    LevelSetConfig, PushForward, StarMap,
};
use crate::pcn::{run, FnLikelihood, SamplerConfig};
use crate::prior::{derive_seed, rng_from_seed, sample, KlField, KlSpec, KlSpec1d, KlSpec2d};
use crate::quadrature::{to_cartesian, ORDER4};
use crate::spectral::DiskEigenbasis;

/// Suites run by `all`.
pub const QUICK_SUITES: [&str; 9] = [
    "fem-convergence",
    "basis-orthonormality",
    "heps-contracts",
    "symdiff-oracle",
    "tube-bound",
    "pcn-gaussian-oracle",
    "lipschitz-probe",
    "holder-bound",
    "radial-counterexample",
];

/// Posterior studies; minutes rather than seconds.
pub const STUDY_SUITES: [&str; 2] = ["star-study", "level-study"];

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "[{}] {} ({:.1} s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.elapsed.as_secs_f64()
        )?;
        for c in &self.checks {
            writeln!(f, "  {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

pub fn is_suite(name: &str) -> bool {
    QUICK_SUITES.contains(&name) || STUDY_SUITES.contains(&name)
}

/// Runs one suite. `config` replaces the desk preset of the study suites.
pub fn run_suite(name: &str, config: Option<&ExperimentConfig>, workers: usize) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match name {
        "fem-convergence" => fem_convergence()?,
        "basis-orthonormality" => basis_orthonormality()?,
        "heps-contracts" => heps_contracts(),
        "symdiff-oracle" => symdiff_oracle()?,
        "tube-bound" => tube_bound()?,
        "pcn-gaussian-oracle" => pcn_gaussian_oracle()?,
        "lipschitz-probe" => lipschitz_stability()?,
        "holder-bound" => holder_bound()?,
        "radial-counterexample" => radial_counterexample()?,
        "star-study" => star_study(config, workers)?,
        "level-study" => level_study(config, workers)?,
        other => {
            return Err(Error::Config(format!(
                "unknown suite `{other}` (expected all, {}, {})",
                QUICK_SUITES.join(", "),
                STUDY_SUITES.join(", ")
            )))
        }
    };
    Ok(SuiteReport {
        suite: name.to_string(),
        checks,
        elapsed: start.elapsed(),
    })
}

fn runtime_check(start: Instant, limit_secs: f64) -> Check {
    let t = start.elapsed().as_secs_f64();
    Check::new("runtime", t < limit_secs, format!("{t:.1} s (limit {limit_secs} s)"))
}

// ---------------------------------------------------------------------------

/// `u = cosh(x)` solves the problem with `mu = gamma = 1`.
pub fn cosh_errors(rings: &[usize]) -> Result<Vec<f64>> {
    rings
        .iter()
        .map(|&n| {
            let mesh = Arc::new(disk_mesh_with_rings(n));
            let one: Field = ElementField::constant(&mesh, 1.0).into();
            let g = BoundaryData::new(|x| x[0].cosh(), 1.0, 1f64.cosh())?;
            let op = ForwardOperator::new(Arc::clone(&mesh), &one, g)?;
            let u = op.fluence(&one, None)?;
            Ok(l2_error_against(&mesh, &u.into(), |x| x[0].cosh()))
        })
        .collect()
}

fn fem_convergence() -> Result<Vec<Check>> {
    let start = Instant::now();
    let coarse = MeshPreset::Desk.rings();
    let e = cosh_errors(&[coarse, 2 * coarse])?;
    let ratio = e[0] / e[1];
    Ok(vec![
        Check::new(
            "error ratio",
            ratio >= 3.5,
            format!("{:.3e} -> {:.3e}, ratio {ratio:.3} (need >= 3.5)", e[0], e[1]),
        ),
        runtime_check(start, 30.0),
    ])
}

/// Gram matrix of the first `n` eigenfunctions by order-4 quadrature.
pub fn gram_matrix(mesh: &TriMesh, basis: &DiskEigenbasis, n: usize) -> Vec<Vec<f64>> {
    let b = basis.truncated(n);
    let parts: Vec<Vec<f64>> = (0..mesh.element_count())
        .into_par_iter()
        .map(|t| {
            let p = mesh.triangle_points(t);
            let area = mesh.area(t);
            let mut acc = vec![0.0; n * n];
            let mut vals = vec![0.0; n];
            let mut scratch = Vec::new();
            for q in &ORDER4 {
                b.eval_all(to_cartesian(&p, &q.bary), &mut vals, &mut scratch);
                let w = area * q.weight;
                for i in 0..n {
                    for j in 0..n {
                        acc[i * n + j] += w * vals[i] * vals[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut g = vec![vec![0.0; n]; n];
    for part in parts {
        for i in 0..n {
            for j in 0..n {
                g[i][j] += part[i * n + j];
            }
        }
    }
    g
}

fn basis_orthonormality() -> Result<Vec<Check>> {
    let mesh = MeshPreset::Inversion.build();
    let basis = DiskEigenbasis::build(20)?;
    let g = gram_matrix(&mesh, &basis, 20);
    let mut worst: f64 = 0.0;
    for (i, row) in g.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    Ok(vec![Check::new(
        "gram deviation",
        worst <= 5e-3,
        format!("max |G - I| = {worst:.3e} (need <= 5e-3)"),
    )])
}

/// Largest violations of the Lipschitz and approximation bounds of `h_eps`
/// on an equispaced grid of `points` values in `[-2, 2]`.
pub fn heps_violations(eps: f64, points: usize) -> (f64, f64) {
    let z: Vec<f64> = (0..points).map(|i| -2.0 + 4.0 * i as f64 / (points - 1) as f64).collect();
    let h: Vec<f64> = z.iter().map(|&v| h_eps(v, eps)).collect();
    let mut lip: f64 = 0.0;
    // the map is piecewise linear, so neighbouring pairs plus a strided sweep
    // cover every slope it has
    for stride in [1, 7, 101, 997] {
        for i in 0..points.saturating_sub(stride) {
            let bound = (z[i + stride] - z[i]).abs() / (2.0 * eps);
            lip = lip.max((h[i + stride] - h[i]).abs() - bound);
        }
    }
    let mut approx: f64 = 0.0;
    for (&zi, &hi) in z.iter().zip(&h) {
        let bound = if zi.abs() < eps { 0.5 } else { 0.0 };
        approx = approx.max((hi - heaviside(zi)).abs() - bound);
    }
    (lip, approx)
}

fn heps_contracts() -> Vec<Check> {
    [1.0, 0.1, 0.01]
        .iter()
        .flat_map(|&eps| {
            let (lip, approx) = heps_violations(eps, 10_000);
            [
                Check::new(
                    format!("lipschitz eps={eps}"),
                    lip <= 1e-15,
                    format!("max excess {lip:.2e}"),
                ),
                Check::new(
                    format!("approximation eps={eps}"),
                    approx <= 1e-15,
                    format!("max excess {approx:.2e}"),
                ),
            ]
        })
        .collect()
}

fn circle_field(radius: f64) -> Result<KlField> {
    let spec = KlSpec::Circle(KlSpec1d {
        max_freq: 0,
        q: 1.0,
        tau: 1.0,
        delta: 1.0,
        mean: 0.0,
    });
    let w = spec.weights()[0];
    let phi0 = 1.0 / (2.0 * PI).sqrt();
    KlField::new(spec, vec![radius.ln() / (w * phi0)])
}

fn symdiff_spec() -> KlSpec {
    KlSpec::Circle(KlSpec1d {
        max_freq: 12,
        q: 3.0,
        tau: 4.0,
        delta: 2.5,
        mean: -1.0,
    })
}

/// Monte Carlo estimate of `|A(t1) Δ A(t2)|` and its standard error.
pub fn symdiff_monte_carlo(t1: &KlField, t2: &KlField, n: usize, seed: u64) -> (f64, f64) {
    let reach = (0..1024)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 1024.0;
            star_boundary_radius(t1, a).max(star_boundary_radius(t2, a))
        })
        .fold(0.0, f64::max)
        * 1.05;
    const CHUNKS: usize = 64;
    let hits: usize = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(seed, c as u64);
            let m = n / CHUNKS + usize::from(c < n % CHUNKS);
            (0..m)
                .filter(|_| {
                    let x = [rng.random_range(-reach..reach), rng.random_range(-reach..reach)];
                    point_in_star(x, [0.0, 0.0], t1) != point_in_star(x, [0.0, 0.0], t2)
                })
                .count()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let box_area = 4.0 * reach * reach;
    let p = hits as f64 / n as f64;
    (box_area * p, box_area * (p * (1.0 - p) / n as f64).sqrt())
}

fn symdiff_oracle() -> Result<Vec<Check>> {
    let area = sym_diff_area(&circle_field(1.0)?, &circle_field(2.0)?);
    let mut checks = vec![Check::new(
        "circles r=1, r=2",
        (area - 3.0 * PI).abs() <= 1e-6,
        format!("area {area:.12} vs 3 pi, error {:.2e}", (area - 3.0 * PI).abs()),
    )];
    let spec = symdiff_spec();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for k in 0..50u64 {
        let mut rng = rng_from_seed(derive_seed(5150, &[k]), 0);
        let t1 = sample(&spec, &mut rng)?;
        let t2 = sample(&spec, &mut rng)?;
        let quad = sym_diff_area(&t1, &t2);
        let (mc, se) = symdiff_monte_carlo(&t1, &t2, 1_000_000, derive_seed(5151, &[k]));
        let z = (quad - mc).abs() / se;
        worst = worst.max(z);
        failures += usize::from(z > 3.0);
    }
    checks.push(Check::new(
        "50 random pairs vs Monte Carlo",
        failures == 0,
        format!("max deviation {worst:.2} standard errors, {failures} beyond 3"),
    ));
    Ok(checks)
}

/// Level prior used by the tube and approximation-error checks.
fn tube_spec() -> KlSpec {
    KlSpec::Square(KlSpec2d {
        max_freq: 4,
        q: 12.5,
        tau: 10.0,
        delta: 1.2,
        half_width: 1.1,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub const TUBE_WIDTHS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

fn tube_bound() -> Result<Vec<Check>> {
    let mesh = MeshPreset::Data.build();
    let spec = tube_spec();
    let mut ratio_worst: f64 = 0.0;
    let mut slopes = Vec::new();
    let mut log_err = vec![0.0; TUBE_WIDTHS.len()];
    let mut kept = 0;
    let mut k = 0u64;
    while kept < 20 && k < 200 {
        let theta = sample(&spec, &mut rng_from_seed(derive_seed(4242, &[k]), 0))?;
        k += 1;
        // threshold at the median of theta so the level set is never empty
        let c = median(mesh.vertices().iter().map(|v| theta.value(v)).collect());
        let config = LevelSetConfig::new(vec![c], vec![0.1, 0.5], TUBE_WIDTHS[0])?;
        let report = phi_eps_approx_error(&theta, &config, &TUBE_WIDTHS, &mesh)?;
        if !report.admissible {
            continue;
        }
        kept += 1;
        let tubes: Vec<f64> = TUBE_WIDTHS
            .iter()
            .map(|&e| tube_measure(&theta, c, e, &mesh).map(|m| m / e))
            .collect::<Result<_>>()?;
        let hi = tubes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = tubes.iter().copied().fold(f64::INFINITY, f64::min);
        ratio_worst = ratio_worst.max(hi / lo);
        slopes.push(log_log_slope(&TUBE_WIDTHS, &report.errors));
        for (acc, e) in log_err.iter_mut().zip(&report.errors) {
            *acc += e.ln();
        }
    }
    if kept < 20 {
        return Ok(vec![Check::new(
            "admissible samples",
            false,
            format!("only {kept} of {k} draws passed the critical-point threshold"),
        )]);
    }
    let mean_err: Vec<f64> = log_err.iter().map(|l| (l / kept as f64).exp()).collect();
    let slope = log_log_slope(&TUBE_WIDTHS, &mean_err);
    let smin = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![
        Check::new(
            "tube measure / eps",
            ratio_worst < 3.0,
            format!("worst max/min over widths {ratio_worst:.3} across {kept} samples (need < 3)"),
        ),
        Check::new(
            "approximation-error slope",
            (slope - 0.5).abs() <= 0.1,
            format!("pooled slope {slope:.3}, per-sample range [{smin:.3}, {smax:.3}] (need 0.5 +- 0.1)"),
        ),
    ])
}

/// Linear-Gaussian test problem: `y = A theta + noise`, `theta ~ N(0, diag(w^2))`.
pub struct GaussianProblem {
    pub a: DMatrix<f64>,
    pub w: DVector<f64>,
    pub y: DVector<f64>,
    pub noise: f64,
}

impl GaussianProblem {
    pub fn random(rows: usize, cols: usize, noise: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed, 0);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let a = DMatrix::from_fn(rows, cols, |_, _| normal() / (cols as f64).sqrt());
        let w = DVector::from_fn(cols, |j, _| 1.0 / (1.0 + j as f64).sqrt());
        let truth = DVector::from_fn(cols, |j, _| w[j] * normal());
        let y = &a * truth + DVector::from_fn(rows, |_, _| noise * normal());
        GaussianProblem { a, w, y, noise }
    }

    /// Posterior mean and covariance in `theta`.
    pub fn posterior(&self) -> (DVector<f64>, DMatrix<f64>) {
        let e2 = self.noise * self.noise;
        let prec = self.a.transpose() * &self.a / e2
            + DMatrix::from_diagonal(&self.w.map(|w| 1.0 / (w * w)));
        let cov = prec.cholesky().expect("posterior precision is SPD").inverse();
        let mean = &cov * self.a.transpose() * &self.y / e2;
        (mean, cov)
    }

    /// `-|y - A (w xi)|^2 / (2 noise^2)`.
    pub fn log_likelihood(&self, xi: &[f64]) -> f64 {
        let theta = DVector::from_fn(xi.len(), |j, _| self.w[j] * xi[j]);
        -(&self.y - &self.a * theta).norm_squared() / (2.0 * self.noise * self.noise)
    }
}

fn pcn_gaussian_oracle() -> Result<Vec<Check>> {
    let start = Instant::now();
    let problem = GaussianProblem::random(10, 20, 1.0, 31337);
    let (mean, cov) = problem.posterior();
    let like = FnLikelihood(|xi: &[f64]| Ok(problem.log_likelihood(xi)));
    let iterations = 100_000;
    let config = SamplerConfig {
        subsample: iterations,
        ..SamplerConfig::new(0.5, iterations, 20_000, 2718)
    };
    let record = run(&config, &like, vec![0.0; 20])?;
    let n = record.states.len() as f64;
    let mut mean_excess: f64 = 0.0;
    let mut var_excess: f64 = 0.0;
    let mut shrink = f64::INFINITY;
    for j in 0..20 {
        let w = problem.w[j];
        shrink = shrink.min(cov[(j, j)].sqrt() / w);
        let m = record.states.iter().map(|s| w * s[j]).sum::<f64>() / n;
        let v = record.states.iter().map(|s| (w * s[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
        mean_excess = mean_excess.max((m - mean[j]).abs() / w);
        var_excess = var_excess.max((v / cov[(j, j)] - 1.0).abs());
    }
    Ok(vec![
        Check::new(
            "posterior mean",
            mean_excess <= 0.02,
            format!("max |mean error| / prior sd = {mean_excess:.4} (need <= 0.02), smallest posterior/prior sd {shrink:.3}"),
        ),
        Check::new(
            "marginal variances",
            var_excess <= 0.10,
            format!(
                "max relative error {var_excess:.4} (need <= 0.10), acceptance {:.3}, final step {:.3}",
                record.acceptance_rate(),
                record.final_step
            ),
        ),
        runtime_check(start, 60.0),
    ])
}

fn max_ratios(op: &ForwardOperator, map: &StarMap, xis: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, f64)> {
    let pairs: Vec<(Field, Field)> = xis.iter().map(|(a, b)| (map.apply(a), map.apply(b))).collect();
    let ratios = lipschitz_probe(op, &pairs)?;
    let fwd = ratios.iter().map(|r| r.forward).fold(0.0, f64::max);
    let inv = ratios.iter().map(|r| r.inverse).fold(0.0, f64::max);
    Ok((fwd, inv))
}

fn lipschitz_stability() -> Result<Vec<Check>> {
    let preset = ExperimentConfig::preset("desk-star")?;
    let spec = preset.star_spec(2);
    let phantom = Phantom::new(0.1, 128)?;
    let g = Illumination::default().boundary_data()?;
    let mut xis = Vec::new();
    let mut rng = rng_from_seed(8080, 0);
    let dim = spec.len() * preset.star.centers.len();
    let mut draw = || -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect() };
    for _ in 0..100 {
        let a = draw();
        let b = draw();
        xis.push((a, b));
    }
    let mut results = Vec::new();
    for rings in [MeshPreset::Desk.rings(), 2 * MeshPreset::Desk.rings()] {
        let mesh = Arc::new(disk_mesh_with_rings(rings));
        let mu: Field = phantom.mu_field(&mesh).into();
        let op = ForwardOperator::new(Arc::clone(&mesh), &mu, g.clone())?;
        let map = StarMap::new(
            &mesh,
            preset.star.centers.clone(),
            preset.star.kappa.clone(),
            vec![spec.clone(); preset.star.centers.len()],
        )?;
        // identical rasterizations carry no information about the ratio
        let usable: Vec<(Vec<f64>, Vec<f64>)> = xis
            .iter()
            .filter(|(a, b)| map.apply(a).values() != map.apply(b).values())
            .cloned()
            .collect();
        results.push((rings, usable.len(), max_ratios(&op, &map, &usable)?));
    }
    let (r0, n0, (f0, i0)) = results[0];
    let (r1, n1, (f1, i1)) = results[1];
    let finite = [f0, i0, f1, i1].iter().all(|v| v.is_finite() && *v > 0.0);
    Ok(vec![
        Check::new(
            "finite ratios",
            finite && n0 >= 90 && n1 >= 90,
            format!("{n0} pairs on {r0} rings, {n1} on {r1}"),
        ),
        Check::new(
            "forward max stable",
            (f1 / f0 - 1.0).abs() <= 0.1,
            format!("{f0:.4e} -> {f1:.4e} ({:+.1}%)", 100.0 * (f1 / f0 - 1.0)),
        ),
        Check::new(
            "inverse max stable",
            (i1 / i0 - 1.0).abs() <= 0.1,
            format!("{i0:.4e} -> {i1:.4e} ({:+.1}%)", 100.0 * (i1 / i0 - 1.0)),
        ),
    ])
}

/// Sup norm of a circle field sampled at `n` angles.
fn sup_norm(f: &KlField, n: usize) -> f64 {
    (0..n)
        .map(|i| f.value(&[2.0 * PI * i as f64 / n as f64]).abs())
        .fold(0.0, f64::max)
}

/// `sqrt(sum_l (1 + l^2) c_l^2)` of the fluctuation of a circle field.
fn h1_proxy(f: &KlField) -> f64 {
    let w = f.weights();
    f.spec
        .labels()
        .iter()
        .zip(w.iter().zip(&f.xi))
        .map(|((l, _, _), (w, x))| (1.0 + (*l as f64).powi(2)) * (w * x).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Ratios `||Phi(t1) - Phi(t2)||_L2 / ||t1 - t2||_inf^(1/2)` for the single
/// star map with values `kappa`, at `t2 = t1 + t eta` with `||eta||_inf = 1`.
pub fn holder_ratios(pairs: &[(KlField, KlField)], t: f64, kappa: [f64; 2]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|(t1, eta)| {
            let xi: Vec<f64> = t1.xi.iter().zip(&eta.xi).map(|(a, b)| a + t * b).collect();
            let t2 = KlField::new(t1.spec.clone(), xi)?;
            let dist = (kappa[1] - kappa[0]).abs() * sym_diff_area(t1, &t2).sqrt();
            Ok(dist / t.sqrt())
        })
        .collect()
}

fn holder_bound() -> Result<Vec<Check>> {
    let spec = symdiff_spec();
    let zero = match &spec {
        KlSpec::Circle(s) => KlSpec::Circle(KlSpec1d { mean: 0.0, ..s.clone() }),
        other => other.clone(),
    };
    let bound = 3.0;
    let mut rng = rng_from_seed(6174, 0);
    let mut pairs = Vec::new();
    let mut draws = 0;
    while pairs.len() < 100 && draws < 10_000 {
        draws += 1;
        let t1 = sample(&spec, &mut rng)?;
        if h1_proxy(&t1) > bound {
            continue;
        }
        let dir = sample(&zero, &mut rng)?;
        let s = sup_norm(&dir, 4096);
        let eta = KlField::new(zero.clone(), dir.xi.iter().map(|x| x / s).collect())?;
        pairs.push((t1, eta));
    }
    let t = 0.1;
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let far = max(holder_ratios(&pairs, t, [0.1, 0.4])?);
    let near = max(holder_ratios(&pairs, t / 4.0, [0.1, 0.4])?);
    let growth = near / far;
    Ok(vec![
        Check::new(
            "bounded fluctuations",
            pairs.len() == 100,
            format!("{} pairs with H1 proxy <= {bound} from {draws} draws", pairs.len()),
        ),
        Check::new(
            "ratio growth",
            far.is_finite() && near.is_finite() && growth < 1.5,
            format!("max ratio {far:.4} at t={t}, {near:.4} at t={}, factor {growth:.3} (need < 1.5)", t / 4.0),
        ),
    ])
}

/// Sharp level-set distance and sup distance for the radial pair
/// `theta = 1/n + r^(2n)` and `-theta` on the disk of radius 1/2.
pub fn radial_pair(n: u32, mesh: &TriMesh, kappa: [f64; 2]) -> Result<(f64, f64)> {
    let config = LevelSetConfig::sharp(vec![0.0], kappa.to_vec())?;
    let theta = |x: [f64; 2]| {
        let r = 0.5 * x[0].hypot(x[1]);
        1.0 / n as f64 + r.powi(2 * n as i32)
    };
    let sq: f64 = (0..mesh.element_count())
        .map(|t| {
            let p = mesh.triangle_points(t);
            let area = 0.25 * mesh.area(t);
            ORDER4
                .iter()
                .map(|q| {
                    let z = theta(to_cartesian(&p, &q.bary));
                    area * q.weight * (config.value(z) - config.value(-z)).powi(2)
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let sup = (0..=10_000)
        .map(|i| 2.0 * theta([i as f64 / 10_000.0, 0.0]))
        .fold(0.0, f64::max);
    Ok((sup, sq.sqrt()))
}

fn radial_counterexample() -> Result<Vec<Check>> {
    let mesh = disk_mesh_with_rings(32);
    let kappa = [0.1, 0.4];
    let rows: Vec<(u32, f64, f64)> = [5, 20, 80]
        .iter()
        .map(|&n| radial_pair(n, &mesh, kappa).map(|(s, l)| (n, s, l)))
        .collect::<Result<_>>()?;
    let shrink = rows[0].1 / rows[2].1;
    let l2: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let spread = (l2.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - l2.iter().copied().fold(f64::INFINITY, f64::min))
        / l2[0];
    let detail = rows
        .iter()
        .map(|(n, s, l)| format!("n={n}: sup {s:.4e}, L2 {l:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(vec![
        Check::new("sup distance shrinks", shrink >= 10.0, format!("factor {shrink:.2} (need >= 10); {detail}")),
        Check::new(
            "image distance constant",
            spread < 0.01,
            format!("relative change {spread:.2e} (need < 1%), |k2-k1| sqrt(pi/4) = {:.6}", 0.3 * (PI / 4.0).sqrt()),
        ),
    ])
}

// ---------------------------------------------------------------------------

fn star_study(config: Option<&ExperimentConfig>, workers: usize) -> Result<Vec<Check>> {
    let start = Instant::now();
    let config = match config {
        Some(c) => c.clone(),
        None => ExperimentConfig::preset("desk-star")?,
    };
    let (rows, summary) = cmd_study(&config, workers, None)?;
    let means: Vec<f64> = summary.iter().map(|s| s.mean).collect();
    let inversions = count_inversions(&means);
    let ratio = means[0] / means[means.len() - 1];
    let spread = summary.iter().map(|s| s.spread).fold(0.0, f64::max);
    let table = summary
        .iter()
        .map(|s| format!("{:.0}%: {:.4}", 100.0 * s.noise, s.mean))
        .collect::<Vec<_>>()
        .join(", ");
    let failed: usize = rows.iter().filter(|r| !r.l2_error.is_finite()).count();
    Ok(vec![
        Check::new(
            "monotone trend",
            inversions <= 1 && failed == 0,
            format!("{inversions} adjacent inversions; mean errors {table}"),
        ),
        Check::new("largest vs smallest noise", ratio >= 1.5, format!("ratio {ratio:.3} (need >= 1.5)")),
        Check::new(
            "replicate spread",
            spread < 0.5,
            format!("max relative spread {spread:.3} (need < 0.5)"),
        ),
        runtime_check(start, 1800.0),
    ])
}

fn level_study(config: Option<&ExperimentConfig>, workers: usize) -> Result<Vec<Check>> {
    let config = match config {
        Some(c) => c.clone(),
        None => ExperimentConfig::preset("desk-level")?,
    };
    let lo = config.level.kappa.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = config.level.kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (rows, summary) = cmd_study(&config, workers, None)?;
    let first = summary[0].mean;
    let last = summary[summary.len() - 1].mean;
    let (min, max) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.mean_range.0), b.max(r.mean_range.1)));
    let tol = 1e-12;
    Ok(vec![
        Check::new(
            "error decreases",
            last < first,
            format!(
                "{:.0}%: {first:.4}, {:.0}%: {last:.4}",
                100.0 * summary[0].noise,
                100.0 * summary[summary.len() - 1].noise
            ),
        ),
        Check::new(
            "posterior means within material range",
            min >= lo - tol && max <= hi + tol,
            format!("values in [{min:.6}, {max:.6}], allowed [{lo}, {hi}]"),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(run_suite("nope", None, 1).is_err());
        assert!(is_suite("tube-bound") && !is_suite("all"));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.5)).collect();
        assert!((log_log_slope(&x, &y) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heps_bounds_hold() {
        for eps in [1.0, 0.1, 0.01] {
            let (a, b) = heps_violations(eps, 2001);
            assert!(a <= 1e-15 && b <= 1e-15);
        }
    }

    #[test]
    fn gaussian_posterior_is_consistent() {
        let p = GaussianProblem::random(3, 5, 0.3, 1);
        let (m, c) = p.posterior();
        // the mean maximizes the log posterior: gradient vanishes
        let e2 = p.noise * p.noise;
        let grad = p.a.transpose() * (&p.y - &p.a * &m) / e2 - m.component_div(&p.w.map(|w| w * w));
        assert!(grad.norm() < 1e-10);
        assert!((c.clone() - c.transpose()).norm() < 1e-12);
    }
}
