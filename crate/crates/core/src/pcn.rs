//! Preconditioned Crank-Nicolson sampling in whitened KL coordinates, where
//! the prior is `N(0, I)`.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Field, NodalField};
use crate::param::PushForward;
use crate::prior::{rng_from_seed, standard_normals};

pub const MIN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Initial step size `b` in `(0, 1]`.
    pub step: f64,
    #[serde(default = "default_target")]
    pub target_acceptance: f64,
    /// Iterations kept after burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    /// Number of equally spaced post-burn-in states retained.
    #[serde(default = "default_subsample")]
    pub subsample: usize,
    #[serde(default = "default_batch")]
    pub adapt_batch: usize,
    #[serde(default = "default_gain")]
    pub adapt_gain: f64,
    pub seed: u64,
}

fn default_target() -> f64 {
    0.3
}
fn default_subsample() -> usize {
    100
}
fn default_batch() -> usize {
    100
}
fn default_gain() -> f64 {
    0.05
}

impl SamplerConfig {
    pub fn new(step: f64, iterations: usize, burn_in: usize, seed: u64) -> Self {
        SamplerConfig {
            step,
            target_acceptance: default_target(),
            iterations,
            burn_in,
            subsample: default_subsample(),
            adapt_batch: default_batch(),
            adapt_gain: default_gain(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::InvalidArgument(format!("step size must lie in (0, 1], got {}", self.step)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidArgument("target acceptance must lie in (0, 1)".into()));
        }
        if self.adapt_batch == 0 {
            return Err(Error::InvalidArgument("adaptation batch must be positive".into()));
        }
        if !(self.adapt_gain >= 0.0) {
            return Err(Error::InvalidArgument("adaptation gain must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Log-likelihood over whitened coefficients. `Aux` carries per-state data
/// that may speed up the next evaluation (e.g. a solver warm start).
pub trait LogLikelihood: Sync {
    type Aux: Clone + Send;

    fn eval(&self, xi: &[f64], previous: Option<&Self::Aux>) -> Result<(f64, Self::Aux)>;
}

/// Adapts a plain closure.
pub struct FnLikelihood<F>(pub F);

impl<F> LogLikelihood for FnLikelihood<F>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    type Aux = ();

    fn eval(&self, xi: &[f64], _: Option<&()>) -> Result<(f64, ())> {
        Ok(((self.0)(xi)?, ()))
    }
}

#[derive(Debug, Clone)]
pub struct Chain<A> {
    pub xi: Vec<f64>,
    pub log_like: f64,
    pub aux: A,
    pub step: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub failed: usize,
    pub iteration: usize,
    rng: ChaCha20Rng,
}

impl<A: Clone + Send> Chain<A> {
    pub fn start<L>(like: &L, xi: Vec<f64>, step: f64, seed: u64) -> Result<Self>
    where
        L: LogLikelihood<Aux = A>,
    {
        let (log_like, aux) = like.eval(&xi, None)?;
        if !log_like.is_finite() {
            return Err(Error::InvalidArgument("initial state has non-finite log-likelihood".into()));
        }
        Ok(Chain {
            xi,
            log_like,
            aux,
            step,
            accepted: 0,
            rejected: 0,
            failed: 0,
            iteration: 0,
            rng: rng_from_seed(seed, 1),
        })
    }
}

/// One pCN iteration with exactly one likelihood evaluation. Returns
/// whether the proposal was accepted; a failed evaluation leaves the state
/// unchanged and is counted separately.
pub fn pcn_step<L: LogLikelihood>(chain: &mut Chain<L::Aux>, like: &L) -> bool {
    let b = chain.step;
    let a = (1.0 - b * b).max(0.0).sqrt();
    let zeta = standard_normals(&mut chain.rng, chain.xi.len());
    let u: f64 = chain.rng.random();
    let proposal: Vec<f64> = chain.xi.iter().zip(&zeta).map(|(x, z)| a * x + b * z).collect();
    chain.iteration += 1;
    match like.eval(&proposal, Some(&chain.aux)) {
        Ok((l, aux)) if l.is_finite() => {
            if u.ln() < l - chain.log_like {
                chain.xi = proposal;
                chain.log_like = l;
                chain.aux = aux;
                chain.accepted += 1;
                true
            } else {
                chain.rejected += 1;
                false
            }
        }
        _ => {
            chain.failed += 1;
            false
        }
    }
}

/// `b exp(gain (rate - target))`, clamped to `[1e-6, 1]`.
pub fn adapt_step(step: f64, rate: f64, target: f64, gain: f64) -> f64 {
    (step * (gain * (rate - target)).exp()).clamp(MIN_STEP, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub log_like: f64,
    pub accept: bool,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    /// Retained post-burn-in states and their iteration numbers.
    pub states: Vec<Vec<f64>>,
    pub state_iters: Vec<usize>,
    pub trace: Vec<TraceRow>,
    pub accepted: usize,
    pub rejected: usize,
    pub failed: usize,
    pub final_step: f64,
}

impl ChainRecord {
    pub fn acceptance_rate(&self) -> f64 {
        let n = self.accepted + self.rejected + self.failed;
        if n == 0 {
            0.0
        } else {
            self.accepted as f64 / n as f64
        }
    }

    /// Acceptance rate over the post-burn-in iterations only.
    pub fn post_burn_in_acceptance(&self, burn_in: usize) -> f64 {
        let tail = &self.trace[burn_in.min(self.trace.len())..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|r| r.accept).count() as f64 / tail.len() as f64
    }

    /// CSV rows `iter,log_like,accept,b`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,log_like,accept,b\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{:.16e},{},{:.16e}", r.iter, r.log_like, r.accept as u8, r.step);
        }
        s
    }

    /// CSV rows `iter,xi_1,...,xi_n` of the retained states.
    pub fn states_csv(&self) -> String {
        let dim = self.states.first().map_or(0, Vec::len);
        let mut s = String::from("iter");
        for j in 1..=dim {
            let _ = write!(s, ",xi_{j}");
        }
        s.push('\n');
        for (it, xi) in self.state_iters.iter().zip(&self.states) {
            let _ = write!(s, "{it}");
            for v in xi {
                let _ = write!(s, ",{v:.16e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Positions (1-based iteration numbers) of `count` equally spaced states
/// among `iterations` post-burn-in iterations; the last one is included.
pub fn thinning_points(burn_in: usize, iterations: usize, count: usize) -> Vec<usize> {
    let count = count.min(iterations);
    (1..=count).map(|j| burn_in + j * iterations / count).collect()
}

/// Burn-in with batch adaptation of `b`, then `iterations` steps with `b`
/// frozen. Deterministic for a given seed.
pub fn run<L: LogLikelihood>(config: &SamplerConfig, like: &L, initial: Vec<f64>) -> Result<ChainRecord> {
    config.validate()?;
    let mut chain = Chain::start(like, initial, config.step, config.seed)?;
    let total = config.burn_in + config.iterations;
    let keep = thinning_points(config.burn_in, config.iterations, config.subsample);
    let mut next_keep = keep.iter().peekable();
    let mut record = ChainRecord {
        states: Vec::with_capacity(keep.len()),
        state_iters: Vec::with_capacity(keep.len()),
        trace: Vec::with_capacity(total),
        accepted: 0,
        rejected: 0,
        failed: 0,
        final_step: config.step,
    };
    let mut batch_accepts = 0;
    for it in 1..=total {
        let accepted = pcn_step(&mut chain, like);
        record.trace.push(TraceRow {
            iter: it,
            log_like: chain.log_like,
            accept: accepted,
            step: chain.step,
        });
        if it <= config.burn_in {
            batch_accepts += accepted as usize;
            if it % config.adapt_batch == 0 {
                let rate = batch_accepts as f64 / config.adapt_batch as f64;
                chain.step = adapt_step(chain.step, rate, config.target_acceptance, config.adapt_gain);
                batch_accepts = 0;
            }
        }
        if next_keep.peek() == Some(&&it) {
            next_keep.next();
            record.states.push(chain.xi.clone());
            record.state_iters.push(it);
        }
    }
    record.accepted = chain.accepted;
    record.rejected = chain.rejected;
    record.failed = chain.failed;
    record.final_step = chain.step;
    Ok(record)
}

/// Arithmetic mean of the pushed-forward retained states.
pub fn posterior_mean(record: &ChainRecord, map: &dyn PushForward) -> Result<Field> {
    if record.states.is_empty() {
        return Err(Error::InvalidArgument("posterior mean of an empty subsample".into()));
    }
    let mut acc: Option<Field> = None;
    for xi in &record.states {
        let f = map.apply(xi);
        match &mut acc {
            None => acc = Some(f),
            Some(a) => a.values_mut().iter_mut().zip(f.values()).for_each(|(a, b)| *a += b),
        }
    }
    let mut mean = acc.expect("nonempty");
    let n = record.states.len() as f64;
    mean.values_mut().iter_mut().for_each(|v| *v /= n);
    Ok(mean)
}

/// Identity map, convenient for coefficient-space summaries.
pub struct Coefficients(pub usize);

impl PushForward for Coefficients {
    fn dim(&self) -> usize {
        self.0
    }

    fn carrier(&self) -> crate::fem::Carrier {
        crate::fem::Carrier::Node
    }

    fn apply(&self, xi: &[f64]) -> Field {
        Field::Nodal(NodalField { values: xi.to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> FnLikelihood<impl Fn(&[f64]) -> Result<f64> + Sync> {
        FnLikelihood(|_: &[f64]| Ok(0.0))
    }

    #[test]
    fn adaptation_rule() {
        assert_eq!(adapt_step(0.2, 0.3, 0.3, 0.05), 0.2);
        let mut b = 0.2;
        for _ in 0..200 {
            let nb = adapt_step(b, 1.0, 0.3, 0.05);
            assert!(nb >= b);
            b = nb;
        }
        assert_eq!(b, 1.0);
        let mut b = 0.2;
        for _ in 0..1_000_000 {
            b = adapt_step(b, 0.0, 0.3, 0.05);
        }
        assert_eq!(b, MIN_STEP);
    }

    #[test]
    fn tiny_step_is_always_accepted() {
        let like = FnLikelihood(|x: &[f64]| Ok(-x.iter().map(|v| v * v).sum::<f64>()));
        let mut chain = Chain::start(&like, vec![0.3, -0.2], 1e-9, 1).unwrap();
        for _ in 0..100 {
            assert!(pcn_step(&mut chain, &like));
        }
    }

    #[test]
    fn counters_add_up_and_failures_keep_state() {
        let like = FnLikelihood(|x: &[f64]| {
            if x[0] > 1.0 {
                Err(Error::InvalidArgument("boom".into()))
            } else {
                Ok(-x[0] * x[0])
            }
        });
        let config = SamplerConfig::new(0.5, 500, 300, 3);
        let rec = run(&config, &like, vec![0.0]).unwrap();
        assert!(rec.failed > 0);
        assert_eq!(rec.accepted + rec.rejected + rec.failed, 800);
        assert!(rec.states.iter().all(|x| x[0] <= 1.0));
    }

    #[test]
    fn run_is_deterministic() {
        let like = FnLikelihood(|x: &[f64]| Ok(-(x[0] - 1.0).powi(2)));
        let config = SamplerConfig::new(0.3, 1000, 500, 11);
        let a = run(&config, &like, vec![0.0, 0.0]).unwrap();
        let b = run(&config, &like, vec![0.0, 0.0]).unwrap();
        assert_eq!(a, b);
        let c = run(&SamplerConfig { seed: 12, ..config }, &like, vec![0.0, 0.0]).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn empty_subsample() {
        let rec = run(&SamplerConfig::new(0.3, 0, 200, 1), &flat(), vec![0.0]).unwrap();
        assert!(rec.states.is_empty());
        assert!(posterior_mean(&rec, &Coefficients(1)).is_err());
    }

    #[test]
    fn thinning_and_frozen_step() {
        assert_eq!(thinning_points(10, 1000, 4), vec![260, 510, 760, 1010]);
        assert_eq!(thinning_points(0, 3, 100), vec![1, 2, 3]);
        let like = FnLikelihood(|x: &[f64]| Ok(-10.0 * x[0] * x[0]));
        let config = SamplerConfig::new(0.9, 2000, 1000, 5);
        let rec = run(&config, &like, vec![0.0]).unwrap();
        assert_eq!(rec.states.len(), 100);
        assert_eq!(*rec.state_iters.last().unwrap(), 3000);
        let tail = &rec.trace[1000..];
        assert!(tail.iter().all(|r| r.step == rec.final_step));
        assert!(rec.trace[..1000].iter().any(|r| r.step != 0.9));
    }

    #[test]
    fn posterior_mean_of_identical_states() {
        let rec = ChainRecord {
            states: vec![vec![1.0, 2.0]; 3],
            state_iters: vec![1, 2, 3],
            trace: vec![],
            accepted: 0,
            rejected: 0,
            failed: 0,
            final_step: 0.1,
        };
        let m = posterior_mean(&rec, &Coefficients(2)).unwrap();
        assert_eq!(m.values(), &[1.0, 2.0]);
    }

    #[test]
    fn invalid_config() {
        assert!(run(&SamplerConfig::new(0.0, 10, 10, 1), &flat(), vec![0.0]).is_err());
        assert!(run(&SamplerConfig::new(1.5, 10, 10, 1), &flat(), vec![0.0]).is_err());
    }

    #[test]
    fn csv_shapes() {
        let rec = run(&SamplerConfig::new(0.3, 200, 0, 1), &flat(), vec![0.0, 0.0]).unwrap();
        assert_eq!(rec.trace_csv().lines().count(), 201);
        let states = rec.states_csv();
        assert_eq!(states.lines().next().unwrap(), "iter,xi_1,xi_2");
        assert_eq!(states.lines().count(), 101);
    }
}
