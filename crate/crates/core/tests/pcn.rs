use inclusion_core::pcn::{posterior_mean, run, ChainRecord, Coefficients, FnLikelihood, SamplerConfig};
use inclusion_core::Result;
use proptest::prelude::*;

fn flat() -> FnLikelihood<impl Fn(&[f64]) -> Result<f64> + Sync> {
    FnLikelihood(|_: &[f64]| Ok(0.0))
}

fn frozen(step: f64, iterations: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        subsample: iterations,
        adapt_gain: 0.0,
        ..SamplerConfig::new(step, iterations, 1000, seed)
    }
}

fn column(record: &ChainRecord, j: usize) -> Vec<f64> {
    record.states.iter().map(|s| s[j]).collect()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn flat_likelihood_is_an_ar1_process() {
    let b: f64 = 0.3;
    let record = run(&frozen(b, 50_000, 21), &flat(), vec![0.0; 4]).unwrap();
    assert_eq!(record.acceptance_rate(), 1.0);
    for j in 0..4 {
        let x = column(&record, j);
        let (m, v) = mean_var(&x);
        let lag1 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / ((x.len() - 1) as f64 * v);
        assert!((lag1 - (1.0 - b * b).sqrt()).abs() < 0.01, "coordinate {j}: {lag1}");
    }
}

#[test]
fn flat_likelihood_preserves_the_prior() {
    let record = run(&frozen(0.7, 50_000, 4), &flat(), vec![3.0, -3.0, 0.0]).unwrap();
    for j in 0..3 {
        let (m, v) = mean_var(&column(&record, j));
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v - 1.0).abs() < 0.06, "variance {v}");
    }
}

#[test]
fn scalar_conjugate_posterior() {
    // xi ~ N(0, 1), y = xi + N(0, s^2)
    let (y, s2) = (1.0, 0.25);
    let like = FnLikelihood(move |xi: &[f64]| Ok(-(y - xi[0]).powi(2) / (2.0 * s2)));
    let config = SamplerConfig {
        subsample: 200_000,
        ..SamplerConfig::new(1.0, 200_000, 5000, 77)
    };
    let record = run(&config, &like, vec![0.0]).unwrap();
    let (m, v) = mean_var(&column(&record, 0));
    assert!((m - y / (1.0 + s2)).abs() < 0.02, "mean {m}");
    assert!((v / (s2 / (1.0 + s2)) - 1.0).abs() < 0.05, "variance {v}");
    // the target rate is out of reach for so mild a posterior, so the step saturates
    let rate = record.post_burn_in_acceptance(5000);
    assert!((rate - 0.3).abs() < 0.05 || record.final_step == 1.0, "acceptance {rate}");
}

#[test]
fn step_is_frozen_after_burn_in() {
    let like = FnLikelihood(|xi: &[f64]| Ok(-10.0 * xi.iter().map(|x| x * x).sum::<f64>()));
    let config = SamplerConfig::new(0.9, 3000, 2000, 5);
    let record = run(&config, &like, vec![0.1; 6]).unwrap();
    let burn = &record.trace[..2000];
    assert!(burn.iter().any(|r| r.step != 0.9));
    let tail: Vec<f64> = record.trace[2000..].iter().map(|r| r.step).collect();
    assert!(tail.iter().all(|&b| b == record.final_step));
    assert_eq!(record.accepted + record.rejected + record.failed, 5000);
}

#[test]
fn failed_evaluations_are_counted_and_rejected() {
    let like = FnLikelihood(|xi: &[f64]| {
        if xi[0] > 0.5 {
            Err(inclusion_core::Error::InvalidArgument("out of range".into()))
        } else {
            Ok(0.0)
        }
    });
    let record = run(&frozen(0.8, 2000, 3), &like, vec![0.0]).unwrap();
    assert!(record.failed > 0);
    assert_eq!(record.accepted + record.rejected + record.failed, 3000);
    assert!(record.states.iter().all(|s| s[0] <= 0.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn posterior_mean_ignores_state_order(
        states in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..20),
        k in 0usize..20,
    ) {
        let mut record = ChainRecord {
            state_iters: (0..states.len()).collect(),
            states: states.clone(),
            trace: Vec::new(),
            accepted: 0,
            rejected: 0,
            failed: 0,
            final_step: 0.1,
        };
        let a = posterior_mean(&record, &Coefficients(3)).unwrap();
        let len = record.states.len();
        record.states.rotate_left(k % len);
        record.states.reverse();
        let b = posterior_mean(&record, &Coefficients(3)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
