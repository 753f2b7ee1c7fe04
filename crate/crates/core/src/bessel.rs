//! Bessel functions of the first kind and their positive zeros.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const MAX_ORDER: u32 = 60;
pub const MAX_ARG: f64 = 200.0;

/// `J_m(x)` for `0 <= m <= 60`, `0 <= x <= 200`.
pub fn bessel_j(m: u32, x: f64) -> Result<f64> {
    if m > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "Bessel order {m} exceeds {MAX_ORDER}"
        )));
    }
    if !(0.0..=MAX_ARG).contains(&x) {
        return Err(Error::InvalidArgument(format!(
            "Bessel argument {x} outside [0, {MAX_ARG}]"
        )));
    }
    Ok(bessel_j_orders(m as usize + 1, x)[m as usize])
}

/// `J_0(x), ..., J_{max_order}(x)` from one normalized backward recurrence.
/// Valid for any `x >= 0`.
pub fn bessel_j_orders(max_order: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; max_order + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let big = x.max(max_order as f64);
    let mut start = (big + 30.0 + 20.0 * big.cbrt()) as usize;
    start += start % 2;

    const RESCALE_AT: f64 = 1e250;
    let mut j_next = 0.0;
    let mut j = 1e-300;
    let mut sum = 0.0;
    // after processing k, `j` holds the unnormalized J_{k-1}
    for k in (1..=start).rev() {
        let j_prev = 2.0 * k as f64 / x * j - j_next;
        j_next = j;
        j = j_prev;
        let order = k - 1;
        if order <= max_order {
            out[order] = j;
        }
        if order == 0 {
            sum += j;
        } else if order % 2 == 0 {
            sum += 2.0 * j;
        }
        if j.abs() > RESCALE_AT {
            let s = 1.0 / RESCALE_AT;
            j *= s;
            j_next *= s;
            sum *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// `J_m(x)` and `J_m'(x)`, unchecked range.
pub fn bessel_j_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let js = bessel_j_orders(m + 1, x);
    let d = if m == 0 {
        -js[1]
    } else {
        0.5 * (js[m - 1] - js[m + 1])
    };
    (js[m], d)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    debug_assert!(flo * f(hi) <= 0.0, "root not bracketed in [{lo}, {hi}]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn j_order(m: usize) -> impl Fn(f64) -> f64 {
    move |x| bessel_j_orders(m, x)[m]
}

/// First `count` positive zeros of `J_0`, bracketed around McMahon's
/// asymptotic estimate `(k - 1/4) pi`.
fn j0_zeros(count: usize) -> Vec<f64> {
    let f = j_order(0);
    (1..=count)
        .map(|k| {
            let beta = (k as f64 - 0.25) * PI;
            bisect(&f, beta - 0.6, beta + 0.6)
        })
        .collect()
}

/// Table of positive Bessel zeros: `zeros[m][k-1] = j_{m,k}` for every zero
/// below `cutoff`. Zeros of `J_m` strictly interlace those of `J_{m-1}`,
/// so each is bracketed by two consecutive zeros of the previous order.
pub fn bessel_zeros_below(cutoff: f64) -> Vec<Vec<f64>> {
    let max_m = cutoff.ceil() as usize + 1;
    let count0 = (cutoff / PI).ceil() as usize + max_m + 2;
    let mut prev = j0_zeros(count0);
    let mut table = Vec::new();
    for m in 0..=max_m {
        if m > 0 {
            let f = j_order(m);
            prev = prev.windows(2).map(|w| bisect(&f, w[0], w[1])).collect();
        }
        let below: Vec<f64> = prev.iter().copied().take_while(|&z| z < cutoff).collect();
        if below.is_empty() {
            break;
        }
        table.push(below);
    }
    table
}

/// The first `count` zeros of `J_m`.
pub fn bessel_zeros(m: usize, count: usize) -> Vec<f64> {
    let mut cutoff = m as f64 + 2.0 * (m as f64).cbrt() + (count + 1) as f64 * PI;
    loop {
        let table = bessel_zeros_below(cutoff);
        if let Some(zeros) = table.get(m).filter(|z| z.len() >= count) {
            return zeros[..count].to_vec();
        }
        cutoff *= 1.5;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from an independent implementation (scipy.special.jv).
    const REFERENCE: [(u32, f64, f64); 12] = [
        (0, 1.0, 0.7651976865579666),
        (1, 1.0, 0.44005058574493355),
        (0, 10.0, -0.24593576445134832),
        (5, 10.0, -0.2340615281867936),
        (2, 0.5, 0.030604023458682638),
        (10, 3.0, 1.2928351645715883e-05),
        (0, 150.0, -0.0007740903753942912),
        (7, 199.5, 0.044835399020434846),
        (60, 80.0, -0.0861737898446333),
        (30, 200.0, -0.052122279029883166),
        (60, 200.0, 0.03415650000127342),
        (3, 37.2, 0.12048208413796982),
    ];

    #[test]
    fn matches_reference_values() {
        for (m, x, expect) in REFERENCE {
            let got = bessel_j(m, x).unwrap();
            assert!((got - expect).abs() < 1e-12, "J_{m}({x}) = {got}, want {expect}");
        }
    }

    // Power series, independent of the recurrence; accurate for small x.
    fn series(m: u32, x: f64) -> f64 {
        let mut term = (0.5 * x).powi(m as i32) / (1..=m).map(f64::from).product::<f64>();
        let mut sum = term;
        for k in 1..80 {
            term *= -(0.25 * x * x) / (k as f64 * (k + m) as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn agrees_with_power_series() {
        for m in 0..=12 {
            for i in 0..=40 {
                let x = 0.2 * i as f64;
                let d = (bessel_j(m, x).unwrap() - series(m, x)).abs();
                assert!(d < 1e-13, "m={m} x={x} diff={d}");
            }
        }
    }

    #[test]
    fn values_at_origin() {
        assert_eq!(bessel_j(0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_j(1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn range_is_enforced() {
        assert!(bessel_j(61, 1.0).is_err());
        assert!(bessel_j(0, 200.5).is_err());
        assert!(bessel_j(0, -1.0).is_err());
    }

    #[test]
    fn first_zero_of_j0() {
        let z = bessel_zeros(0, 1)[0];
        assert!((z - 2.4048255576957724).abs() < 1e-13);
        assert!(bessel_j(0, 2.404825557695773).unwrap().abs() < 1e-10);
    }

    #[test]
    fn zeros_match_reference() {
        let cases: [(usize, &[f64]); 4] = [
            (0, &[2.4048255576957724, 5.520078110286311, 8.653727912911013]),
            (1, &[3.8317059702075125, 7.015586669815619]),
            (5, &[8.771483815959954, 12.338604197466944, 15.70017407971167, 18.98013387517992]),
            (12, &[16.698249933848246, 20.789906360078444, 24.494885043881354, 28.026709949973128]),
        ];
        for (m, expect) in cases {
            let got = bessel_zeros(m, expect.len());
            for (g, e) in got.iter().zip(expect) {
                assert!((g - e).abs() < 1e-12, "j_{m}: {g} vs {e}");
                assert!(bessel_j(m as u32, *g).unwrap().abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for m in [0usize, 1, 4] {
            let x = 3.3;
            let h = 1e-6;
            let (_, d) = bessel_j_with_derivative(m, x);
            let fd = (bessel_j_orders(m, x + h)[m] - bessel_j_orders(m, x - h)[m]) / (2.0 * h);
            assert!((d - fd).abs() < 1e-8);
        }
    }
}
