//! Triangle quadrature rules in barycentric form.

/// A point in barycentric coordinates together with its weight. Weights sum
/// to one, so integrals are `area * sum(w * f)`.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

const A1: f64 = 0.445_948_490_915_965;
const W1: f64 = 0.223_381_589_678_011;
const A2: f64 = 0.091_576_213_509_771;
const W2: f64 = 0.109_951_743_655_322;

/// Six-point symmetric rule, exact for polynomials of degree 4.
pub const ORDER4: [QuadPoint; 6] = [
    QuadPoint { bary: [A1, A1, 1.0 - 2.0 * A1], weight: W1 },
    QuadPoint { bary: [A1, 1.0 - 2.0 * A1, A1], weight: W1 },
    QuadPoint { bary: [1.0 - 2.0 * A1, A1, A1], weight: W1 },
    QuadPoint { bary: [A2, A2, 1.0 - 2.0 * A2], weight: W2 },
    QuadPoint { bary: [A2, 1.0 - 2.0 * A2, A2], weight: W2 },
    QuadPoint { bary: [1.0 - 2.0 * A2, A2, A2], weight: W2 },
];

/// Edge-midpoint rule, exact for degree 2.
pub const EDGE_MIDPOINTS: [QuadPoint; 3] = [
    QuadPoint { bary: [0.5, 0.5, 0.0], weight: 1.0 / 3.0 },
    QuadPoint { bary: [0.0, 0.5, 0.5], weight: 1.0 / 3.0 },
    QuadPoint { bary: [0.5, 0.0, 0.5], weight: 1.0 / 3.0 },
];

/// Maps a barycentric point onto the triangle `p`.
#[inline]
pub fn to_cartesian(p: &[[f64; 2]; 3], bary: &[f64; 3]) -> [f64; 2] {
    [
        bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
        bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    // Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!
    fn monomial_exact(a: u32, b: u32) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        f(a) * f(b) / f(a + b + 2)
    }

    #[test]
    fn order4_rule_integrates_quartics_exactly() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for a in 0..=4 {
            for b in 0..=(4 - a) {
                let approx: f64 = ORDER4
                    .iter()
                    .map(|q| {
                        let [x, y] = to_cartesian(&tri, &q.bary);
                        q.weight * x.powi(a as i32) * y.powi(b as i32)
                    })
                    .sum::<f64>()
                    * 0.5;
                assert!((approx - monomial_exact(a, b)).abs() < 1e-14, "x^{a} y^{b}");
            }
        }
    }

    #[test]
    fn midpoint_rule_integrates_quadratics_exactly() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for a in 0..=2 {
            for b in 0..=(2 - a) {
                let approx: f64 = EDGE_MIDPOINTS
                    .iter()
                    .map(|q| {
                        let [x, y] = to_cartesian(&tri, &q.bary);
                        q.weight * x.powi(a as i32) * y.powi(b as i32)
                    })
                    .sum::<f64>()
                    * 0.5;
                assert!((approx - monomial_exact(a, b)).abs() < 1e-15);
            }
        }
    }
}
