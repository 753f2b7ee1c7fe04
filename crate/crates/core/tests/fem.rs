use std::sync::Arc;

use inclusion_core::fem::{
    absorbed_energy, assemble, l2_distance, l2_error_against, lipschitz_probe, solve_dirichlet, BoundaryData,
    ElementField, Field, ForwardOperator, LinearSolver, NodalField,
};
use inclusion_core::mesh::{disk_mesh_with_rings, MeshPreset, TriMesh};
use inclusion_core::verify::cosh_errors;
use proptest::prelude::*;

fn modified_bessel_i0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        term *= (x / 2.0).powi(2) / (k * k) as f64;
        sum += term;
    }
    sum
}

fn operator(mesh: &Arc<TriMesh>, mu: f64, g: BoundaryData, solver: LinearSolver) -> ForwardOperator {
    let mu: Field = ElementField::constant(mesh, mu).into();
    ForwardOperator::with_solver(Arc::clone(mesh), &mu, g, solver).unwrap()
}

#[test]
fn cosh_solution_converges_at_second_order() {
    let e = cosh_errors(&[8, 16, 32]).unwrap();
    assert!(e[0] / e[1] > 3.5, "{e:?}");
    assert!(e[1] / e[2] > 3.5, "{e:?}");
}

#[test]
fn radial_solution_matches_bessel_oracle() {
    // -lap u + k^2 u = 0, u = 1 on the circle: u = I0(k r) / I0(k)
    let k: f64 = 2.0;
    let mesh = Arc::new(disk_mesh_with_rings(40));
    let op = operator(&mesh, 1.0, BoundaryData::constant(1.0).unwrap(), LinearSolver::Cholesky);
    let gamma: Field = ElementField::constant(&mesh, k * k).into();
    let u = op.fluence(&gamma, None).unwrap();
    let err = l2_error_against(&mesh, &u.into(), |x| modified_bessel_i0(k * x[0].hypot(x[1])) / modified_bessel_i0(k));
    assert!(err < 2e-3, "L2 error {err}");
}

#[test]
fn cholesky_and_conjugate_gradients_agree() {
    let mesh = Arc::new(disk_mesh_with_rings(16));
    let g = BoundaryData::new(|x| 2.0 + x[0] * x[1], 1.0, 3.0).unwrap();
    let gamma: Field = ElementField::from_fn(&mesh, |x| 0.1 + 0.4 * (x[0] > 0.2) as u8 as f64).into();
    let a = operator(&mesh, 0.3, g.clone(), LinearSolver::Cholesky).fluence(&gamma, None).unwrap();
    let b = operator(&mesh, 0.3, g, LinearSolver::Pcg).fluence(&gamma, None).unwrap();
    let worst = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn warm_start_does_not_change_the_solution() {
    let mesh = Arc::new(disk_mesh_with_rings(12));
    let op = operator(&mesh, 0.5, BoundaryData::constant(2.0).unwrap(), LinearSolver::Pcg);
    let gamma: Field = NodalField::from_fn(&mesh, |x| 0.2 + x[0].abs()).into();
    let cold = op.fluence(&gamma, None).unwrap();
    let guess = vec![1.0; mesh.vertex_count()];
    let warm = op.fluence(&gamma, Some(&guess)).unwrap();
    let worst = cold.values.iter().zip(&warm.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-8);
}

#[test]
fn assembled_matrix_is_symmetric() {
    let mesh = disk_mesh_with_rings(10);
    let mu: Field = NodalField::from_fn(&mesh, |x| 1.0 + x[0] * x[0]).into();
    let gamma: Field = ElementField::from_fn(&mesh, |x| 0.3 + x[1].abs()).into();
    assert!(assemble(&mesh, &mu, &gamma).unwrap().asymmetry() < 1e-12);
}

#[test]
fn fluence_is_nonnegative_and_below_boundary_maximum() {
    let mesh = Arc::new(MeshPreset::Desk.build());
    let g = BoundaryData::new(|x| 1.0 + 9.0 * (-4.0 * ((x[0] - 1.0).powi(2) + x[1] * x[1])).exp(), 1.0, 10.0).unwrap();
    let op = operator(&mesh, 0.05, g, LinearSolver::Cholesky);
    let gamma: Field = ElementField::from_fn(&mesh, |x| if x[0].hypot(x[1]) < 0.3 { 2.0 } else { 0.1 }).into();
    let u = op.fluence(&gamma, None).unwrap();
    let min = u.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = u.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(min >= -1e-8, "{min}");
    assert!(max <= 10.0 + 1e-8, "{max}");
}

#[test]
fn free_function_solver_matches_operator() {
    let mesh = Arc::new(disk_mesh_with_rings(9));
    let g = BoundaryData::new(|x| 1.5 + x[1], 0.5, 2.5).unwrap();
    let mu: Field = ElementField::constant(&mesh, 0.7).into();
    let gamma: Field = ElementField::constant(&mesh, 0.2).into();
    let a = solve_dirichlet(&assemble(&mesh, &mu, &gamma).unwrap(), &mesh, &g).unwrap();
    let b = ForwardOperator::new(Arc::clone(&mesh), &mu, g).unwrap().fluence(&gamma, None).unwrap();
    let h_a = absorbed_energy(&mesh, &gamma, &a);
    let h_b = absorbed_energy(&mesh, &gamma, &b);
    assert!(l2_distance(&mesh, &h_a, &h_b) < 1e-9);
}

#[test]
fn lipschitz_ratios_are_finite() {
    let mesh = Arc::new(disk_mesh_with_rings(10));
    let op = operator(&mesh, 0.2, BoundaryData::constant(1.0).unwrap(), LinearSolver::Cholesky);
    let pairs: Vec<(Field, Field)> = (1..5)
        .map(|k| {
            let r = 0.15 * k as f64;
            let a = ElementField::from_fn(&mesh, |x| if x[0].hypot(x[1]) < r { 0.5 } else { 0.1 });
            let b = ElementField::from_fn(&mesh, |x| if x[0].hypot(x[1]) < r + 0.1 { 0.5 } else { 0.1 });
            (a.into(), b.into())
        })
        .collect();
    for r in lipschitz_probe(&op, &pairs).unwrap() {
        assert!(r.forward.is_finite() && r.forward > 0.0);
        assert!((r.forward * r.inverse - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fluence_is_homogeneous_in_the_illumination(s in 0.1f64..10.0) {
        let mesh = Arc::new(disk_mesh_with_rings(6));
        let g = BoundaryData::new(|x| 2.0 + x[0], 1.0, 3.0).unwrap();
        let gamma: Field = ElementField::constant(&mesh, 0.3).into();
        let u = operator(&mesh, 0.4, g.clone(), LinearSolver::Cholesky).fluence(&gamma, None).unwrap();
        let us = operator(&mesh, 0.4, g.scaled(s).unwrap(), LinearSolver::Cholesky).fluence(&gamma, None).unwrap();
        for (a, b) in u.values.iter().zip(&us.values) {
            prop_assert!((s * a - b).abs() <= 1e-9 * s.max(1.0) * a.abs().max(1.0));
        }
    }

    #[test]
    fn rotation_of_a_radial_problem_keeps_the_fluence_radial(k in 0.5f64..3.0) {
        let mesh = Arc::new(disk_mesh_with_rings(8));
        let op = operator(&mesh, 1.0, BoundaryData::constant(1.0).unwrap(), LinearSolver::Cholesky);
        let gamma: Field = ElementField::constant(&mesh, k).into();
        let u = op.fluence(&gamma, None).unwrap();
        // every vertex of one ring carries the same value
        let ring: Vec<f64> = mesh
            .vertices()
            .iter()
            .zip(&u.values)
            .filter(|(v, _)| (v[0].hypot(v[1]) - 0.5).abs() < 1e-9)
            .map(|(_, u)| *u)
            .collect();
        prop_assert!(!ring.is_empty());
        let spread = ring.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ring.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(spread < 1e-3, "{}", spread);
    }
}
