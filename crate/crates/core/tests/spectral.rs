use std::sync::OnceLock;

use inclusion_core::fem::{l2_norm, ElementField, Field, NodalField};
use inclusion_core::mesh::{disk_mesh_with_rings, MeshPreset, TriMesh};
use inclusion_core::spectral::{project, DiskEigenbasis, Projector};
use inclusion_core::verify::gram_matrix;
use proptest::prelude::*;

fn small() -> &'static (TriMesh, DiskEigenbasis) {
    static CELL: OnceLock<(TriMesh, DiskEigenbasis)> = OnceLock::new();
    CELL.get_or_init(|| (disk_mesh_with_rings(24), DiskEigenbasis::build(30).unwrap()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn gram_matrix_on_the_data_mesh_is_the_identity() {
    let mesh = MeshPreset::Data.build();
    let basis = DiskEigenbasis::build(20).unwrap();
    let g = gram_matrix(&mesh, &basis, 20);
    for (i, row) in g.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 5e-3, "G[{i}][{j}] = {v}");
        }
    }
}

#[test]
fn leading_eigenvalues_are_squared_bessel_zeros() {
    let basis = DiskEigenbasis::build(6).unwrap();
    let m = basis.modes();
    // j_{0,1}, then the degenerate pair j_{1,1}
    assert!((m[0].eigenvalue - 2.404825557695773f64.powi(2)).abs() < 1e-9);
    assert_eq!((m[0].m, m[0].k), (0, 1));
    assert!((m[1].eigenvalue - 3.831705970207512f64.powi(2)).abs() < 1e-9);
    assert_eq!(m[1].eigenvalue, m[2].eigenvalue);
    assert!(m.windows(2).all(|w| w[0].eigenvalue <= w[1].eigenvalue));
}

#[test]
fn eigenfunctions_vanish_on_the_boundary() {
    let basis = DiskEigenbasis::build(40).unwrap();
    for k in 0..basis.len() {
        for i in 0..16 {
            let a = i as f64 * 0.39;
            assert!(basis.eval(k, [a.cos(), a.sin()]).abs() < 1e-9);
        }
    }
}

#[test]
fn parseval_partial_sums_increase_and_stay_below_the_norm() {
    let (mesh, basis) = small();
    let f: Field = NodalField::from_fn(mesh, |x| (3.0 * x[0]).sin() + x[1] * x[1]).into();
    let total = l2_norm(mesh, &f);
    let mut last = 0.0;
    for n in [1, 5, 10, 20, 30] {
        let c = project(mesh, &f, &basis.truncated(n)).unwrap();
        let s = norm(&c);
        assert!(s >= last - 1e-12);
        assert!(s <= total * (1.0 + 5e-3), "{s} > {total}");
        last = s;
    }
}

#[test]
fn projector_agrees_with_direct_quadrature() {
    let (mesh, basis) = small();
    let p = Projector::new(mesh, basis);
    let f: Field = ElementField::from_fn(mesh, |x| if x[0] > 0.1 { 0.4 } else { 0.1 }).into();
    let a = p.project(&f).unwrap();
    let b = project(mesh, &f, basis).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn projection_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 0.5f64..4.0) {
        let (mesh, basis) = small();
        let f = NodalField::from_fn(mesh, |x| (k * x[0]).cos());
        let g = NodalField::from_fn(mesh, |x| x[0] * x[1] + k);
        let combo = NodalField::new(mesh, f.values.iter().zip(&g.values).map(|(u, v)| a * u + b * v).collect()).unwrap();
        let pf = project(mesh, &f.into(), basis).unwrap();
        let pg = project(mesh, &g.into(), basis).unwrap();
        let pc = project(mesh, &combo.into(), basis).unwrap();
        for ((x, y), z) in pf.iter().zip(&pg).zip(&pc) {
            prop_assert!((a * x + b * y - z).abs() < 1e-12 * (1.0 + z.abs()));
        }
    }
}
