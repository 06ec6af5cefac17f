//! Property tests for the structural invariants of the hierarchy, the
//! transfer operators and the iterative solver.

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use mrlod_core::corrector::Oversampling;
use mrlod_core::fem::FineSpace;
use mrlod_core::mesh::{BoundaryLayout, ElementId, Geometry, MeshHierarchy};
use mrlod_core::rng;
use mrlod_core::solver::{gmres, GmresConfig};
use mrlod_core::sparse::{galerkin_product, ComplexSparseMatrix, SparseColumns};
use mrlod_core::transfer::{haar_basis, haar_synthesis, TransferSet};
use mrlod_core::C64;

fn hierarchy(h1_exp: i32, levels: usize, hole: bool) -> MeshHierarchy {
    let h1 = 2f64.powi(-h1_exp);
    let h = h1 / 2f64.powi(levels as i32);
    let geometry = if hole {
        Geometry::SquareWithHole {
            lo: [0.375, 0.375],
            hi: [0.625, 0.625],
        }
    } else {
        Geometry::UnitSquare
    };
    MeshHierarchy::build(h1, levels, h, geometry, BoundaryLayout::all_robin()).unwrap()
}

fn pick_active(mesh: &MeshHierarchy, level: usize, k: usize) -> ElementId {
    let active = mesh.active_elements(level);
    active[k % active.len()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn patch_grows_one_layer_at_a_time(
        hole in any::<bool>(),
        level in 1usize..=2,
        k in 0usize..10_000,
        m in 0usize..4,
    ) {
        let mesh = hierarchy(3, 2, hole);
        let t = pick_active(&mesh, level, k);
        let outer: BTreeSet<ElementId> = mesh.patch(t, m + 1).unwrap().elements.into_iter().collect();
        let mut grown = BTreeSet::new();
        for s in mesh.patch(t, m).unwrap().elements {
            grown.extend(mesh.patch(s, 1).unwrap().elements);
        }
        prop_assert_eq!(&outer, &grown);
        let inner = mesh.patch(t, m).unwrap();
        prop_assert!(inner.elements.iter().all(|e| outer.contains(e)));
        prop_assert!(inner.contains(t));
    }

    #[test]
    fn haar_synthesis_is_an_isometry(
        hole in any::<bool>(),
        level in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let mesh = hierarchy(3, 3, hole);
        let n = haar_basis(&mesh, level).unwrap().len();
        let mut g = rng::seeded(seed);
        let c = rng::complex_gaussian(&mut g, n);
        let values = haar_synthesis(&mesh, level, &c).unwrap();
        let area = mesh.mesh_size(level).powi(2);
        let lhs: f64 = values.iter().map(|v| v.norm_sqr()).sum::<f64>() * area;
        let rhs: f64 = c.iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
    }

    #[test]
    fn vstable_projection_preserves_element_averages(
        hole in any::<bool>(),
        level in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let mesh = hierarchy(3, 2, hole);
        let space = FineSpace::new(Arc::new(mesh));
        let transfers = TransferSet::new(&space).unwrap();
        let t = transfers.level(level);
        let v = rng::complex_gaussian(&mut rng::seeded(seed), space.num_free());
        let before = t.project(&v);
        let after = t.project(&t.vstable_projection(&v));
        let scale = before.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn gmres_residuals_never_increase(
        n in 5usize..60,
        restart in 1usize..12,
        seed in any::<u64>(),
    ) {
        let mut g = rng::seeded(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            for (k, v) in rng::complex_gaussian(&mut g, 3).into_iter().enumerate() {
                trip.push((i, (i + 3 * k + 1) % n, v));
            }
            trip.push((i, i, C64::new(6.0, 1.0)));
        }
        let a = ComplexSparseMatrix::from_triplets(n, n, trip);
        let b = rng::complex_gaussian(&mut g, n);
        let cfg = GmresConfig { restart, rtol: 1e-10, max_iter: 400 };
        let (_, report) = gmres(|x, y| a.mul_vec_into(x, y), &b, &cfg, None).unwrap();
        for w in report.residual_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-10), "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn galerkin_product_matches_dense(
        rows in 3usize..20,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut g = rng::seeded(seed);
        let dense_a: Vec<Vec<C64>> = (0..rows).map(|_| rng::complex_gaussian(&mut g, rows)).collect();
        let a = ComplexSparseMatrix::from_dense(&dense_a);
        let mut trial = SparseColumns::new(rows);
        let mut test = SparseColumns::new(rows);
        for _ in 0..cols {
            trial.push_dense(&rng::complex_gaussian(&mut g, rows));
            test.push_dense(&rng::complex_gaussian(&mut g, rows));
        }
        let gp = galerkin_product(&test, &a, &trial);
        for j in 0..cols {
            let tj = test.column_dense(j);
            for k in 0..cols {
                let tk = trial.column_dense(k);
                let expect: C64 = (0..rows)
                    .map(|r| tj[r].conj() * (0..rows).map(|c| dense_a[r][c] * tk[c]).sum::<C64>())
                    .sum();
                prop_assert!((gp.get(j, k) - expect).norm() <= 1e-10 * (1.0 + expect.norm()));
            }
        }
    }

    #[test]
    fn oversampling_roundtrips(m in 0usize..1000) {
        let o = Oversampling::Finite(m);
        prop_assert_eq!(o.to_string().parse::<Oversampling>().unwrap(), o);
    }
}

#[test]
fn global_oversampling_parses() {
    assert_eq!("inf".parse::<Oversampling>().unwrap(), Oversampling::Global);
    assert_eq!(Oversampling::Global.to_string(), "inf");
}
