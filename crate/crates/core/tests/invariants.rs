//! Property tests for the dense kernels, the reduction hierarchy and the transforms.

use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use threescale_core::grid::{GridSpec, Transforms};
use threescale_core::linalg::{self, adjoint, herm_eig, max_abs_diff, pseudo_inverse, CMatrix, Adjointness, DEFAULT_RANK_TOL};
use threescale_core::reduction::{reduce, SymbolPair};

fn entries(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n * n)
}

fn skew_from(n: usize, raw: &[(f64, f64)]) -> CMatrix {
    let g = Array2::from_shape_fn((n, n), |(i, j)| Complex64::new(raw[i * n + j].0, raw[i * n + j].1));
    (&g - &adjoint(&g)).mapv(|z| z * 0.5)
}

fn hermitian_from(n: usize, raw: &[(f64, f64)]) -> CMatrix {
    let g = Array2::from_shape_fn((n, n), |(i, j)| Complex64::new(raw[i * n + j].0, raw[i * n + j].1));
    (&g + &adjoint(&g)).mapv(|z| z * 0.5)
}

/// Skew pair whose leading term `diag(i a_j)` has a prescribed kernel.
fn pencil() -> impl Strategy<Value = SymbolPair> {
    (2usize..=5)
        .prop_flat_map(|n| (Just(n), prop::collection::vec(prop_oneof![Just(0.0), 0.5..2.0f64], n), entries(n)))
        .prop_map(|(n, diag, raw)| {
            let t00 = Array2::from_shape_fn((n, n), |(i, j)| if i == j { Complex64::new(0.0, diag[i]) } else { Complex64::new(0.0, 0.0) });
            SymbolPair::new(t00, skew_from(n, &raw), Adjointness::SkewAdjoint).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobi_reconstructs_and_is_unitary((n, raw) in (1usize..=6).prop_flat_map(|n| (Just(n), entries(n)))) {
        let h = hermitian_from(n, &raw);
        let eig = herm_eig(&h, 1e-12).unwrap();
        prop_assert!(max_abs_diff(&eig.reconstruct(), &h) < 1e-12);
        let vv = adjoint(&eig.vectors).dot(&eig.vectors);
        prop_assert!(max_abs_diff(&vv, &linalg::identity(n)) < 1e-12);
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pseudo_inverse_satisfies_penrose((n, raw, rank) in (2usize..=6).prop_flat_map(|n| (Just(n), entries(n), 0..=n))) {
        // a skew matrix of prescribed rank: project a random skew matrix onto the first `rank` coordinates
        let mut a = skew_from(n, &raw);
        for i in 0..n {
            for j in 0..n {
                if i >= rank || j >= rank {
                    a[[i, j]] = Complex64::new(0.0, 0.0);
                }
            }
        }
        let p = pseudo_inverse(&a, DEFAULT_RANK_TOL).unwrap();
        let scale = linalg::max_abs(&a).max(1.0);
        prop_assert!(max_abs_diff(&a.dot(&p).dot(&a), &a) < 1e-8 * scale);
        prop_assert!(max_abs_diff(&p.dot(&a).dot(&p), &p) < 1e-8 * linalg::max_abs(&p).max(1.0));
        prop_assert!(linalg::self_adjoint_deviation(&a.dot(&p)) < 1e-8);
    }

    #[test]
    fn reduction_hierarchy_identities(pair in pencil()) {
        let red = reduce(&pair, 3, DEFAULT_RANK_TOL).unwrap();
        let d = red.defects();
        prop_assert!(d.idempotence < 1e-10, "{d:?}");
        prop_assert!(d.symmetry < 1e-10, "{d:?}");
        prop_assert!(d.mutual_orthogonality < 1e-10, "{d:?}");
        prop_assert!(d.product_vs_sum < 1e-10, "{d:?}");
        prop_assert!(d.product_vs_limit < 1e-10, "{d:?}");
        prop_assert!(d.adjointness < 1e-9, "{d:?}");
        // the projections only shrink
        let ranks: Vec<usize> = red.levels.iter().map(|l| linalg::projection_rank(&l.p_tilde)).collect();
        prop_assert!(ranks.windows(2).all(|w| w[1] <= w[0]), "{ranks:?}");
    }

    #[test]
    fn transforms_roundtrip(values in prop::collection::vec(-1.0..1.0f64, 2 * 16 * 16)) {
        let grid = GridSpec::new(2, 16).unwrap();
        let tr = Transforms::new(grid);
        let field = Array2::from_shape_vec((2, 256), values).unwrap();
        let spec = tr.to_spectral(&field).unwrap();
        prop_assert!(spec.hermitian_defect(&grid) < 1e-14);
        let back = tr.to_physical(&spec);
        let err = field.iter().zip(back.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-13);
    }
}
