use approx::assert_relative_eq;
use ctmap_core::spectral::{commute_distance_matrix, knee};
use ctmap_core::{
    commute_distance, decompose, decompose_with, embed, random_knn_graph, residual_curve,
    ConnectivityGraph, DecomposeOptions, Solver, TimeSeriesMatrix, WalkModel,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dense() -> DecomposeOptions {
    DecomposeOptions {
        solver: Solver::Dense,
        ..DecomposeOptions::default()
    }
}

fn graph_strategy() -> impl Strategy<Value = ConnectivityGraph> {
    (5usize..=30, 2usize..=4, any::<u64>())
        .prop_map(|(n, nn, seed)| random_knn_graph(n, nn, seed).unwrap())
}

fn normalized_affinity(g: &ConnectivityGraph) -> DMatrix<f64> {
    let n = g.n_nodes();
    DMatrix::from_fn(n, n, |i, j| {
        g.weight(i, j) / (g.degree(i) * g.degree(j)).sqrt()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigenvectors_are_orthonormal(g in graph_strategy()) {
        let n = g.n_nodes();
        let dec = decompose_with(&g, n, &dense()).unwrap();
        let phi = dec.eigenvectors();
        let gram = phi.transpose() * phi;
        let err = (gram - DMatrix::identity(n, n)).abs().max();
        prop_assert!(err < 1e-10, "orthonormality error {err:e}");
    }

    #[test]
    fn eigen_equation_holds(g in graph_strategy()) {
        let n = g.n_nodes();
        let dec = decompose_with(&g, n, &dense()).unwrap();
        let s = normalized_affinity(&g);
        for (k, &lambda) in dec.eigenvalues().iter().enumerate() {
            let phi = dec.eigenvectors().column(k).into_owned();
            let resid = (&s * &phi - &phi * lambda).norm();
            prop_assert!(resid < 1e-8, "k = {k}: residual {resid:e}");
        }
        let ev = dec.eigenvalues();
        prop_assert!((ev[0] - 1.0).abs() < 1e-12);
        prop_assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn lanczos_matches_dense(g in graph_strategy(), m in 2usize..6) {
        let n = g.n_nodes();
        let m = m.min(n);
        let d = decompose_with(&g, m, &dense()).unwrap();
        let l = decompose_with(
            &g,
            m,
            &DecomposeOptions { solver: Solver::Lanczos, ..DecomposeOptions::default() },
        )
        .unwrap();
        for k in 0..m {
            prop_assert!((d.eigenvalues()[k] - l.eigenvalues()[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn truncation_is_monotone(g in graph_strategy(), i in 0usize..30, j in 0usize..30) {
        let n = g.n_nodes();
        let (i, j) = (i % n, j % n);
        let dec = decompose_with(&g, n, &dense()).unwrap();
        let mut prev = 0.0;
        for terms in 1..=n {
            let v = commute_distance(&dec, i, j, terms).unwrap();
            prop_assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn commute_triangle_inequality(g in graph_strategy()) {
        let n = g.n_nodes();
        let dec = decompose_with(&g, n, &dense()).unwrap();
        let kappa = commute_distance_matrix(&dec, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let slack = kappa[(i, j)] + kappa[(j, k)] - kappa[(i, k)];
                    prop_assert!(slack >= -1e-9 * kappa[(i, k)].max(1.0));
                }
            }
        }
    }

    #[test]
    fn direct_edge_never_increases_commute_time(
        g in graph_strategy(),
        pick in any::<prop::sample::Index>(),
        w in 0.01f64..1.0,
    ) {
        let n = g.n_nodes();
        let missing: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| g.weight(i, j) == 0.0)
            .collect();
        prop_assume!(!missing.is_empty());
        let (i, j) = missing[pick.index(missing.len())];
        let mut edges = g.edges();
        edges.push((i, j, w));
        let h = ConnectivityGraph::from_edges(n, &edges).unwrap();
        let before = WalkModel::new(&g).unwrap().commute_time(i, j).unwrap();
        let after = WalkModel::new(&h).unwrap().commute_time(i, j).unwrap();
        prop_assert!(after <= before * (1.0 + 1e-10), "{before} -> {after}");
    }

    #[test]
    fn sign_convention_is_reproducible(g in graph_strategy()) {
        let a = decompose(&g, 3).unwrap();
        let b = decompose(&g, 3).unwrap();
        prop_assert_eq!(a.eigenvectors(), b.eigenvectors());
    }

    #[test]
    fn residual_curve_matches_projection_oracle(
        g in graph_strategy(),
        seed in any::<u64>(),
        t_len in 1usize..8,
    ) {
        let n = g.n_nodes();
        let dec = decompose_with(&g, n, &dense()).unwrap();
        let mut state = seed | 1;
        let values: Vec<f64> = (0..n * t_len)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 + 0.1
            })
            .collect();
        let x = TimeSeriesMatrix::new(n, t_len, values).unwrap();
        let region: Vec<usize> = (0..n).step_by(2).collect();
        let curve = residual_curve(&x, &dec, &region, n).unwrap();
        let xm = x.to_dmatrix();
        for k in 1..=n {
            let basis = dec.eigenvectors().columns(0, k).into_owned();
            let approx = &basis * (basis.transpose() * &xm);
            let oracle: f64 = region
                .iter()
                .map(|&i| {
                    let r = xm.row(i) - approx.row(i);
                    r.norm_squared() / xm.row(i).norm_squared()
                })
                .sum::<f64>()
                / region.len() as f64;
            prop_assert!((curve.values[k - 1] - oracle).abs() < 1e-10);
        }
        prop_assert!(curve.values[n - 1] <= 1e-10);
    }

    #[test]
    fn residual_curve_monotone_for_equal_energy_rows(
        g in graph_strategy(),
        seed in any::<u64>(),
        t_len in 1usize..8,
    ) {
        let n = g.n_nodes();
        let dec = decompose_with(&g, n, &dense()).unwrap();
        let mut state = seed | 1;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..t_len)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-6);
            rows.push(row.iter().map(|v| v / norm).collect::<Vec<f64>>());
        }
        let x = TimeSeriesMatrix::from_rows(&rows).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let curve = residual_curve(&x, &dec, &all, n).unwrap();
        prop_assert!(curve.values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(curve.values[n - 1] <= 1e-10);
    }
}

#[test]
fn full_embedding_is_isometric_on_a_cycle() {
    let n = 8;
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
    let g = ConnectivityGraph::from_edges(n, &edges).unwrap();
    let dec = decompose_with(&g, n, &dense()).unwrap();
    let psi = embed(&dec, n - 1).unwrap();
    let walk = WalkModel::new(&g).unwrap();
    for i in 0..n {
        for j in 0..n {
            let d2: f64 = psi
                .point(i)
                .iter()
                .zip(psi.point(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            // effective resistance on a cycle is d(n - d)/n, volume 2n
            let d = (i as f64 - j as f64).abs();
            let closed = 2.0 * d * (n as f64 - d);
            assert_relative_eq!(d2, closed, max_relative = 1e-9, epsilon = 1e-9);
            assert_relative_eq!(
                walk.commute_time(i, j).unwrap(),
                closed,
                max_relative = 1e-9,
                epsilon = 1e-9
            );
        }
    }
}

#[test]
fn barbell_fiedler_vector_splits_cliques() {
    let m = 20;
    let mut edges = Vec::new();
    for base in [0, m] {
        for i in 0..m {
            for j in i + 1..m {
                edges.push((base + i, base + j, 1.0));
            }
        }
    }
    edges.push((m - 1, m, 1.0));
    let g = ConnectivityGraph::from_edges(2 * m, &edges).unwrap();
    let dec = decompose(&g, 2).unwrap();
    let phi2 = dec.eigenvectors().column(1);
    let left = phi2[0].signum();
    assert!((0..m).all(|i| phi2[i].signum() == left));
    assert!((m..2 * m).all(|i| phi2[i].signum() == -left));
}

#[test]
fn single_voxel_error_can_rise_with_k() {
    // star graph: center 0, leaves 1..=3
    let g = ConnectivityGraph::from_edges(4, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]).unwrap();
    let dec = decompose_with(&g, 4, &dense()).unwrap();
    let x = TimeSeriesMatrix::from_rows(&[vec![1.0], vec![0.2], vec![-0.3], vec![0.05]]).unwrap();
    let curves: Vec<Vec<f64>> = (0..4)
        .map(|i| residual_curve(&x, &dec, &[i], 4).unwrap().values)
        .collect();
    let rises = curves
        .iter()
        .any(|c| c.windows(2).any(|w| w[1] > w[0] + 1e-9));
    assert!(rises, "{curves:?}");
    assert!(curves.iter().all(|c| c[3] < 1e-10));
}

#[test]
fn knee_on_phantom_like_curve() {
    let curve = ctmap_core::ResidualCurve {
        region: vec![0],
        values: vec![1.0, 0.4, 0.1, 0.09, 0.085, 0.08],
    };
    assert_eq!(knee(&curve, 0.1).unwrap(), 3);
}
