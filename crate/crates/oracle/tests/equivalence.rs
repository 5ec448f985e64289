use nalgebra::DMatrix;
use proptest::prelude::*;
use raht_core::geometry::{build_hierarchy, Hierarchy, PointCloud};
use raht_core::kernels::{gram_pyramid, Order};
use raht_core::sparse_ops::{
    apply_ztilde, apply_ztilde_t, build_split, FeatureTensor, GramOperator, Resampler, SplitSolve,
};
use raht_core::spectral::{apply_series, ApproxConfig, MatrixFunction};
use raht_core::transform::{ResidualMode, TransformConfig, TransformPlan};
use raht_oracle::{
    basis_matrix, matfun_exact, neighbours_consistent, project_exact, psi_exact, two_scale_matrix,
    ztilde_exact, DenseFunction,
};

fn cloud(depth: u32, pts: Vec<[u32; 3]>, vals: Vec<f64>) -> PointCloud {
    PointCloud::from_voxels(depth, pts, vals, 1).unwrap()
}

fn arb_cloud(max_depth: u32, max_pts: usize) -> impl Strategy<Value = PointCloud> {
    (2..=max_depth).prop_flat_map(move |d| {
        let side = 1u32 << d;
        proptest::collection::vec(([0..side, 0..side, 0..side], -100.0f64..100.0), 1..max_pts)
            .prop_map(move |v| {
                let (p, a): (Vec<_>, Vec<_>) = v.into_iter().unzip();
                cloud(d, p, a)
            })
    })
}

fn order(p2: bool) -> Order {
    if p2 {
        Order::P2
    } else {
        Order::P1
    }
}

fn dense_gram(h: &Hierarchy, l: usize) -> DMatrix<f64> {
    let g = &gram_pyramid(h)[l];
    let lv = &h.levels[l];
    let mut m = DMatrix::zeros(lv.len(), lv.len());
    for i in 0..lv.len() {
        for s in 0..27 {
            let j = lv.neighbors[i][s];
            if j != raht_core::geometry::NO_NODE {
                m[(i, j as usize)] = g.entries[i][s];
            }
        }
    }
    m
}

fn to_dense(t: &FeatureTensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.len(), t.channels, &t.data)
}

fn from_dense(m: &DMatrix<f64>) -> FeatureTensor {
    let mut data = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    FeatureTensor::from_vec(data, m.ncols())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gram_matches_basis_inner_products(c in arb_cloud(4, 60), p2 in any::<bool>()) {
        let h = build_hierarchy(&c, order(p2)).unwrap();
        prop_assert!(neighbours_consistent(&h));
        for l in 0..=h.depth {
            let phi = basis_matrix(&h, l).unwrap();
            let want = phi.transpose() * &phi;
            let got = dense_gram(&h, l as usize);
            prop_assert!(max_abs(&(got - want)) < 1e-9);
        }
    }

    #[test]
    fn refinement_relation_and_resampler(c in arb_cloud(4, 60), p2 in any::<bool>()) {
        let h = build_hierarchy(&c, order(p2)).unwrap();
        for l in 0..h.depth {
            let a = two_scale_matrix(&h, l).unwrap();
            let coarse = basis_matrix(&h, l).unwrap();
            let fine = basis_matrix(&h, l + 1).unwrap();
            prop_assert!(max_abs(&(coarse - &fine * a.transpose())) < 1e-12);
            let r = Resampler::new(&h.levels[l as usize], &h.levels[l as usize + 1], h.order);
            let x = DMatrix::from_fn(a.ncols(), 2, |i, j| (i * 7 + j * 3) as f64 % 5.0 - 2.0);
            let got = to_dense(&r.downsample(&from_dense(&x)));
            prop_assert!(max_abs(&(got - &a * &x)) < 1e-12);
        }
    }

    #[test]
    fn series_matches_eigendecomposition(c in arb_cloud(3, 40), p2 in any::<bool>()) {
        let h = build_hierarchy(&c, order(p2)).unwrap();
        let grams = gram_pyramid(&h);
        let l = (h.depth - 1) as usize;
        let g = dense_gram(&h, l);
        // Diagonal rescaling keeps the test well conditioned for p = 2.
        let d: Vec<f64> = (0..g.nrows()).map(|i| g[(i, i)].sqrt().recip()).collect();
        let gs = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| d[i] * g[(i, j)] * d[j]);
        let gt = grams[l].rescaled(&h.levels[l], &d);
        let op = GramOperator { gram: &gt, geom: &h.levels[l] };
        let exact = matfun_exact(&gs, DenseFunction::Sqrt).unwrap();
        let v = DMatrix::from_fn(g.nrows(), 1, |i, _| (i as f64).sin());
        let got = apply_series(&op, &from_dense(&v), MatrixFunction::Sqrt, &ApproxConfig::with_order(4000)).unwrap();
        let want = exact * &v;
        prop_assert!(max_abs(&(to_dense(&got) - &want)) <= 2e-2 * (1.0 + max_abs(&want)));
    }

    #[test]
    fn cascade_matches_least_squares(c in arb_cloud(4, 60), p2 in any::<bool>()) {
        let o = order(p2);
        let h = build_hierarchy(&c, o).unwrap();
        // Enough terms for the slowest non-null mode of any scaled Gram.
        let mut ratio: f64 = 1.0;
        for l in 0..=h.depth as usize {
            let g = dense_gram(&h, l);
            let d: Vec<f64> = (0..g.nrows()).map(|i| g[(i, i)].sqrt().recip()).collect();
            let gs = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| d[i] * g[(i, j)] * d[j]);
            let ev = gs.symmetric_eigen().eigenvalues;
            let top = ev.max();
            let low = ev.iter().copied().filter(|&v| v > 1e-9 * top).fold(f64::INFINITY, f64::min);
            ratio = ratio.max(top / low);
        }
        let k = (60.0 * ratio).ceil();
        prop_assume!(k <= 2e6);
        let mut cfg = TransformConfig::new(o, ResidualMode::Overcomplete);
        cfg.gram = ApproxConfig { order: k as u32, ..ApproxConfig::default() };
        let plan = TransformPlan::new(&h, &cfg).unwrap();
        let y = FeatureTensor::from_vec(c.attributes.clone(), 1);
        let proj = plan.projections(&y).unwrap();
        let yd = to_dense(&y);
        for l in 0..=h.depth {
            let phi = basis_matrix(&h, l).unwrap();
            let (_, fitted) = project_exact(&phi, &yd);
            let got = &phi * to_dense(&proj[l as usize]);
            let err = (got - &fitted).norm();
            prop_assert!(err <= 1e-6 * (1.0 + fitted.norm()), "level {} err {}", l, err);
        }
    }

    #[test]
    fn sparse_ztilde_matches_dense(c in arb_cloud(4, 60), p2 in any::<bool>()) {
        let h = build_hierarchy(&c, order(p2)).unwrap();
        for l in 0..h.depth as usize {
            let Ok(split) = build_split(&h.levels[l], &h.levels[l + 1]) else { continue };
            let a = two_scale_matrix(&h, l as u32).unwrap();
            let Ok(z) = ztilde_exact(&a, &split) else { continue };
            let r = Resampler::new(&h.levels[l], &h.levels[l + 1], h.order);
            let x = DMatrix::from_fn(a.ncols(), 1, |i, _| ((i * 13) % 7) as f64 - 3.0);
            let solve = SplitSolve { terms: 200, tolerance: 1e-14 };
            if let Ok(got) = apply_ztilde(&r, &split, &from_dense(&x), solve) {
                let want = &z * &x;
                prop_assert!(max_abs(&(to_dense(&got) - &want)) <= 1e-8 * (1.0 + max_abs(&want)));
            }
            let g = DMatrix::from_fn(split.b_len(), 1, |i, _| ((i * 5) % 3) as f64 - 1.0);
            if split.b_len() > 0 {
                if let Ok(got) = apply_ztilde_t(&r, &split, &from_dense(&g), solve) {
                    let want = z.transpose() * &g;
                    prop_assert!(max_abs(&(to_dense(&got) - &want)) <= 1e-8 * (1.0 + max_abs(&want)));
                }
            }
        }
    }
}

#[test]
fn p1_detail_space_is_orthogonal_to_coarse_space() {
    let pts: Vec<[u32; 3]> = (0..60u32).map(|i| [(i * 5) % 16, (i * 11) % 16, (i * 3) % 16]).collect();
    let c = cloud(4, pts, vec![0.0; 60]);
    let h = build_hierarchy(&c, Order::P1).unwrap();
    for l in 0..h.depth {
        let split = build_split(&h.levels[l as usize], &h.levels[l as usize + 1]).unwrap();
        let a = two_scale_matrix(&h, l).unwrap();
        let z = ztilde_exact(&a, &split).unwrap();
        assert!(max_abs(&(&z * a.transpose())) <= 1e-10);
        let psi = psi_exact(&basis_matrix(&h, l + 1).unwrap(), &z).unwrap();
        let phi = basis_matrix(&h, l).unwrap();
        assert!(max_abs(&(phi.transpose() * psi)) <= 1e-10);
    }
}
