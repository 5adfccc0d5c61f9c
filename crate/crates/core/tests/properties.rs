use divlab::bounds::{c_gradient, c_sfucp_family, kappa_prime, ConstantsConfig};
use divlab::fields::{checkerboard, identity_field, mollify, sampled_field, tent_field, tent_minorant, MatrixField};
use divlab::lattice::{
    ball_mask, discrete_gradient, equidistributed_sequence, make_grid, smeared_window, Boundary, CenterMode, Grid,
};
use divlab::operator::{assemble, form_value};
use divlab::spectral::{count_eigenvalues, eigensolve, hf_derivative, lifting_curve, Request};
use divlab::verify::{projector_ucp_check, scaling_check, Tolerances};
use proptest::prelude::*;

/// Cellwise `a·Id + b·(e₁e₂ᵀ + e₂e₁ᵀ)` built from a smooth pattern, elliptic for `|b| < a`.
fn wavy_field(grid: &Grid, base: f64, amp: f64, coupling: f64, freq: f64) -> MatrixField {
    let d = grid.dim();
    sampled_field(grid, |x| {
        let a = base + amp * (freq * x.iter().sum::<f64>()).sin();
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = a;
        }
        if d >= 2 {
            let b = coupling * a * (freq * x[0]).cos();
            m[1] = b;
            m[d] = b;
        }
        m
    })
    .unwrap()
}

fn node_values(grid: &Grid, seed: u64) -> Vec<f64> {
    (0..grid.node_count()).map(|n| ((n as f64 + 1.0) * (seed as f64 + 0.37)).sin()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn form_is_sandwiched_by_ellipticity(
        d in 1usize..=2, n in 2u32..6, base in 1.0f64..3.0, amp in 0.0f64..0.5,
        coupling in -0.4f64..0.4, seed in 0u64..1000,
    ) {
        let g = make_grid(d, 2, n, Boundary::Dirichlet).unwrap();
        let f = wavy_field(&g, base, amp, coupling, 1.3);
        let u = g.extend(&g.restrict(&node_values(&g, seed)));
        let val = form_value(&f, &u).unwrap();
        let reference = form_value(&identity_field(&g), &u).unwrap();
        prop_assert!(val >= f.theta_minus() * reference * (1.0 - 1e-10));
        prop_assert!(val <= f.theta_plus() * reference * (1.0 + 1e-10));
    }

    #[test]
    fn operator_is_symmetric(d in 1usize..=2, n in 2u32..5, coupling in -0.4f64..0.4) {
        let g = make_grid(d, 2, n, Boundary::Dirichlet).unwrap();
        let op = assemble(&wavy_field(&g, 2.0, 0.5, coupling, 0.7)).unwrap();
        let m = op.to_dense();
        prop_assert_eq!(&m, &m.transpose());
    }

    #[test]
    fn neumann_constants_are_annihilated(d in 1usize..=3, coupling in -0.4f64..0.4) {
        let g = make_grid(d, 2, 2, Boundary::Neumann).unwrap();
        let op = assemble(&wavy_field(&g, 2.0, 0.5, coupling, 0.9)).unwrap();
        let r = op.apply(&vec![1.0; op.dim()]);
        prop_assert!(r.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn inertia_count_matches_dense_spectrum(
        d in 1usize..=2, n in 2u32..5, coupling in -0.4f64..0.4, e in 0.0f64..200.0,
    ) {
        let g = make_grid(d, 2, n, Boundary::Dirichlet).unwrap();
        let op = assemble(&wavy_field(&g, 2.0, 0.5, coupling, 1.1)).unwrap();
        let c = count_eigenvalues(&op, e);
        prop_assume!(!c.ambiguous);
        let all = eigensolve(&op, Request::Lowest(op.dim())).unwrap();
        prop_assert_eq!(c.count, all.values.iter().filter(|&&v| v <= e).count());
    }

    #[test]
    fn masked_gradient_grows_with_radius(r1 in 0.05f64..0.45, dr in 0.0f64..0.2, seed in 0u64..100) {
        let r2 = (r1 + dr).min(0.49);
        let g = make_grid(2, 2, 8, Boundary::Dirichlet).unwrap();
        let grad = discrete_gradient(&g, &node_values(&g, seed)).unwrap();
        let mode = CenterMode::Random { seed };
        let large = equidistributed_sequence(&g, 1.0, r2, &mode).unwrap();
        let small = large.with_radius(r1).unwrap();
        let a = ball_mask(&g, &small).unwrap().face_norm2(&g, &grad).unwrap();
        let b = ball_mask(&g, &large).unwrap().face_norm2(&g, &grad).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn smeared_window_dominates_indicator(x in -5.0f64..5.0, e in -2.0f64..2.0, eps in 0.01f64..1.0) {
        let s = smeared_window(x, e, eps);
        prop_assert!((0.0..=1.0).contains(&s));
        if (x - e).abs() <= eps {
            prop_assert_eq!(s, 1.0);
        }
        if (x - e).abs() >= 3.0 * eps {
            prop_assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn tent_minorant_sandwich(delta in 0.1f64..0.45, seed in 0u64..50) {
        let g = make_grid(2, 2, 8, Boundary::Dirichlet).unwrap();
        let seq = equidistributed_sequence(&g, 1.0, delta, &CenterMode::Random { seed }).unwrap();
        let w = tent_field(&g, &seq, delta);
        let wt = tent_minorant(&g, &w, &seq).unwrap();
        let inner = ball_mask(&g, &seq.with_radius(delta / 2.0).unwrap()).unwrap();
        for node in 0..g.node_count() {
            let ind = if inner.contains_node(node) { 1.0 } else { 0.0 };
            prop_assert!(w[node] >= wt[node] && wt[node] >= ind);
        }
    }

    #[test]
    fn constants_are_monotone(r in 0.01f64..1.0, e in 0.1f64..10.0, th in 1.0f64..5.0, v in 0.0f64..10.0, dv in 0.0f64..5.0) {
        prop_assert!(c_gradient(r * 1.1, e, th) >= c_gradient(r, e, th));
        prop_assert!(c_gradient(r, e * 1.1, th) >= c_gradient(r, e, th));
        prop_assert!(c_gradient(r, e, th * 1.1) <= c_gradient(r, e, th));
        let cfg = ConstantsConfig { delta: r.min(0.49), ..Default::default() };
        prop_assert!(c_sfucp_family(&cfg, v + dv).c_sfucp <= c_sfucp_family(&cfg, v).c_sfucp);
        prop_assert!(kappa_prime(&cfg, r * 0.9) <= kappa_prime(&cfg, r));
    }

    #[test]
    fn mollified_checkerboard_bounds(lo in 0.5f64..2.0, gap in 0.0f64..2.0, frac in 0.05f64..0.95, ell in 1u32..16) {
        let g = make_grid(1, 2, 32, Boundary::Dirichlet).unwrap();
        let f = checkerboard(&g, lo, lo + gap).unwrap();
        let eps = frac * lo;
        let m = mollify(&f, ell, eps).unwrap();
        for c in 0..g.cell_count() {
            let a = m.cell(c)[0];
            prop_assert!(a >= lo - eps - 1e-12 && a <= lo + gap + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn lifting_rows_are_non_decreasing(seed in 0u64..1000, amp in 0.0f64..0.8) {
        let g = make_grid(2, 2, 4, Boundary::Dirichlet).unwrap();
        let f = wavy_field(&g, 1.5, amp, 0.2, 1.7);
        let w: Vec<f64> = node_values(&g, seed).iter().map(|x| x.abs()).collect();
        let curve = lifting_curve(&f, &w, 2.0, 6, 5).unwrap();
        for row in &curve.values {
            prop_assert!(row.windows(2).all(|p| p[1] >= p[0] - 1e-10 * p[0].abs()));
        }
    }

    #[test]
    fn hellmann_feynman_matches_difference(seed in 0u64..1000, amp in 0.0f64..0.8) {
        let g = make_grid(1, 2, 32, Boundary::Dirichlet).unwrap();
        let f = wavy_field(&g, 1.5, amp, 0.0, 2.3);
        let w: Vec<f64> = node_values(&g, seed).iter().map(|x| 0.2 + x.abs()).collect();
        let op = assemble(&f).unwrap();
        let s = eigensolve(&op, Request::Lowest(2)).unwrap();
        let hf = hf_derivative(&op, &s, 0, &w).unwrap();
        let tau = 1e-4;
        let plus = eigensolve(&assemble(&f.shifted(&w, tau).unwrap()).unwrap(), Request::Lowest(1)).unwrap();
        let minus = eigensolve(&assemble(&f.shifted(&w, -tau).unwrap()).unwrap(), Request::Lowest(1)).unwrap();
        let fd = (plus.values[0] - minus.values[0]) / (2.0 * tau);
        prop_assert!((hf.value - fd).abs() <= 1e-6 * fd.abs());
    }

    #[test]
    fn projector_report_is_reproducible(seed in 0u64..1000) {
        let g = make_grid(1, 24, 4, Boundary::Dirichlet).unwrap();
        let op = assemble(&checkerboard(&g, 1.0, 2.0).unwrap()).unwrap();
        let s = eigensolve(&op, Request::Lowest(4)).unwrap();
        let seq = equidistributed_sequence(&g, 1.0, 0.45, &CenterMode::Midpoint).unwrap();
        let cfg = ConstantsConfig::default();
        let a = projector_ucp_check(&op, &s, &seq, 0.1, 64, seed, &cfg, &Tolerances::default()).unwrap();
        let b = projector_ucp_check(&op, &s, &seq, 0.1, 64, seed, &cfg, &Tolerances::default()).unwrap();
        prop_assert_eq!(a.without_timing(), b.without_timing());
    }

    #[test]
    fn scaling_relation_for_smooth_fields(amp in 0.0f64..0.8, freq in 0.5f64..3.0, delta in 0.2f64..0.9) {
        let g = make_grid(2, 2, 4, Boundary::Dirichlet).unwrap();
        let f = wavy_field(&g, 1.5, amp, 0.0, freq);
        let seq = equidistributed_sequence(&g, 2.0, delta, &CenterMode::Midpoint).unwrap();
        let rep = scaling_check(&f, &seq, 3, 1e-8).unwrap();
        prop_assert!(rep.passed, "{:?}", rep.rows);
    }
}
