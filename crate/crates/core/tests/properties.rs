use std::f64::consts::PI;

use anisolab::exponents::{
    beta_window, conjugate_pair, decay_exponents, l2, l3, region_a, region_j, select_beta,
};
use anisolab::grid::{p_laplacian_apply, GridField};
use anisolab::stability::{stability_index, EigenOptions, NonlinearityEval};
use anisolab::{ExponentData, Grid, ProblemSpec, StabilityVariant};
use proptest::prelude::*;

fn sorted_p() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=4)
        .prop_flat_map(|n| prop::collection::vec(2.0f64..4.0, n))
        .prop_map(|mut p| {
            p.sort_by(f64::total_cmp);
            p
        })
}

proptest! {
    #[test]
    fn conjugate_pairs_are_conjugate(beta in 0.1f64..5.0, s in 0.5f64..20.0, q in 2.0f64..4.0, pi in 2.0f64..4.0) {
        prop_assume!(2.0 * beta + q - pi > 1e-3);
        let (t, tp) = conjugate_pair(beta, s, q, pi);
        prop_assert!((1.0 / t + 1.0 / tp - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l2_increases_with_delta(p in sorted_p(), d in 0.5f64..30.0, step in 0.01f64..5.0) {
        let e = ExponentData::new(p).unwrap();
        prop_assert!(l2(&e, d + step) > l2(&e, d));
    }

    #[test]
    fn l3_decreases_with_cap(p in sorted_p(), m in 0.01f64..2.0, step in 0.01f64..1.0) {
        let e = ExponentData::new(p).unwrap();
        prop_assert!(l3(&e, m + step) < l3(&e, m));
    }

    #[test]
    fn region_j_is_bounded_by_reciprocal_of_a(p in sorted_p()) {
        let e = ExponentData::new(p).unwrap();
        prop_assert!(region_j(&e).hi <= 1.0 / region_a(&e).lo * (1.0 + 1e-12));
    }

    #[test]
    fn selected_beta_is_admissible(delta in 1.0f64..40.0, extra in 0.0f64..2.0) {
        let spec = ProblemSpec::mixed_power(vec![2.0, 3.0, 4.0], delta, delta + extra).unwrap();
        if let Ok(choice) = select_beta(&spec) {
            let (lo, hi) = beta_window(&spec).unwrap();
            prop_assert!(choice.beta > lo && choice.beta < hi);
            prop_assert!(choice.decay.iter().all(|d| *d < 0.0));
            let again = decay_exponents(choice.beta, &spec, choice.theorem).unwrap();
            prop_assert_eq!(again, choice.decay);
        }
    }

    #[test]
    fn p_laplacian_is_homogeneous(p in 2.0f64..5.0, t in 0.1f64..10.0, a in 0.5f64..3.0) {
        let g = Grid::unit(2, 12).unwrap();
        let e = ExponentData::new(vec![p, p]).unwrap();
        let u = GridField::from_fn_dirichlet(&g, |x| (PI * x[0]).sin() * (a * PI * x[1]).sin().abs());
        let base = p_laplacian_apply(&u, &e).unwrap();
        let scaled = p_laplacian_apply(&u.scaled(t), &e).unwrap();
        let f = t.powf(p - 1.0);
        for (x, y) in base.values().iter().zip(scaled.values()) {
            prop_assert!((f * x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn window_endpoint_blows_up() {
    // theta_N blows up as beta approaches l1 from above
    let spec = ProblemSpec::mixed_power(vec![2.0, 3.0, 4.0], 10.0, 10.0).unwrap();
    let (lo, _) = beta_window(&spec).unwrap();
    let e = &spec.exponents;
    let near = conjugate_pair(lo + 1e-9, 10.0, e.q(), 4.0).0;
    assert!(near > 1e8, "theta at the lower endpoint is {near}");
}

#[test]
fn two_dimensional_gap_matches_dense_eigensolve() {
    let res = 12;
    let g = Grid::unit(2, res).unwrap();
    let e = ExponentData::new(vec![2.0, 2.0]).unwrap();
    let one = GridField::constant(&g, 1.0);
    let r = stability_index(
        &one,
        &NonlinearityEval::Linear { slope: 0.0 },
        &one,
        &e,
        StabilityVariant::AsWritten,
        &EigenOptions::default(),
    )
    .unwrap();

    let m = res - 1;
    let h = 1.0 / res as f64;
    let a = nalgebra::DMatrix::from_fn(m * m, m * m, |i, j| {
        let (ix, iy) = (i % m, i / m);
        let (jx, jy) = (j % m, j / m);
        if i == j {
            4.0 / (h * h)
        } else if (ix.abs_diff(jx) == 1 && iy == jy) || (iy.abs_diff(jy) == 1 && ix == jx) {
            -1.0 / (h * h)
        } else {
            0.0
        }
    });
    let dense = a.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    let explicit = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
    assert!((dense - explicit).abs() < 1e-8);
    assert!((r.gap - dense).abs() < 1e-8, "gap {} vs dense {dense}", r.gap);
}

#[test]
fn serialized_thresholds_keep_labels() {
    let spec = ProblemSpec::mixed_power(vec![2.0, 3.0, 4.0], 10.0, 10.0).unwrap();
    let choice = select_beta(&spec).unwrap();
    let v = serde_json::to_value(&choice).unwrap();
    assert_eq!(v["theorem"], "Thm3_4");
}
