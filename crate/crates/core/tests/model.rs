mod common;

use anesthesia_mpc::compensation::{
    compensation_gain, disturbance_bound, tracking_input_set, DisturbanceBoundMode, InputBox,
};
use anesthesia_mpc::pkpd::{
    bis_output, build_continuous, discretize_euler, hill_invert, steady_output_row, FastState,
    PdParams, SlowState,
};
use anesthesia_mpc::sim::simulate_open_loop;
use nalgebra::{RowVector4, SMatrix, SVector, Vector2, Vector4};
use proptest::prelude::*;

use common::{sample_design, sample_patient};

#[test]
fn steady_gain_is_positive_and_independent_of_ts() {
    let p = sample_patient();
    let cont = build_continuous(&p.propofol, &p.remifentanil).unwrap();
    let g = RowVector4::new(0.0, 1.0 / p.pd.ce50p, 0.0, 1.0 / p.pd.ce50r);
    let oracle = g * (-cont.a_f).try_inverse().unwrap() * cont.b;
    assert!(oracle[0] > 0.0 && oracle[1] > 0.0);
    for ts in [1.0, 5.0, 10.0] {
        let disc = discretize_euler(&cont, ts).unwrap();
        let s = steady_output_row(&disc, &p.pd, 50.0).unwrap();
        for i in 0..2 {
            assert!(
                ((s.g_eff[i] - oracle[i]) / oracle[i]).abs() <= 1e-12,
                "Ts = {ts}"
            );
        }
    }
}

#[test]
fn zero_input_keeps_patient_awake() {
    let d = sample_design();
    let log = simulate_open_loop(
        &d.model,
        &d.patient.pd,
        120,
        FastState::zeros(),
        SlowState::zeros(),
        |_| Vector2::zeros(),
    );
    assert!(log.records.iter().all(|r| r.bis == d.patient.pd.e0));
    assert!(log
        .records
        .iter()
        .all(|r| r.xf == Vector4::zeros() && r.xs == Vector4::zeros()));
    assert_eq!(log.final_bis, d.patient.pd.e0);
}

#[test]
fn maximal_infusion_reaches_global_equilibrium() {
    let d = sample_design();
    let u_max = d.u_box.upper;
    // equilibrium of the full eight-state model by a direct solve
    let a: SMatrix<f64, 8, 8> = d.continuous.full_matrix();
    let mut b = SVector::<f64, 8>::zeros();
    b[0] = d.continuous.b[(0, 0)] * u_max[0];
    b[2] = d.continuous.b[(2, 1)] * u_max[1];
    let x_eq = a.lu().solve(&(-b)).unwrap();
    let log = simulate_open_loop(
        &d.model,
        &d.patient.pd,
        400_000,
        FastState::zeros(),
        SlowState::zeros(),
        |_| u_max,
    );
    let reached = [log.final_xf.as_slice(), log.final_xs.as_slice()].concat();
    for i in 0..8 {
        let rel = (reached[i] - x_eq[i]).abs() / x_eq[i];
        assert!(rel <= 1e-6, "state {i}: {} vs {}", reached[i], x_eq[i]);
    }
    // every compartment of a drug sits at u_max / Cl1
    let cp = u_max[0] / d.patient.propofol.cl1;
    let cr = u_max[1] / d.patient.remifentanil.cl1;
    for (i, c) in [cp, cp, cr, cr].iter().enumerate() {
        assert!((log.final_xf[i] - c).abs() / c <= 1e-6);
        assert!((log.final_xs[i] - c).abs() / c <= 1e-6);
    }
}

#[test]
fn compensation_gain_matches_clearances_and_ignores_ts() {
    let d = sample_design();
    let (pp, pr) = (d.patient.propofol, d.patient.remifentanil);
    let expected = [[-pp.cl2, -pp.cl3, 0.0, 0.0], [0.0, 0.0, -pr.cl2, -pr.cl3]];
    let from_cont = compensation_gain(&d.continuous.b, &d.continuous.a_s).unwrap();
    for i in 0..2 {
        for j in 0..4 {
            let e = expected[i][j];
            assert!((d.gain.d[(i, j)] - e).abs() <= 1e-12 * (1.0 + e.abs()));
            assert!((from_cont.d[(i, j)] - d.gain.d[(i, j)]).abs() <= 1e-15);
            assert!(d.gain.d[(i, j)] <= 0.0);
        }
    }
    assert!((d.model.a_s + d.model.b * d.gain.d).amax() <= 1e-12);
}

#[test]
fn worst_case_bound_dominates_simulated_bound() {
    let d = sample_design();
    let worst = disturbance_bound(
        &d.model,
        &d.u_box,
        DisturbanceBoundMode::WorstCase,
        &d.steady,
        1e-6,
    )
    .unwrap();
    let simulated = disturbance_bound(
        &d.model,
        &d.u_box,
        DisturbanceBoundMode::Simulated,
        &d.steady,
        1e-6,
    )
    .unwrap();
    let (pp, pr) = (d.patient.propofol, d.patient.remifentanil);
    let closed_form = Vector2::new(
        (pp.cl2 + pp.cl3) / pp.cl1 * d.u_box.upper[0],
        (pr.cl2 + pr.cl3) / pr.cl1 * d.u_box.upper[1],
    );
    assert!((worst - closed_form).amax() <= 1e-12 * closed_form.amax());
    assert!(worst[0] >= simulated[0] && worst[1] >= simulated[1]);
    assert!(simulated.iter().all(|m| *m > 0.0));
    // the worst case leaves no room for tracking on this patient
    assert!(tracking_input_set(&d.u_box, &worst).is_err());
    let zero_box = InputBox::new(Vector2::zeros(), Vector2::zeros()).unwrap();
    let zero = disturbance_bound(
        &d.model,
        &zero_box,
        DisturbanceBoundMode::Simulated,
        &d.steady,
        1e-6,
    );
    assert_eq!(zero.unwrap(), Vector2::zeros());
}

#[test]
fn operating_tracking_set() {
    let d = sample_design();
    assert_eq!(d.m_bar, Vector2::new(0.12, 0.27));
    assert_eq!(d.v_box.lower, Vector2::new(0.12, 0.27));
    assert_eq!(d.v_box.upper, Vector2::new(6.67, 16.67));
    // brute force: v ∈ V iff v + m ∈ U for every m on a grid of M
    let grid: Vec<Vector2<f64>> = (0..=10)
        .flat_map(|i| (0..=10).map(move |j| Vector2::new(-0.012 * i as f64, -0.027 * j as f64)))
        .collect();
    for &(v, inside) in &[
        (Vector2::new(0.12, 0.27), true),
        (Vector2::new(6.67, 16.67), true),
        (Vector2::new(0.119, 1.0), false),
        (Vector2::new(1.0, 0.269), false),
    ] {
        let robust = grid.iter().all(|m| d.u_box.contains(&(v + m), 1e-12));
        assert_eq!(robust, inside, "{v:?}");
        assert_eq!(d.v_box.contains(&v, 0.0), inside);
    }
}

#[test]
fn steady_segment_matches_line_box_clipping() {
    let d = sample_design();
    let (a, b) = d.steady_segment().unwrap();
    let z = d.z_s;
    // intersections of g·v = c with the four box edges, kept if inside
    let mut hits: Vec<Vector2<f64>> = Vec::new();
    for v0 in [z.lower[0], z.upper[0]] {
        let v1 = (z.c - z.g_eff[0] * v0) / z.g_eff[1];
        if v1 >= z.lower[1] - 1e-12 && v1 <= z.upper[1] + 1e-12 {
            hits.push(Vector2::new(v0, v1));
        }
    }
    for v1 in [z.lower[1], z.upper[1]] {
        let v0 = (z.c - z.g_eff[1] * v1) / z.g_eff[0];
        if v0 >= z.lower[0] - 1e-12 && v0 <= z.upper[0] + 1e-12 {
            hits.push(Vector2::new(v0, v1));
        }
    }
    let lo = hits.iter().min_by(|p, q| p[0].total_cmp(&q[0])).unwrap();
    let hi = hits.iter().max_by(|p, q| p[0].total_cmp(&q[0])).unwrap();
    assert!((a - lo).amax() <= 1e-12 && (b - hi).amax() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn cancellation_on_sample_patient(
        xf in prop::array::uniform4(0.0..20.0f64),
        xs in prop::array::uniform4(0.0..20.0f64),
        v in prop::array::uniform2(0.0..10.0f64),
    ) {
        let d = sample_design();
        let (xf, xs, v) = (FastState(Vector4::from(xf)), SlowState(Vector4::from(xs)), Vector2::from(v));
        let (full, _) = d.model.step(&xf, &xs, &(v + d.gain.apply(&xs)));
        let nominal = d.model.step_nominal(&xf, &v);
        prop_assert!((full.0 - nominal.0).amax() <= 1e-12);
    }

    #[test]
    fn compensated_input_stays_admissible(
        share in prop::array::uniform4(0.0..1.0f64),
        t in prop::array::uniform2(0.0..=1.0f64),
    ) {
        let d = sample_design();
        // slow state scaled so that |D xs| <= m̄
        let raw = Vector4::from(share);
        let m = d.gain.apply(&SlowState(raw)).abs();
        let scale = (d.m_bar[0] / m[0].max(1e-300)).min(d.m_bar[1] / m[1].max(1e-300));
        let xs = SlowState(raw * scale);
        let v = d.v_box.lower + (d.v_box.upper - d.v_box.lower).component_mul(&Vector2::from(t));
        let u = v + d.gain.apply(&xs);
        prop_assert!(d.u_box.contains(&u, 1e-12));
    }

    #[test]
    fn hill_roundtrip(
        e0 in 60.0..100.0f64,
        emax_ratio in 0.6..1.4f64,
        gamma in 0.3..6.0f64,
        ce50p in 0.5..10.0f64,
        ce50r in 1.0..50.0f64,
        frac in 0.02..0.98f64,
        share in 0.0..=1.0f64,
    ) {
        let emax = e0 * emax_ratio;
        let pd = PdParams::new(e0, emax, gamma, ce50p, ce50r).unwrap();
        let lo = (e0 - emax).max(0.0);
        let y = lo + frac * (e0 - lo);
        let c = hill_invert(y, &pd).unwrap();
        let xf = FastState(Vector4::new(0.0, share * c * ce50p, 0.0, (1.0 - share) * c * ce50r));
        prop_assert!((bis_output(&xf, &pd) - y).abs() <= 1e-10);
    }

    #[test]
    fn bis_decreases_in_each_effect_site(
        p4 in 0.0..10.0f64,
        r4 in 0.0..40.0f64,
        dp in 1e-3..1.0f64,
        dr in 1e-3..1.0f64,
    ) {
        let pd = sample_patient().pd;
        let y = bis_output(&FastState(Vector4::new(0.0, p4, 0.0, r4)), &pd);
        let yp = bis_output(&FastState(Vector4::new(0.0, p4 + dp, 0.0, r4)), &pd);
        let yr = bis_output(&FastState(Vector4::new(0.0, p4, 0.0, r4 + dr)), &pd);
        prop_assert!(yp < y && yr < y);
    }

    #[test]
    fn nonnegative_inputs_keep_states_nonnegative(
        inputs in prop::collection::vec(prop::array::uniform2(0.0..20.0f64), 1..60),
    ) {
        let d = sample_design();
        let n = inputs.len();
        let log = simulate_open_loop(&d.model, &d.patient.pd, n, FastState::zeros(), SlowState::zeros(), |k| {
            Vector2::from(inputs[k])
        });
        let states = log.records.iter().flat_map(|r| r.xf.iter().chain(r.xs.iter()));
        prop_assert!(states.chain(log.final_xf.iter()).all(|x| *x >= 0.0));
    }
}
