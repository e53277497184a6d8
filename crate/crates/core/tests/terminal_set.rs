mod common;

use anesthesia_mpc::design::{load_terminal_set, Design};
use anesthesia_mpc::linalg::{cross_block_max, to_dyn};
use anesthesia_mpc::pkpd::{FastState, SlowState};
use anesthesia_mpc::sim::{simulate_closed_loop, SimOptions};
use anesthesia_mpc::terminal::{build_w_lambda, max_admissible_invariant_set, Matrix6};
use anesthesia_mpc::validate::sample_polytope;
use anesthesia_mpc::Error;
use nalgebra::{DMatrix, DVector, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{default_settings, sample_design, sample_patient};

const TABLE_K: [[f64; 4]; 2] = [[0.671, 1.58, 0.0, 0.0], [0.0, 0.0, 0.677, 1.267]];
const TABLE_P: [[f64; 4]; 4] = [
    [1.914, 4.423, 0.0, 0.0],
    [4.423, 218.025, 0.0, 0.0],
    [0.0, 0.0, 1.853, 3.758],
    [0.0, 0.0, 3.758, 58.574],
];

#[test]
fn riccati_solution_is_block_diagonal_and_close_to_published_gains() {
    let d = sample_design();
    let t = &d.terminal;
    assert!(t.dare_residual <= 1e-8);
    assert!(cross_block_max(&t.p) <= 1e-10 && cross_block_max(&t.k) <= 1e-10);
    assert!(t.p.cholesky().is_some());
    assert!(t.k.iter().all(|k| *k <= 0.0));
    for i in 0..2 {
        for j in 0..4 {
            let e = TABLE_K[i][j];
            if e != 0.0 {
                let rel = (t.k[(i, j)].abs() - e).abs() / e;
                assert!(rel <= 0.10, "K[{i}][{j}] = {} vs {e}", t.k[(i, j)]);
            }
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            let e = TABLE_P[i][j];
            if e != 0.0 {
                let rel = (t.p[(i, j)] - e).abs() / e;
                assert!(rel <= 0.10, "P[{i}][{j}] = {} vs {e}", t.p[(i, j)]);
            }
        }
    }
}

#[test]
fn sample_patient_controllability_index_is_two() {
    let d = sample_design();
    assert_eq!(d.controllability_index, 2);
    assert!(d.cfg.horizon >= d.controllability_index);
}

#[test]
fn extended_dynamics_fixed_points_are_steady_pairs() {
    let d = sample_design();
    let a_w = d.terminal.a_w;
    let m = d.model.equilibrium_map().unwrap();
    // null space of A_w - I
    let svd = (a_w - Matrix6::identity()).svd(true, true);
    let v_t = svd.v_t.unwrap();
    let null: Vec<SVector<f64, 6>> = (0..6)
        .filter(|&i| svd.singular_values[i] <= 1e-10)
        .map(|i| v_t.row(i).transpose())
        .collect();
    assert_eq!(null.len(), 2);
    for w in null {
        let x = w.fixed_rows::<4>(0).into_owned();
        let v = w.fixed_rows::<2>(4).into_owned();
        assert!((x - m * v).amax() <= 1e-9 * (1.0 + x.amax()));
    }
}

#[test]
fn sampled_terminal_states_stay_admissible() {
    let d = sample_design();
    let t = &d.terminal;
    let w_lambda = build_w_lambda(&t.k, &t.psi, &d.v_box, t.lambda).unwrap();
    let a_w = to_dyn(&t.a_w);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples = sample_polytope(&t.x_a, 1000, &mut rng).unwrap();
    for w0 in samples {
        let mut w = w0;
        for _ in 0..200 {
            w = &a_w * &w;
            assert!(t.x_a.max_violation(&w) <= 1e-8);
            assert!(w_lambda.max_violation(&w) <= 1e-8);
        }
    }
}

#[test]
fn determination_index_ignores_row_scaling() {
    let d = sample_design();
    let t = &d.terminal;
    let w = build_w_lambda(&t.k, &t.psi, &d.v_box, t.lambda).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = DVector::from_fn(w.n_rows(), |_, _| 10f64.powf(rng.gen_range(-3.0..3.0)));
    let scaled = anesthesia_mpc::geometry::Polyhedron::new(
        DMatrix::from_diagonal(&s) * &w.f,
        w.g.component_mul(&s),
    )
    .unwrap();
    let a = to_dyn(&t.a_w);
    let base = max_admissible_invariant_set(&a, &w).unwrap();
    let other = max_admissible_invariant_set(&a, &scaled).unwrap();
    assert_eq!(base.k_star, other.k_star);
    assert_eq!(base.k_star, t.k_star);
    // same set: every row of one is implied by the other
    for (p, q) in [(&base.set, &other.set), (&other.set, &base.set)] {
        for i in 0..q.n_rows() {
            let row = q.f.row(i).transpose();
            assert!(p.implies(&row, q.g[i]).unwrap());
        }
    }
}

#[test]
fn lambda_one_fails_finite_determination() {
    let mut s = default_settings();
    s.lambda = 1.0;
    assert!(matches!(
        Design::build(&sample_patient(), &s),
        Err(Error::FiniteDetermination(_))
    ));
}

#[test]
fn bundle_round_trip_reproduces_the_closed_loop() {
    let d = sample_design();
    let dir = std::env::temp_dir().join(format!("anesthesia-mpc-bundle-{}", std::process::id()));
    d.write_bundle(&dir).unwrap();
    let x_a = load_terminal_set(&dir).unwrap();
    assert_eq!(x_a, d.terminal.x_a);
    let loaded = Design::build_with_terminal_set(&d.patient, &d.settings, Some(x_a)).unwrap();
    let run = |design: &Design| {
        let mut c = design.controller().unwrap();
        simulate_closed_loop(
            &design.model,
            &design.patient.pd,
            &mut c,
            FastState::zeros(),
            SlowState::zeros(),
            &SimOptions::new(120.0),
        )
        .unwrap()
    };
    assert_eq!(run(&d), run(&loaded));
    std::fs::remove_dir_all(&dir).unwrap();
}
