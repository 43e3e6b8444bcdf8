use nalgebra::DMatrix;

use formsim::engine::{lyapunov_value, RunOutput, Scheme};
use formsim::linalg;
use formsim::scenario::{self, Overrides, Scenario, SignKind};

const SCENARIO_A: &str = "pentagon_leader_follower";

fn scenario_a(o: Overrides, stride: usize) -> Scenario {
    let mut sc = scenario::preset(SCENARIO_A).unwrap();
    sc.apply_overrides(&o);
    sc.integration.output_stride = stride;
    sc
}

fn run(sc: &Scenario) -> RunOutput {
    sc.run().unwrap()
}

#[test]
fn final_error_converges_at_least_linearly_under_refinement() {
    let finals: Vec<f64> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&dt| {
            let sc = scenario_a(
                Overrides {
                    dt: Some(dt),
                    ..Default::default()
                },
                100,
            );
            run(&sc).summary.znorm1
        })
        .collect();
    let (coarse, fine) = ((finals[0] - finals[1]).abs(), (finals[1] - finals[2]).abs());
    assert!(fine <= 0.55 * coarse, "{finals:?}");
    assert!(coarse <= 0.1 * finals[2], "{finals:?}");
}

/// Largest state deviation between Euler and RK4 over `[0, 1]`.
fn scheme_gap(dt: f64) -> f64 {
    let mk = |scheme| {
        scenario_a(
            Overrides {
                dt: Some(dt),
                t_final: Some(1.0),
                scheme: Some(scheme),
                ..Default::default()
            },
            1,
        )
    };
    let (e, r) = (run(&mk(Scheme::Euler)), run(&mk(Scheme::Rk4)));
    assert_eq!(e.records.len(), r.records.len());
    let mut gap = 0.0f64;
    for (a, b) in e.records.iter().zip(&r.records) {
        let blocks = [(&a.x, &b.x), (&a.xi, &b.xi), (&a.eta_tilde, &b.eta_tilde)];
        for (u, v) in blocks {
            for (p, q) in u.iter().zip(v.iter()) {
                gap = gap.max((p - q).abs());
            }
        }
    }
    gap
}

#[test]
fn euler_and_rk4_agree_to_first_order() {
    let dts = [4e-3, 2e-3, 1e-3];
    let gaps: Vec<f64> = dts.iter().map(|&dt| scheme_gap(dt)).collect();
    let c = gaps.iter().zip(&dts).map(|(g, dt)| g / dt).fold(0.0, f64::max);
    for w in gaps.windows(2) {
        assert!(w[1] < w[0], "{gaps:?}");
        let ratio = w[0] / w[1];
        assert!((1.6..2.5).contains(&ratio), "{gaps:?}");
    }
    for (g, dt) in gaps.iter().zip(&dts) {
        assert!(*g <= c * dt);
    }
    assert!(c < 10.0, "{gaps:?}");
}

#[test]
fn strict_mode_keeps_switching_inside_the_band_near_convergence() {
    let dt = 1e-3;
    let sc = scenario_a(
        Overrides {
            sign_mode: Some(SignKind::Strict),
            ..Default::default()
        },
        1,
    );
    let out = run(&sc);
    let tail: Vec<_> = out.records.iter().filter(|r| r.t >= 25.0 - 1e-9).collect();
    for r in &tail {
        assert!(linalg::norm_inf(&r.z_tilde) <= 0.05 + 10.0 * dt, "t = {}", r.t);
    }
    for second in tail.chunks(1000).filter(|c| c.len() == 1000) {
        assert!(second.last().unwrap().flips_total > second[0].flips_total + 10);
    }
}

#[test]
fn initial_lyapunov_value_of_scenario_a() {
    // V(0) = |z~(0)|_1 + S(xi(0)) + |eta~(0)|^2 / 2 with the strict selection,
    // from a hand-assembled incidence matrix
    let mut b = DMatrix::<f64>::zeros(5, 6);
    for (k, (head, tail)) in [(2, 1), (3, 2), (4, 2), (4, 3), (5, 3), (5, 4)]
        .iter()
        .enumerate()
    {
        b[(head - 1, k)] = 1.0;
        b[(tail - 1, k)] = -1.0;
    }
    let bt = b.transpose().kronecker(&DMatrix::identity(2, 2));
    let s3 = 3f64.sqrt();
    // the fourth entry with the sign that closes the pentagon
    let z_star = [0.0, 2.0, 1.0, s3, 2.0, 0.0, 1.0, -s3, 1.0, -2.0 - s3, 0.0, -2.0];
    let sc = scenario_a(
        Overrides {
            sign_mode: Some(SignKind::Strict),
            ..Default::default()
        },
        1,
    );
    assert_eq!(sc.formation.concat(), z_star.to_vec());
    let x0 = DMatrix::from_column_slice(10, 1, &sc.initial.x);
    let z = &bt * x0;
    let z1: f64 = z.iter().zip(&z_star).map(|(a, b)| (a - b).abs()).sum();
    // xi(0) = 0; followers start with eta = 0 while v* = (1, 1)
    let expected = z1 + 0.5 * 4.0 * 2.0;

    let prepared = sc.prepare().unwrap();
    let cl = &prepared.closed_loop;
    let e = cl.errors(0.0, &prepared.initial_state);
    let v = lyapunov_value(cl, &e).unwrap();
    assert!((v - expected).abs() <= 1e-12, "{v} vs {expected}");
    assert!((run(&sc).records[0].v - expected).abs() <= 1e-12);
}
