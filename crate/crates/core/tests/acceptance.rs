//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria that cannot be met by the specified system carry a recorded
//! explanation. They still print FAIL; the target only fails if such a
//! criterion unexpectedly passes, if its explanation is not borne out by the
//! evidence checks, or if any other criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use formsim::control::closed_loop::{ClosedLoop, InitialConditions};
use formsim::control::observer::solve_observer_certificate;
use formsim::control::sign::{formation_control, SignMode, SignSelector};
use formsim::engine::{RunOutput, TrajectoryRecord};
use formsim::graph::{Edge, Graph};
use formsim::linalg;
use formsim::scenario::{self, Overrides, Scenario, SignKind};

const LEADER_FOLLOWER: &str = "pentagon_leader_follower";

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Every run the suite performs, keyed by a label, so the audit criterion
/// can inspect all of them.
#[derive(Default)]
struct Runs {
    done: BTreeMap<String, RunOutput>,
}

impl Runs {
    fn get(&mut self, label: &str, sc: &Scenario) -> &RunOutput {
        if !self.done.contains_key(label) {
            let out = sc.run().unwrap_or_else(|e| panic!("{label}: {e}"));
            self.done.insert(label.to_string(), out);
        }
        &self.done[label]
    }

    fn preset(&mut self, name: &str) -> &RunOutput {
        let sc = scenario::preset(name).unwrap();
        self.get(name, &sc)
    }
}

fn with(name: &str, o: Overrides, stride: Option<usize>) -> Scenario {
    let mut sc = scenario::preset(name).unwrap();
    sc.apply_overrides(&o);
    if let Some(s) = stride {
        sc.integration.output_stride = s;
    }
    sc
}

fn last(out: &RunOutput) -> &TrajectoryRecord {
    out.records.last().unwrap()
}

fn check(ok: &mut bool, msgs: &mut Vec<String>, cond: bool, what: String) {
    if !cond {
        *ok = false;
    }
    msgs.push(if cond { what } else { format!("{what} [x]") });
}

fn dense_kron_bt(g: &Graph, p: usize) -> DMatrix<f64> {
    g.incidence().transpose().kronecker(&DMatrix::identity(p, p))
}

fn random_graph(rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.random_range(2..30);
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push(if rng.random_bool(0.5) {
            Edge::new(u, v)
        } else {
            Edge::new(v, u)
        });
    }
    for _ in 0..rng.random_range(0..n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push(Edge::new(a, b));
        }
    }
    Graph::new(n, edges).unwrap()
}

fn algebraic_identities(_: &mut Runs) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut consensus, mut apply, mut adjoint) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let g = random_graph(&mut rng);
        let p = rng.random_range(1..4);
        let (n, m) = (g.n_nodes() * p, g.n_edges() * p);
        let v: Vec<f64> = (0..p).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ones_v: Vec<f64> = (0..g.n_nodes()).flat_map(|_| v.clone()).collect();
        consensus = consensus.max(linalg::norm_inf(&g.apply_bt_kron(p, &ones_v).unwrap()));

        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dense = dense_kron_bt(&g, p);
        let z = g.apply_bt_kron(p, &x).unwrap();
        let bw = g.apply_b_kron(p, &w).unwrap();
        let mut z_ref = vec![0.0; m];
        linalg::matvec(&dense, &x, &mut z_ref);
        let mut bw_ref = vec![0.0; n];
        linalg::matvec(&dense.transpose(), &w, &mut bw_ref);
        for (a, b) in z.iter().zip(&z_ref).chain(bw.iter().zip(&bw_ref)) {
            apply = apply.max((a - b).abs());
        }
        adjoint = adjoint.max((linalg::dot(&z, &w) - linalg::dot(&x, &bw)).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    Outcome::new(
        consensus == 0.0 && apply <= 1e-12 && adjoint <= 1e-12 && elapsed < 1.0,
        format!(
            "200 random graphs: |(B^T(x)I)(1(x)v)| = {consensus:e}, apply vs dense {apply:.1e}, \
             adjointness {adjoint:.1e}, {elapsed:.2}s"
        ),
    )
}

fn known_velocity(runs: &mut Runs) -> Outcome {
    let out = runs.preset("pentagon_known_velocity");
    let s = &out.summary;
    let mut ok = true;
    let mut m = Vec::new();
    check(
        &mut ok,
        &mut m,
        s.z_tilde_inf <= 0.03,
        format!("|z~(30)| = {:.2e} <= 0.03", s.z_tilde_inf),
    );
    check(
        &mut ok,
        &mut m,
        s.xi_inf <= 0.02,
        format!("|xi(30)| = {:.2e} <= 0.02", s.xi_inf),
    );
    check(
        &mut ok,
        &mut m,
        s.lyapunov.passed && s.lyapunov.max_excess <= 0.0,
        format!(
            "max V step increase {:.1e} (tolerance 1e-6)",
            s.lyapunov.max_increase
        ),
    );
    Outcome::new(ok, m.join(", "))
}

fn leader_follower(runs: &mut Runs) -> Outcome {
    let out = runs.preset(LEADER_FOLLOWER);
    let s = &out.summary;
    let rec = last(out);
    let p = 2;
    let followers_err = rec.v_r_error.iter().skip(p).fold(0.0f64, |a, v| a.max(v.abs()));
    let eta = s.eta_tilde_inf.unwrap_or(f64::INFINITY);
    let mut ok = true;
    let mut m = Vec::new();
    check(
        &mut ok,
        &mut m,
        followers_err <= 0.02,
        format!("follower |v_r - (1,1)| = {followers_err:.2e} <= 0.02"),
    );
    check(
        &mut ok,
        &mut m,
        eta <= 0.02,
        format!("|eta~(30)| = {eta:.2e} <= 0.02"),
    );
    check(
        &mut ok,
        &mut m,
        s.z_tilde_inf <= 0.03,
        format!("|z~(30)| = {:.2e} <= 0.03", s.z_tilde_inf),
    );
    Outcome::new(ok, m.join(", "))
}

fn constant_disturbance(runs: &mut Runs) -> Outcome {
    let s = &runs.preset("caseI").summary;
    let theta = s.theta_tilde_final.unwrap_or(f64::INFINITY);
    let mut ok = true;
    let mut m = Vec::new();
    check(
        &mut ok,
        &mut m,
        theta <= 0.05,
        format!("|theta~(30)| = {theta:.3e} <= 0.05"),
    );
    check(
        &mut ok,
        &mut m,
        s.z_tilde_inf <= 0.03,
        format!("|z~(30)| = {:.2e} <= 0.03", s.z_tilde_inf),
    );
    Outcome::new(ok, m.join(", "))
}

/// Closed-loop equilibrium of a constant-exosystem scenario: `z~ = 0`,
/// `xi = 0`, internal models equal to the exosystem states.
fn equilibrium(cl: &ClosedLoop) -> Vec<f64> {
    let cfg = cl.config();
    let p = cl.p();
    let bt = dense_kron_bt(cl.graph(), p);
    let z_star = DMatrix::from_column_slice(cfg.formation.z_star.len(), 1, &cfg.formation.z_star);
    let x = bt.pseudo_inverse(1e-12).unwrap() * z_star;
    let w_v = cfg.reference.state_at(0.0);
    let eta: Vec<f64> = cl.layout().followers().flat_map(|_| w_v.clone()).collect();
    let theta: Vec<f64> = cl.disturbance_states(0.0).concat();
    cl.initial_state(&InitialConditions {
        x: x.as_slice().to_vec(),
        xi: None,
        eta: Some(eta),
        theta: Some(theta),
        xi_hat: None,
    })
    .unwrap()
}

/// Largest real part among the nonzero eigenvalues of the smooth-mode
/// closed loop linearized at its equilibrium; the zero eigenvalues are the
/// rigid translations of the formation.
fn slowest_mode(cl: &ClosedLoop, eps: f64) -> (f64, f64) {
    let y0 = equilibrium(cl);
    let n = y0.len();
    let f = |y: &[f64]| {
        let mut z = vec![0.0; cl.n_signs()];
        cl.z_tilde(y, &mut z);
        let s: Vec<f64> = z.iter().map(|v| (v / eps).clamp(-1.0, 1.0)).collect();
        let mut out = vec![0.0; n];
        cl.rhs(0.0, y, &s, &mut out);
        out
    };
    let h = 1e-6;
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut a, mut b) = (y0.clone(), y0.clone());
        a[j] += h;
        b[j] -= h;
        let (fa, fb) = (f(&a), f(&b));
        for i in 0..n {
            jac[(i, j)] = (fa[i] - fb[i]) / (2.0 * h);
        }
    }
    linalg::eigenvalues(&jac)
        .unwrap()
        .into_iter()
        .filter(|(re, im)| re.hypot(*im) > 1e-6)
        .fold(
            (f64::NEG_INFINITY, 0.0),
            |best, e| if e.0 > best.0 { e } else { best },
        )
}

fn constant_disturbance_evidence(runs: &mut Runs) -> Result<String, String> {
    let sc = scenario::preset("caseI").unwrap();
    let prepared = sc.prepare().map_err(|e| e.to_string())?;
    let eps = sc.controller.eps;
    let (re, im) = slowest_mode(&prepared.closed_loop, eps);
    let theta0 = linalg::norm_inf(&runs.preset("caseI").records[0].theta_tilde);
    let needed = (theta0 / 0.05).ln() / -re;
    if !(-0.09..=-0.07).contains(&re) || needed <= 30.0 {
        return Err(format!("slowest mode {re:.4}{im:+.4}i does not explain the miss"));
    }
    let long = with(
        "caseI",
        Overrides {
            t_final: Some(70.0),
            ..Default::default()
        },
        None,
    );
    let ls = &runs.get("caseI T=70", &long).summary;
    let theta = ls.theta_tilde_final.unwrap();
    if theta > 0.05 || ls.z_tilde_inf > 0.03 {
        return Err(format!("T=70 run still outside the bands (theta~ {theta:.2e})"));
    }
    Ok(format!(
        "slowest closed-loop mode {re:.4}{im:+.4}i needs ~{needed:.0}s to shrink theta~ from \
         {theta0} to 0.05; at T=70 |theta~| = {theta:.1e}, |z~| = {:.1e}",
        ls.z_tilde_inf
    ))
}

fn harmonic_disturbance(runs: &mut Runs) -> Outcome {
    let s = &runs.preset("caseII").summary;
    let (sup, init) = (
        s.theta_tilde_sup_norm.unwrap(),
        s.theta_tilde_initial_norm.unwrap(),
    );
    let mut ok = true;
    let mut m = Vec::new();
    check(
        &mut ok,
        &mut m,
        s.z_tilde_inf <= 0.03,
        format!("|z~(30)| = {:.2e} <= 0.03", s.z_tilde_inf),
    );
    check(
        &mut ok,
        &mut m,
        s.xi_inf <= 0.02,
        format!("|xi(30)| = {:.2e} <= 0.02", s.xi_inf),
    );
    check(
        &mut ok,
        &mut m,
        sup <= 10.0 * init,
        format!("sup |theta~| = {sup:.3} <= 10 x {init:.3}"),
    );
    Outcome::new(ok, m.join(", "))
}

fn observer(runs: &mut Runs) -> Outcome {
    let s = runs.preset("observer").summary.clone();
    let mut ok = true;
    let mut m = Vec::new();
    let bands = [
        ("xi~", s.xi_tilde_inf.unwrap_or(f64::INFINITY)),
        ("theta~", s.theta_tilde_final.unwrap_or(f64::INFINITY)),
        ("z~", s.z_tilde_inf),
        ("eta~", s.eta_tilde_inf.unwrap_or(f64::INFINITY)),
    ];
    for (name, v) in bands {
        check(&mut ok, &mut m, v <= 0.05, format!("|{name}(30)| = {v:.2e}"));
    }
    let cl = scenario::preset("observer")
        .unwrap()
        .prepare()
        .unwrap()
        .closed_loop;
    let cfg = cl.config();
    let (mut worst_res, mut min_eig) = (0.0f64, f64::INFINITY);
    for (i, gains) in cfg.observer_gains.iter().enumerate() {
        let dist = &cfg.disturbances[i];
        // linear agents: the input map is b I
        let b = match scenario::preset("observer")
            .unwrap()
            .agents
            .expand(5, "agents")
            .unwrap()[i]
        {
            scenario::AgentSpec::Linear { b, .. } => b,
            _ => unreachable!("observer preset uses linear agents"),
        };
        let g = DMatrix::identity(2, 2) * b;
        match solve_observer_certificate(&gains.h, &gains.g_d, dist.phi(), &g, dist.gamma()) {
            Ok(c) => {
                worst_res = worst_res.max(c.residual);
                min_eig = min_eig.min(c.min_eigenvalue);
            }
            Err(e) => {
                ok = false;
                m.push(format!("certificate of agent {}: {e}", i + 1));
            }
        }
    }
    check(
        &mut ok,
        &mut m,
        min_eig > 0.0,
        format!("min eig P = {min_eig:.2e} > 0"),
    );
    check(
        &mut ok,
        &mut m,
        worst_res <= 1e-8,
        format!("certificate residual {worst_res:.1e} <= 1e-8"),
    );
    Outcome::new(ok, m.join(", "))
}

/// Flip statistics of the first edge's sign pattern in 0.1 s windows after
/// the first entry into the `0.05` band.
struct Chatter {
    entered: f64,
    windows: usize,
    flip_free: Vec<f64>,
    band_exits: Vec<f64>,
}

fn chatter(records: &[TrajectoryRecord], dt: f64) -> Chatter {
    let band = 0.05 + 10.0 * dt;
    let norm = |r: &TrajectoryRecord| linalg::norm_inf(&r.z_tilde);
    let first = records
        .iter()
        .position(|r| norm(r) <= 0.05)
        .expect("never entered the band");
    let entered = records[first].t;
    let per_window = (0.1 / dt).round() as usize;
    let mut c = Chatter {
        entered,
        windows: 0,
        flip_free: Vec::new(),
        band_exits: Vec::new(),
    };
    let mut k = first;
    while k + per_window < records.len() {
        let w = &records[k..=k + per_window];
        c.windows += 1;
        let flips = |l: usize| w.windows(2).filter(|p| p[0].signs[l] != p[1].signs[l]).count();
        if flips(0) == 0 || flips(1) == 0 {
            c.flip_free.push(w[0].t);
        }
        if w.iter().any(|r| norm(r) > band) {
            c.band_exits.push(w[0].t);
        }
        k += per_window;
    }
    c
}

fn strict_run(runs: &mut Runs, dt: f64) -> Chatter {
    let sc = with(
        LEADER_FOLLOWER,
        Overrides {
            sign_mode: Some(SignKind::Strict),
            dt: Some(dt),
            ..Default::default()
        },
        Some(1),
    );
    chatter(
        &runs
            .get(&format!("{LEADER_FOLLOWER} strict dt={dt:e}"), &sc)
            .records,
        dt,
    )
}

fn chattering(runs: &mut Runs) -> Outcome {
    let c = strict_run(runs, 1e-3);
    Outcome::new(
        c.flip_free.is_empty() && c.band_exits.is_empty(),
        format!(
            "band entered at t={:.3}; {} of {} windows lack a flip of some component of sign(z~_1), \
             {} leave the band |z~| <= 0.06",
            c.entered,
            c.flip_free.len(),
            c.windows,
            c.band_exits.len()
        ),
    )
}

fn chattering_evidence(runs: &mut Runs) -> Result<String, String> {
    let coarse = strict_run(runs, 1e-3);
    let settle = coarse
        .flip_free
        .iter()
        .chain(&coarse.band_exits)
        .fold(coarse.entered, |a, &b| a.max(b + 0.1));
    if settle > 28.0 {
        return Err(format!(
            "no sustained chattering before the end (settles at {settle:.2})"
        ));
    }
    let fine = strict_run(runs, 2.5e-4);
    if fine.flip_free.is_empty() {
        return Err("flip-free windows vanish at dt = 2.5e-4; the miss is a step-size effect".into());
    }
    Ok(format!(
        "the relay loop still converges when it first enters the band; its switching frequency \
         grows as the amplitude shrinks, and from t={settle:.2} every window flips and stays in \
         band; at dt=2.5e-4, {} windows are still flip-free, so the step size does not explain it",
        fine.flip_free.len()
    ))
}

fn flipped_orientation(sc: &Scenario, k: usize) -> Scenario {
    let mut f = sc.clone();
    f.graph.edges[k].swap(0, 1);
    f.formation[k].iter_mut().for_each(|v| *v = -*v);
    f
}

fn invariances(runs: &mut Runs) -> Outcome {
    let mut ok = true;
    let mut m = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pent = scenario::preset(LEADER_FOLLOWER).unwrap().graph().unwrap();
    let mut scale_ok = true;
    for _ in 0..500 {
        let z: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sel = SignSelector::new(SignMode::Strict).unwrap();
        let u = formation_control(&pent, 2, &z, &mut sel).unwrap();
        for alpha in [1e-9, 0.3, 7.0, 1e9] {
            let za: Vec<f64> = z.iter().map(|v| alpha * v).collect();
            scale_ok &= formation_control(&pent, 2, &za, &mut sel).unwrap() == u;
        }
    }
    check(&mut ok, &mut m, scale_ok, "strict u(a z~) = u(z~)".into());

    let mut orient = 0.0f64;
    for kind in [SignKind::Smooth, SignKind::Strict] {
        let base = with(
            LEADER_FOLLOWER,
            Overrides {
                sign_mode: Some(kind),
                t_final: Some(2.0),
                ..Default::default()
            },
            Some(1),
        );
        let mut base = base;
        if kind == SignKind::Strict {
            // sign(0) = +1 is not odd, so the strict selection is orientation
            // invariant only off the zero set; the preset starts with an exact zero
            base.initial.x[0] += 1e-3;
        }
        let reference = base.run().unwrap();
        for k in 0..base.graph.edges.len() {
            let flipped = flipped_orientation(&base, k).run().unwrap();
            for (a, b) in reference.records.iter().zip(&flipped.records) {
                for (p, q) in a.x.iter().zip(&b.x) {
                    orient = orient.max((p - q).abs());
                }
            }
        }
    }
    check(
        &mut ok,
        &mut m,
        orient <= 1e-12,
        format!("edge reorientation changes x by {orient:.1e}"),
    );

    let mut drift = 0.0f64;
    for name in scenario::preset_names() {
        let sc = scenario::preset(name).unwrap();
        let mut exos = vec![sc.reference.build().unwrap()];
        if let Some(d) = &sc.disturbances {
            for e in d.expand(sc.n_agents(), "disturbances").unwrap() {
                exos.push(e.build().unwrap());
            }
        }
        for e in &exos {
            let n0 = linalg::norm2(e.w0());
            for k in 0..=1000 {
                drift = drift.max((linalg::norm2(&e.state_at(k as f64 * 1.37)) - n0).abs());
            }
        }
    }
    check(
        &mut ok,
        &mut m,
        drift <= 1e-10,
        format!("exosystem norm drift {drift:.1e}"),
    );

    let failed: Vec<&String> = runs
        .done
        .iter()
        .filter(|(_, r)| !r.summary.passivity_passed)
        .map(|(k, _)| k)
        .collect();
    check(
        &mut ok,
        &mut m,
        failed.is_empty(),
        format!(
            "passivity audit passed on {}/{} runs {failed:?}",
            runs.done.len() - failed.len(),
            runs.done.len()
        ),
    );
    Outcome::new(ok, m.join(", "))
}

type Criterion = fn(&mut Runs) -> Outcome;
type Evidence = fn(&mut Runs) -> Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion, Option<Evidence>); 8] = [
        ("algebraic identities", algebraic_identities, None),
        ("known-velocity formation", known_velocity, None),
        ("leader-follower velocity estimation", leader_follower, None),
        (
            "constant disturbance rejection",
            constant_disturbance,
            Some(constant_disturbance_evidence),
        ),
        ("harmonic disturbance on a tree", harmonic_disturbance, None),
        ("observer-based rejection", observer, None),
        ("strict-mode chattering", chattering, Some(chattering_evidence)),
        ("invariances and passivity audit", invariances, None),
    ];
    let mut runs = Runs::default();
    let mut broken = 0;
    for (i, (name, criterion, evidence)) in criteria.iter().enumerate() {
        let out = criterion(&mut runs);
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {verdict}: {name}: {}", i + 1, out.detail);
        match (out.pass, evidence) {
            (true, None) => {}
            (true, Some(_)) => {
                broken += 1;
                println!("  passes although recorded as unattainable; update the record");
            }
            (false, None) => broken += 1,
            (false, Some(ev)) => match ev(&mut runs) {
                Ok(why) => println!("  recorded as unattainable: {why}"),
                Err(why) => {
                    broken += 1;
                    println!("  explanation not confirmed: {why}");
                }
            },
        }
    }
    if broken == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{broken} criteria failed without a confirmed explanation");
        ExitCode::FAILURE
    }
}
