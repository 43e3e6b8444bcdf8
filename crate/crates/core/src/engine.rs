//! Fixed-step integration of the closed loop, Lyapunov monitoring and run
//! metrics.
//!
//! In the discontinuous sign modes the sign vector is sampled once per step
//! (at the start, which is also when hysteresis latches move) and held over
//! all stages, so each step integrates a smooth vector field. The smooth mode
//! re-evaluates the saturation at every stage.

use serde::{Deserialize, Serialize};

use crate::agents::{passivity_audit, AuditSample, PassivityReport, AUDIT_ERROR_CONSTANT};
use crate::control::{ClosedLoop, ErrorCoordinates, LoopSignals, SignMode, SignSelector};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(Error::param(
                "scheme",
                format!("unknown scheme `{other}` (expected euler or rk4)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationSettings {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Keep every `output_stride`-th step (the final step is always kept).
    #[serde(default = "default_stride")]
    pub output_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 30.0,
            scheme: Scheme::Rk4,
            output_stride: 1,
        }
    }
}

impl IntegrationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::param(
                "t_final",
                format!("must be non-negative, got {}", self.t_final),
            ));
        }
        if self.output_stride == 0 {
            return Err(Error::param("output_stride", "must be at least 1"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// One explicit step of `y' = f(t, y)`.
pub fn step<F>(t: f64, y: &[f64], dt: f64, scheme: Scheme, mut f: F) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    f(t, y, &mut k1);
    match scheme {
        Scheme::Euler => y.iter().zip(&k1).map(|(a, k)| a + dt * k).collect(),
        Scheme::Rk4 => {
            let mut tmp = vec![0.0; n];
            let mut k2 = vec![0.0; n];
            let mut k3 = vec![0.0; n];
            let mut k4 = vec![0.0; n];
            let h = 0.5 * dt;
            axpy_into(y, h, &k1, &mut tmp);
            f(t + h, &tmp, &mut k2);
            axpy_into(y, h, &k2, &mut tmp);
            f(t + h, &tmp, &mut k3);
            axpy_into(y, dt, &k3, &mut tmp);
            f(t + dt, &tmp, &mut k4);
            (0..n)
                .map(|j| y[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
                .collect()
        }
    }
}

fn axpy_into(y: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, y), k) in out.iter_mut().zip(y).zip(k) {
        *o = y + a * k;
    }
}

/// Closed-loop state at time `t`: the flat integrated vector plus the
/// hysteresis latches.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub y: Vec<f64>,
    pub latches: Vec<f64>,
}

/// Logged quantities at one time. Blocks absent from the controller mode
/// are empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub z_tilde: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta_tilde: Vec<f64>,
    pub theta_tilde: Vec<f64>,
    pub xi_tilde: Vec<f64>,
    /// Controller input `u_formation - d_hat` (disturbance not included).
    pub u: Vec<f64>,
    pub u_formation: Vec<f64>,
    pub d: Vec<f64>,
    pub v_r: Vec<f64>,
    pub v_r_error: Vec<f64>,
    /// Sign vector applied on the step starting at `t`.
    pub signs: Vec<f64>,
    pub v: f64,
    pub znorm1: f64,
    pub xi_norm2: f64,
    pub flips_total: u64,
}

/// Huber-regularized absolute value; its derivative is `clamp(s / eps, -1, 1)`.
#[inline]
pub fn huber(s: f64, eps: f64) -> f64 {
    let a = s.abs();
    if a <= eps {
        s * s / (2.0 * eps)
    } else {
        a - 0.5 * eps
    }
}

/// Mode-matched Lyapunov value.
///
/// Formation term `|z_tilde|_1` (Huber-regularized in smooth mode, which
/// makes it the exact integral of the applied input), plus the agents'
/// storage, plus `|eta_tilde|^2 / 2` with a velocity internal model, plus
/// `|theta_tilde|^2 / 2` for internal-model disturbance rejection or
/// `sum_i e_i^T P_i e_i / 2` with `e_i = (xi_tilde_i, theta_tilde_i)` in
/// observer mode.
pub fn lyapunov_value(cl: &ClosedLoop, e: &ErrorCoordinates) -> Result<f64> {
    let formation = match cl.sign_mode() {
        SignMode::Smooth { eps } => e.z_tilde.iter().map(|&s| huber(s, eps)).sum(),
        _ => linalg::norm1(&e.z_tilde),
    };
    let mut v = formation;
    let mut k = 0;
    for a in cl.agents() {
        let n = a.state_dim();
        v += a.storage(&e.xi[k..k + n]);
        k += n;
    }
    v += 0.5 * linalg::dot(&e.eta_tilde, &e.eta_tilde);
    if cl.mode().has_observer() {
        let certs = cl.certificates();
        if certs.len() != cl.n_agents() {
            return Err(Error::Missing("observer certificate".into()));
        }
        let l = cl.layout();
        let (mut kx, mut kt) = (0, 0);
        for (i, cert) in certs.iter().enumerate() {
            let n = l.xi[i].len();
            let q = l.theta[i].as_ref().map_or(0, |r| r.len());
            let mut err = e.xi_tilde[kx..kx + n].to_vec();
            err.extend_from_slice(&e.theta_tilde[kt..kt + q]);
            let mut pe = vec![0.0; n + q];
            linalg::matvec(&cert.p, &err, &mut pe);
            v += 0.5 * linalg::dot(&err, &pe);
            kx += n;
            kt += q;
        }
    } else {
        v += 0.5 * linalg::dot(&e.theta_tilde, &e.theta_tilde);
    }
    Ok(v)
}

/// Largest per-step Lyapunov increase along a sampled series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub max_increase: f64,
    pub worst_time: Option<f64>,
    /// Largest increase beyond its step allowance (sign-hold mismatch plus
    /// `tolerance`); the monitor passes iff this is not positive.
    pub max_excess: f64,
    pub first_violation: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Flags any `V(t_{k+1}) - V(t_k) > tolerance`.
pub fn monitor_series(series: impl IntoIterator<Item = (f64, f64)>, tolerance: f64) -> LyapunovReport {
    let mut mon = Monitor::new(tolerance);
    for (t, v) in series {
        mon.push(t, v, 0.0);
    }
    mon.report()
}

/// `monitor_series` over logged records.
pub fn monitor_lyapunov(records: &[TrajectoryRecord], tolerance: f64) -> LyapunovReport {
    monitor_series(records.iter().map(|r| (r.t, r.v)), tolerance)
}

/// Per-step tolerance of the Lyapunov monitor.
pub const LYAPUNOV_TOLERANCE: f64 = 1e-6;

/// Increase of `|z| - s z` over one step with sign vector `s` held from `a`
/// to `b`, summed over components.
///
/// With `s` held, `V_s = s^T z_tilde + storage + internal-model energy` is
/// nonincreasing along the step (the cross terms cancel for any fixed `s`).
/// The monitored `V` uses `|z_tilde|_1 = V_s + sum(|z| - s z)`, so in the
/// sample-and-hold modes a legitimate per-step rise is bounded by this
/// mismatch term: `2 |z(b)|` for a strict sign that went stale by crossing
/// zero, and the width of the band for a hysteresis latch.
pub fn hold_mismatch_increase(signs: &[f64], a: &[f64], b: &[f64]) -> f64 {
    signs
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&s, (&za, &zb))| ((zb.abs() - s * zb) - (za.abs() - s * za)).max(0.0))
        .sum()
}

struct Monitor {
    tolerance: f64,
    prev: Option<f64>,
    max_increase: f64,
    worst_time: Option<f64>,
    max_excess: f64,
    first_violation: Option<f64>,
}

impl Monitor {
    fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            prev: None,
            max_increase: 0.0,
            worst_time: None,
            max_excess: f64::NEG_INFINITY,
            first_violation: None,
        }
    }

    fn push(&mut self, t: f64, v: f64, allowance: f64) {
        if let Some(p) = self.prev {
            let inc = v - p;
            if inc > self.max_increase {
                self.max_increase = inc;
                self.worst_time = Some(t);
            }
            let excess = inc - allowance - self.tolerance;
            self.max_excess = self.max_excess.max(excess);
            if excess > 0.0 && self.first_violation.is_none() {
                self.first_violation = Some(t);
            }
        }
        self.prev = Some(v);
    }

    fn report(&self) -> LyapunovReport {
        LyapunovReport {
            max_increase: self.max_increase,
            worst_time: self.worst_time,
            max_excess: if self.max_excess.is_finite() {
                self.max_excess
            } else {
                -self.tolerance
            },
            first_violation: self.first_violation,
            tolerance: self.tolerance,
            passed: self.first_violation.is_none(),
        }
    }
}

/// Bounds the slope jumps of every agent's supply on step `k`, where a
/// component of `z_tilde` entered or left the linear range `|z| < eps` of the
/// smooth sign. Each crossing changes the slope of `u_i` by at most
/// `|z'| / eps` per incident edge.
#[allow(clippy::too_many_arguments)]
fn record_saturation_kinks(
    cl: &ClosedLoop,
    eps: f64,
    dt: f64,
    z_a: &[f64],
    z_b: &[f64],
    y_b: &[f64],
    audit: &mut [Vec<AuditSample>],
    k: usize,
) {
    let p = cl.p();
    for (j, (&a, &b)) in z_a.iter().zip(z_b).enumerate() {
        let (ina, inb) = (a.abs() < eps, b.abs() < eps);
        let crossings = if ina != inb {
            1.0
        } else if !ina && a.signum() != b.signum() {
            2.0
        } else {
            continue;
        };
        let jump = crossings * (b - a).abs() / (dt * eps);
        let edge = cl.graph().edges()[j / p];
        let l = j % p;
        for i in [edge.head, edge.tail] {
            let s = &mut audit[i][k];
            let y = s.y[l].abs().max(y_b[i * p + l].abs());
            s.kink += jump * y;
        }
    }
}

/// Time from which a quantity stays inside its band until the end.
struct BandTracker {
    band: f64,
    entered: Option<f64>,
}

impl BandTracker {
    fn new(band: f64) -> Self {
        Self { band, entered: None }
    }

    fn push(&mut self, t: f64, value: f64) {
        if value <= self.band {
            self.entered.get_or_insert(t);
        } else {
            self.entered = None;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub agent: usize,
    pub gamma: f64,
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub spectral_abscissa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub sign_mode: String,
    pub eps: f64,
    pub scheme: String,
    pub dt: f64,
    pub t_final: f64,
    pub steps: usize,
    pub records: usize,
    pub z_tilde_inf: f64,
    pub znorm1: f64,
    pub xi_inf: f64,
    pub xi_norm2: f64,
    pub eta_tilde_inf: Option<f64>,
    pub theta_tilde_final: Option<f64>,
    pub theta_tilde_initial_norm: Option<f64>,
    pub theta_tilde_sup_norm: Option<f64>,
    pub xi_tilde_inf: Option<f64>,
    /// `max_i |v_r_i - v*|_inf` at the final time.
    pub v_r_error_inf: f64,
    pub position_band: f64,
    pub velocity_band: f64,
    pub time_to_position_band: Option<f64>,
    pub time_to_velocity_band: Option<f64>,
    pub v_initial: f64,
    pub v_final: f64,
    pub lyapunov: LyapunovReport,
    pub flips_total: u64,
    pub flips_per_component: Vec<u64>,
    pub passivity: Vec<PassivityReport>,
    pub passivity_passed: bool,
    pub certificates: Vec<CertificateSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub summary: RunSummary,
}

/// Bands and tolerances of a run; `None` fields take their defaults
/// (`2 eps + 10 dt`, `0.02`, `LYAPUNOV_TOLERANCE`, `AUDIT_ERROR_CONSTANT`).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    pub position_band: Option<f64>,
    pub velocity_band: Option<f64>,
    pub lyapunov_tolerance: Option<f64>,
    pub audit_constant: Option<f64>,
}

/// Integrates the closed loop from `initial` with default options.
pub fn run(cl: &ClosedLoop, initial: &[f64], settings: &IntegrationSettings) -> Result<RunOutput> {
    run_with(cl, initial, settings, &RunOptions::default())
}

pub fn run_with(
    cl: &ClosedLoop,
    initial: &[f64],
    settings: &IntegrationSettings,
    opts: &RunOptions,
) -> Result<RunOutput> {
    settings.validate()?;
    let layout = cl.layout();
    if initial.len() != layout.len {
        return Err(Error::dims("initial state", layout.len, initial.len()));
    }
    let dt = settings.dt;
    let steps = settings.n_steps();
    let mode = cl.sign_mode();
    let discontinuous = mode.is_discontinuous();
    let m = cl.n_signs();
    let n = cl.n_agents();
    let p = cl.p();

    let position_band = opts.position_band.unwrap_or(2.0 * mode.eps() + 10.0 * dt);
    let velocity_band = opts.velocity_band.unwrap_or(0.02);
    let mut monitor = Monitor::new(opts.lyapunov_tolerance.unwrap_or(LYAPUNOV_TOLERANCE));
    let mut held_from: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut pos_band = BandTracker::new(position_band);
    let mut vel_band = BandTracker::new(velocity_band);

    let mut selector = SignSelector::new(mode)?;
    let mut state = SimState {
        t: 0.0,
        y: initial.to_vec(),
        latches: Vec::new(),
    };
    let mut signs = vec![0.0; m];
    let mut flip_ref: Vec<Option<f64>> = vec![None; m];
    let mut flips = vec![0u64; m];
    let mut flips_total = 0u64;
    let mut records = Vec::with_capacity(steps / settings.output_stride + 2);
    let mut audit: Vec<Vec<AuditSample>> = vec![Vec::with_capacity(steps + 1); n];
    let mut sig = LoopSignals::default();
    let mut rate = vec![0.0; layout.len];
    let mut theta_init = None;
    let mut theta_sup: Option<f64> = None;
    let mut v_initial = 0.0;
    let mut last: Option<TrajectoryRecord> = None;

    for k in 0..=steps {
        let t = k as f64 * dt;
        state.t = t;
        let e = cl.errors(t, &state.y);
        selector.apply(&e.z_tilde, &mut signs);
        state.latches = selector.latches().to_vec();

        // flips of the binary information: the applied sign in the
        // discontinuous modes, a full swing between the saturation levels in
        // smooth mode
        for (j, &s) in signs.iter().enumerate() {
            let level = if discontinuous || s.abs() >= 1.0 {
                s
            } else {
                continue;
            };
            if let Some(prev) = flip_ref[j] {
                if prev != level {
                    flips[j] += 1;
                    flips_total += 1;
                }
            }
            flip_ref[j] = Some(level);
        }

        cl.eval(t, &state.y, &signs, &mut rate, Some(&mut sig));
        let v = lyapunov_value(cl, &e)?;
        if k == 0 {
            v_initial = v;
        }
        let allowance = match &held_from {
            Some((s, z)) if discontinuous => hold_mismatch_increase(s, z, &e.z_tilde),
            _ => 0.0,
        };
        monitor.push(t, v, allowance);
        if let (SignMode::Smooth { eps }, Some((_, z_prev)), true) = (mode, &held_from, k > 0) {
            record_saturation_kinks(cl, eps, dt, z_prev, &e.z_tilde, &sig.y, &mut audit, k - 1);
        }
        held_from = Some((signs.clone(), e.z_tilde.clone()));

        let znorm1 = linalg::norm1(&e.z_tilde);
        pos_band.push(t, linalg::norm_inf(&e.z_tilde));
        vel_band.push(t, linalg::norm_inf(&e.xi).max(linalg::norm_inf(&e.v_r_error)));
        if !e.theta_tilde.is_empty() {
            let nt = linalg::norm2(&e.theta_tilde);
            theta_init.get_or_insert(nt);
            theta_sup = Some(theta_sup.map_or(nt, |s: f64| s.max(nt)));
        }

        for (i, samples) in audit.iter_mut().enumerate() {
            let r = layout.xi[i].clone();
            let span = i * p..(i + 1) * p;
            let total: Vec<f64> = sig.u[span.clone()]
                .iter()
                .zip(&sig.d[span.clone()])
                .map(|(a, b)| a + b)
                .collect();
            let held = if discontinuous {
                sig.u_formation[span.clone()].to_vec()
            } else {
                vec![0.0; p]
            };
            samples.push(AuditSample {
                t,
                xi: state.y[r].to_vec(),
                u: total,
                u_held: held,
                y: sig.y[span].to_vec(),
                kink: 0.0,
            });
        }

        let record = TrajectoryRecord {
            t,
            x: state.y[layout.x.clone()].to_vec(),
            xi_norm2: linalg::norm2(&e.xi),
            z_tilde: e.z_tilde,
            xi: e.xi,
            eta_tilde: e.eta_tilde,
            theta_tilde: e.theta_tilde,
            xi_tilde: e.xi_tilde,
            u: sig.u.clone(),
            u_formation: sig.u_formation.clone(),
            d: sig.d.clone(),
            v_r: sig.v_r.clone(),
            v_r_error: e.v_r_error,
            signs: signs.clone(),
            v,
            znorm1,
            flips_total,
        };
        if k % settings.output_stride == 0 || k == steps {
            records.push(record.clone());
        }
        last = Some(record);
        if k == steps {
            break;
        }

        let next = if discontinuous {
            step(t, &state.y, dt, settings.scheme, |tt, yy, out| {
                cl.rhs(tt, yy, &signs, out)
            })
        } else {
            let mut zs = vec![0.0; m];
            let mut ss = vec![0.0; m];
            let mut smooth = SignSelector::new(mode)?;
            step(t, &state.y, dt, settings.scheme, |tt, yy, out| {
                cl.z_tilde(yy, &mut zs);
                smooth.apply(&zs, &mut ss);
                cl.rhs(tt, yy, &ss, out)
            })
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup {
                t: t + dt,
                last_record: last.map(Box::new),
            });
        }
        state.y = next;
    }

    let c = opts.audit_constant.unwrap_or(AUDIT_ERROR_CONSTANT);
    let passivity = if steps >= 2 {
        cl.agents()
            .iter()
            .zip(&audit)
            .map(|(a, s)| passivity_audit(a, s, c))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let passivity_passed = passivity.iter().all(|r| r.passed);

    let fin = last.expect("at least one step is recorded");
    let has_eta = cl.mode().has_velocity_model();
    let has_theta = cl.mode().has_disturbance_model();
    let summary = RunSummary {
        mode: cl.mode().name().into(),
        sign_mode: mode.name().into(),
        eps: mode.eps(),
        scheme: settings.scheme.name().into(),
        dt,
        t_final: fin.t,
        steps,
        records: records.len(),
        z_tilde_inf: linalg::norm_inf(&fin.z_tilde),
        znorm1: fin.znorm1,
        xi_inf: linalg::norm_inf(&fin.xi),
        xi_norm2: fin.xi_norm2,
        eta_tilde_inf: has_eta.then(|| linalg::norm_inf(&fin.eta_tilde)),
        theta_tilde_final: has_theta.then(|| linalg::norm_inf(&fin.theta_tilde)),
        theta_tilde_initial_norm: theta_init,
        theta_tilde_sup_norm: theta_sup,
        xi_tilde_inf: cl.mode().has_observer().then(|| linalg::norm_inf(&fin.xi_tilde)),
        v_r_error_inf: linalg::norm_inf(&fin.v_r_error),
        position_band,
        velocity_band,
        time_to_position_band: pos_band.entered,
        time_to_velocity_band: vel_band.entered,
        v_initial,
        v_final: fin.v,
        lyapunov: monitor.report(),
        flips_total,
        flips_per_component: flips,
        passivity,
        passivity_passed,
        certificates: cl
            .certificates()
            .iter()
            .enumerate()
            .map(|(i, c)| CertificateSummary {
                agent: i + 1,
                gamma: c.gamma,
                residual: c.residual,
                min_eigenvalue: c.min_eigenvalue,
                spectral_abscissa: c.spectral_abscissa,
            })
            .collect(),
    };
    Ok(RunOutput { records, summary })
}
