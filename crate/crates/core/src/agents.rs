//! Strictly passive agent dynamics `xi' = f(xi) + g(xi) u`, `y = h(xi)` with
//! their storage / dissipation certificates, and the kinematic position layer
//! `x' = y + v_r`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// A user-pluggable agent. Implementations are black boxes; [`AgentModel::new`]
/// certifies them by sampling before they are admitted to a simulation.
pub trait PassiveDynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn drift(&self, xi: &[f64], out: &mut [f64]);
    fn input_map(&self, xi: &[f64]) -> DMatrix<f64>;
    fn output(&self, xi: &[f64], out: &mut [f64]);

    fn storage(&self, xi: &[f64]) -> f64;
    fn storage_gradient(&self, xi: &[f64], out: &mut [f64]);
    fn dissipation(&self, xi: &[f64]) -> f64;

    /// `out += g(xi) u`. Override when `g` has structure.
    fn add_input(&self, xi: &[f64], u: &[f64], out: &mut [f64]) {
        linalg::matvec_add(&self.input_map(xi), u, out);
    }

    /// `Some(g)` when the input map does not depend on the state.
    fn constant_input_map(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// True when `h(xi) = xi`.
    fn output_is_state(&self) -> bool {
        false
    }
}

/// `xi' = -a xi + b u`, `y = xi`, with `S = |xi|^2 / (2b)` and
/// `W = (a/b) |xi|^2`; the passivity inequality holds with equality.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPassiveAgent {
    pub p: usize,
    pub a: f64,
    pub b: f64,
}

impl LinearPassiveAgent {
    pub fn new(p: usize, a: f64, b: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::param("p", "must be positive"));
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::param("a", "damping gain must be positive"));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::param("b", "input gain must be positive"));
        }
        Ok(Self { p, a, b })
    }

    /// `W(xi) >= |xi|^2` for all `xi`.
    pub fn dissipation_dominates_quadratic(&self) -> bool {
        self.a / self.b >= 1.0
    }
}

impl PassiveDynamics for LinearPassiveAgent {
    fn state_dim(&self) -> usize {
        self.p
    }
    fn input_dim(&self) -> usize {
        self.p
    }
    fn drift(&self, xi: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(xi) {
            *o = -self.a * x;
        }
    }
    fn input_map(&self, _xi: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.p, self.p) * self.b
    }
    fn add_input(&self, _xi: &[f64], u: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(u) {
            *o += self.b * v;
        }
    }
    fn output(&self, xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(xi);
    }
    fn storage(&self, xi: &[f64]) -> f64 {
        linalg::dot(xi, xi) / (2.0 * self.b)
    }
    fn storage_gradient(&self, xi: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(xi) {
            *o = x / self.b;
        }
    }
    fn dissipation(&self, xi: &[f64]) -> f64 {
        self.a / self.b * linalg::dot(xi, xi)
    }
    fn constant_input_map(&self) -> Option<DMatrix<f64>> {
        Some(self.input_map(&[]))
    }
    fn output_is_state(&self) -> bool {
        true
    }
}

/// `xi' = -a xi - c xi.^3 + b u`, `y = xi`; same storage as the linear agent,
/// `W = (a |xi|^2 + c sum xi^4) / b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicDampedAgent {
    pub p: usize,
    pub a: f64,
    pub c: f64,
    pub b: f64,
}

impl CubicDampedAgent {
    pub fn new(p: usize, a: f64, c: f64, b: f64) -> Result<Self> {
        LinearPassiveAgent::new(p, a, b)?;
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::param("c", "cubic damping must be non-negative"));
        }
        Ok(Self { p, a, c, b })
    }
}

impl PassiveDynamics for CubicDampedAgent {
    fn state_dim(&self) -> usize {
        self.p
    }
    fn input_dim(&self) -> usize {
        self.p
    }
    fn drift(&self, xi: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(xi) {
            *o = -self.a * x - self.c * x * x * x;
        }
    }
    fn input_map(&self, _xi: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.p, self.p) * self.b
    }
    fn add_input(&self, _xi: &[f64], u: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(u) {
            *o += self.b * v;
        }
    }
    fn output(&self, xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(xi);
    }
    fn storage(&self, xi: &[f64]) -> f64 {
        linalg::dot(xi, xi) / (2.0 * self.b)
    }
    fn storage_gradient(&self, xi: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(xi) {
            *o = x / self.b;
        }
    }
    fn dissipation(&self, xi: &[f64]) -> f64 {
        (self.a * linalg::dot(xi, xi) + self.c * xi.iter().map(|x| x.powi(4)).sum::<f64>()) / self.b
    }
    fn constant_input_map(&self) -> Option<DMatrix<f64>> {
        Some(self.input_map(&[]))
    }
    fn output_is_state(&self) -> bool {
        true
    }
}

/// Result of the sampled certification run at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub samples: usize,
    /// Largest observed `grad S . (f + g u) + W - y^T u` (should be <= 0).
    pub max_passivity_slack: f64,
    /// `W` vanished at some nonzero probe: sampling cannot tell a positive
    /// definite dissipation from a semidefinite one there.
    pub dissipation_semidefinite: bool,
    /// `W(xi) >= |xi|^2` held on every probe.
    pub dissipation_dominates_quadratic: bool,
}

/// A certified passive agent.
#[derive(Clone)]
pub struct AgentModel {
    dynamics: Arc<dyn PassiveDynamics>,
    certification: Certification,
}

impl fmt::Debug for AgentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentModel")
            .field("dynamics", &self.dynamics)
            .field("certification", &self.certification)
            .finish()
    }
}

const PASSIVITY_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;

impl AgentModel {
    pub fn new(dynamics: impl PassiveDynamics + 'static) -> Result<Self> {
        Self::from_arc(Arc::new(dynamics))
    }

    pub fn linear(p: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(LinearPassiveAgent::new(p, a, b)?)
    }

    pub fn from_arc(dynamics: Arc<dyn PassiveDynamics>) -> Result<Self> {
        let certification = certify(dynamics.as_ref())?;
        Ok(Self {
            dynamics,
            certification,
        })
    }

    pub fn dynamics(&self) -> &dyn PassiveDynamics {
        self.dynamics.as_ref()
    }

    pub fn certification(&self) -> &Certification {
        &self.certification
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    /// `f(xi) + g(xi) u`.
    pub fn rhs(&self, xi: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let n = self.state_dim();
        if xi.len() != n {
            return Err(Error::dims("agent state", n, xi.len()));
        }
        if u.len() != self.input_dim() {
            return Err(Error::dims("agent input", self.input_dim(), u.len()));
        }
        let mut out = vec![0.0; n];
        self.rhs_into(xi, u, &mut out);
        Ok(out)
    }

    pub(crate) fn rhs_into(&self, xi: &[f64], u: &[f64], out: &mut [f64]) {
        self.dynamics.drift(xi, out);
        self.dynamics.add_input(xi, u, out);
    }

    pub fn output(&self, xi: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.input_dim()];
        self.dynamics.output(xi, &mut y);
        y
    }

    pub fn storage(&self, xi: &[f64]) -> f64 {
        self.dynamics.storage(xi)
    }

    pub fn dissipation(&self, xi: &[f64]) -> f64 {
        self.dynamics.dissipation(xi)
    }
}

fn probe_states(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut probes = Vec::new();
    for &r in &[1e-2, 0.1, 1.0, 3.0] {
        for j in 0..n {
            for s in [-1.0, 1.0] {
                let mut v = vec![0.0; n];
                v[j] = s * r;
                probes.push(v);
            }
        }
        probes.push(vec![r / (n as f64).sqrt(); n]);
        for _ in 0..8 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nv = linalg::norm2(&v).max(1e-12);
            probes.push(v.iter().map(|c| c * r / nv).collect());
        }
    }
    probes
}

fn probe_inputs(p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut inputs = vec![vec![0.0; p]];
    for j in 0..p {
        for s in [-1.0, 1.0] {
            let mut v = vec![0.0; p];
            v[j] = s * 2.0;
            inputs.push(v);
        }
    }
    for _ in 0..4 {
        inputs.push((0..p).map(|_| rng.random_range(-5.0..5.0)).collect());
    }
    inputs
}

fn certify(d: &dyn PassiveDynamics) -> Result<Certification> {
    let n = d.state_dim();
    let p = d.input_dim();
    if n == 0 || p == 0 {
        return Err(Error::AgentRejected(
            "state and input dimensions must be positive".into(),
        ));
    }
    let zero = vec![0.0; n];
    let mut buf = vec![0.0; n];
    d.drift(&zero, &mut buf);
    if linalg::norm_inf(&buf) > 1e-12 {
        return Err(Error::AgentRejected("f(0) != 0".into()));
    }
    let mut y = vec![0.0; p];
    d.output(&zero, &mut y);
    if linalg::norm_inf(&y) > 1e-12 {
        return Err(Error::AgentRejected("h(0) != 0".into()));
    }
    let g0 = d.input_map(&zero);
    if g0.nrows() != n || g0.ncols() != p {
        return Err(Error::AgentRejected(format!(
            "g(0) is {}x{}, expected {}x{}",
            g0.nrows(),
            g0.ncols(),
            n,
            p
        )));
    }
    if linalg::rank(&g0, RANK_TOL) < p {
        return Err(Error::AgentRejected("g(0) is not full column rank".into()));
    }
    if d.storage(&zero).abs() > 1e-12 {
        return Err(Error::AgentRejected("S(0) != 0".into()));
    }
    if d.dissipation(&zero).abs() > 1e-12 {
        return Err(Error::AgentRejected("W(0) != 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x005E_ED0F_A6E7);
    let states = probe_states(n, &mut rng);
    let inputs = probe_inputs(p, &mut rng);

    let mut grad = vec![0.0; n];
    let mut rate = vec![0.0; n];
    let mut max_slack = f64::NEG_INFINITY;
    let mut semidefinite = false;
    let mut dominates = true;
    let mut samples = 0;
    for xi in &states {
        let s = d.storage(xi);
        if !(s > 0.0) {
            return Err(Error::AgentRejected(format!(
                "storage not positive at xi = {xi:?} (S = {s})"
            )));
        }
        let w = d.dissipation(xi);
        if w < 0.0 || !w.is_finite() {
            return Err(Error::AgentRejected(format!(
                "dissipation negative at xi = {xi:?} (W = {w})"
            )));
        }
        if w == 0.0 {
            semidefinite = true;
        }
        if w < linalg::dot(xi, xi) * (1.0 - 1e-12) {
            dominates = false;
        }
        d.storage_gradient(xi, &mut grad);
        d.output(xi, &mut y);
        for u in &inputs {
            d.drift(xi, &mut rate);
            d.add_input(xi, u, &mut rate);
            let lhs = linalg::dot(&grad, &rate);
            let rhs = -w + linalg::dot(&y, u);
            let slack = lhs - rhs;
            let scale = 1.0 + lhs.abs() + w.abs() + linalg::dot(&y, u).abs();
            if slack > PASSIVITY_TOL * scale {
                return Err(Error::AgentRejected(format!(
                    "passivity inequality violated at xi = {xi:?}, u = {u:?}: \
                     grad S . (f + g u) = {lhs}, -W + y^T u = {rhs}"
                )));
            }
            max_slack = max_slack.max(slack);
            samples += 1;
        }
    }
    Ok(Certification {
        samples,
        max_passivity_slack: max_slack,
        dissipation_semidefinite: semidefinite,
        dissipation_dominates_quadratic: dominates,
    })
}

/// Stacked positions; `x' = h(xi) + v_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicLayer {
    pub x: Vec<f64>,
}

impl KinematicLayer {
    pub fn rate(outputs: &[f64], v_r: &[f64], out: &mut [f64]) {
        for ((o, y), v) in out.iter_mut().zip(outputs).zip(v_r) {
            *o = y + v;
        }
    }
}

/// One sample of an agent trajectory.
///
/// `u` is the total agent input at `t`. `u_held` is the part of `u` that the
/// integrator held constant over `[t, t + dt)` (zero for continuous control);
/// at the right end of that interval the input is therefore
/// `u(t + dt) - u_held(t + dt) + u_held(t)`. `kink` bounds the total jump of
/// the supply's time derivative inside `(t, t + dt)`, nonzero only where a
/// continuous but piecewise-smooth input switches branch.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditSample {
    pub t: f64,
    pub xi: Vec<f64>,
    pub u: Vec<f64>,
    pub u_held: Vec<f64>,
    pub y: Vec<f64>,
    pub kink: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PassivityReport {
    /// Largest `S'_fd + W - y^T u` over the intervals.
    pub max_violation: f64,
    pub worst_time: f64,
    /// Base tolerance `c dt^2 + 1e-8`.
    pub tolerance: f64,
    /// Largest violation minus its interval tolerance; the audit passes iff
    /// this is not positive.
    pub max_excess: f64,
    pub passed: bool,
    pub intervals: usize,
}

/// Default second-order error constant of the audit tolerance `C dt^2 + 1e-8`.
pub const AUDIT_ERROR_CONSTANT: f64 = 50.0;

/// Audits `S' <= -W + y^T u` along a uniformly sampled trajectory.
///
/// On every interval the storage rate is the central difference at the
/// interval midpoint, `(S(t+dt) - S(t)) / dt`, and is compared with the mean
/// supply `-W + y^T u` under the input actually applied on that interval.
/// The mean uses Simpson's rule with the midpoint state from cubic Hermite
/// interpolation (end slopes from the model), so stiff agents do not inflate
/// the error; the check passes iff every violation is below
/// `c dt^2 + 1e-8 + kink dt / 4`. A continuous input is interpolated to the
/// midpoint with the second difference of the neighbouring interval (fast
/// inputs would otherwise dominate the error). A slope jump inside the interval
/// degrades the rule to the trapezoid rule, whose sharp error is `kink dt / 8`;
/// one inside the neighbouring interval spoils the second difference by at
/// most `kink dt / 12`, so `kink` here is the sum over both intervals.
pub fn passivity_audit(model: &AgentModel, samples: &[AuditSample], c: f64) -> Result<PassivityReport> {
    if samples.len() < 3 {
        return Err(Error::param(
            "trajectory",
            format!("passivity audit needs at least 3 samples, got {}", samples.len()),
        ));
    }
    let dt = samples[1].t - samples[0].t;
    if !(dt > 0.0) {
        return Err(Error::param("trajectory", "sample times must increase"));
    }
    for w in samples.windows(2) {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::param("trajectory", "samples must lie on a uniform grid"));
        }
    }
    let supply = |xi: &[f64], y: &[f64], u: &[f64]| -model.dissipation(xi) + linalg::dot(y, u);

    let tolerance = c * dt * dt + 1e-8;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_t = samples[0].t;
    let mut excess = f64::NEG_INFINITY;
    let continuous = |s: &AuditSample| s.u_held.iter().all(|&h| h == 0.0);
    for (k, w) in samples.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        // neighbouring interval, as (first sample of the three-point stencil, its interval)
        let (stencil, nb) = if k + 2 < samples.len() {
            ([a, b, &samples[k + 2]], b)
        } else {
            ([&samples[k - 1], a, b], &samples[k - 1])
        };
        let rate = (model.storage(&b.xi) - model.storage(&a.xi)) / dt;
        let u_right: Vec<f64> =
            b.u.iter()
                .zip(&b.u_held)
                .zip(&a.u_held)
                .map(|((u, hb), ha)| u - hb + ha)
                .collect();
        let da = model.rhs(&a.xi, &a.u)?;
        let db = model.rhs(&b.xi, &u_right)?;
        let xi_m: Vec<f64> = (0..a.xi.len())
            .map(|j| 0.5 * (a.xi[j] + b.xi[j]) + dt / 8.0 * (da[j] - db[j]))
            .collect();
        let curved = stencil.iter().all(|s| continuous(s));
        let u_m: Vec<f64> = (0..a.u.len())
            .map(|j| {
                let mid = 0.5 * (a.u[j] + u_right[j]);
                if curved {
                    mid - (stencil[0].u[j] - 2.0 * stencil[1].u[j] + stencil[2].u[j]) / 8.0
                } else {
                    mid
                }
            })
            .collect();
        let mean = (supply(&a.xi, &a.y, &a.u)
            + 4.0 * supply(&xi_m, &model.output(&xi_m), &u_m)
            + supply(&b.xi, &b.y, &u_right))
            / 6.0;
        let v = rate - mean;
        if v > worst {
            worst = v;
            worst_t = 0.5 * (a.t + b.t);
        }
        let kink = a.kink + if curved { nb.kink } else { 0.0 };
        excess = excess.max(v - tolerance - kink * dt / 4.0);
    }
    Ok(PassivityReport {
        max_violation: worst,
        worst_time: worst_t,
        tolerance,
        max_excess: excess,
        passed: excess <= 0.0,
        intervals: samples.len() - 1,
    })
}
