//! Assembly of the full closed loop over the flat state
//! `[x, xi, eta (followers), theta, xi_hat]`.
//!
//! Exosystem states are not part of the vector: they are evaluated in closed
//! form at the requested time.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::agents::AgentModel;
use crate::control::internal_model::internal_model_into;
use crate::control::observer::{
    observer_rhs_into, shared_gamma, solve_observer_certificate_with_gamma, ObserverCertificate,
};
use crate::control::sign::{formation_input_from_signs, SignMode};
use crate::error::{Error, Hypothesis, Result};
use crate::exosystem::ExosystemSpec;
use crate::graph::{FormationSpec, Graph};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// Every agent knows `v*`; sign control only.
    KnownVelocity,
    /// Only the leader knows `v*`; followers run a velocity internal model.
    LeaderFollower,
    /// Leader-follower with constant reference and constant matched
    /// disturbances rejected by a per-agent internal model.
    LeaderFollowerConstDist,
    /// Known velocity with harmonic matched disturbances; requires a tree.
    KnownVelHarmonicDist,
    /// Leader-follower with an observer-driven disturbance internal model.
    ObserverBased,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 5] = [
        ControllerMode::KnownVelocity,
        ControllerMode::LeaderFollower,
        ControllerMode::LeaderFollowerConstDist,
        ControllerMode::KnownVelHarmonicDist,
        ControllerMode::ObserverBased,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerMode::KnownVelocity => "known_velocity",
            ControllerMode::LeaderFollower => "leader_follower",
            ControllerMode::LeaderFollowerConstDist => "leader_follower_const_dist",
            ControllerMode::KnownVelHarmonicDist => "known_vel_harmonic_dist",
            ControllerMode::ObserverBased => "observer_based",
        }
    }

    pub fn has_velocity_model(&self) -> bool {
        matches!(
            self,
            ControllerMode::LeaderFollower
                | ControllerMode::LeaderFollowerConstDist
                | ControllerMode::ObserverBased
        )
    }

    pub fn has_disturbance_model(&self) -> bool {
        matches!(
            self,
            ControllerMode::LeaderFollowerConstDist
                | ControllerMode::KnownVelHarmonicDist
                | ControllerMode::ObserverBased
        )
    }

    pub fn has_observer(&self) -> bool {
        matches!(self, ControllerMode::ObserverBased)
    }
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Observer gains of one agent: `H` (`n x n`) and `G_d` (`q_d x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains {
    pub h: DMatrix<f64>,
    pub g_d: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopConfig {
    pub graph: Graph,
    pub formation: FormationSpec,
    pub agents: Vec<AgentModel>,
    pub mode: ControllerMode,
    pub sign_mode: SignMode,
    /// 0-based index of the agent that knows `v*`.
    pub leader: usize,
    /// Reference-velocity generator `v* = Gamma_v w_v(t)`.
    pub reference: ExosystemSpec,
    /// One disturbance generator per agent, or empty.
    pub disturbances: Vec<ExosystemSpec>,
    /// One gain pair per agent in observer mode, otherwise empty.
    pub observer_gains: Vec<ObserverGains>,
}

/// Index ranges of each block inside the flat state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub n_agents: usize,
    pub p: usize,
    pub x: Range<usize>,
    pub xi: Vec<Range<usize>>,
    pub eta: Vec<Option<Range<usize>>>,
    pub theta: Vec<Option<Range<usize>>>,
    pub xi_hat: Vec<Option<Range<usize>>>,
    pub len: usize,
}

impl StateLayout {
    fn build(cfg: &ClosedLoopConfig) -> Self {
        let n = cfg.agents.len();
        let p = cfg.formation.p;
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let x = take(n * p);
        let xi: Vec<_> = cfg.agents.iter().map(|a| take(a.state_dim())).collect();
        let q = cfg.reference.state_dim();
        let eta: Vec<_> = (0..n)
            .map(|i| (cfg.mode.has_velocity_model() && i != cfg.leader).then(|| take(q)))
            .collect();
        let theta: Vec<_> = (0..n)
            .map(|i| {
                cfg.mode
                    .has_disturbance_model()
                    .then(|| take(cfg.disturbances[i].state_dim()))
            })
            .collect();
        let xi_hat: Vec<_> = cfg
            .agents
            .iter()
            .map(|a| cfg.mode.has_observer().then(|| take(a.state_dim())))
            .collect();
        StateLayout {
            n_agents: n,
            p,
            x,
            xi,
            eta,
            theta,
            xi_hat,
            len: at,
        }
    }

    pub fn followers(&self) -> impl Iterator<Item = (usize, Range<usize>)> + '_ {
        self.eta
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.clone().map(|r| (i, r)))
    }
}

/// Initial values; unset blocks default to `xi = 0`, `eta = 0`, `theta = 0`,
/// `xi_hat = xi`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitialConditions {
    pub x: Vec<f64>,
    pub xi: Option<Vec<f64>>,
    /// Follower internal-model states in agent order, leader skipped.
    pub eta: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub xi_hat: Option<Vec<f64>>,
}

/// Signals produced while evaluating the vector field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopSignals {
    /// `-(B (x) I_p) s`
    pub u_formation: Vec<f64>,
    /// Input applied by the controller, `u_formation - d_hat`.
    pub u: Vec<f64>,
    /// True disturbance `d(t)`.
    pub d: Vec<f64>,
    pub v_r: Vec<f64>,
    pub y: Vec<f64>,
}

/// Error coordinates of the closed loop at one time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorCoordinates {
    pub z_tilde: Vec<f64>,
    pub xi: Vec<f64>,
    /// Followers only, in agent order.
    pub eta_tilde: Vec<f64>,
    pub theta_tilde: Vec<f64>,
    pub xi_tilde: Vec<f64>,
    /// `v_r - v*` for every agent.
    pub v_r_error: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    cfg: ClosedLoopConfig,
    layout: StateLayout,
    certificates: Vec<ObserverCertificate>,
    input_maps: Vec<Option<DMatrix<f64>>>,
}

impl ClosedLoop {
    /// Validates dimensions and the hypotheses attached to the controller mode.
    pub fn new(cfg: ClosedLoopConfig) -> Result<Self> {
        let certificates = validate(&cfg)?;
        let input_maps = cfg
            .agents
            .iter()
            .map(|a| a.dynamics().constant_input_map())
            .collect();
        let layout = StateLayout::build(&cfg);
        Ok(Self {
            cfg,
            layout,
            certificates,
            input_maps,
        })
    }

    pub fn config(&self) -> &ClosedLoopConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn mode(&self) -> ControllerMode {
        self.cfg.mode
    }

    pub fn sign_mode(&self) -> SignMode {
        self.cfg.sign_mode
    }

    pub fn graph(&self) -> &Graph {
        &self.cfg.graph
    }

    pub fn p(&self) -> usize {
        self.cfg.formation.p
    }

    pub fn n_agents(&self) -> usize {
        self.cfg.agents.len()
    }

    pub fn agents(&self) -> &[AgentModel] {
        &self.cfg.agents
    }

    /// Length of the sign vector, `M p`.
    pub fn n_signs(&self) -> usize {
        self.cfg.graph.n_edges() * self.p()
    }

    /// Per-agent certificates in observer mode, otherwise empty.
    pub fn certificates(&self) -> &[ObserverCertificate] {
        &self.certificates
    }

    pub fn initial_state(&self, ic: &InitialConditions) -> Result<Vec<f64>> {
        let l = &self.layout;
        let mut s = vec![0.0; l.len];
        if ic.x.len() != l.x.len() {
            return Err(Error::dims("initial positions x(0)", l.x.len(), ic.x.len()));
        }
        s[l.x.clone()].copy_from_slice(&ic.x);
        let n_xi: usize = l.xi.iter().map(|r| r.len()).sum();
        if let Some(xi) = &ic.xi {
            if xi.len() != n_xi {
                return Err(Error::dims("initial agent states xi(0)", n_xi, xi.len()));
            }
            s[l.xi[0].start..l.xi[0].start + n_xi].copy_from_slice(xi);
        }
        let fill = |s: &mut Vec<f64>, ranges: Vec<Range<usize>>, v: &Option<Vec<f64>>, what| {
            let total: usize = ranges.iter().map(|r| r.len()).sum();
            match v {
                Some(v) if total == 0 && !v.is_empty() => Err(Error::param(
                    what,
                    "given but the controller mode has no such state",
                )),
                Some(v) if v.len() != total => Err(Error::dims(what, total, v.len())),
                Some(v) => {
                    let mut k = 0;
                    for r in ranges {
                        let len = r.len();
                        s[r].copy_from_slice(&v[k..k + len]);
                        k += len;
                    }
                    Ok(())
                }
                None => Ok(()),
            }
        };
        fill(
            &mut s,
            l.eta.iter().flatten().cloned().collect(),
            &ic.eta,
            "eta(0)",
        )?;
        fill(
            &mut s,
            l.theta.iter().flatten().cloned().collect(),
            &ic.theta,
            "theta(0)",
        )?;
        if ic.xi_hat.is_some() {
            fill(
                &mut s,
                l.xi_hat.iter().flatten().cloned().collect(),
                &ic.xi_hat,
                "xi_hat(0)",
            )?;
        } else {
            for (i, r) in l.xi_hat.iter().enumerate() {
                if let Some(r) = r {
                    let src = l.xi[i].clone();
                    let v = s[src].to_vec();
                    s[r.clone()].copy_from_slice(&v);
                }
            }
        }
        Ok(s)
    }

    /// `z_tilde = (B^T (x) I_p) x - z*`.
    pub fn z_tilde(&self, state: &[f64], out: &mut [f64]) {
        self.cfg
            .graph
            .bt_kron_into(self.p(), &state[self.layout.x.clone()], out);
        for (o, z) in out.iter_mut().zip(&self.cfg.formation.z_star) {
            *o -= z;
        }
    }

    /// `v*(t)`.
    pub fn reference_velocity(&self, t: f64) -> Vec<f64> {
        let w = self.cfg.reference.state_at(t);
        let mut v = vec![0.0; self.p()];
        linalg::matvec(self.cfg.reference.gamma(), &w, &mut v);
        v
    }

    /// Stacked disturbance exosystem states `w_d(t)` (empty without disturbances).
    pub fn disturbance_states(&self, t: f64) -> Vec<Vec<f64>> {
        self.cfg.disturbances.iter().map(|e| e.state_at(t)).collect()
    }

    /// Vector field with an externally selected sign vector `signs`.
    pub fn rhs(&self, t: f64, state: &[f64], signs: &[f64], out: &mut [f64]) {
        self.eval(t, state, signs, out, None);
    }

    /// Evaluates the vector field and, if requested, the intermediate
    /// signals.
    pub fn eval(
        &self,
        t: f64,
        state: &[f64],
        signs: &[f64],
        out: &mut [f64],
        mut signals: Option<&mut LoopSignals>,
    ) {
        let cfg = &self.cfg;
        let l = &self.layout;
        let p = self.p();
        let n = self.n_agents();
        debug_assert_eq!(state.len(), l.len);
        debug_assert_eq!(out.len(), l.len);
        debug_assert_eq!(signs.len(), self.n_signs());

        let v_star = self.reference_velocity(t);
        let mut u_f = vec![0.0; n * p];
        formation_input_from_signs(&cfg.graph, p, signs, &mut u_f);

        if let Some(sig) = signals.as_deref_mut() {
            sig.u_formation.clone_from(&u_f);
            sig.u.resize(n * p, 0.0);
            sig.d.resize(n * p, 0.0);
            sig.d.iter_mut().for_each(|v| *v = 0.0);
            sig.v_r.resize(n * p, 0.0);
            sig.y.resize(n * p, 0.0);
        }

        let mut y = vec![0.0; p];
        let mut v_r = vec![0.0; p];
        let mut u = vec![0.0; p];
        let mut d = vec![0.0; p];
        let mut d_hat = vec![0.0; p];
        let mut u_check = vec![0.0; p];
        for i in 0..n {
            let agent = &cfg.agents[i];
            let xi = &state[l.xi[i].clone()];
            agent.dynamics().output(xi, &mut y);
            let ufi = &u_f[i * p..(i + 1) * p];

            match &l.eta[i] {
                Some(r) => internal_model_into(
                    &state[r.clone()],
                    cfg.reference.phi(),
                    cfg.reference.gamma(),
                    ufi,
                    &mut out[r.clone()],
                    &mut v_r,
                ),
                None => v_r.copy_from_slice(&v_star),
            }
            for l_ in 0..p {
                out[l.x.start + i * p + l_] = y[l_] + v_r[l_];
            }

            u.copy_from_slice(ufi);
            d.iter_mut().for_each(|v| *v = 0.0);
            if let Some(r) = &l.theta[i] {
                let dist = &cfg.disturbances[i];
                let theta = &state[r.clone()];
                linalg::matvec(dist.gamma(), theta, &mut d_hat);
                for (a, b) in u.iter_mut().zip(&d_hat) {
                    *a -= b;
                }
                let w_d = dist.state_at(t);
                linalg::matvec(dist.gamma(), &w_d, &mut d);
                match &l.xi_hat[i] {
                    Some(rh) => {
                        let xi_hat = &state[rh.clone()];
                        let err: Vec<f64> = y.iter().zip(xi_hat).map(|(a, b)| a - b).collect();
                        let gains = &cfg.observer_gains[i];
                        let rate = &mut out[r.clone()];
                        linalg::matvec(dist.phi(), theta, rate);
                        linalg::matvec_add(&gains.g_d, &err, rate);
                        let g = self.input_maps[i].as_ref().expect("validated constant g");
                        observer_rhs_into(
                            agent,
                            g,
                            xi_hat,
                            &y,
                            &u,
                            theta,
                            &gains.h,
                            dist.gamma(),
                            &mut out[rh.clone()],
                        );
                    }
                    None => {
                        u_check.copy_from_slice(&y);
                        let mut scratch = vec![0.0; p];
                        internal_model_into(
                            theta,
                            dist.phi(),
                            dist.gamma(),
                            &u_check,
                            &mut out[r.clone()],
                            &mut scratch,
                        );
                    }
                }
            }
            let total: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + b).collect();
            agent.rhs_into(xi, &total, &mut out[l.xi[i].clone()]);

            if let Some(sig) = signals.as_deref_mut() {
                sig.u[i * p..(i + 1) * p].copy_from_slice(&u);
                sig.d[i * p..(i + 1) * p].copy_from_slice(&d);
                sig.v_r[i * p..(i + 1) * p].copy_from_slice(&v_r);
                sig.y[i * p..(i + 1) * p].copy_from_slice(&y);
            }
        }
    }

    /// Error coordinates at `(t, state)`; exosystems in closed form.
    pub fn errors(&self, t: f64, state: &[f64]) -> ErrorCoordinates {
        let l = &self.layout;
        let p = self.p();
        let mut z = vec![0.0; self.n_signs()];
        self.z_tilde(state, &mut z);
        let xi: Vec<f64> =
            l.xi.iter()
                .flat_map(|r| state[r.clone()].iter().cloned())
                .collect();
        let w_v = self.cfg.reference.state_at(t);
        let mut eta_tilde = Vec::new();
        for (_, r) in l.followers() {
            eta_tilde.extend(state[r].iter().zip(&w_v).map(|(a, b)| a - b));
        }
        let mut theta_tilde = Vec::new();
        for (i, r) in l.theta.iter().enumerate() {
            if let Some(r) = r {
                let w = self.cfg.disturbances[i].state_at(t);
                theta_tilde.extend(state[r.clone()].iter().zip(&w).map(|(a, b)| a - b));
            }
        }
        let mut xi_tilde = Vec::new();
        for (i, r) in l.xi_hat.iter().enumerate() {
            if let Some(r) = r {
                xi_tilde.extend(
                    state[l.xi[i].clone()]
                        .iter()
                        .zip(&state[r.clone()])
                        .map(|(a, b)| a - b),
                );
            }
        }
        let v_star = self.reference_velocity(t);
        let mut v_r_error = vec![0.0; self.n_agents() * p];
        let mut est = vec![0.0; p];
        for i in 0..self.n_agents() {
            match &l.eta[i] {
                Some(r) => linalg::matvec(self.cfg.reference.gamma(), &state[r.clone()], &mut est),
                None => est.copy_from_slice(&v_star),
            }
            for k in 0..p {
                v_r_error[i * p + k] = est[k] - v_star[k];
            }
        }
        ErrorCoordinates {
            z_tilde: z,
            xi,
            eta_tilde,
            theta_tilde,
            xi_tilde,
            v_r_error,
        }
    }
}

fn validate(cfg: &ClosedLoopConfig) -> Result<Vec<ObserverCertificate>> {
    use Hypothesis as H;
    let n = cfg.agents.len();
    let p = cfg.formation.p;
    let g = &cfg.graph;
    if n != g.n_nodes() {
        return Err(Error::dims("number of agents", g.n_nodes(), n));
    }
    if cfg.formation.n_edges() != g.n_edges() || cfg.formation.z_star.len() != g.n_edges() * p {
        return Err(Error::dims(
            "formation z* entries",
            g.n_edges() * p,
            cfg.formation.z_star.len(),
        ));
    }
    cfg.sign_mode.validate()?;
    if !g.is_connected() {
        return Err(Error::hypothesis(
            H::ConnectedGraph,
            "the interaction graph is disconnected",
        ));
    }
    let c = g.check_formation_consistency(&cfg.formation)?;
    if !c.consistent {
        return Err(Error::hypothesis(
            H::FormationConsistency,
            format!("least-squares residual {:.3e}", c.residual),
        ));
    }
    for (i, a) in cfg.agents.iter().enumerate() {
        if a.input_dim() != p {
            return Err(Error::dims(
                format!("agent {} input dimension", i + 1),
                p,
                a.input_dim(),
            ));
        }
    }
    if cfg.leader >= n {
        return Err(Error::param(
            "leader",
            format!("agent {} does not exist ({} agents)", cfg.leader + 1, n),
        ));
    }
    let r = &cfg.reference;
    if r.output_dim() != p {
        return Err(Error::dims("reference output dimension", p, r.output_dim()));
    }
    let mode = cfg.mode;
    if mode.has_velocity_model() && !r.is_observable() {
        return Err(Error::hypothesis(
            H::ObservableReference,
            "the reference exosystem pair is not observable",
        ));
    }
    if mode.has_disturbance_model() {
        if cfg.disturbances.len() != n {
            return Err(Error::Missing(format!(
                "disturbance exosystems: mode {mode} needs one per agent, got {}",
                cfg.disturbances.len()
            )));
        }
        for (i, d) in cfg.disturbances.iter().enumerate() {
            if d.output_dim() != p {
                return Err(Error::dims(
                    format!("agent {} disturbance output", i + 1),
                    p,
                    d.output_dim(),
                ));
            }
            if !d.is_observable() {
                return Err(Error::hypothesis(
                    H::ObservableDisturbance,
                    format!("disturbance exosystem of agent {} is not observable", i + 1),
                ));
            }
        }
    } else if !cfg.disturbances.is_empty() {
        return Err(Error::Unsupported(format!(
            "mode {mode} has no disturbance compensator; remove the disturbances or pick a rejecting mode"
        )));
    }
    if !mode.has_observer() && !cfg.observer_gains.is_empty() {
        return Err(Error::Unsupported(format!(
            "observer gains given for mode {mode}"
        )));
    }

    match mode {
        ControllerMode::KnownVelocity | ControllerMode::LeaderFollower => {}
        ControllerMode::LeaderFollowerConstDist => {
            if !r.is_zero() || cfg.disturbances.iter().any(|d| !d.is_zero()) {
                return Err(Error::hypothesis(
                    H::ConstantExosignals,
                    "reference and disturbance exosystems must have Phi = 0",
                ));
            }
            let singular = |m: &DMatrix<f64>| m.nrows() != m.ncols() || linalg::rank(m, 1e-10) < m.nrows();
            if singular(r.gamma()) {
                return Err(Error::hypothesis(H::NonsingularOutputMaps, "Gamma_v is singular"));
            }
            if let Some(i) = cfg.disturbances.iter().position(|d| singular(d.gamma())) {
                return Err(Error::hypothesis(
                    H::NonsingularOutputMaps,
                    format!("Gamma_d of agent {} is singular", i + 1),
                ));
            }
        }
        ControllerMode::KnownVelHarmonicDist => {
            if !g.is_tree()? {
                return Err(Error::hypothesis(
                    H::TreeGraph,
                    format!(
                        "graph has {} edges on {} nodes and contains a cycle",
                        g.n_edges(),
                        g.n_nodes()
                    ),
                ));
            }
            if let Some(i) = cfg.disturbances.iter().position(|d| !d.has_harmonic_structure()) {
                return Err(Error::hypothesis(
                    H::HarmonicStructure,
                    format!("disturbance exosystem of agent {}", i + 1),
                ));
            }
        }
        ControllerMode::ObserverBased => {
            for (i, a) in cfg.agents.iter().enumerate() {
                if a.dynamics().constant_input_map().is_none() {
                    return Err(Error::hypothesis(H::ConstantInputMap, format!("agent {}", i + 1)));
                }
                if !a.dynamics().output_is_state() {
                    return Err(Error::hypothesis(
                        H::OutputEqualsState,
                        format!("agent {}", i + 1),
                    ));
                }
                if !a.certification().dissipation_dominates_quadratic {
                    return Err(Error::hypothesis(
                        H::QuadraticDissipation,
                        format!("agent {}: W(xi) < |xi|^2 on a probe sample", i + 1),
                    ));
                }
            }
            if cfg.observer_gains.len() != n {
                return Err(Error::Missing(format!(
                    "observer gains: one (H, G_d) pair per agent required, got {}",
                    cfg.observer_gains.len()
                )));
            }
            let gamma = shared_gamma(cfg.disturbances.iter().map(|d| d.gamma()));
            let mut certs = Vec::with_capacity(n);
            for i in 0..n {
                let gains = &cfg.observer_gains[i];
                let dist = &cfg.disturbances[i];
                let g_i = cfg.agents[i].dynamics().constant_input_map().expect("checked");
                let cert = solve_observer_certificate_with_gamma(
                    &gains.h,
                    &gains.g_d,
                    dist.phi(),
                    &g_i,
                    dist.gamma(),
                    gamma,
                )
                .map_err(|e| match e {
                    Error::Hypothesis { hypothesis, detail } => Error::Hypothesis {
                        hypothesis,
                        detail: format!("agent {}: {detail}", i + 1),
                    },
                    other => other,
                })?;
                certs.push(cert);
            }
            return Ok(certs);
        }
    }
    Ok(Vec::new())
}
