//! Scenario files: a versioned JSON description of one closed-loop run, its
//! validation into a [`ClosedLoop`], and the bundled presets.
//!
//! Node indices and edge indices are 1-based in files and 0-based in code.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentModel, CubicDampedAgent, LinearPassiveAgent};
use crate::control::{
    ClosedLoop, ClosedLoopConfig, ControllerMode, InitialConditions, ObserverGains, SignMode,
};
use crate::engine::{self, IntegrationSettings, RunOptions, RunOutput, Scheme};
use crate::error::{Error, Result};
use crate::exosystem::{ExoChannel, ExosystemSpec};
use crate::graph::{FormationSpec, Graph};
use crate::linalg;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub graph: GraphSpec,
    pub p: usize,
    /// Desired relative position of every edge, in edge order.
    pub formation: Vec<Vec<f64>>,
    pub agents: PerAgent<AgentSpec>,
    pub controller: ControllerSpec,
    /// Reference-velocity exosystem; its output is `v*`.
    pub reference: ExoSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbances: Option<PerAgent<ExoSpec>>,
    pub initial: InitialSpec,
    #[serde(default)]
    pub integration: IntegrationSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<BandSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: usize,
    /// `[head, tail]` pairs: the edge vector is `x_head - x_tail`.
    pub edges: Vec<[usize; 2]>,
}

/// One value shared by every agent, or one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent<T> {
    Each(Vec<T>),
    All(T),
}

impl<T: Clone> PerAgent<T> {
    pub fn expand(&self, n: usize, what: &str) -> Result<Vec<T>> {
        match self {
            PerAgent::All(v) => Ok(vec![v.clone(); n]),
            PerAgent::Each(v) if v.len() == n => Ok(v.clone()),
            PerAgent::Each(v) => Err(Error::dims(what, n, v.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    /// `xi' = -a xi + b u`
    Linear { a: f64, b: f64 },
    /// `xi' = -a xi - c xi^3 + b u`
    Cubic { a: f64, c: f64, b: f64 },
}

impl AgentSpec {
    fn build(&self, p: usize) -> Result<AgentModel> {
        match *self {
            AgentSpec::Linear { a, b } => AgentModel::new(LinearPassiveAgent::new(p, a, b)?),
            AgentSpec::Cubic { a, c, b } => AgentModel::new(CubicDampedAgent::new(p, a, c, b)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignKind {
    Strict,
    Hysteresis,
    Smooth,
}

fn default_eps() -> f64 {
    1e-2
}

fn default_leader() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub mode: ControllerMode,
    pub sign_mode: SignKind,
    /// Hysteresis half-width or smoothing width; unused in strict mode.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// 1-based leader index (the only agent that knows `v*` in the
    /// leader-follower modes).
    #[serde(default = "default_leader")]
    pub leader: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<PerAgent<ObserverGainSpec>>,
}

impl ControllerSpec {
    pub fn sign_mode(&self) -> SignMode {
        match self.sign_mode {
            SignKind::Strict => SignMode::Strict,
            SignKind::Hysteresis => SignMode::Hysteresis { eps: self.eps },
            SignKind::Smooth => SignMode::Smooth { eps: self.eps },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverGainSpec {
    pub h: Vec<Vec<f64>>,
    /// Defaults to the transpose of the agent's disturbance output map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_d: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub frequencies: Vec<f64>,
    pub gain_row: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExoSpec {
    /// `Phi = 0`, `Gamma = I`, `w(0) = value`.
    Constant { value: Vec<f64> },
    /// One rotation block per output component.
    Harmonic {
        frequencies: Vec<f64>,
        gain_rows: Vec<[f64; 2]>,
        w0: Vec<f64>,
    },
    /// Per output component, a run of constant (frequency 0) and rotation
    /// blocks.
    Mixed {
        channels: Vec<ChannelSpec>,
        w0: Vec<f64>,
    },
    /// Explicit skew-symmetric `phi` and output map `gamma`.
    General {
        phi: Vec<Vec<f64>>,
        gamma: Vec<Vec<f64>>,
        w0: Vec<f64>,
    },
}

impl ExoSpec {
    pub fn build(&self) -> Result<ExosystemSpec> {
        match self {
            ExoSpec::Constant { value } => ExosystemSpec::constant(value),
            ExoSpec::Harmonic {
                frequencies,
                gain_rows,
                w0,
            } => ExosystemSpec::harmonic(frequencies, gain_rows, w0),
            ExoSpec::Mixed { channels, w0 } => {
                let ch: Vec<ExoChannel> = channels
                    .iter()
                    .map(|c| ExoChannel {
                        frequencies: c.frequencies.clone(),
                        gain_row: c.gain_row.clone(),
                    })
                    .collect();
                ExosystemSpec::mixed(&ch, w0)
            }
            ExoSpec::General { phi, gamma, w0 } => ExosystemSpec::new(
                linalg::from_rows(phi, "phi")?,
                linalg::from_rows(gamma, "gamma")?,
                w0.clone(),
            ),
        }
    }
}

/// Flat initial values, agent-major. `eta` covers the followers only, in
/// agent order. Unset blocks start at zero, `xi_hat` at `xi`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<f64>,
}

/// Command-line style overrides of scenario fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub sign_mode: Option<SignKind>,
    pub eps: Option<f64>,
    pub scheme: Option<Scheme>,
}

/// A validated scenario ready to integrate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub closed_loop: ClosedLoop,
    pub initial_state: Vec<f64>,
    pub settings: IntegrationSettings,
    pub options: RunOptions,
}

impl Prepared {
    pub fn run(&self) -> Result<RunOutput> {
        engine::run_with(
            &self.closed_loop,
            &self.initial_state,
            &self.settings,
            &self.options,
        )
    }
}

impl Scenario {
    /// Parses and fully validates a scenario.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let sc = Self::parse_unvalidated(text)?;
        sc.prepare()?;
        Ok(sc)
    }

    /// Parses without building the closed loop (schema and version only).
    pub fn parse_unvalidated(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        match raw.get("schema_version") {
            None => return Err(Error::Schema("missing field `schema_version`".into())),
            Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
                return Err(Error::Schema(format!(
                    "unsupported schema_version {v} (this build reads {SCHEMA_VERSION})"
                )))
            }
            _ => {}
        }
        // parse the text again rather than the Value so errors carry
        // line and column
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.prepare().map(|_| ())
    }

    pub fn n_agents(&self) -> usize {
        self.graph.nodes
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(dt) = o.dt {
            self.integration.dt = dt;
        }
        if let Some(t) = o.t_final {
            self.integration.t_final = t;
        }
        if let Some(s) = o.scheme {
            self.integration.scheme = s;
        }
        if let Some(k) = o.sign_mode {
            self.controller.sign_mode = k;
        }
        if let Some(eps) = o.eps {
            self.controller.eps = eps;
        }
    }

    pub fn graph(&self) -> Result<Graph> {
        let pairs: Vec<(usize, usize)> = self.graph.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::from_one_based(self.graph.nodes, &pairs)
    }

    /// Builds the closed loop and initial state, checking every hypothesis of
    /// the selected controller mode.
    pub fn prepare(&self) -> Result<Prepared> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        let n = self.n_agents();
        let p = self.p;
        let graph = self.graph()?;
        if self.formation.len() != graph.n_edges() {
            return Err(Error::dims(
                "formation (one vector per edge)",
                graph.n_edges(),
                self.formation.len(),
            ));
        }
        let formation = FormationSpec::new(p, &self.formation)?;
        let agents = self
            .agents
            .expand(n, "agents")?
            .iter()
            .enumerate()
            .map(|(i, a)| {
                a.build(p)
                    .map_err(|e| Error::param(format!("agents[{}]", i + 1), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let c = &self.controller;
        if c.leader == 0 || c.leader > n {
            return Err(Error::param(
                "controller.leader",
                format!("must be in 1..={n} (1-based), got {}", c.leader),
            ));
        }
        let reference = self.reference.build()?;
        let disturbances = match &self.disturbances {
            None => Vec::new(),
            Some(d) => d
                .expand(n, "disturbances")?
                .iter()
                .map(ExoSpec::build)
                .collect::<Result<Vec<_>>>()?,
        };
        let observer_gains = match &c.observer {
            None => Vec::new(),
            Some(g) => g
                .expand(n, "controller.observer")?
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let h = linalg::from_rows(&g.h, "observer h")?;
                    let g_d = match &g.g_d {
                        Some(rows) => linalg::from_rows(rows, "observer g_d")?,
                        None => disturbances
                            .get(i)
                            .map(|d| d.gamma().transpose())
                            .ok_or_else(|| {
                                Error::Missing("disturbances (observer g_d defaults to Gamma_d^T)".into())
                            })?,
                    };
                    Ok(ObserverGains { h, g_d })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let cl = ClosedLoop::new(ClosedLoopConfig {
            graph,
            formation,
            agents,
            mode: c.mode,
            sign_mode: c.sign_mode(),
            leader: c.leader - 1,
            reference,
            disturbances,
            observer_gains,
        })?;
        let ic = &self.initial;
        let initial_state = cl.initial_state(&InitialConditions {
            x: ic.x.clone(),
            xi: ic.xi.clone(),
            eta: ic.eta.clone(),
            theta: ic.theta.clone(),
            xi_hat: ic.xi_hat.clone(),
        })?;
        self.integration.validate()?;
        let bands = self.bands.unwrap_or_default();
        Ok(Prepared {
            closed_loop: cl,
            initial_state,
            settings: self.integration,
            options: RunOptions {
                position_band: bands.position,
                velocity_band: bands.velocity,
                ..Default::default()
            },
        })
    }

    pub fn run(&self) -> Result<RunOutput> {
        self.prepare()?.run()
    }
}

/// Bundled scenarios reproducing the reference simulations, in order.
pub const PRESETS: [(&str, &str); 5] = [
    (
        "pentagon_known_velocity",
        include_str!("../presets/pentagon_known_velocity.json"),
    ),
    (
        "pentagon_leader_follower",
        include_str!("../presets/pentagon_leader_follower.json"),
    ),
    ("caseI", include_str!("../presets/caseI.json")),
    ("caseII", include_str!("../presets/caseII.json")),
    ("observer", include_str!("../presets/observer.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Result<Scenario> {
    let text = preset_text(name).ok_or_else(|| {
        Error::param(
            "preset",
            format!(
                "unknown preset `{name}` (available: {})",
                preset_names().collect::<Vec<_>>().join(", ")
            ),
        )
    })?;
    Scenario::from_json_str(text)
}

/// Resolves a scenario argument: an existing file, else `presets/<name>`,
/// `<name>` or `<name>.json` naming a bundled preset.
pub fn load(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.is_file() {
        return Scenario::from_path(path);
    }
    let name = arg.strip_prefix("presets/").unwrap_or(arg);
    let name = name.strip_suffix(".json").unwrap_or(name);
    if preset_text(name).is_some() {
        return preset(name);
    }
    Err(Error::Io {
        path: arg.to_string(),
        source: std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "no such file and no preset of that name",
        ),
    })
}
