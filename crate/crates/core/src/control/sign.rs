//! Binary (sign) selections of the formation error and the formation input
//! `u = -(B (x) I_p) sign(z_tilde)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Selection of the sign of the formation error.
///
/// `Strict` takes `+1` at zero. `Hysteresis` keeps a per-component latch and
/// only switches once the input has crossed `eps` against it. `Smooth`
/// saturates `z / eps`, which picks interior values of the convexified sign
/// near the switching surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignMode {
    Strict,
    Hysteresis { eps: f64 },
    Smooth { eps: f64 },
}

impl Default for SignMode {
    fn default() -> Self {
        SignMode::Smooth { eps: 1e-2 }
    }
}

impl SignMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SignMode::Strict => Ok(()),
            SignMode::Hysteresis { eps } | SignMode::Smooth { eps } => {
                if eps > 0.0 && eps.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("eps", format!("must be positive, got {eps}")))
                }
            }
        }
    }

    /// Width of the regularization, `0` in strict mode.
    pub fn eps(&self) -> f64 {
        match *self {
            SignMode::Strict => 0.0,
            SignMode::Hysteresis { eps } | SignMode::Smooth { eps } => eps,
        }
    }

    /// True for the modes whose output only takes the values `+-1`.
    pub fn is_discontinuous(&self) -> bool {
        !matches!(self, SignMode::Smooth { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SignMode::Strict => "strict",
            SignMode::Hysteresis { .. } => "hysteresis",
            SignMode::Smooth { .. } => "smooth",
        }
    }

    /// Parses `strict`, `hysteresis` or `smooth` with the given width.
    pub fn from_name(name: &str, eps: f64) -> Result<Self> {
        let mode = match name {
            "strict" => SignMode::Strict,
            "hysteresis" => SignMode::Hysteresis { eps },
            "smooth" => SignMode::Smooth { eps },
            other => {
                return Err(Error::param(
                    "sign_mode",
                    format!("unknown sign mode `{other}` (expected strict, hysteresis or smooth)"),
                ))
            }
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// `+1` for `v >= 0`, `-1` otherwise.
#[inline]
pub fn strict_sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// A sign mode together with its hysteresis latches.
#[derive(Debug, Clone, PartialEq)]
pub struct SignSelector {
    mode: SignMode,
    latches: Vec<f64>,
}

impl SignSelector {
    pub fn new(mode: SignMode) -> Result<Self> {
        mode.validate()?;
        Ok(Self {
            mode,
            latches: Vec::new(),
        })
    }

    pub fn mode(&self) -> SignMode {
        self.mode
    }

    /// Current latches; empty until the first hysteresis evaluation.
    pub fn latches(&self) -> &[f64] {
        &self.latches
    }

    pub fn reset(&mut self) {
        self.latches.clear();
    }

    /// Evaluates the selection; hysteresis latches are updated in place and
    /// initialized to the strict sign on first use.
    pub fn apply(&mut self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), out.len());
        match self.mode {
            SignMode::Strict => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = strict_sign(v);
                }
            }
            SignMode::Smooth { eps } => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = (v / eps).clamp(-1.0, 1.0);
                }
            }
            SignMode::Hysteresis { eps } => {
                if self.latches.len() != z.len() {
                    self.latches = z.iter().map(|&v| strict_sign(v)).collect();
                }
                for ((o, l), &v) in out.iter_mut().zip(self.latches.iter_mut()).zip(z) {
                    if *l > 0.0 && v < -eps {
                        *l = -1.0;
                    } else if *l < 0.0 && v > eps {
                        *l = 1.0;
                    }
                    *o = *l;
                }
            }
        }
    }
}

/// Componentwise sign of `z` under `mode`; `latches` holds the hysteresis
/// state (pass an empty vector to initialize it from `z`).
pub fn sign_vec(z: &[f64], mode: SignMode, latches: &mut Vec<f64>) -> Result<Vec<f64>> {
    let mut sel = SignSelector::new(mode)?;
    sel.latches = std::mem::take(latches);
    let mut out = vec![0.0; z.len()];
    sel.apply(z, &mut out);
    *latches = sel.latches;
    Ok(out)
}

/// `u = -(B (x) I_p) s` for an already selected sign vector `s`.
pub fn formation_input_from_signs(graph: &Graph, p: usize, signs: &[f64], out: &mut [f64]) {
    graph.b_kron_into(p, signs, out);
    out.iter_mut().for_each(|v| *v = -*v);
}

/// `u = -(B (x) I_p) sign(z_tilde)`.
pub fn formation_control(
    graph: &Graph,
    p: usize,
    z_tilde: &[f64],
    selector: &mut SignSelector,
) -> Result<Vec<f64>> {
    let m = graph.n_edges() * p;
    if z_tilde.len() != m {
        return Err(Error::dims("formation error z_tilde", m, z_tilde.len()));
    }
    let mut s = vec![0.0; m];
    selector.apply(z_tilde, &mut s);
    let mut u = vec![0.0; graph.n_nodes() * p];
    formation_input_from_signs(graph, p, &s, &mut u);
    Ok(u)
}
