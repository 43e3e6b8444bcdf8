//! Internal-model compensators: the follower velocity estimator and the
//! per-agent disturbance estimator. Both are copies of their exosystem driven
//! through the transpose of its output map.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// `eta' = Phi eta + Gamma_v^T u_tilde`, `v_r = Gamma_v eta` for follower
/// `agent`. Returns `(eta', v_r)`.
pub fn velocity_im_rhs(
    agent: usize,
    leader: usize,
    eta: &[f64],
    phi: &DMatrix<f64>,
    gamma_v: &DMatrix<f64>,
    u_tilde: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if agent == leader {
        return Err(Error::param(
            "agent",
            format!(
                "agent {} is the leader and has no velocity internal model",
                agent + 1
            ),
        ));
    }
    check_model(phi, gamma_v, eta, u_tilde, "velocity internal model")?;
    let mut rate = vec![0.0; eta.len()];
    let mut v_r = vec![0.0; gamma_v.nrows()];
    internal_model_into(eta, phi, gamma_v, u_tilde, &mut rate, &mut v_r);
    Ok((rate, v_r))
}

/// `theta' = Phi_d theta + Gamma_d^T u_check`, `d_hat = Gamma_d theta`.
/// Returns `(theta', d_hat)`; the agent applies `u = u_hat - d_hat`.
pub fn disturbance_im_rhs(
    theta: &[f64],
    phi_d: &DMatrix<f64>,
    gamma_d: &DMatrix<f64>,
    u_check: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_model(phi_d, gamma_d, theta, u_check, "disturbance internal model")?;
    let mut rate = vec![0.0; theta.len()];
    let mut d_hat = vec![0.0; gamma_d.nrows()];
    internal_model_into(theta, phi_d, gamma_d, u_check, &mut rate, &mut d_hat);
    Ok((rate, d_hat))
}

fn check_model(
    phi: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    state: &[f64],
    input: &[f64],
    context: &str,
) -> Result<()> {
    let q = phi.nrows();
    if phi.ncols() != q || gamma.ncols() != q {
        return Err(Error::dims(format!("{context} matrices"), q, gamma.ncols()));
    }
    if state.len() != q {
        return Err(Error::dims(format!("{context} state"), q, state.len()));
    }
    if input.len() != gamma.nrows() {
        return Err(Error::dims(
            format!("{context} input"),
            gamma.nrows(),
            input.len(),
        ));
    }
    Ok(())
}

/// Shared kernel: `rate = Phi s + Gamma^T input`, `estimate = Gamma s`.
pub(crate) fn internal_model_into(
    state: &[f64],
    phi: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    input: &[f64],
    rate: &mut [f64],
    estimate: &mut [f64],
) {
    linalg::matvec(phi, state, rate);
    linalg::matvec_t_add(gamma, input, rate);
    linalg::matvec(gamma, state, estimate);
}
