//! Observer-based disturbance compensator for agents with a constant input
//! map and state output, and the quadratic certificate of its error system.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::agents::AgentModel;
use crate::error::{Error, Hypothesis, Result};
use crate::linalg;

const HURWITZ_MARGIN: f64 = 1e-9;
const CERTIFICATE_RESIDUAL_TOL: f64 = 1e-8;

/// `P = P^T > 0` with `A^T P + P A = -2 diag(I, gamma I)`, where `A` is the
/// estimation-error matrix acting on `(xi_tilde, theta_tilde)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObserverCertificate {
    #[serde(serialize_with = "ser_matrix")]
    pub p: DMatrix<f64>,
    pub gamma: f64,
    pub residual: f64,
    pub min_eigenvalue: f64,
    /// Largest real part among the eigenvalues of `A`.
    pub spectral_abscissa: f64,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::Serialize;
    linalg::to_rows(m).serialize(s)
}

/// `A = [[-H, -g Gamma_d], [G_d, Phi_d]]`.
pub fn error_matrix(
    h: &DMatrix<f64>,
    g_d: &DMatrix<f64>,
    phi_d: &DMatrix<f64>,
    g: &DMatrix<f64>,
    gamma_d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    let q = phi_d.nrows();
    if h.ncols() != n {
        return Err(Error::dims("observer gain H (square)", n, h.ncols()));
    }
    if phi_d.ncols() != q {
        return Err(Error::dims("Phi_d (square)", q, phi_d.ncols()));
    }
    if g.nrows() != n {
        return Err(Error::dims("input map rows", n, g.nrows()));
    }
    if gamma_d.nrows() != g.ncols() || gamma_d.ncols() != q {
        return Err(Error::dims("Gamma_d columns", q, gamma_d.ncols()));
    }
    if g_d.nrows() != q || g_d.ncols() != n {
        return Err(Error::dims("observer gain G_d rows", q, g_d.nrows()));
    }
    let mut a = DMatrix::zeros(n + q, n + q);
    a.view_mut((0, 0), (n, n)).copy_from(&(-h));
    a.view_mut((0, n), (n, q)).copy_from(&(-(g * gamma_d)));
    a.view_mut((n, 0), (q, n)).copy_from(g_d);
    a.view_mut((n, n), (q, q)).copy_from(phi_d);
    Ok(a)
}

/// `max(1, max_i |Gamma_d,i^T Gamma_d,i|_2)`.
pub fn shared_gamma<'a>(gammas: impl IntoIterator<Item = &'a DMatrix<f64>>) -> f64 {
    gammas
        .into_iter()
        .map(|g| linalg::spectral_norm(&(g.transpose() * g)))
        .fold(1.0, f64::max)
}

/// Certificate for a single agent with `gamma` computed from its own output
/// map.
pub fn solve_observer_certificate(
    h: &DMatrix<f64>,
    g_d: &DMatrix<f64>,
    phi_d: &DMatrix<f64>,
    g: &DMatrix<f64>,
    gamma_d: &DMatrix<f64>,
) -> Result<ObserverCertificate> {
    let gamma = shared_gamma([gamma_d]);
    solve_observer_certificate_with_gamma(h, g_d, phi_d, g, gamma_d, gamma)
}

/// Certificate with an externally chosen `gamma` (shared across agents).
pub fn solve_observer_certificate_with_gamma(
    h: &DMatrix<f64>,
    g_d: &DMatrix<f64>,
    phi_d: &DMatrix<f64>,
    g: &DMatrix<f64>,
    gamma_d: &DMatrix<f64>,
    gamma: f64,
) -> Result<ObserverCertificate> {
    let required = shared_gamma([gamma_d]);
    if !(gamma >= required) {
        return Err(Error::param(
            "gamma",
            format!("{gamma} is below max(1, |Gamma_d^T Gamma_d|) = {required}"),
        ));
    }
    let a = error_matrix(h, g_d, phi_d, g, gamma_d)?;
    let eig = linalg::eigenvalues(&a)?;
    let worst = eig
        .iter()
        .cloned()
        .fold((f64::NEG_INFINITY, 0.0), |m, e| if e.0 > m.0 { e } else { m });
    if worst.0 >= -HURWITZ_MARGIN {
        return Err(Error::hypothesis(
            Hypothesis::HurwitzEstimator,
            format!(
                "error matrix has eigenvalue {:.6e}{:+.6e}i with non-negative real part; choose other gains H, G_d",
                worst.0, worst.1
            ),
        ));
    }
    let n = h.nrows();
    let q = phi_d.nrows();
    let mut rhs = DMatrix::identity(n + q, n + q) * 2.0;
    for k in n..n + q {
        rhs[(k, k)] = 2.0 * gamma;
    }
    let p = linalg::solve_continuous_lyapunov(&a, &rhs)?;
    let residual = (a.transpose() * &p + &p * &a + &rhs).norm();
    if residual > CERTIFICATE_RESIDUAL_TOL * (1.0 + p.norm()) {
        return Err(Error::Numerical(format!(
            "Lyapunov residual {residual:e} exceeds tolerance"
        )));
    }
    let min_eigenvalue = linalg::min_symmetric_eigenvalue(&p);
    if min_eigenvalue <= 0.0 {
        return Err(Error::Numerical(format!(
            "Lyapunov solution is not positive definite (min eigenvalue {min_eigenvalue:e})"
        )));
    }
    Ok(ObserverCertificate {
        p,
        gamma,
        residual,
        min_eigenvalue,
        spectral_abscissa: worst.0,
    })
}

/// `xi_hat' = f(y) + g (u + Gamma_d theta) + H (y - xi_hat)`.
///
/// `u` is the input actually applied to the agent (without the
/// disturbance). Requires a constant input map and `h(xi) = xi`.
pub fn observer_rhs(
    model: &AgentModel,
    xi_hat: &[f64],
    y: &[f64],
    u: &[f64],
    theta: &[f64],
    h: &DMatrix<f64>,
    gamma_d: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let dynamics = model.dynamics();
    let g = dynamics.constant_input_map().ok_or_else(|| {
        Error::Unsupported("observer-based compensation requires a constant input map g".into())
    })?;
    if !dynamics.output_is_state() {
        return Err(Error::Unsupported(
            "observer-based compensation requires the passive output to equal the state".into(),
        ));
    }
    let n = model.state_dim();
    let p = model.input_dim();
    for (what, len, want) in [
        ("observer state", xi_hat.len(), n),
        ("output", y.len(), n),
        ("input", u.len(), p),
        ("disturbance estimator state", theta.len(), gamma_d.ncols()),
    ] {
        if len != want {
            return Err(Error::dims(what, want, len));
        }
    }
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::dims("observer gain H", n, h.nrows()));
    }
    let mut out = vec![0.0; n];
    observer_rhs_into(model, &g, xi_hat, y, u, theta, h, gamma_d, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn observer_rhs_into(
    model: &AgentModel,
    g: &DMatrix<f64>,
    xi_hat: &[f64],
    y: &[f64],
    u: &[f64],
    theta: &[f64],
    h: &DMatrix<f64>,
    gamma_d: &DMatrix<f64>,
    out: &mut [f64],
) {
    model.dynamics().drift(y, out);
    let mut v = u.to_vec();
    linalg::matvec_add(gamma_d, theta, &mut v);
    linalg::matvec_add(g, &v, out);
    let e: Vec<f64> = y.iter().zip(xi_hat).map(|(a, b)| a - b).collect();
    linalg::matvec_add(h, &e, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exosystem::{ExoChannel, ExosystemSpec};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_toy_is_hurwitz_iff_gain_positive() {
        for (k, hurwitz) in [(1.0, true), (0.3, true), (0.0, false), (-0.5, false)] {
            let a = error_matrix(&scalar(1.0), &scalar(k), &scalar(0.0), &scalar(1.0), &scalar(1.0)).unwrap();
            // oracle: trace < 0 and det > 0 for a real 2x2 matrix
            let tr = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            assert_eq!(tr < 0.0 && det > 0.0, hurwitz);
            let res = solve_observer_certificate(
                &scalar(1.0),
                &scalar(k),
                &scalar(0.0),
                &scalar(1.0),
                &scalar(1.0),
            );
            assert_eq!(res.is_ok(), hurwitz, "k = {k}");
            if !hurwitz {
                assert_eq!(
                    res.unwrap_err().violated_hypothesis(),
                    Some(Hypothesis::HurwitzEstimator)
                );
            }
        }
    }

    #[test]
    fn scalar_toy_certificate_matches_direct_solve() {
        // A = [[-1, -1], [1, 0]], gamma = 1, P = [[p1, p2], [p2, p3]]:
        // the (0,0), (0,1) and (1,1) entries of A^T P + P A = -2 I are three
        // linear equations in (p1, p2, p3).
        let a = [[-1.0, -1.0], [1.0, 0.0]];
        // entry (i, j) of A^T P + P A as a linear form in (p1, p2, p3)
        let coeff = |i: usize, j: usize| -> [f64; 3] {
            let basis = [
                [[1.0, 0.0], [0.0, 0.0]],
                [[0.0, 1.0], [1.0, 0.0]],
                [[0.0, 0.0], [0.0, 1.0]],
            ];
            let mut c = [0.0; 3];
            for (b, e) in basis.iter().enumerate() {
                let mut v = 0.0;
                for k in 0..2 {
                    v += a[k][i] * e[k][j] + e[i][k] * a[k][j];
                }
                c[b] = v;
            }
            c
        };
        let m = nalgebra::Matrix3::from_rows(&[coeff(0, 0).into(), coeff(0, 1).into(), coeff(1, 1).into()]);
        let sol = m.lu().solve(&nalgebra::Vector3::new(-2.0, 0.0, -2.0)).unwrap();
        let cert = solve_observer_certificate(
            &scalar(1.0),
            &scalar(1.0),
            &scalar(0.0),
            &scalar(1.0),
            &scalar(1.0),
        )
        .unwrap();
        assert_eq!(cert.gamma, 1.0);
        assert!((cert.p[(0, 0)] - sol[0]).abs() < 1e-12);
        assert!((cert.p[(0, 1)] - sol[1]).abs() < 1e-12);
        assert!((cert.p[(1, 1)] - sol[2]).abs() < 1e-12);
        assert!(cert.min_eigenvalue > 0.0);
        assert!(cert.residual <= 1e-8);
    }

    #[test]
    fn skew_coupling_with_damping_is_certified() {
        let h = DMatrix::identity(2, 2) * 3.0;
        let g = DMatrix::identity(2, 2) * 2.0;
        let gamma_d = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 1.0]);
        let phi_d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let g_d = (&g * &gamma_d).transpose();
        let cert = solve_observer_certificate(&h, &g_d, &phi_d, &g, &gamma_d).unwrap();
        assert!(cert.spectral_abscissa < 0.0);
        assert!(cert.residual <= 1e-8);
        assert!(cert.gamma >= 1.0);
    }

    type Gains = (
        DMatrix<f64>,
        DMatrix<f64>,
        DMatrix<f64>,
        DMatrix<f64>,
        DMatrix<f64>,
    );

    fn observer_example() -> Gains {
        let ch = |row: Vec<f64>| ExoChannel {
            frequencies: vec![0.0, 2.0],
            gain_row: row,
        };
        let e =
            ExosystemSpec::mixed(&[ch(vec![0.5, 0.5, 0.5]), ch(vec![0.5, -0.5, 0.5])], &[0.1; 6]).unwrap();
        let h = DMatrix::identity(2, 2) * 50.0;
        let g = DMatrix::identity(2, 2) * 10.0;
        let g_d = e.gamma().transpose();
        (h, g_d, e.phi().clone(), g, e.gamma().clone())
    }

    #[test]
    fn observer_example_certificate_matches_dense_oracle() {
        let (h, g_d, phi_d, g, gamma_d) = observer_example();
        let cert = solve_observer_certificate(&h, &g_d, &phi_d, &g, &gamma_d).unwrap();
        assert!(cert.min_eigenvalue > 0.0);
        assert!(cert.residual <= 1e-8);
        // oracle: P = 2 int_0^inf e^{A^T t} Q e^{A t} dt, by a Riemann sum of the
        // matrix exponential; slow modes decay like e^{-0.05 t}
        let a = error_matrix(&h, &g_d, &phi_d, &g, &gamma_d).unwrap();
        let mut q = DMatrix::identity(8, 8) * 2.0;
        for k in 2..8 {
            q[(k, k)] = 2.0 * cert.gamma;
        }
        // composite Simpson rule on [0, 600]
        let dt = 2e-3;
        let step = linalg::expm(&(&a * dt));
        let mut e = DMatrix::<f64>::identity(8, 8);
        let mut acc = &q * (dt / 3.0);
        for k in 1..=300_000usize {
            e = &step * &e;
            let w = if k == 300_000 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += e.transpose() * &q * &e * (w * dt / 3.0);
        }
        let rel = (&acc - &cert.p).norm() / cert.p.norm();
        assert!(rel < 1e-4, "relative deviation {rel}");
    }

    #[test]
    fn observer_rhs_at_error_equilibrium() {
        let model = AgentModel::linear(2, 30.0, 10.0).unwrap();
        let (h, _, _, _, gamma_d) = observer_example();
        let xi = [0.3, -0.2];
        let u = [0.7, 0.1];
        let w = [0.1, 0.2, -0.3, 0.4, 0.0, 0.5];
        let rate = observer_rhs(&model, &xi, &xi, &u, &w, &h, &gamma_d).unwrap();
        // plant with the true disturbance Gamma_d w
        let mut d = vec![0.0; 2];
        linalg::matvec(&gamma_d, &w, &mut d);
        let total: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + b).collect();
        let plant = model.rhs(&xi, &total).unwrap();
        for (a, b) in rate.iter().zip(&plant) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn observer_rejects_unsupported_agents() {
        let cubic = AgentModel::new(crate::agents::CubicDampedAgent::new(1, 1.0, 1.0, 1.0).unwrap()).unwrap();
        // the cubic agent has a constant g and state output, so it is accepted
        let h = scalar(5.0);
        let gd = scalar(1.0);
        assert!(observer_rhs(&cubic, &[0.0], &[0.0], &[0.0], &[0.0], &h, &gd).is_ok());
        assert!(observer_rhs(&cubic, &[0.0, 1.0], &[0.0], &[0.0], &[0.0], &h, &gd).is_err());
    }
}
