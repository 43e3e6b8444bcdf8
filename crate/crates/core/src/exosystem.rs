//! Autonomous signal generators `w' = Phi w`, output `Gamma w`, used for
//! reference velocities and matched disturbances.
//!
//! `Phi` is required to be skew-symmetric. When it is block diagonal with
//! `1x1` zero blocks and `2x2` rotation generators `[[0, w], [-w, 0]]` the
//! solution is evaluated in closed form; any other skew `Phi` falls back to a
//! dense matrix exponential.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Hypothesis, Result};
use crate::linalg;

const SKEW_TOL: f64 = 1e-12;
const OBSERVABILITY_TOL: f64 = 1e-10;

/// A diagonal block of a structured `Phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExoBlock {
    /// 1x1 zero block: a constant component.
    Constant,
    /// 2x2 block `[[0, omega], [-omega, 0]]`.
    Rotation(f64),
}

impl ExoBlock {
    pub fn dim(&self) -> usize {
        match self {
            ExoBlock::Constant => 1,
            ExoBlock::Rotation(_) => 2,
        }
    }

    fn matrix(&self) -> DMatrix<f64> {
        match *self {
            ExoBlock::Constant => DMatrix::zeros(1, 1),
            ExoBlock::Rotation(w) => DMatrix::from_row_slice(2, 2, &[0.0, w, -w, 0.0]),
        }
    }
}

/// One output component of a `mixed` exosystem: its own diagonal blocks and
/// the output row acting on them.
#[derive(Debug, Clone, PartialEq)]
pub struct ExoChannel {
    /// Frequencies; `0` yields a constant (1-state) block, anything else a
    /// rotation (2-state) block.
    pub frequencies: Vec<f64>,
    pub gain_row: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExosystemSpec {
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
    w0: Vec<f64>,
    blocks: Option<Vec<ExoBlock>>,
}

impl ExosystemSpec {
    /// General constructor; checks dimensions and skew-symmetry and detects
    /// closed-form block structure.
    pub fn new(phi: DMatrix<f64>, gamma: DMatrix<f64>, w0: Vec<f64>) -> Result<Self> {
        let q = phi.nrows();
        if phi.ncols() != q {
            return Err(Error::dims("exosystem Phi (square)", q, phi.ncols()));
        }
        if gamma.ncols() != q {
            return Err(Error::dims("exosystem Gamma columns", q, gamma.ncols()));
        }
        if w0.len() != q {
            return Err(Error::dims("exosystem w0", q, w0.len()));
        }
        let skew = (&phi + phi.transpose()).norm();
        if skew > SKEW_TOL {
            return Err(Error::hypothesis(
                Hypothesis::SkewSymmetricExosystem,
                format!("|Phi^T + Phi| = {skew:e}"),
            ));
        }
        let blocks = detect_blocks(&phi);
        Ok(Self {
            phi,
            gamma,
            w0,
            blocks,
        })
    }

    /// `Phi = 0`, `Gamma = I_p`, `w0 = value`.
    pub fn constant(value: &[f64]) -> Result<Self> {
        let p = value.len();
        if p == 0 {
            return Err(Error::param("value", "dimension must be at least 1"));
        }
        Self::new(DMatrix::zeros(p, p), DMatrix::identity(p, p), value.to_vec())
    }

    /// One rotation block per output component with `Gamma` block diagonal
    /// in the given `1x2` rows.
    pub fn harmonic(frequencies: &[f64], gain_rows: &[[f64; 2]], w0: &[f64]) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::param("frequencies", "at least one channel is required"));
        }
        if frequencies.len() != gain_rows.len() {
            return Err(Error::dims(
                "harmonic gain rows",
                frequencies.len(),
                gain_rows.len(),
            ));
        }
        for (l, &w) in frequencies.iter().enumerate() {
            if w == 0.0 || !w.is_finite() {
                return Err(Error::hypothesis(
                    Hypothesis::HarmonicStructure,
                    format!("frequency of channel {} must be nonzero", l + 1),
                ));
            }
            if gain_rows[l] == [0.0, 0.0] {
                return Err(Error::hypothesis(
                    Hypothesis::HarmonicStructure,
                    format!("output row of channel {} must be nonzero", l + 1),
                ));
            }
        }
        let channels: Vec<ExoChannel> = frequencies
            .iter()
            .zip(gain_rows)
            .map(|(&w, r)| ExoChannel {
                frequencies: vec![w],
                gain_row: r.to_vec(),
            })
            .collect();
        Self::mixed(&channels, w0)
    }

    /// Block-diagonal concatenation of per-channel generators, each mixing
    /// constant and rotation blocks.
    pub fn mixed(channels: &[ExoChannel], w0: &[f64]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::param("channels", "at least one channel is required"));
        }
        let mut blocks = Vec::new();
        let mut gains = Vec::new();
        for (l, ch) in channels.iter().enumerate() {
            if ch.frequencies.is_empty() {
                return Err(Error::param(format!("channels[{}]", l + 1), "no blocks"));
            }
            let ch_blocks: Vec<ExoBlock> = ch
                .frequencies
                .iter()
                .map(|&w| {
                    if w == 0.0 {
                        ExoBlock::Constant
                    } else {
                        ExoBlock::Rotation(w)
                    }
                })
                .collect();
            let dim: usize = ch_blocks.iter().map(ExoBlock::dim).sum();
            if ch.gain_row.len() != dim {
                return Err(Error::dims(
                    format!("channels[{}].gain_row", l + 1),
                    dim,
                    ch.gain_row.len(),
                ));
            }
            gains.push(DMatrix::from_row_slice(1, dim, &ch.gain_row));
            blocks.extend(ch_blocks);
        }
        let phi = linalg::block_diag(&blocks.iter().map(ExoBlock::matrix).collect::<Vec<_>>());
        let gamma = linalg::block_diag(&gains);
        Self::new(phi, gamma, w0.to_vec())
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn w0(&self) -> &[f64] {
        &self.w0
    }

    pub fn state_dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn blocks(&self) -> Option<&[ExoBlock]> {
        self.blocks.as_deref()
    }

    pub fn with_initial(mut self, w0: Vec<f64>) -> Result<Self> {
        if w0.len() != self.state_dim() {
            return Err(Error::dims("exosystem w0", self.state_dim(), w0.len()));
        }
        self.w0 = w0;
        Ok(self)
    }

    pub fn is_zero(&self) -> bool {
        self.phi.iter().all(|v| *v == 0.0)
    }

    pub fn is_observable(&self) -> bool {
        is_observable(&self.gamma, &self.phi).unwrap_or(false)
    }

    /// Exactly the structure required for harmonic rejection on trees: one
    /// rotation block with nonzero frequency per output component, and
    /// `Gamma` block diagonal with nonzero `1x2` rows.
    pub fn has_harmonic_structure(&self) -> bool {
        let Some(blocks) = &self.blocks else {
            return false;
        };
        let p = self.output_dim();
        if blocks.len() != p || self.state_dim() != 2 * p {
            return false;
        }
        if !blocks
            .iter()
            .all(|b| matches!(b, ExoBlock::Rotation(w) if *w != 0.0))
        {
            return false;
        }
        (0..p).all(|l| {
            let own = self.gamma[(l, 2 * l)] != 0.0 || self.gamma[(l, 2 * l + 1)] != 0.0;
            let others = (0..2 * p)
                .filter(|&j| j / 2 != l)
                .all(|j| self.gamma[(l, j)] == 0.0);
            own && others
        })
    }

    /// `w(t) = e^{Phi t} w0`.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.state_into(t, &mut out);
        out
    }

    pub(crate) fn state_into(&self, t: f64, out: &mut [f64]) {
        match &self.blocks {
            Some(blocks) => {
                let mut i = 0;
                for b in blocks {
                    match *b {
                        ExoBlock::Constant => out[i] = self.w0[i],
                        ExoBlock::Rotation(w) => {
                            let (s, c) = (w * t).sin_cos();
                            let (a, bb) = (self.w0[i], self.w0[i + 1]);
                            out[i] = c * a + s * bb;
                            out[i + 1] = -s * a + c * bb;
                        }
                    }
                    i += b.dim();
                }
            }
            None => {
                let e = linalg::expm(&(&self.phi * t));
                let w = e * DVector::from_column_slice(&self.w0);
                out.copy_from_slice(w.as_slice());
            }
        }
    }

    /// `(w(t), Gamma w(t))`.
    pub fn solution(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if t < 0.0 {
            return Err(Error::param("t", "must be non-negative"));
        }
        let w = self.state_at(t);
        let mut y = vec![0.0; self.output_dim()];
        linalg::matvec(&self.gamma, &w, &mut y);
        Ok((w, y))
    }
}

/// `make_constant(p, value)`.
pub fn make_constant(p: usize, value: &[f64]) -> Result<ExosystemSpec> {
    if p == 0 {
        return Err(Error::param("p", "must be at least 1"));
    }
    if value.len() != p {
        return Err(Error::dims("constant exosystem value", p, value.len()));
    }
    ExosystemSpec::constant(value)
}

/// `make_harmonic(frequencies, gain_rows)` with initial state `w0`.
pub fn make_harmonic(frequencies: &[f64], gain_rows: &[[f64; 2]], w0: &[f64]) -> Result<ExosystemSpec> {
    ExosystemSpec::harmonic(frequencies, gain_rows, w0)
}

/// Rank test on `[Gamma; Gamma Phi; ...; Gamma Phi^{q-1}]`.
pub fn is_observable(gamma: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<bool> {
    let q = phi.nrows();
    if phi.ncols() != q {
        return Err(Error::dims("Phi (square)", q, phi.ncols()));
    }
    if gamma.ncols() != q {
        return Err(Error::dims("Gamma columns", q, gamma.ncols()));
    }
    let p = gamma.nrows();
    let mut obs = DMatrix::zeros(p * q, q);
    let mut block = gamma.clone();
    for k in 0..q {
        obs.view_mut((k * p, 0), (p, q)).copy_from(&block);
        block = &block * phi;
    }
    Ok(linalg::rank(&obs, OBSERVABILITY_TOL) == q)
}

fn detect_blocks(phi: &DMatrix<f64>) -> Option<Vec<ExoBlock>> {
    let q = phi.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < q {
        let rest_zero = |row: usize, from: usize, to: usize| {
            (0..q)
                .filter(|&j| j < from || j >= to)
                .all(|j| phi[(row, j)] == 0.0)
        };
        if phi[(i, i)] == 0.0 && rest_zero(i, i, i + 1) && (0..q).all(|r| phi[(r, i)] == 0.0) {
            blocks.push(ExoBlock::Constant);
            i += 1;
            continue;
        }
        if i + 1 < q {
            let w = phi[(i, i + 1)];
            let ok = phi[(i, i)] == 0.0
                && phi[(i + 1, i + 1)] == 0.0
                && phi[(i + 1, i)] == -w
                && rest_zero(i, i, i + 2)
                && rest_zero(i + 1, i, i + 2);
            if ok && w != 0.0 {
                blocks.push(ExoBlock::Rotation(w));
                i += 2;
                continue;
            }
        }
        return None;
    }
    Some(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rot(w: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, w, -w, 0.0])
    }

    #[test]
    fn constant_generator() {
        let e = make_constant(2, &[1.0, 1.0]).unwrap();
        assert_eq!(e.phi(), &DMatrix::zeros(2, 2));
        assert_eq!(e.gamma(), &DMatrix::identity(2, 2));
        assert_eq!(e.w0(), &[1.0, 1.0]);
        let z = make_constant(1, &[0.0]).unwrap();
        assert_eq!(z.solution(12.0).unwrap().1, vec![0.0]);
        let c = make_constant(3, &[1.0, 2.0, 3.0]).unwrap();
        for t in [0.0, 1.0, 1e3] {
            assert_eq!(c.solution(t).unwrap().0, vec![1.0, 2.0, 3.0]);
        }
        assert!(make_constant(2, &[1.0]).is_err());
    }

    #[test]
    fn harmonic_generator_matches_printed_blocks() {
        let e = make_harmonic(&[1.0, 1.0], &[[0.5, 0.5], [-0.5, 0.5]], &[0.1; 4]).unwrap();
        let expect = DMatrix::<f64>::identity(2, 2).kronecker(&rot(1.0));
        assert_eq!(e.phi(), &expect);
        #[rustfmt::skip]
        let gamma = DMatrix::from_row_slice(2, 4, &[
            0.5, 0.5, 0.0, 0.0,
            0.0, 0.0, -0.5, 0.5,
        ]);
        assert_eq!(e.gamma(), &gamma);
        assert!(e.has_harmonic_structure());
        assert!(e.is_observable());
    }

    #[test]
    fn harmonic_rejects_degenerate_channels() {
        let err = make_harmonic(&[0.0], &[[1.0, 0.0]], &[1.0, 0.0]).unwrap_err();
        assert_eq!(err.violated_hypothesis(), Some(Hypothesis::HarmonicStructure));
        let err = make_harmonic(&[1.0], &[[0.0, 0.0]], &[1.0, 0.0]).unwrap_err();
        assert_eq!(err.violated_hypothesis(), Some(Hypothesis::HarmonicStructure));
    }

    #[test]
    fn rotation_closed_form() {
        let e = make_harmonic(&[1.0], &[[1.0, 0.0]], &[1.0, 0.0]).unwrap();
        let (w, y) = e.solution(PI / 2.0).unwrap();
        assert!((w[0] - 0.0).abs() < 1e-15 && (w[1] + 1.0).abs() < 1e-15);
        assert!(y[0].abs() < 1e-15);
        let (w, _) = e.solution(PI).unwrap();
        assert!((w[0] + 1.0).abs() < 1e-15 && w[1].abs() < 1e-15);
        assert!(e.solution(-1.0).is_err());
    }

    #[test]
    fn constant_disturbance_output() {
        for i in 1..=5 {
            let v = [i as f64, i as f64 + 3.0];
            let e = make_constant(2, &v).unwrap();
            assert_eq!(e.solution(17.5).unwrap().1, v.to_vec());
        }
    }

    #[test]
    fn observability_examples() {
        assert!(is_observable(&DMatrix::identity(2, 2), &DMatrix::zeros(2, 2)).unwrap());
        let row = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(!is_observable(&row, &DMatrix::zeros(2, 2)).unwrap());
        assert!(is_observable(&row, &rot(1.0)).unwrap());
        assert!(is_observable(&row, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn mixed_generator_matches_observer_example() {
        // I_2 (x) [[0,0,0],[0,0,2],[0,-2,0]]
        let ch = |row: Vec<f64>| ExoChannel {
            frequencies: vec![0.0, 2.0],
            gain_row: row,
        };
        let e =
            ExosystemSpec::mixed(&[ch(vec![0.5, 0.5, 0.5]), ch(vec![0.5, -0.5, 0.5])], &[0.1; 6]).unwrap();
        #[rustfmt::skip]
        let inner = DMatrix::from_row_slice(3, 3, &[
            0.0, 0.0, 0.0,
            0.0, 0.0, 2.0,
            0.0, -2.0, 0.0,
        ]);
        assert_eq!(e.phi(), &DMatrix::<f64>::identity(2, 2).kronecker(&inner));
        #[rustfmt::skip]
        let gamma = DMatrix::from_row_slice(2, 6, &[
            0.5, 0.5, 0.5, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.5, -0.5, 0.5,
        ]);
        assert_eq!(e.gamma(), &gamma);
        assert!(e.is_observable());
        assert!(!e.has_harmonic_structure());
        assert_eq!(e.blocks().unwrap().len(), 4);
    }

    #[test]
    fn non_skew_rejected() {
        let phi = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let err = ExosystemSpec::new(phi, DMatrix::identity(2, 2), vec![1.0, 0.0]).unwrap_err();
        assert_eq!(
            err.violated_hypothesis(),
            Some(Hypothesis::SkewSymmetricExosystem)
        );
    }

    #[test]
    fn unstructured_phi_uses_dense_exponential() {
        // rotation generator written in a rotated basis: skew but not block form
        let c = 0.6f64;
        let s = 0.8f64;
        let q = DMatrix::from_row_slice(3, 3, &[c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c]);
        let base = linalg::block_diag(&[rot(1.3), DMatrix::zeros(1, 1)]);
        let phi_q = &q * &base * q.transpose();
        let phi = (&phi_q - phi_q.transpose()) * 0.5;
        let e = ExosystemSpec::new(phi.clone(), DMatrix::identity(3, 3), vec![1.0, 2.0, -1.0]).unwrap();
        assert!(e.blocks().is_none());
        // oracle: rotate into the block basis, use the closed form, rotate back
        let t: f64 = 2.7;
        let w0 = DVector::from_row_slice(&[1.0, 2.0, -1.0]);
        let wb = q.transpose() * &w0;
        let (sn, cs) = (1.3 * t).sin_cos();
        let wbt = DVector::from_row_slice(&[cs * wb[0] + sn * wb[1], -sn * wb[0] + cs * wb[1], wb[2]]);
        let expect = &q * wbt;
        let got = e.state_at(t);
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn closed_form_matches_dense_expm() {
        let e = make_harmonic(&[2.0, 0.5], &[[1.0, 0.3], [0.2, -1.0]], &[0.3, -0.2, 1.0, 0.4]).unwrap();
        for t in [0.0, 0.3, 5.0, 40.0] {
            let dense = linalg::expm(&(e.phi() * t)) * DVector::from_row_slice(e.w0());
            for (a, b) in e.state_at(t).iter().zip(dense.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    fn arb_harmonic() -> impl Strategy<Value = ExosystemSpec> {
        (1usize..=3)
            .prop_flat_map(|p| {
                (
                    proptest::collection::vec(prop_oneof![-5.0f64..-0.05, 0.05f64..5.0], p),
                    proptest::collection::vec((0.1f64..2.0, -2.0f64..2.0), p),
                    proptest::collection::vec(-3.0f64..3.0, 2 * p),
                )
            })
            .prop_map(|(w, rows, w0)| {
                let rows: Vec<[f64; 2]> = rows.into_iter().map(|(a, b)| [a, b]).collect();
                make_harmonic(&w, &rows, &w0).unwrap()
            })
    }

    proptest! {
        #[test]
        fn harmonic_specs_are_skew_and_observable(e in arb_harmonic()) {
            prop_assert!((e.phi() + e.phi().transpose()).norm() <= 1e-12);
            prop_assert!(e.is_observable());
            prop_assert!(e.has_harmonic_structure());
        }

        #[test]
        fn norm_is_conserved(e in arb_harmonic()) {
            let n0 = linalg::norm2(e.w0());
            for k in 0..=200 {
                let t = k as f64 * 0.5;
                let n = linalg::norm2(&e.state_at(t));
                prop_assert!((n - n0).abs() <= 1e-10);
            }
        }

        #[test]
        fn solution_satisfies_the_ode(e in arb_harmonic(), t in 0.0f64..50.0) {
            let h = 1e-4;
            let wp = e.state_at(t + h);
            let wm = e.state_at(t - h + h.min(t) - h.min(t));
            let wm = if t >= h { e.state_at(t - h) } else { wm };
            let w = e.state_at(t);
            let pw = e.phi() * DVector::from_row_slice(&w);
            if t >= h {
                for j in 0..w.len() {
                    let fd = (wp[j] - wm[j]) / (2.0 * h);
                    prop_assert!((fd - pw[j]).abs() <= 1e-6 * (1.0 + pw[j].abs()));
                }
            }
        }
    }
}
