//! Two-sided exit matrices of an MMBM started at 0 in the interval `(−b, a)`:
//!
//! ```text
//! C(a,b) = E[e^{−qτ_a}; τ_a < τ_b⁻, J(τ_a)]     (N × N₊)
//! D(a,b) = E[e^{−qτ_b⁻}; τ_b⁻ < τ_a, J(τ_b⁻)]   (N × N₋)
//! ```
//!
//! obtained from `C V₊ e^{aΓ} + D V₋ e^{−bΓ} = V` with the full-plane pair.
//! For `q = 0, κ = 0` the null chain `(1, h)` contributes the column
//! `C(a1₊ + h₊) + D(−b1₋ + h₋) = h`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::firstpassage::{first_passage, rows_of};
use crate::linalg::{self, CMatrix};
use crate::model::MapModel;
use crate::spectral::{self, BlockKind, Region, SpectralConfig};

const IMAG_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct ScaleMatrices {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    /// `N × N₊`.
    pub c: DMatrix<f64>,
    /// `N × N₋`.
    pub d: DMatrix<f64>,
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
    /// Max-abs residual of the defining system, relative to `‖V‖`.
    pub jordan_residual: f64,
    pub condition: f64,
    /// Whether the null-chain column was part of the system.
    pub zero_drift_column: bool,
}

pub fn scale_matrices(model: &MapModel, q: f64, a: f64, b: f64, cfg: &SpectralConfig) -> Result<ScaleMatrices> {
    if !model.is_mmbm() {
        return Err(Error::NotMmbm);
    }
    if !(a >= 0.0 && b >= 0.0 && a + b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "levels must be nonnegative and not both zero, got a = {a}, b = {b}"
        )));
    }
    let sys = spectral::assemble_pair(model, q, Region::All, cfg)?;
    let plus = model.plus_states().to_vec();
    let minus = model.minus_states();
    let (np, nm) = (plus.len(), minus.len());
    let m = sys.columns();
    if np + nm != m {
        return Err(Error::CountMismatch {
            what: "columns of the full-plane Jordan pair".into(),
            expected: np + nm,
            found: m,
            spectrum: sys.blocks.iter().map(|b| (b.eigenvalue, b.size())).collect(),
        });
    }

    // Right-multiplying each block column by e^{−aΓ} (right half-plane) or
    // e^{bΓ} (left half-plane) keeps every exponential bounded.
    let v_plus = sys.rows(&plus);
    let v_minus = sys.rows(&minus);
    let e_a = sys.exp_gamma(a);
    let e_mb = sys.exp_gamma(-b);
    let e_ma = sys.exp_gamma(-a);
    let e_b = sys.exp_gamma(b);
    let e_amb = sys.exp_gamma(-(a + b));
    let e_apb = sys.exp_gamma(a + b);

    let mut lhs = CMatrix::zeros(m, m);
    let mut rhs = CMatrix::zeros(model.dim(), m);
    for (block, range) in sys.blocks.iter().zip(sys.block_ranges()) {
        let (s, len) = (range.start, range.len());
        let sq = |e: &CMatrix| e.view((s, s), (len, len)).into_owned();
        let vp = v_plus.columns(s, len).into_owned();
        let vm = v_minus.columns(s, len).into_owned();
        let v = sys.v.columns(s, len).into_owned();
        let (top, bottom, right) = match block.kind {
            BlockKind::Positive => (vp, vm * sq(&e_amb), v * sq(&e_ma)),
            BlockKind::Negative => (vp * sq(&e_apb), vm, v * sq(&e_b)),
            BlockKind::NullPair | BlockKind::ZeroDrift => (vp * sq(&e_a), vm * sq(&e_mb), v),
        };
        lhs.view_mut((0, s), (np, len)).copy_from(&top);
        lhs.view_mut((np, s), (nm, len)).copy_from(&bottom);
        rhs.view_mut((0, s), (model.dim(), len)).copy_from(&right);
    }

    let condition = linalg::condition_number(&lhs);
    // [C D] lhs = rhs  ⇔  lhsᵀ [C D]ᵀ = rhsᵀ.
    let solution = lhs
        .transpose()
        .col_piv_qr()
        .solve(&rhs.transpose())
        .ok_or(Error::Singular {
            what: "scale system".into(),
            condition,
        })?
        .transpose();
    let residual = linalg::max_abs(&(&solution * &lhs - &rhs)) / linalg::max_abs(&rhs).max(1.0);
    let imag = linalg::max_imag(&solution);
    if imag > IMAG_TOL {
        return Err(Error::ImaginaryResidue {
            what: "[C D]".into(),
            residue: imag,
        });
    }
    let real = linalg::real_part(&solution);
    Ok(ScaleMatrices {
        a,
        b,
        q,
        c: real.columns(0, np).into_owned(),
        d: real.columns(np, nm).into_owned(),
        plus,
        minus,
        jordan_residual: residual,
        condition,
        zero_drift_column: sys.zero_drift.is_some(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StrongMarkovReport {
    /// `‖C − Π⁺e^{aΛ⁺} + DΠ₋⁺e^{(a+b)Λ⁺}‖`.
    pub c_residual: f64,
    /// `‖D − Π⁻e^{bΛ⁻} + CΠ₊⁻e^{(a+b)Λ⁻}‖`.
    pub d_residual: f64,
}

impl StrongMarkovReport {
    pub fn max(&self) -> f64 {
        self.c_residual.max(self.d_residual)
    }
}

/// Residuals of the coupled first-passage equations.
pub fn verify_strong_markov(model: &MapModel, sm: &ScaleMatrices, cfg: &SpectralConfig) -> Result<StrongMarkovReport> {
    let up = first_passage(model, sm.q, cfg)?;
    let down = first_passage(&model.mirrored()?, sm.q, cfg)?;
    let ab = sm.a + sm.b;
    let c_pred = &up.pi * up.passage_probability(sm.a)?
        - &sm.d * linalg::select_rows(&up.pi, &sm.minus) * up.passage_probability(ab)?;
    let d_pred = &down.pi * down.passage_probability(sm.b)?
        - &sm.c * linalg::select_rows(&down.pi, &sm.plus) * down.passage_probability(ab)?;
    Ok(StrongMarkovReport {
        c_residual: (&sm.c - c_pred).amax(),
        d_residual: (&sm.d - d_pred).amax(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScaleReport {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    pub plus_states: Vec<usize>,
    pub minus_states: Vec<usize>,
    pub residuals: ScaleResiduals,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScaleResiduals {
    pub jordan: f64,
    pub strong_markov: Option<StrongMarkovReport>,
    pub condition: f64,
}

impl ScaleMatrices {
    /// Row sums of `[C | D]`.
    pub fn exit_mass(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.c.nrows(),
            (0..self.c.nrows()).map(|i| self.c.row(i).sum() + self.d.row(i).sum()),
        )
    }

    pub fn report(&self, strong_markov: Option<StrongMarkovReport>) -> ScaleReport {
        ScaleReport {
            a: self.a,
            b: self.b,
            q: self.q,
            c: rows_of(&self.c),
            d: rows_of(&self.d),
            plus_states: self.plus.clone(),
            minus_states: self.minus.clone(),
            residuals: ScaleResiduals {
                jordan: self.jordan_residual,
                strong_markov,
                condition: self.condition,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn bm(drift: f64) -> MapModel {
        MapModel::mmbm(dmatrix![0.0], &[drift], &[1.0]).unwrap()
    }

    #[test]
    fn classical_exit_probability() {
        // P(hit a before −b) for BM(−1, 1) with scale function e^{2x}.
        for (a, b) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.3)] {
            let sm = scale_matrices(&bm(-1.0), 0.0, a, b, &Default::default()).unwrap();
            let exact = (1.0 - (-2.0 * b).exp()) / ((2.0 * a).exp() - (-2.0 * b).exp());
            assert!((sm.c[(0, 0)] - exact).abs() < 1e-12, "{a} {b}: {}", sm.c);
            assert!((sm.d[(0, 0)] - (1.0 - exact)).abs() < 1e-12);
        }
    }

    #[test]
    fn driftless_symmetric_exit() {
        let sm = scale_matrices(&bm(0.0), 0.0, 1.0, 1.0, &Default::default()).unwrap();
        assert!(sm.zero_drift_column);
        assert!((sm.c[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((sm.d[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn killed_exit_mass_is_lost() {
        let sm = scale_matrices(&bm(0.3), 0.5, 1.0, 1.0, &Default::default()).unwrap();
        assert!(sm.exit_mass()[0] < 1.0);
        let sm_report = verify_strong_markov(&bm(0.3), &sm, &Default::default()).unwrap();
        assert!(sm_report.max() < 1e-10);
    }
}
