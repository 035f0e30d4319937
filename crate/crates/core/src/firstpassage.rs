//! First-passage matrices `Λ(q)` and `Π(q)` from the right half-plane Jordan
//! pair: `Λ = −V₊ Γ V₊⁻¹` and `Π = V V₊⁻¹`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::{DriftSign, MapModel};
use crate::spectral::{self, BlockKind, JordanSystem, Region, SpectralConfig};

const IMAG_TOL: f64 = 1e-8;
const MAX_CONDITION: f64 = 1e13;

#[derive(Clone, Debug)]
pub struct FirstPassage {
    pub q: f64,
    /// `N₊ × N₊`.
    pub lambda: DMatrix<f64>,
    /// `N × N₊`.
    pub pi: DMatrix<f64>,
    pub plus: Vec<usize>,
    pub down: Vec<usize>,
    /// True unless `q = 0` and `κ ≥ 0`.
    pub defective: bool,
    /// 2-norm condition number of `V₊`.
    pub condition: f64,
    /// Largest imaginary part discarded when realizing `Λ` and `Π`.
    pub imaginary_residue: f64,
    pub system: JordanSystem,
}

#[derive(Clone, Debug, Serialize)]
pub struct FirstPassageReport {
    pub q: f64,
    #[serde(rename = "Lambda")]
    pub lambda: Vec<Vec<f64>>,
    #[serde(rename = "Pi")]
    pub pi: Vec<Vec<f64>>,
    pub plus_states: Vec<usize>,
    pub defective: bool,
    pub condition: f64,
    pub imaginary_residue: f64,
    pub mass_defect: Vec<f64>,
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn first_passage(model: &MapModel, q: f64, cfg: &SpectralConfig) -> Result<FirstPassage> {
    let system = spectral::assemble_pair(model, q, Region::Positive, cfg)?;
    let plus = model.plus_states().to_vec();
    let v_plus = system.rows(&plus);
    let condition = linalg::condition_number(&v_plus);
    if !(condition < MAX_CONDITION) {
        return Err(Error::Singular {
            what: "V+".into(),
            condition,
        });
    }
    let inv = v_plus.clone().try_inverse().ok_or(Error::Singular {
        what: "V+".into(),
        condition,
    })?;
    let lambda_c: CMatrix = -(&v_plus * &system.gamma * &inv);
    let pi_c: CMatrix = &system.v * &inv;

    let scale = linalg::max_abs(&lambda_c).max(1.0);
    let imaginary_residue = (linalg::max_imag(&lambda_c) / scale).max(linalg::max_imag(&pi_c));
    if imaginary_residue > IMAG_TOL {
        return Err(Error::ImaginaryResidue {
            what: "Lambda".into(),
            residue: imaginary_residue,
        });
    }
    Ok(FirstPassage {
        q,
        lambda: linalg::real_part(&lambda_c),
        pi: linalg::real_part(&pi_c),
        plus,
        down: model.down_states().to_vec(),
        defective: q > 0.0 || model.drift_sign() == DriftSign::Negative,
        condition,
        imaginary_residue,
        system,
    })
}

impl FirstPassage {
    /// `e^{Λx}`: `P(J(τ_x) = j, τ_x < e_q | J(τ_0) = i)` for `i, j ∈ E₊`.
    pub fn passage_probability(&self, x: f64) -> Result<DMatrix<f64>> {
        if !(x >= 0.0) {
            return Err(Error::InvalidArgument(format!("level must be nonnegative, got {x}")));
        }
        Ok(linalg::expm(&(&self.lambda * x)))
    }

    /// `Π e^{Λx}`: passage probabilities from every starting state.
    pub fn passage_from_all(&self, x: f64) -> Result<DMatrix<f64>> {
        Ok(&self.pi * self.passage_probability(x)?)
    }

    /// Probability of never passing level 0, `1 − Π1`.
    pub fn mass_defect(&self) -> DVector<f64> {
        let ones = DVector::from_element(self.pi.ncols(), 1.0);
        DVector::from_element(self.pi.nrows(), 1.0) - &self.pi * ones
    }

    /// Stationary law of the non-defective `Λ`, from its left null space.
    pub fn lambda_stationary(&self) -> Result<DVector<f64>> {
        if self.defective {
            return Err(Error::Precondition(
                "Lambda is defective (q > 0 or negative drift) and has no stationary law".into(),
            ));
        }
        let pi = linalg::left_null_normalized(&self.lambda).ok_or(Error::Singular {
            what: "stationary system of Lambda".into(),
            condition: f64::INFINITY,
        })?;
        Ok(pi)
    }

    /// `e₁ᵀ V₊⁻¹`, the first row of the inverse pair matrix.
    pub fn pair_stationary(&self) -> Result<DVector<f64>> {
        if self.defective {
            return Err(Error::Precondition(
                "the null pair is only present for q = 0 and nonnegative drift".into(),
            ));
        }
        let inv = self.system.rows(&self.plus).try_inverse().ok_or(Error::Singular {
            what: "V+".into(),
            condition: self.condition,
        })?;
        Ok(inv.row(0).transpose().map(|z| z.re))
    }

    /// Largest violation of `(λI + Λ) v_j₊ + v_{j−1}₊ = 0` and `Π v_j₊ = v_j`
    /// over the chains of the pair.
    pub fn chain_consistency(&self) -> f64 {
        let lambda = linalg::to_complex(&self.lambda);
        let pi = linalg::to_complex(&self.pi);
        let mut worst: f64 = 0.0;
        for block in &self.system.blocks {
            if block.kind != BlockKind::Positive && block.kind != BlockKind::NullPair {
                continue;
            }
            let mut prev: Option<CMatrix> = None;
            for v in &block.vectors {
                let col = CMatrix::from_column_slice(v.len(), 1, v.as_slice());
                let vp = linalg::select_rows(&col, &self.plus);
                let mut r = &lambda * &vp + &vp * block.eigenvalue;
                if let Some(p) = &prev {
                    r += p;
                }
                worst = worst.max(r.iter().map(|z| z.norm()).fold(0.0, f64::max));
                worst = worst.max(linalg::max_abs(&(&pi * &vp - col)));
                prev = Some(vp);
            }
        }
        worst
    }

    pub fn report(&self) -> FirstPassageReport {
        FirstPassageReport {
            q: self.q,
            lambda: rows_of(&self.lambda),
            pi: rows_of(&self.pi),
            plus_states: self.plus.clone(),
            defective: self.defective,
            condition: self.condition,
            imaginary_residue: self.imaginary_residue,
            mass_defect: self.mass_defect().iter().copied().collect(),
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
    fn scalar_right_inverse() {
        for q in [0.0, 0.5, 1.0, 5.0] {
            let fp = first_passage(&bm(-1.0), q, &Default::default()).unwrap();
            let expected = -(1.0 + (1.0 + 2.0 * q).sqrt());
            assert!((fp.lambda[(0, 0)] - expected).abs() < 1e-12, "q={q}");
            assert!((fp.pi[(0, 0)] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_passage_probability() {
        let fp = first_passage(&bm(-1.0), 0.0, &Default::default()).unwrap();
        assert_eq!(fp.passage_probability(0.0).unwrap()[(0, 0)], 1.0);
        let p = fp.passage_probability(1.0).unwrap()[(0, 0)];
        assert!((p - (-2.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn nonnegative_drift_is_non_defective() {
        let fp = first_passage(&bm(1.0), 0.0, &Default::default()).unwrap();
        assert!(!fp.defective);
        assert_eq!(fp.lambda[(0, 0)], 0.0);
        assert_eq!(fp.lambda_stationary().unwrap()[0], 1.0);
    }

    #[test]
    fn two_state_generator_structure() {
        let m = MapModel::mmbm(dmatrix![-1.0, 1.0; 1.0, -1.0], &[1.0, -2.0], &[1.0, 1.0]).unwrap();
        let fp = first_passage(&m, 0.0, &Default::default()).unwrap();
        assert!(fp.defective);
        assert!(fp.lambda[(0, 1)] >= 0.0 && fp.lambda[(1, 0)] >= 0.0);
        let rows = &fp.lambda * DVector::from_element(2, 1.0);
        assert!(rows.iter().all(|&s| s < 0.0));
        assert!(fp.chain_consistency() < 1e-10);
    }
}
