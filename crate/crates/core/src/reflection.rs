//! Stationary laws of reflected processes.
//!
//! * One-sided, spectrally negative input with `κ < 0`: `(W | J = i)` is the
//!   all-time maximum of the time-reversed process, a phase-type law with
//!   density `p(x) = Π̂ e^{Λ̂x} (−Λ̂ 1₊)`.
//! * One-sided, spectrally positive input `Y = −X` (`X` given, `κ > 0`):
//!   `E[e^{−αW} e_Jᵀ] = α ℓᵀ F(α)⁻¹` with `ℓ₊ᵀ = κ e₁ᵀ V₊⁻¹`.
//! * Two-sided MMBM on `[0, b]`: `E[e^{αW} e_Jᵀ] F(α) = α (e^{αb} uᵀ − ℓᵀ)`
//!   with `(u₊ᵀ, ℓ₋ᵀ)` solving a square system built from the full-plane
//!   Jordan pair.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::firstpassage::{first_passage, FirstPassage};
use crate::linalg::{self, CMatrix, CVector};
use crate::model::{DriftSign, MapModel};
use crate::spectral::{self, BlockKind, Region, SpectralConfig};

const IMAG_TOL: f64 = 1e-8;

/// Phase-type description of the one-sided reflection of a spectrally
/// negative input.
#[derive(Clone, Debug)]
pub struct OneSidedNegative {
    /// First-passage data of the time-reversed model at `q = 0`.
    pub reversed: FirstPassage,
    /// `π`, the stationary law of `J`.
    pub stationary: DVector<f64>,
}

pub fn reflect_one_sided_negative(model: &MapModel, cfg: &SpectralConfig) -> Result<OneSidedNegative> {
    if model.drift_sign() != DriftSign::Negative {
        return Err(Error::Precondition(format!(
            "one-sided reflection of a spectrally negative input needs negative drift (kappa = {})",
            model.kappa()
        )));
    }
    let reversed = first_passage(&model.reversed(), 0.0, cfg)?;
    Ok(OneSidedNegative {
        reversed,
        stationary: model.stationary().clone(),
    })
}

impl OneSidedNegative {
    pub fn exit_vector(&self) -> DVector<f64> {
        -(&self.reversed.lambda * DVector::from_element(self.reversed.lambda.nrows(), 1.0))
    }

    /// Conditional densities `p_i(x)` of `W` given `J = i`, for `x > 0`.
    pub fn density(&self, x: f64) -> Result<DVector<f64>> {
        Ok(&self.reversed.pi * self.reversed.passage_probability(x)? * self.exit_vector())
    }

    /// `P(W = 0 | J = i)`.
    pub fn atom(&self) -> DVector<f64> {
        self.reversed.mass_defect()
    }

    /// `P(W ≤ x | J = i)`.
    pub fn cdf(&self, x: f64) -> Result<DVector<f64>> {
        let tail = self.reversed.passage_from_all(x)? * DVector::from_element(self.reversed.plus.len(), 1.0);
        Ok(DVector::from_element(tail.len(), 1.0) - tail)
    }

    /// `P(W ≤ x, J = i)`.
    pub fn joint_cdf(&self, x: f64) -> Result<DVector<f64>> {
        Ok(self.cdf(x)?.component_mul(&self.stationary))
    }

    /// `P(W = 0, J = i) + ∫ p_i π_i`, which must equal `π_i`.
    pub fn mass(&self) -> DVector<f64> {
        let inv = self.reversed.lambda.clone().try_inverse();
        let integral = match inv {
            Some(inv) => &self.reversed.pi * (-inv) * self.exit_vector(),
            None => DVector::from_element(self.stationary.len(), f64::NAN),
        };
        (self.atom() + integral).component_mul(&self.stationary)
    }

    pub fn report(&self, grid: &[f64]) -> Result<OneSidedReport> {
        let mut density = Vec::new();
        for &x in grid {
            density.push((x, self.density(x)?.iter().copied().collect()));
        }
        Ok(OneSidedReport {
            variant: "spectrally_negative",
            kappa: None,
            ell: None,
            lambda_hat: Some(crate::firstpassage::rows_of(&self.reversed.lambda)),
            pi_hat: Some(crate::firstpassage::rows_of(&self.reversed.pi)),
            atom: Some(self.atom().iter().copied().collect()),
            density,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OneSidedReport {
    pub variant: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ell: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", rename = "Lambda_hat")]
    pub lambda_hat: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", rename = "Pi_hat")]
    pub pi_hat: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom: Option<Vec<f64>>,
    /// `(x, p_1(x), …, p_N(x))`.
    pub density: Vec<(f64, Vec<f64>)>,
}

/// One-sided reflection of the spectrally positive input `Y = −X`, described
/// through the spectrally negative `X` with `κ > 0`.
#[derive(Clone, Debug)]
pub struct OneSidedPositive {
    pub model: MapModel,
    pub kappa: f64,
    /// `ℓ`, with `ℓ↓ = 0`.
    pub ell: DVector<f64>,
    pub passage: FirstPassage,
}

pub fn reflect_one_sided_positive(model: &MapModel, cfg: &SpectralConfig) -> Result<OneSidedPositive> {
    if model.drift_sign() != DriftSign::Positive {
        return Err(Error::Precondition(format!(
            "spectrally positive reflection needs positive drift of the sign-flipped model (kappa = {})",
            model.kappa()
        )));
    }
    let passage = first_passage(model, 0.0, cfg)?;
    let row = passage.pair_stationary()? * model.kappa();
    let mut ell = DVector::zeros(model.dim());
    for (k, &i) in passage.plus.iter().enumerate() {
        ell[i] = row[k];
    }
    Ok(OneSidedPositive {
        model: model.clone(),
        kappa: model.kappa(),
        ell,
        passage,
    })
}

impl OneSidedPositive {
    /// `κ π_Λ` on `E₊`, from the stationary law of `Λ`.
    pub fn ell_from_lambda(&self) -> Result<DVector<f64>> {
        Ok(self.passage.lambda_stationary()? * self.kappa)
    }

    pub fn ell_plus(&self) -> DVector<f64> {
        DVector::from_iterator(self.passage.plus.len(), self.passage.plus.iter().map(|&i| self.ell[i]))
    }

    /// `E[e^{−αW} e_Jᵀ] = α ℓᵀ F(α)⁻¹`.
    pub fn transform(&self, alpha: Complex<f64>) -> Result<CVector> {
        let f = self.model.derivative(alpha, 0.0, 0)?;
        let ell = self.ell.map(Complex::from);
        let inv = f.try_inverse().ok_or(Error::Singular {
            what: format!("F({alpha})"),
            condition: f64::INFINITY,
        })?;
        Ok((ell.transpose() * inv).transpose() * alpha)
    }

    pub fn report(&self) -> OneSidedReport {
        OneSidedReport {
            variant: "spectrally_positive",
            kappa: Some(self.kappa),
            ell: Some(self.ell.iter().copied().collect()),
            lambda_hat: None,
            pi_hat: None,
            atom: None,
            density: Vec::new(),
        }
    }
}

/// Two-sided reflection of an MMBM on `[0, b]`.
#[derive(Clone, Debug)]
pub struct TwoSided {
    pub model: MapModel,
    pub b: f64,
    pub kappa: f64,
    pub u: DVector<f64>,
    pub ell: DVector<f64>,
    /// `h` of the null chain when `κ = 0`.
    pub h: Option<DVector<f64>>,
    /// `k` of the defining system.
    pub k: Vec<f64>,
    /// Max-abs residual of the defining system with right side `(kᵀ, 0, …)`.
    pub system_residual: f64,
    pub imaginary_residue: f64,
}

struct TwoSidedSystem {
    /// `(N₊ + N₋) × m`, unknowns `(u₊, ℓ₋)` multiply from the left.
    matrix: CMatrix,
    rhs: CVector,
    /// Column of the `h` vector when `κ = 0`.
    h_column: Option<usize>,
    plus: Vec<usize>,
    minus: Vec<usize>,
}

fn two_sided_system(
    model: &MapModel,
    b: f64,
    cfg: &SpectralConfig,
) -> Result<(TwoSidedSystem, Option<DVector<f64>>, Vec<f64>)> {
    let sys = spectral::assemble_pair(model, 0.0, Region::All, cfg)?;
    let plus = model.plus_states().to_vec();
    let minus = model.minus_states();
    let np = plus.len();
    let m = sys.columns();
    if np + minus.len() != m {
        return Err(Error::CountMismatch {
            what: "columns of the full-plane Jordan pair".into(),
            expected: np + minus.len(),
            found: m,
            spectrum: sys.blocks.iter().map(|b| (b.eigenvalue, b.size())).collect(),
        });
    }
    let v_plus = sys.rows(&plus);
    let v_minus = sys.rows(&minus);
    let up = sys.exp_gamma(b);
    let down = sys.exp_gamma(-b);

    let mut matrix = CMatrix::zeros(m, m);
    let mut rhs = CVector::zeros(m);
    let mut h_column = None;
    let mut h = None;
    let mut k = Vec::new();
    for (block, range) in sys.blocks.iter().zip(sys.block_ranges()) {
        let cols = range.clone();
        let len = cols.len();
        let sq = |e: &CMatrix| e.view((cols.start, cols.start), (len, len)).into_owned();
        let vp = v_plus.columns(cols.start, len).into_owned();
        let vm = v_minus.columns(cols.start, len).into_owned();
        let (top, bottom) = match block.kind {
            BlockKind::Positive => (vp, -(vm * sq(&down))),
            BlockKind::Negative | BlockKind::NullPair | BlockKind::ZeroDrift => (vp * sq(&up), -vm),
        };
        matrix.view_mut((0, cols.start), (np, len)).copy_from(&top);
        matrix.view_mut((np, cols.start), (m - np, len)).copy_from(&bottom);
        match block.kind {
            BlockKind::NullPair => {
                rhs[cols.start] = Complex::from(model.kappa());
                k.push(model.kappa());
            }
            BlockKind::ZeroDrift => {
                let pair = sys.zero_drift.as_ref().expect("zero-drift block carries h");
                let target = zero_drift_target(model, &pair.h);
                rhs[cols.start + 1] = Complex::from(target);
                h_column = Some(cols.start + 1);
                h = Some(pair.h.clone());
                k = vec![0.0, target];
            }
            _ => {}
        }
    }
    Ok((
        TwoSidedSystem {
            matrix,
            rhs,
            h_column,
            plus,
            minus,
        },
        h,
        k,
    ))
}

/// `πᵀ(½Δσ²1 + Δ_a h)`, nonzero whenever `κ = 0`.
pub fn zero_drift_target(model: &MapModel, h: &DVector<f64>) -> f64 {
    let pi = model.stationary();
    model
        .levy()
        .iter()
        .enumerate()
        .map(|(i, l)| pi[i] * (0.5 * l.sigma * l.sigma + l.drift * h[i]))
        .sum()
}

pub fn reflect_two_sided(model: &MapModel, b: f64, cfg: &SpectralConfig) -> Result<TwoSided> {
    if !model.is_mmbm() {
        return Err(Error::NotMmbm);
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "upper barrier must be positive, got {b}"
        )));
    }
    let (sys, h, k) = two_sided_system(model, b, cfg)?;
    let m = sys.matrix.ncols();
    let transposed = sys.matrix.transpose();

    let z: CVector = match sys.h_column {
        None => {
            let qr = transposed.clone().col_piv_qr();
            qr.solve(&sys.rhs).ok_or(Error::Singular {
                what: "two-sided system".into(),
                condition: linalg::condition_number(&transposed),
            })?
        }
        Some(col) => {
            // Left null vector of the system without the h column, scaled by
            // the normalization attached to the null chain.
            let keep: Vec<usize> = (0..m).filter(|&c| c != col).collect();
            let reduced = linalg::select_rows(&transposed, &keep);
            let ns = linalg::null_space(&reduced, cfg.rank_tol);
            if ns.nullity() != 1 {
                return Err(Error::RankAmbiguity {
                    eigenvalue: Complex::from(0.0),
                    singular_values: ns.singular_values,
                });
            }
            let dir: CVector = ns.basis.column(0).into_owned();
            let h = h.as_ref().expect("zero drift carries h");
            let np = sys.plus.len();
            let mut weight = Complex::from(0.0);
            for (k, &i) in sys.plus.iter().enumerate() {
                weight += dir[k] * (b + h[i]);
            }
            for (k, &i) in sys.minus.iter().enumerate() {
                weight -= dir[np + k] * h[i];
            }
            let target = zero_drift_target(model, h);
            if weight.norm() < 1e-300 {
                return Err(Error::Singular {
                    what: "zero-drift normalization".into(),
                    condition: f64::INFINITY,
                });
            }
            dir * (Complex::from(target) / weight)
        }
    };

    let scale = z.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    let imaginary_residue = z.iter().map(|c| c.im.abs()).fold(0.0, f64::max) / scale.max(1.0);
    if imaginary_residue > IMAG_TOL {
        return Err(Error::ImaginaryResidue {
            what: "(u+, l-)".into(),
            residue: imaginary_residue,
        });
    }
    let system_residual = (sys.matrix.transpose() * &z - &sys.rhs)
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);

    let n = model.dim();
    let np = sys.plus.len();
    let mut u = DVector::zeros(n);
    let mut ell = DVector::zeros(n);
    for (k, &i) in sys.plus.iter().enumerate() {
        u[i] = z[k].re;
    }
    for (k, &i) in sys.minus.iter().enumerate() {
        ell[i] = z[np + k].re;
    }
    Ok(TwoSided {
        model: model.clone(),
        b,
        kappa: model.kappa(),
        u,
        ell,
        h,
        k,
        system_residual,
        imaginary_residue,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoSidedReport {
    pub b: f64,
    pub kappa: f64,
    pub u: Vec<f64>,
    pub l: Vec<f64>,
    pub residuals: TwoSidedResiduals,
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoSidedResiduals {
    pub system: f64,
    /// `|(u − ℓ)ᵀ1 − κ|`.
    pub drift_identity: f64,
    /// Residual of the zero-drift normalization, when `κ = 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_drift_normalization: Option<f64>,
    pub barrier_identity: f64,
}

impl TwoSided {
    /// `|(u − ℓ)ᵀ 1 − κ|`.
    pub fn drift_identity_residual(&self) -> f64 {
        ((&self.u - &self.ell).sum() - self.kappa).abs()
    }

    /// `|(u₊ᵀ, −ℓ₋ᵀ)(b1₊ + h₊; h₋) − πᵀ(Δ_a h + ½Δσ²1)|` when `κ = 0`.
    pub fn zero_drift_residual(&self) -> Option<f64> {
        let h = self.h.as_ref()?;
        let lhs = self.b * self.u.sum() + (&self.u - &self.ell).dot(h);
        Some((lhs - zero_drift_target(&self.model, h)).abs())
    }

    /// Predicted `E[e^{αW} e_Jᵀ] = α (e^{αb} uᵀ − ℓᵀ) F(α)⁻¹`; at `α = 0`
    /// this is `πᵀ`.
    pub fn mgf(&self, alpha: Complex<f64>) -> Result<CVector> {
        if alpha.norm() == 0.0 {
            return Ok(self.model.stationary().map(Complex::from));
        }
        let f = self.model.derivative(alpha, 0.0, 0)?;
        let rhs = self.moment_rhs(alpha);
        let inv = f.try_inverse().ok_or(Error::Singular {
            what: format!("F({alpha})"),
            condition: f64::INFINITY,
        })?;
        Ok((rhs.transpose() * inv).transpose())
    }

    /// `α (e^{αb} u − ℓ)`.
    pub fn moment_rhs(&self, alpha: Complex<f64>) -> CVector {
        let e = (alpha * self.b).exp();
        self.u.map(|x| Complex::from(x) * e * alpha) - self.ell.map(|x| Complex::from(x) * alpha)
    }

    pub fn report(&self, barrier_identity: f64) -> TwoSidedReport {
        TwoSidedReport {
            b: self.b,
            kappa: self.kappa,
            u: self.u.iter().copied().collect(),
            l: self.ell.iter().copied().collect(),
            residuals: TwoSidedResiduals {
                system: self.system_residual,
                drift_identity: self.drift_identity_residual(),
                zero_drift_normalization: self.zero_drift_residual(),
                barrier_identity,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierIdentityReport {
    pub residual: f64,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Checks `(u₊ᵀ, −ℓ₋ᵀ) [I, Π₊⁻e^{bΛ⁻}; Π₋⁺e^{bΛ⁺}, I]` against
/// `κ(π_{Λ⁺}ᵀ, 0)`, `0` or `κ(0, π_{Λ⁻}ᵀ)` by the sign of `κ`.
pub fn verify_barrier_identity(
    model: &MapModel,
    law: &TwoSided,
    cfg: &SpectralConfig,
) -> Result<BarrierIdentityReport> {
    let plus = model.plus_states().to_vec();
    let minus = model.minus_states();
    let up = first_passage(model, 0.0, cfg)?;
    let down = first_passage(&model.mirrored()?, 0.0, cfg)?;
    let (np, nm) = (plus.len(), minus.len());

    let top_right = linalg::select_rows(&down.pi, &plus) * down.passage_probability(law.b)?;
    let bottom_left = linalg::select_rows(&up.pi, &minus) * up.passage_probability(law.b)?;
    let mut block = DMatrix::identity(np + nm, np + nm);
    block.view_mut((0, np), (np, nm)).copy_from(&top_right);
    block.view_mut((np, 0), (nm, np)).copy_from(&bottom_left);

    let mut z = DVector::zeros(np + nm);
    for (k, &i) in plus.iter().enumerate() {
        z[k] = law.u[i];
    }
    for (k, &i) in minus.iter().enumerate() {
        z[np + k] = -law.ell[i];
    }
    let lhs = (z.transpose() * block).transpose();
    let mut rhs = DVector::zeros(np + nm);
    match model.drift_sign() {
        DriftSign::Positive => {
            let s = up.lambda_stationary()? * model.kappa();
            rhs.rows_mut(0, np).copy_from(&s);
        }
        DriftSign::Negative => {
            let s = down.lambda_stationary()? * model.kappa();
            rhs.rows_mut(np, nm).copy_from(&s);
        }
        DriftSign::Zero => {}
    }
    Ok(BarrierIdentityReport {
        residual: (&lhs - &rhs).amax(),
        lhs: lhs.iter().copied().collect(),
        rhs: rhs.iter().copied().collect(),
    })
}
