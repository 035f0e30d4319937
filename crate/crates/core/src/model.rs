//! Spectrally negative Markov additive processes and their matrix exponent.
//!
//! Each background state carries a Brownian motion with drift plus a compound
//! Poisson stream of hyperexponential *downward* jumps, and each background
//! transition may add a hyperexponential downward jump. With that family every
//! entry of `F(α)` is a rational function of `α`:
//!
//! ```text
//! F(α)_ii = q_ii + a_i α + ½ σ_i² α² + Σ_k r_k (μ_k / (μ_k + α) − 1)
//! F(α)_ij = q_ij Σ_m w_m μ_m / (μ_m + α)        (i ≠ j, or q_ij without a jump law)
//! ```
//!
//! Jumps are not compensated: `a_i` is the full linear drift of state `i`.

use std::collections::VecDeque;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelIssue, Result};
use crate::linalg::CMatrix;

pub const SCHEMA_VERSION: u32 = 1;

/// One exponential component of a state's downward jump stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpComponent {
    /// Arrival rate per unit time.
    pub rate: f64,
    /// Decay `μ` of the exponential jump size; the mean jump is `1/μ`.
    pub decay: f64,
}

/// Lévy component of one background state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyDescriptor {
    pub drift: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jumps: Vec<JumpComponent>,
}

impl LevyDescriptor {
    pub fn brownian(drift: f64, sigma: f64) -> Self {
        Self {
            drift,
            sigma,
            jumps: Vec::new(),
        }
    }

    pub fn with_jump(mut self, rate: f64, decay: f64) -> Self {
        self.jumps.push(JumpComponent { rate, decay });
        self
    }

    /// `order`-th derivative of the Laplace exponent `ψ` at `alpha`.
    pub fn psi(&self, alpha: Complex<f64>, order: usize) -> Complex<f64> {
        let s2 = self.sigma * self.sigma;
        let mut value = match order {
            0 => alpha * self.drift + alpha * alpha * (0.5 * s2),
            1 => Complex::from(self.drift) + alpha * s2,
            2 => Complex::from(s2),
            _ => Complex::from(0.0),
        };
        for jump in &self.jumps {
            value += hyperexp_derivative(jump.decay, alpha, order) * jump.rate;
            if order == 0 {
                value -= jump.rate;
            }
        }
        value
    }

    /// Non-increasing paths: no Brownian part and no upward drift.
    pub fn is_downward_subordinator(&self) -> bool {
        self.sigma == 0.0 && self.drift <= 0.0
    }

    /// Non-decreasing paths. Only meaningful without jumps.
    pub fn is_upward_subordinator(&self) -> bool {
        self.sigma == 0.0 && self.drift >= 0.0 && self.jumps.is_empty()
    }

    /// `ψ'(0)`: the mean slope including the jump stream.
    pub fn mean_slope(&self) -> f64 {
        self.drift - self.jumps.iter().map(|j| j.rate / j.decay).sum::<f64>()
    }

    pub fn total_jump_rate(&self) -> f64 {
        self.jumps.iter().map(|j| j.rate).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub decay: f64,
}

/// Hyperexponential downward jump applied at a background transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionJump {
    pub mixture: Vec<MixtureComponent>,
}

impl TransitionJump {
    pub fn exponential(decay: f64) -> Self {
        Self {
            mixture: vec![MixtureComponent { weight: 1.0, decay }],
        }
    }

    /// `order`-th derivative of the moment generating function `G̃(α)`.
    pub fn mgf(&self, alpha: Complex<f64>, order: usize) -> Complex<f64> {
        self.mixture
            .iter()
            .map(|c| hyperexp_derivative(c.decay, alpha, order) * c.weight)
            .sum()
    }

    /// Mean jump size (a negative number).
    pub fn mean(&self) -> f64 {
        -self.mixture.iter().map(|c| c.weight / c.decay).sum::<f64>()
    }
}

/// `d^k/dα^k μ/(μ+α) = (−1)^k k! μ / (μ+α)^(k+1)`.
fn hyperexp_derivative(decay: f64, alpha: Complex<f64>, order: usize) -> Complex<f64> {
    let base = Complex::from(decay) + alpha;
    let mut factorial = 1.0;
    for k in 2..=order {
        factorial *= k as f64;
    }
    let sign = if order.is_multiple_of(2) { 1.0 } else { -1.0 };
    Complex::from(sign * factorial * decay) / base.powu(order as u32 + 1)
}

/// Transition jump entry of a model declaration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionJumpSpec {
    pub from: usize,
    pub to: usize,
    pub mixture: Vec<MixtureComponent>,
}

/// Serialized model declaration (schema version 1).
///
/// ```json
/// {
///   "schema": 1,
///   "Q": [[-1, 1], [1, -1]],
///   "states": [{"drift": 1, "sigma": 1}, {"drift": -2, "sigma": 1, "jumps": [{"rate": 0.5, "decay": 2}]}],
///   "transition_jumps": [{"from": 0, "to": 1, "mixture": [{"weight": 1, "decay": 3}]}],
///   "force_zero_drift": false
/// }
/// ```
///
/// State indices in `transition_jumps` are zero-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub schema: u32,
    #[serde(rename = "Q")]
    pub generator: Vec<Vec<f64>>,
    pub states: Vec<LevyDescriptor>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transition_jumps: Vec<TransitionJumpSpec>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub force_zero_drift: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSign {
    Negative,
    Zero,
    Positive,
}

/// Value and derivatives of `F^q(α) = F(α) − qI` at one point.
#[derive(Clone, Debug)]
pub struct MatrixFunctionEval {
    pub alpha: Complex<f64>,
    pub q: f64,
    pub value: CMatrix,
    /// `derivatives[k-1]` is the `k`-th derivative.
    pub derivatives: Vec<CMatrix>,
}

#[derive(Clone, Debug)]
pub struct MapModel {
    generator: DMatrix<f64>,
    levy: Vec<LevyDescriptor>,
    /// Row-major `N × N` table; diagonal entries are always `None`.
    transition_jumps: Vec<Option<TransitionJump>>,
    force_zero_drift: bool,
    stationary: DVector<f64>,
    raw_kappa: f64,
    kappa: f64,
    drift_scale: f64,
    drift: DriftSign,
    plus: Vec<usize>,
    down: Vec<usize>,
}

const ROW_SUM_TOL: f64 = 1e-10;
const WEIGHT_TOL: f64 = 1e-9;
const DRIFT_TOL: f64 = 1e-9;

impl MapModel {
    /// Validates a declaration and derives `π`, `κ` and the state partition.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let mut issues = Vec::new();
        if spec.schema != SCHEMA_VERSION {
            issues.push(ModelIssue::UnsupportedSchema { found: spec.schema });
        }
        let n = spec.generator.len();
        if n == 0 {
            issues.push(ModelIssue::EmptyModel);
            return Err(Error::InvalidModel(issues));
        }
        for (row, entries) in spec.generator.iter().enumerate() {
            if entries.len() != n {
                issues.push(ModelIssue::NotSquare {
                    rows: n,
                    row,
                    len: entries.len(),
                });
            }
        }
        if spec.states.len() != n {
            issues.push(ModelIssue::StateCountMismatch {
                generator: n,
                states: spec.states.len(),
            });
        }
        if !issues.is_empty() {
            return Err(Error::InvalidModel(issues));
        }

        let generator = DMatrix::from_fn(n, n, |i, j| spec.generator[i][j]);
        let mut table = vec![None; n * n];
        for t in &spec.transition_jumps {
            if t.from >= n || t.to >= n {
                issues.push(ModelIssue::BadTransition {
                    from: t.from,
                    to: t.to,
                    reason: format!("state index out of range (N = {n})"),
                });
                continue;
            }
            if t.from == t.to {
                issues.push(ModelIssue::BadTransition {
                    from: t.from,
                    to: t.to,
                    reason: "jumps are only defined between distinct states".into(),
                });
                continue;
            }
            let slot = &mut table[t.from * n + t.to];
            if slot.is_some() {
                issues.push(ModelIssue::BadTransition {
                    from: t.from,
                    to: t.to,
                    reason: "declared more than once".into(),
                });
                continue;
            }
            *slot = Some(TransitionJump {
                mixture: t.mixture.clone(),
            });
        }
        if !issues.is_empty() {
            return Err(Error::InvalidModel(issues));
        }
        Self::assemble(generator, spec.states.clone(), table, spec.force_zero_drift)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    /// Markov-modulated Brownian motion: `F(α) = ½Δσ²α² + Δ_a α + Q`.
    pub fn mmbm(generator: DMatrix<f64>, drift: &[f64], sigma: &[f64]) -> Result<Self> {
        if drift.len() != sigma.len() {
            return Err(Error::InvalidArgument(
                "drift and sigma must have the same length".into(),
            ));
        }
        let levy = drift
            .iter()
            .zip(sigma)
            .map(|(&a, &s)| LevyDescriptor::brownian(a, s))
            .collect();
        Self::new(generator, levy, Vec::new())
    }

    pub fn new(
        generator: DMatrix<f64>,
        levy: Vec<LevyDescriptor>,
        transition_jumps: Vec<(usize, usize, TransitionJump)>,
    ) -> Result<Self> {
        let spec = ModelSpec {
            schema: SCHEMA_VERSION,
            generator: generator.row_iter().map(|r| r.iter().copied().collect()).collect(),
            states: levy,
            transition_jumps: transition_jumps
                .into_iter()
                .map(|(from, to, jump)| TransitionJumpSpec {
                    from,
                    to,
                    mixture: jump.mixture,
                })
                .collect(),
            force_zero_drift: false,
        };
        Self::from_spec(&spec)
    }

    /// Treat the asymptotic drift as exactly zero regardless of round-off.
    pub fn with_force_zero_drift(self, force: bool) -> Result<Self> {
        Self::assemble(self.generator, self.levy, self.transition_jumps, force)
    }

    fn assemble(
        generator: DMatrix<f64>,
        levy: Vec<LevyDescriptor>,
        transition_jumps: Vec<Option<TransitionJump>>,
        force_zero_drift: bool,
    ) -> Result<Self> {
        let n = generator.nrows();
        let mut issues = Vec::new();

        for i in 0..n {
            for j in 0..n {
                let v = generator[(i, j)];
                if !v.is_finite() {
                    issues.push(ModelIssue::NonFinite {
                        location: format!("Q[{i}][{j}]"),
                    });
                } else if i != j && v < 0.0 {
                    issues.push(ModelIssue::NegativeRate {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        let scale = generator.amax().max(1.0);
        for (i, row) in generator.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if sum.is_finite() && sum.abs() > ROW_SUM_TOL * scale {
                issues.push(ModelIssue::RowSum { row: i, sum });
            }
        }
        if issues.is_empty() && !is_irreducible(&generator) {
            issues.push(ModelIssue::Reducible);
        }

        for (i, state) in levy.iter().enumerate() {
            if !state.drift.is_finite() || !state.sigma.is_finite() {
                issues.push(ModelIssue::NonFinite {
                    location: format!("states[{i}]"),
                });
            }
            if state.sigma < 0.0 {
                issues.push(ModelIssue::NegativeSigma {
                    state: i,
                    value: state.sigma,
                });
            }
            for (k, jump) in state.jumps.iter().enumerate() {
                let location = format!("states[{i}].jumps[{k}]");
                check_decay(&location, jump.decay, &mut issues);
                if !(jump.rate > 0.0 && jump.rate.is_finite()) {
                    issues.push(ModelIssue::InvalidJump {
                        location,
                        reason: format!("rate {} must be positive", jump.rate),
                    });
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let Some(jump) = &transition_jumps[i * n + j] else {
                    continue;
                };
                if jump.mixture.is_empty() {
                    issues.push(ModelIssue::BadTransition {
                        from: i,
                        to: j,
                        reason: "empty mixture".into(),
                    });
                    continue;
                }
                let mut total = 0.0;
                for (m, c) in jump.mixture.iter().enumerate() {
                    let location = format!("transition {i}->{j} mixture[{m}]");
                    check_decay(&location, c.decay, &mut issues);
                    if !(c.weight >= 0.0 && c.weight.is_finite()) {
                        issues.push(ModelIssue::InvalidJump {
                            location,
                            reason: format!("weight {} must be nonnegative", c.weight),
                        });
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > WEIGHT_TOL {
                    issues.push(ModelIssue::BadTransition {
                        from: i,
                        to: j,
                        reason: format!("mixture weights sum to {total}, expected 1"),
                    });
                }
            }
        }

        let plus: Vec<usize> = (0..n).filter(|&i| !levy[i].is_downward_subordinator()).collect();
        let down: Vec<usize> = (0..n).filter(|&i| levy[i].is_downward_subordinator()).collect();
        if plus.is_empty() {
            issues.push(ModelIssue::NoRecordStates);
        }
        if !issues.is_empty() {
            return Err(Error::InvalidModel(issues));
        }

        let stationary = stationary_distribution(&generator)?;
        let mut raw_kappa = 0.0;
        let mut drift_scale: f64 = 0.0;
        for i in 0..n {
            let mut slope = levy[i].mean_slope();
            let mut spread = levy[i].drift.abs() + (slope - levy[i].drift).abs();
            for j in 0..n {
                if let Some(jump) = &transition_jumps[i * n + j] {
                    slope += generator[(i, j)] * jump.mean();
                    spread += (generator[(i, j)] * jump.mean()).abs();
                }
            }
            raw_kappa += stationary[i] * slope;
            drift_scale = drift_scale.max(spread);
        }
        if drift_scale == 0.0 {
            drift_scale = 1.0;
        }
        let drift = if force_zero_drift || raw_kappa.abs() <= DRIFT_TOL * drift_scale {
            DriftSign::Zero
        } else if raw_kappa > 0.0 {
            DriftSign::Positive
        } else {
            DriftSign::Negative
        };
        let kappa = if drift == DriftSign::Zero { 0.0 } else { raw_kappa };

        Ok(Self {
            generator,
            levy,
            transition_jumps,
            force_zero_drift,
            stationary,
            raw_kappa,
            kappa,
            drift_scale,
            drift,
            plus,
            down,
        })
    }

    pub fn to_spec(&self) -> ModelSpec {
        let n = self.dim();
        let mut transition_jumps = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if let Some(jump) = self.transition_jump(i, j) {
                    transition_jumps.push(TransitionJumpSpec {
                        from: i,
                        to: j,
                        mixture: jump.mixture.clone(),
                    });
                }
            }
        }
        ModelSpec {
            schema: SCHEMA_VERSION,
            generator: self.generator.row_iter().map(|r| r.iter().copied().collect()).collect(),
            states: self.levy.clone(),
            transition_jumps,
            force_zero_drift: self.force_zero_drift,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("model spec serializes")
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn levy(&self) -> &[LevyDescriptor] {
        &self.levy
    }

    pub fn transition_jump(&self, from: usize, to: usize) -> Option<&TransitionJump> {
        self.transition_jumps[from * self.dim() + to].as_ref()
    }

    pub fn force_zero_drift(&self) -> bool {
        self.force_zero_drift
    }

    /// Stationary distribution `π` of the background chain.
    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    /// Asymptotic drift used by the algebra (exactly 0 when classified as zero).
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Asymptotic drift as computed, before the zero classification.
    pub fn raw_kappa(&self) -> f64 {
        self.raw_kappa
    }

    pub fn drift_scale(&self) -> f64 {
        self.drift_scale
    }

    pub fn drift_sign(&self) -> DriftSign {
        self.drift
    }

    /// States in which new maxima can be set (`E₊`).
    pub fn plus_states(&self) -> &[usize] {
        &self.plus
    }

    /// Downward subordinator states (`E↓`).
    pub fn down_states(&self) -> &[usize] {
        &self.down
    }

    /// States in which new minima can be set (`E₋`); for MMBM, the
    /// complement of the upward subordinators.
    pub fn minus_states(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| !self.levy[i].is_upward_subordinator())
            .collect()
    }

    /// Upward subordinator states (`E↑`).
    pub fn up_states(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.levy[i].is_upward_subordinator())
            .collect()
    }

    pub fn is_mmbm(&self) -> bool {
        self.levy.iter().all(|l| l.jumps.is_empty()) && self.transition_jumps.iter().all(Option::is_none)
    }

    /// All jump decays, i.e. the negated poles of `F`.
    pub fn decays(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .levy
            .iter()
            .flat_map(|l| l.jumps.iter().map(|j| j.decay))
            .chain(
                self.transition_jumps
                    .iter()
                    .flatten()
                    .flat_map(|t| t.mixture.iter().map(|c| c.decay)),
            )
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// `F'(0)`: drift matrix of the linear term at the origin.
    pub fn slope_at_zero(&self) -> DMatrix<f64> {
        self.derivative(Complex::from(0.0), 0.0, 1)
            .expect("F is analytic at 0")
            .map(|z| z.re)
    }

    /// `k`-th derivative of `F^q` at `alpha` (`k = 0` gives the value).
    pub fn derivative(&self, alpha: Complex<f64>, q: f64, order: usize) -> Result<CMatrix> {
        self.check_pole(alpha)?;
        let n = self.dim();
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = if i == j {
                    let mut v = self.levy[i].psi(alpha, order);
                    if order == 0 {
                        v += self.generator[(i, i)] - q;
                    }
                    v
                } else {
                    match &self.transition_jumps[i * n + j] {
                        Some(jump) => jump.mgf(alpha, order) * self.generator[(i, j)],
                        None if order == 0 => Complex::from(self.generator[(i, j)]),
                        None => Complex::from(0.0),
                    }
                };
            }
        }
        Ok(out)
    }

    /// Evaluates `F^q` and its first `order` derivatives at `alpha`.
    pub fn eval(&self, alpha: Complex<f64>, q: f64, order: usize) -> Result<MatrixFunctionEval> {
        if !(q >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "killing rate must be nonnegative, got {q}"
            )));
        }
        let value = self.derivative(alpha, q, 0)?;
        let derivatives = (1..=order)
            .map(|k| self.derivative(alpha, q, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(MatrixFunctionEval {
            alpha,
            q,
            value,
            derivatives,
        })
    }

    /// Real-argument convenience for `F^q(α)`.
    pub fn eval_real(&self, alpha: f64, q: f64) -> Result<DMatrix<f64>> {
        Ok(self.derivative(Complex::from(alpha), q, 0)?.map(|z| z.re))
    }

    fn check_pole(&self, alpha: Complex<f64>) -> Result<()> {
        for mu in self.decays() {
            if (alpha + mu).norm() <= 1e-14 * mu {
                return Err(Error::AtPole(alpha));
            }
        }
        Ok(())
    }

    /// Time-reversed model with exponent `Δπ⁻¹ F(α)ᵀ Δπ`.
    pub fn reversed(&self) -> MapModel {
        let n = self.dim();
        let pi = &self.stationary;
        let generator = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.generator[(i, i)]
            } else {
                pi[j] * self.generator[(j, i)] / pi[i]
            }
        });
        let mut table = vec![None; n * n];
        for i in 0..n {
            for j in 0..n {
                table[i * n + j] = self.transition_jumps[j * n + i].clone();
            }
        }
        Self::assemble(generator, self.levy.clone(), table, self.force_zero_drift).expect("reversal preserves validity")
    }

    /// The MMBM `(−X, J)`. Fails for models with jumps, or when `−X` has no
    /// states able to set new maxima.
    pub fn mirrored(&self) -> Result<MapModel> {
        if !self.is_mmbm() {
            return Err(Error::NotMmbm);
        }
        let levy = self
            .levy
            .iter()
            .map(|l| LevyDescriptor::brownian(-l.drift, l.sigma))
            .collect();
        Self::assemble(
            self.generator.clone(),
            levy,
            self.transition_jumps.clone(),
            self.force_zero_drift,
        )
    }
}

fn check_decay(location: &str, decay: f64, issues: &mut Vec<ModelIssue>) {
    if !decay.is_finite() {
        issues.push(ModelIssue::NonFinite {
            location: location.to_string(),
        });
    } else if decay < 0.0 {
        issues.push(ModelIssue::PositiveJump {
            location: location.to_string(),
        });
    } else if decay == 0.0 {
        issues.push(ModelIssue::InvalidJump {
            location: location.to_string(),
            reason: "decay must be positive".into(),
        });
    }
}

fn is_irreducible(generator: &DMatrix<f64>) -> bool {
    let n = generator.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let rate = if forward { generator[(i, j)] } else { generator[(j, i)] };
                if i != j && rate > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solves `πQ = 0`, `π1 = 1`.
pub(crate) fn stationary_distribution(generator: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = generator.nrows();
    let mut system = generator.transpose();
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidModel(vec![ModelIssue::Reducible]))?;
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidModel(vec![ModelIssue::Reducible]));
    }
    Ok(pi)
}
