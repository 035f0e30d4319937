//! `Λ(q)` as the solution of the matrix equation `F^q(−M) = 0` within the
//! class of irreducible rate matrices (defective unless `q = 0, κ ≥ 0`).
//!
//! `F^q` is applied to a matrix argument `X` row by row:
//!
//! ```text
//! F^q(X)_i· = a_i X_i· + ½σ_i² (X²)_i· + Σ_k r_k (μ_k (μ_k + X)⁻¹ − I)_i·
//!           + q_ii e_iᵀ + Σ_{j≠i} q_ij (G̃_ij(X))_j· − q e_iᵀ
//! ```
//!
//! with `G̃_ij(X) = Σ_m w_m μ_m (μ_m + X)⁻¹`. The solver is Newton's method on
//! `M ↦ F^q(−M)` with a backtracking line search, started from `Q − sI`
//! for a shift `s` beyond every root of the scalar exponents.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DriftSign, MapModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPointConfig {
    pub max_iterations: usize,
    /// Residual target relative to the size of the terms of `F^q(−M)`.
    pub tolerance: f64,
    /// Number of times the starting shift is enlarged after a failed run.
    pub restarts: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-12,
            restarts: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateClass {
    /// Row sums ≤ 0 with at least one strict inequality.
    Defective,
    /// Row sums exactly 0.
    NonDefective,
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointSolution {
    /// The solution `M`, equal to `Λ(q)`.
    pub m: DMatrix<f64>,
    pub class: RateClass,
    pub iterations: usize,
    pub residual: f64,
    pub scale: f64,
    /// Max-norm residual after every Newton step.
    pub trajectory: Vec<f64>,
    pub shift: f64,
}

pub fn target_class(model: &MapModel, q: f64) -> RateClass {
    if q == 0.0 && model.drift_sign() != DriftSign::Negative {
        RateClass::NonDefective
    } else {
        RateClass::Defective
    }
}

/// Coefficients `C_μ` of the resolvent terms, grouped by decay.
fn resolvent_weights(model: &MapModel) -> BTreeMap<u64, (f64, DMatrix<f64>)> {
    let n = model.dim();
    let mut out: BTreeMap<u64, (f64, DMatrix<f64>)> = BTreeMap::new();
    let mut add = |mu: f64, i: usize, j: usize, c: f64| {
        let entry = out.entry(mu.to_bits()).or_insert_with(|| (mu, DMatrix::zeros(n, n)));
        entry.1[(i, j)] += c;
    };
    for (i, l) in model.levy().iter().enumerate() {
        for jump in &l.jumps {
            add(jump.decay, i, i, jump.rate * jump.decay);
        }
    }
    let gen = model.generator();
    for i in 0..n {
        for j in 0..n {
            if let Some(t) = model.transition_jump(i, j) {
                for c in &t.mixture {
                    add(c.decay, i, j, gen[(i, j)] * c.weight * c.decay);
                }
            }
        }
    }
    out
}

fn resolvent(mu: f64, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let shifted = x + DMatrix::identity(n, n) * mu;
    shifted.try_inverse().ok_or_else(|| Error::Singular {
        what: format!("mu I + X at mu = {mu}"),
        condition: f64::INFINITY,
    })
}

struct Terms {
    value: DMatrix<f64>,
    scale: f64,
}

fn evaluate(model: &MapModel, q: f64, x: &DMatrix<f64>) -> Result<Terms> {
    let n = model.dim();
    let levy = model.levy();
    let gen = model.generator();
    let a = DMatrix::from_diagonal(&DVector::from_iterator(n, levy.iter().map(|l| l.drift)));
    let s2 = DMatrix::from_diagonal(&DVector::from_iterator(n, levy.iter().map(|l| 0.5 * l.sigma * l.sigma)));
    let linear = &a * x;
    let quadratic = &s2 * (x * x);
    let mut constant = DMatrix::zeros(n, n);
    for i in 0..n {
        constant[(i, i)] = gen[(i, i)] - q - levy[i].total_jump_rate();
        for j in 0..n {
            if j != i && model.transition_jump(i, j).is_none() {
                constant[(i, j)] = gen[(i, j)];
            }
        }
    }
    let mut value = &linear + &quadratic + &constant;
    let mut scale = linear.amax() + quadratic.amax() + constant.amax();
    for (mu, c) in resolvent_weights(model).into_values() {
        let term = c * resolvent(mu, x)?;
        scale += term.amax();
        value += term;
    }
    Ok(Terms {
        value,
        scale: scale.max(1.0),
    })
}

/// `F^q(−M)`.
pub fn eval_matrix_equation(model: &MapModel, q: f64, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_shape(model, m)?;
    Ok(evaluate(model, q, &(-m))?.value)
}

fn check_shape(model: &MapModel, m: &DMatrix<f64>) -> Result<()> {
    if m.shape() != (model.dim(), model.dim()) {
        return Err(Error::InvalidArgument(format!(
            "matrix argument is {}x{}, model has {} states",
            m.nrows(),
            m.ncols(),
            model.dim()
        )));
    }
    Ok(())
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Jacobian of `vec(M) ↦ vec(F^q(−M))` (column-major vec).
fn jacobian(model: &MapModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let levy = model.levy();
    let eye = DMatrix::identity(n, n);
    let a = DMatrix::from_diagonal(&DVector::from_iterator(n, levy.iter().map(|l| l.drift)));
    let s2 = DMatrix::from_diagonal(&DVector::from_iterator(n, levy.iter().map(|l| 0.5 * l.sigma * l.sigma)));
    // d/dX of F at X applied to E, then the chain rule for X = −M.
    let mut d = kron(&eye, &a) + kron(&eye, &(&s2 * x)) + kron(&x.transpose(), &s2);
    for (mu, c) in resolvent_weights(model).into_values() {
        let r = resolvent(mu, x)?;
        d -= kron(&r.transpose(), &(c * &r));
    }
    Ok(-d)
}

fn starting_shift(model: &MapModel, q: f64) -> f64 {
    let gen = model.generator();
    let mut s: f64 = 1.0;
    for (i, l) in model.levy().iter().enumerate() {
        let c = gen[(i, i)].abs() + q + l.total_jump_rate() + 1.0;
        let root = if l.sigma > 0.0 {
            let v = l.sigma * l.sigma;
            (l.drift.abs() + (l.drift * l.drift + 2.0 * v * c).sqrt()) / v
        } else {
            c / l.drift.abs().max(1e-12)
        };
        s = s.max(root);
    }
    2.0 * s
}

fn in_class(m: &DMatrix<f64>, class: RateClass, tol: f64) -> bool {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] < -tol * scale {
                return false;
            }
        }
        let sum: f64 = m.row(i).sum();
        if sum > tol * scale {
            return false;
        }
        if class == RateClass::NonDefective && sum.abs() > tol * scale {
            return false;
        }
    }
    true
}

fn project(m: &mut DMatrix<f64>, class: RateClass) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] < 0.0 {
                let excess = m[(i, j)];
                m[(i, j)] = 0.0;
                m[(i, i)] += excess;
            }
        }
        if class == RateClass::NonDefective {
            let sum: f64 = m.row(i).sum();
            m[(i, i)] -= sum;
        }
    }
}

/// Solves `F^q(−M) = 0` for `M` in the rate-matrix class selected by
/// `(q, κ)`. Requires every state to be able to set new maxima.
pub fn solve_matrix_equation(model: &MapModel, q: f64, cfg: &FixedPointConfig) -> Result<FixedPointSolution> {
    if !(q >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "killing rate must be nonnegative, got {q}"
        )));
    }
    if model.plus_states().len() != model.dim() {
        return Err(Error::Precondition(
            "the matrix equation requires every state to set new maxima (N+ = N)".into(),
        ));
    }
    let class = target_class(model, q);
    let mut shift = starting_shift(model, q);
    let mut last = None;
    for _ in 0..=cfg.restarts {
        match newton(model, q, class, shift, cfg) {
            Ok(sol) => return Ok(sol),
            Err(e) => last = Some(e),
        }
        shift *= 4.0;
    }
    Err(last.expect("at least one attempt"))
}

fn newton(
    model: &MapModel,
    q: f64,
    class: RateClass,
    shift: f64,
    cfg: &FixedPointConfig,
) -> Result<FixedPointSolution> {
    let n = model.dim();
    let eye = DMatrix::identity(n, n);
    // Conservative iterates stay on M1 = 0 through the parametrization by
    // off-diagonal entries; the start scales Q instead of shifting it.
    let (mut m, basis) = match class {
        RateClass::Defective => (model.generator() - &eye * shift, None),
        RateClass::NonDefective => {
            let growth = shift / starting_shift(model, q);
            (model.generator() * growth, Some(off_diagonal_basis(n)))
        }
    };
    let mut terms = evaluate(model, q, &(-&m))?;
    let mut residual = terms.value.amax();
    let mut trajectory = vec![residual];
    if residual <= cfg.tolerance * terms.scale {
        return finish(model, q, class, m, 0, trajectory, shift);
    }

    for iteration in 1..=cfg.max_iterations {
        let jac = jacobian(model, &(-&m))?;
        let rhs = -DVector::from_column_slice(terms.value.as_slice());
        let step = match &basis {
            Some(b) => {
                let reduced = &jac * b;
                let coef = reduced
                    .svd(true, true)
                    .solve(&rhs, 1e-14)
                    .map_err(|e| Error::Precondition(e.to_string()))?;
                b * coef
            }
            None => jac.lu().solve(&rhs).ok_or(Error::Singular {
                what: "Newton Jacobian".into(),
                condition: f64::INFINITY,
            })?,
        };
        let step = DMatrix::from_column_slice(n, n, step.as_slice());

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &m + &step * t;
            if let Ok(next) = evaluate(model, q, &(-&candidate)) {
                let r = next.value.amax();
                if r.is_finite() && (r < residual * (1.0 - 1e-4 * t) || r <= cfg.tolerance * next.scale) {
                    accepted = Some((candidate, next, r));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((candidate, next, r)) = accepted else {
            break;
        };
        m = candidate;
        terms = next;
        residual = r;
        trajectory.push(residual);
        if residual <= cfg.tolerance * terms.scale {
            return finish(model, q, class, m, iteration, trajectory, shift);
        }
    }
    Err(Error::NonConvergence {
        iterations: trajectory.len() - 1,
        residual,
        trajectory,
    })
}

/// Columns `e_i e_jᵀ − e_i e_iᵀ` (column-major vec) for `i ≠ j`.
fn off_diagonal_basis(n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n * n, n * n - n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                b[(j * n + i, k)] = 1.0;
                b[(i * n + i, k)] = -1.0;
                k += 1;
            }
        }
    }
    b
}

fn finish(
    model: &MapModel,
    q: f64,
    class: RateClass,
    mut m: DMatrix<f64>,
    iterations: usize,
    trajectory: Vec<f64>,
    shift: f64,
) -> Result<FixedPointSolution> {
    if !in_class(&m, class, 1e-8) {
        return Err(Error::NonConvergence {
            iterations,
            residual: *trajectory.last().unwrap(),
            trajectory,
        });
    }
    project(&mut m, class);
    let terms = evaluate(model, q, &(-&m))?;
    Ok(FixedPointSolution {
        m,
        class,
        iterations,
        residual: terms.value.amax(),
        scale: terms.scale,
        trajectory,
        shift,
    })
}
