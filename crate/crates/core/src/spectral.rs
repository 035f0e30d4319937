//! Zeros of `det F^q(α)` and canonical systems of Jordan chains.
//!
//! The rational exponent is realized exactly as a linear pencil: every
//! hyperexponential factor `μ/(μ+α)` gets an auxiliary unknown `y` with
//! `(μ+α) y = μ v_j`, every Brownian state gets `w_i = α v_i`. States with
//! neither drift nor volatility carry no `α` at all and are eliminated by a
//! Schur complement, which leaves a pencil `S + αB` with `B` invertible. Its
//! eigenvalues are the zeros of `det F^q` plus spurious roots sitting exactly
//! on the poles `−μ`, which are deflated.
//!
//! Chains are read off the block-Toeplitz matrices
//!
//! ```text
//! T_j = | A_0               |      A_i = F^{q,(i)}(λ) / i!
//!       | A_1  A_0          |
//!       | ...       ...     |
//!       | A_j  ...  A_1 A_0 |
//! ```
//!
//! whose null vectors are exactly the stacked chains `(v_0, …, v_j)`.
//! Nullity increments give the number of chains of each length.

use std::ops::Range;

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::{Complex, DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::model::{DriftSign, MapModel};

const MAX_PENCIL: usize = 600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Open right half-plane.
    Positive,
    /// Open left half-plane (MMBM only).
    Negative,
    /// Whole plane including the origin (MMBM only).
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Pencil eigenvalues closer than `cluster_tol · scale` are merged.
    pub cluster_tol: f64,
    /// Singular values below `rank_tol · σ_max` count as zero.
    pub rank_tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            cluster_tol: 1e-6,
            rank_tol: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub value: Complex<f64>,
    pub multiplicity: usize,
}

/// Clustered spectrum of `F^q`, split by half-plane.
#[derive(Clone, Debug, Serialize)]
pub struct Spectrum {
    pub positive: Vec<Eigenvalue>,
    pub negative: Vec<Eigenvalue>,
    /// Multiplicity of the zero at the origin (0 when `q > 0`).
    pub zero_multiplicity: usize,
    /// Merge radius actually used.
    pub radius: f64,
}

impl Spectrum {
    fn count(list: &[Eigenvalue]) -> usize {
        list.iter().map(|e| e.multiplicity).sum()
    }

    pub fn positive_count(&self) -> usize {
        Self::count(&self.positive)
    }

    pub fn negative_count(&self) -> usize {
        Self::count(&self.negative)
    }

    fn listing(&self) -> Vec<(Complex<f64>, usize)> {
        let mut out: Vec<_> = self
            .positive
            .iter()
            .chain(&self.negative)
            .map(|e| (e.value, e.multiplicity))
            .collect();
        if self.zero_multiplicity > 0 {
            out.push((Complex::from(0.0), self.zero_multiplicity));
        }
        out
    }
}

/// Pencil `(A + αB) z = 0` realizing `F^q(α) v = 0`.
struct Pencil {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// Indices without any `α` coefficient (eliminated).
    algebraic: Vec<usize>,
}

fn build_pencil(model: &MapModel, q: f64) -> Result<Pencil> {
    let n = model.dim();
    let levy = model.levy();
    let gen = model.generator();

    let mut w_index = vec![None; n];
    let mut dim = n;
    for (i, l) in levy.iter().enumerate() {
        if l.sigma > 0.0 {
            w_index[i] = Some(dim);
            dim += 1;
        }
    }
    // (row, target column, decay, coefficient)
    let mut aux = Vec::new();
    for (i, l) in levy.iter().enumerate() {
        for jump in &l.jumps {
            aux.push((i, i, jump.decay, jump.rate));
        }
    }
    for i in 0..n {
        for j in 0..n {
            if let Some(t) = model.transition_jump(i, j) {
                for c in &t.mixture {
                    if c.weight > 0.0 && gen[(i, j)] > 0.0 {
                        aux.push((i, j, c.decay, gen[(i, j)] * c.weight));
                    }
                }
            }
        }
    }
    let y_start = dim;
    dim += aux.len();
    if dim > MAX_PENCIL {
        return Err(Error::DegreeOverflow(dim));
    }

    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DMatrix::zeros(dim, dim);
    for i in 0..n {
        a[(i, i)] = gen[(i, i)] - q - levy[i].total_jump_rate();
        for j in 0..n {
            if j != i && model.transition_jump(i, j).is_none() {
                a[(i, j)] = gen[(i, j)];
            }
        }
        b[(i, i)] = levy[i].drift;
        if let Some(w) = w_index[i] {
            b[(i, w)] = 0.5 * levy[i].sigma * levy[i].sigma;
            b[(w, i)] = 1.0;
            a[(w, w)] = -1.0;
        }
    }
    for (k, &(row, target, decay, coef)) in aux.iter().enumerate() {
        let y = y_start + k;
        a[(row, y)] += coef;
        a[(y, y)] = decay;
        a[(y, target)] = -decay;
        b[(y, y)] = 1.0;
    }
    let algebraic = (0..n)
        .filter(|&i| levy[i].sigma == 0.0 && levy[i].drift == 0.0)
        .collect();
    Ok(Pencil { a, b, algebraic })
}

/// Raw zeros of `det F^q` (poles deflated, not clustered).
pub fn pencil_eigenvalues(model: &MapModel, q: f64) -> Result<Vec<Complex<f64>>> {
    let pencil = build_pencil(model, q)?;
    let dim = pencil.a.nrows();
    let keep: Vec<usize> = (0..dim).filter(|i| !pencil.algebraic.contains(i)).collect();
    let drop = &pencil.algebraic;

    let a_rr = linalg::select_cols(&linalg::select_rows(&pencil.a, &keep), &keep);
    let b_rr = linalg::select_cols(&linalg::select_rows(&pencil.b, &keep), &keep);
    let s = if drop.is_empty() {
        a_rr
    } else {
        let a_rc = linalg::select_cols(&linalg::select_rows(&pencil.a, &keep), drop);
        let a_cr = linalg::select_cols(&linalg::select_rows(&pencil.a, drop), &keep);
        let a_cc = linalg::select_cols(&linalg::select_rows(&pencil.a, drop), drop);
        let solved = a_cc.lu().solve(&a_cr).ok_or_else(|| Error::Singular {
            what: "constant-state block".into(),
            condition: f64::INFINITY,
        })?;
        a_rr - a_rc * solved
    };
    let mut k = b_rr
        .lu()
        .solve(&s)
        .ok_or_else(|| Error::Singular {
            what: "pencil leading coefficient".into(),
            condition: f64::INFINITY,
        })?
        .map(|x| -x);
    if k.nrows() == 0 {
        return Ok(Vec::new());
    }
    balance_parlett_reinsch(&mut k);
    let schur = Schur::try_new(k, f64::EPSILON, 1000 * dim.max(10)).ok_or(Error::EigenSolver)?;
    let eig = schur.complex_eigenvalues();

    let decays = model.decays();
    let scale = eig.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    Ok(eig
        .iter()
        .copied()
        .filter(|z| decays.iter().all(|&mu| (z + mu).norm() > 1e-7 * scale.max(mu)))
        .collect())
}

/// Single-linkage clustering of nearby eigenvalues.
fn cluster(values: &[Complex<f64>], radius: f64) -> Vec<Eigenvalue> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() <= radius {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut groups: Vec<(usize, Complex<f64>, usize)> = Vec::new();
    for (i, &z) in values.iter().enumerate().take(n) {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => {
                g.1 += z;
                g.2 += 1;
            }
            None => groups.push((r, z, 1)),
        }
    }
    groups
        .into_iter()
        .map(|(_, sum, m)| Eigenvalue {
            value: sum / m as f64,
            multiplicity: m,
        })
        .collect()
}

fn sort_eigenvalues(list: &mut [Eigenvalue]) {
    list.sort_by(|a, b| {
        a.value
            .re
            .abs()
            .total_cmp(&b.value.re.abs())
            .then(a.value.im.total_cmp(&b.value.im))
    });
}

/// Clusters and classifies the zeros of `det F^q`. Count checks are left to
/// [`find_eigenvalues`].
pub fn spectrum(model: &MapModel, q: f64, cfg: &SpectralConfig) -> Result<Spectrum> {
    if !(q >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "killing rate must be nonnegative, got {q}"
        )));
    }
    let raw = pencil_eigenvalues(model, q)?;
    let scale = raw.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let radius = cfg.cluster_tol * scale;
    let clusters = cluster(&raw, radius);

    let mut positive = Vec::new();
    let mut upper = Vec::new();
    let mut zero_multiplicity = 0;
    for mut e in clusters {
        if e.value.norm() <= radius {
            if q > 0.0 {
                return Err(Error::ImaginaryAxis(e.value));
            }
            zero_multiplicity += e.multiplicity;
            continue;
        }
        if e.value.re.abs() <= radius {
            return Err(Error::ImaginaryAxis(e.value));
        }
        if e.value.im.abs() <= radius {
            e.value.im = 0.0;
        } else if e.value.im < 0.0 {
            // Rebuilt from the upper half-plane partner.
            continue;
        }
        upper.push(e);
    }
    let mut negative = Vec::new();
    for e in upper {
        let target = if e.value.re > 0.0 { &mut positive } else { &mut negative };
        target.push(e);
        if e.value.im != 0.0 {
            target.push(Eigenvalue {
                value: e.value.conj(),
                multiplicity: e.multiplicity,
            });
        }
    }
    sort_eigenvalues(&mut positive);
    sort_eigenvalues(&mut negative);
    Ok(Spectrum {
        positive,
        negative,
        zero_multiplicity,
        radius,
    })
}

/// Expected number of zeros in the open right half-plane.
pub fn expected_positive(model: &MapModel, q: f64) -> usize {
    let nonneg = q == 0.0 && model.drift_sign() != DriftSign::Negative;
    model.plus_states().len() - usize::from(nonneg)
}

/// Expected number of zeros in the open left half-plane (MMBM).
pub fn expected_negative(model: &MapModel, q: f64) -> usize {
    let nonpos = q == 0.0 && model.drift_sign() != DriftSign::Positive;
    model.minus_states().len() - usize::from(nonpos)
}

pub fn expected_zero(model: &MapModel, q: f64) -> usize {
    if q > 0.0 {
        0
    } else if model.drift_sign() == DriftSign::Zero {
        2
    } else {
        1
    }
}

fn check_counts(model: &MapModel, q: f64, spec: &Spectrum, region: Region) -> Result<()> {
    let mismatch = |what: &str, expected: usize, found: usize| Error::CountMismatch {
        what: what.to_string(),
        expected,
        found,
        spectrum: spec.listing(),
    };
    let expected = expected_positive(model, q);
    if spec.positive_count() != expected {
        return Err(mismatch(
            "zeros in the right half-plane",
            expected,
            spec.positive_count(),
        ));
    }
    let expected = expected_zero(model, q);
    if spec.zero_multiplicity != expected {
        return Err(mismatch("zeros at the origin", expected, spec.zero_multiplicity));
    }
    if region != Region::Positive {
        let expected = expected_negative(model, q);
        if spec.negative_count() != expected {
            return Err(mismatch(
                "zeros in the left half-plane",
                expected,
                spec.negative_count(),
            ));
        }
    }
    Ok(())
}

/// Zeros of `det F^q` in `region` with multiplicities, checked against the
/// theoretical counts. Region `All` reports the origin as its own entry.
pub fn find_eigenvalues(model: &MapModel, q: f64, region: Region, cfg: &SpectralConfig) -> Result<Vec<Eigenvalue>> {
    if region != Region::Positive && !model.is_mmbm() {
        return Err(Error::NotMmbm);
    }
    let spec = spectrum(model, q, cfg)?;
    check_counts(model, q, &spec, region)?;
    Ok(match region {
        Region::Positive => spec.positive,
        Region::Negative => spec.negative,
        Region::All => {
            let mut out = Vec::new();
            if spec.zero_multiplicity > 0 {
                out.push(Eigenvalue {
                    value: Complex::from(0.0),
                    multiplicity: spec.zero_multiplicity,
                });
            }
            out.extend(spec.positive);
            out.extend(spec.negative);
            out
        }
    })
}

/// Vectors `v_0, …, v_{r−1}` satisfying `Σ_{i≤j} F^{q,(i)}(λ) v_{j−i} / i! = 0`.
#[derive(Clone, Debug)]
pub struct JordanChain {
    pub eigenvalue: Complex<f64>,
    pub vectors: Vec<CVector>,
}

impl JordanChain {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn conj(&self) -> JordanChain {
        JordanChain {
            eigenvalue: self.eigenvalue.conj(),
            vectors: self.vectors.iter().map(|v| v.map(|z| z.conj())).collect(),
        }
    }

    /// Largest defining-relation residual, relative to the Taylor blocks.
    pub fn residual(&self, model: &MapModel, q: f64) -> Result<f64> {
        // A_1 is kept in the reference scale even for single vectors.
        let blocks = taylor_blocks(model, q, self.eigenvalue, self.len().max(2))?;
        Ok(chain_residual(&blocks, &self.vectors))
    }
}

/// `A_i = F^{q,(i)}(λ) / i!` for `i < count`.
pub fn taylor_blocks(model: &MapModel, q: f64, lambda: Complex<f64>, count: usize) -> Result<Vec<CMatrix>> {
    let mut factorial = 1.0;
    (0..count)
        .map(|i| {
            if i > 1 {
                factorial *= i as f64;
            }
            Ok(model.derivative(lambda, q, i)? / Complex::from(factorial))
        })
        .collect()
}

fn chain_residual(blocks: &[CMatrix], vectors: &[CVector]) -> f64 {
    let scale = blocks
        .iter()
        .map(linalg::max_abs)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let vscale = vectors.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let mut worst: f64 = 0.0;
    for j in 0..vectors.len() {
        let mut acc = CVector::zeros(vectors[0].len());
        for i in 0..=j {
            acc += &blocks[i] * &vectors[j - i];
        }
        worst = worst.max(acc.camax() / (scale * vscale));
    }
    worst
}

fn toeplitz(blocks: &[CMatrix], size: usize) -> CMatrix {
    let n = blocks[0].nrows();
    let mut t = CMatrix::zeros(size * n, size * n);
    for r in 0..size {
        for c in 0..=r {
            t.view_mut((r * n, c * n), (n, n)).copy_from(&blocks[r - c]);
        }
    }
    t
}

/// Per-eigenvalue record of the rank decisions.
#[derive(Clone, Debug, Serialize)]
pub struct ChainDiagnostics {
    pub eigenvalue: Complex<f64>,
    pub multiplicity: usize,
    /// Nullity of `T_0, T_1, …`.
    pub nullities: Vec<usize>,
    pub chain_lengths: Vec<usize>,
    /// Smallest ratio of the last retained to the first discarded singular value.
    pub singular_value_gap: f64,
    pub max_residual: f64,
}

/// Canonical system of Jordan chains of `F^q` at `λ` (multiplicity `m`),
/// ordered by decreasing length.
pub fn jordan_chains(
    model: &MapModel,
    q: f64,
    lambda: Complex<f64>,
    multiplicity: usize,
    cfg: &SpectralConfig,
) -> Result<Vec<JordanChain>> {
    Ok(chains_with_diagnostics(model, q, lambda, multiplicity, cfg)?.0)
}

pub fn chains_with_diagnostics(
    model: &MapModel,
    q: f64,
    lambda: Complex<f64>,
    multiplicity: usize,
    cfg: &SpectralConfig,
) -> Result<(Vec<JordanChain>, ChainDiagnostics)> {
    let n = model.dim();
    let depth = multiplicity.max(2);
    let blocks = taylor_blocks(model, q, lambda, depth)?;
    // Reference scale: the largest Toeplitz matrix, which always contains a
    // derivative block (F^q(λ) alone may vanish, e.g. for N = 1).
    let reference = toeplitz(&blocks, depth).singular_values().max().max(f64::MIN_POSITIVE);
    let ambiguous = |sv: &[f64]| Error::RankAmbiguity {
        eigenvalue: lambda,
        singular_values: sv.to_vec(),
    };

    let mut spaces = Vec::new();
    let mut nullities = Vec::new();
    let mut gap = f64::INFINITY;
    for j in 0..multiplicity {
        let ns = linalg::null_space_scaled(&toeplitz(&blocks, j + 1), cfg.rank_tol * reference);
        let nullity = ns.nullity();
        let sv = &ns.singular_values;
        let rank = sv.len() - nullity;
        if rank > 0 && nullity > 0 {
            gap = gap.min(sv[rank - 1] / sv[rank].max(f64::MIN_POSITIVE));
        }
        let previous = nullities.last().copied().unwrap_or(0);
        if nullity == 0 || nullity > multiplicity || nullity <= previous {
            return Err(ambiguous(sv));
        }
        nullities.push(nullity);
        let done = nullity == multiplicity;
        spaces.push(ns);
        if done {
            break;
        }
    }
    if nullities.last() != Some(&multiplicity) {
        return Err(ambiguous(&spaces.last().unwrap().singular_values));
    }

    // at_least[k-1] = number of chains of length ≥ k
    let longest = nullities.len();
    let at_least: Vec<usize> = (0..longest)
        .map(|k| nullities[k] - if k == 0 { 0 } else { nullities[k - 1] })
        .collect();
    if at_least.windows(2).any(|w| w[1] > w[0]) {
        return Err(ambiguous(&spaces.last().unwrap().singular_values));
    }

    let mut chains = Vec::new();
    let mut leads = CMatrix::zeros(n, 0);
    for len in (1..=longest).rev() {
        let exact = at_least[len - 1] - at_least.get(len).copied().unwrap_or(0);
        if exact == 0 {
            continue;
        }
        let basis = &spaces[len - 1].basis;
        let head = basis.rows(0, n).into_owned();
        let projected = if leads.ncols() == 0 {
            head
        } else {
            let ortho = leads.clone().qr().q();
            &head - &ortho * (ortho.adjoint() * &head)
        };
        let svd = projected.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        for k in 0..exact {
            if k >= svd.singular_values.len() || svd.singular_values[k] <= 1e-8 {
                return Err(ambiguous(svd.singular_values.as_slice()));
            }
            let stacked = basis * v_t.row(k).adjoint();
            let vectors: Vec<CVector> = (0..len).map(|i| stacked.rows(i * n, n).into_owned()).collect();
            let chain = normalize_chain(JordanChain {
                eigenvalue: lambda,
                vectors,
            });
            let lead = chain.vectors[0].clone();
            let at = leads.ncols();
            leads = leads.insert_column(at, Complex::from(0.0));
            leads.set_column(at, &lead);
            chains.push(chain);
        }
    }

    let mut max_residual: f64 = 0.0;
    for chain in &chains {
        let r = chain_residual(&blocks, &chain.vectors);
        max_residual = max_residual.max(r);
    }
    if max_residual > 1e-8 {
        return Err(Error::ChainResidual {
            eigenvalue: lambda,
            residual: max_residual,
        });
    }
    let diagnostics = ChainDiagnostics {
        eigenvalue: lambda,
        multiplicity,
        nullities,
        chain_lengths: chains.iter().map(JordanChain::len).collect(),
        singular_value_gap: gap,
        max_residual,
    };
    Ok((chains, diagnostics))
}

/// Unit lead vector whose first significant entry is real and positive.
fn normalize_chain(mut chain: JordanChain) -> JordanChain {
    let lead = &chain.vectors[0];
    let norm = lead.norm();
    let biggest = lead.camax();
    let pivot = lead
        .iter()
        .find(|z| z.norm() > 1e-8 * biggest)
        .copied()
        .unwrap_or(Complex::from(1.0));
    let factor = pivot.conj() / (pivot.norm() * norm);
    for v in &mut chain.vectors {
        *v *= factor;
    }
    chain
}

/// The vector `h` of the null chain `(1, h)` when `κ = 0`:
/// `Q h + F'(0) 1 = 0`, normalized by `h_1 = 0`.
#[derive(Clone, Debug, Serialize)]
pub struct ZeroDriftPair {
    pub h: DVector<f64>,
    pub residual: f64,
}

pub fn zero_drift_pair(model: &MapModel) -> Result<ZeroDriftPair> {
    if model.drift_sign() != DriftSign::Zero {
        return Err(Error::Precondition(
            "the null chain (1, h) exists only for zero asymptotic drift".into(),
        ));
    }
    let n = model.dim();
    let gen = model.generator();
    let rhs = -(model.slope_at_zero() * DVector::from_element(n, 1.0));
    let mut h = DVector::zeros(n);
    if n > 1 {
        let reduced = gen.columns(1, n - 1).into_owned();
        let sol = reduced
            .svd(true, true)
            .solve(&rhs, 1e-13)
            .map_err(|e| Error::Precondition(e.to_string()))?;
        h.rows_mut(1, n - 1).copy_from(&sol);
    }
    let residual = (gen * &h - &rhs).amax();
    let scale = gen.amax().max(rhs.amax()).max(1.0);
    if residual > 1e-9 * scale {
        return Err(Error::Precondition(format!(
            "Q h = -F'(0) 1 is inconsistent (residual {residual:e}); drift is not zero"
        )));
    }
    Ok(ZeroDriftPair { h, residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// The prepended pair `(1, 0)`.
    NullPair,
    /// The null chain `(1, h)` with a 2×2 nilpotent block.
    ZeroDrift,
    Positive,
    Negative,
}

#[derive(Clone, Debug)]
pub struct JordanBlock {
    pub kind: BlockKind,
    pub eigenvalue: Complex<f64>,
    pub vectors: Vec<CVector>,
}

impl JordanBlock {
    pub fn size(&self) -> usize {
        self.vectors.len()
    }
}

/// A Jordan pair `(V, Γ)` assembled from canonical systems.
#[derive(Clone, Debug)]
pub struct JordanSystem {
    pub region: Region,
    pub q: f64,
    pub blocks: Vec<JordanBlock>,
    /// `N × m`, chain vectors as columns.
    pub v: CMatrix,
    /// `m × m` block-diagonal Jordan matrix.
    pub gamma: CMatrix,
    pub includes_null_pair: bool,
    pub zero_drift: Option<ZeroDriftPair>,
    pub diagnostics: Vec<ChainDiagnostics>,
}

impl JordanSystem {
    pub fn columns(&self) -> usize {
        self.v.ncols()
    }

    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.blocks
            .iter()
            .map(|b| {
                let r = start..start + b.size();
                start = r.end;
                r
            })
            .collect()
    }

    /// `e^{tΓ}`, block by block: entry `(k, k+l)` is `e^{tλ} t^l / l!`.
    pub fn exp_gamma(&self, t: f64) -> CMatrix {
        let mut out = CMatrix::zeros(self.columns(), self.columns());
        for (block, range) in self.blocks.iter().zip(self.block_ranges()) {
            let e = (block.eigenvalue * t).exp();
            let mut coef = e;
            for l in 0..block.size() {
                for k in 0..block.size() - l {
                    out[(range.start + k, range.start + k + l)] = coef;
                }
                coef *= Complex::from(t / (l + 1) as f64);
            }
        }
        out
    }

    /// `e^{tΓ}` restricted to the blocks of the given kinds, identity elsewhere.
    pub fn exp_gamma_on(&self, t: f64, kinds: &[BlockKind]) -> CMatrix {
        let full = self.exp_gamma(t);
        let mut out = CMatrix::identity(self.columns(), self.columns());
        for (block, range) in self.blocks.iter().zip(self.block_ranges()) {
            if kinds.contains(&block.kind) {
                let len = range.len();
                out.view_mut((range.start, range.start), (len, len))
                    .copy_from(&full.view((range.start, range.start), (len, len)));
            }
        }
        out
    }

    pub fn rows(&self, rows: &[usize]) -> CMatrix {
        linalg::select_rows(&self.v, rows)
    }

    pub fn report(&self, model: &MapModel) -> SpectrumReport {
        let eigenvalues = self
            .diagnostics
            .iter()
            .map(|d| EigenvalueRecord {
                re: d.eigenvalue.re,
                im: d.eigenvalue.im,
                multiplicity: d.multiplicity,
                region: if d.eigenvalue.re > 0.0 { "positive" } else { "negative" },
            })
            .collect();
        let chains = self
            .blocks
            .iter()
            .map(|b| ChainRecord {
                kind: b.kind,
                re: b.eigenvalue.re,
                im: b.eigenvalue.im,
                length: b.size(),
                residual: JordanChain {
                    eigenvalue: b.eigenvalue,
                    vectors: b.vectors.clone(),
                }
                .residual(model, self.q)
                .unwrap_or(f64::NAN),
            })
            .collect();
        SpectrumReport {
            q: self.q,
            region: self.region,
            eigenvalues,
            chains,
            singular_value_gaps: self.diagnostics.iter().map(|d| d.singular_value_gap).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenvalueRecord {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
    pub region: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainRecord {
    pub kind: BlockKind,
    pub re: f64,
    pub im: f64,
    pub length: usize,
    pub residual: f64,
}

/// Diagnostic dump of a Jordan system.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub q: f64,
    pub region: Region,
    pub eigenvalues: Vec<EigenvalueRecord>,
    pub chains: Vec<ChainRecord>,
    pub singular_value_gaps: Vec<f64>,
}

fn chains_for(
    model: &MapModel,
    q: f64,
    eigenvalues: &[Eigenvalue],
    kind: BlockKind,
    cfg: &SpectralConfig,
    blocks: &mut Vec<JordanBlock>,
    diagnostics: &mut Vec<ChainDiagnostics>,
) -> Result<()> {
    for e in eigenvalues {
        if e.value.im < 0.0 {
            continue;
        }
        let (chains, diag) = chains_with_diagnostics(model, q, e.value, e.multiplicity, cfg)?;
        let mirror: Vec<JordanChain> = if e.value.im > 0.0 {
            chains.iter().map(JordanChain::conj).collect()
        } else {
            Vec::new()
        };
        let mut push = |chains: Vec<JordanChain>| {
            for c in chains {
                blocks.push(JordanBlock {
                    kind,
                    eigenvalue: c.eigenvalue,
                    vectors: c.vectors,
                });
            }
        };
        push(chains);
        push(mirror);
        if e.value.im > 0.0 {
            let mut conj = diag.clone();
            conj.eigenvalue = conj.eigenvalue.conj();
            diagnostics.push(diag);
            diagnostics.push(conj);
        } else {
            diagnostics.push(diag);
        }
    }
    Ok(())
}

fn ones(n: usize) -> CVector {
    CVector::from_element(n, Complex::from(1.0))
}

/// Assembles `(V, Γ)` for `region`:
///
/// * `Positive`: chains of zeros in the right half-plane, with `(1, 0)`
///   prepended when `q = 0, κ ≥ 0`;
/// * `Negative` (MMBM): chains of zeros in the left half-plane, with `(1, 0)`
///   prepended when `q = 0, κ ≤ 0`;
/// * `All` (MMBM): the origin block first (`(1, 0)`, or `(1, h)` with a 2×2
///   nilpotent block when `κ = 0`), then right then left half-plane chains.
pub fn assemble_pair(model: &MapModel, q: f64, region: Region, cfg: &SpectralConfig) -> Result<JordanSystem> {
    let n = model.dim();
    let eigen = find_eigenvalues(model, q, region, cfg)?;
    let mut blocks = Vec::new();
    let mut diagnostics = Vec::new();
    let mut zero_drift = None;
    let sign = model.drift_sign();

    let null_pair = q == 0.0
        && match region {
            Region::Positive => sign != DriftSign::Negative,
            Region::Negative => sign != DriftSign::Positive,
            Region::All => sign != DriftSign::Zero,
        };
    if null_pair {
        blocks.push(JordanBlock {
            kind: BlockKind::NullPair,
            eigenvalue: Complex::from(0.0),
            vectors: vec![ones(n)],
        });
    }
    if region == Region::All && q == 0.0 && sign == DriftSign::Zero {
        let pair = zero_drift_pair(model)?;
        blocks.push(JordanBlock {
            kind: BlockKind::ZeroDrift,
            eigenvalue: Complex::from(0.0),
            vectors: vec![ones(n), pair.h.map(Complex::from)],
        });
        zero_drift = Some(pair);
    }

    let (pos, neg): (Vec<Eigenvalue>, Vec<Eigenvalue>) = eigen
        .into_iter()
        .filter(|e| e.value != Complex::from(0.0))
        .partition(|e| e.value.re > 0.0);
    chains_for(model, q, &pos, BlockKind::Positive, cfg, &mut blocks, &mut diagnostics)?;
    chains_for(model, q, &neg, BlockKind::Negative, cfg, &mut blocks, &mut diagnostics)?;

    let m: usize = blocks.iter().map(JordanBlock::size).sum();
    let mut v = CMatrix::zeros(n, m);
    let mut gamma = CMatrix::zeros(m, m);
    let mut col = 0;
    for block in &blocks {
        for (k, vec) in block.vectors.iter().enumerate() {
            v.set_column(col + k, vec);
            gamma[(col + k, col + k)] = block.eigenvalue;
            if k + 1 < block.size() {
                gamma[(col + k, col + k + 1)] = Complex::from(1.0);
            }
        }
        col += block.size();
    }
    Ok(JordanSystem {
        region,
        q,
        blocks,
        v,
        gamma,
        includes_null_pair: null_pair,
        zero_drift,
        diagnostics,
    })
}

/// Diagnostic dump for the CLI: the full plane for MMBM, the right
/// half-plane otherwise.
pub fn spectrum_report(model: &MapModel, q: f64, cfg: &SpectralConfig) -> Result<SpectrumReport> {
    let region = if model.is_mmbm() { Region::All } else { Region::Positive };
    Ok(assemble_pair(model, q, region, cfg)?.report(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar(drift: f64) -> MapModel {
        MapModel::mmbm(dmatrix![0.0], &[drift], &[1.0]).unwrap()
    }

    fn symmetric(drift: [f64; 2]) -> MapModel {
        MapModel::mmbm(dmatrix![-1.0, 1.0; 1.0, -1.0], &drift, &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn scalar_quadratic_zero() {
        let e = find_eigenvalues(&scalar(-1.0), 0.0, Region::Positive, &Default::default()).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].multiplicity, 1);
        assert!((e[0].value - 2.0).norm() < 1e-13);
    }

    #[test]
    fn simple_chain_is_unit_null_vector() {
        let m = symmetric([1.0, -2.0]);
        let cfg = SpectralConfig::default();
        let e = find_eigenvalues(&m, 0.0, Region::Positive, &cfg).unwrap();
        assert_eq!(e.len(), 2);
        for ev in e {
            let chains = jordan_chains(&m, 0.0, ev.value, 1, &cfg).unwrap();
            assert_eq!(chains.len(), 1);
            assert_eq!(chains[0].len(), 1);
            assert!((chains[0].vectors[0].norm() - 1.0).abs() < 1e-14);
            assert!(chains[0].residual(&m, 0.0).unwrap() < 1e-12);
        }
    }

    #[test]
    fn zero_drift_null_chain() {
        let m = symmetric([1.0, -1.0]);
        let pair = zero_drift_pair(&m).unwrap();
        // −h₁ + h₂ = −1 with h₁ = 0.
        assert!((pair.h[0]).abs() < 1e-15);
        assert!((pair.h[1] + 1.0).abs() < 1e-14);

        let chains = jordan_chains(&m, 0.0, Complex::from(0.0), 2, &Default::default()).unwrap();
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].len(), 2);
    }

    #[test]
    fn null_pair_for_nonnegative_drift() {
        let sys = assemble_pair(&scalar(1.0), 0.0, Region::Positive, &Default::default()).unwrap();
        assert!(sys.includes_null_pair);
        assert_eq!(sys.columns(), 1);
        assert_eq!(sys.gamma[(0, 0)], Complex::from(0.0));
        assert_eq!(sys.v[(0, 0)], Complex::from(1.0));

        let sys = assemble_pair(&scalar(-1.0), 0.0, Region::Positive, &Default::default()).unwrap();
        assert!(!sys.includes_null_pair);
        assert!((sys.gamma[(0, 0)] - 2.0).norm() < 1e-13);
        assert!((sys.v[(0, 0)] - 1.0).norm() < 1e-15);
    }

    #[test]
    fn full_plane_zero_drift_system() {
        let m = symmetric([1.0, -1.0]);
        let sys = assemble_pair(&m, 0.0, Region::All, &Default::default()).unwrap();
        assert_eq!(sys.v.shape(), (2, 4));
        assert_eq!(sys.blocks[0].kind, BlockKind::ZeroDrift);
        assert_eq!(sys.gamma[(0, 1)], Complex::from(1.0));
        assert!((sys.v[(1, 1)] + 1.0).norm() < 1e-14);
    }

    #[test]
    fn exp_gamma_of_jordan_block() {
        let m = symmetric([1.0, -1.0]);
        let sys = assemble_pair(&m, 0.0, Region::All, &Default::default()).unwrap();
        let e = sys.exp_gamma(2.0);
        assert_eq!(e[(0, 0)], Complex::from(1.0));
        assert_eq!(e[(0, 1)], Complex::from(2.0));
        assert_eq!(e[(1, 0)], Complex::from(0.0));
    }

    #[test]
    fn jumps_deflate_pole_roots() {
        let m = MapModel::new(
            dmatrix![0.0],
            vec![crate::model::LevyDescriptor::brownian(1.0, 1.0)
                .with_jump(1.0, 2.0)
                .with_jump(0.5, 2.0)],
            vec![],
        )
        .unwrap();
        let raw = pencil_eigenvalues(&m, 0.0).unwrap();
        assert!(raw.iter().all(|z| (z + 2.0).norm() > 1e-6));
        // ψ(α) = α + α²/2 + 1.5(2/(2+α) − 1) has zeros at 0 and on the left.
        assert_eq!(raw.len(), 3);
    }

    #[test]
    fn count_mismatch_is_reported() {
        // κ is tiny but above the classification threshold: the zero near the
        // origin merges with it and the counts break.
        let m = symmetric([1.0, -1.0 + 1e-8]);
        let err = find_eigenvalues(&m, 0.0, Region::All, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::CountMismatch { .. }), "{err}");
    }
}
