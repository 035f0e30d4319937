//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Complex, DMatrix, DVector};

pub type CMatrix = DMatrix<Complex<f64>>;
pub type CVector = DVector<Complex<f64>>;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(Complex::from)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_imag(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
}

pub fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub fn select_rows<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_cols<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>, cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Matrix exponential (scaling and squaring with Padé approximants).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    m.exp()
}

pub struct NullSpace {
    /// Orthonormal basis, one vector per column.
    pub basis: CMatrix,
    /// Singular values in descending order (padded to a square problem).
    pub singular_values: Vec<f64>,
}

impl NullSpace {
    pub fn nullity(&self) -> usize {
        self.basis.ncols()
    }
}

/// Null space of `m` with rank threshold `rel_tol · σ_max`.
pub fn null_space(m: &CMatrix, rel_tol: f64) -> NullSpace {
    null_space_with(m, |smax| rel_tol * smax)
}

/// Null space of `m`, treating singular values `≤ threshold` as zero.
pub fn null_space_scaled(m: &CMatrix, threshold: f64) -> NullSpace {
    null_space_with(m, |_| threshold)
}

fn null_space_with(m: &CMatrix, threshold: impl Fn(f64) -> f64) -> NullSpace {
    let cols = m.ncols();
    let rows = m.nrows().max(cols);
    let mut padded = CMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let cut = threshold(smax);
    let rank = singular_values.iter().filter(|&&s| s > 0.0 && s > cut).count();
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut basis = CMatrix::zeros(cols, cols - rank);
    for (k, row) in (rank..cols).enumerate() {
        basis.set_column(k, &v_t.row(row).adjoint());
    }
    NullSpace { basis, singular_values }
}

/// 2-norm condition number.
pub fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Left null vector `x` of a generator-like matrix with `x·1 = 1`.
pub fn left_null_normalized(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    let mut system = m.transpose();
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    system.lu().solve(&rhs)
}
