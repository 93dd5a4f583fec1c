//! Dense complex linear algebra: Kronecker products, positive-semidefinite
//! tests and square roots, span bases with least-squares expansion, numerical
//! commutants, and subspace arithmetic.
//!
//! Conventions used throughout the crate:
//! * `vec(X)` stacks columns (column-major), so `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
//! * Inner products are Hilbert-Schmidt: `<A, B> = tr(A† B)`.
//! * Hermitian eigenproblems symmetrize first; the measured asymmetry must
//!   stay below `eq_tol` relative to the matrix norm.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{QmError, Result};

/// Complex scalar used everywhere.
pub type C64 = Complex64;
/// Dense complex matrix.
pub type CMatrix = DMatrix<C64>;
/// Dense complex vector.
pub type CVector = DVector<C64>;

/// Numerical tolerances shared by every verification routine.
///
/// * `eig_tol`: slack for eigenvalue sign tests (PSD checks allow
///   eigenvalues down to `-eig_tol`).
/// * `eq_tol`: operator equality and span-membership residual threshold,
///   relative to `max(1, norm)`.
/// * `rank_tol`: singular value cutoff for rank and null-space decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    pub eig_tol: f64,
    pub eq_tol: f64,
    pub rank_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            eig_tol: 1e-9,
            eq_tol: 1e-10,
            rank_tol: 1e-10,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eig_tol", self.eig_tol),
            ("eq_tol", self.eq_tol),
            ("rank_tol", self.rank_tol),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(QmError::InvalidTolerance(format!(
                    "{name} must be a finite positive number, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Equality threshold scaled to the magnitude of the operand.
    pub fn eq_scaled(&self, norm: f64) -> f64 {
        self.eq_tol * norm.max(1.0)
    }
}

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// `c * 1` as a complex scalar.
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> CMatrix {
    CMatrix::zeros(r, c)
}

/// Reject matrices containing NaN or infinite entries.
pub fn check_finite(m: &CMatrix) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(QmError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn check_square(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(QmError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Hilbert-Schmidt inner product `tr(A† B)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> C64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Frobenius (Hilbert-Schmidt) norm.
pub fn hs_norm(a: &CMatrix) -> f64 {
    a.norm()
}

/// Kronecker product. The left factor owns the coarse index:
/// `kron(A, B)[(i*p + k), (j*q + l)] = A[i,j] * B[k,l]`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Kronecker product of a sequence of factors, left to right.
pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a CMatrix>) -> CMatrix {
    let mut it = factors.into_iter();
    let first = it.next().expect("kron_all needs at least one factor");
    it.fold(first.clone(), |acc, f| kron(&acc, f))
}

/// Column-major vectorization.
pub fn vec_of(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`] for an `r x c` matrix.
pub fn unvec(v: &CVector, r: usize, c: usize) -> CMatrix {
    debug_assert_eq!(v.len(), r * c);
    CMatrix::from_column_slice(r, c, v.as_slice())
}

/// `||A - A†||` measured in Hilbert-Schmidt norm.
pub fn asymmetry(m: &CMatrix) -> f64 {
    (m - m.adjoint()).norm()
}

/// `(A + A†) / 2` after validating that the asymmetry is within `eq_tol`
/// relative to the matrix norm.
pub fn hermitian_part_checked(m: &CMatrix, tol: &ToleranceConfig) -> Result<CMatrix> {
    check_square(m)?;
    check_finite(m)?;
    let asym = asymmetry(m);
    let bound = tol.eq_scaled(m.norm());
    if asym > bound {
        return Err(QmError::NotHermitian {
            asymmetry: asym,
            tol: bound,
        });
    }
    Ok((m + m.adjoint()).scale(0.5))
}

/// Eigendecomposition of a Hermitian matrix. Columns of `eigenvectors` pair
/// with `eigenvalues` by index; no ordering is guaranteed.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

/// Hermitian eigendecomposition with a convergence rescue. The implicit-QL
/// solver of the backing library can fail on large matrices with exactly
/// repeated eigenvalues and zero rows (Choi matrices of embedded kernels are
/// the prime offender), emitting NaN or infinite eigenvalues. Those cases
/// are redone with cyclic complex Jacobi, which converges unconditionally on
/// Hermitian input at the cost of a constant factor.
///
/// The input is assumed Hermitian; only its Hermitian part contributes.
pub fn hermitian_eigen(m: &CMatrix) -> HermitianEigen {
    let se = m.clone().symmetric_eigen();
    let finite = se.eigenvalues.iter().all(|v| v.is_finite())
        && se.eigenvectors.iter().all(|z| z.re.is_finite() && z.im.is_finite());
    if finite {
        return HermitianEigen {
            eigenvalues: se.eigenvalues.iter().copied().collect(),
            eigenvectors: se.eigenvectors,
        };
    }
    jacobi_hermitian(m)
}

/// Cyclic complex Jacobi. Each rotation strips the phase of the pivot and
/// zeroes it with a real Givens rotation; the off-diagonal mass decreases
/// monotonically, so the sweep loop always terminates near the diagonal.
pub fn jacobi_hermitian(m: &CMatrix) -> HermitianEigen {
    let n = m.nrows();
    let mut a = (m + m.adjoint()).scale(0.5);
    let mut v = identity(n);
    if n <= 1 {
        return HermitianEigen {
            eigenvalues: a.iter().map(|z| z.re).collect(),
            eigenvectors: v,
        };
    }
    let scale = a.norm().max(1.0);
    let stop = (f64::EPSILON * scale).powi(2);
    for _sweep in 0..64 {
        let mut off2 = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off2 += a[(p, q)].norm_sqr();
            }
        }
        if off2 <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let g = apq.norm();
                if g <= f64::EPSILON * scale {
                    continue;
                }
                // Unitary on the (p, q) plane: J = [[c, s], [-s·ū, c·ū]]
                // with ū the conjugate pivot phase. The phase turns the
                // pivot real, the rotation angle zeroes it.
                let u = apq / cr(g);
                let tau = (a[(q, q)].re - a[(p, p)].re) / (2.0 * g);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let cu = u.conj();
                // A <- A·J (columns p, q).
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = cr(c) * aip - cr(s) * cu * aiq;
                    a[(i, q)] = cr(s) * aip + cr(c) * cu * aiq;
                }
                // A <- J†·A (rows p, q).
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = cr(c) * apj - cr(s) * u * aqj;
                    a[(q, j)] = cr(s) * apj + cr(c) * u * aqj;
                }
                // V <- V·J.
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = cr(c) * vip - cr(s) * cu * viq;
                    v[(i, q)] = cr(s) * vip + cr(c) * cu * viq;
                }
            }
        }
    }
    HermitianEigen {
        eigenvalues: (0..n).map(|i| a[(i, i)].re).collect(),
        eigenvectors: v,
    }
}

/// Eigenvalues of the symmetrized input, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix, tol: &ToleranceConfig) -> Result<Vec<f64>> {
    let h = hermitian_part_checked(m, tol)?;
    let mut ev = hermitian_eigen(&h).eigenvalues;
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// Positive semidefiniteness test: symmetrize, then require every eigenvalue
/// to be at least `-eig_tol`. Fails with `NotHermitian` when the asymmetry
/// exceeds `eq_tol`.
pub fn is_psd(m: &CMatrix, tol: &ToleranceConfig) -> Result<bool> {
    let ev = hermitian_eigenvalues(m, tol)?;
    Ok(ev.first().map_or(true, |&lo| lo >= -tol.eig_tol))
}

/// Smallest eigenvalue of the symmetrized input.
pub fn min_eigenvalue(m: &CMatrix, tol: &ToleranceConfig) -> Result<f64> {
    let ev = hermitian_eigenvalues(m, tol)?;
    ev.first()
        .copied()
        .ok_or(QmError::EmptyInput("min_eigenvalue"))
}

/// Unique PSD square root. Eigenvalues in `[-eig_tol, 0)` are clamped to
/// zero; anything lower is an error carrying the offending eigenvalue.
pub fn psd_sqrt(m: &CMatrix, tol: &ToleranceConfig) -> Result<CMatrix> {
    let h = hermitian_part_checked(m, tol)?;
    let n = h.nrows();
    let eig = hermitian_eigen(&h);
    let mut min_eig = f64::INFINITY;
    for &l in eig.eigenvalues.iter() {
        min_eig = min_eig.min(l);
    }
    if min_eig < -tol.eig_tol {
        return Err(QmError::NotPsd { min_eig });
    }
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..n {
        let root = cr(eig.eigenvalues[j].max(0.0).sqrt());
        for i in 0..n {
            scaled[(i, j)] *= root;
        }
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

/// PSD inverse square root; eigenvalues must exceed `rank_tol`.
pub fn psd_inv_sqrt(m: &CMatrix, tol: &ToleranceConfig) -> Result<CMatrix> {
    let h = hermitian_part_checked(m, tol)?;
    let n = h.nrows();
    let eig = hermitian_eigen(&h);
    let mut min_eig = f64::INFINITY;
    for &l in eig.eigenvalues.iter() {
        min_eig = min_eig.min(l);
    }
    if min_eig < tol.rank_tol {
        return Err(QmError::NotPsd { min_eig });
    }
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..n {
        let root = cr(1.0 / eig.eigenvalues[j].sqrt());
        for i in 0..n {
            scaled[(i, j)] *= root;
        }
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

// --- span bases -------------------------------------------------------------

#[derive(Debug, Clone)]
enum ExpandSolver {
    /// Gram matrix is the identity: coefficients are plain inner products.
    Orthonormal,
    /// Pseudo-inverse of the flattened basis, from an SVD with `rank_tol`.
    Factored { pinv: CMatrix },
}

/// An ordered, linearly independent family of `dim x dim` matrices together
/// with a least-squares expansion operator for the subspace it spans.
#[derive(Debug, Clone)]
pub struct SpanBasis {
    dim: usize,
    elements: Vec<CMatrix>,
    /// `dim² x N`, column `j` is `vec(elements[j])`.
    flat: CMatrix,
    solver: ExpandSolver,
    label: String,
}

impl SpanBasis {
    /// Build a basis, verifying linear independence through the Gram
    /// spectrum. Orthonormal families are detected and expanded without a
    /// solve.
    pub fn new(label: impl Into<String>, elements: Vec<CMatrix>, tol: &ToleranceConfig) -> Result<Self> {
        let label = label.into();
        if elements.is_empty() {
            return Err(QmError::EmptyInput("SpanBasis::new"));
        }
        let dim = check_square(&elements[0])?;
        for e in &elements {
            check_finite(e)?;
            if e.nrows() != dim || e.ncols() != dim {
                return Err(QmError::DimensionMismatch {
                    context: "SpanBasis element",
                    expected: dim,
                    got: e.nrows(),
                });
            }
        }
        let n = elements.len();
        if n > dim * dim {
            return Err(QmError::DependentBasis {
                label,
                rank: dim * dim,
                size: n,
            });
        }
        let mut flat = zeros(dim * dim, n);
        for (j, e) in elements.iter().enumerate() {
            flat.set_column(j, &vec_of(e));
        }
        let gram = flat.adjoint() * &flat;
        let mut ortho = true;
        'outer: for j in 0..n {
            for i in 0..n {
                let target = if i == j { ONE } else { ZERO };
                if (gram[(i, j)] - target).norm() > 1e-12 {
                    ortho = false;
                    break 'outer;
                }
            }
        }
        let solver = if ortho {
            ExpandSolver::Orthonormal
        } else {
            // Rank check and pseudo-inverse from the SVD of the flattened basis.
            let svd = flat.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let cutoff = tol.rank_tol * smax.max(1.0);
            let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
            if rank < n {
                return Err(QmError::DependentBasis { label, rank, size: n });
            }
            let u = svd.u.as_ref().expect("svd with u");
            let v_t = svd.v_t.as_ref().expect("svd with v_t");
            let mut sinv_ut = u.adjoint();
            for i in 0..n {
                let s = cr(1.0 / svd.singular_values[i]);
                for j in 0..sinv_ut.ncols() {
                    sinv_ut[(i, j)] *= s;
                }
            }
            ExpandSolver::Factored {
                pinv: v_t.adjoint() * sinv_ut,
            }
        };
        Ok(Self {
            dim,
            elements,
            flat,
            solver,
            label,
        })
    }

    /// Trusted constructor for families already known to be HS-orthonormal
    /// (e.g. unvectorized orthonormal columns). Orthonormality is still
    /// asserted in debug builds.
    pub fn from_orthonormal(label: impl Into<String>, elements: Vec<CMatrix>) -> Result<Self> {
        let label = label.into();
        if elements.is_empty() {
            return Err(QmError::EmptyInput("SpanBasis::from_orthonormal"));
        }
        let dim = check_square(&elements[0])?;
        let n = elements.len();
        let mut flat = zeros(dim * dim, n);
        for (j, e) in elements.iter().enumerate() {
            flat.set_column(j, &vec_of(e));
        }
        #[cfg(debug_assertions)]
        {
            let gram = flat.adjoint() * &flat;
            let dev = (&gram - identity(n)).norm();
            debug_assert!(dev < 1e-8, "from_orthonormal: gram deviates by {dev:.3e}");
        }
        Ok(Self {
            dim,
            elements,
            flat,
            solver: ExpandSolver::Orthonormal,
            label,
        })
    }

    /// Standard matrix units `e_{kl}` of the full algebra, row-major in `(k, l)`.
    pub fn full_matrix_units(dim: usize) -> Self {
        let mut elements = Vec::with_capacity(dim * dim);
        for k in 0..dim {
            for l in 0..dim {
                let mut m = zeros(dim, dim);
                m[(k, l)] = ONE;
                elements.push(m);
            }
        }
        Self::from_orthonormal(format!("matrix-units({dim})"), elements)
            .expect("matrix units are orthonormal")
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Ambient matrix dimension (matrices are `dim x dim`).
    pub fn ambient_dim(&self) -> usize {
        self.dim
    }

    /// Number of basis elements.
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &CMatrix {
        &self.elements[i]
    }

    /// Whether the span is the full matrix algebra `M_dim`.
    pub fn spans_full_algebra(&self) -> bool {
        self.elements.len() == self.dim * self.dim
    }

    /// Least-squares coefficients and the reconstruction residual for `x`.
    /// Never fails on span mismatch; the caller inspects the residual.
    pub fn project(&self, x: &CMatrix) -> Result<(CVector, f64)> {
        if x.nrows() != self.dim || x.ncols() != self.dim {
            return Err(QmError::DimensionMismatch {
                context: "SpanBasis::project",
                expected: self.dim,
                got: x.nrows(),
            });
        }
        let xv = vec_of(x);
        let coeffs = match &self.solver {
            ExpandSolver::Orthonormal => self.flat.adjoint() * &xv,
            ExpandSolver::Factored { pinv } => pinv * &xv,
        };
        let residual = (&xv - &self.flat * &coeffs).norm();
        Ok((coeffs, residual))
    }

    /// Expand `x` in the basis, failing when `x` lies outside the span
    /// (residual above `eq_tol * max(1, ||x||)`).
    pub fn expand(&self, x: &CMatrix, tol: &ToleranceConfig) -> Result<CVector> {
        let (coeffs, residual) = self.project(x)?;
        let bound = tol.eq_scaled(x.norm());
        if residual > bound {
            return Err(QmError::OutsideSpan {
                label: self.label.clone(),
                residual,
                tol: bound,
            });
        }
        Ok(coeffs)
    }

    /// Residual distance from `x` to the span.
    pub fn distance(&self, x: &CMatrix) -> Result<f64> {
        Ok(self.project(x)?.1)
    }

    /// Membership test at `eq_tol`.
    pub fn contains(&self, x: &CMatrix, tol: &ToleranceConfig) -> Result<bool> {
        Ok(self.distance(x)? <= tol.eq_scaled(x.norm()))
    }

    /// Linear combination with the given coefficients.
    pub fn synthesize(&self, coeffs: &CVector) -> Result<CMatrix> {
        if coeffs.len() != self.elements.len() {
            return Err(QmError::DimensionMismatch {
                context: "SpanBasis::synthesize",
                expected: self.elements.len(),
                got: coeffs.len(),
            });
        }
        Ok(unvec(&(&self.flat * coeffs), self.dim, self.dim))
    }

    /// Orthonormal matrix whose columns span the same subspace.
    pub fn orthonormal_columns(&self, tol: &ToleranceConfig) -> CMatrix {
        match &self.solver {
            ExpandSolver::Orthonormal => self.flat.clone(),
            ExpandSolver::Factored { .. } => {
                // Independence was verified at construction, so the range
                // has full column rank and cannot degenerate.
                orthonormal_range(&self.flat, tol).unwrap_or_else(|| self.flat.clone())
            }
        }
    }

    /// The `N x dim²` coefficient-extraction operator: applied to `vec(x)`
    /// it yields the least-squares expansion coefficients of `x`.
    pub fn coefficient_matrix(&self) -> CMatrix {
        match &self.solver {
            ExpandSolver::Orthonormal => self.flat.adjoint(),
            ExpandSolver::Factored { pinv } => pinv.clone(),
        }
    }

    /// The `dim² x N` matrix whose columns are `vec(elements[j])`.
    pub fn flat_columns(&self) -> &CMatrix {
        &self.flat
    }
}

// --- null spaces, ranges, subspace arithmetic --------------------------------

/// Orthonormal basis of the null space of `a`, from an SVD with singular
/// values at or below `rank_tol * max(1, smax)` treated as zero. Wide inputs
/// are zero-padded to square so the full right factor is available.
pub fn null_space(a: &CMatrix, tol: &ToleranceConfig) -> Vec<CVector> {
    let (m, n) = a.shape();
    if n == 0 {
        return Vec::new();
    }
    let work = if m >= n {
        a.clone()
    } else {
        let mut w = zeros(n, n);
        w.view_mut((0, 0), (m, n)).copy_from(a);
        w
    };
    let svd = work.svd(false, true);
    let v_t = svd.v_t.expect("svd with v_t");
    let smax = svd.singular_values.max();
    let cutoff = tol.rank_tol * smax.max(1.0);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut out = Vec::new();
    for idx in order {
        if svd.singular_values[idx] <= cutoff {
            // Row i of V† is the adjoint of column i of V.
            out.push(v_t.row(idx).adjoint());
        }
    }
    out
}

/// Orthonormal basis of the column space of `a`; `None` when `a` is
/// numerically zero.
pub fn orthonormal_range(a: &CMatrix, tol: &ToleranceConfig) -> Option<CMatrix> {
    let n = a.ncols();
    if n == 0 {
        return None;
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("svd with u");
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return None;
    }
    let cutoff = tol.rank_tol * smax.max(1.0);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    if keep.is_empty() {
        return None;
    }
    let mut q = zeros(a.nrows(), keep.len());
    for (j, &idx) in keep.iter().enumerate() {
        q.set_column(j, &u.column(idx).into_owned());
    }
    Some(q)
}

/// Residual of `x` against the subspace spanned by the orthonormal columns
/// of `q`: `||x - q q† x|| / max(1, ||x||)`.
pub fn subspace_residual(q: &CMatrix, x: &CVector) -> f64 {
    let proj = q * (q.adjoint() * x);
    (x - proj).norm() / x.norm().max(1.0)
}

/// Orthonormal basis of the intersection of two subspaces given by
/// orthonormal column matrices. Uses the kernel of the sum of complement
/// projectors; eigenvalues of that PSD operator sit in `[0, 2]` and genuine
/// intersection directions are numerically zero.
pub fn subspace_intersection(qa: &CMatrix, qb: &CMatrix, tol: &ToleranceConfig) -> Vec<CVector> {
    debug_assert_eq!(qa.nrows(), qb.nrows());
    let n = qa.nrows();
    let id = identity(n);
    let g = (&id - qa * qa.adjoint()) + (&id - qb * qb.adjoint());
    let eig = hermitian_eigen(&g);
    let mut out = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    for idx in order {
        if eig.eigenvalues[idx].abs() <= tol.rank_tol.max(1e-12) * 10.0 {
            out.push(eig.eigenvectors.column(idx).into_owned());
        }
    }
    out
}

// --- numerical commutant ------------------------------------------------------

/// Orthonormal basis of the commutant `{x : gx = xg for all generators g}`
/// inside the full matrix algebra `M_dim`.
///
/// The null space is narrowed one generator at a time: starting from the full
/// space, each step solves for the kernel of the commutator operator
/// restricted to the current candidate span, which keeps every SVD at most
/// `dim² x current-rank`. An empty (or all-zero) generator list yields the
/// full algebra. The result is adjoint-closed whenever the generator list is
/// (generate a *-algebra by listing generators together with their adjoints).
pub fn commutant_of(generators: &[CMatrix], dim: usize, tol: &ToleranceConfig) -> Result<SpanBasis> {
    for g in generators {
        let d = check_square(g)?;
        if d != dim {
            return Err(QmError::DimensionMismatch {
                context: "commutant_of generator",
                expected: dim,
                got: d,
            });
        }
        check_finite(g)?;
    }
    let d2 = dim * dim;
    // Current orthonormal candidate span, initially everything.
    let mut basis = identity(d2);
    let id = identity(dim);
    for g in generators {
        let norm = g.norm();
        if norm <= tol.rank_tol {
            continue;
        }
        let gn = g.unscale(norm);
        // vec(g x - x g) = (I ⊗ g - gᵀ ⊗ I) vec(x)
        let comm_op = kron(&id, &gn) - kron(&gn.transpose(), &id);
        let restricted = &comm_op * &basis;
        let kernel = null_space(&restricted, tol);
        if kernel.len() == basis.ncols() {
            continue;
        }
        let mut w = zeros(basis.ncols(), kernel.len());
        for (j, k) in kernel.iter().enumerate() {
            w.set_column(j, k);
        }
        basis = &basis * &w;
        if basis.ncols() == 0 {
            break;
        }
    }
    let elements: Vec<CMatrix> = (0..basis.ncols())
        .map(|j| unvec(&basis.column(j).into_owned(), dim, dim))
        .collect();
    if elements.is_empty() {
        // The identity always commutes; an empty result means the tolerance
        // configuration wiped it out.
        return Err(QmError::DependentBasis {
            label: "commutant".into(),
            rank: 0,
            size: 0,
        });
    }
    SpanBasis::from_orthonormal("commutant", elements)
}

// --- matrix literals ----------------------------------------------------------

/// Encoding used by configuration files: a matrix is a row-major nested array
/// of `[re, im]` pairs.
pub mod literal {
    use super::{CMatrix, C64};
    use crate::error::{QmError, Result};

    /// One complex entry as `[re, im]`.
    pub type Entry = [f64; 2];
    /// Row-major rows of entries.
    pub type Rows = Vec<Vec<Entry>>;

    pub fn to_rows(m: &CMatrix) -> Rows {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
            .collect()
    }

    pub fn from_rows(rows: &Rows) -> Result<CMatrix> {
        if rows.is_empty() {
            return Err(QmError::Literal("matrix has no rows".into()));
        }
        let ncols = rows[0].len();
        if ncols == 0 {
            return Err(QmError::Literal("matrix has empty rows".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(QmError::Literal(format!(
                    "row {i} has {} entries, expected {ncols}",
                    r.len()
                )));
            }
            for (j, e) in r.iter().enumerate() {
                if !e[0].is_finite() || !e[1].is_finite() {
                    return Err(QmError::Literal(format!("non-finite entry at ({i}, {j})")));
                }
            }
        }
        Ok(CMatrix::from_fn(rows.len(), ncols, |i, j| {
            C64::new(rows[i][j][0], rows[i][j][1])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn sigma_z() -> CMatrix {
        // diag(-1, 1): the parity convention used by the fermion lattice.
        CMatrix::from_diagonal(&CVector::from_vec(vec![cr(-1.0), cr(1.0)]))
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let i2 = identity(2);
        assert_eq!(kron(&i2, &i2), identity(4));
    }

    #[test]
    fn kron_places_left_factor_on_coarse_index() {
        let z = sigma_z();
        let m = kron(&z, &identity(2));
        let diag: Vec<f64> = (0..4).map(|i| m[(i, i)].re).collect();
        assert_eq!(diag, vec![-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn kron_of_nilpotents_squares_to_zero() {
        let mut e21 = zeros(2, 2);
        e21[(1, 0)] = ONE;
        let k = kron(&e21, &e21);
        assert!((&k * &k).norm() < 1e-15);
    }

    #[test]
    fn kron_is_multiplicative() {
        let a = CMatrix::from_fn(2, 2, |i, j| C64::new((i + 2 * j) as f64, 1.0));
        let b = CMatrix::from_fn(3, 3, |i, j| C64::new(i as f64, j as f64 - 1.0));
        let c = CMatrix::from_fn(2, 2, |i, j| C64::new(0.5 * i as f64, -(j as f64)));
        let d = CMatrix::from_fn(3, 3, |i, j| C64::new(1.0, (i * j) as f64));
        let lhs = kron(&(&a * &c), &(&b * &d));
        let rhs = kron(&a, &b) * kron(&c, &d);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn identity_is_psd_and_indefinite_is_not() {
        assert!(is_psd(&identity(4), &tol()).unwrap());
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(1.0), cr(-1.0)]));
        assert!(!is_psd(&m, &tol()).unwrap());
    }

    #[test]
    fn gram_square_is_psd() {
        let x = CMatrix::from_fn(3, 3, |i, j| C64::new(i as f64 - j as f64, (i * j) as f64));
        let g = x.adjoint() * &x;
        assert!(is_psd(&g, &tol()).unwrap());
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let mut m = identity(2);
        m[(0, 1)] = cr(0.5);
        match is_psd(&m, &tol()) {
            Err(QmError::NotHermitian { .. }) => {}
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn psd_sqrt_of_diagonal() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(4.0), cr(9.0)]));
        let s = psd_sqrt(&m, &tol()).unwrap();
        let expect = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(2.0), cr(3.0)]));
        assert!((s - expect).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_round_trips() {
        let x = CMatrix::from_fn(4, 4, |i, j| C64::new((i + j) as f64 * 0.3, (i as f64 - j as f64) * 0.2));
        let m = x.adjoint() * &x;
        let s = psd_sqrt(&m, &tol()).unwrap();
        assert!((&s * &s - &m).norm() < 1e-10 * m.norm().max(1.0));
        // The root is Hermitian PSD.
        assert!(is_psd(&s, &tol()).unwrap());
    }

    #[test]
    fn psd_sqrt_rejects_negative_spectrum() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(1.0), cr(-0.5)]));
        match psd_sqrt(&m, &tol()) {
            Err(QmError::NotPsd { min_eig }) => assert!((min_eig + 0.5).abs() < 1e-12),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn expand_recovers_exact_coefficients() {
        let b0 = identity(2);
        let mut b1 = zeros(2, 2);
        b1[(0, 0)] = ONE;
        let basis = SpanBasis::new("demo", vec![b0.clone(), b1.clone()], &tol()).unwrap();
        let x = b0.scale(2.0) + b1.scale(3.0);
        let c = basis.expand(&x, &tol()).unwrap();
        assert!((c[0] - cr(2.0)).norm() < 1e-12);
        assert!((c[1] - cr(3.0)).norm() < 1e-12);
        let back = basis.synthesize(&c).unwrap();
        assert!((back - x).norm() < 1e-12);
    }

    #[test]
    fn expand_rejects_elements_outside_span() {
        let basis = SpanBasis::new("diag", vec![identity(2)], &tol()).unwrap();
        let mut x = zeros(2, 2);
        x[(0, 1)] = ONE;
        match basis.expand(&x, &tol()) {
            Err(QmError::OutsideSpan { .. }) => {}
            other => panic!("expected OutsideSpan, got {other:?}"),
        }
    }

    #[test]
    fn dependent_family_is_rejected() {
        let b0 = identity(2);
        let b1 = identity(2).scale(2.0);
        match SpanBasis::new("dep", vec![b0, b1], &tol()) {
            Err(QmError::DependentBasis { .. }) => {}
            other => panic!("expected DependentBasis, got {other:?}"),
        }
    }

    #[test]
    fn non_orthogonal_basis_round_trips() {
        // {1, e11, e12 + e21} is independent but far from orthogonal.
        let mut e11 = zeros(2, 2);
        e11[(0, 0)] = ONE;
        let mut x01 = zeros(2, 2);
        x01[(0, 1)] = ONE;
        x01[(1, 0)] = ONE;
        let basis = SpanBasis::new("skew", vec![identity(2), e11.clone(), x01.clone()], &tol()).unwrap();
        let target = identity(2).scale(0.7) + e11.scale(-1.3) + x01.scale(0.25);
        let c = basis.expand(&target, &tol()).unwrap();
        let back = basis.synthesize(&c).unwrap();
        assert!((back - target).norm() < 1e-12);
    }

    #[test]
    fn matrix_units_span_full_algebra() {
        let units = SpanBasis::full_matrix_units(3);
        assert_eq!(units.len(), 9);
        assert!(units.spans_full_algebra());
        let x = CMatrix::from_fn(3, 3, |i, j| C64::new(i as f64, j as f64));
        let c = units.expand(&x, &tol()).unwrap();
        let back = units.synthesize(&c).unwrap();
        assert!((back - x).norm() < 1e-13);
    }

    #[test]
    fn commutant_of_full_algebra_is_scalars() {
        let units = SpanBasis::full_matrix_units(2);
        let com = commutant_of(units.elements(), 2, &tol()).unwrap();
        assert_eq!(com.len(), 1);
        // The single element is proportional to the identity.
        let e = com.element(0);
        let diag_dev = (e - identity(2).scale(e[(0, 0)].re) ).norm();
        assert!(diag_dev < 1e-10 || (e + identity(2).scale(-e[(0, 0)].re)).norm() < 1e-10);
    }

    #[test]
    fn commutant_of_left_factor_is_right_factor() {
        // Generators: M2 ⊗ 1 inside M4. Commutant must be 1 ⊗ M2 (dimension 4).
        let units = SpanBasis::full_matrix_units(2);
        let gens: Vec<CMatrix> = units.elements().iter().map(|u| kron(u, &identity(2))).collect();
        let com = commutant_of(&gens, 4, &tol()).unwrap();
        assert_eq!(com.len(), 4);
        for u in units.elements() {
            let embedded = kron(&identity(2), u);
            assert!(com.contains(&embedded, &tol()).unwrap());
        }
    }

    #[test]
    fn commutant_matches_stacked_null_space_oracle() {
        // Independent route: one SVD of all stacked commutator operators.
        let z = sigma_z();
        let mut e21 = zeros(2, 2);
        e21[(1, 0)] = ONE;
        let gens = vec![kron(&z, &identity(2)), kron(&e21, &identity(2))];
        let dim = 4;
        let id = identity(dim);
        let mut stacked = zeros(2 * dim * dim, dim * dim);
        for (gi, g) in gens.iter().enumerate() {
            let op = kron(&id, &g.unscale(g.norm())) - kron(&g.transpose().unscale(g.norm()), &id);
            stacked.view_mut((gi * dim * dim, 0), (dim * dim, dim * dim)).copy_from(&op);
        }
        let oracle: Vec<CMatrix> = null_space(&stacked, &tol())
            .iter()
            .map(|v| unvec(v, dim, dim))
            .collect();
        let com = commutant_of(&gens, dim, &tol()).unwrap();
        assert_eq!(com.len(), oracle.len());
        for m in &oracle {
            assert!(com.contains(m, &tol()).unwrap());
        }
        let oracle_basis = SpanBasis::from_orthonormal("oracle", oracle).unwrap();
        for m in com.elements() {
            assert!(oracle_basis.contains(m, &tol()).unwrap());
        }
    }

    #[test]
    fn commutant_of_empty_generators_is_everything() {
        let com = commutant_of(&[], 3, &tol()).unwrap();
        assert_eq!(com.len(), 9);
    }

    #[test]
    fn commutant_is_adjoint_closed() {
        // Generator list closed under adjoints, so the commutant is a *-algebra.
        let mut g = zeros(2, 2);
        g[(0, 1)] = C64::new(0.3, 0.7);
        g[(1, 1)] = cr(1.0);
        let gens = vec![kron(&g, &identity(3)), kron(&g.adjoint(), &identity(3))];
        let com = commutant_of(&gens, 6, &tol()).unwrap();
        assert!(!com.is_empty());
        for e in com.elements() {
            assert!(com.contains(&e.adjoint(), &tol()).unwrap());
        }
    }

    #[test]
    fn subspace_intersection_of_factors() {
        // span{1⊗M2} ∩ span{M2⊗1} = scalars inside M4.
        let units = SpanBasis::full_matrix_units(2);
        let left: Vec<CMatrix> = units.elements().iter().map(|u| kron(u, &identity(2)).unscale(kron(u, &identity(2)).norm())).collect();
        let right: Vec<CMatrix> = units.elements().iter().map(|u| kron(&identity(2), u).unscale(kron(&identity(2), u).norm())).collect();
        let lb = SpanBasis::new("l", left, &tol()).unwrap();
        let rb = SpanBasis::new("r", right, &tol()).unwrap();
        let qa = lb.orthonormal_columns(&tol());
        let qb = rb.orthonormal_columns(&tol());
        let inter = subspace_intersection(&qa, &qb, &tol());
        assert_eq!(inter.len(), 1);
        let m = unvec(&inter[0], 4, 4);
        // Proportional to identity.
        let scale = m.trace() / cr(4.0);
        assert!((m - identity(4) * scale).norm() < 1e-9);
    }

    #[test]
    fn literal_round_trip() {
        let m = CMatrix::from_fn(2, 3, |i, j| C64::new(i as f64 + 0.5, j as f64 - 0.25));
        let rows = literal::to_rows(&m);
        let back = literal::from_rows(&rows).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn literal_rejects_ragged_rows() {
        let rows = vec![vec![[1.0, 0.0], [2.0, 0.0]], vec![[3.0, 0.0]]];
        assert!(literal::from_rows(&rows).is_err());
    }

    #[test]
    fn tolerance_validation() {
        assert!(ToleranceConfig::default().validate().is_ok());
        let bad = ToleranceConfig { eig_tol: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        use rand::Rng;
        let mut rng = crate::random::rng_for(seed, 0);
        let m = CMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        (&m + m.adjoint()).scale(0.5)
    }

    #[test]
    fn jacobi_matches_ql_on_generic_hermitian() {
        for seed in 0..5u64 {
            let h = random_hermitian(12, 40 + seed);
            let mut jac = jacobi_hermitian(&h).eigenvalues;
            let mut ql: Vec<f64> = h.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            jac.sort_by(|a, b| a.total_cmp(b));
            ql.sort_by(|a, b| a.total_cmp(b));
            for (a, b) in jac.iter().zip(&ql) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn jacobi_diagonalizes_with_unitary_vectors() {
        let h = random_hermitian(15, 99);
        let eig = jacobi_hermitian(&h);
        let v = &eig.eigenvectors;
        assert!((v.adjoint() * v - identity(15)).norm() < 1e-10);
        let mut lambda = zeros(15, 15);
        for i in 0..15 {
            lambda[(i, i)] = cr(eig.eigenvalues[i]);
        }
        assert!((&h * v - v * lambda).norm() < 1e-10);
    }

    #[test]
    fn jacobi_handles_degenerate_sparse_spectra() {
        // Mass degeneracy plus exact zero rows: the shape on which the QL
        // path has been seen returning NaN/inf eigenvalues.
        let mut h = zeros(64, 64);
        for i in 0..4 {
            h[(i, i)] = cr(3.0);
        }
        h[(0, 5)] = cr(0.25);
        h[(5, 0)] = cr(0.25);
        let eig = jacobi_hermitian(&h);
        assert!(eig.eigenvalues.iter().all(|v| v.is_finite()));
        let sum: f64 = eig.eigenvalues.iter().sum();
        assert!((sum - 12.0).abs() < 1e-9);
    }

    #[test]
    fn hermitian_eigen_never_returns_non_finite() {
        // Even when the fast path succeeds, the contract is finiteness.
        for n in [1, 2, 7] {
            let h = random_hermitian(n, 7 + n as u64);
            let eig = hermitian_eigen(&h);
            assert!(eig.eigenvalues.iter().all(|v| v.is_finite()));
            assert_eq!(eig.eigenvalues.len(), n);
        }
    }
}
