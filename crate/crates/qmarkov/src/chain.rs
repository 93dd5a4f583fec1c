//! Finite-horizon chains: a transition expectation per bond, a boundary
//! sequence, and an initial site functional, evaluated backwards.
//!
//! Correlation values come from the recursion
//!   x_m = E_m(a_m · lift(x_{m+1})),   x_{last} = boundary,
//! folded down to site 0 and paired with the normalized initial state.

use std::sync::Arc;

use rand_distr::Distribution;

use crate::algebra::LocalStructure;
use crate::error::{QmError, Result};
use crate::kernel::{verify_markov_property, TransitionExpectation};
use crate::linalg::{
    check_finite, hermitian_eigenvalues, hs_norm, identity, min_eigenvalue, null_space, psd_sqrt,
    subspace_residual, unvec, vec_of, CMatrix, CVector, ToleranceConfig, C64,
};
use crate::parallel;
use crate::random;

/// Keeps the dense reconstruction solve (ambient squared unknowns) at desk
/// scale.
const RECONSTRUCTION_AMBIENT_CAP: usize = 32;

/// Power-iteration length for the leading-eigenvalue report.
const POWER_ITERATIONS: usize = 400;

/// Seeded restarts when hunting a positive fixed point inside the
/// eigenvalue-one subspace.
const PSD_SEARCH_TRIALS: usize = 64;

// --- boundary sequences -------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryProvenance {
    /// b_n = E_n(1), the unit image of the outgoing kernel; identity at the
    /// last site.
    TrivialIdentity,
    /// Fixed point of b -> E(1 ⊗ b) for a homogeneous chain.
    MartingaleSolve,
    UserSupplied,
}

/// One positive site-local element per site. The martingale equation
/// E_n(1 ⊗ b_{n+1}) = b_n is measured bond by bond and reported, never
/// assumed: scaled kernels produce perfectly usable boundary sequences whose
/// residuals are large.
#[derive(Clone, Debug)]
pub struct BoundarySequence {
    b: Vec<CMatrix>,
    c: Vec<Option<CMatrix>>,
    factor_residuals: Vec<f64>,
    martingale_residuals: Vec<f64>,
    provenance: BoundaryProvenance,
}

impl BoundarySequence {
    /// b_n = E_n(1) for every bonded site, identity at the bare last site.
    pub fn trivial(
        structure: &LocalStructure,
        kernels: &[TransitionExpectation],
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        check_kernel_layout(structure, kernels)?;
        let sites = structure.sites();
        let mut b = Vec::with_capacity(sites);
        for kernel in kernels {
            b.push(kernel.unit_image(tol)?);
        }
        b.push(identity(structure.site_local_dim(sites - 1)));
        Self::finish(structure, kernels, b, BoundaryProvenance::TrivialIdentity, tol)
    }

    /// Solves E(1 ⊗ b) = b for a homogeneous chain and uses the solution at
    /// every site. The fixed-point equation is linearized on the trailing
    /// site, its eigenvalue-one subspace extracted by a rank-revealing SVD,
    /// and a positive representative located inside that subspace; seeded
    /// restarts keep the search deterministic.
    pub fn solve_homogeneous(
        structure: &LocalStructure,
        kernels: &[TransitionExpectation],
        seed: u64,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        check_kernel_layout(structure, kernels)?;
        check_homogeneous(structure, kernels, tol)?;
        let b = solve_boundary_element(&kernels[0], seed, tol)?;
        let sites = structure.sites();
        let b_all = vec![b; sites];
        Self::finish(structure, kernels, b_all, BoundaryProvenance::MartingaleSolve, tol)
    }

    pub fn user_supplied(
        structure: &LocalStructure,
        kernels: &[TransitionExpectation],
        b: Vec<CMatrix>,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        check_kernel_layout(structure, kernels)?;
        Self::finish(structure, kernels, b, BoundaryProvenance::UserSupplied, tol)
    }

    /// Shared validation: positivity and admissible-span membership of each
    /// b_n, factors c_n with b_n = c_n† c_n, and the martingale residual of
    /// every bond.
    fn finish(
        structure: &LocalStructure,
        kernels: &[TransitionExpectation],
        b: Vec<CMatrix>,
        provenance: BoundaryProvenance,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        let sites = structure.sites();
        if b.len() != sites {
            return Err(QmError::DimensionMismatch {
                context: "boundary sequence length".into(),
                expected: sites,
                got: b.len(),
            });
        }
        let mut c = Vec::with_capacity(sites);
        let mut factor_residuals = Vec::with_capacity(sites);
        for (n, bn) in b.iter().enumerate() {
            let d = structure.site_local_dim(n);
            if bn.nrows() != d || bn.ncols() != d {
                return Err(QmError::DimensionMismatch {
                    context: "boundary element",
                    expected: d,
                    got: bn.nrows(),
                });
            }
            check_finite(bn)?;
            let min = min_eigenvalue(bn, tol)?;
            if min < -tol.eig_tol {
                return Err(QmError::NotPsd { min_eig: min });
            }
            let admissible = structure.markov_range_basis(n)?;
            let scale = tol.eq_scaled(1.0 + hs_norm(bn));
            let dist = admissible.distance(bn)?;
            if dist > scale {
                return Err(QmError::OutsideSpan {
                    label: format!("boundary element at site {n}"),
                    residual: dist,
                    tol: scale,
                });
            }
            // b_n = c_n† c_n with c_n in the same admissible span; the
            // membership of the factor is measured, not assumed.
            match psd_sqrt(bn, tol) {
                Ok(cn) => {
                    factor_residuals.push(admissible.distance(&cn)?);
                    c.push(Some(cn));
                }
                Err(_) => {
                    factor_residuals.push(f64::INFINITY);
                    c.push(None);
                }
            }
        }
        let mut martingale_residuals = Vec::with_capacity(kernels.len());
        for (n, kernel) in kernels.iter().enumerate() {
            let lifted = kernel.block().embed_site(1, &b[n + 1])?;
            let image = kernel.apply_block(&lifted, tol)?;
            martingale_residuals.push(hs_norm(&(image - &b[n])));
        }
        Ok(Self {
            b,
            c,
            factor_residuals,
            martingale_residuals,
            provenance,
        })
    }

    pub fn element(&self, n: usize) -> &CMatrix {
        &self.b[n]
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.b
    }

    pub fn factor(&self, n: usize) -> Option<&CMatrix> {
        self.c[n].as_ref()
    }

    pub fn factor_residuals(&self) -> &[f64] {
        &self.factor_residuals
    }

    pub fn martingale_residuals(&self) -> &[f64] {
        &self.martingale_residuals
    }

    pub fn provenance(&self) -> BoundaryProvenance {
        self.provenance
    }

    /// True when every bond satisfies E_n(1 ⊗ b_{n+1}) = b_n within the
    /// scaled equality tolerance.
    pub fn is_martingale(&self, tol: &ToleranceConfig) -> bool {
        self.martingale_residuals
            .iter()
            .zip(&self.b)
            .all(|(r, bn)| *r <= tol.eq_scaled(1.0 + hs_norm(bn)))
    }
}

/// Mixed-radix decode of a flat index over per-site basis lengths, last site
/// fastest.
fn decode_tuple(lens: &[usize], mut flat: usize) -> Vec<usize> {
    let mut tuple = vec![0; lens.len()];
    for (i, &len) in lens.iter().enumerate().rev() {
        tuple[i] = flat % len;
        flat /= len;
    }
    tuple
}

fn check_kernel_layout(
    structure: &LocalStructure,
    kernels: &[TransitionExpectation],
) -> Result<()> {
    let bonds = structure.sites().saturating_sub(1);
    if kernels.len() != bonds {
        return Err(QmError::ChainSpec(format!(
            "expected one kernel per bond ({bonds}), got {}",
            kernels.len()
        )));
    }
    for (n, kernel) in kernels.iter().enumerate() {
        if kernel.site() != n {
            return Err(QmError::ChainSpec(format!(
                "kernel at position {n} is attached to bond {}",
                kernel.site()
            )));
        }
    }
    Ok(())
}

/// Homogeneity means every bond carries the same site dimensions and the
/// same images, so a single trailing-site fixed point serves the whole chain.
fn check_homogeneous(
    structure: &LocalStructure,
    kernels: &[TransitionExpectation],
    tol: &ToleranceConfig,
) -> Result<()> {
    if kernels.is_empty() {
        return Err(QmError::ChainSpec("chain has no bonds to solve over".into()));
    }
    let d = structure.site_local_dim(0);
    for n in 1..structure.sites() {
        if structure.site_local_dim(n) != d {
            return Err(QmError::ChainSpec(format!(
                "site {n} has local dimension {}, expected homogeneous {d}",
                structure.site_local_dim(n)
            )));
        }
    }
    let first = kernels[0].map();
    for kernel in &kernels[1..] {
        let map = kernel.map();
        if map.images().len() != first.images().len() {
            return Err(QmError::ChainSpec(
                "kernels differ across bonds; the homogeneous solve does not apply".into(),
            ));
        }
        for (a, b) in map.images().iter().zip(first.images()) {
            let scale = tol.eq_scaled(1.0 + hs_norm(b));
            if hs_norm(&(a - b)) > scale {
                return Err(QmError::ChainSpec(
                    "kernels differ across bonds; the homogeneous solve does not apply".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Superoperator of b -> E(1 ⊗ b) on the trailing site, columns indexed by
/// column-major matrix units.
fn trailing_superoperator(
    kernel: &TransitionExpectation,
    tol: &ToleranceConfig,
) -> Result<CMatrix> {
    let d = kernel.block().site_local_dim(1);
    let dd = d * d;
    let mut s = CMatrix::zeros(dd, dd);
    for col in 0..dd {
        let (r, c) = (col % d, col / d);
        let mut unit = CMatrix::zeros(d, d);
        unit[(r, c)] = C64::new(1.0, 0.0);
        let image = kernel.apply_block(&kernel.block().embed_site(1, &unit)?, tol)?;
        s.set_column(col, &vec_of(&image));
    }
    Ok(s)
}

/// Modulus of the dominant eigenvalue, by seeded power iteration. Good to a
/// few digits, which is all the no-solution report needs.
fn leading_eigenvalue_estimate(s: &CMatrix, seed: u64) -> f64 {
    let n = s.nrows();
    let mut rng = random::rng_for(seed, 0x9e37);
    let mut v = random::unit_vector(&mut rng, n);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = s * &v;
        let norm = w.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        lambda = norm;
        v = w / C64::new(norm, 0.0);
    }
    lambda
}

/// Positive fixed point of the trailing-site map for one kernel.
fn solve_boundary_element(
    kernel: &TransitionExpectation,
    seed: u64,
    tol: &ToleranceConfig,
) -> Result<CMatrix> {
    let d = kernel.block().site_local_dim(1);
    // Identity-preserving kernels need no search: b = 1 is the fixed point.
    if kernel.is_identity_preserving() {
        return Ok(identity(d));
    }
    let s = trailing_superoperator(kernel, tol)?;
    let shifted = &s - identity(d * d);
    let fixed = null_space(&shifted, tol);
    if fixed.is_empty() {
        return Err(QmError::NoBoundaryFixedPoint {
            leading: leading_eigenvalue_estimate(&s, seed),
        });
    }
    // The fixed subspace of a hermiticity-preserving map is adjoint-closed,
    // so it carries a hermitian basis; keep the parts that really are fixed.
    let mut herm_basis: Vec<CMatrix> = Vec::new();
    let fixed_frame = {
        let mut q = CMatrix::zeros(d * d, fixed.len());
        for (j, v) in fixed.iter().enumerate() {
            q.set_column(j, v);
        }
        q
    };
    for v in &fixed {
        let m = unvec(v, d, d);
        let sym = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        let skew = (&m - m.adjoint()) * C64::new(0.0, -0.5);
        for h in [sym, skew] {
            let norm = hs_norm(&h);
            if norm <= tol.eq_tol {
                continue;
            }
            if subspace_residual(&fixed_frame, &vec_of(&h)) <= tol.eq_scaled(norm) {
                herm_basis.push(h * C64::new(1.0 / norm, 0.0));
            }
        }
    }
    let mut candidates: Vec<CMatrix> = Vec::new();
    for h in &herm_basis {
        candidates.push(h.clone());
        candidates.push(-h.clone());
    }
    for trial in 0..PSD_SEARCH_TRIALS {
        if herm_basis.is_empty() {
            break;
        }
        let mut rng = random::rng_for(seed, 0x517 + trial as u64);
        let mut mix = CMatrix::zeros(d, d);
        for h in &herm_basis {
            let coeff: f64 = rand_distr::StandardNormal.sample(&mut rng);
            mix += h * C64::new(coeff, 0.0);
        }
        let norm = hs_norm(&mix);
        if norm > tol.eq_tol {
            candidates.push(&mix * C64::new(1.0 / norm, 0.0));
            candidates.push(&mix * C64::new(-1.0 / norm, 0.0));
        }
    }
    for cand in candidates {
        let eigs = match hermitian_eigenvalues(&cand, tol) {
            Ok(e) => e,
            Err(_) => continue,
        };
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min >= -tol.eig_tol && max > tol.eig_tol {
            // Spectral normalization: top eigenvalue one, so an identity
            // fixed point comes back as exactly the identity.
            return Ok(&cand * C64::new(1.0 / max, 0.0));
        }
    }
    Err(QmError::NoBoundaryFixedPoint {
        leading: leading_eigenvalue_estimate(&s, seed),
    })
}

// --- normalized initial functional --------------------------------------------

/// The site-0 functional phi_0 = phi / phi(b_0), kept as the raw density with
/// its normalizing weight.
#[derive(Clone, Debug)]
pub struct NormalizedInitial {
    rho: CMatrix,
    weight: C64,
}

impl NormalizedInitial {
    pub fn expect(&self, x: &CMatrix) -> C64 {
        (&self.rho * x).trace() / self.weight
    }

    pub fn weight(&self) -> C64 {
        self.weight
    }
}

pub fn normalize_initial(
    rho: &CMatrix,
    b0: &CMatrix,
    tol: &ToleranceConfig,
) -> Result<NormalizedInitial> {
    let weight = (rho * b0).trace();
    if weight.norm() <= tol.eq_scaled(1.0 + hs_norm(rho) * hs_norm(b0)) {
        return Err(QmError::DegenerateInitialState {
            value: weight.norm(),
        });
    }
    Ok(NormalizedInitial {
        rho: rho.clone(),
        weight,
    })
}

// --- chain specification -------------------------------------------------------

/// A finite chain: lattice structure, one transition expectation per bond,
/// an initial density at site 0, and a boundary sequence.
#[derive(Clone, Debug)]
pub struct ChainSpec {
    structure: LocalStructure,
    kernels: Arc<Vec<TransitionExpectation>>,
    rho0: CMatrix,
    boundary: BoundarySequence,
}

impl ChainSpec {
    /// Validates the layout, Markov property of every kernel, positivity and
    /// normalization of the initial density, and non-degeneracy of the
    /// initial weight against b_0. `boundary = None` installs the trivial
    /// sequence.
    pub fn new(
        structure: LocalStructure,
        kernels: Vec<TransitionExpectation>,
        rho0: CMatrix,
        boundary: Option<BoundarySequence>,
    ) -> Result<Self> {
        let tol = *structure.tol();
        check_kernel_layout(&structure, &kernels)?;
        for (index, kernel) in kernels.iter().enumerate() {
            let report = verify_markov_property(kernel, &structure, &tol)?;
            if !report.pass {
                return Err(QmError::MarkovViolation {
                    index,
                    residual: report.worst_residual,
                });
            }
        }
        let d0 = structure.site_local_dim(0);
        if rho0.nrows() != d0 || rho0.ncols() != d0 {
            return Err(QmError::DimensionMismatch {
                context: "initial density".into(),
                expected: d0,
                got: rho0.nrows(),
            });
        }
        check_finite(&rho0)?;
        let min = min_eigenvalue(&rho0, &tol)?;
        if min < -tol.eig_tol {
            return Err(QmError::NotPsd { min_eig: min });
        }
        let trace = rho0.trace();
        if trace.norm() <= tol.eq_tol {
            return Err(QmError::DegenerateInitialState {
                value: trace.norm(),
            });
        }
        let rho0 = &rho0 / trace;
        let boundary = match boundary {
            Some(b) => b,
            None => BoundarySequence::trivial(&structure, &kernels, &tol)?,
        };
        // phi(b_0) must be invertible for the normalized functional to exist.
        normalize_initial(&rho0, boundary.element(0), &tol)?;
        Ok(Self {
            structure,
            kernels: Arc::new(kernels),
            rho0,
            boundary,
        })
    }

    /// Replicates one kernel across every bond of the lattice.
    pub fn homogeneous(
        structure: LocalStructure,
        kernel: &TransitionExpectation,
        rho0: CMatrix,
        boundary: Option<BoundarySequence>,
    ) -> Result<Self> {
        let tol = *structure.tol();
        let mut kernels = Vec::with_capacity(structure.sites().saturating_sub(1));
        for n in 0..structure.sites().saturating_sub(1) {
            kernels.push(kernel.replicate(&structure, n, &tol)?);
        }
        Self::new(structure, kernels, rho0, boundary)
    }

    pub fn structure(&self) -> &LocalStructure {
        &self.structure
    }

    pub fn kernels(&self) -> &[TransitionExpectation] {
        &self.kernels
    }

    pub fn kernel(&self, bond: usize) -> &TransitionExpectation {
        &self.kernels[bond]
    }

    pub fn initial_density(&self) -> &CMatrix {
        &self.rho0
    }

    pub fn boundary(&self) -> &BoundarySequence {
        &self.boundary
    }

    pub fn sites(&self) -> usize {
        self.structure.sites()
    }

    pub fn tol(&self) -> &ToleranceConfig {
        self.structure.tol()
    }

    /// Swaps in a different boundary sequence, revalidating the initial
    /// weight.
    pub fn with_boundary(mut self, boundary: BoundarySequence) -> Result<Self> {
        normalize_initial(&self.rho0, boundary.element(0), self.structure.tol())?;
        self.boundary = boundary;
        Ok(self)
    }

    /// phi(a_0 ... a_n) with the boundary inserted `horizon_extension` sites
    /// past the last observable, normalized by phi(b_0).
    pub fn evaluate(&self, query: &CorrelationQuery) -> Result<C64> {
        let tol = self.structure.tol();
        let n_obs = query.observables.len();
        if n_obs == 0 {
            return Err(QmError::Query("query carries no observables".into()));
        }
        let last_obs = n_obs - 1;
        let sites = self.structure.sites();
        let boundary_site = last_obs + query.horizon_extension + 1;
        if boundary_site > sites {
            return Err(QmError::HorizonExceeded {
                needed: boundary_site,
                available: sites,
            });
        }
        for (i, a) in query.observables.iter().enumerate() {
            let d = self.structure.site_local_dim(i);
            if a.nrows() != d || a.ncols() != d {
                return Err(QmError::Query(format!(
                    "observable at site {i} has dimension {}, site has {d}",
                    a.nrows()
                )));
            }
            check_finite(a)?;
        }
        // When the query reaches the end of the lattice there is no bond left
        // to fold the last site through: the boundary element at the final
        // site multiplies the final observable instead.
        let (mut x, start_bond) = if boundary_site < sites {
            (self.boundary.element(boundary_site).clone(), boundary_site)
        } else {
            let last = sites - 1;
            let mut x = self.boundary.element(last).clone();
            if last_obs == last {
                x = &query.observables[last] * x;
            }
            (x, last)
        };
        for m in (0..start_bond).rev() {
            let kernel = &self.kernels[m];
            let block = kernel.block();
            let lifted = block.embed_site(1, &x)?;
            let arg = if m <= last_obs {
                block.embed_site(0, &query.observables[m])? * &lifted
            } else {
                lifted
            };
            x = kernel.apply_block(&arg, tol)?;
        }
        let initial = normalize_initial(&self.rho0, self.boundary.element(0), tol)?;
        Ok(initial.expect(&x))
    }

    /// Value profile over horizon extensions 0..=k_max with successive
    /// differences. Stability asks the differences to vanish from the second
    /// step on; the first step may move once when the boundary is not yet a
    /// martingale element.
    pub fn stabilization_check(
        &self,
        query: &CorrelationQuery,
        k_max: usize,
        tol: f64,
    ) -> Result<StabilizationReport> {
        let mut values = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let q = CorrelationQuery {
                observables: query.observables.clone(),
                horizon_extension: k,
            };
            values.push(self.evaluate(&q)?);
        }
        let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let max_tail_diff = diffs.iter().skip(1).cloned().fold(0.0, f64::max);
        let stable = max_tail_diff <= tol;
        Ok(StabilizationReport {
            values,
            diffs,
            max_tail_diff,
            stable,
        })
    }

    /// Dense density matrix of the restriction to sites [0, n], recovered by
    /// solving tr(rho x) = phi(x) over the full product basis of the prefix.
    pub fn density_matrix(&self, n: usize) -> Result<FiniteVolumeState> {
        let tol = self.structure.tol();
        if n + 1 > self.structure.sites() {
            return Err(QmError::HorizonExceeded {
                needed: n + 1,
                available: self.structure.sites(),
            });
        }
        let prefix = self.structure.prefix(n)?;
        let ambient = prefix.ambient_dim();
        if ambient > RECONSTRUCTION_AMBIENT_CAP {
            return Err(QmError::DimensionCap {
                dim: ambient,
                cap: RECONSTRUCTION_AMBIENT_CAP,
            });
        }
        let pb = prefix.product_basis(0, n)?;
        let count = pb.len();
        let values: Vec<Result<C64>> = parallel::map_indexed(count, |j| {
            let tuple = pb.tuple_of(j);
            let observables: Vec<CMatrix> = tuple
                .iter()
                .enumerate()
                .map(|(site, &i)| self.structure.site_basis(site).element(i).clone())
                .collect();
            self.evaluate(&CorrelationQuery {
                observables,
                horizon_extension: 0,
            })
        });
        let mut rhs = CVector::zeros(count);
        for (j, v) in values.into_iter().enumerate() {
            rhs[j] = v?;
        }
        // tr(rho x) = vec(x^T) . vec(rho), an unconjugated pairing.
        let mut m = CMatrix::zeros(count, ambient * ambient);
        for j in 0..count {
            m.set_row(j, &vec_of(&pb.element(j).transpose()).transpose());
        }
        let solved = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| QmError::StructuralInvariant {
                relation: "product basis spans the prefix algebra".into(),
                residual: f64::NAN,
            })?;
        let rho = unvec(&solved, ambient, ambient);
        let mut agreement: f64 = 0.0;
        for j in 0..count {
            let lhs = (&rho * pb.element(j)).trace();
            agreement = agreement.max((lhs - rhs[j]).norm());
        }
        let asymmetry = hs_norm(&(&rho - rho.adjoint())) * 0.5;
        let herm = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let min_eig = min_eigenvalue(&herm, tol)?;
        if min_eig < -tol.eig_tol {
            return Err(QmError::NotPsd { min_eig });
        }
        let trace_residual = (rho.trace() - C64::new(1.0, 0.0)).norm();
        Ok(FiniteVolumeState {
            first: 0,
            last: n,
            rho,
            trace_residual,
            asymmetry,
            min_eigenvalue: min_eig,
            agreement_residual: agreement,
        })
    }

    /// Restriction consistency at volume n: evaluating any prefix observable
    /// with the boundary one site further out must reproduce the value at the
    /// nearer boundary.
    pub fn check_projectivity(&self, n: usize, tol: f64) -> Result<ProjectivityReport> {
        if n + 3 > self.structure.sites() {
            return Err(QmError::HorizonExceeded {
                needed: n + 3,
                available: self.structure.sites(),
            });
        }
        let lens: Vec<usize> = (0..=n)
            .map(|i| self.structure.site_basis(i).len())
            .collect();
        let count = lens.iter().product();
        let residuals: Vec<Result<f64>> = parallel::map_indexed(count, |j| {
            let tuple = decode_tuple(&lens, j);
            let observables: Vec<CMatrix> = tuple
                .iter()
                .enumerate()
                .map(|(site, &i)| self.structure.site_basis(site).element(i).clone())
                .collect();
            let near = self.evaluate(&CorrelationQuery {
                observables: observables.clone(),
                horizon_extension: 0,
            })?;
            let far = self.evaluate(&CorrelationQuery {
                observables,
                horizon_extension: 1,
            })?;
            Ok((far - near).norm())
        });
        let mut max_residual: f64 = 0.0;
        let mut offending_index = None;
        for (j, r) in residuals.into_iter().enumerate() {
            let r = r?;
            if r > max_residual {
                max_residual = r;
                offending_index = Some(j);
            }
        }
        let pass = max_residual <= tol;
        Ok(ProjectivityReport {
            volume: n,
            pass,
            max_residual,
            offending_index: if pass { None } else { offending_index },
        })
    }

    /// Local compatibility of adjacent kernels at bond n: folding a_{n+1}
    /// through the next kernel first must not change any three-point value
    ///   phi_[0,n](a E(a_n a_{n+1}))  vs  phi_[0,n](a E(a_n E'(a_{n+1}))),
    /// swept over product bases of the past, site n, and site n+1.
    pub fn check_compatibility(&self, n: usize, tol: f64) -> Result<CompatibilityReport> {
        if n + 3 > self.structure.sites() {
            return Err(QmError::HorizonExceeded {
                needed: n + 3,
                available: self.structure.sites(),
            });
        }
        let tolc = self.structure.tol();
        let kernel = &self.kernels[n];
        let next = &self.kernels[n + 1];
        let past_lens: Vec<usize> = if n == 0 {
            Vec::new()
        } else {
            (0..n).map(|i| self.structure.site_basis(i).len()).collect()
        };
        let past_len: usize = past_lens.iter().product();
        let sb_n = self.structure.site_basis(n);
        let sb_next = self.structure.site_basis(n + 1);
        let (len_n, len_next) = (sb_n.len(), sb_next.len());
        let total = past_len * len_n * len_next;
        let pairs: Vec<Result<(C64, C64)>> = parallel::map_indexed(total, |flat| {
            let j_next = flat % len_next;
            let j_n = (flat / len_next) % len_n;
            let j_past = flat / (len_next * len_n);
            let a_n = sb_n.element(j_n);
            let a_next = sb_next.element(j_next);
            let block = kernel.block();
            // E(a_n a_{n+1}) directly.
            let direct = kernel.apply_block(
                &(block.embed_site(0, a_n)? * block.embed_site(1, a_next)?),
                tolc,
            )?;
            // E(a_n E'(a_{n+1})), the next kernel applied to a_{n+1} 1.
            let folded_next =
                next.apply_block(&next.block().embed_site(0, a_next)?, tolc)?;
            let folded = kernel.apply_block(
                &(block.embed_site(0, a_n)? * block.embed_site(1, &folded_next)?),
                tolc,
            )?;
            let mut lhs_obs: Vec<CMatrix> = Vec::with_capacity(n + 1);
            if !past_lens.is_empty() {
                let tuple = decode_tuple(&past_lens, j_past);
                for (site, &i) in tuple.iter().enumerate() {
                    lhs_obs.push(self.structure.site_basis(site).element(i).clone());
                }
            }
            let mut rhs_obs = lhs_obs.clone();
            lhs_obs.push(direct);
            rhs_obs.push(folded);
            let lhs = self.evaluate(&CorrelationQuery {
                observables: lhs_obs,
                horizon_extension: 0,
            })?;
            let rhs = self.evaluate(&CorrelationQuery {
                observables: rhs_obs,
                horizon_extension: 0,
            })?;
            Ok((lhs, rhs))
        });
        let mut max_residual: f64 = 0.0;
        let mut witness = None;
        for (flat, pair) in pairs.into_iter().enumerate() {
            let (lhs, rhs) = pair?;
            let r = (lhs - rhs).norm();
            if r > max_residual {
                max_residual = r;
                witness = Some(CompatibilityWitness {
                    past_index: flat / (len_next * len_n),
                    site_index: (flat / len_next) % len_n,
                    next_index: flat % len_next,
                    lhs,
                    rhs,
                });
            }
        }
        let pass = max_residual <= tol;
        Ok(CompatibilityReport {
            bond: n,
            pass,
            max_residual,
            witness: if pass { None } else { witness },
        })
    }

    /// Runs stabilization, projectivity, and compatibility up to `n_max`
    /// (default: the largest bond both checks reach) and names the class.
    pub fn classify(&self, n_max: Option<usize>, tol: f64) -> Result<ClassificationReport> {
        let sites = self.structure.sites();
        if sites < 3 {
            return Err(QmError::ChainSpec(
                "classification needs at least three sites".into(),
            ));
        }
        let n_max = n_max.unwrap_or(sites - 3).min(sites - 3);
        // Stabilization suite: every site-0 basis element, maximal reach.
        let k_max = (sites - 2).min(4);
        let sb0 = self.structure.site_basis(0);
        let mut stabilization_max: f64 = 0.0;
        for i in 0..sb0.len() {
            let report = self.stabilization_check(
                &CorrelationQuery {
                    observables: vec![sb0.element(i).clone()],
                    horizon_extension: 0,
                },
                k_max,
                tol,
            )?;
            stabilization_max = stabilization_max.max(report.max_tail_diff);
        }
        let stabilization_ok = stabilization_max <= tol;
        let mut projectivity = Vec::with_capacity(n_max + 1);
        let mut compatibility = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            projectivity.push(self.check_projectivity(n, tol)?);
            compatibility.push(self.check_compatibility(n, tol)?);
        }
        let projectivity_ok = projectivity.iter().all(|r| r.pass);
        let compatibility_ok = compatibility.iter().all(|r| r.pass);
        let (class, failing_check) = if projectivity_ok && compatibility_ok {
            (ChainClass::MarkovState, None)
        } else if stabilization_ok && projectivity_ok && !compatibility_ok {
            (ChainClass::MarkovChain, None)
        } else {
            let name = if !stabilization_ok {
                "stabilization".to_string()
            } else {
                projectivity
                    .iter()
                    .find(|r| !r.pass)
                    .map(|r| format!("projectivity at volume {}", r.volume))
                    .unwrap_or_else(|| "compatibility".to_string())
            };
            (ChainClass::Indeterminate, Some(name))
        };
        Ok(ClassificationReport {
            class,
            stabilization_ok,
            stabilization_max,
            projectivity,
            compatibility,
            failing_check,
        })
    }
}

// --- query and report types ----------------------------------------------------

/// Site-local observables for sites 0..=n plus the number of extra bonds to
/// fold before inserting the boundary element.
#[derive(Clone, Debug)]
pub struct CorrelationQuery {
    pub observables: Vec<CMatrix>,
    pub horizon_extension: usize,
}

#[derive(Clone, Debug)]
pub struct StabilizationReport {
    pub values: Vec<C64>,
    /// diffs[k] = |values[k+1] - values[k]|.
    pub diffs: Vec<f64>,
    /// Largest difference from the second step on.
    pub max_tail_diff: f64,
    pub stable: bool,
}

/// Reconstructed state of a prefix volume, with the consistency residuals of
/// the reconstruction.
#[derive(Clone, Debug)]
pub struct FiniteVolumeState {
    pub first: usize,
    pub last: usize,
    pub rho: CMatrix,
    pub trace_residual: f64,
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
    pub agreement_residual: f64,
}

#[derive(Clone, Debug)]
pub struct ProjectivityReport {
    pub volume: usize,
    pub pass: bool,
    pub max_residual: f64,
    pub offending_index: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct CompatibilityWitness {
    pub past_index: usize,
    pub site_index: usize,
    pub next_index: usize,
    pub lhs: C64,
    pub rhs: C64,
}

#[derive(Clone, Debug)]
pub struct CompatibilityReport {
    pub bond: usize,
    pub pass: bool,
    pub max_residual: f64,
    pub witness: Option<CompatibilityWitness>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainClass {
    /// Projectivity and compatibility hold at every checked volume.
    MarkovState,
    /// Values stabilize but adjacent kernels are incompatible.
    MarkovChain,
    Indeterminate,
}

#[derive(Clone, Debug)]
pub struct ClassificationReport {
    pub class: ChainClass,
    pub stabilization_ok: bool,
    pub stabilization_max: f64,
    pub projectivity: Vec<ProjectivityReport>,
    pub compatibility: Vec<CompatibilityReport>,
    pub failing_check: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{AlgebraKind, LatticeSpec};
    use crate::linalg::kron;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn tensor_chain(dims: &[usize]) -> LocalStructure {
        LocalStructure::build(
            LatticeSpec {
                kind: AlgebraKind::Tensor,
                site_dims: dims.to_vec(),
            },
            &tol(),
        )
        .unwrap()
    }

    fn fermi_chain(modes: &[usize]) -> LocalStructure {
        LocalStructure::build(
            LatticeSpec {
                kind: AlgebraKind::Fermi,
                site_dims: modes.to_vec(),
            },
            &tol(),
        )
        .unwrap()
    }

    fn product_kernels(
        structure: &LocalStructure,
        psi: &CMatrix,
    ) -> Vec<TransitionExpectation> {
        (0..structure.sites() - 1)
            .map(|n| TransitionExpectation::product_state(structure, n, psi, &tol()).unwrap())
            .collect()
    }

    fn diag_density(p: &[f64]) -> CMatrix {
        let mut m = CMatrix::zeros(p.len(), p.len());
        for (i, &x) in p.iter().enumerate() {
            m[(i, i)] = C64::new(x, 0.0);
        }
        m
    }

    #[test]
    fn trivial_boundary_is_identity_for_unital_kernels() {
        let structure = tensor_chain(&[2, 2, 2, 2]);
        let psi = diag_density(&[0.7, 0.3]);
        let kernels = product_kernels(&structure, &psi);
        let b = BoundarySequence::trivial(&structure, &kernels, &tol()).unwrap();
        for n in 0..4 {
            assert!(hs_norm(&(b.element(n) - identity(2))) < 1e-12);
        }
        assert!(b.is_martingale(&tol()));
        assert!(b.martingale_residuals().iter().all(|r| *r < 1e-12));
        assert!(b.factor_residuals().iter().all(|r| *r < 1e-10));
        assert_eq!(b.provenance(), BoundaryProvenance::TrivialIdentity);
    }

    #[test]
    fn scaled_kernel_boundary_reports_martingale_failure() {
        let structure = tensor_chain(&[2, 2, 2, 2]);
        let base =
            TransitionExpectation::product_state(&structure, 0, &diag_density(&[0.5, 0.5]), &tol())
                .unwrap();
        let scaled = base.scaled(&structure, 2.0, &tol()).unwrap();
        let kernels: Vec<_> = (0..3)
            .map(|n| scaled.replicate(&structure, n, &tol()).unwrap())
            .collect();
        let b = BoundarySequence::trivial(&structure, &kernels, &tol()).unwrap();
        // b_n = E(1) = 2, and E(1 tensor 2) = 4 misses it by |2| * sqrt(2).
        assert!(hs_norm(&(b.element(0) - identity(2) * C64::new(2.0, 0.0))) < 1e-12);
        assert!(!b.is_martingale(&tol()));
        assert!((b.martingale_residuals()[0] - 2.0 * 2.0_f64.sqrt()).abs() < 1e-9);
        // The last bond compares E(1 tensor 1) = 2 against b = 2: it holds.
        assert!(b.martingale_residuals()[2] < 1e-12);
    }

    #[test]
    fn user_boundary_rejects_indefinite_elements() {
        let structure = tensor_chain(&[2, 2, 2]);
        let kernels = product_kernels(&structure, &diag_density(&[0.5, 0.5]));
        let mut bad = identity(2);
        bad[(1, 1)] = C64::new(-1.0, 0.0);
        let err = BoundarySequence::user_supplied(
            &structure,
            &kernels,
            vec![identity(2), bad, identity(2)],
            &tol(),
        )
        .unwrap_err();
        assert!(matches!(err, QmError::NotPsd { .. }));
    }

    #[test]
    fn fermi_boundary_must_be_even_past_site_zero() {
        let structure = fermi_chain(&[1, 1, 1]);
        let kernels: Vec<_> = (0..2)
            .map(|n| {
                let mut rng = random::rng(11 + n as u64);
                TransitionExpectation::random_even(&structure, n, &mut rng, 3, &tol()).unwrap()
            })
            .collect();
        let odd = structure.sub(1, 1).unwrap().mode_annihilator(0).unwrap();
        let spread = &odd + odd.adjoint() + identity(2) * C64::new(2.0, 0.0);
        let err = BoundarySequence::user_supplied(
            &structure,
            &kernels,
            vec![identity(2), spread, identity(2)],
            &tol(),
        )
        .unwrap_err();
        assert!(matches!(err, QmError::OutsideSpan { .. }));
    }

    #[test]
    fn solved_boundary_recovers_identity_for_unital_kernel() {
        let structure = tensor_chain(&[2, 2, 2, 2]);
        let mut rng = random::rng(5);
        let kernel =
            TransitionExpectation::random_unital(&structure, 0, &mut rng, 3, &tol()).unwrap();
        let kernels: Vec<_> = (0..3)
            .map(|n| kernel.replicate(&structure, n, &tol()).unwrap())
            .collect();
        let b = BoundarySequence::solve_homogeneous(&structure, &kernels, 0, &tol()).unwrap();
        for n in 0..4 {
            assert!(hs_norm(&(b.element(n) - identity(2))) < 1e-12);
        }
        assert!(b.is_martingale(&tol()));
        assert_eq!(b.provenance(), BoundaryProvenance::MartingaleSolve);
    }

    /// Rank-one kernel x -> u w† x w u† scaled so that u u† is an exact fixed
    /// point of the trailing-site map; its unit image is far from the
    /// identity, so the solve has real work to do.
    fn perron_kernel(structure: &LocalStructure, n: usize, seed: u64) -> TransitionExpectation {
        let mut rng = random::rng(seed);
        let u = random::unit_vector(&mut rng, 2);
        let mut w = random::unit_vector(&mut rng, 4);
        let uu = &u * u.adjoint();
        let gram = (w.adjoint() * kron(&identity(2), &uu) * &w)[(0, 0)].re;
        w /= C64::new(gram.sqrt(), 0.0);
        let kraus = u * w.adjoint();
        TransitionExpectation::from_block_kraus(structure, n, std::slice::from_ref(&kraus), &tol())
            .unwrap()
    }

    #[test]
    fn solved_boundary_finds_perron_fixed_point() {
        let structure = tensor_chain(&[2, 2, 2, 2]);
        let kernel = perron_kernel(&structure, 0, 23);
        assert!(!kernel.is_identity_preserving());
        let kernels: Vec<_> = (0..3)
            .map(|n| kernel.replicate(&structure, n, &tol()).unwrap())
            .collect();
        let b = BoundarySequence::solve_homogeneous(&structure, &kernels, 7, &tol()).unwrap();
        assert!(b.is_martingale(&tol()));
        for r in b.martingale_residuals() {
            assert!(*r < 1e-9, "martingale residual {r}");
        }
        let min = min_eigenvalue(b.element(1), &tol()).unwrap();
        assert!(min >= -1e-10);
        // Spectral normalization puts the top eigenvalue at one.
        let eigs = hermitian_eigenvalues(b.element(1), &tol()).unwrap();
        let max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((max - 1.0).abs() < 1e-10);
    }

    #[test]
    fn contractive_kernel_has_no_boundary_fixed_point() {
        let structure = tensor_chain(&[2, 2, 2]);
        let kernel = perron_kernel(&structure, 0, 31);
        let half = kernel.scaled(&structure, 0.5, &tol()).unwrap();
        let kernels: Vec<_> = (0..2)
            .map(|n| half.replicate(&structure, n, &tol()).unwrap())
            .collect();
        let err =
            BoundarySequence::solve_homogeneous(&structure, &kernels, 0, &tol()).unwrap_err();
        match err {
            QmError::NoBoundaryFixedPoint { leading } => {
                assert!((leading - 0.5).abs() < 1e-2, "leading {leading}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn normalize_initial_rejects_degenerate_weight() {
        let rho = diag_density(&[1.0, 0.0]);
        let mut b0 = CMatrix::zeros(2, 2);
        b0[(1, 1)] = C64::new(1.0, 0.0);
        let err = normalize_initial(&rho, &b0, &tol()).unwrap_err();
        assert!(matches!(err, QmError::DegenerateInitialState { .. }));
        let ok = normalize_initial(&rho, &(b0 + identity(2)), &tol()).unwrap();
        assert!((ok.expect(&identity(2)) - C64::new(1.0, 0.0)).norm() < 1e-14);
    }

    fn product_chain(dims: &[usize], psi: &CMatrix, rho0: CMatrix) -> ChainSpec {
        let structure = tensor_chain(dims);
        let kernels = product_kernels(&structure, psi);
        ChainSpec::new(structure, kernels, rho0, None).unwrap()
    }

    #[test]
    fn product_chain_values_factorize() {
        let mut rng = random::rng(40);
        let psi = random::density(&mut rng, 2);
        let rho0 = random::density(&mut rng, 2);
        let spec = product_chain(&[2, 2, 2, 2], &psi, rho0.clone());
        for trial in 0..10 {
            let mut trng = random::rng_for(41, trial);
            let a0 = random::complex_matrix(&mut trng, 2, 2);
            let a1 = random::complex_matrix(&mut trng, 2, 2);
            let a2 = random::complex_matrix(&mut trng, 2, 2);
            let got = spec
                .evaluate(&CorrelationQuery {
                    observables: vec![a0.clone(), a1.clone(), a2.clone()],
                    horizon_extension: 0,
                })
                .unwrap();
            let want = (&rho0 * &a0).trace() * (&psi * &a1).trace() * (&psi * &a2).trace();
            assert!((got - want).norm() < 1e-11, "trial {trial}");
        }
    }

    #[test]
    fn evaluate_of_identities_is_one() {
        let mut rng = random::rng(42);
        let psi = random::density(&mut rng, 2);
        let spec = product_chain(&[2, 2, 2], &psi, random::density(&mut rng, 2));
        let v = spec
            .evaluate(&CorrelationQuery {
                observables: vec![identity(2)],
                horizon_extension: 1,
            })
            .unwrap();
        assert!((v - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_out_of_range_horizons() {
        let mut rng = random::rng(43);
        let psi = random::density(&mut rng, 2);
        let spec = product_chain(&[2, 2, 2], &psi, random::density(&mut rng, 2));
        let err = spec
            .evaluate(&CorrelationQuery {
                observables: vec![identity(2)],
                horizon_extension: 3,
            })
            .unwrap_err();
        assert!(matches!(err, QmError::HorizonExceeded { .. }));
        let err = spec
            .evaluate(&CorrelationQuery {
                observables: vec![identity(3)],
                horizon_extension: 0,
            })
            .unwrap_err();
        assert!(matches!(err, QmError::Query(_)));
    }

    /// Joint distribution of a classical Markov chain by direct summation.
    fn classical_joint(pi0: &[f64], p: &CMatrix, states: &[usize]) -> f64 {
        let mut prob = pi0[states[0]];
        for w in states.windows(2) {
            prob *= p[(w[0], w[1])].re;
        }
        prob
    }

    #[test]
    fn classical_chain_reproduces_joint_distribution() {
        let structure = tensor_chain(&[3, 3, 3, 3]);
        let mut rng = random::rng(50);
        let p = random::stochastic_matrix(&mut rng, 3);
        let pi0 = random::probability_vector(&mut rng, 3);
        let kernels: Vec<_> = (0..3)
            .map(|n| TransitionExpectation::classical(&structure, n, &p, &tol()).unwrap())
            .collect();
        let spec =
            ChainSpec::new(structure, kernels, diag_density(&pi0), None).unwrap();
        for flat in 0..81 {
            let states = [flat / 27, (flat / 9) % 3, (flat / 3) % 3, flat % 3];
            let mut observables = Vec::new();
            for &s in &states[..3] {
                let mut e = CMatrix::zeros(3, 3);
                e[(s, s)] = C64::new(1.0, 0.0);
                observables.push(e);
            }
            // Fold the last site through an extension step: the trivial
            // boundary makes phi of a three-site projector marginalize site 3.
            let got = spec
                .evaluate(&CorrelationQuery {
                    observables: observables.clone(),
                    horizon_extension: 0,
                })
                .unwrap();
            let want: f64 = (0..3)
                .map(|s3| classical_joint(&pi0, &p, &[states[0], states[1], states[2], s3]))
                .sum();
            assert!((got - C64::new(want, 0.0)).norm() < 1e-12);
            let mut e = CMatrix::zeros(3, 3);
            e[(states[3], states[3])] = C64::new(1.0, 0.0);
            observables.push(e);
            let got_full = spec
                .evaluate(&CorrelationQuery {
                    observables,
                    horizon_extension: 0,
                })
                .unwrap();
            let want_full = classical_joint(&pi0, &p, &states);
            assert!((got_full - C64::new(want_full, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn martingale_boundary_stabilizes_immediately() {
        let mut rng = random::rng(60);
        let psi = random::density(&mut rng, 2);
        let spec = product_chain(&[2, 2, 2, 2, 2], &psi, random::density(&mut rng, 2));
        let a = random::hermitian(&mut rng, 2);
        let report = spec
            .stabilization_check(
                &CorrelationQuery {
                    observables: vec![a],
                    horizon_extension: 0,
                },
                3,
                1e-10,
            )
            .unwrap();
        assert!(report.stable);
        assert!(report.diffs.iter().all(|d| *d < 1e-11));
    }

    #[test]
    fn scaled_kernel_differences_double_per_step() {
        let structure = tensor_chain(&[2, 2, 2, 2, 2]);
        let base =
            TransitionExpectation::product_state(&structure, 0, &diag_density(&[0.5, 0.5]), &tol())
                .unwrap();
        let scaled = base.scaled(&structure, 2.0, &tol()).unwrap();
        let kernels: Vec<_> = (0..4)
            .map(|n| scaled.replicate(&structure, n, &tol()).unwrap())
            .collect();
        let spec = ChainSpec::new(
            structure,
            kernels,
            diag_density(&[0.6, 0.4]),
            None,
        )
        .unwrap();
        let report = spec
            .stabilization_check(
                &CorrelationQuery {
                    observables: vec![identity(2)],
                    horizon_extension: 0,
                },
                2,
                1e-10,
            )
            .unwrap();
        assert!(!report.stable);
        // Values 2^{k+1} while the boundary stays at interior sites;
        // successive differences double.
        for (k, v) in report.values.iter().enumerate() {
            assert!((v - C64::new(2.0_f64.powi(k as i32 + 1), 0.0)).norm() < 1e-9);
        }
        assert!((report.diffs[1] / report.diffs[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn density_matrix_matches_product_state() {
        let mut rng = random::rng(70);
        let psi = random::density(&mut rng, 2);
        let rho0 = random::density(&mut rng, 2);
        let spec = product_chain(&[2, 2, 2, 2], &psi, rho0.clone());
        let state = spec.density_matrix(2).unwrap();
        let want = kron(&kron(&rho0, &psi), &psi);
        assert!(hs_norm(&(&state.rho - want)) < 1e-10);
        assert!(state.trace_residual < 1e-12);
        assert!(state.min_eigenvalue > -1e-10);
        assert!(state.agreement_residual < 1e-10);
        assert!(state.asymmetry < 1e-10);
        let single = spec.density_matrix(0).unwrap();
        assert!(hs_norm(&(&single.rho - &rho0)) < 1e-12);
    }

    #[test]
    fn density_matrix_of_classical_chain_is_the_joint_distribution() {
        let structure = tensor_chain(&[2, 2, 2]);
        let mut rng = random::rng(71);
        let p = random::stochastic_matrix(&mut rng, 2);
        let pi0 = random::probability_vector(&mut rng, 2);
        let kernels: Vec<_> = (0..2)
            .map(|n| TransitionExpectation::classical(&structure, n, &p, &tol()).unwrap())
            .collect();
        let spec = ChainSpec::new(structure, kernels, diag_density(&pi0), None).unwrap();
        let state = spec.density_matrix(1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = classical_joint(&pi0, &p, &[i, j]);
                let got = state.rho[(2 * i + j, 2 * i + j)].re;
                assert!((got - want).abs() < 1e-12);
            }
        }
        assert!(state.trace_residual < 1e-12);
    }

    #[test]
    fn product_chain_classifies_as_markov_state() {
        let mut rng = random::rng(80);
        let psi = random::density(&mut rng, 2);
        let spec = product_chain(&[2, 2, 2, 2], &psi, random::density(&mut rng, 2));
        let report = spec.classify(None, 1e-9).unwrap();
        assert_eq!(report.class, ChainClass::MarkovState);
        assert!(report.stabilization_ok);
        assert!(report.failing_check.is_none());
        for p in &report.projectivity {
            assert!(p.pass, "projectivity at {} residual {}", p.volume, p.max_residual);
        }
        for c in &report.compatibility {
            assert!(c.pass);
        }
    }

    #[test]
    fn classical_chain_classifies_as_markov_state() {
        let structure = tensor_chain(&[2, 2, 2, 2]);
        let mut rng = random::rng(81);
        let p = random::stochastic_matrix(&mut rng, 2);
        let kernels: Vec<_> = (0..3)
            .map(|n| TransitionExpectation::classical(&structure, n, &p, &tol()).unwrap())
            .collect();
        let spec = ChainSpec::new(
            structure,
            kernels,
            diag_density(&random::probability_vector(&mut rng, 2)),
            None,
        )
        .unwrap();
        let report = spec.classify(None, 1e-9).unwrap();
        assert_eq!(report.class, ChainClass::MarkovState);
    }

    #[test]
    fn generic_unital_chain_classifies_as_markov_chain() {
        let structure = tensor_chain(&[2, 2, 2, 2]);
        let mut rng = random::rng(19);
        let kernel =
            TransitionExpectation::random_unital(&structure, 0, &mut rng, 3, &tol()).unwrap();
        let spec = ChainSpec::homogeneous(
            structure,
            &kernel,
            diag_density(&[0.5, 0.5]),
            None,
        )
        .unwrap();
        let report = spec.classify(None, 1e-9).unwrap();
        assert_eq!(report.class, ChainClass::MarkovChain);
        assert!(report.stabilization_ok);
        let bad = report.compatibility.iter().find(|c| !c.pass).unwrap();
        let witness = bad.witness.as_ref().unwrap();
        assert!((witness.lhs - witness.rhs).norm() > 1e-6);
    }

    #[test]
    fn even_fermi_chain_classifies_as_markov_chain() {
        let structure = fermi_chain(&[1, 1, 1, 1]);
        let mut rng = random::rng(3);
        let kernel =
            TransitionExpectation::random_even(&structure, 0, &mut rng, 3, &tol()).unwrap();
        let spec = ChainSpec::homogeneous(
            structure,
            &kernel,
            diag_density(&[0.5, 0.5]),
            None,
        )
        .unwrap();
        let report = spec.classify(None, 1e-9).unwrap();
        assert_eq!(report.class, ChainClass::MarkovChain);
        let bad = report
            .compatibility
            .iter()
            .find(|c| !c.pass)
            .expect("a generic even kernel is not compatible with its neighbor");
        assert!(bad.max_residual > 1e-6);
    }

    #[test]
    fn broken_boundary_classifies_as_indeterminate() {
        let mut rng = random::rng(90);
        let psi = random::density(&mut rng, 2);
        let structure = tensor_chain(&[2, 2, 2, 2]);
        let kernels = product_kernels(&structure, &psi);
        // A positive but non-martingale boundary at one interior site.
        let skew = diag_density(&[1.0, 3.0]);
        let b = BoundarySequence::user_supplied(
            &structure,
            &kernels,
            vec![identity(2), identity(2), skew, identity(2)],
            &tol(),
        )
        .unwrap();
        assert!(!b.is_martingale(&tol()));
        let spec =
            ChainSpec::new(structure, kernels, random::density(&mut rng, 2), Some(b)).unwrap();
        let report = spec.classify(None, 1e-9).unwrap();
        assert_eq!(report.class, ChainClass::Indeterminate);
        assert!(report.failing_check.is_some());
    }

    #[test]
    fn heterogeneous_chain_rejects_homogeneous_solve() {
        let structure = tensor_chain(&[2, 2, 2]);
        let mut rng = random::rng(91);
        let k0 =
            TransitionExpectation::random_unital(&structure, 0, &mut rng, 2, &tol()).unwrap();
        let k1 =
            TransitionExpectation::random_unital(&structure, 1, &mut rng, 2, &tol()).unwrap();
        let err =
            BoundarySequence::solve_homogeneous(&structure, &[k0, k1], 0, &tol()).unwrap_err();
        assert!(matches!(err, QmError::ChainSpec(_)));
    }

    #[test]
    fn chain_spec_rejects_mislabeled_kernels() {
        let structure = tensor_chain(&[2, 2, 2]);
        let psi = diag_density(&[0.5, 0.5]);
        let k0 = TransitionExpectation::product_state(&structure, 0, &psi, &tol()).unwrap();
        let err = ChainSpec::new(
            structure.clone(),
            vec![k0.clone(), k0],
            diag_density(&[1.0, 0.0]),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, QmError::ChainSpec(_)));
    }

    #[test]
    fn fermi_product_style_chain_evaluates_consistently() {
        // Even kernels on a fermion lattice: identity observables give one,
        // and single-site even observables match the reconstructed density.
        let structure = fermi_chain(&[1, 1, 1]);
        let mut rng = random::rng(8);
        let kernel =
            TransitionExpectation::random_even(&structure, 0, &mut rng, 2, &tol()).unwrap();
        let spec = ChainSpec::homogeneous(
            structure,
            &kernel,
            diag_density(&[0.3, 0.7]),
            None,
        )
        .unwrap();
        let one = spec
            .evaluate(&CorrelationQuery {
                observables: vec![identity(2)],
                horizon_extension: 1,
            })
            .unwrap();
        assert!((one - C64::new(1.0, 0.0)).norm() < 1e-11);
        let state = spec.density_matrix(1).unwrap();
        assert!(state.trace_residual < 1e-10);
        assert!(state.min_eigenvalue > -1e-9);
        // Cross-check one two-point value against the reconstruction.
        let number_op = {
            let a = spec.structure().sub(1, 1).unwrap().mode_annihilator(0).unwrap();
            a.adjoint() * &a
        };
        let via_state = (&state.rho
            * spec.structure().prefix(1).unwrap().embed_site(1, &number_op).unwrap())
        .trace();
        let direct = spec
            .evaluate(&CorrelationQuery {
                observables: vec![identity(2), number_op],
                horizon_extension: 0,
            })
            .unwrap();
        assert!((via_state - direct).norm() < 1e-10);
    }

    #[test]
    fn projectivity_detects_boundary_defects() {
        let mut rng = random::rng(95);
        let psi = random::density(&mut rng, 2);
        let structure = tensor_chain(&[2, 2, 2, 2]);
        let kernels = product_kernels(&structure, &psi);
        let skew = diag_density(&[1.0, 3.0]);
        let b = BoundarySequence::user_supplied(
            &structure,
            &kernels,
            vec![identity(2), identity(2), skew, identity(2)],
            &tol(),
        )
        .unwrap();
        let spec =
            ChainSpec::new(structure, kernels, random::density(&mut rng, 2), Some(b)).unwrap();
        // Volume 0 compares boundaries at sites 1 and 2; the defect sits at 2.
        let report = spec.check_projectivity(0, 1e-9).unwrap();
        assert!(!report.pass);
        assert!(report.offending_index.is_some());
    }
}
