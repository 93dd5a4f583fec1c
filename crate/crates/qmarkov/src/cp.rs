//! Linear maps between matrix algebras, stored by their action on a span
//! basis, with the verification machinery the rest of the crate rests on:
//! Choi certificates of complete positivity, restricted positivity sampling,
//! conditional-expectation axioms, the module algebra of a map, conditional
//! amplitudes, and Schur products of operator-valued block matrices.
//!
//! A map is represented by the images of its domain basis elements. Nothing
//! is assumed about those images: identity preservation and *-map behaviour
//! are measured at construction, complete positivity is certified on demand.

use std::sync::Arc;

use crate::error::{QmError, Result};
use crate::linalg::{
    check_finite, cr, hermitian_eigen, identity, kron, null_space, orthonormal_range,
    subspace_intersection, subspace_residual, unvec, vec_of, zeros, CMatrix, CVector, SpanBasis,
    ToleranceConfig,
};
use crate::random;

/// Properties measured on a map. `even` stays `None` outside a graded
/// context; `verified_cp` is set only after a successful Choi certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MapFlags {
    pub identity_preserving: bool,
    pub star_map: bool,
    pub even: Option<bool>,
    pub verified_cp: bool,
}

/// Sampling parameters for randomized verification routines.
#[derive(Debug, Clone, Copy)]
pub struct SampleConfig {
    pub seed: u64,
    pub trials: usize,
    /// Largest number of summands in a sampled positivity form.
    pub max_terms: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            max_terms: 4,
        }
    }
}

impl SampleConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// A linear map given by images of the domain basis elements.
#[derive(Debug, Clone)]
pub struct CpMap {
    label: String,
    domain: Arc<SpanBasis>,
    codomain: Arc<SpanBasis>,
    images: Vec<CMatrix>,
    /// `codomain_dim² x N`, column `k` = `vec(images[k])`.
    images_flat: CMatrix,
    flags: MapFlags,
}

impl CpMap {
    /// Build a map from basis images, verifying that every image lies in the
    /// codomain span and measuring identity preservation and the *-map
    /// property.
    pub fn from_images(
        label: impl Into<String>,
        domain: Arc<SpanBasis>,
        codomain: Arc<SpanBasis>,
        images: Vec<CMatrix>,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        let label = label.into();
        if images.len() != domain.len() {
            return Err(QmError::DimensionMismatch {
                context: "CpMap images per domain element",
                expected: domain.len(),
                got: images.len(),
            });
        }
        let cdim = codomain.ambient_dim();
        for img in &images {
            check_finite(img)?;
            if img.nrows() != cdim || img.ncols() != cdim {
                return Err(QmError::DimensionMismatch {
                    context: "CpMap image dimension",
                    expected: cdim,
                    got: img.nrows(),
                });
            }
            if !codomain.contains(img, tol)? {
                return Err(QmError::OutsideSpan {
                    label: format!("{}: image outside codomain", label),
                    residual: codomain.distance(img)?,
                    tol: tol.eq_scaled(img.norm()),
                });
            }
        }
        let mut images_flat = zeros(cdim * cdim, images.len());
        for (k, img) in images.iter().enumerate() {
            images_flat.set_column(k, &vec_of(img));
        }
        let mut map = Self {
            label,
            domain,
            codomain,
            images,
            images_flat,
            flags: MapFlags::default(),
        };
        map.flags.identity_preserving = map.measure_identity_preserving(tol);
        map.flags.star_map = map.measure_star_map(tol);
        Ok(map)
    }

    /// Build from a Kraus family: each domain basis element `e` maps to
    /// `Σ_i K_i e K_i†`. Operators are `codomain_dim x domain_dim`.
    pub fn from_kraus(
        label: impl Into<String>,
        domain: Arc<SpanBasis>,
        codomain: Arc<SpanBasis>,
        operators: &[CMatrix],
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        if operators.is_empty() {
            return Err(QmError::EmptyInput("CpMap::from_kraus operators"));
        }
        let (to, from) = (codomain.ambient_dim(), domain.ambient_dim());
        for k in operators {
            check_finite(k)?;
            if k.nrows() != to || k.ncols() != from {
                return Err(QmError::DimensionMismatch {
                    context: "Kraus operator shape",
                    expected: to,
                    got: k.nrows(),
                });
            }
        }
        let images = domain
            .elements()
            .iter()
            .map(|e| {
                operators
                    .iter()
                    .fold(zeros(to, to), |acc, k| acc + k * e * k.adjoint())
            })
            .collect();
        Self::from_images(label, domain, codomain, images, tol)
    }

    /// Build by applying `f` to every domain basis element.
    pub fn from_action(
        label: impl Into<String>,
        domain: Arc<SpanBasis>,
        codomain: Arc<SpanBasis>,
        tol: &ToleranceConfig,
        mut f: impl FnMut(&CMatrix) -> CMatrix,
    ) -> Result<Self> {
        let images = domain.elements().iter().map(&mut f).collect();
        Self::from_images(label, domain, codomain, images, tol)
    }

    /// The identity map on a span.
    pub fn identity_on(basis: Arc<SpanBasis>, tol: &ToleranceConfig) -> Result<Self> {
        let images = basis.elements().to_vec();
        Self::from_images("identity", Arc::clone(&basis), basis, images, tol)
    }

    fn measure_identity_preserving(&self, tol: &ToleranceConfig) -> bool {
        let one = identity(self.domain.ambient_dim());
        if !self.domain.contains(&one, tol).unwrap_or(false) {
            return false;
        }
        let img = match self.apply(&one, tol) {
            Ok(m) => m,
            Err(_) => return false,
        };
        (img - identity(self.codomain.ambient_dim())).norm() <= tol.eq_scaled(1.0)
    }

    fn measure_star_map(&self, tol: &ToleranceConfig) -> bool {
        for (k, e) in self.domain.elements().iter().enumerate() {
            let adj = e.adjoint();
            let lhs = match self.apply(&adj, tol) {
                Ok(m) => m,
                Err(_) => return false,
            };
            let rhs = self.images[k].adjoint();
            if (lhs - rhs).norm() > tol.eq_scaled(self.images[k].norm()) {
                return false;
            }
        }
        true
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn domain(&self) -> &SpanBasis {
        &self.domain
    }

    pub fn domain_arc(&self) -> Arc<SpanBasis> {
        Arc::clone(&self.domain)
    }

    pub fn codomain(&self) -> &SpanBasis {
        &self.codomain
    }

    pub fn codomain_arc(&self) -> Arc<SpanBasis> {
        Arc::clone(&self.codomain)
    }

    pub fn images(&self) -> &[CMatrix] {
        &self.images
    }

    pub fn image(&self, k: usize) -> &CMatrix {
        &self.images[k]
    }

    pub fn flags(&self) -> MapFlags {
        self.flags
    }

    /// Record a grading verdict measured by the caller.
    pub fn with_even(mut self, even: bool) -> Self {
        self.flags.even = Some(even);
        self
    }

    /// Tag the map as Choi-certified. Callers use this after a successful
    /// [`CpMap::completely_positive`] check.
    pub fn with_verified_cp(mut self) -> Self {
        self.flags.verified_cp = true;
        self
    }

    /// Linear extension of the basis action. Fails when `x` lies outside the
    /// domain span.
    pub fn apply(&self, x: &CMatrix, tol: &ToleranceConfig) -> Result<CMatrix> {
        let coeffs = self.domain.expand(x, tol)?;
        let d = self.codomain.ambient_dim();
        Ok(unvec(&(&self.images_flat * coeffs), d, d))
    }

    /// The map as a `codomain_dim² x domain_dim²` operator on vectorized
    /// matrices. Exact on the domain span; on its orthogonal complement it
    /// acts through least-squares coefficients.
    pub fn superoperator(&self) -> CMatrix {
        &self.images_flat * self.domain.coefficient_matrix()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &CpMap, tol: &ToleranceConfig) -> Result<CpMap> {
        let images = inner
            .images
            .iter()
            .map(|img| self.apply(img, tol))
            .collect::<Result<Vec<_>>>()?;
        CpMap::from_images(
            format!("{}∘{}", self.label, inner.label),
            inner.domain_arc(),
            self.codomain_arc(),
            images,
            tol,
        )
    }

    /// Choi certificate over the standard matrix units of the domain:
    /// `C = Σ_{kl} P(e_kl) ⊗ e_kl`. Requires the domain to span the full
    /// matrix algebra.
    pub fn choi(&self, tol: &ToleranceConfig) -> Result<ChoiMatrix> {
        if !self.domain.spans_full_algebra() {
            return Err(QmError::NoMatrixUnits {
                span_dim: self.domain.len(),
                ambient_dim: self.domain.ambient_dim(),
            });
        }
        let d = self.domain.ambient_dim();
        let dc = self.codomain.ambient_dim();
        let mut c = zeros(dc * d, dc * d);
        let mut unit = zeros(d, d);
        for k in 0..d {
            for l in 0..d {
                unit[(k, l)] = crate::linalg::ONE;
                let img = self.apply(&unit, tol)?;
                c += kron(&img, &unit);
                unit[(k, l)] = crate::linalg::ZERO;
            }
        }
        Ok(ChoiMatrix {
            matrix: c,
            domain_dim: d,
            codomain_dim: dc,
        })
    }

    /// Full complete-positivity certificate through the Choi spectrum.
    pub fn completely_positive(&self, tol: &ToleranceConfig) -> Result<CpVerdict> {
        let choi = self.choi(tol)?;
        Ok(choi.verdict(tol))
    }

    /// Sampled positivity of `Σ_{jk} b_j† P(a_j† a_k) b_k` with the `b`
    /// coefficients drawn from `restrict_to`. This is the restricted notion
    /// of complete positivity relative to a distinguished subalgebra; with
    /// `restrict_to` spanning the whole codomain algebra it is a randomized
    /// stand-in for the full certificate.
    pub fn completely_positive_restricted(
        &self,
        restrict_to: &SpanBasis,
        cfg: &SampleConfig,
        tol: &ToleranceConfig,
    ) -> Result<CpVerdict> {
        let dc = self.codomain.ambient_dim();
        if restrict_to.ambient_dim() != dc {
            return Err(QmError::DimensionMismatch {
                context: "restricted CP sample algebra",
                expected: dc,
                got: restrict_to.ambient_dim(),
            });
        }
        let mut worst = f64::INFINITY;
        for trial in 0..cfg.trials {
            let mut rng = random::rng_for(cfg.seed, trial as u64);
            let terms = 1 + trial % cfg.max_terms.max(1);
            let a: Vec<CMatrix> = (0..terms)
                .map(|_| random::span_element(&mut rng, &self.domain))
                .collect();
            let b: Vec<CMatrix> = (0..terms)
                .map(|_| random::span_element(&mut rng, restrict_to))
                .collect();
            let mut form = zeros(dc, dc);
            for (j, aj) in a.iter().enumerate() {
                for (k, ak) in a.iter().enumerate() {
                    let img = self.apply(&(aj.adjoint() * ak), tol)?;
                    form += b[j].adjoint() * img * &b[k];
                }
            }
            // Scale-normalize so the eigenvalue threshold is meaningful for
            // random inputs of unbounded norm.
            let scale = form.norm().max(1.0);
            let asym = (&form - form.adjoint()).norm() / scale;
            if asym > tol.eq_scaled(1.0) {
                return Ok(CpVerdict {
                    positive: false,
                    min_eigenvalue: -asym,
                    witness: Some(CpWitness::SampledTrial {
                        trial,
                        terms,
                        min_eigenvalue: -asym,
                    }),
                });
            }
            let herm = (&form + form.adjoint()).scale(0.5 / scale);
            let min = hermitian_eigen(&herm)
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |m, &v| m.min(v));
            worst = worst.min(min);
            if min < -tol.eig_tol {
                return Ok(CpVerdict {
                    positive: false,
                    min_eigenvalue: min,
                    witness: Some(CpWitness::SampledTrial {
                        trial,
                        terms,
                        min_eigenvalue: min,
                    }),
                });
            }
        }
        Ok(CpVerdict {
            positive: true,
            min_eigenvalue: if worst.is_finite() { worst } else { 0.0 },
            witness: None,
        })
    }

    /// Kraus operators from the Choi spectrum: a diagnostic view, not the
    /// stored representation. Fails when the map is not completely positive.
    pub fn kraus_decomposition(&self, tol: &ToleranceConfig) -> Result<Vec<CMatrix>> {
        let choi = self.choi(tol)?;
        let asym = (&choi.matrix - choi.matrix.adjoint()).norm();
        if asym > tol.eq_scaled(choi.matrix.norm()) {
            return Err(QmError::NotHermitian {
                asymmetry: asym,
                tol: tol.eq_scaled(choi.matrix.norm()),
            });
        }
        let herm = (&choi.matrix + choi.matrix.adjoint()).scale(0.5);
        let eig = hermitian_eigen(&herm);
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let mut ops = Vec::new();
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda < -tol.eig_tol * scale.max(1.0) {
                return Err(QmError::NotCompletelyPositive { min_eig: lambda });
            }
            if lambda <= tol.eig_tol * scale.max(1.0) {
                continue;
            }
            let v = eig.eigenvectors.column(i);
            let root = cr(lambda.sqrt());
            let mut k = zeros(choi.codomain_dim, choi.domain_dim);
            for r in 0..choi.codomain_dim {
                for c in 0..choi.domain_dim {
                    k[(r, c)] = root * v[r * choi.domain_dim + c];
                }
            }
            ops.push(k);
        }
        Ok(ops)
    }

    /// Axiom report for a conditional expectation: positivity, the module
    /// property over the range, *-map behaviour, unitality, the Schwarz
    /// inequality, and idempotence onto the range. Expansion failures along
    /// the way (products leaving the domain span) are folded into the
    /// corresponding axiom's residual rather than raised.
    pub fn verify_umegaki(
        &self,
        cfg: &SampleConfig,
        tol: &ToleranceConfig,
    ) -> Result<UmegakiReport> {
        let d = self.domain.ambient_dim();
        if self.codomain.ambient_dim() != d {
            return Err(QmError::DimensionMismatch {
                context: "conditional expectation codomain ambient",
                expected: d,
                got: self.codomain.ambient_dim(),
            });
        }

        // Positivity on Hermitian squares of basis elements and of random
        // span elements.
        let mut positivity = 0.0f64;
        let check_positive = |map: &Self, x: &CMatrix| {
            let a = x.adjoint() * x;
            let scale = a.norm().max(1.0);
            match map.apply(&a, tol) {
                Ok(img) => {
                    let asym = (&img - img.adjoint()).norm() / scale;
                    let herm = (&img + img.adjoint()).scale(0.5 / scale);
                    let min = hermitian_eigen(&herm)
                        .eigenvalues
                        .iter()
                        .fold(f64::INFINITY, |m, &v| m.min(v));
                    asym.max((-min).max(0.0))
                }
                Err(QmError::OutsideSpan { residual, .. }) => residual / scale,
                Err(_) => f64::INFINITY,
            }
        };
        for e in self.domain.elements() {
            positivity = positivity.max(check_positive(self, e));
        }
        for trial in 0..cfg.trials {
            let mut rng = random::rng_for(cfg.seed, trial as u64);
            let x = random::span_element(&mut rng, &self.domain);
            positivity = positivity.max(check_positive(self, &x));
        }

        // Orthonormal basis of the range, for the module property and CE5.
        let range = orthonormal_range(&self.images_flat, tol);
        let mut module_property = 0.0f64;
        if let Some(q) = &range {
            for i in 0..q.ncols() {
                let b = unvec(&q.column(i).into_owned(), d, d);
                for (k, a) in self.domain.elements().iter().enumerate() {
                    let ba = &b * a;
                    let scale = ba.norm().max(1.0);
                    let r = match self.apply(&ba, tol) {
                        Ok(img) => (img - &b * &self.images[k]).norm() / scale,
                        Err(QmError::OutsideSpan { residual, .. }) => residual / scale,
                        Err(e) => return Err(e),
                    };
                    module_property = module_property.max(r);
                }
            }
        }

        let mut star = 0.0f64;
        for (k, e) in self.domain.elements().iter().enumerate() {
            let scale = e.norm().max(1.0);
            let r = match self.apply(&e.adjoint(), tol) {
                Ok(img) => (img - self.images[k].adjoint()).norm() / scale,
                Err(QmError::OutsideSpan { residual, .. }) => residual / scale,
                Err(e) => return Err(e),
            };
            star = star.max(r);
        }

        let one = identity(d);
        let unital = match self.apply(&one, tol) {
            Ok(img) => (img - &one).norm(),
            Err(QmError::OutsideSpan { residual, .. }) => residual,
            Err(e) => return Err(e),
        };

        // Schwarz inequality E(a)E(a)† ≤ E(aa†) on basis elements and random
        // span samples.
        let mut schwarz = 0.0f64;
        let check_schwarz = |map: &Self, a: &CMatrix| -> Result<f64> {
            let aa = a * a.adjoint();
            let scale = aa.norm().max(1.0);
            let lhs = match map.apply(a, tol) {
                Ok(img) => img,
                Err(QmError::OutsideSpan { residual, .. }) => return Ok(residual / scale),
                Err(e) => return Err(e),
            };
            let rhs = match map.apply(&aa, tol) {
                Ok(img) => img,
                Err(QmError::OutsideSpan { residual, .. }) => return Ok(residual / scale),
                Err(e) => return Err(e),
            };
            let diff = (rhs - &lhs * lhs.adjoint()).unscale(scale);
            let asym = (&diff - diff.adjoint()).norm();
            let herm = (&diff + diff.adjoint()).scale(0.5);
            let min = hermitian_eigen(&herm)
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |m, &v| m.min(v));
            Ok(asym.max((-min).max(0.0)))
        };
        for e in self.domain.elements() {
            schwarz = schwarz.max(check_schwarz(self, e)?);
        }
        for trial in 0..cfg.trials {
            let mut rng = random::rng_for(cfg.seed.wrapping_add(1), trial as u64);
            let x = random::span_element(&mut rng, &self.domain);
            schwarz = schwarz.max(check_schwarz(self, &x)?);
        }

        let mut idempotent = 0.0f64;
        for img in &self.images {
            let scale = img.norm().max(1.0);
            let r = match self.apply(img, tol) {
                Ok(twice) => (twice - img).norm() / scale,
                Err(QmError::OutsideSpan { residual, .. }) => residual / scale,
                Err(e) => return Err(e),
            };
            idempotent = idempotent.max(r);
        }

        let eq = tol.eq_scaled(1.0);
        let eig = tol.eig_tol;
        Ok(UmegakiReport {
            positivity: AxiomCheck::at(positivity, eig),
            module_property: AxiomCheck::at(module_property, eq),
            star_map: AxiomCheck::at(star, eq),
            unital: AxiomCheck::at(unital, eq),
            schwarz: AxiomCheck::at(schwarz, eig),
            idempotent: AxiomCheck::at(idempotent, eq),
        })
    }

    /// The module algebra of the map: all `c` with `P(ca) = cP(a)` and
    /// `P(c*a) = c*P(a)` for every `a`, computed as a null-space
    /// intersection, together with closure and fixed-point diagnostics. The
    /// left-sided and right-sided versions are computed independently and
    /// compared; the returned basis spans the left one.
    pub fn ce_algebra(&self, tol: &ToleranceConfig) -> Result<CeAlgebraReport> {
        let d = self.domain.ambient_dim();
        if self.codomain.ambient_dim() != d {
            return Err(QmError::DimensionMismatch {
                context: "ce_algebra codomain ambient",
                expected: d,
                got: self.codomain.ambient_dim(),
            });
        }
        if !self.domain.spans_full_algebra() {
            return Err(QmError::NoMatrixUnits {
                span_dim: self.domain.len(),
                ambient_dim: d,
            });
        }
        let s = self.superoperator();
        let id = identity(d);

        // Iteratively narrow a candidate subspace by each basis constraint.
        let narrow = |mut cols: CMatrix, ops: &mut dyn Iterator<Item = CMatrix>| -> CMatrix {
            for op in ops {
                if cols.ncols() == 0 {
                    break;
                }
                let constrained = &op * &cols;
                let null = null_space(&constrained, tol);
                if null.is_empty() {
                    return zeros(d * d, 0);
                }
                let mut w = zeros(cols.ncols(), null.len());
                for (j, v) in null.iter().enumerate() {
                    w.set_column(j, v);
                }
                cols = &cols * &w;
            }
            cols
        };

        let left_ops = self.domain.elements().iter().enumerate().map(|(k, a)| {
            let scale = a.norm().max(1.0);
            ((&s * kron(&a.transpose(), &id)) - kron(&self.images[k].transpose(), &id))
                .unscale(scale)
        });
        let right_ops = self.domain.elements().iter().enumerate().map(|(k, a)| {
            let scale = a.norm().max(1.0);
            ((&s * kron(&id, a)) - kron(&id, &self.images[k])).unscale(scale)
        });

        let v = narrow(identity(d * d), &mut { left_ops });
        let w = narrow(identity(d * d), &mut { right_ops });

        // Adjoin the starred condition: c qualifies when c† lies in the
        // one-sided space as well.
        let star_image = |cols: &CMatrix| -> CMatrix {
            let mut out = zeros(d * d, cols.ncols());
            for j in 0..cols.ncols() {
                let m = unvec(&cols.column(j).into_owned(), d, d);
                out.set_column(j, &vec_of(&m.adjoint()));
            }
            out
        };
        let left = subspace_intersection(&v, &star_image(&v), tol);
        let right = subspace_intersection(&w, &star_image(&w), tol);

        // Scalars always qualify, so the result is never empty.
        let elements: Vec<CMatrix> = left.iter().map(|v| unvec(v, d, d)).collect();
        let basis = SpanBasis::from_orthonormal(format!("module-algebra({})", self.label), elements)?;

        let mut lr = if left.len() == right.len() {
            0.0f64
        } else {
            f64::INFINITY
        };
        if lr == 0.0 {
            let mut qr = zeros(d * d, right.len());
            for (j, v) in right.iter().enumerate() {
                qr.set_column(j, v);
            }
            for v in &left {
                lr = lr.max(subspace_residual(&qr, v));
            }
            let ql = basis.orthonormal_columns(tol);
            for v in &right {
                lr = lr.max(subspace_residual(&ql, v));
            }
        }

        let mut adjoint_closure = 0.0f64;
        let mut product_closure = 0.0f64;
        for c in basis.elements() {
            adjoint_closure = adjoint_closure.max(basis.distance(&c.adjoint())?);
            for c2 in basis.elements() {
                let p = c * c2;
                product_closure = product_closure.max(basis.distance(&p)? / p.norm().max(1.0));
            }
        }

        let fixed_point = if self.flags.identity_preserving {
            let mut worst = 0.0f64;
            for c in basis.elements() {
                worst = worst.max((self.apply(c, tol)? - c).norm());
            }
            Some(worst)
        } else {
            None
        };

        Ok(CeAlgebraReport {
            basis,
            left_right_residual: lr,
            adjoint_closure_residual: adjoint_closure,
            product_closure_residual: product_closure,
            fixed_point_residual: fixed_point,
        })
    }
}

/// Choi certificate: `Σ_{kl} P(e_kl) ⊗ e_kl` over the domain's standard
/// matrix units.
#[derive(Debug, Clone)]
pub struct ChoiMatrix {
    pub matrix: CMatrix,
    pub domain_dim: usize,
    pub codomain_dim: usize,
}

impl ChoiMatrix {
    /// Positivity verdict from the spectrum. Non-Hermitian certificates fail
    /// with the asymmetry as witness.
    pub fn verdict(&self, tol: &ToleranceConfig) -> CpVerdict {
        let asym = (&self.matrix - self.matrix.adjoint()).norm();
        if asym > tol.eq_scaled(self.matrix.norm()) {
            return CpVerdict {
                positive: false,
                min_eigenvalue: -asym,
                witness: Some(CpWitness::NonHermitianChoi { asymmetry: asym }),
            };
        }
        let herm = (&self.matrix + self.matrix.adjoint()).scale(0.5);
        let eig = hermitian_eigen(&herm);
        let mut min = f64::INFINITY;
        let mut arg = 0;
        for (i, &v) in eig.eigenvalues.iter().enumerate() {
            if v < min {
                min = v;
                arg = i;
            }
        }
        let positive = min >= -tol.eig_tol;
        let witness = if positive {
            None
        } else {
            Some(CpWitness::ChoiEigenvector {
                eigenvalue: min,
                vector: eig.eigenvectors.column(arg).into_owned(),
            })
        };
        CpVerdict {
            positive,
            min_eigenvalue: min,
            witness,
        }
    }
}

/// Outcome of a positivity certificate.
#[derive(Debug, Clone)]
pub struct CpVerdict {
    pub positive: bool,
    /// Smallest eigenvalue seen (Choi spectrum, or worst sampled form).
    pub min_eigenvalue: f64,
    pub witness: Option<CpWitness>,
}

#[derive(Debug, Clone)]
pub enum CpWitness {
    ChoiEigenvector { eigenvalue: f64, vector: CVector },
    SampledTrial { trial: usize, terms: usize, min_eigenvalue: f64 },
    NonHermitianChoi { asymmetry: f64 },
}

/// One verified axiom: worst residual against its threshold.
#[derive(Debug, Clone, Copy)]
pub struct AxiomCheck {
    pub pass: bool,
    pub residual: f64,
}

impl AxiomCheck {
    /// Judge a residual against a threshold.
    pub fn at(residual: f64, threshold: f64) -> Self {
        Self {
            pass: residual <= threshold,
            residual,
        }
    }
}

/// Per-axiom conditional-expectation report.
#[derive(Debug, Clone, Copy)]
pub struct UmegakiReport {
    pub positivity: AxiomCheck,
    pub module_property: AxiomCheck,
    pub star_map: AxiomCheck,
    pub unital: AxiomCheck,
    pub schwarz: AxiomCheck,
    pub idempotent: AxiomCheck,
}

impl UmegakiReport {
    pub fn pass(&self) -> bool {
        self.checks().iter().all(|(_, c)| c.pass)
    }

    pub fn checks(&self) -> [(&'static str, AxiomCheck); 6] {
        [
            ("positivity", self.positivity),
            ("module-property", self.module_property),
            ("star-map", self.star_map),
            ("unital", self.unital),
            ("schwarz-inequality", self.schwarz),
            ("idempotent", self.idempotent),
        ]
    }

    /// First failing axiom, if any.
    pub fn first_failure(&self) -> Option<(&'static str, AxiomCheck)> {
        self.checks().into_iter().find(|(_, c)| !c.pass)
    }
}

/// Module algebra of a map with its structural diagnostics.
#[derive(Debug, Clone)]
pub struct CeAlgebraReport {
    pub basis: SpanBasis,
    /// Subspace disagreement between the left- and right-sided versions.
    pub left_right_residual: f64,
    pub adjoint_closure_residual: f64,
    pub product_closure_residual: f64,
    /// Worst `‖P(c) − c‖` over the basis, when the map is unital.
    pub fixed_point_residual: Option<f64>,
}

/// Conditional amplitude construction: `E = E⁰(K†(·)K)` for a conditional
/// expectation `E⁰`, an amplitude `K` normalized by `E⁰(K†K) = 1`, and `K`
/// commuting with the distinguished algebra spanned by `c_basis`. The result
/// is verified completely positive, identity preserving, and a module map
/// over `c_basis`.
pub fn amplitude_qce(
    e0: &CpMap,
    k: &CMatrix,
    c_basis: &SpanBasis,
    cfg: &SampleConfig,
    tol: &ToleranceConfig,
) -> Result<CpMap> {
    let report = e0.verify_umegaki(cfg, tol)?;
    if let Some((axiom, check)) = report.first_failure() {
        return Err(QmError::ConditionalExpectationAxiom {
            axiom,
            residual: check.residual,
        });
    }
    let d = e0.domain().ambient_dim();
    check_finite(k)?;
    if k.nrows() != d || k.ncols() != d {
        return Err(QmError::DimensionMismatch {
            context: "amplitude operator",
            expected: d,
            got: k.nrows(),
        });
    }
    let norm_img = e0.apply(&(k.adjoint() * k), tol)?;
    let norm_res = (&norm_img - identity(d)).norm();
    if norm_res > tol.eq_scaled(1.0) {
        return Err(QmError::AmplitudeNotNormalized { residual: norm_res });
    }
    let mut comm = 0.0f64;
    for c in c_basis.elements() {
        let scale = (k.norm() * c.norm()).max(1.0);
        comm = comm.max((k * c - c * k).norm() / scale);
    }
    if comm > tol.eq_scaled(1.0) {
        return Err(QmError::CommutantMembership { residual: comm });
    }

    let map = CpMap::from_action(
        format!("amplitude({})", e0.label()),
        e0.domain_arc(),
        e0.codomain_arc(),
        tol,
        |e| {
            let conj = k.adjoint() * e * k;
            e0.apply(&conj, tol).expect("conjugated element stays in a full-algebra domain")
        },
    )?;

    let mut module = 0.0f64;
    for c in c_basis.elements() {
        for (j, a) in map.domain().elements().iter().enumerate() {
            let ca = c * a;
            let scale = ca.norm().max(1.0);
            let lhs = map.apply(&ca, tol)?;
            module = module.max((lhs - c * map.image(j)).norm() / scale);
        }
    }
    if module > tol.eq_scaled(1.0) {
        return Err(QmError::StructuralInvariant {
            relation: "conditional amplitude module property".into(),
            residual: module,
        });
    }

    if map.domain().spans_full_algebra() {
        let verdict = map.completely_positive(tol)?;
        if !verdict.positive {
            return Err(QmError::NotCompletelyPositive {
                min_eig: verdict.min_eigenvalue,
            });
        }
        return Ok(map.with_verified_cp());
    }
    Ok(map)
}

// --- operator-valued block matrices ------------------------------------------

/// Square grid of equal-size operator blocks.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    m: usize,
    dim: usize,
    /// Row-major `m x m` blocks.
    blocks: Vec<CMatrix>,
}

impl BlockMatrix {
    pub fn new(rows: Vec<Vec<CMatrix>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(QmError::EmptyInput("BlockMatrix::new"));
        }
        let dim = rows[0]
            .first()
            .map(|b| b.nrows())
            .ok_or(QmError::EmptyInput("BlockMatrix row"))?;
        let mut blocks = Vec::with_capacity(m * m);
        for row in &rows {
            if row.len() != m {
                return Err(QmError::DimensionMismatch {
                    context: "BlockMatrix row length",
                    expected: m,
                    got: row.len(),
                });
            }
            for b in row {
                check_finite(b)?;
                if b.nrows() != dim || b.ncols() != dim {
                    return Err(QmError::DimensionMismatch {
                        context: "BlockMatrix block dimension",
                        expected: dim,
                        got: b.nrows(),
                    });
                }
                blocks.push(b.clone());
            }
        }
        Ok(Self { m, dim, blocks })
    }

    /// `C†C` in the block sense: entry `(i,j) = Σ_h c_hi† c_hj`. Always
    /// positive when assembled.
    pub fn from_factor(c: &BlockMatrix) -> Self {
        let (m, dim) = (c.m, c.dim);
        let mut blocks = vec![zeros(dim, dim); m * m];
        for i in 0..m {
            for j in 0..m {
                let mut acc = zeros(dim, dim);
                for h in 0..m {
                    acc += c.block(h, i).adjoint() * c.block(h, j);
                }
                blocks[i * m + j] = acc;
            }
        }
        Self { m, dim, blocks }
    }

    pub fn block_count(&self) -> usize {
        self.m
    }

    pub fn block_dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, i: usize, j: usize) -> &CMatrix {
        &self.blocks[i * self.m + j]
    }

    /// Entrywise block products `(a_ij b_ij)`.
    pub fn schur(&self, other: &BlockMatrix) -> Result<BlockMatrix> {
        if self.m != other.m || self.dim != other.dim {
            return Err(QmError::DimensionMismatch {
                context: "schur operands",
                expected: self.m * self.dim,
                got: other.m * other.dim,
            });
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a * b)
            .collect();
        Ok(BlockMatrix {
            m: self.m,
            dim: self.dim,
            blocks,
        })
    }

    /// Entrywise Kronecker products `(a_ij ⊗ b_ij)`. Block dimensions may
    /// differ between the operands.
    pub fn schur_tensor(&self, other: &BlockMatrix) -> Result<BlockMatrix> {
        if self.m != other.m {
            return Err(QmError::DimensionMismatch {
                context: "schur_tensor block count",
                expected: self.m,
                got: other.m,
            });
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| kron(a, b))
            .collect();
        Ok(BlockMatrix {
            m: self.m,
            dim: self.dim * other.dim,
            blocks,
        })
    }

    /// The grid as one `m·dim` square matrix.
    pub fn assemble(&self) -> CMatrix {
        let n = self.m * self.dim;
        let mut out = zeros(n, n);
        for i in 0..self.m {
            for j in 0..self.m {
                out.view_mut((i * self.dim, j * self.dim), (self.dim, self.dim))
                    .copy_from(self.block(i, j));
            }
        }
        out
    }
}
