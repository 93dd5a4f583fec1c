//! Backward transition expectations on two-site blocks and their extension
//! to the full past algebra.
//!
//! A kernel at bond `n` maps the block algebra of sites `[n, n+1]` into the
//! site algebra at `n`, with range constrained to the part of site `n` that
//! commutes with everything before it (the full site algebra on tensor
//! lattices and at the first site, the even part on fermion lattices). The
//! extension sends an ordered product `e_{i_0}···e_{i_{n-1}} e_{i_n}
//! e_{i_{n+1}}` to `e_{i_0}···e_{i_{n-1}} E(e_{i_n} e_{i_{n+1}})` and is the
//! object the chain-level machinery verifies quasi-conditional-expectation
//! properties against.
//!
//! Kernels are stored block-locally: the map's domain is the block product
//! basis in block coordinates, its images live in site-`n` coordinates.
//! Embedding back into the ambient lattice algebra is a homomorphism per
//! block, so block-local evaluation and ambient evaluation agree exactly.

use std::sync::Arc;

use crate::algebra::{AlgebraKind, LocalStructure, ProductBasis, SiteBasisVariant};
use crate::cp::{AxiomCheck, CpMap, CpVerdict};
use crate::error::{QmError, Result};
use crate::linalg::{
    cr, identity, kron, zeros, CMatrix, SpanBasis, ToleranceConfig,
};
use crate::random;
use rand_chacha::ChaCha8Rng;

/// A backward transition expectation at one bond.
#[derive(Debug, Clone)]
pub struct TransitionExpectation {
    site: usize,
    /// Block-local map: domain spans the full block algebra, codomain is the
    /// admissible range inside the site algebra at `site`.
    map: CpMap,
    block: LocalStructure,
    domain_basis: ProductBasis,
}

impl TransitionExpectation {
    /// Build a kernel from images of the block product-basis elements
    /// (block-local ordering, trailing site fastest). Images are site-local
    /// `d_n x d_n` matrices and must lie in the admissible range span; on
    /// fermion lattices past the first site that span is the even part of
    /// the site algebra.
    pub fn from_images(
        structure: &LocalStructure,
        n: usize,
        images: Vec<CMatrix>,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        Self::build(structure, n, images, true, tol)
    }

    /// Same construction without the range constraint: the codomain is the
    /// full site algebra. Exists so tests can exercise the failure modes
    /// that [`verify_markov_property`] and the extension lemmas detect.
    pub fn from_images_unchecked(
        structure: &LocalStructure,
        n: usize,
        images: Vec<CMatrix>,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        Self::build(structure, n, images, false, tol)
    }

    fn build(
        structure: &LocalStructure,
        n: usize,
        images: Vec<CMatrix>,
        enforce_range: bool,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        let block = structure.block(n)?;
        let domain_basis = block.product_basis(0, 1)?;
        let range = if enforce_range {
            structure.markov_range_basis(n)?
        } else {
            SpanBasis::new(
                format!("site-{n}-full"),
                structure.site_basis(n).span().elements().to_vec(),
                tol,
            )?
        };
        let map = CpMap::from_images(
            format!("kernel-{n}"),
            domain_basis.span_arc(),
            Arc::new(range),
            images,
            tol,
        )?;
        let mut kernel = Self {
            site: n,
            map,
            block,
            domain_basis,
        };
        let even = kernel.measure_even(tol);
        kernel.map = kernel.map.with_even(even);
        Ok(kernel)
    }

    /// Worst-case image norm over odd-parity domain elements decides the
    /// evenness flag; tensor blocks have no odd elements.
    fn measure_even(&self, tol: &ToleranceConfig) -> bool {
        let mut worst = 0.0f64;
        for i in 0..self.domain_basis.len() {
            if self.domain_basis.parity(i) < 0 {
                worst = worst.max(self.map.image(i).norm());
            }
        }
        worst <= tol.eq_scaled(1.0)
    }

    /// Build from a Kraus family of `d_n x (d_n·d_{n+1})` operators acting
    /// on block-local matrices.
    pub fn from_block_kraus(
        structure: &LocalStructure,
        n: usize,
        operators: &[CMatrix],
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        let images = Self::kraus_images(structure, n, operators)?;
        Self::from_images(structure, n, images, tol)
    }

    /// Kraus construction without the range constraint, so range violations
    /// surface in [`verify_markov_property`] instead of aborting the build.
    pub fn from_block_kraus_unchecked(
        structure: &LocalStructure,
        n: usize,
        operators: &[CMatrix],
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        let images = Self::kraus_images(structure, n, operators)?;
        Self::from_images_unchecked(structure, n, images, tol)
    }

    fn kraus_images(
        structure: &LocalStructure,
        n: usize,
        operators: &[CMatrix],
    ) -> Result<Vec<CMatrix>> {
        if operators.is_empty() {
            return Err(QmError::EmptyInput("from_block_kraus operators"));
        }
        let block = structure.block(n)?;
        let basis = block.product_basis(0, 1)?;
        let dn = structure.site_local_dim(n);
        Ok((0..basis.len())
            .map(|i| {
                let e = basis.element(i);
                operators
                    .iter()
                    .fold(zeros(dn, dn), |acc, k| acc + k * e * k.adjoint())
            })
            .collect())
    }

    /// Random completely positive identity-preserving kernel without parity
    /// handling: a Kraus family rescaled by the inverse square root of its
    /// unit image. On fermion lattices past site 0 this generally violates
    /// the range constraint; use [`TransitionExpectation::random_even`]
    /// there.
    pub fn random_unital(
        structure: &LocalStructure,
        n: usize,
        rng: &mut ChaCha8Rng,
        kraus_count: usize,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        let dn = structure.site_local_dim(n);
        let dblock = dn * structure.site_local_dim(n + 1);
        let ops = random::kraus_family(rng, kraus_count, dn, dblock);
        let s = ops
            .iter()
            .fold(zeros(dn, dn), |acc, k| acc + k * k.adjoint());
        let corr = crate::linalg::psd_inv_sqrt(&s, tol)?;
        let normalized: Vec<CMatrix> = ops.iter().map(|k| &corr * k).collect();
        Self::from_block_kraus(structure, n, &normalized, tol)
    }

    /// Random completely positive identity-preserving *even* kernel on a
    /// fermion block: even-project the input, push it through a normalized
    /// random Kraus map, then even-project the site-local output. Every
    /// stage is completely positive and unital, and the two projections make
    /// the result even with range in the even site algebra.
    pub fn random_even(
        structure: &LocalStructure,
        n: usize,
        rng: &mut ChaCha8Rng,
        kraus_count: usize,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        if structure.kind() != AlgebraKind::Fermi {
            return Err(QmError::FermiOnly);
        }
        let block = structure.block(n)?;
        let basis = block.product_basis(0, 1)?;
        let dn = structure.site_local_dim(n);
        let dblock = block.ambient_dim();
        let ops = random::kraus_family(rng, kraus_count, dn, dblock);
        let v_block = kron(
            &structure.site_parity_local(n),
            &structure.site_parity_local(n + 1),
        );
        let v_site = structure.site_parity_local(n);
        let f = |x: &CMatrix| -> CMatrix {
            let even_in = (x + &v_block * x * &v_block).scale(0.5);
            ops.iter()
                .fold(zeros(dn, dn), |acc, k| acc + k * &even_in * k.adjoint())
        };
        let s = f(&identity(dblock));
        let corr = crate::linalg::psd_inv_sqrt(&s, tol)?;
        let images = (0..basis.len())
            .map(|i| {
                let mid = &corr * f(basis.element(i)) * &corr;
                (&mid + &v_site * &mid * &v_site).scale(0.5)
            })
            .collect();
        Self::from_images(structure, n, images, tol)
    }

    /// Product-state kernel on a tensor block: `x ⊗ y ↦ tr(ψ y)·x`.
    pub fn product_state(
        structure: &LocalStructure,
        n: usize,
        psi: &CMatrix,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        if structure.kind() != AlgebraKind::Tensor {
            return Err(QmError::ChainSpec(
                "product-state kernels are a tensor-lattice construction".into(),
            ));
        }
        let dn1 = structure.site_local_dim(n + 1);
        if psi.nrows() != dn1 || psi.ncols() != dn1 {
            return Err(QmError::DimensionMismatch {
                context: "product-state density dimension",
                expected: dn1,
                got: psi.nrows(),
            });
        }
        let eig = crate::linalg::hermitian_eigenvalues(psi, tol)?;
        if eig.first().copied().unwrap_or(0.0) < -tol.eig_tol {
            return Err(QmError::NotPsd {
                min_eig: eig[0],
            });
        }
        let dn = structure.site_local_dim(n);
        // Kraus form √λ_k (1 ⊗ ⟨u_k|) from the spectral decomposition.
        let herm = crate::linalg::hermitian_part_checked(psi, tol)?;
        let se = crate::linalg::hermitian_eigen(&herm);
        let mut ops = Vec::new();
        for (k, &lambda) in se.eigenvalues.iter().enumerate() {
            if lambda <= tol.eig_tol {
                continue;
            }
            let mut bra = zeros(1, dn1);
            for r in 0..dn1 {
                bra[(0, r)] = se.eigenvectors[(r, k)].conj() * cr(lambda.sqrt());
            }
            ops.push(kron(&identity(dn), &bra));
        }
        Self::from_block_kraus(structure, n, &ops, tol)
    }

    /// Diagonal kernel of a classical row-stochastic matrix:
    /// `E(z) = Σ_{ij} P_ij z[(i,j),(i,j)] e_ii` in Kraus form
    /// `K_ij = √P_ij |i⟩⟨i ⊗ j|`.
    pub fn classical(
        structure: &LocalStructure,
        n: usize,
        p: &CMatrix,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        if structure.kind() != AlgebraKind::Tensor {
            return Err(QmError::ChainSpec(
                "classical kernels embed into tensor lattices".into(),
            ));
        }
        let dn = structure.site_local_dim(n);
        let dn1 = structure.site_local_dim(n + 1);
        if p.nrows() != dn || p.ncols() != dn1 {
            return Err(QmError::DimensionMismatch {
                context: "stochastic matrix shape",
                expected: dn,
                got: p.nrows(),
            });
        }
        let mut ops = Vec::new();
        for i in 0..dn {
            for j in 0..dn1 {
                let pij = p[(i, j)];
                if pij.im.abs() > tol.eq_tol || pij.re < -tol.eq_tol {
                    return Err(QmError::ChainSpec(format!(
                        "stochastic entry ({i},{j}) = {pij} is not a probability"
                    )));
                }
                if pij.re <= tol.eq_tol {
                    continue;
                }
                let mut k = zeros(dn, dn * dn1);
                k[(i, i * dn1 + j)] = cr(pij.re.sqrt());
                ops.push(k);
            }
        }
        Self::from_block_kraus(structure, n, &ops, tol)
    }

    /// The same kernel with every image scaled: models non-normalized
    /// transition expectations (`E(1) = λ·1` for unital inputs).
    pub fn scaled(
        &self,
        structure: &LocalStructure,
        lambda: f64,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        let images = self.map.images().iter().map(|m| m.scale(lambda)).collect();
        Self::from_images(structure, self.site, images, tol)
    }

    /// Re-anchor the kernel at bond `m` of a lattice with matching site
    /// dimensions.
    pub fn replicate(
        &self,
        structure: &LocalStructure,
        m: usize,
        tol: &ToleranceConfig,
    ) -> Result<Self> {
        for offset in 0..=1 {
            let (want, have) = (
                structure.site_local_dim(m + offset),
                self.block.site_local_dim(offset),
            );
            if want != have {
                return Err(QmError::DimensionMismatch {
                    context: "replicated kernel site dimension",
                    expected: have,
                    got: want,
                });
            }
        }
        Self::build(
            structure,
            m,
            self.map.images().to_vec(),
            self.map.codomain().label().ends_with("-even") || m == 0 || {
                structure.kind() == AlgebraKind::Tensor
            },
            tol,
        )
    }

    pub fn site(&self) -> usize {
        self.site
    }

    pub fn map(&self) -> &CpMap {
        &self.map
    }

    pub fn block(&self) -> &LocalStructure {
        &self.block
    }

    pub fn domain_basis(&self) -> &ProductBasis {
        &self.domain_basis
    }

    pub fn range(&self) -> &SpanBasis {
        self.map.codomain()
    }

    pub fn is_identity_preserving(&self) -> bool {
        self.map.flags().identity_preserving
    }

    pub fn is_even(&self) -> bool {
        self.map.flags().even.unwrap_or(true)
    }

    /// Apply to a block-local matrix, producing a site-local one.
    pub fn apply_block(&self, x: &CMatrix, tol: &ToleranceConfig) -> Result<CMatrix> {
        self.map.apply(x, tol)
    }

    /// `b_site := E(1)`, site-local.
    pub fn unit_image(&self, tol: &ToleranceConfig) -> Result<CMatrix> {
        self.map.apply(&identity(self.block.ambient_dim()), tol)
    }
}

/// Range verification of a kernel: every image must expand in the span of
/// the site-`n` part commuting with the past.
#[derive(Debug, Clone)]
pub struct MarkovReport {
    pub pass: bool,
    pub worst_residual: f64,
    /// Domain basis index of the worst offender when the check fails.
    pub offending_index: Option<usize>,
}

pub fn verify_markov_property(
    e: &TransitionExpectation,
    structure: &LocalStructure,
    tol: &ToleranceConfig,
) -> Result<MarkovReport> {
    let range = structure.markov_range_basis(e.site())?;
    let mut worst = 0.0f64;
    let mut offender = None;
    for (i, img) in e.map().images().iter().enumerate() {
        let r = range.distance(img)? / img.norm().max(1.0);
        if r > worst {
            worst = r;
            offender = Some(i);
        }
    }
    let pass = worst <= tol.eq_scaled(1.0);
    Ok(MarkovReport {
        pass,
        worst_residual: worst,
        offending_index: if pass { None } else { offender },
    })
}

/// The canonical local conditional expectation on the block `[n, n+1]`: the
/// identity on tensor blocks, the even projection `b ↦ b₊` on fermion
/// blocks. Block-local coordinates on both sides.
pub fn umegaki_local(structure: &LocalStructure, n: usize) -> Result<CpMap> {
    let tol = *structure.tol();
    let block = structure.block(n)?;
    let basis = block.product_basis(0, 1)?;
    let span = basis.span_arc();
    match structure.kind() {
        AlgebraKind::Tensor => {
            let images = span.elements().to_vec();
            CpMap::from_images(
                format!("umegaki-local-{n}"),
                Arc::clone(&span),
                span,
                images,
                &tol,
            )
        }
        AlgebraKind::Fermi => {
            let v = kron(
                &structure.site_parity_local(n),
                &structure.site_parity_local(n + 1),
            );
            CpMap::from_action(
                format!("umegaki-local-{n}"),
                Arc::clone(&span),
                span,
                &tol,
                |x| (x + &v * x * &v).scale(0.5),
            )
        }
    }
}

/// Compatibility of a kernel with the local conditional expectation, and
/// (fermi) its equivalence with evenness. The two residuals are computed
/// along independent paths: the first composes with the projection map, the
/// second conjugates by the block parity unitary.
#[derive(Debug, Clone)]
pub struct CompatReport {
    /// `E ∘ E⁰ = E` over the domain basis.
    pub compat: AxiomCheck,
    /// `E ∘ Θ = E` over the domain basis; `None` on tensor lattices where Θ
    /// is the identity.
    pub evenness: Option<AxiomCheck>,
    /// The two verdicts agree (vacuously true on tensor lattices).
    pub equivalent: bool,
}

impl CompatReport {
    pub fn pass(&self) -> bool {
        self.compat.pass
    }
}

pub fn verify_compat_e_e0(
    e: &TransitionExpectation,
    structure: &LocalStructure,
    tol: &ToleranceConfig,
) -> Result<CompatReport> {
    let e0 = umegaki_local(structure, e.site())?;
    let mut compat_res = 0.0f64;
    for (i, elt) in e.map().domain().elements().iter().enumerate() {
        let projected = e0.apply(elt, tol)?;
        let through = e.map().apply(&projected, tol)?;
        compat_res = compat_res.max((through - e.map().image(i)).norm() / elt.norm().max(1.0));
    }
    let compat = AxiomCheck::at(compat_res, tol.eq_scaled(1.0));

    let evenness = match structure.kind() {
        AlgebraKind::Tensor => None,
        AlgebraKind::Fermi => {
            let v = kron(
                &structure.site_parity_local(e.site()),
                &structure.site_parity_local(e.site() + 1),
            );
            let mut res = 0.0f64;
            for (i, elt) in e.map().domain().elements().iter().enumerate() {
                let flipped = &v * elt * &v;
                let through = e.map().apply(&flipped, tol)?;
                res = res.max((through - e.map().image(i)).norm() / elt.norm().max(1.0));
            }
            Some(AxiomCheck::at(res, tol.eq_scaled(1.0)))
        }
    };
    let equivalent = match &evenness {
        None => true,
        Some(ev) => ev.pass == compat.pass,
    };
    Ok(CompatReport {
        compat,
        evenness,
        equivalent,
    })
}

/// Extension of a bond-`n` kernel to the prefix algebra `[0, n+1]`.
#[derive(Debug, Clone)]
pub struct ExtendedQce {
    site: usize,
    /// Domain spans the full prefix algebra; codomain spans `[0, n]` inside
    /// the prefix ambient.
    map: CpMap,
    prefix: LocalStructure,
    source: TransitionExpectation,
}

impl ExtendedQce {
    pub fn site(&self) -> usize {
        self.site
    }

    pub fn map(&self) -> &CpMap {
        &self.map
    }

    pub fn prefix(&self) -> &LocalStructure {
        &self.prefix
    }

    pub fn source(&self) -> &TransitionExpectation {
        &self.source
    }
}

/// Extend a kernel to the prefix algebra. The compatibility condition with
/// the local conditional expectation is a hard precondition (it is exactly
/// what makes the extension a *-map), and the result is certified completely
/// positive; failures of either are errors.
pub fn extend(
    e: &TransitionExpectation,
    structure: &LocalStructure,
    tol: &ToleranceConfig,
) -> Result<ExtendedQce> {
    let compat = verify_compat_e_e0(e, structure, tol)?;
    if !compat.pass() {
        return Err(QmError::KernelCompatibility {
            residual: compat.compat.residual,
        });
    }
    let q = extend_with_variant(e, structure, SiteBasisVariant::Standard, tol)?;
    let verdict = q.map.completely_positive(tol)?;
    if !verdict.positive {
        return Err(QmError::NotCompletelyPositive {
            min_eig: verdict.min_eigenvalue,
        });
    }
    let ExtendedQce {
        site,
        map,
        prefix,
        source,
    } = q;
    Ok(ExtendedQce {
        site,
        map: map.with_verified_cp(),
        prefix,
        source,
    })
}

/// Extension without the compatibility precondition or positivity
/// enforcement, so failure modes stay constructible in tests.
pub fn extend_unchecked(
    e: &TransitionExpectation,
    structure: &LocalStructure,
    tol: &ToleranceConfig,
) -> Result<ExtendedQce> {
    extend_with_variant(e, structure, SiteBasisVariant::Standard, tol)
}

/// Core extension construction over a chosen product-basis variant. The
/// extension is basis-independent (linear maps agree whenever the bases span
/// the same algebra); exposing the variant lets tests verify exactly that.
pub fn extend_with_variant(
    e: &TransitionExpectation,
    structure: &LocalStructure,
    variant: SiteBasisVariant,
    tol: &ToleranceConfig,
) -> Result<ExtendedQce> {
    let n = e.site();
    let prefix = structure.prefix(n + 1)?;
    let d = prefix.ambient_dim();
    let sites: Vec<usize> = (0..=n + 1).collect();
    let domain_pb = prefix.product_basis_over(&sites, variant)?;
    let codomain_pb = prefix.product_basis(0, n)?;

    let past_pb = if n >= 1 {
        Some(prefix.product_basis_over(&(0..n).collect::<Vec<_>>(), variant)?)
    } else {
        None
    };
    let block_pb = e.block().product_basis_over(&[0, 1], variant)?;

    let mut images = Vec::with_capacity(domain_pb.len());
    for t in 0..domain_pb.len() {
        let tuple = domain_pb.tuple_of(t);
        let past = match &past_pb {
            Some(pb) => pb.element(pb.index_of(&tuple[..n])).clone(),
            None => identity(d),
        };
        let block_idx = block_pb.index_of(&[tuple[n], tuple[n + 1]]);
        let local = e.map().apply(block_pb.element(block_idx), tol)?;
        images.push(past * prefix.embed_site(n, &local)?);
    }

    let map = CpMap::from_images(
        format!("extended-kernel-{n}"),
        domain_pb.span_arc(),
        codomain_pb.span_arc(),
        images,
        tol,
    )?;
    Ok(ExtendedQce {
        site: n,
        map,
        prefix,
        source: e.clone(),
    })
}

/// Property report for an extended kernel: module behaviour over the past
/// algebra, the trace-like identity, *-map behaviour, complete positivity,
/// containment of commutant images, and the range bound.
#[derive(Debug, Clone)]
pub struct QceReport {
    /// `Ẽ(ca) = c·Ẽ(a)` for past `c`.
    pub module_left: AxiomCheck,
    /// `Ẽ(ac) = Ẽ(a)·c` for past `c`.
    pub module_right: AxiomCheck,
    /// `Ẽ(ab) = Ẽ(ba)` for past `a`, block `b`.
    pub trace_like: AxiomCheck,
    /// `Ẽ(x†) = Ẽ(x)†`.
    pub star_map: AxiomCheck,
    pub cp: AxiomCheck,
    pub choi_min_eigenvalue: f64,
    /// Images of the past-commutant land in the past-commutant part of the
    /// codomain algebra.
    pub old_mp: AxiomCheck,
    /// Every image expands in `span(past ∨ admissible-range)`.
    pub range_containment: AxiomCheck,
}

impl QceReport {
    pub fn pass(&self) -> bool {
        self.checks().iter().all(|(_, c)| c.pass)
    }

    pub fn checks(&self) -> [(&'static str, AxiomCheck); 7] {
        [
            ("module-left", self.module_left),
            ("module-right", self.module_right),
            ("trace-like", self.trace_like),
            ("star-map", self.star_map),
            ("completely-positive", self.cp),
            ("commutant-containment", self.old_mp),
            ("range-containment", self.range_containment),
        ]
    }
}

/// Span of the past commutant inside the prefix ambient: the structured
/// formula on fermion lattices, the opposite tensor factor on tensor ones.
fn past_commutant_span(prefix: &LocalStructure, n: usize) -> Result<SpanBasis> {
    if n == 0 {
        return Ok(prefix.product_basis(0, prefix.sites() - 1)?.span().clone());
    }
    match prefix.kind() {
        AlgebraKind::Fermi => {
            let past: Vec<usize> = (0..n).collect();
            prefix.commutant_formula(&past)
        }
        AlgebraKind::Tensor => Ok(prefix.product_basis(n, prefix.sites() - 1)?.span().clone()),
    }
}

/// Span of the past commutant intersected with `𝒜_{[0,n]}`, embedded in the
/// prefix ambient.
fn past_commutant_in_codomain(prefix: &LocalStructure, n: usize) -> Result<SpanBasis> {
    if n == 0 {
        return Ok(prefix.product_basis(0, n)?.span().clone());
    }
    match prefix.kind() {
        AlgebraKind::Tensor => Ok(prefix.product_basis(n, n)?.span().clone()),
        AlgebraKind::Fermi => {
            let upto_n = prefix.prefix(n)?;
            let local = upto_n.commutant_formula(&(0..n).collect::<Vec<_>>())?;
            let elements = local
                .elements()
                .iter()
                .map(|x| prefix.embed_range(0, n, x))
                .collect::<Result<Vec<_>>>()?;
            SpanBasis::new(format!("past-commutant-in-[0,{n}]"), elements, prefix.tol())
        }
    }
}

pub fn verify_qce(
    q: &ExtendedQce,
    structure: &LocalStructure,
    tol: &ToleranceConfig,
) -> Result<QceReport> {
    let n = q.site();
    let prefix = structure.prefix(n + 1)?;
    let d = prefix.ambient_dim();
    let past_elements: Vec<CMatrix> = if n >= 1 {
        let pb = prefix.product_basis(0, n - 1)?;
        (0..pb.len()).map(|i| pb.element(i).clone()).collect()
    } else {
        vec![identity(d)]
    };

    let mut module_left = 0.0f64;
    let mut module_right = 0.0f64;
    for c in &past_elements {
        for (j, a) in q.map().domain().elements().iter().enumerate() {
            let img = q.map().image(j);
            let scale = (c.norm() * a.norm()).max(1.0);
            let lhs = q.map().apply(&(c * a), tol)?;
            module_left = module_left.max((lhs - c * img).norm() / scale);
            let rhs = q.map().apply(&(a * c), tol)?;
            module_right = module_right.max((rhs - img * c).norm() / scale);
        }
    }

    let block_elements: Vec<CMatrix> = {
        let bp = q.source().block().product_basis(0, 1)?;
        (0..bp.len())
            .map(|i| prefix.embed_range(n, n + 1, bp.element(i)))
            .collect::<Result<Vec<_>>>()?
    };
    let mut trace_like = 0.0f64;
    for a in &past_elements {
        for b in &block_elements {
            let scale = (a.norm() * b.norm()).max(1.0);
            let lhs = q.map().apply(&(a * b), tol)?;
            let rhs = q.map().apply(&(b * a), tol)?;
            trace_like = trace_like.max((lhs - rhs).norm() / scale);
        }
    }

    let mut star = 0.0f64;
    for (j, a) in q.map().domain().elements().iter().enumerate() {
        let lhs = q.map().apply(&a.adjoint(), tol)?;
        star = star.max((lhs - q.map().image(j).adjoint()).norm() / a.norm().max(1.0));
    }

    let verdict: CpVerdict = q.map().completely_positive(tol)?;
    let cp = AxiomCheck::at((-verdict.min_eigenvalue).max(0.0), tol.eig_tol);

    let commutant = past_commutant_span(&prefix, n)?;
    let target = past_commutant_in_codomain(&prefix, n)?;
    let mut old_mp = 0.0f64;
    for c in commutant.elements() {
        let img = q.map().apply(c, tol)?;
        old_mp = old_mp.max(target.distance(&img)? / c.norm().max(1.0));
    }

    let range_span = {
        let range_local = structure.markov_range_basis(n)?;
        let mut elements = Vec::new();
        for p in &past_elements {
            for r in range_local.elements() {
                elements.push(p * prefix.embed_site(n, r)?);
            }
        }
        SpanBasis::new(format!("past-and-range-{n}"), elements, tol)?
    };
    let mut range_containment = 0.0f64;
    for img in q.map().images() {
        range_containment =
            range_containment.max(range_span.distance(img)? / img.norm().max(1.0));
    }

    let eq = tol.eq_scaled(1.0);
    Ok(QceReport {
        module_left: AxiomCheck::at(module_left, eq),
        module_right: AxiomCheck::at(module_right, eq),
        trace_like: AxiomCheck::at(trace_like, eq),
        star_map: AxiomCheck::at(star, eq),
        cp,
        choi_min_eigenvalue: verdict.min_eigenvalue,
        old_mp: AxiomCheck::at(old_mp, eq),
        range_containment: AxiomCheck::at(range_containment, eq),
    })
}
