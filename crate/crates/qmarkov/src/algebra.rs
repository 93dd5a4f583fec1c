//! Local observable algebras over a finite chain of sites.
//!
//! Two families are supported. A *tensor* lattice assigns site `i` the full
//! matrix algebra `M_{d_i}` acting on its own tensor factor. A *fermion*
//! lattice assigns site `i` a block of `d_i` annihilation/creation mode
//! pairs, realized on `(C²)^{⊗ total_modes}` through the Jordan-Wigner
//! construction
//!
//! ```text
//!   a_j  =  σ_z^{⊗ j} ⊗ e_{10} ⊗ 1 ⊗ ... ,   σ_z = diag(-1, 1),
//! ```
//!
//! with modes enumerated consecutively, site by site. The occupied state is
//! the first basis vector, so the per-mode parity `a a† - a† a` equals σ_z.
//!
//! Elements of a site (or of a consecutive block of sites) have two natural
//! coordinates: *local* matrices on the site's own factors, and *ambient*
//! matrices on the whole lattice. For fermion lattices the two are related
//! through the parity split: even local parts embed under padding with
//! identities, odd parts pick up a σ_z string over all earlier modes. All
//! embedding helpers here implement exactly that rule, which is what makes
//! local computation and ambient verification agree.

use std::sync::Arc;

use crate::error::{QmError, Result};
use crate::linalg::{
    check_finite, check_square, cr, identity, kron, zeros, CMatrix, SpanBasis, ToleranceConfig, ONE,
};

/// Which family of local algebras the lattice carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgebraKind {
    /// Site `i` is the full matrix algebra `M_{d_i}` on its own factor.
    Tensor,
    /// Site `i` is a block of `d_i` fermion modes under Jordan-Wigner.
    Fermi,
}

/// Fermion per-mode spanning family used to assemble site bases. The two
/// variants span the same algebra; `Standard` is the default and
/// `AnnihilatorLed` exists to exercise basis-independence of constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SiteBasisVariant {
    /// Per mode: `{1, a, a†, a†a}`.
    #[default]
    Standard,
    /// Per mode: `{a, a†, aa†, a†a}`.
    AnnihilatorLed,
}

/// Declarative description of a lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeSpec {
    pub kind: AlgebraKind,
    /// Per site: matrix dimension (tensor) or number of modes (fermi).
    pub site_dims: Vec<usize>,
}

/// Hard ceiling on the ambient Hilbert space dimension.
pub const DEFAULT_DIMENSION_CAP: usize = 4096;

/// Full pairwise structural relations (CAR / cross-site commutation) are
/// verified when the ambient dimension is at most this; above it only
/// adjacent pairs are checked to keep construction tractable.
const FULL_RELATION_CHECK_CAP: usize = 256;

impl LatticeSpec {
    pub fn new(kind: AlgebraKind, site_dims: Vec<usize>) -> Self {
        Self { kind, site_dims }
    }

    pub fn homogeneous(kind: AlgebraKind, dim: usize, sites: usize) -> Self {
        Self {
            kind,
            site_dims: vec![dim; sites],
        }
    }

    pub fn sites(&self) -> usize {
        self.site_dims.len()
    }

    /// Local matrix dimension of site `i`.
    pub fn site_local_dim(&self, i: usize) -> usize {
        match self.kind {
            AlgebraKind::Tensor => self.site_dims[i],
            AlgebraKind::Fermi => 1 << self.site_dims[i],
        }
    }

    pub fn total_modes(&self) -> usize {
        match self.kind {
            AlgebraKind::Tensor => 0,
            AlgebraKind::Fermi => self.site_dims.iter().sum(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            AlgebraKind::Tensor => self.site_dims.iter().product(),
            AlgebraKind::Fermi => 1 << self.total_modes(),
        }
    }

    pub fn validate(&self, cap: usize) -> Result<()> {
        if self.site_dims.is_empty() {
            return Err(QmError::EmptyInput("LatticeSpec.site_dims"));
        }
        if self.site_dims.iter().any(|&d| d == 0) {
            return Err(QmError::ChainSpec("site dimensions must be at least 1".into()));
        }
        // Overflow-safe cap check.
        let mut dim: usize = 1;
        for i in 0..self.sites() {
            let factor = self.site_local_dim(i);
            dim = dim.checked_mul(factor).ok_or(QmError::DimensionCap {
                dim: usize::MAX,
                cap,
            })?;
            if dim > cap {
                return Err(QmError::DimensionCap { dim, cap });
            }
        }
        Ok(())
    }
}

/// `σ_z = diag(-1, 1)`.
pub fn sigma_z() -> CMatrix {
    let mut m = zeros(2, 2);
    m[(0, 0)] = cr(-1.0);
    m[(1, 1)] = cr(1.0);
    m
}

fn e2(r: usize, c: usize) -> CMatrix {
    let mut m = zeros(2, 2);
    m[(r, c)] = ONE;
    m
}

/// Ordered basis of one site's local algebra, with the parity sign of each
/// element (`+1` even, `-1` odd; tensor sites are entirely even).
#[derive(Debug, Clone)]
pub struct SiteBasis {
    span: Arc<SpanBasis>,
    parities: Vec<i8>,
    variant: SiteBasisVariant,
}

impl SiteBasis {
    pub fn span(&self) -> &SpanBasis {
        &self.span
    }

    pub fn span_arc(&self) -> Arc<SpanBasis> {
        Arc::clone(&self.span)
    }

    pub fn len(&self) -> usize {
        self.span.len()
    }

    pub fn is_empty(&self) -> bool {
        self.span.is_empty()
    }

    pub fn element(&self, i: usize) -> &CMatrix {
        self.span.element(i)
    }

    pub fn parity(&self, i: usize) -> i8 {
        self.parities[i]
    }

    pub fn parities(&self) -> &[i8] {
        &self.parities
    }

    pub fn variant(&self) -> SiteBasisVariant {
        self.variant
    }
}

/// An ordered product basis over a consecutive or scattered range of sites:
/// element `t` is the ordered product of one basis element per site. Carries
/// the tuple decomposition and the parity of every element.
#[derive(Debug, Clone)]
pub struct ProductBasis {
    span: Arc<SpanBasis>,
    /// Sites contributing factors, ascending.
    sites: Vec<usize>,
    /// Basis sizes per contributing site.
    shape: Vec<usize>,
    parities: Vec<i8>,
}

impl ProductBasis {
    pub fn span(&self) -> &SpanBasis {
        &self.span
    }

    pub fn span_arc(&self) -> Arc<SpanBasis> {
        Arc::clone(&self.span)
    }

    pub fn len(&self) -> usize {
        self.span.len()
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn element(&self, i: usize) -> &CMatrix {
        self.span.element(i)
    }

    pub fn parity(&self, i: usize) -> i8 {
        self.parities[i]
    }

    /// Tuple of per-site basis indices for flat index `i` (last site fastest).
    pub fn tuple_of(&self, mut i: usize) -> Vec<usize> {
        let mut t = vec![0; self.shape.len()];
        for k in (0..self.shape.len()).rev() {
            t[k] = i % self.shape[k];
            i /= self.shape[k];
        }
        t
    }

    /// Flat index of a per-site tuple.
    pub fn index_of(&self, tuple: &[usize]) -> usize {
        debug_assert_eq!(tuple.len(), self.shape.len());
        let mut i = 0;
        for (k, &t) in tuple.iter().enumerate() {
            debug_assert!(t < self.shape[k]);
            i = i * self.shape[k] + t;
        }
        i
    }
}

/// A realized lattice: per-site local bases plus embedding helpers between
/// local and ambient coordinates. Construction verifies the defining
/// relations (CAR for fermion lattices, cross-site commutation for tensor
/// lattices) on the embedded generators.
#[derive(Debug, Clone)]
pub struct LocalStructure {
    spec: LatticeSpec,
    tol: ToleranceConfig,
    site_bases: Vec<SiteBasis>,
    /// First global mode of each site (fermi) or unused (tensor).
    mode_offsets: Vec<usize>,
}

impl LocalStructure {
    /// Build and verify a lattice with the default dimension cap.
    pub fn build(spec: LatticeSpec, tol: &ToleranceConfig) -> Result<Self> {
        Self::build_capped(spec, tol, DEFAULT_DIMENSION_CAP)
    }

    pub fn build_capped(spec: LatticeSpec, tol: &ToleranceConfig, cap: usize) -> Result<Self> {
        tol.validate()?;
        spec.validate(cap)?;
        let mut mode_offsets = Vec::with_capacity(spec.sites());
        let mut acc = 0;
        for i in 0..spec.sites() {
            mode_offsets.push(acc);
            if spec.kind == AlgebraKind::Fermi {
                acc += spec.site_dims[i];
            }
        }
        let mut site_bases = Vec::with_capacity(spec.sites());
        for i in 0..spec.sites() {
            site_bases.push(build_site_basis(
                &spec,
                i,
                SiteBasisVariant::Standard,
                tol,
            )?);
        }
        let structure = Self {
            spec,
            tol: *tol,
            site_bases,
            mode_offsets,
        };
        structure.verify_relations()?;
        Ok(structure)
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn kind(&self) -> AlgebraKind {
        self.spec.kind
    }

    pub fn tol(&self) -> &ToleranceConfig {
        &self.tol
    }

    pub fn sites(&self) -> usize {
        self.spec.sites()
    }

    pub fn ambient_dim(&self) -> usize {
        self.spec.ambient_dim()
    }

    /// Local matrix dimension of site `i`.
    pub fn site_local_dim(&self, i: usize) -> usize {
        self.spec.site_local_dim(i)
    }

    /// Number of fermion modes at site `i` (0 for tensor lattices).
    pub fn site_modes(&self, i: usize) -> usize {
        match self.spec.kind {
            AlgebraKind::Tensor => 0,
            AlgebraKind::Fermi => self.spec.site_dims[i],
        }
    }

    pub fn total_modes(&self) -> usize {
        self.spec.total_modes()
    }

    /// First global mode index of site `i` (fermi lattices).
    pub fn mode_offset(&self, i: usize) -> usize {
        self.mode_offsets[i]
    }

    pub fn site_basis(&self, i: usize) -> &SiteBasis {
        &self.site_bases[i]
    }

    /// Build the requested variant of site `i`'s basis on demand. The
    /// `Standard` variant returns the cached basis.
    pub fn site_basis_variant(&self, i: usize, variant: SiteBasisVariant) -> Result<SiteBasis> {
        if variant == SiteBasisVariant::Standard {
            return Ok(self.site_bases[i].clone());
        }
        build_site_basis(&self.spec, i, variant, &self.tol)
    }

    /// Sub-lattice over a consecutive site range, in its own local ambient.
    pub fn sub(&self, first: usize, last: usize) -> Result<Self> {
        if first > last || last >= self.sites() {
            return Err(QmError::HorizonExceeded {
                needed: last + 1,
                available: self.sites(),
            });
        }
        let spec = LatticeSpec::new(self.spec.kind, self.spec.site_dims[first..=last].to_vec());
        // Relations were already verified on the parent; rebuild without
        // re-checking to keep sub-lattice construction cheap.
        let mut mode_offsets = Vec::new();
        let mut acc = 0;
        for i in 0..spec.sites() {
            mode_offsets.push(acc);
            if spec.kind == AlgebraKind::Fermi {
                acc += spec.site_dims[i];
            }
        }
        Ok(Self {
            spec,
            tol: self.tol,
            site_bases: self.site_bases[first..=last].to_vec(),
            mode_offsets,
        })
    }

    /// Sites `[0, k]`.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        self.sub(0, k)
    }

    /// The two-site block `[n, n+1]`.
    pub fn block(&self, n: usize) -> Result<Self> {
        self.sub(n, n + 1)
    }

    // --- dimension bookkeeping -------------------------------------------

    /// Ambient dimension of everything strictly before site `i`.
    fn dim_before(&self, i: usize) -> usize {
        match self.spec.kind {
            AlgebraKind::Tensor => self.spec.site_dims[..i].iter().product(),
            AlgebraKind::Fermi => 1 << self.mode_offsets[i],
        }
    }

    /// Ambient dimension of everything strictly after site `i`.
    fn dim_after(&self, i: usize) -> usize {
        match self.spec.kind {
            AlgebraKind::Tensor => self.spec.site_dims[i + 1..].iter().product(),
            AlgebraKind::Fermi => {
                let used = self.mode_offsets[i] + self.spec.site_dims[i];
                1 << (self.total_modes() - used)
            }
        }
    }

    /// σ_z string over all modes strictly before site `i` (fermi).
    fn z_string_before(&self, i: usize) -> CMatrix {
        z_string(self.mode_offsets[i])
    }

    /// Local parity unitary of site `i`: σ_z^{⊗ modes} for fermi, identity
    /// for tensor.
    pub fn site_parity_local(&self, i: usize) -> CMatrix {
        match self.spec.kind {
            AlgebraKind::Tensor => identity(self.site_local_dim(i)),
            AlgebraKind::Fermi => z_string(self.spec.site_dims[i]),
        }
    }

    /// Even/odd split of a site-local matrix: `(x + v x v)/2, (x - v x v)/2`
    /// with `v` the local parity unitary. Tensor elements are entirely even.
    pub fn local_parity_split(&self, site: usize, x: &CMatrix) -> (CMatrix, CMatrix) {
        match self.spec.kind {
            AlgebraKind::Tensor => (x.clone(), zeros(x.nrows(), x.ncols())),
            AlgebraKind::Fermi => {
                let v = self.site_parity_local(site);
                let vxv = &v * x * &v;
                ((x + &vxv).scale(0.5), (x - &vxv).scale(0.5))
            }
        }
    }

    // --- embeddings -------------------------------------------------------

    /// Embed a site-local matrix into the ambient algebra. Even parts pad
    /// with identities; odd parts (fermi) carry the σ_z string over all
    /// earlier modes.
    pub fn embed_site(&self, site: usize, x: &CMatrix) -> Result<CMatrix> {
        self.embed_range(site, site, x)
    }

    /// Embed a block-local matrix for the consecutive sites `[first, last]`
    /// into the ambient algebra.
    pub fn embed_range(&self, first: usize, last: usize, x: &CMatrix) -> Result<CMatrix> {
        if first > last || last >= self.sites() {
            return Err(QmError::HorizonExceeded {
                needed: last + 1,
                available: self.sites(),
            });
        }
        let block_dim: usize = (first..=last).map(|i| self.site_local_dim(i)).product();
        let d = check_square(x)?;
        if d != block_dim {
            return Err(QmError::DimensionMismatch {
                context: "embed_range block",
                expected: block_dim,
                got: d,
            });
        }
        let pre = self.dim_before(first);
        let post = self.dim_after(last);
        let i_pre = identity(pre);
        let i_post = identity(post);
        match self.spec.kind {
            AlgebraKind::Tensor => Ok(kron(&kron(&i_pre, x), &i_post)),
            AlgebraKind::Fermi => {
                let block_modes: usize = (first..=last).map(|i| self.spec.site_dims[i]).sum();
                let v = z_string(block_modes);
                let vxv = &v * x * &v;
                let even = (x + &vxv).scale(0.5);
                let odd = (x - &vxv).scale(0.5);
                let mut out = kron(&kron(&i_pre, &even), &i_post);
                if odd.norm() > 0.0 {
                    let z_pre = self.z_string_before(first);
                    out += kron(&kron(&z_pre, &odd), &i_post);
                }
                Ok(out)
            }
        }
    }

    /// Strip the identity on every site outside `[0, last]`: the inverse of
    /// [`Self::embed_range`] for prefix-supported elements. Fails when the
    /// input is not supported on the prefix.
    pub fn restrict_to_prefix(&self, last: usize, x: &CMatrix) -> Result<CMatrix> {
        let d = check_square(x)?;
        if d != self.ambient_dim() {
            return Err(QmError::DimensionMismatch {
                context: "restrict_to_prefix ambient",
                expected: self.ambient_dim(),
                got: d,
            });
        }
        let keep: usize = (0..=last).map(|i| self.site_local_dim(i)).product();
        let rest = d / keep;
        // Partial trace over the trailing factor, normalized.
        let mut y = zeros(keep, keep);
        for p in 0..keep {
            for q in 0..keep {
                let mut s = crate::linalg::ZERO;
                for r in 0..rest {
                    s += x[(p * rest + r, q * rest + r)];
                }
                y[(p, q)] = s / cr(rest as f64);
            }
        }
        let back = kron(&y, &identity(rest));
        let residual = (&back - x).norm();
        if residual > self.tol.eq_scaled(x.norm()) {
            return Err(QmError::OutsideSpan {
                label: format!("prefix[0,{last}]"),
                residual,
                tol: self.tol.eq_scaled(x.norm()),
            });
        }
        Ok(y)
    }

    // --- generators -------------------------------------------------------

    /// Ambient annihilation operator of global mode `j` (fermi lattices).
    pub fn mode_annihilator(&self, j: usize) -> Result<CMatrix> {
        if self.spec.kind != AlgebraKind::Fermi {
            return Err(QmError::FermiOnly);
        }
        let m = self.total_modes();
        if j >= m {
            return Err(QmError::DimensionMismatch {
                context: "mode index",
                expected: m,
                got: j,
            });
        }
        Ok(kron(
            &kron(&z_string(j), &e2(1, 0)),
            &identity(1 << (m - j - 1)),
        ))
    }

    /// Ambient embedded generators of site `i`: matrix units for tensor
    /// sites, `a, a†` per mode for fermion sites. The list is closed under
    /// adjoints.
    pub fn site_generators(&self, i: usize) -> Result<Vec<CMatrix>> {
        match self.spec.kind {
            AlgebraKind::Tensor => {
                let d = self.spec.site_dims[i];
                let units = SpanBasis::full_matrix_units(d);
                units
                    .elements()
                    .iter()
                    .map(|u| self.embed_site(i, u))
                    .collect()
            }
            AlgebraKind::Fermi => {
                let mut out = Vec::new();
                for k in 0..self.spec.site_dims[i] {
                    let j = self.mode_offsets[i] + k;
                    let a = self.mode_annihilator(j)?;
                    out.push(a.adjoint());
                    out.push(a);
                }
                Ok(out)
            }
        }
    }

    /// Ambient embedded generators of every site in `sites`.
    pub fn generators_of(&self, sites: &[usize]) -> Result<Vec<CMatrix>> {
        let mut out = Vec::new();
        for &s in sites {
            out.extend(self.site_generators(s)?);
        }
        Ok(out)
    }

    // --- parity and the grading automorphism ------------------------------

    /// Ambient parity unitary `v_J` for a set of sites: σ_z on every mode of
    /// the sites in `J`, identity elsewhere. For tensor lattices this is the
    /// identity (the grading is trivial).
    pub fn parity_unitary(&self, j_sites: &[usize]) -> Result<CMatrix> {
        let d = self.ambient_dim();
        match self.spec.kind {
            AlgebraKind::Tensor => Ok(identity(d)),
            AlgebraKind::Fermi => {
                let mut in_j = vec![false; self.total_modes()];
                for &s in j_sites {
                    if s >= self.sites() {
                        return Err(QmError::HorizonExceeded {
                            needed: s + 1,
                            available: self.sites(),
                        });
                    }
                    for k in 0..self.spec.site_dims[s] {
                        in_j[self.mode_offsets[s] + k] = true;
                    }
                }
                // Diagonal ±1 matrix: sign flips for each occupied J-mode
                // (occupied = first basis state of the mode factor).
                let m = self.total_modes();
                let mut v = zeros(d, d);
                for idx in 0..d {
                    let mut sign = 1.0;
                    for (mode, flagged) in in_j.iter().enumerate().take(m) {
                        if *flagged {
                            // Bit of `idx` addressing this mode factor: the
                            // first mode owns the most significant bit.
                            let bit = (idx >> (m - 1 - mode)) & 1;
                            if bit == 0 {
                                sign = -sign;
                            }
                        }
                    }
                    v[(idx, idx)] = cr(sign);
                }
                Ok(v)
            }
        }
    }

    /// Validated parity operator for a set of sites.
    pub fn parity_operator(&self, j_sites: &[usize]) -> Result<ParityOperator> {
        let matrix = self.parity_unitary(j_sites)?;
        let tol = &self.tol;
        let sa = (&matrix - matrix.adjoint()).norm();
        let inv = (&matrix * &matrix - identity(matrix.nrows())).norm();
        if sa > tol.eq_scaled(matrix.norm()) || inv > tol.eq_scaled(matrix.norm()) {
            return Err(QmError::StructuralInvariant {
                relation: "parity operator self-adjoint unitary".into(),
                residual: sa.max(inv),
            });
        }
        Ok(ParityOperator {
            sites: j_sites.to_vec(),
            matrix,
        })
    }

    /// Grading automorphism `Θ_J(x) = v_J x v_J` on ambient elements. For
    /// tensor lattices this is the identity map.
    pub fn theta(&self, j_sites: &[usize], x: &CMatrix) -> Result<CMatrix> {
        let d = check_square(x)?;
        if d != self.ambient_dim() {
            return Err(QmError::DimensionMismatch {
                context: "theta ambient",
                expected: self.ambient_dim(),
                got: d,
            });
        }
        check_finite(x)?;
        match self.spec.kind {
            AlgebraKind::Tensor => Ok(x.clone()),
            AlgebraKind::Fermi => {
                let v = self.parity_unitary(j_sites)?;
                Ok(&v * x * &v)
            }
        }
    }

    /// Even projection `(x + Θ_J(x)) / 2`.
    pub fn even_projection(&self, j_sites: &[usize], x: &CMatrix) -> Result<CMatrix> {
        let tx = self.theta(j_sites, x)?;
        Ok((x + &tx).scale(0.5))
    }

    /// All sites, for global parity operations.
    pub fn all_sites(&self) -> Vec<usize> {
        (0..self.sites()).collect()
    }

    // --- product bases ------------------------------------------------------

    /// Ordered product basis over the sites in `sites` (ascending, possibly
    /// scattered), embedded in the ambient algebra. Element `t` is the
    /// ordered product of one local basis element per site; independence is
    /// verified through the span-basis Gram rank.
    pub fn product_basis_over(
        &self,
        sites_in: &[usize],
        variant: SiteBasisVariant,
    ) -> Result<ProductBasis> {
        let mut sites = sites_in.to_vec();
        sites.sort_unstable();
        sites.dedup();
        for &s in &sites {
            if s >= self.sites() {
                return Err(QmError::HorizonExceeded {
                    needed: s + 1,
                    available: self.sites(),
                });
            }
        }
        let d = self.ambient_dim();
        if sites.is_empty() {
            // Empty site set: the scalars.
            let el = identity(d).unscale((d as f64).sqrt());
            let span = SpanBasis::from_orthonormal("product-basis(empty)", vec![el])?;
            return Ok(ProductBasis {
                span: Arc::new(span),
                sites,
                shape: Vec::new(),
                parities: vec![1],
            });
        }
        let site_bases: Vec<SiteBasis> = sites
            .iter()
            .map(|&s| self.site_basis_variant(s, variant))
            .collect::<Result<_>>()?;
        let shape: Vec<usize> = site_bases.iter().map(|b| b.len()).collect();
        let total: usize = shape.iter().product();
        // Embedded per-site elements, reused across tuples.
        let mut embedded: Vec<Vec<CMatrix>> = Vec::with_capacity(sites.len());
        for (pos, &s) in sites.iter().enumerate() {
            let mut per = Vec::with_capacity(site_bases[pos].len());
            for e in site_bases[pos].span().elements() {
                per.push(self.embed_site(s, e)?);
            }
            embedded.push(per);
        }
        let mut elements = Vec::with_capacity(total);
        let mut parities = Vec::with_capacity(total);
        let mut tuple = vec![0usize; sites.len()];
        for _ in 0..total {
            let mut m = embedded[0][tuple[0]].clone();
            let mut parity = site_bases[0].parity(tuple[0]);
            for k in 1..sites.len() {
                m = &m * &embedded[k][tuple[k]];
                parity *= site_bases[k].parity(tuple[k]);
            }
            elements.push(m);
            parities.push(parity);
            // Advance the tuple, last site fastest.
            for k in (0..tuple.len()).rev() {
                tuple[k] += 1;
                if tuple[k] < shape[k] {
                    break;
                }
                tuple[k] = 0;
            }
        }
        let label = format!("product-basis{sites:?}");
        let span = SpanBasis::new(label, elements, &self.tol)?;
        Ok(ProductBasis {
            span: Arc::new(span),
            sites,
            shape,
            parities,
        })
    }

    /// Product basis over the consecutive range `[first, last]` with the
    /// standard per-site bases.
    pub fn product_basis(&self, first: usize, last: usize) -> Result<ProductBasis> {
        if first > last {
            return Err(QmError::EmptyInput("product_basis range"));
        }
        let sites: Vec<usize> = (first..=last).collect();
        self.product_basis_over(&sites, SiteBasisVariant::Standard)
    }

    // --- commutants ---------------------------------------------------------

    /// Structured commutant of the algebra of sites `J` inside the full
    /// lattice algebra (fermion lattices): even elements of the complement
    /// algebra together with `v_J ·` its odd elements.
    pub fn commutant_formula(&self, j_sites: &[usize]) -> Result<SpanBasis> {
        if self.spec.kind != AlgebraKind::Fermi {
            return Err(QmError::FermiOnly);
        }
        let mut j = j_sites.to_vec();
        j.sort_unstable();
        j.dedup();
        for &s in &j {
            if s >= self.sites() {
                return Err(QmError::HorizonExceeded {
                    needed: s + 1,
                    available: self.sites(),
                });
            }
        }
        let complement: Vec<usize> = (0..self.sites()).filter(|s| !j.contains(s)).collect();
        let d = self.ambient_dim();
        if complement.is_empty() {
            let el = identity(d).unscale((d as f64).sqrt());
            return SpanBasis::from_orthonormal("commutant-formula(scalars)", vec![el]);
        }
        let basis = self.product_basis_over(&complement, SiteBasisVariant::Standard)?;
        let v = self.parity_unitary(&j)?;
        let mut elements = Vec::with_capacity(basis.len());
        for i in 0..basis.len() {
            let e = basis.element(i);
            if basis.parity(i) >= 0 {
                elements.push(e.clone());
            } else {
                elements.push(&v * e);
            }
        }
        SpanBasis::new(format!("commutant-formula{j:?}"), elements, &self.tol)
    }

    /// Site-local basis of the admissible range of a transition expectation
    /// into site `n`: everything for tensor lattices and for the first site,
    /// the even part of the site algebra for fermion sites with a nonempty
    /// past.
    pub fn markov_range_basis(&self, n: usize) -> Result<SpanBasis> {
        if n >= self.sites() {
            return Err(QmError::HorizonExceeded {
                needed: n + 1,
                available: self.sites(),
            });
        }
        let sb = self.site_basis(n);
        if self.spec.kind == AlgebraKind::Tensor || n == 0 {
            return SpanBasis::new(
                format!("site-{n}-full"),
                sb.span().elements().to_vec(),
                &self.tol,
            );
        }
        let elements: Vec<CMatrix> = (0..sb.len())
            .filter(|&i| sb.parity(i) >= 0)
            .map(|i| sb.element(i).clone())
            .collect();
        SpanBasis::new(format!("site-{n}-even"), elements, &self.tol)
    }

    // --- construction-time verification --------------------------------------

    fn verify_relations(&self) -> Result<()> {
        match self.spec.kind {
            AlgebraKind::Fermi => self.verify_car(),
            AlgebraKind::Tensor => self.verify_cross_site_commutation(),
        }
    }

    /// `{a_i, a_j} = 0`, `{a_i†, a_j} = δ_ij 1`, and `(a_i)† = a_i†` on the
    /// embedded generators. All pairs up to the full-check cap, adjacent
    /// pairs above it.
    fn verify_car(&self) -> Result<()> {
        let m = self.total_modes();
        let d = self.ambient_dim();
        let ops: Vec<CMatrix> = (0..m)
            .map(|j| self.mode_annihilator(j))
            .collect::<Result<_>>()?;
        let id = identity(d);
        let full = d <= FULL_RELATION_CHECK_CAP;
        let check = |i: usize, j: usize| -> Result<()> {
            let aa = &ops[i] * &ops[j] + &ops[j] * &ops[i];
            if aa.norm() > self.tol.eq_tol {
                return Err(QmError::StructuralInvariant {
                    relation: format!("{{a_{i}, a_{j}}} = 0"),
                    residual: aa.norm(),
                });
            }
            let ad = ops[i].adjoint();
            let mixed = &ad * &ops[j] + &ops[j] * &ad;
            let target = if i == j { id.clone() } else { zeros(d, d) };
            let r = (&mixed - &target).norm();
            if r > self.tol.eq_tol {
                return Err(QmError::StructuralInvariant {
                    relation: format!("{{a_{i}†, a_{j}}} = δ"),
                    residual: r,
                });
            }
            Ok(())
        };
        if full {
            for i in 0..m {
                for j in i..m {
                    check(i, j)?;
                }
            }
        } else {
            for i in 0..m {
                check(i, i)?;
                if i + 1 < m {
                    check(i, i + 1)?;
                }
            }
        }
        Ok(())
    }

    /// Embedded matrix units of distinct tensor sites must commute.
    fn verify_cross_site_commutation(&self) -> Result<()> {
        let n = self.sites();
        if n < 2 {
            return Ok(());
        }
        let d = self.ambient_dim();
        let full = d <= FULL_RELATION_CHECK_CAP;
        let pairs: Vec<(usize, usize)> = if full {
            (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .collect()
        } else {
            (0..n - 1).map(|i| (i, i + 1)).collect()
        };
        for (i, j) in pairs {
            let gi = self.site_generators(i)?;
            let gj = self.site_generators(j)?;
            for a in &gi {
                for b in &gj {
                    let r = (a * b - b * a).norm();
                    if r > self.tol.eq_tol {
                        return Err(QmError::StructuralInvariant {
                            relation: format!("[site {i}, site {j}] = 0"),
                            residual: r,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Self-adjoint unitary implementing a grading automorphism.
#[derive(Debug, Clone)]
pub struct ParityOperator {
    sites: Vec<usize>,
    matrix: CMatrix,
}

impl ParityOperator {
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }
}

/// σ_z^{⊗ k}.
fn z_string(k: usize) -> CMatrix {
    let mut m = identity(1);
    let z = sigma_z();
    for _ in 0..k {
        m = kron(&m, &z);
    }
    m
}

/// Per-mode spanning family as matrices local to a site of `site_modes`
/// modes, for the mode at local position `k`.
fn mode_family_local(site_modes: usize, k: usize, variant: SiteBasisVariant) -> Vec<(CMatrix, i8)> {
    let pre = z_string(k);
    let post = identity(1 << (site_modes - k - 1));
    let a = kron(&kron(&pre, &e2(1, 0)), &post);
    let adag = kron(&kron(&pre, &e2(0, 1)), &post);
    let ipre = identity(1 << k);
    let num = kron(&kron(&ipre, &e2(0, 0)), &post);
    let hole = kron(&kron(&ipre, &e2(1, 1)), &post);
    let one = identity(1 << site_modes);
    match variant {
        SiteBasisVariant::Standard => vec![(one, 1), (a, -1), (adag, -1), (num, 1)],
        SiteBasisVariant::AnnihilatorLed => vec![(a, -1), (adag, -1), (hole, 1), (num, 1)],
    }
}

fn build_site_basis(
    spec: &LatticeSpec,
    site: usize,
    variant: SiteBasisVariant,
    tol: &ToleranceConfig,
) -> Result<SiteBasis> {
    match spec.kind {
        AlgebraKind::Tensor => {
            let d = spec.site_dims[site];
            let span = SpanBasis::full_matrix_units(d);
            let parities = vec![1; span.len()];
            Ok(SiteBasis {
                span: Arc::new(span),
                parities,
                variant,
            })
        }
        AlgebraKind::Fermi => {
            let modes = spec.site_dims[site];
            let families: Vec<Vec<(CMatrix, i8)>> = (0..modes)
                .map(|k| mode_family_local(modes, k, variant))
                .collect();
            let total = 4usize.pow(modes as u32);
            let mut elements = Vec::with_capacity(total);
            let mut parities = Vec::with_capacity(total);
            let mut tuple = vec![0usize; modes];
            for _ in 0..total {
                let mut m = families[0][tuple[0]].0.clone();
                let mut parity = families[0][tuple[0]].1;
                for k in 1..modes {
                    m = &m * &families[k][tuple[k]].0;
                    parity *= families[k][tuple[k]].1;
                }
                elements.push(m);
                parities.push(parity);
                for k in (0..modes).rev() {
                    tuple[k] += 1;
                    if tuple[k] < 4 {
                        break;
                    }
                    tuple[k] = 0;
                }
            }
            let span = SpanBasis::new(format!("fermi-site-{site}-{variant:?}"), elements, tol)?;
            Ok(SiteBasis {
                span: Arc::new(span),
                parities,
                variant,
            })
        }
    }
}
