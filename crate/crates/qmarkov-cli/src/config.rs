//! JSON chain specifications and their translation into library objects.
//!
//! Matrices are row-major nested arrays of `[re, im]` pairs. Kernel images
//! and Kraus operators are block-local: a bond-n kernel maps the block
//! algebra at sites (n, n+1) into site n, images indexed by the block
//! product basis (site-n index major, site-(n+1) index minor).

use std::path::Path;

use serde::Deserialize;

use qmarkov::algebra::{AlgebraKind, LatticeSpec, LocalStructure};
use qmarkov::kernel::TransitionExpectation;
use qmarkov::linalg::{literal, CMatrix, ToleranceConfig};
use qmarkov::QmError;

/// Input-side failure: bad file, bad schema, bad dimensions. Always exit 2,
/// with a machine-readable code distinguishing the cause.
#[derive(Debug)]
pub struct InputError {
    pub code: &'static str,
    pub message: String,
}

impl InputError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

/// Library errors raised while interpreting config content keep their
/// closest input-error category.
pub fn input_error(e: QmError) -> InputError {
    let code = match &e {
        QmError::DimensionCap { .. } => "cap",
        QmError::DimensionMismatch { .. }
        | QmError::NotSquare { .. }
        | QmError::HorizonExceeded { .. } => "dimension",
        QmError::Literal(_) => "literal",
        _ => "schema",
    };
    InputError::new(code, e.to_string())
}

/// Property failures are reported as failing checks (exit 1), never as
/// input errors; everything else about a `QmError` is an input problem.
pub fn is_property_failure(e: &QmError) -> bool {
    matches!(
        e,
        QmError::MarkovViolation { .. }
            | QmError::KernelCompatibility { .. }
            | QmError::NotCompletelyPositive { .. }
            | QmError::NoBoundaryFixedPoint { .. }
            | QmError::NotPsd { .. }
            | QmError::NotHermitian { .. }
            | QmError::OutsideSpan { .. }
            | QmError::DegenerateInitialState { .. }
            | QmError::StructuralInvariant { .. }
            | QmError::AmplitudeNotNormalized { .. }
            | QmError::CommutantMembership { .. }
            | QmError::BoundaryFactor { .. }
    )
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    /// One entry per bond, or a single entry replicated across all bonds.
    pub kernels: Vec<KernelConfig>,
    pub initial_state: literal::Rows,
    #[serde(default)]
    pub boundaries: BoundaryConfig,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub kind: LatticeKind,
    /// Tensor: matrix dimension per site. Fermi: mode count per site.
    pub site_dims: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Tensor,
    Fermi,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum KernelConfig {
    /// Block Kraus family: each operator is d_n x (d_n * d_{n+1}).
    Kraus { operators: Vec<literal::Rows> },
    /// Image table over the block product basis.
    Images { images: Vec<literal::Rows> },
    /// Diagonal embedding of a stochastic matrix (tensor lattices).
    Classical { matrix: literal::Rows },
    /// E(x (x) y) = x * tr(psi y).
    ProductState { psi: literal::Rows },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub mode: BoundaryMode,
    /// Site-local boundary elements, required for mode = "user".
    pub elements: Option<Vec<literal::Rows>>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    #[default]
    Trivial,
    Solve,
    User,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    pub eig_tol: Option<f64>,
    pub eq_tol: Option<f64>,
    pub rank_tol: Option<f64>,
}

/// A separate observables file for `eval`: one site-local matrix per site,
/// starting at site 0.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesFile {
    pub observables: Vec<literal::Rows>,
    pub horizon_extension: Option<usize>,
}

pub fn parse_spec(path: &Path) -> Result<RunConfig, InputError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| InputError::new("io", format!("{}: {e}", path.display())))?;
    // serde_json's Display already carries the line/column location.
    serde_json::from_str(&text).map_err(|e| InputError::new("schema", e.to_string()))
}

pub fn parse_observables(path: &Path) -> Result<ObservablesFile, InputError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| InputError::new("io", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| InputError::new("schema", e.to_string()))
}

/// Everything the command drivers need, with kernels built leniently: a
/// range-violating kernel is kept (unchecked constructor) and its violation
/// recorded, so `verify` can report the failure instead of refusing to run.
pub struct Built {
    pub structure: LocalStructure,
    pub kernels: Vec<TransitionExpectation>,
    /// Per bond: residual of the admissible-range violation when the checked
    /// constructor rejected the kernel.
    pub range_violations: Vec<Option<f64>>,
    pub rho0: CMatrix,
    pub boundary_mode: BoundaryMode,
    pub user_boundary: Option<Vec<CMatrix>>,
    pub seed: u64,
    pub tol: ToleranceConfig,
}

pub fn build(config: &RunConfig, seed_override: Option<u64>) -> Result<Built, InputError> {
    let tol = build_tolerances(&config.tolerances)?;
    let kind = match config.lattice.kind {
        LatticeKind::Tensor => AlgebraKind::Tensor,
        LatticeKind::Fermi => AlgebraKind::Fermi,
    };
    let structure = LocalStructure::build(
        LatticeSpec {
            kind,
            site_dims: config.lattice.site_dims.clone(),
        },
        &tol,
    )
    .map_err(input_error)?;
    let bonds = structure.sites().saturating_sub(1);
    if bonds == 0 {
        return Err(InputError::new(
            "dimension",
            "a chain needs at least two sites",
        ));
    }
    if config.kernels.len() != bonds && config.kernels.len() != 1 {
        return Err(InputError::new(
            "dimension",
            format!(
                "expected {bonds} kernels (or a single one to replicate), got {}",
                config.kernels.len()
            ),
        ));
    }
    let mut kernels = Vec::with_capacity(bonds);
    let mut range_violations = Vec::with_capacity(bonds);
    for n in 0..bonds {
        let cfg = if config.kernels.len() == 1 {
            &config.kernels[0]
        } else {
            &config.kernels[n]
        };
        let (kernel, violation) = build_kernel(&structure, n, cfg, &tol)?;
        kernels.push(kernel);
        range_violations.push(violation);
    }
    let rho0 = matrix_from(&config.initial_state)?;
    let d0 = structure.site_local_dim(0);
    if rho0.nrows() != d0 || rho0.ncols() != d0 {
        return Err(InputError::new(
            "dimension",
            format!(
                "initial state is {}x{}, site 0 has dimension {d0}",
                rho0.nrows(),
                rho0.ncols()
            ),
        ));
    }
    let user_boundary = match (&config.boundaries.mode, &config.boundaries.elements) {
        (BoundaryMode::User, Some(rows)) => {
            let mut elems = Vec::with_capacity(rows.len());
            for r in rows {
                elems.push(matrix_from(r)?);
            }
            if elems.len() != structure.sites() {
                return Err(InputError::new(
                    "dimension",
                    format!(
                        "boundary mode 'user' needs {} elements, got {}",
                        structure.sites(),
                        elems.len()
                    ),
                ));
            }
            Some(elems)
        }
        (BoundaryMode::User, None) => {
            return Err(InputError::new(
                "schema",
                "boundary mode 'user' requires 'elements'",
            ));
        }
        (_, Some(_)) => {
            return Err(InputError::new(
                "schema",
                "'elements' is only meaningful with boundary mode 'user'",
            ));
        }
        _ => None,
    };
    Ok(Built {
        structure,
        kernels,
        range_violations,
        rho0,
        boundary_mode: config.boundaries.mode,
        user_boundary,
        seed: seed_override.unwrap_or(config.seed),
        tol,
    })
}

fn build_tolerances(overrides: &ToleranceOverrides) -> Result<ToleranceConfig, InputError> {
    let mut tol = ToleranceConfig::default();
    if let Some(x) = overrides.eig_tol {
        tol.eig_tol = x;
    }
    if let Some(x) = overrides.eq_tol {
        tol.eq_tol = x;
    }
    if let Some(x) = overrides.rank_tol {
        tol.rank_tol = x;
    }
    for (name, v) in [
        ("eig_tol", tol.eig_tol),
        ("eq_tol", tol.eq_tol),
        ("rank_tol", tol.rank_tol),
    ] {
        if !v.is_finite() || v <= 0.0 {
            return Err(InputError::new(
                "schema",
                format!("tolerance {name} must be positive and finite, got {v}"),
            ));
        }
    }
    Ok(tol)
}

fn matrix_from(rows: &literal::Rows) -> Result<CMatrix, InputError> {
    literal::from_rows(rows).map_err(input_error)
}

/// Checked construction first; on a range violation fall back to the
/// unchecked constructor and record the residual for the verify suite.
fn build_kernel(
    structure: &LocalStructure,
    n: usize,
    cfg: &KernelConfig,
    tol: &ToleranceConfig,
) -> Result<(TransitionExpectation, Option<f64>), InputError> {
    match cfg {
        KernelConfig::Kraus { operators } => {
            let mut ops = Vec::with_capacity(operators.len());
            for rows in operators {
                ops.push(matrix_from(rows)?);
            }
            match TransitionExpectation::from_block_kraus(structure, n, &ops, tol) {
                Ok(k) => Ok((k, None)),
                Err(QmError::OutsideSpan { residual, .. }) => {
                    let k = TransitionExpectation::from_block_kraus_unchecked(
                        structure, n, &ops, tol,
                    )
                    .map_err(input_error)?;
                    Ok((k, Some(residual)))
                }
                Err(e) => Err(input_error(e)),
            }
        }
        KernelConfig::Images { images } => {
            let mut ims = Vec::with_capacity(images.len());
            for rows in images {
                ims.push(matrix_from(rows)?);
            }
            match TransitionExpectation::from_images(structure, n, ims.clone(), tol) {
                Ok(k) => Ok((k, None)),
                Err(QmError::OutsideSpan { residual, .. }) => {
                    let k = TransitionExpectation::from_images_unchecked(structure, n, ims, tol)
                        .map_err(input_error)?;
                    Ok((k, Some(residual)))
                }
                Err(e) => Err(input_error(e)),
            }
        }
        KernelConfig::Classical { matrix } => {
            let p = matrix_from(matrix)?;
            TransitionExpectation::classical(structure, n, &p, tol)
                .map(|k| (k, None))
                .map_err(input_error)
        }
        KernelConfig::ProductState { psi } => {
            let psi = matrix_from(psi)?;
            TransitionExpectation::product_state(structure, n, &psi, tol)
                .map(|k| (k, None))
                .map_err(input_error)
        }
    }
}
