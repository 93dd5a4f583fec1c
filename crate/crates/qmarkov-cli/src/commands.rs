//! Command drivers. Each takes the built configuration and produces a
//! [`Report`].
//!
//! Two failure channels, deliberately kept apart: a chain that violates one
//! of its own contracts (range condition, positivity, fixed-point existence)
//! is a *finding* and becomes a failing check in the report; a config the
//! driver cannot interpret (bad dimensions, unreadable file) is an input
//! error for the caller. The exit code contract downstream is 1 for the
//! first, 2 for the second.

use serde_json::json;

use qmarkov::chain::{BoundarySequence, ChainClass, ChainSpec, CorrelationQuery, normalize_initial};
use qmarkov::cp::SampleConfig;
use qmarkov::kernel::{
    extend_unchecked, umegaki_local, verify_compat_e_e0, verify_markov_property, verify_qce,
};
use qmarkov::linalg::{hs_norm, min_eigenvalue, CMatrix};
use qmarkov::{QmError, Result as QmResult};

use crate::config::{input_error, is_property_failure, BoundaryMode, Built, InputError};
use crate::report::Report;

fn build_boundary(built: &Built) -> QmResult<BoundarySequence> {
    match built.boundary_mode {
        BoundaryMode::Trivial => {
            BoundarySequence::trivial(&built.structure, &built.kernels, &built.tol)
        }
        BoundaryMode::Solve => BoundarySequence::solve_homogeneous(
            &built.structure,
            &built.kernels,
            built.seed,
            &built.tol,
        ),
        BoundaryMode::User => BoundarySequence::user_supplied(
            &built.structure,
            &built.kernels,
            built
                .user_boundary
                .clone()
                .expect("user mode always carries elements after build"),
            &built.tol,
        ),
    }
}

fn make_chain_spec(built: &Built) -> QmResult<ChainSpec> {
    let boundary = build_boundary(built)?;
    ChainSpec::new(
        built.structure.clone(),
        built.kernels.clone(),
        built.rho0.clone(),
        Some(boundary),
    )
}

/// Route an error: property failures become a failing check named `name`,
/// anything else aborts the command as an input error.
fn fail_or_input(report: &mut Report, name: &str, e: QmError) -> Result<(), InputError> {
    if is_property_failure(&e) {
        report.fail_from_error(name, &e);
        Ok(())
    } else {
        Err(input_error(e))
    }
}

/// Full per-bond verification sweep plus boundary and initial-state gates.
pub fn cmd_verify(built: &Built) -> Result<Report, InputError> {
    let mut report = Report::new("verify");
    let tol = &built.tol;
    let structure = &built.structure;

    for (n, kernel) in built.kernels.iter().enumerate() {
        // Recorded at build time when the checked constructor rejected the
        // kernel; repeated here so the report carries the finding.
        if let Some(residual) = built.range_violations[n] {
            report.check_with(
                format!("range-constraint-{n}"),
                false,
                residual,
                Some(json!({ "error": "kernel images leave the admissible range" })),
            );
        }
        match verify_markov_property(kernel, structure, tol) {
            Ok(r) => report.check_with(
                format!("markov-{n}"),
                r.pass,
                r.worst_residual,
                r.offending_index.map(|i| json!({ "offending_basis_index": i })),
            ),
            Err(e) => report.fail_from_error(format!("markov-{n}"), &e),
        }
        match kernel.map().completely_positive(tol) {
            Ok(v) => report.check_with(
                format!("cp-{n}"),
                v.positive,
                (-v.min_eigenvalue).max(0.0),
                Some(json!({ "min_choi_eigenvalue": v.min_eigenvalue })),
            ),
            Err(e) => report.fail_from_error(format!("cp-{n}"), &e),
        }
        let umegaki = umegaki_local(structure, n)
            .and_then(|e0| e0.verify_umegaki(&SampleConfig::with_seed(built.seed), tol));
        match umegaki {
            Ok(r) => {
                let worst = r
                    .checks()
                    .iter()
                    .map(|(_, c)| c.residual)
                    .fold(0.0f64, f64::max);
                let witness = r
                    .first_failure()
                    .map(|(axiom, c)| json!({ "axiom": axiom, "residual": c.residual }));
                report.check_with(format!("umegaki-{n}"), r.pass(), worst, witness);
            }
            Err(e) => report.fail_from_error(format!("umegaki-{n}"), &e),
        }
        match verify_compat_e_e0(kernel, structure, tol) {
            Ok(r) => {
                report.check(format!("compat-e-e0-{n}"), r.compat.pass, r.compat.residual);
                if let Some(ev) = r.evenness {
                    report.check(format!("evenness-{n}"), ev.pass, ev.residual);
                }
            }
            Err(e) => report.fail_from_error(format!("compat-e-e0-{n}"), &e),
        }
        match extend_unchecked(kernel, structure, tol)
            .and_then(|q| verify_qce(&q, structure, tol))
        {
            Ok(r) => {
                for (name, c) in r.checks() {
                    report.check(format!("qce-{name}-{n}"), c.pass, c.residual);
                }
            }
            Err(e) => report.fail_from_error(format!("qce-{n}"), &e),
        }
    }

    match build_boundary(built) {
        Ok(boundary) => {
            for (n, &res) in boundary.martingale_residuals().iter().enumerate() {
                let threshold = tol.eq_scaled(1.0 + hs_norm(boundary.element(n)));
                report.check(format!("martingale-{n}"), res <= threshold, res);
            }
            check_initial_state(&mut report, built, &boundary)?;
        }
        Err(e) => fail_or_input(&mut report, "boundary", e)?,
    }
    Ok(report)
}

/// Mirrors the chain constructor's gates on the initial density so verify
/// reports them instead of refusing to run.
fn check_initial_state(
    report: &mut Report,
    built: &Built,
    boundary: &BoundarySequence,
) -> Result<(), InputError> {
    let tol = &built.tol;
    match min_eigenvalue(&built.rho0, tol) {
        Ok(min) => report.check("initial-psd", min >= -tol.eig_tol, (-min).max(0.0)),
        Err(e) => fail_or_input(report, "initial-psd", e)?,
    }
    let trace = built.rho0.trace();
    if trace.norm() <= tol.eq_tol {
        report.check_with(
            "initial-weight",
            false,
            trace.norm(),
            Some(json!({ "error": "initial state has zero trace" })),
        );
        return Ok(());
    }
    let rho = &built.rho0 / trace;
    match normalize_initial(&rho, boundary.element(0), tol) {
        Ok(ni) => {
            let w = ni.weight();
            report.check_with(
                "initial-weight",
                true,
                0.0,
                Some(json!({ "weight": [w.re, w.im] })),
            );
        }
        Err(e) => report.fail_from_error("initial-weight", &e),
    }
    Ok(())
}

/// Correlation values over horizon extensions 0..=k_max with the
/// stabilization profile. `pass_tol` judges only the tail differences.
pub fn cmd_eval(
    built: &Built,
    observables: Vec<CMatrix>,
    k_max: usize,
    pass_tol: f64,
) -> Result<Report, InputError> {
    let mut report = Report::new("eval");
    let spec = match make_chain_spec(built) {
        Ok(s) => s,
        Err(e) => {
            fail_or_input(&mut report, "chain-valid", e)?;
            return Ok(report);
        }
    };
    report.check("chain-valid", true, 0.0);
    let query = CorrelationQuery {
        observables,
        horizon_extension: 0,
    };
    // Malformed queries (wrong dimensions, horizon past the lattice) are the
    // caller's problem, not the chain's.
    let st = spec
        .stabilization_check(&query, k_max, pass_tol)
        .map_err(input_error)?;
    for (k, v) in st.values.iter().enumerate() {
        report.value(format!("value[k={k}]"), *v);
    }
    for (k, d) in st.diffs.iter().enumerate() {
        report.real_value(format!("diff[{k}->{}]", k + 1), *d);
    }
    report.check("stabilization", st.stable, st.max_tail_diff);
    Ok(report)
}

/// Boundary sequence construction with its validity checks and the elements
/// themselves (plus factors where the factorization succeeded).
pub fn cmd_boundary(built: &Built) -> Result<Report, InputError> {
    let mut report = Report::new("boundary");
    let tol = &built.tol;
    let boundary = match build_boundary(built) {
        Ok(b) => b,
        Err(QmError::NoBoundaryFixedPoint { leading }) => {
            report.check_with(
                "fixed-point",
                false,
                (leading - 1.0).abs(),
                Some(json!({ "leading_eigenvalue": leading })),
            );
            return Ok(report);
        }
        Err(e) => {
            fail_or_input(&mut report, "boundary", e)?;
            return Ok(report);
        }
    };
    if built.boundary_mode == BoundaryMode::Solve {
        report.check("fixed-point", true, 0.0);
    }
    for n in 0..built.structure.sites() {
        let b = boundary.element(n);
        match min_eigenvalue(b, tol) {
            Ok(min) => report.check(format!("psd-{n}"), min >= -tol.eig_tol, (-min).max(0.0)),
            Err(e) => report.fail_from_error(format!("psd-{n}"), &e),
        }
        let fr = boundary.factor_residuals()[n];
        report.check(
            format!("factor-span-{n}"),
            fr <= tol.eq_scaled(1.0 + hs_norm(b)),
            fr,
        );
        report.matrix(format!("b-{n}"), b);
        if let Some(c) = boundary.factor(n) {
            report.matrix(format!("c-{n}"), c);
        }
    }
    for (n, &res) in boundary.martingale_residuals().iter().enumerate() {
        let threshold = tol.eq_scaled(1.0 + hs_norm(boundary.element(n)));
        report.check(format!("martingale-{n}"), res <= threshold, res);
    }
    Ok(report)
}

/// Chain classification. The verdict string is the class name; the exit
/// status downstream treats anything but MarkovState as a failing check.
pub fn cmd_classify(built: &Built, pass_tol: f64) -> Result<Report, InputError> {
    let mut report = Report::new("classify");
    let spec = match make_chain_spec(built) {
        Ok(s) => s,
        Err(e) => {
            fail_or_input(&mut report, "chain-valid", e)?;
            report.verdict = Some("Indeterminate".to_string());
            return Ok(report);
        }
    };
    let cls = spec.classify(None, pass_tol).map_err(input_error)?;
    report.verdict = Some(
        match cls.class {
            ChainClass::MarkovState => "MarkovState",
            ChainClass::MarkovChain => "MarkovChain",
            ChainClass::Indeterminate => "Indeterminate",
        }
        .to_string(),
    );
    report.check(
        "stabilization",
        cls.stabilization_ok,
        cls.stabilization_max,
    );
    for p in &cls.projectivity {
        report.check_with(
            format!("projectivity-{}", p.volume),
            p.pass,
            p.max_residual,
            p.offending_index.map(|i| json!({ "offending_index": i })),
        );
    }
    for c in &cls.compatibility {
        let witness = c.witness.as_ref().map(|w| {
            json!({
                "past_index": w.past_index,
                "site_index": w.site_index,
                "next_index": w.next_index,
                "lhs": [w.lhs.re, w.lhs.im],
                "rhs": [w.rhs.re, w.rhs.im],
            })
        });
        report.check_with(
            format!("compatibility-{}", c.bond),
            c.pass,
            c.max_residual,
            witness,
        );
    }
    if cls.class == ChainClass::Indeterminate {
        let name = cls.failing_check.unwrap_or_else(|| "unknown".to_string());
        report.check_with(
            "classification",
            false,
            f64::MAX,
            Some(json!({ "failing_check": name })),
        );
    }
    Ok(report)
}

/// Everything at once: verify, boundary, classification, and optionally an
/// evaluation sweep.
pub fn cmd_report(
    built: &Built,
    observables: Option<Vec<CMatrix>>,
    k_max: usize,
    pass_tol: f64,
) -> Result<Report, InputError> {
    let mut report = Report::new("report");
    report.absorb(cmd_verify(built)?);
    report.absorb(cmd_boundary(built)?);
    report.absorb(cmd_classify(built, pass_tol)?);
    if let Some(obs) = observables {
        report.absorb(cmd_eval(built, obs, k_max, pass_tol)?);
    }
    report.command = "report".to_string();
    Ok(report)
}

/// Parsed observable literals, validated against the per-site dimensions.
pub fn observables_from_rows(
    built: &Built,
    rows: &[qmarkov::linalg::literal::Rows],
) -> Result<Vec<CMatrix>, InputError> {
    if rows.is_empty() {
        return Err(InputError::new("schema", "observables list is empty"));
    }
    if rows.len() > built.structure.sites() {
        return Err(InputError::new(
            "dimension",
            format!(
                "{} observables on a lattice of {} sites",
                rows.len(),
                built.structure.sites()
            ),
        ));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (site, r) in rows.iter().enumerate() {
        let m = qmarkov::linalg::literal::from_rows(r).map_err(input_error)?;
        let d = built.structure.site_local_dim(site);
        if m.nrows() != d || m.ncols() != d {
            return Err(InputError::new(
                "dimension",
                format!(
                    "observable {site} is {}x{}, site {site} has dimension {d}",
                    m.nrows(),
                    m.ncols()
                ),
            ));
        }
        out.push(m);
    }
    Ok(out)
}
