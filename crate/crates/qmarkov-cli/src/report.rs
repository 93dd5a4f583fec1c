//! Structured command reports in three renderings.
//!
//! JSON and CSV are byte-deterministic for a fixed config and seed; the wall
//! time is therefore emitted only in md, which is the human-facing format.

use serde::Serialize;

use qmarkov::linalg::{literal, CMatrix, C64};
use qmarkov::QmError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Md,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub pass: bool,
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueRecord {
    pub label: String,
    pub value: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixRecord {
    pub label: String,
    pub rows: literal::Rows,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    pub checks: Vec<CheckRecord>,
    pub values: Vec<ValueRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub matrices: Vec<MatrixRecord>,
    /// Human-format only; excluded from JSON/CSV to keep them deterministic.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

/// JSON cannot carry non-finite numbers; clamp while keeping failure obvious.
fn finite(r: f64) -> f64 {
    if r.is_finite() {
        r
    } else {
        f64::MAX
    }
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            verdict: None,
            checks: Vec::new(),
            values: Vec::new(),
            matrices: Vec::new(),
            wall_time_ms: 0.0,
        }
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, residual: f64) {
        self.check_with(name, pass, residual, None);
    }

    pub fn check_with(
        &mut self,
        name: impl Into<String>,
        pass: bool,
        residual: f64,
        witness: Option<serde_json::Value>,
    ) {
        self.checks.push(CheckRecord {
            name: name.into(),
            pass,
            residual: finite(residual.max(0.0)),
            witness,
        });
    }

    /// A check that could not run at all counts as failed, carrying the
    /// error text and whatever residual the error names.
    pub fn fail_from_error(&mut self, name: impl Into<String>, e: &QmError) {
        self.check_with(
            name,
            false,
            error_residual(e),
            Some(serde_json::json!({ "error": e.to_string() })),
        );
    }

    pub fn value(&mut self, label: impl Into<String>, v: C64) {
        self.values.push(ValueRecord {
            label: label.into(),
            value: [finite(v.re), finite(v.im)],
        });
    }

    pub fn real_value(&mut self, label: impl Into<String>, v: f64) {
        self.values.push(ValueRecord {
            label: label.into(),
            value: [finite(v), 0.0],
        });
    }

    pub fn matrix(&mut self, label: impl Into<String>, m: &CMatrix) {
        self.matrices.push(MatrixRecord {
            label: label.into(),
            rows: literal::to_rows(m),
        });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Concatenate another command's records (used by `report`).
    pub fn absorb(&mut self, other: Report) {
        if other.verdict.is_some() {
            self.verdict = other.verdict;
        }
        self.checks.extend(other.checks);
        self.values.extend(other.values);
        self.matrices.extend(other.matrices);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self)
                    .expect("report serialization is infallible");
                s.push('\n');
                s
            }
            Format::Csv => self.render_csv(),
            Format::Md => self.render_md(),
        }
    }

    fn render_csv(&self) -> String {
        let mut out = String::from("record,name,a,b\n");
        out.push_str(&format!("command,{},,\n", self.command));
        if let Some(v) = &self.verdict {
            out.push_str(&format!("verdict,{v},,\n"));
        }
        for c in &self.checks {
            out.push_str(&format!(
                "check,{},{},{}\n",
                c.name,
                if c.pass { 1 } else { 0 },
                c.residual
            ));
        }
        for v in &self.values {
            out.push_str(&format!("value,{},{},{}\n", v.label, v.value[0], v.value[1]));
        }
        out
    }

    fn render_md(&self) -> String {
        let mut out = format!("# qmarkov {}\n\n", self.command);
        if let Some(v) = &self.verdict {
            out.push_str(&format!("**Verdict: {v}**\n\n"));
        }
        if !self.checks.is_empty() {
            out.push_str("| check | pass | residual |\n|---|---|---|\n");
            for c in &self.checks {
                out.push_str(&format!(
                    "| {} | {} | {:.3e} |\n",
                    c.name,
                    if c.pass { "yes" } else { "NO" },
                    c.residual
                ));
            }
            out.push('\n');
        }
        if !self.values.is_empty() {
            out.push_str("| value | re | im |\n|---|---|---|\n");
            for v in &self.values {
                out.push_str(&format!("| {} | {} | {} |\n", v.label, v.value[0], v.value[1]));
            }
            out.push('\n');
        }
        for m in &self.matrices {
            out.push_str(&format!("**{}**\n\n```\n", m.label));
            for row in &m.rows {
                let cells: Vec<String> = row
                    .iter()
                    .map(|e| format!("{:+.6}{:+.6}i", e[0], e[1]))
                    .collect();
                out.push_str(&cells.join("  "));
                out.push('\n');
            }
            out.push_str("```\n\n");
        }
        out.push_str(&format!("wall time: {:.1} ms\n", self.wall_time_ms));
        out
    }
}

/// Residual-like payload of an error, for failing-check records.
fn error_residual(e: &QmError) -> f64 {
    match e {
        QmError::NotHermitian { asymmetry, .. } => *asymmetry,
        QmError::NotPsd { min_eig } => min_eig.abs(),
        QmError::OutsideSpan { residual, .. } => *residual,
        QmError::StructuralInvariant { residual, .. } => *residual,
        QmError::NotCompletelyPositive { min_eig } => min_eig.abs(),
        QmError::ConditionalExpectationAxiom { residual, .. } => *residual,
        QmError::AmplitudeNotNormalized { residual } => *residual,
        QmError::CommutantMembership { residual } => *residual,
        QmError::MarkovViolation { residual, .. } => *residual,
        QmError::KernelCompatibility { residual } => *residual,
        QmError::NoBoundaryFixedPoint { leading } => (leading - 1.0).abs(),
        QmError::BoundaryFactor { residual } => *residual,
        QmError::DegenerateInitialState { value } => *value,
        _ => f64::MAX,
    }
}
