//! Engine error type.
//!
//! Every variant maps to a stable, machine-readable diagnostic kind (see
//! [`Error::kind`]) which the CLI and HTTP service surface verbatim.

use serde::Serialize;

use crate::expr::Diagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },

    #[error("dangling endpoint: link '{link}' references unknown class '{class}'")]
    DanglingEndpoint { link: String, class: String },

    #[error("inheritance cycle: {}", path.join(" -> "))]
    InheritanceCycle { path: Vec<String> },

    #[error("duplicate name: {scope} '{name}'")]
    DuplicateName { scope: String, name: String },

    #[error("invalid type: {0}")]
    InvalidType(String),

    #[error("invalid cardinality on link '{link}': {message}")]
    InvalidCardinality { link: String, message: String },

    #[error("type mismatch: {class}.{attribute} of object '{object}' expects {expected}")]
    TypeMismatch {
        class: String,
        object: String,
        attribute: String,
        expected: String,
    },

    #[error("unresolved reference: object '{object}' link '{link}' targets unknown id '{target}'")]
    UnresolvedReference {
        object: String,
        link: String,
        target: String,
    },

    #[error("cardinality violation: object '{object}' link '{link}' has {count} target(s)")]
    CardinalityViolation {
        object: String,
        link: String,
        count: usize,
    },

    #[error("unknown class '{0}'")]
    UnknownClass(String),

    #[error("unknown attribute '{attribute}' in class '{class}'")]
    UnknownAttribute { class: String, attribute: String },

    #[error("unknown link '{0}'")]
    UnknownLink(String),

    #[error("unknown object '{id}' in class '{class}'")]
    UnknownObject { class: String, id: String },

    #[error("name collision: '{0}' already exists")]
    NameCollision(String),

    #[error("type closure violation: {0}")]
    ClosureViolation(String),

    #[error("invalid restructure: {0}")]
    InvalidRestructure(String),

    #[error("formula syntax error at position {position}: {message}")]
    FormulaSyntax { position: usize, message: String },

    #[error("unknown operator '{0}'")]
    UnknownOperator(String),

    #[error("arity violation: '{operator}' expects {expected} operand(s), got {found}")]
    Arity {
        operator: String,
        expected: String,
        found: usize,
    },

    #[error("formula validation failed: {}", diagnostics.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
    Validation { diagnostics: Vec<Diagnostic> },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("division by zero")]
    DivisionByZero,

    #[error("absent operand: {0}")]
    AbsentOperand(String),

    #[error("attribute {class}.{attribute} cannot be historized: {reason}")]
    NotHistorizable {
        class: String,
        attribute: String,
        reason: String,
    },

    #[error("class '{0}' is not historized")]
    NotHistorized(String),

    #[error(
        "disjointness violation: class '{class}' already belongs to environment '{environment}'"
    )]
    EnvironmentOverlap { class: String, environment: String },

    #[error("endpoint violation: link '{link}' endpoint '{class}' lies outside the environment")]
    EnvironmentEndpoint { link: String, class: String },

    #[error("unknown environment '{0}'")]
    UnknownEnvironment(String),

    #[error("out-of-order run: {requested} is not later than previous run {previous}")]
    OutOfOrderRun { previous: String, requested: String },

    #[error("class '{0}' is not a representative class")]
    NotRepresentative(String),

    #[error("mart already has fact class '{0}'")]
    FactExists(String),

    #[error("mart has no fact class")]
    NoFact,

    #[error("class '{class}' is not dependent on '{representative}'")]
    NotDependent {
        class: String,
        representative: String,
    },

    #[error("attribute {class}.{attribute} is not date or address typed")]
    NotDateOrAddress { class: String, attribute: String },

    #[error("complex type not allowed: {0}")]
    ComplexType(String),

    #[error("empty sample")]
    EmptySample,

    #[error("hierarchy cycle: {}", path.join(" => "))]
    HierarchyCycle { path: Vec<String> },

    #[error("hierarchical dependency {from} => {to} does not hold: {reason}")]
    DependencyViolation {
        from: String,
        to: String,
        reason: String,
    },

    #[error("ambiguous linkage: {0}")]
    AmbiguousLinkage(String),

    #[error("unknown mart '{0}'")]
    UnknownMart(String),

    #[error("definition is not valid: {0}")]
    Unvalidated(String),

    #[error("stale version: expected {expected}, project is at {actual}")]
    StaleVersion { expected: u64, actual: u64 },

    #[error("writer busy: another mutation is in progress")]
    WriterBusy,

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),

    #[error("source hash mismatch: project expects {expected}, found {actual}")]
    SourceHashMismatch { expected: String, actual: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable kind, used in CLI and HTTP diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse-error",
            Error::DanglingEndpoint { .. } => "dangling-endpoint",
            Error::InheritanceCycle { .. } => "inheritance-cycle",
            Error::DuplicateName { .. } => "duplicate-name",
            Error::InvalidType(_) => "invalid-type",
            Error::InvalidCardinality { .. } => "invalid-cardinality",
            Error::TypeMismatch { .. } => "type-mismatch",
            Error::UnresolvedReference { .. } => "unresolved-reference",
            Error::CardinalityViolation { .. } => "cardinality-violation",
            Error::UnknownClass(_) => "unknown-class",
            Error::UnknownAttribute { .. } => "unknown-attribute",
            Error::UnknownLink(_) => "unknown-link",
            Error::UnknownObject { .. } => "unknown-object",
            Error::NameCollision(_) => "name-collision",
            Error::ClosureViolation(_) => "closure-violation",
            Error::InvalidRestructure(_) => "invalid-restructure",
            Error::FormulaSyntax { .. } => "syntax-error",
            Error::UnknownOperator(_) => "unknown-operator",
            Error::Arity { .. } => "arity-violation",
            Error::Validation { .. } => "validation-failed",
            Error::Evaluation(_) => "evaluation-error",
            Error::DivisionByZero => "division-by-zero",
            Error::AbsentOperand(_) => "absent-operand",
            Error::NotHistorizable { .. } => "not-historizable",
            Error::NotHistorized(_) => "not-historized",
            Error::EnvironmentOverlap { .. } => "disjointness-violation",
            Error::EnvironmentEndpoint { .. } => "endpoint-violation",
            Error::UnknownEnvironment(_) => "unknown-environment",
            Error::OutOfOrderRun { .. } => "out-of-order-run",
            Error::NotRepresentative(_) => "not-representative",
            Error::FactExists(_) => "fact-exists",
            Error::NoFact => "no-fact",
            Error::NotDependent { .. } => "not-dependent",
            Error::NotDateOrAddress { .. } => "not-date-or-address",
            Error::ComplexType(_) => "complex-type",
            Error::EmptySample => "empty-sample",
            Error::HierarchyCycle { .. } => "hierarchy-cycle",
            Error::DependencyViolation { .. } => "dependency-violation",
            Error::AmbiguousLinkage(_) => "ambiguous-linkage",
            Error::UnknownMart(_) => "unknown-mart",
            Error::Unvalidated(_) => "unvalidated-definition",
            Error::StaleVersion { .. } => "stale-version",
            Error::WriterBusy => "writer-busy",
            Error::ReplayMismatch(_) => "replay-mismatch",
            Error::SourceHashMismatch { .. } => "source-hash-mismatch",
            Error::Io(_) => "io-error",
        }
    }

    /// Every diagnostic kind the engine can emit.
    pub const KINDS: &'static [&'static str] = &[
        "parse-error",
        "dangling-endpoint",
        "inheritance-cycle",
        "duplicate-name",
        "invalid-type",
        "invalid-cardinality",
        "type-mismatch",
        "unresolved-reference",
        "cardinality-violation",
        "unknown-class",
        "unknown-attribute",
        "unknown-link",
        "unknown-object",
        "name-collision",
        "closure-violation",
        "invalid-restructure",
        "syntax-error",
        "unknown-operator",
        "arity-violation",
        "validation-failed",
        "evaluation-error",
        "division-by-zero",
        "absent-operand",
        "not-historizable",
        "not-historized",
        "disjointness-violation",
        "endpoint-violation",
        "unknown-environment",
        "out-of-order-run",
        "not-representative",
        "fact-exists",
        "no-fact",
        "not-dependent",
        "not-date-or-address",
        "complex-type",
        "empty-sample",
        "hierarchy-cycle",
        "dependency-violation",
        "ambiguous-linkage",
        "unknown-mart",
        "unvalidated-definition",
        "stale-version",
        "writer-busy",
        "replay-mismatch",
        "source-hash-mismatch",
        "io-error",
    ];

    pub fn diagnostic(&self) -> ErrorDiagnostic {
        let diagnostics = match self {
            Error::Validation { diagnostics } => diagnostics.clone(),
            _ => Vec::new(),
        };
        ErrorDiagnostic {
            kind: self.kind(),
            message: self.to_string(),
            diagnostics,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// JSON shape of an error as emitted on CLI stderr and in HTTP 4xx bodies.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorDiagnostic {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_catalog_is_exhaustive_and_unique() {
        let mut seen = std::collections::BTreeSet::new();
        for k in Error::KINDS {
            assert!(seen.insert(*k), "duplicate kind {k}");
        }
        let samples = [
            Error::OutOfOrderRun {
                previous: "a".into(),
                requested: "b".into(),
            },
            Error::EnvironmentOverlap {
                class: "Actes".into(),
                environment: "E".into(),
            },
            Error::WriterBusy,
        ];
        for e in samples {
            assert!(Error::KINDS.contains(&e.kind()));
        }
    }

    #[test]
    fn overlap_message_names_disjointness() {
        let e = Error::EnvironmentOverlap {
            class: "Actes".into(),
            environment: "Soins".into(),
        };
        assert!(e.to_string().contains("disjointness violation"));
        assert!(e.to_string().contains("Actes"));
    }
}
