//! The `.kpi` catalog language: parser, serializer and lint rules.
//!
//! Line comments start with `#`. A catalog is a sequence of `lab`,
//! `measure`, `report` and `kpi` blocks plus an optional `protocol`
//! string. See `docs/language.md` for the full grammar.

mod lexer;
mod lint;
mod parser;
mod serialize;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::model::{validate_catalog, Catalog, CatalogError, IdKind};

pub use lint::{lint_catalog, lint_catalog_with_spans, LintFinding, LintRule, Severity};
pub use serialize::serialize_catalog;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceSpan {
    pub file: String,
    /// 1-based.
    pub line: u32,
    /// 1-based, counted in characters.
    pub column: u32,
    /// Byte offset of the first character.
    pub offset: usize,
    /// Length in bytes.
    pub length: usize,
}

impl SourceSpan {
    pub fn start_of(file: &str) -> Self {
        SourceSpan { file: file.to_string(), line: 1, column: 1, offset: 0, length: 0 }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseError {
    pub span: SourceSpan,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<Vec<String>>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.span, self.code, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Where each declaration was written. Metrics are keyed as `KPI.metric`.
#[derive(Debug, Clone, Default)]
pub struct SourceMap {
    pub file: String,
    spans: BTreeMap<(IdKind, String), SourceSpan>,
}

impl SourceMap {
    pub fn span(&self, kind: IdKind, id: &str) -> SourceSpan {
        self.spans
            .get(&(kind, id.to_string()))
            .cloned()
            .unwrap_or_else(|| SourceSpan::start_of(&self.file))
    }

    pub fn metric_span(&self, kpi: &str, metric: &str) -> SourceSpan {
        self.spans
            .get(&(IdKind::Metric, format!("{kpi}.{metric}")))
            .cloned()
            .unwrap_or_else(|| self.span(IdKind::Kpi, kpi))
    }

    fn record(&mut self, kind: IdKind, id: String, span: SourceSpan) -> bool {
        use std::collections::btree_map::Entry;
        match self.spans.entry((kind, id)) {
            Entry::Vacant(v) => {
                v.insert(span);
                true
            }
            Entry::Occupied(_) => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedCatalog {
    pub catalog: Catalog,
    pub source_map: SourceMap,
}

/// Parses and validates catalog text. Every violated invariant is reported
/// as a [`ParseError`] positioned at the offending declaration.
pub fn parse_catalog(source: &str) -> Result<Catalog, Vec<ParseError>> {
    parse_catalog_file("<input>", source).map(|p| p.catalog)
}

/// Like [`parse_catalog`], naming `file` in spans and keeping the source map.
pub fn parse_catalog_file(file: &str, source: &str) -> Result<ParsedCatalog, Vec<ParseError>> {
    let (parsed, mut errors) = parser::parse(file, source);
    if !errors.is_empty() {
        return Err(errors);
    }
    for error in validate_catalog(&parsed.catalog) {
        // The parser already reported duplicate declarations with their spans.
        if matches!(error, CatalogError::DuplicateId { .. }) {
            continue;
        }
        errors.push(catalog_error_to_parse_error(&error, &parsed.source_map));
    }
    if errors.is_empty() {
        Ok(parsed)
    } else {
        Err(errors)
    }
}

fn catalog_error_to_parse_error(error: &CatalogError, map: &SourceMap) -> ParseError {
    let span = match error {
        CatalogError::DuplicateMetricId { kpi, metric }
        | CatalogError::UnresolvedMeasureRef { kpi, metric, .. }
        | CatalogError::InvalidAggregate { kpi, metric, .. }
        | CatalogError::ExpressionTooDeep { kpi, metric, .. }
        | CatalogError::NonFiniteLiteral { kpi, metric } => map.metric_span(kpi, metric),
        CatalogError::InvalidId { kind: IdKind::Metric, id } => map.span(IdKind::Metric, id),
        other => {
            let (kind, id) = other.owner();
            map.span(kind, id)
        }
    };
    ParseError { span, code: error.code().to_string(), message: error.to_string(), expected: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_lab_catalog() {
        let c = parse_catalog(r#"lab drama { city: "Drama" country: "Greece" groups: ["women"] }"#).unwrap();
        assert_eq!(c.labs.len(), 1);
        assert_eq!(c.labs[0].target_groups, vec!["women".to_string()]);
        assert!(c.kpis.is_empty());
    }

    #[test]
    fn validation_errors_point_at_declarations() {
        let src = "lab drama { city: \"D\" country: \"G\" groups: [] }\n";
        let errors = parse_catalog(src).unwrap_err();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].code, "empty_target_groups");
        assert_eq!((errors[0].span.line, errors[0].span.column), (1, 5));
    }
}
