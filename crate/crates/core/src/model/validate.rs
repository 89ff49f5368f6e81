use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{AggregateFn, Catalog, Scope, TargetSpec, ValueType, MAX_EXPRESSION_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IdKind {
    Lab,
    Measure,
    Report,
    Kpi,
    Metric,
}

impl fmt::Display for IdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdKind::Lab => "lab",
            IdKind::Measure => "measure",
            IdKind::Report => "report",
            IdKind::Kpi => "kpi",
            IdKind::Metric => "metric",
        })
    }
}

/// A violated catalog invariant. `code()` is stable and machine readable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, thiserror::Error)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum CatalogError {
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: IdKind, id: String },
    #[error("invalid {kind} id `{id}`")]
    InvalidId { kind: IdKind, id: String },
    #[error("lab `{lab}` lists no target groups")]
    EmptyTargetGroups { lab: String },
    #[error("measure `{measure}`: category values must be given exactly when the type is category")]
    CategoryValuesMismatch { measure: String },
    #[error("measure `{measure}` has an empty category list")]
    EmptyCategoryValues { measure: String },
    #[error("measure `{measure}` repeats category value `{value}`")]
    DuplicateCategoryValue { measure: String, value: String },
    #[error("measure `{measure}` has a specific scope with no labs")]
    EmptyScope { measure: String },
    #[error("measure `{measure}` is scoped to undeclared lab `{lab}`")]
    UnresolvedScopeLab { measure: String, lab: String },
    #[error("measure `{measure}` lists lab `{lab}` twice in its scope")]
    DuplicateScopeLab { measure: String, lab: String },
    #[error("report `{report}` lists no measures")]
    EmptyReport { report: String },
    #[error("report `{report}` references undeclared measure `{measure}`")]
    UnresolvedReportMeasure { report: String, measure: String },
    #[error("report `{report}` lists measure `{measure}` twice")]
    DuplicateReportMeasure { report: String, measure: String },
    #[error("kpi `{kpi}` declares no metrics")]
    EmptyMetrics { kpi: String },
    #[error("kpi `{kpi}` declares metric `{metric}` twice")]
    DuplicateMetricId { kpi: String, metric: String },
    #[error("kpi `{kpi}` metric `{metric}` references undeclared measure `{measure}`")]
    UnresolvedMeasureRef { kpi: String, metric: String, measure: String },
    #[error("kpi `{kpi}` metric `{metric}` applies `{func:?}` to non-numeric measure `{measure}`; only count is allowed")]
    InvalidAggregate { kpi: String, metric: String, measure: String, func: AggregateFn },
    #[error("kpi `{kpi}` metric `{metric}` expression depth {depth} exceeds {MAX_EXPRESSION_DEPTH}")]
    ExpressionTooDeep { kpi: String, metric: String, depth: usize },
    #[error("kpi `{kpi}` metric `{metric}` contains a non-finite literal")]
    NonFiniteLiteral { kpi: String, metric: String },
    #[error("kpi `{kpi}` has a zero-length duration")]
    InvalidDuration { kpi: String },
    #[error("kpi `{kpi}` target references undeclared metric `{metric}`")]
    UnresolvedMetricRef { kpi: String, metric: String },
    #[error("kpi `{kpi}` conjunctive target needs at least two predicates")]
    ConjunctionTooSmall { kpi: String },
    #[error("kpi `{kpi}` threshold for `{metric}` is not finite")]
    NonFiniteThreshold { kpi: String, metric: String },
    #[error("kpi `{kpi}` declares no actions")]
    EmptyActions { kpi: String },
    #[error("kpi `{kpi}` has an action with an empty description")]
    EmptyActionDescription { kpi: String },
}

impl CatalogError {
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::DuplicateId { .. } => "duplicate_id",
            CatalogError::InvalidId { .. } => "invalid_id",
            CatalogError::EmptyTargetGroups { .. } => "empty_target_groups",
            CatalogError::CategoryValuesMismatch { .. } => "category_values_mismatch",
            CatalogError::EmptyCategoryValues { .. } => "empty_category_values",
            CatalogError::DuplicateCategoryValue { .. } => "duplicate_category_value",
            CatalogError::EmptyScope { .. } => "empty_scope",
            CatalogError::UnresolvedScopeLab { .. } => "unresolved_scope_lab",
            CatalogError::DuplicateScopeLab { .. } => "duplicate_scope_lab",
            CatalogError::EmptyReport { .. } => "empty_report",
            CatalogError::UnresolvedReportMeasure { .. } => "unresolved_report_measure",
            CatalogError::DuplicateReportMeasure { .. } => "duplicate_report_measure",
            CatalogError::EmptyMetrics { .. } => "empty_metrics",
            CatalogError::DuplicateMetricId { .. } => "duplicate_metric_id",
            CatalogError::UnresolvedMeasureRef { .. } => "unresolved_measure_ref",
            CatalogError::InvalidAggregate { .. } => "invalid_aggregate",
            CatalogError::ExpressionTooDeep { .. } => "expression_too_deep",
            CatalogError::NonFiniteLiteral { .. } => "non_finite_literal",
            CatalogError::InvalidDuration { .. } => "invalid_duration",
            CatalogError::UnresolvedMetricRef { .. } => "unresolved_metric_ref",
            CatalogError::ConjunctionTooSmall { .. } => "conjunction_too_small",
            CatalogError::NonFiniteThreshold { .. } => "non_finite_threshold",
            CatalogError::EmptyActions { .. } => "empty_actions",
            CatalogError::EmptyActionDescription { .. } => "empty_action_description",
        }
    }

    /// The kind and id of the top-level declaration the error belongs to.
    pub fn owner(&self) -> (IdKind, &str) {
        use CatalogError::*;
        match self {
            DuplicateId { kind, id } | InvalidId { kind, id } => (*kind, id),
            EmptyTargetGroups { lab } => (IdKind::Lab, lab),
            CategoryValuesMismatch { measure }
            | EmptyCategoryValues { measure }
            | DuplicateCategoryValue { measure, .. }
            | EmptyScope { measure }
            | UnresolvedScopeLab { measure, .. }
            | DuplicateScopeLab { measure, .. } => (IdKind::Measure, measure),
            EmptyReport { report }
            | UnresolvedReportMeasure { report, .. }
            | DuplicateReportMeasure { report, .. } => (IdKind::Report, report),
            EmptyMetrics { kpi }
            | DuplicateMetricId { kpi, .. }
            | UnresolvedMeasureRef { kpi, .. }
            | InvalidAggregate { kpi, .. }
            | ExpressionTooDeep { kpi, .. }
            | NonFiniteLiteral { kpi, .. }
            | InvalidDuration { kpi }
            | UnresolvedMetricRef { kpi, .. }
            | ConjunctionTooSmall { kpi }
            | NonFiniteThreshold { kpi, .. }
            | EmptyActions { kpi }
            | EmptyActionDescription { kpi } => (IdKind::Kpi, kpi),
        }
    }
}

/// `[a-z][a-z0-9_]*`
pub(crate) fn is_lab_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// `[A-Za-z_][A-Za-z0-9_]*`, the lexical identifier of the catalog language.
pub(crate) fn is_identifier(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = BTreeSet::new();
    ids.filter(|id| !seen.insert(*id)).collect()
}

/// Checks every catalog invariant. The result is sorted, so it does not
/// depend on declaration order.
pub fn validate_catalog(catalog: &Catalog) -> Vec<CatalogError> {
    let mut errors = Vec::new();

    let lab_ids: BTreeSet<&str> = catalog.labs.iter().map(|l| l.id.as_str()).collect();
    let measures: BTreeMap<&str, ValueType> =
        catalog.measures.iter().map(|m| (m.id.as_str(), m.value_type)).collect();

    for (kind, ids) in [
        (IdKind::Lab, catalog.labs.iter().map(|l| l.id.as_str()).collect::<Vec<_>>()),
        (IdKind::Measure, catalog.measures.iter().map(|m| m.id.as_str()).collect()),
        (IdKind::Report, catalog.reports.iter().map(|r| r.id.as_str()).collect()),
        (IdKind::Kpi, catalog.kpis.iter().map(|k| k.id.as_str()).collect()),
    ] {
        for id in duplicates(ids.iter().copied()) {
            errors.push(CatalogError::DuplicateId { kind, id: id.to_string() });
        }
        for id in ids {
            let ok = if kind == IdKind::Lab { is_lab_id(id) } else { is_identifier(id) };
            if !ok {
                errors.push(CatalogError::InvalidId { kind, id: id.to_string() });
            }
        }
    }

    for lab in &catalog.labs {
        if lab.target_groups.is_empty() {
            errors.push(CatalogError::EmptyTargetGroups { lab: lab.id.clone() });
        }
    }

    for m in &catalog.measures {
        let measure = || m.id.clone();
        match (&m.category_values, m.value_type) {
            (Some(values), ValueType::Category) => {
                if values.is_empty() {
                    errors.push(CatalogError::EmptyCategoryValues { measure: measure() });
                }
                for v in duplicates(values.iter().map(String::as_str)) {
                    errors.push(CatalogError::DuplicateCategoryValue { measure: measure(), value: v.to_string() });
                }
            }
            (None, ValueType::Category) | (Some(_), _) => {
                errors.push(CatalogError::CategoryValuesMismatch { measure: measure() })
            }
            (None, _) => {}
        }
        if let Scope::Specific { lab_ids: scoped } = &m.scope {
            if scoped.is_empty() {
                errors.push(CatalogError::EmptyScope { measure: measure() });
            }
            for lab in scoped.iter().filter(|l| !lab_ids.contains(l.as_str())) {
                errors.push(CatalogError::UnresolvedScopeLab { measure: measure(), lab: lab.clone() });
            }
            for lab in duplicates(scoped.iter().map(String::as_str)) {
                errors.push(CatalogError::DuplicateScopeLab { measure: measure(), lab: lab.to_string() });
            }
        }
    }

    for r in &catalog.reports {
        if r.measure_ids.is_empty() {
            errors.push(CatalogError::EmptyReport { report: r.id.clone() });
        }
        for id in r.measure_ids.iter().filter(|id| !measures.contains_key(id.as_str())) {
            errors.push(CatalogError::UnresolvedReportMeasure { report: r.id.clone(), measure: id.clone() });
        }
        for id in duplicates(r.measure_ids.iter().map(String::as_str)) {
            errors.push(CatalogError::DuplicateReportMeasure { report: r.id.clone(), measure: id.to_string() });
        }
    }

    for k in &catalog.kpis {
        let kpi = || k.id.clone();
        if k.metrics.is_empty() {
            errors.push(CatalogError::EmptyMetrics { kpi: kpi() });
        }
        for id in duplicates(k.metrics.iter().map(|m| m.id.as_str())) {
            errors.push(CatalogError::DuplicateMetricId { kpi: kpi(), metric: id.to_string() });
        }
        if !k.window.is_valid() {
            errors.push(CatalogError::InvalidDuration { kpi: kpi() });
        }
        for metric in &k.metrics {
            if !is_identifier(&metric.id) {
                errors.push(CatalogError::InvalidId { kind: IdKind::Metric, id: metric.id.clone() });
            }
            let depth = metric.expression.depth();
            if depth > MAX_EXPRESSION_DEPTH {
                errors.push(CatalogError::ExpressionTooDeep { kpi: kpi(), metric: metric.id.clone(), depth });
            }
            if has_non_finite_literal(&metric.expression) {
                errors.push(CatalogError::NonFiniteLiteral { kpi: kpi(), metric: metric.id.clone() });
            }
            metric.expression.visit_aggregates(&mut |func, measure_id, window| {
                if window.is_some_and(|w| !w.is_valid()) {
                    errors.push(CatalogError::InvalidDuration { kpi: kpi() });
                }
                match measures.get(measure_id) {
                    None => errors.push(CatalogError::UnresolvedMeasureRef {
                        kpi: kpi(),
                        metric: metric.id.clone(),
                        measure: measure_id.to_string(),
                    }),
                    Some(ValueType::Boolean | ValueType::Category) if func != AggregateFn::Count => {
                        errors.push(CatalogError::InvalidAggregate {
                            kpi: kpi(),
                            metric: metric.id.clone(),
                            measure: measure_id.to_string(),
                            func,
                        })
                    }
                    Some(_) => {}
                }
            });
        }
        if let TargetSpec::Conjunctive { predicates } = &k.target {
            if predicates.len() < 2 {
                errors.push(CatalogError::ConjunctionTooSmall { kpi: kpi() });
            }
        }
        for p in k.target.predicates() {
            if k.metric(&p.metric_id).is_none() {
                errors.push(CatalogError::UnresolvedMetricRef { kpi: kpi(), metric: p.metric_id.clone() });
            }
            if !p.threshold.is_finite() {
                errors.push(CatalogError::NonFiniteThreshold { kpi: kpi(), metric: p.metric_id.clone() });
            }
        }
        if k.actions.is_empty() {
            errors.push(CatalogError::EmptyActions { kpi: kpi() });
        }
        if k.actions.iter().any(|a| a.description.trim().is_empty()) {
            errors.push(CatalogError::EmptyActionDescription { kpi: kpi() });
        }
    }

    errors.sort();
    errors
}

fn has_non_finite_literal(expr: &super::ExpressionNode) -> bool {
    use super::ExpressionNode::*;
    match expr {
        Literal { value } => !value.is_finite(),
        Aggregate { .. } => false,
        Binary { left, right, .. } => has_non_finite_literal(left) || has_non_finite_literal(right),
        Negate { child } => has_non_finite_literal(child),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn lab(id: &str) -> LabProfile {
        LabProfile {
            id: id.into(),
            city: "City".into(),
            country: "Country".into(),
            target_groups: vec!["elderly".into()],
            description: String::new(),
        }
    }

    fn measure(id: &str, value_type: ValueType) -> MeasureDefinition {
        MeasureDefinition {
            id: id.into(),
            name: id.into(),
            unit: "count".into(),
            value_type,
            category_values: None,
            frequency: CollectionFrequency::Daily,
            scope: Scope::Common,
        }
    }

    fn kpi(id: &str, metrics: Vec<MetricDefinition>, target: TargetSpec) -> KpiDefinition {
        KpiDefinition {
            id: id.into(),
            name: "Name".into(),
            dimension: Dimension::Social,
            created_by: "CKLH".into(),
            goal: "goal".into(),
            csf: "csf".into(),
            metrics,
            target,
            actions: vec![ActionSpec { description: "act".into() }],
            monitor_frequency: CollectionFrequency::Monthly,
            window: Duration::months(1),
        }
    }

    fn pred(metric: &str) -> Predicate {
        Predicate { metric_id: metric.into(), comparator: Comparator::Ge, threshold: 1.0 }
    }

    fn base() -> Catalog {
        Catalog {
            labs: vec![lab("drama")],
            measures: vec![measure("visits", ValueType::Integer)],
            reports: vec![],
            kpis: vec![kpi(
                "K1",
                vec![MetricDefinition {
                    id: "m1".into(),
                    expression: ExpressionNode::aggregate(AggregateFn::Sum, "visits"),
                }],
                TargetSpec::Single { predicate: pred("m1") },
            )],
            protocol_notes: None,
        }
    }

    #[test]
    fn base_catalog_is_valid() {
        assert_eq!(validate_catalog(&base()), vec![]);
    }

    #[test]
    fn predicate_on_undeclared_metric() {
        let mut c = base();
        c.kpis[0].target = TargetSpec::Single { predicate: pred("m9") };
        assert_eq!(
            validate_catalog(&c),
            vec![CatalogError::UnresolvedMetricRef { kpi: "K1".into(), metric: "m9".into() }]
        );
    }

    #[test]
    fn duplicate_measure_id() {
        let mut c = base();
        c.measures.push(measure("visits", ValueType::Number));
        let errors = validate_catalog(&c);
        assert_eq!(errors, vec![CatalogError::DuplicateId { kind: IdKind::Measure, id: "visits".into() }]);
        assert_eq!(errors[0].code(), "duplicate_id");
    }

    #[test]
    fn category_and_boolean_aggregates_restricted_to_count() {
        let mut c = base();
        let mut cat = measure("crop", ValueType::Category);
        cat.category_values = Some(vec!["a".into(), "a".into()]);
        c.measures.push(cat);
        c.measures.push(measure("irrigated", ValueType::Boolean));
        c.kpis[0].metrics.push(MetricDefinition {
            id: "m2".into(),
            expression: ExpressionNode::binary(
                BinaryOp::Add,
                ExpressionNode::aggregate(AggregateFn::Avg, "irrigated"),
                ExpressionNode::aggregate(AggregateFn::Count, "crop"),
            ),
        });
        let codes: Vec<_> = validate_catalog(&c).iter().map(|e| e.code()).collect();
        assert_eq!(codes, vec!["duplicate_category_value", "invalid_aggregate"]);
    }

    #[test]
    fn scope_and_lab_rules() {
        let mut c = base();
        c.labs.push(lab("Bad-Id"));
        c.labs.push(LabProfile { target_groups: vec![], ..lab("empty") });
        c.measures[0].scope = Scope::Specific { lab_ids: vec!["drama".into(), "drama".into(), "nowhere".into()] };
        let codes: Vec<_> = validate_catalog(&c).iter().map(|e| e.code()).collect();
        assert_eq!(codes, vec!["invalid_id", "empty_target_groups", "unresolved_scope_lab", "duplicate_scope_lab"]);
    }

    #[test]
    fn kpi_structure_rules() {
        let mut c = base();
        let k = &mut c.kpis[0];
        k.target = TargetSpec::Conjunctive { predicates: vec![pred("m1")] };
        k.actions.clear();
        k.metrics[0].expression = (0..40).fold(ExpressionNode::literal(f64::NAN), |acc, _| ExpressionNode::negate(acc));
        let codes: Vec<_> = validate_catalog(&c).iter().map(|e| e.code()).collect();
        assert_eq!(codes, vec!["expression_too_deep", "non_finite_literal", "conjunction_too_small", "empty_actions"]);
    }

    #[test]
    fn order_independent() {
        let mut c = base();
        c.labs.push(lab("drama"));
        c.measures.push(measure("x", ValueType::Category));
        c.kpis.push(kpi("K2", vec![], TargetSpec::Single { predicate: pred("zz") }));
        let a = validate_catalog(&c);
        c.labs.reverse();
        c.measures.reverse();
        c.kpis.reverse();
        assert_eq!(a, validate_catalog(&c));
        assert_eq!(a.len(), 4);
    }
}
