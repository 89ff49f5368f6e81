use std::collections::BTreeSet;

use serde::Serialize;

use super::{SourceMap, SourceSpan};
use crate::model::{Catalog, IdKind, KpiDefinition, Scope};

/// The largest number of metrics a KPI carries before it is flagged.
pub const MAX_METRICS_PER_KPI: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LintRule {
    TooManyMetrics,
    MixedDimensionsHint,
    UnreferencedMetric,
    UnmeasurableScope,
    MissingCommonUsage,
}

impl LintRule {
    pub fn code(self) -> &'static str {
        match self {
            LintRule::TooManyMetrics => "too_many_metrics",
            LintRule::MixedDimensionsHint => "mixed_dimensions_hint",
            LintRule::UnreferencedMetric => "unreferenced_metric",
            LintRule::UnmeasurableScope => "unmeasurable_scope",
            LintRule::MissingCommonUsage => "missing_common_usage",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            LintRule::TooManyMetrics | LintRule::UnreferencedMetric | LintRule::UnmeasurableScope => Severity::Warning,
            LintRule::MixedDimensionsHint | LintRule::MissingCommonUsage => Severity::Info,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LintFinding {
    pub rule: LintRule,
    pub severity: Severity,
    pub subject_id: String,
    pub span: SourceSpan,
    pub message: String,
}

/// Lints a validated catalog. Spans point at the start of the input; use
/// [`lint_catalog_with_spans`] to position findings in a source file.
pub fn lint_catalog(catalog: &Catalog) -> Vec<LintFinding> {
    lint_catalog_with_spans(catalog, &SourceMap { file: "<catalog>".into(), ..SourceMap::default() })
}

pub fn lint_catalog_with_spans(catalog: &Catalog, map: &SourceMap) -> Vec<LintFinding> {
    let mut findings = Vec::new();
    let mut push = |rule: LintRule, subject_id: String, span: SourceSpan, message: String| {
        findings.push(LintFinding { rule, severity: rule.severity(), subject_id, span, message });
    };

    for kpi in &catalog.kpis {
        let kpi_span = || map.span(IdKind::Kpi, &kpi.id);
        if kpi.metrics.len() > MAX_METRICS_PER_KPI {
            push(
                LintRule::TooManyMetrics,
                kpi.id.clone(),
                kpi_span(),
                format!(
                    "KPI declares {} metrics; more than {MAX_METRICS_PER_KPI} suggests it should be split",
                    kpi.metrics.len()
                ),
            );
        }
        if name_joins_topics(&kpi.name) {
            push(
                LintRule::MixedDimensionsHint,
                kpi.id.clone(),
                kpi_span(),
                format!("KPI name `{}` joins several topics; consider separate KPIs", kpi.name),
            );
        }
        let targeted: BTreeSet<&str> = kpi.target.predicates().iter().map(|p| p.metric_id.as_str()).collect();
        for metric in kpi.metrics.iter().filter(|m| !targeted.contains(m.id.as_str())) {
            push(
                LintRule::UnreferencedMetric,
                format!("{}.{}", kpi.id, metric.id),
                map.metric_span(&kpi.id, &metric.id),
                format!("metric `{}` is not used by the target", metric.id),
            );
        }
        if measurable_labs(catalog, kpi).is_empty() {
            push(
                LintRule::UnmeasurableScope,
                kpi.id.clone(),
                kpi_span(),
                "no declared lab is in scope for every measure this KPI uses".into(),
            );
        }
    }

    let used: BTreeSet<&str> = catalog.kpis.iter().flat_map(|k| k.measure_ids()).collect();
    for m in &catalog.measures {
        if m.scope == Scope::Common && !used.contains(m.id.as_str()) {
            push(
                LintRule::MissingCommonUsage,
                m.id.clone(),
                map.span(IdKind::Measure, &m.id),
                format!("common measure `{}` is collected by every lab but used by no KPI", m.id),
            );
        }
    }
    findings
}

/// Labs that are in scope for every measure `kpi` references.
pub(crate) fn measurable_labs<'a>(catalog: &'a Catalog, kpi: &KpiDefinition) -> Vec<&'a str> {
    catalog
        .labs
        .iter()
        .map(|l| l.id.as_str())
        .filter(|lab| catalog.kpi_applies_to(kpi, lab))
        .collect()
}

fn name_joins_topics(name: &str) -> bool {
    name.contains(',')
        || name.contains('&')
        || name.split_whitespace().any(|w| w.eq_ignore_ascii_case("and"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_catalog;

    fn catalog(metrics: usize, target: &str, extra: &str) -> Catalog {
        let mut src = String::from(
            "lab a { city: \"x\" country: \"y\" groups: [\"g\"] }\n\
             lab b { city: \"x\" country: \"y\" groups: [\"g\"] }\n\
             measure v { name: \"v\" unit: \"u\" type: number frequency: daily scope: common }\n\
             measure sa { name: \"v\" unit: \"u\" type: number frequency: daily scope: specific(a) }\n\
             measure sb { name: \"v\" unit: \"u\" type: number frequency: daily scope: specific(b) }\n",
        );
        src.push_str(extra);
        src.push_str("kpi K1 { name: \"Soil health\" dimension: environmental created_by: \"x\" goal: \"g\" csf: \"c\"\n");
        for i in 1..=metrics {
            src.push_str(&format!("metric m{i} = sum(v)\n"));
        }
        src.push_str(&format!("target: {target} action \"a\" monitor: daily window: 1d }}\n"));
        parse_catalog(&src).unwrap()
    }

    fn rules(c: &Catalog) -> Vec<&'static str> {
        lint_catalog(c).iter().map(|f| f.rule.code()).collect()
    }

    #[test]
    fn five_metrics_is_too_many() {
        let c = catalog(5, "all(m1 > 0, m2 > 0, m3 > 0, m4 > 0, m5 > 0)", "");
        assert_eq!(rules(&c), vec!["too_many_metrics"]);
        let c = catalog(4, "all(m1 > 0, m2 > 0, m3 > 0, m4 > 0)", "");
        assert!(rules(&c).is_empty());
    }

    #[test]
    fn unreferenced_metric() {
        let c = catalog(2, "m1 > 0", "");
        let findings = lint_catalog(&c);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].rule, LintRule::UnreferencedMetric);
        assert_eq!(findings[0].subject_id, "K1.m2");
        assert_eq!(findings[0].severity, Severity::Warning);
    }

    #[test]
    fn unmeasurable_scope_and_common_usage() {
        let mut c = catalog(1, "m1 > 0", "");
        c.kpis[0].metrics[0].expression = crate::model::ExpressionNode::binary(
            crate::model::BinaryOp::Add,
            crate::model::ExpressionNode::aggregate(crate::model::AggregateFn::Sum, "sa"),
            crate::model::ExpressionNode::aggregate(crate::model::AggregateFn::Sum, "sb"),
        );
        assert_eq!(rules(&c), vec!["unmeasurable_scope", "missing_common_usage"]);
    }

    #[test]
    fn compound_names_get_an_info_hint() {
        let mut c = catalog(1, "m1 > 0", "");
        c.kpis[0].name = "Local and nutritious food production".into();
        let findings = lint_catalog(&c);
        assert_eq!(findings[0].rule, LintRule::MixedDimensionsHint);
        assert_eq!(findings[0].severity, Severity::Info);
    }

    #[test]
    fn spans_come_from_source_map() {
        let src = "lab a { city: \"x\" country: \"y\" groups: [\"g\"] }\n\
                   measure v { name: \"v\" unit: \"u\" type: number frequency: daily scope: common }\n";
        let parsed = crate::dsl::parse_catalog_file("f.kpi", src).unwrap();
        let findings = lint_catalog_with_spans(&parsed.catalog, &parsed.source_map);
        assert_eq!(findings[0].span.to_string(), "f.kpi:2:9");
    }
}
