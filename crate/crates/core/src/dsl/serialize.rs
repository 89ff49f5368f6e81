use std::fmt::Write;

use crate::model::{Catalog, ExpressionNode, Scope, TargetSpec, ValueType};

/// Renders a catalog in the `.kpi` language. Parsing the output yields a
/// structurally equal catalog; comments and layout are not preserved.
pub fn serialize_catalog(catalog: &Catalog) -> String {
    let mut out = String::new();
    if let Some(notes) = &catalog.protocol_notes {
        let _ = writeln!(out, "protocol {}\n", quote(notes));
    }
    for lab in &catalog.labs {
        let _ = writeln!(out, "lab {} {{", lab.id);
        let _ = writeln!(out, "  city: {}", quote(&lab.city));
        let _ = writeln!(out, "  country: {}", quote(&lab.country));
        let _ = writeln!(out, "  groups: {}", string_list(&lab.target_groups));
        if !lab.description.is_empty() {
            let _ = writeln!(out, "  description: {}", quote(&lab.description));
        }
        out.push_str("}\n\n");
    }
    for m in &catalog.measures {
        let _ = writeln!(out, "measure {} {{", m.id);
        let _ = writeln!(out, "  name: {}", quote(&m.name));
        let _ = writeln!(out, "  unit: {}", quote(&m.unit));
        let ty = match m.value_type {
            ValueType::Number => "number".to_string(),
            ValueType::Integer => "integer".to_string(),
            ValueType::Boolean => "boolean".to_string(),
            ValueType::Category => {
                format!("category {}", string_list(m.category_values.as_deref().unwrap_or_default()))
            }
        };
        let _ = writeln!(out, "  type: {ty}");
        let _ = writeln!(out, "  frequency: {}", m.frequency.keyword());
        match &m.scope {
            Scope::Common => out.push_str("  scope: common\n"),
            Scope::Specific { lab_ids } => {
                let _ = writeln!(out, "  scope: specific({})", lab_ids.join(", "));
            }
        }
        out.push_str("}\n\n");
    }
    for r in &catalog.reports {
        let _ = writeln!(out, "report {} {{", r.id);
        let _ = writeln!(out, "  name: {}", quote(&r.name));
        let _ = writeln!(out, "  measures: {}", r.measure_ids.join(", "));
        out.push_str("}\n\n");
    }
    for k in &catalog.kpis {
        let _ = writeln!(out, "kpi {} {{", k.id);
        let _ = writeln!(out, "  name: {}", quote(&k.name));
        let _ = writeln!(out, "  dimension: {}", k.dimension.keyword());
        let _ = writeln!(out, "  created_by: {}", quote(&k.created_by));
        let _ = writeln!(out, "  goal: {}", quote(&k.goal));
        let _ = writeln!(out, "  csf: {}", quote(&k.csf));
        for metric in &k.metrics {
            let _ = writeln!(out, "  metric {} = {}", metric.id, expression_text(&metric.expression));
        }
        let predicates: Vec<String> = k
            .target
            .predicates()
            .iter()
            .map(|p| format!("{} {} {}", p.metric_id, p.comparator.symbol(), number(p.threshold)))
            .collect();
        match &k.target {
            TargetSpec::Single { .. } => {
                let _ = writeln!(out, "  target: {}", predicates.join(", "));
            }
            TargetSpec::Conjunctive { .. } => {
                let _ = writeln!(out, "  target: all({})", predicates.join(", "));
            }
        }
        for action in &k.actions {
            let _ = writeln!(out, "  action {}", quote(&action.description));
        }
        let _ = writeln!(out, "  monitor: {}", k.monitor_frequency.keyword());
        let _ = writeln!(out, "  window: {}", k.window);
        out.push_str("}\n\n");
    }
    if out.ends_with("\n\n") {
        out.pop();
    }
    out
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn string_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| quote(s)).collect();
    format!("[{}]", quoted.join(", "))
}

/// Shortest text that reads back as the same `f64`.
fn number(v: f64) -> String {
    let sign = if v.is_sign_negative() { "-" } else { "" };
    let a = v.abs();
    if a != 0.0 && !(1e-6..1e16).contains(&a) {
        format!("{sign}{a:e}")
    } else {
        format!("{sign}{a}")
    }
}

pub(crate) fn expression_text(expr: &ExpressionNode) -> String {
    let mut out = String::new();
    write_expr(expr, &mut out);
    out
}

fn write_expr(expr: &ExpressionNode, out: &mut String) {
    match expr {
        ExpressionNode::Literal { value } => out.push_str(&number(*value)),
        ExpressionNode::Aggregate { func, measure_id, window } => {
            out.push_str(func.keyword());
            out.push('(');
            out.push_str(measure_id);
            if let Some(w) = window {
                let _ = write!(out, ", window = {w}");
            }
            out.push(')');
        }
        ExpressionNode::Negate { child } => {
            out.push('-');
            let wrap = matches!(**child, ExpressionNode::Literal { .. } | ExpressionNode::Binary { .. });
            write_wrapped(child, wrap, out);
        }
        ExpressionNode::Binary { op, left, right } => {
            let left_wrap = matches!(&**left, ExpressionNode::Binary { op: l, .. } if l.precedence() < op.precedence());
            let right_wrap = matches!(&**right, ExpressionNode::Binary { op: r, .. } if r.precedence() <= op.precedence());
            write_wrapped(left, left_wrap, out);
            let _ = write!(out, " {} ", op.symbol());
            write_wrapped(right, right_wrap, out);
        }
    }
}

fn write_wrapped(expr: &ExpressionNode, wrap: bool, out: &mut String) {
    if wrap {
        out.push('(');
        write_expr(expr, out);
        out.push(')');
    } else {
        write_expr(expr, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    #[test]
    fn empty_catalog_is_empty_text() {
        assert_eq!(serialize_catalog(&Catalog::default()), "");
        assert_eq!(crate::dsl::parse_catalog("").unwrap(), Catalog::default());
    }

    #[test]
    fn single_measure_block_has_all_fields() {
        let catalog = Catalog {
            measures: vec![MeasureDefinition {
                id: "yield_kg".into(),
                name: "Yield".into(),
                unit: "kg".into(),
                value_type: ValueType::Number,
                category_values: None,
                frequency: CollectionFrequency::Weekly,
                scope: Scope::Common,
            }],
            ..Catalog::default()
        };
        assert_eq!(
            serialize_catalog(&catalog),
            "measure yield_kg {\n  name: \"Yield\"\n  unit: \"kg\"\n  type: number\n  frequency: weekly\n  scope: common\n}\n"
        );
    }

    #[test]
    fn expression_parenthesization() {
        use ExpressionNode as E;
        let a = || E::aggregate(AggregateFn::Sum, "a");
        let e = E::binary(BinaryOp::Sub, a(), E::binary(BinaryOp::Sub, a(), E::literal(-2.0)));
        assert_eq!(expression_text(&e), "sum(a) - (sum(a) - -2)");
        let e = E::binary(BinaryOp::Mul, E::binary(BinaryOp::Add, a(), a()), E::negate(E::literal(3.0)));
        assert_eq!(expression_text(&e), "(sum(a) + sum(a)) * -(3)");
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.0, -0.0, 1.5, -2.25, 1e-7, 123456789.125, 1e300, f64::MIN_POSITIVE, 0.1 + 0.2] {
            let text = number(v);
            let back: f64 = text.trim_start_matches('-').parse().unwrap();
            let back = if text.starts_with('-') { -back } else { back };
            assert_eq!(back.to_bits(), v.to_bits(), "{text}");
        }
    }
}
