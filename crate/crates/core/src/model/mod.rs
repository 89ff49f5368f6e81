//! Domain types for the KPI framework chain: goal and critical success
//! factor, KPI, metric, measure, target and action, plus the lab profiles
//! and observations they are evaluated against.

mod duration;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::{serde_ts, Timestamp};

pub use duration::{Duration, DurationParseError, DurationUnit};
pub use validate::{validate_catalog, CatalogError, IdKind};

/// Upper bound on expression tree depth accepted in a catalog.
pub const MAX_EXPRESSION_DEPTH: usize = 32;

/// Absolute tolerance used by the `==` comparator.
pub const EQ_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabProfile {
    pub id: String,
    pub city: String,
    pub country: String,
    pub target_groups: Vec<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Number,
    Integer,
    Boolean,
    Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionFrequency {
    Daily,
    Weekly,
    Monthly,
    Quarterly,
    PerEvent,
}

impl CollectionFrequency {
    pub const ALL: [CollectionFrequency; 5] = [
        CollectionFrequency::Daily,
        CollectionFrequency::Weekly,
        CollectionFrequency::Monthly,
        CollectionFrequency::Quarterly,
        CollectionFrequency::PerEvent,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            CollectionFrequency::Daily => "daily",
            CollectionFrequency::Weekly => "weekly",
            CollectionFrequency::Monthly => "monthly",
            CollectionFrequency::Quarterly => "quarterly",
            CollectionFrequency::PerEvent => "per_event",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.keyword() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scope {
    Common,
    Specific { lab_ids: Vec<String> },
}

impl Scope {
    pub fn includes(&self, lab_id: &str) -> bool {
        match self {
            Scope::Common => true,
            Scope::Specific { lab_ids } => lab_ids.iter().any(|id| id == lab_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureDefinition {
    pub id: String,
    pub name: String,
    pub unit: String,
    pub value_type: ValueType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_values: Option<Vec<String>>,
    pub frequency: CollectionFrequency,
    pub scope: Scope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTemplate {
    pub id: String,
    pub name: String,
    pub measure_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateFn {
    Sum,
    Avg,
    Min,
    Max,
    Count,
    Last,
}

impl AggregateFn {
    pub const ALL: [AggregateFn; 6] = [
        AggregateFn::Sum,
        AggregateFn::Avg,
        AggregateFn::Min,
        AggregateFn::Max,
        AggregateFn::Count,
        AggregateFn::Last,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            AggregateFn::Sum => "sum",
            AggregateFn::Avg => "avg",
            AggregateFn::Min => "min",
            AggregateFn::Max => "max",
            AggregateFn::Count => "count",
            AggregateFn::Last => "last",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.keyword() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
    #[serde(rename = "/")]
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    /// Binding strength: `*` and `/` bind tighter than `+` and `-`.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ExpressionNode {
    Literal {
        value: f64,
    },
    Aggregate {
        func: AggregateFn,
        measure_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window: Option<Duration>,
    },
    Binary {
        op: BinaryOp,
        left: Box<ExpressionNode>,
        right: Box<ExpressionNode>,
    },
    Negate {
        child: Box<ExpressionNode>,
    },
}

impl ExpressionNode {
    pub fn literal(value: f64) -> Self {
        ExpressionNode::Literal { value }
    }

    pub fn aggregate(func: AggregateFn, measure_id: impl Into<String>) -> Self {
        ExpressionNode::Aggregate { func, measure_id: measure_id.into(), window: None }
    }

    pub fn binary(op: BinaryOp, left: ExpressionNode, right: ExpressionNode) -> Self {
        ExpressionNode::Binary { op, left: Box::new(left), right: Box::new(right) }
    }

    pub fn negate(child: ExpressionNode) -> Self {
        ExpressionNode::Negate { child: Box::new(child) }
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            ExpressionNode::Literal { .. } | ExpressionNode::Aggregate { .. } => 1,
            ExpressionNode::Binary { left, right, .. } => 1 + left.depth().max(right.depth()),
            ExpressionNode::Negate { child } => 1 + child.depth(),
        }
    }

    /// Calls `f` on every aggregate leaf, left to right.
    pub fn visit_aggregates<'a>(&'a self, f: &mut impl FnMut(AggregateFn, &'a str, Option<Duration>)) {
        match self {
            ExpressionNode::Literal { .. } => {}
            ExpressionNode::Aggregate { func, measure_id, window } => f(*func, measure_id, *window),
            ExpressionNode::Binary { left, right, .. } => {
                left.visit_aggregates(f);
                right.visit_aggregates(f);
            }
            ExpressionNode::Negate { child } => child.visit_aggregates(f),
        }
    }

    pub fn measure_ids(&self) -> Vec<&str> {
        let mut ids = Vec::new();
        self.visit_aggregates(&mut |_, id, _| ids.push(id));
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDefinition {
    pub id: String,
    pub expression: ExpressionNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "==")]
    Eq,
}

impl Comparator {
    pub const ALL: [Comparator; 5] =
        [Comparator::Ge, Comparator::Gt, Comparator::Le, Comparator::Lt, Comparator::Eq];

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
            Comparator::Le => "<=",
            Comparator::Lt => "<",
            Comparator::Eq => "==",
        }
    }

    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Ge => value >= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Le => value <= threshold,
            Comparator::Lt => value < threshold,
            Comparator::Eq => (value - threshold).abs() <= EQ_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub metric_id: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Single { predicate: Predicate },
    Conjunctive { predicates: Vec<Predicate> },
}

impl TargetSpec {
    pub fn predicates(&self) -> &[Predicate] {
        match self {
            TargetSpec::Single { predicate } => std::slice::from_ref(predicate),
            TargetSpec::Conjunctive { predicates } => predicates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Economic,
    Social,
    Environmental,
    Technical,
}

impl Dimension {
    pub const ALL: [Dimension; 4] =
        [Dimension::Economic, Dimension::Social, Dimension::Environmental, Dimension::Technical];

    pub fn keyword(self) -> &'static str {
        match self {
            Dimension::Economic => "economic",
            Dimension::Social => "social",
            Dimension::Environmental => "environmental",
            Dimension::Technical => "technical",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.keyword() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiDefinition {
    pub id: String,
    pub name: String,
    pub dimension: Dimension,
    pub created_by: String,
    pub goal: String,
    pub csf: String,
    pub metrics: Vec<MetricDefinition>,
    pub target: TargetSpec,
    pub actions: Vec<ActionSpec>,
    pub monitor_frequency: CollectionFrequency,
    pub window: Duration,
}

impl KpiDefinition {
    pub fn metric(&self, id: &str) -> Option<&MetricDefinition> {
        self.metrics.iter().find(|m| m.id == id)
    }

    /// Distinct measure ids referenced by any metric, in first-use order.
    pub fn measure_ids(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for metric in &self.metrics {
            for id in metric.expression.measure_ids() {
                if !out.contains(&id) {
                    out.push(id);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub labs: Vec<LabProfile>,
    pub measures: Vec<MeasureDefinition>,
    pub reports: Vec<ReportTemplate>,
    pub kpis: Vec<KpiDefinition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_notes: Option<String>,
}

impl Catalog {
    pub fn lab(&self, id: &str) -> Option<&LabProfile> {
        self.labs.iter().find(|l| l.id == id)
    }

    pub fn measure(&self, id: &str) -> Option<&MeasureDefinition> {
        self.measures.iter().find(|m| m.id == id)
    }

    pub fn report(&self, id: &str) -> Option<&ReportTemplate> {
        self.reports.iter().find(|r| r.id == id)
    }

    pub fn kpi(&self, id: &str) -> Option<&KpiDefinition> {
        self.kpis.iter().find(|k| k.id == id)
    }

    /// First specific-scope measure used by `kpi` that excludes `lab_id`.
    pub fn out_of_scope_measure<'a>(&'a self, kpi: &'a KpiDefinition, lab_id: &str) -> Option<&'a str> {
        kpi.measure_ids().into_iter().find(|id| {
            self.measure(id).map(|m| !m.scope.includes(lab_id)).unwrap_or(false)
        })
    }

    pub fn kpi_applies_to(&self, kpi: &KpiDefinition, lab_id: &str) -> bool {
        self.out_of_scope_measure(kpi, lab_id).is_none()
    }
}

/// A typed observation value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Boolean(bool),
    Integer(i64),
    Number(f64),
    Category(String),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Boolean(_) => ValueType::Boolean,
            Value::Integer(_) => ValueType::Integer,
            Value::Number(_) => ValueType::Number,
            Value::Category(_) => ValueType::Category,
        }
    }

    /// Numeric reading; booleans map to 0/1, categories have none.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Boolean(b) => Some(if *b { 1.0 } else { 0.0 }),
            Value::Integer(i) => Some(*i as f64),
            Value::Number(n) => Some(*n),
            Value::Category(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Category(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Form,
    Report,
    File,
}

impl Source {
    pub fn keyword(self) -> &'static str {
        match self {
            Source::Form => "form",
            Source::Report => "report",
            Source::File => "file",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "form" => Some(Source::Form),
            "report" => Some(Source::Report),
            "file" => Some(Source::File),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub measure_id: String,
    pub lab_id: String,
    #[serde(with = "serde_ts")]
    pub timestamp: Timestamp,
    pub value: Value,
    pub uploader_id: String,
    pub source: Source,
    #[serde(with = "serde_ts")]
    pub ingested_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KpiStatus {
    Met,
    NotMet,
    InsufficientData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateOutcome {
    Pass,
    Fail,
    Unknown,
}

/// A metric's computed value, or the marker that the window lacked data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Value { value: f64 },
    Insufficient { status: InsufficientMarker },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsufficientMarker {
    InsufficientData,
}

impl MetricValue {
    pub const INSUFFICIENT: MetricValue =
        MetricValue::Insufficient { status: InsufficientMarker::InsufficientData };

    pub fn from_option(v: Option<f64>) -> Self {
        match v {
            Some(value) => MetricValue::Value { value },
            None => MetricValue::INSUFFICIENT,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value { value } => Some(*value),
            MetricValue::Insufficient { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub kpi_id: String,
    pub lab_id: String,
    #[serde(with = "serde_ts")]
    pub evaluated_at: Timestamp,
    #[serde(with = "serde_ts")]
    pub window_start: Timestamp,
    #[serde(with = "serde_ts")]
    pub window_end: Timestamp,
    pub metric_values: BTreeMap<String, MetricValue>,
    pub status: KpiStatus,
    pub triggered_actions: Vec<ActionSpec>,
    pub predicate_outcomes: BTreeMap<String, PredicateOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}
