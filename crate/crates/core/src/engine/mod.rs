//! KPI evaluation: aggregation of measure series over windows, metric
//! expressions, conjunctive targets and the action trigger rule.
//!
//! Windows are half-open, `(start, end]`. Missing data is a value
//! (`None` / `insufficient_data`), never an error, and it is absorbing
//! through arithmetic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{
    AggregateFn, BinaryOp, Catalog, Duration, EvaluationResult, ExpressionNode, KpiDefinition, KpiStatus,
    MetricValue, Observation, PredicateOutcome, TargetSpec,
};
use crate::time::{serde_ts, Timestamp};

/// Upper bound on the number of instants a stepped series may request.
pub const MAX_SERIES_POINTS: usize = 10_000;

/// Read access to ingested observations.
pub trait ObservationSource {
    /// Every observation of `measure_id` at `lab_id`, ascending by timestamp.
    fn series(&self, lab_id: &str, measure_id: &str) -> &[Observation];
}

/// Observations of one series with `start < timestamp <= end`.
pub fn window_slice(series: &[Observation], start: Timestamp, end: Timestamp) -> &[Observation] {
    let lo = series.partition_point(|o| o.timestamp <= start);
    let hi = series.partition_point(|o| o.timestamp <= end);
    if lo >= hi {
        &[]
    } else {
        &series[lo..hi]
    }
}

/// An in-memory observation source, mostly for tests and tooling.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    series: BTreeMap<(String, String), Vec<Observation>>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts after any observation with the same timestamp.
    pub fn insert(&mut self, obs: Observation) {
        let series = self.series.entry((obs.lab_id.clone(), obs.measure_id.clone())).or_default();
        let at = series.partition_point(|o| o.timestamp <= obs.timestamp);
        series.insert(at, obs);
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Extend<Observation> for MemorySource {
    fn extend<T: IntoIterator<Item = Observation>>(&mut self, iter: T) {
        for obs in iter {
            self.insert(obs);
        }
    }
}

impl ObservationSource for MemorySource {
    fn series(&self, lab_id: &str, measure_id: &str) -> &[Observation] {
        self.series
            .get(&(lab_id.to_string(), measure_id.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("unknown KPI `{0}`")]
    UnknownKpi(String),
    #[error("unknown lab `{0}`")]
    UnknownLab(String),
    #[error("unknown metric `{metric}` in KPI `{kpi}`")]
    UnknownMetric { kpi: String, metric: String },
    #[error("lab `{lab}` is out of scope for KPI `{kpi}` (measure `{measure}` is not collected there)")]
    LabOutOfScope { kpi: String, lab: String, measure: String },
    #[error("invalid range: `from` must not be after `to`")]
    InvalidRange,
    #[error("series would have more than {MAX_SERIES_POINTS} points")]
    TooManyPoints,
    #[error("time arithmetic left the supported range")]
    TimeOutOfRange,
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::UnknownKpi(_) => "unknown_kpi",
            EvalError::UnknownLab(_) => "unknown_lab",
            EvalError::UnknownMetric { .. } => "unknown_metric",
            EvalError::LabOutOfScope { .. } => "lab_out_of_scope",
            EvalError::InvalidRange => "invalid_range",
            EvalError::TooManyPoints => "too_many_points",
            EvalError::TimeOutOfRange => "invalid_range",
        }
    }
}

/// Applies an aggregation to observations of one measure at one lab,
/// sorted by timestamp. `count` of nothing is 0; every other function
/// needs at least one observation.
pub fn aggregate(func: AggregateFn, observations: &[Observation]) -> Option<f64> {
    if func == AggregateFn::Count {
        return Some(observations.len() as f64);
    }
    let values: Option<Vec<f64>> = observations.iter().map(|o| o.value.as_f64()).collect();
    let values = values?;
    let (&last, _) = values.split_last()?;
    Some(match func {
        AggregateFn::Sum => values.iter().sum(),
        AggregateFn::Avg => values.iter().sum::<f64>() / values.len() as f64,
        AggregateFn::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        AggregateFn::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggregateFn::Last => last,
        AggregateFn::Count => unreachable!(),
    })
}

/// `(start, end]`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    #[serde(with = "serde_ts")]
    pub start: Timestamp,
    #[serde(with = "serde_ts")]
    pub end: Timestamp,
}

impl Window {
    /// The window of length `length` ending at `end`.
    pub fn ending_at(end: Timestamp, length: Duration) -> Result<Self, EvalError> {
        let start = length.before(end).ok_or(EvalError::TimeOutOfRange)?;
        Ok(Window { start, end })
    }

    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start < ts && ts <= self.end
    }
}

/// The outcome of evaluating an expression: a finite number, or `None`
/// with notes explaining arithmetic failures.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluated {
    pub value: Option<f64>,
    pub notes: Vec<String>,
}

/// Evaluates `expr` for one lab. Each aggregate reads the observations
/// inside `window`, or inside its own window override ending at
/// `window.end`.
pub fn eval_expression(expr: &ExpressionNode, source: &impl ObservationSource, lab_id: &str, window: Window) -> Evaluated {
    let mut notes = Vec::new();
    let value = eval_node(expr, source, lab_id, window, &mut notes);
    Evaluated { value, notes }
}

fn eval_node(
    expr: &ExpressionNode,
    source: &impl ObservationSource,
    lab_id: &str,
    window: Window,
    notes: &mut Vec<String>,
) -> Option<f64> {
    let value = match expr {
        ExpressionNode::Literal { value } => Some(*value),
        ExpressionNode::Aggregate { func, measure_id, window: own } => {
            let w = match own {
                Some(length) => match Window::ending_at(window.end, *length) {
                    Ok(w) => w,
                    Err(_) => {
                        notes.push(format!("window {length} for `{measure_id}` is out of range"));
                        return None;
                    }
                },
                None => window,
            };
            aggregate(*func, window_slice(source.series(lab_id, measure_id), w.start, w.end))
        }
        ExpressionNode::Negate { child } => eval_node(child, source, lab_id, window, notes).map(|v| -v),
        ExpressionNode::Binary { op, left, right } => {
            let l = eval_node(left, source, lab_id, window, notes);
            let r = eval_node(right, source, lab_id, window, notes);
            match (l, r) {
                (Some(l), Some(r)) => match op {
                    BinaryOp::Add => Some(l + r),
                    BinaryOp::Sub => Some(l - r),
                    BinaryOp::Mul => Some(l * r),
                    BinaryOp::Div if r == 0.0 => {
                        notes.push("division by zero".to_string());
                        None
                    }
                    BinaryOp::Div => Some(l / r),
                },
                _ => None,
            }
        }
    };
    match value {
        Some(v) if !v.is_finite() => {
            notes.push("result is not a finite number".to_string());
            None
        }
        other => other,
    }
}

fn combine(a: PredicateOutcome, b: PredicateOutcome) -> PredicateOutcome {
    use PredicateOutcome::*;
    match (a, b) {
        (Fail, _) | (_, Fail) => Fail,
        (Unknown, _) | (_, Unknown) => Unknown,
        _ => Pass,
    }
}

/// Decides a target. A predicate is unknown when its metric has no value.
/// Any failing predicate makes the target `not_met` even when others are
/// unknown; all passing makes it `met`; otherwise data is insufficient.
pub fn eval_target(
    target: &TargetSpec,
    metric_values: &BTreeMap<String, MetricValue>,
) -> (KpiStatus, BTreeMap<String, PredicateOutcome>) {
    let mut outcomes: BTreeMap<String, PredicateOutcome> = BTreeMap::new();
    let mut any_fail = false;
    let mut all_pass = true;
    for p in target.predicates() {
        let outcome = match metric_values.get(&p.metric_id).and_then(MetricValue::value) {
            None => PredicateOutcome::Unknown,
            Some(v) if p.comparator.holds(v, p.threshold) => PredicateOutcome::Pass,
            Some(_) => PredicateOutcome::Fail,
        };
        any_fail |= outcome == PredicateOutcome::Fail;
        all_pass &= outcome == PredicateOutcome::Pass;
        outcomes
            .entry(p.metric_id.clone())
            .and_modify(|o| *o = combine(*o, outcome))
            .or_insert(outcome);
    }
    let status = if any_fail {
        KpiStatus::NotMet
    } else if all_pass {
        KpiStatus::Met
    } else {
        KpiStatus::InsufficientData
    };
    (status, outcomes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub kpi_id: String,
    pub lab_id: String,
    #[serde(with = "serde_ts")]
    pub evaluated_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_override: Option<Duration>,
}

impl EvaluationRequest {
    pub fn new(kpi_id: impl Into<String>, lab_id: impl Into<String>, evaluated_at: Timestamp) -> Self {
        EvaluationRequest { kpi_id: kpi_id.into(), lab_id: lab_id.into(), evaluated_at, window_override: None }
    }
}

/// Looks up the KPI and checks the lab may be evaluated against it.
pub fn resolve<'a>(catalog: &'a Catalog, kpi_id: &str, lab_id: &str) -> Result<&'a KpiDefinition, EvalError> {
    let kpi = catalog.kpi(kpi_id).ok_or_else(|| EvalError::UnknownKpi(kpi_id.to_string()))?;
    if catalog.lab(lab_id).is_none() {
        return Err(EvalError::UnknownLab(lab_id.to_string()));
    }
    if let Some(measure) = catalog.out_of_scope_measure(kpi, lab_id) {
        return Err(EvalError::LabOutOfScope {
            kpi: kpi_id.to_string(),
            lab: lab_id.to_string(),
            measure: measure.to_string(),
        });
    }
    Ok(kpi)
}

/// Evaluates one KPI for one lab. Pure: nothing is recorded.
pub fn evaluate(
    request: &EvaluationRequest,
    catalog: &Catalog,
    source: &impl ObservationSource,
) -> Result<EvaluationResult, EvalError> {
    let kpi = resolve(catalog, &request.kpi_id, &request.lab_id)?;
    let window = Window::ending_at(request.evaluated_at, request.window_override.unwrap_or(kpi.window))?;

    let mut metric_values = BTreeMap::new();
    let mut notes = Vec::new();
    for metric in &kpi.metrics {
        let evaluated = eval_expression(&metric.expression, source, &request.lab_id, window);
        notes.extend(evaluated.notes.into_iter().map(|n| format!("metric `{}`: {n}", metric.id)));
        metric_values.insert(metric.id.clone(), MetricValue::from_option(evaluated.value));
    }
    let (status, predicate_outcomes) = eval_target(&kpi.target, &metric_values);
    let triggered_actions = if status == KpiStatus::NotMet { kpi.actions.clone() } else { Vec::new() };

    Ok(EvaluationResult {
        kpi_id: kpi.id.clone(),
        lab_id: request.lab_id.clone(),
        evaluated_at: request.evaluated_at,
        window_start: window.start,
        window_end: window.end,
        metric_values,
        status,
        triggered_actions,
        predicate_outcomes,
        notes,
    })
}

/// Where evaluation results are kept for later audit.
pub trait EvaluationHistory {
    type Error;

    fn record(&self, result: &EvaluationResult) -> Result<(), Self::Error>;
}

#[derive(Debug, thiserror::Error)]
pub enum EvaluateAndRecordError<E> {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("could not record evaluation: {0}")]
    History(E),
}

/// Evaluates and appends the result to `history`.
pub fn evaluate_and_record<H: EvaluationHistory>(
    request: &EvaluationRequest,
    catalog: &Catalog,
    source: &impl ObservationSource,
    history: &H,
) -> Result<EvaluationResult, EvaluateAndRecordError<H::Error>> {
    let result = evaluate(request, catalog, source)?;
    history.record(&result).map_err(EvaluateAndRecordError::History)?;
    Ok(result)
}

/// Instants `from + k * step` that are `<= to`.
pub fn step_instants(from: Timestamp, to: Timestamp, step: Duration) -> Result<Vec<Timestamp>, EvalError> {
    if from > to {
        return Err(EvalError::InvalidRange);
    }
    let mut out = Vec::new();
    for k in 0u32.. {
        match step.after_times(from, k) {
            Some(t) if t <= to => {
                if out.len() == MAX_SERIES_POINTS {
                    return Err(EvalError::TooManyPoints);
                }
                out.push(t);
            }
            _ => break,
        }
    }
    Ok(out)
}

/// One point of a numeric series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    #[serde(with = "serde_ts")]
    pub timestamp: Timestamp,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusPoint {
    #[serde(with = "serde_ts")]
    pub at: Timestamp,
    pub status: KpiStatus,
}

/// KPI status at `from, from + step, ...` up to `to`. Recomputed from the
/// observations; nothing is recorded.
pub fn kpi_status_series(
    catalog: &Catalog,
    source: &impl ObservationSource,
    kpi_id: &str,
    lab_id: &str,
    from: Timestamp,
    to: Timestamp,
    step: Duration,
) -> Result<Vec<StatusPoint>, EvalError> {
    resolve(catalog, kpi_id, lab_id)?;
    step_instants(from, to, step)?
        .into_iter()
        .map(|at| {
            let result = evaluate(&EvaluationRequest::new(kpi_id, lab_id, at), catalog, source)?;
            Ok(StatusPoint { at, status: result.status })
        })
        .collect()
}
