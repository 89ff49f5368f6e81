//! Cross-lab status matrix and intra-lab metric correlations.
//!
//! Correlation between two metrics says nothing about cause. A negative
//! coefficient only marks a pair worth a closer look.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::{evaluate, eval_expression, resolve, step_instants, EvalError, EvaluationRequest, ObservationSource, SeriesPoint, Window};
use crate::model::{Catalog, Duration, KpiStatus};
use crate::time::{serde_ts, Timestamp};

/// Pairs at or below this coefficient are flagged as candidate trade-offs.
pub const TRADEOFF_THRESHOLD: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Met,
    NotMet,
    InsufficientData,
    NotApplicable,
}

impl From<KpiStatus> for CellStatus {
    fn from(s: KpiStatus) -> Self {
        match s {
            KpiStatus::Met => CellStatus::Met,
            KpiStatus::NotMet => CellStatus::NotMet,
            KpiStatus::InsufficientData => CellStatus::InsufficientData,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kpi_id: String,
    pub statuses: BTreeMap<String, CellStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederationSummary {
    #[serde(with = "serde_ts")]
    pub evaluated_at: Timestamp,
    /// Lab ids in catalog order.
    pub labs: Vec<String>,
    /// One row per KPI, in catalog order.
    pub rows: Vec<SummaryRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Evaluates every KPI for every lab at `evaluated_at`. Labs that do not
/// collect all of a KPI's measures get `not_applicable`.
pub fn federation_summary(catalog: &Catalog, source: &impl ObservationSource, evaluated_at: Timestamp) -> FederationSummary {
    let mut notes = Vec::new();
    let rows = catalog
        .kpis
        .iter()
        .map(|kpi| {
            let statuses = catalog
                .labs
                .iter()
                .map(|lab| {
                    let request = EvaluationRequest::new(&kpi.id, &lab.id, evaluated_at);
                    let status = match evaluate(&request, catalog, source) {
                        Ok(result) => result.status.into(),
                        Err(EvalError::LabOutOfScope { .. }) => CellStatus::NotApplicable,
                        Err(e) => {
                            notes.push(format!("{} at {}: {e}", kpi.id, lab.id));
                            CellStatus::NotApplicable
                        }
                    };
                    (lab.id.clone(), status)
                })
                .collect();
            SummaryRow { kpi_id: kpi.id.clone(), statuses }
        })
        .collect();
    FederationSummary { evaluated_at, labs: catalog.labs.iter().map(|l| l.id.clone()).collect(), rows, notes }
}

/// A metric's value at `from, from + step, ...` up to `to`, each over the
/// KPI's window ending at that instant. Instants without enough data are
/// left out.
#[allow(clippy::too_many_arguments)]
pub fn metric_series(
    catalog: &Catalog,
    source: &impl ObservationSource,
    lab_id: &str,
    kpi_id: &str,
    metric_id: &str,
    from: Timestamp,
    to: Timestamp,
    step: Duration,
) -> Result<Vec<SeriesPoint>, EvalError> {
    let kpi = resolve(catalog, kpi_id, lab_id)?;
    let metric = kpi.metric(metric_id).ok_or_else(|| EvalError::UnknownMetric {
        kpi: kpi_id.to_string(),
        metric: metric_id.to_string(),
    })?;
    let mut out = Vec::new();
    for at in step_instants(from, to, step)? {
        let window = Window::ending_at(at, kpi.window)?;
        if let Some(value) = eval_expression(&metric.expression, source, lab_id, window).value {
            out.push(SeriesPoint { timestamp: at, value });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("series have different lengths ({0} and {1})")]
pub struct LengthMismatch(pub usize, pub usize);

/// Sample Pearson correlation. `None` with fewer than three pairs or when
/// either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, LengthMismatch> {
    if x.len() != y.len() {
        return Err(LengthMismatch(x.len(), y.len()));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if x.len() < 3 || constant(x) || constant(y) {
        return Ok(None);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let denom = (sxx * syy).sqrt();
    if !denom.is_finite() || denom <= 0.0 {
        return Ok(None);
    }
    let r = sxy / denom;
    Ok(r.is_finite().then(|| r.clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetricRef {
    pub kpi_id: String,
    pub metric_id: String,
}

impl MetricRef {
    pub fn new(kpi_id: impl Into<String>, metric_id: impl Into<String>) -> Self {
        MetricRef { kpi_id: kpi_id.into(), metric_id: metric_id.into() }
    }

    /// `KPI.metric`
    pub fn label(&self) -> String {
        format!("{}.{}", self.kpi_id, self.metric_id)
    }
}

impl std::str::FromStr for MetricRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once('.') {
            Some((k, m)) if !k.is_empty() && !m.is_empty() => Ok(MetricRef::new(k, m)),
            _ => Err(format!("`{s}` is not of the form KPI.metric")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffQuery {
    pub lab_id: String,
    pub metrics: Vec<MetricRef>,
    pub from: Timestamp,
    pub to: Timestamp,
    pub step: Duration,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffFlag {
    pub a: String,
    pub b: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffMatrix {
    pub lab_id: String,
    pub window: Window,
    pub sample_step: Duration,
    /// `KPI.metric` labels, in selection order.
    pub metric_ids: Vec<String>,
    /// Instants at which every selected metric had a value.
    pub samples: usize,
    /// `r[i][j]`; `None` where undefined.
    pub r: Vec<Vec<Option<f64>>>,
    /// Pairs `i < j` with `r <= threshold`.
    pub flagged: Vec<TradeoffFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TradeoffError {
    #[error("select at least two metrics")]
    TooFewMetrics,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl TradeoffError {
    pub fn code(&self) -> &'static str {
        match self {
            TradeoffError::TooFewMetrics => "too_few_metrics",
            TradeoffError::Eval(e) => e.code(),
        }
    }
}

/// Pairwise correlations between sampled metric series of one lab,
/// aligned on the instants where every series has a value.
pub fn tradeoffs(catalog: &Catalog, source: &impl ObservationSource, query: &TradeoffQuery) -> Result<TradeoffMatrix, TradeoffError> {
    if query.metrics.len() < 2 {
        return Err(TradeoffError::TooFewMetrics);
    }
    let mut series = Vec::with_capacity(query.metrics.len());
    for m in &query.metrics {
        let points = metric_series(catalog, source, &query.lab_id, &m.kpi_id, &m.metric_id, query.from, query.to, query.step)?;
        series.push(points.into_iter().map(|p| (p.timestamp, p.value)).collect::<BTreeMap<_, _>>());
    }
    let common: BTreeSet<Timestamp> = series[0]
        .keys()
        .filter(|t| series.iter().all(|s| s.contains_key(t)))
        .copied()
        .collect();
    let aligned: Vec<Vec<f64>> = series.iter().map(|s| common.iter().map(|t| s[t]).collect()).collect();

    let labels: Vec<String> = query.metrics.iter().map(MetricRef::label).collect();
    let n = aligned.len();
    let mut r = vec![vec![None; n]; n];
    let mut flagged = Vec::new();
    for i in 0..n {
        for j in i..n {
            let value = if i == j {
                pearson(&aligned[i], &aligned[i]).expect("same length").map(|_| 1.0)
            } else {
                pearson(&aligned[i], &aligned[j]).expect("aligned series have equal length")
            };
            r[i][j] = value;
            r[j][i] = value;
            if let Some(v) = value.filter(|&v| i != j && v <= query.threshold) {
                flagged.push(TradeoffFlag { a: labels[i].clone(), b: labels[j].clone(), r: v });
            }
        }
    }
    Ok(TradeoffMatrix {
        lab_id: query.lab_id.clone(),
        window: Window { start: query.from, end: query.to },
        sample_step: query.step,
        metric_ids: labels,
        samples: common.len(),
        r,
        flagged,
    })
}
