use serde::{Deserialize, Serialize};

use crate::model::{Catalog, MeasureDefinition, Observation, Source, Value, ValueType};
use crate::time::{serde_ts, Timestamp};

/// How far ahead of the server clock an observation may be timestamped.
pub const FUTURE_SKEW: chrono::TimeDelta = chrono::TimeDelta::hours(24);

/// A submitted value before it is typed against its measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Bool(bool),
    Integer(i64),
    Number(f64),
    Text(String),
}

impl From<f64> for RawValue {
    fn from(v: f64) -> Self {
        RawValue::Number(v)
    }
}

impl From<i64> for RawValue {
    fn from(v: i64) -> Self {
        RawValue::Integer(v)
    }
}

impl From<bool> for RawValue {
    fn from(v: bool) -> Self {
        RawValue::Bool(v)
    }
}

impl From<&str> for RawValue {
    fn from(v: &str) -> Self {
        RawValue::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationCandidate {
    pub measure_id: String,
    pub lab_id: String,
    #[serde(with = "serde_ts")]
    pub timestamp: Timestamp,
    pub value: RawValue,
    pub uploader_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Locator {
    Row { row: usize },
    Field { field: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    #[serde(flatten)]
    pub locator: Locator,
    pub code: String,
    pub message: String,
}

/// Why a candidate was refused, without a locator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refusal {
    pub code: &'static str,
    pub message: String,
}

impl Refusal {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Refusal { code, message: message.into() }
    }

    pub fn at(self, locator: Locator) -> Rejection {
        Rejection { locator, code: self.code.to_string(), message: self.message }
    }
}

/// Types `raw` against `measure`. Text is read the way the CSV format
/// writes values.
pub fn coerce_value(measure: &MeasureDefinition, raw: &RawValue) -> Result<Value, Refusal> {
    let mismatch = || Refusal::new("type_mismatch", format!("`{}` expects a {} value", measure.id, type_name(measure.value_type)));
    match measure.value_type {
        ValueType::Number => match raw {
            RawValue::Integer(i) => Ok(Value::Number(*i as f64)),
            RawValue::Number(n) if n.is_finite() => Ok(Value::Number(*n)),
            RawValue::Text(t) => match t.trim().parse::<f64>() {
                Ok(n) if n.is_finite() => Ok(Value::Number(n)),
                _ => Err(mismatch()),
            },
            _ => Err(mismatch()),
        },
        ValueType::Integer => match raw {
            RawValue::Integer(i) => Ok(Value::Integer(*i)),
            RawValue::Number(n) => whole(*n).map(Value::Integer).ok_or_else(mismatch),
            RawValue::Text(t) => {
                let t = t.trim();
                t.parse::<i64>()
                    .ok()
                    .or_else(|| t.parse::<f64>().ok().and_then(whole))
                    .map(Value::Integer)
                    .ok_or_else(mismatch)
            }
            RawValue::Bool(_) => Err(mismatch()),
        },
        ValueType::Boolean => match raw {
            RawValue::Bool(b) => Ok(Value::Boolean(*b)),
            RawValue::Text(t) if t == "true" => Ok(Value::Boolean(true)),
            RawValue::Text(t) if t == "false" => Ok(Value::Boolean(false)),
            _ => Err(mismatch()),
        },
        ValueType::Category => match raw {
            RawValue::Text(t) => {
                let allowed = measure.category_values.as_deref().unwrap_or_default();
                if allowed.iter().any(|c| c == t) {
                    Ok(Value::Category(t.clone()))
                } else {
                    Err(Refusal::new(
                        "not_in_category",
                        format!("`{t}` is not one of the categories of `{}`", measure.id),
                    ))
                }
            }
            _ => Err(mismatch()),
        },
    }
}

fn whole(n: f64) -> Option<i64> {
    (n.is_finite() && n.fract() == 0.0 && n.abs() < 9.007_199_254_740_992e15).then_some(n as i64)
}

fn type_name(t: ValueType) -> &'static str {
    match t {
        ValueType::Number => "number",
        ValueType::Integer => "integer",
        ValueType::Boolean => "boolean",
        ValueType::Category => "category",
    }
}

/// Checks a candidate against the catalog and, if it passes, stamps it
/// with `source` and `now` as its ingestion time.
pub fn validate_candidate(
    catalog: &Catalog,
    candidate: &ObservationCandidate,
    source: Source,
    now: Timestamp,
) -> Result<Observation, Refusal> {
    if catalog.lab(&candidate.lab_id).is_none() {
        return Err(Refusal::new("unknown_lab", format!("unknown lab `{}`", candidate.lab_id)));
    }
    let Some(measure) = catalog.measure(&candidate.measure_id) else {
        return Err(Refusal::new("unknown_measure", format!("unknown measure `{}`", candidate.measure_id)));
    };
    if !measure.scope.includes(&candidate.lab_id) {
        return Err(Refusal::new(
            "out_of_scope",
            format!("measure `{}` is not collected by lab `{}`", measure.id, candidate.lab_id),
        ));
    }
    let value = coerce_value(measure, &candidate.value)?;
    if candidate.timestamp > now + FUTURE_SKEW {
        return Err(Refusal::new("future_timestamp", "timestamp is more than 24h in the future"));
    }
    if candidate.uploader_id.trim().is_empty() {
        return Err(Refusal::new("missing_uploader", "uploader_id is required"));
    }
    Ok(Observation {
        measure_id: candidate.measure_id.clone(),
        lab_id: candidate.lab_id.clone(),
        timestamp: crate::time::truncate(candidate.timestamp),
        value,
        uploader_id: candidate.uploader_id.clone(),
        source,
        ingested_at: now,
    })
}

/// Re-checks a stored observation against every observation invariant.
pub fn revalidate(catalog: &Catalog, obs: &Observation) -> Result<(), Refusal> {
    let raw = match &obs.value {
        Value::Boolean(b) => RawValue::Bool(*b),
        Value::Integer(i) => RawValue::Integer(*i),
        Value::Number(n) => RawValue::Number(*n),
        Value::Category(c) => RawValue::Text(c.clone()),
    };
    let candidate = ObservationCandidate {
        measure_id: obs.measure_id.clone(),
        lab_id: obs.lab_id.clone(),
        timestamp: obs.timestamp,
        value: raw,
        uploader_id: obs.uploader_id.clone(),
    };
    let checked = validate_candidate(catalog, &candidate, obs.source, obs.ingested_at)?;
    if checked.value != obs.value {
        return Err(Refusal::new("type_mismatch", "stored value does not match its measure type"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CollectionFrequency, Scope};

    fn measure(value_type: ValueType) -> MeasureDefinition {
        MeasureDefinition {
            id: "m".into(),
            name: "m".into(),
            unit: "u".into(),
            value_type,
            category_values: (value_type == ValueType::Category).then(|| vec!["a".into(), "b".into()]),
            frequency: CollectionFrequency::Daily,
            scope: Scope::Common,
        }
    }

    #[test]
    fn coercion_table() {
        let n = measure(ValueType::Number);
        assert_eq!(coerce_value(&n, &RawValue::Integer(3)), Ok(Value::Number(3.0)));
        assert_eq!(coerce_value(&n, &"2.5".into()), Ok(Value::Number(2.5)));
        assert_eq!(coerce_value(&n, &"NaN".into()).unwrap_err().code, "type_mismatch");
        assert_eq!(coerce_value(&n, &true.into()).unwrap_err().code, "type_mismatch");

        let i = measure(ValueType::Integer);
        assert_eq!(coerce_value(&i, &RawValue::Number(4.0)), Ok(Value::Integer(4)));
        assert_eq!(coerce_value(&i, &"7".into()), Ok(Value::Integer(7)));
        assert_eq!(coerce_value(&i, &RawValue::Number(4.5)).unwrap_err().code, "type_mismatch");

        let b = measure(ValueType::Boolean);
        assert_eq!(coerce_value(&b, &"false".into()), Ok(Value::Boolean(false)));
        assert_eq!(coerce_value(&b, &RawValue::Number(3.5)).unwrap_err().code, "type_mismatch");
        assert_eq!(coerce_value(&b, &"yes".into()).unwrap_err().code, "type_mismatch");

        let c = measure(ValueType::Category);
        assert_eq!(coerce_value(&c, &"a".into()), Ok(Value::Category("a".into())));
        assert_eq!(coerce_value(&c, &"z".into()).unwrap_err().code, "not_in_category");
        assert_eq!(coerce_value(&c, &RawValue::Integer(1)).unwrap_err().code, "type_mismatch");
    }

    #[test]
    fn rejection_wire_shape() {
        let r = Refusal::new("type_mismatch", "bad").at(Locator::Row { row: 4 });
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"row":4,"code":"type_mismatch","message":"bad"}"#);
    }
}
