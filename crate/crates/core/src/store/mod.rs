//! File-backed, append-only observation store.
//!
//! Layout under the store root:
//!
//! ```text
//! labs/<lab_id>.log     one accepted observation per line, see [`log`]
//! evaluations.jsonl     one evaluation result per line
//! index.tsv             per-series counts and time range, rebuilt on open
//! ```
//!
//! Exact duplicates are stored as submitted. Corrections are made by
//! submitting a later observation; nothing is ever rewritten.

pub mod coverage;
pub mod csv;
pub mod log;
pub mod validate;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::engine::{window_slice, EvaluationHistory, ObservationSource, SeriesPoint};
use crate::model::{Catalog, EvaluationResult, Observation, Source, ValueType};
use crate::time::{format_timestamp, parse_timestamp, serde_ts, Timestamp};

pub use coverage::{CoverageEntry, CoverageReport, Period};
pub use validate::{Locator, ObservationCandidate, RawValue, Rejection};

use validate::{coerce_value, validate_candidate, Refusal};

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

#[derive(Clone)]
pub struct StoreOptions {
    /// Flush appended records to disk before acknowledging them.
    pub sync: bool,
    /// Source of ingestion times.
    pub clock: Clock,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { sync: true, clock: Arc::new(crate::time::now) }
    }
}

impl std::fmt::Debug for StoreOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreOptions").field("sync", &self.sync).finish_non_exhaustive()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Corrupt { path: PathBuf, line: usize, message: String },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("unknown report template `{0}`")]
    UnknownReportTemplate(String),
    #[error("report submission has no values")]
    EmptySubmission,
    #[error(transparent)]
    MalformedHeader(#[from] csv::MalformedHeader),
    #[error("store unavailable: {0}")]
    Unavailable(#[from] StoreError),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::UnknownReportTemplate(_) => "unknown_report_template",
            IngestError::EmptySubmission => "empty_submission",
            IngestError::MalformedHeader(_) => "malformed_header",
            IngestError::Unavailable(_) => "store_unavailable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("unknown lab `{0}`")]
    UnknownLab(String),
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
    #[error("measure `{0}` holds categories and cannot be plotted")]
    CategoryNotPlottable(String),
    #[error("invalid range: `from` must not be after `to`")]
    InvalidRange,
    #[error("period has more than {max} buckets for measure `{0}`", max = coverage::MAX_BUCKETS)]
    TooManyBuckets(String),
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::UnknownLab(_) => "unknown_lab",
            QueryError::UnknownMeasure(_) => "unknown_measure",
            QueryError::CategoryNotPlottable(_) => "category_not_plottable",
            QueryError::InvalidRange | QueryError::TooManyBuckets(_) => "invalid_range",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSubmission {
    pub report_id: String,
    pub lab_id: String,
    #[serde(with = "serde_ts")]
    pub timestamp: Timestamp,
    pub values: std::collections::BTreeMap<String, RawValue>,
    pub uploader_id: String,
}

/// An immutable view of every accepted observation.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    series: HashMap<(String, String), Arc<Vec<Observation>>>,
    len: usize,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Every observation, grouped by series.
    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.series.values().flat_map(|s| s.iter())
    }

    fn insert(&mut self, obs: Observation) {
        let series = self.series.entry((obs.lab_id.clone(), obs.measure_id.clone())).or_default();
        let series = Arc::make_mut(series);
        let key = (obs.timestamp, obs.ingested_at);
        let at = series.partition_point(|o| (o.timestamp, o.ingested_at) <= key);
        series.insert(at, obs);
        self.len += 1;
    }
}

impl ObservationSource for Snapshot {
    fn series(&self, lab_id: &str, measure_id: &str) -> &[Observation] {
        self.series
            .get(&(lab_id.to_string(), measure_id.to_string()))
            .map(|s| s.as_slice())
            .unwrap_or(&[])
    }
}

struct LabLog {
    path: PathBuf,
    file: Option<File>,
}

pub struct Store {
    root: PathBuf,
    catalog: Arc<Catalog>,
    options: StoreOptions,
    snapshot: RwLock<Arc<Snapshot>>,
    logs: Mutex<HashMap<String, Arc<Mutex<LabLog>>>>,
    history: Mutex<File>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish_non_exhaustive()
    }
}

const HISTORY_FILE: &str = "evaluations.jsonl";
const INDEX_FILE: &str = "index.tsv";

impl Store {
    pub fn open(root: impl Into<PathBuf>, catalog: Arc<Catalog>) -> Result<Self, StoreError> {
        Self::open_with(root, catalog, StoreOptions::default())
    }

    /// Opens or creates a store and replays its logs. A final line without
    /// its newline is the remains of an interrupted append and is cut off;
    /// any other unreadable line is reported as corruption.
    pub fn open_with(root: impl Into<PathBuf>, catalog: Arc<Catalog>, options: StoreOptions) -> Result<Self, StoreError> {
        let root = root.into();
        let labs_dir = root.join("labs");
        fs::create_dir_all(&labs_dir).map_err(|e| StoreError::io(&labs_dir, e))?;

        let mut paths = Vec::new();
        for entry in fs::read_dir(&labs_dir).map_err(|e| StoreError::io(&labs_dir, e))? {
            let path = entry.map_err(|e| StoreError::io(&labs_dir, e))?.path();
            if path.extension().is_some_and(|x| x == "log") {
                paths.push(path);
            }
        }
        paths.sort();

        let mut observations = Vec::new();
        for path in &paths {
            replay_log(path, &catalog, &mut observations)?;
        }
        // Stable sort keeps file order for equal keys.
        observations.sort_by_key(|o| (o.timestamp, o.ingested_at));
        let mut snapshot = Snapshot::default();
        for obs in observations {
            let series = snapshot.series.entry((obs.lab_id.clone(), obs.measure_id.clone())).or_default();
            Arc::make_mut(series).push(obs);
            snapshot.len += 1;
        }

        let history_path = root.join(HISTORY_FILE);
        truncate_torn_tail(&history_path)?;
        let history = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&history_path)
            .map_err(|e| StoreError::io(&history_path, e))?;

        let store = Store {
            root,
            catalog,
            options,
            snapshot: RwLock::new(Arc::new(snapshot)),
            logs: Mutex::new(HashMap::new()),
            history: Mutex::new(history),
        };
        store.write_index()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    /// The current consistent view. Later submissions do not affect it.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn now(&self) -> Timestamp {
        crate::time::truncate((self.options.clock)())
    }

    pub fn submit_observation(&self, candidate: &ObservationCandidate) -> Result<IngestOutcome, IngestError> {
        let now = self.now();
        match validate_candidate(&self.catalog, candidate, Source::Form, now) {
            Ok(obs) => {
                self.append(&candidate.lab_id, vec![obs])?;
                Ok(IngestOutcome { accepted: 1, rejected: Vec::new() })
            }
            Err(refusal) => {
                let field = field_of(refusal.code).to_string();
                Ok(IngestOutcome { accepted: 0, rejected: vec![refusal.at(Locator::Field { field })] })
            }
        }
    }

    /// Validates each value on its own; the valid ones are stored even if
    /// others are rejected.
    pub fn submit_report(&self, submission: &ReportSubmission) -> Result<IngestOutcome, IngestError> {
        let template = self
            .catalog
            .report(&submission.report_id)
            .ok_or_else(|| IngestError::UnknownReportTemplate(submission.report_id.clone()))?;
        if submission.values.is_empty() {
            return Err(IngestError::EmptySubmission);
        }
        let now = self.now();
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for (measure_id, value) in &submission.values {
            let locator = Locator::Field { field: measure_id.clone() };
            if !template.measure_ids.contains(measure_id) {
                rejected.push(Rejection {
                    locator,
                    code: "not_in_template".into(),
                    message: format!("`{measure_id}` is not part of report `{}`", template.id),
                });
                continue;
            }
            let candidate = ObservationCandidate {
                measure_id: measure_id.clone(),
                lab_id: submission.lab_id.clone(),
                timestamp: submission.timestamp,
                value: value.clone(),
                uploader_id: submission.uploader_id.clone(),
            };
            match validate_candidate(&self.catalog, &candidate, Source::Report, now) {
                Ok(obs) => accepted.push(obs),
                Err(refusal) => rejected.push(refusal.at(locator)),
            }
        }
        let outcome = IngestOutcome { accepted: accepted.len(), rejected };
        self.append(&submission.lab_id, accepted)?;
        Ok(outcome)
    }

    /// Imports a CSV table for one lab. A row's own `uploader_id` wins;
    /// `uploader_id` here fills rows that leave it empty. Each row stands
    /// alone: valid rows are stored even if others are rejected.
    pub fn import_file(&self, lab_id: &str, uploader_id: &str, content: &str) -> Result<IngestOutcome, IngestError> {
        let rows = csv::decode_import(content)?;
        let now = self.now();
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for row in rows {
            let locator = Locator::Row { row: row.row };
            let fields = match row.fields {
                Ok(f) => f,
                Err(message) => {
                    rejected.push(Rejection { locator, code: "malformed_row".into(), message });
                    continue;
                }
            };
            let Some(timestamp) = parse_timestamp(&fields.timestamp) else {
                rejected.push(Rejection {
                    locator,
                    code: "invalid_timestamp".into(),
                    message: format!("`{}` is not a YYYY-MM-DDThh:mm:ssZ timestamp", fields.timestamp),
                });
                continue;
            };
            let uploader = if fields.uploader_id.is_empty() { uploader_id.to_string() } else { fields.uploader_id };
            let candidate = ObservationCandidate {
                measure_id: fields.measure_id,
                lab_id: lab_id.to_string(),
                timestamp,
                value: RawValue::Text(fields.value),
                uploader_id: uploader,
            };
            match validate_candidate(&self.catalog, &candidate, Source::File, now) {
                Ok(obs) => accepted.push(obs),
                Err(refusal) => rejected.push(refusal.at(locator)),
            }
        }
        let outcome = IngestOutcome { accepted: accepted.len(), rejected };
        self.append(lab_id, accepted)?;
        Ok(outcome)
    }

    /// Numeric points with `from < timestamp <= to`, optionally only those
    /// entered by `uploader`. Booleans plot as 0 and 1.
    pub fn query_series(
        &self,
        lab_id: &str,
        measure_id: &str,
        from: Timestamp,
        to: Timestamp,
        uploader: Option<&str>,
    ) -> Result<Vec<SeriesPoint>, QueryError> {
        let measure = self.catalog.measure(measure_id).ok_or_else(|| QueryError::UnknownMeasure(measure_id.to_string()))?;
        if measure.value_type == ValueType::Category {
            return Err(QueryError::CategoryNotPlottable(measure_id.to_string()));
        }
        if self.catalog.lab(lab_id).is_none() {
            return Err(QueryError::UnknownLab(lab_id.to_string()));
        }
        if from > to {
            return Err(QueryError::InvalidRange);
        }
        let snapshot = self.snapshot();
        Ok(window_slice(snapshot.series(lab_id, measure_id), from, to)
            .iter()
            .filter(|o| uploader.is_none_or(|u| o.uploader_id == u))
            .filter_map(|o| Some(SeriesPoint { timestamp: o.timestamp, value: o.value.as_f64()? }))
            .collect())
    }

    /// Observations of `lab_id` with `from < timestamp <= to` in the import
    /// format, grouped by measure in catalog order. Category measures are
    /// included.
    pub fn export_csv(
        &self,
        lab_id: &str,
        measure_id: Option<&str>,
        from: Timestamp,
        to: Timestamp,
    ) -> Result<String, QueryError> {
        if self.catalog.lab(lab_id).is_none() {
            return Err(QueryError::UnknownLab(lab_id.to_string()));
        }
        if let Some(m) = measure_id {
            if self.catalog.measure(m).is_none() {
                return Err(QueryError::UnknownMeasure(m.to_string()));
            }
        }
        if from > to {
            return Err(QueryError::InvalidRange);
        }
        let snapshot = self.snapshot();
        let rows: Vec<(String, String, String, String)> = self
            .catalog
            .measures
            .iter()
            .filter(|m| measure_id.is_none_or(|id| id == m.id))
            .flat_map(|m| window_slice(snapshot.series(lab_id, &m.id), from, to))
            .map(|o| (o.measure_id.clone(), format_timestamp(&o.timestamp), o.value.to_string(), o.uploader_id.clone()))
            .collect();
        Ok(csv::encode_export(rows.iter().map(|(a, b, c, d)| [a.as_str(), b.as_str(), c.as_str(), d.as_str()])))
    }

    /// For each measure the lab collects, which calendar buckets of the
    /// period `[start, end)` hold at least one observation.
    pub fn coverage(&self, lab_id: &str, period: Period) -> Result<CoverageReport, QueryError> {
        if self.catalog.lab(lab_id).is_none() {
            return Err(QueryError::UnknownLab(lab_id.to_string()));
        }
        if period.start > period.end {
            return Err(QueryError::InvalidRange);
        }
        let snapshot = self.snapshot();
        let mut entries = Vec::new();
        for measure in self.catalog.measures.iter().filter(|m| m.scope.includes(lab_id)) {
            let buckets = coverage::buckets(measure.frequency, period)
                .ok_or_else(|| QueryError::TooManyBuckets(measure.id.clone()))?;
            let series = snapshot.series(lab_id, &measure.id);
            let mut filled = 0;
            let mut missing = Vec::new();
            for bucket in &buckets {
                let lo = bucket.start.max(period.start);
                let hi = bucket.end.min(period.end);
                let first = series.partition_point(|o| o.timestamp < lo);
                if series.get(first).is_some_and(|o| o.timestamp < hi) {
                    filled += 1;
                } else {
                    missing.push(bucket.label.clone());
                }
            }
            entries.push(CoverageEntry {
                measure_id: measure.id.clone(),
                frequency: measure.frequency,
                expected_buckets: buckets.len(),
                filled_buckets: filled,
                missing_buckets: missing,
            });
        }
        Ok(CoverageReport { lab_id: lab_id.to_string(), period, entries })
    }

    /// Every recorded evaluation, oldest first.
    pub fn history(&self) -> Result<Vec<EvaluationResult>, StoreError> {
        let path = self.root.join(HISTORY_FILE);
        let _guard = self.history.lock().unwrap_or_else(|e| e.into_inner());
        let file = File::open(&path).map_err(|e| StoreError::io(&path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| StoreError::io(&path, e))?;
            if line.is_empty() {
                continue;
            }
            let result = serde_json::from_str(&line)
                .map_err(|e| StoreError::Corrupt { path: path.clone(), line: i + 1, message: e.to_string() })?;
            out.push(result);
        }
        Ok(out)
    }

    fn lab_log(&self, lab_id: &str) -> Arc<Mutex<LabLog>> {
        let mut logs = self.logs.lock().unwrap_or_else(|e| e.into_inner());
        logs.entry(lab_id.to_string())
            .or_insert_with(|| {
                Arc::new(Mutex::new(LabLog { path: self.root.join("labs").join(format!("{lab_id}.log")), file: None }))
            })
            .clone()
    }

    /// Appends a batch for one lab, then publishes it. If the write fails
    /// the file is cut back to its previous length and nothing is
    /// published.
    fn append(&self, lab_id: &str, batch: Vec<Observation>) -> Result<(), StoreError> {
        if batch.is_empty() {
            return Ok(());
        }
        let log = self.lab_log(lab_id);
        let mut log = log.lock().unwrap_or_else(|e| e.into_inner());
        let path = log.path.clone();
        if log.file.is_none() {
            let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| StoreError::io(&path, e))?;
            log.file = Some(file);
        }
        let file = log.file.as_mut().expect("opened above");
        let before = file.seek(SeekFrom::End(0)).map_err(|e| StoreError::io(&path, e))?;
        let text: String = batch.iter().map(log::encode_record).collect();
        let written = file
            .write_all(text.as_bytes())
            .and_then(|()| if self.options.sync { file.sync_data() } else { Ok(()) });
        if let Err(e) = written {
            let _ = file.set_len(before);
            log.file = None;
            return Err(StoreError::io(&path, e));
        }

        let mut current = self.snapshot.write().unwrap_or_else(|e| e.into_inner());
        let mut next = Snapshot::clone(&current);
        for obs in batch {
            next.insert(obs);
        }
        *current = Arc::new(next);
        Ok(())
    }

    fn write_index(&self) -> Result<(), StoreError> {
        let snapshot = self.snapshot();
        let mut keys: Vec<_> = snapshot.series.keys().collect();
        keys.sort();
        let mut text = String::from("lab_id\tmeasure_id\tcount\tfirst\tlast\n");
        for key in keys {
            let series = &snapshot.series[key];
            if let (Some(first), Some(last)) = (series.first(), series.last()) {
                text.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    log::escape(&key.0),
                    log::escape(&key.1),
                    series.len(),
                    format_timestamp(&first.timestamp),
                    format_timestamp(&last.timestamp)
                ));
            }
        }
        let path = self.root.join(INDEX_FILE);
        let tmp = self.root.join(format!("{INDEX_FILE}.tmp"));
        fs::write(&tmp, text).map_err(|e| StoreError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| StoreError::io(&path, e))
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        if let Err(e) = self.write_index() {
            tracing::warn!("could not refresh store index: {e}");
        }
    }
}

impl EvaluationHistory for Store {
    type Error = StoreError;

    fn record(&self, result: &EvaluationResult) -> Result<(), StoreError> {
        let path = self.root.join(HISTORY_FILE);
        let mut line = serde_json::to_string(result).expect("evaluation results serialize");
        line.push('\n');
        let mut file = self.history.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|()| if self.options.sync { file.sync_data() } else { Ok(()) })
            .map_err(|e| StoreError::io(&path, e))
    }
}

/// Which submitted field a form rejection points at.
fn field_of(code: &str) -> &'static str {
    match code {
        "unknown_lab" | "out_of_scope" => "lab_id",
        "unknown_measure" => "measure_id",
        "future_timestamp" => "timestamp",
        "missing_uploader" => "uploader_id",
        _ => "value",
    }
}

/// Cuts a trailing partial line left by an interrupted append.
fn truncate_torn_tail(path: &Path) -> Result<(), StoreError> {
    let content = match fs::read(path) {
        Ok(c) => c,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(StoreError::io(path, e)),
    };
    if content.is_empty() || content.ends_with(b"\n") {
        return Ok(());
    }
    let keep = content.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    tracing::warn!("{}: dropping {} bytes of an interrupted append", path.display(), content.len() - keep);
    let file = OpenOptions::new().write(true).open(path).map_err(|e| StoreError::io(path, e))?;
    file.set_len(keep as u64).map_err(|e| StoreError::io(path, e))
}

fn replay_log(path: &Path, catalog: &Catalog, out: &mut Vec<Observation>) -> Result<(), StoreError> {
    truncate_torn_tail(path)?;
    let lab_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let content = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    for (i, line) in content.lines().enumerate() {
        let corrupt = |message: String| StoreError::Corrupt { path: path.to_path_buf(), line: i + 1, message };
        let raw = log::decode_record(line).map_err(|e| corrupt(e.to_string()))?;
        if raw.lab_id != lab_id {
            return Err(corrupt(format!("record for lab `{}` in the log of `{lab_id}`", raw.lab_id)));
        }
        let measure = catalog
            .measure(&raw.measure_id)
            .ok_or_else(|| corrupt(format!("unknown measure `{}`", raw.measure_id)))?;
        let value = coerce_value(measure, &RawValue::Text(raw.value)).map_err(|r: Refusal| corrupt(r.message))?;
        let obs = Observation {
            measure_id: raw.measure_id,
            lab_id: raw.lab_id,
            timestamp: raw.timestamp,
            value,
            uploader_id: raw.uploader_id,
            source: raw.source,
            ingested_at: raw.ingested_at,
        };
        validate::revalidate(catalog, &obs).map_err(|r| corrupt(r.message))?;
        out.push(obs);
    }
    Ok(())
}
