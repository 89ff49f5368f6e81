//! Generators, reference implementations and an HTTP helper shared by the
//! integration tests.

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;

use chrono::{Days, Months};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};

use feedkit::model::*;
use feedkit::time::{parse_timestamp, Timestamp};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn ts(s: &str) -> Timestamp {
    parse_timestamp(s).unwrap_or_else(|| panic!("bad timestamp {s}"))
}

// ---------------------------------------------------------------------------
// Catalog generation

const TEXT_POOL: &[char] = &[
    'a', 'b', 'Z', '0', ' ', '"', '\\', '\n', '\r', '\t', '#', '{', '}', ',', '(', 'é', 'ß', '漢', '😀', '\u{7f}', '\u{0}',
];

pub fn text(rng: &mut StdRng, max: usize) -> String {
    let len = rng.random_range(0..=max);
    (0..len).map(|_| *TEXT_POOL.choose(rng).unwrap()).collect()
}

/// Text with at least one visible character.
pub fn nonblank_text(rng: &mut StdRng, max: usize) -> String {
    format!("a{}", text(rng, max))
}

/// A finite number drawn from a mix of magnitudes, signs and exact values.
pub fn number(rng: &mut StdRng) -> f64 {
    match rng.random_range(0..7) {
        0 => 0.0,
        1 => rng.random_range(-100i32..=100) as f64,
        2 => rng.random_range(-1000.0..1000.0),
        3 => rng.random_range(-1.0..1.0) * 1e-9,
        4 => rng.random_range(-1.0..1.0) * 1e300,
        5 => f64::from_bits(rng.random::<u64>() & 0x7fef_ffff_ffff_ffff) * if rng.random() { 1.0 } else { -1.0 },
        _ => rng.random_range(0..1000) as f64 / 8.0,
    }
}

pub fn duration(rng: &mut StdRng) -> Duration {
    let count = rng.random_range(1..=24);
    match rng.random_range(0..3) {
        0 => Duration::days(count),
        1 => Duration::weeks(count),
        _ => Duration::months(count),
    }
}

/// An expression over `measures`. Boolean and category measures only
/// appear under `count`.
pub fn expression(rng: &mut StdRng, measures: &[MeasureDefinition], depth: usize, literal: fn(&mut StdRng) -> f64) -> ExpressionNode {
    let leaf = depth <= 1 || rng.random_range(0..3) == 0;
    if leaf {
        if measures.is_empty() || rng.random_range(0..4) == 0 {
            return ExpressionNode::literal(literal(rng));
        }
        let m = measures.choose(rng).unwrap();
        let func = match m.value_type {
            ValueType::Number | ValueType::Integer => *AggregateFn::ALL.choose(rng).unwrap(),
            ValueType::Boolean | ValueType::Category => AggregateFn::Count,
        };
        let window = (rng.random_range(0..4) == 0).then(|| duration(rng));
        return ExpressionNode::Aggregate { func, measure_id: m.id.clone(), window };
    }
    if rng.random_range(0..5) == 0 {
        return ExpressionNode::negate(expression(rng, measures, depth - 1, literal));
    }
    let op = *[BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div].choose(rng).unwrap();
    ExpressionNode::binary(
        op,
        expression(rng, measures, depth - 1, literal),
        expression(rng, measures, depth - 1, literal),
    )
}

fn pick<T: Copy>(rng: &mut StdRng, items: &[T]) -> T {
    *items.choose(rng).unwrap()
}

/// A random catalog that satisfies every catalog invariant. Identifiers
/// carry prefixes so they never collide with keywords.
pub fn catalog(rng: &mut StdRng) -> Catalog {
    let labs: Vec<LabProfile> = (0..rng.random_range(1..=4))
        .map(|i| LabProfile {
            id: format!("lab{i}"),
            city: text(rng, 8),
            country: text(rng, 8),
            target_groups: (0..rng.random_range(1..=3)).map(|_| text(rng, 6)).collect(),
            description: text(rng, 12),
        })
        .collect();

    let measures: Vec<MeasureDefinition> = (0..rng.random_range(1..=6))
        .map(|i| {
            let value_type = pick(rng, &[ValueType::Number, ValueType::Integer, ValueType::Boolean, ValueType::Category]);
            let category_values = (value_type == ValueType::Category).then(|| {
                let n = rng.random_range(1..=4);
                (0..n).map(|k| format!("{k}{}", text(rng, 5))).collect()
            });
            let scope = if rng.random() {
                Scope::Common
            } else {
                let mut ids: Vec<String> = labs.iter().map(|l| l.id.clone()).collect();
                ids.shuffle(rng);
                ids.truncate(rng.random_range(1..=ids.len()));
                Scope::Specific { lab_ids: ids }
            };
            MeasureDefinition {
                id: format!("m{i}"),
                name: text(rng, 10),
                unit: text(rng, 4),
                value_type,
                category_values,
                frequency: pick(rng, &CollectionFrequency::ALL),
                scope,
            }
        })
        .collect();

    let reports = (0..rng.random_range(0..=2))
        .map(|i| {
            let mut ids: Vec<String> = measures.iter().map(|m| m.id.clone()).collect();
            ids.shuffle(rng);
            ids.truncate(rng.random_range(1..=ids.len()));
            ReportTemplate { id: format!("r{i}"), name: text(rng, 10), measure_ids: ids }
        })
        .collect();

    let kpis = (0..rng.random_range(1..=4))
        .map(|i| {
            let metrics: Vec<MetricDefinition> = (0..rng.random_range(1..=4))
                .map(|j| MetricDefinition { id: format!("x{j}"), expression: expression(rng, &measures, 5, number) })
                .collect();
            let predicate = |rng: &mut StdRng| Predicate {
                metric_id: metrics.choose(rng).unwrap().id.clone(),
                comparator: pick(rng, &Comparator::ALL),
                threshold: number(rng),
            };
            let target = if rng.random() {
                TargetSpec::Single { predicate: predicate(rng) }
            } else {
                TargetSpec::Conjunctive { predicates: (0..rng.random_range(2..=4)).map(|_| predicate(rng)).collect() }
            };
            KpiDefinition {
                id: format!("K{i}"),
                name: text(rng, 12),
                dimension: pick(rng, &[Dimension::Economic, Dimension::Social, Dimension::Environmental, Dimension::Technical]),
                created_by: text(rng, 6),
                goal: text(rng, 12),
                csf: text(rng, 12),
                target,
                actions: (0..rng.random_range(1..=3)).map(|_| ActionSpec { description: nonblank_text(rng, 10) }).collect(),
                monitor_frequency: pick(rng, &CollectionFrequency::ALL),
                window: duration(rng),
                metrics,
            }
        })
        .collect();

    Catalog { labs, measures, reports, kpis, protocol_notes: rng.random::<bool>().then(|| text(rng, 20)) }
}

// ---------------------------------------------------------------------------
// Reference expression interpreter

/// Start of a window of `length` ending at `end`, by plain calendar
/// subtraction.
pub fn window_start(end: Timestamp, length: Duration) -> Option<Timestamp> {
    match length.unit {
        DurationUnit::Days => end.checked_sub_days(Days::new(length.count as u64)),
        DurationUnit::Weeks => end.checked_sub_days(Days::new(length.count as u64 * 7)),
        DurationUnit::Months => end.checked_sub_months(Months::new(length.count)),
    }
}

/// Evaluates `expr` by scanning the raw, unsorted observation list for
/// every aggregate. Observations are in submission order.
pub fn naive_eval(expr: &ExpressionNode, data: &[Observation], lab: &str, start: Timestamp, end: Timestamp) -> Option<f64> {
    let v = match expr {
        ExpressionNode::Literal { value } => *value,
        ExpressionNode::Aggregate { func, measure_id, window } => {
            let from = match window {
                Some(w) => window_start(end, *w)?,
                None => start,
            };
            let mut picked: Vec<&Observation> = data
                .iter()
                .filter(|o| o.lab_id == lab && &o.measure_id == measure_id && o.timestamp > from && o.timestamp <= end)
                .collect();
            // Stable: equal timestamps keep submission order.
            picked.sort_by_key(|o| o.timestamp);
            let values: Vec<f64> = picked.iter().map(|o| numeric(&o.value)).collect();
            match func {
                AggregateFn::Count => values.len() as f64,
                _ if values.is_empty() => return None,
                AggregateFn::Sum => {
                    let mut total = 0.0;
                    for v in &values {
                        total += v;
                    }
                    total
                }
                AggregateFn::Avg => {
                    let mut total = 0.0;
                    for v in &values {
                        total += v;
                    }
                    total / values.len() as f64
                }
                AggregateFn::Min => values.iter().copied().reduce(|a, b| if b < a { b } else { a }).unwrap(),
                AggregateFn::Max => values.iter().copied().reduce(|a, b| if b > a { b } else { a }).unwrap(),
                AggregateFn::Last => *values.last().unwrap(),
            }
        }
        ExpressionNode::Negate { child } => -naive_eval(child, data, lab, start, end)?,
        ExpressionNode::Binary { op, left, right } => {
            let l = naive_eval(left, data, lab, start, end);
            let r = naive_eval(right, data, lab, start, end);
            let (l, r) = (l?, r?);
            match op {
                BinaryOp::Add => l + r,
                BinaryOp::Sub => l - r,
                BinaryOp::Mul => l * r,
                BinaryOp::Div => {
                    if r == 0.0 {
                        return None;
                    }
                    l / r
                }
            }
        }
    };
    v.is_finite().then_some(v)
}

fn numeric(v: &Value) -> f64 {
    match v {
        Value::Number(n) => *n,
        Value::Integer(i) => *i as f64,
        Value::Boolean(b) => f64::from(u8::from(*b)),
        Value::Category(_) => f64::NAN,
    }
}

pub fn observation(lab: &str, measure: &str, at: Timestamp, value: Value) -> Observation {
    Observation {
        measure_id: measure.into(),
        lab_id: lab.into(),
        timestamp: at,
        value,
        uploader_id: "tester".into(),
        source: Source::Form,
        ingested_at: at,
    }
}

/// Small values with many zeros and repeated timestamps, some exactly on
/// window boundaries, for two labs.
pub fn dataset(rng: &mut StdRng, measures: &[MeasureDefinition], end: Timestamp, boundaries: &[Timestamp]) -> Vec<Observation> {
    let mut out = Vec::new();
    let n = rng.random_range(0..40);
    for _ in 0..n {
        let m = measures.choose(rng).unwrap();
        let lab = if rng.random_range(0..5) == 0 { "other" } else { "lab0" };
        let at = if !boundaries.is_empty() && rng.random_range(0..4) == 0 {
            *boundaries.choose(rng).unwrap()
        } else {
            end - chrono::TimeDelta::hours(rng.random_range(-500..24 * 800))
        };
        let value = match m.value_type {
            ValueType::Number => Value::Number(pick(rng, &[0.0, 0.5, -1.25, 2.0, 3.0, 1e-3, 10.0, 1e200])),
            ValueType::Integer => Value::Integer(rng.random_range(-3..=5)),
            ValueType::Boolean => Value::Boolean(rng.random()),
            ValueType::Category => Value::Category("c".into()),
        };
        out.push(observation(lab, &m.id, at, value));
    }
    out
}

pub fn small_literal(rng: &mut StdRng) -> f64 {
    pick(rng, &[0.0, 1.0, 2.0, -3.0, 0.5, 100.0, 1e-300, 1e300])
}

// ---------------------------------------------------------------------------
// Reference correlation

/// Pearson's r from raw sums, `(nΣxy − ΣxΣy) / √((nΣx² − (Σx)²)(nΣy² − (Σy)²))`.
pub fn textbook_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 3 {
        return None;
    }
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    if den == 0.0 || den.is_nan() {
        return None;
    }
    Some((n * sxy - sx * sy) / den)
}

// ---------------------------------------------------------------------------
// HTTP

pub struct TestServer {
    pub addr: SocketAddr,
    pub store: Arc<feedkit::store::Store>,
    stop: Option<std::sync::mpsc::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl TestServer {
    pub fn start(store: feedkit::store::Store) -> Self {
        let store = Arc::new(store);
        let state = feedkit::api::AppState::new(store.clone());
        let (stop, stopped) = std::sync::mpsc::channel::<()>();
        let (ready, addr) = std::sync::mpsc::channel();
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                ready.send(listener.local_addr().unwrap()).unwrap();
                let shutdown = async move {
                    let _ = tokio::task::spawn_blocking(move || stopped.recv()).await;
                };
                feedkit::api::serve(listener, state, shutdown).await.unwrap();
            });
        });
        TestServer { addr: addr.recv().unwrap(), store, stop: Some(stop), thread: Some(thread) }
    }

    pub fn get(&self, path: &str) -> Response {
        request(self.addr, "GET", path, None)
    }

    pub fn post(&self, path: &str, content_type: &str, body: &str) -> Response {
        request(self.addr, "POST", path, Some((content_type, body)))
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        drop(self.stop.take());
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Debug)]
pub struct Response {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: String,
}

impl Response {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.body))
    }
}

/// One HTTP/1.1 exchange over a fresh connection.
pub fn request(addr: SocketAddr, method: &str, path: &str, body: Option<(&str, &str)>) -> Response {
    let mut stream = TcpStream::connect(addr).unwrap();
    let mut head = format!("{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n");
    if let Some((content_type, body)) = body {
        head.push_str(&format!("Content-Type: {content_type}\r\nContent-Length: {}\r\n", body.len()));
    }
    head.push_str("\r\n");
    stream.write_all(head.as_bytes()).unwrap();
    if let Some((_, body)) = body {
        stream.write_all(body.as_bytes()).unwrap();
    }
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    parse_response(&raw)
}

fn parse_response(raw: &[u8]) -> Response {
    let text = String::from_utf8_lossy(raw);
    let (head, rest) = text.split_once("\r\n\r\n").expect("response has a header block");
    let mut lines = head.split("\r\n");
    let status = lines.next().unwrap().split(' ').nth(1).unwrap().parse().unwrap();
    let mut content_type = None;
    let mut chunked = false;
    for line in lines {
        let (name, value) = line.split_once(':').unwrap();
        match name.trim().to_ascii_lowercase().as_str() {
            "content-type" => content_type = Some(value.trim().to_string()),
            "transfer-encoding" => chunked = value.trim().eq_ignore_ascii_case("chunked"),
            _ => {}
        }
    }
    let body = if chunked { dechunk(rest) } else { rest.to_string() };
    Response { status, content_type, body }
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = s.split_once("\r\n").unwrap();
        let size = usize::from_str_radix(size.trim(), 16).unwrap();
        if size == 0 {
            return out;
        }
        out.push_str(&rest[..size]);
        s = &rest[size + 2..];
    }
}

/// Percent-encodes a query value.
pub fn q(s: &str) -> String {
    form_urlencoded::byte_serialize(s.as_bytes()).collect()
}
