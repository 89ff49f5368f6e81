mod support;

use feedkit::engine::{eval_expression, evaluate, EvaluationRequest, MemorySource, Window};
use feedkit::model::*;
use proptest::prelude::*;
use support::{ts, window_start};

fn measures() -> Vec<MeasureDefinition> {
    let m = |id: &str, value_type| MeasureDefinition {
        id: id.into(),
        name: id.into(),
        unit: "u".into(),
        value_type,
        category_values: (value_type == ValueType::Category).then(|| vec!["c".into()]),
        frequency: CollectionFrequency::Daily,
        scope: Scope::Common,
    };
    vec![m("num", ValueType::Number), m("int", ValueType::Integer), m("flag", ValueType::Boolean), m("kind", ValueType::Category)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn engine_agrees_with_naive_interpreter(seed in any::<u64>()) {
        let mut rng = support::rng(seed);
        let measures = measures();
        let end = ts("2024-03-31T12:00:00Z");
        let length = support::duration(&mut rng);
        let start = window_start(end, length).unwrap();
        let boundaries = [end, start, window_start(end, Duration::months(1)).unwrap(), window_start(end, Duration::days(3)).unwrap()];
        let data = support::dataset(&mut rng, &measures, end, &boundaries);
        let expr = support::expression(&mut rng, &measures, 6, support::small_literal);

        let mut source = MemorySource::new();
        source.extend(data.iter().cloned());
        let got = eval_expression(&expr, &source, "lab0", Window { start, end }).value;
        let want = support::naive_eval(&expr, &data, "lab0", start, end);
        prop_assert_eq!(got.map(f64::to_bits), want.map(f64::to_bits), "{:?}", expr);
    }
}

const CATALOG: &str = r#"
lab here { city: "c" country: "c" groups: ["g"] description: "" }
measure income { name: "i" unit: "EUR" type: number frequency: monthly scope: common }
measure cost { name: "c" unit: "EUR" type: number frequency: monthly scope: common }
kpi K { name: "k" dimension: economic created_by: "c" goal: "g" csf: "c"
  metric balance = sum(income) - sum(cost)
  metric recent = last(cost, window = 2w)
  target: all(balance > 0, recent < 100)
  action "cut costs" monitor: monthly window: 3m }
"#;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn observations_outside_the_window_change_nothing(
        inside in prop::collection::vec((1i64..90 * 24, -1000.0f64..1000.0, any::<bool>()), 0..20),
        outside in prop::collection::vec((0i64..10_000, -1e6f64..1e6, any::<bool>(), any::<bool>()), 1..50),
    ) {
        let catalog = feedkit::dsl::parse_catalog(CATALOG).unwrap();
        let at = ts("2024-06-30T00:00:00Z");
        let window_start = ts("2024-03-30T00:00:00Z");
        let mut source = MemorySource::new();
        for (hours, v, income) in &inside {
            let t = at - chrono::TimeDelta::hours(*hours - 1);
            source.insert(support::observation("here", if *income { "income" } else { "cost" }, t.min(at), Value::Number(*v)));
        }
        let request = EvaluationRequest::new("K", "here", at);
        let before = serde_json::to_string(&evaluate(&request, &catalog, &source).unwrap()).unwrap();
        for (hours, v, income, future) in &outside {
            let t = if *future {
                at + chrono::TimeDelta::hours(hours + 1)
            } else {
                window_start - chrono::TimeDelta::hours(*hours)
            };
            source.insert(support::observation("here", if *income { "income" } else { "cost" }, t, Value::Number(*v)));
        }
        let after = serde_json::to_string(&evaluate(&request, &catalog, &source).unwrap()).unwrap();
        prop_assert_eq!(before, after);
    }
}
