use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, ParsedCatalog, SourceMap, SourceSpan};
use crate::model::{
    ActionSpec, AggregateFn, BinaryOp, Catalog, CollectionFrequency, Comparator, Dimension, Duration,
    ExpressionNode, IdKind, KpiDefinition, LabProfile, MeasureDefinition, MetricDefinition, Predicate,
    ReportTemplate, Scope, TargetSpec, ValueType,
};

/// Hard bound on expression nesting while parsing. Catalog validation
/// applies the tighter semantic limit afterwards.
const PARSE_DEPTH_LIMIT: usize = 128;

const TOP_LEVEL: [&str; 4] = ["lab", "measure", "report", "kpi"];

/// Marker for an error that has already been recorded.
struct Abort;

type PResult<T> = Result<T, Abort>;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    errors: Vec<ParseError>,
    map: SourceMap,
    catalog: Catalog,
    protocol_span: Option<SourceSpan>,
    nesting: usize,
}

pub(super) fn parse(file: &str, source: &str) -> (ParsedCatalog, Vec<ParseError>) {
    let (tokens, errors) = tokenize(file, source);
    let mut p = Parser {
        tokens,
        pos: 0,
        errors,
        map: SourceMap { file: file.to_string(), ..SourceMap::default() },
        catalog: Catalog::default(),
        protocol_span: None,
        nesting: 0,
    };
    p.catalog_body();
    let mut errors = p.errors;
    errors.sort_by_key(|e| e.span.offset);
    (ParsedCatalog { catalog: p.catalog, source_map: p.map }, errors)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> SourceSpan {
        self.tokens[self.pos].span.clone()
    }

    fn advance(&mut self) -> Token {
        let token = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        token
    }

    fn is_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    fn fail(&mut self, code: &str, what: &str, expected: &[&str]) -> Abort {
        // Lexical errors are already reported at this position.
        if *self.peek() != Tok::Error {
            let found = self.peek().describe();
            self.errors.push(ParseError {
                span: self.span(),
                code: code.to_string(),
                message: format!("expected {what}, found {found}"),
                expected: (!expected.is_empty()).then(|| expected.iter().map(|s| s.to_string()).collect()),
            });
        }
        Abort
    }

    fn report(&mut self, span: SourceSpan, code: &str, message: String) {
        self.errors.push(ParseError { span, code: code.to_string(), message, expected: None });
    }

    fn at_declaration(&self) -> bool {
        match (self.peek(), self.peek_at(1), self.peek_at(2)) {
            (Tok::Ident(kw), Tok::Ident(_), Tok::LBrace) => TOP_LEVEL.contains(&kw.as_str()),
            (Tok::Ident(kw), Tok::Str(_), _) => kw == "protocol",
            _ => false,
        }
    }

    fn catalog_body(&mut self) {
        while *self.peek() != Tok::Eof {
            let start = self.pos;
            self.nesting = 0;
            let result = match self.peek() {
                Tok::Ident(kw) => match kw.as_str() {
                    "lab" => self.lab(),
                    "measure" => self.measure(),
                    "report" => self.report_block(),
                    "kpi" => self.kpi(),
                    "protocol" => self.protocol(),
                    _ => Err(self.fail("expected_declaration", "a declaration", &["lab", "measure", "report", "kpi", "protocol"])),
                },
                _ => Err(self.fail("expected_declaration", "a declaration", &["lab", "measure", "report", "kpi", "protocol"])),
            };
            if result.is_err() {
                self.recover(start);
            }
        }
    }

    /// Skips to the next top-level declaration after a failed block.
    fn recover(&mut self, block_start: usize) {
        if self.pos == block_start {
            self.advance();
        }
        while *self.peek() != Tok::Eof && !self.at_declaration() {
            self.advance();
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if *self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            let what = tok.describe();
            Err(self.fail("unexpected_token", &what, &[what.as_str()]))
        }
    }

    fn expect_ident(&mut self, what: &str) -> PResult<(String, SourceSpan)> {
        if let Tok::Ident(name) = self.peek() {
            let name = name.clone();
            let span = self.advance().span;
            Ok((name, span))
        } else {
            Err(self.fail("expected_ident", what, &["identifier"]))
        }
    }

    fn expect_keyword(&mut self, word: &str) -> PResult<()> {
        if self.is_ident(word) {
            self.advance();
            Ok(())
        } else {
            Err(self.fail("expected_keyword", &format!("`{word}`"), &[word]))
        }
    }

    fn expect_field(&mut self, key: &str) -> PResult<()> {
        let label = format!("{key}:");
        if self.is_ident(key) && *self.peek_at(1) == Tok::Colon {
            self.advance();
            self.advance();
            Ok(())
        } else {
            Err(self.fail("expected_field", &format!("`{label}`"), &[label.as_str()]))
        }
    }

    fn expect_string(&mut self) -> PResult<String> {
        if let Tok::Str(s) = self.peek() {
            let s = s.clone();
            self.advance();
            Ok(s)
        } else {
            Err(self.fail("expected_string", "a string", &["string"]))
        }
    }

    fn expect_number(&mut self) -> PResult<f64> {
        let negative = *self.peek() == Tok::Minus;
        if negative {
            self.advance();
        }
        if let Tok::Number(n) = *self.peek() {
            self.advance();
            Ok(if negative { -n } else { n })
        } else {
            Err(self.fail("expected_number", "a number", &["number"]))
        }
    }

    fn expect_duration(&mut self) -> PResult<Duration> {
        if let Tok::Duration(text) = self.peek() {
            match text.parse::<Duration>() {
                Ok(d) => {
                    self.advance();
                    Ok(d)
                }
                Err(e) => {
                    let span = self.span();
                    self.report(span, "invalid_duration", e.to_string());
                    Err(Abort)
                }
            }
        } else {
            Err(self.fail("expected_duration", "a duration such as 30d, 2w or 3m", &["duration"]))
        }
    }

    fn keyword<T>(&mut self, parse: fn(&str) -> Option<T>, code: &str, what: &str, options: &[&str]) -> PResult<T> {
        if let Tok::Ident(word) = self.peek() {
            if let Some(v) = parse(word) {
                self.advance();
                return Ok(v);
            }
        }
        Err(self.fail(code, what, options))
    }

    fn frequency(&mut self) -> PResult<CollectionFrequency> {
        self.keyword(
            CollectionFrequency::from_keyword,
            "expected_frequency",
            "a collection frequency",
            &["daily", "weekly", "monthly", "quarterly", "per_event"],
        )
    }

    fn string_list(&mut self) -> PResult<Vec<String>> {
        self.expect(Tok::LBracket)?;
        let mut out = Vec::new();
        if *self.peek() != Tok::RBracket {
            out.push(self.expect_string()?);
            while *self.peek() == Tok::Comma {
                self.advance();
                out.push(self.expect_string()?);
            }
        }
        self.expect(Tok::RBracket)?;
        Ok(out)
    }

    fn ident_list(&mut self, what: &str) -> PResult<Vec<String>> {
        let mut out = vec![self.expect_ident(what)?.0];
        while *self.peek() == Tok::Comma {
            self.advance();
            out.push(self.expect_ident(what)?.0);
        }
        Ok(out)
    }

    fn declare(&mut self, kind: IdKind, key: String, span: SourceSpan) {
        if !self.map.record(kind, key.clone(), span.clone()) {
            let shown = key.rsplit('.').next().unwrap_or(&key).to_string();
            self.report(span, "duplicate_id", format!("duplicate {kind} id `{shown}`"));
        }
    }

    fn lab(&mut self) -> PResult<()> {
        self.advance();
        let (id, span) = self.expect_ident("a lab id")?;
        self.expect(Tok::LBrace)?;
        self.expect_field("city")?;
        let city = self.expect_string()?;
        self.expect_field("country")?;
        let country = self.expect_string()?;
        self.expect_field("groups")?;
        let target_groups = self.string_list()?;
        let mut description = String::new();
        if self.is_ident("description") {
            self.expect_field("description")?;
            description = self.expect_string()?;
        }
        self.expect(Tok::RBrace)?;
        self.declare(IdKind::Lab, id.clone(), span);
        self.catalog.labs.push(LabProfile { id, city, country, target_groups, description });
        Ok(())
    }

    fn measure(&mut self) -> PResult<()> {
        self.advance();
        let (id, span) = self.expect_ident("a measure id")?;
        self.expect(Tok::LBrace)?;
        self.expect_field("name")?;
        let name = self.expect_string()?;
        self.expect_field("unit")?;
        let unit = self.expect_string()?;
        self.expect_field("type")?;
        let value_type = self.keyword(
            |w| match w {
                "number" => Some(ValueType::Number),
                "integer" => Some(ValueType::Integer),
                "boolean" => Some(ValueType::Boolean),
                "category" => Some(ValueType::Category),
                _ => None,
            },
            "expected_type",
            "a value type",
            &["number", "integer", "boolean", "category"],
        )?;
        let category_values = if value_type == ValueType::Category { Some(self.string_list()?) } else { None };
        self.expect_field("frequency")?;
        let frequency = self.frequency()?;
        self.expect_field("scope")?;
        let scope = if self.is_ident("common") {
            self.advance();
            Scope::Common
        } else if self.is_ident("specific") {
            self.advance();
            self.expect(Tok::LParen)?;
            let lab_ids = self.ident_list("a lab id")?;
            self.expect(Tok::RParen)?;
            Scope::Specific { lab_ids }
        } else {
            return Err(self.fail("expected_scope", "`common` or `specific(...)`", &["common", "specific"]));
        };
        self.expect(Tok::RBrace)?;
        self.declare(IdKind::Measure, id.clone(), span);
        self.catalog.measures.push(MeasureDefinition { id, name, unit, value_type, category_values, frequency, scope });
        Ok(())
    }

    fn report_block(&mut self) -> PResult<()> {
        self.advance();
        let (id, span) = self.expect_ident("a report id")?;
        self.expect(Tok::LBrace)?;
        self.expect_field("name")?;
        let name = self.expect_string()?;
        self.expect_field("measures")?;
        let measure_ids = self.ident_list("a measure id")?;
        self.expect(Tok::RBrace)?;
        self.declare(IdKind::Report, id.clone(), span);
        self.catalog.reports.push(ReportTemplate { id, name, measure_ids });
        Ok(())
    }

    fn protocol(&mut self) -> PResult<()> {
        let span = self.advance().span;
        let text = self.expect_string()?;
        if self.protocol_span.is_some() {
            self.report(span, "duplicate_protocol", "protocol notes declared more than once".into());
        } else {
            self.protocol_span = Some(span);
            self.catalog.protocol_notes = Some(text);
        }
        Ok(())
    }

    fn kpi(&mut self) -> PResult<()> {
        self.advance();
        let (id, span) = self.expect_ident("a KPI id")?;
        self.expect(Tok::LBrace)?;
        self.expect_field("name")?;
        let name = self.expect_string()?;
        self.expect_field("dimension")?;
        let dimension = self.keyword(
            Dimension::from_keyword,
            "expected_dimension",
            "a sustainability dimension",
            &["economic", "social", "environmental", "technical"],
        )?;
        self.expect_field("created_by")?;
        let created_by = self.expect_string()?;
        self.expect_field("goal")?;
        let goal = self.expect_string()?;
        self.expect_field("csf")?;
        let csf = self.expect_string()?;

        let mut metrics = Vec::new();
        let mut metric_spans = Vec::new();
        while self.is_ident("metric") {
            self.advance();
            let (metric_id, metric_span) = self.expect_ident("a metric id")?;
            self.expect(Tok::Assign)?;
            let (expression, _) = self.expr()?;
            metric_spans.push((metric_id.clone(), metric_span));
            metrics.push(MetricDefinition { id: metric_id, expression });
        }

        self.expect_field("target")?;
        let target = self.target()?;

        let mut actions = Vec::new();
        while self.is_ident("action") {
            self.advance();
            actions.push(ActionSpec { description: self.expect_string()? });
        }
        self.expect_field("monitor")?;
        let monitor_frequency = self.frequency()?;
        self.expect_field("window")?;
        let window = self.expect_duration()?;
        self.expect(Tok::RBrace)?;

        self.declare(IdKind::Kpi, id.clone(), span);
        for (metric_id, metric_span) in metric_spans {
            self.declare(IdKind::Metric, format!("{id}.{metric_id}"), metric_span);
        }
        self.catalog.kpis.push(KpiDefinition {
            id,
            name,
            dimension,
            created_by,
            goal,
            csf,
            metrics,
            target,
            actions,
            monitor_frequency,
            window,
        });
        Ok(())
    }

    fn target(&mut self) -> PResult<TargetSpec> {
        if self.is_ident("all") && *self.peek_at(1) == Tok::LParen {
            self.advance();
            self.advance();
            let mut predicates = vec![self.predicate()?];
            while *self.peek() == Tok::Comma {
                self.advance();
                predicates.push(self.predicate()?);
            }
            self.expect(Tok::RParen)?;
            Ok(TargetSpec::Conjunctive { predicates })
        } else {
            Ok(TargetSpec::Single { predicate: self.predicate()? })
        }
    }

    fn predicate(&mut self) -> PResult<Predicate> {
        let (metric_id, _) = self.expect_ident("a metric id")?;
        let comparator = match self.peek() {
            Tok::Ge => Comparator::Ge,
            Tok::Gt => Comparator::Gt,
            Tok::Le => Comparator::Le,
            Tok::Lt => Comparator::Lt,
            Tok::EqEq => Comparator::Eq,
            _ => return Err(self.fail("expected_comparator", "a comparator", &[">=", ">", "<=", "<", "=="])),
        };
        self.advance();
        let threshold = self.expect_number()?;
        Ok(Predicate { metric_id, comparator, threshold })
    }

    fn check_depth(&mut self, depth: usize) -> PResult<usize> {
        if depth > PARSE_DEPTH_LIMIT {
            let span = self.span();
            self.report(span, "expression_too_deep", format!("expression nesting exceeds {PARSE_DEPTH_LIMIT}"));
            Err(Abort)
        } else {
            Ok(depth)
        }
    }

    fn expr(&mut self) -> PResult<(ExpressionNode, usize)> {
        let (mut left, mut depth) = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok((left, depth)),
            };
            self.advance();
            let (right, right_depth) = self.term()?;
            depth = self.check_depth(1 + depth.max(right_depth))?;
            left = ExpressionNode::binary(op, left, right);
        }
    }

    fn term(&mut self) -> PResult<(ExpressionNode, usize)> {
        let (mut left, mut depth) = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok((left, depth)),
            };
            self.advance();
            let (right, right_depth) = self.factor()?;
            depth = self.check_depth(1 + depth.max(right_depth))?;
            left = ExpressionNode::binary(op, left, right);
        }
    }

    fn factor(&mut self) -> PResult<(ExpressionNode, usize)> {
        self.nesting += 1;
        self.check_depth(self.nesting)?;
        let result = self.factor_inner();
        self.nesting -= 1;
        result
    }

    fn factor_inner(&mut self) -> PResult<(ExpressionNode, usize)> {
        match self.peek().clone() {
            Tok::Number(n) => {
                self.advance();
                Ok((ExpressionNode::literal(n), 1))
            }
            Tok::Minus => {
                self.advance();
                if let Tok::Number(n) = *self.peek() {
                    self.advance();
                    return Ok((ExpressionNode::literal(-n), 1));
                }
                let (child, depth) = self.factor()?;
                let depth = self.check_depth(depth + 1)?;
                Ok((ExpressionNode::negate(child), depth))
            }
            Tok::LParen => {
                self.advance();
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) if *self.peek_at(1) == Tok::LParen => {
                let Some(func) = AggregateFn::from_keyword(&name) else {
                    return Err(self.fail(
                        "unknown_function",
                        "an aggregation function",
                        &["sum", "avg", "min", "max", "count", "last"],
                    ));
                };
                self.advance();
                self.advance();
                let (measure_id, _) = self.expect_ident("a measure id")?;
                let mut window = None;
                if *self.peek() == Tok::Comma {
                    self.advance();
                    self.expect_keyword("window")?;
                    self.expect(Tok::Assign)?;
                    window = Some(self.expect_duration()?);
                }
                self.expect(Tok::RParen)?;
                Ok((ExpressionNode::Aggregate { func, measure_id, window }, 1))
            }
            _ => Err(self.fail(
                "expected_expression",
                "an expression",
                &["number", "(", "-", "sum", "avg", "min", "max", "count", "last"],
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(src: &str) -> Vec<ParseError> {
        parse("t.kpi", src).1
    }

    const KPI_HEAD: &str = r#"kpi K1 { name: "n" dimension: social created_by: "x" goal: "g" csf: "c"
        metric m1 = sum(a)
        "#;

    #[test]
    fn malformed_predicate_reports_expected_number_at_paren() {
        let src = format!("{KPI_HEAD}target: all(m1 >= ) action \"a\" monitor: daily window: 1d }}");
        let errs = errors(&src);
        assert_eq!(errs.len(), 1, "{errs:?}");
        assert_eq!(errs[0].code, "expected_number");
        let at = src.find(">= )").unwrap() + 3;
        assert_eq!(errs[0].span.offset, at);
        assert_eq!(errs[0].span.length, 1);
    }

    #[test]
    fn recovery_reports_errors_from_several_blocks() {
        let src = "lab a { city: 1 }\nlab b { city: \"x\" country: \"y\" groups: [\"g\"] }\nmeasure m { name: }\n";
        let (parsed, errs) = parse("t.kpi", src);
        let codes: Vec<_> = errs.iter().map(|e| e.code.as_str()).collect();
        assert_eq!(codes, vec!["expected_string", "expected_string"]);
        assert_eq!(errs[1].span.line, 3);
        assert_eq!(parsed.catalog.labs.len(), 1);
    }

    #[test]
    fn expression_precedence_and_negative_literals() {
        let src = format!(
            "{KPI_HEAD}metric m2 = 2 * 3 + -1 - -(4) / sum(a, window = 2w)\ntarget: m1 > 0 action \"a\" monitor: daily window: 1d }}"
        );
        let (parsed, errs) = parse("t.kpi", &src);
        assert!(errs.is_empty(), "{errs:?}");
        use ExpressionNode as E;
        let expected = E::binary(
            BinaryOp::Sub,
            E::binary(
                BinaryOp::Add,
                E::binary(BinaryOp::Mul, E::literal(2.0), E::literal(3.0)),
                E::literal(-1.0),
            ),
            E::binary(
                BinaryOp::Div,
                E::negate(E::literal(4.0)),
                E::Aggregate { func: AggregateFn::Sum, measure_id: "a".into(), window: Some(Duration::weeks(2)) },
            ),
        );
        assert_eq!(parsed.catalog.kpis[0].metrics[1].expression, expected);
    }

    #[test]
    fn deep_nesting_is_rejected_without_overflow() {
        let deep = format!("{}1{}", "(".repeat(100_000), ")".repeat(100_000));
        let src = format!("{KPI_HEAD}metric m2 = {deep}\n");
        assert_eq!(errors(&src)[0].code, "expression_too_deep");
        let chain = format!("{KPI_HEAD}metric m2 = {}1\n", "1 + ".repeat(100_000));
        assert_eq!(errors(&chain)[0].code, "expression_too_deep");
        let negs = format!("{KPI_HEAD}metric m2 = {}x\n", "-".repeat(100_000));
        assert_eq!(errors(&negs)[0].code, "expression_too_deep");
    }

    #[test]
    fn duplicate_ids_point_at_second_declaration() {
        let lab = "lab a { city: \"x\" country: \"y\" groups: [\"g\"] }\n";
        let errs = errors(&format!("{lab}{lab}"));
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, "duplicate_id");
        assert_eq!(errs[0].span.line, 2);
    }

    #[test]
    fn unknown_function_and_zero_duration() {
        let src = format!("{KPI_HEAD}metric m2 = median(a)\n");
        assert_eq!(errors(&src)[0].code, "unknown_function");
        let src = format!("{KPI_HEAD}target: m1 > 0 action \"a\" monitor: daily window: 0d }}");
        assert_eq!(errors(&src)[0].code, "invalid_duration");
    }

    #[test]
    fn garbage_at_top_level() {
        let errs = errors("}}} 42 lab");
        assert!(!errs.is_empty());
        assert!(errs.iter().all(|e| e.span.offset <= 10));
    }
}
