use super::{ParseError, SourceSpan};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Number(f64),
    /// Raw digits and unit suffix, e.g. `30d`.
    Duration(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Ge,
    Gt,
    Le,
    Lt,
    EqEq,
    /// Placeholder for a lexical error that has already been reported.
    Error,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(_) => "string".into(),
            Tok::Number(_) => "number".into(),
            Tok::Duration(s) => format!("duration `{s}`"),
            Tok::Error => "invalid token".into(),
            Tok::Eof => "end of input".into(),
            other => format!("`{}`", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Colon => ":",
            Tok::Assign => "=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Ge => ">=",
            Tok::Gt => ">",
            Tok::Le => "<=",
            Tok::Lt => "<",
            Tok::EqEq => "==",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: SourceSpan,
}

struct Lexer<'a> {
    file: &'a str,
    src: &'a str,
    pos: usize,
    line: u32,
    column: u32,
    errors: Vec<ParseError>,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn span_from(&self, start: usize, line: u32, column: u32) -> SourceSpan {
        SourceSpan {
            file: self.file.to_string(),
            line,
            column,
            offset: start,
            length: self.pos - start,
        }
    }

    fn error(&mut self, span: SourceSpan, code: &str, message: String) {
        self.errors.push(ParseError { span, code: code.to_string(), message, expected: None });
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Token {
        self.skip_trivia();
        let (start, line, column) = (self.pos, self.line, self.column);
        let Some(c) = self.bump() else {
            return Token { tok: Tok::Eof, span: self.span_from(start, line, column) };
        };
        let tok = match c {
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '=' if self.peek() == Some('=') => {
                self.bump();
                Tok::EqEq
            }
            '=' => Tok::Assign,
            '>' | '<' => {
                let eq = self.peek() == Some('=');
                if eq {
                    self.bump();
                }
                match (c, eq) {
                    ('>', true) => Tok::Ge,
                    ('>', false) => Tok::Gt,
                    ('<', true) => Tok::Le,
                    _ => Tok::Lt,
                }
            }
            '"' => self.string(start, line, column),
            c if c.is_ascii_digit() => self.number(start, line, column),
            c if is_ident_start(c) => {
                while self.peek().is_some_and(is_ident_continue) {
                    self.bump();
                }
                Tok::Ident(self.src[start..self.pos].to_string())
            }
            other => {
                let span = self.span_from(start, line, column);
                self.error(span, "unexpected_char", format!("unexpected character {other:?}"));
                Tok::Error
            }
        };
        Token { tok, span: self.span_from(start, line, column) }
    }

    fn string(&mut self, start: usize, line: u32, column: u32) -> Tok {
        let mut out = String::new();
        let mut bad_escape = None;
        loop {
            match self.peek() {
                None | Some('\n') | Some('\r') => {
                    let span = self.span_from(start, line, column);
                    self.error(span, "unterminated_string", "string literal is not closed on this line".into());
                    return Tok::Error;
                }
                Some('"') => {
                    self.bump();
                    break;
                }
                Some('\\') => {
                    let (esc_start, esc_line, esc_col) = (self.pos, self.line, self.column);
                    self.bump();
                    match self.peek() {
                        Some('"') => out.push('"'),
                        Some('\\') => out.push('\\'),
                        Some('n') => out.push('\n'),
                        Some('r') => out.push('\r'),
                        Some('t') => out.push('\t'),
                        // Leave newline/EOF for the unterminated check above.
                        None | Some('\n') | Some('\r') => continue,
                        Some(_) => {
                            self.bump();
                            if bad_escape.is_none() {
                                bad_escape = Some(self.span_from(esc_start, esc_line, esc_col));
                            }
                            continue;
                        }
                    }
                    self.bump();
                }
                Some(c) => {
                    out.push(c);
                    self.bump();
                }
            }
        }
        if let Some(span) = bad_escape {
            self.error(span, "invalid_escape", "unknown escape sequence; use \\\", \\\\, \\n, \\r or \\t".into());
            return Tok::Error;
        }
        Tok::Str(out)
    }

    fn number(&mut self, start: usize, line: u32, column: u32) -> Tok {
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        let mut integral = true;
        if self.peek() == Some('.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            integral = false;
            self.bump();
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let digit_at = if matches!(self.peek_at(1), Some('+' | '-')) { 2 } else { 1 };
            if self.peek_at(digit_at).is_some_and(|c| c.is_ascii_digit()) {
                integral = false;
                for _ in 0..digit_at {
                    self.bump();
                }
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
            }
        }
        let digits_end = self.pos;
        if integral && matches!(self.peek(), Some('d' | 'w' | 'm')) && !self.peek_at(1).is_some_and(is_ident_continue) {
            self.bump();
            return Tok::Duration(self.src[start..self.pos].to_string());
        }
        if self.peek().is_some_and(|c| is_ident_continue(c) || c == '.') {
            while self.peek().is_some_and(|c| is_ident_continue(c) || c == '.') {
                self.bump();
            }
            let span = self.span_from(start, line, column);
            let text = self.src[start..self.pos].to_string();
            self.error(span, "bad_number", format!("malformed number `{text}`"));
            return Tok::Error;
        }
        match self.src[start..digits_end].parse::<f64>() {
            Ok(v) if v.is_finite() => Tok::Number(v),
            _ => {
                let span = self.span_from(start, line, column);
                let text = self.src[start..digits_end].to_string();
                self.error(span, "bad_number", format!("number `{text}` is out of range"));
                Tok::Error
            }
        }
    }
}

/// Tokenizes `src`. Always ends with an `Eof` token; lexical errors are
/// returned alongside and replaced by `Tok::Error` in the stream.
pub(crate) fn tokenize(file: &str, src: &str) -> (Vec<Token>, Vec<ParseError>) {
    let mut lexer = Lexer { file, src, pos: 0, line: 1, column: 1, errors: Vec::new() };
    let mut tokens = Vec::new();
    loop {
        let token = lexer.next_token();
        let eof = token.tok == Tok::Eof;
        tokens.push(token);
        if eof {
            break;
        }
    }
    (tokens, lexer.errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        let (tokens, errors) = tokenize("t", src);
        assert!(errors.is_empty(), "{errors:?}");
        tokens.into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn punctuation_and_comparators() {
        assert_eq!(
            kinds("a >= 1 == 2 <= > < = # comment\n"),
            vec![
                Tok::Ident("a".into()),
                Tok::Ge,
                Tok::Number(1.0),
                Tok::EqEq,
                Tok::Number(2.0),
                Tok::Le,
                Tok::Gt,
                Tok::Lt,
                Tok::Assign,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn numbers_and_durations() {
        assert_eq!(
            kinds("12 1.5 2e3 1E-2 30d 2w 3m"),
            vec![
                Tok::Number(12.0),
                Tok::Number(1.5),
                Tok::Number(2000.0),
                Tok::Number(0.01),
                Tok::Duration("30d".into()),
                Tok::Duration("2w".into()),
                Tok::Duration("3m".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn string_escapes() {
        assert_eq!(kinds(r#""a\"b\\c\n\t""#), vec![Tok::Str("a\"b\\c\n\t".into()), Tok::Eof]);
    }

    #[test]
    fn lexical_errors_carry_spans() {
        let (_, errors) = tokenize("t", "lab x {\n  city: \"open\n}");
        assert_eq!(errors[0].code, "unterminated_string");
        assert_eq!((errors[0].span.line, errors[0].span.column), (2, 9));

        let (_, errors) = tokenize("t", "3days 1e999 @ \"\\q\"");
        let codes: Vec<_> = errors.iter().map(|e| e.code.as_str()).collect();
        assert_eq!(codes, vec!["bad_number", "bad_number", "unexpected_char", "invalid_escape"]);
    }

    #[test]
    fn columns_count_characters() {
        let (tokens, _) = tokenize("t", "\"é\" x");
        assert_eq!(tokens[1].span.column, 5);
        assert_eq!(tokens[1].span.offset, 5);
    }
}
