//! Code-complexity metrics for candidate scripts: logical lines, cyclomatic
//! complexity, Halstead counts and a maintainability index.
//!
//! Counting is token-level. The operator/operand classification is
//! convention-dependent, so the table ships as versioned data in
//! `data/python_token_classes.json`.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ComplexityMetrics {
    /// False when the body could not be tokenized; all counts are zero then.
    pub parse_ok: bool,
    pub lloc: u32,
    pub cyclomatic: u32,
    /// Distinct operators (Halstead n1).
    pub halstead_n1: u32,
    /// Distinct operands (Halstead n2).
    pub halstead_n2: u32,
    /// Total operator occurrences (Halstead N1).
    pub halstead_big_n1: u32,
    /// Total operand occurrences (Halstead N2).
    pub halstead_big_n2: u32,
    /// (n1 / 2) * (N2 / n2).
    pub difficulty: f64,
    /// (N1 + N2) * log2(n1 + n2).
    pub volume: f64,
    /// Clamped to the usual 0-100 scale.
    pub maintainability_index: f64,
}

#[derive(Deserialize)]
struct TokenClasses {
    #[allow(dead_code)]
    version: u32,
    keywords: Vec<String>,
    operator_symbols: Vec<String>,
    closing_brackets: Vec<String>,
    branch_keywords: Vec<String>,
}

fn classes() -> &'static TokenClasses {
    static CLASSES: OnceLock<TokenClasses> = OnceLock::new();
    CLASSES.get_or_init(|| {
        let mut c: TokenClasses =
            serde_json::from_str(include_str!("../../data/python_token_classes.json"))
                .expect("embedded token table is valid");
        // Longest match first for the symbol scanner.
        c.operator_symbols.sort_by_key(|s| std::cmp::Reverse(s.len()));
        c
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Keyword(String),
    Identifier(String),
    Number(String),
    Str,
    OperatorSymbol(String),
    ClosingBracket,
    Comment,
    Newline,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s.as_bytes())
    }

    fn take_string(&mut self) -> Result<(), ()> {
        // self.pos sits at the opening quote; a prefix was already consumed.
        let quote = self.src[self.pos];
        let triple = self.starts_with(if quote == b'\'' { "'''" } else { "\"\"\"" });
        if triple {
            self.pos += 3;
            let closer: &[u8] = if quote == b'\'' { b"'''" } else { b"\"\"\"" };
            while self.pos < self.src.len() {
                if self.src[self.pos..].starts_with(closer) {
                    self.pos += 3;
                    return Ok(());
                }
                self.pos += 1;
            }
            Err(())
        } else {
            self.pos += 1;
            while let Some(c) = self.peek() {
                match c {
                    b'\\' => self.pos = (self.pos + 2).min(self.src.len()),
                    b'\n' => return Err(()), // unterminated
                    c if c == quote => {
                        self.pos += 1;
                        return Ok(());
                    }
                    _ => self.pos += 1,
                }
            }
            Err(())
        }
    }

    fn next_token(&mut self) -> Result<Option<Token>, ()> {
        loop {
            let c = match self.peek() {
                Some(c) => c,
                None => return Ok(None),
            };
            match c {
                b'\n' => {
                    self.pos += 1;
                    return Ok(Some(Token::Newline));
                }
                b'\\' if self.src.get(self.pos + 1) == Some(&b'\n') => {
                    // Explicit line continuation: swallow both characters.
                    self.pos += 2;
                }
                b' ' | b'\t' | b'\r' => self.pos += 1,
                b'#' => {
                    while self.peek().is_some_and(|c| c != b'\n') {
                        self.pos += 1;
                    }
                    return Ok(Some(Token::Comment));
                }
                b'\'' | b'"' => {
                    self.take_string()?;
                    return Ok(Some(Token::Str));
                }
                b'0'..=b'9' => return Ok(Some(self.take_number())),
                b'.' if self.src.get(self.pos + 1).is_some_and(|c| c.is_ascii_digit()) => {
                    return Ok(Some(self.take_number()))
                }
                c if c == b'_' || c.is_ascii_alphabetic() => {
                    let start = self.pos;
                    while self
                        .peek()
                        .is_some_and(|c| c == b'_' || c.is_ascii_alphanumeric())
                    {
                        self.pos += 1;
                    }
                    let word = std::str::from_utf8(&self.src[start..self.pos])
                        .map_err(|_| ())?
                        .to_string();
                    // String prefixes like r"", f'', rb"" glue onto the literal.
                    if word.len() <= 2
                        && word.chars().all(|ch| "rbfuRBFU".contains(ch))
                        && matches!(self.peek(), Some(b'\'') | Some(b'"'))
                    {
                        self.take_string()?;
                        return Ok(Some(Token::Str));
                    }
                    if classes().keywords.iter().any(|k| k == &word) {
                        return Ok(Some(Token::Keyword(word)));
                    }
                    return Ok(Some(Token::Identifier(word)));
                }
                _ => {
                    if classes().closing_brackets.iter().any(|s| self.starts_with(s)) {
                        self.pos += 1;
                        return Ok(Some(Token::ClosingBracket));
                    }
                    for sym in &classes().operator_symbols {
                        if self.starts_with(sym) {
                            self.pos += sym.len();
                            return Ok(Some(Token::OperatorSymbol(sym.clone())));
                        }
                    }
                    // Unknown byte (stray unicode etc.): not tokenizable.
                    return Err(());
                }
            }
        }
    }

    fn take_number(&mut self) -> Token {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' {
                self.pos += 1;
                // Exponent sign: 1e-5, 2E+3.
                if (c == b'e' || c == b'E')
                    && self.pos > start + 1
                    && self.src[start..].iter().take(self.pos - start).all(|b| {
                        b.is_ascii_alphanumeric() || *b == b'_' || *b == b'.'
                    })
                    && matches!(self.peek(), Some(b'+') | Some(b'-'))
                {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        Token::Number(String::from_utf8_lossy(&self.src[start..self.pos]).to_string())
    }
}

/// Computes complexity metrics for a candidate script body. Bodies that do
/// not tokenize yield a flagged zero record; metrics are a pure function of
/// the text.
pub fn compute_complexity(body: &str) -> ComplexityMetrics {
    let mut lexer = Lexer::new(body);
    let mut tokens = Vec::new();
    loop {
        match lexer.next_token() {
            Ok(Some(t)) => tokens.push(t),
            Ok(None) => break,
            Err(()) => {
                return ComplexityMetrics {
                    parse_ok: false,
                    ..ComplexityMetrics::default()
                }
            }
        }
    }

    let mut distinct_ops: BTreeSet<String> = BTreeSet::new();
    let mut distinct_operands: BTreeSet<String> = BTreeSet::new();
    let (mut big_n1, mut big_n2) = (0u32, 0u32);
    let mut branches = 0u32;
    let mut lloc = 0u32;
    let mut line_has_code = false;
    let mut bracket_depth = 0i32;
    let mut comment_lines = 0u32;
    let mut line_has_comment = false;

    for token in &tokens {
        match token {
            Token::Newline => {
                if line_has_comment {
                    comment_lines += 1;
                }
                if bracket_depth == 0 {
                    if line_has_code {
                        lloc += 1;
                    }
                    line_has_code = false;
                }
                line_has_comment = false;
                continue;
            }
            Token::Comment => {
                line_has_comment = true;
                continue;
            }
            Token::Keyword(word) => {
                line_has_code = true;
                big_n1 += 1;
                distinct_ops.insert(word.clone());
                if classes().branch_keywords.iter().any(|k| k == word) {
                    branches += 1;
                }
            }
            Token::OperatorSymbol(sym) => {
                line_has_code = true;
                if sym == ";" && bracket_depth == 0 && line_has_code {
                    lloc += 1; // statement separator
                }
                if matches!(sym.as_str(), "(" | "[" | "{") {
                    bracket_depth += 1;
                }
                big_n1 += 1;
                distinct_ops.insert(sym.clone());
            }
            Token::ClosingBracket => {
                line_has_code = true;
                bracket_depth = (bracket_depth - 1).max(0);
            }
            Token::Identifier(word) => {
                line_has_code = true;
                big_n2 += 1;
                distinct_operands.insert(word.clone());
            }
            Token::Number(text) => {
                line_has_code = true;
                big_n2 += 1;
                distinct_operands.insert(text.clone());
            }
            Token::Str => {
                line_has_code = true;
                big_n2 += 1;
                distinct_operands.insert("<str>".to_string());
            }
        }
    }
    if line_has_code {
        lloc += 1;
    }
    if line_has_comment {
        comment_lines += 1;
    }

    let n1 = distinct_ops.len() as u32;
    let n2 = distinct_operands.len() as u32;
    let empty = big_n1 + big_n2 == 0;
    if empty {
        return ComplexityMetrics {
            parse_ok: true,
            ..ComplexityMetrics::default()
        };
    }

    let difficulty = if n2 == 0 {
        0.0
    } else {
        (n1 as f64 / 2.0) * (big_n2 as f64 / n2 as f64)
    };
    let volume = ((big_n1 + big_n2) as f64) * ((n1 + n2) as f64).log2();
    let cyclomatic = 1 + branches;

    let physical_lines = body.lines().count().max(1) as u32;
    let comment_ratio = comment_lines as f64 / physical_lines as f64;
    let mi_raw = 171.0 - 5.2 * volume.max(1.0).ln() - 0.23 * cyclomatic as f64
        - 16.2 * (lloc.max(1) as f64).ln()
        + 50.0 * (2.4 * comment_ratio).sqrt().sin();
    let maintainability_index = (mi_raw * 100.0 / 171.0).clamp(0.0, 100.0);

    ComplexityMetrics {
        parse_ok: true,
        lloc,
        cyclomatic,
        halstead_n1: n1,
        halstead_n2: n2,
        halstead_big_n1: big_n1,
        halstead_big_n2: big_n2,
        difficulty,
        volume,
        maintainability_index,
    }
}
