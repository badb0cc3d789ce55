//! Plan-document and operator-string parsing.

use ordered_float::OrderedFloat;
use serde_json::{Map, Value};
use thiserror::Error;

use super::{ColumnRef, Comparator, Ident, Literal, NodePath, Operator, PlanNode, SimplePredicate, Step};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    /// Malformed JSON, or a malformed operator string. `offset` is a byte
    /// offset into the document for JSON errors and into the operator string
    /// otherwise.
    #[error("syntax error at {path} offset {offset}: {message}")]
    Syntax {
        path: NodePath,
        offset: usize,
        message: String,
    },
    /// A child slot holding something that cannot be a plan node.
    #[error("arity error at {path}: {message}")]
    Arity { path: NodePath, message: String },
}

impl ParseError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { offset, .. } => Some(*offset),
            ParseError::Arity { .. } => None,
        }
    }
}

const OPERATOR_KEY: &str = "Operator";
const LEFT_KEY: &str = "Left_child";
const RIGHT_KEY: &str = "Right_child";

/// Parses a JSON plan document.
///
/// A child may also be given as a bare table name string, which reads as a
/// table scan (the shorthand hand-written plans tend to use for leaves).
pub fn parse_plan(text: &str) -> Result<PlanNode, ParseError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ParseError::Syntax {
        path: NodePath::root(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    node_from_value(&value, NodePath::root())
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn node_from_value(value: &Value, path: NodePath) -> Result<PlanNode, ParseError> {
    match value {
        Value::Object(map) => node_from_object(map, path),
        Value::String(s) => {
            let op = parse_operator(s).map_err(|(offset, message)| ParseError::Syntax {
                path: path.clone(),
                offset,
                message,
            })?;
            Ok(PlanNode::leaf(op))
        }
        other => Err(ParseError::Arity {
            path,
            message: format!("expected a plan node object, found {}", json_kind(other)),
        }),
    }
}

fn node_from_object(map: &Map<String, Value>, path: NodePath) -> Result<PlanNode, ParseError> {
    for key in map.keys() {
        if key != OPERATOR_KEY && key != LEFT_KEY && key != RIGHT_KEY {
            return Err(ParseError::Syntax {
                path,
                offset: 0,
                message: format!("unexpected key {key:?}"),
            });
        }
    }
    let op_text = match map.get(OPERATOR_KEY) {
        Some(Value::String(s)) => s,
        Some(other) => {
            return Err(ParseError::Syntax {
                path,
                offset: 0,
                message: format!("\"Operator\" must be a string, found {}", json_kind(other)),
            })
        }
        None => {
            return Err(ParseError::Syntax {
                path,
                offset: 0,
                message: "missing \"Operator\" key".into(),
            })
        }
    };
    let op = parse_operator(op_text).map_err(|(offset, message)| ParseError::Syntax {
        path: path.clone(),
        offset,
        message,
    })?;
    let left = child(map.get(LEFT_KEY), path.child(Step::Left))?;
    let right = child(map.get(RIGHT_KEY), path.child(Step::Right))?;
    Ok(PlanNode { op, left, right })
}

fn child(value: Option<&Value>, path: NodePath) -> Result<Option<Box<PlanNode>>, ParseError> {
    match value {
        None | Some(Value::Null) => Ok(None),
        Some(v) => node_from_value(v, path).map(|n| Some(Box::new(n))),
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

type OpResult<T> = Result<T, (usize, String)>;

/// Parses one operator string. Errors carry a byte offset into `text`.
pub fn parse_operator(text: &str) -> OpResult<Operator> {
    let mut cur = Cursor::new(text);
    cur.skip_ws();
    let Some(open) = text[cur.pos..].find('(').map(|i| i + cur.pos) else {
        // A bare identifier is a table scan.
        let name = text.trim();
        if Ident::is_valid(name) {
            return Ok(Operator::scan(name));
        }
        return Err((cur.pos, format!("expected an operator or table name, found {text:?}")));
    };
    let name_start = cur.pos;
    let name: String = text[name_start..open]
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_')
        .flat_map(char::to_lowercase)
        .collect();
    let end = text.trim_end().len();
    if !text[..end].ends_with(')') || end <= open {
        return Err((end, "operator arguments must end with ')'".into()));
    }
    let close = end - 1;
    let inner_start = open + 1;
    let inner = Cursor::slice(text, inner_start, close);
    match name.as_str() {
        "tablescan" | "scan" => {
            let mut c = inner;
            c.skip_ws();
            let t = c.ident()?;
            c.expect_end()?;
            Ok(Operator::TableScan { table: t })
        }
        "select" => parse_select(inner),
        "join" => {
            let mut c = inner;
            let left_key = c.column_ref()?;
            c.expect_str("=")?;
            let right_key = c.column_ref()?;
            c.expect_end()?;
            Ok(Operator::Join {
                left_key,
                right_key,
            })
        }
        "objectdetection" | "detection" => {
            let mut c = inner;
            let target = c.column_ref()?;
            c.expect_str(":")?;
            c.skip_ws();
            let question_at = c.pos;
            let question = c.rest();
            let objects = detection_objects(question).map_err(|m| (question_at, m))?;
            Ok(Operator::ObjectDetection { target, objects })
        }
        "objectcounting" | "counting" => {
            let mut c = inner;
            let target = c.column_ref()?;
            c.expect_str(":")?;
            c.skip_ws();
            let question_at = c.pos;
            let rest = c.rest();
            let Some(colon) = rest.rfind(':') else {
                return Err((c.end, "missing ': <threshold>' in object counting".into()));
            };
            let object = counting_object(&rest[..colon]).map_err(|m| (question_at, m))?;
            let thr_text = rest[colon + 1..].trim();
            let threshold: i64 = thr_text.parse().map_err(|_| {
                (
                    question_at + colon + 1,
                    format!("threshold must be an integer, found {thr_text:?}"),
                )
            })?;
            Ok(Operator::ObjectCounting {
                target,
                object,
                threshold,
            })
        }
        _ => Err((
            name_start,
            format!("unknown operator {:?}", text[name_start..open].trim()),
        )),
    }
}

fn parse_select(mut c: Cursor<'_>) -> OpResult<Operator> {
    let mut predicates = Vec::new();
    loop {
        let target = c.column_ref()?;
        c.skip_ws();
        let cmp_at = c.pos;
        let comparator = c.comparator()?;
        let value = c.literal()?;
        if comparator.is_ordering() && !value.is_numeric() {
            return Err((cmp_at, format!("comparator {comparator} needs a numeric value")));
        }
        predicates.push(SimplePredicate {
            target,
            comparator,
            value,
        });
        c.skip_ws();
        if c.at_end() {
            break;
        }
        if !c.keyword("and") {
            return Err((c.pos, "expected AND or ')'".into()));
        }
    }
    Ok(Operator::Select { predicates })
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len()
        && s.is_char_boundary(prefix.len())
        && s[..prefix.len()].eq_ignore_ascii_case(prefix)
    {
        let rest = &s[prefix.len()..];
        if rest.is_empty() || rest.starts_with(' ') {
            return Some(rest.trim_start());
        }
    }
    None
}

fn strip_suffix_ci<'a>(s: &'a str, suffix: &str) -> Option<&'a str> {
    if s.len() >= suffix.len() {
        let cut = s.len() - suffix.len();
        if s.is_char_boundary(cut)
            && s[cut..].eq_ignore_ascii_case(suffix)
            && (cut == 0 || s[..cut].ends_with(' '))
        {
            return Some(s[..cut].trim_end());
        }
    }
    None
}

fn strip_question_mark(s: &str) -> String {
    normalize_ws(s.trim().trim_end_matches('?'))
}

/// "are there X and Y?" → ["X", "Y"].
fn detection_objects(question: &str) -> Result<Vec<String>, String> {
    let q = strip_question_mark(question);
    let mut body = q.as_str();
    for prefix in ["are there", "is there", "are", "is"] {
        if let Some(rest) = strip_prefix_ci(body, prefix) {
            body = rest;
            break;
        }
    }
    for filler in ["any", "both", "a", "an"] {
        if let Some(rest) = strip_prefix_ci(body, filler) {
            body = rest;
            break;
        }
    }
    let mut objects = Vec::new();
    for part in split_and(body) {
        let mut part = part.trim();
        for filler in ["any", "a", "an"] {
            if let Some(rest) = strip_prefix_ci(part, filler) {
                part = rest;
                break;
            }
        }
        if part.is_empty() {
            return Err(format!("empty object phrase in {question:?}"));
        }
        objects.push(part.to_string());
    }
    if objects.is_empty() {
        return Err(format!("no object phrase in {question:?}"));
    }
    Ok(objects)
}

fn split_and(body: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let lower = body.to_ascii_lowercase();
    let mut search = 0;
    while let Some(i) = lower[search..].find(" and ") {
        let at = search + i;
        parts.push(&body[start..at]);
        start = at + 5;
        search = start;
    }
    parts.push(&body[start..]);
    parts
}

/// "how many X are there?" → "X".
fn counting_object(question: &str) -> Result<String, String> {
    let q = strip_question_mark(question);
    let mut body = q.as_str();
    if let Some(rest) = strip_prefix_ci(body, "how many") {
        body = rest;
    }
    for suffix in ["are there", "is there", "are in the image", "in the image"] {
        if let Some(rest) = strip_suffix_ci(body, suffix) {
            body = rest;
            break;
        }
    }
    if body.is_empty() {
        return Err(format!("no object phrase in {question:?}"));
    }
    Ok(body.to_string())
}

/// Byte cursor over an operator string, restricted to `[pos, end)`.
struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor {
            text,
            pos: 0,
            end: text.len(),
        }
    }

    fn slice(text: &'a str, pos: usize, end: usize) -> Self {
        Cursor { text, pos, end }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..self.end].chars().next()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.end
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..self.end]
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn expect_end(&mut self) -> OpResult<()> {
        self.skip_ws();
        if self.at_end() {
            Ok(())
        } else {
            Err((self.pos, format!("unexpected trailing text {:?}", self.rest())))
        }
    }

    fn expect_str(&mut self, s: &str) -> OpResult<()> {
        self.skip_ws();
        if self.rest().starts_with(s) {
            self.pos += s.len();
            Ok(())
        } else {
            Err((self.pos, format!("expected {s:?}")))
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        let rest = self.rest();
        if rest.len() > kw.len()
            && rest.is_char_boundary(kw.len())
            && rest[..kw.len()].eq_ignore_ascii_case(kw)
            && rest[kw.len()..].starts_with(char::is_whitespace)
        {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> OpResult<Ident> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '-' || c == '$' {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err((start, "expected an identifier".into()));
        }
        Ok(Ident::new(&self.text[start..self.pos]))
    }

    fn column_ref(&mut self) -> OpResult<ColumnRef> {
        self.skip_ws();
        let table = self.ident()?;
        if self.peek() != Some('.') {
            return Err((self.pos, "expected '.' in Table.column".into()));
        }
        self.pos += 1;
        let column = self.ident()?;
        Ok(ColumnRef { table, column })
    }

    fn comparator(&mut self) -> OpResult<Comparator> {
        let rest = self.rest();
        for (sym, cmp) in [
            ("!=", Comparator::Ne),
            ("<>", Comparator::Ne),
            ("<=", Comparator::Le),
            (">=", Comparator::Ge),
            ("==", Comparator::Eq),
            ("=", Comparator::Eq),
            ("<", Comparator::Lt),
            (">", Comparator::Gt),
        ] {
            if rest.starts_with(sym) {
                self.pos += sym.len();
                return Ok(cmp);
            }
        }
        Err((self.pos, "expected a comparator".into()))
    }

    fn literal(&mut self) -> OpResult<Literal> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some('\'') => {
                self.pos += 1;
                let mut out = String::new();
                loop {
                    match self.peek() {
                        None => return Err((start, "unterminated string literal".into())),
                        Some('\'') => {
                            self.pos += 1;
                            if self.peek() == Some('\'') {
                                out.push('\'');
                                self.pos += 1;
                            } else {
                                break;
                            }
                        }
                        Some(c) => {
                            out.push(c);
                            self.pos += c.len_utf8();
                        }
                    }
                }
                Ok(Literal::Str(out))
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                while let Some(c) = self.peek() {
                    if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' || c == 'e' || c == 'E' {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let s = &self.text[start..self.pos];
                if let Ok(v) = s.parse::<i64>() {
                    Ok(Literal::Int(v))
                } else if let Ok(v) = s.parse::<f64>() {
                    if v.is_finite() {
                        Ok(Literal::Decimal(OrderedFloat(v)))
                    } else {
                        Err((start, format!("non-finite number {s:?}")))
                    }
                } else {
                    Err((start, format!("malformed number {s:?}")))
                }
            }
            _ => Err((start, "expected a literal".into())),
        }
    }
}
