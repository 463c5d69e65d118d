//! Reader for the ARFF files served by OpenML (datasets, split files and
//! run predictions). Dense and sparse data sections are supported; relational
//! attributes are not.

use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("ARFF byte {offset}: {message}")]
pub struct ArffError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ArffError> {
    Err(ArffError {
        offset,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeKind {
    Numeric,
    Nominal(Vec<String>),
    String,
    Date,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Missing,
    Number(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Missing => f.write_str("?"),
            Value::Number(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arff {
    pub relation: String,
    pub attributes: Vec<Attribute>,
    pub rows: Vec<Vec<Value>>,
}

impl Arff {
    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }
}

/// Quick check used to tell ARFF apart from CSV.
pub fn looks_like_arff(bytes: &[u8]) -> bool {
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(4096)]);
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('%'))
        .map(|l| l.starts_with('@'))
        .unwrap_or(false)
}

struct Token {
    text: String,
    quoted: bool,
    offset: usize,
}

/// Splits `s` on top-level commas, honouring single and double quotes.
fn split_values(s: &str, base: usize) -> Result<Vec<Token>, ArffError> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    loop {
        while i < bytes.len() && (bytes[i] == b' ' || bytes[i] == b'\t') {
            i += 1;
        }
        let start = i;
        let (text, quoted) = if i < bytes.len() && (bytes[i] == b'\'' || bytes[i] == b'"') {
            let q = bytes[i];
            i += 1;
            let mut buf = String::new();
            let mut closed = false;
            let mut chars = s[i..].char_indices();
            while let Some((j, ch)) = chars.next() {
                if ch == '\\' {
                    if let Some((_, esc)) = chars.next() {
                        buf.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                    }
                } else if ch as u32 == q as u32 {
                    i += j + 1;
                    closed = true;
                    break;
                } else {
                    buf.push(ch);
                }
            }
            if !closed {
                return err(base + start, "unterminated quoted value");
            }
            while i < bytes.len() && (bytes[i] == b' ' || bytes[i] == b'\t') {
                i += 1;
            }
            if i < bytes.len() && bytes[i] != b',' {
                return err(base + i, "unexpected text after quoted value");
            }
            (buf, true)
        } else {
            let end = s[i..].find(',').map(|e| i + e).unwrap_or(bytes.len());
            let raw = s[i..end].trim().to_string();
            i = end;
            (raw, false)
        };
        out.push(Token {
            text,
            quoted,
            offset: base + start,
        });
        if i >= bytes.len() {
            break;
        }
        i += 1; // comma
    }
    Ok(out)
}

/// Reads a possibly quoted name at the start of `s`; returns it and the rest.
fn take_name(s: &str, base: usize) -> Result<(String, &str), ArffError> {
    let s_trim = s.trim_start();
    let skipped = s.len() - s_trim.len();
    let first = s_trim.chars().next();
    match first {
        Some(q @ ('\'' | '"')) => {
            let body = &s_trim[1..];
            match body.find(q) {
                Some(end) => Ok((body[..end].to_string(), &body[end + 1..])),
                None => err(base + skipped, "unterminated quoted name"),
            }
        }
        Some(_) => {
            let end = s_trim
                .find(|c: char| c.is_whitespace() || c == '{')
                .unwrap_or(s_trim.len());
            Ok((s_trim[..end].to_string(), &s_trim[end..]))
        }
        None => err(base, "missing name"),
    }
}

fn parse_attribute(rest: &str, base: usize) -> Result<Attribute, ArffError> {
    let (name, type_part) = take_name(rest, base)?;
    let type_offset = base + (rest.len() - type_part.len());
    let ty = type_part.trim();
    let kind = if let Some(inner) = ty.strip_prefix('{') {
        let inner = inner.strip_suffix('}').ok_or(ArffError {
            offset: type_offset,
            message: format!("nominal attribute {name:?} is missing a closing brace"),
        })?;
        let values: Vec<String> = split_values(inner, type_offset + 1)?
            .into_iter()
            .map(|t| t.text)
            .filter(|t| !t.is_empty())
            .collect();
        AttributeKind::Nominal(values)
    } else {
        let keyword = ty
            .split_whitespace()
            .next()
            .unwrap_or("")
            .to_ascii_lowercase();
        match keyword.as_str() {
            "numeric" | "real" | "integer" => AttributeKind::Numeric,
            "string" => AttributeKind::String,
            "date" => AttributeKind::Date,
            other => {
                return err(
                    type_offset,
                    format!("unsupported attribute type {other:?} for {name:?}"),
                )
            }
        }
    };
    Ok(Attribute { name, kind })
}

fn typed_value(attr: &Attribute, tok: &Token) -> Result<Value, ArffError> {
    if !tok.quoted && (tok.text == "?" || tok.text.is_empty()) {
        return Ok(Value::Missing);
    }
    match &attr.kind {
        AttributeKind::Numeric => tok.text.parse::<f64>().map(Value::Number).or_else(|_| {
            err(
                tok.offset,
                format!("attribute {:?}: {:?} is not numeric", attr.name, tok.text),
            )
        }),
        AttributeKind::Nominal(values) => {
            if values.iter().any(|v| v == &tok.text) {
                Ok(Value::Text(tok.text.clone()))
            } else {
                err(
                    tok.offset,
                    format!(
                        "attribute {:?}: {:?} is not a declared value",
                        attr.name, tok.text
                    ),
                )
            }
        }
        AttributeKind::String | AttributeKind::Date => Ok(Value::Text(tok.text.clone())),
    }
}

fn sparse_default(attr: &Attribute) -> Value {
    match &attr.kind {
        AttributeKind::Numeric => Value::Number(0.0),
        AttributeKind::Nominal(values) => values
            .first()
            .map(|v| Value::Text(v.clone()))
            .unwrap_or(Value::Missing),
        _ => Value::Text(String::new()),
    }
}

pub fn parse(bytes: &[u8]) -> Result<Arff, ArffError> {
    let text = match std::str::from_utf8(bytes) {
        Ok(t) => t,
        Err(e) => return err(e.valid_up_to(), "invalid UTF-8"),
    };
    let mut relation = String::new();
    let mut attributes = Vec::new();
    let mut rows = Vec::new();
    let mut in_data = false;
    let mut offset = 0;
    for raw_line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += raw_line.len();
        let line = raw_line.trim_end_matches(['\n', '\r']);
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let lead = line.len() - line.trim_start().len();
        let base = line_offset + lead;
        if !in_data {
            if !trimmed.starts_with('@') {
                return err(base, "expected a header declaration");
            }
            let keyword_end = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
            let keyword = trimmed[..keyword_end].to_ascii_lowercase();
            let rest = &trimmed[keyword_end..];
            match keyword.as_str() {
                "@relation" => relation = take_name(rest, base + keyword_end)?.0,
                "@attribute" => attributes.push(parse_attribute(rest, base + keyword_end)?),
                "@data" => {
                    if attributes.is_empty() {
                        return err(base, "@data before any @attribute");
                    }
                    in_data = true;
                }
                other => return err(base, format!("unknown declaration {other}")),
            }
            continue;
        }
        if let Some(inner) = trimmed.strip_prefix('{') {
            let inner = match inner.strip_suffix('}') {
                Some(i) => i,
                None => return err(base, "sparse row without closing brace"),
            };
            let mut row: Vec<Value> = attributes.iter().map(sparse_default).collect();
            for tok in split_values(inner, base + 1)? {
                if tok.text.is_empty() {
                    continue;
                }
                let (idx, val) = match tok.text.split_once(char::is_whitespace) {
                    Some(p) => p,
                    None => return err(tok.offset, "sparse entry needs an index and a value"),
                };
                let idx: usize = match idx.parse() {
                    Ok(i) if i < attributes.len() => i,
                    _ => return err(tok.offset, format!("bad sparse index {idx:?}")),
                };
                let val = val.trim();
                let (val, quoted) = match val.strip_prefix('\'').and_then(|v| v.strip_suffix('\''))
                {
                    Some(v) => (v, true),
                    None => (val, false),
                };
                let vt = Token {
                    text: val.to_string(),
                    quoted,
                    offset: tok.offset,
                };
                row[idx] = typed_value(&attributes[idx], &vt)?;
            }
            rows.push(row);
            continue;
        }
        let tokens = split_values(line, line_offset)?;
        if tokens.len() != attributes.len() {
            return err(
                base,
                format!(
                    "row has {} values, header declares {} attributes",
                    tokens.len(),
                    attributes.len()
                ),
            );
        }
        let row = attributes
            .iter()
            .zip(&tokens)
            .map(|(a, t)| typed_value(a, t))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if !in_data {
        return err(text.len(), "no @data section");
    }
    Ok(Arff {
        relation,
        attributes,
        rows,
    })
}

/// Serializes an ARFF document. Used by fixture tooling and tests.
pub fn write(arff: &Arff) -> String {
    fn quote(s: &str) -> String {
        if s.is_empty() || s.contains([',', ' ', '\'', '"', '{', '}', '%', '\t']) || s == "?" {
            format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
        } else {
            s.to_string()
        }
    }
    let mut out = format!("@RELATION {}\n\n", quote(&arff.relation));
    for a in &arff.attributes {
        let ty = match &a.kind {
            AttributeKind::Numeric => "NUMERIC".to_string(),
            AttributeKind::String => "STRING".to_string(),
            AttributeKind::Date => "DATE".to_string(),
            AttributeKind::Nominal(v) => format!(
                "{{{}}}",
                v.iter().map(|s| quote(s)).collect::<Vec<_>>().join(",")
            ),
        };
        out.push_str(&format!("@ATTRIBUTE {} {}\n", quote(&a.name), ty));
    }
    out.push_str("\n@DATA\n");
    for row in &arff.rows {
        let cells: Vec<String> = row
            .iter()
            .map(|v| match v {
                Value::Missing => "?".to_string(),
                Value::Number(x) => format!("{x}"),
                Value::Text(s) => quote(s),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
