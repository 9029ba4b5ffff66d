//! Reply extraction and structural validation.

use std::collections::HashSet;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON object found in reply")]
    MalformedReply,
    #[error("reply does not match schema: {0}")]
    SchemaMismatch(String),
}

/// Structural description of an expected JSON value.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Non-blank string.
    Str,
    /// String drawn from a closed set.
    OneOf(Vec<String>),
    List {
        item: Box<Shape>,
        min: usize,
        max: usize,
    },
    /// Object with the listed required fields; extra fields are ignored.
    Record(Vec<(String, Shape)>),
    /// Object with arbitrary keys and uniformly shaped values.
    Map {
        value: Box<Shape>,
        min: usize,
    },
    /// Multiple-choice item: `question`, at least two distinct `options`,
    /// and an `answer` equal to exactly one option.
    Choice,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseSchema {
    FreeText {
        must_begin: Option<String>,
    },
    Json(Shape),
    /// Lines of the form `<label> <i>: <text>` for i = 1..=count.
    NumberedLines {
        label: String,
        count: usize,
    },
}

impl Shape {
    pub fn validate(&self, value: &Value) -> Result<(), String> {
        self.check(value, "$")
    }

    fn check(&self, value: &Value, path: &str) -> Result<(), String> {
        match self {
            Shape::Str => match value.as_str() {
                Some(s) if !s.trim().is_empty() => Ok(()),
                Some(_) => Err(format!("{path}: empty string")),
                None => Err(format!("{path}: expected string")),
            },
            Shape::OneOf(allowed) => match value.as_str() {
                Some(s) if allowed.iter().any(|a| a == s) => Ok(()),
                Some(s) => Err(format!("{path}: {s:?} not in {allowed:?}")),
                None => Err(format!("{path}: expected string")),
            },
            Shape::List { item, min, max } => {
                let arr = value.as_array().ok_or_else(|| format!("{path}: expected array"))?;
                if arr.len() < *min || arr.len() > *max {
                    return Err(format!(
                        "{path}: arity {} outside [{min}, {}]",
                        arr.len(),
                        if *max == usize::MAX {
                            "inf".to_string()
                        } else {
                            max.to_string()
                        }
                    ));
                }
                for (i, v) in arr.iter().enumerate() {
                    item.check(v, &format!("{path}[{i}]"))?;
                }
                Ok(())
            }
            Shape::Record(fields) => {
                let obj = value.as_object().ok_or_else(|| format!("{path}: expected object"))?;
                for (name, shape) in fields {
                    let v = obj.get(name).ok_or_else(|| format!("{path}: missing field {name:?}"))?;
                    shape.check(v, &format!("{path}.{name}"))?;
                }
                Ok(())
            }
            Shape::Map { value: shape, min } => {
                let obj = value.as_object().ok_or_else(|| format!("{path}: expected object"))?;
                if obj.len() < *min {
                    return Err(format!("{path}: fewer than {min} entries"));
                }
                for (k, v) in obj {
                    shape.check(v, &format!("{path}.{k}"))?;
                }
                Ok(())
            }
            Shape::Choice => {
                let options = Shape::List {
                    item: Box::new(Shape::Str),
                    min: 2,
                    max: usize::MAX,
                };
                Shape::Record(vec![
                    ("question".into(), Shape::Str),
                    ("options".into(), options),
                    ("answer".into(), Shape::Str),
                ])
                .check(value, path)?;
                check_choice(value["options"].as_array().unwrap(), value["answer"].as_str().unwrap())
                    .map_err(|e| format!("{path}: {e}"))
            }
        }
    }
}

/// Options pairwise distinct and the answer matching exactly one of them.
pub fn check_choice(options: &[Value], answer: &str) -> Result<(), String> {
    let texts: Vec<&str> = options.iter().filter_map(Value::as_str).collect();
    let distinct: HashSet<&str> = texts.iter().copied().collect();
    if distinct.len() != texts.len() {
        return Err("duplicate options".into());
    }
    match texts.iter().filter(|o| **o == answer).count() {
        1 => Ok(()),
        _ => Err(format!("answer {answer:?} is not among the options")),
    }
}

/// Byte range of the balanced `{...}` starting at `start`, honoring strings.
fn balanced_object(text: &str, start: usize) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Removes commas that directly precede a closing bracket, outside strings.
fn strip_trailing_commas(json: &str) -> String {
    let mut out = String::with_capacity(json.len());
    let chars: Vec<char> = json.chars().collect();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// First JSON object embedded in `reply`, tolerating code fences, prose
/// margins and trailing commas.
pub fn extract_json_object(reply: &str) -> Option<Value> {
    for (start, _) in reply.match_indices('{') {
        if let Some(candidate) = balanced_object(reply, start) {
            for text in [candidate.to_string(), strip_trailing_commas(candidate)] {
                if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&text) {
                    return Some(v);
                }
            }
        }
    }
    None
}

fn parse_numbered_lines(reply: &str, label: &str, count: usize) -> Result<Value, ParseError> {
    let mut found: Vec<Option<String>> = vec![None; count];
    for line in reply.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix(label) else {
            continue;
        };
        let Some((num, text)) = rest.split_once(':') else {
            continue;
        };
        let Ok(i) = num.trim().parse::<usize>() else {
            continue;
        };
        if i == 0 || i > count {
            return Err(ParseError::SchemaMismatch(format!("{label} {i} out of range")));
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(ParseError::SchemaMismatch(format!("{label} {i} is empty")));
        }
        found[i - 1] = Some(text.to_string());
    }
    if found.iter().all(Option::is_none) {
        return Err(ParseError::MalformedReply);
    }
    let mut out = Vec::with_capacity(count);
    for (i, f) in found.into_iter().enumerate() {
        out.push(Value::String(f.ok_or_else(|| {
            ParseError::SchemaMismatch(format!("missing {label} {}", i + 1))
        })?));
    }
    Ok(Value::Array(out))
}

/// Extracts and validates a structured value from a raw completion.
pub fn parse_reply(reply: &str, schema: &ResponseSchema) -> Result<Value, ParseError> {
    match schema {
        ResponseSchema::FreeText { must_begin } => {
            let text = reply.trim();
            if text.is_empty() {
                return Err(ParseError::MalformedReply);
            }
            if let Some(prefix) = must_begin {
                if !text.starts_with(prefix.as_str()) {
                    return Err(ParseError::SchemaMismatch(format!(
                        "reply does not begin with {prefix:?}"
                    )));
                }
            }
            Ok(Value::String(text.to_string()))
        }
        ResponseSchema::Json(shape) => {
            let value = extract_json_object(reply).ok_or(ParseError::MalformedReply)?;
            shape.validate(&value).map_err(ParseError::SchemaMismatch)?;
            Ok(value)
        }
        ResponseSchema::NumberedLines { label, count } => parse_numbered_lines(reply, label, *count),
    }
}
