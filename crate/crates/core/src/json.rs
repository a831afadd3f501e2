//! Pulling one JSON object out of a free-form completion.

use alloc::string::{String, ToString};
use core::fmt;

use serde_json::Value;

/// Appended to the prompt when the first completion held no usable JSON.
pub const REPROMPT_SUFFIX: &str = "Respond with JSON only.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JsonExtractError(pub String);

impl fmt::Display for JsonExtractError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no JSON object in completion: {}", self.0)
    }
}

impl core::error::Error for JsonExtractError {}

/// Byte range of the first balanced `{...}` in `text`, skipping braces inside strings.
fn first_object(text: &str) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Drop trailing commas before `}`/`]` and escape raw control characters in strings.
fn repair(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_str = false;
    let mut escaped = false;
    let chars: alloc::vec::Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_str {
            if escaped {
                escaped = false;
                out.push(c);
            } else if c == '\\' {
                escaped = true;
                out.push(c);
            } else if c == '"' {
                in_str = false;
                out.push(c);
            } else if (c as u32) < 0x20 {
                match c {
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    '\r' => out.push_str("\\r"),
                    _ => out.push_str(&alloc::format!("\\u{:04x}", c as u32)),
                }
            } else {
                out.push(c);
            }
            i += 1;
            continue;
        }
        if c == '"' {
            in_str = true;
        } else if c == ',' {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            if j < chars.len() && (chars[j] == '}' || chars[j] == ']') {
                i += 1;
                continue;
            }
        }
        out.push(c);
        i += 1;
    }
    out
}

/// Parse the first balanced top-level JSON object in a completion, after
/// stripping code fences and surrounding prose; one repair pass is tried.
pub fn extract_json(text: &str) -> Result<Value, JsonExtractError> {
    let (s, e) = first_object(text).ok_or_else(|| JsonExtractError("no balanced object".into()))?;
    let candidate = &text[s..e];
    match serde_json::from_str::<Value>(candidate) {
        Ok(v) => Ok(v),
        Err(first) => {
            let fixed = repair(candidate);
            serde_json::from_str::<Value>(&fixed).map_err(|_| JsonExtractError(first.to_string()))
        }
    }
}
