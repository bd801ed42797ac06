//! Lenient parsing of JSON-ish model output.

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("could not parse structured response: {reason}")]
pub struct ParseError {
    pub reason: String,
    /// The text exactly as the backend returned it.
    pub original: String,
}

/// Strips code fences and surrounding prose, then parses JSON. One repair
/// pass (trailing commas, single quotes) is tried before giving up.
pub fn parse_structured_response(text: &str) -> Result<Value, ParseError> {
    let body = extract_body(text);
    match serde_json::from_str::<Value>(body) {
        Ok(v) => Ok(v),
        Err(strict) => {
            let repaired = repair(body);
            serde_json::from_str::<Value>(&repaired).map_err(|_| ParseError {
                reason: strict.to_string(),
                original: text.to_string(),
            })
        }
    }
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(start) = t.find("```") else {
        return t;
    };
    let after = &t[start + 3..];
    // skip the info string (`json`, `JSON`, ...)
    let after = match after.find('\n') {
        Some(nl) if after[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => &after[nl + 1..],
        _ => after,
    };
    match after.find("```") {
        Some(end) => after[..end].trim(),
        None => after.trim(),
    }
}

fn extract_body(text: &str) -> &str {
    let t = strip_fences(text);
    let open = t.find(['{', '[']);
    let Some(open) = open else {
        return t;
    };
    let closer = if t.as_bytes()[open] == b'{' { '}' } else { ']' };
    match t.rfind(closer) {
        Some(close) if close > open => &t[open..=close],
        _ => &t[open..],
    }
}

fn repair(body: &str) -> String {
    let quoted = normalize_quotes(body);
    remove_trailing_commas(&quoted)
}

/// Rewrites single-quoted strings as double-quoted ones, leaving
/// apostrophes inside double-quoted strings alone.
fn normalize_quotes(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut in_double = false;
    let mut in_single = false;
    let mut escaped = false;
    for c in body.chars() {
        if escaped {
            out.push(c);
            escaped = false;
            continue;
        }
        match c {
            '\\' => {
                out.push(c);
                escaped = true;
            }
            '"' if in_single => out.push_str("\\\""),
            '"' => {
                in_double = !in_double;
                out.push(c);
            }
            '\'' if !in_double => {
                in_single = !in_single;
                out.push('"');
            }
            _ => out.push(c),
        }
    }
    out
}

fn remove_trailing_commas(body: &str) -> String {
    let chars = body.chars().collect::<Vec<_>>();
    let mut out = String::with_capacity(body.len());
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

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn strict_json_passes_through() {
        assert_eq!(
            parse_structured_response(r#"{"a": [1, 2]}"#).unwrap(),
            json!({"a": [1, 2]})
        );
    }

    #[test]
    fn fenced_block_with_preamble() {
        let text = "Sure! Here is the profile:\n```json\n{\"Genre\": \"action\"}\n```\nLet me know.";
        assert_eq!(
            parse_structured_response(text).unwrap(),
            json!({"Genre": "action"})
        );
    }

    #[test]
    fn prose_around_bare_array() {
        let text = "The ranking is [\"Genre\", \"Tone\"] as requested.";
        assert_eq!(parse_structured_response(text).unwrap(), json!(["Genre", "Tone"]));
    }

    #[test]
    fn repairs_trailing_commas_and_single_quotes() {
        let text = "{'tags': ['Genre', 'Tone',], 'note': 'it\"s',}";
        assert_eq!(
            parse_structured_response(text).unwrap(),
            json!({"tags": ["Genre", "Tone"], "note": "it\"s"})
        );
        let text = r#"{"q": "don't, stop", "x": [1,2,],}"#;
        assert_eq!(
            parse_structured_response(text).unwrap(),
            json!({"q": "don't, stop", "x": [1, 2]})
        );
    }

    #[test]
    fn garbage_keeps_original() {
        let err = parse_structured_response("not json at all").unwrap_err();
        assert_eq!(err.original, "not json at all");
    }
}
