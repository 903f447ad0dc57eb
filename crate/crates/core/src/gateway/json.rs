use serde_json::Value;

use super::GatewayError;

/// Byte ranges of balanced top-level `{...}` spans, skipping braces that
/// appear inside JSON strings.
fn object_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let start = i;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut end = None;
        for (j, &b) in bytes.iter().enumerate().skip(start) {
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
                        end = Some(j + 1);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                spans.push((start, e));
                i = e;
            }
            None => i = start + 1,
        }
    }
    spans
}

/// All top-level JSON objects in a response that parse, in order.
pub fn extract_json_objects(text: &str) -> Vec<Value> {
    object_spans(text)
        .into_iter()
        .filter_map(|(s, e)| serde_json::from_str::<Value>(&text[s..e]).ok())
        .collect()
}

/// The first balanced top-level JSON object in a model response.
///
/// Surrounding prose and code fences are ignored.
pub fn extract_json(text: &str) -> Result<Value, GatewayError> {
    extract_json_objects(text)
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedModelOutput {
            reason: "no JSON object found".to_string(),
            text: text.to_string(),
        })
}
