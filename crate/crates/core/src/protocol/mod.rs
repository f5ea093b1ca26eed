//! Model-facing text protocol.
//!
//! Tool calls travel as a single-line JSON object wrapped in tags:
//!
//! ```text
//! <tool_call>{"name": "crop_image", "arguments": {"bbox_2d": [10,10,50,50], "target_image": 1}}</tool_call>
//! ```
//!
//! Parsing is lenient about whitespace, key order and stringified arguments.
//! Rendering is canonical: `"name"` first, `": "` / `", "` inside objects and
//! no spaces inside arrays, with argument order preserved.

mod segment;

use std::io;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::{Map, Value};

pub use crate::trajectory::ProtocolViolation;
pub use segment::{segment_trajectory, ElidedInvocations, SegmentConfig};

pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";
pub const CROP_IMAGE: &str = "crop_image";
pub const SELECT_FRAMES: &str = "select_frames";
pub const KNOWN_TOOLS: [&str; 2] = [CROP_IMAGE, SELECT_FRAMES];

/// A decoded tool-call request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    /// Builds a call from a JSON object; any other value yields no arguments.
    pub fn new(name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(map) => map,
            _ => Map::new(),
        };
        Self { name: name.into(), arguments }
    }

    /// Whether the name is one of the executable operations. Unknown names
    /// are kept so that callers can report them.
    pub fn is_known(&self) -> bool {
        KNOWN_TOOLS.contains(&self.name.as_str())
    }
}

/// A tool call together with the byte range of its tagged block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCall {
    pub call: ToolCall,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("malformed tool call at bytes {}..{}: {reason}", span.start, span.end)]
pub struct MalformedToolCall {
    pub span: Range<usize>,
    /// Text between the tags (or up to end of input when unterminated).
    pub raw: String,
    pub reason: String,
}

/// Location of one tagged block.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block {
    pub span: Range<usize>,
    pub body: Range<usize>,
    pub terminated: bool,
}

/// Every `<tool_call>` block in order. Malformed blocks become error entries
/// instead of aborting the scan.
pub fn parse_tool_calls(text: &str) -> Vec<Result<ParsedCall, MalformedToolCall>> {
    scan_blocks(text).into_iter().map(|b| decode_block(text, b)).collect()
}

pub(crate) fn decode_block(text: &str, block: Block) -> Result<ParsedCall, MalformedToolCall> {
    let raw = &text[block.body.clone()];
    let fail = |reason: String| MalformedToolCall {
        span: block.span.clone(),
        raw: raw.to_string(),
        reason,
    };
    if !block.terminated {
        return Err(fail("missing </tool_call>".into()));
    }
    let value: Value = serde_json::from_str(raw.trim()).map_err(|e| fail(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(fail("tool call body is not a JSON object".into()));
    };
    let name = match obj.remove("name") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(Value::String(_)) => return Err(fail("empty tool name".into())),
        Some(_) => return Err(fail("\"name\" is not a string".into())),
        None => return Err(fail("missing \"name\"".into())),
    };
    let arguments = match obj.remove("arguments") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(map)) => map,
        // Some models emit the arguments object as a JSON-encoded string.
        Some(Value::String(s)) => match serde_json::from_str::<Value>(&s) {
            Ok(Value::Object(map)) => map,
            _ => return Err(fail("\"arguments\" string is not a JSON object".into())),
        },
        Some(_) => return Err(fail("\"arguments\" is not an object".into())),
    };
    Ok(ParsedCall { call: ToolCall { name, arguments }, span: block.span })
}

pub(crate) fn scan_blocks(text: &str) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut pos = 0;
    while let Some(found) = text[pos..].find(TOOL_CALL_OPEN) {
        let start = pos + found;
        let body_start = start + TOOL_CALL_OPEN.len();
        let block = close_block(text, start, body_start);
        pos = block.span.end;
        blocks.push(block);
    }
    blocks
}

fn close_block(text: &str, start: usize, body_start: usize) -> Block {
    // Prefer the closing tag right after a balanced JSON object, so that a
    // literal "</tool_call>" inside a string argument does not end the block.
    if let Some(obj_end) = json_object_end(text, body_start) {
        let after = obj_end + (text[obj_end..].len() - text[obj_end..].trim_start().len());
        if text[after..].starts_with(TOOL_CALL_CLOSE) {
            return Block {
                span: start..after + TOOL_CALL_CLOSE.len(),
                body: body_start..after,
                terminated: true,
            };
        }
    }
    match text[body_start..].find(TOOL_CALL_CLOSE) {
        Some(off) => Block {
            span: start..body_start + off + TOOL_CALL_CLOSE.len(),
            body: body_start..body_start + off,
            terminated: true,
        },
        None => Block { span: start..text.len(), body: body_start..text.len(), terminated: false },
    }
}

/// Byte offset just past the JSON object starting at `from` (after leading
/// whitespace), tracking strings and escapes. `None` if unbalanced.
fn json_object_end(text: &str, from: usize) -> Option<usize> {
    let rest = &text[from..];
    let lead = rest.len() - rest.trim_start().len();
    let bytes = rest.as_bytes();
    if bytes.get(lead) != Some(&b'{') {
        return None;
    }
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(lead) {
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
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(from + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Separators used on the wire: `": "` and `", "` in objects, `,` in arrays.
struct WireFormatter;

impl Formatter for WireFormatter {
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            w.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        w.write_all(b": ")
    }
}

fn to_wire_json(value: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, WireFormatter);
    value.serialize(&mut ser).expect("serializing a Value into memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Canonical tagged form of `call`.
pub fn render_tool_call(call: &ToolCall) -> String {
    let mut obj = Map::new();
    obj.insert("name".into(), Value::String(call.name.clone()));
    obj.insert("arguments".into(), Value::Object(call.arguments.clone()));
    format!("{TOOL_CALL_OPEN}{}{TOOL_CALL_CLOSE}", to_wire_json(&Value::Object(obj)))
}

/// A balanced `\boxed{...}` occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxedMatch {
    pub span: Range<usize>,
    pub content: Range<usize>,
}

const BOXED_OPEN: &str = "\\boxed{";

/// Last balanced `\boxed{...}` in `text`. Unbalanced occurrences are skipped.
pub fn find_boxed(text: &str) -> Option<BoxedMatch> {
    boxed_matches(text).pop()
}

/// Every balanced `\boxed{...}`, in order. A match's interior is skipped
/// when searching for the next one.
pub(crate) fn boxed_matches(text: &str) -> Vec<BoxedMatch> {
    let mut found_all = Vec::new();
    let mut pos = 0;
    while let Some(found) = text[pos..].find(BOXED_OPEN) {
        let start = pos + found;
        let content_start = start + BOXED_OPEN.len();
        let mut depth = 1usize;
        let mut close = None;
        for (i, b) in text.as_bytes()[content_start..].iter().enumerate() {
            match b {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(content_start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match close {
            Some(end) => {
                found_all.push(BoxedMatch { span: start..end + 1, content: content_start..end });
                pos = end + 1;
            }
            None => pos = start + 1,
        }
    }
    found_all
}

/// Content of the last balanced `\boxed{...}`.
pub fn extract_boxed_answer(text: &str) -> Option<String> {
    find_boxed(text).map(|m| text[m.content].to_string())
}
