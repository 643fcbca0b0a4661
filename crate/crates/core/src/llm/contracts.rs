//! Response contracts: the JSON schema sent with each request and the
//! typed shape every response is decoded into.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::Stage;
use super::Fault;
use crate::quantity::QuantityKind;
use crate::topic::SpanSource;

/// Decodes a response, tolerating a surrounding markdown code fence.
pub fn decode<T: DeserializeOwned>(raw: &str) -> Result<T, Fault> {
    let text = strip_fence(raw.trim());
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            Fault::Malformed(e.into_inner().to_string())
        } else {
            Fault::Malformed(format!("{path}: {}", e.into_inner()))
        }
    })?;
    de.end().map_err(|e| Fault::Malformed(e.to_string()))?;
    Ok(value)
}

fn strip_fence(text: &str) -> &str {
    let Some(body) = text.strip_prefix("```") else { return text };
    let body = body.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    body.strip_suffix("```").unwrap_or(body).trim()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessagesResponse {
    pub messages: Vec<RawMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMessage {
    pub text: String,
    #[serde(default = "statement_source")]
    pub source: SpanSource,
    /// Verbatim supporting span.
    pub evidence: String,
    #[serde(default)]
    pub offset: Option<usize>,
}

fn statement_source() -> SpanSource {
    SpanSource::Statement
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicsResponse {
    pub topics: Vec<RawTopic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTopic {
    pub title: String,
    pub messages: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaResponse {
    #[serde(default)]
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulateResponse {
    pub cells: Vec<RawQuoteCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawQuoteCell {
    pub row: String,
    pub column: String,
    pub quote: String,
    #[serde(default)]
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferResponse {
    pub resolved: Vec<RawValue>,
    pub inferred: Vec<RawValue>,
    pub computed: Vec<RawComputed>,
    pub new_rows: Vec<RawNewRow>,
}

/// A value reading for one cell. `uncertainty` is kept as a wide integer
/// so out-of-range scores surface as contract violations, not as
/// malformed JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawValue {
    pub row: Option<String>,
    pub column: String,
    pub kind: Option<QuantityKind>,
    pub value: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// "percent", "count", "unitless", or a currency code.
    pub unit: Option<String>,
    pub uncertainty: Option<i64>,
    /// Verbatim supporting span from the context.
    pub quote: Option<String>,
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCellRef {
    pub row: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawComputed {
    pub row: String,
    pub column: String,
    pub from: RawCellRef,
    #[serde(default)]
    pub factor: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    /// The text describes `from` relative to this cell.
    #[serde(default)]
    pub referent: bool,
    #[serde(default)]
    pub uncertainty: Option<i64>,
    #[serde(default)]
    pub quote: Option<String>,
    #[serde(default)]
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNewRow {
    pub label: String,
    pub cells: Vec<RawValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentimentResponse {
    pub sentiment: String,
    pub narrative: String,
    #[serde(default)]
    pub linked_cells: Vec<RawCellRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartResponse {
    pub chart_type: String,
    pub x: String,
    pub y: Vec<String>,
}

/// JSON schema describing the expected response for `stage`.
pub fn contract(stage: Stage) -> Value {
    let string = json!({"type": "string"});
    let labels = json!({"type": "array", "items": {"type": "string"}});
    let cell_ref = json!({
        "type": "object",
        "required": ["row", "column"],
        "properties": {"row": string, "column": string}
    });
    let value = json!({
        "type": "object",
        "required": ["column"],
        "properties": {
            "row": string,
            "column": string,
            "kind": {"enum": ["exact", "closed_range", "open_lower", "open_upper"]},
            "value": {"type": "number"},
            "lo": {"type": "number"},
            "hi": {"type": "number"},
            "unit": string,
            "uncertainty": {"type": "integer", "minimum": 0, "maximum": 100},
            "quote": string,
            "offset": {"type": "integer", "minimum": 0}
        }
    });
    match stage {
        Stage::ExtractKeyMessages => json!({
            "type": "object",
            "required": ["messages"],
            "properties": {"messages": {"type": "array", "items": {
                "type": "object",
                "required": ["text", "evidence"],
                "properties": {
                    "text": string,
                    "source": {"enum": ["statement", "context"]},
                    "evidence": string,
                    "offset": {"type": "integer", "minimum": 0}
                }
            }}}
        }),
        Stage::ClusterTopics => json!({
            "type": "object",
            "required": ["topics"],
            "properties": {"topics": {"type": "array", "items": {
                "type": "object",
                "required": ["title", "messages"],
                "properties": {"title": string, "messages": {"type": "array", "items": {"type": "integer", "minimum": 0}}}
            }}}
        }),
        Stage::CreateSchema => json!({
            "type": "object",
            "required": ["columns", "rows"],
            "properties": {"row_header": string, "columns": labels, "rows": labels}
        }),
        Stage::PopulateTable => json!({
            "type": "object",
            "required": ["cells"],
            "properties": {"cells": {"type": "array", "items": {
                "type": "object",
                "required": ["row", "column", "quote"],
                "properties": {"row": string, "column": string, "quote": string, "offset": {"type": "integer", "minimum": 0}}
            }}}
        }),
        Stage::InferValues => json!({
            "type": "object",
            "properties": {
                "resolved": {"type": "array", "items": value},
                "inferred": {"type": "array", "items": value},
                "computed": {"type": "array", "items": {
                    "type": "object",
                    "required": ["row", "column", "from"],
                    "properties": {
                        "row": string,
                        "column": string,
                        "from": cell_ref,
                        "factor": {"type": "number"},
                        "delta": {"type": "number"},
                        "referent": {"type": "boolean"},
                        "uncertainty": {"type": "integer", "minimum": 0, "maximum": 100},
                        "quote": string,
                        "offset": {"type": "integer", "minimum": 0}
                    }
                }},
                "new_rows": {"type": "array", "items": {
                    "type": "object",
                    "required": ["label", "cells"],
                    "properties": {"label": string, "cells": {"type": "array", "items": value}}
                }}
            }
        }),
        Stage::ClassifySentiment => json!({
            "type": "object",
            "required": ["sentiment", "narrative"],
            "properties": {
                "sentiment": {"enum": ["positive", "negative", "neutral"]},
                "narrative": string,
                "linked_cells": {"type": "array", "items": cell_ref}
            }
        }),
        Stage::SuggestChart => json!({
            "type": "object",
            "required": ["chart_type", "x", "y"],
            "properties": {
                "chart_type": {"enum": ["bar", "line", "pie", "scatter"]},
                "x": string,
                "y": labels
            }
        }),
        Stage::ValidateQuotes | Stage::Recommend | Stage::Render => json!({}),
    }
}
