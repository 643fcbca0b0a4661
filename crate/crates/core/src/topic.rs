//! Key messages and the topics they cluster into.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::table::CellRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Fine,
    Coarse,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Fine => "fine",
            Granularity::Coarse => "coarse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

impl Sentiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
        }
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Sentiment::Positive),
            "negative" => Ok(Sentiment::Negative),
            "neutral" => Ok(Sentiment::Neutral),
            other => Err(format!("unknown sentiment {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanSource {
    Statement,
    Context,
}

/// Byte span into the statement or the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceSpan {
    pub source: SpanSource,
    pub offset: usize,
    pub length: usize,
}

impl SourceSpan {
    pub fn resolve<'a>(&self, statement: &'a str, context: &'a str) -> Option<&'a str> {
        let text = match self.source {
            SpanSource::Statement => statement,
            SpanSource::Context => context,
        };
        text.get(self.offset..self.offset.checked_add(self.length)?)
    }
}

/// One atomic claim pulled out of the statement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyMessage {
    pub text: String,
    pub source_span: SourceSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub id: String,
    pub granularity: Granularity,
    pub title: String,
    pub messages: Vec<KeyMessage>,
    pub sentiment: Option<Sentiment>,
    pub narrative: Option<String>,
    /// Table cells the sentiment narrative talks about.
    #[serde(default)]
    pub linked_cells: Vec<CellRef>,
}
