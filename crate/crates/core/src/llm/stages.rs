use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::backend::{CompletionBackend, CompletionRequest, Stage};
use super::contracts::{
    self, ChartResponse, InferResponse, MessagesResponse, PopulateResponse, RawComputed, RawValue, SchemaResponse,
    SentimentResponse, TopicsResponse,
};
use super::prompts::PromptPack;
use super::{Fault, Outcome, PipelineTrace, StageError, StageErrorKind, TraceEntry};
use crate::config::{Config, UncertaintyDefaults};
use crate::quantity::{apply_comparative, parse_quantity, Comparison, Modifier, ParsedQuantity, QuantityKind, Unit};
use crate::recommend::{parse_temporal, ChartChoice, ChartType, ChoiceProvenance};
use crate::table::{AnnotatedTable, Cell, CellRef, Origin, Quote, TableSchema, Uncertainty};
use crate::topic::{Granularity, KeyMessage, Sentiment, SourceSpan, SpanSource, Topic};

/// A quoted cell whose quote is not found verbatim at its offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingFailure {
    pub row: usize,
    pub col: usize,
    pub verbatim: Option<String>,
}

/// Offset-exact grounding check of every quoted cell.
pub fn validate_quotes(table: &AnnotatedTable, context: &str) -> Vec<GroundingFailure> {
    table
        .cells
        .iter()
        .filter(|c| c.origin == Origin::Quoted)
        .filter(|c| !c.quote.as_ref().is_some_and(|q| q.is_grounded_in(context)))
        .map(|c| GroundingFailure {
            row: c.row,
            col: c.col,
            verbatim: c.quote.as_ref().map(|q| q.verbatim.clone()),
        })
        .collect()
}

/// Applies a model estimate to a quantity read from a quote. Open bounds
/// need an estimate on the right side of the bound; closed ranges keep
/// their midpoint and only check that the estimate lies inside.
pub fn check_resolution(quantity: &ParsedQuantity, estimate: Option<f64>) -> Result<ParsedQuantity, String> {
    if let Some(v) = estimate {
        if !v.is_finite() {
            return Err(format!("estimate {v} is not finite"));
        }
    }
    match (quantity.kind, quantity.lo, quantity.hi, estimate) {
        (QuantityKind::OpenLower, Some(lo), _, Some(v)) if v < lo => {
            Err(format!("estimate {v} contradicts the lower bound {lo}"))
        }
        (QuantityKind::OpenUpper, _, Some(hi), Some(v)) if v > hi => {
            Err(format!("estimate {v} contradicts the upper bound {hi}"))
        }
        (QuantityKind::OpenLower | QuantityKind::OpenUpper, _, _, None) => Err("open range needs an estimate".into()),
        (QuantityKind::ClosedRange, Some(lo), Some(hi), Some(v)) if v < lo || v > hi => {
            Err(format!("estimate {v} lies outside [{lo}, {hi}]"))
        }
        (_, _, _, Some(v)) => Ok(quantity.clone().with_estimate(v)),
        _ => Ok(quantity.clone()),
    }
}

/// Splits on blank lines into chunks of at most `budget` bytes, returning
/// each chunk with its byte offset. A paragraph longer than the budget is
/// cut at the last whitespace that fits.
pub fn split_paragraphs(text: &str, budget: usize) -> Vec<(usize, &str)> {
    let budget = budget.max(1);
    let mut paragraphs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for (i, _) in text.match_indices("\n\n") {
        if i > start {
            paragraphs.push((start, i));
        }
        start = i + 2;
    }
    if start < text.len() {
        paragraphs.push((start, text.len()));
    }

    let mut pieces: Vec<(usize, usize)> = Vec::new();
    for (mut s, e) in paragraphs {
        while e - s > budget {
            let mut cut = s + budget;
            while !text.is_char_boundary(cut) {
                cut -= 1;
            }
            if let Some(ws) = text[s..cut].rfind(char::is_whitespace).filter(|&w| w > 0) {
                cut = s + ws;
            }
            if cut == s {
                cut = s + text[s..].chars().next().map_or(1, char::len_utf8);
            }
            pieces.push((s, cut));
            s = cut;
        }
        pieces.push((s, e));
    }

    let mut chunks: Vec<(usize, usize)> = Vec::new();
    for (s, e) in pieces {
        match chunks.last_mut() {
            Some(last) if e - last.0 <= budget => last.1 = e,
            _ => chunks.push((s, e)),
        }
    }
    chunks.into_iter().map(|(s, e)| (s, &text[s..e])).collect()
}

fn find_label(labels: &[String], wanted: &str) -> Option<usize> {
    let wanted = wanted.trim();
    labels
        .iter()
        .position(|l| l == wanted)
        .or_else(|| labels.iter().position(|l| l.eq_ignore_ascii_case(wanted)))
}

fn numbered(messages: &[KeyMessage]) -> String {
    messages
        .iter()
        .enumerate()
        .map(|(i, m)| format!("{i}: {}", m.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn origin_name(origin: Origin) -> &'static str {
    match origin {
        Origin::Quoted => "quoted",
        Origin::Inferred => "inferred",
        Origin::Computed => "computed",
        Origin::Absent => "absent",
    }
}

/// Plain-text table for prompts.
pub(crate) fn table_text(table: &AnnotatedTable) -> String {
    let mut out = String::new();
    let header: Vec<&str> = std::iter::once(table.schema.row_header.as_str())
        .chain(table.schema.column_labels.iter().map(String::as_str))
        .collect();
    out.push_str(&header.join(" | "));
    for (r, label) in table.schema.row_labels.iter().enumerate() {
        out.push('\n');
        out.push_str(label);
        for c in 0..table.cols() {
            out.push_str(" | ");
            let Some(cell) = table.cell(r, c) else { continue };
            let mut parts = Vec::new();
            if let Some(q) = &cell.quote {
                parts.push(format!("\"{}\"", q.verbatim));
            }
            if let Some(q) = &cell.quantity {
                parts.push(format!("= {q}"));
            }
            if cell.origin != Origin::Quoted && cell.origin != Origin::Absent {
                parts.push(format!("({}, uncertainty {})", origin_name(cell.origin), cell.uncertainty.get()));
            }
            if parts.is_empty() {
                parts.push("(empty)".into());
            }
            out.push_str(&parts.join(" "));
        }
    }
    out
}

fn schema_text(schema: &TableSchema) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "row_header": schema.row_header,
        "columns": schema.column_labels,
        "rows": schema.row_labels,
    }))
    .expect("schema serializes")
}

fn parse_unit(s: &str) -> Unit {
    match s.trim().to_ascii_lowercase().as_str() {
        "percent" | "%" | "percentage" => Unit::Percent,
        "count" | "number" => Unit::Count,
        "" | "unitless" | "none" | "ratio" => Unit::Unitless,
        _ => Unit::Currency(s.trim().to_ascii_uppercase()),
    }
}

fn score(raw: Option<i64>, default: u8, what: &str) -> Result<Uncertainty, Fault> {
    match raw {
        None => Ok(Uncertainty::new(default).expect("defaults are validated")),
        Some(u @ 1..=100) => Ok(Uncertainty::new(u as u8).expect("in range")),
        Some(u) => Err(Fault::Contract(format!("{what}: uncertainty {u} outside 1..=100"))),
    }
}

/// Default score for a reading that needed interpretation. Point values
/// here are approximate or model-read, both scored as `approximate`.
fn default_score(kind: QuantityKind, d: &UncertaintyDefaults) -> u8 {
    match kind {
        QuantityKind::ClosedRange => d.closed_range,
        QuantityKind::OpenLower | QuantityKind::OpenUpper => d.open_range,
        QuantityKind::Exact => d.approximate,
    }
}

/// Rank used to choose between competing quotes for one cell: the score
/// the quote would end up with.
fn provisional_score(verbatim: &str, d: &UncertaintyDefaults) -> u8 {
    match parse_quantity(verbatim) {
        Ok(q) if q.is_direct() => 0,
        Ok(q) if !matches!(q.modifier, Modifier::Comparative(_)) => default_score(q.kind, d),
        _ => d.inferred,
    }
}

/// A quantity built from a model reading alone.
fn quantity_from_raw(raw: &RawValue, unit: Unit, what: &str) -> Result<ParsedQuantity, Fault> {
    let bad = |m: String| Fault::Contract(format!("{what}: {m}"));
    for v in [raw.value, raw.lo, raw.hi].into_iter().flatten() {
        if !v.is_finite() {
            return Err(bad(format!("non-finite number {v}")));
        }
    }
    let kind = raw.kind.unwrap_or(match (raw.lo, raw.hi) {
        (Some(_), Some(_)) => QuantityKind::ClosedRange,
        (Some(_), None) => QuantityKind::OpenLower,
        (None, Some(_)) => QuantityKind::OpenUpper,
        (None, None) => QuantityKind::Exact,
    });
    let base = match (kind, raw.lo, raw.hi, raw.value) {
        (QuantityKind::Exact, _, _, Some(v)) => return Ok(ParsedQuantity::exact(v, unit)),
        (QuantityKind::ClosedRange, Some(lo), Some(hi), _) if lo <= hi => ParsedQuantity::closed(lo, hi, unit),
        (QuantityKind::ClosedRange, Some(lo), Some(hi), _) => return Err(bad(format!("range [{lo}, {hi}] is reversed"))),
        (QuantityKind::OpenLower, Some(lo), _, _) => ParsedQuantity::open_lower(lo, unit),
        (QuantityKind::OpenUpper, _, Some(hi), _) => ParsedQuantity::open_upper(hi, unit),
        _ => return Err(bad(format!("{kind:?} reading is missing its numbers"))),
    };
    check_resolution(&base, raw.value).map_err(bad)
}

fn column_unit(table: &AnnotatedTable, col: usize) -> Unit {
    table
        .column(col)
        .find_map(|c| c.quantity.as_ref().map(|q| q.unit.clone()))
        .unwrap_or(Unit::Count)
}

fn locate_evidence(context: &str, quote: Option<&str>, offset: Option<usize>, what: &str) -> Result<Option<Quote>, Fault> {
    match quote.filter(|q| !q.is_empty()) {
        None => Ok(None),
        Some(text) => Quote::locate(context, text, offset)
            .map(Some)
            .ok_or_else(|| Fault::Ungrounded(format!("{what}: {text:?} is not in the context"))),
    }
}

/// Runs the stages against one backend and records every exchange.
pub struct Session<'a> {
    backend: &'a dyn CompletionBackend,
    prompts: &'a PromptPack,
    config: &'a Config,
    trace: PipelineTrace,
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn CompletionBackend, prompts: &'a PromptPack, config: &'a Config) -> Self {
        Session {
            backend,
            prompts,
            config,
            trace: PipelineTrace {
                backend: backend.describe(),
                prompt_pack: prompts.version.clone(),
                max_retries: config.backend.max_retries,
                entries: Vec::new(),
                decisions: Vec::new(),
            },
        }
    }

    pub fn trace(&self) -> &PipelineTrace {
        &self.trace
    }

    pub(crate) fn trace_mut(&mut self) -> &mut PipelineTrace {
        &mut self.trace
    }

    pub fn into_trace(self) -> PipelineTrace {
        self.trace
    }

    fn render(&self, stage: Stage, topic: Option<&str>, vars: &[(&str, &str)]) -> Result<String, StageError> {
        self.prompts
            .render(stage, vars)
            .map_err(|e| StageError::new(stage, topic, StageErrorKind::Prompt(e.to_string())))
    }

    /// Sends `prompt` until `accept` takes the response, resending the same
    /// prompt up to `max_retries` more times.
    fn exchange<T>(
        &mut self,
        stage: Stage,
        topic: Option<&str>,
        chunk: Option<usize>,
        prompt: &str,
        mut accept: impl FnMut(&str) -> Result<T, Fault>,
    ) -> Result<T, StageError> {
        let contract = contracts::contract(stage);
        let hash = super::prompt_hash(prompt);
        let max_retries = self.config.backend.max_retries;
        let mut last_fault = None;
        for attempt in 0..=max_retries {
            let request = CompletionRequest {
                stage,
                prompt,
                contract: &contract,
                attempt,
            };
            let mut entry = TraceEntry {
                seq: self.trace.entries.len(),
                stage,
                topic: topic.map(String::from),
                chunk,
                retry_count: attempt,
                prompt_hash: hash.clone(),
                prompt: prompt.to_string(),
                raw_response: None,
                validation_outcome: Outcome::Accepted,
            };
            let raw = match self.backend.complete(&request) {
                Ok(raw) => raw,
                Err(e) => {
                    entry.validation_outcome = Outcome::BackendError { message: e.to_string() };
                    self.trace.entries.push(entry);
                    if e.is_retryable() && attempt < max_retries {
                        continue;
                    }
                    return Err(StageError::new(stage, topic, StageErrorKind::BackendFailure(e.to_string())));
                }
            };
            let result = accept(&raw);
            entry.raw_response = Some(raw);
            match result {
                Ok(value) => {
                    self.trace.entries.push(entry);
                    return Ok(value);
                }
                Err(fault) => {
                    tracing::debug!(%stage, attempt, ?fault, "response rejected");
                    entry.validation_outcome = Outcome::Rejected { fault: fault.clone() };
                    self.trace.entries.push(entry);
                    last_fault = Some(fault);
                }
            }
        }
        let kind = last_fault.map_or_else(|| StageErrorKind::BackendFailure("no attempts made".into()), Fault::exhausted);
        Err(StageError::new(stage, topic, kind))
    }

    pub fn extract_key_messages(&mut self, statement: &str, context: &str) -> Result<Vec<KeyMessage>, StageError> {
        let stage = Stage::ExtractKeyMessages;
        if statement.trim().is_empty() {
            return Err(StageError::new(stage, None, StageErrorKind::EmptyStatement));
        }
        let prompt = self.render(stage, None, &[("statement", statement), ("context", context)])?;
        let messages = self.exchange(stage, None, None, &prompt, |raw| {
            let response: MessagesResponse = contracts::decode(raw)?;
            let mut out = Vec::with_capacity(response.messages.len());
            for (i, m) in response.messages.into_iter().enumerate() {
                let text = m.text.trim();
                if text.is_empty() {
                    return Err(Fault::Contract(format!("message {i} is empty")));
                }
                let source = match m.source {
                    SpanSource::Statement => statement,
                    SpanSource::Context => context,
                };
                let quote = Quote::locate(source, &m.evidence, m.offset).ok_or_else(|| {
                    Fault::Ungrounded(format!("message {i}: evidence {:?} is not in the {:?}", m.evidence, m.source))
                })?;
                out.push(KeyMessage {
                    text: text.to_string(),
                    source_span: SourceSpan {
                        source: m.source,
                        offset: quote.offset,
                        length: quote.length,
                    },
                });
            }
            Ok(out)
        })?;
        if messages.is_empty() {
            return Err(StageError::new(stage, None, StageErrorKind::EmptyExtraction));
        }
        Ok(messages)
    }

    pub fn cluster_topics(&mut self, messages: &[KeyMessage], granularity: Granularity) -> Result<Vec<Topic>, StageError> {
        let stage = Stage::ClusterTopics;
        if messages.is_empty() {
            return Err(StageError::new(stage, None, StageErrorKind::EmptyExtraction));
        }
        let listing = numbered(messages);
        let granularity_name = granularity.to_string();
        let prompt = self.render(stage, None, &[("granularity", &granularity_name), ("messages", &listing)])?;
        self.exchange(stage, None, None, &prompt, |raw| {
            let response: TopicsResponse = contracts::decode(raw)?;
            let mut seen = vec![false; messages.len()];
            let mut topics = Vec::with_capacity(response.topics.len());
            for (k, t) in response.topics.into_iter().enumerate() {
                let title = t.title.trim();
                if title.is_empty() {
                    return Err(Fault::Contract(format!("topic {k} has no title")));
                }
                if t.messages.is_empty() {
                    return Err(Fault::Contract(format!("topic {k} has no messages")));
                }
                let mut members = Vec::with_capacity(t.messages.len());
                for i in t.messages {
                    match seen.get_mut(i) {
                        None => return Err(Fault::Contract(format!("topic {k} names unknown message {i}"))),
                        Some(true) => return Err(Fault::Contract(format!("message {i} is in more than one topic"))),
                        Some(flag) => *flag = true,
                    }
                    members.push(messages[i].clone());
                }
                topics.push(Topic {
                    id: format!("{granularity}-{k}"),
                    granularity,
                    title: title.to_string(),
                    messages: members,
                    sentiment: None,
                    narrative: None,
                    linked_cells: Vec::new(),
                });
            }
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(Fault::Contract(format!("message {i} is in no topic")));
            }
            Ok(topics)
        })
    }

    pub fn create_schema(&mut self, topic: &Topic) -> Result<TableSchema, StageError> {
        let stage = Stage::CreateSchema;
        let id = Some(topic.id.as_str());
        let listing = numbered(&topic.messages);
        let prompt = self.render(stage, id, &[("title", &topic.title), ("messages", &listing)])?;
        let schema = self.exchange(stage, id, None, &prompt, |raw| {
            let response: SchemaResponse = contracts::decode(raw)?;
            let clean = |labels: Vec<String>| -> Vec<String> {
                labels.into_iter().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()
            };
            let columns = clean(response.columns);
            let rows = clean(response.rows);
            if columns.is_empty() || rows.is_empty() {
                return Ok(None);
            }
            let row_header = match response.row_header.trim() {
                "" if rows.iter().all(|r| parse_temporal(r).is_some()) => "Year".to_string(),
                "" => "Category".to_string(),
                h => h.to_string(),
            };
            let schema = TableSchema {
                topic_id: topic.id.clone(),
                row_header,
                column_labels: columns,
                row_labels: rows,
            };
            match schema.violations().first() {
                Some(v) => Err(Fault::Contract(format!("schema: {v:?}"))),
                None => Ok(Some(schema)),
            }
        })?;
        schema.ok_or_else(|| StageError::new(stage, id, StageErrorKind::DegenerateSchema))
    }

    pub fn populate_table(&mut self, schema: &TableSchema, context: &str) -> Result<AnnotatedTable, StageError> {
        let stage = Stage::PopulateTable;
        let id = Some(schema.topic_id.as_str());
        let schema_json = schema_text(schema);
        let overhead = self.render(stage, id, &[("schema", &schema_json), ("context", "")])?.len();
        let budget = self.backend.capabilities().max_input_chars.saturating_sub(overhead).max(200);
        let chunks = if context.len() <= budget {
            vec![(0, context)]
        } else {
            split_paragraphs(context, budget)
        };
        let chunked = chunks.len() > 1;
        let defaults = self.config.uncertainty.clone();

        // Best quote per cell: lowest provisional score, then earliest offset.
        let mut best: BTreeMap<(usize, usize), (u8, Quote)> = BTreeMap::new();
        for (k, (start, chunk)) in chunks.into_iter().enumerate() {
            let prompt = self.render(stage, id, &[("schema", &schema_json), ("context", chunk)])?;
            let found = self.exchange(stage, id, chunked.then_some(k), &prompt, |raw| {
                let response: PopulateResponse = contracts::decode(raw)?;
                let mut found = Vec::with_capacity(response.cells.len());
                for cell in response.cells {
                    let row = find_label(&schema.row_labels, &cell.row)
                        .ok_or_else(|| Fault::Contract(format!("unknown row label {:?}", cell.row)))?;
                    let col = find_label(&schema.column_labels, &cell.column)
                        .ok_or_else(|| Fault::Contract(format!("unknown column label {:?}", cell.column)))?;
                    let hint = cell.offset.and_then(|o| o.checked_sub(start));
                    let quote = Quote::locate(chunk, &cell.quote, hint).ok_or_else(|| {
                        Fault::Ungrounded(format!("quote {:?} for ({}, {}) is not in the context", cell.quote, cell.row, cell.column))
                    })?;
                    found.push((row, col, Quote::new(quote.offset + start, quote.verbatim)));
                }
                Ok(found)
            })?;
            for (row, col, quote) in found {
                let rank = (provisional_score(&quote.verbatim, &defaults), quote.offset);
                match best.get(&(row, col)) {
                    Some((score, q)) if (*score, q.offset) <= rank => {}
                    _ => {
                        best.insert((row, col), (rank.0, quote));
                    }
                }
            }
        }

        let mut table = AnnotatedTable::empty(schema.clone())
            .map_err(|e| StageError::new(stage, id, StageErrorKind::ContractViolation(e.to_string())))?;
        for ((row, col), (_, quote)) in best {
            table.set(Cell::quoted(row, col, quote));
        }
        Ok(table)
    }

    pub fn infer_values(&mut self, table: &AnnotatedTable, context: &str) -> Result<AnnotatedTable, StageError> {
        let stage = Stage::InferValues;
        let id = Some(table.schema.topic_id.as_str());
        let failures = validate_quotes(table, context);
        if !failures.is_empty() {
            return Err(StageError::new(
                Stage::ValidateQuotes,
                id,
                StageErrorKind::GroundingFailure(format!("{} ungrounded quote(s)", failures.len())),
            ));
        }
        let listing = table_text(table);
        let prompt = self.render(stage, id, &[("table", &listing), ("context", context)])?;
        let defaults = self.config.uncertainty.clone();
        self.exchange(stage, id, None, &prompt, |raw| {
            let response: InferResponse = contracts::decode(raw)?;
            apply_inference(table, context, response, &defaults)
        })
    }

    pub fn classify_sentiment(&mut self, topic: &Topic, table: &AnnotatedTable) -> Result<Topic, StageError> {
        let stage = Stage::ClassifySentiment;
        let id = Some(topic.id.as_str());
        let listing = numbered(&topic.messages);
        let table_listing = table_text(table);
        let prompt = self.render(
            stage,
            id,
            &[("title", &topic.title), ("messages", &listing), ("table", &table_listing)],
        )?;
        let schema = &table.schema;
        self.exchange(stage, id, None, &prompt, |raw| {
            let response: SentimentResponse = contracts::decode(raw)?;
            let sentiment: Sentiment = response.sentiment.parse().map_err(Fault::Contract)?;
            let narrative = response.narrative.trim();
            if narrative.is_empty() {
                return Err(Fault::Contract("narrative is empty".into()));
            }
            let mut linked = BTreeSet::new();
            for r in response.linked_cells {
                let row = find_label(&schema.row_labels, &r.row)
                    .ok_or_else(|| Fault::Contract(format!("linked cell names unknown row {:?}", r.row)))?;
                let col = find_label(&schema.column_labels, &r.column)
                    .ok_or_else(|| Fault::Contract(format!("linked cell names unknown column {:?}", r.column)))?;
                linked.insert(CellRef { row, col });
            }
            Ok(Topic {
                sentiment: Some(sentiment),
                narrative: Some(narrative.to_string()),
                linked_cells: linked.into_iter().collect(),
                ..topic.clone()
            })
        })
    }

    pub fn suggest_chart(&mut self, table: &AnnotatedTable) -> Result<ChartChoice, StageError> {
        let stage = Stage::SuggestChart;
        let id = Some(table.schema.topic_id.as_str());
        let listing = table_text(table);
        let prompt = self.render(stage, id, &[("table", &listing)])?;
        let schema = &table.schema;
        self.exchange(stage, id, None, &prompt, |raw| {
            let response: ChartResponse = contracts::decode(raw)?;
            let chart_type: ChartType = response.chart_type.parse().map_err(Fault::Contract)?;
            let x = response.x.trim();
            let x_binding = if x == schema.row_header || x.eq_ignore_ascii_case(&schema.row_header) {
                schema.row_header.clone()
            } else {
                let i = find_label(&schema.column_labels, x)
                    .ok_or_else(|| Fault::Binding(format!("x binding {x:?} is not a table label")))?;
                schema.column_labels[i].clone()
            };
            let mut y_binding = Vec::with_capacity(response.y.len());
            for y in &response.y {
                let i = find_label(&schema.column_labels, y)
                    .ok_or_else(|| Fault::Binding(format!("y binding {y:?} is not a column label")))?;
                y_binding.push(schema.column_labels[i].clone());
            }
            Ok(ChartChoice {
                chart_type,
                x_binding,
                y_binding,
                provenance: ChoiceProvenance::Llm,
            })
        })
    }
}

fn label_pair(table: &AnnotatedTable, row: &str, column: &str) -> Result<(usize, usize), Fault> {
    let r = find_label(&table.schema.row_labels, row).ok_or_else(|| Fault::Contract(format!("unknown row label {row:?}")))?;
    let c = find_label(&table.schema.column_labels, column)
        .ok_or_else(|| Fault::Contract(format!("unknown column label {column:?}")))?;
    Ok((r, c))
}

/// Reads a quote that is not a plain number, checking the model's estimate.
fn resolve_quote(
    verbatim: &str,
    raw: &RawValue,
    unit: Unit,
    defaults: &UncertaintyDefaults,
    what: &str,
) -> Result<(ParsedQuantity, Uncertainty), Fault> {
    let parsed = parse_quantity(verbatim)
        .ok()
        .filter(|q| !matches!(q.modifier, Modifier::Comparative(_)));
    let quantity = match parsed {
        Some(p) => {
            if raw.kind.is_some_and(|k| k != p.kind) {
                return Err(Fault::Contract(format!(
                    "{what}: kind {:?} contradicts quote {verbatim:?}",
                    raw.kind.unwrap()
                )));
            }
            check_resolution(&p, raw.value).map_err(|m| Fault::Contract(format!("{what}: {m} (quote {verbatim:?})")))?
        }
        None => quantity_from_raw(raw, raw.unit.as_deref().map_or(unit, parse_unit), what)?,
    };
    let u = score(raw.uncertainty, default_score(quantity.kind, defaults), what)?;
    Ok((quantity, u))
}

fn apply_inference(
    table: &AnnotatedTable,
    context: &str,
    response: InferResponse,
    defaults: &UncertaintyDefaults,
) -> Result<AnnotatedTable, Fault> {
    let mut next = table.clone();

    for raw in &response.resolved {
        let row = raw.row.as_deref().unwrap_or_default();
        let (r, c) = label_pair(&next, row, &raw.column)?;
        let what = format!("resolved ({row}, {})", raw.column);
        let unit = column_unit(&next, c);
        let cell = next.cell(r, c).expect("labels index the grid");
        let verbatim = match (&cell.origin, &cell.quote, &cell.quantity) {
            (Origin::Quoted, Some(q), None) => q.verbatim.clone(),
            (Origin::Quoted, _, Some(_)) => return Err(Fault::Contract(format!("{what}: cell already has a value"))),
            _ => return Err(Fault::Contract(format!("{what}: not an unresolved quoted cell"))),
        };
        let (quantity, u) = resolve_quote(&verbatim, raw, unit, defaults, &what)?;
        let cell = next.cell_mut(r, c).expect("labels index the grid");
        cell.quantity = Some(quantity);
        cell.uncertainty = u;
    }

    for raw in &response.inferred {
        let row = raw.row.as_deref().unwrap_or_default();
        let (r, c) = label_pair(&next, row, &raw.column)?;
        let what = format!("inferred ({row}, {})", raw.column);
        if next.cell(r, c).expect("labels index the grid").origin != Origin::Absent {
            return Err(Fault::Contract(format!("{what}: target cell is not empty")));
        }
        let unit = raw.unit.as_deref().map_or_else(|| column_unit(&next, c), parse_unit);
        let quantity = quantity_from_raw(raw, unit, &what)?;
        let quote = locate_evidence(context, raw.quote.as_deref(), raw.offset, &what)?;
        let uncertainty = score(raw.uncertainty, defaults.inferred, &what)?;
        next.set(Cell {
            row: r,
            col: c,
            quote,
            quantity: Some(quantity),
            origin: Origin::Inferred,
            uncertainty,
        });
    }

    for raw in &response.computed {
        apply_computed(&mut next, context, raw, defaults)?;
    }

    let mut rows = Vec::with_capacity(response.new_rows.len());
    let mut labels: BTreeSet<String> = BTreeSet::new();
    for new_row in &response.new_rows {
        let label = new_row.label.trim().to_string();
        if label.is_empty() || find_label(&next.schema.row_labels, &label).is_some() || !labels.insert(label.clone()) {
            return Err(Fault::Contract(format!("new row label {label:?} is empty or already present")));
        }
        let mut cells: Vec<Cell> = (0..next.cols()).map(|c| Cell::absent(0, c)).collect();
        let mut filled = BTreeSet::new();
        for raw in &new_row.cells {
            let c = find_label(&next.schema.column_labels, &raw.column)
                .ok_or_else(|| Fault::Contract(format!("new row {label:?}: unknown column {:?}", raw.column)))?;
            if !filled.insert(c) {
                return Err(Fault::Contract(format!("new row {label:?}: column {:?} given twice", raw.column)));
            }
            let what = format!("new row ({label}, {})", raw.column);
            cells[c] = new_row_cell(&next, context, raw, c, defaults, &what)?;
        }
        rows.push((label, cells));
    }
    let next = next.augment_rows(rows).map_err(|e| Fault::Contract(e.to_string()))?;

    match next.validate(context).first() {
        Some(v) => Err(Fault::Contract(format!("inferred table is invalid: {v:?}"))),
        None => Ok(next),
    }
}

fn apply_computed(
    table: &mut AnnotatedTable,
    context: &str,
    raw: &RawComputed,
    defaults: &UncertaintyDefaults,
) -> Result<(), Fault> {
    let what = format!("computed ({}, {})", raw.row, raw.column);
    let (r, c) = label_pair(table, &raw.row, &raw.column)?;
    let (sr, sc) = label_pair(table, &raw.from.row, &raw.from.column)?;
    if table.cell(r, c).expect("labels index the grid").origin != Origin::Absent {
        return Err(Fault::Contract(format!("{what}: target cell is not empty")));
    }
    let source = table.cell(sr, sc).expect("labels index the grid");
    let base = source
        .quantity
        .as_ref()
        .filter(|q| q.kind == QuantityKind::Exact)
        .ok_or_else(|| Fault::Contract(format!("{what}: source cell has no point value")))?;
    let comparison = match (raw.factor, raw.delta) {
        (Some(f), None) if f.is_finite() && f != 0.0 => Comparison::Factor(f),
        (None, Some(d)) if d.is_finite() && d != 0.0 => Comparison::Delta(d),
        _ => return Err(Fault::Contract(format!("{what}: needs exactly one nonzero factor or delta"))),
    };
    let comparison = if raw.referent { comparison.inverse() } else { comparison };
    let value = apply_comparative(base.value, comparison);
    if !value.is_finite() {
        return Err(Fault::Contract(format!("{what}: result is not finite")));
    }
    let inherited = source.uncertainty.get().max(defaults.computed_floor);
    let uncertainty = score(raw.uncertainty, inherited, &what)?;
    let quantity = ParsedQuantity::exact(value, base.unit.clone());
    let quote = locate_evidence(context, raw.quote.as_deref(), raw.offset, &what)?;
    table.set(Cell {
        row: r,
        col: c,
        quote,
        quantity: Some(quantity),
        origin: Origin::Computed,
        uncertainty,
    });
    Ok(())
}

fn new_row_cell(
    table: &AnnotatedTable,
    context: &str,
    raw: &RawValue,
    col: usize,
    defaults: &UncertaintyDefaults,
    what: &str,
) -> Result<Cell, Fault> {
    let unit = raw.unit.as_deref().map_or_else(|| column_unit(table, col), parse_unit);
    let quote = locate_evidence(context, raw.quote.as_deref(), raw.offset, what)?;
    if let Some(q) = &quote {
        match parse_quantity(&q.verbatim) {
            // A plain number that agrees with the reading is a quote, not an inference.
            Ok(p) if p.is_direct() && raw.value.is_none_or(|v| v == p.value) && raw.kind.is_none_or(|k| k == p.kind) => {
                return Ok(Cell::quoted(0, col, q.clone()));
            }
            Ok(p) if !p.is_direct() && !matches!(p.modifier, Modifier::Comparative(_)) => {
                let (quantity, uncertainty) = resolve_quote(&q.verbatim, raw, unit, defaults, what)?;
                return Ok(Cell {
                    row: 0,
                    col,
                    quote: Some(q.clone()),
                    quantity: Some(quantity),
                    origin: Origin::Quoted,
                    uncertainty,
                });
            }
            _ => {}
        }
    }
    let quantity = quantity_from_raw(raw, unit, what)?;
    Ok(Cell {
        row: 0,
        col,
        quote,
        quantity: Some(quantity),
        origin: Origin::Inferred,
        uncertainty: score(raw.uncertainty, defaults.inferred, what)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::backend::ScriptedBackend;
    use serde_json::json;

    const CONTEXT: &str = "In 2000, Korea grew between 4% and 5% while China exceeded 8%. \
In 2010 Korea grew 7% and Japan grew 7% too. Trump's disapproval was 53%.";

    fn schema() -> TableSchema {
        TableSchema {
            topic_id: "fine-0".into(),
            row_header: "Year".into(),
            column_labels: vec!["Korea".into(), "China".into(), "Japan".into()],
            row_labels: vec!["2000".into(), "2010".into()],
        }
    }

    fn session_with<'a>(backend: &'a ScriptedBackend, prompts: &'a PromptPack, config: &'a Config) -> Session<'a> {
        Session::new(backend, prompts, config)
    }

    fn populated(backend: &ScriptedBackend) -> AnnotatedTable {
        backend.push(
            Stage::PopulateTable,
            &json!({"cells": [
                {"row": "2000", "column": "Korea", "quote": "between 4% and 5%"},
                {"row": "2000", "column": "China", "quote": "exceeded 8%"},
                {"row": "2010", "column": "Korea", "quote": "7%"},
                {"row": "2010", "column": "Japan", "quote": "7%", "offset": 100}
            ]}),
        );
        let prompts = PromptPack::builtin();
        let config = Config::default();
        let mut s = session_with(backend, &prompts, &config);
        s.populate_table(&schema(), CONTEXT).unwrap()
    }

    #[test]
    fn population_quotes_and_direct_values() {
        let backend = ScriptedBackend::new();
        let t = populated(&backend);
        let korea_2010 = t.cell(1, 0).unwrap();
        assert_eq!(korea_2010.origin, Origin::Quoted);
        assert_eq!(korea_2010.quantity.as_ref().unwrap().value, 7.0);
        assert_eq!(korea_2010.uncertainty, Uncertainty::ZERO);
        let china_2000 = t.cell(0, 1).unwrap();
        assert_eq!(china_2000.origin, Origin::Quoted);
        assert!(china_2000.quantity.is_none());
        assert_eq!(t.cell(1, 1).unwrap().origin, Origin::Absent);
        // The second "7%" is found through its offset hint.
        let japan = t.cell(1, 2).unwrap().quote.as_ref().unwrap();
        assert_eq!(japan.offset, CONTEXT.rfind("7%").unwrap());
        assert!(validate_quotes(&t, CONTEXT).is_empty());
    }

    #[test]
    fn ungrounded_quotes_fail_after_retries() {
        let backend = ScriptedBackend::new();
        for _ in 0..4 {
            backend.push(Stage::PopulateTable, &json!({"cells": [{"row": "2000", "column": "Korea", "quote": "9.9%"}]}));
        }
        let prompts = PromptPack::builtin();
        let config = Config::default();
        let mut s = session_with(&backend, &prompts, &config);
        let err = s.populate_table(&schema(), CONTEXT).unwrap_err();
        assert!(matches!(err.kind, StageErrorKind::GroundingFailure(_)));
        assert_eq!(s.trace().entries.len(), 4);
        assert_eq!(s.trace().entries[3].retry_count, 3);
    }

    #[test]
    fn retry_recovers_from_malformed_response() {
        let backend = ScriptedBackend::new();
        backend.push(Stage::CreateSchema, &json!("not json"));
        backend.push(Stage::CreateSchema, &json!({"row_header": "Year", "columns": ["Korea"], "rows": ["2000"]}));
        let prompts = PromptPack::builtin();
        let config = Config::default();
        let mut s = session_with(&backend, &prompts, &config);
        let topic = Topic {
            id: "fine-0".into(),
            granularity: Granularity::Fine,
            title: "t".into(),
            messages: vec![],
            sentiment: None,
            narrative: None,
            linked_cells: vec![],
        };
        let schema = s.create_schema(&topic).unwrap();
        assert_eq!(schema.column_labels, ["Korea"]);
        let outcomes: Vec<_> = s.trace().entries.iter().map(|e| &e.validation_outcome).collect();
        assert!(matches!(outcomes[0], Outcome::Rejected { fault: Fault::Malformed(_) }));
        assert_eq!(outcomes[1], &Outcome::Accepted);

        backend.push(Stage::CreateSchema, &json!({"columns": [], "rows": ["2000"]}));
        let err = s.create_schema(&topic).unwrap_err();
        assert_eq!(err.kind, StageErrorKind::DegenerateSchema);
    }

    #[test]
    fn inference_resolves_bounds_and_computes() {
        let backend = ScriptedBackend::new();
        let t = populated(&backend);
        backend.push(
            Stage::InferValues,
            &json!({
                "resolved": [
                    {"row": "2000", "column": "Korea", "value": 4.5},
                    {"row": "2000", "column": "China", "value": 8.1, "uncertainty": 15}
                ],
                "computed": [
                    {"row": "2010", "column": "China", "from": {"row": "2010", "column": "Korea"}, "factor": 2}
                ],
                "new_rows": [
                    {"label": "2005", "cells": [{"column": "Japan", "value": 1.3, "uncertainty": 40}]}
                ]
            }),
        );
        let prompts = PromptPack::builtin();
        let config = Config::default();
        let mut s = session_with(&backend, &prompts, &config);
        let out = s.infer_values(&t, CONTEXT).unwrap();
        let korea = out.cell(0, 0).unwrap();
        assert_eq!(korea.quantity.as_ref().unwrap().kind, QuantityKind::ClosedRange);
        assert_eq!(korea.uncertainty.get(), 10);
        let china = out.cell(0, 1).unwrap();
        assert_eq!(china.quantity.as_ref().unwrap().value, 8.1);
        assert_eq!(china.quantity.as_ref().unwrap().lo, Some(8.0));
        assert_eq!(china.uncertainty.get(), 15);
        let computed = out.cell(1, 1).unwrap();
        assert_eq!(computed.origin, Origin::Computed);
        assert_eq!(computed.quantity.as_ref().unwrap().value, 14.0);
        assert_eq!(computed.uncertainty.get(), 1);
        assert_eq!(out.augmented_rows, BTreeSet::from([2]));
        assert_eq!(out.cell(2, 2).unwrap().origin, Origin::Inferred);
        // Pre-existing quotes are untouched.
        for (a, b) in t.cells.iter().zip(&out.cells) {
            assert_eq!(a.quote, b.quote);
        }
        assert!(out.validate(CONTEXT).is_empty());
    }

    #[test]
    fn referent_deltas_run_backwards() {
        let context = "Trump's disapproval rating is 53%, 14 percent higher than Bill Clinton's.";
        let schema = TableSchema {
            topic_id: "t".into(),
            row_header: "President".into(),
            column_labels: vec!["Disapprove".into()],
            row_labels: vec!["Trump".into(), "Clinton".into()],
        };
        let mut t = AnnotatedTable::empty(schema).unwrap();
        t.set(Cell::quoted(0, 0, Quote::locate(context, "53%", None).unwrap()));
        let backend = ScriptedBackend::new();
        backend.push(
            Stage::InferValues,
            &json!({"computed": [{"row": "Clinton", "column": "Disapprove",
                "from": {"row": "Trump", "column": "Disapprove"}, "delta": 14, "referent": true,
                "quote": "14 percent higher than Bill Clinton's"}]}),
        );
        let prompts = PromptPack::builtin();
        let config = Config::default();
        let out = session_with(&backend, &prompts, &config).infer_values(&t, context).unwrap();
        assert_eq!(out.cell(1, 0).unwrap().quantity.as_ref().unwrap().value, 39.0);
    }

    #[test]
    fn bound_violations_are_contract_violations() {
        let backend = ScriptedBackend::new();
        let t = populated(&backend);
        for _ in 0..4 {
            backend.push(
                Stage::InferValues,
                &json!({"resolved": [{"row": "2000", "column": "China", "value": 7}]}),
            );
        }
        let prompts = PromptPack::builtin();
        let config = Config::default();
        let err = session_with(&backend, &prompts, &config).infer_values(&t, CONTEXT).unwrap_err();
        assert!(matches!(err.kind, StageErrorKind::ContractViolation(ref m) if m.contains("lower bound")), "{err}");

        let backend2 = ScriptedBackend::new();
        let t = populated(&backend2);
        for _ in 0..4 {
            backend2.push(
                Stage::InferValues,
                &json!({"resolved": [{"row": "2000", "column": "China", "value": 9, "uncertainty": 150}]}),
            );
        }
        let err = session_with(&backend2, &prompts, &config).infer_values(&t, CONTEXT).unwrap_err();
        assert!(matches!(err.kind, StageErrorKind::ContractViolation(ref m) if m.contains("150")));
    }

    #[test]
    fn inference_may_not_overwrite_values() {
        let backend = ScriptedBackend::new();
        let t = populated(&backend);
        backend.push(Stage::InferValues, &json!({"resolved": [{"row": "2010", "column": "Korea", "value": 9}]}));
        let prompts = PromptPack::builtin();
        let config = Config {
            backend: crate::config::BackendConfig {
                max_retries: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let err = session_with(&backend, &prompts, &config).infer_values(&t, CONTEXT).unwrap_err();
        assert!(matches!(err.kind, StageErrorKind::ContractViolation(_)));
    }

    #[test]
    fn check_resolution_cases() {
        let open = ParsedQuantity::open_lower(8.0, Unit::Percent);
        assert_eq!(check_resolution(&open, Some(8.1)).unwrap().value, 8.1);
        assert!(check_resolution(&open, Some(7.9)).is_err());
        assert!(check_resolution(&open, None).is_err());
        let below = ParsedQuantity::open_upper(3300.0, Unit::Count);
        assert!(check_resolution(&below, Some(3400.0)).is_err());
        let closed = ParsedQuantity::closed(9.0, 11.0, Unit::Count);
        assert_eq!(check_resolution(&closed, Some(10.5)).unwrap().value, 10.0);
        assert!(check_resolution(&closed, Some(12.0)).is_err());
    }

    #[test]
    fn clusters_must_partition() {
        let backend = ScriptedBackend::new();
        let msg = |t: &str| KeyMessage {
            text: t.into(),
            source_span: SourceSpan {
                source: SpanSource::Statement,
                offset: 0,
                length: 1,
            },
        };
        let messages = vec![msg("a"), msg("b")];
        backend.push(Stage::ClusterTopics, &json!({"topics": [{"title": "x", "messages": [0, 0, 1]}]}));
        backend.push(Stage::ClusterTopics, &json!({"topics": [{"title": "x", "messages": [0]}]}));
        backend.push(Stage::ClusterTopics, &json!({"topics": [{"title": "x", "messages": [1]}, {"title": "y", "messages": [0]}]}));
        let prompts = PromptPack::builtin();
        let config = Config::default();
        let mut s = session_with(&backend, &prompts, &config);
        let topics = s.cluster_topics(&messages, Granularity::Coarse).unwrap();
        assert_eq!(topics.len(), 2);
        assert_eq!(topics[0].id, "coarse-0");
        assert_eq!(topics[1].messages[0].text, "a");
        assert_eq!(s.trace().entries.len(), 3);
    }

    #[test]
    fn key_messages_need_grounded_evidence() {
        let backend = ScriptedBackend::new();
        let statement = "China exceeded 8% in 2000.";
        backend.push(Stage::ExtractKeyMessages, &json!({"messages": [{"text": "China grew more than 8%", "evidence": "exceeded 8%"}]}));
        let prompts = PromptPack::builtin();
        let config = Config::default();
        let mut s = session_with(&backend, &prompts, &config);
        let m = s.extract_key_messages(statement, statement).unwrap();
        assert_eq!(m[0].source_span.resolve(statement, statement), Some("exceeded 8%"));
        assert_eq!(
            s.extract_key_messages("  ", "").unwrap_err().kind,
            StageErrorKind::EmptyStatement
        );
        backend.push(Stage::ExtractKeyMessages, &json!({"messages": []}));
        assert_eq!(
            s.extract_key_messages(statement, statement).unwrap_err().kind,
            StageErrorKind::EmptyExtraction
        );
    }

    #[test]
    fn chart_suggestion_checks_labels() {
        let backend = ScriptedBackend::new();
        let t = populated(&backend);
        backend.push(Stage::SuggestChart, &json!({"chart_type": "line", "x": "year", "y": ["korea", "China"]}));
        let prompts = PromptPack::builtin();
        let config = Config {
            backend: crate::config::BackendConfig {
                max_retries: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut s = session_with(&backend, &prompts, &config);
        let c = s.suggest_chart(&t).unwrap();
        assert_eq!(c.x_binding, "Year");
        assert_eq!(c.y_binding, ["Korea", "China"]);
        backend.push(Stage::SuggestChart, &json!({"chart_type": "line", "x": "Year", "y": ["Mars"]}));
        assert!(matches!(s.suggest_chart(&t).unwrap_err().kind, StageErrorKind::InvalidBinding(_)));
    }

    #[test]
    fn sentiment_links_cells() {
        let backend = ScriptedBackend::new();
        let t = populated(&backend);
        backend.push(
            Stage::ClassifySentiment,
            &json!({"sentiment": "Positive", "narrative": "Korea surged.", "linked_cells": [{"row": "2010", "column": "Korea"}]}),
        );
        let prompts = PromptPack::builtin();
        let config = Config::default();
        let topic = Topic {
            id: "fine-0".into(),
            granularity: Granularity::Fine,
            title: "Growth".into(),
            messages: vec![],
            sentiment: None,
            narrative: None,
            linked_cells: vec![],
        };
        let out = session_with(&backend, &prompts, &config).classify_sentiment(&topic, &t).unwrap();
        assert_eq!(out.sentiment, Some(Sentiment::Positive));
        assert_eq!(out.linked_cells, [CellRef { row: 1, col: 0 }]);
    }

    #[test]
    fn long_contexts_are_chunked_and_merged() {
        let para_a = "In 2000 Korea grew about 5%. ".repeat(20);
        let para_b = "In 2000 Korea grew 4.6%. ".repeat(20);
        let context = format!("{para_a}\n\n{para_b}");
        let prompts = PromptPack::builtin();
        let overhead = prompts
            .render(Stage::PopulateTable, &[("schema", &schema_text(&schema())), ("context", "")])
            .unwrap()
            .len();
        let backend = ScriptedBackend::new().with_capabilities(crate::llm::Capabilities {
            max_input_chars: overhead + para_a.len() + 1,
        });
        backend.push(Stage::PopulateTable, &json!({"cells": [{"row": "2000", "column": "Korea", "quote": "about 5%"}]}));
        backend.push(Stage::PopulateTable, &json!({"cells": [{"row": "2000", "column": "Korea", "quote": "4.6%"}]}));
        let config = Config::default();
        let mut s = session_with(&backend, &prompts, &config);
        let t = s.populate_table(&schema(), &context).unwrap();
        let q = t.cell(0, 0).unwrap().quote.as_ref().unwrap();
        assert_eq!(q.verbatim, "4.6%");
        assert!(q.is_grounded_in(&context));
        assert_eq!(s.trace().entries.iter().filter(|e| e.chunk.is_some()).count(), 2);
    }

    #[test]
    fn paragraph_split_respects_budget() {
        let text = "aaaa bbbb\n\ncccc\n\ndddddddddddd";
        let chunks = split_paragraphs(text, 10);
        for (off, chunk) in &chunks {
            assert!(chunk.len() <= 10);
            assert_eq!(&text[*off..*off + chunk.len()], *chunk);
        }
        let joined: String = chunks.iter().map(|(_, c)| c.replace(char::is_whitespace, "")).collect();
        assert_eq!(joined, text.replace(char::is_whitespace, ""));
        assert_eq!(split_paragraphs("short", 100), [(0, "short")]);
    }
}
