//! Fixture access and seeded generators for test suites. Enabled with the
//! `testkit` feature.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::llm::GranularityOption;
use crate::quantity::{parse_quantity, ParsedQuantity, Unit};
use crate::recommend::{ChartChoice, ChartType, ChoiceProvenance};
use crate::render::{Mark, RangeKind};
use crate::table::{AnnotatedTable, Cell, CellRef, Origin, Quote, TableSchema, Uncertainty};
use crate::topic::Sentiment;

/// Directory holding the fixture corpus.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// A worked example: document, statement, scripted responses and the
/// recorded mock pack, plus what a run over it should produce.
#[derive(Debug, Clone, Copy)]
pub struct Case {
    pub name: &'static str,
    pub granularity: GranularityOption,
    pub chart_type: ChartType,
    pub sentiment: Sentiment,
}

pub const CASES: [Case; 5] = [
    Case {
        name: "gdp",
        granularity: GranularityOption::Both,
        chart_type: ChartType::Line,
        sentiment: Sentiment::Negative,
    },
    Case {
        name: "religion",
        granularity: GranularityOption::Fine,
        chart_type: ChartType::Line,
        sentiment: Sentiment::Neutral,
    },
    Case {
        name: "protestant",
        granularity: GranularityOption::Fine,
        chart_type: ChartType::Pie,
        sentiment: Sentiment::Neutral,
    },
    Case {
        name: "presidents",
        granularity: GranularityOption::Fine,
        chart_type: ChartType::Bar,
        sentiment: Sentiment::Negative,
    },
    Case {
        name: "covid",
        granularity: GranularityOption::Fine,
        chart_type: ChartType::Scatter,
        sentiment: Sentiment::Positive,
    },
];

impl Case {
    pub fn by_name(name: &str) -> Option<Case> {
        CASES.iter().copied().find(|c| c.name == name)
    }

    pub fn dir(&self) -> PathBuf {
        fixtures_dir().join(self.name)
    }

    pub fn pack_dir(&self) -> PathBuf {
        self.dir().join("pack")
    }

    fn read(&self, file: &str) -> String {
        let path = self.dir().join(file);
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
    }

    pub fn document(&self) -> String {
        self.read("document.txt")
    }

    pub fn statement(&self) -> String {
        self.read("statement.txt")
    }

    pub fn script(&self) -> serde_json::Value {
        serde_json::from_str(&self.read("script.json")).expect("script is JSON")
    }

    /// Byte span of the statement inside the document.
    pub fn span(&self) -> (usize, usize) {
        let statement = self.statement();
        let offset = self.document().find(&statement).expect("statement is part of the document");
        (offset, statement.len())
    }
}

/// Expected outcome for one phrase of the quantity corpus.
#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Quantity(ParsedQuantity),
    Unparsable,
    Ambiguous,
}

/// The hand-checked phrase corpus in `fixtures/quantities.json`.
pub fn quantity_corpus() -> Vec<(String, Expected)> {
    #[derive(serde::Deserialize)]
    struct Entry {
        phrase: String,
        expect: Option<ParsedQuantity>,
        error: Option<String>,
    }
    #[derive(serde::Deserialize)]
    struct Corpus {
        phrases: Vec<Entry>,
    }
    let text = std::fs::read_to_string(fixtures_dir().join("quantities.json")).expect("corpus exists");
    let corpus: Corpus = serde_json::from_str(&text).expect("corpus is well formed");
    corpus
        .phrases
        .into_iter()
        .map(|e| {
            let expected = match (e.expect, e.error.as_deref()) {
                (Some(q), None) => Expected::Quantity(q),
                (None, Some("unparsable")) => Expected::Unparsable,
                (None, Some("ambiguous")) => Expected::Ambiguous,
                _ => panic!("corpus entry {:?} needs exactly one of expect or error", e.phrase),
            };
            (e.phrase, expected)
        })
        .collect()
}

/// Whether the parser's answer for a phrase is the expected one.
pub fn matches_expected(phrase: &str, expected: &Expected) -> bool {
    use crate::quantity::QuantityError;
    match (parse_quantity(phrase), expected) {
        (Ok(got), Expected::Quantity(want)) => got == *want,
        (Err(QuantityError::UnparsableNumber(_)), Expected::Unparsable) => true,
        (Err(QuantityError::AmbiguousPhrase(_)), Expected::Ambiguous) => true,
        _ => false,
    }
}

/// A generated table and the context its quotes point into.
#[derive(Debug, Clone)]
pub struct Generated {
    pub table: AnnotatedTable,
    pub context: String,
}

const ROW_WORDS: [&str; 10] = [
    "North", "South", "Zürich", "São Paulo", "東京", "Lagos", "Oslo", "Quebec", "Île-de-France", "Kraków",
];
const COLUMN_WORDS: [&str; 8] = ["Revenue", "Growth", "Share", "Turnout", "Exports", "Deaths", "Approval", "Ratio"];
const FILLER: [&str; 6] = [
    "Analysts were cautious.",
    "The report notes several caveats.",
    "Figures were revised twice, once in spring (±0.5 pp).",
    "Données provisoires.",
    "Methodology changed in the interim.",
    "No further detail was given.",
];

/// Numeric phrase in one of the forms the parser accepts.
fn phrase(rng: &mut impl Rng) -> String {
    let v = rng.random_range(1..2000) as f64 / 10.0;
    let w = v + rng.random_range(1..200) as f64 / 10.0;
    let n = rng.random_range(1_000..9_999_999u64);
    match rng.random_range(0..9) {
        0 => format!("{v}%"),
        1 => format!("{v}"),
        2 => format!("about {v}%"),
        3 => format!("between {v}% and {w}%"),
        4 => format!("more than {}", group_thousands(n)),
        5 => format!("under {v}%"),
        6 => group_thousands(n),
        7 => format!("nearly {}", group_thousands(n)),
        _ => format!("{v} to {w}"),
    }
}

fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Arbitrary finite value, full precision, for serialization tests.
fn wild_value(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(-1e9..1e9),
        1 => rng.random::<f64>() * 10f64.powi(rng.random_range(-12..12)),
        2 => rng.random_range(-100i64..100) as f64,
        _ => -rng.random::<f64>(),
    }
}

fn wild_quantity(rng: &mut impl Rng) -> ParsedQuantity {
    let unit = match rng.random_range(0..4) {
        0 => Unit::Percent,
        1 => Unit::Count,
        2 => Unit::Unitless,
        _ => Unit::Currency(["USD", "EUR", "JPY"].choose(rng).unwrap().to_string()),
    };
    let a = wild_value(rng);
    match rng.random_range(0..4) {
        0 => ParsedQuantity::exact(a, unit),
        1 => ParsedQuantity::closed(a, a + rng.random::<f64>() * 50.0, unit),
        2 => ParsedQuantity::open_lower(a, unit).with_estimate(a + rng.random::<f64>()),
        _ => ParsedQuantity::open_upper(a, unit).with_estimate(a - rng.random::<f64>()),
    }
}

fn score(rng: &mut impl Rng) -> Uncertainty {
    Uncertainty::new(rng.random_range(1..=100)).expect("in range")
}

/// A random table that passes `validate` against its context. Every cell
/// origin appears with some probability; at least one cell is quoted.
pub fn random_table(rng: &mut impl Rng) -> Generated {
    let temporal = rng.random_bool(0.5);
    let rows = rng.random_range(1..=7);
    let cols = rng.random_range(1..=4);
    let row_labels: Vec<String> = if temporal {
        let start = rng.random_range(1950..2010);
        (0..rows).map(|i| (start + 2 * i).to_string()).collect()
    } else {
        let mut words = ROW_WORDS.to_vec();
        words.shuffle(rng);
        words.into_iter().take(rows.min(ROW_WORDS.len())).map(String::from).collect()
    };
    let mut columns = COLUMN_WORDS.to_vec();
    columns.shuffle(rng);
    let column_labels: Vec<String> = columns.into_iter().take(cols).map(String::from).collect();
    let schema = TableSchema {
        topic_id: format!("fine-{}", rng.random_range(0..4)),
        row_header: if temporal { "Year" } else { "Region" }.into(),
        column_labels,
        row_labels,
    };
    let mut table = AnnotatedTable::empty(schema).expect("columns exist");
    let mut context = String::new();
    let forced = (rng.random_range(0..table.rows()), rng.random_range(0..table.cols()));

    for r in 0..table.rows() {
        for c in 0..table.cols() {
            if rng.random_bool(0.3) {
                context.push_str(FILLER.choose(rng).unwrap());
                context.push(' ');
            }
            let origin = if (r, c) == forced { 0 } else { rng.random_range(0..4) };
            let (row, col) = (table.schema.row_labels[r].clone(), table.schema.column_labels[c].clone());
            let cell = match origin {
                0 => {
                    let text = phrase(rng);
                    context.push_str(&format!("For {row}, {col} was "));
                    let quote = Quote::new(context.len(), text.clone());
                    context.push_str(&text);
                    context.push_str(". ");
                    let mut cell = Cell::quoted(r, c, quote);
                    if cell.quantity.is_none() {
                        let parsed = parse_quantity(&text).expect("generated phrases parse");
                        cell.quantity = Some(parsed);
                        cell.uncertainty = score(rng);
                    }
                    cell
                }
                1 | 2 => {
                    let quote = rng.random_bool(0.5).then(|| {
                        let evidence = format!("{row} moved in line with {col}");
                        context.push_str("Sources say ");
                        let q = Quote::new(context.len(), evidence.clone());
                        context.push_str(&evidence);
                        context.push_str(". ");
                        q
                    });
                    Cell {
                        row: r,
                        col: c,
                        quote,
                        quantity: Some(wild_quantity(rng)),
                        origin: if origin == 1 { Origin::Inferred } else { Origin::Computed },
                        uncertainty: score(rng),
                    }
                }
                _ => Cell::absent(r, c),
            };
            table.set(cell);
        }
    }
    table.augmented_rows = (0..table.rows()).filter(|_| rng.random_bool(0.2)).collect();
    debug_assert!(table.validate(&context).is_empty());
    Generated { table, context }
}

/// Independent offset-exact check: the context bytes at the quote's
/// offset equal the quote's bytes, and the recorded length agrees.
pub fn quote_matches(context: &str, quote: &Quote) -> bool {
    let bytes = context.as_bytes();
    let wanted = quote.verbatim.as_bytes();
    quote.length == wanted.len() && quote.offset <= bytes.len() && bytes[quote.offset..].starts_with(wanted)
}

/// Replaces some quoted cells' quotes with fabricated ones. Returns the
/// altered table and the positions that were tampered with; every other
/// quote is left exactly as generated.
pub fn inject_fabrications(rng: &mut impl Rng, generated: &Generated) -> (AnnotatedTable, BTreeSet<CellRef>) {
    let context = &generated.context;
    let mut table = generated.table.clone();
    let quoted: Vec<CellRef> = table
        .cells
        .iter()
        .filter(|c| c.origin == Origin::Quoted)
        .map(Cell::position)
        .collect();
    let mut chosen: BTreeSet<CellRef> = quoted.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
    if chosen.is_empty() {
        chosen.insert(*quoted.choose(rng).expect("generator quotes at least one cell"));
    }
    for &at in &chosen {
        let cell = table.cell_mut(at.row, at.col).expect("position exists");
        let original = cell.quote.clone().expect("quoted cells carry quotes");
        let fabricated = loop {
            let candidate = fabricate(rng, &original, context);
            if !quote_matches(context, &candidate) {
                break candidate;
            }
        };
        cell.quote = Some(fabricated);
    }
    (table, chosen)
}

fn fabricate(rng: &mut impl Rng, original: &Quote, context: &str) -> Quote {
    match rng.random_range(0..6) {
        // Same text, shifted offset.
        0 => {
            let shift = rng.random_range(1..=3);
            let offset = if rng.random_bool(0.5) {
                original.offset + shift
            } else {
                original.offset.saturating_sub(shift)
            };
            Quote::new(offset, original.verbatim.clone())
        }
        // One digit altered.
        1 => {
            let mut text: Vec<char> = original.verbatim.chars().collect();
            if let Some(i) = text.iter().position(char::is_ascii_digit) {
                text[i] = if text[i] == '9' { '1' } else { char::from(text[i] as u8 + 1) };
            } else {
                text.push('0');
            }
            Quote::new(original.offset, text.into_iter().collect::<String>())
        }
        // A number that never appeared.
        2 => Quote::new(original.offset, format!("{}.{}%", rng.random_range(100..999), rng.random_range(0..9))),
        // Past the end of the context.
        3 => Quote::new(context.len() + rng.random_range(0..10), original.verbatim.clone()),
        // Recorded length disagrees with the text.
        4 => Quote {
            length: original.length + 1,
            ..original.clone()
        },
        // Text extended by the next word that is not there.
        _ => Quote::new(original.offset, format!("{} approximately", original.verbatim)),
    }
}

/// A random mark, gap or valued, of any range kind.
pub fn random_mark(rng: &mut impl Rng, category: usize, series: usize) -> Mark {
    let gap = rng.random_bool(0.1);
    let center = rng.random_range(-500.0..500.0);
    let spread = rng.random_range(0.0..100.0);
    let range_kind = if gap {
        RangeKind::None
    } else {
        *[RangeKind::None, RangeKind::Closed, RangeKind::OpenLower, RangeKind::OpenUpper]
            .choose(rng)
            .unwrap()
    };
    let (value, lo, hi) = match range_kind {
        _ if gap => (None, None, None),
        RangeKind::None => (Some(center), Some(center), Some(center)),
        RangeKind::Closed => (Some(center), Some(center - spread), Some(center + spread)),
        RangeKind::OpenLower => (Some(center + spread), Some(center), None),
        RangeKind::OpenUpper => (Some(center - spread), None, Some(center)),
    };
    let uncertainty = if gap { 0 } else { rng.random_range(0..=100) };
    Mark {
        cell_ref: CellRef { row: category, col: series },
        series,
        category,
        value,
        lo,
        hi,
        uncertainty,
        inferred: !gap && rng.random_bool(0.4),
        range_kind,
    }
}

/// A chart choice over every column of `table`; `Line` only for temporal
/// row labels and `Pie` only for a single column.
pub fn random_choice(rng: &mut impl Rng, table: &AnnotatedTable) -> ChartChoice {
    let temporal = table.schema.row_header == "Year";
    let mut types = vec![ChartType::Bar, ChartType::Scatter];
    if temporal {
        types.push(ChartType::Line);
    }
    if table.cols() == 1 {
        types.push(ChartType::Pie);
    }
    ChartChoice {
        chart_type: *types.choose(rng).unwrap(),
        x_binding: table.schema.row_header.clone(),
        y_binding: table.schema.column_labels.clone(),
        provenance: ChoiceProvenance::Rule,
    }
}

/// An inference exchange with one reading that breaks an open bound, and
/// the same exchange with that reading moved to the right side.
#[derive(Debug, Clone)]
pub struct BoundViolation {
    pub table: AnnotatedTable,
    pub context: String,
    pub violating: serde_json::Value,
    pub corrected: serde_json::Value,
}

/// Builds a table of quoted bound phrases ("more than 40%", "under 12")
/// plus an empty row, and an inference response that resolves every open
/// cell. Exactly one reading in `violating` lands on the wrong side of
/// its bound; where it sits (resolved quote, inferred cell, new row with
/// explicit bounds, new row quoting a bound phrase) is random.
pub fn bound_violation(rng: &mut impl Rng) -> BoundViolation {
    use serde_json::{json, Value};

    let mut words = ROW_WORDS.to_vec();
    words.shuffle(rng);
    let rows = rng.random_range(1..=4);
    let cols = rng.random_range(1..=3);
    let mut row_labels: Vec<String> = words[..rows].iter().map(|w| w.to_string()).collect();
    row_labels.push("Elsewhere".into());
    let column_labels: Vec<String> = COLUMN_WORDS[..cols].iter().map(|w| w.to_string()).collect();
    let schema = TableSchema {
        topic_id: "fine-0".into(),
        row_header: "Region".into(),
        column_labels: column_labels.clone(),
        row_labels: row_labels.clone(),
    };
    let mut table = AnnotatedTable::empty(schema).expect("columns exist");
    let mut context = String::new();
    let percent = rng.random_bool(0.5);
    let sign = if percent { "%" } else { "" };
    let mut resolved = Vec::new();
    let mut open = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let bound = rng.random_range(1..1000) as f64 / 4.0;
            let lower = rng.random_bool(0.5);
            let word = if lower { "more than" } else { "under" };
            let text = format!("{word} {bound}{sign}");
            context.push_str(&format!("{} {}: ", row_labels[r], column_labels[c]));
            let quote = Quote::new(context.len(), text);
            context.push_str(&quote.verbatim);
            context.push_str(". ");
            table.set(Cell::quoted(r, c, quote));
            let fine = if lower { bound + 1.5 } else { bound - 1.5 };
            resolved.push(json!({"row": row_labels[r], "column": column_labels[c], "value": fine, "uncertainty": 20}));
            open.push((resolved.len() - 1, bound, lower));
        }
    }
    let extra_bound = rng.random_range(1..1000) as f64 / 4.0;
    let extra_lower = rng.random_bool(0.5);
    let extra_phrase = format!("{} {extra_bound}{sign}", if extra_lower { "at least" } else { "at most" });
    context.push_str(&format!("Outside the listed regions the figure was {extra_phrase}."));

    let miss = if rng.random_bool(0.5) {
        rng.random_range(1e-6..1e-3)
    } else {
        rng.random_range(0.5..500.0)
    };
    let wrong_side = |bound: f64, lower: bool| if lower { bound - miss } else { bound + miss };
    let right_side = |bound: f64, lower: bool| if lower { bound + miss } else { bound - miss };
    let bounds = |bound: f64, lower: bool| {
        if lower {
            json!({"kind": "open_lower", "lo": bound})
        } else {
            json!({"kind": "open_upper", "hi": bound})
        }
    };
    let merge = |mut base: Value, extra: Value| {
        base.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        base
    };
    let response = |resolved: &[Value], inferred: Vec<Value>, new_rows: Vec<Value>| {
        json!({"resolved": resolved, "inferred": inferred, "computed": [], "new_rows": new_rows})
    };

    let (violating, corrected) = match rng.random_range(0..4) {
        0 => {
            let (i, bound, lower) = *open.choose(rng).unwrap();
            let mut bad = resolved.clone();
            bad[i]["value"] = json!(wrong_side(bound, lower));
            let mut good = resolved.clone();
            good[i]["value"] = json!(right_side(bound, lower));
            (response(&bad, vec![], vec![]), response(&good, vec![], vec![]))
        }
        1 => {
            let bound = rng.random_range(1..1000) as f64 / 4.0;
            let lower = rng.random_bool(0.5);
            let col = column_labels.choose(rng).unwrap();
            let cell = |v: f64| {
                merge(
                    json!({"row": "Elsewhere", "column": col, "value": v, "uncertainty": 40}),
                    bounds(bound, lower),
                )
            };
            (
                response(&resolved, vec![cell(wrong_side(bound, lower))], vec![]),
                response(&resolved, vec![cell(right_side(bound, lower))], vec![]),
            )
        }
        2 => {
            let bound = rng.random_range(1..1000) as f64 / 4.0;
            let lower = rng.random_bool(0.5);
            let row = |v: f64| {
                json!({"label": "Abroad", "cells": [merge(json!({"column": column_labels[0], "value": v, "uncertainty": 30}), bounds(bound, lower))]})
            };
            (
                response(&resolved, vec![], vec![row(wrong_side(bound, lower))]),
                response(&resolved, vec![], vec![row(right_side(bound, lower))]),
            )
        }
        _ => {
            let row = |v: f64| {
                json!({"label": "Abroad", "cells": [{"column": column_labels[0], "value": v, "quote": extra_phrase, "uncertainty": 30}]})
            };
            (
                response(&resolved, vec![], vec![row(wrong_side(extra_bound, extra_lower))]),
                response(&resolved, vec![], vec![row(right_side(extra_bound, extra_lower))]),
            )
        }
    };
    BoundViolation {
        table,
        context,
        violating,
        corrected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn generated_tables_are_valid() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let g = random_table(&mut rng);
            assert_eq!(g.table.validate(&g.context), vec![], "{}", g.context);
            assert!(g.table.cells.iter().any(|c| c.origin == Origin::Quoted));
        }
    }

    #[test]
    fn injections_break_exactly_the_chosen_quotes() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let g = random_table(&mut rng);
            let (t, chosen) = inject_fabrications(&mut rng, &g);
            for cell in t.cells.iter().filter(|c| c.origin == Origin::Quoted) {
                let ok = quote_matches(&g.context, cell.quote.as_ref().unwrap());
                assert_eq!(!ok, chosen.contains(&cell.position()));
            }
        }
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(group_thousands(1234567), "1,234,567");
        assert_eq!(group_thousands(999), "999");
    }

    #[test]
    fn cases_are_on_disk() {
        for case in CASES {
            let (offset, len) = case.span();
            assert_eq!(&case.document()[offset..offset + len], case.statement());
            assert!(case.pack_dir().join("index.json").exists(), "{}", case.name);
        }
    }
}
