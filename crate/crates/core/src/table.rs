//! Annotated tables: a schema plus a dense grid of cells that carry quote
//! provenance, a parsed quantity, an origin tag and an uncertainty score.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::quantity::{parse_quantity, ParsedQuantity};

/// Integer uncertainty score in `0..=100`; 0 means stated verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
#[serde(transparent)]
pub struct Uncertainty(u8);

impl Uncertainty {
    pub const ZERO: Uncertainty = Uncertainty(0);
    pub const MAX: Uncertainty = Uncertainty(100);

    pub fn new(score: u8) -> Option<Self> {
        (score <= 100).then_some(Uncertainty(score))
    }

    /// Clamps any integer into range.
    pub fn saturating(score: i64) -> Self {
        Uncertainty(score.clamp(0, 100) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Uncertainty {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = u8::deserialize(d)?;
        Uncertainty::new(raw).ok_or_else(|| serde::de::Error::custom(format!("uncertainty {raw} exceeds 100")))
    }
}

impl fmt::Display for Uncertainty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableSchema {
    pub topic_id: String,
    /// Name of the row-identifier axis, e.g. "Year" or "Country".
    pub row_header: String,
    /// The header row.
    pub column_labels: Vec<String>,
    /// Row identifiers.
    pub row_labels: Vec<String>,
}

impl TableSchema {
    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.column_labels.iter().position(|c| c == label)
    }

    pub fn row_index(&self, label: &str) -> Option<usize> {
        self.row_labels.iter().position(|r| r == label)
    }

    pub(crate) fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.column_labels.is_empty() {
            out.push(Violation::EmptyHeader);
        }
        let mut seen = HashSet::new();
        for label in &self.column_labels {
            if !seen.insert(label) {
                out.push(Violation::DuplicateColumnLabel { label: label.clone() });
            }
        }
        let mut seen = HashSet::new();
        for label in &self.row_labels {
            if !seen.insert(label) {
                out.push(Violation::DuplicateRowLabel { label: label.clone() });
            }
        }
        out
    }
}

/// A verbatim span of the source context, addressed by byte offset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quote {
    pub offset: usize,
    pub length: usize,
    pub verbatim: String,
}

impl Quote {
    /// Quote of `context[offset..offset + verbatim.len()]`.
    pub fn new(offset: usize, verbatim: impl Into<String>) -> Self {
        let verbatim = verbatim.into();
        Quote {
            offset,
            length: verbatim.len(),
            verbatim,
        }
    }

    /// Locates `text` in `context`, preferring `hint` when it is an exact
    /// match there, otherwise the first occurrence.
    pub fn locate(context: &str, text: &str, hint: Option<usize>) -> Option<Quote> {
        if text.is_empty() {
            return None;
        }
        if let Some(offset) = hint {
            if context.get(offset..offset + text.len()) == Some(text) {
                return Some(Quote::new(offset, text));
            }
        }
        context.find(text).map(|offset| Quote::new(offset, text))
    }

    /// Byte-exact check against the context.
    pub fn is_grounded_in(&self, context: &str) -> bool {
        self.length == self.verbatim.len()
            && self
                .offset
                .checked_add(self.length)
                .and_then(|end| context.get(self.offset..end))
                == Some(self.verbatim.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Backed by a verbatim quote.
    Quoted,
    /// Reasoned from surrounding context.
    Inferred,
    /// Arithmetic over other cells.
    Computed,
    /// No support in the text.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
    pub quote: Option<Quote>,
    pub quantity: Option<ParsedQuantity>,
    pub origin: Origin,
    pub uncertainty: Uncertainty,
}

impl Cell {
    pub fn absent(row: usize, col: usize) -> Self {
        Cell {
            row,
            col,
            quote: None,
            quantity: None,
            origin: Origin::Absent,
            uncertainty: Uncertainty::ZERO,
        }
    }

    /// A quoted cell. Quotes that parse to a plain number get their quantity
    /// and uncertainty 0; anything else waits for inference.
    pub fn quoted(row: usize, col: usize, quote: Quote) -> Self {
        let quantity = parse_quantity(&quote.verbatim).ok().filter(ParsedQuantity::is_direct);
        Cell {
            row,
            col,
            quote: Some(quote),
            quantity,
            origin: Origin::Quoted,
            uncertainty: Uncertainty::ZERO,
        }
    }

    /// True when the quote converts straight to a plain number.
    pub fn is_directly_convertible(&self) -> bool {
        self.origin == Origin::Quoted
            && self
                .quote
                .as_ref()
                .and_then(|q| parse_quantity(&q.verbatim).ok())
                .is_some_and(|q| q.is_direct())
    }

    pub fn position(&self) -> CellRef {
        CellRef {
            row: self.row,
            col: self.col,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellRef {
    pub row: usize,
    pub col: usize,
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyHeader,
    DuplicateColumnLabel { label: String },
    DuplicateRowLabel { label: String },
    GridMismatch { expected: usize, found: usize },
    MisplacedCell { index: usize },
    MissingQuote { row: usize, col: usize },
    QuoteMismatch { row: usize, col: usize },
    UncertaintyRuleViolation { row: usize, col: usize },
    AbsentWithQuantity { row: usize, col: usize },
    InvalidQuantity { row: usize, col: usize, reason: String },
    AugmentedRowOutOfRange { row: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("row label {0:?} already present")]
    DuplicateRowLabel(String),
    #[error("row {label:?} has {found} cells, table has {expected} columns")]
    ArityMismatch { label: String, expected: usize, found: usize },
    #[error("schema has no columns")]
    EmptyHeader,
}

/// JSON input that does not match the published table schema.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("schema violation at {pointer}: {message}")]
pub struct SchemaViolation {
    /// JSON pointer to the offending value.
    pub pointer: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTable {
    pub schema: TableSchema,
    /// Row-major, `row_labels.len() × column_labels.len()`.
    pub cells: Vec<Cell>,
    pub augmented_rows: BTreeSet<usize>,
}

impl AnnotatedTable {
    /// A table of the schema's shape with every cell absent.
    pub fn empty(schema: TableSchema) -> Result<Self, TableError> {
        if schema.column_labels.is_empty() {
            return Err(TableError::EmptyHeader);
        }
        let cols = schema.column_labels.len();
        let cells = (0..schema.row_labels.len() * cols)
            .map(|i| Cell::absent(i / cols, i % cols))
            .collect();
        Ok(AnnotatedTable {
            schema,
            cells,
            augmented_rows: BTreeSet::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.schema.row_labels.len()
    }

    pub fn cols(&self) -> usize {
        self.schema.column_labels.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&Cell> {
        if row < self.rows() && col < self.cols() {
            self.cells.get(row * self.cols() + col)
        } else {
            None
        }
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> Option<&mut Cell> {
        if row < self.rows() && col < self.cols() {
            let cols = self.cols();
            self.cells.get_mut(row * cols + col)
        } else {
            None
        }
    }

    /// Replaces the cell at the cell's own position.
    pub fn set(&mut self, cell: Cell) {
        if let Some(slot) = self.cell_mut(cell.row, cell.col) {
            *slot = cell;
        }
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(move |c| c.col == col)
    }

    /// Every invariant violation; empty means valid. Quote checks run
    /// against `context`.
    pub fn validate(&self, context: &str) -> Vec<Violation> {
        let mut out = self.schema.violations();
        let expected = self.rows() * self.cols();
        if self.cells.len() != expected {
            out.push(Violation::GridMismatch {
                expected,
                found: self.cells.len(),
            });
        }
        let cols = self.cols().max(1);
        for (index, cell) in self.cells.iter().enumerate() {
            let (row, col) = (cell.row, cell.col);
            if row != index / cols || col != index % cols {
                out.push(Violation::MisplacedCell { index });
            }
            if let Some(q) = &cell.quantity {
                if let Err(e) = q.check() {
                    out.push(Violation::InvalidQuantity {
                        row,
                        col,
                        reason: e.to_string(),
                    });
                }
            }
            match cell.origin {
                Origin::Quoted => match &cell.quote {
                    None => out.push(Violation::MissingQuote { row, col }),
                    Some(q) if !q.is_grounded_in(context) => out.push(Violation::QuoteMismatch { row, col }),
                    Some(_) => {
                        if cell.is_directly_convertible() && cell.uncertainty != Uncertainty::ZERO {
                            out.push(Violation::UncertaintyRuleViolation { row, col });
                        }
                    }
                },
                Origin::Inferred | Origin::Computed => {
                    if cell.uncertainty == Uncertainty::ZERO {
                        out.push(Violation::UncertaintyRuleViolation { row, col });
                    }
                    if let Some(q) = &cell.quote {
                        if !q.is_grounded_in(context) {
                            out.push(Violation::QuoteMismatch { row, col });
                        }
                    }
                }
                Origin::Absent => {
                    if cell.quantity.is_some() {
                        out.push(Violation::AbsentWithQuantity { row, col });
                    }
                }
            }
        }
        for &row in &self.augmented_rows {
            if row >= self.rows() {
                out.push(Violation::AugmentedRowOutOfRange { row });
            }
        }
        out
    }

    /// Appends rows, recording them as augmented. Each new row lists its
    /// cells in column order; their `row`/`col` fields are reassigned.
    pub fn augment_rows(&self, new_rows: Vec<(String, Vec<Cell>)>) -> Result<AnnotatedTable, TableError> {
        let mut next = self.clone();
        let cols = self.cols();
        for (label, cells) in new_rows {
            if next.schema.row_index(&label).is_some() {
                return Err(TableError::DuplicateRowLabel(label));
            }
            if cells.len() != cols {
                return Err(TableError::ArityMismatch {
                    label,
                    expected: cols,
                    found: cells.len(),
                });
            }
            let row = next.rows();
            next.schema.row_labels.push(label);
            next.cells.extend(cells.into_iter().enumerate().map(|(col, mut cell)| {
                cell.row = row;
                cell.col = col;
                cell
            }));
            next.augmented_rows.insert(row);
        }
        Ok(next)
    }

    pub fn has_numeric_value(&self) -> bool {
        self.cells.iter().any(|c| c.quantity.is_some())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<AnnotatedTable, SchemaViolation> {
        let value: Value = serde_json::from_str(text).map_err(|e| SchemaViolation {
            pointer: String::new(),
            message: format!("invalid JSON: {e}"),
        })?;
        decode::table(&value)
    }
}

/// Hand-rolled decoder so that every rejection carries a JSON pointer.
mod decode {
    use super::*;

    type Res<T> = Result<T, SchemaViolation>;

    fn fail<T>(pointer: &str, message: impl Into<String>) -> Res<T> {
        Err(SchemaViolation {
            pointer: pointer.to_string(),
            message: message.into(),
        })
    }

    fn object<'a>(v: &'a Value, ptr: &str) -> Res<&'a serde_json::Map<String, Value>> {
        v.as_object().map_or_else(|| fail(ptr, "expected an object"), Ok)
    }

    fn field<'a>(obj: &'a serde_json::Map<String, Value>, ptr: &str, key: &str) -> Res<(&'a Value, String)> {
        let p = format!("{ptr}/{key}");
        match obj.get(key) {
            Some(v) => Ok((v, p)),
            None => fail(&p, format!("missing required key {key:?}")),
        }
    }

    fn string(v: &Value, ptr: &str) -> Res<String> {
        v.as_str().map(str::to_string).map_or_else(|| fail(ptr, "expected a string"), Ok)
    }

    fn index(v: &Value, ptr: &str) -> Res<usize> {
        match v.as_u64() {
            Some(n) => usize::try_from(n).map_or_else(|_| fail(ptr, "index too large"), Ok),
            None => fail(ptr, "expected a non-negative integer"),
        }
    }

    fn strings(v: &Value, ptr: &str) -> Res<Vec<String>> {
        let Some(items) = v.as_array() else {
            return fail(ptr, "expected an array of strings");
        };
        items.iter().enumerate().map(|(i, s)| string(s, &format!("{ptr}/{i}"))).collect()
    }

    fn schema(v: &Value, ptr: &str) -> Res<TableSchema> {
        let obj = object(v, ptr)?;
        let (topic, p) = field(obj, ptr, "topic_id")?;
        let topic_id = string(topic, &p)?;
        let (header, p) = field(obj, ptr, "row_header")?;
        let row_header = string(header, &p)?;
        let (cols, p) = field(obj, ptr, "column_labels")?;
        let column_labels = strings(cols, &p)?;
        if column_labels.is_empty() {
            return fail(&p, "header row must not be empty");
        }
        let (rows, p) = field(obj, ptr, "row_labels")?;
        let row_labels = strings(rows, &p)?;
        Ok(TableSchema {
            topic_id,
            row_header,
            column_labels,
            row_labels,
        })
    }

    fn quote(v: &Value, ptr: &str) -> Res<Option<Quote>> {
        if v.is_null() {
            return Ok(None);
        }
        let obj = object(v, ptr)?;
        let (offset, p) = field(obj, ptr, "offset")?;
        let offset = index(offset, &p)?;
        let (length, p) = field(obj, ptr, "length")?;
        let length = index(length, &p)?;
        let (verbatim, p) = field(obj, ptr, "verbatim")?;
        let verbatim = string(verbatim, &p)?;
        if verbatim.len() != length {
            return fail(&format!("{ptr}/length"), "length does not match verbatim byte length");
        }
        Ok(Some(Quote { offset, length, verbatim }))
    }

    fn quantity(v: &Value, ptr: &str) -> Res<Option<ParsedQuantity>> {
        if v.is_null() {
            return Ok(None);
        }
        let q: ParsedQuantity = serde_json::from_value(v.clone()).or_else(|e| fail(ptr, e.to_string()))?;
        q.check().or_else(|e| fail(ptr, e.to_string()))?;
        Ok(Some(q))
    }

    fn cell(v: &Value, ptr: &str) -> Res<Cell> {
        let obj = object(v, ptr)?;
        let (row, p) = field(obj, ptr, "row")?;
        let row = index(row, &p)?;
        let (col, p) = field(obj, ptr, "col")?;
        let col = index(col, &p)?;
        let (q, p) = field(obj, ptr, "quote")?;
        let quote = quote(q, &p)?;
        let (qty, p) = field(obj, ptr, "quantity")?;
        let quantity = quantity(qty, &p)?;
        let (origin, p) = field(obj, ptr, "origin")?;
        let origin: Origin = serde_json::from_value(origin.clone()).or_else(|_| {
            fail(&p, "expected one of \"quoted\", \"inferred\", \"computed\", \"absent\"")
        })?;
        let (u, p) = field(obj, ptr, "uncertainty")?;
        let uncertainty = match u.as_u64() {
            Some(n) if n <= 100 => Uncertainty(n as u8),
            Some(n) => return fail(&p, format!("uncertainty {n} outside 0..=100")),
            None => return fail(&p, "expected an integer in 0..=100"),
        };
        if origin == Origin::Absent && quantity.is_some() {
            return fail(&format!("{ptr}/quantity"), "absent cells carry no quantity");
        }
        if origin == Origin::Quoted && quote.is_none() {
            return fail(&format!("{ptr}/quote"), "quoted cells need a quote");
        }
        Ok(Cell {
            row,
            col,
            quote,
            quantity,
            origin,
            uncertainty,
        })
    }

    pub(super) fn table(v: &Value) -> Res<AnnotatedTable> {
        let obj = object(v, "")?;
        let (s, p) = field(obj, "", "schema")?;
        let schema = schema(s, &p)?;
        let (cells_v, cells_ptr) = field(obj, "", "cells")?;
        let Some(items) = cells_v.as_array() else {
            return fail(&cells_ptr, "expected an array");
        };
        let (rows, cols) = (schema.row_labels.len(), schema.column_labels.len());
        if items.len() != rows * cols {
            return fail(&cells_ptr, format!("expected {} cells, found {}", rows * cols, items.len()));
        }
        let mut slots: Vec<Option<Cell>> = vec![None; rows * cols];
        for (i, item) in items.iter().enumerate() {
            let ptr = format!("{cells_ptr}/{i}");
            let c = cell(item, &ptr)?;
            if c.row >= rows {
                return fail(&format!("{ptr}/row"), "row outside the schema");
            }
            if c.col >= cols {
                return fail(&format!("{ptr}/col"), "column outside the schema");
            }
            let slot = &mut slots[c.row * cols + c.col];
            if slot.is_some() {
                return fail(&ptr, "duplicate cell position");
            }
            *slot = Some(c);
        }
        let cells = slots.into_iter().flatten().collect();
        let (aug, p) = field(obj, "", "augmented_rows")?;
        let Some(aug_items) = aug.as_array() else {
            return fail(&p, "expected an array");
        };
        let mut augmented_rows = BTreeSet::new();
        for (i, a) in aug_items.iter().enumerate() {
            let ptr = format!("{p}/{i}");
            let row = index(a, &ptr)?;
            if row >= rows {
                return fail(&ptr, "augmented row outside the table");
            }
            augmented_rows.insert(row);
        }
        Ok(AnnotatedTable {
            schema,
            cells,
            augmented_rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantity::Unit;
    use proptest::prelude::*;

    const CONTEXT: &str = "Korea grew 7% in 2010 while China grew 10.6% and Japan about 4%.";

    fn gdp_schema() -> TableSchema {
        TableSchema {
            topic_id: "t0".into(),
            row_header: "Year".into(),
            column_labels: vec!["Korea".into(), "China".into(), "Japan".into()],
            row_labels: vec!["2000".into(), "2010".into(), "2020".into()],
        }
    }

    fn quoted_at(table: &mut AnnotatedTable, row: usize, col: usize, text: &str) {
        let quote = Quote::locate(CONTEXT, text, None).expect("fixture text present");
        table.set(Cell::quoted(row, col, quote));
    }

    fn sample() -> AnnotatedTable {
        let mut t = AnnotatedTable::empty(gdp_schema()).unwrap();
        quoted_at(&mut t, 1, 0, "7%");
        quoted_at(&mut t, 1, 1, "10.6%");
        t
    }

    #[test]
    fn valid_table_has_no_violations() {
        assert_eq!(sample().validate(CONTEXT), vec![]);
    }

    #[test]
    fn quote_mismatch_is_reported() {
        let mut t = sample();
        t.cell_mut(1, 0).unwrap().quote = Some(Quote::new(3, "7%"));
        assert_eq!(t.validate(CONTEXT), vec![Violation::QuoteMismatch { row: 1, col: 0 }]);
    }

    #[test]
    fn direct_quote_with_nonzero_uncertainty_is_reported() {
        let mut t = sample();
        t.cell_mut(1, 1).unwrap().uncertainty = Uncertainty::new(5).unwrap();
        assert_eq!(t.validate(CONTEXT), vec![Violation::UncertaintyRuleViolation { row: 1, col: 1 }]);
    }

    #[test]
    fn inferred_needs_positive_uncertainty() {
        let mut t = sample();
        let cell = t.cell_mut(2, 0).unwrap();
        cell.origin = Origin::Inferred;
        cell.quantity = Some(ParsedQuantity::exact(2.0, Unit::Percent));
        assert_eq!(t.validate(CONTEXT), vec![Violation::UncertaintyRuleViolation { row: 2, col: 0 }]);
        t.cell_mut(2, 0).unwrap().uncertainty = Uncertainty::new(50).unwrap();
        assert!(t.validate(CONTEXT).is_empty());
    }

    #[test]
    fn approximate_quote_is_not_direct() {
        let mut t = sample();
        quoted_at(&mut t, 1, 2, "about 4%");
        let cell = t.cell(1, 2).unwrap();
        assert!(cell.quantity.is_none());
        assert!(!cell.is_directly_convertible());
    }

    #[test]
    fn augment_rows_appends_and_records() {
        let t = sample();
        let row = |_: &str| (0..3).map(|c| Cell::absent(0, c)).collect::<Vec<_>>();
        let grown = t.augment_rows(vec![("2005".into(), row("2005")), ("2015".into(), row("2015"))]).unwrap();
        assert_eq!(grown.rows(), 5);
        assert_eq!(grown.augmented_rows, BTreeSet::from([3, 4]));
        assert_eq!(grown.cell(4, 2).unwrap().position(), CellRef { row: 4, col: 2 });
        // pre-existing cells untouched
        assert_eq!(&grown.cells[..t.cells.len()], &t.cells[..]);
        assert_eq!(t.rows(), 3);
        assert!(grown.validate(CONTEXT).is_empty());

        assert_eq!(t.augment_rows(vec![]).unwrap(), t);
        assert_eq!(
            t.augment_rows(vec![("2030".into(), vec![Cell::absent(0, 0)])]),
            Err(TableError::ArityMismatch {
                label: "2030".into(),
                expected: 3,
                found: 1
            })
        );
        assert_eq!(
            t.augment_rows(vec![("2010".into(), row("2010"))]),
            Err(TableError::DuplicateRowLabel("2010".into()))
        );
    }

    #[test]
    fn json_round_trip() {
        let t = sample();
        assert_eq!(AnnotatedTable::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn json_errors_carry_pointers() {
        let mut v: Value = serde_json::from_str(&sample().to_json()).unwrap();
        v["cells"][0]["uncertainty"] = Value::from(150);
        let err = AnnotatedTable::from_json(&v.to_string()).unwrap_err();
        assert_eq!(err.pointer, "/cells/0/uncertainty");

        let mut v: Value = serde_json::from_str(&sample().to_json()).unwrap();
        v.as_object_mut().unwrap().remove("schema");
        assert_eq!(AnnotatedTable::from_json(&v.to_string()).unwrap_err().pointer, "/schema");

        let mut v: Value = serde_json::from_str(&sample().to_json()).unwrap();
        v["cells"][3]["quote"]["length"] = Value::from(1);
        assert_eq!(AnnotatedTable::from_json(&v.to_string()).unwrap_err().pointer, "/cells/3/quote/length");

        let mut v: Value = serde_json::from_str(&sample().to_json()).unwrap();
        v["cells"][0]["origin"] = Value::from("guessed");
        assert_eq!(AnnotatedTable::from_json(&v.to_string()).unwrap_err().pointer, "/cells/0/origin");
    }

    proptest! {
        #[test]
        fn uncertainty_constructor_respects_bounds(n in any::<u8>()) {
            prop_assert_eq!(Uncertainty::new(n).is_some(), n <= 100);
            prop_assert!(Uncertainty::saturating(n as i64 * 3 - 200).get() <= 100);
        }
    }
}
