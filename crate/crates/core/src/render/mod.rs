//! Renderer-independent chart specs and the four special encodings:
//! uncertainty stripes, range glyphs, dashed outlines for inferred values,
//! and sentiment-colored annotations.

mod svg;
mod theme;

pub use svg::render_svg;
pub use theme::{Margin, SentimentColors, StripeMax, Theme, ThemeError};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantity::{QuantityKind, Unit};
use crate::recommend::{parse_temporal, ChartChoice, ChartType, RowAxisKind};
use crate::table::{AnnotatedTable, CellRef, Origin};
use crate::topic::{Sentiment, Topic};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("no renderable marks")]
    NoData,
    #[error("binding {0:?} does not name a table column")]
    InvalidBinding(String),
    #[error("invalid chart spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeKind {
    None,
    Closed,
    OpenLower,
    OpenUpper,
}

impl From<QuantityKind> for RangeKind {
    fn from(kind: QuantityKind) -> Self {
        match kind {
            QuantityKind::Exact => RangeKind::None,
            QuantityKind::ClosedRange => RangeKind::Closed,
            QuantityKind::OpenLower => RangeKind::OpenLower,
            QuantityKind::OpenUpper => RangeKind::OpenUpper,
        }
    }
}

/// One visual mark, tied to the table cell it draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub cell_ref: CellRef,
    /// Index into [`ChartSpec::series`].
    pub series: usize,
    /// Index into the x axis categories.
    pub category: usize,
    /// Point estimate; `None` marks a gap (no supported value).
    pub value: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub uncertainty: u8,
    /// Cell origin is Inferred or Computed.
    pub inferred: bool,
    pub range_kind: RangeKind,
}

impl Mark {
    pub fn is_gap(&self) -> bool {
        self.value.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scale {
    /// Evenly spaced categories.
    Band { categories: Vec<String> },
    /// Categories placed by their time value.
    Time { categories: Vec<String>, positions: Vec<f64> },
    Linear { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub label: String,
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axes {
    pub x: Axis,
    pub y: Axis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "cell", rename_all = "snake_case")]
pub enum Placement {
    NearPoint(CellRef),
    Title,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentAnnotation {
    pub sentiment: Sentiment,
    pub narrative: String,
    pub placement: Placement,
    pub background_color_class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub chart_type: ChartType,
    pub title: String,
    pub axes: Axes,
    /// Series labels in legend order.
    pub series: Vec<String>,
    pub unit: Option<Unit>,
    pub marks: Vec<Mark>,
    pub annotation: Option<SentimentAnnotation>,
}

impl ChartSpec {
    pub fn categories(&self) -> &[String] {
        match &self.axes.x.scale {
            Scale::Band { categories } | Scale::Time { categories, .. } => categories,
            Scale::Linear { .. } => &[],
        }
    }

    pub fn y_domain(&self) -> (f64, f64) {
        match self.axes.y.scale {
            Scale::Linear { min, max } => (min, max),
            _ => (0.0, 1.0),
        }
    }

    pub fn mark_for(&self, cell: CellRef) -> Option<&Mark> {
        self.marks.iter().find(|m| m.cell_ref == cell)
    }

    /// Structural checks run before rendering.
    pub fn check(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidSpec(m));
        let categories = self.categories().len();
        if !matches!(self.axes.y.scale, Scale::Linear { .. }) {
            return bad("y axis must be linear".into());
        }
        if let Scale::Time { categories, positions } = &self.axes.x.scale {
            if categories.len() != positions.len() {
                return bad("time scale needs one position per category".into());
            }
        }
        let (min, max) = self.y_domain();
        if !(min.is_finite() && max.is_finite() && min < max) {
            return bad(format!("degenerate y domain [{min}, {max}]"));
        }
        for m in &self.marks {
            if m.series >= self.series.len() || m.category >= categories {
                return bad(format!("mark {} outside the axes", m.cell_ref));
            }
            // Pies plot slice sizes only; range bounds are not on their scale.
            let plotted = if self.chart_type == ChartType::Pie {
                [m.value, None, None]
            } else {
                [m.value, m.lo, m.hi]
            };
            for v in plotted.into_iter().flatten() {
                if !v.is_finite() || v < min - 1e-9 || v > max + 1e-9 {
                    return bad(format!("mark {} value {v} outside the y domain", m.cell_ref));
                }
            }
            if m.uncertainty > 100 {
                return bad(format!("mark {} uncertainty above 100", m.cell_ref));
            }
        }
        if let Some(a) = &self.annotation {
            if let Placement::NearPoint(cell) = a.placement {
                if self.mark_for(cell).is_none_or(Mark::is_gap) {
                    return bad(format!("annotation anchored to missing mark {cell}"));
                }
            }
        }
        Ok(())
    }
}

/// Rounds a data extent out to tidy tick boundaries.
pub fn nice_domain(min: f64, max: f64) -> (f64, f64) {
    let (min, max) = if min == max { (min - 1.0, max + 1.0) } else { (min, max) };
    let step = nice_step((max - min) / 5.0);
    ((min / step).floor() * step, (max / step).ceil() * step)
}

pub(crate) fn nice_step(raw: f64) -> f64 {
    let exp = raw.abs().log10().floor();
    let base = 10f64.powf(exp);
    let frac = raw / base;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 2.5 {
        2.5
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * base
}

pub fn sentiment_class(sentiment: Sentiment) -> String {
    format!("sentiment-{}", sentiment.as_str())
}

/// Builds the spec for `table` under a reconciled chart choice. The
/// topic supplies the title and, when classified, the sentiment
/// annotation.
pub fn build_spec(table: &AnnotatedTable, choice: &ChartChoice, topic: &Topic) -> Result<ChartSpec, RenderError> {
    let mut series_cols = Vec::with_capacity(choice.y_binding.len());
    for label in &choice.y_binding {
        let col = table
            .schema
            .column_index(label)
            .ok_or_else(|| RenderError::InvalidBinding(label.clone()))?;
        series_cols.push(col);
    }
    if choice.chart_type == ChartType::Pie {
        series_cols.truncate(1);
    }
    if series_cols.is_empty() {
        return Err(RenderError::NoData);
    }

    // Temporal axes are ordered by time; augmented rows land in place.
    let temporal: Option<Vec<f64>> = table.schema.row_labels.iter().map(|l| parse_temporal(l)).collect();
    let mut row_order: Vec<usize> = (0..table.rows()).collect();
    if let Some(times) = &temporal {
        row_order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    }

    let mut marks = Vec::new();
    for (category, &row) in row_order.iter().enumerate() {
        for (series, &col) in series_cols.iter().enumerate() {
            let Some(cell) = table.cell(row, col) else { continue };
            let quantity = cell.quantity.as_ref().filter(|_| cell.origin != Origin::Absent);
            let mark = match quantity {
                Some(q) => Mark {
                    cell_ref: cell.position(),
                    series,
                    category,
                    value: Some(q.value),
                    lo: q.lo.filter(|_| q.kind != QuantityKind::Exact),
                    hi: q.hi.filter(|_| q.kind != QuantityKind::Exact),
                    uncertainty: cell.uncertainty.get(),
                    inferred: matches!(cell.origin, Origin::Inferred | Origin::Computed),
                    range_kind: q.kind.into(),
                },
                None => Mark {
                    cell_ref: cell.position(),
                    series,
                    category,
                    value: None,
                    lo: None,
                    hi: None,
                    uncertainty: 0,
                    inferred: false,
                    range_kind: RangeKind::None,
                },
            };
            // Pies have no baseline to show a gap on.
            if choice.chart_type == ChartType::Pie && (mark.is_gap() || mark.value.is_some_and(|v| v <= 0.0)) {
                continue;
            }
            marks.push(mark);
        }
    }
    if marks.iter().all(Mark::is_gap) {
        return Err(RenderError::NoData);
    }

    let categories: Vec<String> = row_order.iter().map(|&r| table.schema.row_labels[r].clone()).collect();
    let x_scale = match (&temporal, choice.chart_type) {
        (Some(times), ChartType::Line) if row_axis_is_temporal(table) => Scale::Time {
            categories: categories.clone(),
            positions: row_order.iter().map(|&r| times[r]).collect(),
        },
        _ => Scale::Band { categories },
    };

    let extent = marks
        .iter()
        .flat_map(|m| [m.value, m.lo, m.hi])
        .flatten()
        .fold((0.0f64, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (y_min, y_max) = if choice.chart_type == ChartType::Pie {
        (0.0, marks.iter().filter_map(|m| m.value).sum::<f64>())
    } else {
        nice_domain(extent.0, extent.1)
    };

    let units: Vec<&Unit> = series_cols
        .iter()
        .flat_map(|&c| table.column(c))
        .filter_map(|c| c.quantity.as_ref().map(|q| &q.unit))
        .collect();
    let unit = units.first().filter(|u| units.iter().all(|x| x == *u)).map(|u| (*u).clone());

    let annotation = topic.sentiment.map(|sentiment| {
        let linked: BTreeSet<CellRef> = topic
            .linked_cells
            .iter()
            .copied()
            .filter(|c| marks.iter().any(|m| m.cell_ref == *c && !m.is_gap()))
            .collect();
        let linked: Vec<CellRef> = linked.into_iter().collect();
        let placement = match linked.as_slice() {
            [single] => Placement::NearPoint(*single),
            _ => Placement::Title,
        };
        SentimentAnnotation {
            sentiment,
            narrative: topic.narrative.clone().unwrap_or_default(),
            placement,
            background_color_class: sentiment_class(sentiment),
        }
    });

    Ok(ChartSpec {
        chart_type: choice.chart_type,
        title: topic.title.clone(),
        axes: Axes {
            x: Axis {
                label: choice.x_binding.clone(),
                scale: x_scale,
            },
            y: Axis {
                label: if choice.y_binding.len() == 1 {
                    choice.y_binding[0].clone()
                } else {
                    String::new()
                },
                scale: Scale::Linear { min: y_min, max: y_max },
            },
        },
        series: series_cols.iter().map(|&c| table.schema.column_labels[c].clone()).collect(),
        unit,
        marks,
        annotation,
    })
}

fn row_axis_is_temporal(table: &AnnotatedTable) -> bool {
    crate::recommend::characterize(table, &Default::default())
        .map(|p| p.row_axis_kind == RowAxisKind::Temporal)
        .unwrap_or(false)
}

/// Gradient stripe attached to a mark, laid along the value axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stripe {
    pub length: f64,
}

/// Stripe for a mark: `length = uncertainty / 100 × max_length`. Marks
/// with uncertainty 0 (and gaps) get none.
pub fn encode_uncertainty(mark: &Mark, max_length: f64) -> Option<Stripe> {
    (mark.uncertainty > 0 && !mark.is_gap()).then(|| Stripe {
        length: f64::from(mark.uncertainty) / 100.0 * max_length,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrowDirection {
    /// Toward larger values.
    Up,
    /// Toward smaller values.
    Down,
}

/// Range glyph in data coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RangeGlyph {
    /// Mark at the mean, caps at both ends, two arrows pointing inward.
    Closed { lo: f64, hi: f64, center: f64 },
    /// One arrow starting at the bound and pointing past it.
    Open { bound: f64, direction: ArrowDirection },
}

pub fn encode_range(mark: &Mark) -> Option<RangeGlyph> {
    match (mark.range_kind, mark.lo, mark.hi) {
        (RangeKind::Closed, Some(lo), Some(hi)) => Some(RangeGlyph::Closed {
            lo,
            hi,
            center: (lo + hi) / 2.0,
        }),
        (RangeKind::OpenLower, Some(bound), _) => Some(RangeGlyph::Open {
            bound,
            direction: ArrowDirection::Up,
        }),
        (RangeKind::OpenUpper, _, Some(bound)) => Some(RangeGlyph::Open {
            bound,
            direction: ArrowDirection::Down,
        }),
        _ => None,
    }
}

/// Dashed outline around marks whose value was inferred or computed.
pub fn encode_missing(mark: &Mark) -> bool {
    mark.inferred && !mark.is_gap()
}

/// Resolved styling for a sentiment annotation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentimentStyle {
    pub class: String,
    pub background: String,
    pub text: String,
    pub placement: Placement,
}

pub fn encode_sentiment(annotation: &SentimentAnnotation, theme: &Theme) -> SentimentStyle {
    SentimentStyle {
        class: annotation.background_color_class.clone(),
        background: theme.sentiment_color(annotation.sentiment).to_string(),
        text: annotation.narrative.clone(),
        placement: annotation.placement,
    }
}
