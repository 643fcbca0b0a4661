//! Rule-based chart choice: profile the table, pick a chart type from a
//! fixed priority chain, and vet a model-suggested choice against the same
//! rules.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantity::{QuantityKind, Unit};
use crate::table::{AnnotatedTable, Origin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartType {
    Bar,
    Line,
    Pie,
    Scatter,
}

impl fmt::Display for ChartType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChartType::Bar => "bar",
            ChartType::Line => "line",
            ChartType::Pie => "pie",
            ChartType::Scatter => "scatter",
        })
    }
}

impl FromStr for ChartType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bar" | "bar chart" => Ok(ChartType::Bar),
            "line" | "line chart" => Ok(ChartType::Line),
            "pie" | "pie chart" => Ok(ChartType::Pie),
            "scatter" | "scatter plot" => Ok(ChartType::Scatter),
            other => Err(format!("unknown chart type {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowAxisKind {
    Temporal,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceProvenance {
    Rule,
    Llm,
    Reconciled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartChoice {
    pub chart_type: ChartType,
    /// The row axis (temporal or categorical).
    pub x_binding: String,
    /// Quantitative series, by column label.
    pub y_binding: Vec<String>,
    pub provenance: ChoiceProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableProfile {
    pub row_axis_kind: RowAxisKind,
    pub series_count: usize,
    pub numeric_row_count: usize,
    /// Single series of exact percentages summing to about 100.
    pub part_of_whole: bool,
    pub has_open_range: bool,
    pub has_missing: bool,
    pub x_label: String,
    /// Column labels holding at least one value, in schema order.
    pub series: Vec<String>,
}

/// Thresholds for the priority chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommenderConfig {
    pub min_temporal_rows: usize,
    pub max_pie_slices: usize,
    pub min_scatter_rows: usize,
    pub min_scatter_series: usize,
    /// Allowed distance of a part-of-whole sum from 100, in points.
    pub part_of_whole_tolerance: f64,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        RecommenderConfig {
            min_temporal_rows: 3,
            max_pie_slices: 8,
            min_scatter_rows: 5,
            min_scatter_series: 2,
            part_of_whole_tolerance: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("table has no numeric values to chart")]
pub struct NoDataError;

/// Year ("2010") or ISO date ("2010-03", "2010-03-15").
pub fn parse_temporal(label: &str) -> Option<f64> {
    let s = label.trim();
    let is_digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    if s.len() == 4 && is_digits(s) {
        return s.parse::<u32>().ok().filter(|y| (1000..3000).contains(y)).map(f64::from);
    }
    let date = NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d"))
        .ok()?;
    Some(f64::from(date.year()) + f64::from(date.ordinal0()) / 366.0)
}

/// Profiles a completed table.
pub fn characterize(table: &AnnotatedTable, config: &RecommenderConfig) -> Result<TableProfile, NoDataError> {
    let series: Vec<usize> = (0..table.cols())
        .filter(|&c| table.column(c).any(|cell| cell.quantity.is_some()))
        .collect();
    if series.is_empty() {
        return Err(NoDataError);
    }
    let numeric_row_count = (0..table.rows())
        .filter(|&r| (0..table.cols()).any(|c| table.cell(r, c).is_some_and(|cell| cell.quantity.is_some())))
        .count();
    let row_axis_kind = if !table.schema.row_labels.is_empty()
        && table.schema.row_labels.iter().all(|l| parse_temporal(l).is_some())
    {
        RowAxisKind::Temporal
    } else {
        RowAxisKind::Categorical
    };
    let has_open_range = table.cells.iter().any(|c| {
        c.quantity
            .as_ref()
            .is_some_and(|q| matches!(q.kind, QuantityKind::OpenLower | QuantityKind::OpenUpper))
    });
    let has_missing = table.cells.iter().any(|c| c.origin != Origin::Quoted);

    let part_of_whole = series.len() == 1 && {
        let col = series[0];
        let values: Option<Vec<f64>> = table
            .column(col)
            .map(|cell| {
                cell.quantity
                    .as_ref()
                    .filter(|q| q.kind == QuantityKind::Exact && q.unit == Unit::Percent)
                    .map(|q| q.value)
            })
            .collect();
        values.is_some_and(|v| {
            let sum: f64 = v.iter().sum();
            !v.is_empty() && (sum - 100.0).abs() <= config.part_of_whole_tolerance
        })
    };

    Ok(TableProfile {
        row_axis_kind,
        series_count: series.len(),
        numeric_row_count,
        part_of_whole,
        has_open_range,
        has_missing,
        x_label: table.schema.row_header.clone(),
        series: series.iter().map(|&c| table.schema.column_labels[c].clone()).collect(),
    })
}

/// Whether `chart_type` is an acceptable encoding for a table with this
/// profile.
pub fn chart_type_allowed(chart_type: ChartType, profile: &TableProfile, config: &RecommenderConfig) -> bool {
    match chart_type {
        ChartType::Bar => true,
        ChartType::Line => profile.row_axis_kind == RowAxisKind::Temporal,
        ChartType::Pie => {
            profile.part_of_whole && !profile.has_open_range && profile.numeric_row_count <= config.max_pie_slices
        }
        ChartType::Scatter => profile.series_count >= config.min_scatter_series,
    }
}

/// Type and bindings both check out against the profile.
pub fn is_valid_choice(choice: &ChartChoice, profile: &TableProfile, config: &RecommenderConfig) -> bool {
    let y_ok = !choice.y_binding.is_empty() && choice.y_binding.iter().all(|y| profile.series.contains(y));
    let pie_arity = choice.chart_type != ChartType::Pie || choice.y_binding.len() == 1;
    choice.x_binding == profile.x_label && y_ok && pie_arity && chart_type_allowed(choice.chart_type, profile, config)
}

/// Priority chain: Line > Pie > Scatter > Bar.
pub fn rule_recommend(profile: &TableProfile, config: &RecommenderConfig) -> ChartChoice {
    let chart_type = if profile.row_axis_kind == RowAxisKind::Temporal
        && profile.numeric_row_count >= config.min_temporal_rows
    {
        ChartType::Line
    } else if chart_type_allowed(ChartType::Pie, profile, config) {
        ChartType::Pie
    } else if profile.series_count >= config.min_scatter_series
        && profile.numeric_row_count >= config.min_scatter_rows
        && profile.row_axis_kind == RowAxisKind::Categorical
    {
        ChartType::Scatter
    } else {
        ChartType::Bar
    };
    ChartChoice {
        chart_type,
        x_binding: profile.x_label.clone(),
        y_binding: profile.series.clone(),
        provenance: ChoiceProvenance::Rule,
    }
}

/// Keeps the model's choice when it passes the rule engine's checks,
/// otherwise falls back to the rule choice.
///
/// A model choice whose y binding only needs tidying (duplicates, or the
/// row axis listed as a series) is kept with provenance `Reconciled`.
pub fn reconcile(
    llm_choice: Option<&ChartChoice>,
    rule_choice: &ChartChoice,
    profile: &TableProfile,
    config: &RecommenderConfig,
) -> ChartChoice {
    let Some(llm) = llm_choice else {
        return ChartChoice {
            provenance: ChoiceProvenance::Rule,
            ..rule_choice.clone()
        };
    };
    let mut tidy: Vec<String> = Vec::with_capacity(llm.y_binding.len());
    for y in &llm.y_binding {
        if *y != llm.x_binding && !tidy.contains(y) {
            tidy.push(y.clone());
        }
    }
    let changed = tidy != llm.y_binding;
    let candidate = ChartChoice {
        chart_type: llm.chart_type,
        x_binding: llm.x_binding.clone(),
        y_binding: tidy,
        provenance: if changed {
            ChoiceProvenance::Reconciled
        } else {
            ChoiceProvenance::Llm
        },
    };
    if is_valid_choice(&candidate, profile, config) {
        candidate
    } else {
        ChartChoice {
            provenance: ChoiceProvenance::Rule,
            ..rule_choice.clone()
        }
    }
}
