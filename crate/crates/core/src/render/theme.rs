use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::recommend::ChartType;
use crate::topic::Sentiment;

/// Visual constants for rendering. Loaded from a JSON theme file; every
/// field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Theme {
    pub width: f64,
    pub height: f64,
    pub margin: Margin,
    pub font_family: String,
    pub font_size: f64,
    pub title_font_size: f64,
    pub text_color: String,
    pub axis_color: String,
    /// Series colors, cycled.
    pub palette: Vec<String>,
    pub sentiment_colors: SentimentColors,
    /// Full stripe length (uncertainty 100) per chart type, in pixels.
    pub stripe_max: StripeMax,
    pub stripe_width: f64,
    pub cap_width: f64,
    pub arrow_length: f64,
    pub arrow_head: f64,
    pub dash_pattern: String,
    pub point_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Margin {
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
    pub left: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentimentColors {
    pub positive: String,
    pub negative: String,
    pub neutral: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StripeMax {
    pub bar: f64,
    pub line: f64,
    pub pie: f64,
    pub scatter: f64,
}

impl Default for Margin {
    fn default() -> Self {
        Margin {
            top: 72.0,
            right: 140.0,
            bottom: 48.0,
            left: 56.0,
        }
    }
}

impl Default for SentimentColors {
    fn default() -> Self {
        SentimentColors {
            positive: "#E3F2E1".into(),
            negative: "#F9E0E0".into(),
            neutral: "#ECECEC".into(),
        }
    }
}

impl Default for StripeMax {
    fn default() -> Self {
        StripeMax {
            bar: 48.0,
            line: 36.0,
            pie: 120.0,
            scatter: 36.0,
        }
    }
}

impl Default for Theme {
    fn default() -> Self {
        Theme {
            width: 720.0,
            height: 440.0,
            margin: Margin::default(),
            font_family: "Helvetica, Arial, sans-serif".into(),
            font_size: 12.0,
            title_font_size: 15.0,
            text_color: "#222222".into(),
            axis_color: "#555555".into(),
            palette: ["#4E79A7", "#F28E2B", "#59A14F", "#B07AA1", "#76B7B2", "#EDC948", "#9C755F", "#BAB0AC"]
                .into_iter()
                .map(String::from)
                .collect(),
            sentiment_colors: SentimentColors::default(),
            stripe_max: StripeMax::default(),
            stripe_width: 6.0,
            cap_width: 12.0,
            arrow_length: 22.0,
            arrow_head: 5.0,
            dash_pattern: "4 3".into(),
            point_radius: 4.5,
        }
    }
}

impl Theme {
    pub fn load(path: &Path) -> Result<Theme, ThemeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ThemeError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ThemeError(format!("{}: {e}", path.display())))
    }

    pub fn stripe_max_for(&self, chart_type: ChartType) -> f64 {
        match chart_type {
            ChartType::Bar => self.stripe_max.bar,
            ChartType::Line => self.stripe_max.line,
            ChartType::Pie => self.stripe_max.pie,
            ChartType::Scatter => self.stripe_max.scatter,
        }
    }

    pub fn series_color(&self, series: usize) -> &str {
        if self.palette.is_empty() {
            "#4E79A7"
        } else {
            &self.palette[series % self.palette.len()]
        }
    }

    pub fn sentiment_color(&self, sentiment: Sentiment) -> &str {
        match sentiment {
            Sentiment::Positive => &self.sentiment_colors.positive,
            Sentiment::Negative => &self.sentiment_colors.negative,
            Sentiment::Neutral => &self.sentiment_colors.neutral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot load theme: {0}")]
pub struct ThemeError(pub String);
