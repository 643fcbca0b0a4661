use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use super::{
    encode_missing, encode_range, encode_sentiment, encode_uncertainty, nice_step, ArrowDirection, ChartSpec, Mark,
    Placement, RangeGlyph, RenderError, Scale, Theme,
};
use crate::quantity::Unit;
use crate::recommend::ChartType;
use crate::table::CellRef;

const STRIPE_GRADIENT: &str = "chartext-stripe";

/// Renders `spec` as a standalone SVG 1.1 document. Every special encoding
/// is a `<g>` carrying `data-encoding` and `data-cell`; output is a pure
/// function of the inputs.
pub fn render_svg(spec: &ChartSpec, theme: &Theme) -> Result<String, RenderError> {
    spec.check()?;
    let mut canvas = Canvas::new(spec, theme);
    canvas.header();
    canvas.title();
    match spec.chart_type {
        ChartType::Pie => canvas.pie(),
        ChartType::Bar => {
            canvas.axes();
            canvas.bars();
        }
        ChartType::Line => {
            canvas.axes();
            canvas.lines();
            canvas.points(false);
        }
        ChartType::Scatter => {
            canvas.axes();
            canvas.points(true);
        }
    }
    canvas.legend();
    canvas.annotation();
    canvas.out.push_str("</svg>\n");
    Ok(canvas.out)
}

fn n(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' => {}
            c => out.push(c),
        }
    }
    out
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize + usize::from(step * 10f64.powi(-step.log10().floor() as i32) % 1.0 != 0.0)
    };
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

/// Value label with at most two decimals and the unit.
fn format_value(v: f64, unit: Option<&Unit>) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    let s = if s == "-0" { "0" } else { s };
    format!("{s}{}", unit_suffix(unit))
}

fn unit_suffix(unit: Option<&Unit>) -> String {
    match unit {
        Some(Unit::Percent) => "%".into(),
        Some(Unit::Currency(code)) => format!(" {code}"),
        _ => String::new(),
    }
}

/// Greedy word wrap by estimated glyph width.
fn wrap(text: &str, max_chars: usize) -> Vec<String> {
    let mut lines = Vec::new();
    let mut line = String::new();
    for word in text.split_whitespace() {
        if !line.is_empty() && line.chars().count() + 1 + word.chars().count() > max_chars {
            lines.push(std::mem::take(&mut line));
        }
        if !line.is_empty() {
            line.push(' ');
        }
        line.push_str(word);
    }
    if !line.is_empty() {
        lines.push(line);
    }
    lines
}

/// Axis-aligned box, `(left, top, right, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect(f64, f64, f64, f64);

impl Rect {
    fn overlap(&self, other: &Rect) -> f64 {
        let w = self.2.min(other.2) - self.0.max(other.0);
        let h = self.3.min(other.3) - self.1.max(other.1);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

fn has_legend(spec: &ChartSpec) -> bool {
    spec.chart_type != ChartType::Pie && spec.series.len() >= 2
}

struct Canvas<'a> {
    spec: &'a ChartSpec,
    theme: &'a Theme,
    out: String,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    char_w: f64,
    line_h: f64,
    /// Wrapped category labels.
    tick_labels: Vec<Vec<String>>,
    /// Anchor point of every drawn mark, for near-point annotations.
    anchors: BTreeMap<CellRef, (f64, f64)>,
    /// Space taken by marks, glyphs and the legend.
    obstacles: Vec<Rect>,
}

impl<'a> Canvas<'a> {
    fn new(spec: &'a ChartSpec, theme: &'a Theme) -> Self {
        let m = &theme.margin;
        let char_w = theme.font_size * 0.55;
        let line_h = theme.font_size * 1.3;
        let right = if has_legend(spec) {
            let widest = spec.series.iter().map(|s| s.chars().count()).max().unwrap_or(0) as f64;
            m.right.max(widest * char_w + 40.0)
        } else {
            m.right
        };
        let x1 = (theme.width - right).max(m.left + 1.0);
        let band = (x1 - m.left) / spec.categories().len().max(1) as f64;
        let max_chars = ((band / char_w) as usize).max(4);
        let tick_labels: Vec<Vec<String>> = if spec.chart_type == ChartType::Pie {
            Vec::new()
        } else {
            spec.categories().iter().map(|c| wrap(c, max_chars)).collect()
        };
        let extra = tick_labels.iter().map(Vec::len).max().unwrap_or(1).saturating_sub(1) as f64 * line_h;
        Canvas {
            spec,
            theme,
            out: String::new(),
            x0: m.left,
            x1,
            y0: m.top,
            y1: (theme.height - m.bottom - extra).max(m.top + 1.0),
            char_w,
            line_h,
            tick_labels,
            anchors: BTreeMap::new(),
            obstacles: Vec::new(),
        }
    }

    fn header(&mut self) {
        let t = self.theme;
        let _ = writeln!(
            self.out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="{font}" font-size="{fs}" data-chart-type="{ct}">"#,
            w = n(t.width),
            h = n(t.height),
            font = esc(&t.font_family),
            fs = n(t.font_size),
            ct = self.spec.chart_type,
        );
        let _ = writeln!(
            self.out,
            r##"<defs><linearGradient id="{STRIPE_GRADIENT}" x1="0" y1="0" x2="0" y2="1"><stop offset="0" stop-color="#333333" stop-opacity="0.05"/><stop offset="0.5" stop-color="#333333" stop-opacity="0.85"/><stop offset="1" stop-color="#333333" stop-opacity="0.05"/></linearGradient></defs>"##
        );
        let _ = writeln!(self.out, r##"<rect x="0" y="0" width="{}" height="{}" fill="#FFFFFF"/>"##, n(t.width), n(t.height));
    }

    fn title(&mut self) {
        let _ = writeln!(
            self.out,
            r#"<text class="title" x="{}" y="{}" font-size="{}" font-weight="bold" fill="{}">{}</text>"#,
            n(self.x0),
            n(self.theme.title_font_size + 8.0),
            n(self.theme.title_font_size),
            esc(&self.theme.text_color),
            esc(&self.spec.title)
        );
    }

    fn py(&self, v: f64) -> f64 {
        let (min, max) = self.spec.y_domain();
        self.y1 - (v - min) / (max - min) * (self.y1 - self.y0)
    }

    fn band(&self) -> f64 {
        (self.x1 - self.x0) / self.spec.categories().len().max(1) as f64
    }

    fn px(&self, category: usize) -> f64 {
        let bw = self.band();
        match &self.spec.axes.x.scale {
            Scale::Time { positions, .. } if positions.len() > 1 => {
                let lo = positions.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    let pad = bw / 2.0;
                    self.x0 + pad + (positions[category] - lo) / (hi - lo) * (self.x1 - self.x0 - 2.0 * pad)
                } else {
                    self.x0 + (category as f64 + 0.5) * bw
                }
            }
            _ => self.x0 + (category as f64 + 0.5) * bw,
        }
    }

    fn axes(&mut self) {
        let axis = esc(&self.theme.axis_color);
        let text = esc(&self.theme.text_color);
        let (min, max) = self.spec.y_domain();
        let step = nice_step((max - min) / 5.0);
        let suffix = unit_suffix(self.spec.unit.as_ref());
        self.out.push_str("<g class=\"axes\">\n");
        let _ = writeln!(
            self.out,
            r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="{axis}"/>"#,
            n(self.y0),
            n(self.y1),
            x = n(self.x0)
        );
        let first = (min / step).ceil() as i64;
        let last = (max / step + 1e-9).floor() as i64;
        for k in first..=last {
            let v = k as f64 * step;
            let y = self.py(v);
            let _ = writeln!(
                self.out,
                r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{axis}"/><text x="{}" y="{}" text-anchor="end" fill="{text}">{}{}</text>"#,
                n(self.x0 - 4.0),
                n(self.x0),
                n(self.x0 - 7.0),
                n(y + 4.0),
                esc(&format_tick(v, step)),
                esc(&suffix),
                y = n(y)
            );
        }
        let base = self.py(0f64.clamp(min, max));
        let _ = writeln!(
            self.out,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{axis}"/>"#,
            n(self.x0),
            n(self.x1),
            y = n(base)
        );
        let tick_labels = std::mem::take(&mut self.tick_labels);
        for (i, lines) in tick_labels.iter().enumerate() {
            let x = self.px(i);
            let _ = write!(
                self.out,
                r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="{axis}"/>"#,
                n(self.y1),
                n(self.y1 + 4.0),
                x = n(x)
            );
            for (k, line) in lines.iter().enumerate() {
                let _ = write!(
                    self.out,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{text}">{}</text>"#,
                    n(x),
                    n(self.y1 + 18.0 + k as f64 * self.line_h),
                    esc(line)
                );
            }
            self.out.push('\n');
        }
        let rows = tick_labels.iter().map(Vec::len).max().unwrap_or(1).max(1) as f64;
        self.tick_labels = tick_labels;
        let _ = writeln!(
            self.out,
            r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle" fill="{text}">{}</text>"#,
            n((self.x0 + self.x1) / 2.0),
            n(self.y1 + 18.0 + (rows - 1.0) * self.line_h + 18.0),
            esc(&self.spec.axes.x.label)
        );
        if !self.spec.axes.y.label.is_empty() {
            let _ = writeln!(
                self.out,
                r#"<text class="axis-label" x="{}" y="{}" text-anchor="start" fill="{text}">{}</text>"#,
                n(self.x0),
                n(self.y0 - 8.0),
                esc(&self.spec.axes.y.label)
            );
        }
        self.out.push_str("</g>\n");
    }

    fn open_mark(&mut self, mark: &Mark) {
        let class = if mark.is_gap() { "mark gap" } else { "mark" };
        let _ = writeln!(
            self.out,
            r#"<g class="{class}" data-cell="{}" data-series="{}">"#,
            mark.cell_ref, mark.series
        );
    }

    /// Stripe centered on `(x, y)` and laid along the value axis.
    fn stripe(&mut self, mark: &Mark, x: f64, y: f64) {
        let Some(stripe) = encode_uncertainty(mark, self.theme.stripe_max_for(self.spec.chart_type)) else {
            return;
        };
        let _ = writeln!(
            self.out,
            r#"<g data-encoding="uncertainty" data-cell="{}" data-uncertainty="{}" data-length="{}"><rect x="{}" y="{}" width="{}" height="{}" fill="url(#{STRIPE_GRADIENT})"/></g>"#,
            mark.cell_ref,
            mark.uncertainty,
            stripe.length,
            n(x - self.theme.stripe_width / 2.0),
            n(y - stripe.length / 2.0),
            n(self.theme.stripe_width),
            n(stripe.length)
        );
        let half = self.theme.stripe_width / 2.0;
        self.obstacles
            .push(Rect(x - half, y - stripe.length / 2.0, x + half, y + stripe.length / 2.0));
    }

    fn arrow_head(&mut self, x: f64, y: f64, up: bool, color: &str) {
        let h = self.theme.arrow_head;
        let back = if up { y + h * 1.6 } else { y - h * 1.6 };
        let _ = writeln!(
            self.out,
            r#"<polygon points="{},{} {},{} {},{}" fill="{color}"/>"#,
            n(x),
            n(y),
            n(x - h),
            n(back),
            n(x + h),
            n(back)
        );
    }

    fn range(&mut self, mark: &Mark, x: f64) {
        let Some(glyph) = encode_range(mark) else { return };
        let color = esc(&self.theme.text_color);
        let cap = self.theme.cap_width / 2.0;
        match glyph {
            RangeGlyph::Closed { lo, hi, center } => {
                let (ylo, yhi, yc) = (self.py(lo), self.py(hi), self.py(center));
                self.obstacles.push(Rect(x - cap, yhi, x + cap, ylo));
                let _ = writeln!(
                    self.out,
                    r#"<g data-encoding="range" data-cell="{}" data-range="closed" data-lo="{lo}" data-hi="{hi}" data-center="{center}">"#,
                    mark.cell_ref
                );
                for y in [ylo, yhi] {
                    let _ = writeln!(
                        self.out,
                        r#"<line class="cap" x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="1.5"/>"#,
                        n(x - cap),
                        n(x + cap),
                        y = n(y)
                    );
                }
                let h = self.theme.arrow_head * 1.6;
                // Each arrow runs from its cap toward the midpoint.
                for (from, up) in [(ylo, true), (yhi, false)] {
                    let tip = if up { (yc + 1.0).min(from) } else { (yc - 1.0).max(from) };
                    let _ = writeln!(
                        self.out,
                        r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="{color}"/>"#,
                        n(from),
                        n(tip),
                        x = n(x)
                    );
                    if (from - tip).abs() > h {
                        self.arrow_head(x, tip, up, &color);
                    }
                }
                self.out.push_str("</g>\n");
            }
            RangeGlyph::Open { bound, direction } => {
                let yb = self.py(bound);
                let up = direction == ArrowDirection::Up;
                let tip = if up { yb - self.theme.arrow_length } else { yb + self.theme.arrow_length };
                let kind = if up { "open_lower" } else { "open_upper" };
                self.obstacles.push(Rect(x - cap, yb.min(tip), x + cap, yb.max(tip)));
                let _ = writeln!(
                    self.out,
                    r#"<g data-encoding="range" data-cell="{}" data-range="{kind}" data-bound="{bound}"><line class="cap" x1="{}" y1="{yb}" x2="{}" y2="{yb}" stroke="{color}" stroke-width="1.5"/><line x1="{x}" y1="{yb}" x2="{x}" y2="{}" stroke="{color}"/>"#,
                    mark.cell_ref,
                    n(x - cap),
                    n(x + cap),
                    n(tip),
                    x = n(x),
                    yb = n(yb)
                );
                self.arrow_head(x, tip, up, &color);
                self.out.push_str("</g>\n");
            }
        }
    }

    fn missing_open(&mut self, mark: &Mark) -> bool {
        if !encode_missing(mark) {
            return false;
        }
        let _ = write!(self.out, r#"<g data-encoding="missing" data-cell="{}">"#, mark.cell_ref);
        true
    }

    fn bars(&mut self) {
        let (min, max) = self.spec.y_domain();
        let base = self.py(0f64.clamp(min, max));
        let series = self.spec.series.len().max(1);
        let group = self.band() * 0.8;
        let sub = group / series as f64;
        let dash = esc(&self.theme.dash_pattern);
        for mark in &self.spec.marks {
            self.open_mark(mark);
            let cx = self.px(mark.category) - group / 2.0 + (mark.series as f64 + 0.5) * sub;
            if let Some(v) = mark.value {
                let y = self.py(v);
                let (top, h) = (y.min(base), (y - base).abs());
                let w = sub * 0.7;
                let color = esc(self.theme.series_color(mark.series));
                let _ = writeln!(
                    self.out,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
                    n(cx - w / 2.0),
                    n(top),
                    n(w),
                    n(h)
                );
                if self.missing_open(mark) {
                    let _ = writeln!(
                        self.out,
                        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{}" stroke-width="1.5" stroke-dasharray="{dash}"/></g>"#,
                        n(cx - w / 2.0 - 3.0),
                        n(top - 3.0),
                        n(w + 6.0),
                        n(h + 6.0),
                        esc(&self.theme.text_color)
                    );
                }
                self.range(mark, cx);
                self.stripe(mark, cx + w / 2.0 + self.theme.stripe_width, y);
                self.obstacles.push(Rect(cx - w / 2.0 - 3.0, top - 3.0, cx + w / 2.0 + 3.0, top + h + 3.0));
                self.anchors.insert(mark.cell_ref, (cx, y));
            }
            self.out.push_str("</g>\n");
        }
    }

    fn lines(&mut self) {
        for s in 0..self.spec.series.len() {
            let mut marks: Vec<&Mark> = self.spec.marks.iter().filter(|m| m.series == s).collect();
            marks.sort_by_key(|m| m.category);
            let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
            for m in marks {
                match m.value {
                    Some(v) => segments.last_mut().unwrap().push((self.px(m.category), self.py(v))),
                    None if !segments.last().unwrap().is_empty() => segments.push(Vec::new()),
                    None => {}
                }
            }
            let color = esc(self.theme.series_color(s));
            let _ = writeln!(self.out, r#"<g class="series" data-series="{s}">"#);
            for seg in segments.iter().filter(|seg| seg.len() > 1) {
                let d: Vec<String> = seg
                    .iter()
                    .enumerate()
                    .map(|(i, (x, y))| format!("{}{},{}", if i == 0 { "M" } else { "L" }, n(*x), n(*y)))
                    .collect();
                let _ = writeln!(
                    self.out,
                    r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    d.join(" ")
                );
            }
            self.out.push_str("</g>\n");
        }
    }

    fn points(&mut self, spread: bool) {
        let series = self.spec.series.len().max(1);
        let sub = self.band() * 0.6 / series as f64;
        let r = self.theme.point_radius;
        let dash = esc(&self.theme.dash_pattern);
        for mark in &self.spec.marks {
            self.open_mark(mark);
            let offset = if spread {
                (mark.series as f64 - (series as f64 - 1.0) / 2.0) * sub
            } else {
                0.0
            };
            let cx = self.px(mark.category) + offset;
            if let Some(v) = mark.value {
                let y = self.py(v);
                let color = esc(self.theme.series_color(mark.series));
                let _ = writeln!(
                    self.out,
                    r#"<circle cx="{}" cy="{}" r="{}" fill="{color}"/>"#,
                    n(cx),
                    n(y),
                    n(r)
                );
                if self.missing_open(mark) {
                    let _ = writeln!(
                        self.out,
                        r#"<circle cx="{}" cy="{}" r="{}" fill="none" stroke="{}" stroke-width="1.5" stroke-dasharray="{dash}"/></g>"#,
                        n(cx),
                        n(y),
                        n(r + 3.5),
                        esc(&self.theme.text_color)
                    );
                }
                self.range(mark, cx);
                self.stripe(mark, cx + r + self.theme.stripe_width, y);
                let rr = r + 4.0;
                self.obstacles.push(Rect(cx - rr, y - rr, cx + rr, y + rr));
                self.anchors.insert(mark.cell_ref, (cx, y));
            } else {
                // Gap: keep a hollow tick on the axis so the category stays visible.
                let _ = writeln!(
                    self.out,
                    r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="{}"/>"#,
                    n(self.y1 - 6.0),
                    n(self.y1),
                    esc(&self.theme.axis_color),
                    x = n(cx)
                );
            }
            self.out.push_str("</g>\n");
        }
    }

    fn pie(&mut self) {
        let total: f64 = self.spec.marks.iter().filter_map(|m| m.value).sum();
        let cx = (self.x0 + self.x1) / 2.0;
        let cy = (self.y0 + self.y1) / 2.0;
        let radius = ((self.x1 - self.x0).min(self.y1 - self.y0) / 2.0 - 16.0).max(10.0);
        let stripe_r = radius + 6.0 + self.theme.stripe_width / 2.0;
        let dash = esc(&self.theme.dash_pattern);
        let categories = self.spec.categories().to_vec();
        let point = |r: f64, a: f64| (cx + r * a.sin(), cy - r * a.cos());
        self.obstacles.push(Rect(cx - stripe_r, cy - stripe_r, cx + stripe_r, cy + stripe_r));
        let mut start = 0.0;
        for mark in &self.spec.marks {
            let Some(v) = mark.value else { continue };
            let sweep = v / total * 2.0 * PI;
            let end = start + sweep;
            self.open_mark(mark);
            let d = if sweep >= 2.0 * PI - 1e-9 {
                format!(
                    "M{},{} A{r},{r} 0 1 1 {},{} A{r},{r} 0 1 1 {},{} Z",
                    n(cx),
                    n(cy - radius),
                    n(cx),
                    n(cy + radius),
                    n(cx),
                    n(cy - radius),
                    r = n(radius)
                )
            } else {
                let (sx, sy) = point(radius, start);
                let (ex, ey) = point(radius, end);
                format!(
                    "M{},{} L{},{} A{r},{r} 0 {} 1 {},{} Z",
                    n(cx),
                    n(cy),
                    n(sx),
                    n(sy),
                    u8::from(sweep > PI),
                    n(ex),
                    n(ey),
                    r = n(radius)
                )
            };
            let color = esc(self.theme.series_color(mark.category));
            let _ = writeln!(self.out, r##"<path d="{d}" fill="{color}" stroke="#FFFFFF"/>"##);
            if self.missing_open(mark) {
                let _ = writeln!(
                    self.out,
                    r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.5" stroke-dasharray="{dash}"/></g>"#,
                    esc(&self.theme.text_color)
                );
            }
            let mid = start + sweep / 2.0;
            if let Some(stripe) = encode_uncertainty(mark, self.theme.stripe_max_for(ChartType::Pie)) {
                // Arc of the stripe's length, centered on the slice's outer edge.
                let half = stripe.length / stripe_r / 2.0;
                let (ax, ay) = point(stripe_r, mid - half);
                let (bx, by) = point(stripe_r, mid + half);
                let _ = writeln!(
                    self.out,
                    r#"<g data-encoding="uncertainty" data-cell="{}" data-uncertainty="{}" data-length="{}"><path d="M{},{} A{r},{r} 0 {} 1 {},{}" fill="none" stroke="url(#{STRIPE_GRADIENT})" stroke-width="{}"/></g>"#,
                    mark.cell_ref,
                    mark.uncertainty,
                    stripe.length,
                    n(ax),
                    n(ay),
                    u8::from(2.0 * half > PI),
                    n(bx),
                    n(by),
                    n(self.theme.stripe_width),
                    r = n(stripe_r)
                );
            }
            let (lx, ly) = point(radius + 24.0, mid);
            let anchor = if mid.sin() >= 0.0 { "start" } else { "end" };
            let label = format!(
                "{} ({})",
                categories.get(mark.category).map(String::as_str).unwrap_or(""),
                format_value(v, self.spec.unit.as_ref())
            );
            let _ = writeln!(
                self.out,
                r#"<text x="{}" y="{}" text-anchor="{anchor}" fill="{}">{}</text>"#,
                n(lx),
                n(ly + 4.0),
                esc(&self.theme.text_color),
                esc(&label)
            );
            let w = label.chars().count() as f64 * self.char_w;
            let left = if anchor == "start" { lx } else { lx - w };
            self.obstacles.push(Rect(left, ly - 8.0, left + w, ly + 6.0));
            self.anchors.insert(mark.cell_ref, point(radius * 0.6, mid));
            self.out.push_str("</g>\n");
            start = end;
        }
    }

    fn legend(&mut self) {
        if !has_legend(self.spec) {
            return;
        }
        let x = self.x1 + 16.0;
        self.out.push_str("<g class=\"legend\">\n");
        for (i, label) in self.spec.series.iter().enumerate() {
            let y = self.y0 + i as f64 * 18.0;
            let _ = writeln!(
                self.out,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}" fill="{}">{}</text>"#,
                n(x),
                n(y),
                esc(self.theme.series_color(i)),
                n(x + 16.0),
                n(y + 9.0),
                esc(&self.theme.text_color),
                esc(label)
            );
            let w = 16.0 + label.chars().count() as f64 * self.char_w;
            self.obstacles.push(Rect(x, y, x + w, y + 12.0));
        }
        self.out.push_str("</g>\n");
    }

    /// Near-point box position: a spot right next to the anchor if one is
    /// clear of everything drawn, else the clear spot closest to it, else
    /// the adjacent spot with the least overlap.
    fn place_near(&self, (px, py): (f64, f64), w: f64, h: f64) -> (f64, f64) {
        let (top, bottom) = (self.theme.title_font_size + 16.0, self.y1);
        // Keep clear of the y axis labels on charts that have them.
        let left = if self.spec.chart_type == ChartType::Pie { 2.0 } else { self.x0 + 2.0 };
        let right = self.theme.width - 2.0;
        let fits = |x: f64, y: f64| x >= left && x + w <= right && y >= top && y + h <= bottom;
        let cost = |x: f64, y: f64| -> f64 {
            let area = Rect(x, y, x + w, y + h);
            self.obstacles.iter().map(|o| o.overlap(&area)).sum()
        };
        let d = 12.0;
        let adjacent = [
            (px + d, py - d - h),
            (px - d - w, py - d - h),
            (px + d, py + d),
            (px - d - w, py + d),
        ];
        let mut fallback: Option<(f64, (f64, f64))> = None;
        for (x, y) in adjacent.into_iter().filter(|&(x, y)| fits(x, y)) {
            let c = cost(x, y);
            if c == 0.0 {
                return (x, y);
            }
            if fallback.is_none_or(|(best, _)| c < best) {
                fallback = Some((c, (x, y)));
            }
        }
        let mut nearest: Option<(f64, (f64, f64))> = None;
        let step = 8.0;
        let mut y = top;
        while y + h <= bottom {
            let mut x = left;
            while x + w <= right {
                if cost(x, y) == 0.0 {
                    let dx = (x - px).max(px - x - w).max(0.0);
                    let dy = (y - py).max(py - y - h).max(0.0);
                    let dist = dx.hypot(dy);
                    if nearest.is_none_or(|(best, _)| dist < best) {
                        nearest = Some((dist, (x, y)));
                    }
                }
                x += step;
            }
            y += step;
        }
        nearest
            .or(fallback)
            .map_or(((px + d).min(right - w).max(left), (py - d - h).max(top)), |(_, p)| p)
    }

    fn annotation(&mut self) {
        let Some(annotation) = &self.spec.annotation else { return };
        let style = encode_sentiment(annotation, self.theme);
        let (char_w, line_h) = (self.char_w, self.line_h);
        let (x, y, lines, placement, cell) = match style.placement {
            Placement::NearPoint(cell) => {
                let anchor = self.anchors.get(&cell).copied().unwrap_or((self.x0, self.y0));
                let lines = wrap(&style.text, 28);
                let widest = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0) as f64;
                let (bx, by) = self.place_near(anchor, widest * char_w + 8.0, lines.len() as f64 * line_h + 6.0);
                (bx + 4.0, by, lines, "near_point", Some(cell))
            }
            Placement::Title => {
                let max_chars = (((self.theme.width - 2.0 * self.x0) / char_w) as usize).max(10);
                (self.x0, self.theme.title_font_size + 16.0, wrap(&style.text, max_chars), "title", None)
            }
        };
        let widest = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0) as f64;
        let _ = write!(
            self.out,
            r#"<g data-encoding="sentiment" data-placement="{placement}" data-sentiment="{}" class="{}""#,
            annotation.sentiment.as_str(),
            esc(&style.class)
        );
        if let Some(cell) = cell {
            let _ = write!(self.out, r#" data-cell="{cell}""#);
        }
        let _ = writeln!(
            self.out,
            r#"><rect x="{}" y="{}" width="{}" height="{}" rx="3" fill="{}"/>"#,
            n(x - 4.0),
            n(y),
            n(widest * char_w + 8.0),
            n(lines.len() as f64 * line_h + 6.0),
            esc(&style.background)
        );
        for (i, line) in lines.iter().enumerate() {
            let _ = writeln!(
                self.out,
                r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
                n(x),
                n(y + (i as f64 + 1.0) * line_h),
                esc(&self.theme.text_color),
                esc(line)
            );
        }
        self.out.push_str("</g>\n");
    }
}
