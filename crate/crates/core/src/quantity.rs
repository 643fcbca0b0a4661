//! Deterministic parsing of English numeric phrases into typed quantities.
//!
//! The parser understands the handful of shapes that show up when prose
//! talks about numbers loosely: exact values ("7%"), approximations
//! ("about 50%"), one-sided bounds ("more than 27,000", "below 3300", ">5"),
//! closed ranges ("between 4% and 5%", "3-5%"), ratios ("6 in 10") and
//! comparatives ("twice", "14 percent higher than"). Anything outside that
//! lexicon is reported as an error so the caller can escalate to a model.
//!
//! Numbers use a fixed English locale: comma thousands separators and a
//! period decimal point.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest phrase accepted by [`parse_quantity`], in characters.
pub const MAX_PHRASE_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuantityError {
    #[error("no numeric reading in {0:?}")]
    UnparsableNumber(String),
    #[error("conflicting numeric readings in {0:?}")]
    AmbiguousPhrase(String),
    #[error("phrase is {0} characters long, limit is {MAX_PHRASE_CHARS}")]
    PhraseTooLong(usize),
    #[error("invalid quantity: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantityKind {
    Exact,
    ClosedRange,
    OpenLower,
    OpenUpper,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    /// Values on a 0-100 scale.
    Percent,
    Count,
    /// ISO 4217 code, upper case.
    Currency(String),
    Unitless,
}

/// How a comparative phrase relates a value to its referent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// "twice", "3 times": referent × factor.
    Factor(f64),
    /// "14 percent higher than": referent + delta (signed).
    Delta(f64),
}

impl Comparison {
    /// The comparison that maps the compared value back onto its referent.
    pub fn inverse(self) -> Comparison {
        match self {
            Comparison::Factor(f) => Comparison::Factor(1.0 / f),
            Comparison::Delta(d) => Comparison::Delta(-d),
        }
    }

    fn payload(self) -> f64 {
        match self {
            Comparison::Factor(f) | Comparison::Delta(f) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modifier {
    #[default]
    None,
    Approximate,
    Comparative(Comparison),
}

/// Applies a comparative relation to a base value.
///
/// Multipliers scale the base, deltas shift it. Resolving the referent of a
/// comparative ("Trump is 14 points higher than Clinton", solve for Clinton)
/// uses [`Comparison::inverse`].
pub fn apply_comparative(base: f64, comparison: Comparison) -> f64 {
    match comparison {
        Comparison::Factor(f) => base * f,
        Comparison::Delta(d) => base + d,
    }
}

/// A normalized numeric reading of a text phrase.
///
/// `value` is the point estimate: the midpoint for closed ranges, the bound
/// itself for open ranges until an inference step supplies a better one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedQuantity {
    pub kind: QuantityKind,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub unit: Unit,
    pub modifier: Modifier,
}

impl ParsedQuantity {
    pub fn exact(value: f64, unit: Unit) -> Self {
        ParsedQuantity {
            kind: QuantityKind::Exact,
            value,
            lo: Some(value),
            hi: Some(value),
            unit,
            modifier: Modifier::None,
        }
    }

    /// Closed range; the bounds are reordered if given backwards.
    pub fn closed(a: f64, b: f64, unit: Unit) -> Self {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        ParsedQuantity {
            kind: QuantityKind::ClosedRange,
            value: (lo + hi) / 2.0,
            lo: Some(lo),
            hi: Some(hi),
            unit,
            modifier: Modifier::None,
        }
    }

    pub fn open_lower(bound: f64, unit: Unit) -> Self {
        ParsedQuantity {
            kind: QuantityKind::OpenLower,
            value: bound,
            lo: Some(bound),
            hi: None,
            unit,
            modifier: Modifier::None,
        }
    }

    pub fn open_upper(bound: f64, unit: Unit) -> Self {
        ParsedQuantity {
            kind: QuantityKind::OpenUpper,
            value: bound,
            lo: None,
            hi: Some(bound),
            unit,
            modifier: Modifier::None,
        }
    }

    pub fn with_modifier(mut self, modifier: Modifier) -> Self {
        self.modifier = modifier;
        self
    }

    /// Replaces the point estimate of an open range. Exact values and closed
    /// ranges keep their derived value.
    pub fn with_estimate(mut self, value: f64) -> Self {
        if matches!(self.kind, QuantityKind::OpenLower | QuantityKind::OpenUpper) {
            self.value = value;
        }
        self
    }

    /// True when the quote states a plain number: exact, no hedging, no
    /// comparison.
    pub fn is_direct(&self) -> bool {
        self.kind == QuantityKind::Exact && self.modifier == Modifier::None
    }

    /// Checks the structural invariants; used on deserialized values.
    pub fn check(&self) -> Result<(), QuantityError> {
        let bad = |msg: &str| Err(QuantityError::Invariant(msg.to_string()));
        let finite = |v: Option<f64>| v.is_none_or(f64::is_finite);
        if !self.value.is_finite() || !finite(self.lo) || !finite(self.hi) {
            return bad("non-finite number");
        }
        match (self.kind, self.lo, self.hi) {
            (QuantityKind::Exact, Some(lo), Some(hi)) => {
                if lo != self.value || hi != self.value {
                    return bad("exact quantity must have lo = hi = value");
                }
            }
            (QuantityKind::ClosedRange, Some(lo), Some(hi)) => {
                if lo > hi {
                    return bad("closed range has lo > hi");
                }
                if self.value != (lo + hi) / 2.0 {
                    return bad("closed range value must be the midpoint");
                }
            }
            (QuantityKind::OpenLower, Some(lo), None) => {
                if self.value < lo {
                    return bad("estimate below the lower bound");
                }
            }
            (QuantityKind::OpenUpper, None, Some(hi)) => {
                if self.value > hi {
                    return bad("estimate above the upper bound");
                }
            }
            _ => return bad("bounds do not match quantity kind"),
        }
        if let Modifier::Comparative(c) = self.modifier {
            if c.payload() == 0.0 || !c.payload().is_finite() {
                return bad("comparative payload must be nonzero");
            }
        }
        if let Unit::Currency(code) = &self.unit {
            if code.is_empty() {
                return bad("empty currency code");
            }
        }
        Ok(())
    }
}

fn fmt_number(v: f64) -> String {
    // f64 Display never uses exponent notation and round-trips exactly.
    format!("{v}")
}

impl fmt::Display for ParsedQuantity {
    /// Canonical rendering; [`parse_quantity`] reads it back to the same
    /// kind, bounds and unit.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let with_unit = |v: f64| match &self.unit {
            Unit::Percent => format!("{}%", fmt_number(v)),
            Unit::Currency(code) => format!("{} {code}", fmt_number(v)),
            Unit::Count | Unit::Unitless => fmt_number(v),
        };
        if self.modifier == Modifier::Approximate {
            f.write_str("about ")?;
        }
        match self.kind {
            QuantityKind::Exact => match self.modifier {
                Modifier::Comparative(Comparison::Factor(x)) => write!(f, "{} times", fmt_number(x)),
                Modifier::Comparative(Comparison::Delta(d)) => {
                    let dir = if d < 0.0 { "lower" } else { "higher" };
                    write!(f, "{} {dir} than", with_unit(d.abs()))
                }
                _ => f.write_str(&with_unit(self.value)),
            },
            QuantityKind::ClosedRange => write!(
                f,
                "between {} and {}",
                with_unit(self.lo.unwrap_or(self.value)),
                with_unit(self.hi.unwrap_or(self.value))
            ),
            QuantityKind::OpenLower => write!(f, "more than {}", with_unit(self.lo.unwrap_or(self.value))),
            QuantityKind::OpenUpper => write!(f, "less than {}", with_unit(self.hi.unwrap_or(self.value))),
        }
    }
}

// ---------------------------------------------------------------------------
// Lexing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct Num {
    value: f64,
    /// Plain digits: no sign, separator, decimal point or unit.
    bare_int: bool,
    percent: bool,
    currency: Option<String>,
    scale: f64,
    /// "N in M" ratio, value holds N/M unscaled.
    ratio: Option<(f64, f64)>,
    year: bool,
}

impl Num {
    fn plain(value: f64, bare_int: bool) -> Self {
        Num {
            value,
            bare_int,
            percent: false,
            currency: None,
            scale: 1.0,
            ratio: None,
            year: false,
        }
    }

    fn unit(&self) -> Unit {
        if self.percent || self.ratio.is_some() {
            Unit::Percent
        } else if let Some(code) = &self.currency {
            Unit::Currency(code.clone())
        } else {
            Unit::Count
        }
    }

    /// Value in the unit returned by [`Num::unit`].
    fn normalized(&self) -> f64 {
        match self.ratio {
            Some((n, m)) => n * 100.0 / m,
            None => self.value * self.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Num),
    Word(String),
    Sym(char),
}

const SPELLED: &[(&str, f64)] = &[
    ("zero", 0.0),
    ("one", 1.0),
    ("two", 2.0),
    ("three", 3.0),
    ("four", 4.0),
    ("five", 5.0),
    ("six", 6.0),
    ("seven", 7.0),
    ("eight", 8.0),
    ("nine", 9.0),
    ("ten", 10.0),
    ("eleven", 11.0),
    ("twelve", 12.0),
    ("thirteen", 13.0),
    ("fourteen", 14.0),
    ("fifteen", 15.0),
    ("sixteen", 16.0),
    ("seventeen", 17.0),
    ("eighteen", 18.0),
    ("nineteen", 19.0),
    ("twenty", 20.0),
    ("thirty", 30.0),
    ("forty", 40.0),
    ("fifty", 50.0),
    ("sixty", 60.0),
    ("seventy", 70.0),
    ("eighty", 80.0),
    ("ninety", 90.0),
    ("hundred", 100.0),
];

const SCALES: &[(&str, f64)] = &[
    ("thousand", 1e3),
    ("million", 1e6),
    ("billion", 1e9),
    ("trillion", 1e12),
];

const CURRENCY_SYMBOLS: &[(char, &str)] = &[('$', "USD"), ('€', "EUR"), ('£', "GBP"), ('¥', "JPY")];

const CURRENCY_WORDS: &[(&str, &str)] = &[
    ("usd", "USD"),
    ("dollar", "USD"),
    ("dollars", "USD"),
    ("eur", "EUR"),
    ("euro", "EUR"),
    ("euros", "EUR"),
    ("gbp", "GBP"),
    ("jpy", "JPY"),
    ("yen", "JPY"),
    ("cny", "CNY"),
    ("yuan", "CNY"),
];

/// Words that introduce a year rather than a measured value.
const YEAR_PREPOSITIONS: &[&str] = &[
    "in", "since", "by", "during", "until", "till", "before", "after", "of", "from", "through", "year",
];

fn spelled_value(word: &str) -> Option<f64> {
    SPELLED.iter().find(|(w, _)| *w == word).map(|&(_, v)| v)
}

fn lookup<'a>(table: &'a [(&str, &'a str)], word: &str) -> Option<&'a str> {
    table.iter().find(|(w, _)| *w == word).map(|&(_, code)| code)
}

fn lex(phrase: &str) -> Vec<Tok> {
    let chars: Vec<char> = phrase.chars().collect();
    let mut out: Vec<Tok> = Vec::new();
    let mut pending_currency: Option<&'static str> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next_is_digit = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        let prev_is_num = matches!(out.last(), Some(Tok::Num(_)));
        if c.is_whitespace() {
            i += 1;
        } else if let Some(&(_, code)) = CURRENCY_SYMBOLS.iter().find(|(s, _)| *s == c) {
            pending_currency = Some(code);
            i += 1;
        } else if c.is_ascii_digit()
            || (c == '.' && next_is_digit)
            || ((c == '-' || c == '−') && next_is_digit && !prev_is_num)
        {
            let (mut num, end) = lex_number(&chars, i);
            if let Some(code) = pending_currency.take() {
                num.currency = Some(code.to_string());
                num.bare_int = false;
            }
            out.push(Tok::Num(num));
            i = end;
        } else if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_alphabetic() || chars[i] == '\'' || chars[i] == '’') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect::<String>().to_lowercase();
            let word = word
                .trim_end_matches("'s")
                .trim_end_matches("’s")
                .trim_end_matches(['\'', '’'])
                .to_string();
            out.push(Tok::Word(word));
        } else {
            let sym = match c {
                '≥' | '>' => '>',
                '≤' | '<' => '<',
                '–' | '—' | '−' => '-',
                '≈' => '~',
                other => other,
            };
            // ">=" and "<=" collapse onto the comparison symbol.
            if sym == '=' && matches!(out.last(), Some(Tok::Sym('>' | '<'))) {
                i += 1;
                continue;
            }
            out.push(Tok::Sym(sym));
            i += 1;
        }
    }
    attach_suffixes(out)
}

fn lex_number(chars: &[char], start: usize) -> (Num, usize) {
    let mut i = start;
    let mut text = String::new();
    let mut bare = true;
    if chars[i] == '-' || chars[i] == '−' {
        text.push('-');
        bare = false;
        i += 1;
    }
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_digit() {
            text.push(c);
            i += 1;
        } else if c == ','
            && i + 3 < chars.len() + 1
            && chars[i + 1..].iter().take(3).filter(|d| d.is_ascii_digit()).count() == 3
            && !chars.get(i + 4).is_some_and(|d| d.is_ascii_digit())
            && text.chars().any(|d| d.is_ascii_digit())
        {
            bare = false;
            i += 1;
        } else if c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) && !text.contains('.') {
            text.push('.');
            bare = false;
            i += 1;
        } else {
            break;
        }
    }
    let value: f64 = text.parse().unwrap_or(f64::NAN);
    let mut num = Num::plain(value, bare);
    // Allow "7%" and "7 %".
    let mut j = i;
    while j < chars.len() && chars[j] == ' ' {
        j += 1;
    }
    if chars.get(j) == Some(&'%') {
        num.percent = true;
        num.bare_int = false;
        i = j + 1;
    }
    (num, i)
}

/// Folds unit words, scale words, spelled numbers and "N in M" ratios into
/// the numeric tokens they belong to.
fn attach_suffixes(tokens: Vec<Tok>) -> Vec<Tok> {
    // Spelled numbers first so later passes see them as numbers.
    let mut spelled: Vec<Tok> = Vec::with_capacity(tokens.len());
    let mut iter = tokens.into_iter().peekable();
    while let Some(tok) = iter.next() {
        match tok {
            Tok::Word(w) if spelled_value(&w).is_some() || w == "a" => {
                let is_hundred_next = matches!(iter.peek(), Some(Tok::Word(n)) if n == "hundred");
                if w == "a" && !is_hundred_next {
                    spelled.push(Tok::Word(w));
                    continue;
                }
                let mut v = if w == "a" { 1.0 } else { spelled_value(&w).unwrap_or_default() };
                if is_hundred_next && v >= 1.0 && v < 10.0 {
                    iter.next();
                    v *= 100.0;
                }
                let mut num = Num::plain(v, false);
                num.bare_int = false;
                spelled.push(Tok::Num(num));
            }
            other => spelled.push(other),
        }
    }

    let mut out: Vec<Tok> = Vec::with_capacity(spelled.len());
    let mut i = 0;
    while i < spelled.len() {
        match &spelled[i] {
            Tok::Num(n) => {
                let mut num = n.clone();
                i += 1;
                loop {
                    match spelled.get(i) {
                        Some(Tok::Word(w)) if w == "percent" || w == "pct" => {
                            num.percent = true;
                            num.bare_int = false;
                            i += 1;
                        }
                        Some(Tok::Word(w)) if w == "per" && matches!(spelled.get(i + 1), Some(Tok::Word(n)) if n == "cent") => {
                            num.percent = true;
                            num.bare_int = false;
                            i += 2;
                        }
                        Some(Tok::Word(w)) if w == "percentage" && matches!(spelled.get(i + 1), Some(Tok::Word(n)) if n == "point" || n == "points") => {
                            num.percent = true;
                            num.bare_int = false;
                            i += 2;
                        }
                        Some(Tok::Word(w)) if SCALES.iter().any(|(s, _)| s == w) => {
                            let scale = SCALES.iter().find(|(s, _)| s == w).map(|&(_, v)| v).unwrap_or(1.0);
                            num.scale *= scale;
                            num.bare_int = false;
                            i += 1;
                        }
                        Some(Tok::Word(w)) if num.currency.is_none() && lookup(CURRENCY_WORDS, w).is_some() => {
                            num.currency = lookup(CURRENCY_WORDS, w).map(str::to_string);
                            num.bare_int = false;
                            i += 1;
                        }
                        _ => break,
                    }
                }
                // "6 in 10", "3 out of 4"
                let (link_len, denom) = match (spelled.get(i), spelled.get(i + 1), spelled.get(i + 2)) {
                    (Some(Tok::Word(w)), Some(Tok::Num(d)), _) if w == "in" => (1, Some(d)),
                    (Some(Tok::Word(w)), Some(Tok::Word(o)), Some(Tok::Num(d))) if w == "out" && o == "of" => (2, Some(d)),
                    _ => (0, None),
                };
                if let Some(d) = denom {
                    let is_year_like = d.bare_int && (1000.0..3000.0).contains(&d.value);
                    if is_ratio_part(&num) && is_ratio_part(d) && !is_year_like && d.value > 0.0 && num.value <= d.value {
                        num.ratio = Some((num.value, d.value));
                        num.bare_int = false;
                        i += link_len + 1;
                    }
                }
                // "ISO code first": "USD 5"
                if num.currency.is_none() {
                    if let Some(Tok::Word(w)) = out.last() {
                        if let Some(code) = lookup(CURRENCY_WORDS, w).filter(|_| w.len() == 3) {
                            num.currency = Some(code.to_string());
                            num.bare_int = false;
                            out.pop();
                        }
                    }
                }
                out.push(Tok::Num(num));
            }
            other => {
                out.push(other.clone());
                i += 1;
            }
        }
    }

    // Mark year tokens.
    for idx in 0..out.len() {
        let is_year_prep = idx > 0 && matches!(&out[idx - 1], Tok::Word(w) if YEAR_PREPOSITIONS.contains(&w.as_str()));
        if let Tok::Num(n) = &mut out[idx] {
            if n.bare_int && (1000.0..3000.0).contains(&n.value) && is_year_prep {
                n.year = true;
            }
        }
    }
    out
}

fn is_ratio_part(n: &Num) -> bool {
    !n.percent && n.currency.is_none() && n.scale == 1.0 && n.ratio.is_none() && n.value >= 0.0
}

/// Reads a single numeric token: digits with separators, a percent sign,
/// an "N in M" ratio, or a spelled-out small number.
///
/// With `percent_context` set, a ratio is returned on the 0-100 scale.
pub fn normalize_number(token: &str, percent_context: bool) -> Result<f64, QuantityError> {
    let tokens = lex(token.trim());
    let unparsable = || QuantityError::UnparsableNumber(token.to_string());
    match tokens.as_slice() {
        [Tok::Num(n)] if n.value.is_finite() => Ok(match n.ratio {
            Some((a, b)) if percent_context => a * 100.0 / b,
            Some((a, b)) => a / b,
            None => n.value * n.scale,
        }),
        _ => Err(unparsable()),
    }
}

// ---------------------------------------------------------------------------
// Phrase recognition
// ---------------------------------------------------------------------------

const APPROXIMATORS: &[&str] = &[
    "about",
    "around",
    "approximately",
    "approx",
    "roughly",
    "nearly",
    "almost",
    "some",
    "close to",
    "circa",
    "an estimated",
    "estimated",
    "~",
];

const LOWER_BOUNDS: &[&str] = &[
    "more than",
    "greater than",
    "larger than",
    "higher than",
    "over",
    "above",
    "exceeded",
    "exceeds",
    "exceed",
    "exceeding",
    "at least",
    "no less than",
    "upwards of",
    ">",
];

const UPPER_BOUNDS: &[&str] = &[
    "less than",
    "fewer than",
    "lower than",
    "below",
    "under",
    "at most",
    "no more than",
    "up to",
    "<",
];

const HIGHER_AFTER: &[&str] = &["higher than", "more than", "greater than", "larger than", "above", "higher", "more"];
const LOWER_AFTER: &[&str] = &["lower than", "less than", "fewer than", "smaller than", "below", "lower", "less"];

const FACTOR_WORDS: &[(&str, f64)] = &[("twice", 2.0), ("double", 2.0), ("thrice", 3.0), ("triple", 3.0)];

#[derive(Debug)]
enum Reading {
    Single { num: Num, start: usize, end: usize },
    Range { lo: f64, hi: f64, unit: Unit, start: usize, end: usize },
    Factor { factor: f64, start: usize, end: usize },
}

impl Reading {
    fn span(&self) -> (usize, usize) {
        match self {
            Reading::Single { start, end, .. } | Reading::Range { start, end, .. } | Reading::Factor { start, end, .. } => {
                (*start, *end)
            }
        }
    }
}

fn range_unit(a: &Num, b: &Num) -> Unit {
    if a.percent || b.percent || a.ratio.is_some() || b.ratio.is_some() {
        Unit::Percent
    } else if let Some(code) = a.currency.clone().or_else(|| b.currency.clone()) {
        Unit::Currency(code)
    } else {
        Unit::Count
    }
}

fn make_range(a: &Num, b: &Num, start: usize, end: usize) -> Reading {
    let mut lo_num = a.clone();
    // "3 to 5 million", "$3-5": unit and scale written once apply to both ends.
    if lo_num.scale == 1.0 {
        lo_num.scale = b.scale;
    }
    Reading::Range {
        lo: lo_num.normalized(),
        hi: b.normalized(),
        unit: range_unit(a, b),
        start,
        end,
    }
}

fn is_word(tok: Option<&Tok>, word: &str) -> bool {
    matches!(tok, Some(Tok::Word(w)) if w == word)
}

fn as_num(tok: Option<&Tok>) -> Option<&Num> {
    match tok {
        Some(Tok::Num(n)) => Some(n),
        _ => None,
    }
}

fn collect_readings(tokens: &[Tok]) -> Vec<Reading> {
    let mut readings = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let here = tokens.get(i);
        // between A and B | between A-B | from A to B
        if is_word(here, "between") || is_word(here, "from") {
            let joiner = if is_word(here, "between") { "and" } else { "to" };
            if let (Some(a), Some(b)) = (as_num(tokens.get(i + 1)), as_num(tokens.get(i + 3))) {
                let linked = is_word(tokens.get(i + 2), joiner) || tokens.get(i + 2) == Some(&Tok::Sym('-'));
                if linked {
                    readings.push(make_range(a, b, i, i + 4));
                    i += 4;
                    continue;
                }
            }
        }
        if let Some(a) = as_num(here) {
            let linked = is_word(tokens.get(i + 1), "to") || tokens.get(i + 1) == Some(&Tok::Sym('-'));
            if let (true, Some(b)) = (linked, as_num(tokens.get(i + 2))) {
                readings.push(make_range(a, b, i, i + 3));
                i += 3;
                continue;
            }
            readings.push(Reading::Single {
                num: a.clone(),
                start: i,
                end: i + 1,
            });
            i += 1;
            continue;
        }
        if let Some(Tok::Word(w)) = here {
            if let Some(&(_, f)) = FACTOR_WORDS.iter().find(|(fw, _)| fw == w) {
                readings.push(Reading::Factor {
                    factor: f,
                    start: i,
                    end: i + 1,
                });
            }
        }
        i += 1;
    }

    // Year tokens only count when nothing else is numeric.
    let non_year = |r: &Reading| !matches!(r, Reading::Single { num, .. } if num.year);
    if readings.iter().any(non_year) {
        readings.retain(non_year);
    }
    readings
}

fn render_tokens(tokens: &[Tok]) -> String {
    tokens
        .iter()
        .map(|t| match t {
            Tok::Word(w) => w.clone(),
            Tok::Sym(c) => c.to_string(),
            Tok::Num(_) => "#".to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn strip_phrase<'a>(text: &'a str, phrases: &[&str]) -> Option<&'a str> {
    let mut sorted: Vec<&str> = phrases.to_vec();
    sorted.sort_by_key(|p| std::cmp::Reverse(p.len()));
    for p in sorted {
        if text == p {
            return Some("");
        }
        if let Some(rest) = text.strip_suffix(p) {
            if rest.ends_with(' ') {
                return Some(rest.trim_end());
            }
        }
    }
    None
}

fn strip_tagged<'a, T: Copy>(text: &'a str, phrases: &[(&str, T)]) -> Option<(&'a str, T)> {
    let mut sorted: Vec<(&str, T)> = phrases.to_vec();
    sorted.sort_by_key(|(p, _)| std::cmp::Reverse(p.len()));
    sorted.into_iter().find_map(|(p, tag)| {
        let rest = strip_phrase(text, &[p])?;
        Some((rest, tag))
    })
}

fn starts_with_phrase(text: &str, phrases: &[&str]) -> bool {
    phrases
        .iter()
        .any(|p| text == *p || text.strip_prefix(p).is_some_and(|rest| rest.starts_with(' ')))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bound {
    Lower,
    Upper,
}

/// Parses a short quote into a typed quantity.
///
/// Returns [`QuantityError::AmbiguousPhrase`] when the phrase holds more
/// than one competing numeric reading (year tokens introduced by a
/// preposition are ignored when another number is present).
pub fn parse_quantity(phrase: &str) -> Result<ParsedQuantity, QuantityError> {
    let len = phrase.chars().count();
    if len > MAX_PHRASE_CHARS {
        return Err(QuantityError::PhraseTooLong(len));
    }
    let ambiguous = || QuantityError::AmbiguousPhrase(phrase.to_string());
    let tokens = lex(phrase);
    let mut readings = collect_readings(&tokens);
    let reading = match readings.len() {
        0 => return Err(QuantityError::UnparsableNumber(phrase.to_string())),
        1 => readings.remove(0),
        _ => return Err(ambiguous()),
    };
    let (start, end) = reading.span();

    // Prefix words: hedges and bounds, innermost first.
    let mut prefix = render_tokens(&tokens[..start]);
    let mut approximate = false;
    let mut bound: Option<Bound> = None;
    let bound_phrases: Vec<(&str, Bound)> = LOWER_BOUNDS
        .iter()
        .map(|p| (*p, Bound::Lower))
        .chain(UPPER_BOUNDS.iter().map(|p| (*p, Bound::Upper)))
        .collect();
    loop {
        let trimmed = prefix.trim_end();
        if let Some(rest) = strip_phrase(trimmed, APPROXIMATORS) {
            approximate = true;
            prefix = rest.to_string();
            continue;
        }
        let Some((rest, found)) = strip_tagged(trimmed, &bound_phrases) else {
            break;
        };
        if bound.is_some() {
            return Err(ambiguous());
        }
        bound = Some(found);
        prefix = rest.to_string();
    }
    // "27,000+"
    if tokens.get(end) == Some(&Tok::Sym('+')) {
        if bound.is_some() {
            return Err(ambiguous());
        }
        bound = Some(Bound::Lower);
    }

    let suffix = render_tokens(&tokens[end..]);
    let suffix = suffix.trim_start_matches("+ ").trim_start();

    let quantity = match reading {
        Reading::Range { lo, hi, unit, .. } => {
            if bound.is_some() {
                return Err(ambiguous());
            }
            if !lo.is_finite() || !hi.is_finite() {
                return Err(QuantityError::UnparsableNumber(phrase.to_string()));
            }
            ParsedQuantity::closed(lo, hi, unit)
        }
        Reading::Factor { factor, .. } => {
            if bound.is_some() {
                return Err(ambiguous());
            }
            ParsedQuantity::exact(factor, Unit::Unitless).with_modifier(Modifier::Comparative(Comparison::Factor(factor)))
        }
        Reading::Single { num, .. } => {
            let value = num.normalized();
            if !value.is_finite() {
                return Err(QuantityError::UnparsableNumber(phrase.to_string()));
            }
            let unit = num.unit();
            let comparative = if starts_with_phrase(suffix, &["times"]) {
                Some(Comparison::Factor(value))
            } else if starts_with_phrase(suffix, HIGHER_AFTER) {
                Some(Comparison::Delta(value))
            } else if starts_with_phrase(suffix, LOWER_AFTER) {
                Some(Comparison::Delta(-value))
            } else {
                None
            };
            match (bound, comparative) {
                (Some(_), Some(_)) => return Err(ambiguous()),
                (Some(Bound::Lower), None) => ParsedQuantity::open_lower(value, unit),
                (Some(Bound::Upper), None) => ParsedQuantity::open_upper(value, unit),
                (None, Some(c)) if value != 0.0 => {
                    let unit = if matches!(c, Comparison::Factor(_)) { Unit::Unitless } else { unit };
                    ParsedQuantity::exact(value, unit).with_modifier(Modifier::Comparative(c))
                }
                (None, _) => ParsedQuantity::exact(value, unit),
            }
        }
    };

    if approximate {
        if matches!(quantity.modifier, Modifier::Comparative(_)) {
            return Err(ambiguous());
        }
        return Ok(quantity.with_modifier(Modifier::Approximate));
    }
    Ok(quantity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(s: &str) -> ParsedQuantity {
        parse_quantity(s).unwrap_or_else(|e| panic!("{s:?}: {e}"))
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_number("27,000", false), Ok(27000.0));
        assert_eq!(normalize_number("0", false), Ok(0.0));
        assert_eq!(normalize_number("6 in 10", true), Ok(6.0 / 10.0 * 100.0));
        assert_eq!(normalize_number("6 in 10", false), Ok(0.6));
        assert_eq!(normalize_number("twelve", false), Ok(12.0));
        assert_eq!(normalize_number("one hundred", false), Ok(100.0));
        assert_eq!(normalize_number("7%", false), Ok(7.0));
        assert!(matches!(normalize_number("many", false), Err(QuantityError::UnparsableNumber(_))));
        assert!(matches!(normalize_number("3 and 4", false), Err(QuantityError::UnparsableNumber(_))));
    }

    #[test]
    fn range_with_percent() {
        let got = q("between 4% and 5%");
        assert_eq!(got.kind, QuantityKind::ClosedRange);
        assert_eq!((got.lo, got.hi, got.value), (Some(4.0), Some(5.0), 4.5));
        assert_eq!(got.unit, Unit::Percent);
    }

    #[test]
    fn bound_words() {
        assert_eq!(q("more than 27,000 deaths"), ParsedQuantity::open_lower(27000.0, Unit::Count));
        assert_eq!(q("below 3300"), ParsedQuantity::open_upper(3300.0, Unit::Count));
        assert_eq!(q("exceeded 8%"), ParsedQuantity::open_lower(8.0, Unit::Percent));
        assert_eq!(q(">5"), ParsedQuantity::open_lower(5.0, Unit::Count));
        assert_eq!(q("<5"), ParsedQuantity::open_upper(5.0, Unit::Count));
        assert_eq!(q("no more than 12"), ParsedQuantity::open_upper(12.0, Unit::Count));
    }

    #[test]
    fn approximate_is_flag_only() {
        let got = q("about 50%");
        assert_eq!(got, ParsedQuantity::exact(50.0, Unit::Percent).with_modifier(Modifier::Approximate));
        let nearly = q("nearly 6 in 10");
        assert_eq!(nearly.kind, QuantityKind::Exact);
        assert_eq!(nearly.value, 60.0);
        assert_eq!(nearly.modifier, Modifier::Approximate);
    }

    #[test]
    fn comparatives() {
        let got = q("14 percent higher than Bill Clinton's");
        assert_eq!(got.modifier, Modifier::Comparative(Comparison::Delta(14.0)));
        assert_eq!(got.unit, Unit::Percent);
        assert_eq!(q("twice").modifier, Modifier::Comparative(Comparison::Factor(2.0)));
        assert_eq!(q("3 times as many").modifier, Modifier::Comparative(Comparison::Factor(3.0)));
        assert_eq!(q("5 points lower than"), ParsedQuantity::exact(5.0, Unit::Count));
        assert_eq!(q("5% lower than last year").modifier, Modifier::Comparative(Comparison::Delta(-5.0)));
    }

    #[test]
    fn apply_comparative_examples() {
        assert_eq!(apply_comparative(3.0, Comparison::Factor(2.0)), 6.0);
        assert_eq!(apply_comparative(53.0, Comparison::Delta(-14.0)), 39.0);
        assert_eq!(apply_comparative(53.0, Comparison::Delta(14.0).inverse()), 39.0);
        assert_eq!(apply_comparative(7.25, Comparison::Factor(1.0)), 7.25);
    }

    #[test]
    fn years_are_ignored_next_to_values() {
        assert_eq!(q("7% in 2010"), ParsedQuantity::exact(7.0, Unit::Percent));
        assert_eq!(q("in 2010"), ParsedQuantity::exact(2010.0, Unit::Count));
        assert_eq!(q("2000 deaths"), ParsedQuantity::exact(2000.0, Unit::Count));
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_quantity("no numbers here"), Err(QuantityError::UnparsableNumber(_))));
        assert!(matches!(parse_quantity("7% and 9%"), Err(QuantityError::AmbiguousPhrase(_))));
        assert!(matches!(parse_quantity("more than between 3 and 4"), Err(QuantityError::AmbiguousPhrase(_))));
        assert!(matches!(parse_quantity(&"9".repeat(201)), Err(QuantityError::PhraseTooLong(201))));
    }

    #[test]
    fn check_rejects_broken_invariants() {
        let mut bad = ParsedQuantity::closed(1.0, 2.0, Unit::Count);
        bad.lo = Some(3.0);
        assert!(bad.check().is_err());
        let mut exact = ParsedQuantity::exact(1.0, Unit::Count);
        exact.hi = None;
        assert!(exact.check().is_err());
        let zero = ParsedQuantity::exact(0.0, Unit::Count).with_modifier(Modifier::Comparative(Comparison::Delta(0.0)));
        assert!(zero.check().is_err());
        assert!(ParsedQuantity::open_lower(8.0, Unit::Percent).with_estimate(8.1).check().is_ok());
    }

    fn unit_strategy() -> impl Strategy<Value = Unit> {
        prop_oneof![
            Just(Unit::Percent),
            Just(Unit::Count),
            Just(Unit::Currency("USD".into())),
            Just(Unit::Currency("EUR".into())),
        ]
    }

    fn number_strategy() -> impl Strategy<Value = f64> {
        (-100_000i64..1_000_000, 0u32..3).prop_map(|(n, places)| n as f64 / 10f64.powi(places as i32))
    }

    fn quantity_strategy() -> impl Strategy<Value = ParsedQuantity> {
        (0u8..6, number_strategy(), number_strategy(), unit_strategy(), any::<bool>()).prop_map(|(shape, a, b, unit, approx)| {
            let base = match shape {
                0 | 1 => ParsedQuantity::exact(a, unit),
                2 => ParsedQuantity::closed(a, b, unit),
                3 => ParsedQuantity::open_lower(a, unit),
                4 => ParsedQuantity::open_upper(a, unit),
                _ => {
                    let d = if a == 0.0 { 1.0 } else { a };
                    return ParsedQuantity::exact(d.abs(), unit).with_modifier(Modifier::Comparative(Comparison::Delta(d)));
                }
            };
            if approx {
                base.with_modifier(Modifier::Approximate)
            } else {
                base
            }
        })
    }

    proptest! {
        #[test]
        fn canonical_rendering_round_trips(quantity in quantity_strategy()) {
            let text = quantity.to_string();
            let back = parse_quantity(&text).map_err(|e| TestCaseError::fail(format!("{text:?}: {e}")))?;
            prop_assert_eq!(back.kind, quantity.kind);
            prop_assert_eq!(back.lo, quantity.lo);
            prop_assert_eq!(back.hi, quantity.hi);
            prop_assert_eq!(&back.unit, &quantity.unit);
            prop_assert_eq!(back.modifier, quantity.modifier);
        }

        #[test]
        fn no_output_has_lo_above_hi(a in number_strategy(), b in number_strategy(), form in 0usize..4) {
            let phrase = match form {
                0 => format!("between {a} and {b}"),
                1 => format!("{a} to {b}%"),
                2 => format!("from {a} to {b}"),
                _ => format!("between {a}-{b}"),
            };
            if let Ok(parsed) = parse_quantity(&phrase) {
                if let (Some(lo), Some(hi)) = (parsed.lo, parsed.hi) {
                    prop_assert!(lo <= hi, "{phrase}: {lo} > {hi}");
                }
                prop_assert!(parsed.check().is_ok());
            }
        }

        #[test]
        fn parsing_is_deterministic(s in "[a-z0-9 %,.<>-]{0,40}") {
            prop_assert_eq!(parse_quantity(&s), parse_quantity(&s));
        }
    }
}
