//! Hypothesis rewrites: monotone numeric moves governed by adpositions,
//! negation toggling, entity substitution, nominal-modifier insertion and
//! year shifts. Each rewrite carries the label it is expected to produce.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::seq::IndexedRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, Hypothesis, Label, Table};
use crate::seed::{derive_seed, rng_from};

pub type Exact = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HypothesisError {
    #[error("gold label is Neutral")]
    NeutralGold,
    #[error("no number governed by a lexicon adposition")]
    NoGovernedNumber,
    #[error("governed number is zero and cannot move")]
    ZeroMagnitude,
    #[error("no auxiliary or copula to negate")]
    NoInsertionPoint,
    #[error("gold label is not Entail")]
    NotEntailGold,
    #[error("gold label is not Contradict")]
    NotContradictGold,
    #[error("no substitutable span")]
    NoEntitySpan,
    #[error("no replacement candidate in the pool")]
    EmptyPool,
    #[error("hypothesis never mentions the title")]
    NoTitleMention,
    #[error("every row key is already mentioned")]
    NoUnusedRow,
    #[error("no four-digit year")]
    NoYearSpan,
    #[error("year is governed by a monotone adposition")]
    GovernedYear,
    #[error("year shift of zero")]
    ZeroShift,
    #[error("span file: {0}")]
    BadSpanFile(String),
    #[error("lexicon line {line}: {message}")]
    BadLexicon { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Number,
    Temporal,
    Entity,
    Negation,
    TitleMention,
}

/// A typed span in character offsets, end exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
    /// Entity type; for built-in entity spans, the table key the value came from.
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_value: Option<f64>,
}

impl SpanAnnotation {
    pub fn text<'t>(&self, text: &'t str) -> &'t str {
        let (a, b) = char_range_to_bytes(text, self.start, self.end);
        &text[a..b]
    }

    /// Pool type used for substitution.
    pub fn pool_type(&self) -> Option<&str> {
        match self.kind {
            SpanKind::Number => Some("number"),
            SpanKind::Temporal => Some("temporal"),
            SpanKind::Entity => self.entity_type.as_deref(),
            SpanKind::Negation | SpanKind::TitleMention => None,
        }
    }

    fn overlaps(&self, other: &SpanAnnotation) -> bool {
        self.start < other.end && other.start < self.end
    }
}

fn char_range_to_bytes(text: &str, start: usize, end: usize) -> (usize, usize) {
    let mut offsets = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let a = offsets.by_ref().nth(start).unwrap_or(text.len());
    let b = if end > start {
        offsets.nth(end - start - 1).unwrap_or(text.len())
    } else {
        a
    };
    (a, b)
}

fn byte_to_char(text: &str, b: usize) -> usize {
    text[..b].chars().count()
}

fn span_from_bytes(text: &str, a: usize, b: usize, kind: SpanKind) -> SpanAnnotation {
    SpanAnnotation {
        start: byte_to_char(text, a),
        end: byte_to_char(text, b),
        kind,
        entity_type: None,
        normalized_value: None,
    }
}

fn re(pattern: &'static str, cell: &'static OnceLock<Regex>) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn digits_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(r"\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?", &R)
}

fn negation_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(r"(?i)\b(?:not|never|no)\b|n't\b", &R)
}

fn token_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(r"[\p{L}\p{N}'’]+|[^\s\p{L}\p{N}]", &R)
}

fn word_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(r"\p{L}+", &R)
}

const UNITS: [&str; 20] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];
const TENS: [&str; 8] = [
    "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

fn number_word(w: &str) -> Option<u32> {
    let w = w.to_lowercase();
    if let Some(i) = UNITS.iter().position(|u| *u == w) {
        return Some(i as u32);
    }
    TENS.iter().position(|t| *t == w).map(|i| (i as u32 + 2) * 10)
}

/// Runs of number words ("three", "twenty-five", "two hundred and six").
fn number_word_spans(text: &str) -> Vec<(usize, usize, u32)> {
    let words: Vec<_> = word_re().find_iter(text).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let mut j = i;
        let mut total = 0u32;
        let mut current = 0u32;
        let mut end = None;
        while j < words.len() {
            let w = words[j].as_str();
            if j > i {
                let gap = &text[words[j - 1].end()..words[j].start()];
                if !(gap == " " || gap == "-") {
                    break;
                }
            }
            if let Some(v) = number_word(w) {
                current += v;
                end = Some(j);
            } else if w.eq_ignore_ascii_case("hundred") && end.is_some() {
                current = current.max(1) * 100;
                total += current;
                current = 0;
                end = Some(j);
            } else if w.eq_ignore_ascii_case("and")
                && end == Some(j.wrapping_sub(1))
                && total > 0
                && words.get(j + 1).is_some_and(|n| number_word(n.as_str()).is_some())
            {
                // "two hundred and six"
            } else {
                break;
            }
            j += 1;
        }
        match end {
            Some(e) => {
                out.push((words[i].start(), words[e].end(), total + current));
                i = e + 1;
            }
            None => i += 1,
        }
    }
    out
}

fn parse_decimal(s: &str) -> Option<Exact> {
    let s: String = s.chars().filter(|c| *c != ',').collect();
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let digits = format!("{int}{frac}");
    let numer: i128 = digits.parse().ok()?;
    let denom = 10i128.checked_pow(frac.len() as u32)?;
    Some(Ratio::new(numer, denom))
}

/// Renders an exact value as a terminating decimal, or `None` when the
/// denominator has prime factors other than 2 and 5.
pub fn format_decimal(value: &Exact) -> Option<String> {
    let mut den = *value.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return None;
    }
    let places = twos.max(fives);
    let scaled = value * Ratio::from_integer(10i128.pow(places));
    let n = scaled.to_integer();
    let sign = if n < 0 { "-" } else { "" };
    let digits = n.abs().to_string();
    if places == 0 {
        return Some(format!("{sign}{digits}"));
    }
    let padded = format!("{:0>width$}", digits, width = places as usize + 1);
    let (int, frac) = padded.split_at(padded.len() - places as usize);
    Some(format!("{sign}{int}.{frac}"))
}

fn is_word_boundary(text: &str, a: usize, b: usize) -> bool {
    let before = text[..a].chars().next_back();
    let after = text[b..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}

fn fold_eq(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Byte length of the case-folded match of `needle` at the start of `hay`.
fn match_len_at(hay: &str, needle: &str) -> Option<usize> {
    let mut hay_chars = hay.char_indices();
    for n in needle.chars() {
        let (_, h) = hay_chars.next()?;
        if !fold_eq(h, n) {
            return None;
        }
    }
    Some(hay_chars.next().map_or(hay.len(), |(i, _)| i))
}

/// Case-folded, word-bounded, non-overlapping occurrences of `needle`
/// (byte ranges).
pub fn find_mentions(text: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if needle.trim().is_empty() {
        return out;
    }
    let mut from = 0;
    for (i, _) in text.char_indices() {
        if i < from {
            continue;
        }
        if let Some(len) = match_len_at(&text[i..], needle) {
            if is_word_boundary(text, i, i + len) {
                out.push((i, i + len));
                from = i + len;
            }
        }
    }
    out
}

fn check_external(text: &str, spans: &[SpanAnnotation]) -> Result<Vec<SpanAnnotation>, HypothesisError> {
    let len = text.chars().count();
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    for (i, s) in sorted.iter().enumerate() {
        if s.start >= s.end || s.end > len {
            return Err(HypothesisError::BadSpanFile(format!(
                "span {}..{} outside text of {len} characters",
                s.start, s.end
            )));
        }
        if i > 0 && sorted[i - 1].overlaps(s) {
            return Err(HypothesisError::BadSpanFile(format!(
                "span {}..{} overlaps",
                s.start, s.end
            )));
        }
    }
    Ok(sorted)
}

/// Finds numbers, years, negation markers, title mentions and, when a
/// table is given, table values quoted in the text. External spans replace
/// the built-in detectors entirely.
pub fn detect_spans(
    text: &str,
    title: Option<&str>,
    table: Option<&Table>,
    external: Option<&[SpanAnnotation]>,
) -> Result<Vec<SpanAnnotation>, HypothesisError> {
    if let Some(ext) = external {
        return check_external(text, ext);
    }
    // candidates in priority order; earlier ones win overlaps
    let mut candidates: Vec<SpanAnnotation> = Vec::new();
    for m in negation_re().find_iter(text) {
        candidates.push(span_from_bytes(text, m.start(), m.end(), SpanKind::Negation));
    }
    if let Some(title) = title {
        for (a, b) in find_mentions(text, title) {
            candidates.push(span_from_bytes(text, a, b, SpanKind::TitleMention));
        }
    }
    let mut numbers = Vec::new();
    for m in digits_re().find_iter(text) {
        if !is_word_boundary(text, m.start(), m.end()) && text[m.end()..].starts_with(|c: char| c.is_alphabetic()) {
            continue;
        }
        let value = parse_decimal(m.as_str()).and_then(|v| v.to_f64());
        let is_year = !m.as_str().contains(['.', ','])
            && m.as_str().len() == 4
            && value.is_some_and(|v| (1000.0..=2999.0).contains(&v));
        let kind = if is_year { SpanKind::Temporal } else { SpanKind::Number };
        let mut span = span_from_bytes(text, m.start(), m.end(), kind);
        span.normalized_value = value;
        numbers.push(span);
    }
    for (a, b, v) in number_word_spans(text) {
        let mut span = span_from_bytes(text, a, b, SpanKind::Number);
        span.normalized_value = Some(f64::from(v));
        numbers.push(span);
    }
    candidates.extend(numbers);
    if let Some(table) = table {
        let mut values: Vec<(&str, &str)> = table
            .rows
            .iter()
            .flat_map(|r| r.values.iter().map(move |v| (r.key.as_str(), v.as_str())))
            .collect();
        // longer values first so "art rock" beats "rock"
        values.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.cmp(b)));
        for (key, value) in values {
            for (a, b) in find_mentions(text, value) {
                let mut span = span_from_bytes(text, a, b, SpanKind::Entity);
                span.entity_type = Some(key.to_string());
                candidates.push(span);
            }
        }
    }
    let mut accepted: Vec<SpanAnnotation> = Vec::new();
    for c in candidates {
        if !accepted.iter().any(|a| a.overlaps(&c)) {
            accepted.push(c);
        }
    }
    accepted.sort_by_key(|s| (s.start, s.end));
    Ok(accepted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    MonotoneNumeric,
    TemporalShift,
    NegationToggle,
    EntitySub,
    ModifierInsert,
}

impl Transform {
    pub const ALL: [Transform; 5] = [
        Transform::MonotoneNumeric,
        Transform::TemporalShift,
        Transform::NegationToggle,
        Transform::EntitySub,
        Transform::ModifierInsert,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Flip,
    Preserve,
}

/// The replaced stretch of text, in character offsets of the original.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEdit {
    pub start: usize,
    pub end: usize,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisRewrite {
    pub original: Hypothesis,
    pub rewritten_text: String,
    pub transform: Transform,
    pub intent: Intent,
    pub expected_label: Label,
    /// The expected label is a best guess rather than a guarantee.
    pub heuristic: bool,
    pub edit: TextEdit,
}

fn apply_edit(
    h: &Hypothesis,
    (a, b): (usize, usize),
    replacement: &str,
    transform: Transform,
    intent: Intent,
    expected_label: Label,
) -> HypothesisRewrite {
    let text = &h.text;
    let rewritten_text = format!("{}{}{}", &text[..a], replacement, &text[b..]);
    HypothesisRewrite {
        original: h.clone(),
        rewritten_text,
        transform,
        intent,
        expected_label,
        heuristic: matches!(transform, Transform::TemporalShift | Transform::ModifierInsert),
        edit: TextEdit {
            start: byte_to_char(text, a),
            end: byte_to_char(text, b),
            before: text[a..b].to_string(),
            after: replacement.to_string(),
        },
    }
}

fn expected_for(gold: Label, intent: Intent) -> Label {
    match intent {
        Intent::Preserve => gold,
        Intent::Flip => gold.opposite().unwrap_or(gold),
    }
}

fn require_polar(gold: Label) -> Result<(), HypothesisError> {
    if gold == Label::Neutral {
        Err(HypothesisError::NeutralGold)
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn reverse(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

/// Label a statement moves toward when its governed number moves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdpositionEntry {
    pub surface: String,
    pub up_target: Label,
    pub down_target: Label,
}

impl AdpositionEntry {
    pub fn new(surface: &str, up_target: Label, down_target: Label) -> Self {
        AdpositionEntry {
            surface: surface.to_string(),
            up_target,
            down_target,
        }
    }

    pub fn target(&self, d: Direction) -> Label {
        match d {
            Direction::Up => self.up_target,
            Direction::Down => self.down_target,
        }
    }

    /// Direction whose target is `label`, if any.
    pub fn direction_to(&self, label: Label) -> Option<Direction> {
        [Direction::Up, Direction::Down]
            .into_iter()
            .find(|d| self.target(*d) == label)
    }

    fn tokens(&self) -> Vec<String> {
        self.surface.split_whitespace().map(str::to_lowercase).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: Vec<AdpositionEntry>,
}

impl Default for Lexicon {
    fn default() -> Self {
        use Label::{Contradict as C, Entail as E};
        Lexicon {
            entries: vec![
                AdpositionEntry::new("over", C, E),
                AdpositionEntry::new("under", E, C),
                AdpositionEntry::new("more than", C, E),
                AdpositionEntry::new("less than", E, C),
                AdpositionEntry::new("before", E, C),
                AdpositionEntry::new("after", C, E),
            ],
        }
    }
}

impl FromStr for Lexicon {
    type Err = HypothesisError;

    /// Tab-separated `surface<TAB>up<TAB>down` lines; `#` starts a comment.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| HypothesisError::BadLexicon { line: i + 1, message };
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [surface, up, down] = fields[..] else {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let up: Label = up.parse().map_err(|e: crate::model::BadLabel| bad(e.to_string()))?;
            let down: Label = down.parse().map_err(|e: crate::model::BadLabel| bad(e.to_string()))?;
            if up == Label::Neutral || down == Label::Neutral || up == down {
                return Err(bad("targets must be Entail and Contradict, one each".into()));
            }
            entries.push(AdpositionEntry::new(surface, up, down));
        }
        Ok(Lexicon { entries })
    }
}

impl Lexicon {
    /// Appends entries, replacing any with the same surface form.
    pub fn extend(&mut self, other: Lexicon) {
        for e in other.entries {
            self.entries.retain(|x| !x.surface.eq_ignore_ascii_case(&e.surface));
            self.entries.push(e);
        }
    }

    /// Nearest entry whose tokens end within `window` tokens left of `span`.
    pub fn governing(&self, text: &str, span: &SpanAnnotation, window: usize) -> Option<&AdpositionEntry> {
        let (span_start, _) = char_range_to_bytes(text, span.start, span.end);
        let tokens: Vec<String> = token_re()
            .find_iter(text)
            .take_while(|m| m.start() < span_start)
            .map(|m| m.as_str().to_lowercase())
            .collect();
        let lo = tokens.len().saturating_sub(window);
        for end in (lo..tokens.len()).rev() {
            let mut best: Option<&AdpositionEntry> = None;
            for entry in &self.entries {
                let et = entry.tokens();
                if et.is_empty() || end + 1 < lo + et.len() {
                    continue;
                }
                let begin = end + 1 - et.len();
                if tokens[begin..=end] == et[..] && best.is_none_or(|b| b.tokens().len() < et.len()) {
                    best = Some(entry);
                }
            }
            if best.is_some() {
                return best;
            }
        }
        None
    }
}

fn span_value(text: &str, span: &SpanAnnotation) -> Option<Exact> {
    parse_decimal(span.text(text)).or_else(|| {
        let v = span.normalized_value?;
        (v.fract() == 0.0).then(|| Ratio::from_integer(v as i128))
    })
}

/// Moves a value by half its magnitude: up is x 3/2, down is x 1/2.
/// Years stay integral, rounding away from the original.
pub fn step_value(value: &Exact, direction: Direction, integral: bool) -> Exact {
    let factor = match direction {
        Direction::Up => Ratio::new(3, 2),
        Direction::Down => Ratio::new(1, 2),
    };
    let moved = value * factor;
    if !integral || moved.is_integer() {
        return moved;
    }
    if moved > *value {
        moved.ceil()
    } else {
        moved.floor()
    }
}

/// Rewrites the first adposition-governed number so that the label is
/// preserved or flipped.
pub fn perturb_numeric(
    h: &Hypothesis,
    spans: &[SpanAnnotation],
    intent: Intent,
    lexicon: &Lexicon,
    window: usize,
) -> Result<HypothesisRewrite, HypothesisError> {
    require_polar(h.gold_label)?;
    let text = &h.text;
    let (span, entry) = spans
        .iter()
        .filter(|s| matches!(s.kind, SpanKind::Number | SpanKind::Temporal))
        .find_map(|s| lexicon.governing(text, s, window).map(|e| (s, e)))
        .ok_or(HypothesisError::NoGovernedNumber)?;
    let value = span_value(text, span).ok_or(HypothesisError::NoGovernedNumber)?;
    if value.is_zero() {
        return Err(HypothesisError::ZeroMagnitude);
    }
    let toward_gold = entry.direction_to(h.gold_label).ok_or(HypothesisError::NeutralGold)?;
    let direction = match intent {
        Intent::Preserve => toward_gold,
        Intent::Flip => toward_gold.reverse(),
    };
    let moved = step_value(&value, direction, span.kind == SpanKind::Temporal);
    let rendered = format_decimal(&moved).expect("halving and x1.5 keep decimals terminating");
    let bytes = char_range_to_bytes(text, span.start, span.end);
    let expected = entry.target(direction);
    debug_assert_eq!(expected, expected_for(h.gold_label, intent));
    Ok(apply_edit(
        h,
        bytes,
        &rendered,
        Transform::MonotoneNumeric,
        intent,
        expected,
    ))
}

const AUXILIARIES: [&str; 12] = [
    "is", "was", "are", "were", "has", "have", "had", "does", "did", "do", "can", "will",
];

/// Removes the first negation marker, or inserts "not" after the first
/// auxiliary or copula.
pub fn toggle_negation(h: &Hypothesis, spans: &[SpanAnnotation]) -> Result<HypothesisRewrite, HypothesisError> {
    require_polar(h.gold_label)?;
    let text = &h.text;
    let expected = expected_for(h.gold_label, Intent::Flip);
    if let Some(neg) = spans.iter().find(|s| s.kind == SpanKind::Negation) {
        let (a, b) = char_range_to_bytes(text, neg.start, neg.end);
        let marker = &text[a..b];
        if marker.eq_ignore_ascii_case("n't") {
            let stem_start = text[..a].rfind(|c: char| !c.is_alphanumeric()).map_or(0, |i| i + 1);
            let stem = &text[stem_start..a];
            let restored = match stem.to_lowercase().as_str() {
                "ca" => format!("{stem}n"),
                "wo" => if stem.starts_with('W') { "Will" } else { "will" }.to_string(),
                _ => stem.to_string(),
            };
            return Ok(apply_edit(
                h,
                (stem_start, b),
                &restored,
                Transform::NegationToggle,
                Intent::Flip,
                expected,
            ));
        }
        // drop the marker and one neighbouring space
        let (a, b) = if text[..a].ends_with(' ') {
            (a - 1, b)
        } else if text[b..].starts_with(' ') {
            (a, b + 1)
        } else {
            (a, b)
        };
        return Ok(apply_edit(
            h,
            (a, b),
            "",
            Transform::NegationToggle,
            Intent::Flip,
            expected,
        ));
    }
    let aux = token_re()
        .find_iter(text)
        .find(|m| AUXILIARIES.iter().any(|x| m.as_str().eq_ignore_ascii_case(x)))
        .ok_or(HypothesisError::NoInsertionPoint)?;
    Ok(apply_edit(
        h,
        (aux.end(), aux.end()),
        " not",
        Transform::NegationToggle,
        Intent::Flip,
        expected,
    ))
}

/// Replacement candidates keyed by span type.
pub type EntityPool = BTreeMap<String, BTreeSet<String>>;

/// Pools built from dataset values: one pool per row key, plus "number"
/// and "temporal" pools from the numbers and years appearing in values.
pub fn entity_pool_from_dataset(ds: &Dataset) -> EntityPool {
    let mut pool = EntityPool::new();
    for table in ds.tables.values() {
        for row in &table.rows {
            for v in &row.values {
                pool.entry(row.key.clone()).or_default().insert(v.clone());
                for m in digits_re().find_iter(v) {
                    let s = m.as_str();
                    let kind = if s.len() == 4 && (s.starts_with('1') || s.starts_with('2')) && !s.contains(['.', ','])
                    {
                        "temporal"
                    } else {
                        "number"
                    };
                    pool.entry(kind.into()).or_default().insert(s.to_string());
                }
            }
        }
    }
    pool
}

/// Reads a JSON object mapping entity type to a list of surface forms.
pub fn load_entity_pool(path: &Path) -> Result<EntityPool, crate::io::ImportError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::io::ImportError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| crate::io::ImportError::schema(path.display(), e.to_string()))
}

fn appears_in_table(candidate: &str, table: &Table) -> bool {
    table.rows.iter().any(|r| {
        r.values
            .iter()
            .any(|v| v.eq_ignore_ascii_case(candidate) || !find_mentions(v, candidate).is_empty())
    })
}

/// Replaces a seeded-random typed span with another member of its pool,
/// turning an entailed hypothesis into a contradicted one.
pub fn substitute_entity(
    h: &Hypothesis,
    spans: &[SpanAnnotation],
    pool: &EntityPool,
    table: Option<&Table>,
    seed: u64,
) -> Result<HypothesisRewrite, HypothesisError> {
    if h.gold_label != Label::Entail {
        return Err(HypothesisError::NotEntailGold);
    }
    let text = &h.text;
    let typed: Vec<&SpanAnnotation> = spans.iter().filter(|s| s.pool_type().is_some()).collect();
    if typed.is_empty() {
        return Err(HypothesisError::NoEntitySpan);
    }
    let options: Vec<(&SpanAnnotation, Vec<&str>)> = typed
        .into_iter()
        .filter_map(|s| {
            let original = s.text(text);
            let candidates: Vec<&str> = pool
                .get(s.pool_type()?)?
                .iter()
                .map(String::as_str)
                .filter(|c| !c.eq_ignore_ascii_case(original))
                .filter(|c| !table.is_some_and(|t| appears_in_table(c, t)))
                .collect();
            (!candidates.is_empty()).then_some((s, candidates))
        })
        .collect();
    let mut rng = rng_from(seed);
    let (span, candidates) = options.choose(&mut rng).ok_or(HypothesisError::EmptyPool)?;
    let replacement = candidates.choose(&mut rng).expect("non-empty");
    let bytes = char_range_to_bytes(text, span.start, span.end);
    Ok(apply_edit(
        h,
        bytes,
        replacement,
        Transform::EntitySub,
        Intent::Flip,
        Label::Contradict,
    ))
}

fn unused_keys<'t>(h: &Hypothesis, table: &'t Table) -> Vec<&'t str> {
    let lower = h.text.to_lowercase();
    table.keys().filter(|k| !lower.contains(&k.to_lowercase())).collect()
}

/// Inserts ", whose <key> is <first value>," after the first title mention.
pub fn insert_modifier_with_key(
    h: &Hypothesis,
    spans: &[SpanAnnotation],
    table: &Table,
    key: &str,
) -> Result<HypothesisRewrite, HypothesisError> {
    let title = spans
        .iter()
        .find(|s| s.kind == SpanKind::TitleMention)
        .ok_or(HypothesisError::NoTitleMention)?;
    let row = table.row(key).ok_or(HypothesisError::NoUnusedRow)?;
    let (_, b) = char_range_to_bytes(&h.text, title.start, title.end);
    let clause = format!(", whose {} is {},", row.key, row.values[0]);
    let clause = if h.text[b..].starts_with([',', '.', ';', ':', '?', '!']) {
        clause.trim_end_matches(',').to_string()
    } else {
        clause
    };
    Ok(apply_edit(
        h,
        (b, b),
        &clause,
        Transform::ModifierInsert,
        Intent::Preserve,
        h.gold_label,
    ))
}

pub fn insert_modifier(
    h: &Hypothesis,
    spans: &[SpanAnnotation],
    table: &Table,
    seed: u64,
) -> Result<HypothesisRewrite, HypothesisError> {
    if !spans.iter().any(|s| s.kind == SpanKind::TitleMention) {
        return Err(HypothesisError::NoTitleMention);
    }
    let keys = unused_keys(h, table);
    let key = keys.choose(&mut rng_from(seed)).ok_or(HypothesisError::NoUnusedRow)?;
    insert_modifier_with_key(h, spans, table, key)
}

/// Moves the first year of a contradicted hypothesis by `delta_years`.
pub fn shift_temporal(
    h: &Hypothesis,
    spans: &[SpanAnnotation],
    delta_years: i64,
) -> Result<HypothesisRewrite, HypothesisError> {
    if h.gold_label != Label::Contradict {
        return Err(HypothesisError::NotContradictGold);
    }
    if delta_years == 0 {
        return Err(HypothesisError::ZeroShift);
    }
    let text = &h.text;
    let (span, year) = spans
        .iter()
        .filter(|s| s.kind == SpanKind::Temporal)
        .find_map(|s| s.text(text).parse::<i64>().ok().map(|y| (s, y)))
        .ok_or(HypothesisError::NoYearSpan)?;
    let bytes = char_range_to_bytes(text, span.start, span.end);
    let shifted = (year + delta_years).to_string();
    Ok(apply_edit(
        h,
        bytes,
        &shifted,
        Transform::TemporalShift,
        Intent::Preserve,
        Label::Contradict,
    ))
}

/// External span records: one line per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub pair_id: String,
    pub spans: Vec<SpanAnnotation>,
}

pub fn load_span_file(path: &Path) -> Result<BTreeMap<String, Vec<SpanAnnotation>>, crate::io::ImportError> {
    let records: Vec<SpanRecord> = crate::io::read_jsonl(path)?;
    Ok(records.into_iter().map(|r| (r.pair_id, r.spans)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewriteConfig {
    pub window: usize,
    pub temporal_delta: i64,
    pub transforms: BTreeSet<Transform>,
    pub lexicon: Lexicon,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        RewriteConfig {
            window: 4,
            temporal_delta: 10,
            transforms: Transform::ALL.into_iter().collect(),
            lexicon: Lexicon::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRewrite {
    pub pair_id: String,
    pub transform: Transform,
    pub intent: Intent,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteSet {
    pub rewrites: Vec<HypothesisRewrite>,
    pub skipped: Vec<SkippedRewrite>,
}

/// Applies every enabled transform to each Entail/Contradict pair.
pub fn generate_rewrites(
    ds: &Dataset,
    cfg: &RewriteConfig,
    pool: &EntityPool,
    external_spans: &BTreeMap<String, Vec<SpanAnnotation>>,
    run_seed: u64,
) -> Result<RewriteSet, HypothesisError> {
    let mut set = RewriteSet::default();
    for pair in &ds.pairs {
        let h = &pair.hypothesis;
        if h.gold_label == Label::Neutral {
            continue;
        }
        let table = ds.table_for(pair);
        let spans = detect_spans(
            &h.text,
            table.map(|t| t.title.as_str()),
            table,
            external_spans.get(&h.pair_id).map(Vec::as_slice),
        )?;
        let seed = |t: Transform| derive_seed(run_seed, &[&h.pair_id, &format!("{t:?}")]);
        let mut attempts: Vec<(Transform, Intent, Result<HypothesisRewrite, HypothesisError>)> = Vec::new();
        for t in &cfg.transforms {
            match t {
                Transform::MonotoneNumeric => {
                    for intent in [Intent::Flip, Intent::Preserve] {
                        attempts.push((*t, intent, perturb_numeric(h, &spans, intent, &cfg.lexicon, cfg.window)));
                    }
                }
                Transform::NegationToggle => attempts.push((*t, Intent::Flip, toggle_negation(h, &spans))),
                Transform::EntitySub if h.gold_label == Label::Entail => {
                    attempts.push((*t, Intent::Flip, substitute_entity(h, &spans, pool, table, seed(*t))))
                }
                Transform::ModifierInsert => {
                    if let Some(table) = table {
                        attempts.push((*t, Intent::Preserve, insert_modifier(h, &spans, table, seed(*t))))
                    }
                }
                Transform::TemporalShift if h.gold_label == Label::Contradict => {
                    let governed = spans
                        .iter()
                        .find(|s| s.kind == SpanKind::Temporal)
                        .is_some_and(|s| cfg.lexicon.governing(&h.text, s, cfg.window).is_some());
                    let outcome = if governed {
                        Err(HypothesisError::GovernedYear)
                    } else {
                        shift_temporal(h, &spans, cfg.temporal_delta)
                    };
                    attempts.push((*t, Intent::Preserve, outcome))
                }
                _ => {}
            }
        }
        for (transform, intent, outcome) in attempts {
            match outcome {
                Ok(r) => set.rewrites.push(r),
                Err(e) => set.skipped.push(SkippedRewrite {
                    pair_id: h.pair_id.clone(),
                    transform,
                    intent,
                    reason: e.to_string(),
                }),
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyp(text: &str, gold: Label) -> Hypothesis {
        Hypothesis {
            pair_id: "h".into(),
            text: text.into(),
            gold_label: gold,
        }
    }

    #[test]
    fn decimal_formatting() {
        assert_eq!(format_decimal(&Ratio::new(3, 2)).unwrap(), "1.5");
        assert_eq!(format_decimal(&Ratio::new(9, 2)).unwrap(), "4.5");
        assert_eq!(format_decimal(&Ratio::new(1, 8)).unwrap(), "0.125");
        assert_eq!(format_decimal(&Ratio::from_integer(46)).unwrap(), "46");
        assert!(format_decimal(&Ratio::new(1, 3)).is_none());
    }

    #[test]
    fn number_words() {
        let spans = number_word_spans("It has twenty-five tracks and two hundred and six fans.");
        let values: Vec<u32> = spans.iter().map(|s| s.2).collect();
        assert_eq!(values, [25, 206]);
    }

    #[test]
    fn years_round_away_from_the_original() {
        let y = Ratio::from_integer(1979);
        assert_eq!(step_value(&y, Direction::Down, true), Ratio::from_integer(989));
        assert_eq!(step_value(&y, Direction::Up, true), Ratio::from_integer(2969));
        assert_eq!(
            step_value(&Ratio::from_integer(3), Direction::Down, false),
            Ratio::new(3, 2)
        );
    }

    #[test]
    fn contraction_removal() {
        let h = hyp("The album wasn't released in 1979.", Label::Entail);
        let spans = detect_spans(&h.text, None, None, None).unwrap();
        let r = toggle_negation(&h, &spans).unwrap();
        assert_eq!(r.rewritten_text, "The album was released in 1979.");
        assert_eq!(r.expected_label, Label::Contradict);
    }

    #[test]
    fn bad_span_file() {
        let s = SpanAnnotation {
            start: 3,
            end: 40,
            kind: SpanKind::Number,
            entity_type: None,
            normalized_value: None,
        };
        assert!(matches!(
            detect_spans("short", None, None, Some(&[s])),
            Err(HypothesisError::BadSpanFile(_))
        ));
    }

    #[test]
    fn lexicon_file() {
        let lex: Lexicon = "# extra\nat least\tE\tC\n".parse().unwrap();
        assert_eq!(lex.entries[0].up_target, Label::Entail);
        assert!("within\tN\tC\n".parse::<Lexicon>().is_err());
        assert!("within\tE\n".parse::<Lexicon>().is_err());
    }
}
