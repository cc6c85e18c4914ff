//! Header and cell primitives: species detection, unit extraction and
//! numeric cell parsing.
//!
//! Cells use a decimal point only. A comma is read as a thousands
//! separator when it splits digits into groups of three (`1,234.5`) and
//! makes the cell unparseable otherwise, so a decimal comma (`1,5`) is
//! rejected rather than misread.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::catalog::SpeciesDictionary;
use crate::text::{fold_subscripts, normalize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderAnalysis {
    pub raw_text: String,
    pub stripped_text: String,
    pub unit: Option<String>,
    /// Species symbols in order of first occurrence.
    pub species_found: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedValue {
    pub value: f64,
    pub uncertainty: Option<f64>,
    pub raw: String,
}

/// Compiled species detector for one dictionary.
#[derive(Debug, Clone)]
pub struct SpeciesMatcher {
    patterns: Vec<(String, Regex)>,
}

fn is_formula_form(form: &str) -> bool {
    form.chars().any(|c| c.is_uppercase() || c.is_ascii_digit())
}

impl SpeciesMatcher {
    pub fn new(dictionary: &SpeciesDictionary) -> Self {
        let mut patterns = Vec::new();
        for (symbol, forms) in dictionary {
            for form in forms {
                let folded: String = form.chars().map(fold_subscripts).collect();
                let words: Vec<String> = folded.split_whitespace().map(regex::escape).collect();
                if words.is_empty() {
                    continue;
                }
                let body = words.join(r"\s+");
                let pattern = if is_formula_form(&folded) {
                    body
                } else {
                    format!("(?i){body}")
                };
                let re = Regex::new(&pattern).expect("escaped pattern compiles");
                patterns.push((symbol.clone(), re));
            }
        }
        Self { patterns }
    }

    /// Species whose surface forms occur in `text` with a non-alphanumeric
    /// boundary on both sides, once each, in order of first occurrence.
    pub fn detect(&self, text: &str) -> Vec<String> {
        let folded: String = text.chars().map(fold_subscripts).collect();
        let mut hits: Vec<(usize, &str)> = Vec::new();
        for (symbol, re) in &self.patterns {
            let first = re.find_iter(&folded).find(|m| {
                let before = folded[..m.start()].chars().next_back();
                let after = folded[m.end()..].chars().next();
                !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
            });
            if let Some(m) = first {
                match hits.iter_mut().find(|(_, s)| *s == symbol) {
                    Some(hit) => hit.0 = hit.0.min(m.start()),
                    None => hits.push((m.start(), symbol)),
                }
            }
        }
        hits.sort();
        hits.into_iter().map(|(_, s)| s.to_string()).collect()
    }

    pub fn analyze_header(&self, header_text: &str) -> HeaderAnalysis {
        let (stripped_text, unit) = extract_header_unit(header_text);
        let species_found = self.detect(&stripped_text);
        HeaderAnalysis {
            raw_text: header_text.to_string(),
            stripped_text,
            unit,
            species_found,
        }
    }
}

/// One-shot species detection. Build a [`SpeciesMatcher`] to reuse the
/// compiled patterns across headers.
pub fn detect_species(header_text: &str, dictionary: &SpeciesDictionary) -> Vec<String> {
    SpeciesMatcher::new(dictionary).detect(header_text)
}

/// Units that fall outside the plain unit-like character class.
const UNIT_LEXICON: &[&str] = &[
    "°C",
    "°F",
    "K",
    "cm3(STP)/g",
    "cm³(STP)/g",
    "mmol g-1",
    "mmol g⁻¹",
    "mol kg-1",
    "mol kg⁻¹",
    "kJ mol-1",
    "kJ mol⁻¹",
    "m2 g-1",
    "m² g⁻¹",
    "cm3 g-1",
    "cm³ g⁻¹",
    "mol m-2 s-1",
    "g/cm³",
    "m²/g",
    "cm³/g",
];

fn is_unit_like(content: &str) -> bool {
    let trimmed = content.trim();
    if trimmed.is_empty() {
        return false;
    }
    if UNIT_LEXICON.iter().any(|u| normalize(u) == normalize(trimmed)) {
        return true;
    }
    trimmed.chars().any(|c| c.is_alphabetic() || c == '%')
        && trimmed
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '/' | '·' | '-' | '%'))
}

/// Splits a trailing parenthesized unit off a header.
///
/// Only the last group is considered, and only when it ends the header and
/// reads as a unit; otherwise the text comes back unchanged.
pub fn extract_header_unit(header_text: &str) -> (String, Option<String>) {
    let unchanged = || (header_text.to_string(), None);
    let trimmed = header_text.trim_end();
    let Some(inner) = trimmed.strip_suffix(')') else {
        return unchanged();
    };
    let mut depth = 0usize;
    let mut open = None;
    for (i, c) in inner.char_indices().rev() {
        match c {
            ')' => depth += 1,
            '(' if depth == 0 => {
                open = Some(i);
                break;
            }
            '(' => depth -= 1,
            _ => {}
        }
    }
    let Some(open) = open else {
        return unchanged();
    };
    let content = &inner[open + 1..];
    if !is_unit_like(content) {
        return unchanged();
    }
    let stripped = inner[..open].trim_end().to_string();
    (stripped, Some(content.trim().to_string()))
}

const NUMBER: &str = r"[+-]?(?:(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|\.\d+)(?:[eE][+-]?\d+|\s*[×x]\s*10\^[+-]?\d+)?";
const UNSIGNED: &str = r"(?:(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|\.\d+)(?:[eE][+-]?\d+|\s*[×x]\s*10\^[+-]?\d+)?";

static SINGLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"^({NUMBER})$")).unwrap());
static PLUS_MINUS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^({NUMBER})\s*(?:±|\+/-|\+-)\s*({UNSIGNED})$")).unwrap());
static RANGE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^({NUMBER})\s*(?:-|–|—|\s+to\s+)\s*({NUMBER})$")).unwrap());
static TIMES_TEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*[×x]\s*10\^").unwrap());

fn to_f64(token: &str) -> Option<f64> {
    let plain = TIMES_TEN.replace(token, "e").replace(',', "");
    plain.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_forms(cell: &str) -> Option<(f64, Option<f64>)> {
    if let Some(c) = SINGLE.captures(cell) {
        return Some((to_f64(&c[1])?, None));
    }
    if let Some(c) = PLUS_MINUS.captures(cell) {
        return Some((to_f64(&c[1])?, Some(to_f64(&c[2])?)));
    }
    if let Some(c) = RANGE.captures(cell) {
        let low = to_f64(&c[1])?;
        let high = to_f64(&c[2])?;
        let mid = low / 2.0 + high / 2.0;
        let half = ((high - low) / 2.0).abs();
        if !mid.is_finite() || !half.is_finite() {
            return None;
        }
        return Some((mid, Some(half)));
    }
    None
}

/// Parses a table cell into a scalar.
///
/// Accepts plain and scientific numbers, `a ± b`, and ranges `a-b` / `a–b`
/// (midpoint with half-width as uncertainty). A single trailing footnote
/// letter is dropped when the rest parses (`15.3a`).
pub fn parse_numeric_cell(cell: &str) -> Option<ParsedValue> {
    let text: String = cell.trim().replace('\u{2212}', "-");
    if text.is_empty() {
        return None;
    }
    let parsed = parse_forms(&text).or_else(|| {
        let mut chars = text.chars();
        let last = chars.next_back()?;
        let rest = chars.as_str();
        let before = rest.chars().next_back()?;
        if last.is_ascii_alphabetic() && !before.is_alphabetic() {
            parse_forms(rest.trim_end())
        } else {
            None
        }
    })?;
    Some(ParsedValue {
        value: parsed.0,
        uncertainty: parsed.1,
        raw: cell.to_string(),
    })
}
