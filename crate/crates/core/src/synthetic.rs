//! Seeded template-grammar generator of annotated clinical sentences.
//!
//! Templates are whitespace-separated pieces. A piece `{slot}` is filled with
//! a random lexicon entry of that slot, `{slot|negation+plan}` additionally
//! tags the filler's outer mention with modifiers, and `{#}` renders a random
//! number. Lexicon entries may declare nested sub-mentions, found as
//! token-aligned substrings of the entry's surface.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{find_token_aligned, AnnotatedDocument, AnnotationSet, Document, Mention, RecordType};
use crate::ontology::Ontology;
use crate::text::{char_len, Span};

/// The generator configuration shipped with the crate.
pub const SEED_CONFIG: &str = include_str!("../data/synthetic_config.json");

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("bad generator config: {0}")]
    BadConfig(String),
    #[error("malformed generator config: {0}")]
    Parse(#[from] serde_json::Error),
}

fn bad<T>(msg: impl Into<String>) -> Result<T, GeneratorError> {
    Err(GeneratorError::BadConfig(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub sentence_count: usize,
    /// When set, exactly this many documents are generated and
    /// `sentence_count` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document_count: Option<usize>,
    #[serde(default = "default_spd")]
    pub sentences_per_document: (usize, usize),
    #[serde(default = "default_patients")]
    pub patients: usize,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_span_days")]
    pub date_span_days: u64,
    #[serde(default = "default_specialties")]
    pub specialties: Vec<String>,
    #[serde(default = "default_annotator")]
    pub annotator_id: String,
    pub templates: Vec<Template>,
    pub lexicon: Vec<LexiconEntry>,
}

fn default_spd() -> (usize, usize) {
    (1, 3)
}
fn default_patients() -> usize {
    10
}
fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date")
}
fn default_span_days() -> u64 {
    1460
}
fn default_specialties() -> Vec<String> {
    vec!["medicina interna".to_string()]
}
fn default_annotator() -> String {
    "gold".to_string()
}
fn default_weight() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub text: String,
    #[serde(default = "default_weight")]
    pub weight: u32,
    #[serde(default)]
    pub record_type: Option<RecordType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconEntry {
    pub slot: String,
    pub surface: String,
    pub node: String,
    /// Additional nodes labeling the same span.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modifiers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nested: Vec<NestedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedEntry {
    pub surface: String,
    pub node: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nested: Vec<NestedEntry>,
}

impl GeneratorConfig {
    pub fn seed() -> GeneratorConfig {
        serde_json::from_str(SEED_CONFIG).expect("seed generator config parses")
    }

    pub fn from_json(s: &str) -> Result<GeneratorConfig, GeneratorError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn with_sentence_count(mut self, n: usize) -> GeneratorConfig {
        self.sentence_count = n;
        self
    }

    pub fn with_document_count(mut self, n: usize) -> GeneratorConfig {
        self.document_count = Some(n);
        self
    }

    pub fn with_sentences_per_document(mut self, min: usize, max: usize) -> GeneratorConfig {
        self.sentences_per_document = (min, max);
        self
    }
}

enum Piece {
    Literal(String),
    Number,
    Slot { slot: String, modifiers: Vec<String> },
}

fn parse_template(text: &str) -> Result<Vec<Piece>, GeneratorError> {
    let mut pieces = Vec::new();
    for raw in text.split_whitespace() {
        let piece = if raw == "{#}" {
            Piece::Number
        } else if let Some(inner) = raw.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            let (slot, mods) = match inner.split_once('|') {
                Some((s, m)) => (s, m.split('+').map(str::to_string).collect()),
                None => (inner, Vec::new()),
            };
            if slot.is_empty() {
                return bad(format!("empty slot in template `{text}`"));
            }
            Piece::Slot {
                slot: slot.to_string(),
                modifiers: mods,
            }
        } else if raw.contains(['{', '}']) {
            return bad(format!("slot must be a whole piece in template `{text}`"));
        } else {
            Piece::Literal(raw.to_string())
        };
        pieces.push(piece);
    }
    if pieces.is_empty() {
        return bad("empty template");
    }
    Ok(pieces)
}

fn ends_sentence(s: &str) -> bool {
    s.contains(['.', '!', '?', '\n']) && !is_decimal_only(s)
}

fn is_decimal_only(s: &str) -> bool {
    // "49.5" keeps its point inside one token and does not end a sentence.
    let parts: Vec<&str> = s.split('.').collect();
    parts.len() == 2
        && parts.iter().all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()))
}

struct Prepared<'a> {
    templates: Vec<(Vec<Piece>, &'a Template)>,
    weights: Vec<u32>,
    by_slot: BTreeMap<&'a str, Vec<&'a LexiconEntry>>,
}

fn prepare(config: &GeneratorConfig) -> Result<Prepared<'_>, GeneratorError> {
    let (lo, hi) = config.sentences_per_document;
    if lo == 0 || lo > hi {
        return bad("sentences_per_document must be 1 <= min <= max");
    }
    if config.patients == 0 {
        return bad("patients must be positive");
    }
    if config.specialties.is_empty() {
        return bad("specialties must not be empty");
    }
    if config.templates.is_empty() {
        return bad("no templates");
    }
    let mut by_slot: BTreeMap<&str, Vec<&LexiconEntry>> = BTreeMap::new();
    for entry in &config.lexicon {
        check_surface(&entry.surface)?;
        check_nested(&entry.surface, &entry.nested)?;
        by_slot.entry(entry.slot.as_str()).or_default().push(entry);
    }
    let mut templates = Vec::new();
    for t in &config.templates {
        let pieces = parse_template(&t.text)?;
        for (i, p) in pieces.iter().enumerate() {
            match p {
                Piece::Slot { slot, .. } if !by_slot.contains_key(slot.as_str()) => {
                    return bad(format!("template `{}` uses slot `{slot}` with no lexicon entries", t.text));
                }
                Piece::Literal(l) if ends_sentence(l) && i + 1 != pieces.len() => {
                    return bad(format!("sentence punctuation inside template `{}`", t.text));
                }
                _ => {}
            }
        }
        templates.push((pieces, t));
    }
    let weights = config.templates.iter().map(|t| t.weight).collect::<Vec<_>>();
    if weights.iter().all(|w| *w == 0) {
        return bad("all template weights are zero");
    }
    Ok(Prepared {
        templates,
        weights,
        by_slot,
    })
}

fn check_surface(surface: &str) -> Result<(), GeneratorError> {
    if surface.trim().is_empty() || surface.trim() != surface {
        return bad(format!("surface `{surface}` is blank or padded"));
    }
    if surface.split_whitespace().any(ends_sentence) {
        return bad(format!("surface `{surface}` contains sentence punctuation"));
    }
    Ok(())
}

fn check_nested(parent: &str, nested: &[NestedEntry]) -> Result<(), GeneratorError> {
    for n in nested {
        check_surface(&n.surface)?;
        if find_token_aligned(parent, &n.surface).is_empty() {
            return bad(format!("nested `{}` is not a token-aligned part of `{parent}`", n.surface));
        }
        check_nested(&n.surface, &n.nested)?;
    }
    Ok(())
}

/// A planned mention relative to the text being rendered.
struct Planned {
    span: Span,
    node: String,
    modifiers: BTreeSet<String>,
}

fn plan_nested(base: usize, surface: &str, nested: &[NestedEntry], out: &mut Vec<Planned>) {
    for n in nested {
        let rel = find_token_aligned(surface, &n.surface)[0];
        let span = Span::new(base + rel.start, base + rel.end);
        for node in std::iter::once(&n.node).chain(&n.also) {
            out.push(Planned {
                span,
                node: node.clone(),
                modifiers: BTreeSet::new(),
            });
        }
        plan_nested(span.start, &n.surface, &n.nested, out);
    }
}

fn render_sentence(
    rng: &mut ChaCha8Rng,
    pieces: &[Piece],
    by_slot: &BTreeMap<&str, Vec<&LexiconEntry>>,
    offset: usize,
    text: &mut String,
    planned: &mut Vec<Planned>,
) {
    let mut pos = offset;
    for (i, piece) in pieces.iter().enumerate() {
        if i > 0 {
            text.push(' ');
            pos += 1;
        }
        let rendered = match piece {
            Piece::Literal(l) => l.clone(),
            Piece::Number => {
                if rng.gen_bool(0.3) {
                    format!("{}.{}", rng.gen_range(1..100), rng.gen_range(0..10))
                } else {
                    rng.gen_range(1..1000).to_string()
                }
            }
            Piece::Slot { slot, modifiers } => {
                let entry = *by_slot[slot.as_str()].choose(rng).expect("non-empty slot");
                let span = Span::new(pos, pos + char_len(&entry.surface));
                let mods: BTreeSet<String> = entry
                    .modifiers
                    .iter()
                    .chain(modifiers)
                    .cloned()
                    .collect();
                for node in std::iter::once(&entry.node).chain(&entry.also) {
                    planned.push(Planned {
                        span,
                        node: node.clone(),
                        modifiers: mods.clone(),
                    });
                }
                plan_nested(pos, &entry.surface, &entry.nested, planned);
                entry.surface.clone()
            }
        };
        pos += char_len(&rendered);
        text.push_str(&rendered);
    }
    let last_is_terminal = matches!(pieces.last(), Some(Piece::Literal(l)) if ends_sentence(l));
    if !last_is_terminal {
        text.push_str(" .");
    }
}

/// Generates documents with exact gold mention sets.
///
/// Output is a pure function of `(config, seed)`.
pub fn generate_synthetic(
    config: &GeneratorConfig,
    ontology: &Ontology,
    seed: u64,
) -> Result<Vec<(Document, AnnotationSet)>, GeneratorError> {
    let prep = prepare(config)?;
    let dist = rand::distributions::WeightedIndex::new(&prep.weights)
        .map_err(|e| GeneratorError::BadConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut remaining = config.sentence_count;
    let (lo, hi) = config.sentences_per_document;

    loop {
        let n = match config.document_count {
            Some(d) if out.len() >= d => break,
            Some(_) => rng.gen_range(lo..=hi),
            None if remaining == 0 => break,
            None => rng.gen_range(lo..=hi).min(remaining),
        };
        remaining = remaining.saturating_sub(n);
        let doc_no = out.len() + 1;
        let mut text = String::new();
        let mut planned = Vec::new();
        let mut record_type = None;
        for s in 0..n {
            if s > 0 {
                text.push(' ');
            }
            let (pieces, template) = &prep.templates[rng.sample(&dist)];
            record_type = record_type.or(template.record_type);
            let offset = char_len(&text);
            render_sentence(&mut rng, pieces, &prep.by_slot, offset, &mut text, &mut planned);
        }
        let record_type =
            record_type.unwrap_or_else(|| *RecordType::ALL.choose(&mut rng).expect("non-empty"));
        let days = rng.gen_range(0..=config.date_span_days);
        let doc = Document {
            id: format!("doc{doc_no:05}"),
            patient_id: format!("pt{:04}", rng.gen_range(1..=config.patients)),
            date: config
                .start_date
                .checked_add_days(Days::new(days))
                .ok_or_else(|| GeneratorError::BadConfig("date overflow".into()))?,
            record_type,
            specialty: config.specialties.choose(&mut rng).expect("non-empty").clone(),
            text,
        };
        let mut set = AnnotationSet::new(&doc.id, &config.annotator_id);
        for p in planned {
            let m = Mention::new(p.span, p.node).with_modifiers(p.modifiers);
            if let Err(e) = set.add_mention(m, ontology, &doc) {
                // planned mentions come straight from the config, so a rejection
                // means the config disagrees with the ontology
                return bad(format!("{}: {e}", doc.id));
            }
        }
        out.push((doc, set));
    }
    Ok(out)
}

/// Convenience wrapper returning corpus records.
pub fn generate_corpus(
    config: &GeneratorConfig,
    ontology: &Ontology,
    seed: u64,
) -> Result<Vec<AnnotatedDocument>, GeneratorError> {
    Ok(generate_synthetic(config, ontology, seed)?
        .into_iter()
        .map(|(doc, set)| AnnotatedDocument {
            doc,
            annotations: vec![set],
        })
        .collect())
}
