//! Documents and standoff annotations.
//!
//! Mentions reference the document text by character offsets. Within one
//! annotator's set, mention spans are disjoint, identical, or nested; two
//! spans that overlap without containment are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;

use chrono::NaiveDate;
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::Ontology;
use crate::text::{char_len, tokenize, Span, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordType {
    DailyNote,
    TestResult,
    DischargeSummary,
    MedicalHistory,
}

impl RecordType {
    pub const ALL: [RecordType; 4] = [
        RecordType::DailyNote,
        RecordType::TestResult,
        RecordType::DischargeSummary,
        RecordType::MedicalHistory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordType::DailyNote => "daily_note",
            RecordType::TestResult => "test_result",
            RecordType::DischargeSummary => "discharge_summary",
            RecordType::MedicalHistory => "medical_history",
        }
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub patient_id: String,
    pub date: NaiveDate,
    pub record_type: RecordType,
    pub specialty: String,
    pub text: String,
}

impl Document {
    pub fn char_len(&self) -> usize {
        char_len(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: String,
    pub span: Span,
    pub node_id: String,
    pub modifier_ids: BTreeSet<String>,
    pub annotator_id: String,
}

impl Mention {
    pub fn new(span: Span, node_id: impl Into<String>) -> Mention {
        Mention {
            id: String::new(),
            span,
            node_id: node_id.into(),
            modifier_ids: BTreeSet::new(),
            annotator_id: String::new(),
        }
    }

    pub fn with_modifiers<I, S>(mut self, modifiers: I) -> Mention
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.modifier_ids = modifiers.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Mention {
        self.id = id.into();
        self
    }
}

/// Why a mention was refused by [`AnnotationSet::add_mention`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("span [{start},{end}) is outside the document ({len} chars)")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("span [{start},{end}) is empty or whitespace only")]
    EmptySpan { start: usize, end: usize },
    #[error("unknown ontology node `{0}`")]
    UnknownNode(String),
    #[error("modifier `{modifier}` is not applicable to `{node}`")]
    InapplicableModifier { modifier: String, node: String },
    #[error("span crosses existing mention `{existing}` at [{start},{end})")]
    CrossingSpan {
        existing: String,
        start: usize,
        end: usize,
    },
    #[error("mention for this span and node already exists (`{existing}`)")]
    DuplicateMention { existing: String },
    #[error("mention id `{0}` already in use")]
    DuplicateId(String),
}

impl AnnotationError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AnnotationError::OutOfBounds { .. } => "OutOfBounds",
            AnnotationError::EmptySpan { .. } => "EmptySpan",
            AnnotationError::UnknownNode(_) => "UnknownNode",
            AnnotationError::InapplicableModifier { .. } => "InapplicableModifier",
            AnnotationError::CrossingSpan { .. } => "CrossingSpan",
            AnnotationError::DuplicateMention { .. } => "DuplicateMention",
            AnnotationError::DuplicateId(_) => "DuplicateId",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub doc_id: String,
    pub annotator_id: String,
    pub mentions: Vec<Mention>,
}

impl AnnotationSet {
    pub fn new(doc_id: impl Into<String>, annotator_id: impl Into<String>) -> AnnotationSet {
        AnnotationSet {
            doc_id: doc_id.into(),
            annotator_id: annotator_id.into(),
            mentions: Vec::new(),
        }
    }

    /// Checks a candidate mention against the document, the ontology and the
    /// mentions already in the set, without modifying anything.
    pub fn check(
        &self,
        mention: &Mention,
        ontology: &Ontology,
        doc: &Document,
    ) -> Result<(), AnnotationError> {
        let Span { start, end } = mention.span;
        let len = doc.char_len();
        if start >= end || end > len {
            return Err(AnnotationError::OutOfBounds { start, end, len });
        }
        if doc
            .text
            .chars()
            .skip(start)
            .take(end - start)
            .all(char::is_whitespace)
        {
            return Err(AnnotationError::EmptySpan { start, end });
        }
        let applicable = ontology
            .applicable_modifiers(&mention.node_id)
            .map_err(|_| AnnotationError::UnknownNode(mention.node_id.clone()))?;
        if let Some(m) = mention.modifier_ids.iter().find(|m| !applicable.contains(*m)) {
            return Err(AnnotationError::InapplicableModifier {
                modifier: m.clone(),
                node: mention.node_id.clone(),
            });
        }
        for existing in &self.mentions {
            if existing.span == mention.span && existing.node_id == mention.node_id {
                return Err(AnnotationError::DuplicateMention {
                    existing: existing.id.clone(),
                });
            }
            if existing.span.crosses(&mention.span) {
                return Err(AnnotationError::CrossingSpan {
                    existing: existing.id.clone(),
                    start: existing.span.start,
                    end: existing.span.end,
                });
            }
            if !mention.id.is_empty() && existing.id == mention.id {
                return Err(AnnotationError::DuplicateId(mention.id.clone()));
            }
        }
        Ok(())
    }

    /// Appends the mention if it satisfies every invariant; on rejection the
    /// set is unchanged. An empty mention id is replaced by a fresh one.
    pub fn add_mention(
        &mut self,
        mut mention: Mention,
        ontology: &Ontology,
        doc: &Document,
    ) -> Result<&Mention, AnnotationError> {
        self.check(&mention, ontology, doc)?;
        if mention.id.is_empty() {
            mention.id = self.next_mention_id();
        }
        mention.annotator_id = self.annotator_id.clone();
        self.mentions.push(mention);
        Ok(self.mentions.last().expect("just pushed"))
    }

    pub fn remove_mention(&mut self, id: &str) -> Option<Mention> {
        let pos = self.mentions.iter().position(|m| m.id == id)?;
        Some(self.mentions.remove(pos))
    }

    pub fn next_mention_id(&self) -> String {
        let used: BTreeSet<&str> = self.mentions.iter().map(|m| m.id.as_str()).collect();
        (self.mentions.len() + 1..)
            .map(|n| format!("{}-m{n}", self.annotator_id))
            .find(|id| !used.contains(id.as_str()))
            .expect("unbounded")
    }

    /// Full re-check of every mention, as if inserted one at a time.
    pub fn validate(&self, ontology: &Ontology, doc: &Document) -> Result<(), AnnotationError> {
        let mut fresh = AnnotationSet::new(&self.doc_id, &self.annotator_id);
        for m in &self.mentions {
            fresh.add_mention(m.clone(), ontology, doc)?;
        }
        Ok(())
    }

    /// Mentions sorted by (start, longest first, node).
    pub fn sorted_mentions(&self) -> Vec<&Mention> {
        let mut v: Vec<&Mention> = self.mentions.iter().collect();
        v.sort_by(|a, b| {
            a.span
                .start
                .cmp(&b.span.start)
                .then(b.span.end.cmp(&a.span.end))
                .then(a.node_id.cmp(&b.node_id))
        });
        v
    }
}

/// Per-occurrence outcome of [`annotate_all_occurrences`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BulkOutcome {
    pub added: Vec<Mention>,
    pub skipped: Vec<(Span, AnnotationError)>,
}

/// Annotates every case-sensitive, token-aligned occurrence of `surface`.
pub fn annotate_all_occurrences(
    set: &mut AnnotationSet,
    doc: &Document,
    surface: &str,
    node_id: &str,
    modifier_ids: &BTreeSet<String>,
    ontology: &Ontology,
) -> BulkOutcome {
    let mut outcome = BulkOutcome::default();
    for span in find_token_aligned(&doc.text, surface) {
        let mention = Mention {
            id: String::new(),
            span,
            node_id: node_id.to_string(),
            modifier_ids: modifier_ids.clone(),
            annotator_id: set.annotator_id.clone(),
        };
        match set.add_mention(mention, ontology, doc) {
            Ok(m) => outcome.added.push(m.clone()),
            Err(e) => outcome.skipped.push((span, e)),
        }
    }
    outcome
}

/// Occurrences of `surface` whose ends coincide with token boundaries.
pub fn find_token_aligned(text: &str, surface: &str) -> Vec<Span> {
    if surface.trim().is_empty() {
        return Vec::new();
    }
    let tokens = tokenize(text).tokens;
    let starts: BTreeSet<usize> = tokens.iter().map(|t| t.span.start).collect();
    let ends: BTreeSet<usize> = tokens.iter().map(|t| t.span.end).collect();
    let hay: Vec<char> = text.chars().collect();
    let needle: Vec<char> = surface.chars().collect();
    let mut out = Vec::new();
    if needle.len() > hay.len() {
        return out;
    }
    for s in 0..=hay.len() - needle.len() {
        let e = s + needle.len();
        if hay[s..e] == needle[..] && starts.contains(&s) && ends.contains(&e) {
            out.push(Span::new(s, e));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Corpus file format (JSON lines)
// ---------------------------------------------------------------------------

/// One corpus record: a document with every annotator's mention set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub doc: Document,
    pub annotations: Vec<AnnotationSet>,
}

impl AnnotatedDocument {
    pub fn new(doc: Document) -> AnnotatedDocument {
        AnnotatedDocument {
            doc,
            annotations: Vec::new(),
        }
    }

    pub fn annotator(&self, annotator_id: &str) -> Option<&AnnotationSet> {
        self.annotations.iter().find(|s| s.annotator_id == annotator_id)
    }

    pub fn annotator_mut(&mut self, annotator_id: &str) -> &mut AnnotationSet {
        if let Some(i) = self
            .annotations
            .iter()
            .position(|s| s.annotator_id == annotator_id)
        {
            return &mut self.annotations[i];
        }
        self.annotations
            .push(AnnotationSet::new(&self.doc.id, annotator_id));
        self.annotations.last_mut().expect("just pushed")
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {detail}")]
    Invalid { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordRepr {
    doc: Document,
    annotations: Vec<SetRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetRepr {
    annotator_id: String,
    mentions: Vec<MentionRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MentionRepr {
    id: String,
    start: usize,
    end: usize,
    node: String,
    modifiers: Vec<String>,
}

impl AnnotatedDocument {
    pub fn to_json_line(&self) -> String {
        let repr = RecordRepr {
            doc: self.doc.clone(),
            annotations: self
                .annotations
                .iter()
                .map(|s| SetRepr {
                    annotator_id: s.annotator_id.clone(),
                    mentions: s
                        .mentions
                        .iter()
                        .map(|m| MentionRepr {
                            id: m.id.clone(),
                            start: m.span.start,
                            end: m.span.end,
                            node: m.node_id.clone(),
                            modifiers: m.modifier_ids.iter().cloned().collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&repr).expect("record serializes")
    }

    pub fn from_json_line(line: &str, line_no: usize) -> Result<AnnotatedDocument, CorpusError> {
        let repr: RecordRepr = serde_json::from_str(line).map_err(|source| CorpusError::Json {
            line: line_no,
            source,
        })?;
        if repr.doc.text.is_empty() {
            return Err(CorpusError::Invalid {
                line: line_no,
                detail: format!("document `{}` has empty text", repr.doc.id),
            });
        }
        let doc_id = repr.doc.id.clone();
        let annotations = repr
            .annotations
            .into_iter()
            .map(|s| AnnotationSet {
                doc_id: doc_id.clone(),
                mentions: s
                    .mentions
                    .into_iter()
                    .map(|m| Mention {
                        id: m.id,
                        span: Span::new(m.start, m.end),
                        node_id: m.node,
                        modifier_ids: m.modifiers.into_iter().collect(),
                        annotator_id: s.annotator_id.clone(),
                    })
                    .collect(),
                annotator_id: s.annotator_id,
            })
            .collect();
        Ok(AnnotatedDocument {
            doc: repr.doc,
            annotations,
        })
    }
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<AnnotatedDocument>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = AnnotatedDocument::from_json_line(&line, i + 1)?;
        if !ids.insert(rec.doc.id.clone()) {
            return Err(CorpusError::Invalid {
                line: i + 1,
                detail: format!("duplicate document id `{}`", rec.doc.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus(mut writer: impl Write, corpus: &[AnnotatedDocument]) -> std::io::Result<()> {
    for rec in corpus {
        writeln!(writer, "{}", rec.to_json_line())?;
    }
    Ok(())
}

pub fn corpus_to_string(corpus: &[AnnotatedDocument]) -> String {
    let mut buf = Vec::new();
    write_corpus(&mut buf, corpus).expect("in-memory write");
    String::from_utf8(buf).expect("utf-8")
}

/// Validates every annotation set of every record against the ontology.
pub fn validate_corpus(
    corpus: &[AnnotatedDocument],
    ontology: &Ontology,
) -> Vec<(String, String, AnnotationError)> {
    let mut out = Vec::new();
    for rec in corpus {
        for set in &rec.annotations {
            if let Err(e) = set.validate(ontology, &rec.doc) {
                out.push((rec.doc.id.clone(), set.annotator_id.clone(), e));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Dataset splitting
// ---------------------------------------------------------------------------

/// Train/dev/test proportions derived from the reference corpus sentence
/// counts 73099 / 4216 / 4018.
pub const DEFAULT_RATIOS: SplitRatios = SplitRatios {
    train: 0.899,
    dev: 0.052,
    test: 0.049,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        DEFAULT_RATIOS
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("bad split ratios ({train}, {dev}, {test}): {reason}")]
pub struct BadRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
    pub reason: &'static str,
}

impl SplitRatios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<SplitRatios, BadRatios> {
        let bad = |reason| BadRatios {
            train,
            dev,
            test,
            reason,
        };
        if [train, dev, test].iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(bad("every ratio must be positive"));
        }
        if (train + dev + test - 1.0).abs() > 1e-9 {
            return Err(bad("ratios must sum to 1"));
        }
        Ok(SplitRatios { train, dev, test })
    }

    /// Floors each share of `n`, then hands the leftover items to the
    /// largest fractional remainders (train before dev before test on ties).
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let exact = [
            n as f64 * self.train,
            n as f64 * self.dev,
            n as f64 * self.test,
        ];
        let mut sizes = exact.map(|x| x.floor() as usize);
        let mut left = n.saturating_sub(sizes.iter().sum());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle followed by a contiguous partition by count.
pub fn split_dataset<T>(items: Vec<T>, ratios: SplitRatios, seed: u64) -> Split<T> {
    let mut items = items;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let [n_train, n_dev, _] = ratios.sizes(items.len());
    let test = items.split_off(n_train + n_dev);
    let dev = items.split_off(n_train);
    Split {
        train: items,
        dev,
        test,
    }
}

/// One row of the dataset description table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub set: String,
    pub documents: usize,
    pub vocabulary: usize,
    pub sentences: usize,
}

impl SplitStats {
    pub fn compute(set: &str, docs: &[AnnotatedDocument]) -> SplitStats {
        let mut vocab = BTreeSet::new();
        let mut sentences = 0;
        for d in docs {
            let t = tokenize(&d.doc.text);
            sentences += t.sentences.len();
            vocab.extend(t.tokens.into_iter().map(|t| t.form));
        }
        SplitStats {
            set: set.to_string(),
            documents: docs.len(),
            vocabulary: vocab.len(),
            sentences,
        }
    }
}

pub fn split_stats(split: &Split<AnnotatedDocument>) -> Vec<SplitStats> {
    vec![
        SplitStats::compute("Train", &split.train),
        SplitStats::compute("Dev", &split.dev),
        SplitStats::compute("Test", &split.test),
    ]
}

/// Tab-separated table with the columns Set, documents, vocabulary, sentences.
pub fn render_stats_table(stats: &[SplitStats]) -> String {
    let mut out = String::from("Set\tdocuments\tvocabulary\tsentences\n");
    for s in stats {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.set, s.documents, s.vocabulary, s.sentences
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Token-level training examples
// ---------------------------------------------------------------------------

/// A gold mention expressed as a sentence-local token range.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GoldMention {
    pub range: Range<usize>,
    pub node_id: String,
    pub modifier_ids: BTreeSet<String>,
}

/// One sentence of a document, with tokens carrying document char offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceExample {
    pub doc_id: String,
    pub tokens: Vec<Token>,
    pub gold: Vec<GoldMention>,
}

/// Splits a document into sentences and maps the annotator's mentions onto
/// token ranges. Mentions that do not align with tokens are widened to the
/// smallest covering token range. Mentions spanning a sentence boundary, or
/// that collide with an earlier mention after widening, are dropped with a
/// warning.
pub fn sentence_examples(doc: &Document, set: Option<&AnnotationSet>) -> Vec<SentenceExample> {
    let tokenized = tokenize(&doc.text);
    let mut examples: Vec<SentenceExample> = tokenized
        .sentences
        .iter()
        .map(|r| SentenceExample {
            doc_id: doc.id.clone(),
            tokens: tokenized.tokens[r.clone()].to_vec(),
            gold: Vec::new(),
        })
        .collect();
    let Some(set) = set else { return examples };

    let toks = &tokenized.tokens;
    for m in set.sorted_mentions() {
        let first = toks.iter().position(|t| t.span.end > m.span.start);
        let last = toks.iter().rposition(|t| t.span.start < m.span.end);
        let (Some(first), Some(last)) = (first, last) else {
            warn!("{}: mention {} covers no token, dropped", doc.id, m.id);
            continue;
        };
        if first > last {
            warn!("{}: mention {} covers no token, dropped", doc.id, m.id);
            continue;
        }
        if toks[first].span.start != m.span.start || toks[last].span.end != m.span.end {
            warn!(
                "{}: mention {} [{},{}) snapped to token bounds [{},{})",
                doc.id, m.id, m.span.start, m.span.end, toks[first].span.start, toks[last].span.end
            );
        }
        let Some(si) = tokenized
            .sentences
            .iter()
            .position(|r| r.contains(&first) && r.contains(&last))
        else {
            warn!("{}: mention {} spans a sentence boundary, dropped", doc.id, m.id);
            continue;
        };
        let offset = tokenized.sentences[si].start;
        let range = first - offset..last + 1 - offset;
        let ex = &mut examples[si];
        let clash = ex.gold.iter().any(|g| {
            (g.range == range && g.node_id == m.node_id) || ranges_cross(&g.range, &range)
        });
        if clash {
            warn!("{}: mention {} collides after snapping, dropped", doc.id, m.id);
            continue;
        }
        ex.gold.push(GoldMention {
            range,
            node_id: m.node_id.clone(),
            modifier_ids: m.modifier_ids.clone(),
        });
    }
    examples
}

pub fn ranges_cross(a: &Range<usize>, b: &Range<usize>) -> bool {
    let overlap = a.start < b.end && b.start < a.end;
    let a_in_b = b.start <= a.start && a.end <= b.end;
    let b_in_a = a.start <= b.start && b.end <= a.end;
    overlap && !a_in_b && !b_in_a
}

/// Sentence examples for a whole corpus, using one annotator's sets as gold.
pub fn corpus_examples(corpus: &[AnnotatedDocument], annotator_id: &str) -> Vec<SentenceExample> {
    corpus
        .iter()
        .flat_map(|d| sentence_examples(&d.doc, d.annotator(annotator_id)))
        .collect()
}

/// Groups record ids by patient.
pub fn documents_by_patient(corpus: &[AnnotatedDocument]) -> BTreeMap<&str, Vec<&str>> {
    let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for d in corpus {
        out.entry(d.doc.patient_id.as_str())
            .or_default()
            .push(d.doc.id.as_str());
    }
    out
}
