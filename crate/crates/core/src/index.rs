//! Per-patient concept index: which ontology nodes are cited where, and when.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedDocument, RecordType};
use crate::ontology::Ontology;
use crate::text::{char_slice, Span};

pub const INDEX_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "clinotate-index";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("document `{doc}` lacks {field}")]
    MissingMetadata { doc: String, field: &'static str },
    #[error("query names no concept")]
    EmptyQuery,
    #[error("index file line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where the indexed mentions come from. The two are never mixed in one index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Gold,
    Predicted,
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(SourceKind::Gold),
            "predicted" => Ok(SourceKind::Predicted),
            _ => Err(format!("unknown index source `{s}` (gold, predicted)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSource {
    pub kind: SourceKind,
    /// Annotation set read from each document.
    pub annotator_id: String,
}

impl IndexSource {
    pub fn gold(annotator_id: impl Into<String>) -> IndexSource {
        IndexSource {
            kind: SourceKind::Gold,
            annotator_id: annotator_id.into(),
        }
    }

    pub fn predicted(annotator_id: impl Into<String>) -> IndexSource {
        IndexSource {
            kind: SourceKind::Predicted,
            annotator_id: annotator_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub patient_id: String,
    pub doc_id: String,
    pub date: NaiveDate,
    pub record_type: RecordType,
    pub specialty: String,
    pub span: Span,
    pub node_id: String,
    pub modifier_ids: BTreeSet<String>,
    /// The cited text.
    pub surface: String,
}

impl Citation {
    fn order_key(&self) -> (NaiveDate, &str, usize, usize) {
        (self.date, &self.doc_id, self.span.start, self.span.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocMeta {
    pub patient_id: String,
    pub date: NaiveDate,
    pub record_type: RecordType,
    pub specialty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptFrequency {
    pub node_id: String,
    /// Most frequent surface form (smallest on ties).
    pub label: String,
    pub count: usize,
    /// Citations carrying the negation modifier.
    pub negated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Any,
    All,
}

impl FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "any" => Ok(QueryMode::Any),
            "all" => Ok(QueryMode::All),
            _ => Err(format!("unknown query mode `{s}` (any, all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextsResult {
    pub count: usize,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptIndex {
    pub source: IndexSource,
    /// (patient, node) -> citations ordered by (date, doc, span).
    pub postings: BTreeMap<(String, String), Vec<Citation>>,
    pub doc_concepts: BTreeMap<String, BTreeSet<String>>,
    pub docs: BTreeMap<String, DocMeta>,
}

/// Builds the index from one annotation set per document. Documents without
/// that set contribute metadata only.
pub fn build_index(
    corpus: &[AnnotatedDocument],
    source: &IndexSource,
) -> Result<ConceptIndex, IndexError> {
    let mut index = ConceptIndex {
        source: source.clone(),
        postings: BTreeMap::new(),
        doc_concepts: BTreeMap::new(),
        docs: BTreeMap::new(),
    };
    for ad in corpus {
        let d = &ad.doc;
        if d.patient_id.trim().is_empty() {
            return Err(IndexError::MissingMetadata { doc: d.id.clone(), field: "patient_id" });
        }
        if d.specialty.trim().is_empty() {
            return Err(IndexError::MissingMetadata { doc: d.id.clone(), field: "specialty" });
        }
        index.docs.insert(
            d.id.clone(),
            DocMeta {
                patient_id: d.patient_id.clone(),
                date: d.date,
                record_type: d.record_type,
                specialty: d.specialty.clone(),
            },
        );
        let Some(set) = ad.annotator(&source.annotator_id) else { continue };
        for m in &set.mentions {
            index.doc_concepts.entry(d.id.clone()).or_default().insert(m.node_id.clone());
            index
                .postings
                .entry((d.patient_id.clone(), m.node_id.clone()))
                .or_default()
                .push(Citation {
                    patient_id: d.patient_id.clone(),
                    doc_id: d.id.clone(),
                    date: d.date,
                    record_type: d.record_type,
                    specialty: d.specialty.clone(),
                    span: m.span,
                    node_id: m.node_id.clone(),
                    modifier_ids: m.modifier_ids.clone(),
                    surface: char_slice(&d.text, m.span),
                });
        }
    }
    for list in index.postings.values_mut() {
        list.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        list.dedup();
    }
    Ok(index)
}

impl ConceptIndex {
    pub fn patients(&self) -> BTreeSet<&str> {
        self.docs.values().map(|d| d.patient_id.as_str()).collect()
    }

    fn patient_postings<'a>(
        &'a self,
        patient_id: &'a str,
    ) -> impl Iterator<Item = (&'a String, &'a Vec<Citation>)> + 'a {
        self.postings
            .range((patient_id.to_string(), String::new())..)
            .take_while(move |((p, _), _)| p == patient_id)
            .map(|((_, n), v)| (n, v))
    }

    pub fn citation_count(&self, patient_id: &str) -> usize {
        self.patient_postings(patient_id).map(|(_, v)| v.len()).sum()
    }

    /// Nodes cited for the patient, most cited first, then by node id.
    pub fn concept_frequencies(&self, patient_id: &str) -> Vec<ConceptFrequency> {
        let mut out: Vec<ConceptFrequency> = self
            .patient_postings(patient_id)
            .map(|(node, cites)| {
                let mut surfaces: BTreeMap<&str, usize> = BTreeMap::new();
                for c in cites {
                    *surfaces.entry(c.surface.as_str()).or_default() += 1;
                }
                // BTreeMap order makes the smallest surface win ties
                let label = surfaces
                    .iter()
                    .fold(("", 0), |best, (s, &n)| if n > best.1 { (s, n) } else { best })
                    .0
                    .to_string();
                ConceptFrequency {
                    node_id: node.clone(),
                    label,
                    count: cites.len(),
                    negated: cites
                        .iter()
                        .filter(|c| c.modifier_ids.contains(crate::ontology::NEGATION))
                        .count(),
                }
            })
            .collect();
        out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.node_id.cmp(&b.node_id)));
        out
    }

    /// Citations of `node_id` for the patient in chronological order.
    pub fn timeline(&self, patient_id: &str, node_id: &str) -> Vec<Citation> {
        self.postings
            .get(&(patient_id.to_string(), node_id.to_string()))
            .cloned()
            .unwrap_or_default()
    }

    /// Like [`timeline`](Self::timeline), but also citing every descendant
    /// of `node_id`.
    pub fn timeline_widened(&self, patient_id: &str, node_id: &str, ontology: &Ontology) -> Vec<Citation> {
        let closure = closure(node_id, Some(ontology));
        let mut out: Vec<Citation> = closure
            .iter()
            .flat_map(|n| self.timeline(patient_id, n))
            .collect();
        out.sort_by(|a, b| {
            a.order_key()
                .cmp(&b.order_key())
                .then_with(|| a.node_id.cmp(&b.node_id))
        });
        out
    }

    /// Documents of the patient citing any (or all) of `node_ids`, ordered by
    /// date then id. With `widen`, each query node also matches its
    /// descendants.
    pub fn texts_with_concepts(
        &self,
        patient_id: &str,
        node_ids: &BTreeSet<String>,
        mode: QueryMode,
        widen: Option<&Ontology>,
    ) -> Result<TextsResult, IndexError> {
        if node_ids.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let closures: Vec<BTreeSet<String>> = node_ids.iter().map(|n| closure(n, widen)).collect();
        let mut docs: Vec<(&NaiveDate, &String)> = self
            .docs
            .iter()
            .filter(|(_, m)| m.patient_id == patient_id)
            .filter(|(id, _)| {
                let Some(concepts) = self.doc_concepts.get(*id) else { return false };
                let hit = |c: &BTreeSet<String>| c.iter().any(|n| concepts.contains(n));
                match mode {
                    QueryMode::Any => closures.iter().any(hit),
                    QueryMode::All => closures.iter().all(hit),
                }
            })
            .map(|(id, m)| (&m.date, id))
            .collect();
        docs.sort();
        let doc_ids: Vec<String> = docs.into_iter().map(|(_, id)| id.clone()).collect();
        Ok(TextsResult {
            count: doc_ids.len(),
            doc_ids,
        })
    }
}

fn closure(node_id: &str, widen: Option<&Ontology>) -> BTreeSet<String> {
    let mut out = BTreeSet::from([node_id.to_string()]);
    if let Some(o) = widen {
        if let Ok(d) = o.descendants(node_id) {
            out.extend(d);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Persistence: a header line, then one JSON record per line (documents first,
// then postings lists in key order), then an end marker with the counts.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DocRecord {
    doc_id: String,
    #[serde(flatten)]
    meta: DocMeta,
}

#[derive(Serialize, Deserialize)]
struct PostingsRecord {
    patient_id: String,
    node_id: String,
    citations: Vec<Citation>,
}

pub fn save_index(index: &ConceptIndex, mut sink: impl Write) -> std::io::Result<()> {
    let kind = match index.source.kind {
        SourceKind::Gold => "gold",
        SourceKind::Predicted => "predicted",
    };
    writeln!(sink, "{MAGIC}\t{INDEX_FORMAT_VERSION}\t{kind}\t{}", index.source.annotator_id)?;
    for (id, meta) in &index.docs {
        let r = DocRecord {
            doc_id: id.clone(),
            meta: meta.clone(),
        };
        writeln!(sink, "D\t{}", serde_json::to_string(&r)?)?;
    }
    for ((p, n), cites) in &index.postings {
        let r = PostingsRecord {
            patient_id: p.clone(),
            node_id: n.clone(),
            citations: cites.clone(),
        };
        writeln!(sink, "P\t{}", serde_json::to_string(&r)?)?;
    }
    writeln!(sink, "end\t{}\t{}", index.docs.len(), index.postings.len())?;
    sink.flush()
}

pub fn load_index(source: impl BufRead) -> Result<ConceptIndex, IndexError> {
    let fmt = |line: usize, detail: String| IndexError::Format { line, detail };
    let mut lines = source.lines();
    let header = lines.next().ok_or_else(|| fmt(1, "empty file".into()))??;
    let parts: Vec<&str> = header.split('\t').collect();
    let source = match parts.as_slice() {
        [MAGIC, v, kind, annotator] => {
            if *v != INDEX_FORMAT_VERSION.to_string() {
                return Err(fmt(1, format!("unsupported format version {v}")));
            }
            IndexSource {
                kind: kind.parse().map_err(|e| fmt(1, e))?,
                annotator_id: annotator.to_string(),
            }
        }
        _ => return Err(fmt(1, "not an index file".into())),
    };
    let mut index = ConceptIndex {
        source,
        postings: BTreeMap::new(),
        doc_concepts: BTreeMap::new(),
        docs: BTreeMap::new(),
    };
    let mut ended = false;
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line?;
        if ended {
            return Err(fmt(n, "content after end marker".into()));
        }
        let (tag, body) = line.split_once('\t').ok_or_else(|| fmt(n, "malformed line".into()))?;
        match tag {
            "D" => {
                let r: DocRecord = serde_json::from_str(body).map_err(|e| fmt(n, e.to_string()))?;
                index.docs.insert(r.doc_id, r.meta);
            }
            "P" => {
                let r: PostingsRecord =
                    serde_json::from_str(body).map_err(|e| fmt(n, e.to_string()))?;
                for c in &r.citations {
                    index
                        .doc_concepts
                        .entry(c.doc_id.clone())
                        .or_default()
                        .insert(c.node_id.clone());
                }
                index.postings.insert((r.patient_id, r.node_id), r.citations);
            }
            "end" => {
                let want = format!("{}\t{}", index.docs.len(), index.postings.len());
                if body != want {
                    return Err(fmt(n, format!("record counts `{body}` do not match `{want}`")));
                }
                ended = true;
            }
            _ => return Err(fmt(n, format!("unknown record tag `{tag}`"))),
        }
    }
    if !ended {
        return Err(fmt(0, "truncated file: missing end marker".into()));
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotationSet, Document, Mention};
    use proptest::prelude::*;

    const SCLERO: &str = "pathological_conditions/degenerative";
    const OTHER: &str = "clinical_findings/symptoms_signs";

    fn doc(id: &str, patient: &str, day: u32, text: &str) -> Document {
        Document {
            id: id.into(),
            patient_id: patient.into(),
            date: NaiveDate::from_ymd_opt(2021, 3, day).unwrap(),
            record_type: RecordType::DailyNote,
            specialty: "reumatologia".into(),
            text: text.into(),
        }
    }

    fn annotated(d: Document, mentions: Vec<(usize, usize, &str)>) -> AnnotatedDocument {
        let mut set = AnnotationSet::new(&d.id, "gold");
        set.mentions = mentions
            .into_iter()
            .enumerate()
            .map(|(i, (s, e, n))| Mention::new(Span::new(s, e), n).with_id(format!("m{i}")))
            .collect();
        AnnotatedDocument {
            doc: d,
            annotations: vec![set],
        }
    }

    /// One patient, five documents, twelve citations of one node and three of
    /// another, across three dates.
    fn fixture() -> Vec<AnnotatedDocument> {
        let t = "Esclerodermia ; esclerodermia ; Esclerodermia ; tosse";
        let e = |s: usize| (s, s + 13, SCLERO);
        vec![
            annotated(doc("d1", "p1", 1, t), vec![e(0), e(16), e(32), (48, 53, OTHER)]),
            annotated(doc("d2", "p1", 1, t), vec![e(0), e(16)]),
            annotated(doc("d3", "p1", 5, t), vec![e(0), e(16), e(32), (48, 53, OTHER)]),
            annotated(doc("d4", "p1", 9, t), vec![e(0), e(32)]),
            annotated(doc("d5", "p1", 9, t), vec![e(0), e(16), (48, 53, OTHER)]),
            annotated(doc("d6", "p2", 9, t), vec![e(16)]),
        ]
    }

    #[test]
    fn frequencies_and_label() {
        let idx = build_index(&fixture(), &IndexSource::gold("gold")).unwrap();
        let f = idx.concept_frequencies("p1");
        assert_eq!(f.len(), 2);
        assert_eq!((f[0].node_id.as_str(), f[0].count), (SCLERO, 12));
        assert_eq!(f[0].label, "Esclerodermia");
        assert_eq!(f[1].count, 3);
        assert!(idx.concept_frequencies("nobody").is_empty());
        assert_eq!(idx.postings[&("p1".to_string(), SCLERO.to_string())].len(), 12);
    }

    #[test]
    fn timeline_order() {
        let idx = build_index(&fixture(), &IndexSource::gold("gold")).unwrap();
        let tl = idx.timeline("p1", OTHER);
        let dates: Vec<u32> = tl.iter().map(|c| chrono::Datelike::day(&c.date)).collect();
        assert_eq!(dates, vec![1, 5, 9]);
        let tl = idx.timeline("p1", SCLERO);
        assert_eq!(tl[0].doc_id, "d1");
        assert!(tl[0].span.start < tl[1].span.start);
        assert!(idx.timeline("p1", "tests").is_empty());
    }

    #[test]
    fn texts_any_all() {
        let idx = build_index(&fixture(), &IndexSource::gold("gold")).unwrap();
        let q = |ns: &[&str], mode| {
            let set = ns.iter().map(|s| s.to_string()).collect();
            idx.texts_with_concepts("p1", &set, mode, None).unwrap()
        };
        let any = q(&[OTHER], QueryMode::Any);
        assert_eq!(any.count, 3);
        assert_eq!(any.doc_ids, vec!["d1", "d3", "d5"]);
        assert_eq!(q(&[SCLERO, OTHER], QueryMode::All).count, 3);
        assert_eq!(q(&[SCLERO, "tests"], QueryMode::All), TextsResult { count: 0, doc_ids: vec![] });
        assert!(matches!(
            idx.texts_with_concepts("p1", &BTreeSet::new(), QueryMode::Any, None),
            Err(IndexError::EmptyQuery)
        ));
    }

    #[test]
    fn widening_to_descendants() {
        let o = Ontology::seed();
        let idx = build_index(&fixture(), &IndexSource::gold("gold")).unwrap();
        let q = BTreeSet::from(["pathological_conditions".to_string()]);
        assert_eq!(idx.texts_with_concepts("p1", &q, QueryMode::Any, None).unwrap().count, 0);
        assert_eq!(idx.texts_with_concepts("p1", &q, QueryMode::Any, Some(&o)).unwrap().count, 5);
        assert_eq!(idx.timeline_widened("p1", "pathological_conditions", &o).len(), 12);
    }

    #[test]
    fn empty_and_missing_metadata() {
        let idx = build_index(&[], &IndexSource::gold("gold")).unwrap();
        assert!(idx.postings.is_empty());
        let mut bad = fixture();
        bad[2].doc.specialty = " ".into();
        assert!(matches!(
            build_index(&bad, &IndexSource::gold("gold")),
            Err(IndexError::MissingMetadata { field: "specialty", .. })
        ));
    }

    #[test]
    fn rebuild_is_identical_and_persists() {
        let a = build_index(&fixture(), &IndexSource::gold("gold")).unwrap();
        let b = build_index(&fixture(), &IndexSource::gold("gold")).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        save_index(&a, &mut buf).unwrap();
        let back = load_index(buf.as_slice()).unwrap();
        assert_eq!(back, a);
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(load_index(cut.as_bytes()), Err(IndexError::Format { .. })));
    }

    #[test]
    fn negated_citations_are_kept_and_flagged() {
        let mut c = fixture();
        c[0].annotations[0].mentions[3].modifier_ids.insert("negation".into());
        let idx = build_index(&c, &IndexSource::gold("gold")).unwrap();
        let f = idx.concept_frequencies("p1");
        assert_eq!((f[1].count, f[1].negated), (3, 1));
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<AnnotatedDocument>> {
        let nodes = vec![SCLERO, OTHER, "tests", "devices"];
        let mention = (0usize..30, 1usize..5, prop::sample::select(nodes));
        let docspec = (0usize..3, 1u32..20, prop::collection::vec(mention, 0..6));
        prop::collection::vec(docspec, 0..15).prop_map(|docs| {
            docs.into_iter()
                .enumerate()
                .map(|(i, (p, day, ms))| {
                    let d = doc(&format!("d{i:02}"), &format!("p{p}"), day, &"x".repeat(40));
                    let ms = ms.into_iter().map(|(s, l, n)| (s, s + l, n)).collect();
                    annotated(d, ms)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn frequency_sums_and_timeline_lengths(corpus in arb_corpus()) {
            let idx = build_index(&corpus, &IndexSource::gold("gold")).unwrap();
            for p in idx.patients() {
                let total: usize = idx.concept_frequencies(p).iter().map(|f| f.count).sum();
                prop_assert_eq!(total, idx.citation_count(p));
                for f in idx.concept_frequencies(p) {
                    let tl = idx.timeline(p, &f.node_id);
                    prop_assert_eq!(tl.len(), f.count);
                    prop_assert!(tl.windows(2).all(|w| w[0].date <= w[1].date));
                }
            }
        }
    }
}
