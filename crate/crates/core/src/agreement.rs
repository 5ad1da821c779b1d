//! Inter-annotator agreement as pairwise mention F1.
//!
//! Matching is one-to-one and greedy. Candidate pairs are visited by boundary
//! distance (`|Δstart| + |Δend|`, always zero outside relaxed mode), then by
//! document position, and the first unmatched candidate wins. The visiting key
//! is symmetric in the two sets, so the match count does not depend on which
//! annotator is called `a`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedDocument, AnnotationSet, Mention};
use crate::ontology::Ontology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Same span, same node.
    Exact,
    /// Spans share at least one character, same node.
    Relaxed,
    /// Same span, same level-1 class.
    ClassOnly,
}

impl MatchMode {
    pub const ALL: [MatchMode; 3] = [MatchMode::Exact, MatchMode::Relaxed, MatchMode::ClassOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            MatchMode::Exact => "exact",
            MatchMode::Relaxed => "relaxed",
            MatchMode::ClassOnly => "class_only",
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "relaxed" => Ok(MatchMode::Relaxed),
            "class_only" | "class-only" => Ok(MatchMode::ClassOnly),
            _ => Err(format!("unknown match mode `{s}` (exact, relaxed, class_only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgreementError {
    #[error("annotation sets refer to different documents (`{0}` vs `{1}`)")]
    DocMismatch(String, String),
    #[error("no document carries annotations from two annotators")]
    NoOverlap,
}

/// Precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// `matched` correct items against `predicted` and `reference` totals.
    /// Empty denominators give 0.
    pub fn from_counts(matched: usize, predicted: usize, reference: usize) -> Prf {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Prf {
            precision: ratio(matched, predicted),
            recall: ratio(matched, reference),
            f1: ratio(2 * matched, predicted + reference),
        }
    }
}

/// Raw counts behind one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub matched: usize,
    pub a_total: usize,
    pub b_total: usize,
}

impl MatchCounts {
    /// Recall is the share of `a` recovered by `b`, precision the share of
    /// `b` confirmed by `a`.
    pub fn prf(&self) -> Prf {
        Prf::from_counts(self.matched, self.b_total, self.a_total)
    }

    fn add(&mut self, other: MatchCounts) {
        self.matched += other.matched;
        self.a_total += other.a_total;
        self.b_total += other.b_total;
    }
}

/// Level-1 classes of a node. Nodes outside the catalog form a class of
/// their own.
fn classes_of(ontology: &Ontology, node: &str) -> BTreeSet<String> {
    ontology
        .level1_ancestors(node)
        .unwrap_or_else(|_| BTreeSet::from([node.to_string()]))
}

/// The class a mention is reported under: its smallest level-1 ancestor.
pub fn primary_class(ontology: &Ontology, node: &str) -> String {
    classes_of(ontology, node)
        .into_iter()
        .next()
        .unwrap_or_else(|| node.to_string())
}

fn compatible(mode: MatchMode, x: &Mention, y: &Mention, ontology: &Ontology) -> bool {
    match mode {
        MatchMode::Exact => x.span == y.span && x.node_id == y.node_id,
        MatchMode::Relaxed => x.span.overlaps(&y.span) && x.node_id == y.node_id,
        MatchMode::ClassOnly => {
            x.span == y.span && classes_of(ontology, &x.node_id) == classes_of(ontology, &y.node_id)
        }
    }
}

/// One-to-one matching between two mention lists; returns index pairs.
pub fn match_mentions(
    a: &[Mention],
    b: &[Mention],
    mode: MatchMode,
    ontology: &Ontology,
) -> Vec<(usize, usize)> {
    let sort_key = |m: &Mention| (m.span.start, m.span.end, m.node_id.clone());
    let mut candidates = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if !compatible(mode, x, y, ontology) {
                continue;
            }
            let dist = x.span.start.abs_diff(y.span.start) + x.span.end.abs_diff(y.span.end);
            let (kx, ky) = (sort_key(x), sort_key(y));
            let (lo, hi) = if kx <= ky { (kx, ky) } else { (ky, kx) };
            candidates.push(((dist, lo, hi), i, j));
        }
    }
    candidates.sort_by(|p, q| p.0.cmp(&q.0));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

pub fn pairwise_counts(
    a: &AnnotationSet,
    b: &AnnotationSet,
    mode: MatchMode,
    ontology: &Ontology,
) -> Result<MatchCounts, AgreementError> {
    if a.doc_id != b.doc_id {
        return Err(AgreementError::DocMismatch(a.doc_id.clone(), b.doc_id.clone()));
    }
    Ok(MatchCounts {
        matched: match_mentions(&a.mentions, &b.mentions, mode, ontology).len(),
        a_total: a.mentions.len(),
        b_total: b.mentions.len(),
    })
}

/// Recall is measured against `a`, precision over `b`; F1 is symmetric.
pub fn pairwise_agreement(
    a: &AnnotationSet,
    b: &AnnotationSet,
    mode: MatchMode,
    ontology: &Ontology,
) -> Result<Prf, AgreementError> {
    Ok(pairwise_counts(a, b, mode, ontology)?.prf())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub annotator_a: String,
    pub annotator_b: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Documents annotated by both.
    pub support: usize,
    pub counts: MatchCounts,
    /// Share of exactly matched mentions whose modifier sets agree; `None`
    /// when nothing matched exactly.
    pub modifier_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub mode: MatchMode,
    pub pairs: Vec<PairAgreement>,
    /// F1 per level-1 class, pooled over all pairs.
    pub per_class: BTreeMap<String, f64>,
}

#[derive(Default)]
struct PairAccumulator {
    support: usize,
    counts: MatchCounts,
    modifier_agree: usize,
    exact_matched: usize,
}

/// Micro-averaged agreement for every annotator pair sharing a document.
pub fn agreement_report(
    corpus: &[AnnotatedDocument],
    mode: MatchMode,
    ontology: &Ontology,
) -> Result<AgreementReport, AgreementError> {
    let mut pairs: BTreeMap<(String, String), PairAccumulator> = BTreeMap::new();
    let mut per_class: BTreeMap<String, MatchCounts> = BTreeMap::new();

    for doc in corpus {
        let mut sets: Vec<&AnnotationSet> = doc.annotations.iter().collect();
        sets.sort_by(|x, y| x.annotator_id.cmp(&y.annotator_id));
        for (i, a) in sets.iter().enumerate() {
            for b in &sets[i + 1..] {
                let acc = pairs
                    .entry((a.annotator_id.clone(), b.annotator_id.clone()))
                    .or_default();
                acc.support += 1;
                let matches = match_mentions(&a.mentions, &b.mentions, mode, ontology);
                acc.counts.add(MatchCounts {
                    matched: matches.len(),
                    a_total: a.mentions.len(),
                    b_total: b.mentions.len(),
                });

                for m in &a.mentions {
                    per_class.entry(primary_class(ontology, &m.node_id)).or_default().a_total += 1;
                }
                for m in &b.mentions {
                    per_class.entry(primary_class(ontology, &m.node_id)).or_default().b_total += 1;
                }
                for &(ia, _) in &matches {
                    let class = primary_class(ontology, &a.mentions[ia].node_id);
                    per_class.entry(class).or_default().matched += 1;
                }

                let exact = match_mentions(&a.mentions, &b.mentions, MatchMode::Exact, ontology);
                acc.exact_matched += exact.len();
                acc.modifier_agree += exact
                    .iter()
                    .filter(|&&(ia, ib)| a.mentions[ia].modifier_ids == b.mentions[ib].modifier_ids)
                    .count();
            }
        }
    }
    if pairs.is_empty() {
        return Err(AgreementError::NoOverlap);
    }

    let pairs = pairs
        .into_iter()
        .map(|((annotator_a, annotator_b), acc)| {
            let prf = acc.counts.prf();
            PairAgreement {
                annotator_a,
                annotator_b,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                support: acc.support,
                counts: acc.counts,
                modifier_accuracy: (acc.exact_matched > 0)
                    .then(|| acc.modifier_agree as f64 / acc.exact_matched as f64),
            }
        })
        .collect();
    Ok(AgreementReport {
        mode,
        pairs,
        per_class: per_class.into_iter().map(|(c, n)| (c, n.prf().f1)).collect(),
    })
}

impl AgreementReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut rows = vec![vec![
            "annotator_a".to_string(),
            "annotator_b".into(),
            "docs".into(),
            "P".into(),
            "R".into(),
            "F1".into(),
            "modifiers".into(),
        ]];
        for p in &self.pairs {
            rows.push(vec![
                p.annotator_a.clone(),
                p.annotator_b.clone(),
                p.support.to_string(),
                format!("{:.4}", p.precision),
                format!("{:.4}", p.recall),
                format!("{:.4}", p.f1),
                p.modifier_accuracy.map_or("-".into(), |m| format!("{m:.4}")),
            ]);
        }
        let mut out = format!("mode: {}\n", self.mode);
        out.push_str(&align(&rows));
        out.push('\n');
        let mut class_rows = vec![vec!["class".to_string(), "F1".into()]];
        for (c, f1) in &self.per_class {
            class_rows.push(vec![c.clone(), format!("{f1:.4}")]);
        }
        out.push_str(&align(&class_rows));
        out
    }
}

/// Left-aligned columns separated by two spaces.
pub(crate) fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{s:<w$}", w = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Span;
    use proptest::prelude::*;

    fn m(s: usize, e: usize, node: &str) -> Mention {
        Mention::new(Span::new(s, e), node)
    }

    fn set(annotator: &str, mentions: Vec<Mention>) -> AnnotationSet {
        AnnotationSet {
            doc_id: "d1".into(),
            annotator_id: annotator.into(),
            mentions,
        }
    }

    const FINDING: &str = "clinical_findings";
    const ANAT: &str = "anatomic_structure";
    const SYMPTOMS: &str = "clinical_findings/symptoms_signs";

    #[test]
    fn identical_sets() {
        let o = Ontology::seed();
        let ms = vec![m(0, 15, FINDING), m(8, 15, ANAT), m(20, 25, FINDING), m(30, 34, "tests")];
        let r = pairwise_agreement(&set("a", ms.clone()), &set("b", ms), MatchMode::Exact, &o).unwrap();
        assert_eq!(r, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn half_overlap() {
        let o = Ontology::seed();
        let a = set("a", vec![m(0, 5, FINDING), m(6, 9, ANAT), m(10, 14, FINDING), m(20, 24, "tests")]);
        let b = set("b", vec![m(0, 5, FINDING), m(6, 9, ANAT), m(10, 14, ANAT), m(30, 34, "tests")]);
        let r = pairwise_agreement(&a, &b, MatchMode::Exact, &o).unwrap();
        assert_eq!(r, Prf { precision: 0.5, recall: 0.5, f1: 0.5 });
    }

    #[test]
    fn empty_side() {
        let o = Ontology::seed();
        let r = pairwise_agreement(&set("a", vec![]), &set("b", vec![m(0, 3, FINDING)]), MatchMode::Exact, &o)
            .unwrap();
        assert_eq!(r, Prf::default());
    }

    #[test]
    fn doc_mismatch() {
        let o = Ontology::seed();
        let mut b = set("b", vec![]);
        b.doc_id = "d2".into();
        assert_eq!(
            pairwise_agreement(&set("a", vec![]), &b, MatchMode::Exact, &o),
            Err(AgreementError::DocMismatch("d1".into(), "d2".into()))
        );
    }

    #[test]
    fn modes_differ_as_defined() {
        let o = Ontology::seed();
        let a = set("a", vec![m(0, 10, FINDING)]);
        let shifted = set("b", vec![m(2, 12, FINDING)]);
        let child = set("b", vec![m(0, 10, SYMPTOMS)]);
        let f = |x: &AnnotationSet, mode| pairwise_agreement(&a, x, mode, &o).unwrap().f1;
        assert_eq!(f(&shifted, MatchMode::Exact), 0.0);
        assert_eq!(f(&shifted, MatchMode::Relaxed), 1.0);
        assert_eq!(f(&shifted, MatchMode::ClassOnly), 0.0);
        assert_eq!(f(&child, MatchMode::Exact), 0.0);
        assert_eq!(f(&child, MatchMode::ClassOnly), 1.0);
    }

    #[test]
    fn relaxed_is_one_to_one() {
        let o = Ontology::seed();
        let a = set("a", vec![m(0, 10, FINDING)]);
        let b = set("b", vec![m(0, 4, FINDING), m(5, 10, FINDING)]);
        let c = pairwise_counts(&a, &b, MatchMode::Relaxed, &o).unwrap();
        assert_eq!(c.matched, 1);
        // the closer candidate wins
        assert_eq!(match_mentions(&a.mentions, &b.mentions, MatchMode::Relaxed, &o), vec![(0, 1)]);
    }

    fn doc_with(sets: Vec<AnnotationSet>, id: &str) -> AnnotatedDocument {
        use crate::corpus::{Document, RecordType};
        AnnotatedDocument {
            doc: Document {
                id: id.into(),
                patient_id: "p".into(),
                date: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
                record_type: RecordType::DailyNote,
                specialty: "x".into(),
                text: "x".repeat(100),
            },
            annotations: sets
                .into_iter()
                .map(|mut s| {
                    s.doc_id = id.into();
                    s
                })
                .collect(),
        }
    }

    #[test]
    fn report_micro_counts() {
        // 10 matches, 12 mentions from a and 14 from b across two documents
        let o = Ontology::seed();
        let shared: Vec<Mention> = (0..10).map(|i| m(i * 5, i * 5 + 3, FINDING)).collect();
        let mut a1 = shared[..6].to_vec();
        a1.push(m(60, 62, FINDING));
        let mut b1 = shared[..6].to_vec();
        b1.extend([m(70, 72, FINDING), m(74, 76, FINDING), m(78, 80, FINDING)]);
        let mut a2 = shared[6..].to_vec();
        a2.push(m(90, 92, ANAT));
        let mut b2 = shared[6..].to_vec();
        b2.push(m(60, 62, ANAT));
        let corpus = vec![
            doc_with(vec![set("ann1", a1), set("ann2", b1)], "d1"),
            doc_with(vec![set("ann2", b2), set("ann1", a2)], "d2"),
        ];
        let r = agreement_report(&corpus, MatchMode::Exact, &o).unwrap();
        assert_eq!(r.pairs.len(), 1);
        let p = &r.pairs[0];
        assert_eq!((p.annotator_a.as_str(), p.annotator_b.as_str()), ("ann1", "ann2"));
        assert_eq!(p.counts, MatchCounts { matched: 10, a_total: 12, b_total: 14 });
        assert_eq!(p.precision, 10.0 / 14.0);
        assert_eq!(p.recall, 10.0 / 12.0);
        assert_eq!(p.support, 2);
        assert_eq!(p.modifier_accuracy, Some(1.0));
        assert_eq!(r.per_class[ANAT], 0.0);
        assert!(r.to_table().contains("ann1"));
    }

    #[test]
    fn single_document_report_equals_pairwise() {
        let o = Ontology::seed();
        let a = set("x", vec![m(0, 5, FINDING), m(6, 9, ANAT)]);
        let b = set("y", vec![m(0, 5, FINDING)]);
        let prf = pairwise_agreement(&a, &b, MatchMode::Exact, &o).unwrap();
        let r = agreement_report(&[doc_with(vec![a, b], "d1")], MatchMode::Exact, &o).unwrap();
        assert_eq!((r.pairs[0].precision, r.pairs[0].recall, r.pairs[0].f1), (prf.precision, prf.recall, prf.f1));
    }

    #[test]
    fn total_disagreement_and_no_overlap() {
        let o = Ontology::seed();
        let corpus = vec![doc_with(vec![set("x", vec![m(0, 5, FINDING)]), set("y", vec![m(6, 9, ANAT)])], "d1")];
        let r = agreement_report(&corpus, MatchMode::Relaxed, &o).unwrap();
        assert_eq!(r.pairs[0].f1, 0.0);
        let single = vec![doc_with(vec![set("x", vec![])], "d1")];
        assert_eq!(agreement_report(&single, MatchMode::Exact, &o), Err(AgreementError::NoOverlap));
    }

    #[test]
    fn modifier_accuracy_over_exact_matches() {
        let o = Ontology::seed();
        let a = set("x", vec![m(0, 5, FINDING).with_modifiers(["negation"]), m(6, 9, FINDING)]);
        let b = set("y", vec![m(0, 5, FINDING), m(6, 9, FINDING)]);
        let r = agreement_report(&[doc_with(vec![a, b], "d1")], MatchMode::Exact, &o).unwrap();
        assert_eq!(r.pairs[0].modifier_accuracy, Some(0.5));
    }

    fn arb_mentions() -> impl Strategy<Value = Vec<Mention>> {
        let nodes = prop::sample::select(vec![FINDING, ANAT, SYMPTOMS, "tests"]);
        prop::collection::vec((0usize..30, 1usize..8, nodes), 0..8)
            .prop_map(|v| v.into_iter().map(|(s, l, n)| m(s, s + l, n)).collect())
    }

    proptest! {
        #[test]
        fn f1_symmetric_and_exact_within_relaxed(a in arb_mentions(), b in arb_mentions()) {
            let o = Ontology::seed();
            let (a, b) = (set("a", a), set("b", b));
            for mode in MatchMode::ALL {
                let ab = pairwise_counts(&a, &b, mode, &o).unwrap();
                let ba = pairwise_counts(&b, &a, mode, &o).unwrap();
                prop_assert_eq!(ab.matched, ba.matched);
                prop_assert_eq!(ab.prf().f1, ba.prf().f1);
                let prf = ab.prf();
                for v in [prf.precision, prf.recall, prf.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let exact = match_mentions(&a.mentions, &b.mentions, MatchMode::Exact, &o);
            let relaxed = match_mentions(&a.mentions, &b.mentions, MatchMode::Relaxed, &o);
            for p in &exact {
                prop_assert!(relaxed.contains(p));
            }
        }
    }
}
