//! Exact-match NERC scoring of predicted mentions against gold.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{align, primary_class, Prf};
use crate::corpus::{AnnotationSet, Mention};
use crate::ontology::Ontology;
use crate::parser::nesting_depths;
use crate::text::Span;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("gold and predicted cover different documents: {0}")]
    DocMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn prf(&self) -> Prf {
        Prf::from_counts(self.correct, self.predicted, self.gold)
    }

    fn add(&mut self, o: Counts) {
        self.gold += o.gold;
        self.predicted += o.predicted;
        self.correct += o.correct;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub counts: Counts,
    pub scores: Prf,
}

impl From<Counts> for Cell {
    fn from(counts: Counts) -> Cell {
        Cell {
            counts,
            scores: counts.prf(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: Prf,
    pub macro_by_level1: BTreeMap<String, Cell>,
    pub by_depth: BTreeMap<usize, Cell>,
    /// Exact modifier-set agreement over correct mentions (0 when none).
    pub modifier_accuracy: f64,
    /// Per modifier id: share of correct mentions where gold and prediction
    /// agree on its presence. Only modifiers seen on either side are listed.
    pub modifier_accuracy_by_id: BTreeMap<String, f64>,
    pub counts: Counts,
}

fn by_doc(sets: &[AnnotationSet]) -> BTreeMap<&str, Vec<&Mention>> {
    let mut out: BTreeMap<&str, Vec<&Mention>> = BTreeMap::new();
    for s in sets {
        out.entry(s.doc_id.as_str()).or_default().extend(&s.mentions);
    }
    out
}

fn depths(mentions: &[&Mention]) -> Vec<usize> {
    let ranges: Vec<_> = mentions.iter().map(|m| m.span.start..m.span.end).collect();
    nesting_depths(&ranges)
}

#[derive(Default)]
struct Tally {
    total: Counts,
    by_class: BTreeMap<String, Counts>,
    by_depth: BTreeMap<usize, Counts>,
    modifier_exact: usize,
    modifier_ids: BTreeMap<String, usize>,
    correct_pairs: Vec<(BTreeSet<String>, BTreeSet<String>)>,
}

/// Scores predictions against gold. Both sides must cover the same
/// documents; a document may appear in several sets on one side, whose
/// mentions are then pooled.
pub fn nerc_scores(
    gold: &[AnnotationSet],
    pred: &[AnnotationSet],
    ontology: &Ontology,
) -> Result<EvalReport, EvalError> {
    let gold = by_doc(gold);
    let pred = by_doc(pred);
    let gk: BTreeSet<&str> = gold.keys().copied().collect();
    let pk: BTreeSet<&str> = pred.keys().copied().collect();
    if gk != pk {
        let diff: Vec<&str> = gk.symmetric_difference(&pk).copied().collect();
        return Err(EvalError::DocMismatch(diff.join(", ")));
    }

    let mut t = Tally::default();
    for (doc, g) in &gold {
        score_document(g, &pred[doc], ontology, &mut t);
    }
    Ok(finish(t))
}

fn score_document(gold: &[&Mention], pred: &[&Mention], ontology: &Ontology, t: &mut Tally) {
    let gold_depth = depths(gold);
    let pred_depth = depths(pred);

    let mut open: HashMap<(Span, &str), Vec<usize>> = HashMap::new();
    for (i, g) in gold.iter().enumerate().rev() {
        open.entry((g.span, g.node_id.as_str())).or_default().push(i);
    }

    for (i, g) in gold.iter().enumerate() {
        let c = Counts { gold: 1, ..Counts::default() };
        t.by_class.entry(primary_class(ontology, &g.node_id)).or_default().add(c);
        t.by_depth.entry(gold_depth[i]).or_default().add(c);
        t.total.add(c);
    }
    for (j, p) in pred.iter().enumerate() {
        let hit = open
            .get_mut(&(p.span, p.node_id.as_str()))
            .and_then(|v| v.pop());
        let (depth, correct) = match hit {
            Some(gi) => {
                t.correct_pairs
                    .push((gold[gi].modifier_ids.clone(), p.modifier_ids.clone()));
                (gold_depth[gi], 1)
            }
            None => (pred_depth[j], 0),
        };
        let c = Counts { gold: 0, predicted: 1, correct };
        t.by_class.entry(primary_class(ontology, &p.node_id)).or_default().add(c);
        t.by_depth.entry(depth).or_default().add(c);
        t.total.add(c);
    }
}

fn finish(mut t: Tally) -> EvalReport {
    let n = t.correct_pairs.len();
    let seen: BTreeSet<&String> = t
        .correct_pairs
        .iter()
        .flat_map(|(g, p)| g.iter().chain(p.iter()))
        .collect();
    for id in seen {
        let agree = t
            .correct_pairs
            .iter()
            .filter(|(g, p)| g.contains(id) == p.contains(id))
            .count();
        t.modifier_ids.insert(id.clone(), agree);
    }
    t.modifier_exact = t.correct_pairs.iter().filter(|(g, p)| g == p).count();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    EvalReport {
        micro: t.total.prf(),
        macro_by_level1: t.by_class.into_iter().map(|(k, c)| (k, c.into())).collect(),
        by_depth: t.by_depth.into_iter().map(|(k, c)| (k, c.into())).collect(),
        modifier_accuracy: rate(t.modifier_exact),
        modifier_accuracy_by_id: t.modifier_ids.into_iter().map(|(k, v)| (k, rate(v))).collect(),
        counts: t.total,
    }
}

impl EvalReport {
    /// Unweighted mean F1 over level-1 classes.
    pub fn macro_f1(&self) -> f64 {
        if self.macro_by_level1.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.macro_by_level1.values().map(|c| c.scores.f1).sum();
        sum / self.macro_by_level1.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let header = || {
            vec![
                String::new(),
                "gold".into(),
                "pred".into(),
                "correct".into(),
                "P".into(),
                "R".into(),
                "F1".into(),
            ]
        };
        let row = |name: String, c: &Counts| {
            let s = c.prf();
            vec![
                name,
                c.gold.to_string(),
                c.predicted.to_string(),
                c.correct.to_string(),
                format!("{:.4}", s.precision),
                format!("{:.4}", s.recall),
                format!("{:.4}", s.f1),
            ]
        };
        let mut rows = vec![header(), row("micro".into(), &self.counts)];
        for (class, cell) in &self.macro_by_level1 {
            rows.push(row(class.clone(), &cell.counts));
        }
        for (depth, cell) in &self.by_depth {
            rows.push(row(format!("depth {depth}"), &cell.counts));
        }
        let mut out = align(&rows);
        out.push_str(&format!("modifier accuracy  {:.4}\n", self.modifier_accuracy));
        for (id, acc) in &self.modifier_accuracy_by_id {
            out.push_str(&format!("  {id}  {acc:.4}\n"));
        }
        out
    }
}
