//! Independent oracles and random-input generators for integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clinotate::corpus::{AnnotatedDocument, AnnotationSet, Document, Mention, RecordType, SentenceExample};
use clinotate::model::{featurize, modifier_features};
use clinotate::parser::{oracle_actions, Action, ParserState};
use clinotate::text::{char_slice, Span};
use clinotate::Ontology;

pub type Forest = Vec<(Range<usize>, String)>;

/// A random crossing-free forest over `1..=max_tokens` tokens with at most
/// `max_levels` levels of nesting. About one span in five carries a second
/// label.
pub fn random_forest(
    rng: &mut ChaCha8Rng,
    max_tokens: usize,
    max_levels: usize,
    labels: &[&str],
) -> (usize, Forest) {
    let n = rng.gen_range(1..=max_tokens);
    let mut out = Vec::new();
    fill(rng, 0..n, 0, max_levels, labels, &mut out);
    (n, out)
}

fn fill(
    rng: &mut ChaCha8Rng,
    outer: Range<usize>,
    level: usize,
    max_levels: usize,
    labels: &[&str],
    out: &mut Forest,
) {
    let mut pos = outer.start;
    while pos < outer.end {
        if rng.gen_bool(0.35) {
            pos += 1;
            continue;
        }
        let len = rng.gen_range(1..=(outer.end - pos).min(10));
        let r = pos..pos + len;
        pos += len;
        if level > 0 && r == outer {
            continue;
        }
        let k = if rng.gen_bool(0.2) { 2 } else { 1 };
        for l in labels.choose_multiple(rng, k) {
            out.push((r.clone(), l.to_string()));
        }
        if level + 1 < max_levels && len > 1 && rng.gen_bool(0.7) {
            fill(rng, r, level + 1, max_levels, labels, out);
        }
    }
}

pub fn forest_levels(forest: &Forest) -> usize {
    let ranges: Vec<_> = forest.iter().map(|(r, _)| r.clone()).collect();
    clinotate::parser::nesting_depths(&ranges)
        .into_iter()
        .max()
        .map_or(0, |d| d + 1)
}

pub fn crossing_pairs(ranges: &[Range<usize>]) -> usize {
    let mut n = 0;
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            let overlap = a.start < b.end && b.start < a.end;
            let nested = (a.start <= b.start && b.end <= a.end) || (b.start <= a.start && a.end <= b.end);
            if overlap && !nested {
                n += 1;
            }
        }
    }
    n
}

/// Runs random valid actions until done, drawing labels from `labels`.
pub fn random_walk(rng: &mut ChaCha8Rng, n_tokens: usize, labels: &[&str]) -> ParserState {
    let mut s = ParserState::initial(n_tokens);
    while !s.is_done() {
        let valid = s.valid_actions(labels.iter().copied());
        let a = valid.choose(rng).expect("a live state has a valid action").clone();
        s = s.apply(&a).expect("drawn from valid actions");
    }
    s
}

// ---------------------------------------------------------------------------
// Plain perceptron reference: unit updates, no averaging, no depth weighting.
// ---------------------------------------------------------------------------

pub type Weights = BTreeMap<(String, String), f64>;

pub fn reference_perceptron(
    examples: &[SentenceExample],
    ontology: &Ontology,
    epochs: usize,
    seed: u64,
) -> (Weights, Weights) {
    let labels: Vec<&str> = ontology.nodes.keys().map(String::as_str).collect();
    let modifiers: Vec<&String> = ontology.modifiers.keys().collect();
    let mut aw: HashMap<(String, String), f64> = HashMap::new();
    let mut mw: HashMap<(String, String), f64> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let ex = &examples[i];
            let gold: Vec<_> = ex.gold.iter().map(|g| (g.range.clone(), g.node_id.clone())).collect();
            let actions = oracle_actions(ex.tokens.len(), &gold).expect("derivable");
            let mut state = ParserState::initial(ex.tokens.len());
            for gold_action in &actions {
                let feats = featurize(&state, &ex.tokens).unwrap();
                let mut cands: Vec<String> = state
                    .valid_actions(labels.iter().copied())
                    .iter()
                    .map(Action::key)
                    .collect();
                cands.sort();
                let score = |k: &String| -> f64 {
                    feats
                        .iter()
                        .map(|f| aw.get(&(f.clone(), k.clone())).copied().unwrap_or(0.0))
                        .sum()
                };
                let mut best = cands[0].clone();
                let mut best_score = score(&best);
                for c in &cands[1..] {
                    let s = score(c);
                    if s > best_score {
                        best = c.clone();
                        best_score = s;
                    }
                }
                let gk = gold_action.key();
                if best != gk {
                    for f in &feats {
                        *aw.entry((f.clone(), gk.clone())).or_default() += 1.0;
                        *aw.entry((f.clone(), best.clone())).or_default() -= 1.0;
                    }
                }
                state = state.apply(gold_action).unwrap();
            }
            for g in &ex.gold {
                let feats = modifier_features(&ex.tokens, &g.range, &g.node_id, ontology).unwrap();
                let applicable = ontology.applicable_modifiers(&g.node_id).unwrap();
                for m in modifiers.iter().filter(|m| applicable.contains(**m)) {
                    let s: f64 = feats
                        .iter()
                        .map(|f| mw.get(&(f.clone(), m.to_string())).copied().unwrap_or(0.0))
                        .sum();
                    let y = g.modifier_ids.contains(*m);
                    if (s > 0.0) != y {
                        let d = if y { 1.0 } else { -1.0 };
                        for f in &feats {
                            *mw.entry((f.clone(), m.to_string())).or_default() += d;
                        }
                    }
                }
            }
        }
    }
    let nonzero = |w: HashMap<(String, String), f64>| -> Weights {
        w.into_iter().filter(|(_, v)| *v != 0.0).collect()
    };
    (nonzero(aw), nonzero(mw))
}

pub fn bits(w: &Weights) -> BTreeMap<(String, String), u64> {
    w.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect()
}

// ---------------------------------------------------------------------------
// Random corpora and linear-scan index oracles
// ---------------------------------------------------------------------------

const WORDS: [&str; 8] = ["dor", "febre", "tosse", "edema", "rx", "tórax", "sem", "dispneia"];

/// Up to `max_docs` documents over a few patients, each with a random
/// crossing-free gold set drawn from `nodes`.
pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    max_docs: usize,
    nodes: &[&str],
    ontology: &Ontology,
) -> Vec<AnnotatedDocument> {
    let n_docs = rng.gen_range(0..=max_docs);
    let patients = rng.gen_range(1..=4);
    (0..n_docs)
        .map(|i| {
            let words: Vec<&str> = (0..rng.gen_range(3..12)).map(|_| *WORDS.choose(rng).unwrap()).collect();
            let doc = Document {
                id: format!("doc{i:03}"),
                patient_id: format!("pt{}", rng.gen_range(0..patients)),
                date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
                    + chrono::Days::new(rng.gen_range(0..30)),
                record_type: *RecordType::ALL.choose(rng).unwrap(),
                specialty: ["cardiologia", "pneumologia"].choose(rng).unwrap().to_string(),
                text: words.join(" "),
            };
            let set = random_set(rng, &doc, "gold", nodes, ontology);
            AnnotatedDocument {
                doc,
                annotations: vec![set],
            }
        })
        .collect()
}

/// Up to eight random mentions over `doc`; candidates the set rejects
/// (crossing, duplicate, inapplicable) are dropped.
pub fn random_set(
    rng: &mut ChaCha8Rng,
    doc: &Document,
    annotator: &str,
    nodes: &[&str],
    ontology: &Ontology,
) -> AnnotationSet {
    let mut set = AnnotationSet::new(&doc.id, annotator);
    let spans = clinotate::text::tokenize(&doc.text).tokens;
    for _ in 0..rng.gen_range(0..8) {
        let a = rng.gen_range(0..spans.len());
        let b = rng.gen_range(a..spans.len().min(a + 3));
        let span = Span::new(spans[a].span.start, spans[b].span.end);
        let mut m = Mention::new(span, *nodes.choose(rng).unwrap());
        if rng.gen_bool(0.2) {
            m.modifier_ids.insert("negation".into());
        }
        let _ = set.add_mention(m, ontology, doc);
    }
    set
}

fn gold_mentions<'a>(
    corpus: &'a [AnnotatedDocument],
    patient: &'a str,
) -> impl Iterator<Item = (&'a AnnotatedDocument, &'a Mention)> + 'a {
    corpus
        .iter()
        .filter(move |d| d.doc.patient_id == patient)
        .flat_map(|d| d.annotator("gold").into_iter().flat_map(move |s| s.mentions.iter().map(move |m| (d, m))))
}

/// (node, most frequent surface, count), most cited first.
pub fn brute_frequencies(corpus: &[AnnotatedDocument], patient: &str) -> Vec<(String, String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut surfaces: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (d, m) in gold_mentions(corpus, patient) {
        *counts.entry(m.node_id.clone()).or_default() += 1;
        *surfaces.entry((m.node_id.clone(), char_slice(&d.doc.text, m.span))).or_default() += 1;
    }
    let mut out: Vec<(String, String, usize)> = counts
        .into_iter()
        .map(|(node, c)| {
            let mut best: Option<(&String, usize)> = None;
            for ((n, s), k) in &surfaces {
                if *n == node && best.map_or(true, |(bs, bk)| *k > bk || (*k == bk && s < bs)) {
                    best = Some((s, *k));
                }
            }
            (node, best.unwrap().0.clone(), c)
        })
        .collect();
    out.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    out
}

/// (date, doc id, span) of every citation, chronological.
pub fn brute_timeline(corpus: &[AnnotatedDocument], patient: &str, node: &str) -> Vec<(NaiveDate, String, Span)> {
    let mut out: Vec<_> = gold_mentions(corpus, patient)
        .filter(|(_, m)| m.node_id == node)
        .map(|(d, m)| (d.doc.date, d.doc.id.clone(), m.span))
        .collect();
    out.sort();
    out
}

pub fn brute_texts(corpus: &[AnnotatedDocument], patient: &str, nodes: &BTreeSet<String>, all: bool) -> Vec<String> {
    let mut hits: Vec<(NaiveDate, String)> = corpus
        .iter()
        .filter(|d| d.doc.patient_id == patient)
        .filter(|d| {
            let cited: BTreeSet<&String> = d
                .annotator("gold")
                .map(|s| s.mentions.iter().map(|m| &m.node_id).collect())
                .unwrap_or_default();
            if all {
                nodes.iter().all(|n| cited.contains(n))
            } else {
                nodes.iter().any(|n| cited.contains(n))
            }
        })
        .map(|d| (d.doc.date, d.doc.id.clone()))
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, id)| id).collect()
}
