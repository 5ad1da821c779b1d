//! Sparse linear scorer for the transition system.
//!
//! Actions are scored by an averaged perceptron over indicator features of
//! the parser state. Modifiers get one binary perceptron each, scored on the
//! mention's context and hard-masked by the ontology.
//!
//! Training walks the oracle path of every sentence. At each state the model
//! predicts the best valid action; when it disagrees with the oracle, the
//! oracle action is rewarded and the prediction penalized by a step weight
//! `1 + alpha * (max_depth - depth)` for labels of gold mentions at nesting
//! `depth` (1 for every other action), and training continues on the oracle
//! path.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::primary_class;
use crate::corpus::{AnnotatedDocument, AnnotationSet, GoldMention, Mention, SentenceExample};
use crate::ontology::Ontology;
use crate::parser::{nesting_depths, oracle_actions, Action, ParserError, ParserState, TokenRange};
use crate::text::{tokenize, Span, Token};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "clinotate-model";
/// Segments longer than this get no whole-text feature.
const MAX_TEXT_TOKENS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub epochs: usize,
    /// 1 decodes greedily.
    pub beam_width: usize,
    pub depth_weight_alpha: f64,
    /// Seeds the per-epoch shuffle: one `ChaCha8Rng::seed_from_u64(seed)`
    /// shuffles the sentence order in place at the start of every epoch.
    pub seed: u64,
    pub averaging: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 5,
            beam_width: 1,
            depth_weight_alpha: 0.5,
            seed: 0,
            averaging: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::BadHyperparams("epochs must be positive".into()));
        }
        if self.beam_width == 0 {
            return Err(ModelError::BadHyperparams("beam_width must be positive".into()));
        }
        if !(self.depth_weight_alpha.is_finite() && self.depth_weight_alpha >= 0.0) {
            return Err(ModelError::BadHyperparams(
                "depth_weight_alpha must be a non-negative number".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("ontology mismatch: {0}")]
    OntologyMismatch(String),
    #[error("unknown ontology node `{0}`")]
    UnknownNode(String),
    #[error("invalid hyperparameters: {0}")]
    BadHyperparams(String),
    #[error("model file line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("model was trained against catalog `{model}`, but catalog `{catalog}` is loaded")]
    VersionMismatch { model: String, catalog: String },
    #[error(transparent)]
    Parser(#[from] ParserError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

fn lc(s: &str) -> String {
    s.to_lowercase()
}

/// Capitalization and digit pattern with repeats collapsed: "Hb" -> "Xx",
/// "49.5" -> "d.d".
pub fn word_shape(s: &str) -> String {
    let mut out = String::new();
    let mut last = None;
    for c in s.chars() {
        let k = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_ascii_digit() {
            'd'
        } else {
            c
        };
        if last != Some(k) {
            out.push(k);
            last = Some(k);
        }
    }
    out
}

fn bucket(n: usize) -> String {
    if n >= 5 {
        "5+".into()
    } else {
        n.to_string()
    }
}

fn seg_text(tokens: &[Token], r: &TokenRange) -> String {
    if r.len() > MAX_TEXT_TOKENS {
        return "<long>".into();
    }
    tokens[r.clone()]
        .iter()
        .map(|t| lc(&t.form))
        .collect::<Vec<_>>()
        .join("_")
}

fn segment_features(prefix: &str, r: &TokenRange, tokens: &[Token], f: &mut Vec<String>) {
    f.push(format!("{prefix}_first={}", lc(&tokens[r.start].form)));
    f.push(format!("{prefix}_last={}", lc(&tokens[r.end - 1].form)));
    f.push(format!("{prefix}_len={}", bucket(r.len())));
    f.push(format!("{prefix}_text={}", seg_text(tokens, r)));
}

/// Indicator features of a parser state, sorted and deduplicated.
pub fn featurize(state: &ParserState, tokens: &[Token]) -> Result<Vec<String>, ParserError> {
    if state.is_done() {
        return Err(ParserError::Terminal);
    }
    let form = |i: usize| tokens.get(i).map_or("</s>", |t| t.form.as_str());
    let b = state.buffer_pos;
    let mut f = Vec::with_capacity(48);
    f.push("bias".to_string());
    for k in 0..3 {
        let w = form(b + k);
        f.push(format!("buf{k}={w}"));
        f.push(format!("buf{k}_lc={}", lc(w)));
    }
    for k in 0..2 {
        let s = tokens.get(b + k).map_or("</s>".to_string(), |t| word_shape(&t.form));
        f.push(format!("shape{k}={s}"));
    }
    f.push(format!("stklen={}", bucket(state.stack.len())));
    f.push(format!(
        "prev={}",
        state.last_action.map_or("none", |k| k.as_str())
    ));

    let n = state.stack.len();
    if let Some(top) = state.top() {
        segment_features("s0", top, tokens, &mut f);
        let before = if top.start == 0 {
            "<s>".to_string()
        } else {
            lc(&tokens[top.start - 1].form)
        };
        f.push(format!("s0_prev={before}"));
        f.push(format!("s0_last|buf0={}|{}", lc(&tokens[top.end - 1].form), lc(form(b))));
        f.push(format!("s0_at_buf={}", top.end == b));
        let text = seg_text(tokens, top);
        let labels: Vec<&str> = state.top_labels().collect();
        f.push(format!("emitted_top_n={}", bucket(labels.len())));
        for l in labels {
            f.push(format!("emitted_top={l}"));
            f.push(format!("s0_text|emitted_top={text}|{l}"));
        }
        if n >= 2 {
            let s1 = &state.stack[n - 2];
            segment_features("s1", s1, tokens, &mut f);
            let adjacent = s1.end == top.start;
            f.push(format!("s1_adj={adjacent}"));
            if adjacent {
                f.push(format!("merge_text={}", seg_text(tokens, &(s1.start..top.end))));
            }
        }
    }
    f.sort_unstable();
    f.dedup();
    Ok(f)
}

/// Context features for modifier scoring: the ±3-token window, the
/// mention's own tokens, its node and its level-1 class.
pub fn modifier_features(
    tokens: &[Token],
    range: &TokenRange,
    node_id: &str,
    ontology: &Ontology,
) -> Result<Vec<String>, ModelError> {
    if !ontology.contains(node_id) {
        return Err(ModelError::UnknownNode(node_id.to_string()));
    }
    let class = primary_class(ontology, node_id);
    let mut f = vec![
        "bias".to_string(),
        format!("node={node_id}"),
        format!("cls={class}"),
    ];
    for k in 1..=3 {
        let left = range
            .start
            .checked_sub(k)
            .map_or("<s>".to_string(), |i| lc(&tokens[i].form));
        let right = tokens
            .get(range.end + k - 1)
            .map_or("</s>".to_string(), |t| lc(&t.form));
        for (side, w) in [("-", &left), ("+", &right)] {
            f.push(format!("w{side}{k}={w}"));
            f.push(format!("cls|w{side}{k}={class}|{w}"));
            f.push(format!("win={w}"));
            f.push(format!("cls|win={class}|{w}"));
        }
    }
    for t in &tokens[range.clone()] {
        f.push(format!("in={}", lc(&t.form)));
    }
    f.sort_unstable();
    f.dedup();
    Ok(f)
}

// ---------------------------------------------------------------------------
// Action space
// ---------------------------------------------------------------------------

/// Dense action indexing: labels in id order, then MERGE, POP, SHIFT. This
/// is also the lexicographic order of action keys, used to break ties.
#[derive(Debug, Clone, PartialEq)]
struct ActionSpace {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl ActionSpace {
    fn new(labels: Vec<String>) -> ActionSpace {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        ActionSpace { labels, index }
    }

    fn dim(&self) -> usize {
        self.labels.len() + 3
    }

    fn merge(&self) -> usize {
        self.labels.len()
    }

    fn action(&self, i: usize) -> Action {
        let l = self.labels.len();
        match i {
            _ if i < l => Action::Label(self.labels[i].clone()),
            _ if i == l => Action::Merge,
            _ if i == l + 1 => Action::Pop,
            _ => Action::Shift,
        }
    }

    fn index_of(&self, a: &Action) -> Option<usize> {
        let l = self.labels.len();
        match a {
            Action::Label(n) => self.index.get(n).copied(),
            Action::Merge => Some(l),
            Action::Pop => Some(l + 1),
            Action::Shift => Some(l + 2),
        }
    }

    fn key_index(&self, key: &str) -> Option<usize> {
        match key.parse::<Action>() {
            Ok(a) => self.index_of(&a),
            Err(_) => None,
        }
    }

    /// Valid action indices in ascending (tie-break) order.
    fn valid(&self, state: &ParserState) -> Vec<usize> {
        use crate::parser::ActionKind;
        let Ok(kinds) = state.valid_kinds() else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(self.dim());
        if kinds.contains(&ActionKind::Label) {
            let used: BTreeSet<&str> = state.top_labels().collect();
            out.extend(
                self.labels
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| !used.contains(l.as_str()))
                    .map(|(i, _)| i),
            );
        }
        let m = self.merge();
        if kinds.contains(&ActionKind::Merge) {
            out.push(m);
        }
        if kinds.contains(&ActionKind::Pop) {
            out.push(m + 1);
        }
        if kinds.contains(&ActionKind::Shift) {
            out.push(m + 2);
        }
        out
    }
}

/// First index with the highest score.
fn argmax(candidates: &[usize], scores: &[f64]) -> usize {
    let mut best = candidates[0];
    for &i in &candidates[1..] {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

/// Log-softmax of `scores` over the valid candidates, in candidate order.
fn log_softmax(candidates: &[usize], scores: &[f64]) -> Vec<f64> {
    let max = candidates.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + candidates.iter().map(|&i| (scores[i] - max).exp()).sum::<f64>().ln();
    candidates.iter().map(|&i| scores[i] - log_z).collect()
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub ontology_version: String,
    pub hyperparams: Hyperparams,
    space: ActionSpace,
    modifiers: Vec<String>,
    action_weights: HashMap<String, Vec<f64>>,
    modifier_weights: HashMap<String, Vec<f64>>,
}

/// Result of decoding one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub state: ParserState,
    pub actions: Vec<Action>,
    /// Sum of per-step log-softmax action scores over the valid actions.
    pub score: f64,
}

impl Model {
    /// A model with all weights zero.
    pub fn untrained(ontology: &Ontology, hyperparams: Hyperparams) -> Model {
        Model {
            ontology_version: ontology.version.clone(),
            hyperparams,
            space: ActionSpace::new(ontology.nodes.keys().cloned().collect()),
            modifiers: ontology.modifiers.keys().cloned().collect(),
            action_weights: HashMap::new(),
            modifier_weights: HashMap::new(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.space.labels
    }

    pub fn modifiers(&self) -> &[String] {
        &self.modifiers
    }

    /// Non-zero action weights keyed by (feature, action key).
    pub fn action_weights(&self) -> BTreeMap<(String, String), f64> {
        let mut out = BTreeMap::new();
        for (f, row) in &self.action_weights {
            for (i, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    out.insert((f.clone(), self.space.action(i).key()), v);
                }
            }
        }
        out
    }

    /// Non-zero modifier weights keyed by (feature, modifier id).
    pub fn modifier_weights(&self) -> BTreeMap<(String, String), f64> {
        let mut out = BTreeMap::new();
        for (f, row) in &self.modifier_weights {
            for (i, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    out.insert((f.clone(), self.modifiers[i].clone()), v);
                }
            }
        }
        out
    }

    /// Overwrites one action weight; used to build fixtures.
    pub fn set_action_weight(&mut self, feature: &str, action: &Action, value: f64) {
        let Some(i) = self.space.index_of(action) else { return };
        let dim = self.space.dim();
        self.action_weights
            .entry(feature.to_string())
            .or_insert_with(|| vec![0.0; dim])[i] = value;
    }

    pub fn check_ontology(&self, ontology: &Ontology) -> Result<(), ModelError> {
        if ontology.version != self.ontology_version {
            return Err(ModelError::OntologyMismatch(format!(
                "model expects catalog `{}`, got `{}`",
                self.ontology_version, ontology.version
            )));
        }
        Ok(())
    }

    fn action_scores(&self, feats: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.space.dim()];
        for f in feats {
            if let Some(row) = self.action_weights.get(f) {
                for (s, w) in scores.iter_mut().zip(row) {
                    *s += w;
                }
            }
        }
        scores
    }

    /// Score of every valid action in `state`, in tie-break order.
    pub fn scored_actions(&self, state: &ParserState, tokens: &[Token]) -> Vec<(Action, f64)> {
        let Ok(feats) = featurize(state, tokens) else {
            return Vec::new();
        };
        let scores = self.action_scores(&feats);
        self.space
            .valid(state)
            .into_iter()
            .map(|i| (self.space.action(i), scores[i]))
            .collect()
    }

    fn greedy(&self, tokens: &[Token]) -> Decoded {
        let mut state = ParserState::initial(tokens.len());
        let mut actions = Vec::new();
        let mut score = 0.0;
        while !state.is_done() {
            let feats = featurize(&state, tokens).expect("not done");
            let scores = self.action_scores(&feats);
            let valid = self.space.valid(&state);
            let best = argmax(&valid, &scores);
            let a = self.space.action(best);
            let pos = valid.iter().position(|&i| i == best).expect("argmax is a candidate");
            score += log_softmax(&valid, &scores)[pos];
            state = state.apply(&a).expect("valid action");
            actions.push(a);
        }
        Decoded { state, actions, score }
    }

    fn beam(&self, tokens: &[Token], width: usize) -> Decoded {
        let mut beam = vec![Decoded {
            state: ParserState::initial(tokens.len()),
            actions: Vec::new(),
            score: 0.0,
        }];
        while beam.iter().any(|h| !h.state.is_done()) {
            // (score, parent rank, action index or None for a finished parent)
            let mut cand: Vec<(f64, usize, Option<usize>)> = Vec::new();
            for (rank, h) in beam.iter().enumerate() {
                if h.state.is_done() {
                    cand.push((h.score, rank, None));
                    continue;
                }
                let feats = featurize(&h.state, tokens).expect("not done");
                let scores = self.action_scores(&feats);
                let valid = self.space.valid(&h.state);
                for (&i, lp) in valid.iter().zip(log_softmax(&valid, &scores)) {
                    cand.push((h.score + lp, rank, Some(i)));
                }
            }
            cand.sort_by(|x, y| {
                y.0.total_cmp(&x.0)
                    .then(x.1.cmp(&y.1))
                    .then(x.2.cmp(&y.2))
            });
            cand.truncate(width);
            beam = cand
                .into_iter()
                .map(|(score, rank, act)| {
                    let parent = &beam[rank];
                    match act {
                        None => parent.clone(),
                        Some(i) => {
                            let a = self.space.action(i);
                            let mut actions = parent.actions.clone();
                            actions.push(a.clone());
                            Decoded {
                                state: parent.state.apply(&a).expect("valid action"),
                                actions,
                                score,
                            }
                        }
                    }
                })
                .collect();
        }
        beam.into_iter().next().expect("beam is never empty")
    }

    /// Best-scoring action sequence. With a beam wider than one, the greedy
    /// path also competes, so the result never scores below greedy.
    pub fn decode(&self, tokens: &[Token], beam_width: usize) -> Decoded {
        let greedy = self.greedy(tokens);
        if beam_width <= 1 {
            return greedy;
        }
        let beam = self.beam(tokens, beam_width);
        if greedy.score > beam.score {
            greedy
        } else {
            beam
        }
    }

    /// Token-range mentions for one sentence, without modifiers.
    pub fn predict_ranges(&self, tokens: &[Token]) -> Vec<(TokenRange, String)> {
        let mut out = self.decode(tokens, self.hyperparams.beam_width).state.emitted;
        out.sort_by(|a, b| {
            (a.0.start, std::cmp::Reverse(a.0.end), &a.1).cmp(&(b.0.start, std::cmp::Reverse(b.0.end), &b.1))
        });
        out
    }

    /// Mentions for one tokenized sentence, with character spans and
    /// classified modifiers.
    pub fn predict(&self, tokens: &[Token], ontology: &Ontology) -> Result<Vec<Mention>, ModelError> {
        self.check_ontology(ontology)?;
        let mut out = Vec::new();
        for (range, node) in self.predict_ranges(tokens) {
            let modifiers = self.classify_modifiers(tokens, &range, &node, ontology)?;
            let span = Span::new(tokens[range.start].span.start, tokens[range.end - 1].span.end);
            let mut m = Mention::new(span, node);
            m.modifier_ids = modifiers;
            out.push(m);
        }
        Ok(out)
    }

    /// Tokenizes `text` and predicts every sentence.
    pub fn predict_text(&self, text: &str, ontology: &Ontology) -> Result<Vec<Mention>, ModelError> {
        self.check_ontology(ontology)?;
        let tokenized = tokenize(text);
        let mut out = Vec::new();
        for s in &tokenized.sentences {
            out.extend(self.predict(&tokenized.tokens[s.clone()], ontology)?);
        }
        Ok(out)
    }

    /// Modifiers scoring above zero, restricted to those applicable to the node.
    pub fn classify_modifiers(
        &self,
        tokens: &[Token],
        range: &TokenRange,
        node_id: &str,
        ontology: &Ontology,
    ) -> Result<BTreeSet<String>, ModelError> {
        let feats = modifier_features(tokens, range, node_id, ontology)?;
        let applicable = ontology
            .applicable_modifiers(node_id)
            .map_err(|_| ModelError::UnknownNode(node_id.to_string()))?;
        let mut scores = vec![0.0; self.modifiers.len()];
        for f in &feats {
            if let Some(row) = self.modifier_weights.get(f) {
                for (s, w) in scores.iter_mut().zip(row) {
                    *s += w;
                }
            }
        }
        Ok(self
            .modifiers
            .iter()
            .zip(scores)
            .filter(|(m, s)| *s > 0.0 && applicable.contains(*m))
            .map(|(m, _)| m.clone())
            .collect())
    }
}

/// Adds (or replaces) an `annotator_id` set holding the model's predictions
/// on every document.
pub fn annotate_corpus(
    model: &Model,
    corpus: &mut [AnnotatedDocument],
    ontology: &Ontology,
    annotator_id: &str,
) -> Result<(), ModelError> {
    for ad in corpus.iter_mut() {
        let predicted = model.predict_text(&ad.doc.text, ontology)?;
        let mut set = AnnotationSet::new(&ad.doc.id, annotator_id);
        for m in predicted {
            if let Err(e) = set.add_mention(m, ontology, &ad.doc) {
                warn!("{}: predicted mention rejected: {e}", ad.doc.id);
            }
        }
        ad.annotations.retain(|s| s.annotator_id != annotator_id);
        ad.annotations.push(set);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    fn intern(&mut self, s: String) -> u32 {
        if let Some(&id) = self.ids.get(&s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.clone());
        self.ids.insert(s, id);
        id
    }
}

/// Perceptron weights with lazily allocated rows and averaging totals.
struct Table {
    dim: usize,
    w: Vec<Vec<f64>>,
    acc: Vec<Vec<f64>>,
}

impl Table {
    fn new(dim: usize) -> Table {
        Table {
            dim,
            w: Vec::new(),
            acc: Vec::new(),
        }
    }

    fn scores(&self, feats: &[u32], out: &mut [f64]) {
        out.fill(0.0);
        for &f in feats {
            if let Some(row) = self.w.get(f as usize) {
                for (s, w) in out.iter_mut().zip(row) {
                    *s += w;
                }
            }
        }
    }

    fn update(&mut self, f: u32, a: usize, delta: f64, step: f64) {
        let f = f as usize;
        if self.w.len() <= f {
            self.w.resize(f + 1, Vec::new());
            self.acc.resize(f + 1, Vec::new());
        }
        if self.w[f].is_empty() {
            self.w[f] = vec![0.0; self.dim];
            self.acc[f] = vec![0.0; self.dim];
        }
        self.w[f][a] += delta;
        self.acc[f][a] += step * delta;
    }

    /// Final weights (averaged when `averaging`), all-zero rows dropped.
    fn snapshot(&self, names: &[String], averaging: bool, step: f64) -> HashMap<String, Vec<f64>> {
        let mut out = HashMap::new();
        for (f, row) in self.w.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let v: Vec<f64> = if averaging {
                row.iter().zip(&self.acc[f]).map(|(w, a)| w - a / step).collect()
            } else {
                row.clone()
            };
            if v.iter().any(|&x| x != 0.0) {
                out.insert(names[f].clone(), v);
            }
        }
        out
    }
}

struct StateInstance {
    feats: Vec<u32>,
    valid: Vec<usize>,
    gold: usize,
    weight: f64,
}

struct ModifierInstance {
    feats: Vec<u32>,
    targets: Vec<(usize, bool)>,
}

struct Prepared {
    states: Vec<StateInstance>,
    modifiers: Vec<ModifierInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub dev_f1: f64,
    pub action_updates: usize,
    pub modifier_updates: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochReport>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

fn gold_pairs(gold: &[GoldMention]) -> Vec<(TokenRange, String)> {
    gold.iter().map(|g| (g.range.clone(), g.node_id.clone())).collect()
}

/// Largest nesting depth over all sentences.
pub fn max_gold_depth(examples: &[SentenceExample]) -> usize {
    examples
        .iter()
        .map(|e| {
            let ranges: Vec<_> = e.gold.iter().map(|g| g.range.clone()).collect();
            nesting_depths(&ranges).into_iter().max().unwrap_or(0)
        })
        .max()
        .unwrap_or(0)
}

/// Per-step update weight for the oracle action taken in `state`.
pub fn step_weight(
    action: &Action,
    state: &ParserState,
    gold: &[GoldMention],
    max_depth: usize,
    alpha: f64,
) -> f64 {
    let Action::Label(_) = action else { return 1.0 };
    let Some(top) = state.top() else { return 1.0 };
    let ranges: Vec<_> = gold.iter().map(|g| g.range.clone()).collect();
    let depths = nesting_depths(&ranges);
    match ranges.iter().position(|r| r == top) {
        Some(i) => 1.0 + alpha * (max_depth.saturating_sub(depths[i])) as f64,
        None => 1.0,
    }
}

fn check_gold(examples: &[SentenceExample], ontology: &Ontology) -> Result<(), ModelError> {
    for e in examples {
        for g in &e.gold {
            if !ontology.contains(&g.node_id) {
                return Err(ModelError::OntologyMismatch(format!(
                    "{}: gold node `{}` is not in catalog `{}`",
                    e.doc_id, g.node_id, ontology.version
                )));
            }
        }
    }
    Ok(())
}

fn prepare(
    ex: &SentenceExample,
    space: &ActionSpace,
    modifiers: &[String],
    ontology: &Ontology,
    max_depth: usize,
    alpha: f64,
    interner: &mut Interner,
) -> Result<Prepared, ModelError> {
    let actions = oracle_actions(ex.tokens.len(), &gold_pairs(&ex.gold))?;
    let mut state = ParserState::initial(ex.tokens.len());
    let mut states = Vec::with_capacity(actions.len());
    for a in &actions {
        let feats = featurize(&state, &ex.tokens)?
            .into_iter()
            .map(|f| interner.intern(f))
            .collect();
        states.push(StateInstance {
            feats,
            valid: space.valid(&state),
            gold: space.index_of(a).expect("gold node checked against catalog"),
            weight: step_weight(a, &state, &ex.gold, max_depth, alpha),
        });
        state = state.apply(a)?;
    }
    let mut mods = Vec::with_capacity(ex.gold.len());
    for g in &ex.gold {
        let feats = modifier_features(&ex.tokens, &g.range, &g.node_id, ontology)?
            .into_iter()
            .map(|f| interner.intern(f))
            .collect();
        let applicable = ontology
            .applicable_modifiers(&g.node_id)
            .map_err(|_| ModelError::UnknownNode(g.node_id.clone()))?;
        let targets = modifiers
            .iter()
            .enumerate()
            .filter(|(_, m)| applicable.contains(*m))
            .map(|(i, m)| (i, g.modifier_ids.contains(m)))
            .collect();
        mods.push(ModifierInstance { feats, targets });
    }
    Ok(Prepared {
        states,
        modifiers: mods,
    })
}

/// Exact (range, node) counts for one sentence: (correct, predicted, gold).
pub fn sentence_counts(pred: &[(TokenRange, String)], gold: &[GoldMention]) -> (usize, usize, usize) {
    let gold_set: BTreeSet<(usize, usize, &str)> = gold
        .iter()
        .map(|g| (g.range.start, g.range.end, g.node_id.as_str()))
        .collect();
    let correct = pred
        .iter()
        .map(|(r, n)| (r.start, r.end, n.as_str()))
        .collect::<BTreeSet<_>>()
        .intersection(&gold_set)
        .count();
    (correct, pred.len(), gold.len())
}

/// Micro F1 of the model's decoded mentions over `examples`.
pub fn micro_f1(model: &Model, examples: &[SentenceExample]) -> f64 {
    let (mut c, mut p, mut g) = (0, 0, 0);
    for e in examples {
        let (ci, pi, gi) = sentence_counts(&model.predict_ranges(&e.tokens), &e.gold);
        c += ci;
        p += pi;
        g += gi;
    }
    crate::agreement::Prf::from_counts(c, p, g).f1
}

/// Trains action and modifier perceptrons. Returns the weights of the epoch
/// with the best dev micro-F1 (the earliest on ties, the last when `dev` is
/// empty).
pub fn train(
    train: &[SentenceExample],
    dev: &[SentenceExample],
    ontology: &Ontology,
    hp: &Hyperparams,
) -> Result<TrainOutcome, ModelError> {
    hp.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    check_gold(train, ontology)?;
    check_gold(dev, ontology)?;

    let base = Model::untrained(ontology, hp.clone());
    let max_depth = max_gold_depth(train);
    let mut interner = Interner::default();
    let prepared: Vec<Prepared> = train
        .iter()
        .map(|e| {
            prepare(
                e,
                &base.space,
                &base.modifiers,
                ontology,
                max_depth,
                hp.depth_weight_alpha,
                &mut interner,
            )
        })
        .collect::<Result<_, _>>()?;
    info!(
        "training on {} sentences, {} features, max depth {}",
        train.len(),
        interner.names.len(),
        max_depth
    );

    let mut actions = Table::new(base.space.dim());
    let mut mods = Table::new(base.modifiers.len());
    let mut a_step = 1.0f64;
    let mut m_step = 1.0f64;
    let mut scores = vec![0.0; base.space.dim()];
    let mut mod_scores = vec![0.0; base.modifiers.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut reports = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        let (mut a_updates, mut m_updates) = (0, 0);
        for &i in &order {
            for st in &prepared[i].states {
                actions.scores(&st.feats, &mut scores);
                let pred = argmax(&st.valid, &scores);
                if pred != st.gold {
                    for &f in &st.feats {
                        actions.update(f, st.gold, st.weight, a_step);
                        actions.update(f, pred, -st.weight, a_step);
                    }
                    a_updates += 1;
                }
                a_step += 1.0;
            }
            for mi in &prepared[i].modifiers {
                mods.scores(&mi.feats, &mut mod_scores);
                for &(m, target) in &mi.targets {
                    if (mod_scores[m] > 0.0) != target {
                        let d = if target { 1.0 } else { -1.0 };
                        for &f in &mi.feats {
                            mods.update(f, m, d, m_step);
                        }
                        m_updates += 1;
                    }
                    m_step += 1.0;
                }
            }
        }

        let mut model = base.clone();
        model.action_weights = actions.snapshot(&interner.names, hp.averaging, a_step);
        model.modifier_weights = mods.snapshot(&interner.names, hp.averaging, m_step);
        let dev_f1 = if dev.is_empty() { 0.0 } else { micro_f1(&model, dev) };
        info!("epoch {epoch}: dev micro-F1 {dev_f1:.4}, {a_updates} action updates");
        reports.push(EpochReport {
            epoch,
            dev_f1,
            action_updates: a_updates,
            modifier_updates: m_updates,
        });
        let better = match &best {
            None => true,
            Some((f, _, _)) => dev.is_empty() || dev_f1 > *f,
        };
        if better {
            best = Some((dev_f1, epoch, model));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        epochs: reports,
        best_epoch,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Writes the model as versioned text. Weights are sorted and written with
/// the shortest round-tripping decimal form.
pub fn save_model(model: &Model, mut sink: impl Write) -> std::io::Result<()> {
    let hp = &model.hyperparams;
    writeln!(sink, "{MAGIC}\t{FORMAT_VERSION}")?;
    writeln!(sink, "ontology_version\t{}", model.ontology_version)?;
    writeln!(
        sink,
        "hyperparams\tepochs={}\tbeam_width={}\tdepth_weight_alpha={}\tseed={}\taveraging={}",
        hp.epochs, hp.beam_width, hp.depth_weight_alpha, hp.seed, hp.averaging
    )?;
    let join = |v: &[String]| v.iter().map(|s| format!("\t{s}")).collect::<String>();
    writeln!(sink, "labels{}", join(&model.space.labels))?;
    writeln!(sink, "modifiers{}", join(&model.modifiers))?;
    let mut count = 0usize;
    for ((f, a), v) in model.action_weights() {
        writeln!(sink, "A\t{f}\t{a}\t{v}")?;
        count += 1;
    }
    for ((f, m), v) in model.modifier_weights() {
        writeln!(sink, "M\t{f}\t{m}\t{v}")?;
        count += 1;
    }
    writeln!(sink, "end\t{count}")?;
    sink.flush()
}

pub fn model_to_string(model: &Model) -> String {
    let mut buf = Vec::new();
    save_model(model, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8")
}

/// Reads a model. Unless `force` is set, the recorded catalog version must
/// equal `catalog_version`.
pub fn load_model(
    source: impl BufRead,
    catalog_version: &str,
    force: bool,
) -> Result<Model, ModelError> {
    let mut lines = source.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String), ModelError> {
        match lines.next() {
            Some((n, l)) => Ok((n, l?)),
            None => Err(ModelError::Format {
                line: 0,
                detail: format!("truncated file: missing {what}"),
            }),
        }
    };
    let fmt_err = |line: usize, detail: String| ModelError::Format { line, detail };

    let (n, magic) = next("header")?;
    match magic.split_once('\t') {
        Some((MAGIC, v)) if v == FORMAT_VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(fmt_err(n, format!("unsupported format version {v}"))),
        _ => return Err(fmt_err(n, "not a model file".into())),
    }

    let (n, ov) = next("ontology_version")?;
    let ontology_version = match ov.split_once('\t') {
        Some(("ontology_version", v)) => v.to_string(),
        _ => return Err(fmt_err(n, "expected ontology_version".into())),
    };
    if !force && ontology_version != catalog_version {
        return Err(ModelError::VersionMismatch {
            model: ontology_version,
            catalog: catalog_version.to_string(),
        });
    }

    let (n, hl) = next("hyperparams")?;
    let hyperparams = parse_hyperparams(&hl).map_err(|d| fmt_err(n, d))?;

    let (n, ll) = next("labels")?;
    let labels = parse_list(&ll, "labels").ok_or_else(|| fmt_err(n, "expected labels".into()))?;
    let (n, ml) = next("modifiers")?;
    let modifiers =
        parse_list(&ml, "modifiers").ok_or_else(|| fmt_err(n, "expected modifiers".into()))?;

    let space = ActionSpace::new(labels);
    let mod_index: HashMap<&str, usize> =
        modifiers.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let mut action_weights: HashMap<String, Vec<f64>> = HashMap::new();
    let mut modifier_weights: HashMap<String, Vec<f64>> = HashMap::new();
    let mut count = 0usize;
    loop {
        let (n, line) = next("end marker")?;
        let parts: Vec<&str> = line.split('\t').collect();
        match parts.as_slice() {
            ["end", c] => {
                let c: usize = c.parse().map_err(|_| fmt_err(n, "bad weight count".into()))?;
                if c != count {
                    return Err(fmt_err(n, format!("expected {c} weights, read {count}")));
                }
                break;
            }
            [kind @ ("A" | "M"), feat, key, value] => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| fmt_err(n, format!("bad weight `{value}`")))?;
                let (table, idx, dim) = if *kind == "A" {
                    let i = space
                        .key_index(key)
                        .ok_or_else(|| fmt_err(n, format!("unknown action `{key}`")))?;
                    (&mut action_weights, i, space.dim())
                } else {
                    let i = *mod_index
                        .get(key)
                        .ok_or_else(|| fmt_err(n, format!("unknown modifier `{key}`")))?;
                    (&mut modifier_weights, i, modifiers.len())
                };
                let row = table.entry(feat.to_string()).or_insert_with(|| vec![0.0; dim]);
                if row[idx] != 0.0 {
                    return Err(fmt_err(n, format!("duplicate weight for `{feat}` / `{key}`")));
                }
                row[idx] = v;
                count += 1;
            }
            _ => return Err(fmt_err(n, "malformed line".into())),
        }
    }
    if let Some((n, _)) = lines.next() {
        return Err(fmt_err(n, "content after end marker".into()));
    }
    Ok(Model {
        ontology_version,
        hyperparams,
        space,
        modifiers,
        action_weights,
        modifier_weights,
    })
}

fn parse_list(line: &str, tag: &str) -> Option<Vec<String>> {
    let mut parts = line.split('\t');
    (parts.next()? == tag).then(|| parts.map(str::to_string).collect())
}

fn parse_hyperparams(line: &str) -> Result<Hyperparams, String> {
    let mut parts = line.split('\t');
    if parts.next() != Some("hyperparams") {
        return Err("expected hyperparams".into());
    }
    let mut kv = BTreeMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or(format!("bad hyperparameter `{p}`"))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or(format!("missing hyperparameter `{k}`"));
    let bad = |k: &str| format!("bad value for `{k}`");
    Ok(Hyperparams {
        epochs: get("epochs")?.parse().map_err(|_| bad("epochs"))?,
        beam_width: get("beam_width")?.parse().map_err(|_| bad("beam_width"))?,
        depth_weight_alpha: get("depth_weight_alpha")?
            .parse()
            .map_err(|_| bad("depth_weight_alpha"))?,
        seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
        averaging: get("averaging")?.parse().map_err(|_| bad("averaging"))?,
    })
}

/// Character-span mention list for a token range forest; helper for callers
/// that decode with [`Model::decode`] directly.
pub fn ranges_to_spans(tokens: &[Token], ranges: &[(TokenRange, String)]) -> Vec<(Span, String)> {
    ranges
        .iter()
        .map(|(r, n)| {
            (
                Span::new(tokens[r.start].span.start, tokens[r.end - 1].span.end),
                n.clone(),
            )
        })
        .collect()
}
