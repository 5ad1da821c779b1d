//! Transition system for nested, multi-label mention recognition.
//!
//! A configuration holds a stack of contiguous token segments, a buffer
//! position and the mentions emitted so far. Four actions drive it:
//!
//! * `SHIFT` pushes the next token as a one-token segment.
//! * `MERGE` joins the top two segments when they are adjacent.
//! * `LABEL(n)` emits the top segment with node `n` and keeps it on the
//!   stack, so it can be labeled again or merged into a larger mention.
//! * `POP` discards the top segment.
//!
//! Emitted mentions are always segments of the stack at emission time, and
//! segments only grow by joining adjacent neighbours, so no sequence of valid
//! actions can produce two crossing mentions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use thiserror::Error;

/// Half-open token range.
pub type TokenRange = Range<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    Shift,
    Merge,
    Label,
    Pop,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Shift => "SHIFT",
            ActionKind::Merge => "MERGE",
            ActionKind::Label => "LABEL",
            ActionKind::Pop => "POP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Shift,
    Merge,
    Label(String),
    Pop,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Shift => ActionKind::Shift,
            Action::Merge => ActionKind::Merge,
            Action::Label(_) => ActionKind::Label,
            Action::Pop => ActionKind::Pop,
        }
    }

    /// The key used for weights and the trace format.
    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Label(node) => write!(f, "LABEL:{node}"),
            other => f.write_str(other.kind().as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognized action `{0}`")]
pub struct ParseActionError(pub String);

impl FromStr for Action {
    type Err = ParseActionError;

    fn from_str(s: &str) -> Result<Action, ParseActionError> {
        match s {
            "SHIFT" => Ok(Action::Shift),
            "MERGE" => Ok(Action::Merge),
            "POP" => Ok(Action::Pop),
            _ => match s.strip_prefix("LABEL:") {
                Some(node) if !node.is_empty() && !node.contains(char::is_whitespace) => {
                    Ok(Action::Label(node.to_string()))
                }
                _ => Err(ParseActionError(s.to_string())),
            },
        }
    }
}

/// Whitespace-separated action trace, e.g. `SHIFT SHIFT LABEL:tests POP`.
pub fn format_trace(actions: &[Action]) -> String {
    actions
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_trace(trace: &str) -> Result<Vec<Action>, ParseActionError> {
    trace.split_whitespace().map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParserError {
    #[error("state is terminal")]
    Terminal,
    #[error("action {action} is not valid here: {reason}")]
    InvalidAction { action: Action, reason: &'static str },
    #[error("gold mentions [{}, {}) and [{}, {}) cross", .0.start, .0.end, .1.start, .1.end)]
    CrossingGold(TokenRange, TokenRange),
    #[error("gold mention [{}, {}) is empty or outside {} tokens", .0.start, .0.end, .1)]
    BadGold(TokenRange, usize),
    #[error("oracle could not derive the gold structure")]
    NotDerivable,
}

#[derive(Debug, Clone, Eq)]
pub struct ParserState {
    n_tokens: usize,
    pub stack: Vec<TokenRange>,
    pub buffer_pos: usize,
    pub emitted: Vec<(TokenRange, String)>,
    /// Kind of the action that produced this state; not part of equality.
    pub last_action: Option<ActionKind>,
}

impl PartialEq for ParserState {
    fn eq(&self, other: &Self) -> bool {
        self.n_tokens == other.n_tokens
            && self.stack == other.stack
            && self.buffer_pos == other.buffer_pos
            && self.emitted == other.emitted
    }
}

impl ParserState {
    pub fn initial(n_tokens: usize) -> ParserState {
        ParserState {
            n_tokens,
            stack: Vec::new(),
            buffer_pos: 0,
            emitted: Vec::new(),
            last_action: None,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn is_done(&self) -> bool {
        self.buffer_pos >= self.n_tokens && self.stack.is_empty()
    }

    pub fn top(&self) -> Option<&TokenRange> {
        self.stack.last()
    }

    fn top_two_adjacent(&self) -> bool {
        match self.stack.as_slice() {
            [.., below, top] => below.end == top.start,
            _ => false,
        }
    }

    /// Node ids already emitted for the top segment.
    pub fn top_labels(&self) -> impl Iterator<Item = &str> {
        let top = self.stack.last().cloned();
        self.emitted
            .iter()
            .filter(move |(r, _)| Some(r) == top.as_ref())
            .map(|(_, n)| n.as_str())
    }

    /// Action kinds with at least one valid instance.
    pub fn valid_kinds(&self) -> Result<BTreeSet<ActionKind>, ParserError> {
        if self.is_done() {
            return Err(ParserError::Terminal);
        }
        let mut out = BTreeSet::new();
        if self.buffer_pos < self.n_tokens {
            out.insert(ActionKind::Shift);
        }
        if self.stack.len() >= 2 && self.top_two_adjacent() {
            out.insert(ActionKind::Merge);
        }
        if !self.stack.is_empty() {
            out.insert(ActionKind::Label);
            out.insert(ActionKind::Pop);
        }
        Ok(out)
    }

    fn check(&self, action: &Action) -> Result<(), ParserError> {
        let invalid = |reason| {
            Err(ParserError::InvalidAction {
                action: action.clone(),
                reason,
            })
        };
        if self.is_done() {
            return Err(ParserError::Terminal);
        }
        match action {
            Action::Shift if self.buffer_pos >= self.n_tokens => invalid("buffer is empty"),
            Action::Merge if self.stack.len() < 2 => invalid("fewer than two segments"),
            Action::Merge if !self.top_two_adjacent() => invalid("top segments are not adjacent"),
            Action::Label(_) | Action::Pop if self.stack.is_empty() => invalid("stack is empty"),
            Action::Label(n) if self.top_labels().any(|l| l == n) => {
                invalid("segment already carries this label")
            }
            _ => Ok(()),
        }
    }

    pub fn is_valid(&self, action: &Action) -> bool {
        self.check(action).is_ok()
    }

    /// Every valid action, drawing labels from `labels`.
    pub fn valid_actions<'a, I>(&self, labels: I) -> Vec<Action>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let Ok(kinds) = self.valid_kinds() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if kinds.contains(&ActionKind::Shift) {
            out.push(Action::Shift);
        }
        if kinds.contains(&ActionKind::Merge) {
            out.push(Action::Merge);
        }
        if kinds.contains(&ActionKind::Label) {
            let used: BTreeSet<&str> = self.top_labels().collect();
            out.extend(
                labels
                    .into_iter()
                    .filter(|l| !used.contains(l))
                    .map(|l| Action::Label(l.to_string())),
            );
        }
        if kinds.contains(&ActionKind::Pop) {
            out.push(Action::Pop);
        }
        out
    }

    pub fn apply(&self, action: &Action) -> Result<ParserState, ParserError> {
        self.check(action)?;
        let mut next = self.clone();
        match action {
            Action::Shift => {
                next.stack.push(next.buffer_pos..next.buffer_pos + 1);
                next.buffer_pos += 1;
            }
            Action::Merge => {
                let top = next.stack.pop().expect("checked");
                let below = next.stack.pop().expect("checked");
                next.stack.push(below.start..top.end);
            }
            Action::Label(node) => {
                let top = next.stack.last().expect("checked").clone();
                next.emitted.push((top, node.clone()));
            }
            Action::Pop => {
                next.stack.pop();
            }
        }
        next.last_action = Some(action.kind());
        Ok(next)
    }
}

/// Applies `actions` from the initial state; the result need not be done.
pub fn replay(n_tokens: usize, actions: &[Action]) -> Result<ParserState, ParserError> {
    actions
        .iter()
        .try_fold(ParserState::initial(n_tokens), |s, a| s.apply(a))
}

fn is_proper_subrange(inner: &TokenRange, outer: &TokenRange) -> bool {
    outer.start <= inner.start && inner.end <= outer.end && inner != outer
}

fn crosses(a: &TokenRange, b: &TokenRange) -> bool {
    let overlap = a.start < b.end && b.start < a.end;
    overlap && !(a.start <= b.start && b.end <= a.end) && !(b.start <= a.start && a.end <= b.end)
}

/// Derives the canonical action sequence for a crossing-free gold forest.
///
/// At each state, in priority order:
/// 1. LABEL the top segment with its smallest pending gold node id;
/// 2. MERGE the top two adjacent segments when their union lies inside a
///    gold range and no pending gold range has a boundary strictly inside
///    the union;
/// 3. SHIFT when the stack is empty or the top segment is a proper prefix
///    part of a gold range that continues at the buffer;
/// 4. POP.
pub fn oracle_actions(
    n_tokens: usize,
    gold: &[(TokenRange, String)],
) -> Result<Vec<Action>, ParserError> {
    let mut pending: BTreeMap<(usize, usize), BTreeSet<String>> = BTreeMap::new();
    for (r, node) in gold {
        if r.start >= r.end || r.end > n_tokens {
            return Err(ParserError::BadGold(r.clone(), n_tokens));
        }
        pending.entry((r.start, r.end)).or_default().insert(node.clone());
    }
    let ranges: Vec<TokenRange> = pending.keys().map(|&(s, e)| s..e).collect();
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            if crosses(a, b) {
                return Err(ParserError::CrossingGold(a.clone(), b.clone()));
            }
        }
    }
    let target: BTreeSet<((usize, usize), String)> = pending
        .iter()
        .flat_map(|(k, ns)| ns.iter().map(move |n| (*k, n.clone())))
        .collect();

    let limit = 3 * n_tokens + target.len() + 1;
    let mut state = ParserState::initial(n_tokens);
    let mut actions = Vec::new();
    while !state.is_done() {
        if actions.len() > limit {
            return Err(ParserError::NotDerivable);
        }
        let action = next_oracle_action(&state, &ranges, &pending);
        if let Action::Label(node) = &action {
            let top = state.top().expect("label needs a segment");
            if let Some(set) = pending.get_mut(&(top.start, top.end)) {
                set.remove(node);
            }
        }
        state = state.apply(&action).map_err(|_| ParserError::NotDerivable)?;
        actions.push(action);
    }

    let produced: BTreeSet<((usize, usize), String)> = state
        .emitted
        .iter()
        .map(|(r, n)| ((r.start, r.end), n.clone()))
        .collect();
    if produced != target {
        return Err(ParserError::NotDerivable);
    }
    Ok(actions)
}

fn next_oracle_action(
    state: &ParserState,
    ranges: &[TokenRange],
    pending: &BTreeMap<(usize, usize), BTreeSet<String>>,
) -> Action {
    let has_pending = |r: &TokenRange| pending.get(&(r.start, r.end)).is_some_and(|s| !s.is_empty());

    if let Some(top) = state.top() {
        if let Some(node) = pending
            .get(&(top.start, top.end))
            .and_then(|s| s.iter().next())
        {
            return Action::Label(node.clone());
        }
    }

    if let [.., below, top] = state.stack.as_slice() {
        if below.end == top.start {
            let union = below.start..top.end;
            let inside_gold = ranges
                .iter()
                .any(|g| g.start <= union.start && union.end <= g.end);
            let splits_pending = ranges.iter().any(|r| {
                *r != union
                    && has_pending(r)
                    && ((union.start < r.start && r.start < union.end)
                        || (union.start < r.end && r.end < union.end))
            });
            if inside_gold && !splits_pending {
                return Action::Merge;
            }
        }
    }

    if state.buffer_pos < state.n_tokens {
        let shift = match state.top() {
            None => true,
            Some(top) => {
                top.end == state.buffer_pos
                    && ranges
                        .iter()
                        .any(|g| is_proper_subrange(top, g) && top.end < g.end)
            }
        };
        if shift {
            return Action::Shift;
        }
    }

    Action::Pop
}

/// Nesting depth of each range within a forest: the number of distinct
/// ranges strictly containing it (0 for outermost).
pub fn nesting_depths(ranges: &[TokenRange]) -> Vec<usize> {
    let distinct: BTreeSet<(usize, usize)> = ranges.iter().map(|r| (r.start, r.end)).collect();
    ranges
        .iter()
        .map(|r| {
            distinct
                .iter()
                .filter(|&&(s, e)| s <= r.start && r.end <= e && (s, e) != (r.start, r.end))
                .count()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label(n: &str) -> Action {
        Action::Label(n.to_string())
    }

    #[test]
    fn initial_states() {
        assert!(ParserState::initial(0).is_done());
        let s = ParserState::initial(2);
        assert_eq!(s.buffer_pos, 0);
        assert!(!s.is_done());
        assert_eq!(s, ParserState::initial(2));
        assert_eq!(
            ParserState::initial(0).valid_kinds(),
            Err(ParserError::Terminal)
        );
    }

    #[test]
    fn fresh_state_only_shifts() {
        let s = ParserState::initial(3);
        assert_eq!(s.valid_kinds().unwrap(), BTreeSet::from([ActionKind::Shift]));
    }

    #[test]
    fn merge_needs_adjacency() {
        let s = replay(3, &[Action::Shift, Action::Shift]).unwrap();
        assert!(s.valid_kinds().unwrap().contains(&ActionKind::Merge));
        let gapped = replay(3, &[Action::Shift, Action::Shift, Action::Pop, Action::Shift]).unwrap();
        assert_eq!(gapped.stack, vec![0..1, 2..3]);
        assert!(!gapped.valid_kinds().unwrap().contains(&ActionKind::Merge));
        assert!(matches!(
            gapped.apply(&Action::Merge),
            Err(ParserError::InvalidAction { .. })
        ));
    }

    #[test]
    fn duplicate_label_is_invalid() {
        let s = replay(1, &[Action::Shift, label("tests")]).unwrap();
        assert!(!s.is_valid(&label("tests")));
        assert!(s.is_valid(&label("time")));
        assert!(matches!(
            s.apply(&label("tests")),
            Err(ParserError::InvalidAction { .. })
        ));
        let acts = s.valid_actions(["tests", "time"]);
        assert_eq!(acts, vec![label("time"), Action::Pop]);
    }

    #[test]
    fn pleural_effusion_sequence() {
        let seq = vec![
            Action::Shift,
            Action::Shift,
            label("anatomic_structure"),
            Action::Merge,
            label("clinical_findings"),
            Action::Pop,
        ];
        let end = replay(2, &seq).unwrap();
        assert!(end.is_done());
        assert_eq!(
            end.emitted,
            vec![
                (1..2, "anatomic_structure".to_string()),
                (0..2, "clinical_findings".to_string())
            ]
        );
        let gold = vec![
            (0..2, "clinical_findings".to_string()),
            (1..2, "anatomic_structure".to_string()),
        ];
        assert_eq!(oracle_actions(2, &gold).unwrap(), seq);
    }

    #[test]
    fn oracle_without_gold() {
        assert_eq!(
            format_trace(&oracle_actions(3, &[]).unwrap()),
            "SHIFT POP SHIFT POP SHIFT POP"
        );
        assert!(oracle_actions(0, &[]).unwrap().is_empty());
    }

    #[test]
    fn oracle_same_span_two_labels() {
        let gold = vec![
            (0..1, "pathological_conditions/respiratory".to_string()),
            (0..1, "pathological_conditions/oncological".to_string()),
        ];
        assert_eq!(
            format_trace(&oracle_actions(1, &gold).unwrap()),
            "SHIFT LABEL:pathological_conditions/oncological LABEL:pathological_conditions/respiratory POP"
        );
    }

    #[test]
    fn oracle_right_nested() {
        let gold = vec![(0..3, "a".to_string()), (1..3, "b".to_string())];
        let acts = oracle_actions(3, &gold).unwrap();
        let end = replay(3, &acts).unwrap();
        assert!(end.is_done());
        assert_eq!(end.emitted.len(), 2);
    }

    #[test]
    fn oracle_rejects_bad_gold() {
        let crossing = vec![(0..2, "a".to_string()), (1..3, "b".to_string())];
        assert!(matches!(
            oracle_actions(3, &crossing),
            Err(ParserError::CrossingGold(..))
        ));
        assert!(matches!(
            oracle_actions(2, &[(1..4, "a".to_string())]),
            Err(ParserError::BadGold(..))
        ));
    }

    #[test]
    fn trace_round_trip() {
        let acts = vec![Action::Shift, Action::Merge, label("time/date"), Action::Pop];
        assert_eq!(parse_trace(&format_trace(&acts)).unwrap(), acts);
        assert!(parse_trace("SHIFT JUMP").is_err());
        assert!(parse_trace("LABEL:").is_err());
    }

    #[test]
    fn depths() {
        assert_eq!(nesting_depths(&[0..3, 1..3, 1..3, 2..3, 5..6]), vec![0, 1, 1, 2, 0]);
    }

    proptest! {
        #[test]
        fn random_valid_sequences_never_cross(n in 0usize..12, choices in proptest::collection::vec(0usize..8, 0..60)) {
            let labels = ["a", "b"];
            let mut s = ParserState::initial(n);
            for c in choices {
                if s.is_done() { break; }
                let acts = s.valid_actions(labels);
                s = s.apply(&acts[c % acts.len()]).unwrap();
            }
            for (a, _) in &s.emitted {
                for (b, _) in &s.emitted {
                    prop_assert!(!crosses(a, b));
                }
            }
        }

        #[test]
        fn apply_is_pure(n in 1usize..6, choices in proptest::collection::vec(0usize..8, 0..20)) {
            let mut s = ParserState::initial(n);
            for c in choices {
                if s.is_done() { break; }
                let acts = s.valid_actions(["a"]);
                let a = &acts[c % acts.len()];
                let x = s.apply(a).unwrap();
                prop_assert_eq!(&x, &s.apply(a).unwrap());
                s = x;
            }
        }
    }
}
