//! Clinical ontology: classes arranged in a poly-hierarchy of at most three
//! levels, plus the modifier catalog and its per-class applicability.
//!
//! Catalogs are data. [`Ontology::load_catalog`] parses the JSON catalog
//! document, runs [`validate_catalog`] and resolves modifier applicability
//! downward from each node's level-1 ancestors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::fold_diacritics;

/// The seed catalog shipped with the crate.
pub const SEED_CATALOG: &str = include_str!("../data/seed_catalog.json");

pub const MAX_LEVEL: u8 = 3;

/// The complete modifier inventory every catalog must declare.
pub const MODIFIER_IDS: [&str; 13] = [
    "negation",
    "plan",
    "acute",
    "chronic",
    "worsened",
    "probable_possible",
    "normal",
    "augmented",
    "diminished",
    "beginning",
    "suspension",
    "ongoing",
    "past",
];

pub const NEGATION: &str = "negation";
pub const INTERVENTIONS: &str = "interventions";
/// Modifiers restricted to the interventions class.
pub const INTERVENTION_ONLY_MODIFIERS: [&str; 4] = ["beginning", "suspension", "ongoing", "past"];

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("malformed catalog: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("catalog failed validation with {} violation(s): {}", .0.len(), summarize(.0))]
    Validation(Vec<Violation>),
    #[error("unknown ontology node `{0}`")]
    UnknownNode(String),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OntologyNode {
    pub id: String,
    pub label: String,
    pub level: u8,
    pub parent_ids: Vec<String>,
    /// Applicable modifiers after inheritance from level-1 ancestors.
    pub modifier_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModifierScope {
    Universal,
    Classes(BTreeSet<String>),
}

impl ModifierScope {
    fn admits(&self, level1: &BTreeSet<String>) -> bool {
        match self {
            ModifierScope::Universal => true,
            ModifierScope::Classes(classes) => !classes.is_disjoint(level1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Modifier {
    pub id: String,
    pub label: String,
    pub scope: ModifierScope,
}

/// Rules checked by [`validate_catalog`]. The display name is what
/// violations are sorted and reported by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    BadId,
    Cycle,
    DuplicateId,
    EmptyLabel,
    LevelOutOfRange,
    MissingParent,
    ModifierCatalog,
    ParentLevelMismatch,
    RootWithParents,
    UnknownParent,
    UnknownScope,
    Unreachable,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::BadId => "bad id",
            Rule::Cycle => "cycle",
            Rule::DuplicateId => "duplicate id",
            Rule::EmptyLabel => "empty label",
            Rule::LevelOutOfRange => "level out of range",
            Rule::MissingParent => "missing parent",
            Rule::ModifierCatalog => "modifier catalog",
            Rule::ParentLevelMismatch => "parent level mismatch",
            Rule::RootWithParents => "root with parents",
            Rule::UnknownParent => "unknown parent",
            Rule::UnknownScope => "unknown scope",
            Rule::Unreachable => "unreachable",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Node or modifier id the rule was broken on.
    pub subject: String,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.subject, self.rule, self.detail)
    }
}

// ---------------------------------------------------------------------------
// Catalog file format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogFile {
    pub version: String,
    pub modifiers: Vec<CatalogModifier>,
    pub nodes: Vec<CatalogNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogModifier {
    pub id: String,
    pub label: String,
    pub scope: ScopeRepr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScopeRepr {
    Keyword(UniversalKeyword),
    Classes(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniversalKeyword {
    Universal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogNode {
    pub id: String,
    pub label: String,
    /// Kept signed so out-of-range values survive parsing and get reported.
    pub level: i64,
    pub parents: Vec<String>,
}

fn valid_node_id(id: &str) -> bool {
    !id.is_empty()
        && id.split('/').all(|seg| {
            !seg.is_empty()
                && seg
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        })
}

/// Checks every catalog rule and returns the violations sorted by subject,
/// then rule name. An empty list means the catalog is loadable.
pub fn validate_catalog(catalog: &CatalogFile) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |subject: &str, rule: Rule, detail: String| {
        out.push(Violation {
            subject: subject.to_string(),
            rule,
            detail,
        })
    };

    let mut by_id: BTreeMap<&str, &CatalogNode> = BTreeMap::new();
    for node in &catalog.nodes {
        if by_id.insert(node.id.as_str(), node).is_some() {
            push(&node.id, Rule::DuplicateId, "node id declared twice".into());
        }
    }

    for node in &catalog.nodes {
        if !valid_node_id(&node.id) {
            push(
                &node.id,
                Rule::BadId,
                "ids are lowercase ASCII segments separated by '/'".into(),
            );
        }
        if node.label.trim().is_empty() {
            push(&node.id, Rule::EmptyLabel, "label is blank".into());
        }
        if !(1..=MAX_LEVEL as i64).contains(&node.level) {
            push(
                &node.id,
                Rule::LevelOutOfRange,
                format!("level {} not in 1..={MAX_LEVEL}", node.level),
            );
        }
        if node.level == 1 && !node.parents.is_empty() {
            push(
                &node.id,
                Rule::RootWithParents,
                "level-1 nodes take no parents".into(),
            );
        }
        if node.level > 1 && node.parents.is_empty() {
            push(
                &node.id,
                Rule::MissingParent,
                format!("level {} node without parents", node.level),
            );
        }
        let mut mismatched = Vec::new();
        for parent in &node.parents {
            match by_id.get(parent.as_str()) {
                None => push(&node.id, Rule::UnknownParent, format!("`{parent}`")),
                Some(p) if p.level != node.level - 1 => {
                    mismatched.push(format!("`{parent}` is level {}", p.level))
                }
                Some(_) => {}
            }
        }
        if !mismatched.is_empty() {
            push(
                &node.id,
                Rule::ParentLevelMismatch,
                format!("level {} node: {}", node.level, mismatched.join(", ")),
            );
        }
    }

    // Cycles and reachability walk the declared parent graph only.
    for node in &catalog.nodes {
        if reaches_itself(&node.id, &by_id) {
            push(&node.id, Rule::Cycle, "node is its own ancestor".into());
        }
        if !reaches_root(&node.id, &by_id) {
            push(
                &node.id,
                Rule::Unreachable,
                "no path to a level-1 node".into(),
            );
        }
    }

    validate_modifiers(catalog, &by_id, &mut push);

    out.sort_by(|a, b| {
        a.subject
            .cmp(&b.subject)
            .then_with(|| a.rule.name().cmp(b.rule.name()))
            .then_with(|| a.detail.cmp(&b.detail))
    });
    out
}

fn validate_modifiers(
    catalog: &CatalogFile,
    by_id: &BTreeMap<&str, &CatalogNode>,
    push: &mut impl FnMut(&str, Rule, String),
) {
    let mut seen = BTreeSet::new();
    for m in &catalog.modifiers {
        if !seen.insert(m.id.as_str()) {
            push(&m.id, Rule::DuplicateId, "modifier declared twice".into());
        }
        if !MODIFIER_IDS.contains(&m.id.as_str()) {
            push(&m.id, Rule::ModifierCatalog, "not a known modifier".into());
        }
        if m.label.trim().is_empty() {
            push(&m.id, Rule::EmptyLabel, "label is blank".into());
        }
        if let ScopeRepr::Classes(classes) = &m.scope {
            if classes.is_empty() {
                push(&m.id, Rule::UnknownScope, "empty scope".into());
            }
            for c in classes {
                match by_id.get(c.as_str()) {
                    Some(n) if n.level == 1 => {}
                    _ => push(&m.id, Rule::UnknownScope, format!("`{c}` is not a level-1 node")),
                }
            }
        }
        if m.id == NEGATION && m.scope != ScopeRepr::Keyword(UniversalKeyword::Universal) {
            push(&m.id, Rule::ModifierCatalog, "negation must be universal".into());
        }
        if INTERVENTION_ONLY_MODIFIERS.contains(&m.id.as_str())
            && m.scope != ScopeRepr::Classes(vec![INTERVENTIONS.to_string()])
        {
            push(
                &m.id,
                Rule::ModifierCatalog,
                "scope must be exactly [interventions]".into(),
            );
        }
    }
    for required in MODIFIER_IDS {
        if !seen.contains(required) {
            push(required, Rule::ModifierCatalog, "required modifier missing".into());
        }
    }
}

fn reaches_itself(start: &str, by_id: &BTreeMap<&str, &CatalogNode>) -> bool {
    let mut stack: Vec<&str> = by_id
        .get(start)
        .map(|n| n.parents.iter().map(String::as_str).collect())
        .unwrap_or_default();
    let mut seen = BTreeSet::new();
    while let Some(id) = stack.pop() {
        if id == start {
            return true;
        }
        if !seen.insert(id) {
            continue;
        }
        if let Some(n) = by_id.get(id) {
            stack.extend(n.parents.iter().map(String::as_str));
        }
    }
    false
}

fn reaches_root(start: &str, by_id: &BTreeMap<&str, &CatalogNode>) -> bool {
    let mut stack = vec![start];
    let mut seen = BTreeSet::new();
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            continue;
        }
        let Some(n) = by_id.get(id) else { continue };
        if n.level == 1 && n.parents.is_empty() {
            return true;
        }
        stack.extend(n.parents.iter().map(String::as_str));
    }
    false
}

// ---------------------------------------------------------------------------
// Validated ontology
// ---------------------------------------------------------------------------

/// A validated, immutable ontology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    pub version: String,
    pub nodes: BTreeMap<String, OntologyNode>,
    pub modifiers: BTreeMap<String, Modifier>,
}

impl Ontology {
    /// The embedded seed catalog.
    pub fn seed() -> Ontology {
        Ontology::load_catalog(SEED_CATALOG.as_bytes()).expect("seed catalog is valid")
    }

    pub fn load_catalog(bytes: &[u8]) -> Result<Ontology, OntologyError> {
        let catalog: CatalogFile = serde_json::from_slice(bytes)?;
        Ontology::from_catalog(catalog)
    }

    pub fn from_catalog(catalog: CatalogFile) -> Result<Ontology, OntologyError> {
        let violations = validate_catalog(&catalog);
        if !violations.is_empty() {
            return Err(OntologyError::Validation(violations));
        }

        let modifiers: BTreeMap<String, Modifier> = catalog
            .modifiers
            .into_iter()
            .map(|m| {
                let scope = match m.scope {
                    ScopeRepr::Keyword(UniversalKeyword::Universal) => ModifierScope::Universal,
                    ScopeRepr::Classes(c) => ModifierScope::Classes(c.into_iter().collect()),
                };
                (
                    m.id.clone(),
                    Modifier {
                        id: m.id,
                        label: m.label,
                        scope,
                    },
                )
            })
            .collect();

        let mut ontology = Ontology {
            version: catalog.version,
            nodes: catalog
                .nodes
                .into_iter()
                .map(|n| {
                    (
                        n.id.clone(),
                        OntologyNode {
                            id: n.id,
                            label: n.label,
                            level: n.level as u8,
                            parent_ids: n.parents,
                            modifier_ids: BTreeSet::new(),
                        },
                    )
                })
                .collect(),
            modifiers,
        };

        let resolved: Vec<(String, BTreeSet<String>)> = ontology
            .nodes
            .keys()
            .map(|id| {
                let roots = ontology.level1_ancestors(id).expect("node exists");
                let mods = ontology
                    .modifiers
                    .values()
                    .filter(|m| m.scope.admits(&roots))
                    .map(|m| m.id.clone())
                    .collect();
                (id.clone(), mods)
            })
            .collect();
        for (id, mods) in resolved {
            ontology.nodes.get_mut(&id).expect("node exists").modifier_ids = mods;
        }
        Ok(ontology)
    }

    pub fn to_catalog(&self) -> CatalogFile {
        CatalogFile {
            version: self.version.clone(),
            modifiers: self
                .modifiers
                .values()
                .map(|m| CatalogModifier {
                    id: m.id.clone(),
                    label: m.label.clone(),
                    scope: match &m.scope {
                        ModifierScope::Universal => ScopeRepr::Keyword(UniversalKeyword::Universal),
                        ModifierScope::Classes(c) => ScopeRepr::Classes(c.iter().cloned().collect()),
                    },
                })
                .collect(),
            nodes: self
                .nodes
                .values()
                .map(|n| CatalogNode {
                    id: n.id.clone(),
                    label: n.label.clone(),
                    level: n.level as i64,
                    parents: n.parent_ids.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_catalog()).expect("catalog serializes")
    }

    /// Re-checks the catalog rules. Always empty for an ontology built by
    /// [`Ontology::load_catalog`].
    pub fn validate(&self) -> Vec<Violation> {
        validate_catalog(&self.to_catalog())
    }

    pub fn node(&self, id: &str) -> Result<&OntologyNode, OntologyError> {
        self.nodes
            .get(id)
            .ok_or_else(|| OntologyError::UnknownNode(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn roots(&self) -> impl Iterator<Item = &OntologyNode> {
        self.nodes.values().filter(|n| n.level == 1)
    }

    pub fn children<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a OntologyNode> + 'a {
        self.nodes
            .values()
            .filter(move |n| n.parent_ids.iter().any(|p| p == id))
    }

    /// Transitive closure over parents, excluding `id`.
    pub fn ancestors(&self, id: &str) -> Result<BTreeSet<String>, OntologyError> {
        let node = self.node(id)?;
        let mut out = BTreeSet::new();
        let mut stack: Vec<&str> = node.parent_ids.iter().map(String::as_str).collect();
        while let Some(p) = stack.pop() {
            if out.insert(p.to_string()) {
                if let Some(n) = self.nodes.get(p) {
                    stack.extend(n.parent_ids.iter().map(String::as_str));
                }
            }
        }
        Ok(out)
    }

    /// Transitive closure over children, excluding `id`.
    pub fn descendants(&self, id: &str) -> Result<BTreeSet<String>, OntologyError> {
        self.node(id)?;
        Ok(self
            .nodes
            .values()
            .filter(|n| n.id != id)
            .filter(|n| self.ancestors(&n.id).map(|a| a.contains(id)).unwrap_or(false))
            .map(|n| n.id.clone())
            .collect())
    }

    /// The level-1 classes a node belongs to; a level-1 node is its own class.
    pub fn level1_ancestors(&self, id: &str) -> Result<BTreeSet<String>, OntologyError> {
        let node = self.node(id)?;
        if node.level == 1 {
            return Ok(BTreeSet::from([node.id.clone()]));
        }
        Ok(self
            .ancestors(id)?
            .into_iter()
            .filter(|a| self.nodes.get(a).is_some_and(|n| n.level == 1))
            .collect())
    }

    pub fn applicable_modifiers(&self, id: &str) -> Result<&BTreeSet<String>, OntologyError> {
        Ok(&self.node(id)?.modifier_ids)
    }

    /// Number of levels below the node's class root (0 for level-1 nodes).
    pub fn depth_of(&self, id: &str) -> Result<u8, OntologyError> {
        Ok(self.node(id)?.level - 1)
    }

    /// Case- and diacritic-insensitive substring search over labels and ids.
    ///
    /// Exact label matches rank first, then label prefixes, then any other
    /// substring hit; ties break by id.
    pub fn search(&self, query: &str) -> Vec<String> {
        let q = fold_diacritics(query.trim());
        if q.is_empty() {
            return Vec::new();
        }
        let mut hits: Vec<(u8, &str)> = self
            .nodes
            .values()
            .filter_map(|n| {
                let label = fold_diacritics(&n.label);
                let rank = if label == q {
                    0
                } else if label.starts_with(&q) {
                    1
                } else if label.contains(&q) || fold_diacritics(&n.id).contains(&q) {
                    2
                } else {
                    return None;
                };
                Some((rank, n.id.as_str()))
            })
            .collect();
        hits.sort();
        hits.into_iter().map(|(_, id)| id.to_string()).collect()
    }
}
