//! Pseudonymization audit: flags identifier-shaped strings in document text.
//!
//! Rules use a restricted pattern syntax:
//!
//! | pattern         | matches                                              |
//! |-----------------|------------------------------------------------------|
//! | `digits:N+`     | maximal digit runs of length at least `N`            |
//! | `digits:N-M`    | maximal digit runs of length `N..=M`                 |
//! | `date:dmy`      | `dd/mm/yyyy`, also with `-` or `.` separators        |
//! | `date:ymd`      | `yyyy-mm-dd`, also with `/` or `.` separators        |
//! | `names:<list>`  | whole-word, case-insensitive entries of a name list  |

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::Span;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRule {
    pub id: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub rule_id: String,
    pub span: Span,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("rule `{id}`: unsupported pattern `{pattern}`")]
    BadPattern { id: String, pattern: String },
    #[error("rule `{id}`: unknown name list `{list}`")]
    UnknownList { id: String, list: String },
    #[error("malformed rule file: {0}")]
    Parse(#[from] serde_json::Error),
}

pub fn default_rules() -> Vec<AuditRule> {
    let rule = |id: &str, pattern: &str| AuditRule {
        id: id.to_string(),
        pattern: pattern.to_string(),
    };
    vec![
        rule("long-digit-run", "digits:7+"),
        rule("date-dmy", "date:dmy"),
        rule("date-ymd", "date:ymd"),
        rule("person-name", "names:names"),
    ]
}

pub fn parse_rules(json: &str) -> Result<Vec<AuditRule>, AuditError> {
    Ok(serde_json::from_str(json)?)
}

enum Matcher {
    Digits { min: usize, max: usize },
    Regex(Regex),
}

/// A compiled rule set.
pub struct Auditor {
    rules: Vec<(String, Matcher)>,
}

impl Auditor {
    /// Compiles `rules`; `names:<list>` patterns look lists up in `name_lists`.
    /// A `names` rule whose list is present but empty never fires.
    pub fn new(
        rules: &[AuditRule],
        name_lists: &BTreeMap<String, Vec<String>>,
    ) -> Result<Auditor, AuditError> {
        let mut compiled = Vec::new();
        for r in rules {
            let bad = || AuditError::BadPattern {
                id: r.id.clone(),
                pattern: r.pattern.clone(),
            };
            let (kind, arg) = r.pattern.split_once(':').ok_or_else(bad)?;
            let matcher = match kind {
                "digits" => {
                    let (min, max) = if let Some(n) = arg.strip_suffix('+') {
                        (n.parse().map_err(|_| bad())?, usize::MAX)
                    } else if let Some((a, b)) = arg.split_once('-') {
                        (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)
                    } else {
                        return Err(bad());
                    };
                    if min == 0 || min > max {
                        return Err(bad());
                    }
                    Matcher::Digits { min, max }
                }
                "date" => {
                    let re = match arg {
                        "dmy" => r"\b\d{1,2}[/.-]\d{1,2}[/.-]\d{4}\b",
                        "ymd" => r"\b\d{4}[/.-]\d{1,2}[/.-]\d{1,2}\b",
                        _ => return Err(bad()),
                    };
                    Matcher::Regex(Regex::new(re).expect("static regex"))
                }
                "names" => {
                    let Some(list) = name_lists.get(arg) else {
                        if arg == "names" {
                            continue;
                        }
                        return Err(AuditError::UnknownList {
                            id: r.id.clone(),
                            list: arg.to_string(),
                        });
                    };
                    let words: Vec<String> = list
                        .iter()
                        .filter(|n| !n.trim().is_empty())
                        .map(|n| regex::escape(n.trim()))
                        .collect();
                    if words.is_empty() {
                        continue;
                    }
                    let re = format!(r"(?i)\b(?:{})\b", words.join("|"));
                    Matcher::Regex(Regex::new(&re).map_err(|_| bad())?)
                }
                _ => return Err(bad()),
            };
            compiled.push((r.id.clone(), matcher));
        }
        Ok(Auditor { rules: compiled })
    }

    pub fn with_defaults() -> Auditor {
        Auditor::new(&default_rules(), &BTreeMap::new()).expect("default rules compile")
    }

    /// Findings sorted by span start, then rule id. Empty means the text passes.
    pub fn audit(&self, text: &str) -> Vec<Finding> {
        let chars: Vec<char> = text.chars().collect();
        // byte offset -> char offset
        let mut char_at = vec![0usize; text.len() + 1];
        let mut ci = 0;
        for (bi, c) in text.char_indices() {
            char_at[bi..bi + c.len_utf8()].fill(ci);
            ci += 1;
        }
        char_at[text.len()] = ci;

        let mut out = Vec::new();
        for (id, m) in &self.rules {
            match m {
                Matcher::Digits { min, max } => {
                    let mut i = 0;
                    while i < chars.len() {
                        if !chars[i].is_ascii_digit() {
                            i += 1;
                            continue;
                        }
                        let s = i;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                        let len = i - s;
                        if len >= *min && len <= *max {
                            out.push(Finding {
                                rule_id: id.clone(),
                                span: Span::new(s, i),
                                text: chars[s..i].iter().collect(),
                            });
                        }
                    }
                }
                Matcher::Regex(re) => {
                    for hit in re.find_iter(text) {
                        out.push(Finding {
                            rule_id: id.clone(),
                            span: Span::new(char_at[hit.start()], char_at[hit.end()]),
                            text: hit.as_str().to_string(),
                        });
                    }
                }
            }
        }
        out.sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.rule_id.cmp(&b.rule_id)));
        out
    }
}

/// Audits one document text with the given rules.
pub fn pseudonymization_audit(
    text: &str,
    rules: &[AuditRule],
    name_lists: &BTreeMap<String, Vec<String>>,
) -> Result<Vec<Finding>, AuditError> {
    Ok(Auditor::new(rules, name_lists)?.audit(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_digit_run() {
        let f = Auditor::with_defaults().audit("processo 123456789 ; glicemia 112");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].rule_id, "long-digit-run");
        assert_eq!(f[0].span, Span::new(9, 18));
    }

    #[test]
    fn dates_and_names() {
        let lists = BTreeMap::from([("names".to_string(), vec!["Maria Silva".to_string()])]);
        let f = pseudonymization_audit(
            "Nasceu a 03/04/1950, filha de maria silva; 2001-12-09",
            &default_rules(),
            &lists,
        )
        .unwrap();
        let ids: Vec<&str> = f.iter().map(|f| f.rule_id.as_str()).collect();
        assert_eq!(ids, vec!["date-dmy", "person-name", "date-ymd"]);
        assert_eq!(f[1].text, "maria silva");
    }

    #[test]
    fn char_offsets_after_diacritics() {
        let f = Auditor::with_defaults().audit("ção 1234567");
        assert_eq!(f[0].span, Span::new(4, 11));
    }

    #[test]
    fn empty_rule_list_passes_everything() {
        let f = pseudonymization_audit("123456789 01/01/2000", &[], &BTreeMap::new()).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn bounded_digit_rule_and_bad_patterns() {
        let rules = vec![AuditRule {
            id: "nif".into(),
            pattern: "digits:9-9".into(),
        }];
        let a = Auditor::new(&rules, &BTreeMap::new()).unwrap();
        assert_eq!(a.audit("123456789 1234567890").len(), 1);
        for p in ["digits:x+", "date:mdy", "regex:.*", "nocolon", "digits:5-2"] {
            let r = vec![AuditRule { id: "r".into(), pattern: p.into() }];
            assert!(Auditor::new(&r, &BTreeMap::new()).is_err(), "{p}");
        }
        let r = vec![AuditRule { id: "r".into(), pattern: "names:staff".into() }];
        assert!(matches!(
            Auditor::new(&r, &BTreeMap::new()),
            Err(AuditError::UnknownList { .. })
        ));
    }

    #[test]
    fn rules_parse_from_json() {
        let rules = parse_rules(r#"[{"id":"a","pattern":"digits:7+"}]"#).unwrap();
        assert_eq!(rules[0].pattern, "digits:7+");
    }
}
