//! Identifier audit of note texts: long digit runs, dates and listed names.

use std::collections::BTreeMap;

use clinotate::audit::{default_rules, parse_rules, pseudonymization_audit, Auditor};

fn main() {
    let notes = [
        "Doente com processo 123456789 internado a 03/02/2021.",
        "Observado pela Dra. Maria Silva; glicemia 112 mg/dL.",
        "Sem alterações desde 2020-11-04.",
        "Hemograma normal.",
    ];

    let auditor = Auditor::with_defaults();
    for note in notes {
        for f in auditor.audit(note) {
            println!("{:<16} [{}, {}) `{}`", f.rule_id, f.span.start, f.span.end, f.text);
        }
    }

    // custom rules with a name list
    let mut rules = default_rules();
    rules.extend(parse_rules(r#"[{"id": "staff", "pattern": "names:staff"}]"#).unwrap());
    let lists = BTreeMap::from([("staff".to_string(), vec!["Maria Silva".to_string()])]);
    let findings = pseudonymization_audit(notes[1], &rules, &lists).unwrap();
    println!("\n{} findings with the staff list: {:?}", findings.len(), findings.iter().map(|f| &f.rule_id).collect::<Vec<_>>());
}
