//! Hand annotation of one note: nested mentions, modifiers, the rejection
//! errors, annotate-all and the corpus record that gets stored.

use std::collections::BTreeSet;

use clinotate::corpus::{annotate_all_occurrences, Document, Mention, RecordType};
use clinotate::text::char_slice;
use clinotate::{AnnotatedDocument, AnnotationSet, Ontology, Span};

fn main() {
    let o = Ontology::seed();
    let doc = Document {
        id: "note-1".into(),
        patient_id: "pt-7".into(),
        date: "2021-03-05".parse().unwrap(),
        record_type: RecordType::DailyNote,
        specialty: "pneumologia".into(),
        text: "Derrame pleural à direita. Sem febre. Tosse seca; tosse noturna.".into(),
    };
    let mut set = AnnotationSet::new(&doc.id, "ana");

    let accepted = [
        Mention::new(Span::new(0, 15), "clinical_findings/symptoms_signs"),
        Mention::new(Span::new(8, 15), "anatomic_structure"),
        Mention::new(Span::new(31, 36), "clinical_findings/symptoms_signs").with_modifiers(["negation"]),
    ];
    for m in accepted {
        let m = set.add_mention(m, &o, &doc).unwrap();
        println!("{} {:?} {} `{}`", m.id, m.modifier_ids, m.node_id, char_slice(&doc.text, m.span));
    }

    let rejected = [
        Mention::new(Span::new(3, 12), "clinical_findings/symptoms_signs"),
        Mention::new(Span::new(38, 43), "tests").with_modifiers(["chronic"]),
        Mention::new(Span::new(0, 15), "clinical_findings/symptoms_signs"),
        Mention::new(Span::new(60, 90), "devices"),
        Mention::new(Span::new(0, 3), "no/such/node"),
    ];
    for m in rejected {
        let e = set.add_mention(m, &o, &doc).unwrap_err();
        println!("rejected {}: {e}", e.code());
    }

    // every token-aligned, case-sensitive "tosse": only the lower-case one
    let outcome = annotate_all_occurrences(&mut set, &doc, "tosse", "clinical_findings/symptoms_signs", &BTreeSet::new(), &o);
    println!("annotate-all: {} added, {} skipped", outcome.added.len(), outcome.skipped.len());

    let removed = set.remove_mention("ana-m1").map(|m| m.span);
    println!("removed {removed:?}");

    let record = AnnotatedDocument { doc, annotations: vec![set] };
    println!("{}", record.to_json_line());
}
