//! Two annotators on the same notes: pairwise agreement under each matching
//! mode, and the corpus report.

use clinotate::agreement::{agreement_report, pairwise_agreement, MatchMode};
use clinotate::corpus::{Document, Mention, RecordType};
use clinotate::{AnnotatedDocument, AnnotationSet, Ontology, Span};

fn doc(id: &str, text: &str) -> Document {
    Document {
        id: id.into(),
        patient_id: "pt-1".into(),
        date: "2022-01-15".parse().unwrap(),
        record_type: RecordType::DailyNote,
        specialty: "medicina interna".into(),
        text: text.into(),
    }
}

fn annotate(o: &Ontology, d: &Document, who: &str, mentions: &[(usize, usize, &str)]) -> AnnotationSet {
    let mut set = AnnotationSet::new(&d.id, who);
    for &(s, e, node) in mentions {
        set.add_mention(Mention::new(Span::new(s, e), node), o, d).unwrap();
    }
    set
}

fn main() {
    let o = Ontology::seed();
    let d1 = doc("n1", "Derrame pleural à direita. Sem febre.");
    let d2 = doc("n2", "Iniciou amoxicilina por pneumonia.");

    let finding = "clinical_findings/symptoms_signs";
    let a1 = annotate(&o, &d1, "ana", &[(0, 15, finding), (8, 15, "anatomic_structure"), (31, 36, finding)]);
    // same finding, shorter span; misses the anatomy
    let b1 = annotate(&o, &d1, "rui", &[(0, 7, finding), (31, 36, finding)]);
    let a2 = annotate(&o, &d2, "ana", &[(8, 19, "interventions/medication"), (24, 33, "pathological_conditions/respiratory")]);
    let b2 = annotate(&o, &d2, "rui", &[(8, 19, "interventions/medication"), (24, 33, "pathological_conditions")]);

    for mode in [MatchMode::Exact, MatchMode::Relaxed, MatchMode::ClassOnly] {
        let p = pairwise_agreement(&a1, &b1, mode, &o).unwrap();
        let q = pairwise_agreement(&a2, &b2, mode, &o).unwrap();
        println!("{:<10} n1 F1 {:.3}   n2 F1 {:.3}", mode.as_str(), p.f1, q.f1);
    }

    let corpus = vec![
        AnnotatedDocument { doc: d1, annotations: vec![a1, b1] },
        AnnotatedDocument { doc: d2, annotations: vec![a2, b2] },
    ];
    println!("\n{}", agreement_report(&corpus, MatchMode::Relaxed, &o).unwrap().to_table());
}
