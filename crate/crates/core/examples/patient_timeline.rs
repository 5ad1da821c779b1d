//! Per-patient concept index over a synthetic corpus: the word-cloud counts,
//! a concept timeline (plain and widened) and the text filter.

use std::collections::BTreeSet;

use clinotate::index::{build_index, load_index, save_index, IndexSource, QueryMode};
use clinotate::synthetic::{generate_corpus, GeneratorConfig};
use clinotate::text::char_slice;
use clinotate::Ontology;

fn main() {
    let o = Ontology::seed();
    let corpus = generate_corpus(&GeneratorConfig::seed().with_document_count(200), &o, 7).unwrap();
    let index = build_index(&corpus, &IndexSource::gold("gold")).unwrap();
    let patient = index.patients().into_iter().next().unwrap().to_string();
    println!("{} patients; {patient} has {} citations", index.patients().len(), index.citation_count(&patient));

    println!("\nword cloud:");
    let cloud = index.concept_frequencies(&patient);
    for f in cloud.iter().take(8) {
        println!("  {:>3} ({} negated)  {}  `{}`", f.count, f.negated, f.node_id, f.label);
    }

    let top = &cloud[0].node_id;
    println!("\ntimeline for {top}:");
    for c in index.timeline(&patient, top).iter().take(6) {
        let text = &corpus.iter().find(|d| d.doc.id == c.doc_id).unwrap().doc.text;
        println!("  {} {:<18} {} `{}`", c.date, c.record_type.as_str(), c.doc_id, char_slice(text, c.span));
    }
    let parent = o.node(top).unwrap().parent_ids.iter().next().cloned().unwrap_or_else(|| top.clone());
    println!(
        "{parent}: {} citations exact, {} widened to descendants",
        index.timeline(&patient, &parent).len(),
        index.timeline_widened(&patient, &parent, &o).len()
    );

    let wanted: BTreeSet<String> = cloud.iter().take(2).map(|f| f.node_id.clone()).collect();
    let any = index.texts_with_concepts(&patient, &wanted, QueryMode::Any, None).unwrap();
    let all = index.texts_with_concepts(&patient, &wanted, QueryMode::All, None).unwrap();
    println!("\ndocuments citing any of {wanted:?}: {}; all: {}", any.count, all.count);

    let mut buf = Vec::new();
    save_index(&index, &mut buf).unwrap();
    assert_eq!(load_index(buf.as_slice()).unwrap(), index);
    println!("saved index: {} bytes", buf.len());
}
