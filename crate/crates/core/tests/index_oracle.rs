mod support;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clinotate::index::{build_index, load_index, save_index, IndexSource, QueryMode};
use clinotate::Ontology;

use support::{brute_frequencies, brute_texts, brute_timeline, random_corpus};

const NODES: [&str; 6] = [
    "clinical_findings/symptoms_signs",
    "clinical_findings/test_results",
    "anatomic_structure",
    "pathological_conditions/respiratory",
    "interventions/medication",
    "devices",
];

#[test]
fn queries_equal_linear_scan() {
    let o = Ontology::seed();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut queries = 0;
    for _ in 0..80 {
        let corpus = random_corpus(&mut rng, 50, &NODES, &o);
        let index = build_index(&corpus, &IndexSource::gold("gold")).unwrap();
        for p in ["pt0", "pt1", "pt2", "pt3", "nobody"] {
            let got: Vec<_> = index
                .concept_frequencies(p)
                .into_iter()
                .map(|f| (f.node_id, f.label, f.count))
                .collect();
            assert_eq!(got, brute_frequencies(&corpus, p));

            let node = *NODES.choose(&mut rng).unwrap();
            let got: Vec<_> = index
                .timeline(p, node)
                .into_iter()
                .map(|c| (c.date, c.doc_id, c.span))
                .collect();
            assert_eq!(got, brute_timeline(&corpus, p, node));

            let k = rng.gen_range(1..=3);
            let nodes: BTreeSet<String> = NODES.choose_multiple(&mut rng, k).map(|s| s.to_string()).collect();
            for (mode, all) in [(QueryMode::Any, false), (QueryMode::All, true)] {
                let got = index.texts_with_concepts(p, &nodes, mode, None).unwrap();
                assert_eq!(got.doc_ids, brute_texts(&corpus, p, &nodes, all));
                assert_eq!(got.count, got.doc_ids.len());
            }
            queries += 4;
        }
    }
    assert!(queries >= 200);
}

#[test]
fn saved_index_answers_identically() {
    let o = Ontology::seed();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let corpus = random_corpus(&mut rng, 30, &NODES, &o);
        let index = build_index(&corpus, &IndexSource::gold("gold")).unwrap();
        let mut buf = Vec::new();
        save_index(&index, &mut buf).unwrap();
        assert_eq!(load_index(buf.as_slice()).unwrap(), index);
    }
}
