mod support;

use clinotate::corpus::corpus_examples;
use clinotate::model::{train, Hyperparams};
use clinotate::synthetic::{generate_corpus, GeneratorConfig};
use clinotate::Ontology;

use support::{bits, reference_perceptron};

fn fixture(o: &Ontology) -> Vec<clinotate::corpus::SentenceExample> {
    let cfg = GeneratorConfig::seed()
        .with_sentence_count(50)
        .with_sentences_per_document(1, 1);
    let ex = corpus_examples(&generate_corpus(&cfg, o, 5).unwrap(), "gold");
    assert_eq!(ex.len(), 50);
    ex
}

#[test]
fn plain_setting_matches_reference_bit_for_bit() {
    let o = Ontology::seed();
    let ex = fixture(&o);
    for (epochs, seed) in [(1, 0), (3, 9)] {
        let hp = Hyperparams {
            epochs,
            seed,
            depth_weight_alpha: 0.0,
            averaging: false,
            ..Hyperparams::default()
        };
        let out = train(&ex, &[], &o, &hp).unwrap();
        let (aw, mw) = reference_perceptron(&ex, &o, epochs, seed);
        assert!(!aw.is_empty() && !mw.is_empty());
        assert_eq!(bits(&out.model.action_weights()), bits(&aw), "epochs {epochs}");
        assert_eq!(bits(&out.model.modifier_weights()), bits(&mw), "epochs {epochs}");
    }
}

#[test]
fn depth_weighting_departs_from_reference() {
    let o = Ontology::seed();
    let ex = fixture(&o);
    let hp = Hyperparams {
        epochs: 2,
        averaging: false,
        ..Hyperparams::default()
    };
    let out = train(&ex, &[], &o, &hp).unwrap();
    let (aw, _) = reference_perceptron(&ex, &o, 2, hp.seed);
    assert_ne!(bits(&out.model.action_weights()), bits(&aw));
}
