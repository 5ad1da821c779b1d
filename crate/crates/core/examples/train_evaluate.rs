//! Generate a synthetic corpus, train the nested tagger, score it on held-out
//! sentences and tag a new note.
//!
//!     cargo run --release -p clinotate --example train_evaluate -- 2400 11

use std::time::Instant;

use clinotate::corpus::{corpus_examples, split_dataset, SplitRatios};
use clinotate::evaluation::nerc_scores;
use clinotate::model::{annotate_corpus, load_model, model_to_string, train, Hyperparams};
use clinotate::synthetic::{generate_corpus, GeneratorConfig};
use clinotate::text::char_slice;
use clinotate::{AnnotationSet, Ontology};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("numeric argument"));
    let sentences = args.next().unwrap_or(2400) as usize;
    let seed = args.next().unwrap_or(11);

    let o = Ontology::seed();
    let cfg = GeneratorConfig::seed().with_sentence_count(sentences).with_sentences_per_document(1, 1);
    let corpus = generate_corpus(&cfg, &o, seed).unwrap();
    let split = split_dataset(corpus, SplitRatios::new(5.0 / 6.0, 1.0 / 12.0, 1.0 / 12.0).unwrap(), seed);
    let train_set = corpus_examples(&split.train, "gold");
    let dev_set = corpus_examples(&split.dev, "gold");
    println!("# seed {seed}: {} train, {} dev, {} test sentences", train_set.len(), dev_set.len(), split.test.len());

    let started = Instant::now();
    let hp = Hyperparams { seed, beam_width: 4, ..Hyperparams::default() };
    let outcome = train(&train_set, &dev_set, &o, &hp).unwrap();
    for e in &outcome.epochs {
        println!("epoch {}  dev F1 {:.4}  updates {}/{}", e.epoch, e.dev_f1, e.action_updates, e.modifier_updates);
    }
    println!("kept epoch {} after {:.1?}", outcome.best_epoch, started.elapsed());

    // a saved model loads back unchanged
    let model = load_model(model_to_string(&outcome.model).as_bytes(), &o.version, false).unwrap();

    let mut test = split.test;
    annotate_corpus(&model, &mut test, &o, "model").unwrap();
    let side = |who: &str| -> Vec<AnnotationSet> { test.iter().map(|d| d.annotator(who).unwrap().clone()).collect() };
    let report = nerc_scores(&side("gold"), &side("model"), &o).unwrap();
    println!("\n{}", report.to_table());

    let note = "Doente refere derrame pleural . Sem febre .";
    for m in model.predict_text(note, &o).unwrap() {
        println!("`{}` {} {:?}", char_slice(note, m.span), m.node_id, m.modifier_ids);
    }
}
