//! Seeded train/dev/test split of a synthetic corpus and its statistics
//! table.
//!
//!     cargo run -p clinotate --example split_stats -- 3000 7

use clinotate::corpus::{render_stats_table, split_dataset, split_stats, DEFAULT_RATIOS};
use clinotate::synthetic::{generate_corpus, GeneratorConfig};
use clinotate::Ontology;

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("numeric argument"));
    let documents = args.next().unwrap_or(3000) as usize;
    let seed = args.next().unwrap_or(7);

    let o = Ontology::seed();
    let corpus = generate_corpus(&GeneratorConfig::seed().with_document_count(documents), &o, seed).unwrap();
    let split = split_dataset(corpus, DEFAULT_RATIOS, seed);
    println!("# seed {seed}, ratios {:?}", DEFAULT_RATIOS.sizes(documents));
    print!("{}", render_stats_table(&split_stats(&split)));
}
