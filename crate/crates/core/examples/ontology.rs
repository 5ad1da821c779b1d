//! Browse the seed catalog: validation, search, hierarchy walks and modifier
//! applicability.
//!
//!     cargo run -p clinotate --example ontology -- pleural

use clinotate::Ontology;

fn main() {
    let o = Ontology::seed();
    let violations = o.validate();
    println!("catalog {} with {} nodes, {} violations", o.version, o.nodes.len(), violations.len());

    let query = std::env::args().nth(1).unwrap_or_else(|| "respir".into());
    println!("\nsearch `{query}`:");
    for id in o.search(&query) {
        let node = o.node(&id).unwrap();
        println!("  {id} ({}) level {}", node.label, node.level);
    }

    println!("\nlevel-1 classes:");
    for root in o.roots() {
        let children: Vec<_> = o.children(&root.id).map(|c| c.id.as_str()).collect();
        println!("  {} -> [{}]", root.id, children.join(", "));
    }

    // poly-hierarchy: a node reachable from more than one level-1 class
    if let Some(id) = o.nodes.keys().find(|id| o.level1_ancestors(id).unwrap().len() > 1) {
        println!("\n{id} sits under {:?}", o.level1_ancestors(id).unwrap());
    }

    println!("\napplicable modifiers:");
    for id in ["tests", "interventions/medication", "clinical_findings"] {
        let mods: Vec<_> = o.applicable_modifiers(id).unwrap().iter().cloned().collect();
        println!("  {id}: {}", mods.join(" "));
    }
}
