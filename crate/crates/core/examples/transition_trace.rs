//! The static oracle on a nested gold forest, its action trace, and a replay
//! back to the same mentions.

use clinotate::parser::{format_trace, nesting_depths, oracle_actions, replay, ParserState};
use clinotate::tokenize;

fn main() {
    let text = "Rx tórax revelou derrame pleural bilateral";
    let tokens = tokenize(text).tokens;
    let forms: Vec<&str> = tokens.iter().map(|t| t.form.as_str()).collect();
    println!("tokens: {forms:?}");

    // token ranges
    let gold = vec![
        (0..2, "tests".to_string()),
        (1..2, "anatomic_structure".to_string()),
        (3..5, "clinical_findings/symptoms_signs".to_string()),
        (4..5, "anatomic_structure".to_string()),
    ];
    let actions = oracle_actions(tokens.len(), &gold).unwrap();
    println!("{} actions:\n{}", actions.len(), format_trace(&actions));

    let mut state = ParserState::initial(tokens.len());
    for a in &actions {
        state = state.apply(a).unwrap();
        let stack: Vec<String> = state.stack.iter().map(|r| forms[r.clone()].join(" ")).collect();
        println!("{:<40} stack {stack:?} buffer at {}", a.to_string(), state.buffer_pos);
    }

    let end = replay(tokens.len(), &actions).unwrap();
    let ranges: Vec<_> = end.emitted.iter().map(|(r, _)| r.clone()).collect();
    for ((r, label), depth) in end.emitted.iter().zip(nesting_depths(&ranges)) {
        println!("depth {depth}: `{}` {label}", forms[r.clone()].join(" "));
    }
}
