//! Clinical text annotation and nested named-entity recognition.
//!
//! * [`ontology`]: class catalog, poly-hierarchy and modifier applicability.
//! * [`corpus`]: documents, standoff mentions, corpus files and splits.
//! * [`synthetic`]: seeded generator of annotated clinical sentences.
//! * [`audit`]: identifier-pattern audit for corpus texts.
//! * [`agreement`]: inter-annotator agreement.
//! * [`parser`]: the transition system and its static oracle.
//! * [`model`]: perceptron action scorer, decoding and modifier classifier.
//! * [`evaluation`]: exact-match NERC scoring.
//! * [`index`]: per-patient concept index behind word clouds and timelines.

pub mod agreement;
pub mod audit;
pub mod corpus;
pub mod evaluation;
pub mod index;
pub mod model;
pub mod ontology;
pub mod parser;
pub mod synthetic;
pub mod text;

pub use corpus::{AnnotatedDocument, AnnotationSet, Document, Mention, RecordType};
pub use ontology::Ontology;
pub use text::{tokenize, Span, Token};
