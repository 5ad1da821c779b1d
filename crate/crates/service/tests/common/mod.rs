//! Fixture store, request helper and schema checks for API tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tower::ServiceExt;

use clinotate::corpus::{corpus_examples, corpus_to_string, AnnotationSet, Document, Mention, RecordType};
use clinotate::index::IndexSource;
use clinotate::model::{train, Hyperparams, Model};
use clinotate::synthetic::{generate_corpus, GeneratorConfig};
use clinotate::{AnnotatedDocument, Ontology, Span};
use clinotate_service::api::{router, AppState};
use clinotate_service::store::Store;

pub const FINDING: &str = "clinical_findings/symptoms_signs";
pub const ANAT: &str = "anatomic_structure";
pub const TESTS: &str = "tests";

fn doc(id: &str, patient: &str, date: &str, rt: RecordType, specialty: &str, text: &str) -> Document {
    Document {
        id: id.into(),
        patient_id: patient.into(),
        date: date.parse().unwrap(),
        record_type: rt,
        specialty: specialty.into(),
        text: text.into(),
    }
}

fn annotate(o: &Ontology, d: Document, mentions: &[(usize, usize, &str, &[&str])]) -> AnnotatedDocument {
    let mut set = AnnotationSet::new(&d.id, "gold");
    for &(s, e, node, mods) in mentions {
        let m = Mention::new(Span::new(s, e), node).with_modifiers(mods.iter().copied());
        set.add_mention(m, o, &d).unwrap();
    }
    AnnotatedDocument {
        doc: d,
        annotations: vec![set],
    }
}

/// Patient p1 has "derrame pleural" on three dates; patient p2 has one
/// document citing a cough twelve times.
pub fn fixture_corpus(o: &Ontology) -> Vec<AnnotatedDocument> {
    let cough = "Tosse seca. ".repeat(12);
    let coughs: Vec<(usize, usize, &str, &[&str])> = (0..12).map(|i| (i * 12, i * 12 + 5, FINDING, &[][..])).collect();
    vec![
        annotate(
            o,
            doc("d1", "p1", "2021-03-05", RecordType::DailyNote, "pneumologia", "Derrame pleural à direita. Sem febre."),
            &[(0, 15, FINDING, &[]), (8, 15, ANAT, &[]), (31, 36, FINDING, &["negation"])],
        ),
        annotate(
            o,
            doc("d2", "p1", "2021-01-10", RecordType::TestResult, "radiologia", "Rx tórax: derrame pleural bilateral."),
            &[(0, 8, TESTS, &[]), (3, 8, ANAT, &[]), (10, 25, FINDING, &[]), (18, 25, ANAT, &[])],
        ),
        annotate(
            o,
            doc("d3", "p1", "2021-06-20", RecordType::DischargeSummary, "medicina interna", "Alta. Derrame pleural resolvido. Tosse."),
            &[(6, 21, FINDING, &[]), (33, 38, FINDING, &[])],
        ),
        annotate(
            o,
            doc("d4", "p2", "2022-02-02", RecordType::DailyNote, "medicina interna", cough.trim_end()),
            &coughs,
        ),
        annotate(
            o,
            doc("d5", "p2", "2022-02-09", RecordType::TestResult, "cardiologia", "Hemograma sem alterações."),
            &[(0, 9, TESTS, &[])],
        ),
    ]
}

pub struct Fixture {
    pub state: Arc<AppState>,
    pub router: Router,
    pub store_path: PathBuf,
    _dir: tempfile::TempDir,
}

pub fn fixture(model: Option<Model>, token: Option<&str>) -> Fixture {
    let o = Ontology::seed();
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("store.jsonl");
    std::fs::write(&store_path, corpus_to_string(&fixture_corpus(&o))).unwrap();
    let store = Store::open(&store_path, &o).unwrap();
    let state = Arc::new(
        AppState::new(o, store, model, "gold", IndexSource::gold("gold"), token.map(String::from)).unwrap(),
    );
    Fixture {
        router: router(state.clone()),
        state,
        store_path,
        _dir: dir,
    }
}

/// A small tagger trained on the synthetic templates.
pub fn small_model() -> Model {
    let o = Ontology::seed();
    let cfg = GeneratorConfig::seed()
        .with_sentence_count(400)
        .with_sentences_per_document(1, 1);
    let ex = corpus_examples(&generate_corpus(&cfg, &o, 3).unwrap(), "gold");
    let hp = Hyperparams {
        epochs: 3,
        ..Hyperparams::default()
    };
    train(&ex, &[], &o, &hp).unwrap().model
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Option<Value>,
}

pub async fn call(router: &Router, method: Method, uri: &str, body: Option<&str>, headers: &[(&str, &str)]) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(Body::from(body.unwrap_or("").to_string())).unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        None
    } else {
        Some(serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{uri}: non-JSON body ({e})")))
    };
    Reply { status, headers, body }
}

pub async fn get(router: &Router, uri: &str) -> Reply {
    call(router, Method::GET, uri, None, &[]).await
}

pub async fn post(router: &Router, uri: &str, body: &str) -> Reply {
    call(router, Method::POST, uri, Some(body), &[]).await
}

pub fn file_hash(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The published schema document, checked one component at a time.
pub struct Contract {
    doc: Value,
}

impl Contract {
    pub fn load() -> Contract {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/api.json");
        Contract {
            doc: serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap(),
        }
    }

    pub fn components(&self) -> Vec<String> {
        self.doc["components"]["schemas"].as_object().unwrap().keys().cloned().collect()
    }

    pub fn validate(&self, component: &str, instance: &Value) -> Result<(), String> {
        assert!(
            self.doc["components"]["schemas"].get(component).is_some(),
            "schema has no component {component}"
        );
        let root = serde_json::json!({
            "$ref": format!("#/components/schemas/{component}"),
            "components": self.doc["components"],
        });
        let validator = jsonschema::validator_for(&root).map_err(|e| e.to_string())?;
        let errors: Vec<String> = validator
            .iter_errors(instance)
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(format!("{component}: {}", errors.join("; ")))
        }
    }

    /// Schema check plus a round trip through the Rust wire type.
    pub fn round_trip<T>(&self, component: &str, instance: &Value) -> Result<T, String>
    where
        T: serde::de::DeserializeOwned + serde::Serialize,
    {
        self.validate(component, instance)?;
        let typed: T = serde_json::from_value(instance.clone()).map_err(|e| format!("{component}: {e}"))?;
        let back = serde_json::to_value(&typed).unwrap();
        if &back != instance {
            return Err(format!("{component}: round trip changed the payload\n{instance}\n{back}"));
        }
        Ok(typed)
    }
}
