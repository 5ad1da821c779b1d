//! The `clinotate` command line.
//!
//! Every subcommand writes its report to the given sink; machine-readable
//! output is JSON when `--json` is passed. Commands that draw random numbers
//! start their output with the seed.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use clinotate::agreement::{agreement_report, MatchMode};
use clinotate::corpus::{
    corpus_examples, read_corpus, render_stats_table, split_dataset, split_stats, write_corpus, SplitRatios,
    DEFAULT_RATIOS,
};
use clinotate::evaluation::nerc_scores;
use clinotate::index::{build_index, load_index, save_index, IndexSource, QueryMode, SourceKind};
use clinotate::model::{annotate_corpus, load_model, save_model, train, Hyperparams, Model};
use clinotate::ontology::{validate_catalog, CatalogFile};
use clinotate::parser::format_trace;
use clinotate::synthetic::{generate_corpus, GeneratorConfig};
use clinotate::text::{char_slice, tokenize};
use clinotate::{AnnotatedDocument, Ontology};

use crate::api::{serve, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "clinotate", version, about = "Clinical nested mention annotation, tagging and concept indexing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a catalog file against the ontology rules and list violations.
    ValidateOntology(ValidateArgs),
    /// Write a seeded synthetic annotated corpus.
    GenSynthetic(GenArgs),
    /// Shuffle a corpus and write train/dev/test files plus a stats table.
    Split(SplitArgs),
    /// Train a tagger and write the model file.
    Train(TrainArgs),
    /// Score a model against a gold corpus.
    Evaluate(EvaluateArgs),
    /// Pairwise agreement between the annotators of a corpus.
    Agreement(AgreementArgs),
    /// Build and save a concept index.
    Index(IndexArgs),
    /// Run a query against a saved concept index.
    Query(QueryArgs),
    /// Start the HTTP JSON API.
    Serve(ServeArgs),
    /// Tag a plain-text file and write standoff annotations.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CatalogArg {
    /// Catalog JSON file; the built-in seed catalog when omitted.
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
}

impl CatalogArg {
    fn load(&self) -> Result<Ontology, CliError> {
        match &self.catalog {
            None => Ok(Ontology::seed()),
            Some(p) => Ontology::load_catalog(&read_file(p)?).map_err(|e| CliError::new("ontology", e)),
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Print JSON instead of one violation per line.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output corpus file (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Generator config JSON; the built-in clinical templates when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of sentences to generate.
    #[arg(long, conflicts_with = "documents")]
    pub sentences: Option<usize>,
    /// Number of documents to generate.
    #[arg(long)]
    pub documents: Option<usize>,
    /// Sentences per document as MIN,MAX.
    #[arg(long, value_name = "MIN,MAX")]
    pub per_document: Option<String>,
    /// Seed of the random number generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub catalog: CatalogArg,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Corpus to split.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Directory receiving train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Train, dev and test proportions.
    #[arg(long, value_name = "TRAIN,DEV,TEST")]
    pub ratios: Option<String>,
    /// Seed of the random number generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the stats block as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Dev corpus used to pick the best epoch.
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Where to write the model.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Annotator whose mentions are the training targets.
    #[arg(long, default_value = "gold")]
    pub annotator: String,
    /// Passes over the training data.
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Beam width used for dev decoding and stored in the model.
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    /// Depth weighting of updates; 0 disables it.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Seed of the random number generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the final weights instead of their running average.
    #[arg(long)]
    pub no_averaging: bool,
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Print per-epoch scores as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Gold corpus.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Model file written by `train`.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Annotator holding the gold mentions.
    #[arg(long, default_value = "gold")]
    pub annotator: String,
    /// Override the model's beam width.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Load a model trained against another catalog version.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Also write the JSON report to this file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    /// Same span and node.
    Exact,
    /// Overlapping spans, same node.
    Relaxed,
    /// Same span, same level-1 class.
    ClassOnly,
}

impl From<ModeArg> for MatchMode {
    fn from(m: ModeArg) -> MatchMode {
        match m {
            ModeArg::Exact => MatchMode::Exact,
            ModeArg::Relaxed => MatchMode::Relaxed,
            ModeArg::ClassOnly => MatchMode::ClassOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// Corpus with at least two annotators on some documents.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// How mentions of two annotators are paired.
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Gold,
    Predicted,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Corpus to index.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Where to write the index.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Index gold mentions or a model's predictions.
    #[arg(long, value_enum, default_value = "gold")]
    pub source: SourceArg,
    /// Annotator id of the indexed set; `gold`, or `model` for predictions.
    #[arg(long)]
    pub annotator: Option<String>,
    /// Model producing the predictions (required with `--source predicted`).
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub catalog: CatalogArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QueryKind {
    /// Concepts cited for the patient, most cited first.
    Concepts,
    /// Chronological citations of `--node`.
    Timeline,
    /// Documents citing the `--nodes` concepts.
    Texts,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QueryModeArg {
    Any,
    All,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// What to look up.
    #[arg(value_enum)]
    pub kind: QueryKind,
    /// Saved index file.
    #[arg(long, value_name = "FILE")]
    pub index: PathBuf,
    /// Patient id.
    #[arg(long)]
    pub patient: String,
    /// Concept for `timeline`.
    #[arg(long)]
    pub node: Option<String>,
    /// Comma-separated concepts for `texts`.
    #[arg(long, value_name = "A,B")]
    pub nodes: Option<String>,
    /// Whether `texts` needs any or all of the concepts.
    #[arg(long, value_enum, default_value = "any")]
    pub mode: QueryModeArg,
    /// Also match descendants of the queried concepts.
    #[arg(long)]
    pub widen: bool,
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Corpus store; edits are written back to it.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Model behind POST /predict.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Annotator whose set the editing endpoints read and write.
    #[arg(long, default_value = "gold")]
    pub annotator: String,
    /// Index gold mentions or stored predictions.
    #[arg(long, value_enum, default_value = "gold")]
    pub index_source: SourceArg,
    /// Annotator id of the indexed set; defaults to `--annotator`.
    #[arg(long)]
    pub index_annotator: Option<String>,
    /// Require this bearer token on every request.
    #[arg(long, env = "CLINOTATE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file written by `train`.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Plain-text input.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Standoff output; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Override the model's beam width.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Print each sentence's transition sequence to stderr.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Emit JSON mentions instead of standoff lines.
    #[arg(long)]
    pub json: bool,
}

/// A failure tagged with the module it came from.
#[derive(Debug)]
pub struct CliError {
    pub module: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(module: &'static str, e: impl fmt::Display) -> CliError {
        CliError {
            module,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.module, self.message)
    }
}

impl std::error::Error for CliError {}

fn io(e: impl fmt::Display) -> CliError {
    CliError::new("io", e)
}

fn read_file(p: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(p).map_err(|e| io(format!("{}: {e}", p.display())))
}

fn load_corpus(p: &Path) -> Result<Vec<AnnotatedDocument>, CliError> {
    let f = fs::File::open(p).map_err(|e| io(format!("{}: {e}", p.display())))?;
    read_corpus(BufReader::new(f)).map_err(|e| CliError::new("corpus", format!("{}: {e}", p.display())))
}

fn save_corpus(p: &Path, corpus: &[AnnotatedDocument]) -> Result<(), CliError> {
    let f = fs::File::create(p).map_err(|e| io(format!("{}: {e}", p.display())))?;
    let mut w = std::io::BufWriter::new(f);
    write_corpus(&mut w, corpus).and_then(|_| w.flush()).map_err(io)
}

fn open_model(p: &Path, ontology: &Ontology, force: bool) -> Result<Model, CliError> {
    let f = fs::File::open(p).map_err(|e| io(format!("{}: {e}", p.display())))?;
    load_model(BufReader::new(f), &ontology.version, force).map_err(|e| CliError::new("model", e))
}

fn parse_list<T: std::str::FromStr>(s: &str, n: usize, what: &str) -> Result<Vec<T>, CliError> {
    let parts: Result<Vec<T>, _> = s.split(',').map(|p| p.trim().parse()).collect();
    match parts {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(CliError::new("cli", format!("{what} expects {n} comma-separated numbers, got `{s}`"))),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::ValidateOntology(a) => validate_ontology(a, out),
        Command::GenSynthetic(a) => gen_synthetic(a, out),
        Command::Split(a) => split(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Agreement(a) => agreement(a, out),
        Command::Index(a) => index(a, out),
        Command::Query(a) => query(a, out),
        Command::Serve(a) => serve_cmd(a),
        Command::Predict(a) => predict(a, out),
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(io)?
    };
}

fn validate_ontology(a: ValidateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog: CatalogFile = match &a.catalog.catalog {
        Some(p) => serde_json::from_slice(&read_file(p)?).map_err(|e| CliError::new("ontology", e))?,
        None => Ontology::seed().to_catalog(),
    };
    let violations = validate_catalog(&catalog);
    if a.json {
        let list: Vec<_> = violations
            .iter()
            .map(|v| json!({"subject": v.subject, "rule": v.rule.name(), "detail": v.detail}))
            .collect();
        say!(out, "{}", json!({"version": catalog.version, "violations": list}));
    } else {
        for v in &violations {
            say!(out, "{v}");
        }
        say!(out, "{} violations", violations.len());
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::new("ontology", format!("{} violations", violations.len())))
    }
}

fn gen_synthetic(a: GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ontology = a.catalog.load()?;
    let mut cfg = match &a.config {
        Some(p) => GeneratorConfig::from_json(&String::from_utf8_lossy(&read_file(p)?))
            .map_err(|e| CliError::new("synthetic", e))?,
        None => GeneratorConfig::seed(),
    };
    if let Some(n) = a.sentences {
        cfg = cfg.with_sentence_count(n);
    }
    if let Some(n) = a.documents {
        cfg = cfg.with_document_count(n);
    }
    if let Some(s) = &a.per_document {
        let v: Vec<usize> = parse_list(s, 2, "--per-document")?;
        cfg = cfg.with_sentences_per_document(v[0], v[1]);
    }
    let corpus = generate_corpus(&cfg, &ontology, a.seed).map_err(|e| CliError::new("synthetic", e))?;
    save_corpus(&a.out, &corpus)?;
    let mentions: usize = corpus.iter().flat_map(|d| &d.annotations).map(|s| s.mentions.len()).sum();
    say!(out, "# seed {}", a.seed);
    say!(out, "wrote {} documents, {} mentions to {}", corpus.len(), mentions, a.out.display());
    Ok(())
}

fn split(a: SplitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ratios = match &a.ratios {
        None => DEFAULT_RATIOS,
        Some(s) => {
            let v: Vec<f64> = parse_list(s, 3, "--ratios")?;
            SplitRatios::new(v[0], v[1], v[2]).map_err(|e| CliError::new("corpus", e))?
        }
    };
    let corpus = load_corpus(&a.corpus)?;
    let parts = split_dataset(corpus, ratios, a.seed);
    fs::create_dir_all(&a.out).map_err(io)?;
    for (name, docs) in [("train", &parts.train), ("dev", &parts.dev), ("test", &parts.test)] {
        save_corpus(&a.out.join(format!("{name}.jsonl")), docs)?;
    }
    let stats = split_stats(&parts);
    if a.json {
        say!(out, "{}", json!({"seed": a.seed, "stats": stats}));
    } else {
        say!(out, "# seed {}", a.seed);
        write!(out, "{}", render_stats_table(&stats)).map_err(io)?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ontology = a.catalog.load()?;
    let train_docs = load_corpus(&a.corpus)?;
    let dev_docs = match &a.dev {
        Some(p) => load_corpus(p)?,
        None => Vec::new(),
    };
    let hp = Hyperparams {
        epochs: a.epochs,
        beam_width: a.beam,
        depth_weight_alpha: a.alpha,
        seed: a.seed,
        averaging: !a.no_averaging,
    };
    let outcome = train(
        &corpus_examples(&train_docs, &a.annotator),
        &corpus_examples(&dev_docs, &a.annotator),
        &ontology,
        &hp,
    )
    .map_err(|e| CliError::new("model", e))?;
    let f = fs::File::create(&a.model).map_err(|e| io(format!("{}: {e}", a.model.display())))?;
    let mut w = std::io::BufWriter::new(f);
    save_model(&outcome.model, &mut w).and_then(|_| w.flush()).map_err(io)?;

    if a.json {
        say!(
            out,
            "{}",
            json!({"seed": a.seed, "hyperparams": hp, "epochs": outcome.epochs, "best_epoch": outcome.best_epoch})
        );
    } else {
        say!(out, "# seed {}", a.seed);
        say!(out, "epoch\tdev_f1\taction_updates\tmodifier_updates");
        for e in &outcome.epochs {
            say!(out, "{}\t{:.4}\t{}\t{}", e.epoch, e.dev_f1, e.action_updates, e.modifier_updates);
        }
        say!(out, "best epoch {}; model written to {}", outcome.best_epoch, a.model.display());
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ontology = a.catalog.load()?;
    let mut model = open_model(&a.model, &ontology, a.force)?;
    if let Some(b) = a.beam {
        model.hyperparams.beam_width = b.max(1);
    }
    let gold_docs = load_corpus(&a.corpus)?;
    let mut predicted = gold_docs.clone();
    annotate_corpus(&model, &mut predicted, &ontology, "model").map_err(|e| CliError::new("model", e))?;
    let gold: Vec<_> = gold_docs
        .iter()
        .map(|d| {
            d.annotator(&a.annotator)
                .cloned()
                .unwrap_or_else(|| clinotate::AnnotationSet::new(&d.doc.id, &a.annotator))
        })
        .collect();
    let pred: Vec<_> = predicted
        .iter()
        .map(|d| d.annotator("model").cloned().expect("annotate_corpus adds the set"))
        .collect();
    let report = nerc_scores(&gold, &pred, &ontology).map_err(|e| CliError::new("evaluation", e))?;
    if let Some(p) = &a.out {
        fs::write(p, report.to_json()).map_err(io)?;
    }
    if a.json {
        say!(out, "{}", report.to_json());
    } else {
        write!(out, "{}", report.to_table()).map_err(io)?;
    }
    Ok(())
}

fn agreement(a: AgreementArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ontology = a.catalog.load()?;
    let corpus = load_corpus(&a.corpus)?;
    let report = agreement_report(&corpus, a.mode.into(), &ontology).map_err(|e| CliError::new("agreement", e))?;
    if a.json {
        say!(out, "{}", report.to_json());
    } else {
        write!(out, "{}", report.to_table()).map_err(io)?;
    }
    Ok(())
}

fn index(a: IndexArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ontology = a.catalog.load()?;
    let mut corpus = load_corpus(&a.corpus)?;
    let source = match a.source {
        SourceArg::Gold => IndexSource::gold(a.annotator.as_deref().unwrap_or("gold")),
        SourceArg::Predicted => {
            let annotator = a.annotator.as_deref().unwrap_or("model");
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| CliError::new("cli", "--source predicted needs --model"))?;
            let model = open_model(path, &ontology, false)?;
            annotate_corpus(&model, &mut corpus, &ontology, annotator).map_err(|e| CliError::new("model", e))?;
            IndexSource::predicted(annotator)
        }
    };
    let index = build_index(&corpus, &source).map_err(|e| CliError::new("index", e))?;
    let f = fs::File::create(&a.out).map_err(|e| io(format!("{}: {e}", a.out.display())))?;
    let mut w = std::io::BufWriter::new(f);
    save_index(&index, &mut w).and_then(|_| w.flush()).map_err(io)?;
    let citations: usize = index.postings.values().map(Vec::len).sum();
    say!(
        out,
        "indexed {} documents, {} patients, {} citations ({:?} `{}`) into {}",
        index.docs.len(),
        index.patients().len(),
        citations,
        source.kind,
        source.annotator_id,
        a.out.display()
    );
    Ok(())
}

fn query(a: QueryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let f = fs::File::open(&a.index).map_err(|e| io(format!("{}: {e}", a.index.display())))?;
    let index = load_index(BufReader::new(f)).map_err(|e| CliError::new("index", e))?;
    let ontology = if a.widen { Some(a.catalog.load()?) } else { None };
    match a.kind {
        QueryKind::Concepts => {
            let freqs = index.concept_frequencies(&a.patient);
            if a.json {
                say!(out, "{}", serde_json::to_string(&freqs).map_err(io)?);
            } else {
                say!(out, "count\tnegated\tnode\tlabel");
                for f in freqs {
                    say!(out, "{}\t{}\t{}\t{}", f.count, f.negated, f.node_id, f.label);
                }
            }
        }
        QueryKind::Timeline => {
            let node = a
                .node
                .as_deref()
                .ok_or_else(|| CliError::new("cli", "timeline needs --node"))?;
            let cites = match &ontology {
                Some(o) => index.timeline_widened(&a.patient, node, o),
                None => index.timeline(&a.patient, node),
            };
            if a.json {
                say!(out, "{}", serde_json::to_string(&cites).map_err(io)?);
            } else {
                say!(out, "date\trecord_type\tspecialty\tdoc\tspan\tsurface");
                for c in cites {
                    say!(
                        out,
                        "{}\t{}\t{}\t{}\t{}-{}\t{}",
                        c.date, c.record_type, c.specialty, c.doc_id, c.span.start, c.span.end, c.surface
                    );
                }
            }
        }
        QueryKind::Texts => {
            let nodes: BTreeSet<String> = a
                .nodes
                .as_deref()
                .unwrap_or("")
                .split(',')
                .map(str::trim)
                .filter(|n| !n.is_empty())
                .map(String::from)
                .collect();
            let mode = match a.mode {
                QueryModeArg::Any => QueryMode::Any,
                QueryModeArg::All => QueryMode::All,
            };
            let r = index
                .texts_with_concepts(&a.patient, &nodes, mode, ontology.as_ref())
                .map_err(|e| CliError::new("index", e))?;
            if a.json {
                say!(out, "{}", serde_json::to_string(&r).map_err(io)?);
            } else {
                say!(out, "{} documents", r.count);
                for d in r.doc_ids {
                    say!(out, "{d}");
                }
            }
        }
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<(), CliError> {
    let index_annotator = a.index_annotator.clone().unwrap_or_else(|| a.annotator.clone());
    let config = ServiceConfig {
        listen: a.listen,
        corpus: a.corpus,
        catalog: a.catalog.catalog,
        model: a.model,
        annotator: a.annotator,
        index_source: IndexSource {
            kind: match a.index_source {
                SourceArg::Gold => SourceKind::Gold,
                SourceArg::Predicted => SourceKind::Predicted,
            },
            annotator_id: index_annotator,
        },
        token: a.token,
    };
    let rt = tokio::runtime::Runtime::new().map_err(io)?;
    rt.block_on(serve(config)).map_err(|e| CliError::new("service", e))
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ontology = a.catalog.load()?;
    let mut model = open_model(&a.model, &ontology, false)?;
    if let Some(b) = a.beam {
        model.hyperparams.beam_width = b.max(1);
    }
    let text = String::from_utf8(read_file(&a.input)?).map_err(|e| CliError::new("io", e))?;
    if a.trace {
        let tokenized = tokenize(&text);
        for s in &tokenized.sentences {
            let d = model.decode(&tokenized.tokens[s.clone()], model.hyperparams.beam_width);
            eprintln!("{}", format_trace(&d.actions));
        }
    }
    let mentions = model.predict_text(&text, &ontology).map_err(|e| CliError::new("model", e))?;

    let mut buf = Vec::new();
    if a.json {
        let list: Vec<_> = mentions
            .iter()
            .map(|m| {
                json!({"span": m.span, "node_id": m.node_id, "modifier_ids": m.modifier_ids,
                       "surface": char_slice(&text, m.span)})
            })
            .collect();
        writeln!(buf, "{}", serde_json::Value::Array(list)).map_err(io)?;
    } else {
        // brat-style standoff: one T line per mention, one A line per modifier
        let mut attr = 0;
        for (i, m) in mentions.iter().enumerate() {
            let surface = char_slice(&text, m.span).replace('\n', " ");
            writeln!(buf, "T{}\t{} {} {}\t{}", i + 1, m.node_id, m.span.start, m.span.end, surface).map_err(io)?;
            for md in &m.modifier_ids {
                attr += 1;
                writeln!(buf, "A{attr}\t{md} T{}", i + 1).map_err(io)?;
            }
        }
    }
    match &a.out {
        Some(p) => {
            fs::write(p, &buf).map_err(io)?;
            say!(out, "{} mentions written to {}", mentions.len(), p.display());
        }
        None => out.write_all(&buf).map_err(io)?,
    }
    Ok(())
}
