//! Command-line front end. Every subcommand returns an exit code: 0 on
//! success, 1 when a stage fails at runtime, 2 for usage or validation
//! errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{fingerprint, EncoderMode, RunConfig};
use crate::corpus::{
    build_triples, ingest_parsed_corpus, load_annotations, load_split_assignment, read_triples, split_by_assignment,
    split_dataset, write_documents, write_triples, Corpus, DatasetSplit, LabeledTriple, NegativeSampling,
    ParsedDocument, Span, SpanKind, DEFAULT_NEGATIVE_RATIO,
};
use crate::encoder::FrozenStore;
use crate::error::Error;
use crate::general_kb::{AffectLexicon, TripleStore};
use crate::kb_mining::{mine_domain_kb, DomainKb, DEFAULT_RHO};
use crate::scoring::Resources;
use crate::synthetic::{generate, SynthConfig};
use crate::training::{ablate, ablation_csv, ablation_rows, evaluate, parse_grid, prepare_all, train, TrainData};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "revcoref",
    version,
    about = "Knowledge-aware coreference for product reviews"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a parsed corpus and write it back in canonical form.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// Reject records from other domains.
        #[arg(long, default_value = "")]
        domain: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build labeled triples from coreference annotations.
    Triples {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Negatives kept per positive in each review.
        #[arg(long, default_value_t = DEFAULT_NEGATIVE_RATIO, conflicts_with = "all_negatives")]
        negative_ratio: f64,
        #[arg(long)]
        all_negatives: bool,
        /// Also split by review and write the assignment here.
        #[arg(long)]
        split_out: Option<PathBuf>,
    },
    /// Mine a domain knowledge base from unlabeled reviews.
    MineKb {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RHO)]
        rho: f64,
        #[arg(long)]
        out: PathBuf,
        /// Leave out the reviews named in this annotation file.
        #[arg(long)]
        exclude: Option<PathBuf>,
    },
    /// Train a model and write the best-dev checkpoint.
    Train {
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use this KB instead of mining one.
        #[arg(long)]
        kb: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on labeled triples.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        resources: ResourceArgs,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain once per grid cell and summarize the test scores as CSV.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        kb: Option<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score one (mention, anaphor) pair of a parsed review.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Parsed review(s), one JSON document per line.
        #[arg(long)]
        doc: PathBuf,
        /// Which review of `--doc`; the first when absent.
        #[arg(long)]
        doc_id: Option<String>,
        /// Token offsets `start:end` or `start:end:head`, end exclusive.
        #[arg(long)]
        mention: String,
        #[arg(long)]
        anaphor: String,
        #[command(flatten)]
        resources: ResourceArgs,
    },
    /// ingest, triples, mine-kb, train and eval in one go, plus a manifest.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write the synthetic knowledge-dependent dataset and a config for it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        reviews: usize,
        #[arg(long, default_value_t = 2000)]
        unlabeled: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct ResourceArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long)]
    pub triple_store: Option<PathBuf>,
    #[arg(long)]
    pub affect: Option<PathBuf>,
    /// Frozen encoder vectors; defaults to the path stored in the checkpoint.
    #[arg(long)]
    pub frozen: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn in_stage(self, stage: &str) -> CliError {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("stage `{stage}` failed: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("stage `{stage}` failed: {m}")),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidSpan(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn stage<T>(name: &str, r: CliResult<T>) -> CliResult<T> {
    r.map_err(|e| e.in_stage(name))
}

fn require_file(flag: &str, p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{flag}: no such file {}", p.display())))
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn pretty<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")
}

pub fn sha256_file(path: &Path) -> crate::Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Parses clap arguments and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run with --help for usage");
            }
            e.code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Ingest { corpus, domain, out } => {
            require_file("corpus", &corpus)?;
            let docs = ingest_parsed_corpus(&corpus, &domain)?;
            Corpus::new(docs.clone())?;
            write_documents(&out, &docs)?;
            eprintln!("{} reviews", docs.len());
            Ok(())
        }
        Command::Triples {
            corpus,
            annotations,
            out,
            seed,
            negative_ratio,
            all_negatives,
            split_out,
        } => {
            require_file("corpus", &corpus)?;
            require_file("annotations", &annotations)?;
            let corpus = Corpus::new(ingest_parsed_corpus(&corpus, "")?)?;
            let anns = load_annotations(&annotations, &corpus)?;
            let sampling = if all_negatives {
                NegativeSampling::All
            } else {
                NegativeSampling::Ratio(negative_ratio)
            };
            let triples = build_triples(&anns, &corpus, sampling, seed)?;
            write_triples(&out, &triples)?;
            let pos = triples.iter().filter(|t| t.label == 1).count();
            eprintln!("{} triples ({pos} positive)", triples.len());
            if let Some(path) = split_out {
                let split = split_dataset(&triples, Default::default(), seed)?;
                write_file(&path, &split_json(&split)?)?;
            }
            Ok(())
        }
        Command::MineKb {
            corpus,
            rho,
            out,
            exclude,
        } => {
            require_file("corpus", &corpus)?;
            if !(rho >= 0.0) {
                return Err(CliError::Usage(format!("--rho must be >= 0, got {rho}")));
            }
            let docs = ingest_parsed_corpus(&corpus, "")?;
            let docs = match exclude {
                Some(path) => {
                    require_file("exclude", &path)?;
                    let c = Corpus::new(docs)?;
                    let ids: std::collections::HashSet<String> =
                        load_annotations(&path, &c)?.into_iter().map(|a| a.doc_id).collect();
                    c.without(&ids)
                }
                None => docs,
            };
            let kb = mine_domain_kb(&docs, rho)?;
            kb.save(&out)?;
            eprintln!("{} words with knowledge", kb.entries.len());
            Ok(())
        }
        Command::Train {
            domain,
            config,
            out,
            kb,
            overrides,
        } => {
            let cfg = load_config(&config, domain, Some(out), &overrides)?;
            let run = stage("ingest", Run::ingest(&cfg))?;
            let split = stage("triples", run.triples())?;
            let kb = stage("mine-kb", run.knowledge(&split, kb.as_deref()))?;
            stage("train", run.train(&split, kb))?;
            Ok(())
        }
        Command::Eval {
            ckpt,
            test,
            corpus,
            resources,
            out,
        } => {
            require_file("ckpt", &ckpt)?;
            require_file("test", &test)?;
            require_file("corpus", &corpus)?;
            let ck = Checkpoint::load(&ckpt)?;
            let (domain, seed) = (ck.domain.clone(), ck.seed);
            let model = ck.into_model()?;
            let res = load_resources(&resources, &model.encoder)?;
            let corpus = Corpus::new(ingest_parsed_corpus(&corpus, "")?)?;
            let triples = read_triples(&test, &corpus)?;
            let ex = prepare_all(&model, &triples, &corpus, &res)?;
            let report = evaluate(&model, &ex, &domain, seed)?;
            let text = pretty(&report)?;
            print!("{text}");
            if let Some(path) = out {
                write_file(&path, &text)?;
            }
            Ok(())
        }
        Command::Ablate {
            grid,
            config,
            kb,
            out,
            overrides,
        } => {
            require_file("grid", &grid)?;
            let text = std::fs::read_to_string(&grid).map_err(|e| Error::io(&grid, e))?;
            let cells = parse_grid(&text).map_err(|e| CliError::Usage(format!("--grid: {e}")))?;
            let cfg = load_config(&config, None, None, &overrides)?;
            let run = stage("ingest", Run::ingest(&cfg))?;
            let split = stage("triples", run.triples())?;
            let mut res = run.resources.clone();
            // the grid may re-enable the domain KB even if the base disables it
            res.domain_kb = Some(stage("mine-kb", run.mine_or_load(&split, kb.as_deref()))?);
            let data = TrainData {
                domain: &cfg.domain,
                corpus: &run.corpus,
                train: &split.train,
                dev: &split.dev,
                resources: &res,
            };
            let results = stage(
                "ablate",
                ablate(&data, &split.test, &cfg.model, &cfg.encoder, &cfg.train, &cells).map_err(CliError::from),
            )?;
            let csv = ablation_csv(&ablation_rows(&results))?;
            match out {
                Some(path) => write_file(&path, &csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Predict {
            ckpt,
            doc,
            doc_id,
            mention,
            anaphor,
            resources,
        } => {
            require_file("ckpt", &ckpt)?;
            require_file("doc", &doc)?;
            let model = Checkpoint::load(&ckpt)?.into_model()?;
            let docs = ingest_parsed_corpus(&doc, "")?;
            let review = pick_document(&docs, doc_id.as_deref())?;
            let m = parse_span(review, "mention", &mention, SpanKind::Mention)?;
            let p = parse_span(review, "anaphor", &anaphor, SpanKind::Anaphor)?;
            let triple = LabeledTriple::new(m, p, 0).map_err(|e| CliError::Usage(e.to_string()))?;
            let res = load_resources(&resources, &model.encoder)?;
            let ex = model.prepare(&triple, review, &res)?;
            let bundle = model.predict(&ex)?;
            let knowledge: Vec<_> = bundle
                .knowledge
                .iter()
                .map(|(k, w)| json!({"phrase": k.text, "source": k.source, "score": k.score, "weight": w}))
                .collect();
            let mut out = json!({
                "f_c": bundle.f_c,
                "f_k": bundle.f_k,
                "f_sk": bundle.f_sk,
                "f_hat": bundle.f_hat,
                "label": bundle.label(),
                "knowledge": knowledge,
            });
            if bundle.knowledge.is_empty() {
                out["note"] = json!("no knowledge matched");
            }
            print!("{}", pretty(&out)?);
            Ok(())
        }
        Command::Pipeline { config, out, overrides } => pipeline(&config, out, &overrides).map(|_| ()),
        Command::Synth {
            out,
            reviews,
            unlabeled,
            seed,
        } => {
            if reviews == 0 {
                return Err(CliError::Usage("--reviews must be > 0".into()));
            }
            let data = generate(&SynthConfig {
                reviews,
                unlabeled,
                seed,
                ..SynthConfig::default()
            })?;
            data.write(&out, "synthetic", seed)?;
            eprintln!(
                "{} labeled, {} unlabeled reviews",
                data.labeled.len(),
                data.unlabeled.len()
            );
            Ok(())
        }
    }
}

fn load_config(path: &Path, domain: Option<String>, out: Option<PathBuf>, o: &Overrides) -> CliResult<RunConfig> {
    require_file("config", path)?;
    let mut cfg = RunConfig::load(path).map_err(|e| CliError::Usage(format!("--config: {e}")))?;
    if let Some(d) = domain {
        cfg.domain = d;
    }
    if let Some(o) = out {
        cfg.paths.output_dir = Some(o);
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(r) = o.rho {
        cfg.train.rho = r;
    }
    cfg.validate()?;
    if cfg.paths.corpus.is_none() {
        return Err(CliError::Usage("config has no corpus path".into()));
    }
    if cfg.paths.annotations.is_none() && cfg.paths.triples.is_none() {
        return Err(CliError::Usage("config needs an annotations or triples path".into()));
    }
    Ok(cfg)
}

fn load_resources(args: &ResourceArgs, encoder: &crate::config::EncoderConfig) -> CliResult<Resources> {
    let mut res = Resources::default();
    if let Some(p) = &args.kb {
        require_file("kb", p)?;
        res.domain_kb = Some(DomainKb::load(p)?);
    }
    if let Some(p) = &args.triple_store {
        require_file("triple-store", p)?;
        res.triple_store = Some(TripleStore::load(p)?);
    }
    if let Some(p) = &args.affect {
        require_file("affect", p)?;
        res.affect = Some(AffectLexicon::load(p)?);
    }
    if encoder.mode == EncoderMode::FrozenPretrained {
        let p = args
            .frozen
            .clone()
            .or_else(|| encoder.frozen_vectors.clone())
            .ok_or_else(|| CliError::Usage("frozen encoder needs --frozen".into()))?;
        require_file("frozen", &p)?;
        res.frozen = Some(FrozenStore::load(&p, encoder.frozen_dim)?);
    }
    Ok(res)
}

fn pick_document<'a>(docs: &'a [ParsedDocument], id: Option<&str>) -> CliResult<&'a ParsedDocument> {
    match id {
        Some(id) => docs
            .iter()
            .find(|d| d.doc_id == id)
            .ok_or_else(|| CliError::Usage(format!("--doc-id: no review `{id}`"))),
        None => docs
            .first()
            .ok_or_else(|| CliError::Usage("--doc: file has no review".into())),
    }
}

/// `start:end` or `start:end:head`.
pub fn parse_span(doc: &ParsedDocument, flag: &str, text: &str, kind: SpanKind) -> CliResult<Span> {
    let bad = || CliError::Usage(format!("--{flag}: expected start:end[:head], got `{text}`"));
    let nums: Vec<usize> = text
        .split(':')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    let (start, end, head) = match nums.as_slice() {
        [s, e] => (*s, *e, None),
        [s, e, h] => (*s, *e, Some(*h)),
        _ => return Err(bad()),
    };
    Span::resolve(doc, start, end, head, kind).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

fn split_json(split: &DatasetSplit) -> CliResult<String> {
    let sorted: BTreeMap<_, _> = split.assignment().into_iter().collect();
    pretty(&sorted)
}

/// Loaded inputs of one configured run.
struct Run<'c> {
    cfg: &'c RunConfig,
    corpus: Corpus,
    resources: Resources,
    out: PathBuf,
}

impl<'c> Run<'c> {
    fn ingest(cfg: &'c RunConfig) -> CliResult<Run<'c>> {
        let path = cfg.paths.corpus.as_ref().expect("validated");
        let corpus = Corpus::new(ingest_parsed_corpus(path, &cfg.domain)?)?;
        let mut resources = Resources::default();
        if let Some(p) = &cfg.paths.triple_store {
            resources.triple_store = Some(TripleStore::load(p)?);
        }
        if let Some(p) = &cfg.paths.affect_lexicon {
            resources.affect = Some(AffectLexicon::load(p)?);
        }
        if cfg.encoder.mode == EncoderMode::FrozenPretrained {
            let p = cfg.encoder.frozen_vectors.as_ref().expect("validated");
            resources.frozen = Some(FrozenStore::load(p, cfg.encoder.frozen_dim)?);
        }
        let out = cfg.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Run {
            cfg,
            corpus,
            resources,
            out,
        })
    }

    fn triples(&self) -> CliResult<DatasetSplit> {
        let triples = match (&self.cfg.paths.triples, &self.cfg.paths.annotations) {
            (Some(p), _) => read_triples(p, &self.corpus)?,
            (None, Some(p)) => {
                let anns = load_annotations(p, &self.corpus)?;
                build_triples(&anns, &self.corpus, self.cfg.train.negative_sampling, self.cfg.seed)?
            }
            (None, None) => unreachable!("validated"),
        };
        let split = match &self.cfg.paths.split_assignment {
            Some(p) => split_by_assignment(&triples, &load_split_assignment(p)?)?,
            None => split_dataset(&triples, self.cfg.train.split, self.cfg.seed)?,
        };
        write_triples(&self.out.join("triples.jsonl"), &triples)?;
        write_triples(&self.out.join("test.jsonl"), &split.test)?;
        write_file(&self.out.join("split.json"), &split_json(&split)?)?;
        log::info!(
            "triples: train {} dev {} test {}",
            split.train.len(),
            split.dev.len(),
            split.test.len()
        );
        Ok(split)
    }

    /// Mines from the reviews that carry no labeled triple; falls back to
    /// the whole corpus when every review is labeled.
    fn mine_or_load(&self, split: &DatasetSplit, kb: Option<&Path>) -> CliResult<DomainKb> {
        if let Some(p) = kb {
            require_file("kb", p)?;
            return Ok(DomainKb::load(p)?);
        }
        let labeled: std::collections::HashSet<String> = [&split.train, &split.dev, &split.test]
            .into_iter()
            .flat_map(|part| part.iter().map(|t| t.doc_id.clone()))
            .collect();
        let mut docs = self.corpus.without(&labeled);
        if docs.is_empty() {
            log::warn!("every review is labeled; mining the whole corpus");
            docs = self.corpus.docs().to_vec();
        }
        let mut kb = mine_domain_kb(&docs, self.cfg.train.rho)?;
        kb.domain = self.cfg.domain.clone();
        kb.save(&self.out.join("kb.json"))?;
        Ok(kb)
    }

    fn knowledge(&self, split: &DatasetSplit, kb: Option<&Path>) -> CliResult<Option<DomainKb>> {
        if self.cfg.model.use_domain_kb {
            self.mine_or_load(split, kb).map(Some)
        } else {
            Ok(None)
        }
    }

    fn train(&self, split: &DatasetSplit, kb: Option<DomainKb>) -> CliResult<(Checkpoint, Resources)> {
        let mut res = self.resources.clone();
        res.domain_kb = kb;
        let data = TrainData {
            domain: &self.cfg.domain,
            corpus: &self.corpus,
            train: &split.train,
            dev: &split.dev,
            resources: &res,
        };
        let outcome = train(&data, &self.cfg.model, &self.cfg.encoder, &self.cfg.train)?;
        let ck = Checkpoint::from_model(
            &outcome.model,
            &self.cfg.domain,
            self.cfg.seed,
            outcome.best_epoch,
            outcome.best_dev_f1,
        );
        ck.save(&self.out.join("checkpoint.json"))?;
        let history = json!({
            "domain": self.cfg.domain,
            "seed": self.cfg.seed,
            "config_fingerprint": ck.config_fingerprint,
            "best_epoch": outcome.best_epoch,
            "best_dev_f1": outcome.best_dev_f1,
            "epochs": outcome.history,
        });
        write_file(&self.out.join("history.json"), &pretty(&history)?)?;
        Ok((ck, res))
    }
}

#[derive(Debug, Serialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub domain: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub config: RunConfig,
    pub inputs: Vec<ManifestEntry>,
    pub artifacts: Vec<ManifestEntry>,
}

/// Runs every stage into the output directory and writes `manifest.json`.
pub fn pipeline(config: &Path, out: Option<PathBuf>, overrides: &Overrides) -> CliResult<Manifest> {
    let cfg = load_config(config, None, out, overrides)?;
    let run = stage("ingest", Run::ingest(&cfg))?;
    stage(
        "ingest",
        write_documents(&run.out.join("corpus.jsonl"), run.corpus.docs()).map_err(CliError::from),
    )?;
    let split = stage("triples", run.triples())?;
    let kb = stage("mine-kb", run.knowledge(&split, None))?;
    let mined = kb.is_some();
    let (ck, res) = stage("train", run.train(&split, kb))?;
    stage(
        "eval",
        (|| {
            let model = ck.into_model()?;
            let (eval_set, which) = if split.test.is_empty() {
                (&split.dev, "dev")
            } else {
                (&split.test, "test")
            };
            if eval_set.is_empty() {
                return Err(Error::Empty("no test or dev triples to evaluate".into()).into());
            }
            log::info!("evaluating on {which}");
            let ex = prepare_all(&model, eval_set, &run.corpus, &res)?;
            let report = evaluate(&model, &ex, &cfg.domain, cfg.seed)?;
            write_file(&run.out.join("eval.json"), &pretty(&report)?)
        })(),
    )?;

    let hash = |stage: &str, path: &Path, shown: String| -> CliResult<ManifestEntry> {
        Ok(ManifestEntry {
            stage: stage.into(),
            path: shown,
            sha256: sha256_file(path)?,
        })
    };
    let mut inputs = Vec::new();
    for (name, p) in cfg.paths.inputs() {
        inputs.push(hash(name, p, p.display().to_string())?);
    }
    let mut artifacts = Vec::new();
    for (stage_name, file) in [
        ("ingest", "corpus.jsonl"),
        ("triples", "triples.jsonl"),
        ("triples", "test.jsonl"),
        ("triples", "split.json"),
        ("mine-kb", "kb.json"),
        ("train", "checkpoint.json"),
        ("train", "history.json"),
        ("eval", "eval.json"),
    ] {
        if file == "kb.json" && !mined {
            continue;
        }
        artifacts.push(hash(stage_name, &run.out.join(file), file.to_string())?);
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA,
        domain: cfg.domain.clone(),
        seed: cfg.seed,
        config_fingerprint: fingerprint(&(&cfg.model, &cfg.encoder)),
        config: cfg.clone(),
        inputs,
        artifacts,
    };
    write_file(&run.out.join("manifest.json"), &pretty(&manifest)?)?;
    Ok(manifest)
}
