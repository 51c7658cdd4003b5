//! Pipeline stages over a work directory.
//!
//! | stage            | reads                                   | writes |
//! |------------------|-----------------------------------------|--------|
//! | `ingest`         | `<tei_dir>/*.tei.xml`                   | `documents.jsonl` |
//! | `build-corpus`   | `documents.jsonl`, metadata files       | `corpus.jsonl`, `folds.json`, `stats.json` |
//! | `make-instances` | `corpus.jsonl`, `folds.json`            | `features.jsonl`, `instances-<fold>-<k>.jsonl`, `instance-stats-<k>.json` |
//! | `predict`        | `corpus.jsonl`, `folds.json`, `features.jsonl` | `predictions-<fold>.jsonl` |
//! | `evaluate`       | `corpus.jsonl`, `folds.json`, predictions | `report.json`, `report.txt` |
//! | `ablate`         | `corpus.jsonl`, `folds.json`            | `ablation.json`, `ablation.txt` |
//!
//! Every output is written to a temporary file and renamed into place. Each
//! stage also writes `<stage>.manifest.json` with the SHA-256 of its inputs
//! and outputs, the effective configuration and the crate version.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, FoldSplit, LabeledPaper};
use crate::doctaet::{self, FeatureConfig, FeatureRecord};
use crate::evaluator::{self, Setting};
use crate::nli::{self, SamplingConfig};
use crate::scorer::{self, PaperPrediction, DEFAULT_BATCH_SIZE, DEFAULT_THRESHOLD};
use crate::tei::{self, Document};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const DOCUMENTS: &str = "documents.jsonl";
pub const CORPUS: &str = "corpus.jsonl";
pub const FOLDS: &str = "folds.json";
pub const STATS: &str = "stats.json";
pub const FEATURES: &str = "features.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TXT: &str = "ablation.txt";

pub fn instances_file(fold: usize, k_false: usize) -> String {
    format!("instances-{fold}-{k_false}.jsonl")
}

pub fn instance_stats_file(k_false: usize) -> String {
    format!("instance-stats-{k_false}.json")
}

pub fn predictions_file(fold: usize) -> String {
    format!("predictions-{fold}.jsonl")
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing prerequisite {0}")]
    MissingInput(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Tei {
        path: PathBuf,
        source: tei::TeiError,
    },
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Nli(#[from] nli::NliError),
    #[error(transparent)]
    Eval(#[from] evaluator::EvalError),
    #[error(transparent)]
    Score(#[from] scorer::ScoreError),
}

impl PipelineError {
    /// 2 for usage and dependency problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingInput(_) | PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    BuildCorpus,
    MakeInstances,
    Predict,
    Evaluate,
    Ablate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::BuildCorpus,
        Stage::MakeInstances,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Ablate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::BuildCorpus => "build-corpus",
            Stage::MakeInstances => "make-instances",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Ablate => "ablate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tei_dir: PathBuf,
    pub papers: PathBuf,
    pub evaluations: PathBuf,
    pub work_dir: PathBuf,
    pub seed: u64,
    pub min_papers: usize,
    pub train_ratio: f64,
    pub n_folds: usize,
    pub k_false: usize,
    pub threshold: f64,
    pub scorer: String,
    pub batch_size: usize,
    /// Restrict fold-wise stages to one fold.
    pub fold: Option<usize>,
    pub features: FeatureConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tei_dir: PathBuf::from("tei"),
            papers: PathBuf::from("papers.json"),
            evaluations: PathBuf::from("evaluations.json"),
            work_dir: PathBuf::from("work"),
            seed: 0,
            min_papers: 5,
            train_ratio: 0.7,
            n_folds: 2,
            k_false: 10,
            threshold: DEFAULT_THRESHOLD,
            scorer: "lexical:".to_string(),
            batch_size: DEFAULT_BATCH_SIZE,
            fold: None,
            features: FeatureConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            k_false: self.k_false,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.features
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(PipelineError::Config(format!(
                "threshold {} must lie strictly between 0 and 1",
                self.threshold
            )));
        }
        if self.min_papers == 0 {
            return Err(PipelineError::Config("min_papers must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be at least 1".into()));
        }
        if self.n_folds == 0 {
            return Err(PipelineError::Config("n_folds must be at least 1".into()));
        }
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn manifest_file(stage: Stage) -> String {
    format!("{stage}.manifest.json")
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("record serializes");
        buf.push(b'\n');
    }
    buf
}

fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut buf = serde_json::to_vec_pretty(value).expect("value serializes");
    buf.push(b'\n');
    buf
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Record {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldsFile {
    pub seed: u64,
    pub train_ratio: f64,
    pub folds: Vec<FoldSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub seed: u64,
    pub min_papers: usize,
    pub skipped_evaluations: corpus::SkipReport,
    pub join: corpus::JoinReport,
    pub stats: corpus::CorpusStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub scorer: String,
    pub threshold: f64,
    pub folds: Vec<usize>,
    pub feature_config: String,
    pub macro_average: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub meta: ReportMeta,
    pub folds: BTreeMap<usize, BTreeMap<Setting, BTreeMap<evaluator::Granularity, evaluator::EvalReport>>>,
    pub average: BTreeMap<Setting, BTreeMap<evaluator::Granularity, evaluator::EvalReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFile {
    pub meta: ReportMeta,
    pub rows: Vec<evaluator::AblationRow>,
}

const MACRO_NOTE: &str = "unweighted mean over labels with gold support; macro F1 is the mean of per-label F1";

/// Records which files a stage read and wrote.
struct StageRun<'a> {
    stage: Stage,
    config: &'a PipelineConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> StageRun<'a> {
    fn new(stage: Stage, config: &'a PipelineConfig) -> Self {
        Self {
            stage,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn require(&mut self, path: PathBuf) -> Result<PathBuf, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::MissingInput(path));
        }
        self.inputs.push(path.clone());
        Ok(path)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.config.path(name);
        write_atomic(&path, bytes)?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish(self) -> Result<Manifest, PipelineError> {
        let digest = |paths: &[PathBuf]| -> Result<Vec<FileDigest>, PipelineError> {
            let mut v = paths
                .iter()
                .map(|p| {
                    Ok(FileDigest {
                        path: p.to_string_lossy().into_owned(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            v.sort_by(|a, b| a.path.cmp(&b.path));
            v.dedup();
            Ok(v)
        };
        let manifest = Manifest {
            stage: self.stage,
            version: VERSION.to_string(),
            seed: self.config.seed,
            config: self.config.clone(),
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
        };
        write_atomic(&self.config.path(&manifest_file(self.stage)), &to_json_pretty(&manifest))?;
        Ok(manifest)
    }
}

pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    config.validate()?;
    info!("running stage {stage}");
    let mut run = StageRun::new(stage, config);
    match stage {
        Stage::Ingest => ingest(&mut run)?,
        Stage::BuildCorpus => build_corpus(&mut run)?,
        Stage::MakeInstances => make_instances(&mut run)?,
        Stage::Predict => predict(&mut run)?,
        Stage::Evaluate => evaluate(&mut run)?,
        Stage::Ablate => ablate(&mut run)?,
    }
    run.finish()
}

fn ingest(run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let dir = run.config.tei_dir.clone();
    if !dir.is_dir() {
        return Err(PipelineError::MissingInput(dir));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| tei::paper_id_from_path(p).is_some())
        .collect();
    files.sort();
    let mut docs: Vec<Document> = files
        .par_iter()
        .map(|p| {
            tei::parse_tei_file(p).map_err(|source| PipelineError::Tei {
                path: p.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    docs.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    info!("parsed {} TEI documents", docs.len());
    run.inputs.extend(files);
    run.write(DOCUMENTS, &to_jsonl(&docs))
}

fn load_corpus(run: &mut StageRun<'_>) -> Result<(Vec<LabeledPaper>, FoldsFile), PipelineError> {
    let corpus_path = run.require(run.config.path(CORPUS))?;
    let folds_path = run.require(run.config.path(FOLDS))?;
    let corpus: Vec<LabeledPaper> = read_jsonl(&corpus_path)?;
    let folds: FoldsFile = read_json(&folds_path)?;
    Ok((corpus, folds))
}

fn selected_folds<'f>(config: &PipelineConfig, folds: &'f FoldsFile) -> Result<Vec<&'f FoldSplit>, PipelineError> {
    match config.fold {
        None => Ok(folds.folds.iter().collect()),
        Some(f) => folds
            .folds
            .iter()
            .find(|s| s.fold_id == f)
            .map(|s| vec![s])
            .ok_or_else(|| PipelineError::Config(format!("fold {f} not present in {FOLDS}"))),
    }
}

fn build_corpus(run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let cfg = run.config;
    let docs_path = run.require(cfg.path(DOCUMENTS))?;
    let papers_path = run.require(cfg.papers.clone())?;
    let evals_path = run.require(cfg.evaluations.clone())?;

    let docs: Vec<Document> = read_jsonl(&docs_path)?;
    let papers = fs::File::open(&papers_path).map_err(io_err(&papers_path))?;
    let evals = fs::File::open(&evals_path).map_err(io_err(&evals_path))?;
    let meta = corpus::load_metadata(BufReader::new(papers), BufReader::new(evals))?;
    if meta.skipped != corpus::SkipReport::default() {
        log::warn!("evaluation records skipped: {:?}", meta.skipped);
    }
    let (labeled, join) = corpus::join_documents(docs, &meta);
    let labeled = corpus::filter_rare_labels(labeled, cfg.min_papers);
    let labeled = corpus::assign_unknown(labeled);
    let folds = corpus::split_folds(&labeled, cfg.train_ratio, cfg.n_folds, cfg.seed)?;
    let stats = corpus::corpus_stats(&labeled, &folds);

    run.write(CORPUS, &to_jsonl(&labeled))?;
    run.write(
        FOLDS,
        &to_json_pretty(&FoldsFile {
            seed: cfg.seed,
            train_ratio: cfg.train_ratio,
            folds,
        }),
    )?;
    run.write(
        STATS,
        &to_json_pretty(&StatsFile {
            seed: cfg.seed,
            min_papers: cfg.min_papers,
            skipped_evaluations: meta.skipped,
            join,
            stats,
        }),
    )
}

fn make_instances(run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let cfg = run.config;
    let (corpus, folds) = load_corpus(run)?;
    let fingerprint = cfg.features.fingerprint();
    let records: Vec<FeatureRecord> = corpus
        .par_iter()
        .map(|p| FeatureRecord {
            paper_id: p.paper_id.clone(),
            feature: doctaet::build_feature(&p.document, &cfg.features),
            config_fingerprint: fingerprint.clone(),
        })
        .collect();
    let premises: HashMap<String, String> = records
        .iter()
        .map(|r| (r.paper_id.clone(), r.feature.combined.clone()))
        .collect();
    run.write(FEATURES, &to_jsonl(&records))?;

    let sampling = cfg.sampling();
    let mut stats = BTreeMap::new();
    for split in selected_folds(cfg, &folds)? {
        let train: Vec<&LabeledPaper> = corpus
            .iter()
            .filter(|p| split.train_ids.contains(&p.paper_id))
            .collect();
        let candidates = nli::candidate_label_set(train.iter().copied());
        let instances = nli::generate_instances(&train, &premises, &candidates, &sampling)?;
        stats.insert(split.fold_id, nli::instance_stats(&instances));
        let mut buf = Vec::new();
        nli::write_instances(&mut buf, &instances).expect("in-memory write");
        run.write(&instances_file(split.fold_id, sampling.k_false), &buf)?;
    }

    #[derive(Serialize)]
    struct InstanceStatsFile<'a> {
        seed: u64,
        k_false: usize,
        folds: &'a BTreeMap<usize, nli::InstanceStats>,
    }
    run.write(
        &instance_stats_file(sampling.k_false),
        &to_json_pretty(&InstanceStatsFile {
            seed: cfg.seed,
            k_false: sampling.k_false,
            folds: &stats,
        }),
    )
}

fn predict(run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let cfg = run.config;
    let (corpus, folds) = load_corpus(run)?;
    let features_path = run.require(cfg.path(FEATURES))?;
    let records: Vec<FeatureRecord> = read_jsonl(&features_path)?;
    let fingerprint = cfg.features.fingerprint();
    if let Some(r) = records.iter().find(|r| r.config_fingerprint != fingerprint) {
        return Err(PipelineError::Config(format!(
            "{FEATURES} was built with feature config {} but the current config is {fingerprint}; rerun make-instances",
            r.config_fingerprint
        )));
    }
    let features: HashMap<&str, &doctaet::DocTaetFeature> =
        records.iter().map(|r| (r.paper_id.as_str(), &r.feature)).collect();
    let scorer = scorer::scorer_from_uri(&cfg.scorer)
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    for split in selected_folds(cfg, &folds)? {
        let train: Vec<&LabeledPaper> = corpus
            .iter()
            .filter(|p| split.train_ids.contains(&p.paper_id))
            .collect();
        let candidates = nli::candidate_label_set(train.iter().copied());
        if candidates.is_empty() {
            return Err(evaluator::EvalError::NoCandidates(split.fold_id).into());
        }
        let test: Vec<&LabeledPaper> = corpus
            .iter()
            .filter(|p| split.test_ids.contains(&p.paper_id))
            .collect();
        let preds: Vec<PaperPrediction> = test
            .par_iter()
            .map(|p| {
                let feature = features
                    .get(p.paper_id.as_str())
                    .ok_or_else(|| nli::NliError::MissingFeature(p.paper_id.clone()))?;
                scorer::predict_paper(
                    &p.paper_id,
                    feature,
                    &candidates,
                    cfg.threshold,
                    scorer.as_ref(),
                    cfg.batch_size,
                )
                .map_err(|e| PipelineError::Eval(e.into()))
            })
            .collect::<Result<_, PipelineError>>()?;
        run.write(&predictions_file(split.fold_id), &to_jsonl(&preds))?;
    }
    Ok(())
}

fn report_meta(cfg: &PipelineConfig, folds: Vec<usize>) -> ReportMeta {
    ReportMeta {
        seed: cfg.seed,
        scorer: cfg.scorer.clone(),
        threshold: cfg.threshold,
        folds,
        feature_config: cfg.features.label(),
        macro_average: MACRO_NOTE.to_string(),
        version: VERSION.to_string(),
    }
}

fn evaluate(run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let cfg = run.config;
    let (corpus, folds) = load_corpus(run)?;
    let by_id: HashMap<&str, &LabeledPaper> =
        corpus.iter().map(|p| (p.paper_id.as_str(), p)).collect();
    let mut per_fold = BTreeMap::new();
    for split in selected_folds(cfg, &folds)? {
        let path = run.require(cfg.path(&predictions_file(split.fold_id)))?;
        let preds: Vec<PaperPrediction> = read_jsonl(&path)?;
        let gold: Vec<LabeledPaper> = split
            .test_ids
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).map(|p| (*p).clone()))
            .collect();
        per_fold.insert(split.fold_id, evaluator::evaluate_all(&preds, &gold)?);
    }
    let fold_reports: Vec<_> = per_fold.values().cloned().collect();
    let average = evaluator::average_all(&fold_reports)?;
    let text = evaluator::render_report_table(&average);
    let report = ReportFile {
        meta: report_meta(cfg, per_fold.keys().copied().collect()),
        folds: per_fold,
        average,
    };
    run.write(REPORT_JSON, &to_json_pretty(&report))?;
    run.write(REPORT_TXT, text.as_bytes())
}

fn ablate(run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let cfg = run.config;
    let (corpus, folds) = load_corpus(run)?;
    let splits: Vec<FoldSplit> = selected_folds(cfg, &folds)?.into_iter().cloned().collect();
    let scorer = scorer::scorer_from_uri(&cfg.scorer)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let configs: Vec<FeatureConfig> = doctaet::ablation_configs()
        .into_iter()
        .map(|c| FeatureConfig {
            total_budget: cfg.features.total_budget,
            part_budget: cfg.features.part_budget,
            setup_patterns: cfg.features.setup_patterns.clone(),
            ..c
        })
        .collect();
    let rows = evaluator::ablation_matrix(
        &corpus,
        &splits,
        scorer.as_ref(),
        &configs,
        cfg.threshold,
        cfg.batch_size,
    )?;
    let text = evaluator::render_ablation_table(&rows);
    let file = AblationFile {
        meta: report_meta(cfg, splits.iter().map(|s| s.fold_id).collect()),
        rows,
    };
    run.write(ABLATION_JSON, &to_json_pretty(&file))?;
    run.write(ABLATION_TXT, text.as_bytes())
}

/// Checks that every stage manifest in `work_dir` still matches the files
/// on disk, and that each input produced by an earlier stage carries the
/// digest that stage recorded.
pub fn verify_manifests(work_dir: &Path) -> Result<Vec<Manifest>, String> {
    let mut manifests = Vec::new();
    for stage in Stage::ALL {
        let path = work_dir.join(manifest_file(stage));
        if path.exists() {
            let m: Manifest = read_json(&path).map_err(|e| e.to_string())?;
            manifests.push(m);
        }
    }
    let mut produced: HashMap<&str, &str> = HashMap::new();
    for m in &manifests {
        for o in &m.outputs {
            produced.insert(o.path.as_str(), o.sha256.as_str());
        }
    }
    for m in &manifests {
        for d in m.outputs.iter().chain(&m.inputs) {
            let actual = sha256_file(Path::new(&d.path)).map_err(|e| e.to_string())?;
            if actual != d.sha256 {
                return Err(format!("{}: digest changed since stage {}", d.path, m.stage));
            }
        }
        for i in &m.inputs {
            if let Some(expected) = produced.get(i.path.as_str()) {
                if *expected != i.sha256 {
                    return Err(format!(
                        "stage {} consumed {} with a digest no stage produced",
                        m.stage, i.path
                    ));
                }
            }
        }
    }
    Ok(manifests)
}
