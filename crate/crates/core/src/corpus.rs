//! Distantly-labeled corpus construction.
//!
//! Leaderboard metadata (a papers listing plus evaluation tables) is joined
//! onto parsed documents; every (task, dataset, metric) triple attached to a
//! paper becomes one of its gold labels. Triples seen in fewer than
//! `min_papers` papers are dropped corpus-wide, and papers left without any
//! triple are labeled [`Label::Unknown`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::tei::Document;
use crate::text::normalize_label;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unexpected metadata layout: {0}")]
    Schema(String),
    #[error("triple has an empty field: ({task:?}, {dataset:?}, {metric:?})")]
    EmptyField {
        task: String,
        dataset: String,
        metric: String,
    },
    #[error("corpus has {0} papers; fold splitting needs at least {MIN_SPLIT_PAPERS}")]
    TooSmall(usize),
    #[error("train ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error("n_folds must be at least 1")]
    NoFolds,
}

/// One leaderboard label. Fields are NFC-normalized, whitespace-collapsed
/// and never empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TdmTriple {
    task: String,
    dataset: String,
    metric: String,
}

impl TdmTriple {
    pub fn new(task: &str, dataset: &str, metric: &str) -> Result<Self, CorpusError> {
        let (t, d, m) = (
            normalize_label(task),
            normalize_label(dataset),
            normalize_label(metric),
        );
        if t.is_empty() || d.is_empty() || m.is_empty() {
            return Err(CorpusError::EmptyField {
                task: task.into(),
                dataset: dataset.into(),
                metric: metric.into(),
            });
        }
        Ok(Self {
            task: t,
            dataset: d,
            metric: m,
        })
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn metric(&self) -> &str {
        &self.metric
    }
}

impl fmt::Display for TdmTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.task, self.dataset, self.metric)
    }
}

impl<'de> Deserialize<'de> for TdmTriple {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            task: String,
            dataset: String,
            metric: String,
        }
        let raw = Raw::deserialize(de)?;
        TdmTriple::new(&raw.task, &raw.dataset, &raw.metric).map_err(D::Error::custom)
    }
}

/// A gold or predicted label: a real triple or the distinguished `unknown`.
///
/// Serialized as the triple object, or as the bare string `"unknown"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Tdm(TdmTriple),
    Unknown,
}

pub const UNKNOWN: &str = "unknown";

impl Label {
    pub fn as_triple(&self) -> Option<&TdmTriple> {
        match self {
            Label::Tdm(t) => Some(t),
            Label::Unknown => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Label::Unknown)
    }
}

impl From<TdmTriple> for Label {
    fn from(t: TdmTriple) -> Self {
        Label::Tdm(t)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Tdm(t) => t.fmt(f),
            Label::Unknown => f.write_str(UNKNOWN),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Label::Tdm(t) => t.serialize(s),
            Label::Unknown => s.serialize_str(UNKNOWN),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Triple(TdmTriple),
        }
        match Raw::deserialize(de)? {
            Raw::Name(s) if s == UNKNOWN => Ok(Label::Unknown),
            Raw::Name(s) => Err(D::Error::custom(format!("unexpected label string {s:?}"))),
            Raw::Triple(t) => Ok(Label::Tdm(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPaper {
    pub paper_id: String,
    pub document: Document,
    pub gold: BTreeSet<Label>,
}

impl LabeledPaper {
    pub fn is_unknown(&self) -> bool {
        self.gold.len() == 1 && self.gold.contains(&Label::Unknown)
    }

    pub fn triples(&self) -> impl Iterator<Item = &TdmTriple> {
        self.gold.iter().filter_map(Label::as_triple)
    }
}

/// Evaluation records that could not be attached to a paper.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    /// Record carried no paper link at all.
    pub missing_key: usize,
    /// Record's paper link matched no entry of the papers listing.
    pub unmatched: usize,
    /// Record had an empty task, dataset or metric.
    pub invalid_label: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    pub labels: BTreeMap<String, BTreeSet<TdmTriple>>,
    pub skipped: SkipReport,
}

fn str_field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a str> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

/// Canonical join key for a paper link or identifier.
fn join_key(raw: &str) -> String {
    let s = raw.trim();
    let s = s
        .strip_prefix("https://")
        .or_else(|| s.strip_prefix("http://"))
        .unwrap_or(s);
    let s = s.strip_prefix("www.").unwrap_or(s);
    s.trim_end_matches('/').to_lowercase()
}

fn last_segment(url: &str) -> Option<&str> {
    url.trim_end_matches('/')
        .rsplit('/')
        .next()
        .filter(|s| !s.is_empty())
}

fn as_array<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>, CorpusError> {
    v.as_array()
        .ok_or_else(|| CorpusError::Schema(format!("{what} must be a JSON array of objects")))
}

/// Joins the papers listing with the evaluation tables.
///
/// Papers are keyed by `paper_id`, else `arxiv_id`, else the last path
/// segment of `paper_url`. Evaluation records may be flat
/// (`{task, dataset, metric, paper_url | paper_id}`) or nested in the
/// evaluation-tables layout (`task → datasets → sota.rows → metrics`, with
/// recursive `subtasks` and `subdatasets`). A record is joined on any of the
/// paper's `paper_url`, `url_abs`, `url_pdf`, `arxiv_id` or id.
pub fn load_metadata<P: Read, E: Read>(papers: P, evaluations: E) -> Result<Metadata, CorpusError> {
    let papers: Value = serde_json::from_reader(papers)?;
    let evaluations: Value = serde_json::from_reader(evaluations)?;

    let mut meta = Metadata::default();
    let mut index: HashMap<String, String> = HashMap::new();
    for (i, paper) in as_array(&papers, "papers file")?.iter().enumerate() {
        let obj = paper
            .as_object()
            .ok_or_else(|| CorpusError::Schema(format!("papers[{i}] is not an object")))?;
        let id = str_field(obj, "paper_id")
            .or_else(|| str_field(obj, "arxiv_id"))
            .or_else(|| str_field(obj, "paper_url").and_then(last_segment));
        let Some(id) = id else {
            warn!("papers[{i}] has no usable identifier; skipped");
            continue;
        };
        let id = id.to_string();
        for key in ["paper_url", "url_abs", "url_pdf", "arxiv_id", "paper_id"] {
            if let Some(v) = str_field(obj, key) {
                index.entry(join_key(v)).or_insert_with(|| id.clone());
            }
        }
        index.entry(join_key(&id)).or_insert_with(|| id.clone());
        meta.labels.entry(id).or_default();
    }

    let mut rows = Vec::new();
    for (i, record) in as_array(&evaluations, "evaluations file")?.iter().enumerate() {
        let obj = record
            .as_object()
            .ok_or_else(|| CorpusError::Schema(format!("evaluations[{i}] is not an object")))?;
        collect_rows(obj, None, &mut rows);
    }

    for row in rows {
        let Some(link) = row.link else {
            meta.skipped.missing_key += 1;
            continue;
        };
        let Some(id) = index.get(&join_key(&link)) else {
            meta.skipped.unmatched += 1;
            continue;
        };
        match TdmTriple::new(&row.task, &row.dataset, &row.metric) {
            Ok(t) => {
                meta.labels.get_mut(id).expect("indexed paper").insert(t);
            }
            Err(_) => meta.skipped.invalid_label += 1,
        }
    }
    Ok(meta)
}

struct EvalRow {
    task: String,
    dataset: String,
    metric: String,
    link: Option<String>,
}

fn record_link(obj: &serde_json::Map<String, Value>) -> Option<String> {
    str_field(obj, "paper_url")
        .or_else(|| str_field(obj, "paper_id"))
        .map(str::to_string)
}

fn collect_rows(obj: &serde_json::Map<String, Value>, task: Option<&str>, out: &mut Vec<EvalRow>) {
    let task = str_field(obj, "task").or(task).unwrap_or_default();
    if let Some(datasets) = obj.get("datasets").and_then(Value::as_array) {
        for ds in datasets.iter().filter_map(Value::as_object) {
            collect_dataset(task, ds, out);
        }
        if let Some(subtasks) = obj.get("subtasks").and_then(Value::as_array) {
            for sub in subtasks.iter().filter_map(Value::as_object) {
                collect_rows(sub, Some(task), out);
            }
        }
        return;
    }
    if let Some(subtasks) = obj.get("subtasks").and_then(Value::as_array) {
        for sub in subtasks.iter().filter_map(Value::as_object) {
            collect_rows(sub, Some(task), out);
        }
        return;
    }
    // flat record
    out.push(EvalRow {
        task: task.to_string(),
        dataset: str_field(obj, "dataset").unwrap_or_default().to_string(),
        metric: str_field(obj, "metric").unwrap_or_default().to_string(),
        link: record_link(obj),
    });
}

fn collect_dataset(task: &str, ds: &serde_json::Map<String, Value>, out: &mut Vec<EvalRow>) {
    let dataset = str_field(ds, "dataset").unwrap_or_default();
    let rows = ds
        .get("sota")
        .and_then(|s| s.get("rows"))
        .and_then(Value::as_array);
    for row in rows.into_iter().flatten().filter_map(Value::as_object) {
        let link = record_link(row);
        let metrics = row.get("metrics").and_then(Value::as_object);
        for metric in metrics.into_iter().flat_map(|m| m.keys()) {
            out.push(EvalRow {
                task: task.to_string(),
                dataset: dataset.to_string(),
                metric: metric.clone(),
                link: link.clone(),
            });
        }
    }
    if let Some(subs) = ds.get("subdatasets").and_then(Value::as_array) {
        for sub in subs.iter().filter_map(Value::as_object) {
            collect_dataset(task, sub, out);
        }
    }
}

/// Pairs metadata with parsed documents. Papers without a document and
/// documents without metadata are dropped; the counts are returned.
pub fn join_documents(
    documents: Vec<Document>,
    metadata: &Metadata,
) -> (Vec<LabeledPaper>, JoinReport) {
    let mut report = JoinReport::default();
    let mut by_id: BTreeMap<String, Document> = BTreeMap::new();
    for doc in documents {
        if metadata.labels.contains_key(&doc.paper_id) {
            by_id.insert(doc.paper_id.clone(), doc);
        } else {
            report.documents_without_metadata += 1;
        }
    }
    let mut corpus = Vec::with_capacity(by_id.len());
    for (id, triples) in &metadata.labels {
        match by_id.remove(id) {
            Some(document) => corpus.push(LabeledPaper {
                paper_id: id.clone(),
                document,
                gold: triples.iter().cloned().map(Label::Tdm).collect(),
            }),
            None => report.papers_without_document += 1,
        }
    }
    if report.papers_without_document > 0 {
        warn!(
            "{} papers in metadata have no TEI document; dropped",
            report.papers_without_document
        );
    }
    if report.documents_without_metadata > 0 {
        warn!(
            "{} documents have no metadata entry; dropped",
            report.documents_without_metadata
        );
    }
    (corpus, report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub papers_without_document: usize,
    pub documents_without_metadata: usize,
}

/// Number of papers whose gold set contains each triple.
pub fn triple_paper_counts(corpus: &[LabeledPaper]) -> BTreeMap<&TdmTriple, usize> {
    let mut counts = BTreeMap::new();
    for paper in corpus {
        for t in paper.triples() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    counts
}

/// Removes every triple that occurs in fewer than `min_papers` papers.
/// Counting is a single pass over the input corpus.
pub fn filter_rare_labels(corpus: Vec<LabeledPaper>, min_papers: usize) -> Vec<LabeledPaper> {
    let rare: BTreeSet<TdmTriple> = triple_paper_counts(&corpus)
        .into_iter()
        .filter(|&(_, n)| n < min_papers)
        .map(|(t, _)| t.clone())
        .collect();
    if rare.is_empty() {
        return corpus;
    }
    corpus
        .into_iter()
        .map(|mut paper| {
            paper
                .gold
                .retain(|l| l.as_triple().map_or(true, |t| !rare.contains(t)));
            paper
        })
        .collect()
}

/// Labels every paper with an empty gold set as `unknown`.
pub fn assign_unknown(corpus: Vec<LabeledPaper>) -> Vec<LabeledPaper> {
    corpus
        .into_iter()
        .map(|mut paper| {
            if paper.gold.is_empty() {
                paper.gold.insert(Label::Unknown);
            }
            paper
        })
        .collect()
}

pub const MIN_SPLIT_PAPERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

pub fn split_folds(
    corpus: &[LabeledPaper],
    train_ratio: f64,
    n_folds: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>, CorpusError> {
    let ids: Vec<String> = corpus.iter().map(|p| p.paper_id.clone()).collect();
    split_ids(&ids, train_ratio, n_folds, seed)
}

/// Shuffled train/test partitions, one per fold.
///
/// Fold `f` shuffles the sorted ids with a generator seeded by `seed + f`
/// and takes the leading `round(n * train_ratio)` ids as training data. A
/// fold whose test set repeats an earlier fold's is reshuffled with the
/// next seed in its sequence (`seed + f + n_folds`, ...).
pub fn split_ids(
    ids: &[String],
    train_ratio: f64,
    n_folds: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>, CorpusError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(CorpusError::InvalidRatio(train_ratio));
    }
    if n_folds == 0 {
        return Err(CorpusError::NoFolds);
    }
    let mut sorted: Vec<&String> = ids.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let n = sorted.len();
    if n < MIN_SPLIT_PAPERS {
        return Err(CorpusError::TooSmall(n));
    }
    let n_train = ((n as f64) * train_ratio).round() as usize;
    let n_train = n_train.clamp(1, n - 1);

    let mut folds: Vec<FoldSplit> = Vec::with_capacity(n_folds);
    for fold_id in 0..n_folds {
        let mut fold_seed = seed.wrapping_add(fold_id as u64);
        loop {
            sorted.sort();
            sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(fold_seed));
            let test_ids: BTreeSet<String> = sorted[n_train..].iter().map(|s| s.to_string()).collect();
            if folds.iter().all(|f| f.test_ids != test_ids) {
                let train_ids = sorted[..n_train].iter().map(|s| s.to_string()).collect();
                folds.push(FoldSplit {
                    fold_id,
                    train_ids,
                    test_ids,
                });
                break;
            }
            fold_seed = fold_seed.wrapping_add(n_folds as u64);
        }
    }
    Ok(folds)
}

/// One column of the corpus statistics table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub papers: f64,
    pub unknown: f64,
    pub total_triples: f64,
    /// Mean triple count over papers that carry at least one triple.
    pub avg_triples_per_paper: f64,
    pub distinct_triples: f64,
    pub distinct_tasks: f64,
    pub distinct_datasets: f64,
    pub distinct_metrics: f64,
}

impl SplitStats {
    pub fn of<'a, I>(papers: I) -> Self
    where
        I: IntoIterator<Item = &'a LabeledPaper>,
    {
        let mut n = 0usize;
        let mut unknown = 0usize;
        let mut total = 0usize;
        let mut triples = BTreeSet::new();
        let mut tasks = BTreeSet::new();
        let mut datasets = BTreeSet::new();
        let mut metrics = BTreeSet::new();
        for p in papers {
            n += 1;
            if p.is_unknown() {
                unknown += 1;
            }
            for t in p.triples() {
                total += 1;
                triples.insert(t);
                tasks.insert(t.task());
                datasets.insert(t.dataset());
                metrics.insert(t.metric());
            }
        }
        let labeled = n - unknown;
        Self {
            papers: n as f64,
            unknown: unknown as f64,
            total_triples: total as f64,
            avg_triples_per_paper: if labeled == 0 {
                0.0
            } else {
                total as f64 / labeled as f64
            },
            distinct_triples: triples.len() as f64,
            distinct_tasks: tasks.len() as f64,
            distinct_datasets: datasets.len() as f64,
            distinct_metrics: metrics.len() as f64,
        }
    }

    fn mean(items: &[&SplitStats]) -> Self {
        let k = items.len().max(1) as f64;
        let avg = |f: fn(&SplitStats) -> f64| items.iter().map(|s| f(s)).sum::<f64>() / k;
        Self {
            papers: avg(|s| s.papers),
            unknown: avg(|s| s.unknown),
            total_triples: avg(|s| s.total_triples),
            avg_triples_per_paper: avg(|s| s.avg_triples_per_paper),
            distinct_triples: avg(|s| s.distinct_triples),
            distinct_tasks: avg(|s| s.distinct_tasks),
            distinct_datasets: avg(|s| s.distinct_datasets),
            distinct_metrics: avg(|s| s.distinct_metrics),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub fold_id: usize,
    pub train: SplitStats,
    pub test: SplitStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub corpus: SplitStats,
    pub folds: Vec<FoldStats>,
    /// Train and test columns averaged over folds.
    pub fold_mean: FoldStats,
}

pub fn corpus_stats(corpus: &[LabeledPaper], splits: &[FoldSplit]) -> CorpusStats {
    let by_id: HashMap<&str, &LabeledPaper> =
        corpus.iter().map(|p| (p.paper_id.as_str(), p)).collect();
    let pick = |ids: &BTreeSet<String>| {
        SplitStats::of(ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()))
    };
    let folds: Vec<FoldStats> = splits
        .iter()
        .map(|s| FoldStats {
            fold_id: s.fold_id,
            train: pick(&s.train_ids),
            test: pick(&s.test_ids),
        })
        .collect();
    let trains: Vec<&SplitStats> = folds.iter().map(|f| &f.train).collect();
    let tests: Vec<&SplitStats> = folds.iter().map(|f| &f.test).collect();
    CorpusStats {
        corpus: SplitStats::of(corpus),
        fold_mean: FoldStats {
            fold_id: folds.len(),
            train: SplitStats::mean(&trains),
            test: SplitStats::mean(&tests),
        },
        folds,
    }
}
