//! Multi-label evaluation of paper-level predictions.
//!
//! Micro scores pool TP/FP/FN over every (paper, label) decision. Macro
//! scores compute precision, recall and F1 per label over papers and take
//! the unweighted mean over labels present in the gold data; macro F1 is
//! the mean of the per-label F1 values. `unknown` is an ordinary label in
//! [`Setting::WithUnknown`]; [`Setting::WithoutUnknown`] first drops every
//! paper whose gold set is `{unknown}`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{FoldSplit, LabeledPaper, Label, TdmTriple};
use crate::doctaet::{build_feature, FeatureConfig};
use crate::nli::candidate_label_set;
use crate::scorer::{predict_paper, PaperPrediction, PredictError, Scorer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and gold paper sets differ: missing predictions {missing:?}, unexpected predictions {extra:?}")]
    IdMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("duplicate prediction for paper {0}")]
    DuplicatePrediction(String),
    #[error("cannot average an empty list of reports")]
    NoReports,
    #[error("reports disagree on setting or granularity")]
    MixedReports,
    #[error("fold {0} has no training labels to score against")]
    NoCandidates(usize),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    WithUnknown,
    WithoutUnknown,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::WithUnknown, Setting::WithoutUnknown];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Triple,
    Task,
    Dataset,
    Metric,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Triple,
        Granularity::Task,
        Granularity::Dataset,
        Granularity::Metric,
    ];
}

/// A label after projection onto the evaluated granularity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EvalLabel {
    Triple(TdmTriple),
    Part(String),
    Unknown,
}

pub fn project(label: &Label, granularity: Granularity) -> EvalLabel {
    match (label, granularity) {
        (Label::Unknown, _) => EvalLabel::Unknown,
        (Label::Tdm(t), Granularity::Triple) => EvalLabel::Triple(t.clone()),
        (Label::Tdm(t), Granularity::Task) => EvalLabel::Part(t.task().to_string()),
        (Label::Tdm(t), Granularity::Dataset) => EvalLabel::Part(t.dataset().to_string()),
        (Label::Tdm(t), Granularity::Metric) => EvalLabel::Part(t.metric().to_string()),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub papers: usize,
    /// Labels entering the macro mean.
    pub labels: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl std::ops::Add for Support {
    type Output = Support;

    fn add(self, o: Support) -> Support {
        Support {
            papers: self.papers + o.papers,
            labels: self.labels + o.labels,
            true_positives: self.true_positives + o.true_positives,
            false_positives: self.false_positives + o.false_positives,
            false_negatives: self.false_negatives + o.false_negatives,
        }
    }
}

fn round4<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((x * 1e4).round() / 1e4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    pub granularity: Granularity,
    #[serde(serialize_with = "round4")]
    pub macro_p: f64,
    #[serde(serialize_with = "round4")]
    pub macro_r: f64,
    #[serde(serialize_with = "round4")]
    pub macro_f1: f64,
    #[serde(serialize_with = "round4")]
    pub micro_p: f64,
    #[serde(serialize_with = "round4")]
    pub micro_r: f64,
    #[serde(serialize_with = "round4")]
    pub micro_f1: f64,
    pub support: Support,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

pub fn evaluate(
    predictions: &[PaperPrediction],
    gold: &[LabeledPaper],
    setting: Setting,
    granularity: Granularity,
) -> Result<EvalReport, EvalError> {
    let mut pred_by_id: HashMap<&str, &PaperPrediction> = HashMap::new();
    for p in predictions {
        if pred_by_id.insert(p.paper_id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.paper_id.clone()));
        }
    }
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.paper_id.as_str()).collect();
    let pred_ids: BTreeSet<&str> = pred_by_id.keys().copied().collect();
    if gold_ids != pred_ids {
        return Err(EvalError::IdMismatch {
            missing: gold_ids.difference(&pred_ids).map(|s| s.to_string()).collect(),
            extra: pred_ids.difference(&gold_ids).map(|s| s.to_string()).collect(),
        });
    }

    let mut micro = Counts::default();
    let mut per_label: BTreeMap<EvalLabel, Counts> = BTreeMap::new();
    let mut gold_labels: BTreeSet<EvalLabel> = BTreeSet::new();
    let mut papers = 0usize;

    for paper in gold {
        if setting == Setting::WithoutUnknown && paper.is_unknown() {
            continue;
        }
        papers += 1;
        let g: BTreeSet<EvalLabel> = paper.gold.iter().map(|l| project(l, granularity)).collect();
        let p: BTreeSet<EvalLabel> = pred_by_id[paper.paper_id.as_str()]
            .predicted
            .iter()
            .map(|l| project(l, granularity))
            .collect();
        for label in g.union(&p) {
            let c = per_label.entry(label.clone()).or_default();
            match (g.contains(label), p.contains(label)) {
                (true, true) => {
                    c.tp += 1;
                    micro.tp += 1;
                }
                (false, true) => {
                    c.fp += 1;
                    micro.fp += 1;
                }
                (true, false) => {
                    c.fn_ += 1;
                    micro.fn_ += 1;
                }
                (false, false) => unreachable!(),
            }
        }
        gold_labels.extend(g);
    }

    let micro_p = ratio(micro.tp, micro.tp + micro.fp);
    let micro_r = ratio(micro.tp, micro.tp + micro.fn_);

    let (mut sum_p, mut sum_r, mut sum_f) = (0.0, 0.0, 0.0);
    for label in &gold_labels {
        let c = per_label[label];
        let p = ratio(c.tp, c.tp + c.fp);
        let r = ratio(c.tp, c.tp + c.fn_);
        sum_p += p;
        sum_r += r;
        sum_f += f1(p, r);
    }
    let n = gold_labels.len();
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };

    Ok(EvalReport {
        setting,
        granularity,
        macro_p: mean(sum_p),
        macro_r: mean(sum_r),
        macro_f1: mean(sum_f),
        micro_p,
        micro_r,
        micro_f1: f1(micro_p, micro_r),
        support: Support {
            papers,
            labels: n,
            true_positives: micro.tp,
            false_positives: micro.fp,
            false_negatives: micro.fn_,
        },
    })
}

/// Metric-wise arithmetic mean of per-fold reports; supports are summed.
pub fn average_folds(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let first = reports.first().ok_or(EvalError::NoReports)?;
    if reports
        .iter()
        .any(|r| r.setting != first.setting || r.granularity != first.granularity)
    {
        return Err(EvalError::MixedReports);
    }
    let k = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    Ok(EvalReport {
        setting: first.setting,
        granularity: first.granularity,
        macro_p: mean(|r| r.macro_p),
        macro_r: mean(|r| r.macro_r),
        macro_f1: mean(|r| r.macro_f1),
        micro_p: mean(|r| r.micro_p),
        micro_r: mean(|r| r.micro_r),
        micro_f1: mean(|r| r.micro_f1),
        support: reports.iter().map(|r| r.support).fold(Support::default(), |a, b| a + b),
    })
}

/// Every (setting, granularity) cell for one set of predictions.
pub fn evaluate_all(
    predictions: &[PaperPrediction],
    gold: &[LabeledPaper],
) -> Result<BTreeMap<Setting, BTreeMap<Granularity, EvalReport>>, EvalError> {
    let cells: Vec<(Setting, Granularity)> = Setting::ALL
        .iter()
        .flat_map(|s| Granularity::ALL.iter().map(move |g| (*s, *g)))
        .collect();
    let reports = cells
        .par_iter()
        .map(|&(s, g)| evaluate(predictions, gold, s, g))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out: BTreeMap<Setting, BTreeMap<Granularity, EvalReport>> = BTreeMap::new();
    for r in reports {
        out.entry(r.setting).or_default().insert(r.granularity, r);
    }
    Ok(out)
}

/// Cell-wise fold average of [`evaluate_all`] results.
pub fn average_all(
    per_fold: &[BTreeMap<Setting, BTreeMap<Granularity, EvalReport>>],
) -> Result<BTreeMap<Setting, BTreeMap<Granularity, EvalReport>>, EvalError> {
    let mut out: BTreeMap<Setting, BTreeMap<Granularity, EvalReport>> = BTreeMap::new();
    for s in Setting::ALL {
        for g in Granularity::ALL {
            let cell: Vec<EvalReport> = per_fold
                .iter()
                .filter_map(|f| f.get(&s).and_then(|m| m.get(&g)).cloned())
                .collect();
            if !cell.is_empty() {
                out.entry(s).or_default().insert(g, average_folds(&cell)?);
            }
        }
    }
    Ok(out)
}

/// Predictions for the test papers of one fold, candidates drawn from its
/// training papers.
pub fn predict_fold(
    corpus: &[LabeledPaper],
    split: &FoldSplit,
    config: &FeatureConfig,
    scorer: &dyn Scorer,
    threshold: f64,
    batch_size: usize,
) -> Result<Vec<PaperPrediction>, EvalError> {
    let train: Vec<&LabeledPaper> = corpus
        .iter()
        .filter(|p| split.train_ids.contains(&p.paper_id))
        .collect();
    let candidates = candidate_label_set(train.iter().copied());
    if candidates.is_empty() {
        return Err(EvalError::NoCandidates(split.fold_id));
    }
    let test: Vec<&LabeledPaper> = corpus
        .iter()
        .filter(|p| split.test_ids.contains(&p.paper_id))
        .collect();
    let preds = test
        .par_iter()
        .map(|p| {
            let feature = build_feature(&p.document, config);
            predict_paper(&p.paper_id, &feature, &candidates, threshold, scorer, batch_size)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(preds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub config_fingerprint: String,
    pub with_unknown: EvalReport,
    pub without_unknown: EvalReport,
}

/// One fold-averaged, triple-level evaluation row per feature config.
pub fn ablation_matrix(
    corpus: &[LabeledPaper],
    splits: &[FoldSplit],
    scorer: &dyn Scorer,
    configs: &[FeatureConfig],
    threshold: f64,
    batch_size: usize,
) -> Result<Vec<AblationRow>, EvalError> {
    let by_id: HashMap<&str, &LabeledPaper> =
        corpus.iter().map(|p| (p.paper_id.as_str(), p)).collect();
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let mut with = Vec::new();
        let mut without = Vec::new();
        for split in splits {
            let preds = predict_fold(corpus, split, config, scorer, threshold, batch_size)?;
            let gold: Vec<LabeledPaper> = split
                .test_ids
                .iter()
                .filter_map(|id| by_id.get(id.as_str()).map(|p| (*p).clone()))
                .collect();
            with.push(evaluate(&preds, &gold, Setting::WithUnknown, Granularity::Triple)?);
            without.push(evaluate(&preds, &gold, Setting::WithoutUnknown, Granularity::Triple)?);
        }
        rows.push(AblationRow {
            label: config.label(),
            config_fingerprint: config.fingerprint(),
            with_unknown: average_folds(&with)?,
            without_unknown: average_folds(&without)?,
        });
    }
    Ok(rows)
}

const HEADER: [&str; 6] = ["Macro P", "Macro R", "Macro F1", "Micro P", "Micro R", "Micro F1"];

fn table_row(out: &mut String, name: &str, width: usize, r: &EvalReport) {
    let _ = write!(out, "{name:<width$}");
    for v in [r.macro_p, r.macro_r, r.macro_f1, r.micro_p, r.micro_r, r.micro_f1] {
        let _ = write!(out, " | {:>8.1}", v * 100.0);
    }
    out.push('\n');
}

fn table_header(out: &mut String, first: &str, width: usize) {
    let _ = write!(out, "{first:<width$}");
    for h in HEADER {
        let _ = write!(out, " | {h:>8}");
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(width + HEADER.len() * 11));
}

/// Plain-text rendering of setting × granularity results, scores ×100.
pub fn render_report_table(results: &BTreeMap<Setting, BTreeMap<Granularity, EvalReport>>) -> String {
    let width = 10;
    let mut out = String::new();
    for (setting, cells) in results {
        let title = match setting {
            Setting::WithUnknown => "Average over folds",
            Setting::WithoutUnknown => "Average over folds (without \"unknown\" papers)",
        };
        let _ = writeln!(out, "{title}");
        table_header(&mut out, "", width);
        for (g, r) in cells {
            let name = match g {
                Granularity::Triple => "Triple",
                Granularity::Task => "Task",
                Granularity::Dataset => "Dataset",
                Granularity::Metric => "Metric",
            };
            table_row(&mut out, name, width, r);
        }
        out.push('\n');
    }
    out
}

pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max("Document Representation".len());
    let mut out = String::new();
    for (title, pick) in [
        ("With \"unknown\" papers", (|r: &AblationRow| &r.with_unknown) as fn(&AblationRow) -> &EvalReport),
        ("Without \"unknown\" papers", |r: &AblationRow| &r.without_unknown),
    ] {
        let _ = writeln!(out, "{title}");
        table_header(&mut out, "Document Representation", width);
        for row in rows {
            table_row(&mut out, &row.label, width, pick(row));
        }
        out.push('\n');
    }
    out
}
