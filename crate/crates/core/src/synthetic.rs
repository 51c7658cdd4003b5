//! Synthetic leaderboard corpus with a known answer.
//!
//! Every paper's abstract states its leaderboard triples verbatim. Label
//! words are invented tokens that never occur in the filler text, and only
//! tasks are shared between triples, so under the lexical scorer a gold
//! triple scores 1.0 while any other candidate scores at most 1/3.
//! Papers whose only triples are rare (one paper each) end up `unknown`
//! after rare-label filtering.

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::scorer::render_hypothesis;
use crate::corpus::TdmTriple;

pub const FILLER: &[&str] = &[
    "we", "propose", "a", "simple", "method", "that", "improves", "over", "strong", "baselines",
    "our", "approach", "uses", "careful", "training", "and", "shows", "consistent", "gains",
    "the", "model", "is", "trained", "with", "standard", "settings", "for", "all", "runs",
    "results", "are", "reported", "below", "in", "table", "section", "introduction", "related",
    "work", "setup", "experimental", "learning", "rate", "epochs", "batch", "size", "ours",
    "previous", "best", "row", "column", "value", "on",
];

const TASKS: [&str; 3] = ["Quarnic Blending", "Zeltor Folding", "Morvish Tagging"];
const DATASETS: [&str; 6] = [
    "Vextal Corpus",
    "Draxen Suite",
    "Pumbrel Set",
    "Kintaro Bank",
    "Sollux Pairs",
    "Ferwith Logs",
];
const METRICS: [&str; 6] = [
    "Glimmer Score",
    "Tarven Pace",
    "Ossic Index",
    "Brulen Gain",
    "Yaffle Ratio",
    "Nodrix Loss",
];
const RARE: [(&str, &str, &str); 6] = [
    ("Plovic Mapping", "Harrow Drift", "Wexel Count"),
    ("Snarbic Coding", "Lintz Archive", "Frobel Mark"),
    ("Cramble Linking", "Jorvik Shards", "Quellan Pace"),
    ("Drimble Sorting", "Esker Loops", "Vantor Level"),
    ("Gresh Matching", "Ombra Tiles", "Zupp Measure"),
    ("Hollis Routing", "Pirnel Grid", "Kestrel Delta"),
];

pub const LABELED_PAPERS: usize = 25;
pub const UNKNOWN_PAPERS: usize = 5;

/// The six frequent triples. Task `i / 2` is shared by triples `i` and `i^1`.
pub fn frequent_triples() -> Vec<TdmTriple> {
    (0..6)
        .map(|i| TdmTriple::new(TASKS[i / 2], DATASETS[i], METRICS[i]).unwrap())
        .collect()
}

pub fn rare_triples() -> Vec<TdmTriple> {
    RARE.iter()
        .map(|(t, d, m)| TdmTriple::new(t, d, m).unwrap())
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticPaper {
    pub paper_id: String,
    /// Triples attached in the metadata, before rare-label filtering.
    pub triples: Vec<TdmTriple>,
    pub tei: String,
}

fn filler(seed: usize, n: usize) -> String {
    let mut out = String::new();
    for k in 0..n {
        if k > 0 {
            out.push(' ');
        }
        out.push_str(FILLER[(seed * 7 + k * 13) % FILLER.len()]);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn paper_id(i: usize) -> String {
    format!("syn{i:04}")
}

fn tei_document(i: usize, triples: &[TdmTriple]) -> String {
    let statements: Vec<String> = triples
        .iter()
        .map(|t| format!("We report {} .", render_hypothesis(t)))
        .collect();
    let mut x = String::new();
    let _ = write!(
        x,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<TEI xml:space="preserve" xmlns="http://www.tei-c.org/ns/1.0">
  <teiHeader xml:lang="en">
    <fileDesc>
      <titleStmt>
        <title level="a" type="main">{title}</title>
      </titleStmt>
    </fileDesc>
    <profileDesc>
      <abstract>
        <div><p>{intro}</p><p>{claims}</p></div>
      </abstract>
    </profileDesc>
  </teiHeader>
  <text xml:lang="en">
    <body>
      <div xmlns="http://www.tei-c.org/ns/1.0"><head n="1">Introduction</head><p>{s1}</p></div>
      <div xmlns="http://www.tei-c.org/ns/1.0"><head n="2">Experimental Setup</head><p>{s2}</p><p>{s3}</p></div>
      <div xmlns="http://www.tei-c.org/ns/1.0"><head n="3">Results</head><p>{s4}</p></div>
      <figure xmlns="http://www.tei-c.org/ns/1.0" type="table" xml:id="tab_0">
        <head>Table 1</head>
        <figDesc>{caption}</figDesc>
        <table><row><cell>model</cell><cell>value</cell></row><row><cell>ours</cell><cell>{v}</cell></row><row><cell>previous best</cell><cell>{w}</cell></row></table>
      </figure>
    </body>
  </text>
</TEI>
"#,
        title = filler(i, 6),
        intro = filler(i + 1, 20),
        claims = escape(&statements.join(" ")),
        s1 = filler(i + 2, 40),
        s2 = filler(i + 3, 30),
        s3 = filler(i + 4, 30),
        s4 = filler(i + 5, 25),
        caption = filler(i + 6, 8),
        v = 50 + i,
        w = 40 + i,
    );
    x
}

/// Gold triples of labeled paper `i` before filtering.
fn labeled_triples(i: usize, frequent: &[TdmTriple], rare: &[TdmTriple]) -> Vec<TdmTriple> {
    let mut out = vec![frequent[i % 6].clone()];
    if i % 2 == 0 {
        out.push(frequent[(i + 1) % 6].clone());
    }
    if i % 5 == 0 {
        out.push(frequent[(i + 3) % 6].clone());
    }
    if i % 3 == 0 {
        out.push(frequent[(i + 4) % 6].clone());
    }
    // one labeled paper also carries a rare triple, which filtering removes
    if i == 7 {
        out.push(rare[5].clone());
    }
    out.sort();
    out.dedup();
    out
}

pub fn papers() -> Vec<SyntheticPaper> {
    let frequent = frequent_triples();
    let rare = rare_triples();
    let mut out = Vec::with_capacity(LABELED_PAPERS + UNKNOWN_PAPERS);
    for i in 0..LABELED_PAPERS + UNKNOWN_PAPERS {
        let triples = if i < LABELED_PAPERS {
            labeled_triples(i, &frequent, &rare)
        } else {
            vec![rare[i - LABELED_PAPERS].clone()]
        };
        out.push(SyntheticPaper {
            paper_id: paper_id(i),
            tei: tei_document(i, &triples),
            triples,
        });
    }
    out
}

/// Papers listing in the papers-with-abstracts layout.
pub fn papers_json(papers: &[SyntheticPaper]) -> Value {
    Value::Array(
        papers
            .iter()
            .map(|p| {
                json!({
                    "paper_url": format!("https://paperswithcode.com/paper/{}", p.paper_id),
                    "arxiv_id": p.paper_id,
                    "url_abs": format!("https://arxiv.org/abs/{}", p.paper_id),
                    "title": p.paper_id,
                })
            })
            .collect(),
    )
}

/// Evaluation tables in the nested task → datasets → sota.rows layout.
pub fn evaluations_json(papers: &[SyntheticPaper]) -> Value {
    let mut tasks: Vec<&str> = papers
        .iter()
        .flat_map(|p| p.triples.iter().map(|t| t.task()))
        .collect();
    tasks.sort();
    tasks.dedup();
    let tables: Vec<Value> = tasks
        .into_iter()
        .map(|task| {
            let mut datasets: Vec<&str> = papers
                .iter()
                .flat_map(|p| p.triples.iter())
                .filter(|t| t.task() == task)
                .map(|t| t.dataset())
                .collect();
            datasets.sort();
            datasets.dedup();
            let datasets: Vec<Value> = datasets
                .into_iter()
                .map(|dataset| {
                    let rows: Vec<Value> = papers
                        .iter()
                        .filter_map(|p| {
                            let metrics: serde_json::Map<String, Value> = p
                                .triples
                                .iter()
                                .filter(|t| t.task() == task && t.dataset() == dataset)
                                .map(|t| (t.metric().to_string(), json!("1.0")))
                                .collect();
                            (!metrics.is_empty()).then(|| {
                                json!({
                                    "model_name": format!("model-{}", p.paper_id),
                                    "paper_url": format!("https://arxiv.org/abs/{}", p.paper_id),
                                    "metrics": metrics,
                                })
                            })
                        })
                        .collect();
                    json!({"dataset": dataset, "sota": {"rows": rows}, "subdatasets": []})
                })
                .collect();
            json!({"task": task, "datasets": datasets, "subtasks": []})
        })
        .collect();
    Value::Array(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn label_words_never_appear_in_filler() {
        let filler: BTreeSet<String> = FILLER.iter().map(|w| w.to_lowercase()).collect();
        for t in frequent_triples().iter().chain(&rare_triples()) {
            for w in render_hypothesis(t).split_whitespace().filter(|w| *w != ":") {
                assert!(!filler.contains(&w.to_lowercase()), "{w}");
            }
        }
    }

    #[test]
    fn frequent_triples_clear_the_rare_filter() {
        let mut counts: BTreeMap<TdmTriple, usize> = BTreeMap::new();
        for p in papers() {
            for t in p.triples {
                *counts.entry(t).or_default() += 1;
            }
        }
        for t in frequent_triples() {
            assert!(counts[&t] >= 5, "{t} appears {} times", counts[&t]);
        }
        for t in rare_triples() {
            assert_eq!(counts[&t], 1);
        }
    }
}
