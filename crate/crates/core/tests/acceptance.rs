//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod support;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::{golden_pairs, repo_root, HttpResponse, StubServer};
use tdm_core::corpus::{split_ids, Label, LabeledPaper, SplitStats, TdmTriple};
use tdm_core::doctaet::{ablation_configs, build_feature, Part, DEFAULT_PART_BUDGET, DEFAULT_TOTAL_BUDGET};
use tdm_core::evaluator::{evaluate, Granularity, Setting};
use tdm_core::nli::{generate_instances, write_instances, SamplingConfig, K_FALSE_GRID};
use tdm_core::pipeline::{self, AblationFile, PipelineConfig, ReportFile, Stage};
use tdm_core::scorer::{
    render_hypothesis, LexicalScorer, PaperPrediction, RemoteScorer, ScoreError, ScoreItem,
    ScoreRequest, ScoreResponse, Scorer,
};
use tdm_core::tei::{Document, Section, TableInfo};
use tdm_core::text::token_count;

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let checks: [(&str, Duration, Check); 7] = [
        ("metric-oracle", Duration::from_secs(30), metric_oracle),
        ("synthetic-end-to-end", Duration::from_secs(10), synthetic_end_to_end),
        ("negative-sampling", Duration::from_secs(60), negative_sampling),
        ("doctaet-budgets", Duration::from_secs(60), doctaet_budgets),
        ("fold-splits", Duration::from_secs(60), fold_splits),
        ("corpus-stats", Duration::from_secs(10), corpus_stats_fixture),
        ("protocol-conformance", Duration::from_secs(60), protocol_conformance),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|()| {
            if elapsed > limit {
                Err(format!("took {elapsed:?}, limit {limit:?}"))
            } else {
                Ok(())
            }
        });
        match outcome {
            Ok(()) => println!("PASS {name} ({:.2}s)", elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name} ({:.2}s): {msg}", elapsed.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn triple(t: &str, d: &str, m: &str) -> TdmTriple {
    TdmTriple::new(t, d, m).unwrap()
}

fn paper(id: &str, gold: BTreeSet<Label>) -> LabeledPaper {
    LabeledPaper {
        paper_id: id.to_string(),
        document: Document::empty(id),
        gold,
    }
}

// ---------------------------------------------------------------------------
// metric oracle

/// Component of a label at a granularity, as a plain key.
fn oracle_key(label: &Label, g: Granularity) -> String {
    match label {
        Label::Unknown => "\u{0}unknown".to_string(),
        Label::Tdm(t) => match g {
            Granularity::Triple => format!("{}\u{1}{}\u{1}{}", t.task(), t.dataset(), t.metric()),
            Granularity::Task => format!("t\u{1}{}", t.task()),
            Granularity::Dataset => format!("d\u{1}{}", t.dataset()),
            Granularity::Metric => format!("m\u{1}{}", t.metric()),
        },
    }
}

struct OracleScores {
    macro_p: f64,
    macro_r: f64,
    macro_f1: f64,
    micro_p: f64,
    micro_r: f64,
    micro_f1: f64,
}

/// Builds the paper × label membership matrices and counts every cell.
fn oracle(gold: &[LabeledPaper], pred: &[PaperPrediction], s: Setting, g: Granularity) -> OracleScores {
    let rows: Vec<(&LabeledPaper, &PaperPrediction)> = gold
        .iter()
        .filter(|p| !(s == Setting::WithoutUnknown && p.gold.len() == 1 && p.gold.contains(&Label::Unknown)))
        .map(|p| (p, pred.iter().find(|q| q.paper_id == p.paper_id).unwrap()))
        .collect();
    let gold_sets: Vec<BTreeSet<String>> =
        rows.iter().map(|(p, _)| p.gold.iter().map(|l| oracle_key(l, g)).collect()).collect();
    let pred_sets: Vec<BTreeSet<String>> =
        rows.iter().map(|(_, q)| q.predicted.iter().map(|l| oracle_key(l, g)).collect()).collect();
    let mut universe: Vec<String> = gold_sets.iter().chain(&pred_sets).flatten().cloned().collect();
    universe.sort();
    universe.dedup();

    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let harm = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    let (mut mp, mut mr, mut mf, mut n_labels) = (0.0, 0.0, 0.0, 0.0);
    for label in &universe {
        let (mut ltp, mut lfp, mut lfn, mut support) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..rows.len() {
            let in_g = gold_sets[i].contains(label);
            let in_p = pred_sets[i].contains(label);
            if in_g {
                support += 1.0;
            }
            ltp += (in_g && in_p) as u8 as f64;
            lfp += (!in_g && in_p) as u8 as f64;
            lfn += (in_g && !in_p) as u8 as f64;
        }
        tp += ltp;
        fp += lfp;
        fneg += lfn;
        if support > 0.0 {
            let p = div(ltp, ltp + lfp);
            let r = div(ltp, ltp + lfn);
            mp += p;
            mr += r;
            mf += harm(p, r);
            n_labels += 1.0;
        }
    }
    let micro_p = div(tp, tp + fp);
    let micro_r = div(tp, tp + fneg);
    OracleScores {
        macro_p: div(mp, n_labels),
        macro_r: div(mr, n_labels),
        macro_f1: div(mf, n_labels),
        micro_p,
        micro_r,
        micro_f1: harm(micro_p, micro_r),
    }
}

fn random_label_set(rng: &mut ChaCha8Rng, pool: &[TdmTriple], allow_unknown: bool) -> BTreeSet<Label> {
    if allow_unknown && rng.gen_bool(0.25) {
        return BTreeSet::from([Label::Unknown]);
    }
    let n = rng.gen_range(1..=3.min(pool.len()));
    pool.choose_multiple(rng, n).cloned().map(Label::Tdm).collect()
}

fn metric_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let words = ["Alpha", "Beta", "Gamma"];
    for case in 0..200 {
        // few component values so task/dataset/metric projections collide
        let n_labels = rng.gen_range(1..=10);
        let mut pool = BTreeSet::new();
        while pool.len() < n_labels {
            pool.insert(triple(
                words[rng.gen_range(0..3)],
                &format!("D{}", rng.gen_range(0..4)),
                &format!("M{}", rng.gen_range(0..3)),
            ));
        }
        let pool: Vec<TdmTriple> = pool.into_iter().collect();
        let n_papers = rng.gen_range(1..=10);
        let gold: Vec<LabeledPaper> = (0..n_papers)
            .map(|i| paper(&format!("p{i}"), random_label_set(&mut rng, &pool, true)))
            .collect();
        let mut pred: Vec<PaperPrediction> = gold
            .iter()
            .map(|p| PaperPrediction {
                paper_id: p.paper_id.clone(),
                predicted: random_label_set(&mut rng, &pool, true),
                scores: BTreeMap::new(),
            })
            .collect();
        pred.shuffle(&mut rng);
        for s in Setting::ALL {
            for g in Granularity::ALL {
                let got = evaluate(&pred, &gold, s, g).map_err(|e| e.to_string())?;
                let want = oracle(&gold, &pred, s, g);
                for (name, a, b) in [
                    ("macro_p", got.macro_p, want.macro_p),
                    ("macro_r", got.macro_r, want.macro_r),
                    ("macro_f1", got.macro_f1, want.macro_f1),
                    ("micro_p", got.micro_p, want.micro_p),
                    ("micro_r", got.micro_r, want.micro_r),
                    ("micro_f1", got.micro_f1, want.micro_f1),
                ] {
                    ensure!((a - b).abs() <= 1e-12, "case {case} {s:?}/{g:?} {name}: {a} vs oracle {b}");
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synthetic end to end

fn synthetic_end_to_end() -> Result<(), String> {
    let data = repo_root().join("data/mini-corpus");
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = PipelineConfig {
        tei_dir: data.join("tei"),
        papers: data.join("papers.json"),
        evaluations: data.join("evaluations.json"),
        work_dir: work.path().to_path_buf(),
        seed: 7,
        threshold: 0.5,
        scorer: "lexical:".into(),
        ..PipelineConfig::default()
    };
    for stage in [
        Stage::Ingest,
        Stage::BuildCorpus,
        Stage::MakeInstances,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Ablate,
    ] {
        pipeline::run_stage(stage, &config).map_err(|e| format!("{stage}: {e}"))?;
    }

    let read = |name: &str| std::fs::read_to_string(work.path().join(name)).map_err(|e| format!("{name}: {e}"));
    let report: ReportFile = serde_json::from_str(&read(pipeline::REPORT_JSON)?).map_err(|e| e.to_string())?;
    for (s, cells) in &report.average {
        for (g, r) in cells {
            ensure!(
                r.micro_f1 == 1.0 && r.macro_f1 == 1.0,
                "{s:?}/{g:?}: micro F1 {} macro F1 {}",
                r.micro_f1,
                r.macro_f1
            );
        }
    }
    ensure!(report.average.len() == 2, "missing settings in report");

    let corpus: Vec<LabeledPaper> =
        pipeline::read_jsonl(&work.path().join(pipeline::CORPUS)).map_err(|e| e.to_string())?;
    let unknown: BTreeSet<&str> = corpus.iter().filter(|p| p.is_unknown()).map(|p| p.paper_id.as_str()).collect();
    ensure!(!unknown.is_empty(), "synthetic corpus has no unknown papers");
    let mut seen_unknown = 0;
    for fold in &report.meta.folds {
        let preds: Vec<PaperPrediction> = pipeline::read_jsonl(&work.path().join(pipeline::predictions_file(*fold)))
            .map_err(|e| e.to_string())?;
        for p in preds.iter().filter(|p| unknown.contains(p.paper_id.as_str())) {
            seen_unknown += 1;
            ensure!(
                p.predicted == BTreeSet::from([Label::Unknown]),
                "unknown paper {} predicted {:?}",
                p.paper_id,
                p.predicted
            );
        }
    }
    ensure!(seen_unknown > 0, "no unknown paper reached a test fold");

    // brute force: every gold triple scores 1.0, every other triple <= 1/3
    let all: BTreeSet<&TdmTriple> = corpus.iter().flat_map(|p| p.triples()).collect();
    for p in &corpus {
        let feature = build_feature(&p.document, &config.features);
        for t in &all {
            let s = LexicalScorer::overlap(&feature.combined, &render_hypothesis(t));
            if p.gold.contains(&Label::Tdm((*t).clone())) {
                ensure!(s == 1.0, "{}: gold {t} scored {s}", p.paper_id);
            } else {
                ensure!(s <= 1.0 / 3.0 + 1e-12, "{}: non-gold {t} scored {s}", p.paper_id);
            }
        }
    }

    let ablation: AblationFile = serde_json::from_str(&read(pipeline::ABLATION_JSON)?).map_err(|e| e.to_string())?;
    ensure!(ablation.rows.len() == 4, "ablation has {} rows", ablation.rows.len());
    let base = &ablation.rows[0];
    let full = &ablation.rows[3];
    ensure!(base.label == "Title + Abstract", "first row is {}", base.label);
    ensure!(
        base.with_unknown == full.with_unknown && base.without_unknown == full.without_unknown,
        "Title + Abstract row differs from the full row"
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// negative sampling

fn sampling_corpus(universe: &[TdmTriple], n: usize, seed: u64) -> Vec<LabeledPaper> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = rng.gen_range(1..=5);
            let gold = universe.choose_multiple(&mut rng, k).cloned().map(Label::Tdm).collect();
            paper(&format!("paper-{i:05}"), gold)
        })
        .collect()
}

fn negative_sampling() -> Result<(), String> {
    for universe_size in [120usize, 40] {
        let universe: Vec<TdmTriple> = (0..universe_size)
            .map(|k| triple(&format!("Task {k}"), &format!("Data {k}"), &format!("Metric {k}")))
            .collect();
        let corpus = sampling_corpus(&universe, 1_000, universe_size as u64);
        let features: HashMap<String, String> = corpus
            .iter()
            .map(|p| (p.paper_id.clone(), format!("premise of {}", p.paper_id)))
            .collect();
        let refs: Vec<&LabeledPaper> = corpus.iter().collect();
        for k in K_FALSE_GRID {
            let config = SamplingConfig { k_false: k, seed: 11 };
            let instances = generate_instances(&refs, &features, &universe, &config).map_err(|e| e.to_string())?;
            let mut by_paper: HashMap<&str, (BTreeSet<&TdmTriple>, Vec<&TdmTriple>)> = HashMap::new();
            for inst in &instances {
                let e = by_paper.entry(inst.paper_id.as_str()).or_default();
                if inst.label {
                    e.0.insert(&inst.hypothesis);
                } else {
                    e.1.push(&inst.hypothesis);
                }
            }
            for p in &corpus {
                let gold: BTreeSet<&TdmTriple> = p.triples().collect();
                let (pos, neg) = &by_paper[p.paper_id.as_str()];
                ensure!(*pos == gold, "{}: positives differ from gold", p.paper_id);
                let pool = universe.len() - gold.len();
                ensure!(
                    neg.len() == k.min(pool),
                    "{} k={k}: {} negatives, expected {}",
                    p.paper_id,
                    neg.len(),
                    k.min(pool)
                );
                let distinct: BTreeSet<&&TdmTriple> = neg.iter().collect();
                ensure!(distinct.len() == neg.len(), "{} k={k}: duplicate negatives", p.paper_id);
                ensure!(
                    neg.iter().all(|t| !gold.contains(t)),
                    "{} k={k}: negative collides with gold",
                    p.paper_id
                );
            }

            let mut first = Vec::new();
            write_instances(&mut first, &instances).map_err(|e| e.to_string())?;
            let mut shuffled = refs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(k as u64));
            let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
            let again = pool
                .install(|| generate_instances(&shuffled, &features, &universe, &config))
                .map_err(|e| e.to_string())?;
            let mut second = Vec::new();
            write_instances(&mut second, &again).map_err(|e| e.to_string())?;
            ensure!(first == second, "k={k}: regeneration is not byte-identical");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// DocTAET budgets

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    const VOCAB: [&str; 8] = ["model", "data", "set", "score", "we", "train", "eval", "layer"];
    (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

fn random_document(rng: &mut ChaCha8Rng, i: usize) -> Document {
    let monster = i % 10 == 0;
    let text = |rng: &mut ChaCha8Rng, small: std::ops::Range<usize>| {
        let n = if monster { 5_000 } else { rng.gen_range(small) };
        words(rng, n)
    };
    let headings = ["Introduction", "Experimental Setup", "Experiments", "Training details", "Results"];
    let title = text(rng, 1..20);
    let abstract_text = text(rng, 0..300);
    let sections = (0..rng.gen_range(1..5))
        .map(|_| Section {
            heading: headings[rng.gen_range(0..headings.len())].to_string(),
            body: text(rng, 0..300),
        })
        .collect();
    let tables = (0..rng.gen_range(1..3))
        .map(|_| {
            let n = rng.gen_range(1..30);
            TableInfo {
                caption: words(rng, n),
                cells: (0..if monster { 500 } else { 5 })
                    .map(|_| (0..10).map(|_| words(rng, 1)).collect())
                    .collect(),
            }
        })
        .collect();
    Document {
        paper_id: format!("doc{i}"),
        title,
        abstract_text,
        sections,
        tables,
    }
}

fn doctaet_budgets() -> Result<(), String> {
    let configs = ablation_configs();
    let expected: [&[Part]; 4] = [
        &[Part::Title, Part::Abstract],
        &[Part::Title, Part::Abstract, Part::ExpSetup],
        &[Part::Title, Part::Abstract, Part::TableInfo],
        &[Part::Title, Part::Abstract, Part::ExpSetup, Part::TableInfo],
    ];
    for (cfg, want) in configs.iter().zip(expected) {
        let want: BTreeSet<Part> = want.iter().copied().collect();
        ensure!(cfg.enabled_parts == want, "{} enables {:?}", cfg.label(), cfg.enabled_parts);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(512);
    for i in 0..500 {
        let doc = random_document(&mut rng, i);
        for cfg in &configs {
            let f = build_feature(&doc, cfg);
            ensure!(
                token_count(&f.combined) <= DEFAULT_TOTAL_BUDGET,
                "doc {i} {}: combined has {} tokens",
                cfg.label(),
                token_count(&f.combined)
            );
            for (name, part, text) in [
                ("exp_setup", Part::ExpSetup, &f.exp_setup),
                ("table_info", Part::TableInfo, &f.table_info),
            ] {
                ensure!(
                    token_count(text) <= DEFAULT_PART_BUDGET,
                    "doc {i} {}: {name} has {} tokens",
                    cfg.label(),
                    token_count(text)
                );
                ensure!(
                    cfg.enabled_parts.contains(&part) || text.is_empty(),
                    "doc {i} {}: disabled {name} is not empty",
                    cfg.label()
                );
            }
            ensure!(
                !f.title.is_empty() && f.combined.starts_with(f.title.split(' ').next().unwrap()),
                "doc {i}: combined does not start with the title"
            );
            if cfg.enabled_parts.contains(&Part::TableInfo) {
                ensure!(!f.table_info.is_empty(), "doc {i}: table info missing");
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fold splits

fn fold_splits() -> Result<(), String> {
    let sizes: Vec<usize> = (10..=60).chain([100, 257, 1_000, 4_999, 5_000]).collect();
    for n in sizes {
        let ids: Vec<String> = (0..n).map(|i| format!("id{i:05}")).collect();
        for (n_folds, seed) in [(2usize, 0u64), (5, 42)] {
            let folds = split_ids(&ids, 0.7, n_folds, seed).map_err(|e| e.to_string())?;
            ensure!(folds.len() == n_folds, "n={n}: {} folds", folds.len());
            let all: BTreeSet<String> = ids.iter().cloned().collect();
            for f in &folds {
                ensure!(f.train_ids.is_disjoint(&f.test_ids), "n={n} fold {}: overlap", f.fold_id);
                let union: BTreeSet<String> = f.train_ids.union(&f.test_ids).cloned().collect();
                ensure!(union == all, "n={n} fold {}: union is not the corpus", f.fold_id);
                let train = f.train_ids.len() as f64;
                ensure!((train - 0.7 * n as f64).abs() <= 1.0, "n={n}: {train} training papers");
                if n >= 50 {
                    let ratio = train / n as f64;
                    ensure!((0.69..=0.71).contains(&ratio), "n={n}: train ratio {ratio}");
                }
            }
            for (i, a) in folds.iter().enumerate() {
                for b in &folds[i + 1..] {
                    ensure!(a.test_ids != b.test_ids, "n={n}: folds {} and {} share a test set", a.fold_id, b.fold_id);
                }
            }
            let mut reversed = ids.clone();
            reversed.reverse();
            let again = split_ids(&reversed, 0.7, n_folds, seed).map_err(|e| e.to_string())?;
            ensure!(again == folds, "n={n}: split is not deterministic");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// corpus stats

/// `labeled` papers carrying `triples` in total (2 or 3 each), plus `unknown`
/// papers. Slot `s` of paper `j` holds triple `(3j + s) mod 78`, whose
/// components are `k mod 18`, `k mod 44` and `k mod 31`.
fn stats_split(prefix: &str, labeled: usize, unknown: usize, triples: usize) -> Vec<LabeledPaper> {
    let three = triples - 2 * labeled;
    let mut out = Vec::new();
    for j in 0..labeled {
        let slots = if j < three { 3 } else { 2 };
        let gold = (0..slots)
            .map(|s| {
                let k = (j * 3 + s) % 78;
                Label::Tdm(triple(&format!("task{}", k % 18), &format!("data{}", k % 44), &format!("metric{}", k % 31)))
            })
            .collect();
        out.push(paper(&format!("{prefix}{j}"), gold));
    }
    for j in 0..unknown {
        out.push(paper(&format!("{prefix}u{j}"), BTreeSet::from([Label::Unknown])));
    }
    out
}

fn corpus_stats_fixture() -> Result<(), String> {
    let round2 = |x: f64| (x * 100.0).round() / 100.0;

    let train = SplitStats::of(&stats_split("tr", 124, 46, 327));
    ensure!(train.papers == 170.0, "train papers {}", train.papers);
    ensure!(train.unknown == 46.0, "train unknown {}", train.unknown);
    ensure!(train.total_triples == 327.0, "train triples {}", train.total_triples);
    ensure!(round2(train.avg_triples_per_paper) == 2.64, "train average {}", train.avg_triples_per_paper);
    ensure!(train.distinct_triples == 78.0, "train distinct triples {}", train.distinct_triples);
    ensure!(train.distinct_tasks == 18.0, "train tasks {}", train.distinct_tasks);
    ensure!(train.distinct_datasets == 44.0, "train datasets {}", train.distinct_datasets);
    ensure!(train.distinct_metrics == 31.0, "train metrics {}", train.distinct_metrics);

    let test = SplitStats::of(&stats_split("te", 122, 45, 294));
    ensure!(test.papers == 167.0 && test.unknown == 45.0, "test counts {} / {}", test.papers, test.unknown);
    ensure!(test.total_triples == 294.0, "test triples {}", test.total_triples);
    ensure!(round2(test.avg_triples_per_paper) == 2.41, "test average {}", test.avg_triples_per_paper);

    let small: Vec<LabeledPaper> = [2usize, 1, 3, 2]
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let gold = (0..n).map(|s| Label::Tdm(triple("T", &format!("D{s}"), "M"))).collect();
            paper(&format!("s{i}"), gold)
        })
        .collect();
    let s = SplitStats::of(&small);
    ensure!(s.avg_triples_per_paper == 2.0, "2,1,3,2 average {}", s.avg_triples_per_paper);
    Ok(())
}

// ---------------------------------------------------------------------------
// protocol conformance

fn lexical_response(body: &[u8]) -> HttpResponse {
    match serde_json::from_slice::<ScoreRequest>(body) {
        Ok(req) => {
            let scores = LexicalScorer.score(&req).unwrap();
            HttpResponse::json(200, serde_json::to_vec(&ScoreResponse { scores }).unwrap())
        }
        Err(e) => HttpResponse::json(400, serde_json::json!({ "error": e.to_string() }).to_string()),
    }
}

fn client(url: String) -> RemoteScorer {
    let mut c = RemoteScorer::new(url);
    c.backoff = Duration::from_millis(5);
    c
}

fn protocol_conformance() -> Result<(), String> {
    // golden exchanges, byte-exact on the request side
    let pairs = golden_pairs();
    ensure!(pairs.len() >= 3, "only {} golden fixtures", pairs.len());
    let served = pairs.clone();
    let golden = StubServer::start(move |req, _| {
        if req.method != "POST" || req.path != "/score" {
            return HttpResponse::json(404, r#"{"error":"not found"}"#);
        }
        match served.iter().find(|(_, r, _)| *r == req.body) {
            Some((_, _, resp)) => HttpResponse::json(200, resp.clone()),
            None => {
                HttpResponse::json(400, r#"{"error":"request does not match any fixture"}"#)
            }
        }
    });
    let scorer = client(golden.url());
    for (name, req, resp) in &pairs {
        let request: ScoreRequest = serde_json::from_slice(req).map_err(|e| format!("{name}: {e}"))?;
        let want: ScoreResponse = serde_json::from_slice(resp).map_err(|e| format!("{name}: {e}"))?;
        let got = scorer.score(&request).map_err(|e| format!("{name}: {e}"))?;
        ensure!(got == want.scores, "{name}: got {got:?}, want {:?}", want.scores);
    }

    // order preservation across batches and concurrent workers
    let lexical = StubServer::start(|req, idx| {
        std::thread::sleep(Duration::from_millis(((idx * 7) % 5) as u64 * 3));
        lexical_response(&req.body)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base: Vec<ScoreItem> = (0..20)
        .map(|i| ScoreItem::new(words(&mut rng, 12), format!("model {i} : data : score")))
        .collect();
    let mut items: Vec<ScoreItem> = base.iter().chain(&base).chain(&base[..7]).cloned().collect();
    items.shuffle(&mut rng);
    let request = ScoreRequest::new(items).unwrap();
    let want = LexicalScorer.score(&request).unwrap();
    for (batch, pool) in [(1usize, 4usize), (3, 4), (5, 2), (64, 1)] {
        let mut c = client(lexical.url());
        c.batch_size = batch;
        c.pool = pool;
        let got = c.score(&request).map_err(|e| e.to_string())?;
        ensure!(got == want, "batch {batch} pool {pool}: scores out of order");
    }

    // transient 5xx is retried
    let flaky = StubServer::start(|req, idx| {
        if idx < 2 {
            HttpResponse::json(500, r#"{"error":"warming up"}"#)
        } else {
            lexical_response(&req.body)
        }
    });
    let one = ScoreRequest::new(vec![ScoreItem::new("a b c", "a : b : c")]).unwrap();
    let got = client(flaky.url()).score(&one).map_err(|e| format!("flaky: {e}"))?;
    ensure!(got == vec![1.0], "flaky: {got:?}");
    ensure!(flaky.call_count() == 3, "flaky: {} calls", flaky.call_count());

    // persistent 5xx gives up after the retry budget
    let down = StubServer::start(|_, _| HttpResponse::json(503, r#"{"error":"overloaded"}"#));
    let mut c = client(down.url());
    c.retries = 2;
    match c.score(&one) {
        Err(ScoreError::Server { status: 503, .. }) => {}
        other => return Err(format!("persistent 503: {other:?}")),
    }
    ensure!(down.call_count() == 3, "persistent 503: {} calls", down.call_count());

    // 4xx is not retried and surfaces the server's message
    let bad = StubServer::start(|_, _| HttpResponse::json(400, r#"{"error":"hypothesis too long"}"#));
    match client(bad.url()).score(&one) {
        Err(ScoreError::Server { status: 400, message }) if message == "hypothesis too long" => {}
        other => return Err(format!("400: {other:?}")),
    }
    ensure!(bad.call_count() == 1, "400 was retried");

    // contract violations are protocol errors
    for body in [r#"{"scores":[1.5]}"#, r#"{"scores":[-0.1]}"#, r#"{"scores":[0.5,0.5]}"#, r#"{"score":[0.5]}"#] {
        let server = StubServer::start(move |_, _| HttpResponse::json(200, body));
        match client(server.url()).score(&one) {
            Err(ScoreError::Protocol(_)) => {}
            other => return Err(format!("response {body}: {other:?}")),
        }
    }

    // nothing listening
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut c = client(format!("http://127.0.0.1:{port}/score"));
    c.retries = 1;
    match c.score(&one) {
        Err(ScoreError::Transport { .. }) => {}
        other => return Err(format!("connection refused: {other:?}")),
    }
    Ok(())
}
