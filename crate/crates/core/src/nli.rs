//! NLI training instances: (premise, hypothesis triple, entailed?) records.
//!
//! Every gold triple of a paper yields a true instance. False instances are
//! triples drawn from the training fold's label set that the paper does not
//! carry, sampled without replacement from a stream seeded by
//! `(seed, paper_id)` so a paper's negatives do not depend on corpus order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{LabeledPaper, TdmTriple};

#[derive(Debug, Error)]
pub enum NliError {
    #[error("paper {0} has no DocTAET feature")]
    MissingFeature(String),
}

pub const K_FALSE_GRID: [usize; 3] = [10, 50, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub k_false: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            k_false: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliInstance {
    pub paper_id: String,
    pub premise: String,
    pub hypothesis: TdmTriple,
    pub label: bool,
}

/// Flat wire form, one JSON object per line:
/// `paper_id, premise, task, dataset, metric, label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub paper_id: String,
    pub premise: String,
    pub task: String,
    pub dataset: String,
    pub metric: String,
    pub label: bool,
}

impl From<&NliInstance> for InstanceRecord {
    fn from(i: &NliInstance) -> Self {
        Self {
            paper_id: i.paper_id.clone(),
            premise: i.premise.clone(),
            task: i.hypothesis.task().to_string(),
            dataset: i.hypothesis.dataset().to_string(),
            metric: i.hypothesis.metric().to_string(),
            label: i.label,
        }
    }
}

/// Distinct real triples of the training papers, sorted.
pub fn candidate_label_set<'a, I>(train: I) -> Vec<TdmTriple>
where
    I: IntoIterator<Item = &'a LabeledPaper>,
{
    let set: BTreeSet<&TdmTriple> = train.into_iter().flat_map(|p| p.triples()).collect();
    set.into_iter().cloned().collect()
}

fn paper_rng(seed: u64, paper_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(paper_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

fn paper_instances(
    paper: &LabeledPaper,
    premise: &str,
    candidates: &[TdmTriple],
    config: &SamplingConfig,
) -> Vec<NliInstance> {
    let gold: BTreeSet<&TdmTriple> = paper.triples().collect();
    let mut out: Vec<NliInstance> = gold
        .iter()
        .map(|&t| NliInstance {
            paper_id: paper.paper_id.clone(),
            premise: premise.to_string(),
            hypothesis: t.clone(),
            label: true,
        })
        .collect();
    let pool: Vec<&TdmTriple> = candidates.iter().filter(|t| !gold.contains(t)).collect();
    let k = config.k_false.min(pool.len());
    if k > 0 {
        let mut rng = paper_rng(config.seed, &paper.paper_id);
        for idx in sample(&mut rng, pool.len(), k).into_iter() {
            out.push(NliInstance {
                paper_id: paper.paper_id.clone(),
                premise: premise.to_string(),
                hypothesis: pool[idx].clone(),
                label: false,
            });
        }
    }
    out
}

/// Instances for every paper of a fold, in paper-id order.
///
/// `features` maps paper id to the premise text (the combined DocTAET
/// string). Unknown papers contribute only false instances.
pub fn generate_instances(
    papers: &[&LabeledPaper],
    features: &HashMap<String, String>,
    candidates: &[TdmTriple],
    config: &SamplingConfig,
) -> Result<Vec<NliInstance>, NliError> {
    let mut sorted: Vec<&LabeledPaper> = papers.to_vec();
    sorted.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    if let Some(p) = sorted.iter().find(|p| !features.contains_key(&p.paper_id)) {
        return Err(NliError::MissingFeature(p.paper_id.clone()));
    }
    let per_paper: Vec<Vec<NliInstance>> = sorted
        .par_iter()
        .map(|p| paper_instances(p, &features[&p.paper_id], candidates, config))
        .collect();
    Ok(per_paper.into_iter().flatten().collect())
}

pub fn write_instances<W: Write>(mut w: W, instances: &[NliInstance]) -> std::io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, &InstanceRecord::from(inst))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperCounts {
    pub true_instances: usize,
    pub false_instances: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub true_instances: usize,
    pub false_instances: usize,
    pub per_paper: BTreeMap<String, PaperCounts>,
    /// Instances-per-paper → number of papers.
    pub histogram: BTreeMap<usize, usize>,
}

pub fn instance_stats(instances: &[NliInstance]) -> InstanceStats {
    let mut stats = InstanceStats::default();
    for inst in instances {
        let entry = stats.per_paper.entry(inst.paper_id.clone()).or_default();
        if inst.label {
            stats.true_instances += 1;
            entry.true_instances += 1;
        } else {
            stats.false_instances += 1;
            entry.false_instances += 1;
        }
    }
    for counts in stats.per_paper.values() {
        *stats
            .histogram
            .entry(counts.true_instances + counts.false_instances)
            .or_insert(0) += 1;
    }
    stats
}
