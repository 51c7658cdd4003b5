//! DocTAET context features: Title, Abstract, Experimental setup and Table
//! content, concatenated in that order under token budgets.
//!
//! A token here is a whitespace-delimited word. The experimental-setup and
//! table parts are first cut to `part_budget` tokens each; the assembled
//! string is then cut to `total_budget`, which drops tokens from the tail.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tei::{Document, TableInfo};
use crate::text::{join_nonempty, normalize_ws, tokens};

pub const DEFAULT_TOTAL_BUDGET: usize = 512;
pub const DEFAULT_PART_BUDGET: usize = 150;

pub const DEFAULT_SETUP_PATTERNS: [&str; 5] = [
    "experiment",
    "experimental setup",
    "evaluation setup",
    "setup",
    "training details",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("total token budget must be at least 1")]
    ZeroBudget,
    #[error("title and abstract cannot be disabled")]
    RequiredPartDisabled,
    #[error("unknown feature part {0:?}")]
    UnknownPart(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Title,
    Abstract,
    ExpSetup,
    TableInfo,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::Title, Part::Abstract, Part::ExpSetup, Part::TableInfo];

    pub fn as_str(self) -> &'static str {
        match self {
            Part::Title => "title",
            Part::Abstract => "abstract",
            Part::ExpSetup => "exp_setup",
            Part::TableInfo => "table_info",
        }
    }

    /// Name used in ablation row labels.
    pub fn display_name(self) -> &'static str {
        match self {
            Part::Title => "Title",
            Part::Abstract => "Abstract",
            Part::ExpSetup => "ExpSetup",
            Part::TableInfo => "TableInfo",
        }
    }
}

impl FromStr for Part {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "title" => Ok(Part::Title),
            "abstract" => Ok(Part::Abstract),
            "exp_setup" | "expsetup" | "experimental_setup" => Ok(Part::ExpSetup),
            "table_info" | "tableinfo" | "tables" => Ok(Part::TableInfo),
            other => Err(FeatureError::UnknownPart(other.to_string())),
        }
    }
}

/// Parses a comma- or plus-separated part list such as
/// `title,abstract,table_info`. Title and abstract are always added.
pub fn parse_parts(spec: &str) -> Result<BTreeSet<Part>, FeatureError> {
    let mut parts = BTreeSet::from([Part::Title, Part::Abstract]);
    for item in spec.split([',', '+']).map(str::trim).filter(|s| !s.is_empty()) {
        parts.insert(item.parse()?);
    }
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub total_budget: usize,
    pub part_budget: usize,
    pub enabled_parts: BTreeSet<Part>,
    /// Case-insensitive heading fragments that mark the experimental setup.
    pub setup_patterns: Vec<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            total_budget: DEFAULT_TOTAL_BUDGET,
            part_budget: DEFAULT_PART_BUDGET,
            enabled_parts: Part::ALL.into_iter().collect(),
            setup_patterns: DEFAULT_SETUP_PATTERNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FeatureConfig {
    pub fn with_parts(parts: &[Part]) -> Self {
        Self {
            enabled_parts: parts
                .iter()
                .copied()
                .chain([Part::Title, Part::Abstract])
                .collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.total_budget == 0 {
            return Err(FeatureError::ZeroBudget);
        }
        if !self.enabled_parts.contains(&Part::Title) || !self.enabled_parts.contains(&Part::Abstract)
        {
            return Err(FeatureError::RequiredPartDisabled);
        }
        Ok(())
    }

    pub fn is_enabled(&self, part: Part) -> bool {
        self.enabled_parts.contains(&part)
    }

    /// Row label such as `Title + Abstract + TableInfo`.
    pub fn label(&self) -> String {
        Part::ALL
            .iter()
            .filter(|p| self.is_enabled(**p))
            .map(|p| p.display_name())
            .collect::<Vec<_>>()
            .join(" + ")
    }

    /// Short stable digest of the configuration.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }
}

/// The four part combinations compared in the ablation study, in row order.
pub fn ablation_configs() -> Vec<FeatureConfig> {
    vec![
        FeatureConfig::with_parts(&[]),
        FeatureConfig::with_parts(&[Part::ExpSetup]),
        FeatureConfig::with_parts(&[Part::TableInfo]),
        FeatureConfig::with_parts(&[Part::ExpSetup, Part::TableInfo]),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocTaetFeature {
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub exp_setup: String,
    pub table_info: String,
    pub combined: String,
}

impl fmt::Display for DocTaetFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.combined)
    }
}

/// Body of the first section whose heading contains a setup pattern.
pub fn extract_exp_setup(document: &Document, patterns: &[String]) -> String {
    let patterns: Vec<String> = patterns.iter().map(|p| p.to_lowercase()).collect();
    document
        .sections
        .iter()
        .find(|s| {
            let heading = s.heading.to_lowercase();
            patterns.iter().any(|p| heading.contains(p.as_str()))
        })
        .map(|s| s.body.clone())
        .unwrap_or_default()
}

/// Caption then row-major cells for each table, all space-joined.
pub fn serialize_tables(tables: &[TableInfo]) -> String {
    let pieces = tables.iter().flat_map(|t| {
        std::iter::once(t.caption.as_str()).chain(t.cells.iter().flatten().map(String::as_str))
    });
    normalize_ws(&join_nonempty(pieces))
}

/// First `budget` whitespace tokens, rejoined by single spaces.
pub fn truncate(text: &str, budget: usize) -> String {
    let mut out = String::new();
    for tok in tokens(text).take(budget) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

pub fn build_feature(document: &Document, config: &FeatureConfig) -> DocTaetFeature {
    let keep = |part: Part, text: String| {
        if config.is_enabled(part) {
            text
        } else {
            String::new()
        }
    };
    let title = keep(Part::Title, normalize_ws(&document.title));
    let abstract_text = keep(Part::Abstract, normalize_ws(&document.abstract_text));
    let exp_setup = if config.is_enabled(Part::ExpSetup) {
        truncate(
            &extract_exp_setup(document, &config.setup_patterns),
            config.part_budget,
        )
    } else {
        String::new()
    };
    let table_info = if config.is_enabled(Part::TableInfo) {
        truncate(&serialize_tables(&document.tables), config.part_budget)
    } else {
        String::new()
    };
    let joined = join_nonempty([
        title.as_str(),
        abstract_text.as_str(),
        exp_setup.as_str(),
        table_info.as_str(),
    ]);
    let combined = truncate(&joined, config.total_budget);
    DocTaetFeature {
        title,
        abstract_text,
        exp_setup,
        table_info,
        combined,
    }
}

/// One line of `features.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub paper_id: String,
    #[serde(flatten)]
    pub feature: DocTaetFeature,
    pub config_fingerprint: String,
}
