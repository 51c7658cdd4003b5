//! Regenerates the bundled synthetic mini-corpus.
//!
//! cargo run -p tdm-core --example write_mini_corpus -- data/mini-corpus

use std::fs;
use std::path::PathBuf;

use tdm_core::synthetic;

fn main() -> std::io::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data/mini-corpus".into())
        .into();
    let tei_dir = out.join("tei");
    fs::create_dir_all(&tei_dir)?;
    let papers = synthetic::papers();
    for p in &papers {
        fs::write(tei_dir.join(format!("{}.tei.xml", p.paper_id)), &p.tei)?;
    }
    let pretty = |v: &serde_json::Value| serde_json::to_string_pretty(v).unwrap() + "\n";
    fs::write(out.join("papers.json"), pretty(&synthetic::papers_json(&papers)))?;
    fs::write(
        out.join("evaluations.json"),
        pretty(&synthetic::evaluations_json(&papers)),
    )?;
    println!("wrote {} papers to {}", papers.len(), out.display());
    Ok(())
}
