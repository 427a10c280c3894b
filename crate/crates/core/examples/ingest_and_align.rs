//! Load a crowd-label file and an explanation file, keep their shared items with exactly two
//! explanations, and split the rest into dev/test halves.
//!
//! cargo run --example ingest_and_align [CHAOS_JSONL VARIERR_JSON]

use std::collections::BTreeSet;
use std::path::PathBuf;

use hlv::data::{align_datasets, exactly, load_dataset, split_remainder, ChaosView, DatasetFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini");
    let mut args = std::env::args_os().skip(1).map(PathBuf::from);
    let chaos_path = args.next().unwrap_or_else(|| fixtures.join("chaos.jsonl"));
    let varierr_path = args.next().unwrap_or_else(|| fixtures.join("varierr.json"));

    let chaos = load_dataset(&chaos_path, DatasetFormat::ChaosNli(ChaosView::Hjd))?;
    let varierr = load_dataset(&varierr_path, DatasetFormat::VariErr)?;
    println!("crowd file: {} items, explanation file: {} items", chaos.len(), varierr.len());

    let m = if varierr.len() > 100 { 4 } else { 2 };
    let paired = align_datasets(&varierr, &chaos, Some(&exactly(m)));
    println!("{} shared items with exactly {m} explanations", paired.len());
    for r in paired.records.iter().take(5) {
        let crowd = r.right.map(|d| d.probs()).unwrap_or_default();
        println!("  {:<10} crowd {:?}  explanations {}", r.item.id, crowd.map(|p| (p * 100.0).round() / 100.0), r.explanations.len());
    }

    let exclude: BTreeSet<String> = paired.ids().map(String::from).collect();
    let (dev, test) = split_remainder(&chaos, &exclude, 0)?;
    println!("remainder split: dev {} / test {}", dev.len(), test.len());
    Ok(())
}
