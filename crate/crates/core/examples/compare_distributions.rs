//! Compare distribution tables against crowd judgments: mean KL / JSD / TVD, distance
//! correlation, and argmax classification scores.
//!
//! cargo run --example compare_distributions [CHAOS_JSONL]

use std::collections::BTreeMap;
use std::path::PathBuf;

use hlv::data::{load_dataset, ChaosView, DatasetFormat, JudgmentDistribution};
use hlv::metrics::{argmax_table, dataset_report, MetricConfig, SmoothingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini/chaos.jsonl"));
    let view = |v| load_dataset(&path, DatasetFormat::ChaosNli(v)).map(|d| d.distributions().clone());
    let crowd = view(ChaosView::Hjd)?;
    let uniform: BTreeMap<String, JudgmentDistribution> =
        crowd.keys().map(|k| (k.clone(), JudgmentDistribution::uniform())).collect();
    let candidates = [
        ("uniform", uniform),
        ("single label", view(ChaosView::MnliLabel)?),
        ("five annotators", view(ChaosView::MnliDistribution)?),
    ];

    println!("{} items", crowd.len());
    for eps in [1e-3, 1e-4] {
        let cfg = MetricConfig {
            smoothing: SmoothingConfig::with_epsilon(eps),
            ..MetricConfig::default()
        };
        println!("smoothing eps = {eps}");
        for (name, table) in &candidates {
            let r = dataset_report(&crowd, table, &cfg, Some(&argmax_table(table)))?;
            let cls = r.classification.as_ref().map(|c| c.weighted_f1).unwrap_or_default();
            println!("  {name:<16} {}  W-F1={cls:.3}", r.summary_line());
        }
    }
    Ok(())
}
