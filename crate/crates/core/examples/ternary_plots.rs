//! Draw a ternary scatter of two tables and a pairwise-error figure as SVG.
//!
//! cargo run --example ternary_plots [OUT_DIR]

use std::path::PathBuf;

use hlv::data::{load_dataset, ChaosView, DatasetFormat};
use hlv::metrics::{pairwise_errors, DistributionMatrix};
use hlv::viz::{render_error_plot, render_scatter, ErrorPair, PlotSpec, Series};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args_os().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini/chaos.jsonl");
    let crowd = load_dataset(&path, DatasetFormat::ChaosNli(ChaosView::Hjd))?.distributions().clone();
    let five = load_dataset(&path, DatasetFormat::ChaosNli(ChaosView::MnliDistribution))?.distributions().clone();

    let spec = PlotSpec {
        title: "crowd vs five annotators".into(),
        zoom: 1.5,
        ..PlotSpec::default()
    };
    let series = [("crowd", &crowd), ("five annotators", &five)].map(|(label, t)| Series {
        label: label.into(),
        points: t.iter().map(|(k, v)| (k.clone(), *v)).collect(),
    });
    let scatter = out.join("ternary_scatter.svg");
    std::fs::write(&scatter, render_scatter(&series, &spec)?)?;

    let errors = pairwise_errors(&DistributionMatrix::from_table(&crowd), &DistributionMatrix::from_table(&five))?;
    let pairs: Vec<ErrorPair> = errors
        .into_iter()
        .map(|e| ErrorPair {
            reference: crowd[&e.id],
            candidate: five[&e.id],
            distance: e.norm,
            id: e.id,
        })
        .collect();
    let error_fig = out.join("ternary_errors.svg");
    std::fs::write(&error_fig, render_error_plot(&pairs, ["crowd", "five annotators"], &spec)?)?;
    println!("wrote {} and {}", scatter.display(), error_fig.display());
    Ok(())
}
