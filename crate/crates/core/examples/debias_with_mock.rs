//! Averaging over all six letter→label mappings cancels a pure position preference, while a
//! model that reads the labels keeps its answer. The mocks count their calls.
//!
//! cargo run --example debias_with_mock

use hlv::backend::MockBackend;
use hlv::data::{ExplanationAnnotation, NliItem, NliLabel};
use hlv::estimator::{estimate_mjd, EstimationConfig, TransformConfig};
use hlv::prompting::{ExplanationMode, PromptType};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let item = NliItem::new("demo", "The museum is closed on Mondays.", "You can visit the museum any day.")?;
    let explanations: Vec<ExplanationAnnotation> = [
        (NliLabel::Contradiction, "It is closed one day a week."),
        (NliLabel::Contradiction, "Mondays are excluded."),
        (NliLabel::Neutral, "Maybe there are special Monday openings."),
        (NliLabel::Contradiction, "Any day includes Monday."),
    ]
    .iter()
    .enumerate()
    .map(|(i, (l, t))| ExplanationAnnotation::new(format!("a{i}"), *l, *t))
    .collect::<Result<_, _>>()?;

    let biased = MockBackend::position_biased([4.0, 2.0, 1.0]);
    let faithful = MockBackend::label_faithful([1.0, 2.0, 5.0]);
    for mode in [ExplanationMode::Serial, ExplanationMode::Parallel] {
        let cfg = EstimationConfig::new(PromptType::WithExplanations, Some(mode), TransformConfig::normalize());
        biased.reset_calls();
        let t = estimate_mjd(&item, &explanations, &cfg, &biased)?;
        println!("{mode:>8}: position-biased mock -> {:?} after {} calls", t.mjd.probs(), biased.calls());

        // a single mapping shows the bias the permutation average removes
        let first = &t.records[0];
        println!("          first mapping alone ({}) -> {:?}", first.mapping.code(), first.distribution.probs());

        faithful.reset_calls();
        let t = estimate_mjd(&item, &explanations, &cfg, &faithful)?;
        println!("          label-faithful mock -> {:?} after {} calls", t.mjd.probs(), faithful.calls());
    }
    Ok(())
}
