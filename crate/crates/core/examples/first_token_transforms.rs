//! Turn first-token scores into option probabilities: plain normalization of positive
//! logits, or a temperature softmax.
//!
//! cargo run --example first_token_transforms

use hlv::backend::OptionScores;
use hlv::estimator::{map_to_labels, normalize_scores, softmax_scores, NegativePolicy};
use hlv::prompting::option_mappings;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = [
        [5.906385898590088, 6.259021282196045, 43.25299835205078],
        [4.2198514938, 20.7870941162, 39.63526535],
        [10.3, -0.4, 2.0],
    ];
    for raw in cases {
        let scores = OptionScores::raw_logits(raw)?;
        println!("scores {raw:?}");
        match normalize_scores(&scores, NegativePolicy::Error) {
            Ok((p, _)) => println!("  normalize            {p:.4?}"),
            Err(e) => println!("  normalize            refused: {e}"),
        }
        let (p, clamped) = normalize_scores(&scores, NegativePolicy::ClampEpsilon)?;
        println!("  normalize (clamped)  {p:.4?}  clamped={clamped}");
        for t in [5.0, 10.0, 20.0] {
            println!("  softmax t={t:<4}       {:.4?}", softmax_scores(&scores, t));
        }
    }

    // letters become labels through the mapping the prompt used
    let (p, _) = normalize_scores(&OptionScores::raw_logits(cases[0])?, NegativePolicy::Error)?;
    for m in option_mappings() {
        println!("mapping {} -> E/N/C {:.4?}", m.code(), map_to_labels(p, &m).probs());
    }
    Ok(())
}
