//! Print the prompt each prompt type produces for one item under one option mapping.
//!
//! cargo run --example render_prompts

use hlv::data::{ExplanationAnnotation, NliItem, NliLabel};
use hlv::prompting::{explanation_batches, option_mappings, render_prompt, ExplanationMode, PromptType, TemplateVersion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let item = NliItem::new("demo", "A woman is slicing onions in a crowded kitchen.", "Someone is cooking.")?;
    let explanations = [
        ExplanationAnnotation::new("a1", NliLabel::Entailment, "Slicing onions is part of cooking.")?,
        ExplanationAnnotation::new("a2", NliLabel::Neutral, "She might be preparing a salad, not cooking.")?,
    ];
    // the fourth mapping in canonical order: A→Neutral, B→Contradiction, C→Entailment
    let mapping = option_mappings()[3];
    println!("mapping {}\n", mapping.code());

    for ty in PromptType::ALL {
        let batch: Vec<&ExplanationAnnotation> = if ty.uses_explanations() { explanations.iter().collect() } else { vec![] };
        let prompt = render_prompt(&item, &batch, &mapping, ty, TemplateVersion::V1)?;
        println!("===== {ty} ({} message(s), digest {})", prompt.messages.len(), &prompt.digest()[..12]);
        for m in &prompt.messages {
            println!("--- {:?}\n{}", m.role, m.content);
        }
        println!();
    }

    for mode in [ExplanationMode::Serial, ExplanationMode::Parallel, ExplanationMode::KAtATime(2)] {
        let batches = explanation_batches(4, mode)?;
        println!("m=4, {mode}: {} prompts per mapping", batches.len());
    }
    Ok(())
}
