use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{BackendError, OptionScores, Provenance, ScoreBackend, ScoreSemantics};
use crate::data::NliLabel;
use crate::prompting::{OptionLetter, OptionMapping, PromptText};

#[derive(Debug, Clone, PartialEq)]
pub enum MockRule {
    /// Fixed scores per letter, whatever label the letter carries.
    PositionBiased([f64; 3]),
    /// Scores per label (E, N, C), routed to whichever letter shows that label.
    LabelFaithful([f64; 3]),
    /// Explicit table keyed by prompt digest.
    Scripted(HashMap<String, [f64; 3]>),
}

/// Deterministic in-process backend. Counts every query for cost assertions.
#[derive(Debug)]
pub struct MockBackend {
    rule: MockRule,
    semantics: ScoreSemantics,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(rule: MockRule) -> Self {
        Self {
            rule,
            semantics: ScoreSemantics::RawLogit,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn position_biased(scores: [f64; 3]) -> Self {
        Self::new(MockRule::PositionBiased(scores))
    }

    pub fn label_faithful(scores: [f64; 3]) -> Self {
        Self::new(MockRule::LabelFaithful(scores))
    }

    pub fn scripted(table: HashMap<String, [f64; 3]>) -> Self {
        Self::new(MockRule::Scripted(table))
    }

    pub fn with_semantics(mut self, semantics: ScoreSemantics) -> Self {
        self.semantics = semantics;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

/// Recovers the letter→label mapping from the option lines of a rendered prompt
/// (the last `A. `, `B. `, `C. ` lines of the final message).
pub fn parse_option_mapping(prompt: &PromptText) -> Option<OptionMapping> {
    let text = &prompt.messages.last()?.content;
    let mut labels: [Option<NliLabel>; 3] = [None; 3];
    for line in text.lines() {
        for letter in OptionLetter::ALL {
            if let Some(rest) = line.strip_prefix(&format!("{}. ", letter.as_str())) {
                if let Ok(label) = rest.trim_end_matches('.').parse() {
                    labels[letter.index()] = Some(label);
                }
            }
        }
    }
    OptionMapping::new([labels[0]?, labels[1]?, labels[2]?]).ok()
}

impl ScoreBackend for MockBackend {
    fn id(&self) -> String {
        match &self.rule {
            MockRule::PositionBiased(s) => format!("mock:position-biased:{s:?}"),
            MockRule::LabelFaithful(s) => format!("mock:label-faithful:{s:?}"),
            MockRule::Scripted(t) => format!("mock:scripted:{}", t.len()),
        }
    }

    fn query(&self, prompt: &PromptText) -> Result<OptionScores, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let scores = match &self.rule {
            MockRule::PositionBiased(s) => *s,
            MockRule::LabelFaithful(by_label) => {
                let mapping = parse_option_mapping(prompt)
                    .ok_or_else(|| BackendError::Protocol("prompt has no recognizable option block".into()))?;
                OptionLetter::ALL.map(|l| by_label[mapping.label(l).index()])
            }
            MockRule::Scripted(table) => {
                let digest = prompt.digest();
                *table.get(&digest).ok_or(BackendError::ScriptMissing(digest))?
            }
        };
        OptionScores::new(scores, self.semantics, Provenance::new(self.id()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NliItem;
    use crate::data::NliLabel::*;
    use crate::prompting::{render_prompt, PromptType, TemplateVersion};

    fn prompt(mapping: OptionMapping) -> PromptText {
        let item = NliItem::new("1", "p", "h").unwrap();
        render_prompt(&item, &[], &mapping, PromptType::WithoutExplanations, TemplateVersion::V1).unwrap()
    }

    #[test]
    fn position_biased_ignores_mapping() {
        let m = MockBackend::position_biased([10.0, 5.0, 1.0]);
        for mapping in crate::prompting::option_mappings() {
            assert_eq!(m.query(&prompt(mapping)).unwrap().scores(), [10.0, 5.0, 1.0]);
        }
        assert_eq!(m.calls(), 6);
    }

    #[test]
    fn label_faithful_routes_through_mapping() {
        let m = MockBackend::label_faithful([8.0, 4.0, 2.0]);
        let mapping = OptionMapping::new([Neutral, Contradiction, Entailment]).unwrap();
        assert_eq!(m.query(&prompt(mapping)).unwrap().scores(), [4.0, 2.0, 8.0]);
    }

    #[test]
    fn scripted_unknown_prompt_errors() {
        let p = prompt(OptionMapping::identity());
        let m = MockBackend::scripted(HashMap::from([(p.digest(), [1.0, 2.0, 3.0])]));
        assert_eq!(m.query(&p).unwrap().scores(), [1.0, 2.0, 3.0]);
        let other = prompt(OptionMapping::new([Contradiction, Neutral, Entailment]).unwrap());
        assert!(matches!(m.query(&other), Err(BackendError::ScriptMissing(_))));
    }

    #[test]
    fn repeated_queries_identical() {
        let m = MockBackend::label_faithful([3.0, 2.0, 1.0]);
        let p = prompt(OptionMapping::identity());
        assert_eq!(m.query(&p).unwrap(), m.query(&p).unwrap());
    }
}
