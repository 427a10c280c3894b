//! Multiple-choice prompt rendering and the option/explanation permutation schedule.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{ExplanationAnnotation, NliItem, NliLabel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("option mapping is not a bijection: {0:?}")]
    NotBijective([NliLabel; 3]),
    #[error("batch size k={k} out of range for m={m} explanations")]
    BatchSize { k: usize, m: usize },
    #[error("mode requires at least one explanation")]
    NoExplanations,
    #[error("batch index {index} out of range for {m} explanations")]
    BatchIndex { index: usize, m: usize },
    #[error("batch repeats explanation index {0}")]
    BatchRepeat(usize),
    #[error("prompt type {ty} {problem}")]
    BatchMismatch { ty: PromptType, problem: &'static str },
    #[error("unknown template version {0:?}")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptType {
    WithoutExplanations,
    WithExplanations,
    WithExplicitExplanations,
    AssistantMode,
    AssistantModeExplicit,
}

impl PromptType {
    pub const ALL: [PromptType; 5] = [
        PromptType::WithoutExplanations,
        PromptType::WithExplanations,
        PromptType::WithExplicitExplanations,
        PromptType::AssistantMode,
        PromptType::AssistantModeExplicit,
    ];

    pub fn uses_explanations(self) -> bool {
        self != PromptType::WithoutExplanations
    }

    pub fn is_explicit(self) -> bool {
        matches!(self, PromptType::WithExplicitExplanations | PromptType::AssistantModeExplicit)
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptType::WithoutExplanations => "without-explanations",
            PromptType::WithExplanations => "with-explanations",
            PromptType::WithExplicitExplanations => "with-explicit-explanations",
            PromptType::AssistantMode => "assistant-mode",
            PromptType::AssistantModeExplicit => "assistant-mode-explicit",
        }
    }
}

impl fmt::Display for PromptType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown prompt type {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptionLetter {
    A,
    B,
    C,
}

impl OptionLetter {
    pub const ALL: [OptionLetter; 3] = [OptionLetter::A, OptionLetter::B, OptionLetter::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptionLetter::A => "A",
            OptionLetter::B => "B",
            OptionLetter::C => "C",
        }
    }
}

/// Bijection from option letters to labels: `labels()[letter.index()]` is the label
/// shown on that letter's line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[NliLabel; 3]", into = "[NliLabel; 3]")]
pub struct OptionMapping([NliLabel; 3]);

impl OptionMapping {
    pub fn new(labels: [NliLabel; 3]) -> Result<Self, PromptError> {
        let mut seen = [false; 3];
        for l in labels {
            if std::mem::replace(&mut seen[l.index()], true) {
                return Err(PromptError::NotBijective(labels));
            }
        }
        Ok(Self(labels))
    }

    pub fn identity() -> Self {
        Self(NliLabel::ALL)
    }

    pub fn labels(&self) -> [NliLabel; 3] {
        self.0
    }

    pub fn label(&self, letter: OptionLetter) -> NliLabel {
        self.0[letter.index()]
    }

    pub fn letter(&self, label: NliLabel) -> OptionLetter {
        let idx = self.0.iter().position(|l| *l == label).expect("bijection");
        OptionLetter::ALL[idx]
    }

    /// The mapping that sends each label back to the letter it came from, expressed
    /// again as letter → label over the canonical label order.
    pub fn inverse(&self) -> Self {
        let mut out = [NliLabel::Entailment; 3];
        for letter in OptionLetter::ALL {
            out[self.0[letter.index()].index()] = NliLabel::ALL[letter.index()];
        }
        Self(out)
    }

    /// Compact form such as `NCE` (label initials for A, B, C).
    pub fn code(&self) -> String {
        self.0.iter().map(|l| l.letter().to_ascii_uppercase()).collect()
    }
}

impl TryFrom<[NliLabel; 3]> for OptionMapping {
    type Error = PromptError;

    fn try_from(labels: [NliLabel; 3]) -> Result<Self, Self::Error> {
        OptionMapping::new(labels)
    }
}

impl From<OptionMapping> for [NliLabel; 3] {
    fn from(m: OptionMapping) -> Self {
        m.0
    }
}

/// All six letter→label bijections, ordered lexicographically by (label at A, label at B).
pub fn option_mappings() -> Vec<OptionMapping> {
    NliLabel::ALL
        .into_iter()
        .permutations(3)
        .map(|p| OptionMapping([p[0], p[1], p[2]]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ExplanationMode {
    /// All explanations in one prompt, every ordering.
    Serial,
    /// One explanation per prompt.
    Parallel,
    /// Every ordered selection of `k` distinct explanations.
    KAtATime(usize),
}

impl fmt::Display for ExplanationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExplanationMode::Serial => f.write_str("serial"),
            ExplanationMode::Parallel => f.write_str("parallel"),
            ExplanationMode::KAtATime(k) => write!(f, "k{k}"),
        }
    }
}

impl FromStr for ExplanationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "serial" => Ok(ExplanationMode::Serial),
            "parallel" => Ok(ExplanationMode::Parallel),
            _ => s
                .strip_prefix('k')
                .and_then(|k| k.parse().ok())
                .map(ExplanationMode::KAtATime)
                .ok_or_else(|| format!("unknown explanation mode {s:?} (expected serial, parallel or k<N>)")),
        }
    }
}

impl TryFrom<String> for ExplanationMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ExplanationMode> for String {
    fn from(m: ExplanationMode) -> String {
        m.to_string()
    }
}

/// Ordered indices into an item's explanation list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExplanationBatch(Vec<usize>);

impl ExplanationBatch {
    pub fn new(indices: Vec<usize>, m: usize) -> Result<Self, PromptError> {
        let mut seen = vec![false; m];
        for &i in &indices {
            if i >= m {
                return Err(PromptError::BatchIndex { index: i, m });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(PromptError::BatchRepeat(i));
            }
        }
        Ok(Self(indices))
    }

    /// The batch of a prompt without explanations.
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn resolve<'a>(&self, explanations: &'a [ExplanationAnnotation]) -> Vec<&'a ExplanationAnnotation> {
        self.0.iter().map(|&i| &explanations[i]).collect()
    }
}

/// Enumerates explanation batches in lexicographic order of index sequences.
///
/// Serial yields `m!` full orderings, parallel yields `m` singletons, and
/// `KAtATime(k)` yields `m!/(m-k)!` arrangements.
pub fn explanation_batches(m: usize, mode: ExplanationMode) -> Result<Vec<ExplanationBatch>, PromptError> {
    let k = match mode {
        ExplanationMode::Serial => m,
        ExplanationMode::Parallel => 1,
        ExplanationMode::KAtATime(k) => {
            if k == 0 || k > m {
                return Err(PromptError::BatchSize { k, m });
            }
            k
        }
    };
    if m == 0 {
        return Err(PromptError::NoExplanations);
    }
    Ok((0..m).permutations(k).map(ExplanationBatch).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Role-tagged chat messages; the backend applies the model's chat template.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptText {
    pub messages: Vec<ChatMessage>,
}

impl PromptText {
    /// SHA-256 over the JSON encoding of the messages, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.messages).expect("messages serialize");
        hex::encode(Sha256::digest(bytes))
    }

    /// All message contents joined with blank lines; handy for assertions and logs.
    pub fn flat_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateVersion {
    #[default]
    V1,
}

impl FromStr for TemplateVersion {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "v1" => Ok(TemplateVersion::V1),
            other => Err(PromptError::UnknownTemplate(other.to_string())),
        }
    }
}

struct Templates {
    user_plain: &'static str,
    user_comments: &'static str,
    assistant_context: &'static str,
    assistant_question: &'static str,
    options: &'static str,
    comment: &'static str,
    comment_explicit: &'static str,
}

const V1: Templates = Templates {
    user_plain: include_str!("../templates/v1/user_plain.txt"),
    user_comments: include_str!("../templates/v1/user_comments.txt"),
    assistant_context: include_str!("../templates/v1/assistant_context.txt"),
    assistant_question: include_str!("../templates/v1/assistant_question.txt"),
    options: include_str!("../templates/v1/options.txt"),
    comment: include_str!("../templates/v1/comment.txt"),
    comment_explicit: include_str!("../templates/v1/comment_explicit.txt"),
};

impl TemplateVersion {
    fn templates(self) -> &'static Templates {
        match self {
            TemplateVersion::V1 => &V1,
        }
    }
}

/// Single-pass `{name}` substitution; substituted values are never rescanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}').map(|end| (&after[..end], end)) {
            Some((name, end)) if vars.iter().any(|(k, _)| *k == name) => {
                out.push_str(vars.iter().find(|(k, _)| *k == name).unwrap().1);
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn options_block(t: &Templates, mapping: &OptionMapping) -> String {
    let [a, b, c] = mapping.labels().map(NliLabel::word);
    fill(t.options, &[("A", a), ("B", b), ("C", c)])
}

fn comments_block(t: &Templates, batch: &[&ExplanationAnnotation], explicit: bool) -> String {
    let template = if explicit { t.comment_explicit } else { t.comment };
    batch
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let n = (i + 1).to_string();
            fill(template, &[("n", &n), ("text", e.text.trim()), ("label", e.label.word())])
        })
        .join("\n")
}

/// Renders one prompt. `batch` must be empty exactly when `ty` is
/// [`PromptType::WithoutExplanations`]; comments are numbered from 1 in batch order.
pub fn render_prompt(
    item: &NliItem,
    batch: &[&ExplanationAnnotation],
    mapping: &OptionMapping,
    ty: PromptType,
    version: TemplateVersion,
) -> Result<PromptText, PromptError> {
    if ty.uses_explanations() && batch.is_empty() {
        return Err(PromptError::BatchMismatch {
            ty,
            problem: "requires at least one explanation",
        });
    }
    if !ty.uses_explanations() && !batch.is_empty() {
        return Err(PromptError::BatchMismatch {
            ty,
            problem: "takes no explanations",
        });
    }
    let t = version.templates();
    let options = options_block(t, mapping);
    let comments = comments_block(t, batch, ty.is_explicit());
    let premise = item.premise.trim();
    let hypothesis = item.hypothesis.trim();
    let user = |content: String| ChatMessage {
        role: Role::User,
        content,
    };
    let messages = match ty {
        PromptType::WithoutExplanations => vec![user(fill(
            t.user_plain,
            &[("premise", premise), ("hypothesis", hypothesis), ("options", &options)],
        ))],
        PromptType::WithExplanations | PromptType::WithExplicitExplanations => vec![user(fill(
            t.user_comments,
            &[
                ("premise", premise),
                ("hypothesis", hypothesis),
                ("comments", &comments),
                ("options", &options),
            ],
        ))],
        PromptType::AssistantMode | PromptType::AssistantModeExplicit => vec![
            user(fill(t.assistant_context, &[("premise", premise), ("hypothesis", hypothesis)])),
            ChatMessage {
                role: Role::Assistant,
                content: comments,
            },
            user(fill(t.assistant_question, &[("options", &options)])),
        ],
    };
    Ok(PromptText { messages })
}
