//! Prompt instances for the three tasks, the constrained train/test split
//! and the combined training set.

mod budget;
mod builder;
mod split;

pub use budget::{enforce_token_budget, estimate_tokens, BudgetError, MIN_BUDGET};
pub use builder::{
    assemble_combined, build_ljp_instance, build_pcr_instance, build_scr_instance, instance_seed, BuildContext,
    BuildError,
};
pub use split::{split_corpus, Split, SplitConfig, SplitError, SplitReport};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::PromptRequest;
use crate::corpus::{CaseId, Verdict};

pub const SCR_TEMPLATE: &str = include_str!("../../templates/scr.txt");
pub const PCR_TEMPLATE: &str = include_str!("../../templates/pcr.txt");
pub const LJP_TEMPLATE: &str = include_str!("../../templates/ljp.txt");
pub const CHOICES_SLOT: &str = "[Choices...]";
pub const INPUT_SLOT: &str = "[Input Case...]";
pub const SIMILAR_HEADER: &str = "### Similar Case Example:";
pub const PRECEDENT_HEADER: &str = "### Precedent Case Example:";
/// Lead-in of the reasoning line in precedent answers.
pub const PRECEDENT_REASON_PREFIX: &str = "They have precedent relation is ";

pub const DEFAULT_CHOICES: usize = 10;
pub const MIN_CHOICES: usize = 6;
pub const MAX_CHOICES: usize = 11;
pub const DEFAULT_TOKEN_BUDGET: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "SCR")]
    Scr,
    #[serde(rename = "PCR")]
    Pcr,
    #[serde(rename = "LJP")]
    Ljp,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Scr => "SCR",
            Task::Pcr => "PCR",
            Task::Ljp => "LJP",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            Task::Scr => SCR_TEMPLATE,
            Task::Pcr => PCR_TEMPLATE,
            Task::Ljp => LJP_TEMPLATE,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LjpMode {
    ZeroShot,
    FewShot,
}

impl LjpMode {
    pub fn name(self) -> &'static str {
        match self {
            LjpMode::ZeroShot => "zero_shot",
            LjpMode::FewShot => "few_shot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub position: usize,
    pub case_id: CaseId,
    pub title: String,
    pub rendered: String,
    pub is_ground_truth: bool,
    /// Retrieval rank (similar-case task) or draw index 1..k (precedent task).
    pub truth_rank: Option<usize>,
}

/// In-context examples prepended to a few-shot judgment prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExamples {
    pub similar: CaseId,
    pub precedent: CaseId,
    pub similar_text: String,
    pub precedent_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub task: Task,
    pub phase: Phase,
    pub input_case: CaseId,
    pub instruction_text: String,
    pub expected_output: String,
    pub choices: Vec<Choice>,
    pub permutation_seed: u64,
    pub token_estimate: usize,
    pub input_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ljp_label: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ljp_mode: Option<LjpMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icl_examples: Option<IclExamples>,
    /// Number of placed ground truths in a precedent instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_k: Option<usize>,
    /// Sections whose case detail was shortened to fit the token budget.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncated: Vec<String>,
}

fn fill(template: &str, slot: &str, value: &str) -> String {
    match template.split_once(slot) {
        Some((head, tail)) => format!("{head}{value}{tail}"),
        None => template.to_string(),
    }
}

/// `Choice n:` blocks in position order.
pub fn render_choices(choices: &[Choice]) -> String {
    let mut sorted: Vec<&Choice> = choices.iter().collect();
    sorted.sort_by_key(|c| c.position);
    sorted
        .iter()
        .map(|c| format!("Choice {}:\n{}", c.position, c.rendered))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_icl_prefix(icl: &IclExamples) -> String {
    format!(
        "{SIMILAR_HEADER}\n{}\n\n{PRECEDENT_HEADER}\n{}\n\n",
        icl.similar_text, icl.precedent_text
    )
}

impl PromptInstance {
    /// Full prompt text from the instance's parts.
    pub fn compose(&self) -> String {
        let template = self.task.template();
        match self.task {
            Task::Scr | Task::Pcr => {
                let (head, tail) = template.split_once(CHOICES_SLOT).expect("template has a choices slot");
                format!("{head}{}{}", render_choices(&self.choices), fill(tail, INPUT_SLOT, &self.input_text))
            }
            Task::Ljp => {
                let prefix = self.icl_examples.as_ref().map(render_icl_prefix).unwrap_or_default();
                format!("{prefix}{}", fill(template, INPUT_SLOT, &self.input_text))
            }
        }
    }

    pub(crate) fn refresh_text(&mut self) {
        self.instruction_text = self.compose();
        self.token_estimate = estimate_tokens(&self.instruction_text);
    }

    pub fn ground_truths(&self) -> impl Iterator<Item = &Choice> {
        self.choices.iter().filter(|c| c.is_ground_truth)
    }

    /// Request handed to a completion backend. Random answerers pick among
    /// choice titles, or among the four verdict labels for judgment prompts.
    pub fn request(&self) -> PromptRequest {
        let options = match self.task {
            Task::Ljp => Verdict::OUTCOMES.iter().map(|v| v.label().to_string()).collect(),
            _ => {
                let mut sorted: Vec<&Choice> = self.choices.iter().collect();
                sorted.sort_by_key(|c| c.position);
                sorted.iter().map(|c| c.title.clone()).collect()
            }
        };
        PromptRequest {
            text: self.instruction_text.clone(),
            expected_output: Some(self.expected_output.clone()),
            options,
        }
    }
}
