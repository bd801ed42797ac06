//! Versioned prompt templates, addressed by id.
//!
//! Placeholders are written `{name}` and substituted verbatim.

use super::BackendError;

#[derive(Debug, Clone, Copy)]
pub struct PromptSet {
    pub id: &'static str,
    pub structure: &'static str,
    pub rank: &'static str,
    pub funnel: &'static str,
    pub question: &'static str,
    pub answer: &'static str,
    pub interpret: &'static str,
}

const V1: PromptSet = PromptSet {
    id: "v1",
    structure: include_str!("../../prompts/v1/structure.txt"),
    rank: include_str!("../../prompts/v1/rank.txt"),
    funnel: include_str!("../../prompts/v1/funnel.txt"),
    question: include_str!("../../prompts/v1/question.txt"),
    answer: include_str!("../../prompts/v1/answer.txt"),
    interpret: include_str!("../../prompts/v1/interpret.txt"),
};

pub const DEFAULT_TEMPLATE_ID: &str = "v1";

impl PromptSet {
    pub fn get(id: &str) -> Result<PromptSet, BackendError> {
        match id {
            "v1" => Ok(V1),
            other => Err(BackendError::UnknownTemplate(other.to_string())),
        }
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter().fold(template.to_string(), |acc, (name, value)| {
        acc.replace(&format!("{{{name}}}"), value)
    })
}
