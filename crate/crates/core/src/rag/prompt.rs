//! QA prompt templates and their instantiation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEMPLATE_VERSION: &str = "v1";

pub const LLM: &str = include_str!("../../assets/prompts/v1/llm.txt");
pub const LLM_ER: &str = include_str!("../../assets/prompts/v1/llm_er.txt");
pub const RALM: &str = include_str!("../../assets/prompts/v1/ralm.txt");
pub const RALM_COT_FIRST: &str = include_str!("../../assets/prompts/v1/ralm_cot_first.txt");
pub const RALM_COT_SECOND: &str = include_str!("../../assets/prompts/v1/ralm_cot_second.txt");
pub const RALM_ER: &str = include_str!("../../assets/prompts/v1/ralm_er.txt");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
}

/// Settings for every answer-producing call.
pub const ANSWER_PARAMS: GenerationParams = GenerationParams {
    temperature: 0.3,
    max_new_tokens: 30,
};

/// Settings for the first, mention-resolving call of the chain-of-thought
/// variant.
pub const COT_FIRST_PARAMS: GenerationParams = GenerationParams {
    temperature: 0.1,
    max_new_tokens: 10,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptVariant {
    #[serde(rename = "LLM")]
    Llm,
    #[serde(rename = "LLM-ER")]
    LlmEr,
    #[serde(rename = "RaLM")]
    Ralm,
    #[serde(rename = "RaLM-CoT")]
    RalmCot,
    #[serde(rename = "RaLM-ER")]
    RalmEr,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 5] = [
        PromptVariant::Llm,
        PromptVariant::LlmEr,
        PromptVariant::Ralm,
        PromptVariant::RalmCot,
        PromptVariant::RalmEr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptVariant::Llm => "LLM",
            PromptVariant::LlmEr => "LLM-ER",
            PromptVariant::Ralm => "RaLM",
            PromptVariant::RalmCot => "RaLM-CoT",
            PromptVariant::RalmEr => "RaLM-ER",
        }
    }

    pub fn uses_context(self) -> bool {
        matches!(
            self,
            PromptVariant::Ralm | PromptVariant::RalmCot | PromptVariant::RalmEr
        )
    }

    pub fn uses_resolution(self) -> bool {
        matches!(self, PromptVariant::LlmEr | PromptVariant::RalmEr)
    }

    /// Template of the (first) prompt.
    pub fn template(self) -> &'static str {
        match self {
            PromptVariant::Llm => LLM,
            PromptVariant::LlmEr => LLM_ER,
            PromptVariant::Ralm => RALM,
            PromptVariant::RalmCot => RALM_COT_FIRST,
            PromptVariant::RalmEr => RALM_ER,
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            PromptVariant::Llm => &["question"],
            PromptVariant::LlmEr => &["question", "mention", "entity"],
            PromptVariant::Ralm => &["question", "context"],
            PromptVariant::RalmCot => &["question", "mention", "context"],
            PromptVariant::RalmEr => &["question", "mention", "entity", "context"],
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown prompt variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PromptFields<'a> {
    pub question: &'a str,
    pub mention: Option<&'a str>,
    pub entity: Option<&'a str>,
    pub context: Option<&'a str>,
}

impl<'a> PromptFields<'a> {
    fn get(&self, name: &str) -> Option<&'a str> {
        match name {
            "question" => Some(self.question),
            "mention" => self.mention,
            "entity" => self.entity,
            "context" => self.context,
            _ => None,
        }
    }
}

/// Replace `{name}` placeholders that appear in `values`, in one left-to-right
/// pass. Other brace groups are copied as they are, and substituted text is
/// never rescanned.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let value = after
            .find(['}', '{'])
            .filter(|&close| after[close..].starts_with('}'))
            .and_then(|close| {
                let name = &after[..close];
                values.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
            });
        match value {
            Some((close, v)) => {
                out.push_str(v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Fill the variant's template. For the chain-of-thought variant this is the
/// first-stage prompt; see [`build_cot_second`].
pub fn build_prompt(variant: PromptVariant, fields: &PromptFields<'_>) -> Result<String> {
    let mut values = Vec::new();
    for &name in variant.required() {
        let v = fields.get(name).ok_or(Error::MissingField {
            variant: variant.name(),
            field: name,
        })?;
        values.push((name, v));
    }
    Ok(render(variant.template(), &values))
}

/// Second-stage chain-of-thought prompt with the first answer spliced in
/// verbatim.
pub fn build_cot_second(question: &str, mention: &str, context: &str, first_answer: &str) -> String {
    render(
        RALM_COT_SECOND,
        &[
            ("context", context),
            ("question", question),
            ("mention", mention),
            ("first answer", first_answer),
        ],
    )
}

/// Retrieved chunk texts in rank order, one per line.
pub fn join_context<S: AsRef<str>>(chunks: &[S]) -> String {
    chunks.iter().map(AsRef::as_ref).collect::<Vec<_>>().join("\n")
}
