//! Prompts and response parsers for building the QA set: mention detection,
//! the ambiguity filter, and `{Question}{Answer}` generation.

use crate::error::{Error, Result};
use crate::rag::prompt::render;

pub const MENTION_DETECTION: &str = include_str!("../../assets/prompts/v1/mention_detection.txt");
pub const AMBIGUITY_FILTER: &str = include_str!("../../assets/prompts/v1/ambiguity_filter.txt");
pub const QA_GENERATION: &str = include_str!("../../assets/prompts/v1/qa_generation.txt");

fn json_list(items: &[String]) -> String {
    serde_json::to_string(items).expect("strings serialize")
}

pub fn mention_detection_prompt(text: &str) -> String {
    render(MENTION_DETECTION, &[("text", text)])
}

pub fn ambiguity_filter_prompt(entity: &str, mentions: &[String]) -> String {
    render(
        AMBIGUITY_FILTER,
        &[("mention list", &json_list(mentions)), ("entity", entity)],
    )
}

pub fn qa_generation_prompt(entity: &str, context: &str) -> String {
    render(QA_GENERATION, &[("entity", entity), ("context", context)])
}

/// The first `[...]` list in a response, read as a JSON array of strings.
pub fn parse_list_response(text: &str) -> Result<Vec<String>> {
    let open = text
        .find('[')
        .ok_or_else(|| Error::Parse("no list in response".into()))?;
    let mut depth = 0;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[open..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    let list = &text[open..open + i + 1];
                    return serde_json::from_str(list).map_err(|e| Error::Parse(format!("bad list {list:?}: {e}")));
                }
            }
            _ => {}
        }
    }
    Err(Error::Parse("unterminated list in response".into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaGenParse {
    pub question: String,
    pub answer: String,
    pub warnings: Vec<String>,
}

/// The first two top-level `{...}` groups of a generation response. Nested
/// braces are rejected.
pub fn parse_qa_gen(text: &str) -> Result<QaGenParse> {
    let mut groups: Vec<&str> = Vec::new();
    let mut open: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (c, open) {
            ('{', None) => open = Some(i),
            ('{', Some(_)) => return Err(Error::Parse(format!("nested brace at byte {i}"))),
            ('}', Some(start)) => {
                groups.push(&text[start + 1..i]);
                open = None;
            }
            ('}', None) => return Err(Error::Parse(format!("unbalanced `}}` at byte {i}"))),
            _ => {}
        }
    }
    if open.is_some() {
        return Err(Error::Parse("unbalanced `{`".into()));
    }
    if groups.len() < 2 {
        return Err(Error::Parse(format!(
            "expected two brace groups, found {}",
            groups.len()
        )));
    }
    let mut warnings = Vec::new();
    if groups.len() > 2 {
        warnings.push(format!("{} brace groups; kept the first two", groups.len()));
    }
    Ok(QaGenParse {
        question: groups[0].trim().to_string(),
        answer: groups[1].trim().to_string(),
        warnings,
    })
}

/// Replace the single bracketed entity in a generated question with a mention.
pub fn substitute_mention(question: &str, mention: &str) -> Result<String> {
    let open = question.find('[');
    let close = question.find(']');
    match (open, close) {
        (Some(o), Some(c)) if o < c && question[c + 1..].find(['[', ']']).is_none() && !question[..o].contains(']') => {
            Ok(format!("{}{}{}", &question[..o], mention, &question[c + 1..]))
        }
        _ => Err(Error::Parse(format!(
            "question {question:?} must bracket exactly one entity"
        ))),
    }
}
