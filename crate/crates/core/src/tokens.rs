//! Encoder input layouts for entities and mentions.
//!
//! Entity: `[CLS] name [NAME] description [SEP]`.
//! Mention: `[CLS] left [START] surface [END] right [SEP]`.
//!
//! Tokens are whitespace-delimited words; a learned tokenizer lives with the
//! encoder, not here.

use std::fmt;

use crate::data::{EntityRecord, MentionRecord};
use crate::error::{Error, Result};

pub const MIN_BUDGET: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Cls,
    Sep,
    Name,
    Start,
    End,
    Word(String),
}

impl Token {
    pub fn is_marker(&self) -> bool {
        !matches!(self, Token::Word(_))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Cls => f.write_str("[CLS]"),
            Token::Sep => f.write_str("[SEP]"),
            Token::Name => f.write_str("[NAME]"),
            Token::Start => f.write_str("[START]"),
            Token::End => f.write_str("[END]"),
            Token::Word(w) => f.write_str(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub budget: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn count(&self, marker: &Token) -> usize {
        self.tokens.iter().filter(|t| *t == marker).count()
    }

    /// Word tokens between two markers (exclusive).
    pub fn words_between(&self, open: &Token, close: &Token) -> Vec<&str> {
        let from = self.tokens.iter().position(|t| t == open);
        let to = self.tokens.iter().position(|t| t == close);
        match (from, to) {
            (Some(a), Some(b)) if a < b => self.tokens[a + 1..b]
                .iter()
                .filter_map(|t| match t {
                    Token::Word(w) => Some(w.as_str()),
                    _ => None,
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

fn words(text: &str) -> impl Iterator<Item = Token> + '_ {
    text.split_whitespace().map(|w| Token::Word(w.to_string()))
}

pub fn entity_tokens(entity: &EntityRecord, budget: usize) -> Result<TokenSequence> {
    if budget < MIN_BUDGET {
        return Err(Error::BudgetTooSmall {
            budget,
            needed: MIN_BUDGET,
        });
    }
    // CLS, NAME, SEP
    let room = budget - 3;
    let name: Vec<Token> = words(&entity.name).take(room).collect();
    if name.is_empty() {
        return Err(Error::EmptyName(entity.entity_id.clone()));
    }
    let description: Vec<Token> = words(&entity.description).take(room - name.len()).collect();

    let mut tokens = Vec::with_capacity(3 + name.len() + description.len());
    tokens.push(Token::Cls);
    tokens.extend(name);
    tokens.push(Token::Name);
    tokens.extend(description);
    tokens.push(Token::Sep);
    Ok(TokenSequence { tokens, budget })
}

pub fn mention_tokens(record: &MentionRecord, budget: usize) -> Result<TokenSequence> {
    let surface: Vec<Token> = words(&record.surface).collect();
    // CLS, START, END, SEP
    let needed = 4 + surface.len().max(1);
    if budget < MIN_BUDGET || budget < needed {
        return Err(Error::BudgetTooSmall {
            budget,
            needed: needed.max(MIN_BUDGET),
        });
    }
    let left: Vec<Token> = words(&record.left_context).collect();
    let right: Vec<Token> = words(&record.right_context).collect();
    let (keep_left, keep_right) = split_context(left.len(), right.len(), budget - 4 - surface.len());

    let mut tokens = Vec::with_capacity(budget);
    tokens.push(Token::Cls);
    tokens.extend(left[left.len() - keep_left..].iter().cloned());
    tokens.push(Token::Start);
    tokens.extend(surface);
    tokens.push(Token::End);
    tokens.extend(right[..keep_right].iter().cloned());
    tokens.push(Token::Sep);
    Ok(TokenSequence { tokens, budget })
}

/// Split the context room evenly between the sides, nearest tokens first; a
/// side that runs out hands its slack to the other.
fn split_context(left: usize, right: usize, room: usize) -> (usize, usize) {
    let r = right.min(room - left.min(room / 2));
    let l = left.min(room - r);
    (l, r)
}
