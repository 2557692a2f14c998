// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt templates with one `{q}` slot and one `{a}` slot.
//!
//! Rendering is literal substitution; nothing is inserted beyond the
//! template's own separators. The text before the answer slot doubles as the
//! conditioning context for option scoring.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    /// Text before the question slot.
    pre: String,
    /// Separator between question and answer.
    mid: String,
    /// Text after the answer slot.
    post: String,
}

impl Template {
    /// Parse a template string. It must contain exactly one `{q}` and exactly
    /// one `{a}`, with the answer slot after the question slot.
    pub fn parse(s: &str) -> Result<Template> {
        let missing = |detail: String| Error::TemplateSlotMissing { detail };
        let count_q = s.matches("{q}").count();
        let count_a = s.matches("{a}").count();
        if count_q != 1 {
            return Err(missing(format!(
                "expected exactly one {{q}} slot, found {count_q}"
            )));
        }
        if count_a != 1 {
            return Err(missing(format!(
                "expected exactly one {{a}} slot, found {count_a}"
            )));
        }
        let q_pos = s.find("{q}").unwrap();
        let a_pos = s.find("{a}").unwrap();
        if a_pos < q_pos {
            return Err(missing("answer slot must come after the question slot".to_string()));
        }
        Ok(Template {
            pre: s[..q_pos].to_string(),
            mid: s[q_pos + 3..a_pos].to_string(),
            post: s[a_pos + 3..].to_string(),
        })
    }

    /// Built-in templates by name.
    ///
    /// * `concat` — bare continuation, `{q}{a}`; options carry their own
    ///   leading separator.
    /// * `qa` — `Q: {q}\nA: {a}`.
    pub fn builtin(name: &str) -> Option<Template> {
        match name {
            "concat" => Some(Template::parse("{q}{a}").unwrap()),
            "qa" => Some(Template::parse("Q: {q}\nA: {a}").unwrap()),
            _ => None,
        }
    }

    /// Resolve a template argument: a built-in name, or a literal template
    /// string when it contains slots.
    pub fn resolve(arg: &str) -> Result<Template> {
        match Template::builtin(arg) {
            Some(t) => Ok(t),
            None => Template::parse(arg),
        }
    }

    /// Full prompt text for a (question, answer) pair.
    pub fn render(&self, question: &str, answer: &str) -> String {
        format!("{}{}{}{}{}", self.pre, question, self.mid, answer, self.post)
    }

    /// Conditioning context: everything before the answer slot.
    pub fn context(&self, question: &str) -> String {
        format!("{}{}{}", self.pre, question, self.mid)
    }
}
