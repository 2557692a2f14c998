// SPDX-License-Identifier: MIT OR Apache-2.0

//! Vocabulary-file tokenizer: greedy longest match with byte fallback.
//!
//! The vocabulary is a flat JSON object mapping token strings to ids.
//! Encoding walks the input bytes and at each position consumes the longest
//! matching vocabulary entry; when nothing matches, the single byte is
//! emitted via its `<0xNN>` fallback entry (uppercase hex).

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Tokenizer {
    by_bytes: HashMap<Vec<u8>, u32>,
    by_id: HashMap<u32, String>,
    max_token_len: usize,
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

/// Parse a `<0xNN>` fallback entry back to its byte.
fn parse_byte_token(s: &str) -> Option<u8> {
    let hex = s.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

impl Tokenizer {
    pub fn from_vocab(vocab: HashMap<String, u32>) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::MalformedTokenizer {
                detail: "empty vocabulary".to_string(),
            });
        }
        let mut by_id = HashMap::with_capacity(vocab.len());
        let mut by_bytes = HashMap::with_capacity(vocab.len());
        let mut max_token_len = 1;
        for (tok, id) in vocab {
            if let Some(prev) = by_id.insert(id, tok.clone()) {
                return Err(Error::MalformedTokenizer {
                    detail: format!("id {id} assigned to both `{prev}` and `{tok}`"),
                });
            }
            max_token_len = max_token_len.max(tok.len());
            by_bytes.insert(tok.into_bytes(), id);
        }
        Ok(Tokenizer {
            by_bytes,
            by_id,
            max_token_len,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let vocab: HashMap<String, u32> =
            serde_json::from_str(json).map_err(|e| Error::MalformedTokenizer {
                detail: format!("vocabulary is not a JSON string-to-id map: {e}"),
            })?;
        Self::from_vocab(vocab)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Greedy longest-match encoding over the input bytes.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let limit = self.max_token_len.min(bytes.len() - i);
            let mut matched = None;
            for len in (1..=limit).rev() {
                if let Some(&id) = self.by_bytes.get(&bytes[i..i + len]) {
                    matched = Some((id, len));
                    break;
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(id);
                    i += len;
                }
                None => {
                    let b = bytes[i];
                    let id = self.by_bytes.get(byte_token(b).as_bytes()).copied().ok_or_else(|| {
                        Error::MalformedTokenizer {
                            detail: format!(
                                "byte 0x{b:02X} has no match and no `{}` fallback entry",
                                byte_token(b)
                            ),
                        }
                    })?;
                    out.push(id);
                    i += 1;
                }
            }
        }
        Ok(out)
    }

    pub fn decode(&self, tokens: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in tokens {
            let s = self.by_id.get(&id).ok_or(Error::TokenOutOfRange {
                token: id,
                vocab_size: self.by_id.len(),
            })?;
            match parse_byte_token(s) {
                Some(b) => bytes.push(b),
                None => bytes.extend_from_slice(s.as_bytes()),
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}
