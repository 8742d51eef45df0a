use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::TokenizerError;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

/// Special tokens in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Prefix marking a non-initial subword.
pub const CONTINUATION: &str = "##";

/// Words longer than this many characters encode to a single `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

/// Dense token/id table. Ids 0..5 are the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from tokens in id order, checking the specials prefix,
    /// uniqueness, and the continuation-marker rule.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizerError> {
        for (id, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(*special) {
                return Err(TokenizerError::InvalidVocab {
                    line: id + 1,
                    message: format!("expected special token {special}"),
                });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            let invalid = |message: String| TokenizerError::InvalidVocab { line: id + 1, message };
            if id >= SPECIAL_TOKENS.len() {
                let body = tok.strip_prefix(CONTINUATION).unwrap_or(tok);
                if body.is_empty() {
                    return Err(invalid("empty token".into()));
                }
                if tok.chars().any(|c| c.is_whitespace() || c.is_control()) {
                    return Err(invalid(format!("token {tok:?} contains whitespace")));
                }
            }
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(invalid(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Greedy longest-match segmentation of one pre-tokenized word. A word
    /// with any unmatched stretch becomes a single `[UNK]`.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.is_empty() {
            return Vec::new();
        }
        if chars.len() > MAX_WORD_CHARS {
            return vec![UNK_ID];
        }
        let byte_at = |i: usize| chars.get(i).map_or(word.len(), |&(b, _)| b);
        let mut ids = Vec::new();
        let mut start = 0;
        let mut candidate = String::with_capacity(word.len() + 2);
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.push_str(&word[byte_at(start)..byte_at(end)]);
                if let Some(id) = self.id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    ids.push(id);
                    start = end;
                }
                None => return vec![UNK_ID],
            }
        }
        ids
    }

    /// Joins subwords back into a word, stripping continuation markers.
    pub fn decode_word(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).unwrap_or(SPECIAL_TOKENS[UNK_ID as usize]);
            out.push_str(tok.strip_prefix(CONTINUATION).unwrap_or(tok));
        }
        out
    }

    /// Parses the one-token-per-line file layout; line `n` holds id `n - 1`.
    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let text = text.strip_suffix('\n').unwrap_or(text);
        if text.is_empty() {
            return Err(TokenizerError::InvalidVocab {
                line: 1,
                message: "empty vocabulary file".into(),
            });
        }
        Self::from_tokens(text.split('\n').map(str::to_string).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let bytes = std::fs::read(path).map_err(|e| TokenizerError::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| TokenizerError::Decode {
            offset: e.valid_up_to(),
        })?;
        Self::from_text(text)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut f = std::fs::File::create(path).map_err(|e| TokenizerError::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| TokenizerError::io(path, e))
    }
}
