use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Longest multi-word token the encoder will try to match.
const MAX_WORDS_PER_TOKEN: usize = 3;

/// Word-level vocabulary descriptor shared by a decoding session.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "VocabWire", into = "VocabWire")]
pub struct Vocab {
    tokens: Vec<String>,
    eos: TokenId,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabWire {
    tokens: Vec<String>,
    eos: TokenId,
}

impl From<VocabWire> for Vocab {
    fn from(w: VocabWire) -> Self {
        Vocab::new(w.tokens, w.eos)
    }
}

impl From<Vocab> for VocabWire {
    fn from(v: Vocab) -> Self {
        VocabWire {
            tokens: v.tokens,
            eos: v.eos,
        }
    }
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.eos == other.eos
    }
}

impl Vocab {
    pub fn new(tokens: Vec<String>, eos: TokenId) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, eos, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Splits whitespace-separated words, peels trailing `,` / `.` off words
    /// that are not themselves tokens, then greedily matches the longest run
    /// of up to three words against the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut pieces: Vec<&str> = Vec::new();
        for word in text.split_whitespace() {
            let mut word = word;
            let mut tail = Vec::new();
            while !self.index.contains_key(word) && word.len() > 1 && word.ends_with([',', '.']) {
                let (head, punct) = word.split_at(word.len() - 1);
                tail.push(punct);
                word = head;
            }
            pieces.push(word);
            pieces.extend(tail.into_iter().rev());
        }

        let mut ids = Vec::with_capacity(pieces.len());
        let mut i = 0;
        while i < pieces.len() {
            let matched = (1..=MAX_WORDS_PER_TOKEN.min(pieces.len() - i))
                .rev()
                .find_map(|k| self.id(&pieces[i..i + k].join(" ")).map(|id| (id, k)));
            match matched {
                Some((id, k)) => {
                    ids.push(id);
                    i += k;
                }
                None => return Err(Error::UnknownToken(pieces[i].to_string())),
            }
        }
        Ok(ids)
    }

    /// Joins token strings with spaces, attaching `.` and `,` to the
    /// preceding word. The eos token is dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == self.eos {
                continue;
            }
            let Some(tok) = self.token(id) else { continue };
            if !out.is_empty() && tok != "." && tok != "," {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }
}
