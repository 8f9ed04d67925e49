use crate::error::{Error, Result};

use super::vocab::{Vocabulary, EOS_ID, PAD_ID, UNK_ID};

/// Model input: token IDs, `<eos>`-terminated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} out of range (vocab size {vocab_size})"
            )));
        }
        Ok(TokenSequence { ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One token per character; unknown characters become `<unk>`; `<eos>`
/// appended. Input must already be normalized.
pub fn tokenize_chars(text: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    if text.is_empty() {
        return Err(Error::InvalidArgument("tokenize_chars: empty input".into()));
    }
    let mut ids = Vec::with_capacity(text.chars().count() + 1);
    let mut buf = [0u8; 4];
    for ch in text.chars() {
        let s: &str = ch.encode_utf8(&mut buf);
        ids.push(vocab.id(s).unwrap_or(UNK_ID));
    }
    ids.push(EOS_ID);
    TokenSequence::new(ids, vocab.len())
}

/// Inverse of [`tokenize_chars`] for sequences without `<unk>`: drops a
/// trailing `<eos>` and concatenates the tokens.
pub fn detokenize_chars(seq: &TokenSequence, vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    let body = match seq.ids.last() {
        Some(&EOS_ID) => &seq.ids[..seq.ids.len() - 1],
        _ => &seq.ids[..],
    };
    for &id in body {
        if id == UNK_ID || id == PAD_ID || id == EOS_ID {
            return Err(Error::InvalidArgument(format!(
                "detokenize: reserved id {id} in sequence body"
            )));
        }
        let tok = vocab
            .token(id)
            .ok_or_else(|| Error::InvalidArgument(format!("detokenize: id {id} out of range")))?;
        out.push_str(tok);
    }
    Ok(out)
}
