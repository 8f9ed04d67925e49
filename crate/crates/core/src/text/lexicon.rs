use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::tokenize::TokenSequence;
use super::vocab::{Vocabulary, EOS_ID, UNK_ID};

/// What to do with a word the lexicon does not know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    /// Fall back to that word's characters (keeps synthesis runnable).
    #[default]
    CharFallback,
    /// Emit a single `<unk>`.
    Unk,
}

/// Word → phoneme-string pronunciation table.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
    pub oov: OovPolicy,
}

impl Lexicon {
    pub fn new(oov: OovPolicy) -> Self {
        Lexicon {
            entries: HashMap::new(),
            oov,
        }
    }

    pub fn insert(&mut self, word: &str, phonemes: Vec<String>) -> Result<()> {
        let word = word.to_lowercase();
        if word.is_empty() || phonemes.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "lexicon entry '{word}' needs a word and at least one phoneme"
            )));
        }
        if self.entries.insert(word.clone(), phonemes).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate lexicon entry '{word}'"
            )));
        }
        Ok(())
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse "WORD PH1 PH2 ..." lines (single-space separated, UTF-8).
    pub fn read_file(path: &Path, oov: OovPolicy) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lex = Lexicon::new(oov);
        for (i, line) in body.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let word = parts.next().unwrap_or("");
            let phonemes: Vec<String> = parts.map(|p| p.to_string()).collect();
            if word.is_empty() || phonemes.iter().any(|p| p.is_empty()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: "expected 'WORD PH1 PH2 ...' with single spaces".into(),
                });
            }
            lex.insert(word, phonemes).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(lex)
    }
}

/// Phoneme token between words.
pub const WORD_BOUNDARY: &str = "<sp>";

/// Dictionary-lookup G2P over normalized text: per-word pronunciation lookup,
/// `<sp>` between words, `<eos>` at the end. OOV words follow the lexicon's
/// policy.
pub fn lexicon_g2p(
    text: &str,
    lexicon: &Lexicon,
    phn_vocab: &Vocabulary,
) -> Result<TokenSequence> {
    if text.is_empty() {
        return Err(Error::InvalidArgument("lexicon_g2p: empty input".into()));
    }
    let mut ids = Vec::new();
    let words: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
    if words.is_empty() {
        return Err(Error::InvalidArgument("lexicon_g2p: no words".into()));
    }
    for (wi, word) in words.iter().enumerate() {
        if wi > 0 {
            let sp = phn_vocab.id(WORD_BOUNDARY).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "phoneme vocabulary lacks the word-boundary token {WORD_BOUNDARY}"
                ))
            })?;
            ids.push(sp);
        }
        match lexicon.lookup(word) {
            Some(phonemes) => {
                for p in phonemes {
                    let id = phn_vocab.id(p).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "phoneme '{p}' (word '{word}') missing from phoneme vocabulary"
                        ))
                    })?;
                    ids.push(id);
                }
            }
            None => match lexicon.oov {
                OovPolicy::Unk => ids.push(UNK_ID),
                OovPolicy::CharFallback => {
                    let mut buf = [0u8; 4];
                    for ch in word.chars() {
                        let s: &str = ch.encode_utf8(&mut buf);
                        ids.push(phn_vocab.id(s).unwrap_or(UNK_ID));
                    }
                }
            },
        }
    }
    ids.push(EOS_ID);
    TokenSequence::new(ids, phn_vocab.len())
}
