use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 2;

const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<eos>"];

/// Ordered token table with three fixed reserved entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from the non-reserved tokens, which get IDs 3, 4, ...
    pub fn new<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for item in items {
            let tok: String = item.into();
            if tok.is_empty() {
                return Err(Error::InvalidArgument("empty vocabulary token".into()));
            }
            if index.contains_key(&tok) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary token '{tok}'"
                )));
            }
            index.insert(tok.clone(), tokens.len());
            tokens.push(tok);
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Tokens after the reserved block, in ID order.
    pub fn payload_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// One token per line; line number = ID − 3.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for t in self.payload_tokens() {
            body.push_str(t);
            body.push('\n');
        }
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut items = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: "empty vocabulary line".into(),
                });
            }
            items.push(line.to_string());
        }
        Vocabulary::new(items).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: e.to_string(),
        })
    }
}
