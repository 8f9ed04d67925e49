//! Text frontend: normalization, character/phoneme tokenization, and
//! dictionary-lookup G2P.

mod lexicon;
mod normalize;
mod tokenize;
mod vocab;

pub use lexicon::{lexicon_g2p, Lexicon, OovPolicy};
pub use normalize::normalize_text;
pub use tokenize::{detokenize_chars, tokenize_chars, TokenSequence};
pub use vocab::{Vocabulary, EOS_ID, PAD_ID, UNK_ID};
