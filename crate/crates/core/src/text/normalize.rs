use crate::error::{Error, Result};

/// Lowercase, collapse runs of whitespace to single spaces, strip the ends.
/// Digits and punctuation pass through untouched.
pub fn normalize_text(raw: &str) -> Result<String> {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        for lc in ch.to_lowercase() {
            out.push(lc);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(
            "text is empty after normalization".into(),
        ));
    }
    Ok(out)
}
