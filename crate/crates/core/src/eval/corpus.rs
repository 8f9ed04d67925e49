//! Corpus-level objective evaluation: per-utterance edit stats against a
//! directory of transcripts, pooled CER, and the report renderers.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::normalize_text;

use super::cer::{cer, detect_failure, EditStats, FailureLabel};

#[derive(Debug, Clone, Serialize)]
pub struct UtteranceEval {
    pub utt: String,
    pub stats: EditStats,
    pub label: FailureLabel,
    /// True when no transcript existed and the utterance was scored as
    /// fully deleted.
    pub missing_transcript: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusReport {
    pub utterances: Vec<UtteranceEval>,
    /// Edit counts summed over the corpus; CER uses pooled reference length.
    pub pooled: EditStats,
    pub cer: f64,
    pub del_thresh: f64,
    pub ins_thresh: f64,
}

/// Score every `(uttid, reference)` against `transcript_dir/<uttid>.txt`.
/// A missing transcript counts as deleting the whole reference.
pub fn evaluate_corpus(
    refs: &[(String, String)],
    transcript_dir: &Path,
    del_thresh: f64,
    ins_thresh: f64,
) -> Result<CorpusReport> {
    if refs.is_empty() {
        return Err(Error::InvalidArgument("no references to evaluate".into()));
    }
    let mut utterances = Vec::with_capacity(refs.len());
    let mut pooled = EditStats {
        sub: 0,
        del: 0,
        ins: 0,
        ref_len: 0,
    };
    for (utt, reference) in refs {
        let path = transcript_dir.join(format!("{utt}.txt"));
        let (stats, missing) = if path.exists() {
            let hyp = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            (cer(reference, &hyp)?, false)
        } else {
            let ref_len = normalize_text(reference)?.chars().count();
            (
                EditStats {
                    sub: 0,
                    del: ref_len,
                    ins: 0,
                    ref_len,
                },
                true,
            )
        };
        pooled.sub += stats.sub;
        pooled.del += stats.del;
        pooled.ins += stats.ins;
        pooled.ref_len += stats.ref_len;
        let label = detect_failure(utt, &stats, del_thresh, ins_thresh)?;
        utterances.push(UtteranceEval {
            utt: utt.clone(),
            stats,
            label,
            missing_transcript: missing,
        });
    }
    let cer = pooled.cer();
    Ok(CorpusReport {
        utterances,
        pooled,
        cer,
        del_thresh,
        ins_thresh,
    })
}

impl CorpusReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("report serialization: {e}")))
    }

    /// Plain-text Sub/Del/Ins/CER table, percentages with one decimal.
    pub fn table(&self) -> String {
        let pct = |count: usize, ref_len: usize| 100.0 * count as f64 / ref_len as f64;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:>6} {:>6} {:>6} {:>6}\n",
            "utt", "Sub", "Del", "Ins", "CER"
        ));
        for u in &self.utterances {
            let s = &u.stats;
            out.push_str(&format!(
                "{:<20} {:>6.1} {:>6.1} {:>6.1} {:>6.1}{}\n",
                u.utt,
                pct(s.sub, s.ref_len),
                pct(s.del, s.ref_len),
                pct(s.ins, s.ref_len),
                100.0 * s.cer(),
                if u.missing_transcript { "  (no transcript)" } else { "" },
            ));
        }
        let p = &self.pooled;
        out.push_str(&format!(
            "{:<20} {:>6.1} {:>6.1} {:>6.1} {:>6.1}\n",
            "corpus",
            pct(p.sub, p.ref_len),
            pct(p.del, p.ref_len),
            pct(p.ins, p.ref_len),
            100.0 * self.cer,
        ));
        out
    }
}
