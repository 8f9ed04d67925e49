//! Character error rate with a deterministic substitution/deletion/insertion
//! decomposition, plus the alignment-failure heuristics built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_text;

/// Edit counts of one hypothesis against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditStats {
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
    pub ref_len: usize,
}

impl EditStats {
    pub fn total(&self) -> usize {
        self.sub + self.del + self.ins
    }

    /// May exceed 1 when the hypothesis inserts heavily.
    pub fn cer(&self) -> f64 {
        self.total() as f64 / self.ref_len as f64
    }
}

/// Per-cell cost tuple. Orders by total cost, then prefers more
/// substitutions, then more deletions — fixing the (S,D,I) split among
/// equal-cost alignments.
#[derive(Clone, Copy, PartialEq, Eq)]
struct Cell {
    cost: usize,
    sub: usize,
    del: usize,
}

impl Cell {
    fn beats(self, other: Cell) -> bool {
        (self.cost, other.sub, other.del) < (other.cost, self.sub, self.del)
    }

    fn plus(self, cost: usize, sub: usize, del: usize) -> Cell {
        Cell {
            cost: self.cost + cost,
            sub: self.sub + sub,
            del: self.del + del,
        }
    }
}

/// Character-level edit distance between normalized `reference` and
/// `hypothesis` (spaces count; text passes through [`normalize_text`]).
/// An empty or all-whitespace hypothesis is scored as pure deletion.
pub fn cer(reference: &str, hypothesis: &str) -> Result<EditStats> {
    let r: Vec<char> = normalize_text(reference)?.chars().collect();
    let h: Vec<char> = match normalize_text(hypothesis) {
        Ok(s) => s.chars().collect(),
        Err(_) => Vec::new(), // nothing recognized
    };
    let (n, m) = (r.len(), h.len());

    // dp[j] = best tuple for (i, j); single row rolled over i
    let mut prev: Vec<Cell> = (0..=m)
        .map(|j| Cell { cost: j, sub: 0, del: 0 })
        .collect();
    let mut cur = prev.clone();
    for i in 1..=n {
        cur[0] = Cell { cost: i, sub: 0, del: i };
        for j in 1..=m {
            let mut best = if r[i - 1] == h[j - 1] {
                prev[j - 1] // match, free
            } else {
                prev[j - 1].plus(1, 1, 0) // substitution
            };
            let d = prev[j].plus(1, 0, 1); // deletion: drop a reference char
            if d.beats(best) {
                best = d;
            }
            let ins = cur[j - 1].plus(1, 0, 0); // insertion: extra hyp char
            if ins.beats(best) {
                best = ins;
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let end = prev[m];
    Ok(EditStats {
        sub: end.sub,
        del: end.del,
        ins: end.cost - end.sub - end.del,
        ref_len: n,
    })
}

/// What kind of alignment failure an utterance shows, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Deletion,
    Repetition,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureLabel {
    pub utt: String,
    pub kind: FailureKind,
    pub del_rate: f64,
    pub ins_rate: f64,
}

pub const DEFAULT_DEL_THRESH: f64 = 0.02;
pub const DEFAULT_INS_THRESH: f64 = 0.02;

/// Flag heavy deletion (skipped words) or insertion (repeated words). When
/// both rates cross their thresholds the larger one names the failure;
/// an exact tie goes to deletion.
pub fn detect_failure(
    utt: &str,
    stats: &EditStats,
    del_thresh: f64,
    ins_thresh: f64,
) -> Result<FailureLabel> {
    if !(del_thresh > 0.0) || !(ins_thresh > 0.0) {
        return Err(Error::InvalidArgument(
            "failure thresholds must be positive".into(),
        ));
    }
    let del_rate = stats.del as f64 / stats.ref_len as f64;
    let ins_rate = stats.ins as f64 / stats.ref_len as f64;
    let del_hit = del_rate > del_thresh;
    let ins_hit = ins_rate > ins_thresh;
    let kind = match (del_hit, ins_hit) {
        (false, false) => FailureKind::None,
        (true, false) => FailureKind::Deletion,
        (false, true) => FailureKind::Repetition,
        (true, true) => {
            if ins_rate > del_rate {
                FailureKind::Repetition
            } else {
                FailureKind::Deletion
            }
        }
    };
    Ok(FailureLabel {
        utt: utt.to_string(),
        kind,
        del_rate,
        ins_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats(sub: usize, del: usize, ins: usize, ref_len: usize) -> EditStats {
        EditStats { sub, del, ins, ref_len }
    }

    #[test]
    fn identical_strings_cost_nothing() {
        let s = cer("hello there", "hello there").unwrap();
        assert_eq!(s, stats(0, 0, 0, 11));
        assert_eq!(s.cer(), 0.0);
    }

    #[test]
    fn single_substitution() {
        // abc vs axc: only the middle differs
        let s = cer("abc", "axc").unwrap();
        assert_eq!(s, stats(1, 0, 0, 3));
        assert!((s.cer() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_insertion() {
        // ab vs aab: one extra 'a'
        let s = cer("ab", "aab").unwrap();
        assert_eq!(s, stats(0, 0, 1, 2));
        assert!((s.cer() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let s = cer("abcd", "").unwrap();
        assert_eq!(s, stats(0, 4, 0, 4));
        let s = cer("ab", "   ").unwrap();
        assert_eq!(s, stats(0, 2, 0, 2));
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert!(cer("", "abc").is_err());
        assert!(cer(" \t ", "abc").is_err());
    }

    #[test]
    fn normalization_applies_to_both_sides() {
        // case folds, whitespace collapses — so these are equal
        let s = cer("Hello   World", "hello world").unwrap();
        assert_eq!(s.total(), 0);
    }

    #[test]
    fn ties_prefer_substitution_then_deletion() {
        // ab vs ba: distance 2 as two substitutions or del+ins; S wins
        let s = cer("ab", "ba").unwrap();
        assert_eq!(s, stats(2, 0, 0, 2));
    }

    /// Exhaustive oracle: enumerate every minimal-cost (S,D) split per DP
    /// cell (only minimal-cost prefixes can extend to minimal-cost
    /// alignments), then apply the same max-S-then-max-D preference.
    fn oracle(r: &[u8], h: &[u8]) -> (usize, usize, usize) {
        let (n, m) = (r.len(), h.len());
        // per cell: min cost + the set of (sub, del) pairs achieving it
        let mut cost = vec![vec![0usize; m + 1]; n + 1];
        let mut sets: Vec<Vec<Vec<(u8, u8)>>> = vec![vec![Vec::new(); m + 1]; n + 1];
        sets[0][0].push((0, 0));
        for i in 1..=n {
            cost[i][0] = i;
            sets[i][0].push((0, i as u8));
        }
        for j in 1..=m {
            cost[0][j] = j;
            sets[0][j].push((0, 0));
        }
        for i in 1..=n {
            for j in 1..=m {
                let eq = r[i - 1] == h[j - 1];
                let diag = cost[i - 1][j - 1] + if eq { 0 } else { 1 };
                let del = cost[i - 1][j] + 1;
                let ins = cost[i][j - 1] + 1;
                let c = diag.min(del).min(ins);
                cost[i][j] = c;
                let mut set: Vec<(u8, u8)> = Vec::new();
                if diag == c {
                    for &(s, d) in &sets[i - 1][j - 1] {
                        set.push((s + u8::from(!eq), d));
                    }
                }
                if del == c {
                    for &(s, d) in &sets[i - 1][j] {
                        set.push((s, d + 1));
                    }
                }
                if ins == c {
                    set.extend(sets[i][j - 1].iter().copied());
                }
                set.sort_unstable();
                set.dedup();
                sets[i][j] = set;
            }
        }
        let c = cost[n][m];
        let &(s, d) = sets[n][m]
            .iter()
            .max_by_key(|&&(s, d)| (s, d))
            .unwrap();
        (s as usize, d as usize, c - s as usize - d as usize)
    }

    #[test]
    fn matches_exhaustive_enumeration_on_short_strings() {
        // every pair over {a,b,c}: ref lengths 1..=4, hyp lengths 0..=4
        // (the acceptance suite pushes this to length 6)
        let alphabet = [b'a', b'b', b'c'];
        let strings_of = |len: usize| -> Vec<Vec<u8>> {
            let mut out = vec![Vec::new()];
            for _ in 0..len {
                out = out
                    .into_iter()
                    .flat_map(|s| {
                        alphabet.iter().map(move |&c| {
                            let mut t = s.clone();
                            t.push(c);
                            t
                        })
                    })
                    .collect();
            }
            out
        };
        for rl in 1..=4usize {
            for hl in 0..=4usize {
                for r in strings_of(rl) {
                    for h in strings_of(hl) {
                        let rs = String::from_utf8(r.clone()).unwrap();
                        let hs = String::from_utf8(h.clone()).unwrap();
                        let got = cer(&rs, &hs).unwrap();
                        let (s, d, i) = oracle(&r, &h);
                        assert_eq!(
                            (got.sub, got.del, got.ins),
                            (s, d, i),
                            "ref {rs:?} hyp {hs:?}"
                        );
                    }
                }
            }
        }
    }

    /// Plain single-cost Levenshtein, no decomposition.
    fn levenshtein(a: &[char], b: &[char]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let c = usize::from(a[i - 1] != b[j - 1]);
                cur[j] = (prev[j - 1] + c).min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn totals_agree_with_levenshtein_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let rl = rng.random_range(1..=40);
            let hl = rng.random_range(0..=40);
            let r: String = (0..rl)
                .map(|_| (b'a' + rng.random_range(0..4u8)) as char)
                .collect();
            let h: String = (0..hl)
                .map(|_| (b'a' + rng.random_range(0..4u8)) as char)
                .collect();
            let s = cer(&r, &h).unwrap();
            let lr: Vec<char> = r.chars().collect();
            let lh: Vec<char> = h.chars().collect();
            let want = levenshtein(&lr, &lh);
            assert_eq!(s.total(), want, "ref {r:?} hyp {h:?}");
        }
    }

    #[test]
    fn appending_a_common_suffix_changes_nothing() {
        let pairs = [("abc", "axc"), ("ab", "ba"), ("hello", "hxllo")];
        for (r, h) in pairs {
            let base = cer(r, h).unwrap();
            let ext = cer(&format!("{r}zzz"), &format!("{h}zzz")).unwrap();
            assert_eq!((base.sub, base.del, base.ins), (ext.sub, ext.del, ext.ins));
        }
    }

    #[test]
    fn failure_detection_rates_and_dominance() {
        // 3.6% insertions with a 2% threshold → repetition
        let l = detect_failure("u1", &stats(0, 0, 36, 1000), 0.02, 0.02).unwrap();
        assert_eq!(l.kind, FailureKind::Repetition);
        assert!((l.ins_rate - 0.036).abs() < 1e-12);
        // clean
        let l = detect_failure("u2", &stats(0, 0, 0, 10), 0.02, 0.02).unwrap();
        assert_eq!(l.kind, FailureKind::None);
        // both at 5%: tie → deletion
        let l = detect_failure("u3", &stats(0, 5, 5, 100), 0.02, 0.02).unwrap();
        assert_eq!(l.kind, FailureKind::Deletion);
        // insertion dominates when larger
        let l = detect_failure("u4", &stats(0, 3, 7, 100), 0.02, 0.02).unwrap();
        assert_eq!(l.kind, FailureKind::Repetition);
        // rates below threshold stay quiet
        let l = detect_failure("u5", &stats(5, 2, 1, 100), 0.02, 0.02).unwrap();
        assert_eq!(l.kind, FailureKind::None);
        assert!(detect_failure("u6", &stats(0, 0, 0, 10), 0.0, 0.02).is_err());
    }
}
