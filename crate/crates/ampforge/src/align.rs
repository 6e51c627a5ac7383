//! Global sequence alignment and template-similarity scoring.
//!
//! Similarity between two peptides is the global-alignment score under
//! unit match reward with zero mismatch and zero gap cost, normalized by
//! the longer peptide's length. With this scheme the optimal score equals
//! the number of matched positions in the best monotone pairing, so the
//! value lands in [0, 1], is symmetric, and hits 1 exactly on identity.

use crate::seq::PeptideSequence;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AlignError {
    #[error("similarity against an empty sequence set")]
    EmptySet,
}

/// Optimal global alignment score: +1 per matched pair, 0 for mismatches
/// and gaps. Classic O(m·n) dynamic program.
pub fn nw_score(a: &str, b: &str) -> u32 {
    let a: Vec<u8> = a.bytes().collect();
    let b: Vec<u8> = b.bytes().collect();
    let (m, n) = (a.len(), b.len());
    let mut prev = vec![0u32; n + 1];
    let mut cur = vec![0u32; n + 1];
    for i in 1..=m {
        for j in 1..=n {
            let diag = prev[j - 1] + u32::from(a[i - 1] == b[j - 1]);
            cur[j] = diag.max(prev[j]).max(cur[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n]
}

/// Alignment score normalized by the longer peptide's length.
pub fn nw_similarity(a: &PeptideSequence, b: &PeptideSequence) -> f64 {
    let denom = a.len().max(b.len()) as f64;
    f64::from(nw_score(a.as_str(), b.as_str())) / denom
}

/// Highest and average similarity of `query` against every member of `set`.
pub fn max_similarity_to_set(
    query: &PeptideSequence,
    set: &[PeptideSequence],
) -> Result<(f64, f64), AlignError> {
    if set.is_empty() {
        return Err(AlignError::EmptySet);
    }
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    for member in set {
        let s = nw_similarity(query, member);
        max = max.max(s);
        sum += s;
    }
    Ok((max, sum / set.len() as f64))
}
