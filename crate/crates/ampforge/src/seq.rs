//! Peptide sequences and dataset preparation.
//!
//! Raw assay data arrives as TSV lines of `sequence<TAB>mic1,mic2,...`
//! (MIC replicates in µg/mL). Preparation normalizes sequences (uppercase,
//! whitespace stripped, canonical residues only), pools replicates per
//! unique sequence by geometric mean, labels each entry with
//! `log10(geomean MIC)`, and splits 8:1:1 with a seeded shuffle.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The 20 canonical residues in alphabetical one-letter order.
pub const CANONICAL_RESIDUES: [char; 20] = [
    'A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V',
    'W', 'Y',
];

/// Index of a residue in [`CANONICAL_RESIDUES`], or `None` for anything else.
pub fn residue_index(aa: char) -> Option<usize> {
    match aa {
        'A' => Some(0),
        'C' => Some(1),
        'D' => Some(2),
        'E' => Some(3),
        'F' => Some(4),
        'G' => Some(5),
        'H' => Some(6),
        'I' => Some(7),
        'K' => Some(8),
        'L' => Some(9),
        'M' => Some(10),
        'N' => Some(11),
        'P' => Some(12),
        'Q' => Some(13),
        'R' => Some(14),
        'S' => Some(15),
        'T' => Some(16),
        'V' => Some(17),
        'W' => Some(18),
        'Y' => Some(19),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeqError {
    #[error("empty sequence")]
    EmptySequence,
    /// `position` is the 0-based index in the cleaned (uppercased,
    /// whitespace-stripped) sequence.
    #[error("non-canonical residue {residue:?} at position {position}")]
    NonCanonicalResidue { residue: char, position: usize },
}

/// A validated peptide: non-empty, uppercase, canonical residues only.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PeptideSequence(String);

impl PeptideSequence {
    /// Normalizes and validates raw text: uppercases, strips all
    /// whitespace, rejects empty results and non-canonical letters.
    pub fn parse(raw: &str) -> Result<Self, SeqError> {
        let cleaned: String = raw
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(|c| c.to_uppercase())
            .collect();
        if cleaned.is_empty() {
            return Err(SeqError::EmptySequence);
        }
        for (i, c) in cleaned.chars().enumerate() {
            if residue_index(c).is_none() {
                return Err(SeqError::NonCanonicalResidue {
                    residue: c,
                    position: i,
                });
            }
        }
        Ok(PeptideSequence(cleaned))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: never empty
    }

    pub fn residues(&self) -> impl Iterator<Item = char> + '_ {
        self.0.chars()
    }
}

impl fmt::Display for PeptideSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PeptideSequence {
    type Err = SeqError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PeptideSequence::parse(s)
    }
}

impl Serialize for PeptideSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PeptideSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        PeptideSequence::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// One assay measurement: a sequence with a positive MIC in µg/mL.
#[derive(Debug, Clone, PartialEq)]
pub struct MicRecord {
    pub sequence: PeptideSequence,
    pub mic_ug_ml: f64,
}

/// A prepared dataset entry: unique sequence plus `log10(geomean MIC)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub seq: PeptideSequence,
    pub label: f64,
}

/// An input line excluded during parsing, with the reason (reported, not fatal).
#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedRecord {
    pub line: usize,
    pub raw: String,
    pub reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dataset has {n} entries; at least {min} required")]
    TooFewEntries { n: usize, min: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses `sequence<TAB>mic1,mic2,...` lines. Blank lines are skipped.
///
/// Structural problems (missing tab, empty or non-positive MIC values) are
/// hard errors carrying the 1-based line number. Sequences containing
/// non-canonical residues are not errors: they are excluded and reported,
/// matching how assay collections are usually cleaned.
pub fn parse_mic_tsv(text: &str) -> Result<(Vec<MicRecord>, Vec<ExcludedRecord>), DatasetError> {
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let mut parts = raw_line.splitn(2, '\t');
        let seq_field = parts.next().unwrap_or("");
        let mic_field = parts.next().ok_or(DatasetError::Parse {
            line: line_no,
            msg: "expected `sequence<TAB>mic1,mic2,...`".into(),
        })?;
        let sequence = match PeptideSequence::parse(seq_field) {
            Ok(s) => s,
            Err(SeqError::NonCanonicalResidue { residue, position }) => {
                excluded.push(ExcludedRecord {
                    line: line_no,
                    raw: seq_field.to_string(),
                    reason: format!("non-canonical residue {residue:?} at position {position}"),
                });
                continue;
            }
            Err(SeqError::EmptySequence) => {
                return Err(DatasetError::Parse {
                    line: line_no,
                    msg: "empty sequence field".into(),
                })
            }
        };
        for tok in mic_field.split(',') {
            let mic: f64 = tok.trim().parse().map_err(|_| DatasetError::Parse {
                line: line_no,
                msg: format!("bad MIC value {tok:?}"),
            })?;
            if !mic.is_finite() || mic <= 0.0 {
                return Err(DatasetError::Parse {
                    line: line_no,
                    msg: format!("MIC must be finite and positive, got {mic}"),
                });
            }
            records.push(MicRecord {
                sequence: sequence.clone(),
                mic_ug_ml: mic,
            });
        }
    }
    Ok((records, excluded))
}

/// Pools MIC replicates per unique sequence and labels each entry with
/// `log10` of the geometric mean. Output is deduplicated and sorted by
/// sequence.
///
/// The geometric mean is computed as the mean of `log10(mic)` over the
/// replicates *sorted by value*, which makes the result independent of the
/// order replicates appear in the input (bitwise, not just to rounding).
pub fn preprocess(records: &[MicRecord]) -> Vec<DatasetEntry> {
    let mut pooled: BTreeMap<&PeptideSequence, Vec<f64>> = BTreeMap::new();
    for r in records {
        pooled.entry(&r.sequence).or_default().push(r.mic_ug_ml);
    }
    pooled
        .into_iter()
        .map(|(seq, mut mics)| {
            mics.sort_by(|a, b| a.total_cmp(b));
            let label = mics.iter().map(|m| m.log10()).sum::<f64>() / mics.len() as f64;
            DatasetEntry {
                seq: seq.clone(),
                label,
            }
        })
        .collect()
}

/// Train/validation/test partition of a prepared dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<DatasetEntry>,
    pub validation: Vec<DatasetEntry>,
    pub test: Vec<DatasetEntry>,
}

/// Minimum dataset size accepted by [`split_dataset`].
pub const MIN_SPLIT_ENTRIES: usize = 10;

/// 8:1:1 split with a seeded shuffle (ChaCha8 keyed by `seed`).
///
/// Validation and test each receive exactly `n/10` entries (integer
/// division); the remainder goes to train, so e.g. n=103 splits 83/10/10.
/// Entries keep their shuffled order inside each part.
pub fn split_dataset(entries: &[DatasetEntry], seed: u64) -> Result<DatasetSplit, DatasetError> {
    let n = entries.len();
    if n < MIN_SPLIT_ENTRIES {
        return Err(DatasetError::TooFewEntries {
            n,
            min: MIN_SPLIT_ENTRIES,
        });
    }
    let mut shuffled: Vec<DatasetEntry> = entries.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_val = n / 10;
    let n_test = n / 10;
    let validation = shuffled[..n_val].to_vec();
    let test = shuffled[n_val..n_val + n_test].to_vec();
    let train = shuffled[n_val + n_test..].to_vec();
    Ok(DatasetSplit {
        seed,
        train,
        validation,
        test,
    })
}

/// Serializes entries as JSONL (`{"seq":...,"label":...}` per line).
pub fn entries_to_jsonl(entries: &[DatasetEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entry serializes"));
        out.push('\n');
    }
    out
}

/// Parses JSONL entries, reporting the 1-based line of the first bad record.
pub fn entries_from_jsonl(text: &str) -> Result<Vec<DatasetEntry>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: DatasetEntry = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_normalizes_case_and_whitespace() {
        let p = PeptideSequence::parse(" glf\tdIIk\n").unwrap();
        assert_eq!(p.as_str(), "GLFDIIK");
    }

    #[test]
    fn parse_rejects_empty_and_noncanonical() {
        assert_eq!(PeptideSequence::parse("  \t"), Err(SeqError::EmptySequence));
        assert_eq!(
            PeptideSequence::parse("GLX"),
            Err(SeqError::NonCanonicalResidue {
                residue: 'X',
                position: 2
            })
        );
        // B, J, O, U, Z are not canonical
        assert!(PeptideSequence::parse("KBK").is_err());
    }

    #[test]
    fn display_roundtrip() {
        let p = PeptideSequence::parse("KIWKLLKKVLAKVAK").unwrap();
        let back: PeptideSequence = p.to_string().parse().unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn tsv_parses_replicates_and_reports_exclusions() {
        let (recs, excl) = parse_mic_tsv("GLFK\t8,16\nKXXK\t4\nKKLL\t2.5\n").unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(excl.len(), 1);
        assert_eq!(excl[0].line, 2);
        assert!(excl[0].reason.contains('X'));
    }

    #[test]
    fn tsv_structural_errors_carry_line_numbers() {
        let err = parse_mic_tsv("GLFK 8\n").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
        let err = parse_mic_tsv("GLFK\t8\nKKLL\t-2\n").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }));
        let err = parse_mic_tsv("GLFK\t8,abc\n").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
    }

    #[test]
    fn preprocess_pools_geometric_mean() {
        // 4 and 16 µg/mL → geomean 8 → label log10(8)
        let (recs, _) = parse_mic_tsv("GLFK\t4\nGLFK\t16\n").unwrap();
        let entries = preprocess(&recs);
        assert_eq!(entries.len(), 1);
        assert!((entries[0].label - 8f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn preprocess_dedups_and_sorts() {
        let (recs, _) = parse_mic_tsv("KKLL\t2\nAAGG\t4\nKKLL\t2\n").unwrap();
        let entries = preprocess(&recs);
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].seq.as_str(), "AAGG");
        assert_eq!(entries[1].seq.as_str(), "KKLL");
    }

    #[test]
    fn preprocess_is_idempotent_on_its_own_output() {
        let (recs, _) =
            parse_mic_tsv("GLFK\t4,9,16\nKKLL\t2\nAAGG\t128,64\n").unwrap();
        let first = preprocess(&recs);
        // Feed labels back as single pseudo-replicates 10^label.
        let again: Vec<MicRecord> = first
            .iter()
            .map(|e| MicRecord {
                sequence: e.seq.clone(),
                mic_ug_ml: 10f64.powf(e.label),
            })
            .collect();
        let second = preprocess(&again);
        assert_eq!(first.len(), second.len());
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.seq, b.seq);
            assert!((a.label - b.label).abs() < 1e-12);
        }
    }

    #[test]
    fn split_requires_minimum_size() {
        let entries: Vec<DatasetEntry> = (0..9)
            .map(|i| DatasetEntry {
                seq: PeptideSequence::parse(&format!("K{}", "A".repeat(i + 1))).unwrap(),
                label: i as f64,
            })
            .collect();
        assert!(matches!(
            split_dataset(&entries, 7),
            Err(DatasetError::TooFewEntries { n: 9, min: 10 })
        ));
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let entries: Vec<DatasetEntry> = (0..23)
            .map(|i| DatasetEntry {
                seq: PeptideSequence::parse(&format!("K{}", "A".repeat(i + 1))).unwrap(),
                label: i as f64,
            })
            .collect();
        let a = split_dataset(&entries, 42).unwrap();
        let b = split_dataset(&entries, 42).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.test, b.test);
        let c = split_dataset(&entries, 43).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn jsonl_roundtrip() {
        let entries = vec![
            DatasetEntry {
                seq: PeptideSequence::parse("KIWK").unwrap(),
                label: 1.25,
            },
            DatasetEntry {
                seq: PeptideSequence::parse("GLFD").unwrap(),
                label: -0.5,
            },
        ];
        let text = entries_to_jsonl(&entries);
        assert_eq!(entries_from_jsonl(&text).unwrap(), entries);
    }

    proptest! {
        /// Cleaned canonical text always parses and round-trips.
        #[test]
        fn prop_parse_roundtrip(s in "[ACDEFGHIKLMNPQRSTVWY]{1,64}") {
            let p = PeptideSequence::parse(&s).unwrap();
            prop_assert_eq!(p.as_str(), s.as_str());
        }

        /// Split sizes follow the 8:1:1 rule with remainder to train.
        #[test]
        fn prop_split_sizes(n in 10usize..200, seed in any::<u64>()) {
            let entries: Vec<DatasetEntry> = (0..n)
                .map(|i| DatasetEntry {
                    seq: PeptideSequence::parse(&format!("K{}", "A".repeat(i % 30 + 1))).unwrap(),
                    label: i as f64,
                })
                .collect();
            let s = split_dataset(&entries, seed).unwrap();
            prop_assert_eq!(s.validation.len(), n / 10);
            prop_assert_eq!(s.test.len(), n / 10);
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
        }

        /// Replicate pooling is order-independent.
        #[test]
        fn prop_geomean_order_independent(mut mics in proptest::collection::vec(0.1f64..500.0, 1..8)) {
            let seq = PeptideSequence::parse("KLAK").unwrap();
            let fwd: Vec<MicRecord> = mics.iter().map(|&m| MicRecord { sequence: seq.clone(), mic_ug_ml: m }).collect();
            mics.reverse();
            let rev: Vec<MicRecord> = mics.iter().map(|&m| MicRecord { sequence: seq.clone(), mic_ug_ml: m }).collect();
            let a = preprocess(&fwd);
            let b = preprocess(&rev);
            prop_assert_eq!(a[0].label.to_bits(), b[0].label.to_bits());
        }
    }
}
