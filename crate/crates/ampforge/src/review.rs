//! Committee review and meta-review aggregation.
//!
//! A committee of reviewers examines a batch of candidate evidence and
//! returns, per dimension (efficacy, safety, developability/structure,
//! originality), a free-text comment, up to four weighted tags drawn from
//! a shared [`Lexicon`], and a score. The aggregation step — the "area
//! chair" — averages scores, measures cross-reviewer disagreement on tags
//! both reviewers used, discounts dimensions where the committee
//! diverges, and emits a four-line summary text together with a single
//! overall meta score.
//!
//! Everything here is deterministic: committee outputs are canonicalized
//! by reviewer id before aggregation, so the result is invariant under
//! reviewer ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// The four review dimensions, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Eff,
    Safe,
    DevStruct,
    Orig,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Eff,
        Dimension::Safe,
        Dimension::DevStruct,
        Dimension::Orig,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Dimension::Eff => "Eff",
            Dimension::Safe => "Safe",
            Dimension::DevStruct => "DevStruct",
            Dimension::Orig => "Orig",
        }
    }

    pub fn parse(s: &str) -> Option<Dimension> {
        match s {
            "Eff" => Some(Dimension::Eff),
            "Safe" => Some(Dimension::Safe),
            "DevStruct" => Some(Dimension::DevStruct),
            "Orig" => Some(Dimension::Orig),
            _ => None,
        }
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Qualitative level a reviewer assigns to a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TagState {
    Low,
    Medium,
    High,
}

impl TagState {
    pub const ALL: [TagState; 3] = [TagState::Low, TagState::Medium, TagState::High];

    pub fn name(&self) -> &'static str {
        match self {
            TagState::Low => "Low",
            TagState::Medium => "Medium",
            TagState::High => "High",
        }
    }

    pub fn parse(s: &str) -> Option<TagState> {
        match s {
            "Low" => Some(TagState::Low),
            "Medium" => Some(TagState::Medium),
            "High" => Some(TagState::High),
            _ => None,
        }
    }

    fn index(&self) -> usize {
        match self {
            TagState::Low => 0,
            TagState::Medium => 1,
            TagState::High => 2,
        }
    }
}

impl std::fmt::Display for TagState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The only confidence values a reviewer may attach to a tag.
pub const CONFIDENCE_LEVELS: [f64; 4] = [1.00, 0.85, 0.60, 0.40];

/// Maximum tags per dimension in one reviewer output.
pub const MAX_TAGS_PER_DIMENSION: usize = 4;
/// Maximum reviewer comment length per dimension, in characters.
pub const MAX_COMMENT_CHARS: usize = 1500;

pub fn is_valid_confidence(p: f64) -> bool {
    CONFIDENCE_LEVELS.contains(&p)
}

/// One tagged observation: a lexicon id, the state the reviewer saw, and
/// the reviewer's confidence in the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tag {
    pub id: String,
    pub state: TagState,
    pub p: f64,
}

/// A reviewer's verdict on one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReview {
    pub comment: String,
    pub tags: Vec<Tag>,
    pub score: f64,
}

/// A complete reviewer output: all four dimensions, always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewerOutput {
    pub reviewer_id: String,
    pub eff: DimensionReview,
    pub safe: DimensionReview,
    pub dev_struct: DimensionReview,
    pub orig: DimensionReview,
}

impl ReviewerOutput {
    pub fn dimension(&self, d: Dimension) -> &DimensionReview {
        match d {
            Dimension::Eff => &self.eff,
            Dimension::Safe => &self.safe,
            Dimension::DevStruct => &self.dev_struct,
            Dimension::Orig => &self.orig,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReviewError {
    #[error("tag id `{id}` is not in the {dimension} lexicon")]
    UnknownTagId { dimension: Dimension, id: String },
    #[error("confidence {p} is not one of the allowed levels (1.00, 0.85, 0.60, 0.40)")]
    InvalidConfidence { dimension: Dimension, p: f64 },
    #[error("tag id `{id}` appears more than once under {dimension}")]
    DuplicateTagId { dimension: Dimension, id: String },
    #[error("{count} tags under {dimension} exceed the limit of {MAX_TAGS_PER_DIMENSION}")]
    TooManyTags { dimension: Dimension, count: usize },
    #[error("comment under {dimension} has {len} chars (limit {MAX_COMMENT_CHARS})")]
    CommentTooLong { dimension: Dimension, len: usize },
    #[error("reviewer output is missing dimension {dimension}")]
    MissingDimension { dimension: Dimension },
    #[error(
        "reported {dimension} score {reported} disagrees with the tag-derived value {computed}"
    )]
    ScoreMismatch {
        dimension: Dimension,
        reported: f64,
        computed: f64,
    },
    #[error("two committee members share the reviewer id `{id}`")]
    DuplicateReviewer { id: String },
    #[error("malformed reviewer output at line {line}: {msg}")]
    WireFormat { line: usize, msg: String },
    #[error("every reviewer was dropped; no committee output to aggregate")]
    NoReviewersLeft,
}

// ---------------------------------------------------------------------------
// Lexicon
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LexiconError {
    #[error("failed to read lexicon: {0}")]
    Io(String),
    #[error("lexicon is not valid JSON: {0}")]
    Json(String),
    #[error("duplicate weight for ({id}, {state}) under {dimension}")]
    DuplicateEntry {
        dimension: Dimension,
        id: String,
        state: TagState,
    },
    #[error("id `{id}` under {dimension} does not define all three states")]
    IncompleteStates { dimension: Dimension, id: String },
    #[error("weight {weight} for ({id}, {state}) under {dimension} is not finite")]
    BadWeight {
        dimension: Dimension,
        id: String,
        state: TagState,
        weight: f64,
    },
    #[error(
        "{dimension} violates the selection bound: some ≤4-tag selection sums to {worst}, \
         outside [-1, 1]"
    )]
    SelectionBound { dimension: Dimension, worst: f64 },
    #[error("signmap value {value} for {state} is not -1, 0, or +1")]
    BadSign { state: TagState, value: i8 },
}

#[derive(Debug, Deserialize)]
struct RawLexiconEntry {
    id: String,
    state: TagState,
    weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignmap {
    #[serde(rename = "Low")]
    low: i8,
    #[serde(rename = "Medium")]
    medium: i8,
    #[serde(rename = "High")]
    high: i8,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLexicon {
    #[serde(rename = "Eff")]
    eff: Vec<RawLexiconEntry>,
    #[serde(rename = "Safe")]
    safe: Vec<RawLexiconEntry>,
    #[serde(rename = "DevStruct")]
    dev_struct: Vec<RawLexiconEntry>,
    #[serde(rename = "Orig")]
    orig: Vec<RawLexiconEntry>,
    signmap: RawSignmap,
}

/// The shared tag vocabulary: per dimension, a set of ids with one weight
/// per state, plus the map from states to agreement signs.
///
/// Loading validates the structural invariants: one weight per
/// (id, state), all three states defined per id, and — exhaustively over
/// every possible ≤4-id selection with any state assignment — that no
/// selection's weight sum leaves `[-1, 1]`. Together with the confidence
/// cap (p ≤ 1) this bounds every dimension score to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    dims: BTreeMap<Dimension, BTreeMap<String, [f64; 3]>>,
    signs: [i8; 3],
}

impl Lexicon {
    pub fn from_json_str(text: &str) -> Result<Self, LexiconError> {
        let raw: RawLexicon =
            serde_json::from_str(text).map_err(|e| LexiconError::Json(e.to_string()))?;
        let mut dims = BTreeMap::new();
        for (dimension, entries) in [
            (Dimension::Eff, &raw.eff),
            (Dimension::Safe, &raw.safe),
            (Dimension::DevStruct, &raw.dev_struct),
            (Dimension::Orig, &raw.orig),
        ] {
            let mut ids: BTreeMap<String, [Option<f64>; 3]> = BTreeMap::new();
            for e in entries {
                if !e.weight.is_finite() {
                    return Err(LexiconError::BadWeight {
                        dimension,
                        id: e.id.clone(),
                        state: e.state,
                        weight: e.weight,
                    });
                }
                let slot = &mut ids.entry(e.id.clone()).or_default()[e.state.index()];
                if slot.is_some() {
                    return Err(LexiconError::DuplicateEntry {
                        dimension,
                        id: e.id.clone(),
                        state: e.state,
                    });
                }
                *slot = Some(e.weight);
            }
            let mut complete = BTreeMap::new();
            for (id, states) in ids {
                match states {
                    [Some(l), Some(m), Some(h)] => {
                        complete.insert(id, [l, m, h]);
                    }
                    _ => return Err(LexiconError::IncompleteStates { dimension, id }),
                }
            }
            check_selection_bound(dimension, &complete)?;
            dims.insert(dimension, complete);
        }
        let signs = [raw.signmap.low, raw.signmap.medium, raw.signmap.high];
        for (state, &value) in TagState::ALL.iter().zip(&signs) {
            if !(-1..=1).contains(&value) {
                return Err(LexiconError::BadSign {
                    state: *state,
                    value,
                });
            }
        }
        Ok(Lexicon { dims, signs })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, LexiconError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| LexiconError::Io(e.to_string()))?;
        Self::from_json_str(&text)
    }

    /// The lexicon shipped with the crate: 4 dimensions × 6 ids × 3
    /// states. Covered by a load-time test, so the unwrap cannot fire.
    pub fn default_lexicon() -> Self {
        Self::from_json_str(include_str!("../assets/default_lexicon.json"))
            .expect("embedded lexicon is validated by tests")
    }

    pub fn weight(&self, dimension: Dimension, id: &str, state: TagState) -> Option<f64> {
        self.dims
            .get(&dimension)
            .and_then(|ids| ids.get(id))
            .map(|w| w[state.index()])
    }

    pub fn sign(&self, state: TagState) -> i8 {
        self.signs[state.index()]
    }

    pub fn ids(&self, dimension: Dimension) -> impl Iterator<Item = &str> {
        self.dims
            .get(&dimension)
            .into_iter()
            .flat_map(|ids| ids.keys().map(String::as_str))
    }

    /// Shifts every weight's magnitude by `delta` (floored at zero, so a
    /// negative delta can silence weak tags entirely; zero weights stay
    /// zero). If the shifted table breaks the ≤4-tag selection bound,
    /// the whole dimension is rescaled by the violation factor so the
    /// type invariant survives — the knob changes relative magnitudes,
    /// never the bound.
    pub fn with_weight_offset(&self, delta: f64) -> Lexicon {
        let mut dims = BTreeMap::new();
        for (&dimension, ids) in &self.dims {
            let mut shifted: BTreeMap<String, [f64; 3]> = ids
                .iter()
                .map(|(id, ws)| {
                    let ws = ws.map(|w| {
                        if w == 0.0 {
                            0.0
                        } else {
                            w.signum() * (w.abs() + delta).max(0.0)
                        }
                    });
                    (id.clone(), ws)
                })
                .collect();
            let worst = worst_selection_sum(&shifted);
            if worst > 1.0 {
                for ws in shifted.values_mut() {
                    for w in ws.iter_mut() {
                        *w /= worst;
                    }
                }
            }
            dims.insert(dimension, shifted);
        }
        Lexicon {
            dims,
            signs: self.signs,
        }
    }
}

/// Worst absolute weight sum over every ≤4-id selection (any state per
/// id). Cost is combinatorial in the id count, which is fine at
/// realistic lexicon sizes (6 ids ⇒ 4,536 selections).
fn worst_selection_sum(ids: &BTreeMap<String, [f64; 3]>) -> f64 {
    let weights: Vec<&[f64; 3]> = ids.values().collect();
    let mut worst = 0.0f64;
    fn recurse(weights: &[&[f64; 3]], start: usize, left: usize, sum: f64, worst: &mut f64) {
        *worst = worst.max(sum.abs());
        if left == 0 {
            return;
        }
        for i in start..weights.len() {
            for w in weights[i] {
                recurse(weights, i + 1, left - 1, sum + w, worst);
            }
        }
    }
    recurse(&weights, 0, MAX_TAGS_PER_DIMENSION, 0.0, &mut worst);
    worst
}

/// Exhaustive proof that no ≤4-id selection can push a weight sum
/// outside `[-1, 1]`.
fn check_selection_bound(
    dimension: Dimension,
    ids: &BTreeMap<String, [f64; 3]>,
) -> Result<(), LexiconError> {
    let worst = worst_selection_sum(ids);
    if worst > 1.0 + 1e-12 {
        Err(LexiconError::SelectionBound { dimension, worst })
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scoring and aggregation
// ---------------------------------------------------------------------------

/// Weighted tag sum for one dimension: Σ weight(id, state) · p, in tag
/// order.
pub fn score_dimension(
    tags: &[Tag],
    lexicon: &Lexicon,
    dimension: Dimension,
) -> Result<f64, ReviewError> {
    let mut sum = 0.0;
    for tag in tags {
        if !is_valid_confidence(tag.p) {
            return Err(ReviewError::InvalidConfidence {
                dimension,
                p: tag.p,
            });
        }
        let w = lexicon
            .weight(dimension, &tag.id, tag.state)
            .ok_or_else(|| ReviewError::UnknownTagId {
                dimension,
                id: tag.id.clone(),
            })?;
        sum += w * tag.p;
    }
    Ok(sum)
}

/// Structural validation of one reviewer output against the lexicon,
/// including the score recomputation check: the reported score must match
/// the tag-derived sum to 1e-9, since aggregation trusts only the
/// recomputed value.
pub fn validate_output(output: &ReviewerOutput, lexicon: &Lexicon) -> Result<(), ReviewError> {
    for dimension in Dimension::ALL {
        let review = output.dimension(dimension);
        if review.comment.chars().count() > MAX_COMMENT_CHARS {
            return Err(ReviewError::CommentTooLong {
                dimension,
                len: review.comment.chars().count(),
            });
        }
        if review.tags.len() > MAX_TAGS_PER_DIMENSION {
            return Err(ReviewError::TooManyTags {
                dimension,
                count: review.tags.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for tag in &review.tags {
            if !seen.insert(tag.id.as_str()) {
                return Err(ReviewError::DuplicateTagId {
                    dimension,
                    id: tag.id.clone(),
                });
            }
        }
        let computed = score_dimension(&review.tags, lexicon, dimension)?;
        if (computed - review.score).abs() > 1e-9 {
            return Err(ReviewError::ScoreMismatch {
                dimension,
                reported: review.score,
                computed,
            });
        }
    }
    Ok(())
}

/// Tags placed on the same id by at least two reviewers, with their
/// agreement signs. Sign tuples are sorted ascending; all-zero tuples are
/// kept (they mean "everyone saw Medium", which is agreement, not
/// divergence). Single-reviewer ids carry no cross-reviewer information
/// and are dropped.
pub fn group_and_diverge(
    reviews: &[ReviewerOutput],
    lexicon: &Lexicon,
    dimension: Dimension,
) -> Vec<(String, Vec<i8>)> {
    let mut by_id: BTreeMap<&str, Vec<i8>> = BTreeMap::new();
    for review in reviews {
        for tag in &review.dimension(dimension).tags {
            by_id
                .entry(tag.id.as_str())
                .or_default()
                .push(lexicon.sign(tag.state));
        }
    }
    by_id
        .into_iter()
        .filter(|(_, signs)| signs.len() >= 2)
        .map(|(id, mut signs)| {
            signs.sort_unstable();
            (id.to_string(), signs)
        })
        .collect()
}

/// Divergence and the resulting score discount for one dimension.
///
/// Per id: d = 0 when every sign is zero, otherwise 1 − |mean(signs)|.
/// Ids with d = 0 (full agreement) are skipped; D is the mean of the
/// rest, or 0 when nothing remains. γ = 1 − 0.6·D, clipped to
/// [0.6, 1.0].
pub fn divergence_penalty(grouped: &[(String, Vec<i8>)]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (_, signs) in grouped {
        let d = if signs.iter().all(|&s| s == 0) {
            0.0
        } else {
            let mean = signs.iter().map(|&s| s as f64).sum::<f64>() / signs.len() as f64;
            1.0 - mean.abs()
        };
        if d != 0.0 {
            sum += d;
            n += 1;
        }
    }
    let divergence = if n == 0 { 0.0 } else { sum / n as f64 };
    let gamma = (1.0 - 0.6 * divergence).clamp(0.6, 1.0);
    (divergence, gamma)
}

/// Aggregated verdict for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMeta {
    pub meta_comment: String,
    /// Mean of the committee's (recomputed) scores.
    pub mean_score: f64,
    pub divergence: f64,
    pub gamma: f64,
    /// gamma · mean_score.
    pub meta_score: f64,
}

/// The area-chair output: per-dimension verdicts, the four-line summary
/// text, and the overall meta score (mean of the four meta scores, which
/// lies in [-1, 1]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaReview {
    pub eff: DimensionMeta,
    pub safe: DimensionMeta,
    pub dev_struct: DimensionMeta,
    pub orig: DimensionMeta,
    pub t_text: String,
    pub overall: f64,
}

impl MetaReview {
    pub fn dimension(&self, d: Dimension) -> &DimensionMeta {
        match d {
            Dimension::Eff => &self.eff,
            Dimension::Safe => &self.safe,
            Dimension::DevStruct => &self.dev_struct,
            Dimension::Orig => &self.orig,
        }
    }
}

/// Replaces characters that would break the pipe-delimited summary lines.
pub fn sanitize_comment(text: &str) -> String {
    text.replace(['|', '\n', '\r'], " ")
}

/// Combines a committee's outputs into the meta review.
///
/// Inputs are canonicalized by reviewer id first, so any permutation of
/// the same committee produces a bit-identical result. Scores are
/// recomputed from tags (and cross-checked against the reported values)
/// before averaging. The meta comment for a dimension is the comment of
/// the reviewer whose score sits closest to the committee mean — the
/// most representative voice — with ties going to the lowest reviewer
/// id.
pub fn aggregate(reviews: &[ReviewerOutput], lexicon: &Lexicon) -> Result<MetaReview, ReviewError> {
    if reviews.is_empty() {
        return Err(ReviewError::NoReviewersLeft);
    }
    let mut ordered: Vec<&ReviewerOutput> = reviews.iter().collect();
    ordered.sort_by(|a, b| a.reviewer_id.cmp(&b.reviewer_id));
    for pair in ordered.windows(2) {
        if pair[0].reviewer_id == pair[1].reviewer_id {
            return Err(ReviewError::DuplicateReviewer {
                id: pair[0].reviewer_id.clone(),
            });
        }
    }
    for review in &ordered {
        validate_output(review, lexicon)?;
    }

    let owned: Vec<ReviewerOutput> = ordered.iter().map(|r| (*r).clone()).collect();
    let mut metas: Vec<DimensionMeta> = Vec::with_capacity(4);
    for dimension in Dimension::ALL {
        let scores: Vec<f64> = ordered
            .iter()
            .map(|r| {
                score_dimension(&r.dimension(dimension).tags, lexicon, dimension)
                    .expect("validated above")
            })
            .collect();
        let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;
        let grouped = group_and_diverge(&owned, lexicon, dimension);
        let (divergence, gamma) = divergence_penalty(&grouped);
        let meta_score = gamma * mean_score;

        let mut best = 0usize;
        for (i, s) in scores.iter().enumerate() {
            if (s - mean_score).abs() < (scores[best] - mean_score).abs() {
                best = i;
            }
        }
        let meta_comment = sanitize_comment(&ordered[best].dimension(dimension).comment);
        metas.push(DimensionMeta {
            meta_comment,
            mean_score,
            divergence,
            gamma,
            meta_score,
        });
    }

    let mut t_text = String::new();
    for (dimension, meta) in Dimension::ALL.iter().zip(&metas) {
        if !t_text.is_empty() {
            t_text.push('\n');
        }
        let _ = write!(
            t_text,
            "{}|{}|{}|{}",
            dimension, meta.meta_comment, meta.divergence, meta.meta_score
        );
    }
    let overall = metas.iter().map(|m| m.meta_score).sum::<f64>() / 4.0;

    let mut it = metas.into_iter();
    Ok(MetaReview {
        eff: it.next().unwrap(),
        safe: it.next().unwrap(),
        dev_struct: it.next().unwrap(),
        orig: it.next().unwrap(),
        t_text,
        overall,
    })
}

/// One parsed line of the four-line summary text.
#[derive(Debug, Clone, PartialEq)]
pub struct TLine {
    pub dimension: Dimension,
    pub comment: String,
    pub divergence: f64,
    pub meta_score: f64,
}

/// Parses the four-line summary text back into its fields; used by audit
/// replay to re-derive the overall meta score from what was logged.
pub fn parse_t(text: &str) -> Result<[TLine; 4], ReviewError> {
    let lines: Vec<&str> = text.split('\n').collect();
    if lines.len() != 4 {
        return Err(ReviewError::WireFormat {
            line: lines.len(),
            msg: format!("summary text has {} lines, expected 4", lines.len()),
        });
    }
    let mut out = Vec::with_capacity(4);
    for (i, (line, want_dim)) in lines.iter().zip(Dimension::ALL).enumerate() {
        let parts: Vec<&str> = line.split('|').collect();
        if parts.len() != 4 {
            return Err(ReviewError::WireFormat {
                line: i + 1,
                msg: format!("expected 4 pipe-separated fields, found {}", parts.len()),
            });
        }
        let dimension = Dimension::parse(parts[0]).ok_or_else(|| ReviewError::WireFormat {
            line: i + 1,
            msg: format!("unknown dimension `{}`", parts[0]),
        })?;
        if dimension != want_dim {
            return Err(ReviewError::WireFormat {
                line: i + 1,
                msg: format!("expected dimension {want_dim}, found {dimension}"),
            });
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64, ReviewError> {
            s.parse().map_err(|_| ReviewError::WireFormat {
                line: i + 1,
                msg: format!("bad {what} `{s}`"),
            })
        };
        out.push(TLine {
            dimension,
            comment: parts[1].to_string(),
            divergence: parse_f64(parts[2], "divergence")?,
            meta_score: parse_f64(parts[3], "meta score")?,
        });
    }
    Ok([
        out.remove(0),
        out.remove(0),
        out.remove(0),
        out.remove(0),
    ])
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

/// Parses the strict line-oriented reviewer wire format:
///
/// ```text
/// DIM:Eff
/// COMMENT:<one line of text>
/// TAG:<id>,<state>,<p>        (zero or more)
/// SCORE:<x>
/// ...three more blocks, in canonical dimension order...
/// ```
///
/// Any deviation — unknown prefixes, blank lines, missing fields, blocks
/// out of order — is rejected with the offending 1-based line number.
/// Semantic checks (tag count, lexicon membership, score agreement)
/// happen separately in [`validate_output`].
pub fn parse_reviewer_output(
    reviewer_id: &str,
    text: &str,
) -> Result<ReviewerOutput, ReviewError> {
    let lines: Vec<&str> = text.trim_end_matches('\n').split('\n').collect();
    let mut cursor = 0usize;
    let err = |line: usize, msg: String| ReviewError::WireFormat { line: line + 1, msg };

    let mut parsed: Vec<DimensionReview> = Vec::with_capacity(4);
    for want_dim in Dimension::ALL {
        let dim_line = lines
            .get(cursor)
            .ok_or_else(|| err(cursor, format!("expected `DIM:{want_dim}`, found end of text")))?;
        let name = dim_line
            .strip_prefix("DIM:")
            .ok_or_else(|| err(cursor, format!("expected `DIM:{want_dim}`")))?;
        let dimension = Dimension::parse(name)
            .ok_or_else(|| err(cursor, format!("unknown dimension `{name}`")))?;
        if dimension != want_dim {
            return Err(err(
                cursor,
                format!("blocks must follow canonical order; expected {want_dim}, found {dimension}"),
            ));
        }
        cursor += 1;

        let comment = lines
            .get(cursor)
            .and_then(|l| l.strip_prefix("COMMENT:"))
            .ok_or_else(|| err(cursor, "expected `COMMENT:<text>`".into()))?
            .to_string();
        cursor += 1;

        let mut tags = Vec::new();
        loop {
            let line = lines
                .get(cursor)
                .ok_or_else(|| err(cursor, "expected `TAG:` or `SCORE:`, found end of text".into()))?;
            if let Some(rest) = line.strip_prefix("TAG:") {
                let fields: Vec<&str> = rest.split(',').collect();
                if fields.len() != 3 {
                    return Err(err(cursor, format!("expected `TAG:<id>,<state>,<p>`, found `{line}`")));
                }
                let state = TagState::parse(fields[1])
                    .ok_or_else(|| err(cursor, format!("unknown tag state `{}`", fields[1])))?;
                let p: f64 = fields[2]
                    .parse()
                    .map_err(|_| err(cursor, format!("bad confidence `{}`", fields[2])))?;
                if fields[0].is_empty() {
                    return Err(err(cursor, "empty tag id".into()));
                }
                tags.push(Tag {
                    id: fields[0].to_string(),
                    state,
                    p,
                });
                cursor += 1;
            } else if let Some(rest) = line.strip_prefix("SCORE:") {
                let score: f64 = rest
                    .parse()
                    .map_err(|_| err(cursor, format!("bad score `{rest}`")))?;
                cursor += 1;
                parsed.push(DimensionReview {
                    comment,
                    tags,
                    score,
                });
                break;
            } else {
                return Err(err(cursor, format!("expected `TAG:` or `SCORE:`, found `{line}`")));
            }
        }
    }
    if cursor != lines.len() {
        return Err(err(cursor, "trailing content after the last block".into()));
    }

    let mut it = parsed.into_iter();
    Ok(ReviewerOutput {
        reviewer_id: reviewer_id.to_string(),
        eff: it.next().unwrap(),
        safe: it.next().unwrap(),
        dev_struct: it.next().unwrap(),
        orig: it.next().unwrap(),
    })
}

/// Renders a reviewer output in the wire format. Round-trips through
/// [`parse_reviewer_output`] as long as comments are single-line; scores
/// print full precision.
pub fn render_reviewer_output(output: &ReviewerOutput) -> String {
    let mut text = String::new();
    for dimension in Dimension::ALL {
        let review = output.dimension(dimension);
        let _ = writeln!(text, "DIM:{dimension}");
        let _ = writeln!(text, "COMMENT:{}", review.comment);
        for tag in &review.tags {
            let _ = writeln!(text, "TAG:{},{},{}", tag.id, tag.state, tag.p);
        }
        let _ = writeln!(text, "SCORE:{}", review.score);
    }
    text
}

// ---------------------------------------------------------------------------
// Committee driving
// ---------------------------------------------------------------------------

/// Evidence for a single candidate sequence, as presented to reviewers.
/// Optional channels are absent under the matching scorer ablation — an
/// ablated signal never reaches the committee in any form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub sequence: String,
    /// Predicted activity score, in [0, 1].
    pub sa: f64,
    /// Peptide-likeness score.
    pub sb: Option<f64>,
    /// Toxicity estimate, in [0, 1] (lower is safer).
    pub va: Option<f64>,
    /// Structure plausibility estimate, in [0, 1].
    pub vb: Option<f64>,
    /// Physicochemical summary text.
    pub vc: String,
    /// Maximum similarity to the template set, in [0, 1].
    pub vd: f64,
}

/// The batch a committee reviews in one sitting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchEvidence {
    pub items: Vec<EvidenceItem>,
}

/// Batch means of the numeric evidence channels; an optional channel is
/// None when any item lacks it (ablated runs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceMeans {
    pub sa: f64,
    pub sb: Option<f64>,
    pub va: Option<f64>,
    pub vb: Option<f64>,
    pub vd: f64,
}

impl BatchEvidence {
    /// Deterministic plain-text rendering, used for remote-reviewer
    /// prompts and prompt audit logs.
    pub fn render_text(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "-".to_string());
        let mut text = String::new();
        for (i, item) in self.items.iter().enumerate() {
            let _ = writeln!(
                text,
                "candidate {i}: seq={} sa={} sb={} va={} vb={} vd={} :: {}",
                item.sequence,
                item.sa,
                opt(item.sb),
                opt(item.va),
                opt(item.vb),
                item.vd,
                item.vc
            );
        }
        text
    }

    /// Batch means of the numeric evidence channels, used by scripted
    /// reviewers to threshold their verdicts.
    pub fn means(&self) -> Option<EvidenceMeans> {
        if self.items.is_empty() {
            return None;
        }
        let n = self.items.len() as f64;
        let sum = |f: fn(&EvidenceItem) -> f64| self.items.iter().map(f).sum::<f64>() / n;
        let opt_sum = |f: fn(&EvidenceItem) -> Option<f64>| {
            if self.items.iter().all(|i| f(i).is_some()) {
                Some(self.items.iter().map(|i| f(i).unwrap()).sum::<f64>() / n)
            } else {
                None
            }
        };
        Some(EvidenceMeans {
            sa: sum(|i| i.sa),
            sb: opt_sum(|i| i.sb),
            va: opt_sum(|i| i.va),
            vb: opt_sum(|i| i.vb),
            vd: sum(|i| i.vd),
        })
    }
}

/// A committee member: given batch evidence, produces wire-format text.
pub trait Reviewer {
    fn reviewer_id(&self) -> &str;
    /// Returns wire-format review text, or a failure description.
    fn review(&mut self, evidence: &BatchEvidence) -> Result<String, String>;
}

/// Outcome of driving a committee over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewRunOutcome {
    pub meta: MetaReview,
    /// Reviewers dropped for this batch, with the reason.
    pub dropped: Vec<(String, String)>,
}

/// Invokes each committee member on the batch, parses and validates the
/// outputs, and aggregates the survivors.
///
/// A reviewer whose output stays unparseable or invalid after one retry
/// is dropped for this batch (recorded in the outcome); if every reviewer
/// is dropped, the run aborts with [`ReviewError::NoReviewersLeft`].
/// Invocations run sequentially in the given order; aggregation
/// canonicalizes by reviewer id, so committee order never affects the
/// result.
pub fn run_review(
    evidence: &BatchEvidence,
    reviewers: &mut [Box<dyn Reviewer>],
    lexicon: &Lexicon,
) -> Result<ReviewRunOutcome, ReviewError> {
    let mut outputs: Vec<ReviewerOutput> = Vec::new();
    let mut dropped: Vec<(String, String)> = Vec::new();
    for reviewer in reviewers.iter_mut() {
        let id = reviewer.reviewer_id().to_string();
        let mut failure = String::new();
        let mut accepted = None;
        for _attempt in 0..2 {
            match reviewer.review(evidence) {
                Err(e) => failure = e,
                Ok(text) => match parse_reviewer_output(&id, &text) {
                    Err(e) => failure = e.to_string(),
                    Ok(output) => match validate_output(&output, lexicon) {
                        Err(e) => failure = e.to_string(),
                        Ok(()) => {
                            accepted = Some(output);
                            break;
                        }
                    },
                },
            }
        }
        match accepted {
            Some(output) => outputs.push(output),
            None => dropped.push((id, failure)),
        }
    }
    if outputs.is_empty() {
        return Err(ReviewError::NoReviewersLeft);
    }
    let meta = aggregate(&outputs, lexicon)?;
    Ok(ReviewRunOutcome { meta, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn lexicon() -> Lexicon {
        Lexicon::default_lexicon()
    }

    fn empty_dim(score_comment: &str) -> DimensionReview {
        DimensionReview {
            comment: score_comment.to_string(),
            tags: vec![],
            score: 0.0,
        }
    }

    fn output_with(reviewer_id: &str, dimension: Dimension, tags: Vec<Tag>) -> ReviewerOutput {
        let lex = lexicon();
        let score = score_dimension(&tags, &lex, dimension).unwrap();
        let review = DimensionReview {
            comment: format!("{reviewer_id} on {dimension}"),
            tags,
            score,
        };
        let mut out = ReviewerOutput {
            reviewer_id: reviewer_id.to_string(),
            eff: empty_dim("eff"),
            safe: empty_dim("safe"),
            dev_struct: empty_dim("devstruct"),
            orig: empty_dim("orig"),
        };
        match dimension {
            Dimension::Eff => out.eff = review,
            Dimension::Safe => out.safe = review,
            Dimension::DevStruct => out.dev_struct = review,
            Dimension::Orig => out.orig = review,
        }
        out
    }

    fn tag(id: &str, state: TagState, p: f64) -> Tag {
        Tag {
            id: id.to_string(),
            state,
            p,
        }
    }

    #[test]
    fn default_lexicon_loads_and_is_bounded() {
        let lex = lexicon();
        for dimension in Dimension::ALL {
            assert_eq!(lex.ids(dimension).count(), 6, "{dimension}");
        }
        assert_eq!(lex.sign(TagState::Low), -1);
        assert_eq!(lex.sign(TagState::Medium), 0);
        assert_eq!(lex.sign(TagState::High), 1);
        assert_eq!(
            lex.weight(Dimension::Safe, "hemolysis_risk", TagState::Low),
            Some(0.25)
        );
    }

    #[test]
    fn weight_offset_shifts_magnitudes_and_preserves_the_bound() {
        let lex = lexicon();
        // A small positive delta grows magnitudes (until the rescale
        // kicks in) and keeps every sign; zero weights stay zero.
        let shifted = lex.with_weight_offset(0.02);
        for dimension in Dimension::ALL {
            for id in lex.ids(dimension) {
                for state in TagState::ALL {
                    let before = lex.weight(dimension, id, state).unwrap();
                    let after = shifted.weight(dimension, id, state).unwrap();
                    if before == 0.0 {
                        assert_eq!(after, 0.0);
                    } else {
                        assert_eq!(after.signum(), before.signum(), "{dimension}/{id}");
                        assert!(after.abs() > before.abs(), "{dimension}/{id}");
                    }
                }
            }
        }

        // Zero weights are fixed points of the shift.
        let zero_weighted = Lexicon::from_json_str(
            r#"{
            "Eff": [
                {"id": "x", "state": "Low", "weight": -0.2},
                {"id": "x", "state": "Medium", "weight": 0.0},
                {"id": "x", "state": "High", "weight": 0.2}
            ],
            "Safe": [], "DevStruct": [], "Orig": [],
            "signmap": {"Low": -1, "Medium": 0, "High": 1}
        }"#,
        )
        .unwrap()
        .with_weight_offset(0.1);
        assert_eq!(
            zero_weighted.weight(Dimension::Eff, "x", TagState::Medium),
            Some(0.0)
        );
        assert_eq!(
            zero_weighted.weight(Dimension::Eff, "x", TagState::High),
            Some(0.2 + 0.1)
        );

        // A large delta forces the rescale; the exhaustive selection
        // bound must still hold, so reloading the rendered weights in a
        // fresh scoring pass stays within [-1, 1].
        let big = lex.with_weight_offset(10.0);
        for dimension in Dimension::ALL {
            let ids: Vec<&str> = big.ids(dimension).take(4).collect();
            let tags: Vec<Tag> = ids
                .iter()
                .map(|id| Tag {
                    id: id.to_string(),
                    state: TagState::High,
                    p: 1.0,
                })
                .collect();
            let score = score_dimension(&tags, &big, dimension).unwrap();
            assert!((-1.0..=1.0).contains(&score), "{dimension}: {score}");
        }

        // A deeply negative delta silences everything.
        let silenced = lex.with_weight_offset(-10.0);
        for dimension in Dimension::ALL {
            for id in silenced.ids(dimension) {
                for state in TagState::ALL {
                    assert_eq!(silenced.weight(dimension, id, state), Some(0.0));
                }
            }
        }
    }

    #[test]
    fn lexicon_rejects_structural_problems() {
        let dup = r#"{
            "Eff": [
                {"id": "x", "state": "Low", "weight": 0.1},
                {"id": "x", "state": "Low", "weight": 0.2},
                {"id": "x", "state": "Medium", "weight": 0.1},
                {"id": "x", "state": "High", "weight": 0.1}
            ],
            "Safe": [], "DevStruct": [], "Orig": [],
            "signmap": {"Low": -1, "Medium": 0, "High": 1}
        }"#;
        assert!(matches!(
            Lexicon::from_json_str(dup),
            Err(LexiconError::DuplicateEntry { .. })
        ));

        let incomplete = r#"{
            "Eff": [{"id": "x", "state": "Low", "weight": 0.1}],
            "Safe": [], "DevStruct": [], "Orig": [],
            "signmap": {"Low": -1, "Medium": 0, "High": 1}
        }"#;
        assert!(matches!(
            Lexicon::from_json_str(incomplete),
            Err(LexiconError::IncompleteStates { .. })
        ));

        // Four ids at weight 0.3 sum to 1.2 over a 4-tag selection.
        let over = r#"{
            "Eff": [
                {"id": "a", "state": "Low", "weight": -0.3}, {"id": "a", "state": "Medium", "weight": 0.0}, {"id": "a", "state": "High", "weight": 0.3},
                {"id": "b", "state": "Low", "weight": -0.3}, {"id": "b", "state": "Medium", "weight": 0.0}, {"id": "b", "state": "High", "weight": 0.3},
                {"id": "c", "state": "Low", "weight": -0.3}, {"id": "c", "state": "Medium", "weight": 0.0}, {"id": "c", "state": "High", "weight": 0.3},
                {"id": "d", "state": "Low", "weight": -0.3}, {"id": "d", "state": "Medium", "weight": 0.0}, {"id": "d", "state": "High", "weight": 0.3}
            ],
            "Safe": [], "DevStruct": [], "Orig": [],
            "signmap": {"Low": -1, "Medium": 0, "High": 1}
        }"#;
        assert!(matches!(
            Lexicon::from_json_str(over),
            Err(LexiconError::SelectionBound { .. })
        ));

        let bad_sign = r#"{
            "Eff": [], "Safe": [], "DevStruct": [], "Orig": [],
            "signmap": {"Low": -2, "Medium": 0, "High": 1}
        }"#;
        assert!(matches!(
            Lexicon::from_json_str(bad_sign),
            Err(LexiconError::BadSign { .. })
        ));
    }

    #[test]
    fn dimension_scores_are_exact_weighted_sums() {
        let lex = lexicon();
        // mic_potency High carries weight 0.25 in the shipped lexicon.
        let s = score_dimension(
            &[tag("mic_potency", TagState::High, 1.0)],
            &lex,
            Dimension::Eff,
        )
        .unwrap();
        assert_eq!(s, 0.25);

        // 0.20·0.85 + (-0.20)·0.60 = 0.17 - 0.12 = 0.05
        let s = score_dimension(
            &[
                tag("spectrum_breadth", TagState::High, 0.85),
                tag("mic_potency", TagState::Low, 0.60),
            ],
            &lex,
            Dimension::Eff,
        )
        .unwrap();
        assert!((s - 0.05).abs() < 1e-12, "{s}");

        assert_eq!(score_dimension(&[], &lex, Dimension::Eff).unwrap(), 0.0);

        assert!(matches!(
            score_dimension(&[tag("nope", TagState::High, 1.0)], &lex, Dimension::Eff),
            Err(ReviewError::UnknownTagId { .. })
        ));
        assert!(matches!(
            score_dimension(
                &[tag("mic_potency", TagState::High, 0.7)],
                &lex,
                Dimension::Eff
            ),
            Err(ReviewError::InvalidConfidence { .. })
        ));
    }

    #[test]
    fn grouping_requires_two_hits_and_sorts_signs() {
        let lex = lexicon();
        let reviews = vec![
            output_with("r1", Dimension::Eff, vec![
                tag("mic_potency", TagState::Low, 1.0),
                tag("kill_kinetics", TagState::High, 1.0),
            ]),
            output_with("r2", Dimension::Eff, vec![
                tag("mic_potency", TagState::High, 1.0),
            ]),
            output_with("r3", Dimension::Eff, vec![
                tag("mic_potency", TagState::Low, 0.85),
            ]),
        ];
        let grouped = group_and_diverge(&reviews, &lex, Dimension::Eff);
        // kill_kinetics has one hit and is dropped; mic_potency has three,
        // sorted ascending.
        assert_eq!(grouped, vec![("mic_potency".to_string(), vec![-1, -1, 1])]);
    }

    #[test]
    fn divergence_matches_hand_computed_cases() {
        // Full agreement: d = 0, excluded, D = 0, gamma = 1.
        let (d, g) = divergence_penalty(&[("a".into(), vec![1, 1, 1])]);
        assert_eq!((d, g), (0.0, 1.0));

        // (-1, -1, 1): d = 1 - 1/3 = 2/3, sole id: D = 2/3, gamma = 0.6.
        let (d, g) = divergence_penalty(&[("a".into(), vec![-1, -1, 1])]);
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
        assert!((g - 0.6).abs() < 1e-15);

        // All-zero tuple is agreement, not divergence.
        let (d, g) = divergence_penalty(&[("a".into(), vec![0, 0])]);
        assert_eq!((d, g), (0.0, 1.0));

        // Even split forces d = 1 and the clip lower bound.
        let (d, g) = divergence_penalty(&[("a".into(), vec![-1, 1])]);
        assert_eq!(d, 1.0);
        assert_eq!(g, 0.6);

        // Mean over the non-agreeing ids only.
        let (d, _) = divergence_penalty(&[
            ("a".into(), vec![1, 1]),        // d = 0, skipped
            ("b".into(), vec![-1, 1]),       // d = 1
            ("c".into(), vec![-1, -1, 1]),   // d = 2/3
        ]);
        assert!((d - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);

        assert_eq!(divergence_penalty(&[]), (0.0, 1.0));
    }

    #[test]
    fn gamma_lower_bound_discounts_mean_score() {
        let lex = lexicon();
        // Two reviewers split Low/High on a shared id, forcing D = 1 and
        // the gamma floor; the remaining tags set the mean score.
        let r1 = output_with("r1", Dimension::Safe, vec![
            tag("hemolysis_risk", TagState::Low, 1.0),    // +0.25
            tag("tox_alert_density", TagState::Low, 1.0), // +0.20
            tag("aggregation_risk", TagState::Low, 1.0),  // +0.15
        ]); // score 0.60
        let r2 = output_with("r2", Dimension::Safe, vec![
            tag("hemolysis_risk", TagState::High, 1.0),    // -0.25
            tag("cytotox_margin", TagState::High, 1.0),    // +0.20
            tag("serum_stability", TagState::High, 1.0),   // +0.15
            tag("immunogenic_motifs", TagState::Low, 1.0), // +0.10
        ]); // score 0.20
        let meta = aggregate(&[r1, r2], &lex).unwrap();
        // hemolysis_risk: signs (-1, 1) -> d = 1 -> D = 1 -> gamma = 0.6.
        assert_eq!(meta.safe.divergence, 1.0);
        assert_eq!(meta.safe.gamma, 0.6);
        let want_mean = (0.60 + 0.20) / 2.0;
        assert!((meta.safe.mean_score - want_mean).abs() < 1e-12);
        assert!((meta.safe.meta_score - 0.6 * want_mean).abs() < 1e-12);
    }

    #[test]
    fn single_reviewer_passes_through_undiscounted() {
        let lex = lexicon();
        let r = output_with("solo", Dimension::Eff, vec![
            tag("mic_potency", TagState::High, 1.0),
        ]);
        let meta = aggregate(&[r], &lex).unwrap();
        for dimension in Dimension::ALL {
            assert_eq!(meta.dimension(dimension).divergence, 0.0);
            assert_eq!(meta.dimension(dimension).gamma, 1.0);
        }
        assert_eq!(meta.eff.meta_score, 0.25);
        assert_eq!(meta.overall, 0.25 / 4.0);
    }

    #[test]
    fn identical_committee_equals_single_reviewer() {
        let lex = lexicon();
        let make = |id: &str| {
            let mut o = output_with(id, Dimension::Eff, vec![
                tag("mic_potency", TagState::High, 0.85),
                tag("spectrum_breadth", TagState::Medium, 0.60),
            ]);
            o.safe = DimensionReview {
                comment: "same".into(),
                tags: vec![tag("hemolysis_risk", TagState::Low, 1.0)],
                score: 0.25,
            };
            o
        };
        let solo = aggregate(&[make("a")], &lex).unwrap();
        let trio = aggregate(&[make("a"), make("b"), make("c")], &lex).unwrap();
        // Equal up to the rounding of mean-of-three identical values.
        assert!((solo.overall - trio.overall).abs() < 1e-12);
        for dimension in Dimension::ALL {
            let (s, t) = (
                solo.dimension(dimension).meta_score,
                trio.dimension(dimension).meta_score,
            );
            assert!((s - t).abs() < 1e-12, "{dimension}: {s} vs {t}");
        }
    }

    #[test]
    fn aggregate_is_reviewer_order_invariant() {
        let lex = lexicon();
        let a = output_with("alpha", Dimension::Eff, vec![
            tag("mic_potency", TagState::High, 1.0),
        ]);
        let b = output_with("beta", Dimension::Eff, vec![
            tag("mic_potency", TagState::Low, 0.85),
            tag("dose_response", TagState::High, 0.60),
        ]);
        let c = output_with("gamma", Dimension::Safe, vec![
            tag("hemolysis_risk", TagState::Low, 1.0),
        ]);
        let fwd = aggregate(&[a.clone(), b.clone(), c.clone()], &lex).unwrap();
        let rev = aggregate(&[c, b, a], &lex).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn aggregate_rejects_bad_committees() {
        let lex = lexicon();
        assert!(matches!(
            aggregate(&[], &lex),
            Err(ReviewError::NoReviewersLeft)
        ));
        let a = output_with("same", Dimension::Eff, vec![]);
        let b = output_with("same", Dimension::Safe, vec![]);
        assert!(matches!(
            aggregate(&[a, b], &lex),
            Err(ReviewError::DuplicateReviewer { .. })
        ));

        let mut bad = output_with("r", Dimension::Eff, vec![
            tag("mic_potency", TagState::High, 1.0),
        ]);
        bad.eff.score += 1e-6; // drifted reported score
        assert!(matches!(
            aggregate(&[bad], &lex),
            Err(ReviewError::ScoreMismatch { .. })
        ));
    }

    #[test]
    fn t_text_has_four_parseable_lines_and_round_trips() {
        let lex = lexicon();
        let r1 = output_with("r1", Dimension::Eff, vec![
            tag("mic_potency", TagState::High, 1.0),
        ]);
        let mut r2 = output_with("r2", Dimension::Eff, vec![
            tag("mic_potency", TagState::Low, 0.85),
        ]);
        r2.eff.comment = "pipes | and\nnewlines".into();
        let meta = aggregate(&[r1, r2], &lex).unwrap();
        assert_eq!(meta.t_text.split('\n').count(), 4);
        let lines = parse_t(&meta.t_text).unwrap();
        for (line, dimension) in lines.iter().zip(Dimension::ALL) {
            let dm = meta.dimension(dimension);
            assert_eq!(line.dimension, dimension);
            assert_eq!(line.divergence, dm.divergence);
            assert_eq!(line.meta_score, dm.meta_score);
            assert!(!line.comment.contains('|'));
            assert!(!line.comment.contains('\n'));
        }
        // Recomputing the overall from the logged lines is exact.
        let overall = lines.iter().map(|l| l.meta_score).sum::<f64>() / 4.0;
        assert_eq!(overall, meta.overall);
    }

    #[test]
    fn meta_comment_comes_from_most_representative_reviewer() {
        let lex = lexicon();
        let mut low = output_with("a_low", Dimension::Eff, vec![
            tag("mic_potency", TagState::Low, 1.0), // -0.20
        ]);
        low.eff.comment = "too weak".into();
        let mut mid = output_with("b_mid", Dimension::Eff, vec![
            tag("target_selectivity", TagState::High, 1.0), // +0.10
        ]);
        mid.eff.comment = "middle of the road".into();
        let mut high = output_with("c_high", Dimension::Eff, vec![
            tag("mic_potency", TagState::High, 1.0), // +0.25
        ]);
        high.eff.comment = "very strong".into();
        // mean = (-0.20 + 0.10 + 0.25)/3 = 0.05; closest is +0.10.
        let meta = aggregate(&[low, mid, high], &lex).unwrap();
        assert_eq!(meta.eff.meta_comment, "middle of the road");
    }

    #[test]
    fn wire_format_round_trips() {
        let lex = lexicon();
        let mut output = output_with("w1", Dimension::Eff, vec![
            tag("mic_potency", TagState::High, 0.85),
            tag("kill_kinetics", TagState::Medium, 0.4),
        ]);
        output.safe.tags = vec![tag("hemolysis_risk", TagState::Low, 1.0)];
        output.safe.score = 0.25;
        let text = render_reviewer_output(&output);
        let back = parse_reviewer_output("w1", &text).unwrap();
        assert_eq!(back, output);
        validate_output(&back, &lex).unwrap();
    }

    #[test]
    fn wire_format_rejects_deviations() {
        let valid = render_reviewer_output(&output_with("x", Dimension::Eff, vec![]));

        // Strictness: each mutation below must fail with a line number.
        let cases: Vec<String> = vec![
            valid.replacen("DIM:Eff", "DIM:Effx", 1),
            valid.replacen("DIM:Safe", "DIM:Orig", 1), // out of order
            valid.replacen("COMMENT:", "NOTE:", 1),
            valid.replacen("SCORE:0", "SCORE:zero", 1),
            valid.replacen("SCORE:0\nDIM:Safe", "DIM:Safe", 1), // missing score
            format!("{valid}EXTRA:line\n"),
            format!("\n{valid}"), // leading blank line
        ];
        for (i, case) in cases.iter().enumerate() {
            let got = parse_reviewer_output("x", case);
            assert!(
                matches!(got, Err(ReviewError::WireFormat { .. })),
                "case {i} should fail, got {got:?}"
            );
        }

        // Unknown state and malformed tag field counts.
        let bad_tag = valid.replacen(
            "COMMENT:x on Eff",
            "COMMENT:x on Eff\nTAG:mic_potency,Huge,1",
            1,
        );
        assert!(parse_reviewer_output("x", &bad_tag).is_err());
        let short_tag = valid.replacen(
            "COMMENT:x on Eff",
            "COMMENT:x on Eff\nTAG:mic_potency,High",
            1,
        );
        assert!(parse_reviewer_output("x", &short_tag).is_err());
    }

    #[test]
    fn validate_output_enforces_semantic_limits() {
        let lex = lexicon();
        let mut too_many = output_with("v", Dimension::Eff, vec![]);
        too_many.eff.tags = vec![
            tag("mic_potency", TagState::High, 1.0),
            tag("spectrum_breadth", TagState::High, 1.0),
            tag("kill_kinetics", TagState::High, 1.0),
            tag("dose_response", TagState::High, 1.0),
            tag("target_selectivity", TagState::High, 1.0),
        ];
        assert!(matches!(
            validate_output(&too_many, &lex),
            Err(ReviewError::TooManyTags { count: 5, .. })
        ));

        let mut dup = output_with("v", Dimension::Eff, vec![]);
        dup.eff.tags = vec![
            tag("mic_potency", TagState::High, 1.0),
            tag("mic_potency", TagState::Low, 1.0),
        ];
        assert!(matches!(
            validate_output(&dup, &lex),
            Err(ReviewError::DuplicateTagId { .. })
        ));

        let mut long = output_with("v", Dimension::Eff, vec![]);
        long.eff.comment = "x".repeat(MAX_COMMENT_CHARS + 1);
        assert!(matches!(
            validate_output(&long, &lex),
            Err(ReviewError::CommentTooLong { .. })
        ));
    }

    // -- committee driving --------------------------------------------------

    /// Committee member used only in this test module: returns a fixed
    /// (possibly corrupt) output, counting how often it was invoked.
    struct FixedReviewer {
        id: String,
        text: String,
        calls: std::rc::Rc<std::cell::RefCell<usize>>,
    }

    impl Reviewer for FixedReviewer {
        fn reviewer_id(&self) -> &str {
            &self.id
        }
        fn review(&mut self, _evidence: &BatchEvidence) -> Result<String, String> {
            *self.calls.borrow_mut() += 1;
            Ok(self.text.clone())
        }
    }

    fn boxed_fixed(id: &str, text: String) -> Box<dyn Reviewer> {
        Box::new(FixedReviewer {
            id: id.to_string(),
            text,
            calls: Default::default(),
        })
    }

    #[test]
    fn run_review_is_deterministic_and_drops_bad_members() {
        let lex = lexicon();
        let good = render_reviewer_output(&output_with(
            "ignored",
            Dimension::Eff,
            vec![tag("mic_potency", TagState::High, 1.0)],
        ));
        let evidence = BatchEvidence::default();

        let mut committee: Vec<Box<dyn Reviewer>> = vec![
            boxed_fixed("r1", good.clone()),
            boxed_fixed("r2", "garbage".to_string()),
            boxed_fixed("r3", good.clone()),
        ];
        let outcome = run_review(&evidence, &mut committee, &lex).unwrap();
        assert_eq!(outcome.dropped.len(), 1);
        assert_eq!(outcome.dropped[0].0, "r2");
        assert_eq!(outcome.meta.eff.meta_score, 0.25);

        // Identical committee, different order: identical meta.
        let mut reordered: Vec<Box<dyn Reviewer>> = vec![
            boxed_fixed("r3", good.clone()),
            boxed_fixed("r1", good),
        ];
        let again = run_review(&evidence, &mut reordered, &lex).unwrap();
        assert_eq!(again.meta, outcome.meta);
    }

    #[test]
    fn run_review_aborts_when_everyone_is_dropped() {
        let lex = lexicon();
        let mut committee: Vec<Box<dyn Reviewer>> =
            vec![boxed_fixed("r1", "nope".into()), boxed_fixed("r2", "".into())];
        assert!(matches!(
            run_review(&BatchEvidence::default(), &mut committee, &lex),
            Err(ReviewError::NoReviewersLeft)
        ));
    }

    #[test]
    fn failing_reviewers_get_exactly_one_retry() {
        let lex = lexicon();
        let bad_calls = std::rc::Rc::new(std::cell::RefCell::new(0));
        let good_calls = std::rc::Rc::new(std::cell::RefCell::new(0));
        let mut committee: Vec<Box<dyn Reviewer>> = vec![
            Box::new(FixedReviewer {
                id: "bad".into(),
                text: "garbage".into(),
                calls: bad_calls.clone(),
            }),
            Box::new(FixedReviewer {
                id: "good".into(),
                text: render_reviewer_output(&output_with("x", Dimension::Eff, vec![])),
                calls: good_calls.clone(),
            }),
        ];
        let outcome = run_review(&BatchEvidence::default(), &mut committee, &lex).unwrap();
        assert_eq!(outcome.dropped.len(), 1);
        assert_eq!(*bad_calls.borrow(), 2, "initial attempt plus one retry");
        assert_eq!(*good_calls.borrow(), 1);
    }

    // -- randomized oracle --------------------------------------------------

    /// Straight-line transcription of the aggregation procedure, written
    /// independently of the production code paths: flat loops, no shared
    /// helpers beyond the lexicon lookups.
    fn oracle_aggregate(reviews: &[ReviewerOutput], lex: &Lexicon) -> (Vec<[f64; 4]>, f64) {
        let mut sorted: Vec<&ReviewerOutput> = reviews.iter().collect();
        sorted.sort_by(|a, b| a.reviewer_id.cmp(&b.reviewer_id));
        let mut per_dim = Vec::new();
        let mut overall_sum = 0.0;
        for dim in [
            Dimension::Eff,
            Dimension::Safe,
            Dimension::DevStruct,
            Dimension::Orig,
        ] {
            // S-bar: mean of tag-derived scores.
            let mut score_sum = 0.0;
            for r in &sorted {
                let mut s = 0.0;
                for t in &r.dimension(dim).tags {
                    s += lex.weight(dim, &t.id, t.state).unwrap() * t.p;
                }
                score_sum += s;
            }
            let s_bar = score_sum / sorted.len() as f64;

            // Group ids by hits; >=2 hits keep sorted signs.
            let mut ids: BTreeMap<String, Vec<i8>> = BTreeMap::new();
            for r in &sorted {
                for t in &r.dimension(dim).tags {
                    ids.entry(t.id.clone()).or_default().push(lex.sign(t.state));
                }
            }
            let mut d_sum = 0.0;
            let mut d_n = 0usize;
            for (_, mut signs) in ids {
                if signs.len() < 2 {
                    continue;
                }
                signs.sort_unstable();
                let d = if signs.iter().all(|&s| s == 0) {
                    0.0
                } else {
                    let mean: f64 =
                        signs.iter().map(|&s| s as f64).sum::<f64>() / signs.len() as f64;
                    1.0 - mean.abs()
                };
                if d != 0.0 {
                    d_sum += d;
                    d_n += 1;
                }
            }
            let big_d = if d_n == 0 { 0.0 } else { d_sum / d_n as f64 };
            let mut gamma = 1.0 - 0.6 * big_d;
            if gamma < 0.6 {
                gamma = 0.6;
            }
            if gamma > 1.0 {
                gamma = 1.0;
            }
            let meta = gamma * s_bar;
            per_dim.push([s_bar, big_d, gamma, meta]);
            overall_sum += meta;
        }
        (per_dim, overall_sum / 4.0)
    }

    #[test]
    fn thousand_random_committees_match_the_oracle() {
        let lex = lexicon();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
        let all_ids: BTreeMap<Dimension, Vec<String>> = Dimension::ALL
            .iter()
            .map(|&d| (d, lex.ids(d).map(String::from).collect()))
            .collect();

        for case in 0..1000 {
            let n_reviewers = rng.random_range(1..=5);
            let mut committee = Vec::new();
            for r in 0..n_reviewers {
                let mut dims = Vec::new();
                for dim in Dimension::ALL {
                    let ids = &all_ids[&dim];
                    let n_tags = rng.random_range(0..=4usize);
                    let mut chosen: Vec<usize> = (0..ids.len()).collect();
                    // Partial shuffle for distinct ids.
                    for i in 0..n_tags {
                        let j = rng.random_range(i..chosen.len());
                        chosen.swap(i, j);
                    }
                    let tags: Vec<Tag> = (0..n_tags)
                        .map(|i| Tag {
                            id: ids[chosen[i]].clone(),
                            state: *TagState::ALL
                                .get(rng.random_range(0..3))
                                .unwrap(),
                            p: CONFIDENCE_LEVELS[rng.random_range(0..4)],
                        })
                        .collect();
                    let score = score_dimension(&tags, &lex, dim).unwrap();
                    dims.push(DimensionReview {
                        comment: format!("case {case} reviewer {r} {dim}"),
                        tags,
                        score,
                    });
                }
                let mut it = dims.into_iter();
                committee.push(ReviewerOutput {
                    reviewer_id: format!("rev-{r:02}"),
                    eff: it.next().unwrap(),
                    safe: it.next().unwrap(),
                    dev_struct: it.next().unwrap(),
                    orig: it.next().unwrap(),
                });
            }

            let meta = aggregate(&committee, &lex).unwrap();
            let (oracle_dims, oracle_overall) = oracle_aggregate(&committee, &lex);
            for (dim, want) in Dimension::ALL.iter().zip(&oracle_dims) {
                let got = meta.dimension(*dim);
                assert!((got.mean_score - want[0]).abs() < 1e-12, "case {case}");
                assert!((got.divergence - want[1]).abs() < 1e-12, "case {case}");
                assert!((got.gamma - want[2]).abs() < 1e-12, "case {case}");
                assert!((got.meta_score - want[3]).abs() < 1e-12, "case {case}");
                assert!(got.gamma >= 0.6 && got.gamma <= 1.0);
                assert!(got.mean_score >= -1.0 - 1e-12 && got.mean_score <= 1.0 + 1e-12);
            }
            assert!((meta.overall - oracle_overall).abs() < 1e-12, "case {case}");
        }
    }

    proptest! {
        /// Any sign multiset: gamma stays in [0.6, 1.0]; equal signs give
        /// gamma = 1; an even split gives d_id = 1.
        #[test]
        fn prop_gamma_bounds(signsets in proptest::collection::vec(
            proptest::collection::vec(-1i8..=1, 2..6), 0..5
        )) {
            let grouped: Vec<(String, Vec<i8>)> = signsets
                .into_iter()
                .enumerate()
                .map(|(i, mut s)| { s.sort_unstable(); (format!("id{i}"), s) })
                .collect();
            let (d, gamma) = divergence_penalty(&grouped);
            prop_assert!((0.6..=1.0).contains(&gamma));
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn prop_equal_signs_mean_full_trust(sign in -1i8..=1, n in 2usize..6) {
            let (d, gamma) = divergence_penalty(&[("x".into(), vec![sign; n])]);
            prop_assert_eq!(d, 0.0);
            prop_assert_eq!(gamma, 1.0);
        }

        #[test]
        fn prop_even_split_maximizes_divergence(n in 1usize..4) {
            let mut signs = vec![-1i8; n];
            signs.extend(vec![1i8; n]);
            let (d, gamma) = divergence_penalty(&[("x".into(), signs)]);
            prop_assert_eq!(d, 1.0);
            prop_assert!((gamma - 0.6).abs() < 1e-15);
        }
    }
}
