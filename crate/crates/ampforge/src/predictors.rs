//! Property predictors: the numeric evidence every candidate sequence is
//! judged on.
//!
//! Two families of signals come out of this module. The S record carries
//! the optimization signals — `sa`, an activity score derived from a
//! fitted MIC surrogate, and `sb`, an AMP-likeness score. The V record
//! carries reviewer evidence: `va` (toxicity), `vb` (structural
//! reliability), `vc` (a physicochemical summary string), and `vd`
//! (similarity to the template set). All numeric signals live in
//! `[0, 1]`.
//!
//! The activity surrogate is a linear least-squares fit from
//! physicochemical features to log10 MIC, squashed through a sigmoid;
//! the remaining scorers are fixed logistic functions of documented
//! features. They are deliberately small, deterministic stand-ins for
//! heavyweight external predictors — the scorer registry is the stable
//! contract that lets a real model replace any of them without touching
//! the rest of the pipeline.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::align;
use crate::physchem;
use crate::seq::{DatasetEntry, PeptideSequence};

/// Optimization signals for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    /// Activity score in [0, 1]; higher means lower predicted MIC.
    pub sa: f64,
    /// AMP-likeness in [0, 1]; `None` when the scorer is ablated.
    pub sb: Option<f64>,
}

/// Reviewer evidence for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    /// Toxicity in [0, 1], higher = more toxic; `None` when ablated.
    pub va: Option<f64>,
    /// Structural reliability in [0, 1]; `None` when ablated.
    pub vb: Option<f64>,
    /// Physicochemical summary text.
    pub vc: String,
    /// Maximum similarity to the template set, in [0, 1].
    pub vd: f64,
}

/// Which optional scorers are switched off for a run. Disabled scorers
/// disappear from the records (`None`) rather than reporting a default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub drop_sb: bool,
    pub drop_va: bool,
    pub drop_vb: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error("need at least {min} training entries to fit, got {n}")]
    TooFewEntries { n: usize, min: usize },
    #[error("no scorer named `{name}` is registered")]
    UnknownScorer { name: String },
    #[error("template set cannot be empty")]
    EmptyTemplateSet,
    #[error("evaluation failed at sequence {index}: {msg}")]
    AtSequence { index: usize, msg: String },
}

// ---------------------------------------------------------------------------
// Activity surrogate
// ---------------------------------------------------------------------------

/// Minimum training-set size for the activity fit.
pub const MIN_TRAIN_ENTRIES: usize = 10;

/// Binarization cutoff: predicted MIC ≤ 128 (in log10 space, inclusive)
/// counts as active.
pub fn active_log10_cutoff() -> f64 {
    128f64.log10()
}

/// The five physicochemical features the activity surrogate regresses
/// on, in order: length, GRAVY, net charge at pH 7, K/R fraction,
/// hydrophobic moment.
pub fn features(seq: &PeptideSequence) -> [f64; 5] {
    [
        seq.len() as f64,
        physchem::gravy(seq),
        physchem::net_charge(seq, 7.0).expect("pH 7 is in range"),
        physchem::kr_stats(seq).fraction,
        physchem::hydrophobic_moment(seq, physchem::DEFAULT_HELIX_ANGLE_DEG),
    ]
}

/// Linear map from features to predicted log10 MIC, plus the sigmoid
/// that turns predictions into an activity score.
///
/// Fitting solves ordinary least squares via SVD. When the feature
/// matrix is rank-deficient (degenerate features, e.g. every training
/// sequence identical), the fit silently falls back to a constant
/// mean-label model; [`ActivityModel::is_constant`] reports which kind
/// of model resulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    weights: [f64; 5],
    intercept: f64,
    /// Sigmoid slope; must be positive so higher predicted MIC always
    /// means a lower score.
    pub k: f64,
    /// Sigmoid midpoint in log10 MIC (1.0 = 10 µg/mL).
    pub y0: f64,
    pub train_rmse: f64,
    constant: bool,
}

/// Default sigmoid slope for the MIC→score mapping.
pub const DEFAULT_SIGMOID_K: f64 = 2.0;
/// Default sigmoid midpoint (log10 of 10 µg/mL).
pub const DEFAULT_SIGMOID_Y0: f64 = 1.0;

impl ActivityModel {
    pub fn fit(train: &[DatasetEntry]) -> Result<Self, PredictError> {
        Self::fit_with(train, DEFAULT_SIGMOID_K, DEFAULT_SIGMOID_Y0)
    }

    pub fn fit_with(train: &[DatasetEntry], k: f64, y0: f64) -> Result<Self, PredictError> {
        assert!(k > 0.0, "sigmoid slope must be positive, got {k}");
        if train.len() < MIN_TRAIN_ENTRIES {
            return Err(PredictError::TooFewEntries {
                n: train.len(),
                min: MIN_TRAIN_ENTRIES,
            });
        }
        let n = train.len();
        let mut x = DMatrix::zeros(n, 6);
        let mut y = DVector::zeros(n);
        for (i, entry) in train.iter().enumerate() {
            let f = features(&entry.seq);
            for (j, v) in f.iter().enumerate() {
                x[(i, j)] = *v;
            }
            x[(i, 5)] = 1.0; // intercept column
            y[i] = entry.label;
        }
        let mean_label = y.iter().sum::<f64>() / n as f64;

        let svd = x.clone().svd(true, true);
        let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let eps = 1e-9 * max_sv.max(1.0);
        let solved = if svd.rank(eps) < 6 {
            None
        } else {
            svd.solve(&y, eps).ok()
        };

        let (weights, intercept, constant) = match solved {
            Some(w) => ([w[0], w[1], w[2], w[3], w[4]], w[5], false),
            None => ([0.0; 5], mean_label, true),
        };
        let model = ActivityModel {
            weights,
            intercept,
            k,
            y0,
            train_rmse: 0.0,
            constant,
        };
        let rmse = (train
            .iter()
            .map(|e| {
                let d = model.predict_log_mic(&e.seq) - e.label;
                d * d
            })
            .sum::<f64>()
            / n as f64)
            .sqrt();
        Ok(ActivityModel {
            train_rmse: rmse,
            ..model
        })
    }

    /// Builds a model directly from parameters; used for configured
    /// models and tests.
    pub fn from_parts(weights: [f64; 5], intercept: f64, k: f64, y0: f64) -> Self {
        assert!(k > 0.0, "sigmoid slope must be positive, got {k}");
        ActivityModel {
            weights,
            intercept,
            k,
            y0,
            train_rmse: f64::NAN,
            constant: weights.iter().all(|&w| w == 0.0),
        }
    }

    /// True when fitting fell back to the constant mean-label model.
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn weights(&self) -> ([f64; 5], f64) {
        (self.weights, self.intercept)
    }

    /// Predicted log10 MIC.
    pub fn predict_log_mic(&self, seq: &PeptideSequence) -> f64 {
        let f = features(seq);
        self.weights.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>() + self.intercept
    }

    /// Activity score `sa = 1/(1 + exp(k·(ŷ − y0)))`: strictly
    /// decreasing in predicted log10 MIC, 0.5 at the midpoint.
    pub fn activity_score(&self, seq: &PeptideSequence) -> f64 {
        logistic(-self.k * (self.predict_log_mic(seq) - self.y0))
    }

    /// MIC-cutoff binarization; the boundary itself (predicted MIC
    /// exactly 128) is active.
    pub fn is_active(&self, seq: &PeptideSequence) -> bool {
        self.predict_log_mic(seq) <= active_log10_cutoff()
    }
}

/// Numerically stable logistic function.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Surrogate scorers
// ---------------------------------------------------------------------------

/// Coefficient tables for the three fixed surrogate scorers. The
/// `version` field travels with serialized configs so scored artifacts
/// record which table produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerCoeffs {
    pub version: u32,
    /// AMP-likeness: logistic of net charge, hydrophobic moment, and
    /// distance from the ideal length.
    pub amp_bias: f64,
    pub amp_w_charge: f64,
    pub amp_w_moment: f64,
    pub amp_w_len_dev: f64,
    pub amp_len_center: f64,
    /// Toxicity: logistic of hydrophobicity excess and aromatic
    /// clustering.
    pub tox_bias: f64,
    pub tox_w_gravy: f64,
    pub tox_w_aromatic_frac: f64,
    pub tox_w_aromatic_run: f64,
    /// Structural reliability: logistic of helix-compatible composition,
    /// helix-breaker content, and a short-length penalty.
    pub str_bias: f64,
    pub str_w_helix_frac: f64,
    pub str_w_breaker_frac: f64,
    pub str_w_short: f64,
    pub str_min_len: f64,
}

impl Default for ScorerCoeffs {
    fn default() -> Self {
        ScorerCoeffs {
            version: 1,
            amp_bias: -2.2,
            amp_w_charge: 0.45,
            amp_w_moment: 2.0,
            amp_w_len_dev: -0.12,
            amp_len_center: 25.0,
            tox_bias: -1.8,
            tox_w_gravy: 1.2,
            tox_w_aromatic_frac: 4.0,
            tox_w_aromatic_run: 0.6,
            str_bias: -1.2,
            str_w_helix_frac: 3.5,
            str_w_breaker_frac: -4.0,
            str_w_short: -0.35,
            str_min_len: 12.0,
        }
    }
}

const AROMATIC: [char; 3] = ['F', 'W', 'Y'];
/// Residues with high helix propensity.
const HELIX_FORMERS: [char; 8] = ['A', 'E', 'I', 'K', 'L', 'M', 'Q', 'R'];
/// Classic helix breakers.
const HELIX_BREAKERS: [char; 2] = ['G', 'P'];

impl ScorerCoeffs {
    /// AMP-likeness `sb`: cationic, amphipathic sequences near the
    /// typical AMP length score high.
    pub fn amp_likeness(&self, seq: &PeptideSequence) -> f64 {
        let charge = physchem::net_charge(seq, 7.0).expect("pH 7 is in range");
        let moment = physchem::hydrophobic_moment(seq, physchem::DEFAULT_HELIX_ANGLE_DEG);
        let len = seq.len() as f64;
        logistic(
            self.amp_bias
                + self.amp_w_charge * charge
                + self.amp_w_moment * moment
                + self.amp_w_len_dev * (len - self.amp_len_center).abs(),
        )
    }

    /// Toxicity `va`: overall hydrophobicity plus aromatic fraction and
    /// the longest consecutive aromatic run.
    pub fn toxicity(&self, seq: &PeptideSequence) -> f64 {
        let gravy = physchem::gravy(seq);
        let aromatic_count = seq.residues().filter(|c| AROMATIC.contains(c)).count();
        let mut max_run = 0usize;
        let mut run = 0usize;
        for c in seq.residues() {
            if AROMATIC.contains(&c) {
                run += 1;
                max_run = max_run.max(run);
            } else {
                run = 0;
            }
        }
        logistic(
            self.tox_bias
                + self.tox_w_gravy * gravy
                + self.tox_w_aromatic_frac * (aromatic_count as f64 / seq.len() as f64)
                + self.tox_w_aromatic_run * max_run as f64,
        )
    }

    /// Structural reliability `vb`: helix-former content minus breaker
    /// content, penalized when the chain is too short to fold.
    pub fn structure_reliability(&self, seq: &PeptideSequence) -> f64 {
        let n = seq.len() as f64;
        let helix = seq.residues().filter(|c| HELIX_FORMERS.contains(c)).count() as f64 / n;
        let breaker = seq.residues().filter(|c| HELIX_BREAKERS.contains(c)).count() as f64 / n;
        let shortfall = (self.str_min_len - n).max(0.0);
        logistic(
            self.str_bias
                + self.str_w_helix_frac * helix
                + self.str_w_breaker_frac * breaker
                + self.str_w_short * shortfall,
        )
    }
}

// ---------------------------------------------------------------------------
// Scorer registry
// ---------------------------------------------------------------------------

/// A pure sequence scorer with range [0, 1].
pub trait Scorer: Send + Sync {
    fn score(&self, seq: &PeptideSequence) -> f64;
}

struct AmpLikenessScorer(ScorerCoeffs);
struct ToxicityScorer(ScorerCoeffs);
struct StructureScorer(ScorerCoeffs);

impl Scorer for AmpLikenessScorer {
    fn score(&self, seq: &PeptideSequence) -> f64 {
        self.0.amp_likeness(seq)
    }
}
impl Scorer for ToxicityScorer {
    fn score(&self, seq: &PeptideSequence) -> f64 {
        self.0.toxicity(seq)
    }
}
impl Scorer for StructureScorer {
    fn score(&self, seq: &PeptideSequence) -> f64 {
        self.0.structure_reliability(seq)
    }
}

/// Scorers available to a run, keyed by the names used in run configs.
/// Registering a name again replaces the previous scorer, which is how a
/// real external predictor is dropped in for a surrogate.
pub struct ScorerRegistry {
    scorers: BTreeMap<String, Box<dyn Scorer>>,
}

/// Canonical registry names for the shipped surrogates.
pub const SCORER_AMP_LIKENESS: &str = "amp_likeness";
pub const SCORER_TOXICITY: &str = "toxicity";
pub const SCORER_STRUCTURE: &str = "structure_reliability";

impl ScorerRegistry {
    pub fn with_defaults(coeffs: ScorerCoeffs) -> Self {
        let mut registry = ScorerRegistry {
            scorers: BTreeMap::new(),
        };
        registry.register(SCORER_AMP_LIKENESS, Box::new(AmpLikenessScorer(coeffs)));
        registry.register(SCORER_TOXICITY, Box::new(ToxicityScorer(coeffs)));
        registry.register(SCORER_STRUCTURE, Box::new(StructureScorer(coeffs)));
        registry
    }

    pub fn register(&mut self, name: &str, scorer: Box<dyn Scorer>) {
        self.scorers.insert(name.to_string(), scorer);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Scorer, PredictError> {
        self.scorers
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| PredictError::UnknownScorer {
                name: name.to_string(),
            })
    }
}

/// Which registered scorer feeds each optional signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSelection {
    pub sb: String,
    pub va: String,
    pub vb: String,
}

impl Default for ScorerSelection {
    fn default() -> Self {
        ScorerSelection {
            sb: SCORER_AMP_LIKENESS.to_string(),
            va: SCORER_TOXICITY.to_string(),
            vb: SCORER_STRUCTURE.to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

/// The reference peptides candidates are compared against: the
/// lowest-label (best observed MIC) training entries, at most ten,
/// sorted ascending by label (ties broken by sequence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    templates: Vec<DatasetEntry>,
}

/// Maximum number of templates retained.
pub const TEMPLATE_COUNT: usize = 10;

impl TemplateSet {
    pub fn from_training(entries: &[DatasetEntry]) -> Result<Self, PredictError> {
        if entries.is_empty() {
            return Err(PredictError::EmptyTemplateSet);
        }
        let mut sorted: Vec<DatasetEntry> = entries.to_vec();
        sorted.sort_by(|a, b| {
            a.label
                .partial_cmp(&b.label)
                .expect("labels are finite")
                .then_with(|| a.seq.as_str().cmp(b.seq.as_str()))
        });
        sorted.truncate(TEMPLATE_COUNT);
        Ok(TemplateSet { templates: sorted })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.templates
    }
}

/// `vd`: maximum alignment similarity between the candidate and any
/// template.
pub fn template_similarity(
    seq: &PeptideSequence,
    templates: &TemplateSet,
) -> Result<f64, PredictError> {
    if templates.is_empty() {
        return Err(PredictError::EmptyTemplateSet);
    }
    Ok(templates
        .templates
        .iter()
        .map(|e| align::nw_similarity(seq, &e.seq))
        .fold(f64::NEG_INFINITY, f64::max))
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

/// Scores a batch. Outputs are positional: `signals[i]` and
/// `evidence[i]` describe `seqs[i]`. Evaluation is sequential and
/// deterministic; every scorer is pure, so fanning out would not change
/// the results.
pub fn evaluate_batch(
    seqs: &[PeptideSequence],
    model: &ActivityModel,
    registry: &ScorerRegistry,
    selection: &ScorerSelection,
    ablation: Ablation,
    templates: &TemplateSet,
) -> Result<(Vec<SignalRecord>, Vec<EvidenceRecord>), PredictError> {
    // Resolve scorers up front so a bad name fails before any work.
    let sb = if ablation.drop_sb {
        None
    } else {
        Some(registry.get(&selection.sb)?)
    };
    let va = if ablation.drop_va {
        None
    } else {
        Some(registry.get(&selection.va)?)
    };
    let vb = if ablation.drop_vb {
        None
    } else {
        Some(registry.get(&selection.vb)?)
    };

    let mut signals = Vec::with_capacity(seqs.len());
    let mut evidence = Vec::with_capacity(seqs.len());
    for (index, seq) in seqs.iter().enumerate() {
        let vd = template_similarity(seq, templates).map_err(|e| PredictError::AtSequence {
            index,
            msg: e.to_string(),
        })?;
        signals.push(SignalRecord {
            sa: model.activity_score(seq),
            sb: sb.map(|s| s.score(seq)),
        });
        evidence.push(EvidenceRecord {
            va: va.map(|s| s.score(seq)),
            vb: vb.map(|s| s.score(seq)),
            vc: physchem::profile(seq).summary_text(),
            vd,
        });
    }
    Ok((signals, evidence))
}
