//! The staged closed loop: cold start, sandboxed reward co-design, outer
//! policy training, and final generation with selection.
//!
//! Every evaluated epoch — one cold-start batch, every sandbox epoch,
//! every outer epoch — appends exactly one six-field entry to an
//! append-only audit log. The entry carries everything needed to
//! recompute its reward (`f`, `sa`, `sb`, `sc`) plus the meta-review
//! text `t`, so a finished run can be verified offline by [`replay`]
//! without touching the models that produced it.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    assemble_prompt, critic_profile, default_committee, default_prompt_schema, designer_profile,
    parse_reward_block, reviewer_profile, AgentError, CriticInput, CriticVerdict, DesignerInput,
    InjectablePack, PromptLog, ProposalCritic, RemoteAgent, RemoteAgentConfig, RemoteCritic,
    RemoteDesigner, RemoteReviewer, RewardDesigner, ScriptedCritic, ScriptedDesigner,
};
use crate::policy::{
    ppo_step, ArchConfig, PolicyError, PolicyModel, PpoConfig, Snapshot, Trajectory,
};
use crate::predictors::{
    evaluate_batch, Ablation, ActivityModel, PredictError, ScorerCoeffs, ScorerRegistry,
    ScorerSelection, SignalRecord, TemplateSet,
};
use crate::review::{
    self, BatchEvidence, EvidenceItem, Lexicon, LexiconError, ReviewError, Reviewer,
};
use crate::rewarddsl::{self, CompileError, EvalContext, SignalSet, ValidatedExpr};
use crate::seq::{self, DatasetEntry, DatasetError, PeptideSequence};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid run configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("reward expression rejected: {0}")]
    Reward(#[from] CompileError),
    #[error("artifact I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report I/O: {0}")]
    Csv(#[from] csv::Error),
    #[error("candidate set is empty; nothing to select")]
    EmptyCandidateSet,
    #[error("audit log holds no entries")]
    EmptyLog,
    #[error("malformed audit log at line {line}: {msg}")]
    MalformedLog { line: usize, msg: String },
}

// ---------------------------------------------------------------------------
// Audit log
// ---------------------------------------------------------------------------

/// Which phase produced a log entry: a numbered outer stage, or sandbox
/// training inside the adaptive inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Outer(u8),
    Inner,
}

impl Stage {
    pub fn label(&self) -> String {
        match self {
            Stage::Outer(n) => n.to_string(),
            Stage::Inner => "IN".to_string(),
        }
    }

    pub fn parse(text: &str) -> Option<Stage> {
        if text == "IN" {
            return Some(Stage::Inner);
        }
        text.parse::<u8>().ok().map(Stage::Outer)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for Stage {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Stage {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Stage, D::Error> {
        let text = String::deserialize(deserializer)?;
        Stage::parse(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid stage label `{text}`")))
    }
}

/// One audited epoch. Exactly these six fields, serialized in
/// declaration order: the serialized reward in force, the batch-mean
/// activity and likeness signals, the committee consensus, and the
/// meta-review text the consensus was distilled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub stage: Stage,
    pub f: String,
    pub sa: f64,
    pub sb: Option<f64>,
    pub sc: f64,
    pub t: String,
}

const ENTRY_FIELDS: [&str; 6] = ["stage", "f", "sa", "sb", "sc", "t"];

/// Rejects anything but an object carrying exactly the six audit
/// fields; an absent optional field is a shape violation, not a default.
fn check_entry_shape(value: &serde_json::Value) -> Result<(), String> {
    let map = value
        .as_object()
        .ok_or_else(|| "entry is not a JSON object".to_string())?;
    for field in ENTRY_FIELDS {
        if !map.contains_key(field) {
            return Err(format!("missing field `{field}`"));
        }
    }
    if map.len() != ENTRY_FIELDS.len() {
        let extra: Vec<&str> = map
            .keys()
            .map(String::as_str)
            .filter(|k| !ENTRY_FIELDS.contains(k))
            .collect();
        return Err(format!("unexpected fields: {}", extra.join(", ")));
    }
    Ok(())
}

fn parse_entry_line(line: &str) -> Result<LogEntry, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    check_entry_shape(&value)?;
    serde_json::from_value(value).map_err(|e| e.to_string())
}

/// Append-only JSONL writer with an in-memory mirror of what was
/// written. There is a single appender per run; entries are totally
/// ordered by the sequence of `append` calls.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: File,
    entries: Vec<LogEntry>,
}

impl AuditLog {
    /// Creates (or truncates) the log file.
    pub fn create(path: PathBuf) -> Result<AuditLog, OrchestratorError> {
        let file = File::create(&path)?;
        Ok(AuditLog {
            path,
            file,
            entries: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    /// Appends one entry and flushes, so the file is complete up to the
    /// last accepted entry even if the run aborts later.
    pub fn append(&mut self, entry: LogEntry) -> Result<(), OrchestratorError> {
        let line = serde_json::to_string(&entry)?;
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        self.entries.push(entry);
        Ok(())
    }

    /// Strict reload: every non-blank line must hold exactly the six
    /// audit fields.
    pub fn load(path: &Path) -> Result<Vec<LogEntry>, OrchestratorError> {
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = parse_entry_line(line)
                .map_err(|msg| OrchestratorError::MalformedLog { line: i + 1, msg })?;
            entries.push(entry);
        }
        Ok(entries)
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Loop-shape constants. All of them must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    /// Reward candidates proposed per inner round.
    pub candidates: usize,
    /// Inner co-design rounds per stage.
    pub inner_rounds: usize,
    /// Designer/critic turns available to validate one candidate.
    pub dialog_max: usize,
    /// Training epochs per sandbox.
    pub u_sandbox: usize,
    /// Outer training epochs per stage.
    pub u_outer: usize,
    /// Number of outer stages.
    pub stages: usize,
    /// Sequences sampled per training batch.
    pub batch: usize,
    /// Sequences sampled for the final generation.
    pub generation: usize,
    /// Size of the final selection.
    pub top_k_select: usize,
}

impl Default for StageConfig {
    fn default() -> StageConfig {
        StageConfig {
            candidates: 3,
            inner_rounds: 3,
            dialog_max: 4,
            u_sandbox: 5,
            u_outer: 15,
            stages: 3,
            batch: 64,
            generation: 1000,
            top_k_select: 30,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let fields = [
            ("candidates", self.candidates),
            ("inner_rounds", self.inner_rounds),
            ("dialog_max", self.dialog_max),
            ("u_sandbox", self.u_sandbox),
            ("u_outer", self.u_outer),
            ("stages", self.stages),
            ("batch", self.batch),
            ("generation", self.generation),
            ("top_k_select", self.top_k_select),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(OrchestratorError::BadConfig(format!(
                    "stage constant `{name}` must be positive"
                )));
            }
        }
        if self.stages > 255 {
            return Err(OrchestratorError::BadConfig(
                "at most 255 stages are supported".to_string(),
            ));
        }
        Ok(())
    }
}

/// Who plays the reviewer, designer, and critic roles.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AgentMode {
    #[default]
    Scripted,
    Remote {
        endpoint: String,
        #[serde(default)]
        token_env: Option<String>,
    },
}

/// Everything a run needs: dataset and output locations, the loop
/// shape, model and optimizer settings, and the ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub stage: StageConfig,
    pub arch: ArchConfig,
    pub ppo: PpoConfig,
    pub ablation: Ablation,
    /// Committee members excluded from every review.
    pub drop_reviewers: Vec<String>,
    /// Skip the adaptive inner loop; train on the seed reward only.
    pub no_adaptive: bool,
    /// Keep the inner loop but take the first accepted candidate
    /// instead of arbitrating between sandboxes.
    pub no_decision_agent: bool,
    /// Magnitude offset applied to every lexicon weight.
    pub lexicon_offset: f64,
    pub agents: AgentMode,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            dataset: PathBuf::new(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            stage: StageConfig::default(),
            arch: ArchConfig::default(),
            ppo: PpoConfig::default(),
            ablation: Ablation::default(),
            drop_reviewers: Vec::new(),
            no_adaptive: false,
            no_decision_agent: false,
            lexicon_offset: 0.0,
            agents: AgentMode::Scripted,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, OrchestratorError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Which signals reward expressions may reference in this run.
    pub fn allowed_signals(&self) -> SignalSet {
        SignalSet {
            sa: true,
            sb: !self.ablation.drop_sb,
            sc: true,
        }
    }

    /// The hand-written warm-up reward used before any co-design.
    pub fn seed_reward_source(&self) -> &'static str {
        if self.ablation.drop_sb {
            "0.6*sa + 0.4*sc"
        } else {
            "0.5*sa + 0.3*sb + 0.2*sc"
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |msg: String| Err(OrchestratorError::BadConfig(msg));
        if self.dataset.as_os_str().is_empty() {
            return bad("a dataset path is required".to_string());
        }
        if self.out_dir.as_os_str().is_empty() {
            return bad("an output directory is required".to_string());
        }
        self.stage.validate()?;
        let a = &self.arch;
        if a.layers == 0 || a.heads == 0 || a.width == 0 || a.max_len == 0 {
            return bad("model dimensions must be positive".to_string());
        }
        if a.width % a.heads != 0 {
            return bad(format!(
                "width {} is not divisible by head count {}",
                a.width, a.heads
            ));
        }
        let p = &self.ppo;
        if !(p.epsilon > 0.0 && p.learning_rate > 0.0 && p.grad_clip > 0.0 && p.std_guard > 0.0) {
            return bad("optimizer constants must be positive".to_string());
        }
        if p.c_value < 0.0 || p.c_entropy < 0.0 {
            return bad("loss coefficients must be non-negative".to_string());
        }
        let d = &p.decoding;
        if !d.greedy && d.temperature <= 0.0 {
            return bad("sampling temperature must be positive".to_string());
        }
        if d.top_k == 0 || !(d.top_p > 0.0 && d.top_p <= 1.0) {
            return bad("decoding truncation must satisfy top_k >= 1 and 0 < top_p <= 1".to_string());
        }
        if !self.lexicon_offset.is_finite() {
            return bad("the lexicon weight offset must be finite".to_string());
        }
        if let AgentMode::Remote { endpoint, .. } = &self.agents {
            if endpoint.trim().is_empty() {
                return bad("remote agent mode needs an endpoint".to_string());
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Role wiring
// ---------------------------------------------------------------------------

/// The fitted predictors and the agent roster for one run.
pub struct Modules {
    pub activity: ActivityModel,
    pub registry: ScorerRegistry,
    pub selection: ScorerSelection,
    pub templates: TemplateSet,
    pub lexicon: Lexicon,
    pub reviewers: Vec<Box<dyn Reviewer>>,
    pub designer: Box<dyn RewardDesigner>,
    pub critic: Box<dyn ProposalCritic>,
}

fn filter_committee(
    mut committee: Vec<Box<dyn Reviewer>>,
    drop: &[String],
) -> Result<Vec<Box<dyn Reviewer>>, OrchestratorError> {
    for id in drop {
        let before = committee.len();
        committee.retain(|r| r.reviewer_id() != id.as_str());
        if committee.len() == before {
            return Err(OrchestratorError::BadConfig(format!(
                "dropped reviewer `{id}` matches no committee member"
            )));
        }
    }
    if committee.is_empty() {
        return Err(OrchestratorError::BadConfig(
            "every committee member was dropped; reviews are impossible".to_string(),
        ));
    }
    Ok(committee)
}

/// The knowledge pack injected into every assembled role prompt.
fn default_pack() -> InjectablePack {
    InjectablePack {
        version: 1,
        lexicon_ref: "default_lexicon.json".to_string(),
        dimension_definitions: "Eff: antimicrobial efficacy evidence. Safe: toxicity and \
                                hemolysis margins. DevStruct: structural plausibility for \
                                development. Orig: novelty relative to known templates."
            .to_string(),
        stage_guidance: "Stage 0 explores peptide-likeness, stage 1 balances the signals, \
                         stage 2 converges on predicted activity."
            .to_string(),
    }
}

fn remote_agent(
    endpoint: &str,
    token_env: &Option<String>,
) -> Result<RemoteAgent, OrchestratorError> {
    Ok(RemoteAgent::new(RemoteAgentConfig {
        endpoint: endpoint.to_string(),
        token_env: token_env.clone(),
        ..RemoteAgentConfig::default()
    })?)
}

impl Modules {
    fn shared(
        train: &[DatasetEntry],
        cfg: &RunConfig,
    ) -> Result<(ActivityModel, ScorerRegistry, TemplateSet, Lexicon), OrchestratorError> {
        Ok((
            ActivityModel::fit(train)?,
            ScorerRegistry::with_defaults(ScorerCoeffs::default()),
            TemplateSet::from_training(train)?,
            Lexicon::default_lexicon().with_weight_offset(cfg.lexicon_offset),
        ))
    }

    /// Deterministic in-process roster: persona reviewers, the
    /// template-driven designer, and the validator-backed critic.
    pub fn scripted(train: &[DatasetEntry], cfg: &RunConfig) -> Result<Modules, OrchestratorError> {
        let (activity, registry, templates, lexicon) = Modules::shared(train, cfg)?;
        let reviewers = filter_committee(default_committee(&lexicon), &cfg.drop_reviewers)?;
        Ok(Modules {
            activity,
            registry,
            selection: ScorerSelection::default(),
            templates,
            lexicon,
            reviewers,
            designer: Box::new(ScriptedDesigner),
            critic: Box::new(ScriptedCritic::new(cfg.allowed_signals())),
        })
    }

    /// Same predictors, with every agent role served over HTTP.
    pub fn remote(
        train: &[DatasetEntry],
        cfg: &RunConfig,
        endpoint: &str,
        token_env: &Option<String>,
    ) -> Result<Modules, OrchestratorError> {
        let (activity, registry, templates, lexicon) = Modules::shared(train, cfg)?;
        let schema = default_prompt_schema();
        let pack = default_pack();
        let reviewer_prompt = assemble_prompt(&reviewer_profile(), &schema, &pack)?;
        let mut committee: Vec<Box<dyn Reviewer>> = Vec::new();
        for id in ["rev-optimist", "rev-moderate", "rev-skeptic"] {
            committee.push(Box::new(RemoteReviewer::new(
                id,
                reviewer_prompt.clone(),
                remote_agent(endpoint, token_env)?,
            )));
        }
        let reviewers = filter_committee(committee, &cfg.drop_reviewers)?;
        Ok(Modules {
            activity,
            registry,
            selection: ScorerSelection::default(),
            templates,
            lexicon,
            reviewers,
            designer: Box::new(RemoteDesigner::new(
                assemble_prompt(&designer_profile(), &schema, &pack)?,
                remote_agent(endpoint, token_env)?,
            )),
            critic: Box::new(RemoteCritic::new(
                assemble_prompt(&critic_profile(), &schema, &pack)?,
                remote_agent(endpoint, token_env)?,
            )),
        })
    }
}

// ---------------------------------------------------------------------------
// Candidate selection
// ---------------------------------------------------------------------------

/// Picks the winning sandbox from final-epoch signal means `(sa, sb, sc)`.
/// Dominated candidates are dropped, the best component mean wins, mean
/// ties fall back to lexicographic `(sa, sc, sb)`, and remaining ties
/// keep the earliest candidate. The likeness component participates only
/// when every candidate carries it.
pub fn pareto_select(finals: &[(f64, Option<f64>, f64)]) -> Result<usize, OrchestratorError> {
    if finals.is_empty() {
        return Err(OrchestratorError::EmptyCandidateSet);
    }
    let with_sb = finals.iter().all(|(_, sb, _)| sb.is_some());
    let comps: Vec<Vec<f64>> = finals
        .iter()
        .map(|&(sa, sb, sc)| {
            if with_sb {
                vec![sa, sb.unwrap_or_default(), sc]
            } else {
                vec![sa, sc]
            }
        })
        .collect();
    let dominated = |i: usize| {
        comps.iter().enumerate().any(|(j, c)| {
            j != i
                && c.iter().zip(&comps[i]).all(|(a, b)| a >= b)
                && c.iter().zip(&comps[i]).any(|(a, b)| a > b)
        })
    };
    let mean = |k: usize| comps[k].iter().sum::<f64>() / comps[k].len() as f64;
    let lex_key = |k: usize| {
        let (sa, sb, sc) = finals[k];
        (sa, sc, sb.unwrap_or(f64::NEG_INFINITY))
    };

    let mut best: Option<usize> = None;
    for i in 0..finals.len() {
        if dominated(i) {
            continue;
        }
        best = Some(match best {
            None => i,
            Some(b) => {
                let ord = mean(i).total_cmp(&mean(b)).then_with(|| {
                    let (a1, a2, a3) = lex_key(i);
                    let (b1, b2, b3) = lex_key(b);
                    a1.total_cmp(&b1)
                        .then(a2.total_cmp(&b2))
                        .then(a3.total_cmp(&b3))
                });
                // Strictly-greater replacement keeps the earliest
                // candidate across full ties.
                if ord == Ordering::Greater {
                    i
                } else {
                    b
                }
            }
        });
    }
    // A maximal-mean candidate can never be dominated, so one survivor
    // always exists.
    Ok(best.expect("non-empty candidate sets have a non-dominated member"))
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Stream ids for the run's random sources: parameter initialization
/// uses the seed's default stream, the main loop a fixed stream, and
/// every sandbox a stream derived from its coordinates so candidates
/// could train concurrently without sharing a generator.
const MAIN_STREAM: u64 = 2;

fn sandbox_stream(stage: usize, round: usize, candidate: usize) -> u64 {
    1 | ((stage as u64 & 0xFF) << 8)
        | ((round as u64 & 0xFFFF) << 16)
        | ((candidate as u64 & 0xFFFF) << 32)
}

fn decode_trajectory(t: &Trajectory) -> PeptideSequence {
    PeptideSequence::parse(&t.residues()).expect("the sampler emits canonical residues only")
}

/// Per-candidate rewards under one expression: individual activity and
/// likeness, with the batch-level consensus shared across the batch.
pub fn rewards_for(f: &ValidatedExpr, signals: &[SignalRecord], sc: f64) -> Vec<f64> {
    signals
        .iter()
        .map(|s| f.evaluate(&EvalContext::new(s.sa, s.sb, sc)))
        .collect()
}

/// One evaluated batch: per-sequence signals plus the committee verdict.
struct BatchOutcome {
    signals: Vec<SignalRecord>,
    sa_mean: f64,
    sb_mean: Option<f64>,
    sc: f64,
    t_text: String,
}

/// A selected sequence with the activity score it was ranked by.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedCandidate {
    pub sequence: String,
    pub sa: f64,
}

/// One generated sequence with every predictor output, dumped so the
/// final selection can be recomputed offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub seq: String,
    pub sa: f64,
    pub sb: Option<f64>,
    pub va: Option<f64>,
    pub vb: Option<f64>,
    pub vc: String,
    pub vd: f64,
}

/// Where a finished run left its artifacts, plus the in-memory results.
#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub audit_path: PathBuf,
    pub report_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub fasta_path: PathBuf,
    pub generation_path: PathBuf,
    pub selected: Vec<SelectedCandidate>,
    pub report: RunReport,
}

/// First-occurrence dedup on exact sequence identity, then rank by
/// activity (descending) with ties broken alphabetically.
pub fn select_top(records: &[GenerationRecord], k: usize) -> Vec<SelectedCandidate> {
    let mut seen = BTreeSet::new();
    let mut unique: Vec<&GenerationRecord> = Vec::new();
    for record in records {
        if seen.insert(record.seq.as_str()) {
            unique.push(record);
        }
    }
    unique.sort_by(|a, b| b.sa.total_cmp(&a.sa).then_with(|| a.seq.cmp(&b.seq)));
    unique
        .into_iter()
        .take(k)
        .map(|r| SelectedCandidate {
            sequence: r.seq.clone(),
            sa: r.sa,
        })
        .collect()
}

fn write_fasta(path: &Path, selected: &[SelectedCandidate]) -> std::io::Result<()> {
    let mut out = String::new();
    for (i, cand) in selected.iter().enumerate() {
        let _ = writeln!(out, ">cand_{:04} sa={}", i + 1, cand.sa);
        let _ = writeln!(out, "{}", cand.sequence);
    }
    fs::write(path, out)
}

fn write_prompt_log(out_dir: &Path) -> Result<(), OrchestratorError> {
    let log = PromptLog::new(out_dir.join("prompts.log"));
    fs::write(log.path(), "")?;
    let schema = default_prompt_schema();
    let pack = default_pack();
    for (role, profile) in [
        ("reviewer", reviewer_profile()),
        ("designer", designer_profile()),
        ("critic", critic_profile()),
    ] {
        log.append(role, &assemble_prompt(&profile, &schema, &pack)?)?;
    }
    Ok(())
}

/// The run driver. Methods are public so tests can exercise the phases
/// in isolation; [`run_pipeline`] is the production entry point.
pub struct Pipeline {
    cfg: RunConfig,
    modules: Modules,
    policy: PolicyModel,
    rng: ChaCha8Rng,
    log: AuditLog,
    incidents: Vec<String>,
    train: Vec<DatasetEntry>,
    current_f: ValidatedExpr,
}

impl Pipeline {
    /// Loads and splits the dataset, fits the predictors, wires the
    /// agent roster, and persists the resolved configuration and the
    /// assembled role prompts next to the future artifacts.
    pub fn new(cfg: RunConfig) -> Result<Pipeline, OrchestratorError> {
        cfg.validate()?;
        let text = fs::read_to_string(&cfg.dataset)?;
        let (records, _excluded) = seq::parse_mic_tsv(&text)?;
        let entries = seq::preprocess(&records);
        let split = seq::split_dataset(&entries, cfg.seed)?;
        fs::create_dir_all(&cfg.out_dir)?;

        let modules = match &cfg.agents {
            AgentMode::Scripted => Modules::scripted(&split.train, &cfg)?,
            AgentMode::Remote {
                endpoint,
                token_env,
            } => Modules::remote(&split.train, &cfg, endpoint, token_env)?,
        };

        fs::write(
            cfg.out_dir.join("config.json"),
            serde_json::to_string_pretty(&cfg)?,
        )?;
        write_prompt_log(&cfg.out_dir)?;

        let policy = PolicyModel::init(&cfg.arch, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(MAIN_STREAM);
        let log = AuditLog::create(cfg.out_dir.join("audit.jsonl"))?;
        let current_f = rewarddsl::compile(cfg.seed_reward_source(), cfg.allowed_signals())?;

        Ok(Pipeline {
            modules,
            policy,
            rng,
            log,
            incidents: Vec::new(),
            train: split.train,
            current_f,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn log(&self) -> &AuditLog {
        &self.log
    }

    pub fn policy(&self) -> &PolicyModel {
        &self.policy
    }

    pub fn incidents(&self) -> &[String] {
        &self.incidents
    }

    /// The reward expression currently in force.
    pub fn current_reward(&self) -> &ValidatedExpr {
        &self.current_f
    }

    fn sandbox_rng(&self, stage: usize, round: usize, candidate: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(sandbox_stream(stage, round, candidate));
        rng
    }

    /// Scores a batch with the predictors, runs the committee over the
    /// assembled evidence, and reduces to the logged quantities.
    fn evaluate_and_review(
        &mut self,
        seqs: &[PeptideSequence],
    ) -> Result<BatchOutcome, OrchestratorError> {
        let (signals, evidence) = evaluate_batch(
            seqs,
            &self.modules.activity,
            &self.modules.registry,
            &self.modules.selection,
            self.cfg.ablation,
            &self.modules.templates,
        )?;
        let items = seqs
            .iter()
            .zip(&signals)
            .zip(&evidence)
            .map(|((seq, sig), ev)| EvidenceItem {
                sequence: seq.as_str().to_string(),
                sa: sig.sa,
                sb: sig.sb,
                va: ev.va,
                vb: ev.vb,
                vc: ev.vc.clone(),
                vd: ev.vd,
            })
            .collect();
        let batch = BatchEvidence { items };
        let outcome = review::run_review(&batch, &mut self.modules.reviewers, &self.modules.lexicon)?;
        for (id, reason) in &outcome.dropped {
            self.incidents
                .push(format!("reviewer {id} dropped for one batch: {reason}"));
        }
        let means = batch.means().expect("reviewed batches are never empty");
        Ok(BatchOutcome {
            signals,
            sa_mean: means.sa,
            sb_mean: means.sb,
            sc: outcome.meta.overall.clamp(0.0, 1.0),
            t_text: outcome.meta.t_text,
        })
    }

    /// The known peptides the run warms up on: the lowest-label (most
    /// active) training entries, up to one batch.
    fn cold_start_batch(&self) -> Vec<PeptideSequence> {
        let mut by_label: Vec<&DatasetEntry> = self.train.iter().collect();
        by_label.sort_by(|a, b| {
            a.label
                .total_cmp(&b.label)
                .then_with(|| a.seq.as_str().cmp(b.seq.as_str()))
        });
        by_label
            .iter()
            .take(self.cfg.stage.batch.min(by_label.len()))
            .map(|e| e.seq.clone())
            .collect()
    }

    /// Evaluates one batch of known actives under the seed reward and
    /// logs the first entry, giving the designer something to react to.
    pub fn cold_start(&mut self) -> Result<(), OrchestratorError> {
        let seqs = self.cold_start_batch();
        let outcome = self.evaluate_and_review(&seqs)?;
        let entry = LogEntry {
            stage: Stage::Outer(0),
            f: self.current_f.source(),
            sa: outcome.sa_mean,
            sb: outcome.sb_mean,
            sc: outcome.sc,
            t: outcome.t_text,
        };
        self.log.append(entry)
    }

    /// Up to `dialog_max` designer/critic turns for one candidate slot.
    /// The designer sees the logged signal means and round feedback; the
    /// critic sees the proposal and the meta-review text. A candidate
    /// that never passes both the critic and the validator yields `None`.
    fn co_design(
        &mut self,
        stage: usize,
        round: usize,
        candidate: usize,
        feedback: Option<String>,
    ) -> Result<Option<ValidatedExpr>, OrchestratorError> {
        let last = self
            .log
            .entries()
            .last()
            .cloned()
            .ok_or(OrchestratorError::EmptyLog)?;
        let mut fb = feedback;
        for _turn in 0..self.cfg.stage.dialog_max {
            let input = DesignerInput {
                stage,
                round,
                candidate,
                prev_f: self.current_f.source(),
                sa: last.sa,
                sb: last.sb,
                sc: last.sc,
                feedback: fb.clone(),
            };
            let block = self.modules.designer.propose(&input)?;
            let src = match parse_reward_block(&block) {
                Ok(src) => src,
                Err(e) => {
                    fb = Some(format!("the response was not a single reward block: {e}"));
                    continue;
                }
            };
            let verdict = self.modules.critic.critique(&CriticInput {
                stage,
                proposal: src.clone(),
                meta_review: last.t.clone(),
            })?;
            match verdict {
                CriticVerdict::Pass => match rewarddsl::compile(&src, self.cfg.allowed_signals()) {
                    Ok(f) => return Ok(Some(f)),
                    Err(e) => fb = Some(format!("the proposal failed validation: {e}")),
                },
                CriticVerdict::Revise { comments } => fb = Some(comments),
            }
        }
        Ok(None)
    }

    /// Trains a fresh restore of `snapshot` for `u_sandbox` epochs under
    /// a candidate reward. Returns the epoch entries (not yet appended)
    /// and the final-epoch signal means the decision is made on.
    fn sandbox_train(
        &mut self,
        f: &ValidatedExpr,
        snapshot: &Snapshot,
        stage: usize,
        round: usize,
        candidate: usize,
    ) -> Result<(Vec<LogEntry>, (f64, Option<f64>, f64)), OrchestratorError> {
        let mut model = PolicyModel::restore(snapshot);
        let mut rng = self.sandbox_rng(stage, round, candidate);
        let mut entries = Vec::with_capacity(self.cfg.stage.u_sandbox);
        let mut last = (0.0, None, 0.0);
        for epoch in 0..self.cfg.stage.u_sandbox {
            let trajs = model.sample_batch(self.cfg.stage.batch, &self.cfg.ppo.decoding, &mut rng);
            let seqs: Vec<PeptideSequence> = trajs.iter().map(decode_trajectory).collect();
            let outcome = self.evaluate_and_review(&seqs)?;
            let rewards = rewards_for(f, &outcome.signals, outcome.sc);
            match ppo_step(&mut model, &trajs, &rewards, &self.cfg.ppo) {
                Ok(_) => {}
                Err(PolicyError::NonFiniteLoss { detail }) => self.incidents.push(format!(
                    "stage {stage} round {round} candidate {candidate} epoch {epoch}: \
                     update skipped ({detail})"
                )),
                Err(e) => return Err(e.into()),
            }
            entries.push(LogEntry {
                stage: Stage::Inner,
                f: f.source(),
                sa: outcome.sa_mean,
                sb: outcome.sb_mean,
                sc: outcome.sc,
                t: outcome.t_text,
            });
            last = (outcome.sa_mean, outcome.sb_mean, outcome.sc);
        }
        Ok((entries, last))
    }

    /// One adaptive inner loop: per round, co-design up to `candidates`
    /// reward expressions, train each in an isolated sandbox, log the
    /// sandbox epochs, and adopt the winning expression. The outer
    /// policy is never touched; a round with no accepted candidate
    /// keeps the incumbent reward and records the incident.
    pub fn run_inner_loop(&mut self, stage: usize) -> Result<(), OrchestratorError> {
        let hash_before = self.policy.params_hash();
        let mut feedback: Option<String> = None;
        for round in 0..self.cfg.stage.inner_rounds {
            let mut candidates: Vec<ValidatedExpr> = Vec::new();
            for cand in 0..self.cfg.stage.candidates {
                match self.co_design(stage, round, cand, feedback.clone())? {
                    Some(f) => {
                        candidates.push(f);
                        // Without the decision agent there is nothing to
                        // arbitrate: the first accepted proposal wins.
                        if self.cfg.no_decision_agent {
                            break;
                        }
                    }
                    None => self.incidents.push(format!(
                        "stage {stage} round {round}: candidate {cand} exhausted its {} dialog turns",
                        self.cfg.stage.dialog_max
                    )),
                }
            }
            if candidates.is_empty() {
                self.incidents.push(format!(
                    "stage {stage} round {round}: no accepted reward; keeping {}",
                    self.current_f.source()
                ));
                feedback = Some(format!(
                    "every proposal was rejected; the incumbent reward {} stays in force",
                    self.current_f.source()
                ));
                continue;
            }

            let snapshot = self.policy.snapshot();
            let mut staged: Vec<(usize, usize, LogEntry)> = Vec::new();
            let mut finals: Vec<(f64, Option<f64>, f64)> = Vec::new();
            for (ci, f) in candidates.iter().enumerate() {
                let (entries, last_means) = self.sandbox_train(f, &snapshot, stage, round, ci)?;
                for (epoch, entry) in entries.into_iter().enumerate() {
                    staged.push((epoch, ci, entry));
                }
                finals.push(last_means);
            }
            // Total order within the round: epoch first, candidate second.
            staged.sort_by_key(|&(epoch, ci, _)| (epoch, ci));
            for (_, _, entry) in staged {
                self.log.append(entry)?;
            }

            let winner = if self.cfg.no_decision_agent {
                0
            } else {
                pareto_select(&finals)?
            };
            let (wa, wb, wc) = finals[winner];
            self.current_f = candidates[winner].clone();
            feedback = Some(format!(
                "round {round} winner: {} (mean sa {:.4}, sb {}, sc {:.4})",
                self.current_f.source(),
                wa,
                wb.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".to_string()),
                wc
            ));
        }
        debug_assert_eq!(
            self.policy.params_hash(),
            hash_before,
            "inner-loop sandboxes must not touch the outer policy"
        );
        Ok(())
    }

    /// Outer training: `u_outer` epochs of sample → evaluate → review →
    /// reward → one update, each logged under the stage's label. An
    /// epoch whose loss is non-finite is logged but applies no update.
    pub fn run_outer_train(&mut self, stage: usize) -> Result<(), OrchestratorError> {
        let label = u8::try_from(stage).map_err(|_| {
            OrchestratorError::BadConfig(format!("stage index {stage} exceeds the label range"))
        })?;
        for epoch in 0..self.cfg.stage.u_outer {
            let trajs =
                self.policy
                    .sample_batch(self.cfg.stage.batch, &self.cfg.ppo.decoding, &mut self.rng);
            let seqs: Vec<PeptideSequence> = trajs.iter().map(decode_trajectory).collect();
            let outcome = self.evaluate_and_review(&seqs)?;
            let rewards = rewards_for(&self.current_f, &outcome.signals, outcome.sc);
            match ppo_step(&mut self.policy, &trajs, &rewards, &self.cfg.ppo) {
                Ok(_) => {}
                Err(PolicyError::NonFiniteLoss { detail }) => self.incidents.push(format!(
                    "stage {stage} epoch {epoch}: update skipped ({detail})"
                )),
                Err(e) => return Err(e.into()),
            }
            self.log.append(LogEntry {
                stage: Stage::Outer(label),
                f: self.current_f.source(),
                sa: outcome.sa_mean,
                sb: outcome.sb_mean,
                sc: outcome.sc,
                t: outcome.t_text,
            })?;
        }
        Ok(())
    }

    /// Everything after construction: cold start, the staged loops, and
    /// final artifact generation.
    pub fn execute(mut self) -> Result<RunArtifacts, OrchestratorError> {
        self.cold_start()?;
        for stage in 0..self.cfg.stage.stages {
            if !self.cfg.no_adaptive {
                self.run_inner_loop(stage)?;
            }
            self.run_outer_train(stage)?;
        }
        self.finalize()
    }

    /// Generates the final pool, dumps every record, selects the top
    /// candidates, and writes the checkpoint, report, and incident log.
    pub fn finalize(mut self) -> Result<RunArtifacts, OrchestratorError> {
        let trajs = self.policy.sample_batch(
            self.cfg.stage.generation,
            &self.cfg.ppo.decoding,
            &mut self.rng,
        );
        let seqs: Vec<PeptideSequence> = trajs.iter().map(decode_trajectory).collect();
        let (signals, evidence) = evaluate_batch(
            &seqs,
            &self.modules.activity,
            &self.modules.registry,
            &self.modules.selection,
            self.cfg.ablation,
            &self.modules.templates,
        )?;

        let generation_path = self.cfg.out_dir.join("generation.jsonl");
        let mut file = File::create(&generation_path)?;
        let mut records = Vec::with_capacity(seqs.len());
        for ((seq, sig), ev) in seqs.iter().zip(&signals).zip(&evidence) {
            let record = GenerationRecord {
                seq: seq.as_str().to_string(),
                sa: sig.sa,
                sb: sig.sb,
                va: ev.va,
                vb: ev.vb,
                vc: ev.vc.clone(),
                vd: ev.vd,
            };
            writeln!(file, "{}", serde_json::to_string(&record)?)?;
            records.push(record);
        }
        file.flush()?;

        let selected = select_top(&records, self.cfg.stage.top_k_select);
        if selected.len() < self.cfg.stage.top_k_select {
            self.incidents.push(format!(
                "generation produced only {} unique sequences (selection target {})",
                selected.len(),
                self.cfg.stage.top_k_select
            ));
        }
        let fasta_path = self.cfg.out_dir.join("selected.fasta");
        write_fasta(&fasta_path, &selected)?;

        let checkpoint_path = self.cfg.out_dir.join("policy.ckpt");
        self.policy.save_checkpoint(&checkpoint_path)?;

        let report = report(self.log.entries())?;
        let report_path = self.cfg.out_dir.join("report.csv");
        report.to_csv(&report_path)?;

        let incidents_path = self.cfg.out_dir.join("incidents.log");
        let mut text = self.incidents.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(&incidents_path, text)?;

        Ok(RunArtifacts {
            out_dir: self.cfg.out_dir.clone(),
            audit_path: self.log.path().to_path_buf(),
            report_path,
            checkpoint_path,
            fasta_path,
            generation_path,
            selected,
            report,
        })
    }
}

/// Runs the whole closed loop: cold start, then per stage an adaptive
/// inner loop (unless disabled) followed by outer training, and finally
/// generation, selection, and reporting. The audit log is flushed after
/// every entry, so an abort at any point leaves a complete prefix on
/// disk.
pub fn run_pipeline(cfg: RunConfig) -> Result<RunArtifacts, OrchestratorError> {
    Pipeline::new(cfg)?.execute()
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Window for the moving variance of the per-epoch total reward.
pub const REPORT_WINDOW: usize = 5;

/// Population variance over the trailing `window` values (all values
/// while the series is still shorter than the window).
pub fn moving_variance(values: &[f64], window: usize) -> f64 {
    assert!(window >= 1, "the variance window must be positive");
    let tail = &values[values.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// One row of the run report; `epoch` is the entry's index in the audit
/// log and `stage` its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epoch: usize,
    pub stage: String,
    pub sa: f64,
    pub sb: Option<f64>,
    pub sc: f64,
    pub reward: f64,
    pub moving_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    pub fn to_csv(&self, path: &Path) -> Result<(), OrchestratorError> {
        let mut writer = csv::Writer::from_path(path)?;
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn from_csv(path: &Path) -> Result<RunReport, OrchestratorError> {
        let mut reader = csv::Reader::from_path(path)?;
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<ReportRow>, _>>()?;
        Ok(RunReport { rows })
    }

    /// Epochs where a new stage label begins, in order.
    pub fn stage_boundaries(&self) -> Vec<(usize, String)> {
        let mut boundaries: Vec<(usize, String)> = Vec::new();
        for row in &self.rows {
            if boundaries.last().map(|(_, s)| s.as_str()) != Some(row.stage.as_str()) {
                boundaries.push((row.epoch, row.stage.clone()));
            }
        }
        boundaries
    }
}

/// Recomputes the per-epoch reward series from the audit entries alone
/// and derives the trailing moving variance.
pub fn report(entries: &[LogEntry]) -> Result<RunReport, OrchestratorError> {
    if entries.is_empty() {
        return Err(OrchestratorError::EmptyLog);
    }
    let mut rows = Vec::with_capacity(entries.len());
    let mut rewards = Vec::with_capacity(entries.len());
    for (epoch, entry) in entries.iter().enumerate() {
        let allowed = SignalSet {
            sa: true,
            sb: entry.sb.is_some(),
            sc: true,
        };
        let f = rewarddsl::compile(&entry.f, allowed)?;
        let reward = f.evaluate(&EvalContext::new(entry.sa, entry.sb, entry.sc));
        rewards.push(reward);
        rows.push(ReportRow {
            epoch,
            stage: entry.stage.label(),
            sa: entry.sa,
            sb: entry.sb,
            sc: entry.sc,
            reward,
            moving_var: moving_variance(&rewards, REPORT_WINDOW),
        });
    }
    Ok(RunReport { rows })
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

/// Everything replay recomputes must land within this of the recorded
/// values.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub entries: usize,
    pub failures: Vec<ReplayFailure>,
}

impl ReplayOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn first_failure(&self) -> Option<&ReplayFailure> {
        self.failures.first()
    }
}

fn fail(failures: &mut Vec<ReplayFailure>, index: usize, reason: String) {
    failures.push(ReplayFailure { index, reason });
}

/// Checks one well-shaped entry against its report row; returns the
/// recomputed reward when the entry admits one.
fn replay_entry(
    index: usize,
    entry: &LogEntry,
    row: Option<&ReportRow>,
    failures: &mut Vec<ReplayFailure>,
) -> Option<f64> {
    let mut ranged = true;
    let unit = 0.0..=1.0;
    if !unit.contains(&entry.sa) {
        fail(failures, index, format!("sa {} is outside [0, 1]", entry.sa));
        ranged = false;
    }
    if let Some(sb) = entry.sb {
        if !unit.contains(&sb) {
            fail(failures, index, format!("sb {sb} is outside [0, 1]"));
            ranged = false;
        }
    }
    if !unit.contains(&entry.sc) {
        fail(failures, index, format!("sc {} is outside [0, 1]", entry.sc));
        ranged = false;
    }

    // The logged consensus must be re-derivable from the meta-review
    // text alone.
    match review::parse_t(&entry.t) {
        Err(e) => fail(failures, index, format!("meta-review text does not parse: {e}")),
        Ok(lines) => {
            let overall = lines.iter().map(|l| l.meta_score).sum::<f64>() / lines.len() as f64;
            if (overall.clamp(0.0, 1.0) - entry.sc).abs() > REPLAY_TOLERANCE {
                fail(
                    failures,
                    index,
                    format!(
                        "logged sc {} disagrees with the meta-review text ({})",
                        entry.sc,
                        overall.clamp(0.0, 1.0)
                    ),
                );
            }
        }
    }

    if let Some(row) = row {
        if row.epoch != index {
            fail(failures, index, format!("report row numbers itself {}", row.epoch));
        }
        if row.stage != entry.stage.label() {
            fail(
                failures,
                index,
                format!("stage label `{}` vs report `{}`", entry.stage.label(), row.stage),
            );
        }
        if (row.sa - entry.sa).abs() > REPLAY_TOLERANCE {
            fail(failures, index, format!("sa {} vs report {}", entry.sa, row.sa));
        }
        match (entry.sb, row.sb) {
            (None, None) => {}
            (Some(a), Some(b)) if (a - b).abs() <= REPLAY_TOLERANCE => {}
            _ => fail(
                failures,
                index,
                format!("sb {:?} vs report {:?}", entry.sb, row.sb),
            ),
        }
        if (row.sc - entry.sc).abs() > REPLAY_TOLERANCE {
            fail(failures, index, format!("sc {} vs report {}", entry.sc, row.sc));
        }
    }

    let allowed = SignalSet {
        sa: true,
        sb: entry.sb.is_some(),
        sc: true,
    };
    let f = match rewarddsl::compile(&entry.f, allowed) {
        Ok(f) => f,
        Err(e) => {
            fail(failures, index, format!("reward expression rejected: {e}"));
            return None;
        }
    };
    if !ranged {
        return None;
    }
    let reward = f.evaluate(&EvalContext::new(entry.sa, entry.sb, entry.sc));
    if let Some(row) = row {
        if (reward - row.reward).abs() > REPLAY_TOLERANCE {
            fail(
                failures,
                index,
                format!("recomputed reward {} diverges from the reported {}", reward, row.reward),
            );
        }
    }
    Some(reward)
}

/// Offline verification of a finished run: every audit entry must carry
/// exactly the six fields, its reward must recompute from `(f, sa, sb,
/// sc)` to within [`REPLAY_TOLERANCE`] of the report, the moving
/// variance must re-derive, and the logged consensus must match the
/// meta-review text. An unreadable or empty audit log is an input
/// error, not a failed verification.
pub fn replay(audit_path: &Path, report_path: &Path) -> Result<ReplayOutcome, OrchestratorError> {
    let text = fs::read_to_string(audit_path)?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    if lines.is_empty() {
        return Err(OrchestratorError::EmptyLog);
    }
    let report = RunReport::from_csv(report_path)?;

    let mut failures: Vec<ReplayFailure> = Vec::new();
    if report.rows.len() != lines.len() {
        fail(
            &mut failures,
            report.rows.len().min(lines.len()),
            format!(
                "audit log has {} entries but the report has {} rows",
                lines.len(),
                report.rows.len()
            ),
        );
    }

    // Recomputed reward series; report values stand in where an entry
    // could not be recomputed, so one bad entry does not cascade into
    // every following variance window.
    let mut rewards: Vec<f64> = Vec::new();
    for (index, (line_no, line)) in lines.iter().enumerate() {
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| OrchestratorError::MalformedLog {
                line: *line_no,
                msg: e.to_string(),
            })?;
        let row = report.rows.get(index);
        let entry = match check_entry_shape(&value)
            .and_then(|()| serde_json::from_value::<LogEntry>(value.clone()).map_err(|e| e.to_string()))
        {
            Ok(entry) => Some(entry),
            Err(msg) => {
                fail(&mut failures, index, msg);
                None
            }
        };
        let recomputed = entry
            .as_ref()
            .and_then(|e| replay_entry(index, e, row, &mut failures));
        rewards.push(recomputed.or_else(|| row.map(|r| r.reward)).unwrap_or(0.0));
        if let Some(row) = row {
            let expected = moving_variance(&rewards, REPORT_WINDOW);
            if (expected - row.moving_var).abs() > REPLAY_TOLERANCE {
                fail(
                    &mut failures,
                    index,
                    format!(
                        "recomputed moving variance {} diverges from the reported {}",
                        expected, row.moving_var
                    ),
                );
            }
        }
    }

    failures.sort_by_key(|f| f.index);
    Ok(ReplayOutcome {
        entries: lines.len(),
        failures,
    })
}
