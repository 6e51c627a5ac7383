//! Agent plumbing: role profiles, six-section prompt assembly, knowledge
//! injection, deterministic scripted stand-ins for every role, and a
//! generic HTTP client for remote backends.
//!
//! Three roles talk to the loop: committee *reviewers* turn batch
//! evidence into wire-format review blocks, the reward *designer*
//! proposes reward expressions from the logged signals, and the proposal
//! *critic* passes or rejects proposals with comments. The scripted
//! implementations are pure functions of their structured inputs, which
//! is what makes the closed-loop smoke runs reproducible; the remote
//! client speaks one neutral wire shape (HTTP POST, JSON
//! `{prompt, payload}`) so a hosted model can replace any scripted role
//! without touching the orchestrator.
//!
//! Access control is structural: [`DesignerInput`] carries the numeric
//! signals but has no field for meta-review text, and [`CriticInput`]
//! carries the meta-review text but no numeric signals.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::review::{
    self, BatchEvidence, Dimension, DimensionReview, Lexicon, Reviewer, ReviewerOutput, Tag,
    TagState,
};
use crate::rewarddsl::{self, Expr, Signal, SignalSet};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("profile field `{field}` must be non-empty")]
    EmptyProfileField { field: &'static str },
    #[error("prompt section `{name}` is missing or empty")]
    MissingSection { name: &'static str },
    #[error("agent transport failed after {attempts} attempts: {detail}")]
    Timeout { attempts: u32, detail: String },
    #[error("malformed agent response at line {line}: {msg}")]
    MalformedResponse { line: usize, msg: String },
    #[error("injectable pack io: {0}")]
    Io(#[from] std::io::Error),
    #[error("injectable pack encoding: {0}")]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Profiles, prompt schema, knowledge injection
// ---------------------------------------------------------------------------

/// The four-field persona header every agent prompt starts with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub title: String,
    pub expertise: String,
    pub goal: String,
    pub role: String,
}

impl AgentProfile {
    pub fn new(
        title: &str,
        expertise: &str,
        goal: &str,
        role: &str,
    ) -> Result<AgentProfile, AgentError> {
        for (field, value) in [
            ("title", title),
            ("expertise", expertise),
            ("goal", goal),
            ("role", role),
        ] {
            if value.trim().is_empty() {
                return Err(AgentError::EmptyProfileField { field });
            }
        }
        Ok(AgentProfile {
            title: title.to_string(),
            expertise: expertise.to_string(),
            goal: goal.to_string(),
            role: role.to_string(),
        })
    }
}

/// The six ordered prompt sections. Everything except the injectable
/// section is part of the role contract and never varies per task; the
/// injectable section's body is supplied by an [`InjectablePack`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSchema {
    pub agent_definition: String,
    pub input_format: String,
    pub workflow: String,
    pub output_format: String,
    pub startup_command: String,
    /// Static preamble of the injectable section; the pack body follows.
    pub injectable_section: String,
}

/// Task-specific knowledge injected into a prompt: the artifact of a
/// preparatory meeting. Swapping packs changes only the injectable
/// section of the assembled prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectablePack {
    pub version: u32,
    /// Which lexicon file the committee scores against.
    pub lexicon_ref: String,
    pub dimension_definitions: String,
    pub stage_guidance: String,
}

impl InjectablePack {
    pub fn from_file(path: &Path) -> Result<InjectablePack, AgentError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    fn render(&self) -> String {
        format!(
            "pack version: {}\nlexicon: {}\ndimensions:\n{}\nstage guidance:\n{}",
            self.version, self.lexicon_ref, self.dimension_definitions, self.stage_guidance
        )
    }
}

const SECTION_HEADERS: [&str; 6] = [
    "## Agent Definition",
    "## Input Format",
    "## Workflow",
    "## Output Format",
    "## Startup Command",
    "## Injectable Section",
];

/// Deterministic six-section concatenation with fixed headers. The
/// profile renders inside the agent-definition section; the pack renders
/// as the body of the injectable section.
pub fn assemble_prompt(
    profile: &AgentProfile,
    schema: &PromptSchema,
    pack: &InjectablePack,
) -> Result<String, AgentError> {
    for (name, body) in [
        ("agent_definition", &schema.agent_definition),
        ("input_format", &schema.input_format),
        ("workflow", &schema.workflow),
        ("output_format", &schema.output_format),
        ("startup_command", &schema.startup_command),
    ] {
        if body.trim().is_empty() {
            return Err(AgentError::MissingSection { name });
        }
    }
    let mut prompt = String::new();
    let _ = writeln!(prompt, "{}", SECTION_HEADERS[0]);
    let _ = writeln!(prompt, "Title: {}", profile.title);
    let _ = writeln!(prompt, "Expertise: {}", profile.expertise);
    let _ = writeln!(prompt, "Goal: {}", profile.goal);
    let _ = writeln!(prompt, "Role: {}", profile.role);
    let _ = writeln!(prompt, "{}", schema.agent_definition);
    for (header, body) in [
        (SECTION_HEADERS[1], &schema.input_format),
        (SECTION_HEADERS[2], &schema.workflow),
        (SECTION_HEADERS[3], &schema.output_format),
        (SECTION_HEADERS[4], &schema.startup_command),
    ] {
        let _ = writeln!(prompt, "\n{header}");
        let _ = writeln!(prompt, "{body}");
    }
    let _ = writeln!(prompt, "\n{}", SECTION_HEADERS[5]);
    if !schema.injectable_section.is_empty() {
        let _ = writeln!(prompt, "{}", schema.injectable_section);
    }
    let _ = write!(prompt, "{}", pack.render());
    Ok(prompt)
}

/// Verbatim append-only record of every prompt handed to an agent.
#[derive(Debug, Clone)]
pub struct PromptLog {
    path: PathBuf,
}

impl PromptLog {
    pub fn new(path: PathBuf) -> PromptLog {
        PromptLog { path }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, agent: &str, prompt: &str) -> std::io::Result<()> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(file, "=== agent: {agent} ===")?;
        writeln!(file, "{prompt}")?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

/// Strict wire-format parse of a committee review block; no recovery
/// heuristics. Line numbers are 1-based.
pub fn parse_reviewer_block(reviewer_id: &str, text: &str) -> Result<ReviewerOutput, AgentError> {
    review::parse_reviewer_output(reviewer_id, text).map_err(|e| match e {
        review::ReviewError::WireFormat { line, msg } => {
            AgentError::MalformedResponse { line, msg }
        }
        other => AgentError::MalformedResponse {
            line: 0,
            msg: other.to_string(),
        },
    })
}

/// Extracts the reward source from a designer response: exactly one
/// non-blank line of the form `F: <expression>`.
pub fn parse_reward_block(text: &str) -> Result<String, AgentError> {
    let mut found: Option<(usize, &str)> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if found.is_some() {
            return Err(AgentError::MalformedResponse {
                line: i + 1,
                msg: "unexpected content after the reward line".to_string(),
            });
        }
        found = Some((i + 1, line));
    }
    let (line, content) = found.ok_or(AgentError::MalformedResponse {
        line: 1,
        msg: "empty reward block".to_string(),
    })?;
    match content.trim().strip_prefix("F:") {
        Some(expr) if !expr.trim().is_empty() => Ok(expr.trim().to_string()),
        _ => Err(AgentError::MalformedResponse {
            line,
            msg: "expected `F: <expression>`".to_string(),
        }),
    }
}

// ---------------------------------------------------------------------------
// Scripted committee reviewers
// ---------------------------------------------------------------------------

/// Reviewer temperament: where the state thresholds sit and how much
/// confidence the persona attaches to its tags. Personas make borderline
/// evidence produce genuinely divergent committees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Persona {
    Optimist,
    Moderate,
    Skeptic,
}

impl Persona {
    /// (high, medium) thresholds on a [0,1] attribute level.
    fn thresholds(self) -> (f64, f64) {
        match self {
            Persona::Optimist => (0.60, 0.30),
            Persona::Moderate => (0.70, 0.40),
            Persona::Skeptic => (0.80, 0.50),
        }
    }

    fn confidence(self) -> f64 {
        match self {
            Persona::Optimist => 0.85,
            Persona::Moderate => 0.60,
            Persona::Skeptic => 1.00,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Persona::Optimist => "optimist",
            Persona::Moderate => "moderate",
            Persona::Skeptic => "skeptic",
        }
    }

    fn state_for(self, level: f64) -> TagState {
        let (hi, mid) = self.thresholds();
        if level >= hi {
            TagState::High
        } else if level >= mid {
            TagState::Medium
        } else {
            TagState::Low
        }
    }
}

/// A deterministic committee member: thresholds batch evidence means
/// into lexicon tags and renders a wire-format block. Same evidence in,
/// same bytes out.
pub struct ScriptedReviewer {
    id: String,
    persona: Persona,
    lexicon: Lexicon,
}

impl ScriptedReviewer {
    pub fn new(id: &str, persona: Persona, lexicon: Lexicon) -> ScriptedReviewer {
        ScriptedReviewer {
            id: id.to_string(),
            persona,
            lexicon,
        }
    }

    fn dim_review(
        &self,
        dimension: Dimension,
        attrs: &[(&str, f64)],
        comment: String,
    ) -> Result<DimensionReview, String> {
        let tags: Vec<Tag> = attrs
            .iter()
            .map(|&(id, level)| Tag {
                id: id.to_string(),
                state: self.persona.state_for(level),
                p: self.persona.confidence(),
            })
            .collect();
        let score = review::score_dimension(&tags, &self.lexicon, dimension)
            .map_err(|e| e.to_string())?;
        Ok(DimensionReview {
            comment,
            tags,
            score,
        })
    }

    fn build(&self, evidence: &BatchEvidence) -> Result<ReviewerOutput, String> {
        let m = evidence
            .means()
            .ok_or_else(|| "empty evidence batch".to_string())?;
        let who = self.persona.label();

        let mut eff_attrs = vec![("mic_potency", m.sa), ("dose_response", m.sa * 0.9)];
        if let Some(sb) = m.sb {
            eff_attrs.push(("spectrum_breadth", sb));
        }
        let eff = self.dim_review(
            Dimension::Eff,
            &eff_attrs,
            format!("{who}: mean activity signal {:.3}", m.sa),
        )?;
        // Ablated channels leave a dimension untagged (neutral score 0)
        // rather than guessed at.
        let (safe_attrs, safe_comment) = match m.va {
            Some(va) => (
                vec![("hemolysis_risk", va), ("cytotox_margin", 1.0 - va)],
                format!("{who}: mean toxicity signal {va:.3}"),
            ),
            None => (Vec::new(), format!("{who}: toxicity evidence unavailable")),
        };
        let safe = self.dim_review(Dimension::Safe, &safe_attrs, safe_comment)?;
        let (struct_attrs, struct_comment) = match m.vb {
            Some(vb) => (
                vec![("helical_propensity", vb), ("fold_plausibility", vb * 0.9)],
                format!("{who}: mean structure signal {vb:.3}"),
            ),
            None => (Vec::new(), format!("{who}: structure evidence unavailable")),
        };
        let dev_struct = self.dim_review(Dimension::DevStruct, &struct_attrs, struct_comment)?;
        let orig = self.dim_review(
            Dimension::Orig,
            &[
                ("template_distance", 1.0 - m.vd),
                ("motif_novelty", (1.0 - m.vd) * 0.9),
            ],
            format!("{who}: mean template similarity {:.3}", m.vd),
        )?;
        Ok(ReviewerOutput {
            reviewer_id: self.id.clone(),
            eff,
            safe,
            dev_struct,
            orig,
        })
    }
}

impl Reviewer for ScriptedReviewer {
    fn reviewer_id(&self) -> &str {
        &self.id
    }

    fn review(&mut self, evidence: &BatchEvidence) -> Result<String, String> {
        Ok(review::render_reviewer_output(&self.build(evidence)?))
    }
}

/// The standard three-persona committee.
pub fn default_committee(lexicon: &Lexicon) -> Vec<Box<dyn Reviewer>> {
    vec![
        Box::new(ScriptedReviewer::new(
            "rev-optimist",
            Persona::Optimist,
            lexicon.clone(),
        )),
        Box::new(ScriptedReviewer::new(
            "rev-moderate",
            Persona::Moderate,
            lexicon.clone(),
        )),
        Box::new(ScriptedReviewer::new(
            "rev-skeptic",
            Persona::Skeptic,
            lexicon.clone(),
        )),
    ]
}

// ---------------------------------------------------------------------------
// Reward designer and proposal critic
// ---------------------------------------------------------------------------

/// What the reward-designing agent is allowed to see: stage context, the
/// incumbent reward, the logged signal means, and round feedback. There
/// is deliberately no field for meta-review text.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignerInput {
    pub stage: usize,
    pub round: usize,
    pub candidate: usize,
    pub prev_f: String,
    pub sa: f64,
    pub sb: Option<f64>,
    pub sc: f64,
    /// Winner summary from the previous round (reward + signal means).
    pub feedback: Option<String>,
}

pub trait RewardDesigner {
    fn name(&self) -> &str;
    /// Returns a reward block (`F: <expression>`).
    fn propose(&mut self, input: &DesignerInput) -> Result<String, AgentError>;
}

/// What the critiquing agent is allowed to see: the proposal and the
/// committee's meta-review text. There are deliberately no fields for
/// the numeric signals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticInput {
    pub stage: usize,
    pub proposal: String,
    pub meta_review: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CriticVerdict {
    Pass,
    Revise { comments: String },
}

pub trait ProposalCritic {
    fn name(&self) -> &str;
    fn critique(&mut self, input: &CriticInput) -> Result<CriticVerdict, AgentError>;
}

/// Stage-keyed reward templates: exploration leans on the likeness
/// signal, the balanced stage spreads weight, convergence leans on
/// activity. Three variants per stage supply the candidate slates;
/// rounds rotate through them.
const STAGE_TEMPLATES: [[&str; 3]; 3] = [
    [
        "0.2*sa + 0.6*sb + 0.2*sc",
        "0.15*sa + 0.7*sb + 0.15*sc",
        "0.25*sa + 0.55*sb + 0.2*sc",
    ],
    [
        "0.4*sa + 0.3*sb + 0.3*sc",
        "0.35*sa + 0.35*sb + 0.3*sc",
        "0.3*sa + 0.4*sb + 0.3*sc",
    ],
    [
        "0.6*sa + 0.2*sb + 0.2*sc",
        "0.65*sa + 0.15*sb + 0.2*sc",
        "0.55*sa + 0.25*sb + 0.2*sc",
    ],
];

/// The same families with the likeness signal ablated.
const STAGE_TEMPLATES_NO_SB: [[&str; 3]; 3] = [
    ["0.35*sa + 0.65*sc", "0.3*sa + 0.7*sc", "0.4*sa + 0.6*sc"],
    ["0.5*sa + 0.5*sc", "0.55*sa + 0.45*sc", "0.45*sa + 0.55*sc"],
    ["0.7*sa + 0.3*sc", "0.75*sa + 0.25*sc", "0.65*sa + 0.35*sc"],
];

/// Deterministic designer: a pure table lookup on (stage, round,
/// candidate), with the sb-free family when the input says the likeness
/// signal is unavailable.
pub struct ScriptedDesigner;

impl RewardDesigner for ScriptedDesigner {
    fn name(&self) -> &str {
        "designer-scripted"
    }

    fn propose(&mut self, input: &DesignerInput) -> Result<String, AgentError> {
        let table = if input.sb.is_some() {
            &STAGE_TEMPLATES
        } else {
            &STAGE_TEMPLATES_NO_SB
        };
        let family = &table[input.stage.min(2)];
        let expr = family[(input.candidate + input.round) % family.len()];
        Ok(format!("F: {expr}"))
    }
}

fn expr_mentions(expr: &Expr, wanted: Signal) -> bool {
    let mut stack = vec![expr];
    while let Some(e) = stack.pop() {
        match e {
            Expr::Num(_) => {}
            Expr::Signal(s) => {
                if *s == wanted {
                    return true;
                }
            }
            Expr::Binary { lhs, rhs, .. } => {
                stack.push(lhs);
                stack.push(rhs);
            }
            Expr::Min(a, b) | Expr::Max(a, b) => {
                stack.push(a);
                stack.push(b);
            }
            Expr::Clip { x, lo, hi } => {
                stack.push(x);
                stack.push(lo);
                stack.push(hi);
            }
            Expr::Exp(x) | Expr::Log1p(x) | Expr::Sigmoid(x) => stack.push(x),
            Expr::Pow { base, .. } => stack.push(base),
            Expr::WeightedSum(terms) => {
                if terms.iter().any(|&(_, s)| s == wanted) {
                    return true;
                }
            }
        }
    }
    false
}

/// Validator-backed critic: rejects proposals that fail compilation
/// (echoing the violation list as comments) and proposals that ignore
/// the committee consensus signal entirely.
pub struct ScriptedCritic {
    allowed: SignalSet,
}

impl ScriptedCritic {
    pub fn new(allowed: SignalSet) -> ScriptedCritic {
        ScriptedCritic { allowed }
    }
}

impl ProposalCritic for ScriptedCritic {
    fn name(&self) -> &str {
        "critic-scripted"
    }

    fn critique(&mut self, input: &CriticInput) -> Result<CriticVerdict, AgentError> {
        match rewarddsl::compile(&input.proposal, self.allowed) {
            Err(e) => Ok(CriticVerdict::Revise {
                comments: e.to_string(),
            }),
            Ok(compiled) => {
                if expr_mentions(compiled.expr(), Signal::Sc) {
                    Ok(CriticVerdict::Pass)
                } else {
                    Ok(CriticVerdict::Revise {
                        comments: "proposal ignores the committee consensus signal sc"
                            .to_string(),
                    })
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Remote transport
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteAgentConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub timeout_secs: u64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RemoteAgentConfig {
    fn default() -> Self {
        RemoteAgentConfig {
            endpoint: String::new(),
            token_env: None,
            timeout_secs: 30,
            max_retries: 2,
            backoff_ms: 50,
        }
    }
}

/// Everything the caller learns from one invocation besides the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentResponse {
    pub text: String,
    /// How many retries were needed (0 = first attempt succeeded).
    pub retries: u32,
}

/// Blocking HTTP client for one remote agent: POSTs
/// `{"prompt": ..., "payload": ...}` and returns the body, retrying
/// failures with linear backoff up to the configured budget.
pub struct RemoteAgent {
    cfg: RemoteAgentConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteAgent {
    pub fn new(cfg: RemoteAgentConfig) -> Result<RemoteAgent, AgentError> {
        let token = cfg
            .token_env
            .as_ref()
            .and_then(|name| std::env::var(name).ok());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .no_proxy()
            .build()
            .map_err(|e| AgentError::Timeout {
                attempts: 0,
                detail: format!("client construction: {e}"),
            })?;
        Ok(RemoteAgent { cfg, token, client })
    }

    pub fn invoke(&self, prompt: &str, payload: &str) -> Result<AgentResponse, AgentError> {
        let body = serde_json::json!({ "prompt": prompt, "payload": payload });
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms * attempt as u64));
            }
            let mut request = self.client.post(&self.cfg.endpoint).json(&body);
            if let Some(token) = &self.token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Ok(resp) if resp.status().is_success() => match resp.text() {
                    Ok(text) => {
                        return Ok(AgentResponse {
                            text,
                            retries: attempt,
                        })
                    }
                    Err(e) => last = format!("body read: {e}"),
                },
                Ok(resp) => last = format!("http status {}", resp.status()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(AgentError::Timeout {
            attempts: self.cfg.max_retries + 1,
            detail: last,
        })
    }
}

/// Committee adapter: forwards the rendered evidence to a remote agent
/// and hands back whatever text arrives, leaving parsing and validation
/// to the review runner.
pub struct RemoteReviewer {
    id: String,
    prompt: String,
    agent: RemoteAgent,
}

impl RemoteReviewer {
    pub fn new(id: &str, prompt: String, agent: RemoteAgent) -> RemoteReviewer {
        RemoteReviewer {
            id: id.to_string(),
            prompt,
            agent,
        }
    }
}

impl Reviewer for RemoteReviewer {
    fn reviewer_id(&self) -> &str {
        &self.id
    }

    fn review(&mut self, evidence: &BatchEvidence) -> Result<String, String> {
        self.agent
            .invoke(&self.prompt, &evidence.render_text())
            .map(|r| r.text)
            .map_err(|e| e.to_string())
    }
}

/// Designer adapter: ships the structured input as the JSON payload and
/// expects a reward block back.
pub struct RemoteDesigner {
    prompt: String,
    agent: RemoteAgent,
}

impl RemoteDesigner {
    pub fn new(prompt: String, agent: RemoteAgent) -> RemoteDesigner {
        RemoteDesigner { prompt, agent }
    }
}

impl RewardDesigner for RemoteDesigner {
    fn name(&self) -> &str {
        "designer-remote"
    }

    fn propose(&mut self, input: &DesignerInput) -> Result<String, AgentError> {
        let payload = serde_json::to_string(input)?;
        Ok(self.agent.invoke(&self.prompt, &payload)?.text)
    }
}

/// Parses a critic response: `PASS` on a line of its own, or
/// `REVISE: <comments>`.
pub fn parse_critic_verdict(text: &str) -> Result<CriticVerdict, AgentError> {
    let trimmed = text.trim();
    if trimmed == "PASS" {
        return Ok(CriticVerdict::Pass);
    }
    match trimmed.strip_prefix("REVISE:") {
        Some(comments) if !comments.trim().is_empty() => Ok(CriticVerdict::Revise {
            comments: comments.trim().to_string(),
        }),
        _ => Err(AgentError::MalformedResponse {
            line: 1,
            msg: "expected `PASS` or `REVISE: <comments>`".to_string(),
        }),
    }
}

/// Critic adapter: same JSON-payload shape, verdict parsed from the body.
pub struct RemoteCritic {
    prompt: String,
    agent: RemoteAgent,
}

impl RemoteCritic {
    pub fn new(prompt: String, agent: RemoteAgent) -> RemoteCritic {
        RemoteCritic { prompt, agent }
    }
}

impl ProposalCritic for RemoteCritic {
    fn name(&self) -> &str {
        "critic-remote"
    }

    fn critique(&mut self, input: &CriticInput) -> Result<CriticVerdict, AgentError> {
        let payload = serde_json::to_string(input)?;
        let response = self.agent.invoke(&self.prompt, &payload)?;
        parse_critic_verdict(&response.text)
    }
}

// ---------------------------------------------------------------------------
// Stock profiles and schema
// ---------------------------------------------------------------------------

pub fn reviewer_profile() -> AgentProfile {
    AgentProfile::new(
        "Peptide Review Committee Member",
        "antimicrobial peptide pharmacology and safety assessment",
        "score candidate batches on efficacy, safety, structure, and originality",
        "emit one structured review block per batch using the shared tag lexicon",
    )
    .expect("stock profile is non-empty")
}

pub fn designer_profile() -> AgentProfile {
    AgentProfile::new(
        "Reward Function Designer",
        "multi-objective reinforcement learning and reward shaping",
        "propose reward expressions that balance activity, likeness, and consensus",
        "read the signal log and answer with a single reward block",
    )
    .expect("stock profile is non-empty")
}

pub fn critic_profile() -> AgentProfile {
    AgentProfile::new(
        "Biomedical Proposal Critic",
        "peptide therapeutics development",
        "keep reward proposals consistent with the committee's written consensus",
        "pass or revise each proposal with actionable comments",
    )
    .expect("stock profile is non-empty")
}

pub fn default_prompt_schema() -> PromptSchema {
    PromptSchema {
        agent_definition: "Stay strictly within this role for every turn.".to_string(),
        input_format: "Inputs arrive as plain text records, one candidate or signal per line."
            .to_string(),
        workflow: "Read the payload, apply the role's decision rules, produce one output block."
            .to_string(),
        output_format: "Respond only with the wire format defined for this role; no prose."
            .to_string(),
        startup_command: "Acknowledge readiness by emitting a valid block for the first payload."
            .to_string(),
        injectable_section: "Task-specific knowledge for this run:".to_string(),
    }
}
