//! Operator surface for the peptide design engine: dataset preparation,
//! full pipeline runs, offline audit verification, and novelty /
//! physicochemical analysis of sequence sets.
//!
//! Exit codes: 0 success, 1 runtime failure (including a failed replay
//! verification), 2 usage or input error. No command writes outside its
//! output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ampforge::align;
use ampforge::orchestrator::{replay, AgentMode, Pipeline, RunArtifacts, RunConfig};
use ampforge::physchem;
use ampforge::seq::{
    self, entries_from_jsonl, entries_to_jsonl, DatasetEntry, PeptideSequence, CANONICAL_RESIDUES,
};

#[derive(Parser)]
#[command(
    name = "ampforge",
    version,
    about = "Closed-loop antimicrobial peptide design"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a MIC TSV into canonical entries and a split manifest.
    Prepare(PrepareArgs),
    /// Execute the full closed-loop design pipeline.
    Run(RunArgs),
    /// Verify a finished run's audit log against its report.
    Replay(ReplayArgs),
    /// Novelty and physicochemical tables for a sequence set.
    Analyze(AnalyzeArgs),
}

/// A command failure carrying its exit class: 2 for usage/input
/// problems, 1 for failures of work that had validly begun.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Failure {
        Failure {
            code: 2,
            error: error.into(),
        }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Failure {
        Failure {
            code: 1,
            error: error.into(),
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Run(args) => cmd_run(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Analyze(args) => cmd_analyze(args),
    }
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PrepareArgs {
    /// MIC dataset: `sequence<TAB>mic1,mic2,...` per line.
    dataset: PathBuf,
    /// Seed recorded in (and driving) the 8:1:1 split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "prepared")]
    out: PathBuf,
}

fn cmd_prepare(args: PrepareArgs) -> Result<ExitCode, Failure> {
    let text = fs::read_to_string(&args.dataset)
        .with_context(|| format!("reading {}", args.dataset.display()))
        .map_err(Failure::usage)?;
    let (records, excluded) = seq::parse_mic_tsv(&text).map_err(Failure::usage)?;
    let entries = seq::preprocess(&records);
    let split = seq::split_dataset(&entries, args.seed).map_err(Failure::usage)?;

    fs::create_dir_all(&args.out).map_err(Failure::runtime)?;
    let entries_path = args.out.join("entries.jsonl");
    fs::write(&entries_path, entries_to_jsonl(&entries)).map_err(Failure::runtime)?;
    let manifest_path = args.out.join("split.json");
    let manifest = serde_json::to_string_pretty(&split).map_err(Failure::runtime)?;
    fs::write(&manifest_path, manifest).map_err(Failure::runtime)?;

    for ex in &excluded {
        println!("excluded line {}: {} ({})", ex.line, ex.raw, ex.reason);
    }
    println!(
        "prepared {} entries ({} excluded); split {}:{}:{} with seed {}",
        entries.len(),
        excluded.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        args.seed
    );
    println!("  entries:  {}", entries_path.display());
    println!("  manifest: {}", manifest_path.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AgentKind {
    Scripted,
    Remote,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration JSON; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Who serves the reviewer/designer/critic roles. Remote mode
    /// takes its endpoint from the config file.
    #[arg(long, value_enum)]
    agents: Option<AgentKind>,
    /// Outer training epochs per stage.
    #[arg(long)]
    epochs: Option<usize>,
    /// Maximum generated sequence length.
    #[arg(long)]
    max_len: Option<usize>,
    /// Drop the toxicity scorer from reviewer evidence.
    #[arg(long)]
    drop_va: bool,
    /// Drop the structure scorer from reviewer evidence.
    #[arg(long)]
    drop_vb: bool,
    /// Drop the likeness signal from rewards and evidence.
    #[arg(long)]
    drop_sb: bool,
    /// Exclude a committee member (repeatable).
    #[arg(long = "drop-reviewer", value_name = "ID")]
    drop_reviewer: Vec<String>,
    /// Skip the adaptive inner loop.
    #[arg(long)]
    no_adaptive: bool,
    /// Take the first accepted reward candidate instead of arbitrating.
    #[arg(long)]
    no_decision_agent: bool,
    /// Magnitude offset applied to every review lexicon weight.
    #[arg(long, value_name = "DELTA", allow_hyphen_values = true)]
    lexicon_offset: Option<f64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn resolve_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            RunConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = args.agents {
        cfg.agents = match (kind, cfg.agents) {
            (AgentKind::Scripted, _) => AgentMode::Scripted,
            (AgentKind::Remote, remote @ AgentMode::Remote { .. }) => remote,
            (AgentKind::Remote, AgentMode::Scripted) => {
                bail!("--agents remote needs an endpoint in the config file")
            }
        };
    }
    if let Some(epochs) = args.epochs {
        cfg.stage.u_outer = epochs;
    }
    if let Some(max_len) = args.max_len {
        cfg.arch.max_len = max_len;
    }
    cfg.ablation.drop_va |= args.drop_va;
    cfg.ablation.drop_vb |= args.drop_vb;
    cfg.ablation.drop_sb |= args.drop_sb;
    cfg.drop_reviewers.extend(args.drop_reviewer.iter().cloned());
    cfg.no_adaptive |= args.no_adaptive;
    cfg.no_decision_agent |= args.no_decision_agent;
    if let Some(delta) = args.lexicon_offset {
        cfg.lexicon_offset = delta;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Failure> {
    let cfg = resolve_config(&args).map_err(Failure::usage)?;
    // Construction covers the input phase: config validation, dataset
    // loading, predictor fitting. Nothing has been written when it
    // fails, so those are input errors; once the run has begun, any
    // abort is a runtime failure that leaves the flushed partial log.
    let pipeline = Pipeline::new(cfg).map_err(Failure::usage)?;
    let artifacts = pipeline.execute().map_err(Failure::runtime)?;
    print_artifacts(&artifacts);
    Ok(ExitCode::SUCCESS)
}

fn print_artifacts(artifacts: &RunArtifacts) {
    println!(
        "run complete: {} epochs logged, {} sequences selected",
        artifacts.report.rows.len(),
        artifacts.selected.len()
    );
    println!("  audit:      {}", artifacts.audit_path.display());
    println!("  report:     {}", artifacts.report_path.display());
    println!("  checkpoint: {}", artifacts.checkpoint_path.display());
    println!("  selection:  {}", artifacts.fasta_path.display());
    println!("  generation: {}", artifacts.generation_path.display());
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ReplayArgs {
    /// Audit log (JSONL) produced by `run`.
    audit: PathBuf,
    /// Report CSV from the same run; defaults to `report.csv` beside
    /// the audit log.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode, Failure> {
    let report = args
        .report
        .clone()
        .unwrap_or_else(|| args.audit.parent().unwrap_or(Path::new("")).join("report.csv"));
    let outcome = replay(&args.audit, &report).map_err(Failure::usage)?;
    if outcome.passed() {
        println!("PASS: {} entries verified", outcome.entries);
        Ok(ExitCode::SUCCESS)
    } else {
        let first = outcome.first_failure().expect("failed outcomes have a failure");
        println!(
            "FAIL at entry {}: {} ({} total divergences)",
            first.index,
            first.reason,
            outcome.failures.len()
        );
        Ok(ExitCode::from(1))
    }
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AnalyzeArgs {
    /// Candidate sequences (FASTA).
    sequences: PathBuf,
    /// Reference set: JSONL entries as written by `prepare`.
    reference: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
}

/// Strict FASTA reader: named headers, canonical residues, at least one
/// record, no data before the first header.
fn parse_fasta(text: &str) -> anyhow::Result<Vec<(String, PeptideSequence)>> {
    let mut records: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let name = header.split_whitespace().next().unwrap_or("").to_string();
            if name.is_empty() {
                bail!("line {}: FASTA header has no name", i + 1);
            }
            records.push((name, String::new()));
        } else {
            match records.last_mut() {
                None => bail!("line {}: sequence data before any FASTA header", i + 1),
                Some((_, seq)) => seq.push_str(line),
            }
        }
    }
    if records.is_empty() {
        bail!("no FASTA records found");
    }
    records
        .into_iter()
        .map(|(name, seq)| {
            let parsed = PeptideSequence::parse(&seq)
                .map_err(|e| anyhow!("record {name}: {e}"))?;
            Ok((name, parsed))
        })
        .collect()
}

#[derive(Serialize)]
struct SimilarityRow<'a> {
    name: &'a str,
    sequence: &'a str,
    max_similarity: f64,
    mean_similarity: f64,
}

#[derive(Serialize)]
struct ProfileRow<'a> {
    name: &'a str,
    sequence: &'a str,
    length: usize,
    molecular_weight: f64,
    gravy: f64,
    net_charge_ph7: f64,
    isoelectric_point: f64,
    hydrophobic_moment: f64,
    kr_fraction: f64,
    instability_index: f64,
}

#[derive(Serialize)]
struct CompositionRow {
    residue: char,
    count: usize,
    fraction: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<ExitCode, Failure> {
    let fasta_text = fs::read_to_string(&args.sequences)
        .with_context(|| format!("reading {}", args.sequences.display()))
        .map_err(Failure::usage)?;
    let queries = parse_fasta(&fasta_text)
        .with_context(|| format!("parsing {}", args.sequences.display()))
        .map_err(Failure::usage)?;

    let reference_text = fs::read_to_string(&args.reference)
        .with_context(|| format!("reading {}", args.reference.display()))
        .map_err(Failure::usage)?;
    let reference: Vec<DatasetEntry> = entries_from_jsonl(&reference_text).map_err(Failure::usage)?;
    if reference.is_empty() {
        return Err(Failure::usage(anyhow!(
            "the reference set {} holds no entries",
            args.reference.display()
        )));
    }
    let reference_seqs: Vec<PeptideSequence> =
        reference.iter().map(|e| e.seq.clone()).collect();

    let mut similarity = Vec::with_capacity(queries.len());
    let mut profiles = Vec::with_capacity(queries.len());
    let mut counts = [0usize; 20];
    let mut total = 0usize;
    for (name, seq) in &queries {
        let (max, mean) =
            align::max_similarity_to_set(seq, &reference_seqs).map_err(Failure::usage)?;
        similarity.push(SimilarityRow {
            name,
            sequence: seq.as_str(),
            max_similarity: max,
            mean_similarity: mean,
        });
        let p = physchem::profile(seq);
        profiles.push(ProfileRow {
            name,
            sequence: seq.as_str(),
            length: p.length,
            molecular_weight: p.molecular_weight,
            gravy: p.gravy,
            net_charge_ph7: p.net_charge_ph7,
            isoelectric_point: p.isoelectric_point,
            hydrophobic_moment: p.hydrophobic_moment,
            kr_fraction: p.kr_fraction,
            instability_index: p.instability_index,
        });
        for r in seq.residues() {
            counts[seq::residue_index(r).expect("parsed sequences are canonical")] += 1;
            total += 1;
        }
    }
    let composition: Vec<CompositionRow> = CANONICAL_RESIDUES
        .iter()
        .zip(counts)
        .map(|(&residue, count)| CompositionRow {
            residue,
            count,
            fraction: count as f64 / total as f64,
        })
        .collect();

    fs::create_dir_all(&args.out).map_err(Failure::runtime)?;
    let similarity_path = args.out.join("similarity.csv");
    let profile_path = args.out.join("physchem.csv");
    let composition_path = args.out.join("composition.csv");
    write_csv(&similarity_path, &similarity).map_err(Failure::runtime)?;
    write_csv(&profile_path, &profiles).map_err(Failure::runtime)?;
    write_csv(&composition_path, &composition).map_err(Failure::runtime)?;

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "analyzed {} sequences against {} references",
        queries.len(),
        reference.len()
    );
    let _ = writeln!(summary, "  similarity:  {}", similarity_path.display());
    let _ = writeln!(summary, "  physchem:    {}", profile_path.display());
    let _ = writeln!(summary, "  composition: {}", composition_path.display());
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}
