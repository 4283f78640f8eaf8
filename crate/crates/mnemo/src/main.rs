//! Record-oriented command line for the toolkit.
//!
//! Every subcommand reads and writes line-delimited JSON record files,
//! prints one JSON summary line to stdout, and exits nonzero with a
//! diagnostic on stderr on any failure. Outputs are byte-deterministic:
//! derived metrics are rounded to 9 significant digits and files are
//! written atomically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mnemo::config::Config;
use mnemo::fixtures::FixtureSet;
use mnemo::hindsight::{
    build_splits, filter_samples, relabel_trajectory, DataSample, FilterConfig,
};
use mnemo::memory::{
    MemoryRepository, RetrievalStrategy, RetrievedContext, TemplateSummarizer,
};
use mnemo::optim::{grpo_objective, ClipSchedule};
use mnemo::records::{
    atomic_write, batch_from_records, grpo_report_lines, read_jsonl, record_from_sample,
    round_sig9, sample_from_record, write_jsonl, ExperienceSeedRecord, RewardCaseRecord,
    RewardResultRecord, RuleRecord, SequenceRecord, SplitEntry, SplitManifest, TrajectoryRecord,
    FORMAT_VERSION,
};
use mnemo::reward::{evaluate_reward_with_tol, RewardWeights};
use mnemo::sim::policy::{ContextGatedPolicy, MalformedPolicy, OraclePolicy, Policy};
use mnemo::sim::{EnvVerifier, ScriptedEnvironment};
use mnemo::types::{Instruction, Observation};
use mnemo::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mnemo",
    version,
    about = "Deterministic memory, reward, and policy-optimization toolkit for GUI agents"
)]
struct Cli {
    /// TOML configuration file; falls back to $MNEMO_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add rule, trajectory, and experience records to a memory store.
    Ingest(IngestArgs),
    /// Rank stored rules and experiences against a query.
    QueryMemory(QueryMemoryArgs),
    /// Score recorded model turns against ground truth.
    RewardEval(RewardEvalArgs),
    /// Evaluate the group-relative objective on a batch of sequences.
    GrpoStep(GrpoStepArgs),
    /// Relabel failed trajectories to their shortest verified sub-goal prefixes.
    Relabel(RelabelArgs),
    /// Filter a trajectory pool and split it into grounding and evolution sets.
    Split(SplitArgs),
    /// Run scripted episodes in a fixture environment.
    Simulate(SimulateArgs),
    /// Summarize trajectory record files.
    Stats(StatsArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Memory store directory, created on first write.
    #[arg(long)]
    store: PathBuf,
    /// Rule record files to add as semantic entries.
    #[arg(long = "rules")]
    rules: Vec<PathBuf>,
    /// Trajectory record files to add as experiences with template summaries.
    #[arg(long = "trajectories")]
    trajectories: Vec<PathBuf>,
    /// Experience seed files (trajectory plus curated summary).
    #[arg(long = "experience")]
    experience: Vec<PathBuf>,
}

#[derive(Args)]
struct QueryMemoryArgs {
    #[arg(long)]
    store: PathBuf,
    /// Query instruction text.
    #[arg(long)]
    instruction: String,
    /// JSON observation file for the visual half of the experiential
    /// score; omitted means a widgetless screen (task similarity 0).
    #[arg(long)]
    observation: Option<PathBuf>,
    /// Entries to return per layer; defaults to the configured top-k.
    #[arg(long)]
    k: Option<usize>,
    /// Intent-versus-visual blend in [0,1]; defaults to the configured value.
    #[arg(long)]
    lambda: Option<f64>,
    /// top_k, mixed, or success_only; defaults to the configured strategy.
    #[arg(long)]
    strategy: Option<String>,
    /// Include the rendered context block in the output.
    #[arg(long)]
    render: bool,
}

#[derive(Args)]
struct RewardEvalArgs {
    /// Reward case records (model text plus ground truth).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file of per-case reward breakdown records.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format_weight: Option<f64>,
    #[arg(long)]
    accuracy_weight: Option<f64>,
    #[arg(long)]
    type_weight: Option<f64>,
    #[arg(long)]
    param_weight: Option<f64>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    math_tol: Option<f64>,
}

#[derive(Args)]
struct GrpoStepArgs {
    /// Sequence records: group id, reward, and token log-prob triples.
    #[arg(long)]
    batch: PathBuf,
    /// Output report file (one summary line, one line per sequence).
    #[arg(long)]
    out: PathBuf,
    /// Current schedule step.
    #[arg(long = "k")]
    step: Option<u64>,
    /// Total schedule steps.
    #[arg(long = "K")]
    total_steps: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eps_low: Option<f64>,
    #[arg(long)]
    eps_init: Option<f64>,
    #[arg(long)]
    eps_end: Option<f64>,
}

#[derive(Args)]
struct RelabelArgs {
    /// Trajectory record files to relabel.
    #[arg(long = "in", required = true)]
    input: Vec<PathBuf>,
    /// Environment fixture whose sub-goal predicates act as the verifier.
    #[arg(long)]
    verifier: String,
    /// Fixture directory; defaults to the bundled set.
    #[arg(long)]
    fixtures_dir: Option<PathBuf>,
    /// Output file of relabeled trajectory records.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Trajectory record files forming the sample pool.
    #[arg(long = "in", required = true)]
    input: Vec<PathBuf>,
    /// Grounding quota; defaults to the configured value.
    #[arg(long)]
    ground: Option<usize>,
    /// Evolution quota; defaults to the configured value.
    #[arg(long)]
    evolve: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Minimum steps for the pre-split filter.
    #[arg(long)]
    min_steps: Option<usize>,
    /// Directory receiving ground.records, evolve.records, and the manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PolicyKind {
    /// Replay the task's reference solution.
    Oracle,
    /// Choose between gated branches using retrieved context.
    Gated,
    /// The gated policy with retrieval ignored.
    Blind,
    /// Emit unparseable text every turn.
    Malformed,
}

#[derive(Args)]
struct SimulateArgs {
    /// Environment fixture name.
    #[arg(long)]
    fixture: String,
    /// Task name; defaults to the fixture's first task.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, value_enum, default_value = "oracle")]
    policy: PolicyKind,
    /// Episode count; defaults to the configured value.
    #[arg(long)]
    episodes: Option<u32>,
    /// Memory store directory to load before and persist after the run.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Output file of produced trajectory records.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output file of full episode results.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Rule fixtures to seed into memory before the first episode.
    #[arg(long = "seed-rules")]
    seed_rules: Vec<String>,
    /// Experience fixtures to seed into memory before the first episode.
    #[arg(long = "seed-experience")]
    seed_experience: Vec<String>,
    /// Fixture directory; defaults to the bundled set.
    #[arg(long)]
    fixtures_dir: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Trajectory record files to summarize.
    #[arg(long = "in", required = true)]
    input: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(args) => ingest(&config, args),
        Command::QueryMemory(args) => query_memory(&config, args),
        Command::RewardEval(args) => reward_eval(&config, args),
        Command::GrpoStep(args) => grpo_step(&config, args),
        Command::Relabel(args) => relabel(&config, args),
        Command::Split(args) => split(&config, args),
        Command::Simulate(args) => simulate(&config, args),
        Command::Stats(args) => stats(&config, args),
    }
}

fn emit<T: Serialize>(summary: &T) -> Result<()> {
    println!("{}", serde_json::to_string(summary)?);
    Ok(())
}

fn open_fixtures(dir: Option<&Path>) -> Result<FixtureSet> {
    match dir {
        Some(d) => FixtureSet::open(d),
        None => FixtureSet::open_default(),
    }
}

#[derive(Serialize)]
struct IngestSummary {
    semantic_added: usize,
    experiential_added: usize,
    duplicates: usize,
    semantic_total: usize,
    experiential_total: usize,
}

fn ingest(config: &Config, args: IngestArgs) -> Result<()> {
    let mut repo = MemoryRepository::load(&args.store, config.provider()?)?;
    let mut summary = IngestSummary {
        semantic_added: 0,
        experiential_added: 0,
        duplicates: 0,
        semantic_total: 0,
        experiential_total: 0,
    };
    for path in &args.rules {
        for record in read_jsonl::<RuleRecord>(path)? {
            record.check()?;
            match repo.add_semantic_entry(&record.rule_text, &record.source_instruction) {
                Ok(_) => summary.semantic_added += 1,
                Err(Error::DuplicateEntry(_)) => summary.duplicates += 1,
                Err(e) => return Err(e),
            }
        }
    }
    for path in &args.trajectories {
        for record in read_jsonl::<TrajectoryRecord>(path)? {
            let trajectory = record.to_trajectory()?;
            match repo.add_experiential_entry(&trajectory, &TemplateSummarizer) {
                Ok(_) => summary.experiential_added += 1,
                Err(Error::DuplicateEntry(_)) => summary.duplicates += 1,
                Err(e) => return Err(e),
            }
        }
    }
    for path in &args.experience {
        for record in read_jsonl::<ExperienceSeedRecord>(path)? {
            let trajectory = record.trajectory.to_trajectory()?;
            match repo.add_experiential_with_summary(&trajectory, &record.summary) {
                Ok(_) => summary.experiential_added += 1,
                Err(Error::DuplicateEntry(_)) => summary.duplicates += 1,
                Err(e) => return Err(e),
            }
        }
    }
    repo.persist(&args.store)?;
    summary.semantic_total = repo.semantic_entries().len();
    summary.experiential_total = repo.experiential_entries().len();
    emit(&summary)
}

#[derive(Serialize)]
struct SemanticHit {
    entry_id: u64,
    score: f64,
    rule_text: String,
}

#[derive(Serialize)]
struct ExperienceHit {
    entry_id: u64,
    score: f64,
    trajectory_id: String,
    success: bool,
    summary: String,
}

#[derive(Serialize)]
struct QuerySummary {
    semantic: Vec<SemanticHit>,
    experiential: Vec<ExperienceHit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rendered: Option<String>,
}

fn query_memory(config: &Config, args: QueryMemoryArgs) -> Result<()> {
    let repo = MemoryRepository::load(&args.store, config.provider()?)?;
    let instruction = Instruction::new(&args.instruction)?;
    let observation = match &args.observation {
        Some(path) => {
            let obs: Observation = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            obs.validate()?;
            obs
        }
        None => Observation::bare("query"),
    };
    let k = args.k.unwrap_or(config.memory.top_k);
    let lambda = args.lambda.unwrap_or(config.memory.lambda);
    let strategy = match &args.strategy {
        Some(s) => RetrievalStrategy::parse(s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown retrieval strategy `{s}`")))?,
        None => config.memory.strategy,
    };
    let semantic = repo.retrieve_semantic(&instruction, k)?;
    let experiential = repo.retrieve_experiential(&instruction, &observation, k, lambda, strategy)?;
    let rendered = args.render.then(|| {
        RetrievedContext::assemble(Vec::new(), semantic.clone(), experiential.clone()).render()
    });
    emit(&QuerySummary {
        semantic: semantic
            .into_iter()
            .map(|h| SemanticHit {
                entry_id: h.entry_id,
                score: round_sig9(h.score),
                rule_text: h.rule_text,
            })
            .collect(),
        experiential: experiential
            .into_iter()
            .map(|h| ExperienceHit {
                entry_id: h.entry_id,
                score: round_sig9(h.score),
                trajectory_id: h.trajectory_id,
                success: h.success,
                summary: h.summary,
            })
            .collect(),
        rendered,
    })
}

#[derive(Serialize)]
struct RewardSummary {
    cases: usize,
    mean_total: f64,
}

fn reward_eval(config: &Config, args: RewardEvalArgs) -> Result<()> {
    let weights = RewardWeights {
        format: args.format_weight.unwrap_or(config.rewards.format_weight),
        accuracy: args
            .accuracy_weight
            .unwrap_or(config.rewards.accuracy_weight),
        action_type: args.type_weight.unwrap_or(config.rewards.action_type_weight),
        parameter: args.param_weight.unwrap_or(config.rewards.parameter_weight),
        iou_threshold: args.iou_threshold.unwrap_or(config.rewards.iou_threshold),
    };
    weights.validate()?;
    let tol = args.math_tol.unwrap_or(config.rewards.math_tol);
    let cases: Vec<RewardCaseRecord> = read_jsonl(&args.input)?;
    let mut results = Vec::with_capacity(cases.len());
    let mut total = 0.0;
    for case in &cases {
        case.check()?;
        let breakdown = evaluate_reward_with_tol(&case.model_text, &case.ground_truth, &weights, tol)?;
        total += breakdown.r_total;
        results.push(RewardResultRecord::from_breakdown(&breakdown));
    }
    write_jsonl(&args.out, &results)?;
    emit(&RewardSummary {
        cases: cases.len(),
        mean_total: if cases.is_empty() {
            0.0
        } else {
            round_sig9(total / cases.len() as f64)
        },
    })
}

fn grpo_step(config: &Config, args: GrpoStepArgs) -> Result<()> {
    let records: Vec<SequenceRecord> = read_jsonl(&args.batch)?;
    let schedule = ClipSchedule::new(
        args.eps_low.unwrap_or(config.optimizer.eps_low),
        args.eps_init.unwrap_or(config.optimizer.eps_init),
        args.eps_end.unwrap_or(config.optimizer.eps_end),
        args.total_steps.unwrap_or(config.optimizer.total_steps),
    )?;
    let beta = args.beta.unwrap_or(config.optimizer.beta);
    let batch = batch_from_records(&records, beta, schedule, args.step.unwrap_or(0))?;
    let report = grpo_objective(&batch)?;
    let lines = grpo_report_lines(&report)?;
    atomic_write(&args.out, (lines.join("\n") + "\n").as_bytes())?;
    // The first line is the summary record; echo it to stdout.
    println!("{}", lines[0]);
    Ok(())
}

#[derive(Serialize)]
struct RelabelSummary {
    inputs: usize,
    skipped_empty: usize,
    relabeled: usize,
}

fn relabel(_config: &Config, args: RelabelArgs) -> Result<()> {
    let fixtures = open_fixtures(args.fixtures_dir.as_deref())?;
    let verifier = EnvVerifier::new(&fixtures.env_spec(&args.verifier)?);
    let mut summary = RelabelSummary {
        inputs: 0,
        skipped_empty: 0,
        relabeled: 0,
    };
    let mut out = Vec::new();
    for path in &args.input {
        for record in read_jsonl::<TrajectoryRecord>(path)? {
            summary.inputs += 1;
            let trajectory = record.to_trajectory()?;
            if trajectory.is_empty() {
                summary.skipped_empty += 1;
                continue;
            }
            for sample in relabel_trajectory(&trajectory, &verifier)? {
                out.push(record_from_sample(&DataSample::relabeled(&sample)));
                summary.relabeled += 1;
            }
        }
    }
    write_jsonl(&args.out, &out)?;
    emit(&summary)
}

#[derive(Serialize)]
struct SplitSummary {
    pool: usize,
    filtered: usize,
    ground: usize,
    evolve: usize,
    seed: u64,
}

fn split(config: &Config, args: SplitArgs) -> Result<()> {
    let mut pool = Vec::new();
    for path in &args.input {
        for record in read_jsonl::<TrajectoryRecord>(path)? {
            pool.push(sample_from_record(&record)?);
        }
    }
    let filter = FilterConfig {
        min_steps: args.min_steps.unwrap_or(config.data.min_steps),
    };
    let filtered = filter_samples(&pool, &filter);
    let n_ground = args.ground.unwrap_or(config.data.n_ground);
    let n_evolve = args.evolve.unwrap_or(config.data.n_evolve);
    let seed = args.seed.unwrap_or(config.data.seed);
    let splits = build_splits(&filtered, n_ground, n_evolve, seed)?;
    let ground_records: Vec<TrajectoryRecord> =
        splits.ground.iter().map(record_from_sample).collect();
    let evolve_records: Vec<TrajectoryRecord> =
        splits.evolve.iter().map(record_from_sample).collect();
    write_jsonl(&args.out_dir.join("ground.records"), &ground_records)?;
    write_jsonl(&args.out_dir.join("evolve.records"), &evolve_records)?;
    let manifest = SplitManifest {
        format_version: FORMAT_VERSION,
        seed,
        n_ground,
        n_evolve,
        ground: splits.ground.iter().map(SplitEntry::from_sample).collect(),
        evolve: splits.evolve.iter().map(SplitEntry::from_sample).collect(),
    };
    let body = serde_json::to_string_pretty(&manifest)? + "\n";
    atomic_write(&args.out_dir.join("split-manifest.json"), body.as_bytes())?;
    emit(&SplitSummary {
        pool: pool.len(),
        filtered: filtered.len(),
        ground: splits.ground.len(),
        evolve: splits.evolve.len(),
        seed,
    })
}

#[derive(Serialize)]
struct EpisodeSummary {
    episode: u32,
    success: bool,
    steps_used: u32,
    parse_failures: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    new_experience: Option<u64>,
}

#[derive(Serialize)]
struct SimulateSummary {
    fixture: String,
    task: String,
    episodes: u32,
    successes: u32,
    new_entries: u32,
    semantic_total: usize,
    experiential_total: usize,
}

fn simulate(config: &Config, args: SimulateArgs) -> Result<()> {
    let fixtures = open_fixtures(args.fixtures_dir.as_deref())?;
    let mut env = ScriptedEnvironment::new(fixtures.env_spec(&args.fixture)?)?;
    let task = match &args.task {
        Some(t) => env.spec().task(t)?.name.clone(),
        None => {
            env.spec()
                .tasks
                .first()
                .ok_or_else(|| Error::UnknownTask("fixture declares no tasks".into()))?
                .name
                .clone()
        }
    };
    let mut repo = match &args.store {
        Some(dir) => MemoryRepository::load(dir, config.provider()?)?,
        None => MemoryRepository::new(config.provider()?),
    };
    for name in &args.seed_rules {
        for record in fixtures.rules(name)? {
            match repo.add_semantic_entry(&record.rule_text, &record.source_instruction) {
                Ok(_) | Err(Error::DuplicateEntry(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    for name in &args.seed_experience {
        for seed in fixtures.experience_seeds(name)? {
            let trajectory = seed.trajectory.to_trajectory()?;
            match repo.add_experiential_with_summary(&trajectory, &seed.summary) {
                Ok(_) | Err(Error::DuplicateEntry(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    let run_config = config.run_config();
    let episodes = args.episodes.unwrap_or(config.sim.episodes);
    let mut successes = 0;
    let mut new_entries = 0;
    let mut trajectory_records = Vec::new();
    let mut result_lines = Vec::new();
    for episode in 1..=episodes {
        let mut policy: Box<dyn Policy> = match args.policy {
            PolicyKind::Oracle => Box::new(OraclePolicy::for_task(env.spec(), &task)?),
            PolicyKind::Gated => Box::new(ContextGatedPolicy::for_task(env.spec(), &task, true)?),
            PolicyKind::Blind => Box::new(ContextGatedPolicy::for_task(env.spec(), &task, false)?),
            PolicyKind::Malformed => Box::new(MalformedPolicy::default()),
        };
        let result =
            env.run_episode(&task, policy.as_mut(), &mut repo, &run_config, &TemplateSummarizer)?;
        if result.success {
            successes += 1;
        }
        if result.new_experience.is_some() {
            new_entries += 1;
        }
        emit(&EpisodeSummary {
            episode,
            success: result.success,
            steps_used: result.steps_used,
            parse_failures: result.parse_failures,
            new_experience: result.new_experience,
        })?;
        trajectory_records.push(TrajectoryRecord::from_trajectory(&result.trajectory, None));
        result_lines.push(serde_json::to_string(&result)?);
    }
    if let Some(path) = &args.out {
        write_jsonl(path, &trajectory_records)?;
    }
    if let Some(path) = &args.results {
        atomic_write(path, (result_lines.join("\n") + "\n").as_bytes())?;
    }
    if let Some(dir) = &args.store {
        repo.persist(dir)?;
    }
    emit(&SimulateSummary {
        fixture: args.fixture,
        task,
        episodes,
        successes,
        new_entries,
        semantic_total: repo.semantic_entries().len(),
        experiential_total: repo.experiential_entries().len(),
    })
}

#[derive(Serialize)]
struct StatsSummary {
    records: usize,
    successes: usize,
    failures: usize,
    success_rate: f64,
    mean_steps: f64,
    min_steps: usize,
    max_steps: usize,
    distinct_goals: usize,
    sources: BTreeMap<String, usize>,
    actions: BTreeMap<String, usize>,
}

fn stats(_config: &Config, args: StatsArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.input {
        records.extend(read_jsonl::<TrajectoryRecord>(path)?);
    }
    let mut goals = std::collections::HashSet::new();
    let mut sources: BTreeMap<String, usize> = BTreeMap::new();
    let mut actions: BTreeMap<String, usize> = BTreeMap::new();
    let mut successes = 0;
    let mut total_steps = 0usize;
    let mut min_steps = usize::MAX;
    let mut max_steps = 0usize;
    for record in &records {
        record.check()?;
        if record.success {
            successes += 1;
        }
        goals.insert(record.goal.clone());
        let source = if record.source.is_some() {
            "relabeled"
        } else {
            "collected"
        };
        *sources.entry(source.to_owned()).or_default() += 1;
        total_steps += record.steps.len();
        min_steps = min_steps.min(record.steps.len());
        max_steps = max_steps.max(record.steps.len());
        for step in &record.steps {
            *actions.entry(step.action.kind.to_string()).or_default() += 1;
        }
    }
    let n = records.len();
    emit(&StatsSummary {
        records: n,
        successes,
        failures: n - successes,
        success_rate: if n == 0 {
            0.0
        } else {
            round_sig9(successes as f64 / n as f64)
        },
        mean_steps: if n == 0 {
            0.0
        } else {
            round_sig9(total_steps as f64 / n as f64)
        },
        min_steps: if n == 0 { 0 } else { min_steps },
        max_steps,
        distinct_goals: goals.len(),
        sources,
        actions,
    })
}
