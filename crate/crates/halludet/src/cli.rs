//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use halludet_core::corpus::{distribution, CorpusSummary};
use halludet_core::perturb::BranchPolicy;
use halludet_core::repair::repair;
use halludet_core::tokenize::BpeTokenizer;
use halludet_core::{RepairMethod, TaskType, Tokenizer, WhitespacePunctTokenizer};
use serde_json::json;

use crate::config::{process_env, Config, ConfigError, EndpointConfig};
use crate::corpus::{load_musique, load_ragtruth, Diagnostic};
use crate::evaluator::{evaluate, repair_with_llm, write_csv, EvalOptions, FailurePolicy};
use crate::gateway::{AuditLog, ChatBackend, Gateway, HttpBackend, HttpConfig, RecordingBackend, ReplayBackend};
use crate::manifest::{endpoint_hash, RunManifest, MANIFEST_FILE};
use crate::perturb::{build_dataset, read_records, write_export, write_outputs, BuildConfig, ExportFormat, GenerationSettings};

#[derive(Debug, Parser)]
#[command(name = "halludet", version, about = "Hallucination-detection dataset builder and detector evaluator")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Serve LLM traffic from a recorded JSONL file instead of the network.
    #[arg(long, global = true, conflicts_with = "record")]
    pub replay: Option<PathBuf>,
    /// Append every live LLM reply to this JSONL file for later replay.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    /// Append one JSONL line per transport attempt to this file.
    #[arg(long, global = true)]
    pub audit: Option<PathBuf>,
    /// Where to write the run manifest. Commands with an output directory
    /// default to `<dir>/manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a perturbed training dataset from a MuSiQue corpus.
    Perturb(PerturbArgs),
    /// Context-length distribution of a MuSiQue corpus.
    Stats(StatsArgs),
    /// Turn a records file into supervised fine-tuning examples.
    Export(ExportArgs),
    /// Evaluate a detector on RAGTruth-format cases.
    Eval(EvalArgs),
    /// Read detector output on stdin, print the recovered hallucination list.
    Repair(RepairArgs),
    /// Measure decode throughput of an endpoint.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct EndpointArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub p_halu: Option<f64>,
    #[arg(long)]
    pub budget: Option<u32>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub reject_fraction_limit: Option<f64>,
    #[arg(long)]
    pub include_unanswerable: bool,
    /// BPE merges file for token statistics.
    #[arg(long)]
    pub bpe_merges: Option<PathBuf>,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub bucket_width: usize,
    #[arg(long)]
    pub bpe_merges: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// instruction_pairs or conversation_pairs.
    #[arg(long)]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// RAGTruth source_info file.
    #[arg(long)]
    pub source: PathBuf,
    /// RAGTruth response file.
    #[arg(long)]
    pub responses: PathBuf,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-case rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Never send the JSON-fix prompt.
    #[arg(long)]
    pub no_llm_fix: bool,
    /// Keep only these task types (repeatable).
    #[arg(long = "task-type")]
    pub task_types: Vec<String>,
    /// not_flagged or excluded.
    #[arg(long)]
    pub failure_policy: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub span_overlap: bool,
    #[arg(long)]
    pub fixer_model: Option<String>,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
}

#[derive(Debug, Args)]
pub struct RepairArgs {
    /// Escalate to the JSON-fix prompt when deterministic repair fails.
    #[arg(long)]
    pub llm_fix: bool,
    /// Include the applied repair rules in the output.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Prompt length in whitespace tokens.
    #[arg(long)]
    pub input_length: usize,
    #[arg(long, default_value_t = 5)]
    pub runs: u32,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Standard streams and environment, injectable for tests.
pub struct Io<'a> {
    pub stdin: &'a mut dyn Read,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
    pub env: &'a dyn Fn(&str) -> Option<String>,
}

pub fn main_with_args(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (mut stdin, mut stdout, mut stderr) = (io::stdin(), io::stdout(), io::stderr());
    let mut io = Io { stdin: &mut stdin, stdout: &mut stdout, stderr: &mut stderr, env: &process_env };
    run(cli, args, &mut io)
}

pub fn run(cli: Cli, args: Vec<String>, io: &mut Io<'_>) -> i32 {
    match dispatch(&cli, args, io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, args: Vec<String>, io: &mut Io<'_>) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Usage(format!("config file {} not found", path.display())));
            }
            Config::load(path)?
        }
        None => Config::default(),
    };
    let ctx = Ctx { cli, args };
    match &cli.command {
        Command::Perturb(a) => cmd_perturb(&ctx, &mut config, a, io),
        Command::Stats(a) => cmd_stats(&ctx, a, io),
        Command::Export(a) => cmd_export(&ctx, a, io),
        Command::Eval(a) => cmd_eval(&ctx, &mut config, a, io),
        Command::Repair(a) => cmd_repair(&ctx, &mut config, a, io),
        Command::Bench(a) => cmd_bench(&ctx, &mut config, a, io),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    args: Vec<String>,
}

impl Ctx<'_> {
    fn manifest(&self, name: &str) -> RunManifest {
        RunManifest::start(name, self.args.clone())
    }

    fn manifest_path(&self, default_dir: Option<&Path>) -> Option<PathBuf> {
        self.cli.manifest.clone().or_else(|| default_dir.map(|d| d.join(MANIFEST_FILE)))
    }

    /// Writes the manifest, marking it failed if `result` is an error.
    fn finish(
        &self,
        mut manifest: RunManifest,
        path: Option<PathBuf>,
        outputs: &[PathBuf],
        result: Result<(), CliError>,
    ) -> Result<(), CliError> {
        if let Err(e) = &result {
            manifest.fail(e.message());
        }
        manifest.add_outputs(outputs.iter().map(PathBuf::as_path));
        if let Some(path) = path {
            manifest.write(&path).map_err(|e| runtime(format!("cannot write manifest {}: {e}", path.display())))?;
        }
        result
    }

    fn gateway(&self, config: &Config, backend: Arc<dyn ChatBackend>) -> Result<Gateway, CliError> {
        let mut gw = Gateway::new(backend).with_policy(config.retry);
        if let Some(path) = &self.cli.audit {
            let log = AuditLog::append(path).map_err(|e| runtime(format!("cannot open audit log: {e}")))?;
            gw = gw.with_audit(Arc::new(log));
        }
        Ok(gw)
    }

    /// Replay file if given, otherwise an HTTP client for `endpoint`,
    /// optionally recording.
    fn backend(
        &self,
        role: &'static str,
        endpoint: &EndpointConfig,
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Arc<dyn ChatBackend>, CliError> {
        if let Some(path) = &self.cli.replay {
            let replay = ReplayBackend::load(path)
                .map_err(|e| CliError::Usage(format!("cannot load replay file {}: {e}", path.display())))?;
            return Ok(Arc::new(replay));
        }
        let resolved = endpoint.resolve(role, env)?;
        let http = HttpBackend::new(HttpConfig {
            base_url: resolved.base_url,
            api_key: resolved.api_key,
            timeout: resolved.timeout,
        })
        .map_err(runtime)?;
        match &self.cli.record {
            Some(path) => Ok(Arc::new(RecordingBackend::new(http, path).map_err(runtime)?)),
            None => Ok(Arc::new(http)),
        }
    }
}

fn apply_endpoint(ep: &mut EndpointConfig, args: &EndpointArgs) {
    if let Some(m) = &args.model {
        ep.model = Some(m.clone());
    }
    if let Some(u) = &args.base_url {
        ep.base_url = Some(u.clone());
    }
    if let Some(t) = args.max_output_tokens {
        ep.max_output_tokens = t;
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} not found", path.display())))
    }
}

fn load_tokenizer(path: Option<&Path>) -> Result<Box<dyn Tokenizer>, CliError> {
    match path {
        None => Ok(Box::new(WhitespacePunctTokenizer)),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            Ok(Box::new(BpeTokenizer::from_merges(&text).map_err(|e| CliError::Usage(e.to_string()))?))
        }
    }
}

fn emit_diagnostics(io: &mut Io<'_>, diagnostics: &[Diagnostic]) {
    for d in diagnostics {
        let _ = writeln!(io.stderr, "{}", d.to_json_line());
    }
}

fn write_json_file(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(runtime)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_perturb(ctx: &Ctx<'_>, config: &mut Config, a: &PerturbArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    require_file(&a.corpus, "corpus")?;
    let p = &mut config.perturb;
    if let Some(v) = a.seed {
        p.seed = v;
    }
    if let Some(v) = a.p_halu {
        p.p_halu = v;
    }
    if let Some(v) = a.budget {
        p.budget = v;
    }
    if let Some(v) = a.max_in_flight {
        p.max_in_flight = v;
    }
    if let Some(v) = a.reject_fraction_limit {
        p.reject_fraction_limit = v;
    }
    p.include_unanswerable |= a.include_unanswerable;
    apply_endpoint(&mut config.generator, &a.endpoint);
    if let Some(t) = a.endpoint.temperature {
        config.temperatures.generation = t;
    }
    config.check()?;
    let tokenizer = load_tokenizer(a.bpe_merges.as_deref())?;
    let model = config.generator.resolve_model("generator", io.env)?;
    let backend = ctx.backend("generator", &config.generator, io.env)?;

    let mut manifest = ctx.manifest("perturb");
    manifest.seed = Some(config.perturb.seed);
    manifest.config = serde_json::to_value(&*config).ok();
    manifest.endpoints.insert("generator".into(), endpoint_hash(&backend.identity(), &model));
    let manifest_path = ctx.manifest_path(Some(&a.out));
    let gateway = ctx.gateway(config, backend)?;

    let build = BuildConfig {
        seed: config.perturb.seed,
        policy: BranchPolicy { p_halu: config.perturb.p_halu, include_unanswerable: config.perturb.include_unanswerable },
        budget: config.perturb.budget,
        max_in_flight: config.perturb.max_in_flight,
        reject_fraction_limit: config.perturb.reject_fraction_limit,
        generation: GenerationSettings {
            model,
            temperature: config.temperatures.generation,
            max_output_tokens: config.generator.max_output_tokens,
        },
    };
    let mut outputs = Vec::new();
    let result = (|| {
        let loaded = load_musique(&a.corpus).map_err(runtime)?;
        emit_diagnostics(io, &loaded.diagnostics);
        let outcome = build_dataset(&loaded.items, &gateway, &build, &*tokenizer).map_err(runtime)?;
        outputs = write_outputs(&outcome, &a.out).map_err(runtime)?;
        let s = &outcome.stats;
        let fraction = s.dataset.as_ref().map(|d| format!("{:.4}", d.hallucinated_fraction)).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            io.stdout,
            "input {} accepted {} rejected {} quarantined {} skipped {} hallucinated_fraction {}",
            s.input, s.accepted, s.rejected, s.quarantined, s.skipped, fraction
        );
        match outcome.failure {
            Some(f) => Err(CliError::Runtime(f)),
            None => Ok(()),
        }
    })();
    ctx.finish(manifest, manifest_path, &outputs, result)
}

fn cmd_stats(ctx: &Ctx<'_>, a: &StatsArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    require_file(&a.corpus, "corpus")?;
    if a.bucket_width == 0 {
        return Err(CliError::Usage("--bucket-width must be positive".into()));
    }
    let tokenizer = load_tokenizer(a.bpe_merges.as_deref())?;
    let manifest = ctx.manifest("stats");
    let manifest_path = ctx.manifest_path(None);
    let mut outputs = Vec::new();
    let result = (|| {
        let loaded = load_musique(&a.corpus).map_err(runtime)?;
        emit_diagnostics(io, &loaded.diagnostics);
        let dist = distribution(&loaded.items, &*tokenizer, a.bucket_width).map_err(runtime)?;
        let report = json!({
            "tokenizer": tokenizer.name(),
            "token_counts_approximate": tokenizer.name() != "bpe",
            "diagnostics": loaded.diagnostics.len(),
            "corpus": CorpusSummary::of(&loaded.items),
            "distribution": dist,
        });
        match &a.output {
            Some(path) => {
                write_json_file(path, &report)?;
                outputs.push(path.clone());
            }
            None => {
                let _ = writeln!(io.stdout, "{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
            }
        }
        Ok(())
    })();
    ctx.finish(manifest, manifest_path, &outputs, result)
}

fn cmd_export(ctx: &Ctx<'_>, a: &ExportArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    require_file(&a.records, "records file")?;
    let format: ExportFormat = a.format.parse().map_err(|e: crate::perturb::UnknownFormat| CliError::Usage(e.to_string()))?;
    let manifest = ctx.manifest("export");
    let manifest_path = ctx.manifest_path(Some(&a.out));
    let mut outputs = Vec::new();
    let result = (|| {
        let records = read_records(&a.records).map_err(runtime)?;
        outputs = write_export(&records, format, &a.out).map_err(runtime)?;
        let _ = writeln!(io.stdout, "exported {} examples", records.len());
        Ok(())
    })();
    ctx.finish(manifest, manifest_path, &outputs, result)
}

fn cmd_eval(ctx: &Ctx<'_>, config: &mut Config, a: &EvalArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    require_file(&a.source, "source file")?;
    require_file(&a.responses, "response file")?;
    apply_endpoint(&mut config.detector, &a.endpoint);
    if let Some(t) = a.endpoint.temperature {
        config.temperatures.detection = t;
    }
    if let Some(m) = &a.fixer_model {
        let mut fixer = config.fixer().clone();
        fixer.model = Some(m.clone());
        config.fixer = Some(fixer);
    }
    if a.no_llm_fix {
        config.eval.allow_llm_fix = false;
    }
    if let Some(n) = a.max_in_flight {
        config.eval.max_in_flight = n;
    }
    if let Some(p) = &a.failure_policy {
        config.eval.failure_policy = match p.replace('-', "_").as_str() {
            "not_flagged" => FailurePolicy::NotFlagged,
            "excluded" => FailurePolicy::Excluded,
            other => return Err(CliError::Usage(format!("unknown failure policy {other:?}"))),
        };
    }
    let task_types = if a.task_types.is_empty() {
        None
    } else {
        let mut set = BTreeSet::new();
        for t in &a.task_types {
            set.insert(t.parse::<TaskType>().map_err(|e| CliError::Usage(e.to_string()))?);
        }
        Some(set)
    };
    config.check()?;
    let detector_model = config.detector.resolve_model("detector", io.env)?;
    let fixer_model = config.fixer().resolve_model("fixer", io.env)?;
    let backend = ctx.backend("detector", &config.detector, io.env)?;

    let mut manifest = ctx.manifest("eval");
    manifest.config = serde_json::to_value(&*config).ok();
    manifest.endpoints.insert("detector".into(), endpoint_hash(&backend.identity(), &detector_model));
    manifest.endpoints.insert("fixer".into(), endpoint_hash(&backend.identity(), &fixer_model));
    let manifest_path = ctx.manifest_path(a.out.parent().map(|p| p.to_path_buf()).as_deref());
    let gateway = ctx.gateway(config, backend)?;

    let mut options = EvalOptions::new(
        GenerationSettings {
            model: detector_model,
            temperature: config.temperatures.detection,
            max_output_tokens: config.detector.max_output_tokens,
        },
        GenerationSettings {
            model: fixer_model,
            temperature: config.temperatures.json_fix,
            max_output_tokens: config.fixer().max_output_tokens,
        },
    );
    options.allow_llm_fix = config.eval.allow_llm_fix;
    options.task_types = task_types;
    options.failure_policy = config.eval.failure_policy;
    options.max_in_flight = config.eval.max_in_flight;
    options.span_overlap = a.span_overlap;

    let mut outputs = Vec::new();
    let result = (|| {
        let loaded = load_ragtruth(&a.source, &a.responses).map_err(runtime)?;
        emit_diagnostics(io, &loaded.diagnostics);
        let report = evaluate(&loaded.items, &gateway, &options).map_err(runtime)?;
        write_json_file(&a.out, &report)?;
        outputs.push(a.out.clone());
        if let Some(path) = &a.csv {
            let file = fs::File::create(path).map_err(runtime)?;
            write_csv(&report, file).map_err(runtime)?;
            outputs.push(path.clone());
        }
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "null".into());
        let m = &report.metrics;
        let _ = writeln!(
            io.stdout,
            "cases {} recall {} precision {} f1 {} accuracy {} failed {} escalations {}",
            report.cases,
            fmt(m.recall),
            fmt(m.precision),
            fmt(m.f1),
            fmt(m.accuracy),
            report.failed,
            report.escalations
        );
        Ok(())
    })();
    ctx.finish(manifest, manifest_path, &outputs, result)
}

fn cmd_repair(ctx: &Ctx<'_>, config: &mut Config, a: &RepairArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let mut input = String::new();
    io.stdin.read_to_string(&mut input).map_err(runtime)?;
    if input.trim().is_empty() {
        return Err(CliError::Usage("empty input".into()));
    }
    let manifest = ctx.manifest("repair");
    let manifest_path = ctx.manifest_path(None);
    let result = (|| {
        let mut outcome = repair(&input);
        if outcome.method == RepairMethod::NeedsLlm && a.llm_fix {
            let mut fixer = config.fixer().clone();
            apply_endpoint(&mut fixer, &a.endpoint);
            let model = fixer.resolve_model("fixer", io.env)?;
            let backend = ctx.backend("fixer", &fixer, io.env)?;
            let gateway = ctx.gateway(config, backend)?;
            let settings = GenerationSettings {
                model,
                temperature: config.temperatures.json_fix,
                max_output_tokens: fixer.max_output_tokens,
            };
            outcome = repair_with_llm(&input, &gateway, &settings).map_err(runtime)?;
        }
        let list = outcome.verdict.as_ref().map(|v| json!(v.spans()));
        let mut out = json!({ "hallucination_list": list, "method": outcome.method });
        if a.trace {
            out["trace"] = json!(outcome.trace);
        }
        let _ = writeln!(io.stdout, "{out}");
        match outcome.verdict {
            Some(_) => Ok(()),
            None => Err(CliError::Runtime("output needs LLM repair; rerun with --llm-fix".into())),
        }
    })();
    ctx.finish(manifest, manifest_path, &[], result)
}

fn cmd_bench(ctx: &Ctx<'_>, config: &mut Config, a: &BenchArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    apply_endpoint(&mut config.generator, &a.endpoint);
    let model = config.generator.resolve_model("generator", io.env)?;
    let backend = ctx.backend("generator", &config.generator, io.env)?;
    let mut manifest = ctx.manifest("bench");
    manifest.endpoints.insert("generator".into(), endpoint_hash(&backend.identity(), &model));
    let manifest_path = ctx.manifest_path(None);
    let gateway = ctx.gateway(config, backend)?;
    let mut outputs = Vec::new();
    let result = (|| {
        let report = gateway
            .throughput_probe(&model, a.input_length, a.runs, config.generator.max_output_tokens)
            .map_err(runtime)?;
        match &a.output {
            Some(path) => {
                write_json_file(path, &report)?;
                outputs.push(path.clone());
            }
            None => {
                let _ = writeln!(io.stdout, "{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
            }
        }
        if report.partial {
            let _ = writeln!(io.stderr, "warning: {} of {} runs failed", report.failures, report.runs);
        }
        Ok(())
    })();
    ctx.finish(manifest, manifest_path, &outputs, result)
}
