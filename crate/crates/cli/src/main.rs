mod inputs;

use std::fs;
use std::io::{self, BufRead, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ddxbench_core::agents::{listen, serve, AgentContext, BuiltinAgent};
use ddxbench_core::dialogue::{compute_stats, dataset_to_jsonl, dataset_to_text, generate_dataset, load_dataset, symptom_frequency};
use ddxbench_core::harness::{
    check_conformance, run_benchmark, sha256_hex, AgentEndpoint, AgentSpec, RunConfig, RunInputs, RunManifest,
    CASES_FILE, DEFAULT_TURN_BUDGET, MANIFEST_FILE,
};
use ddxbench_core::metrics::{aggregate, dialogue_level_score, disease_wise_score, diagnosis_correct, load_transcripts, DialogueLevelVariant};
use ddxbench_core::ontology::{cases_to_json, generate_synthetic_cases, SyntheticCaseConfig};
use ddxbench_core::seed::DEFAULT_SEED;
use ddxbench_core::simulator::{start_session, Response};
use ddxbench_core::Error;

#[derive(Parser)]
#[command(name = "ddxbench", version, about = "Diagnosis dialogue generation, patient simulation and agent scoring")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Template pack: train, robust-human, or a pack file.
    #[arg(long, global = true, default_value = "train")]
    pack: String,
    /// builtin:mini, builtin:clinic12, or an ontology file.
    #[arg(long, global = true, default_value = "builtin:mini")]
    ontology: String,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Machine,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Recall,
    PrecisionWithCost,
}

impl From<Variant> for DialogueLevelVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Recall => DialogueLevelVariant::Recall,
            Variant::PrecisionWithCost => DialogueLevelVariant::PrecisionWithCost,
        }
    }
}

#[derive(clap::Args)]
struct Timeouts {
    /// Seconds to wait for the agent's hello.
    #[arg(long, default_value_t = 10.0)]
    handshake_timeout: f64,
    /// Seconds to wait for each doctor reply.
    #[arg(long, default_value_t = 30.0)]
    turn_timeout: f64,
}

#[derive(clap::Args)]
struct Scoring {
    /// Comma-separated reliability thresholds, default 0.0,0.1,...,0.9.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long, value_enum, default_value_t = Variant::Recall)]
    variant: Variant,
}

#[derive(Subcommand)]
enum Command {
    /// Render cases into template dialogues.
    Generate {
        /// Case file, or builtin:mini.
        #[arg(long)]
        cases: String,
        /// Dataset file to write, one dialogue per line.
        #[arg(long)]
        out: PathBuf,
        /// Also write a Patient:/Doctor: transcript here.
        #[arg(long)]
        text_out: Option<PathBuf>,
    },
    /// Draw random cases from the ontology.
    Synth {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        implicit_min: usize,
        #[arg(long, default_value_t = 4)]
        implicit_max: usize,
        #[arg(long, default_value_t = 0.3)]
        negative_probability: f64,
        /// Case file to write; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a generated dataset.
    Stats {
        dataset: PathBuf,
        /// Also list how often each symptom occurs in the gold cases.
        #[arg(long)]
        frequency: bool,
    },
    /// Run a doctor agent against every case and score it.
    Eval {
        /// builtin:<oracle|random|echo>, exec:<command> or tcp:<host:port>.
        #[arg(long)]
        agent: String,
        #[arg(long)]
        cases: String,
        #[arg(long)]
        out_dir: PathBuf,
        /// Doctor utterances allowed per session.
        #[arg(long, default_value_t = DEFAULT_TURN_BUDGET)]
        turn_budget: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        scoring: Scoring,
        #[command(flatten)]
        timeouts: Timeouts,
    },
    /// Re-score a transcript log.
    Report {
        transcripts: PathBuf,
        /// Case file; defaults to the cases.json next to the transcripts.
        #[arg(long)]
        cases: Option<String>,
        #[command(flatten)]
        scoring: Scoring,
        /// Print threshold/reliability columns for plotting.
        #[arg(long)]
        curve: bool,
        /// Write report.json, report.txt and curve.tsv here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Serve a built-in agent over standard input/output or TCP.
    Agent {
        /// oracle, random or echo.
        name: String,
        /// Accept TCP connections on this address instead of using stdio.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Probe an agent for protocol conformance.
    CheckAgent {
        #[arg(long)]
        agent: String,
        /// Milliseconds to wait for unexpected extra output.
        #[arg(long, default_value_t = 300)]
        grace_ms: u64,
        #[command(flatten)]
        timeouts: Timeouts,
    },
    /// Play the doctor yourself against one case.
    Play {
        #[arg(long)]
        cases: String,
        /// Case id or zero-based index; the first case by default.
        #[arg(long)]
        case: Option<String>,
        #[arg(long, default_value_t = DEFAULT_TURN_BUDGET)]
        turn_budget: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Generate { cases, out, text_out } => generate(cli, cases, out, text_out.as_deref()),
        Command::Synth {
            count,
            implicit_min,
            implicit_max,
            negative_probability,
            out,
        } => {
            let ontology = inputs::ontology(&cli.ontology)?;
            let config = SyntheticCaseConfig {
                count: *count,
                implicit_range: (*implicit_min, *implicit_max),
                negative_probability: *negative_probability,
                seed: cli.seed,
            };
            let cases = generate_synthetic_cases(&ontology.value, &config)?;
            let doc = cases_to_json(&cases);
            match out {
                Some(path) => write_file(path, &doc)?,
                None => emit(&doc)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats { dataset, frequency } => stats(cli, dataset, *frequency),
        Command::Eval {
            agent,
            cases,
            out_dir,
            turn_budget,
            workers,
            scoring,
            timeouts,
        } => eval(cli, agent, cases, out_dir, *turn_budget, *workers, scoring, timeouts),
        Command::Report {
            transcripts,
            cases,
            scoring,
            curve,
            out_dir,
        } => report(cli, transcripts, cases.as_deref(), scoring, *curve, out_dir.as_deref()),
        Command::Agent { name, listen } => agent(cli, name, listen.as_deref()),
        Command::CheckAgent {
            agent,
            grace_ms,
            timeouts,
        } => check_agent(cli, agent, *grace_ms, timeouts),
        Command::Play {
            cases,
            case,
            turn_budget,
        } => play(cli, cases, case.as_deref(), *turn_budget),
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes to standard output; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn agent_context(cli: &Cli) -> Result<AgentContext> {
    Ok(AgentContext {
        ontology: Arc::new(inputs::ontology(&cli.ontology)?.value),
        pack: Arc::new(inputs::pack(&cli.pack)?.value),
        seed: cli.seed,
    })
}

fn endpoint(spec: &str, timeouts: &Timeouts) -> Result<AgentEndpoint> {
    let secs = |s: f64, what: &str| {
        if s.is_finite() && s > 0.0 {
            Ok(Duration::from_secs_f64(s))
        } else {
            bail!("{what} must be a positive number of seconds")
        }
    };
    let spec: AgentSpec = spec.parse()?;
    Ok(AgentEndpoint::new(spec).with_timeouts(
        secs(timeouts.handshake_timeout, "--handshake-timeout")?,
        secs(timeouts.turn_timeout, "--turn-timeout")?,
    )?)
}

fn generate(cli: &Cli, cases: &str, out: &Path, text_out: Option<&Path>) -> Result<ExitCode> {
    let ontology = inputs::ontology(&cli.ontology)?;
    let pack = inputs::pack(&cli.pack)?;
    let cases = inputs::cases(cases, &ontology.value)?;
    let dialogues = generate_dataset(&cases.value, &pack.value, &ontology.value, cli.seed)?;
    write_file(out, &dataset_to_jsonl(&dialogues))?;
    if let Some(path) = text_out {
        write_file(path, &dataset_to_text(&dialogues))?;
    }
    let stats = compute_stats(&dialogues);
    match cli.format {
        Format::Machine => emit(&to_json(&stats))?,
        Format::Text => emit(&stats.to_text())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn stats(cli: &Cli, dataset: &Path, frequency: bool) -> Result<ExitCode> {
    let ontology = inputs::ontology(&cli.ontology)?;
    let doc = inputs::read(&dataset.display().to_string())?;
    let dialogues = load_dataset(&doc, &ontology.value)?;
    let stats = compute_stats(&dialogues);
    let gold: Vec<_> = dialogues.iter().map(|d| d.gold.clone()).collect();
    let mut counts: Vec<_> = symptom_frequency(&gold).into_iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    match cli.format {
        Format::Machine => {
            let mut value = serde_json::to_value(&stats)?;
            if frequency {
                value["symptom_frequency"] = serde_json::to_value(&counts)?;
            }
            emit(&to_json(&value))?;
        }
        Format::Text => {
            let mut text = stats.to_text();
            if frequency {
                text.push_str(&format!("\n{:<40}{:>8}\n", "Symptom", "Count"));
                for (s, n) in counts {
                    let name = ontology.value.symptom(&s).map_or(s.as_str(), |x| x.canonical_name.as_str());
                    text.push_str(&format!("{name:<40}{n:>8}\n"));
                }
            }
            emit(&text)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn eval(
    cli: &Cli,
    agent: &str,
    cases: &str,
    out_dir: &Path,
    turn_budget: usize,
    workers: usize,
    scoring: &Scoring,
    timeouts: &Timeouts,
) -> Result<ExitCode> {
    let endpoint = endpoint(agent, timeouts)?;
    let ontology = inputs::ontology(&cli.ontology)?;
    let pack = inputs::pack(&cli.pack)?;
    let cases = inputs::cases(cases, &ontology.value)?;
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let config = RunConfig {
        seed: cli.seed,
        turn_budget,
        workers,
        metrics: inputs::metric_config(scoring.thresholds.as_deref(), scoring.variant.into())?,
    };
    let run_inputs = RunInputs {
        ontology: &ontology.value,
        ontology_source: &ontology.source,
        pack: &pack.value,
        pack_source: &pack.source,
        cases: &cases.value,
        cases_source: &cases.source,
    };
    let run = match run_benchmark(&endpoint, run_inputs, &config) {
        Ok(run) => run,
        Err(e) if matches!(e.root(), Error::Protocol(_) | Error::Transport(_) | Error::Timeout(_)) => {
            let ctx = agent_context(cli)?;
            if let Ok(report) = check_conformance(&endpoint, Some(&ctx), Duration::from_millis(300)) {
                eprint!("{}", report.to_text());
            }
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    run.write_to(out_dir, &cases.value, &ontology.value)
        .with_context(|| format!("writing results to {}", out_dir.display()))?;
    match cli.format {
        Format::Machine => emit(&run.report.to_json())?,
        Format::Text => emit(&run.report.to_text(Some(&ontology.value)))?,
    }
    Ok(ExitCode::SUCCESS)
}

fn report(
    cli: &Cli,
    transcripts: &Path,
    cases: Option<&str>,
    scoring: &Scoring,
    curve: bool,
    out_dir: Option<&Path>,
) -> Result<ExitCode> {
    let ontology = inputs::ontology(&cli.ontology)?;
    let dir = transcripts.parent().unwrap_or(Path::new("."));
    let default_cases = dir.join(CASES_FILE).display().to_string();
    let cases = inputs::cases(cases.unwrap_or(&default_cases), &ontology.value)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if let Ok(doc) = fs::read_to_string(&manifest_path) {
        if let Ok(manifest) = serde_json::from_str::<RunManifest>(&doc) {
            if manifest.ontology.sha256 != sha256_hex(ontology.source.as_bytes()) {
                eprintln!(
                    "warning: ontology differs from the one recorded in {}",
                    manifest_path.display()
                );
            }
        }
    }
    let records = load_transcripts(&inputs::read(&transcripts.display().to_string())?)
        .with_context(|| format!("reading {}", transcripts.display()))?;
    let config = inputs::metric_config(scoring.thresholds.as_deref(), scoring.variant.into())?;
    let report = aggregate(&records, &cases.value, &ontology.value, &config)?;
    if let Some(dir) = out_dir {
        write_file(&dir.join("report.json"), &report.to_json())?;
        write_file(&dir.join("report.txt"), &report.to_text(Some(&ontology.value)))?;
        write_file(&dir.join("curve.tsv"), &report.curve_data())?;
    }
    match cli.format {
        Format::Machine => emit(&report.to_json())?,
        Format::Text => {
            emit(&report.to_text(Some(&ontology.value)))?;
            if curve {
                emit(&format!("\n{}", report.curve_data()))?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn agent(cli: &Cli, name: &str, listen_on: Option<&str>) -> Result<ExitCode> {
    let kind: BuiltinAgent = name.strip_prefix(inputs::BUILTIN_PREFIX).unwrap_or(name).parse()?;
    let ctx = agent_context(cli)?;
    match listen_on {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("cannot listen on {addr}"))?;
            println!("listening on {}", listener.local_addr()?);
            io::stdout().flush()?;
            listen(listener, kind, ctx, None)?;
        }
        None => {
            let mut agent = kind.build(&ctx);
            serve(agent.as_mut(), kind.as_str(), io::stdin().lock(), io::stdout().lock())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn check_agent(cli: &Cli, agent: &str, grace_ms: u64, timeouts: &Timeouts) -> Result<ExitCode> {
    let endpoint = endpoint(agent, timeouts)?;
    let ctx = match endpoint.spec {
        AgentSpec::Builtin(_) => Some(agent_context(cli)?),
        _ => None,
    };
    let report = check_conformance(&endpoint, ctx.as_ref(), Duration::from_millis(grace_ms))?;
    match cli.format {
        Format::Machine => emit(&to_json(&report))?,
        Format::Text => emit(&report.to_text())?,
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn play(cli: &Cli, cases: &str, which: Option<&str>, turn_budget: usize) -> Result<ExitCode> {
    let ontology = inputs::ontology(&cli.ontology)?;
    let pack = inputs::pack(&cli.pack)?;
    let cases = inputs::cases(cases, &ontology.value)?;
    let case = match which {
        None => cases.value.first(),
        Some(key) => cases
            .value
            .iter()
            .find(|c| c.case_id == key)
            .or_else(|| key.parse::<usize>().ok().and_then(|i| cases.value.get(i))),
    }
    .context("no such case")?;

    let (mut session, opening) = start_session(case, &pack.value, &ontology.value, cli.seed)?;
    let text_mode = cli.format == Format::Text;
    let mut out = io::stdout().lock();
    if text_mode {
        writeln!(out, "Patient: {}", opening.text)?;
    }
    let mut lines = io::stdin().lock().lines();
    loop {
        if session.doctor_utterances() >= turn_budget.max(1) {
            session.truncate(None);
            break;
        }
        if text_mode {
            write!(out, "Doctor: ")?;
            out.flush()?;
        }
        let Some(line) = lines.next().transpose()? else {
            session.truncate(None);
            if text_mode {
                writeln!(out)?;
            }
            break;
        };
        if line.trim().is_empty() {
            continue;
        }
        match session.respond_text(&line)? {
            Response::Finished => break,
            Response::Reply(reply) => {
                if text_mode {
                    writeln!(out, "Patient: {}", reply.text)?;
                }
            }
        }
    }

    let transcript = session.transcript();
    let s_dise = disease_wise_score(&transcript, &ontology.value)?;
    let s_diag = dialogue_level_score(&transcript, case, DialogueLevelVariant::Recall)?;
    let correct = diagnosis_correct(&transcript, &ontology.value);
    match cli.format {
        Format::Machine => {
            let value = serde_json::json!({
                "turns": session.turns(),
                "transcript": transcript,
                "correct": correct,
                "s_dise": s_dise,
                "s_diag": s_diag,
            });
            write!(out, "{}", to_json(&value))?;
        }
        Format::Text => {
            let predicted = transcript
                .predicted_disease
                .as_ref()
                .map_or("none (truncated)".to_string(), |d| d.to_string());
            writeln!(out, "\ngold disease: {}", case.disease)?;
            writeln!(out, "predicted:    {predicted}")?;
            writeln!(out, "correct:      {correct}")?;
            writeln!(out, "inquiries:    {} (gold {})", transcript.n_pred, transcript.n_gold)?;
            writeln!(out, "S_dise:       {s_dise:.3}")?;
            writeln!(out, "S_diag:       {s_diag:.3}")?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
