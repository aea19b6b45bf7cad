mod render;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cotscore_core::corpus::InputFormat;
use cotscore_core::hitl::{CandidateWeights, ChainInput, PromotionRequest, StickingPointDraft};
use cotscore_core::metrics::{confusion_csv, render_table};
use cotscore_core::workspace::{
    IrrScoresRequest, OpenIrrRequest, Partition, ResolutionRequest, RunRequest, Workspace,
    WorkspaceError,
};
use cotscore_service::{Server, ServiceConfig, ServiceError, DEFAULT_PORT};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cotscore", version, about = "Rubric-grounded LLM scoring with human-in-the-loop refinement")]
struct Cli {
    /// Workspace data directory.
    #[arg(long, global = true, env = "COTSCORE_DATA", default_value = "cotscore-data")]
    data: PathBuf,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a data directory.
    Init {
        /// Install the bundled rubrics, assessments, responses, exemplars, configs and providers.
        #[arg(long)]
        fixtures: bool,
    },
    /// Add student responses from a JSONL or CSV file.
    Ingest {
        file: PathBuf,
        /// Defaults to the file extension.
        #[arg(long)]
        format: Option<InputFormat>,
    },
    /// Create or replace the train/test split of an assessment.
    Split {
        #[arg(long)]
        assessment: String,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List prompt configs.
    Configs,
    /// Render the system prompt of a config (name, name@N, hash or file).
    Prompt {
        #[arg(long)]
        config: String,
    },
    /// Score one split of an assessment.
    Score {
        #[arg(long)]
        assessment: Option<String>,
        #[arg(long)]
        split: Partition,
        #[arg(long)]
        provider: String,
        #[arg(long)]
        config: String,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// List runs.
    Runs,
    /// Agreement metrics for a run.
    Metrics {
        #[arg(long)]
        run: String,
        /// Also write the JSON document to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every confusion matrix as long-format CSV to this file.
        #[arg(long)]
        confusion_csv: Option<PathBuf>,
    },
    /// Inter-rater reliability sessions.
    #[command(subcommand)]
    Irr(IrrCommand),
    /// Active-learning loop.
    #[command(subcommand)]
    Al(AlCommand),
    /// Serve the HTTP API on a local port.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Permit binding a non-loopback address.
        #[arg(long)]
        allow_remote: bool,
    },
}

#[derive(Subcommand)]
enum IrrCommand {
    /// Sample responses for two raters and withhold them from scoring.
    Open {
        #[arg(long)]
        assessment: String,
        /// Two rater names, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        raters: Vec<String>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Record one rater's labels from a JSON file (`-` for stdin) mapping
    /// response id to slot to label.
    Score {
        session: String,
        #[arg(long)]
        rater: String,
        #[arg(long)]
        scores: PathBuf,
    },
    /// Show one session, or all sessions when no id is given.
    Status { session: Option<String> },
    /// Store a consensus label for a disagreement.
    Resolve {
        session: String,
        #[arg(long)]
        response: String,
        #[arg(long)]
        criterion: String,
        #[arg(long)]
        consensus: i64,
        #[arg(long)]
        note: Option<String>,
        #[command(flatten)]
        sticking: StickingArgs,
    },
    /// Draw a fresh sample after kappa fell below the gate.
    Resample { session: String },
}

#[derive(Args)]
struct StickingArgs {
    /// Record the disagreement as a sticking point with this description.
    #[arg(long = "sticking-point")]
    description: Option<String>,
    /// Resolution text for the sticking point; defaults to the note.
    #[arg(long, requires = "description")]
    resolution: Option<String>,
    /// Guideline appended to the rubric for every later prompt.
    #[arg(long, requires = "description")]
    guideline: Option<String>,
    #[arg(long, requires = "description")]
    exemplar: Option<String>,
}

#[derive(Subcommand)]
enum AlCommand {
    /// Per-criterion overscoring and underscoring trends.
    Trends {
        #[arg(long)]
        run: String,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Rank misscored responses as exemplar candidates.
    Rank {
        #[arg(long)]
        run: String,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Show at most this many candidates.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Promote a candidate to an exemplar with human-written reasoning.
    Promote {
        #[arg(long)]
        run: String,
        #[arg(long)]
        response: String,
        /// JSON or TOML file of chains: `[{slot, text, citations}]` or `[[chains]]`.
        #[arg(long)]
        cot: PathBuf,
        #[arg(long)]
        exemplar_id: Option<String>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("COTSCORE_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<WorkspaceError>() {
                Some(ws) => eprintln!("error[{}]: {e:#}", ws.code()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    let open = || Workspace::open(&cli.data);
    match cli.command {
        Command::Init { fixtures } => {
            Workspace::init(&cli.data, fixtures)?;
            if !json {
                println!("initialized {}", cli.data.display());
            }
        }
        Command::Ingest { file, format } => {
            let ws = open()?;
            let format = match format {
                Some(f) => f,
                None => format_from_extension(&file)?,
            };
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let report = ws.ingest(&text, format)?;
            if json {
                print_json(&report)?;
            } else {
                print!("{}", render::ingest(&report));
            }
        }
        Command::Split { assessment, test_fraction, seed } => {
            let stored = open()?.split(&assessment, test_fraction, seed)?;
            if json {
                print_json(&stored)?;
            } else {
                print!("{}", render::split(&stored));
            }
        }
        Command::Configs => {
            let configs = open()?.configs()?;
            if json {
                print_json(&configs)?;
            } else {
                print!("{}", render::configs(&configs));
            }
        }
        Command::Prompt { config } => {
            let prompt = open()?.render(&config)?;
            if json {
                print_json(&prompt)?;
            } else {
                println!("{}", prompt.text);
                eprintln!("config {} ~{} tokens", prompt.config_hash, prompt.estimated_tokens);
            }
        }
        Command::Score { assessment, split, provider, config, parallelism } => {
            let record = open()?.run(&RunRequest {
                config,
                provider,
                split,
                assessment,
                parallelism,
            })?;
            if json {
                print_json(&record.manifest)?;
            } else {
                print!("{}", render::run_summary(&record));
            }
        }
        Command::Runs => {
            let runs = open()?.runs()?;
            if json {
                print_json(&runs)?;
            } else {
                print!("{}", render::runs(&runs));
            }
        }
        Command::Metrics { run, out, confusion_csv: csv_path } => {
            let metrics = open()?.metrics(&run)?;
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&metrics)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = csv_path {
                std::fs::write(&path, confusion_csv(&metrics))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if json {
                print_json(&metrics)?;
            } else {
                print!("{}", render_table(&metrics));
            }
        }
        Command::Irr(cmd) => irr(&open()?, cmd, json)?,
        Command::Al(cmd) => al(&open()?, cmd, json)?,
        Command::Serve { port, host, allow_remote } => serve(&cli.data, port, host, allow_remote)?,
    }
    Ok(())
}

fn format_from_extension(path: &Path) -> Result<InputFormat> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    match ext.parse() {
        Ok(f) => Ok(f),
        Err(_) => bail!("cannot tell the format of {}; pass --format jsonl or --format csv", path.display()),
    }
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn irr(ws: &Workspace, cmd: IrrCommand, json: bool) -> Result<()> {
    let session = match cmd {
        IrrCommand::Open { assessment, raters, fraction, seed } => {
            let [a, b]: [String; 2] = raters
                .try_into()
                .map_err(|_| anyhow::anyhow!("--raters takes exactly two names"))?;
            ws.open_irr(&OpenIrrRequest {
                assessment_id: assessment,
                raters: [a, b],
                fraction,
                seed,
            })?
        }
        IrrCommand::Score { session, rater, scores } => {
            let text = read_input(&scores)?;
            let scores: BTreeMap<String, BTreeMap<String, i64>> = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", scores.display()))?;
            ws.record_irr_scores(&session, &IrrScoresRequest { rater, scores })?
        }
        IrrCommand::Status { session: None } => {
            let sessions = ws.irr_sessions()?;
            if json {
                return print_json(&sessions);
            }
            print!("{}", render::irr_sessions(&sessions));
            return Ok(());
        }
        IrrCommand::Status { session: Some(id) } => ws.irr_session(&id)?,
        IrrCommand::Resolve { session, response, criterion, consensus, note, sticking } => {
            let sticking_point = sticking.description.map(|description| StickingPointDraft {
                description,
                resolution: sticking.resolution.unwrap_or_default(),
                guideline: sticking.guideline,
                exemplar_id: sticking.exemplar,
            });
            let outcome = ws.resolve_irr(
                &session,
                &ResolutionRequest {
                    response_id: response,
                    criterion_id: criterion,
                    consensus,
                    note,
                    sticking_point,
                },
            )?;
            if json {
                return print_json(&outcome);
            }
            if let Some(sp) = &outcome.sticking_point {
                println!("recorded sticking point {} for {}", sp.id, sp.affected_criteria.join(", "));
            }
            outcome.session
        }
        IrrCommand::Resample { session } => ws.resample_irr(&session)?,
    };
    if json {
        print_json(&session)
    } else {
        print!("{}", render::irr_session(&session));
        Ok(())
    }
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum CotFile {
    List(Vec<ChainInput>),
    Table { chains: Vec<ChainInput> },
}

fn read_chains(path: &Path) -> Result<Vec<ChainInput>> {
    let text = read_input(path)?;
    let parsed: CotFile = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(match parsed {
        CotFile::List(c) | CotFile::Table { chains: c } => c,
    })
}

fn al(ws: &Workspace, cmd: AlCommand, json: bool) -> Result<()> {
    match cmd {
        AlCommand::Trends { run, threshold } => {
            let report = ws.trends(&run, threshold)?;
            if json {
                return print_json(&report);
            }
            print!("{}", render::trends(&report));
        }
        AlCommand::Rank { run, threshold, alpha, beta, gamma, limit } => {
            let weights = (alpha.is_some() || beta.is_some() || gamma.is_some()).then(|| {
                let d = CandidateWeights::default();
                CandidateWeights {
                    alpha: alpha.unwrap_or(d.alpha),
                    beta: beta.unwrap_or(d.beta),
                    gamma: gamma.unwrap_or(d.gamma),
                }
            });
            let mut ranking = ws.candidates(&run, threshold, weights)?;
            if let Some(n) = limit {
                ranking.candidates.truncate(n);
            }
            if json {
                return print_json(&ranking);
            }
            if let Some(w) = &ranking.warning {
                eprintln!("warning: {w}");
            }
            print!("{}", render::ranking(&ranking));
        }
        AlCommand::Promote { run, response, cot, exemplar_id } => {
            let outcome = ws.promote(&PromotionRequest {
                run_id: run,
                response_id: response,
                chains: read_chains(&cot)?,
                exemplar_id,
            })?;
            if json {
                return print_json(&outcome);
            }
            println!(
                "promoted {} into {} v{} -> v{} ({} exemplars, ~{} tokens, hash {})",
                outcome.exemplar_id,
                outcome.config_name,
                outcome.previous_version,
                outcome.version,
                outcome.exemplar_count,
                outcome.estimated_tokens,
                outcome.config_hash
            );
        }
    }
    Ok(())
}

fn serve(data: &Path, port: u16, host: std::net::IpAddr, allow_remote: bool) -> Result<()> {
    let config = ServiceConfig {
        addr: std::net::SocketAddr::new(host, port),
        allow_remote,
        ..ServiceConfig::local(data, port)
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = match Server::bind(&config).await {
            Ok(s) => s,
            Err(ServiceError::Workspace(e)) => return Err(e.into()),
            Err(e) => return Err(anyhow::Error::new(e)),
        };
        println!("listening on http://{}", server.local_addr());
        server
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
