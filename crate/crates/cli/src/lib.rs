//! `soundmark` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 some clips
//! failed (the rest of the output is still written), 3 fatal I/O.

pub mod arbitrate;
pub mod config;
pub mod error;

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use soundmark_core::arbiter::InjectionMode;
use soundmark_core::manifest::{
    read_jsonl, read_manifest, write_jsonl, write_manifest, write_sft, MalformedPolicy,
};
use soundmark_core::sft_export::{export_sft, GroundSource};
use soundmark_core::stats::{
    corpus_accounting, default_taus, emit_plot_data, label_distribution, tau_sweep, PlotData,
    ScalingPoint,
};
use soundmark_core::vgc::{run_pipeline, Checkpoints, PipelineError, RunReport, Services, Stage};
use soundmark_core::CurationRecord;
use soundmark_gateway::{DualAsrGateway, Fixture, GatewayClient, HttpTeacher, MockServer};

pub use config::{PipelineConfig, ScorerConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "soundmark", version, about = "Dual-ASR audio corpus curation")]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override router.tau.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Override the number of clips in flight.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Write the effective configuration (after overrides) to this file.
    #[arg(long, global = true)]
    pub dump_config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transcribe every clip with both engines and route it.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify, generate, critique and expand; resumable.
    Curate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-stage checkpoint directory [default: <out>.stages].
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Choose the transcript to inject for each clip.
    Arbitrate {
        #[arg(long = "in")]
        input: PathBuf,
        /// none, single:<engine_id> or dual.
        #[arg(long)]
        mode: InjectionMode,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-candidate scores here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Write supervised fine-tuning records.
    ExportSft {
        #[arg(long = "in")]
        input: PathBuf,
        /// An engine id, or `arbitrated`.
        #[arg(long)]
        ground: String,
        /// Outcomes from `arbitrate`; computed with dual mode when omitted.
        #[arg(long)]
        arbitration: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus reports and plot data.
    Stats {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        report: ReportKind,
        /// Comma-separated thresholds for the sweep [default: 0,0.1,...,1].
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        /// Comma-separated `scale_k:accuracy` points for the scaling curve.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve scripted ASR, teacher and scorer endpoints.
    MockServe {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Labels,
    Accounting,
    Sweep,
    Scaling,
}

/// Parse `args`, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();
    let runtime = match tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(3);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(tau) = cli.tau {
        cfg.router.tau = tau;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    if let Some(path) = &cli.dump_config {
        std::fs::write(path, cfg.to_toml()).map_err(|e| CliError::io(path.display(), e))?;
    }
    Ok(cfg)
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli)?;
    match cli.command {
        Command::Verify { input, out } => curate(&cfg, &input, &out, &[Stage::Verify], None).await,
        Command::Curate {
            input,
            out,
            checkpoint_dir,
        } => {
            let dir = checkpoint_dir.unwrap_or_else(|| with_suffix(&out, ".stages"));
            curate(&cfg, &input, &out, &Stage::ALL, Some(Checkpoints::new(dir))).await
        }
        Command::Arbitrate {
            input,
            mode,
            out,
            trace,
        } => arbitrate(&cfg, &input, &mode, &out, trace.as_deref()).await,
        Command::ExportSft {
            input,
            ground,
            arbitration,
            out,
        } => export(&cfg, &input, &ground, arbitration.as_deref(), &out).await,
        Command::Stats {
            input,
            report,
            taus,
            points,
            out,
        } => stats(&cfg, input.as_deref(), report, taus, points, &out),
        Command::MockServe {
            fixtures,
            port,
            host,
        } => mock_serve(&fixtures, SocketAddr::new(host, port)).await,
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_records(path: &Path) -> Result<Vec<CurationRecord>, CliError> {
    read_manifest(path, MalformedPolicy::Abort)
        .map(|(records, _)| records)
        .map_err(|e| CliError::io(path.display(), e))
}

fn write_sidecar<T: Serialize>(out: &Path, report: &T) -> Result<(), CliError> {
    let path = with_suffix(out, ".report.json");
    let json = serde_json::to_string_pretty(report).expect("reports serialize");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(path.display(), e))
}

fn print_report(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes());
    let _ = stdout.flush();
}

async fn curate(
    cfg: &PipelineConfig,
    input: &Path,
    out: &Path,
    stages: &[Stage],
    checkpoints: Option<Checkpoints>,
) -> Result<(), CliError> {
    let client = GatewayClient::default();
    let transcriber = DualAsrGateway::new(client.clone(), cfg.asr_engines()?);
    let teacher = match stages.iter().any(|s| *s != Stage::Verify) {
        true => Some(HttpTeacher::new(client, cfg.teacher()?.clone())),
        false => None,
    };
    let records = load_records(input)?;
    tracing::info!(clips = records.len(), workers = cfg.workers, "starting");
    let services = Services {
        transcriber: &transcriber,
        teacher: teacher.as_ref().map(|t| t as _),
    };
    let (records, report) = run_pipeline(
        records,
        stages,
        &cfg.run_options(),
        services,
        checkpoints.as_ref(),
    )
    .await
    .map_err(|e| match e {
        PipelineError::MissingTeacher(_) => CliError::Config(e.to_string()),
        other => CliError::Io(other.to_string()),
    })?;
    write_manifest(out, &records).map_err(|e| CliError::io(out.display(), e))?;
    finish_run(out, &report)
}

fn finish_run(out: &Path, report: &RunReport) -> Result<(), CliError> {
    print_report(&report.render_text());
    write_sidecar(out, report)?;
    if report.has_failures() {
        return Err(CliError::Partial {
            errored: report.errored,
        });
    }
    Ok(())
}

async fn arbitrate(
    cfg: &PipelineConfig,
    input: &Path,
    mode: &InjectionMode,
    out: &Path,
    trace: Option<&Path>,
) -> Result<(), CliError> {
    let records = load_records(input)?;
    if let InjectionMode::SingleAsr(id) = mode {
        // Validate against the manifest when no engines are configured.
        let known: Vec<&str> = match cfg.engines.is_empty() {
            false => cfg.engines.iter().map(|e| e.engine_id.as_str()).collect(),
            true => records
                .iter()
                .flat_map(|r| r.candidates.candidates.iter().map(|c| c.engine_id.as_str()))
                .collect(),
        };
        mode.validate(&known)
            .map_err(|_| CliError::Config(format!("--mode names unknown engine {id:?}")))?;
    }
    let scorer = match mode {
        InjectionMode::DualAsr => cfg.scorer()?.build(&GatewayClient::default()),
        // Never consulted by the other modes.
        _ => Box::new(soundmark_core::arbiter::ReferenceScorer::new(0)),
    };
    let result = arbitrate::arbitrate_records(&records, mode, scorer.as_ref(), cfg.workers).await;
    write_jsonl(out, &result.outcomes).map_err(|e| CliError::io(out.display(), e))?;
    if let Some(path) = trace {
        write_jsonl(path, &result.trace).map_err(|e| CliError::io(path.display(), e))?;
    }
    print_report(&result.report.render_text());
    write_sidecar(out, &result.report)?;
    match result.report.errored {
        0 => Ok(()),
        errored => Err(CliError::Partial { errored }),
    }
}

async fn export(
    cfg: &PipelineConfig,
    input: &Path,
    ground: &str,
    arbitration: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let records = load_records(input)?;
    let source = if ground == "arbitrated" {
        let outcomes = match arbitration {
            Some(path) => read_jsonl(path).map_err(|e| CliError::io(path.display(), e))?,
            None => {
                let scorer = cfg.scorer()?.build(&GatewayClient::default());
                let eligible: Vec<_> = records
                    .iter()
                    .filter(|r| {
                        soundmark_core::sft_export::is_exportable(r) && !r.candidates.is_empty()
                    })
                    .cloned()
                    .collect();
                arbitrate::arbitrate_records(
                    &eligible,
                    &InjectionMode::DualAsr,
                    scorer.as_ref(),
                    cfg.workers,
                )
                .await
                .outcomes
            }
        };
        GroundSource::Arbitrated(arbitrate::selections(&outcomes))
    } else {
        GroundSource::Engine(ground.to_owned())
    };
    let sft = export_sft(&records, &source).map_err(|e| CliError::Config(e.to_string()))?;
    write_sft(out, &sft).map_err(|e| CliError::io(out.display(), e))?;
    print_report(&format!("records: {}\n", sft.len()));
    Ok(())
}

fn parse_points(raw: &[String]) -> Result<Vec<ScalingPoint>, CliError> {
    raw.iter()
        .map(|p| {
            let bad = || CliError::Config(format!("--points entry {p:?} is not scale_k:accuracy"));
            let (k, acc) = p.split_once(':').ok_or_else(bad)?;
            Ok(ScalingPoint {
                scale_k: k.trim().parse().map_err(|_| bad())?,
                accuracy: acc.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn stats(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    report: ReportKind,
    taus: Option<Vec<f64>>,
    points: Option<Vec<String>>,
    out: &Path,
) -> Result<(), CliError> {
    let records = || -> Result<Vec<CurationRecord>, CliError> {
        load_records(
            input.ok_or_else(|| CliError::Config("--in is required for this report".into()))?,
        )
    };
    let csv_err = |e: soundmark_core::stats::StatsError| CliError::io(out.display(), e);
    match report {
        ReportKind::Labels => {
            let dist =
                label_distribution(&records()?).map_err(|e| CliError::Config(e.to_string()))?;
            emit_plot_data(&PlotData::Labels(&dist), out).map_err(csv_err)?;
            let mut text = format!(
                "assignments: {}\nclips: {}\nhours: {:.2}\nretention: {:.4}\n",
                dist.total_assignments, dist.total_clips, dist.total_hours, dist.retention
            );
            for (tag, _) in dist.ranked() {
                text.push_str(&format!("{tag}: {:.1}\n", dist.percent(tag)));
            }
            print_report(&text);
        }
        ReportKind::Accounting => {
            let acc =
                corpus_accounting(&records()?).map_err(|e| CliError::Config(e.to_string()))?;
            let json = serde_json::to_string_pretty(&acc).expect("accounting serializes");
            std::fs::write(out, json.clone() + "\n").map_err(|e| CliError::io(out.display(), e))?;
            print_report(&(json + "\n"));
        }
        ReportKind::Sweep => {
            let taus = taus.unwrap_or_else(default_taus);
            let records = records()?;
            let pairs = records
                .iter()
                .filter(|r| !r.candidates.is_empty())
                .map(|r| &r.candidates);
            let rows = tau_sweep(pairs, &taus, cfg.router.boundary_inclusive)
                .map_err(|e| CliError::Config(e.to_string()))?;
            emit_plot_data(&PlotData::Sweep(&rows), out).map_err(csv_err)?;
            let text: String = rows
                .iter()
                .map(|r| {
                    format!(
                        "tau {}: bypass {} pass {} pruned {}\n",
                        r.tau, r.bypass, r.pass, r.pruned
                    )
                })
                .collect();
            print_report(&text);
        }
        ReportKind::Scaling => {
            let raw = points.ok_or_else(|| {
                CliError::Config("--points is required for the scaling report".into())
            })?;
            let points = parse_points(&raw)?;
            emit_plot_data(&PlotData::Scaling(&points), out).map_err(csv_err)?;
            print_report(&format!("points: {}\n", points.len()));
        }
    }
    Ok(())
}

async fn mock_serve(fixtures: &Path, addr: SocketAddr) -> Result<(), CliError> {
    let fixture = Fixture::load(fixtures).map_err(|e| CliError::Config(e.to_string()))?;
    let server = MockServer::bind(fixture, addr)
        .await
        .map_err(|e| CliError::io(addr, e))?;
    print_report(&format!("listening on {}\n", server.base_url()));
    server.run_until_ctrl_c().await;
    Ok(())
}
