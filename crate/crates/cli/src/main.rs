use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chexfix::config::{NamedBackend, PipelineConfig, CONFIG_ENV};
use chexfix::evaluate::{run_eval, EvalRunError};
use chexfix::extract::extract_manifest;
use chexfix::inject::inject_gt;
use chexfix::manifest::{load_corpus, load_manifest, to_jsonl, write_jsonl, CorpusLine};
use chexfix::pipeline::{build_backend, run_pipeline, PipelineError, PipelineOptions};
use chexfix_core::backend::{FixtureBackend, FixtureStore};
use chexfix_core::eval::{render_summary, TableFormat};
use chexfix_wire::FixtureServer;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chexfix", version, about = "Verify and correct measurements in chest X-ray reports")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print findings, tube observations and queries for every report.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Update every model report in a manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// `[id=]fixtures:<path>` or `[id=]http:<url>`; replaces configured backends.
        #[arg(long)]
        backend: Option<NamedBackend>,
        /// Updated corpus (JSONL); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Audit log (JSONL).
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Query every image for the tube, even when the report does not mention it.
        #[arg(long)]
        all_images: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Insert annotated tube distances into ground-truth reports.
    InjectGt {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fixtures: PathBuf,
        /// Rewritten manifest; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-study injection log (JSONL).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compare original and updated corpora against the ground truth.
    Eval {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        updated: PathBuf,
        /// Ground-truth corpus; defaults to the ground truth carried by `--original`.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, default_value = "txt")]
        format: TableFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full metric tables as JSON.
        #[arg(long)]
        details: Option<PathBuf>,
    },
    /// Serve a fixture file over the tool-server protocol.
    ServeFixtures {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Study frames; without it, frames are inferred from the annotations.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

/// Exit status 2 marks bad input, 1 a failure of the run itself.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn systemic(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }

    fn systemic(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        Some(p) => PipelineConfig::load(p).invalid(),
        None => Ok(PipelineConfig::default()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())).systemic(),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout").systemic(),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Extract { manifest, out } => {
            let entries = load_manifest(&manifest).invalid()?;
            let lexicon = config.lexicon().invalid()?;
            let records = extract_manifest(&entries, &lexicon, &config.keywords, config.query_gate);
            emit(out.as_deref(), &to_jsonl(&records))
        }
        Command::Run {
            manifest,
            backend,
            out,
            audit,
            all_images,
            jobs,
        } => {
            let config = match backend {
                Some(b) => {
                    let c = config.with_backend(b);
                    c.validate().invalid()?;
                    c
                }
                None => config,
            };
            let entries = load_manifest(&manifest).invalid()?;
            let mut opts = PipelineOptions::from_config(&config).invalid()?;
            opts.all_images = all_images;
            if let Some(j) = jobs {
                if j == 0 {
                    return Err(anyhow!("--jobs must be at least 1")).invalid();
                }
                opts.jobs = Some(j);
            }
            let backend = match build_backend(&config) {
                Ok(b) => b,
                Err(e @ (PipelineError::Config(_) | PipelineError::Fixtures { .. } | PipelineError::Backend(_))) => {
                    return Err(e).invalid()
                }
                Err(e) => return Err(e).systemic(),
            };
            let output = run_pipeline(&entries, backend.as_ref(), &opts).systemic()?;
            let out = out.or(config.outputs.corpus.clone());
            emit(out.as_deref(), &to_jsonl(&output.corpus))?;
            if let Some(p) = audit.or(config.outputs.audit.clone()) {
                write_jsonl(&p, &output.audit).systemic()?;
            }
            let s = output.stats;
            eprintln!(
                "{} studies, {} reports: {} gated in, {} changed, {} queries ({} failed), {} report errors",
                s.studies, s.reports, s.gated_in, s.changed, s.queries, s.failed_queries, s.report_errors
            );
            Ok(())
        }
        Command::InjectGt {
            manifest,
            fixtures,
            out,
            log,
        } => {
            let entries = load_manifest(&manifest).invalid()?;
            let store = FixtureStore::load(&fixtures).invalid()?;
            let lexicon = config.lexicon().invalid()?;
            let (entries, records) = inject_gt(&entries, &store, &lexicon);
            emit(out.as_deref(), &to_jsonl(&entries))?;
            if let Some(p) = log {
                write_jsonl(&p, &records).systemic()?;
            }
            eprintln!(
                "{} of {} ground-truth reports gained a measurement",
                records.iter().filter(|r| r.injected).count(),
                records.len()
            );
            Ok(())
        }
        Command::Eval {
            original,
            updated,
            gt,
            format,
            out,
            details,
        } => {
            let original = load_corpus(&original).invalid()?;
            let updated = load_corpus(&updated).invalid()?;
            let gt: Vec<CorpusLine> = match gt {
                Some(p) => load_corpus(&p).invalid()?,
                None => original.clone(),
            };
            let g = config.guidelines().invalid()?;
            let lexicon = config.lexicon().invalid()?;
            let result = match run_eval(&gt, &original, &updated, &g, &lexicon) {
                Ok(r) => r,
                Err(e @ (EvalRunError::Alignment(_) | EvalRunError::NoModels)) => return Err(e).invalid(),
                Err(e) => return Err(e).systemic(),
            };
            emit(out.as_deref(), &render_summary(&result.summary, format))?;
            if let Some(p) = details {
                let json = serde_json::to_string_pretty(&result).expect("serializable");
                std::fs::write(&p, json + "\n")
                    .with_context(|| format!("writing {}", p.display()))
                    .systemic()?;
            }
            Ok(())
        }
        Command::ServeFixtures {
            fixtures,
            port,
            host,
            manifest,
        } => {
            let store = FixtureStore::load(&fixtures).invalid()?;
            let server = match manifest {
                Some(m) => {
                    let entries = load_manifest(&m).invalid()?;
                    FixtureServer::new(FixtureBackend::new("fixtures", store), entries.iter().map(|e| e.study()))
                }
                None => FixtureServer::from_store("fixtures", store),
            };
            let addr = format!("{host}:{port}");
            eprintln!("serving {} studies on http://{addr}", server.study_count());
            server.serve(&addr).systemic()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
