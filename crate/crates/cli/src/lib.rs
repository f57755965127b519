//! Command-line front-end for the `mapc` detection regulariser.
//!
//! Exit statuses: 0 success, 2 input error, 3 configuration error,
//! 4 internal error.

pub mod commands;
pub mod docs;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mapc::Method;

use crate::commands::SceneInputs;
use crate::error::{CliError, CliResult, ExitKind};

#[derive(Debug, Parser)]
#[command(
    name = "mapc",
    version,
    about = "Regularise object detections with multi-class affinity propagation"
)]
pub struct Cli {
    /// Worker threads; 0 uses every core. Output never depends on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Detections document.
    #[arg(long)]
    pub detections: PathBuf,
    /// Taxonomy document; the bundled taxonomy when omitted.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Run configuration document.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl SceneArgs {
    fn inputs(&self) -> SceneInputs<'_> {
        SceneInputs {
            detections: &self.detections,
            taxonomy: self.taxonomy.as_deref(),
            config: self.config.as_deref(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select final detections from one detections file.
    Regularize {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value = "mapc", value_parser = parse_method)]
        method: Method,
        /// Results file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-iteration assignment snapshots here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run an NMS baseline on one detections file.
    Baseline {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value = "wcacnms", value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Results document (or any document with box, class_name and score per detection).
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report document.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report as a one-row CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate a method over a scene set for several values of one parameter.
    Sweep {
        /// Scene set directory or its manifest.
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "mapc", value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scene set.
    Synth {
        /// Scene spec document; defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search method parameters on a scene set.
    Tune {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "mapc", value_parser = parse_method)]
        method: Method,
        /// Grid document `{"axes": {name: [values]}}`; a per-method default when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// `f1` or `precision@recall=FLOOR`.
        #[arg(long, default_value = "f1")]
        objective: String,
        /// Largest grid accepted.
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record the decoded assignment after every iteration.
    Trace {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value = "mapc", value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive optimum for inputs of at most ten candidate points.
    Oracle {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => docs::write_text(p, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::internal(format!("cannot write to standard output: {e}")))
        }
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Regularize {
            scene,
            method,
            out,
            trace,
        } => {
            let r = commands::regularize(&scene.inputs(), method, trace.is_some())?;
            if let (Some(path), Some(text)) = (&trace, &r.trace) {
                docs::write_text(path, text)?;
            }
            emit(out.as_deref(), &r.results)
        }
        Command::Baseline { scene, method, out } => {
            if method.is_clustering() {
                return Err(CliError::config(format!(
                    "{method} is not a baseline; use wcacnms or acnms"
                )));
            }
            emit(
                out.as_deref(),
                &commands::regularize(&scene.inputs(), method, false)?.results,
            )
        }
        Command::Eval {
            predictions,
            ground_truth,
            taxonomy,
            config,
            out,
            csv,
        } => {
            let r = commands::eval(
                &predictions,
                &ground_truth,
                taxonomy.as_deref(),
                config.as_deref(),
            )?;
            if let Some(path) = &csv {
                docs::write_text(path, &r.csv)?;
            }
            if let Some(path) = &out {
                docs::write_text(path, &r.json)?;
            }
            emit(None, &r.table)
        }
        Command::Sweep {
            scenes,
            method,
            param,
            values,
            taxonomy,
            config,
            out,
        } => {
            let values = commands::parse_values(&values)?;
            let csv = commands::sweep_cmd(
                &scenes,
                method,
                &param,
                &values,
                taxonomy.as_deref(),
                config.as_deref(),
            )?;
            emit(out.as_deref(), &csv)
        }
        Command::Synth {
            spec,
            taxonomy,
            count,
            seed,
            out,
        } => commands::synth(spec.as_deref(), taxonomy.as_deref(), count, seed, &out).map(|_| ()),
        Command::Tune {
            scenes,
            method,
            grid,
            objective,
            cap,
            taxonomy,
            config,
            out,
        } => {
            let text = commands::tune(&commands::TuneArgs {
                scenes: &scenes,
                method,
                grid: grid.as_deref(),
                objective: commands::parse_objective(&objective)?,
                cap,
                taxonomy: taxonomy.as_deref(),
                config: config.as_deref(),
            })?;
            emit(out.as_deref(), &text)
        }
        Command::Trace { scene, method, out } => {
            emit(out.as_deref(), &commands::trace(&scene.inputs(), method)?)
        }
        Command::Oracle { scene, out } => emit(out.as_deref(), &commands::oracle(&scene.inputs())?),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitKind::Config as i32
            } else {
                0
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} threads: {e}", cli.threads);
            return ExitKind::Internal as i32;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
