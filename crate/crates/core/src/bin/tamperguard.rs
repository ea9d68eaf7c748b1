use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tamperguard::config::RunConfig;
use tamperguard::pipeline::{self, Workspace};
use tamperguard::Result;

#[derive(Parser)]
#[command(
    name = "tamperguard",
    version,
    about = "Screen images for adversarial tampering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory holding one subdirectory per stage.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// TOML run configuration; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus.
    Generate(Common),
    /// Train the victim and write PGD-attacked frames and crops.
    Attack(Common),
    /// Extract feature files for every configured family and variant.
    Featurize(Common),
    /// Cross-validate detectors and run the clustering experiment.
    Evaluate(Common),
    /// Render the result tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Nine rows by three models, and seven metric rows by nine columns.
        #[arg(long)]
        paper_layout: bool,
    },
    /// Fit the gate detector and screen a manifest.
    Gate {
        #[command(flatten)]
        common: Common,
        /// Frames to screen; defaults to the attacked corpus.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print a summary of a model file.
    Describe { file: PathBuf },
    /// Every stage in order.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paper_layout: bool,
    },
}

fn workspace(c: &Common) -> Result<Workspace> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    Workspace::new(&c.out, cfg)
}

fn done(ws: &Workspace, stage: &str, digest: String) {
    println!(
        "{stage}: {} (config {}, content {digest})",
        ws.dir(stage).display(),
        ws.config_hash()
    );
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(c) => {
            let ws = workspace(&c)?;
            done(&ws, "generate", ws.generate()?);
        }
        Command::Attack(c) => {
            let ws = workspace(&c)?;
            done(&ws, "attack", ws.attack()?);
        }
        Command::Featurize(c) => {
            let ws = workspace(&c)?;
            done(&ws, "featurize", ws.featurize()?);
        }
        Command::Evaluate(c) => {
            let ws = workspace(&c)?;
            done(&ws, "evaluate", ws.evaluate()?);
        }
        Command::Report {
            common,
            paper_layout,
        } => {
            let ws = workspace(&common)?;
            done(&ws, "report", ws.report(paper_layout)?);
        }
        Command::Gate { common, manifest } => {
            let ws = workspace(&common)?;
            let (detector, log) = ws.gate(manifest.as_deref())?;
            print!("{}", detector.describe());
            let s = log.summary();
            println!(
                "gate: {} tampered, {} clean, {} errors -> {}",
                s.tampered,
                s.clean,
                s.errors,
                ws.dir("gate").join("verdicts.csv").display()
            );
        }
        Command::Describe { file } => print!("{}", pipeline::describe(&file)?),
        Command::Run {
            common,
            paper_layout,
        } => {
            let ws = workspace(&common)?;
            done(&ws, "report", ws.run_all(paper_layout)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
