use std::path::PathBuf;
use std::process::ExitCode;

use biasaudit_cli::commands::{
    cmd_audit, cmd_compare, cmd_match, cmd_synth, cmd_validate, Overrides, Written,
};
use biasaudit_cli::config::Format;
use biasaudit_cli::CliError;
use clap::{Args, Parser, Subcommand};

/// Subgroup performance audits for binary risk classifiers.
#[derive(Parser)]
#[command(name = "biasaudit", version)]
struct Cli {
    /// Worker threads for bootstrap replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap replicates.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Report formats: json, csv, markdown, svg-calibration.
    #[arg(long = "format", value_delimiter = ',')]
    formats: Vec<Format>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            n_bootstrap: self.bootstrap,
            output_dir: self.out.clone(),
            formats: self.formats.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Bootstrap and matched audits of every score column.
    Audit {
        #[command(flatten)]
        run: RunArgs,
        /// Require and report a comparison of the first two score columns.
        #[arg(long)]
        compare: bool,
    },
    /// Audit two score columns side by side.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Propensity matching and balance diagnostics only.
    Match {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Generate a synthetic cohort and its manifest.
    Synth {
        /// Synthetic cohort configuration (TOML).
        config: PathBuf,
        /// Cohort file to write; the manifest goes next to it.
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a run configuration and its cohort.
    Validate { config: PathBuf },
}

fn report(result: Result<Written, CliError>) -> ExitCode {
    match result {
        Ok(w) => {
            for f in &w.files {
                println!("{}", f.display());
            }
            ExitCode::from(w.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match cli.command {
        Command::Audit { run, compare } => {
            report(cmd_audit(&run.config, &run.overrides(), compare))
        }
        Command::Compare { run, a, b } => {
            report(cmd_compare(&run.config, &run.overrides(), &a, &b))
        }
        Command::Match { run } => report(cmd_match(&run.config, &run.overrides())),
        Command::Synth { config, out, seed } => report(cmd_synth(&config, &out, seed)),
        Command::Validate { config } => match cmd_validate(&config) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
