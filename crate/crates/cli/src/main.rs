mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{Output, RunError};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "bips", version, about = "Embedding-based cluster DMRG over fragment product states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`key = value` lines, `#` comments).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for `<command>.txt` and `<command>.results`; overrides `output` in the config.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Progress and timings on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Restricted Hartree-Fock.
    Hf,
    /// Exact diagonalization in the target sector.
    Fci,
    /// DMRG on the full orbital chain.
    Dmrg,
    /// Embedding, local bases and cluster DMRG.
    Bips,
    /// Cluster run followed by dominant product-state enumeration.
    Sample,
    /// Cluster run, sampling and the effective Hamiltonian over the sampled states.
    Effham,
    /// Cluster and reference energies over a grid of hoppings.
    Scan,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Hf => "hf",
            Command::Fci => "fci",
            Command::Dmrg => "dmrg",
            Command::Bips => "bips",
            Command::Sample => "sample",
            Command::Effham => "effham",
            Command::Scan => "scan",
        }
    }
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.output {
        cfg.output = Some(o.clone());
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(RunError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Usage(format!("thread pool: {e}")))?;
    }
    let t = Instant::now();
    let out: Output = match cli.command {
        Command::Hf => commands::hf(&cfg)?,
        Command::Fci => commands::fci(&cfg)?,
        Command::Dmrg => commands::dmrg(&cfg)?,
        Command::Bips => commands::bips(&cfg, cli.verbose)?,
        Command::Sample => commands::sample(&cfg, cli.verbose)?,
        Command::Effham => commands::effham(&cfg, cli.verbose)?,
        Command::Scan => commands::scan(&cfg, cli.verbose)?,
    };
    if cli.verbose {
        eprintln!("{}: {:.3} s", cli.command.name(), t.elapsed().as_secs_f64());
    }
    let name = cli.command.name();
    let text = out.text(&cfg);
    print!("{text}");
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
        let write = |file: String, body: &str| {
            let p = dir.join(file);
            std::fs::write(&p, body).map_err(|e| RunError::Io(format!("{}: {e}", p.display())))
        };
        write(format!("{name}.txt"), &text)?;
        write(format!("{name}.results"), &out.results_text())?;
        for (file, body) in &out.extra_files {
            write(file.clone(), body)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', "; ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::from(e.exit_code())
        }
    }
}
