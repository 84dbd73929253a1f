use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glfrac::scenario::{self, ScenarioConfig};

#[derive(Parser)]
#[command(name = "glfrac", version, about = "Phase-field fracture with single-scale and Global-Local solvers")]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a TOML file or a bundled config name
    Run {
        config: String,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// section.key=value, applied in order before validation
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare the series of two run directories
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// relative deviation allowed for reaction and energies
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// List bundled configs, or print one
    Bundled { name: Option<String> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match cli.command {
        Command::Run { config, output_dir, overrides } => {
            let cfg = match ScenarioConfig::load(&config, &overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("glfrac: {e}");
                    return ExitCode::from(2);
                }
            };
            match scenario::run(&cfg, output_dir.as_deref()) {
                Ok(out) => {
                    println!("{}", out.dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("glfrac: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Compare { a, b, tolerance } => match scenario::compare(&a, &b, tolerance) {
            Ok(r) => {
                println!("{r}");
                if r.pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("glfrac: {e}");
                ExitCode::from(2)
            }
        },
        Command::Bundled { name: None } => {
            for n in scenario::bundled_names() {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
        Command::Bundled { name: Some(n) } => match scenario::bundled(&n) {
            Some(t) => {
                print!("{t}");
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("glfrac: no bundled config {n}");
                ExitCode::from(2)
            }
        },
    }
}
