use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use medteleop::runner::{
    run_replay, LiveOptions, LiveServer, Mode, Report, ReportFormat, RunConfig, Script, Setup, CONFIG_DIR_ENV,
};
use medteleop::{Error, Result};

#[derive(Parser)]
#[command(name = "medteleop", version, about = "Bimanual teleoperation runner: replay, live bridge, reports")]
struct Cli {
    /// Directory searched for relative --config paths not found in the
    /// working directory.
    #[arg(long, global = true, env = CONFIG_DIR_ENV)]
    config_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a recorded session or a live bridge.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Session file to replay (overrides the config's mode).
        #[arg(long, conflicts_with = "live")]
        replay: Option<PathBuf>,
        /// Serve the live bridge (overrides the config's mode).
        #[arg(long)]
        live: bool,
        #[arg(long, requires = "live")]
        port: Option<u16>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Live mode: stop after this many simulated seconds instead of
        /// waiting for Enter / end of stdin.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Check a config and everything it references, without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a saved report.json.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
    },
    /// Regenerate a scripted session (bvm_paper_matched, bvm_two_hand,
    /// needle_injection, auscultation).
    MakeSession {
        name: String,
        #[arg(long)]
        config: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, dir: Option<&Path>) -> Result<RunConfig> {
    RunConfig::load(&RunConfig::locate(path, dir))
}

fn run(cli: Cli) -> Result<()> {
    let dir = cli.config_dir.as_deref();
    match cli.command {
        Command::Run {
            config,
            replay,
            live,
            port,
            seed,
            out,
            duration,
        } => {
            let mut cfg = load_config(&config, dir)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mode = match (replay, live) {
                (Some(p), _) => Mode::Replay(p),
                (None, true) => Mode::Live {
                    port: port.or(match cfg.mode {
                        Some(Mode::Live { port }) => Some(port),
                        _ => None,
                    })
                    .ok_or_else(|| Error::Config("--live needs --port or mode.live_port".into()))?,
                },
                (None, false) => cfg
                    .mode
                    .clone()
                    .ok_or_else(|| Error::Config("no mode: pass --replay or --live, or set [mode]".into()))?,
            };
            let out_dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            match mode {
                Mode::Replay(session) => {
                    let report = run_replay(&cfg, &session, &out_dir)?;
                    print!("{}", report.to_text());
                }
                Mode::Live { port } => {
                    let mut opts = LiveOptions::new(port, &out_dir);
                    opts.duration_s = duration;
                    let handle = LiveServer::start(&cfg, opts)?;
                    eprintln!("bridge listening on {}", handle.local_addr());
                    let outcome = if duration.is_some() {
                        handle.wait()?
                    } else {
                        eprintln!("press Enter to stop");
                        let mut line = String::new();
                        let _ = std::io::stdin().lock().read_line(&mut line);
                        handle.stop()?
                    };
                    eprintln!("session recorded to {}", outcome.session.display());
                    print!("{}", outcome.report.to_text());
                }
            }
        }
        Command::Validate { config } => {
            let cfg = load_config(&config, dir)?;
            Setup::load(&cfg)?;
            if let Some(Mode::Replay(p)) = &cfg.mode {
                medteleop::teleop::read_session(p)?;
            }
            println!("ok");
        }
        Command::Report { input, format } => {
            let r = Report::load(&input)?;
            print!("{}", r.render(format));
            if format == ReportFormat::Json {
                println!();
            }
        }
        Command::MakeSession { name, config, out } => {
            let script = Script::from_name(&name).ok_or_else(|| Error::Config(format!("unknown script `{name}`")))?;
            let cfg = load_config(&config, dir)?;
            let text = script.generate(&Setup::load(&cfg)?)?;
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::Runtime(format!("{}: {e}", p.display())))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
