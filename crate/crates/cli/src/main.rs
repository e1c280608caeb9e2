use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use airybeam::config::load_scenario;
use airybeam::experiment::{self, ExperimentPreset, Scale};
use airybeam::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "airybeam", version, about = "Near-field Airy beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a preset and write CSV artifacts plus manifest.json.
    Run {
        preset: String,
        #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
        scale: ScaleArg,
        /// Seed for random placements and analog initializations.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: out/<preset>-<scale>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Override a preset field, e.g. `--set users.0=[0.3,0.05]`.
        #[arg(long = "set", value_name = "PATH=VALUE")]
        overrides: Vec<String>,
    },
    /// List the built-in presets.
    ListPresets,
    /// Check a scenario file and print its resolved grid.
    Validate { scenario: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &Error) -> ExitCode {
    ExitCode::from(if err.is_config() { EXIT_CONFIG } else { EXIT_NUMERICAL })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListPresets => {
            for (name, summary) in experiment::preset_names() {
                println!("{name:<24}{summary}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(sc) => {
                println!(
                    "ok: {} elements, {} obstacles, {} users",
                    sc.scene.geometry.num_elements(),
                    sc.scene.obstacles.len(),
                    sc.scene.num_users()
                );
                println!(
                    "grid: dy = {:.4e} m, dx = {:.4e} m, y_extent = {:.4} m, {} samples per plane",
                    sc.grid.dy,
                    sc.grid.dx,
                    sc.grid.y_extent,
                    sc.grid.padded_len()
                );
                for k in 0..sc.scene.num_users() {
                    println!("user {k}: blockage ratio {:.3}", sc.scene.blockage_ratio(k));
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                log::error!("{e}");
                exit_code(&e)
            }
        },
        Command::Run {
            preset,
            scale,
            seed,
            out,
            jobs,
            overrides,
        } => run(&preset, scale.into(), seed, out, jobs, &overrides),
    }
}

fn run(
    name: &str,
    scale: Scale,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    overrides: &[String],
) -> ExitCode {
    if let Some(j) = jobs {
        if j == 0 {
            log::error!("--jobs must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let preset = match ExperimentPreset::builtin(name, scale)
        .and_then(|p| match seed {
            Some(s) => p.with_seed(s),
            None => Ok(p),
        })
        .and_then(|p| p.with_overrides(overrides))
    {
        Ok(p) => p,
        Err(e) => {
            log::error!("{e}");
            return exit_code(&e);
        }
    };
    if scale == Scale::Paper {
        log::warn!(
            "paper scale uses {} elements and room-sized grids; expect long runtimes and high memory use",
            preset.scenario.num_elements
        );
    }
    let dir = out.unwrap_or_else(|| PathBuf::from(format!("out/{}-{}", preset.name, scale.label())));
    log::info!("running `{}` ({} scale), config {}", preset.name, scale.label(), preset.config_hash());

    let start = Instant::now();
    let result = experiment::run(&preset);
    let elapsed = start.elapsed().as_secs_f64();
    match result {
        Ok(output) => match experiment::write_run(&dir, &preset, &output, elapsed) {
            Ok(manifest) => {
                for (k, v) in &manifest.summary {
                    println!("{k} = {v}");
                }
                println!("wrote {} files to {} in {elapsed:.1} s", manifest.files.len() + 1, dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                log::error!("{e}");
                exit_code(&e)
            }
        },
        Err(e) => {
            log::error!("{e}");
            if !e.is_config() {
                match experiment::write_diagnostic(&dir, &preset, &e) {
                    Ok(()) => log::error!("diagnostic written to {}", dir.join("diagnostic.txt").display()),
                    Err(w) => log::error!("could not write diagnostic: {w}"),
                }
            }
            exit_code(&e)
        }
    }
}
