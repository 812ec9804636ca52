use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparseocc_bench::config::{load_config, parse_shape};
use sparseocc_bench::report::emit_report;
use sparseocc_bench::run::{bench, run_pipeline};
use sparseocc_bench::scene::{gen_scene, SceneConfig};
use sparseocc_bench::scene_file::{read_scene, write_labels, write_scene};
use sparseocc_bench::verify::{run_suite, Suite};
use sparseocc_bench::BenchError;
use sparseocc_core::pipeline::PipelineConfig;
use sparseocc_core::GridShape;

/// Sparse occupancy pipeline: scenes, runs, MAC reports and oracle checks.
#[derive(Parser)]
#[command(name = "sparseocc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic sparse scene.
    GenScene {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        density: f64,
        /// HxWxD
        #[arg(long, default_value = "128x128x16", value_parser = parse_shape)]
        shape: GridShape,
        #[arg(long, default_value_t = 128)]
        channels: usize,
        /// Also write the ground-truth label grid.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Run the pipeline on a scene file and write the JSON report.
    Run {
        #[arg(long)]
        scene: PathBuf,
        /// Flat `key = value` file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Write the predicted label grid.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Time repeated forward passes on the configured scene.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
    },
    /// Compare the fast paths against the dense oracles.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config(path: Option<&PathBuf>) -> Result<PipelineConfig, BenchError> {
    match path {
        Some(p) => load_config(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn execute(cmd: Cmd) -> Result<(), BenchError> {
    match cmd {
        Cmd::GenScene { out, seed, density, shape, channels, labels } => {
            let scene = gen_scene(&SceneConfig { shape, channels, density, seed })?;
            write_scene(&out, &scene.tensor)?;
            if let Some(p) = labels {
                write_labels(&p, &scene.labels)?;
            }
            println!("wrote {} active voxels ({:.4}) to {}", scene.tensor.len(), scene.active_fraction(), out.display());
        }
        Cmd::Run { scene, config: cfg_path, report, labels } => {
            let cfg = config(cfg_path.as_ref())?;
            let tensor = read_scene(&scene)?;
            if tensor.shape() != cfg.shape || tensor.channels() != cfg.channels {
                let s = tensor.shape();
                return Err(BenchError::Config(format!(
                    "scene is {}x{}x{} with {} channels, config expects {}x{}x{} with {}",
                    s.h, s.w, s.d, tensor.channels(), cfg.shape.h, cfg.shape.w, cfg.shape.d, cfg.channels
                )));
            }
            let (out, rep) = run_pipeline(&tensor, &cfg)?;
            emit_report(&rep, &report)?;
            if let Some(p) = labels {
                write_labels(&p, &out.grid)?;
            }
            println!(
                "encoder ratio {:.4} (reduction {:.4}), occupied {}, report {}",
                rep.encoder.ratio,
                rep.encoder.reduction,
                rep.output.occupied,
                report.display()
            );
        }
        Cmd::Bench { config: cfg_path, repeat } => {
            let summary = bench(&config(cfg_path.as_ref())?, repeat)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("plain data"));
        }
        Cmd::Verify { suite, seed } => {
            let checks = run_suite(suite, seed);
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(BenchError::Verification(format!("{failed} of {} checks failed", checks.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
