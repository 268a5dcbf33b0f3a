use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scatgen::pipeline::{run_stage, PipelineConfig, SampleSource, Stage};

/// Generative scattering pipeline: scatter MNIST, whiten, train decoders
/// and latent models, sample and test normality.
#[derive(Parser, Debug)]
#[command(name = "scatgen", version)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scattering coefficients of the dataset.
    Scatter,
    FitPca,
    Whiten,
    TrainDecoder,
    TrainVae,
    TrainGan,
    /// Decode artificial coefficient vectors into an image grid.
    Sample {
        #[arg(long)]
        source: Option<SampleSource>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Grid of decodes over two principal components.
    Vizmatrix {
        #[arg(long)]
        c1: Option<usize>,
        #[arg(long)]
        c2: Option<usize>,
        /// Comma-separated component values.
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
    },
    TestNormality,
    Report,
}

fn run(cli: Cli) -> scatgen::Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    let stage = match cli.command {
        Command::Scatter => Stage::Scatter,
        Command::FitPca => Stage::FitPca,
        Command::Whiten => Stage::Whiten,
        Command::TrainDecoder => Stage::TrainDecoder,
        Command::TrainVae => Stage::TrainVae,
        Command::TrainGan => Stage::TrainGan,
        Command::Sample { source, count } => {
            config.sample_source = source.unwrap_or(config.sample_source);
            config.sample_count = count.unwrap_or(config.sample_count);
            Stage::Sample
        }
        Command::Vizmatrix { c1, c2, values } => {
            config.viz_c1 = c1.unwrap_or(config.viz_c1);
            config.viz_c2 = c2.unwrap_or(config.viz_c2);
            if let Some(values) = values {
                config.set("viz_values", &values)?;
            }
            Stage::VizMatrix
        }
        Command::TestNormality => Stage::TestNormality,
        Command::Report => Stage::Report,
    };
    for path in run_stage(stage, &config)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scatgen: {e}");
            ExitCode::FAILURE
        }
    }
}
