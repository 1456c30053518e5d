//! Command-line front end for the RBM laboratory.
//!
//! Results go to stdout, or to files in the directory named by
//! `RBM_LAB_OUT` when that variable is set. Exit status: 0 on success,
//! 1 on I/O failure, 2 on invalid input, 3 when a built-in check fails.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rbm_lab::constructor::{build_mixture_rbm, DEFAULT_SHARPNESS};
use rbm_lab::experiments::{
    bound_table, run_construction_verification, run_parity_experiment, run_partition_error_curve,
    ConstructionConfig, ExperimentConfig, OutputFormat, Table,
};
use rbm_lab::projections::{project, ModelClass};
use rbm_lab::rbm::{kl_to_model, TrainConfig};
use rbm_lab::{Distribution, Error, Face, MixtureOfProducts, Partition};

const OUT_ENV: &str = "RBM_LAB_OUT";

#[derive(Parser)]
#[command(
    name = "rbm-lab",
    version,
    about = "Exact experiments on small restricted Boltzmann machines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Independence,
    Partition,
    Mixture,
}

#[derive(Subcommand)]
enum Command {
    /// Error bounds for m = 0..=m-max hidden units.
    BoundTable {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m_max: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Multistart CD + exact-ML training on the parity target.
    Parity {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        m_max: usize,
        #[arg(long, default_value_t = 0)]
        m_min: usize,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Epochs of the first CD phase.
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        /// Learning rate of the first CD phase.
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
        #[arg(long, default_value_t = 1)]
        cd_k: usize,
        #[arg(long, default_value_t = 10.0)]
        init_range: f64,
        #[arg(long, default_value_t = 0.1)]
        cd2_lr: f64,
        #[arg(long, default_value_t = 500)]
        cd2_epochs: usize,
        #[arg(long, default_value_t = 1.0)]
        ml_lr: f64,
        #[arg(long, default_value_t = 5000)]
        ml_epochs: usize,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Relative partition-model error for the two-point target.
    PartitionCurve {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// RBM parameters for a mixture of products with disjoint face supports.
    Construct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHARPNESS)]
        sharpness: f64,
        /// Component realized by the visible biases; defaults to the heaviest.
        #[arg(long)]
        base: Option<usize>,
    },
    /// Information projection of a distribution onto a model class.
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        model: Model,
        /// Partition JSON, required for the partition and mixture models.
        #[arg(long)]
        partition: Option<PathBuf>,
    },
    /// Construction check over random mixtures and a sharpness sweep.
    Verify {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        components: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,30")]
        sharpness: Vec<f64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

enum Failure {
    Io(io::Error),
    Invalid(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(e) => Failure::Io(e),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn extension(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    }
}

/// Stdout, or `<RBM_LAB_OUT>/<name>` when the variable is set.
fn sink(name: &str) -> Result<Box<dyn Write>, Failure> {
    match std::env::var_os(OUT_ENV) {
        Some(dir) => {
            let dir = Path::new(&dir);
            std::fs::create_dir_all(dir)?;
            Ok(Box::new(BufWriter::new(File::create(dir.join(name))?)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn emit<T: Table>(table: &T, stem: &str, format: OutputFormat) -> Result<(), Failure> {
    let mut w = sink(&format!("{stem}.{}", extension(format)))?;
    table.write(&mut w, format)?;
    w.flush()?;
    Ok(())
}

fn emit_json(value: &serde_json::Value, name: &str) -> Result<(), Failure> {
    let mut w = sink(name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let file = File::open(path)?;
    serde_json::from_reader(io::BufReader::new(file))
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::BoundTable { n, m_max, format } => {
            emit(&bound_table(n, m_max)?, "bound_table", format.into())
        }
        Command::Parity {
            n,
            m_max,
            m_min,
            restarts,
            seed,
            epochs,
            lr,
            cd_k,
            init_range,
            cd2_lr,
            cd2_epochs,
            ml_lr,
            ml_epochs,
            threads,
            format,
        } => {
            let cfg = ExperimentConfig {
                n,
                m_min,
                m_max,
                restarts,
                seed,
                cd: TrainConfig {
                    learning_rate: lr,
                    epochs,
                    cd_steps: cd_k,
                    init_range,
                    ..TrainConfig::default()
                },
                cd2_learning_rate: cd2_lr,
                cd2_epochs,
                ml_learning_rate: ml_lr,
                ml_epochs,
                threads,
            };
            let result = run_parity_experiment(&cfg)?;
            let format = format.into();
            emit(&result, "parity", format)?;
            if std::env::var_os(OUT_ENV).is_some() {
                emit(&result.trajectories, "parity_trajectories", format)?;
            }
            let violations = result.bound_violations();
            if violations.is_empty() {
                Ok(())
            } else {
                Err(Failure::Check(format!(
                    "best KL above bound + slack for (m, kl, bound): {violations:?}"
                )))
            }
        }
        Command::PartitionCurve { n, seed, format } => {
            let curve = run_partition_error_curve(n, seed)?;
            emit(&curve, "partition_curve", format.into())?;
            let dev = curve.max_deviation();
            if dev > 1e-12 {
                return Err(Failure::Check(format!(
                    "relative error deviates from k/(n-1) by {dev:e}"
                )));
            }
            Ok(())
        }
        Command::Construct {
            input,
            sharpness,
            base,
        } => {
            let mixture: MixtureOfProducts = read_json(&input)?;
            let base = base.unwrap_or_else(|| mixture.heaviest_component());
            let params = build_mixture_rbm(&mixture, base, sharpness)?;
            let kl = kl_to_model(&mixture.densify(), &params)?;
            emit_json(&json!({ "params": params, "kl_bits": kl }), "rbm.json")
        }
        Command::Project {
            input,
            model,
            partition,
        } => {
            let p: Distribution = read_json(&input)?;
            let load = || -> Result<Partition, Failure> {
                let path = partition.as_ref().ok_or_else(|| {
                    Failure::Invalid("--partition is required for this model".into())
                })?;
                read_json(path)
            };
            let class = match model {
                Model::Independence => ModelClass::Independence(Face::full(p.n())?),
                Model::Partition => ModelClass::Partition(load()?),
                Model::Mixture => ModelClass::mixture(load()?)?,
            };
            let result = project(&p, &class)?;
            emit_json(
                &serde_json::to_value(&result).map_err(Error::from)?,
                "projection.json",
            )
        }
        Command::Verify {
            n,
            components,
            trials,
            seed,
            sharpness,
            threads,
            format,
        } => {
            let cfg = ConstructionConfig {
                n,
                components,
                sharpness,
                trials,
                seed,
                threads,
            };
            let result = run_construction_verification(&cfg)?;
            emit(&result, "construction", format.into())?;
            let failed = result.passed.iter().filter(|&&p| !p).count();
            if failed > 0 {
                return Err(Failure::Check(format!(
                    "{failed} of {trials} trials failed"
                )));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}
