use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use budgetseg::app::{self, CostSource, SearchMethod};
use budgetseg::architecture::BlockSpecs;
use budgetseg::bilinear::BankMode;
use budgetseg::optimizer::DEFAULT_SEED;
use budgetseg::tensor::Tensor;
use budgetseg::{Error, Result};

#[derive(Parser)]
#[command(name = "budgetseg", version, about = "Budget-aware segmentation network configurator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Bo,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Diagonal,
}

impl From<Mode> for BankMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Full => BankMode::Full,
            Mode::Diagonal => BankMode::Diagonal,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Analytic MAC report for a model, a layer list or a width sweep.
    Cost {
        /// Model config JSON (requires --block-specs).
        #[arg(long, requires = "block_specs", conflicts_with_all = ["sweep", "layers"])]
        config: Option<PathBuf>,
        #[arg(long)]
        block_specs: Option<PathBuf>,
        /// Width-multiplier sweep JSON.
        #[arg(long, conflicts_with = "layers")]
        sweep: Option<PathBuf>,
        /// Explicit layer-list JSON.
        #[arg(long)]
        layers: Option<PathBuf>,
        /// Override input resolution, e.g. 512x1024.
        #[arg(long, value_parser = parse_dims)]
        input: Option<(usize, usize)>,
        /// Cross-check totals with the instrumented engine.
        #[arg(long)]
        verify: bool,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search the configuration grid for a scenario.
    Search {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "bo")]
        method: Method,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Backbone spec files; defaults to the two shipped reference backbones.
        #[arg(long = "block-specs")]
        block_specs: Vec<PathBuf>,
        /// Write the JSON result here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump a bilinear kernel bank as CSV.
    Kernels {
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upsample a CSV tensor through the transposed-convolution path.
    Upsample {
        input: PathBuf,
        #[arg(long)]
        factor: usize,
        #[arg(long, value_enum, default_value = "diagonal")]
        mode: Mode,
        /// Compare against the reference interpolation.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate scenario, block-spec and model-config files.
    Validate {
        #[arg(long)]
        scenario: Vec<PathBuf>,
        #[arg(long = "block-specs")]
        block_specs: Vec<PathBuf>,
        #[arg(long)]
        config: Vec<PathBuf>,
    },
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HxW")?;
    let h = h.parse().map_err(|e| format!("height: {e}"))?;
    let w = w.parse().map_err(|e| format!("width: {e}"))?;
    Ok((h, w))
}

fn write_out(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Cost {
            config,
            block_specs,
            sweep,
            layers,
            input,
            verify,
            out,
        } => {
            let source = match (&config, &block_specs, &sweep, &layers) {
                (Some(c), Some(b), None, None) => CostSource::Model {
                    config: c,
                    block_specs: b,
                    input,
                },
                (None, _, Some(s), None) => CostSource::Sweep(s),
                (None, _, None, Some(l)) => CostSource::Layers(l),
                _ => {
                    return Err(Error::InvalidField {
                        field: "cost".into(),
                        message: "give --config with --block-specs, --sweep, or --layers".into(),
                    })
                }
            };
            let output = app::cmd_cost(source, verify)?;
            print!("{}", output.render());
            if let Some(path) = out {
                write_out(&path, &output.to_json())?;
            }
            if output.rows.iter().all(|r| r.verified()) {
                Ok(app::EXIT_OK)
            } else {
                eprintln!("instrumented MAC count disagrees with the analytic total");
                Ok(app::EXIT_NUMERICAL)
            }
        }
        Command::Search {
            scenario,
            method,
            seed,
            max_iters,
            block_specs,
            out,
        } => {
            let specs = if block_specs.is_empty() {
                BlockSpecs::reference()
            } else {
                block_specs.iter().map(|p| BlockSpecs::load(p)).collect::<Result<_>>()?
            };
            let method = match method {
                Method::Bo => SearchMethod::Bayesian,
                Method::Exhaustive => SearchMethod::Exhaustive,
            };
            let output = app::cmd_search(&scenario, &specs, method, seed, max_iters)?;
            print!("{}", output.render());
            if let Some(path) = out {
                write_out(&path, &output.to_json())?;
            }
            Ok(output.exit_code())
        }
        Command::Kernels {
            classes,
            size,
            mode,
            out,
        } => {
            let bank = app::cmd_kernels(classes, size, mode.into())?;
            let csv = bank.to_csv();
            match out {
                Some(path) => write_out(&path, &csv)?,
                None => print!("{csv}"),
            }
            Ok(app::EXIT_OK)
        }
        Command::Upsample {
            input,
            factor,
            mode,
            check,
            out,
        } => {
            let tensor = Tensor::read_csv(&input)?;
            let output = app::cmd_upsample(&tensor, factor, mode.into(), check)?;
            match out {
                Some(path) => output.tensor.write_csv(&path)?,
                None => print!("{}", output.tensor.to_csv()),
            }
            if let Some(dev) = output.deviation {
                eprintln!("max interior deviation from reference: {dev:.3e}");
            }
            Ok(app::EXIT_OK)
        }
        Command::Validate {
            scenario,
            block_specs,
            config,
        } => {
            let scenario: Vec<&Path> = scenario.iter().map(PathBuf::as_path).collect();
            let block_specs: Vec<&Path> = block_specs.iter().map(PathBuf::as_path).collect();
            let config: Vec<&Path> = config.iter().map(PathBuf::as_path).collect();
            for line in app::cmd_validate(&scenario, &block_specs, &config)? {
                println!("{line}");
            }
            Ok(app::EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(app::exit_code(&e) as u8)
        }
    }
}
