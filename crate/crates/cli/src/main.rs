use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use distgp_core::barycenter::{
    gaussian_barycenter_measure, grid_barycenter, GAUSSIAN_MAX_ITER, GAUSSIAN_TOL, GRID_MAX_ITER, GRID_TOL,
};
use distgp_core::gp::{gp_fit_cv, gp_fit_mle, GpModel};
use distgp_core::kernel::{
    embed_gaussians, embed_grids, gram_matrix, naive_w2_gram, psd_diagnostic, EmbeddedFeature, KernelParams,
    ParamBounds, Reference,
};
use distgp_core::measures::{GaussianMeasure, GridDensity};
use distgp_core::ot::{DEFAULT_LAMBDA, SINKHORN_MAX_ITER, SINKHORN_TOL};
use distgp_cli::config::ExperimentConfig;
use distgp_cli::experiments::{run_experiment, EXPERIMENTS};
use distgp_cli::io::{
    matrix_csv, read_dataset, read_gaussian_set, read_grid, read_grid_dir, read_matrix_csv, write_gaussian_set,
    write_grid, write_predictions_csv, write_series_csv, Inputs, ModelFile,
};
use distgp_cli::CliError;

#[derive(Parser)]
#[command(name = "distgp", version, about = "Gaussian-process regression over probability distributions")]
struct Cli {
    /// Random seed (required for experiments).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceChoice {
    Barycenter,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mle,
    Cv,
}

#[derive(Subcommand)]
enum Command {
    /// Barycenter of a Gaussian set (JSON) or of a directory of grid CSVs.
    Barycenter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Gram matrix of the embedding kernel.
    KernelMatrix {
        #[arg(long)]
        input: PathBuf,
        /// θ1,θ2,θ3,θ4
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0, 2.0, 1e-5])]
        theta: Vec<f64>,
        #[arg(long, value_enum, default_value = "barycenter")]
        reference: ReferenceChoice,
        /// Reference measure when `--reference file` (Gaussian set with one item, or a grid CSV).
        #[arg(long)]
        reference_file: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Eigenvalue spectrum of a Gram matrix.
    DiagnosePsd {
        /// Gram matrix CSV.
        #[arg(long, conflicts_with = "naive_w2", required_unless_present = "naive_w2")]
        gram: Option<PathBuf>,
        /// Gaussian set whose exp(−W2²) Gram matrix is diagnosed.
        #[arg(long)]
        naive_w2: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Fit a GP to a dataset JSON and write `model.json`.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "mle")]
        method: Method,
        /// Grid used to rasterize disk inputs.
        #[arg(long, default_value_t = 50)]
        grid_size: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Predict with a fitted model and write `predictions.csv`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long, default_value_t = 50)]
        grid_size: usize,
    },
    /// Run one of the experiments.
    Experiment {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENTS))]
        name: String,
    },
}

fn is_dir(p: &Path) -> bool {
    fs::metadata(p).map(|m| m.is_dir()).unwrap_or(false)
}

fn gaussian_reference(measures: &[GaussianMeasure]) -> Result<GaussianMeasure, CliError> {
    Ok(gaussian_barycenter_measure(measures, None, GAUSSIAN_TOL, GAUSSIAN_MAX_ITER)?.result)
}

fn grid_reference(grids: &[GridDensity], lambda: f64) -> Result<GridDensity, CliError> {
    Ok(grid_barycenter(grids, None, lambda, GRID_TOL, GRID_MAX_ITER)?.result)
}

fn embed(inputs: &Inputs, reference: &Reference, lambda: f64) -> Result<Vec<EmbeddedFeature>, CliError> {
    Ok(match (inputs, reference) {
        (Inputs::Gaussian(m), Reference::Gaussian(r)) => embed_gaussians(m, r)?,
        (Inputs::Grid(g), Reference::Grid(r)) => embed_grids(g, r, lambda, SINKHORN_MAX_ITER, SINKHORN_TOL)?,
        _ => return Err(distgp_core::Error::ReferenceMismatch.into()),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.out;
    fs::create_dir_all(&out)?;
    match cli.command {
        Command::Barycenter { input, lambda } => {
            let (iterations, residual) = if is_dir(&input) {
                let grids = read_grid_dir(&input)?;
                let r = grid_barycenter(&grids, None, lambda, GRID_TOL, GRID_MAX_ITER)?;
                write_grid(&out.join("barycenter.csv"), &r.result)?;
                (r.iterations, r.residual)
            } else {
                let set = read_gaussian_set(&input)?;
                let r = gaussian_barycenter_measure(&set, None, GAUSSIAN_TOL, GAUSSIAN_MAX_ITER)?;
                write_gaussian_set(&out.join("barycenter.json"), &[r.result])?;
                (r.iterations, r.residual)
            };
            let report = serde_json::json!({ "iterations": iterations, "residual": residual });
            fs::write(out.join("barycenter_report.json"), serde_json::to_string_pretty(&report)?)?;
            println!("iterations: {iterations}, residual: {residual:e}");
        }
        Command::KernelMatrix {
            input,
            theta,
            reference,
            reference_file,
            lambda,
        } => {
            let [t1, t2, t3, t4] = <[f64; 4]>::try_from(theta)
                .map_err(|v| CliError::Config(format!("--theta takes 4 values, got {}", v.len())))?;
            let theta = KernelParams::new(t1, t2, t3, t4)?;
            let inputs = if is_dir(&input) {
                Inputs::Grid(read_grid_dir(&input)?)
            } else {
                Inputs::Gaussian(read_gaussian_set(&input)?)
            };
            let reference = match (reference, &inputs) {
                (ReferenceChoice::Barycenter, Inputs::Gaussian(m)) => Reference::Gaussian(gaussian_reference(m)?),
                (ReferenceChoice::Barycenter, Inputs::Grid(g)) => Reference::Grid(grid_reference(g, lambda)?),
                (ReferenceChoice::File, inputs) => {
                    let path = reference_file
                        .ok_or_else(|| CliError::Config("--reference file needs --reference-file".into()))?;
                    match inputs {
                        Inputs::Gaussian(_) => {
                            let set = read_gaussian_set(&path)?;
                            let [one] = <[GaussianMeasure; 1]>::try_from(set)
                                .map_err(|_| CliError::Format("reference set must hold exactly one Gaussian".into()))?;
                            Reference::Gaussian(one)
                        }
                        Inputs::Grid(_) => Reference::Grid(read_grid(&path)?),
                    }
                }
            };
            let features = embed(&inputs, &reference, lambda)?;
            let k = gram_matrix(&features, &theta)?;
            fs::write(out.join("gram.csv"), matrix_csv(&k)?)?;
            println!("wrote {}x{} Gram matrix", k.nrows(), k.ncols());
        }
        Command::DiagnosePsd { gram, naive_w2, tol } => {
            let k = match (gram, naive_w2) {
                (Some(path), _) => read_matrix_csv(&path)?,
                (None, Some(path)) => naive_w2_gram(&read_gaussian_set(&path)?)?,
                (None, None) => return Err(CliError::Config("pass --gram or --naive-w2".into())),
            };
            let report = psd_diagnostic(&k, tol)?;
            write_series_csv(&out.join("eigenvalues.csv"), &report.eigenvalues)?;
            println!(
                "negatives: {} (tol {tol:e}, lambda_max {:e}, min ratio {:e})",
                report.negative_count, report.lambda_max, report.min_ratio
            );
        }
        Command::Fit {
            data,
            method,
            grid_size,
            lambda,
        } => {
            let (inputs, y) = read_dataset(&data, grid_size)?;
            let y: Vec<f64> = y
                .into_iter()
                .enumerate()
                .map(|(i, v)| v.ok_or_else(|| CliError::Format(format!("dataset item {i} has no response"))))
                .collect::<Result<_, _>>()?;
            let reference = match &inputs {
                Inputs::Gaussian(m) => Reference::Gaussian(gaussian_reference(m)?),
                Inputs::Grid(g) => Reference::Grid(grid_reference(g, lambda)?),
            };
            let features = embed(&inputs, &reference, lambda)?;
            let bounds = ParamBounds::default();
            let (model, fit) = match method {
                Method::Mle => gp_fit_mle(features, y, &bounds)?,
                Method::Cv => gp_fit_cv(features, y, &bounds)?,
            };
            let file = ModelFile::new(*model.theta(), fit.method, lambda, model.features(), model.y().as_slice())?;
            fs::write(out.join("model.json"), serde_json::to_string_pretty(&file)?)?;
            let t = model.theta();
            println!(
                "theta = ({}, {}, {}, {}), objective {}",
                t.theta1, t.theta2, t.theta3, t.theta4, fit.objective
            );
            if fit.degenerate {
                eprintln!("warning: constant responses; parameters were not optimized");
            }
        }
        Command::Predict {
            model,
            inputs,
            grid_size,
        } => {
            let file: ModelFile = serde_json::from_str(&fs::read_to_string(&model)?)?;
            let (reference, features) = file.load_features()?;
            let gp = GpModel::new(features, file.y.clone(), file.theta)?;
            let (queries, _) = read_dataset(&inputs, grid_size)?;
            let query_features = embed(&queries, &reference, file.lambda)?;
            let predictions = gp.predict_many(&query_features)?;
            write_predictions_csv(&out.join("predictions.csv"), &predictions)?;
            println!("wrote {} predictions", predictions.len());
        }
        Command::Experiment { name } => {
            let seed = cli
                .seed
                .ok_or_else(|| CliError::Config("experiments require --seed".into()))?;
            let mut config = match &cli.config {
                Some(path) => ExperimentConfig::from_json(&fs::read_to_string(path)?)?,
                None => ExperimentConfig::default(),
            };
            config.seed = seed;
            let report = run_experiment(&name, &config)?;
            report.write_dir(&out)?;
            for t in &report.tables {
                println!("{}", t.columns.join("\t"));
                for r in &t.rows {
                    println!("{}", r.join("\t"));
                }
            }
            for (k, v) in &report.summary {
                println!("{k}: {v}");
            }
            for f in &report.flags {
                eprintln!("note: {f}");
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
