use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use beta_irt::fit::{fit, FitConfig, LossKind, ModelKind};
use beta_irt::harness::{self, ExperimentConfig};
use beta_irt::io::{self, param_rows, ParamKind};
use beta_irt::synth::{simulate, GenConfig};
use beta_irt::Error;

#[derive(Parser, Debug)]
#[command(
    name = "birt",
    version,
    about = "Beta-IRT fitting and parameter-recovery experiments"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate ground truth and a response matrix.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a model to a response matrix.
    Fit {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelArg::Beta4)]
        model: ModelArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "n-inits")]
        n_inits: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, value_enum, default_value_t = LossArg::FullCe)]
        loss: LossArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parameter file with true values to place next to the estimates.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte Carlo recovery experiment.
    Recover {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Compare analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Beta3,
    Beta4,
    #[value(name = "beta4-nopriors")]
    Beta4Nopriors,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Beta3 => ModelKind::Beta3,
            ModelArg::Beta4 => ModelKind::Beta4WithPriors,
            ModelArg::Beta4Nopriors => ModelKind::Beta4NoPriors,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Paper,
    FullCe,
}

enum Failure {
    Validation(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, out, seed } => generate(&config, &out, seed),
        Command::Fit {
            responses,
            model,
            epochs,
            n_inits,
            lr,
            tol,
            loss,
            seed,
            truth,
            out,
        } => {
            let mut cfg = FitConfig::for_model(model.into());
            cfg.n_epochs = epochs.unwrap_or(cfg.n_epochs);
            cfg.n_inits = n_inits.unwrap_or(cfg.n_inits.min(cfg.n_epochs));
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.tol = tol.unwrap_or(cfg.tol);
            cfg.seed = seed;
            cfg.loss_kind = match loss {
                LossArg::Paper => LossKind::PaperEq6,
                LossArg::FullCe => LossKind::FullCrossEntropy,
            };
            run_fit(&responses, &cfg, truth.as_deref(), &out)
        }
        Command::Recover {
            config,
            out,
            workers,
        } => recover(&config, out.as_deref(), workers),
        Command::Gradcheck { trials, h, seed } => gradcheck(trials, h, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_gen_config(path: &Path) -> Result<GenConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: GenConfig = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
        field: "config".into(),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = load_gen_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let (truth, p) = simulate(&cfg)?;
    io::write_matrix(&out.join("responses.csv"), &p)?;
    let rows = param_rows(Some((&truth.theta, &truth.delta, &truth.a)), None);
    io::write_params(&out.join("truth.csv"), &rows)?;
    println!(
        "wrote {} x {} responses to {}",
        p.respondents(),
        p.items(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FitSummary<'a> {
    config: &'a FitConfig,
    respondents: usize,
    items: usize,
    epochs_run: usize,
    converged_at: Option<usize>,
    final_loss: Option<f64>,
    pseudo_r2: Option<f64>,
}

fn truth_vectors(path: &Path) -> Result<[Vec<f64>; 3], Error> {
    let rows = io::read_params(path)?;
    let mut out: [Vec<f64>; 3] = Default::default();
    for (slot, kind) in [ParamKind::Theta, ParamKind::Delta, ParamKind::A]
        .into_iter()
        .enumerate()
    {
        let mut pairs: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.kind == kind)
            .filter_map(|r| r.truth.map(|t| (r.index, t)))
            .collect();
        pairs.sort_by_key(|&(i, _)| i);
        out[slot] = pairs.into_iter().map(|(_, t)| t).collect();
    }
    Ok(out)
}

fn run_fit(
    responses: &Path,
    cfg: &FitConfig,
    truth: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let p = io::read_matrix(responses)?;
    let result = fit(&p, cfg)?;
    let truth = truth.map(truth_vectors).transpose()?;
    let rows = param_rows(
        truth.as_ref().map(|[t, d, a]| (&t[..], &d[..], &a[..])),
        Some((&result.theta, &result.delta, &result.discrimination)),
    );
    io::write_params(&out.join("params.csv"), &rows)?;
    io::write_loss_trace(&out.join("loss_trace.csv"), &result.loss_trace)?;
    io::write_matrix(&out.join("predicted.csv"), &result.predicted)?;
    let summary = FitSummary {
        config: cfg,
        respondents: p.respondents(),
        items: p.items(),
        epochs_run: result.loss_trace.len(),
        converged_at: result.converged_at,
        final_loss: result.final_loss(),
        pseudo_r2: result.pseudo_r2,
    };
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| Failure::Validation(e.to_string()))?;
    std::fs::write(out.join("summary.json"), json)
        .map_err(|e| Failure::Io(format!("{}: {e}", out.join("summary.json").display())))?;
    match result.pseudo_r2 {
        Some(r2) => println!("pseudo-R2 = {r2:.6}"),
        None => println!("pseudo-R2 undefined (constant responses)"),
    }
    if let Some(epoch) = result.converged_at {
        println!("converged at epoch {epoch}");
    }
    Ok(())
}

fn recover(config: &Path, out: Option<&Path>, workers: usize) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| {
            Failure::Validation("no output directory: pass --out or set output_dir".into())
        })?;
    let progress = |done: usize, total: usize| eprintln!("[{done}/{total}] replications");
    let output = harness::run_recovery_experiment(&cfg, workers, Some(&progress))?;
    harness::write_experiment(&dir, &output)?;
    let failed = output.report.metadata.failed_fits;
    println!(
        "wrote report for {} fits ({failed} failed) to {}",
        output.report.replications.len(),
        dir.display()
    );
    Ok(())
}

fn gradcheck(trials: usize, h: f64, seed: u64) -> Result<(), Failure> {
    let report = harness::gradcheck(trials, h, seed)?;
    for (kind, err) in &report.max_error {
        println!(
            "{kind:?}: max relative error {err:.3e} over {trials} instances (tolerance {:.0e})",
            report.tolerance
        );
    }
    if report.passed() {
        println!("gradcheck passed");
        Ok(())
    } else {
        Err(Failure::Validation("gradcheck failed".into()))
    }
}
