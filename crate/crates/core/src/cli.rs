//! `hens` command line: score, fit, predict, evaluate and run the synthetic bench.
//!
//! Results go to `out` as `key=value` lines, human summaries to `err`.
//! Exit codes: 0 success, 1 data or validation error, 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::features::{conditional_means, fit_whitener, FeatureMatrix, LabelVector, Ridge};
use crate::hscore::{ensemble_h_score, gram_matrix, h_score_one_sided_full, h_score_two_sided};
use crate::io::{load_model, read_features, read_lbl, save_model, write_fmx, write_lbl};
use crate::mcr::{evaluate, mix_features, predict};
use crate::optimizer::{EnsembleWeights, Objective, OptimizerConfig};
use crate::pipeline::{fit_ensemble, FitOptions};
use crate::synth::{generate_pool, run_ablation_on, AblationConfig, Domain};

#[derive(Debug, Parser)]
#[command(
    name = "hens",
    version,
    about = "H-score guided ensembles of pre-extracted source features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Simplified,
    Full,
    TwoSided,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Simplified,
    Full,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Simplified => Objective::Simplified,
            ObjectiveArg::Full => Objective::Full,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score the uniformly mixed features of one or more sources.
    Hscore {
        /// Feature files (FMX, or CSV with a .csv extension), one per source.
        #[arg(required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value = "simplified")]
        variant: VariantArg,
        /// Covariance ridge; defaults to 1e-3 * trace(cov) / d.
        #[arg(long)]
        ridge: Option<f64>,
        /// Whiten each source before scoring.
        #[arg(long)]
        whiten: bool,
    },
    /// Learn ensemble weights and the classifier from few-shot target data.
    Fit {
        #[arg(required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Perturb the uniform starting weights with this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Whitening ridge; defaults to 1e-3 * trace(cov) / d per source.
        #[arg(long)]
        ridge: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label raw per-source features with a fitted model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of predicted labels against the truth.
    Eval {
        predictions: PathBuf,
        truth: PathBuf,
    },
    /// Run the synthetic ablation and write its data and table.
    Synth {
        #[arg(long, default_value_t = 0)]
        pool_seed: u64,
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        k_shot: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

macro_rules! emit {
    ($w:expr, $($arg:tt)*) => {
        writeln!($w, $($arg)*).map_err(io_err)?
    };
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Hscore {
            features,
            labels,
            variant,
            ridge,
            whiten,
        } => cmd_hscore(&features, &labels, variant, ridge, whiten, out),
        Command::Fit {
            features,
            labels,
            objective,
            lr,
            max_iters,
            tol,
            seed,
            ridge,
            out: model,
        } => {
            let cfg = OptimizerConfig {
                learning_rate: lr,
                max_iters,
                tol,
                objective: objective.into(),
                seed,
                ..OptimizerConfig::default()
            };
            cmd_fit(&features, &labels, cfg, ridge, &model, out, err)
        }
        Command::Predict {
            model,
            features,
            out: path,
        } => cmd_predict(&model, &features, &path, out),
        Command::Eval { predictions, truth } => cmd_eval(&predictions, &truth, out),
        Command::Synth {
            pool_seed,
            k_shot,
            out: dir,
        } => cmd_synth(pool_seed, k_shot as usize, &dir, out, err),
    }
}

/// Reads every source and checks its row count against the labels.
fn load_sources(paths: &[PathBuf], labels: &LabelVector) -> Result<Vec<FeatureMatrix>> {
    paths
        .iter()
        .map(|p| {
            let f = read_features(p)?;
            if f.n_samples() != labels.len() {
                return Err(Error::dims(format!(
                    "{} has {} rows but the labels have {}",
                    p.display(),
                    f.n_samples(),
                    labels.len()
                )));
            }
            Ok(f)
        })
        .collect()
}

fn ridge_arg(ridge: Option<f64>) -> Ridge {
    ridge.map_or(Ridge::Auto, Ridge::Fixed)
}

fn cmd_hscore(
    paths: &[PathBuf],
    labels_path: &Path,
    variant: VariantArg,
    ridge: Option<f64>,
    whiten: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let labels = read_lbl(labels_path)?;
    let mut sources = load_sources(paths, &labels)?;
    let ridge = ridge_arg(ridge);
    if whiten {
        sources = sources
            .iter()
            .map(|f| fit_whitener(f, ridge.resolve(f))?.apply(f))
            .collect::<Result<_>>()?;
    }
    let cms = sources
        .iter()
        .map(|f| conditional_means(f, &labels))
        .collect::<Result<Vec<_>>>()?;
    let gram = gram_matrix(&cms)?;
    let uniform = EnsembleWeights::uniform(sources.len());
    let mixed =
        || -> Result<FeatureMatrix> { Ok(mix_features(&sources, uniform.as_slice())?.centered()) };

    let (name, value, ridge_used) = match variant {
        VariantArg::Simplified => ("simplified", ensemble_h_score(&gram, &uniform)?.value, 0.0),
        VariantArg::Full => {
            let f = mixed()?;
            let r = ridge.resolve(&f);
            ("full", h_score_one_sided_full(&f, &labels, r)?.value, r)
        }
        VariantArg::TwoSided => {
            let f = mixed()?;
            let g = conditional_means(&f, &labels)?.centered();
            ("two-sided", h_score_two_sided(&f, &labels, &g)?.value, 0.0)
        }
    };
    emit!(out, "variant={name}");
    emit!(out, "value={value}");
    emit!(out, "ridge={ridge_used}");
    emit!(out, "n_sources={}", sources.len());
    emit!(out, "n_samples={}", labels.len());
    for (j, g) in gram.diagonal().iter().enumerate() {
        emit!(out, "g_diag_{j}={g}");
    }
    Ok(())
}

fn cmd_fit(
    paths: &[PathBuf],
    labels_path: &Path,
    cfg: OptimizerConfig,
    ridge: Option<f64>,
    model_path: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    emit!(out, "objective={}", cfg.objective.as_str());
    emit!(out, "lr={}", cfg.learning_rate);
    emit!(out, "max_iters={}", cfg.max_iters);
    emit!(out, "tol={}", cfg.tol);
    emit!(
        out,
        "seed={}",
        cfg.seed.map_or("none".to_string(), |s| s.to_string())
    );
    emit!(
        out,
        "ridge={}",
        ridge.map_or("auto".to_string(), |r| r.to_string())
    );
    emit!(out, "alpha_bound={}", cfg.alpha_bound);
    emit!(out, "objective_ceiling={}", cfg.objective_ceiling);

    let labels = read_lbl(labels_path)?;
    let sources = load_sources(paths, &labels)?;
    let opts = FitOptions {
        optimizer: cfg,
        whiten_ridge: ridge_arg(ridge),
    };
    let (model, report) = fit_ensemble(&sources, &labels, &opts)?;
    save_model(model_path, &model)?;

    for (j, a) in model.alpha.as_slice().iter().enumerate() {
        emit!(out, "alpha_{j}={a}");
    }
    emit!(out, "h_score_initial={}", report.trajectory[0].1);
    emit!(out, "h_score_final={}", report.final_objective());
    emit!(out, "iterations={}", report.iterations_used);
    emit!(out, "converged={}", report.converged);
    emit!(out, "diverged={}", report.diverged);
    emit!(out, "model={}", model_path.display());

    let status = if report.diverged {
        "stopped by the divergence guard"
    } else if report.converged {
        "converged"
    } else {
        "hit the iteration limit"
    };
    emit!(
        err,
        "fit: {} sources, {} classes, {status} after {} iterations, H {:.6} -> {:.6}",
        model.n_sources(),
        model.n_classes(),
        report.iterations_used,
        report.trajectory[0].1,
        report.final_objective()
    );
    Ok(())
}

fn cmd_predict(
    model_path: &Path,
    paths: &[PathBuf],
    out_path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let model = load_model(model_path)?;
    let sources = paths
        .iter()
        .map(read_features)
        .collect::<Result<Vec<_>>>()?;
    let pred = predict(&model, &sources)?;
    write_lbl(out_path, &pred)?;
    emit!(out, "n_predictions={}", pred.len());
    emit!(out, "out={}", out_path.display());
    Ok(())
}

fn cmd_eval(pred_path: &Path, truth_path: &Path, out: &mut dyn Write) -> Result<()> {
    let accuracy = evaluate(&read_lbl(pred_path)?, &read_lbl(truth_path)?)?;
    emit!(out, "accuracy={accuracy}");
    Ok(())
}

fn cmd_synth(
    pool_seed: u64,
    k_shot: usize,
    dir: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let cfg = AblationConfig::default();
    emit!(out, "pool_seed={pool_seed}");
    emit!(out, "k_shot={k_shot}");
    emit!(out, "lr={}", cfg.optimizer.learning_rate);
    emit!(out, "max_iters={}", cfg.optimizer.max_iters);
    emit!(out, "tol={}", cfg.optimizer.tol);

    let data = generate_pool(&cfg, pool_seed, k_shot)?;
    let report = run_ablation_on(&data, &cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (j, (train, test)) in data.train.iter().zip(&data.test).enumerate() {
        write_fmx(dir.join(format!("train_source_{j}.fmx")), train)?;
        write_fmx(dir.join(format!("test_source_{j}.fmx")), test)?;
    }
    write_lbl(dir.join("train_labels.lbl"), &data.train_labels)?;
    write_lbl(dir.join("test_labels.lbl"), &data.test_labels)?;
    let table = dir.join("ablation.csv");
    std::fs::write(&table, report.to_csv()).map_err(|e| Error::Io {
        path: table.clone(),
        source: e,
    })?;

    for row in &report.rows {
        emit!(out, "accuracy.{}={}", row.method, row.accuracy);
    }
    for (j, (w, d)) in report
        .full_weights
        .as_slice()
        .iter()
        .zip(&report.source_domains)
        .enumerate()
    {
        emit!(out, "weight_{j}={w}");
        emit!(
            out,
            "domain_{j}={}",
            if *d == Domain::A { "A" } else { "B" }
        );
    }
    emit!(out, "table={}", table.display());
    emit!(
        err,
        "synth: same-domain weight mass {:.4}, cross-domain {:.4}",
        report.weight_mass(Domain::A),
        report.weight_mass(Domain::B)
    );
    Ok(())
}
