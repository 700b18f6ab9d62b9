use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asymcca::field::{field_inner, field_norm, transport_field};
use asymcca::io::{
    file_sha256, save_covariates, save_curves, write_curves, Dataset, FunctionalModelJson,
    EuclideanModelJson, ModelArtifact, ModelPayload, TruthFile,
};
use asymcca::pipeline::{fit_cv, fit_euclidean_with_options, fit_with_options, mode_extremes, FitOptions};
use asymcca::sim::{
    make_truth, metric_euclid_corr, metric_f1, metric_norm_error, metric_tangent_corr, run_trials, trial_data,
    Method, SimConfig, TrialMetrics, TrialOptions, DEFAULT_ZERO_TOL,
};
use asymcca::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

const LAMBDA_SCALE: &str = "λ is the penalty in (2/N)·‖M − XB‖²_F + λ·Σ_i ‖b_i‖₂, where M holds the \
whitened PC scores. Solvers that minimize (1/(2N))·‖M − XB‖²_F + α·Σ_i ‖b_i‖₂ need α = λ/4; \
solvers with an unnormalized ½‖M − XB‖²_F loss need α = λ·N/4.";

#[derive(Parser)]
#[command(
    name = "asymcca",
    version,
    about = "Sparse CCA between SPD-matrix-valued curves and high-dimensional covariates",
    after_help = LAMBDA_SCALE
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset with planted canonical pairs.
    Simulate(SimulateArgs),
    /// Fit a model; (d, λ) left unset are chosen by cross-validation.
    #[command(after_help = LAMBDA_SCALE)]
    Fit(FitArgs),
    /// Cross-validate (d, λ) and write the CV table.
    #[command(after_help = LAMBDA_SCALE)]
    Cv(CvArgs),
    /// Score a fitted model against the simulation truth.
    Evaluate(EvaluateArgs),
    /// Write the mean curve and Exp_μ̂(±c·ψ̂_k) for plotting.
    Mode(ModeArgs),
    /// Run the seeded simulation study and write per-trial metrics.
    Trials(TrialsArgs),
}

#[derive(Args)]
struct XArgs {
    /// Center covariates before fitting (default).
    #[arg(long = "center-x", overrides_with = "no_center_x")]
    center_x: bool,
    /// Do not center covariates.
    #[arg(long = "no-center-x")]
    no_center_x: bool,
    /// Scale covariates to unit standard deviation.
    #[arg(long = "scale-x", overrides_with = "no_scale_x")]
    scale_x: bool,
    /// Do not scale covariates (default).
    #[arg(long = "no-scale-x")]
    no_scale_x: bool,
}

impl XArgs {
    fn options(&self) -> FitOptions {
        FitOptions {
            center_x: !self.no_center_x,
            scale_x: self.scale_x && !self.no_scale_x,
            ..FitOptions::default()
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Curve CSV: subject,t,c11,c12,...,cmm (upper triangle, row-major).
    #[arg(long)]
    curves: PathBuf,
    /// Covariate CSV: subject,x1,...,xp.
    #[arg(long)]
    covariates: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator configuration as JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training sample size.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Held-out sample size.
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    grid_len: Option<usize>,
    #[arg(long)]
    contamination_var: Option<f64>,
    /// Output directory for curves.csv, covariates.csv, test_curves.csv, test_covariates.csv and truth.json.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    /// Intrinsic Riemannian functional PCA.
    Rfpca,
    /// Matrices treated as vectors in the ambient space.
    Euclidean,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = FitMethod::Rfpca)]
    method: FitMethod,
    /// Number of functional principal components.
    #[arg(short = 'd', long)]
    rank: Option<usize>,
    /// Largest rank tried when --rank is unset.
    #[arg(long, default_value_t = 10)]
    max_rank: usize,
    /// Group-lasso penalty.
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated λ values for cross-validation (default: 100 log-spaced values below λ_max).
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Seed for fold assignment.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    x: XArgs,
    /// Model artifact (JSON).
    #[arg(long)]
    output: PathBuf,
    /// Also write the printed summary to this file.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Cross-validate λ at this rank only.
    #[arg(short = 'd', long)]
    rank: Option<usize>,
    /// Ranks 1..=max-rank are tried when --rank is unset.
    #[arg(long, default_value_t = 10)]
    max_rank: usize,
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    x: XArgs,
    /// CV table (CSV: d,lambda,mean_error,sd_error).
    #[arg(long)]
    output: PathBuf,
    /// Also save the refitted model at the chosen (d, λ).
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// truth.json written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    test_curves: PathBuf,
    #[arg(long)]
    test_covariates: PathBuf,
    /// Metrics CSV (metric,value).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ModeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Canonical pair, counted from 1.
    #[arg(short = 'k', long, default_value_t = 1)]
    pair: usize,
    /// Step c along ±ψ̂_k.
    #[arg(short = 'c', long, default_value_t = 1.0)]
    scale: f64,
    /// Curve CSV with subjects mean, plus and minus.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrialsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated training sample sizes.
    #[arg(long = "n", value_delimiter = ',', default_values_t = [50, 200, 800])]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 15)]
    trials: usize,
    /// Comma-separated methods: rfpca, euclidean.
    #[arg(long, value_delimiter = ',', default_values_t = ["rfpca".to_string(), "euclidean".to_string()])]
    methods: Vec<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 2000)]
    n_test: usize,
    /// Long-format CSV: method,N,trial,metric,value.
    #[arg(long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors count as validation failures; exit code 2 is reserved for numeric ones
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Cv(a) => cv(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Mode(a) => mode(a),
        Command::Trials(a) => trials(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

fn invalid(message: impl Into<String>) -> Error {
    Error::InvalidArgument(message.into())
}

fn sim_config(path: Option<&Path>, seed: Option<u64>) -> Result<SimConfig> {
    let mut cfg: SimConfig = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = sim_config(a.config.as_deref(), a.seed)?;
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(k1) = a.k1 {
        cfg.k1 = k1;
    }
    if let Some(l) = a.grid_len {
        cfg.grid_len = l;
    }
    if let Some(v) = a.contamination_var {
        cfg.contamination_var = v;
    }
    cfg.validate()?;
    if a.n < 2 || a.n_test < 2 {
        return Err(invalid("--n and --n-test must be at least 2"));
    }
    let truth = make_truth(&cfg)?;
    let data = trial_data(&truth, a.n, a.n_test, 0)?;
    std::fs::create_dir_all(&a.output)?;
    let ids = |prefix: &str, n: usize| -> Vec<String> {
        let width = n.to_string().len();
        (1..=n).map(|i| format!("{prefix}{i:0width$}")).collect()
    };
    let train_ids = ids("s", a.n);
    let test_ids = ids("t", a.n_test);
    save_curves(a.output.join("curves.csv"), &train_ids, &data.curves)?;
    save_covariates(a.output.join("covariates.csv"), &train_ids, &data.x)?;
    save_curves(a.output.join("test_curves.csv"), &test_ids, &data.test_curves)?;
    save_covariates(a.output.join("test_covariates.csv"), &test_ids, &data.test_x)?;
    TruthFile::from_truth(&truth)?.save(a.output.join("truth.json"))?;
    Ok(())
}

fn rank_grid(max_rank: usize, n: usize, l: usize, m: usize) -> Result<Vec<usize>> {
    let cap = max_rank.min(n.saturating_sub(1)).min(l * m * (m + 1) / 2);
    if cap == 0 {
        return Err(invalid("no admissible rank: need at least two subjects and --max-rank ≥ 1"));
    }
    Ok((1..=cap).collect())
}

fn input_hashes(data: &DataArgs) -> Result<serde_json::Value> {
    Ok(json!({
        "curves_sha256": file_sha256(&data.curves)?,
        "covariates_sha256": file_sha256(&data.covariates)?,
    }))
}

fn fit(a: FitArgs) -> Result<()> {
    let ds = Dataset::load(&a.data.curves, &a.data.covariates)?;
    let (n, l, m, _) = ds.shape();
    let opts = a.x.options();
    if let Some(l) = a.lambda {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(invalid(format!("--lambda must be a finite non-negative number, got {l}")));
        }
    }
    let mut config = json!({
        "command": "fit",
        "rank": a.rank,
        "lambda": a.lambda,
        "lambda_grid": a.lambda_grid,
        "folds": a.folds,
        "center_x": opts.center_x,
        "scale_x": opts.scale_x,
        "inputs": input_hashes(&a.data)?,
    });
    let payload = match a.method {
        FitMethod::Euclidean => {
            config["method"] = json!("euclidean");
            let (Some(d), Some(lambda)) = (a.rank, a.lambda) else {
                return Err(invalid("--method euclidean needs both --rank and --lambda"));
            };
            let model = fit_euclidean_with_options(&ds.curves, &ds.x, d, lambda, &opts)?;
            ModelPayload::Euclidean(EuclideanModelJson::from(&model))
        }
        FitMethod::Rfpca => {
            config["method"] = json!("rfpca");
            let model = match (a.rank, a.lambda) {
                (Some(d), Some(lambda)) => fit_with_options(&ds.curves, &ds.x, d, lambda, &opts)?,
                (rank, lambda) => {
                    config["max_rank"] = json!(a.max_rank);
                    let d_grid = match rank {
                        Some(d) => vec![d],
                        None => rank_grid(a.max_rank, n, l, m)?,
                    };
                    let fixed = lambda.map(|v| vec![v]);
                    let grid = fixed.as_deref().or(a.lambda_grid.as_deref());
                    let out = fit_cv(&ds.curves, &ds.x, &d_grid, grid, a.folds, a.seed, &opts)?;
                    log::info!("cross-validation chose d = {}, λ = {:e}", out.chosen_d, out.chosen_lambda);
                    config["chosen_rank"] = json!(out.chosen_d);
                    config["chosen_lambda"] = json!(out.chosen_lambda);
                    out.model
                }
            };
            ModelPayload::Functional(FunctionalModelJson::from(&model))
        }
    };
    let artifact = ModelArtifact::new(payload, config, Some(a.seed));
    artifact.save(&a.output)?;
    let summary = summarize(&artifact.payload)?;
    let text = format!("{}\n", serde_json::to_string_pretty(&summary)?);
    print!("{text}");
    if let Some(path) = &a.summary {
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn summarize(payload: &ModelPayload) -> Result<serde_json::Value> {
    let (cca, eigenvalues) = match payload {
        ModelPayload::Functional(m) => (&m.cca, Some(&m.eigenvalues)),
        ModelPayload::Euclidean(m) => (&m.cca, Some(&m.eigenvalues)),
        ModelPayload::Multivariate(c) => (c, None),
    };
    let model = cca.to_model()?;
    let support: Vec<String> = model
        .support(DEFAULT_ZERO_TOL)
        .into_iter()
        .map(|i| format!("x{}", i + 1))
        .collect();
    Ok(json!({
        "kind": payload.kind(),
        "rank": model.h.nrows(),
        "lambda": model.lambda,
        "pairs": model.k(),
        "correlations": model.correlations,
        "tied": model.tied,
        "support": support,
        "eigenvalues": eigenvalues,
    }))
}

fn cv(a: CvArgs) -> Result<()> {
    let ds = Dataset::load(&a.data.curves, &a.data.covariates)?;
    let (n, l, m, _) = ds.shape();
    let opts = a.x.options();
    let d_grid = match a.rank {
        Some(d) => vec![d],
        None => rank_grid(a.max_rank, n, l, m)?,
    };
    let out = fit_cv(&ds.curves, &ds.x, &d_grid, a.lambda_grid.as_deref(), a.folds, a.seed, &opts)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&a.output)?));
    w.write_record(["d", "lambda", "mean_error", "sd_error"])?;
    for row in &out.table {
        w.write_record([
            row.d.to_string(),
            asymcca::io::fmt_f64(row.lambda),
            asymcca::io::fmt_f64(row.mean_error),
            asymcca::io::fmt_f64(row.sd_error),
        ])?;
    }
    w.flush()?;
    let choice = json!({
        "chosen_rank": out.chosen_d,
        "chosen_lambda": out.chosen_lambda,
        "ranks": out.d_grid,
        "lambda_by_rank": out.lambda_by_d,
        "cv_correlation": out.cv_correlation,
    });
    println!("{}", serde_json::to_string_pretty(&choice)?);
    if let Some(path) = &a.model {
        let config = json!({
            "command": "cv",
            "method": "rfpca",
            "ranks": out.d_grid,
            "lambda_grid": a.lambda_grid,
            "folds": a.folds,
            "center_x": opts.center_x,
            "scale_x": opts.scale_x,
            "chosen_rank": out.chosen_d,
            "chosen_lambda": out.chosen_lambda,
            "inputs": input_hashes(&a.data)?,
        });
        let payload = ModelPayload::Functional(FunctionalModelJson::from(&out.model));
        ModelArtifact::new(payload, config, Some(a.seed)).save(path)?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let artifact = ModelArtifact::load(&a.model)?;
    let truth = TruthFile::load(&a.truth)?.to_truth()?;
    let test = Dataset::load(&a.test_curves, &a.test_covariates)?;
    let metrics = match &artifact.payload {
        ModelPayload::Functional(json) => {
            let model = json.to_model()?;
            if model.k() == 0 {
                return Err(Error::ZeroVariance("the model retained no canonical pair".into()));
            }
            let psi_hat = &model.canonical_functions[0];
            let theta_hat = model.theta().column(0).into_owned();
            let moved = transport_field(psi_hat, &truth.mu)?;
            // the pair is identified up to a joint sign; align through the functional side
            let sign = if field_inner(&moved, &truth.psis[0])? < 0.0 { -1.0 } else { 1.0 };
            let theta = truth.thetas.column(0).into_owned();
            let psi_values: Vec<DMatrix<f64>> = psi_hat.values().iter().map(|v| v.as_matrix().clone()).collect();
            TrialMetrics {
                a: Some(metric_norm_error(&theta, &(&theta_hat * sign))?),
                b: Some(metric_f1(&truth.support, &theta_hat, DEFAULT_ZERO_TOL)),
                c: Some(field_norm(&moved.scale(sign).sub(&truth.psis[0])?)?),
                d: Some(metric_tangent_corr(&test.curves, &test.x, &truth.mu, psi_hat, &theta_hat)?),
                e: Some(metric_euclid_corr(&test.curves, &test.x, &psi_values, &theta_hat)?),
            }
        }
        ModelPayload::Euclidean(json) => {
            let model = json.to_model()?;
            if model.k() == 0 {
                return Err(Error::ZeroVariance("the model retained no canonical pair".into()));
            }
            let theta_hat = model.theta().column(0).into_owned();
            TrialMetrics {
                e: Some(metric_euclid_corr(&test.curves, &test.x, &model.canonical_functions[0], &theta_hat)?),
                ..TrialMetrics::default()
            }
        }
        ModelPayload::Multivariate(_) => {
            return Err(invalid("evaluate needs a functional or Euclidean model"));
        }
    };
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&a.output)?));
    w.write_record(["metric", "value"])?;
    for (name, v) in metrics.entries() {
        w.write_record([name.to_string(), asymcca::io::fmt_f64(v)])?;
    }
    w.flush()?;
    Ok(())
}

fn mode(a: ModeArgs) -> Result<()> {
    let artifact = ModelArtifact::load(&a.model)?;
    let ModelPayload::Functional(json) = &artifact.payload else {
        return Err(invalid("mode needs a functional (rfpca) model"));
    };
    let model = json.to_model()?;
    let (plus, minus) = mode_extremes(&model, a.pair, a.scale)?;
    let ids = ["mean", "plus", "minus"].map(String::from);
    let curves = [model.mean_curve().as_ref().clone(), plus, minus];
    write_curves(BufWriter::new(File::create(&a.output)?), &ids, &curves)
}

fn trials(a: TrialsArgs) -> Result<()> {
    let cfg = sim_config(a.config.as_deref(), a.seed)?;
    cfg.validate()?;
    let methods = a.methods.iter().map(|s| s.parse::<Method>()).collect::<Result<Vec<_>>>()?;
    let opts = TrialOptions {
        methods: methods.clone(),
        folds: a.folds,
        n_test: a.n_test,
        ..TrialOptions::default()
    };
    let table = run_trials(&cfg, &a.n_list, a.trials, &opts)?;
    table.write_csv(BufWriter::new(File::create(&a.output)?))?;
    for method in methods {
        for &n in &a.n_list {
            let medians: Vec<String> = ["A", "B", "C", "D", "E"]
                .iter()
                .filter_map(|m| table.median(method, n, m).map(|v| format!("{m}={v:.4}")))
                .collect();
            eprintln!("{} N={n}: median {}", method.name(), medians.join(" "));
        }
    }
    Ok(())
}
