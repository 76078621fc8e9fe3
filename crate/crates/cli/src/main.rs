//! `lcsl`: fit GP reward surfaces, recommend doses, and run simulation studies.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure, 4 I/O error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lcsl_core::{
    compensated_sum, explain, feature_relevances, io as lio, optimize_hyperparameters, penalty_sweep, recommend_dose,
    rng, run_experiment, DosePolicy, DoseRange, ExperimentConfig, FittedGP, PenaltySpec, Scenario,
};

#[derive(Parser)]
#[command(
    name = "lcsl",
    version,
    about = "Lower confidence surface learning for individualized dose rules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a GP to a dataset CSV and save the model.
    Fit(FitArgs),
    /// Recommend a dose for one patient.
    Recommend(RecommendArgs),
    /// Rank training records by their contribution to a prediction.
    Explain(ExplainArgs),
    /// Run a simulation study and write the summary CSV.
    Experiment(ExperimentArgs),
    /// Run a penalty sweep over percentiles and write long-format CSV.
    Sweep(ExperimentArgs),
    /// Export a simulated training dataset as CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV: covariate columns, then `dose`, then `reward`.
    #[arg(long)]
    data: PathBuf,
    /// Admissible dose interval as `lo,hi`.
    #[arg(long, value_parser = parse_dose_range, allow_hyphen_values = true)]
    dose_range: DoseRange,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated covariate values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    covariates: Vec<f64>,
    #[arg(long, default_value_t = 95)]
    percentile: u32,
    #[arg(long, default_value_t = 50)]
    grid: usize,
    /// Polish the grid optimum with a bracketed local search.
    #[arg(long)]
    refine: bool,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    covariates: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    dose: f64,
    /// Number of contributions to list.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Lcsl,
    Oracle,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Scenario id, 1 to 5.
    #[arg(long)]
    scenario: u8,
    /// Comma-separated training sizes.
    #[arg(long, value_delimiter = ',')]
    n_train: Option<Vec<usize>>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Comma-separated list or `start:end:step`.
    #[arg(long, value_parser = parse_percentiles)]
    percentiles: Option<Percentiles>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    refine: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to available parallelism.
    #[arg(long, env = "LCSL_WORKERS")]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Lcsl)]
    policy: PolicyArg,
    /// Use 50 replications and training sizes up to 800.
    #[arg(long)]
    full_profile: bool,
    /// Output CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the rounded table to this file.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: u8,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("'{t}' is not a finite number")),
            }
        })
        .collect()
}

fn parse_dose_range(s: &str) -> Result<DoseRange, String> {
    match parse_floats(s)?.as_slice() {
        [lo, hi] => DoseRange::new(*lo, *hi).map_err(|e| e.to_string()),
        _ => Err("expected `lo,hi`".into()),
    }
}

#[derive(Clone)]
struct Percentiles(Vec<u32>);

fn parse_percentiles(s: &str) -> Result<Percentiles, String> {
    percentile_list(s).map(Percentiles)
}

fn percentile_list(s: &str) -> Result<Vec<u32>, String> {
    let int = |t: &str| {
        t.trim()
            .parse::<u32>()
            .map_err(|_| format!("'{t}' is not an integer percentile"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [single] => single.split(',').map(int).collect(),
        [start, end] | [start, end, _] => {
            let (start, end) = (int(start)?, int(end)?);
            let step = if parts.len() == 3 { int(parts[2])? } else { 1 };
            if step == 0 || start > end {
                return Err("range must be `start:end:step` with start <= end and step >= 1".into());
            }
            Ok((start..=end).step_by(step as usize).collect())
        }
        _ => Err("expected a list or `start:end:step`".into()),
    }
}

fn scenario(id: u8) -> anyhow::Result<Scenario> {
    Ok(Scenario::from_id(id)?)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load(path: &Path) -> anyhow::Result<FittedGP> {
    lio::load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<()> {
    let data = lio::read_dataset_file(&args.data, args.dose_range)
        .with_context(|| format!("reading {}", args.data.display()))?;
    let mut rng = rng::stream_rng(args.seed, 0);
    let model = optimize_hyperparameters(&data, args.restarts, &mut rng)?;
    lio::save_model(&model, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let hp = model.hyperparameters();
    println!("log_ml: {}", model.log_ml());
    println!("signal_variance: {}", hp.signal_variance);
    let scales: Vec<String> = hp.length_scales.iter().map(f64::to_string).collect();
    println!("length_scales: {}", scales.join(","));
    println!("noise_variance: {}", hp.noise_variance);
    if model.jitter() > 0.0 {
        println!("jitter: {}", model.jitter());
    }
    Ok(())
}

fn cmd_recommend(args: RecommendArgs) -> anyhow::Result<()> {
    let penalty = PenaltySpec::from_percentile(args.percentile)?;
    let model = load(&args.model)?;
    let rec = recommend_dose(&model, &args.covariates, penalty, args.grid, args.refine)?;
    let scaler = model.scaler();
    println!("dose: {}", rec.dose);
    println!("objective: {}", rec.objective);
    println!("mean_scaled: {}", rec.mean);
    println!("mean: {}", scaler.unscale(rec.mean));
    println!("sd_scaled: {}", rec.sd);
    println!("sd: {}", rec.sd * (scaler.r_max - scaler.r_min));
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> anyhow::Result<()> {
    let model = load(&args.model)?;
    let contributions = explain(&model, &args.covariates, args.dose, args.top)?;
    let mut x_star = args.covariates.clone();
    x_star.push(args.dose);
    let mean = model.predict(&x_star)?.mean;
    let listed = compensated_sum(contributions.iter().map(|c| c.value));
    println!("rank,index,contribution");
    for (rank, c) in contributions.iter().enumerate() {
        println!("{},{},{}", rank + 1, c.index, c.value);
    }
    println!("listed_sum: {listed}");
    println!("mean_scaled: {mean}");
    println!("feature,relevance");
    let relevances = feature_relevances(&model);
    let p = relevances.len() - 1;
    for (j, r) in relevances.iter().enumerate() {
        let name = if j == p {
            "dose".to_string()
        } else {
            format!("c{}", j + 1)
        };
        println!("{name},{r}");
    }
    Ok(())
}

fn experiment_config(args: &ExperimentArgs) -> anyhow::Result<ExperimentConfig> {
    let sc = scenario(args.scenario)?;
    let mut cfg = if args.full_profile {
        ExperimentConfig::full_profile(sc)
    } else {
        ExperimentConfig::new(sc)
    };
    if let Some(n) = &args.n_train {
        cfg.n_train = n.clone();
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(n) = args.n_test {
        cfg.n_test = n;
    }
    if let Some(p) = &args.percentiles {
        cfg.percentiles = p.0.clone();
    }
    if let Some(r) = args.restarts {
        cfg.restarts = r;
    }
    if let Some(g) = args.grid {
        cfg.grid_size = g;
    }
    cfg.refine = args.refine;
    cfg.base_seed = args.seed;
    cfg.workers = args.workers;
    cfg.policy = match args.policy {
        PolicyArg::Lcsl => DosePolicy::Lcsl,
        PolicyArg::Oracle => DosePolicy::Oracle,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_experiment(args: ExperimentArgs, sweep: bool) -> anyhow::Result<()> {
    let cfg = experiment_config(&args)?;
    let summary = if sweep {
        penalty_sweep(&cfg)?
    } else {
        run_experiment(&cfg)?
    };
    let write = |out: &mut dyn Write| -> lcsl_core::Result<()> {
        if sweep {
            lio::write_sweep_csv(&summary, out)
        } else {
            lio::write_summary_csv(&summary, out)
        }
    };
    let table = lio::format_summary_table(&summary);
    match &args.out {
        Some(path) => {
            let mut out = create(path)?;
            write(&mut out)?;
            out.flush()?;
            print!("{table}");
        }
        None => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            write(&mut out)?;
            out.flush()?;
            eprint!("{table}");
        }
    }
    if let Some(path) = &args.table {
        let mut out = create(path)?;
        out.write_all(table.as_bytes())?;
        out.flush()?;
    }
    if summary.rows.iter().all(|r| r.completed == 0) {
        bail!(lcsl_core::Error::Fit(vec!["no replication completed".into()]));
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let sc = scenario(args.scenario)?;
    if args.n == 0 {
        bail!(lcsl_core::Error::Validation(vec!["n must be at least 1".into()]));
    }
    let mut rng = rng::stream_rng(args.seed, 0);
    let data = sc.sample_dataset(args.n, &mut rng)?;
    let mut out = create(&args.out)?;
    lio::write_dataset_csv(&data, &mut out)?;
    out.flush()?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<lcsl_core::Error>() {
            return match e {
                lcsl_core::Error::Io(_) => 4,
                e if e.is_numerical() => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Recommend(a) => cmd_recommend(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Experiment(a) => cmd_experiment(a, false),
        Command::Sweep(a) => cmd_experiment(a, true),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_syntax() {
        assert_eq!(percentile_list("95").unwrap(), vec![95]);
        assert_eq!(percentile_list("50,95").unwrap(), vec![50, 95]);
        assert_eq!(percentile_list("50:99:1").unwrap().len(), 50);
        assert_eq!(percentile_list("50:60:5").unwrap(), vec![50, 55, 60]);
        assert!(percentile_list("60:50:1").is_err());
        assert!(percentile_list("50:99:0").is_err());
    }

    #[test]
    fn dose_range_syntax() {
        let r = parse_dose_range("0, 2").unwrap();
        assert_eq!((r.lo, r.hi), (0.0, 2.0));
        assert!(parse_dose_range("1").is_err());
        assert!(parse_dose_range("2,1").is_err());
    }

    #[test]
    fn covariate_lists_reject_non_finite() {
        assert_eq!(parse_floats("-0.5,1e-3").unwrap(), vec![-0.5, 1e-3]);
        assert!(parse_floats("1,nan").is_err());
        assert!(parse_floats("1,,2").is_err());
    }
}
