use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hybrid_cavi::bench::{self, ExperimentConfig, ExperimentKind, Report, ReportFormat};
use hybrid_cavi::cavi::{
    cavi_closed_form, cavi_numerical, CaviRecord, MeanFieldPosterior, OptimizerConfig,
    QuadratureSettings,
};
use hybrid_cavi::divergence::{
    kl_discrete, kl_gaussian, mean_field_as_gaussian, DiscreteDirection, GridSpec, KlValue,
    DEFAULT_BINS, DEFAULT_WIDEN,
};
use hybrid_cavi::hybrid::{hybrid_cavi, FactorFamily, HybridConfig};
use hybrid_cavi::mcmc::{metropolis_hastings, Chain, MhConfig};
use hybrid_cavi::models::{
    conjugate_posterior, DensityScale, LatentPoint, LikelihoodMode, LogJoint, Model, ModelConfig,
    ModelKind, ObjectiveScale,
};
use hybrid_cavi::RngSeed;

#[derive(Parser)]
#[command(
    name = "hcavi",
    version,
    about = "CAVI, Metropolis-Hastings and Hybrid CAVI posterior approximation"
)]
struct Cli {
    /// Random seed. Overrides the experiment config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment TOML for `experiment` and `gen-data`; model TOML for the
    /// single-algorithm commands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format for `experiment`.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Exit nonzero when any report row failed.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Conjugate,
    Tdf,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Conjugate => ExperimentKind::Conjugate,
            Kind::Tdf => ExperimentKind::Tdf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Gaussian,
    ShiftedGamma,
}

impl From<Family> for FactorFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Gaussian => FactorFamily::Gaussian,
            Family::ShiftedGamma => FactorFamily::ShiftedGamma,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Log,
    Density,
}

impl From<Objective> for ObjectiveScale {
    fn from(o: Objective) -> Self {
        match o {
            Objective::Log => ObjectiveScale::Log,
            Objective::Density => ObjectiveScale::Density,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    ReferenceToFitted,
    FittedToReference,
}

impl From<Direction> for DiscreteDirection {
    fn from(d: Direction) -> Self {
        match d {
            Direction::ReferenceToFitted => DiscreteDirection::ReferenceToFitted,
            Direction::FittedToReference => DiscreteDirection::FittedToReference,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a study's dataset and write `data.csv` plus `model.toml`.
    GenData { kind: Kind },
    /// Run a Metropolis-Hastings chain.
    Mcmc(ChainArgs),
    /// Run CAVI from explicit factor parameters.
    Cavi(CaviArgs),
    /// Run Hybrid CAVI.
    Hybrid {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// KL divergence of a fitted posterior against the analytic posterior of
    /// the configured conjugate model, or against a reference chain.
    Kl(KlArgs),
    /// Run a full study and write its report.
    Experiment { kind: Kind },
}

#[derive(Args)]
struct ChainArgs {
    /// Starting point, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_negative_numbers = true
    )]
    init: Vec<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Proposal standard deviation per coordinate (one value is broadcast).
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    step_size: Vec<f64>,
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, value_enum, default_value_t = Family::Gaussian)]
    family: Family,
    /// Exact coordinate updates (conjugate Gaussian-mean model only).
    #[arg(long)]
    closed_form: bool,
    #[arg(long, value_enum, default_value_t = Objective::Log)]
    objective: Objective,
    #[arg(long, default_value_t = 32)]
    hermite_nodes: usize,
    #[arg(long, default_value_t = 256)]
    gamma_grid_nodes: usize,
    #[arg(long, default_value_t = 500)]
    max_sweeps: usize,
}

#[derive(Args)]
struct CaviArgs {
    /// One factor's parameters as `a,b`: mean,variance or shape,scale.
    /// Repeat once per coordinate.
    #[arg(long = "init-factor", required = true, allow_hyphen_values = true)]
    init_factor: Vec<String>,
    #[command(flatten)]
    opt: OptArgs,
}

#[derive(Args)]
struct KlArgs {
    /// JSON written by `cavi` or `hybrid`.
    #[arg(long)]
    fitted: PathBuf,
    /// Reference chain CSV written by `mcmc`.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Burn-in of the reference chain.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_WIDEN)]
    widen: f64,
    #[arg(long, value_enum, default_value_t = Direction::ReferenceToFitted)]
    direction: Direction,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::GenData { kind } => gen_data(cli, (*kind).into()),
        Command::Mcmc(args) => mcmc(cli, args),
        Command::Cavi(args) => cavi(cli, args),
        Command::Hybrid { chain, opt } => hybrid(cli, chain, opt),
        Command::Kl(args) => kl(cli, args),
        Command::Experiment { kind } => experiment(cli, (*kind).into()),
    }
}

fn out_dir(cli: &Cli, fallback: &Path) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| fallback.to_path_buf());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn experiment_config(cli: &Cli, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default_for(kind),
    };
    if cfg.experiment != kind {
        bail!(
            "config is for the {} experiment, not {}",
            cfg.experiment.as_str(),
            kind.as_str()
        );
    }
    if let Some(seed) = cli.seed {
        cfg.seed = RngSeed(seed);
    }
    Ok(cfg)
}

fn gen_data(cli: &Cli, kind: ExperimentKind) -> Result<ExitCode> {
    let cfg = experiment_config(cli, kind)?;
    let dir = out_dir(cli, &cfg.output_dir)?;
    let (data, model) = match kind {
        ExperimentKind::Conjugate => (
            bench::conjugate_dataset(&cfg)?,
            ModelConfig {
                model: ModelKind::GaussianMean,
                data_file: "data.csv".into(),
                data_cov: Some(cfg.data.cov.clone()),
                prior_var: Some(cfg.data.prior_var),
                likelihood_mode: LikelihoodMode::default(),
                copula_corr: None,
            },
        ),
        ExperimentKind::Tdf => (
            bench::tdf_dataset(&cfg)?,
            ModelConfig {
                model: ModelKind::TDegrees,
                data_file: "data.csv".into(),
                data_cov: None,
                prior_var: None,
                likelihood_mode: cfg.data.likelihood_mode,
                copula_corr: (cfg.data.likelihood_mode == LikelihoodMode::FullCopula)
                    .then(|| cfg.data.corr.clone()),
            },
        ),
    };
    data.write_csv(dir.join("data.csv"))?;
    std::fs::write(dir.join("model.toml"), toml::to_string(&model)?)
        .with_context(|| format!("writing {}", dir.join("model.toml").display()))?;
    println!(
        "wrote {} ({} rows) and {}",
        dir.join("data.csv").display(),
        data.n(),
        dir.join("model.toml").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_model(cli: &Cli) -> Result<Model> {
    let path = cli
        .config
        .as_ref()
        .context("this command needs --config <model.toml>")?;
    let cfg =
        ModelConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(cfg.build(base)?)
}

fn mh_config(
    cli: &Cli,
    args: &ChainArgs,
    dim: usize,
    steps: usize,
    burn_in: usize,
) -> Result<MhConfig> {
    let step_sizes = match args.step_size.as_slice() {
        [s] => vec![*s; dim],
        s => s.to_vec(),
    };
    let cfg = MhConfig {
        total_steps: args.steps.unwrap_or(steps),
        burn_in: args.burn_in.unwrap_or(burn_in),
        step_sizes,
        seed: RngSeed(cli.seed.unwrap_or(0)),
    };
    cfg.validate(dim)?;
    Ok(cfg)
}

fn mcmc(cli: &Cli, args: &ChainArgs) -> Result<ExitCode> {
    let model = load_model(cli)?;
    let cfg = mh_config(cli, args, model.dim(), 20_000, 15_000)?;
    let chain = metropolis_hastings(&model, &LatentPoint::new(args.init.clone())?, &cfg)?;
    let dir = out_dir(cli, Path::new("."))?;
    chain.write_csv(dir.join("chain.csv"))?;
    let summary = chain.summary()?;
    summary.write_json(dir.join("chain_summary.json"))?;
    println!(
        "acceptance {:.4}; post-burn-in means {:?}; wrote {}",
        summary.acceptance_rate,
        summary.moments.means,
        dir.join("chain.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn optimizer(opt: &OptArgs) -> (OptimizerConfig, QuadratureSettings) {
    let cavi = OptimizerConfig {
        max_sweeps: opt.max_sweeps,
        ..OptimizerConfig::default()
    };
    let quad = QuadratureSettings {
        hermite_nodes: opt.hermite_nodes,
        gamma_grid_nodes: opt.gamma_grid_nodes,
        ..QuadratureSettings::default()
    };
    (cavi, quad)
}

fn parse_pair(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((a.parse()?, b.parse()?)),
        _ => bail!("expected `a,b`, got `{text}`"),
    }
}

fn cavi(cli: &Cli, args: &CaviArgs) -> Result<ExitCode> {
    let model = load_model(cli)?;
    let pairs = args
        .init_factor
        .iter()
        .map(|s| parse_pair(s))
        .collect::<Result<Vec<_>>>()?;
    let init = match args.opt.family {
        Family::Gaussian => MeanFieldPosterior::gaussian(&pairs)?,
        Family::ShiftedGamma => MeanFieldPosterior::shifted_gamma(&pairs)?,
    };
    let (cfg, quad) = optimizer(&args.opt);
    let (q, trace) = if args.opt.closed_form {
        let conj = model
            .as_conjugate_gaussian()
            .context("--closed-form needs the gaussian-mean model")?;
        cavi_closed_form(conj, &init, &cfg)?
    } else {
        match ObjectiveScale::from(args.opt.objective) {
            ObjectiveScale::Log => cavi_numerical(&model, &init, &quad, &cfg)?,
            ObjectiveScale::Density => cavi_numerical(&DensityScale(&model), &init, &quad, &cfg)?,
        }
    };
    let dir = out_dir(cli, Path::new("."))?;
    CaviRecord::new(&trace, &q).write_json(dir.join("cavi.json"))?;
    println!(
        "sweeps {} converged {} final ELBO {:.6}; fitted {:?}",
        trace.sweeps,
        trace.converged,
        trace.final_elbo(),
        q.params()
    );
    Ok(ExitCode::SUCCESS)
}

fn hybrid(cli: &Cli, chain: &ChainArgs, opt: &OptArgs) -> Result<ExitCode> {
    let model = load_model(cli)?;
    let (cavi, quad) = optimizer(opt);
    let cfg = HybridConfig {
        mcmc: mh_config(cli, chain, model.dim(), 1_000, 900)?,
        cavi,
        quad,
        family: opt.family.into(),
        closed_form: opt.closed_form,
        objective: opt.objective.into(),
    };
    let run = hybrid_cavi(&model, &LatentPoint::new(chain.init.clone())?, &cfg)?;
    let dir = out_dir(cli, Path::new("."))?;
    run.report()?.write_json(dir.join("hybrid.json"))?;
    run.chain.write_csv(dir.join("hybrid_chain.csv"))?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "mom init {:?} -> fitted {:?} ({} sweeps, {:.3} s)",
        run.mom_init.params(),
        run.posterior.params(),
        run.trace.sweeps,
        run.wall_time_s.total
    );
    Ok(ExitCode::SUCCESS)
}

fn read_fitted(path: &Path) -> Result<MeanFieldPosterior> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let fitted = value.get("fitted").cloned().unwrap_or(value);
    serde_json::from_value(fitted)
        .with_context(|| format!("{}: no fitted posterior", path.display()))
}

fn kl(cli: &Cli, args: &KlArgs) -> Result<ExitCode> {
    let q = read_fitted(&args.fitted)?;
    let value: KlValue = match &args.reference {
        Some(path) => {
            let chain = Chain::read_csv(path, args.burn_in)?;
            let grid = GridSpec::from_chain(&chain, args.bins, args.widen)?;
            kl_discrete(&q, &chain, &grid, args.direction.into())?
        }
        None => {
            let model = load_model(cli)?;
            let conj = model
                .as_conjugate_gaussian()
                .context("without --reference, the configured model must be gaussian-mean")?;
            kl_gaussian(&mean_field_as_gaussian(&q)?, &conjugate_posterior(conj))?
        }
    };
    let nats = if value.is_infinite() {
        serde_json::json!("inf")
    } else {
        serde_json::json!(value.nats)
    };
    println!(
        "{}",
        serde_json::json!({ "nats": nats, "method": value.method })
    );
    Ok(ExitCode::SUCCESS)
}

fn experiment(cli: &Cli, kind: ExperimentKind) -> Result<ExitCode> {
    let cfg = experiment_config(cli, kind)?;
    let dir = out_dir(cli, &cfg.output_dir)?;
    let report = bench::run_experiment(&cfg)?;
    let format = ReportFormat::from(cli.format);
    let path = dir.join(format!("{}.{}", kind.as_str(), format.extension()));
    bench::emit_report(&report, format, &path)?;
    print_summary(&report);
    println!("wrote {}", path.display());
    if cli.strict && report.has_errors() {
        eprintln!("error: at least one run failed (--strict)");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(report: &Report) {
    println!(
        "{:<18} {:<10} {:>10} {:>14}  notes",
        "algorithm", "init", "time (s)", "KL (nats)"
    );
    for r in &report.rows {
        let kl = match r.kl_nats {
            Some(k) if k.is_infinite() => "inf".to_string(),
            Some(k) => format!("{k:.6}"),
            None => "-".into(),
        };
        println!(
            "{:<18} {:<10} {:>10.3} {:>14}  {}",
            r.algorithm, r.init, r.wall_time_s, kl, r.notes
        );
    }
}
