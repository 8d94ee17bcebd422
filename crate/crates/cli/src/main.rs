//! Command-line driver: ingestion, splitting, fitting, evaluation,
//! simulation, prediction, and the density-grid diagnostic dump.

mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::FileConfig;
use hcpf_core::compound::{density_grid, prob_zero, truncated_mean_at};
use hcpf_core::data::{load_triplets, split, SplitSet, TripletFormat};
use hcpf_core::edm::{mle_fit, Element, ElementSpec};
use hcpf_core::model::{
    default_hyperparams, load_model, save_model, simulate, simulation_hyperparams,
    simulation_hyperparams_with_shape,
};
use hcpf_core::svi::{fit, FitConfig, FitMode, TrainingSource};
use hcpf_core::{EdmFamily, Error as CoreError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_COMPUTE: u8 = 4;

struct CliError {
    kind: &'static str,
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: "config",
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        CliError {
            kind: "io",
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        let (kind, code) = match &err {
            CoreError::InvalidParameter(_) | CoreError::Config(_) => ("config", EXIT_CONFIG),
            CoreError::Io(_) | CoreError::Parse { .. } | CoreError::Format(_) => ("io", EXIT_IO),
            _ => ("compute", EXIT_COMPUTE),
        };
        CliError {
            kind,
            code,
            message: err.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Normal,
    Gamma,
    Invgauss,
    Poisson,
    Binomial,
    Negbinomial,
    Ztp,
    /// Point mass at one; realizes plain Poisson factorization.
    Degenerate,
}

impl FamilyArg {
    fn parse(name: &str) -> CliResult<Self> {
        <FamilyArg as ValueEnum>::from_str(name, true)
            .map_err(|_| CliError::config(format!("unknown family {name:?}")))
    }

    fn to_edm(self) -> Option<EdmFamily> {
        match self {
            FamilyArg::Normal => Some(EdmFamily::Normal),
            FamilyArg::Gamma => Some(EdmFamily::Gamma),
            FamilyArg::Invgauss => Some(EdmFamily::InverseGaussian),
            FamilyArg::Poisson => Some(EdmFamily::Poisson),
            FamilyArg::Binomial => Some(EdmFamily::Binomial),
            FamilyArg::Negbinomial => Some(EdmFamily::NegativeBinomial),
            FamilyArg::Ztp => Some(EdmFamily::ZeroTruncatedPoisson),
            FamilyArg::Degenerate => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Hcpf,
    Hpf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Full,
    Nonmissing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Tsv,
    Csv,
    /// Binary dataset cache (keeps dimensions of empty rows and columns).
    Cache,
}

#[derive(Parser)]
#[command(
    name = "hcpf",
    version,
    about = "Compound Poisson factorization for extremely sparse matrices"
)]
struct Cli {
    /// Worker threads for evaluation; reads HCPF_THREADS when absent.
    /// The fit loop itself is single-threaded either way.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a triplet file and write the train/validation/test split.
    Split(SplitArgs),
    /// Fit a model on a split and write the model plus a training trace.
    Fit(FitArgs),
    /// Evaluate a fitted model on the test parts of a split.
    Evaluate(EvaluateArgs),
    /// Draw a synthetic dataset with its ground-truth latent state.
    Simulate(SimulateArgs),
    /// Per-coordinate rate, non-missing probability, and truncated mean.
    Predict(PredictArgs),
    /// Dump the zero-truncated density over a (rate, response) grid.
    DensityGrid(DensityGridArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Triplet file: user, item, value per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
    format: FormatArg,
    /// Skip the first line.
    #[arg(long)]
    header: bool,
    /// Fraction of entries held out for testing.
    #[arg(long)]
    test_frac: Option<f64>,
    /// Fraction of entries held out for validation.
    #[arg(long)]
    valid_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Split file produced by `split`.
    #[arg(long)]
    splits: PathBuf,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    source: Option<SourceArg>,
    /// Factor count.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Learning-rate delay.
    #[arg(long)]
    tau: Option<f64>,
    /// Learning-rate power, in (0.5, 1.0).
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    patience: Option<u32>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Local steps averaged per global step (1 = reference path).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override the element natural parameter instead of the fitted value.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Override the element dispersion instead of the fitted value.
    #[arg(long)]
    kappa: Option<f64>,
    /// Refit the element natural parameter every N iterations.
    #[arg(long)]
    update_element_every: Option<u64>,
    /// Disable the symmetry-breaking jitter on the initial factor shapes.
    #[arg(long)]
    no_jitter: bool,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    /// Trace output path; defaults to <out>.trace.tsv.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Report base path: writes <out>.txt and <out>.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Element natural parameter (ignored for the degenerate family).
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Element dispersion (ignored for the degenerate family).
    #[arg(long)]
    kappa: Option<f64>,
    /// Target sparsity of the simulated matrix.
    #[arg(long, default_value_t = 0.95)]
    sparsity: f64,
    /// Gamma shape of the latent factors; smaller is blockier.
    #[arg(long)]
    factor_shape: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Base path: writes <out>.data.bin, <out>.triplets.tsv, <out>.latents.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Coordinate file: user and item per line, tab-separated. Dense indices
    /// by default; external IDs when --data is given.
    #[arg(long)]
    pairs: PathBuf,
    /// Dataset cache providing the ID dictionaries.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DensityGridArgs {
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    rate_min: f64,
    #[arg(long, default_value_t = 1.0)]
    rate_max: f64,
    /// Log-spaced rate count.
    #[arg(long, default_value_t = 60)]
    rate_steps: usize,
    #[arg(long, default_value_t = 0.2)]
    y_min: f64,
    #[arg(long, default_value_t = 20.0)]
    y_max: f64,
    #[arg(long, default_value_t = 100)]
    y_steps: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error\t{}\t{}", err.kind, err.message);
            ExitCode::from(err.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(CliError::config)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads).or_else(|| {
        std::env::var("HCPF_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n < 1 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Split(args) => cmd_split(args, &file),
        Command::Fit(args) => cmd_fit(args, &file),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Simulate(args) => cmd_simulate(args, &file),
        Command::Predict(args) => cmd_predict(args),
        Command::DensityGrid(args) => cmd_density_grid(args, &file),
    }
}

fn check_out_dir(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() && !dir.exists() {
            return Err(CliError::io(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn cmd_split(args: SplitArgs, file: &FileConfig) -> CliResult<()> {
    let test_frac = args.test_frac.or(file.test_frac).unwrap_or(0.2);
    let valid_frac = args.valid_frac.or(file.valid_frac).unwrap_or(0.01);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    check_out_dir(&args.out)?;
    let data = match args.format {
        FormatArg::Cache => hcpf_core::SparseDataset::load_cache(&args.input)?,
        text => {
            let format = match text {
                FormatArg::Tsv => TripletFormat::Tsv,
                FormatArg::Csv => TripletFormat::Csv,
                FormatArg::Cache => unreachable!(),
            };
            let (data, report) = load_triplets(&args.input, format, args.header)?;
            if report.zeros_rejected > 0 {
                eprintln!("note: rejected {} zero-valued rows", report.zeros_rejected);
            }
            if report.duplicates_replaced > 0 {
                eprintln!(
                    "note: {} duplicate coordinates, kept the last occurrence",
                    report.duplicates_replaced
                );
            }
            data
        }
    };
    let splits = split(&data, test_frac, valid_frac, seed)?;
    splits.save(&args.out)?;
    println!(
        "split {} entries ({} users x {} items, sparsity {:.6}) -> train {}, test {}+{}, validation {}+{}",
        data.len(),
        data.c_u(),
        data.c_i(),
        data.sparsity(),
        splits.train.len(),
        splits.test.nonmissing.len(),
        splits.test.missing.len(),
        splits.validation.nonmissing.len(),
        splits.validation.missing.len(),
    );
    Ok(())
}

fn resolve_element(
    family: FamilyArg,
    theta: Option<f64>,
    kappa: Option<f64>,
    train_values: &[f64],
) -> CliResult<Element> {
    match family.to_edm() {
        None => Ok(Element::DegenerateOne),
        Some(edm_family) => {
            let spec: ElementSpec = match (theta, kappa) {
                (Some(t), Some(k)) => ElementSpec::new(edm_family, t, k)?,
                _ => {
                    let native = mle_fit(edm_family, train_values)?;
                    let fitted = native.to_edm()?;
                    let t = theta.unwrap_or_else(|| fitted.theta());
                    let k = kappa.unwrap_or_else(|| fitted.kappa());
                    ElementSpec::new(edm_family, t, k)?
                }
            };
            Ok(Element::Edm(spec))
        }
    }
}

fn cmd_fit(args: FitArgs, file: &FileConfig) -> CliResult<()> {
    let family = match args.family {
        Some(f) => f,
        None => match &file.family {
            Some(name) => FamilyArg::parse(name)?,
            None => return Err(CliError::config("missing --family (or config `family`)")),
        },
    };
    let mode = args.mode.or(match file.mode.as_deref() {
        Some("hcpf") => Some(ModeArg::Hcpf),
        Some("hpf") => Some(ModeArg::Hpf),
        _ => None,
    });
    let mode = match mode {
        Some(ModeArg::Hpf) => FitMode::Hpf,
        _ => FitMode::Hcpf,
    };
    let source = args.source.or(match file.source.as_deref() {
        Some("full") => Some(SourceArg::Full),
        Some("nonmissing") => Some(SourceArg::Nonmissing),
        _ => None,
    });
    let source = match source {
        Some(SourceArg::Nonmissing) => TrainingSource::NonmissingOnly,
        _ => TrainingSource::FullMatrix,
    };
    if mode == FitMode::Hpf && family != FamilyArg::Degenerate {
        return Err(CliError::config("--mode hpf requires --family degenerate"));
    }
    let k = args.k.or(file.k).unwrap_or(hcpf_core::model::DEFAULT_K);
    let defaults = FitConfig::default();
    let fit_config = FitConfig {
        mode,
        source,
        max_iterations: args
            .max_iters
            .or(file.max_iters)
            .unwrap_or(defaults.max_iterations),
        eval_every: args
            .eval_every
            .or(file.eval_every)
            .unwrap_or(defaults.eval_every),
        patience: args.patience.or(file.patience).unwrap_or(defaults.patience),
        tolerance: args
            .tolerance
            .or(file.tolerance)
            .unwrap_or(defaults.tolerance),
        seed: args.seed.or(file.seed).unwrap_or(0),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(1),
        element_update_every: args.update_element_every,
        jitter_init: !args.no_jitter,
    };
    fit_config.validate()?;
    check_out_dir(&args.out)?;
    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.trace.tsv", args.out.display())));
    check_out_dir(&trace_path)?;

    let splits = SplitSet::load(&args.splits)?;
    let train_values: Vec<f64> = splits.train.entries().iter().map(|e| e.value).collect();
    let element = resolve_element(family, args.theta, args.kappa, &train_values)?;
    let mut hyper = default_hyperparams(splits.train.sparsity(), element, k, source)?;
    if let Some(tau) = args.tau.or(file.tau) {
        hyper.tau = tau;
    }
    if let Some(xi) = args.xi.or(file.xi) {
        hyper.xi = xi;
    }
    hyper.validate()?;

    let result = fit(&splits.train, &hyper, &fit_config, &splits.validation)?;
    save_model(&args.out, &hyper, &result.state)?;
    let mut trace =
        std::io::BufWriter::new(std::fs::File::create(&trace_path).map_err(CoreError::from)?);
    writeln!(trace, "iteration\tvalidation\tl_m\tl_nm\tseconds").map_err(CoreError::from)?;
    for p in &result.trace {
        writeln!(
            trace,
            "{}\t{}\t{}\t{}\t{:.3}",
            p.iteration, p.validation, p.l_m, p.l_nm, p.seconds
        )
        .map_err(CoreError::from)?;
    }
    trace.flush().map_err(CoreError::from)?;
    println!(
        "fit {} iterations, best validation {:.6}, truncation {}, model -> {}",
        result.iterations,
        result.best_validation,
        result.truncation,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let text_path = PathBuf::from(format!("{}.txt", args.out.display()));
    let tsv_path = PathBuf::from(format!("{}.tsv", args.out.display()));
    check_out_dir(&text_path)?;
    let splits = SplitSet::load(&args.splits)?;
    let (hyper, state) = load_model(&args.model)?;
    if state.c_u != splits.train.c_u() || state.c_i != splits.train.c_i() {
        return Err(CliError::config(format!(
            "model is {} x {} but the split is {} x {}",
            state.c_u,
            state.c_i,
            splits.train.c_u(),
            splits.train.c_i()
        )));
    }
    let report = hcpf_core::eval::evaluate(&state, &hyper.element, &splits)?;
    std::fs::write(&text_path, format!("{report}\n")).map_err(CoreError::from)?;
    std::fs::write(&tsv_path, report.to_tsv()).map_err(CoreError::from)?;
    println!("{report}");
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, file: &FileConfig) -> CliResult<()> {
    let family = match args.family {
        Some(f) => f,
        None => match &file.family {
            Some(name) => FamilyArg::parse(name)?,
            None => return Err(CliError::config("missing --family (or config `family`)")),
        },
    };
    let k = args.k.or(file.k).unwrap_or(5);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let element = match family.to_edm() {
        None => Element::DegenerateOne,
        Some(edm_family) => {
            let theta = args
                .theta
                .ok_or_else(|| CliError::config("simulate needs --theta for EDM families"))?;
            let kappa = args
                .kappa
                .ok_or_else(|| CliError::config("simulate needs --kappa for EDM families"))?;
            Element::Edm(ElementSpec::new(edm_family, theta, kappa)?)
        }
    };
    let hyper = match args.factor_shape {
        Some(shape) => simulation_hyperparams_with_shape(args.sparsity, element, k, shape)?,
        None => simulation_hyperparams(args.sparsity, element, k)?,
    };
    let data_path = PathBuf::from(format!("{}.data.bin", args.out.display()));
    let triplet_path = PathBuf::from(format!("{}.triplets.tsv", args.out.display()));
    let latent_path = PathBuf::from(format!("{}.latents.tsv", args.out.display()));
    check_out_dir(&data_path)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (latent, data) = simulate(&hyper, args.rows, args.cols, &mut rng)?;
    data.save_cache(&data_path)?;
    data.save_triplets(&triplet_path, TripletFormat::Tsv)?;
    let mut w =
        std::io::BufWriter::new(std::fs::File::create(&latent_path).map_err(CoreError::from)?);
    for (u, r) in latent.user_activity.iter().enumerate() {
        writeln!(w, "user_activity\t{u}\t{r}").map_err(CoreError::from)?;
    }
    for u in 0..latent.c_u {
        for j in 0..latent.k {
            writeln!(
                w,
                "user_factor\t{u}\t{j}\t{}",
                latent.user_factors[u * latent.k + j]
            )
            .map_err(CoreError::from)?;
        }
    }
    for (i, p) in latent.item_popularity.iter().enumerate() {
        writeln!(w, "item_popularity\t{i}\t{p}").map_err(CoreError::from)?;
    }
    for i in 0..latent.c_i {
        for j in 0..latent.k {
            writeln!(
                w,
                "item_factor\t{i}\t{j}\t{}",
                latent.item_factors[i * latent.k + j]
            )
            .map_err(CoreError::from)?;
        }
    }
    w.flush().map_err(CoreError::from)?;
    println!(
        "simulated {} x {}: {} entries, realized sparsity {:.6}",
        args.rows,
        args.cols,
        data.len(),
        data.sparsity()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> CliResult<()> {
    check_out_dir(&args.out)?;
    let (hyper, state) = load_model(&args.model)?;
    let dicts = match &args.data {
        Some(path) => {
            let data = hcpf_core::SparseDataset::load_cache(path)?;
            let users: std::collections::HashMap<String, usize> = data
                .user_ids()
                .iter()
                .enumerate()
                .map(|(at, id)| (id.clone(), at))
                .collect();
            let items: std::collections::HashMap<String, usize> = data
                .item_ids()
                .iter()
                .enumerate()
                .map(|(at, id)| (id.clone(), at))
                .collect();
            Some((users, items))
        }
        None => None,
    };
    let pairs_text = std::fs::read_to_string(&args.pairs).map_err(CoreError::from)?;
    let mut rows = Vec::new();
    for (idx, line) in pairs_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(user), Some(item)) = (fields.next(), fields.next()) else {
            return Err(CoreError::Parse {
                path: args.pairs.display().to_string(),
                line: idx + 1,
                msg: "expected user<TAB>item".into(),
            }
            .into());
        };
        let (u, i) = match &dicts {
            Some((users, items)) => {
                let u = *users.get(user).ok_or_else(|| {
                    CliError::config(format!("unknown user ID {user:?} on line {}", idx + 1))
                })?;
                let i = *items.get(item).ok_or_else(|| {
                    CliError::config(format!("unknown item ID {item:?} on line {}", idx + 1))
                })?;
                (u, i)
            }
            None => {
                let u: usize = user.trim().parse().map_err(|_| {
                    CliError::config(format!("bad user index {user:?} on line {}", idx + 1))
                })?;
                let i: usize = item.trim().parse().map_err(|_| {
                    CliError::config(format!("bad item index {item:?} on line {}", idx + 1))
                })?;
                (u, i)
            }
        };
        let rate = state.expected_rate(u, i)?;
        rows.push((user.to_string(), item.to_string(), rate));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out).map_err(CoreError::from)?);
    writeln!(w, "user\titem\trate\tprob_nonmissing\ttruncated_mean").map_err(CoreError::from)?;
    for (user, item, rate) in rows {
        writeln!(
            w,
            "{user}\t{item}\t{rate}\t{}\t{}",
            1.0 - prob_zero(rate),
            truncated_mean_at(&hyper.element, rate)
        )
        .map_err(CoreError::from)?;
    }
    w.flush().map_err(CoreError::from)?;
    Ok(())
}

fn cmd_density_grid(args: DensityGridArgs, file: &FileConfig) -> CliResult<()> {
    let family = match args.family {
        Some(f) => f,
        None => match &file.family {
            Some(name) => FamilyArg::parse(name)?,
            None => return Err(CliError::config("missing --family (or config `family`)")),
        },
    };
    if !(args.rate_min > 0.0 && args.rate_max > args.rate_min) {
        return Err(CliError::config("need 0 < rate-min < rate-max"));
    }
    if args.rate_steps < 2 || args.y_steps < 2 {
        return Err(CliError::config("need at least 2 rate and response steps"));
    }
    let element = match family.to_edm() {
        None => Element::DegenerateOne,
        Some(edm_family) => {
            let theta = args
                .theta
                .ok_or_else(|| CliError::config("density-grid needs --theta for EDM families"))?;
            let kappa = args
                .kappa
                .ok_or_else(|| CliError::config("density-grid needs --kappa for EDM families"))?;
            Element::Edm(ElementSpec::new(edm_family, theta, kappa)?)
        }
    };
    check_out_dir(&args.out)?;
    let lr_min = args.rate_min.ln();
    let lr_max = args.rate_max.ln();
    let rates: Vec<f64> = (0..args.rate_steps)
        .map(|j| (lr_min + (lr_max - lr_min) * j as f64 / (args.rate_steps - 1) as f64).exp())
        .collect();
    let responses: Vec<f64> = if element.is_discrete() {
        let lo = args.y_min.ceil().max(0.0) as u64;
        let hi = args.y_max.floor().max(args.y_min.ceil().max(0.0)) as u64;
        (lo..=hi).map(|v| v as f64).collect()
    } else {
        (0..args.y_steps)
            .map(|j| args.y_min + (args.y_max - args.y_min) * j as f64 / (args.y_steps - 1) as f64)
            .collect()
    };
    let rows = density_grid(&element, &rates, &responses)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out).map_err(CoreError::from)?);
    for (rate, y, ld) in rows {
        writeln!(w, "{rate}\t{y}\t{ld}").map_err(CoreError::from)?;
    }
    w.flush().map_err(CoreError::from)?;
    Ok(())
}
