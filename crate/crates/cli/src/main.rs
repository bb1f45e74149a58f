use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fusedfir::bounds::bounds_report;
use fusedfir::criterion::FusionVariant;
use fusedfir::data::{
    build_regressor, generate_synthetic, load_dataset, load_manifest, write_manifest,
    ManifestEntry, ModelStructure, RegressionProblem, Role, SyntheticScenario,
};
use fusedfir::estimation::ls_fit;
use fusedfir::fmt::to_json_string;
use fusedfir::pipeline::{
    cross_evaluate, fit_matrix_csv, parse_thetas_csv, run_pipeline, thetas_csv, ClusterCount,
    PipelineConfig, ScoreKind,
};
use fusedfir::Error;

#[derive(Parser)]
#[command(name = "fusedfir", version, about = "Joint FIR estimation across operating conditions")]
struct Cli {
    /// Worker threads for parallel regions (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets, a manifest and a ground-truth sidecar.
    Synth {
        /// Scenario config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Penalty bounds of the estimation datasets.
    Bounds {
        #[command(flatten)]
        data: DataArgs,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-condition least squares on the estimation datasets.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Parameter table (CSV); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: bounds, grid search, joint estimation, clustering, refits, evaluation.
    Run(RunArgs),
    /// FIT of stored parameter vectors on the validation and evaluation datasets.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Parameter table as written by `fit` or `run`.
        #[arg(long)]
        thetas: PathBuf,
        /// FIT matrix (CSV); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// FIR taps per channel.
    #[arg(long)]
    taps: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of clusters.
    #[arg(long, default_value_t = 2, conflicts_with = "auto_k")]
    k: usize,
    /// Choose the cluster count by silhouette.
    #[arg(long)]
    auto_k: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Score grid points by the full criterion on validation data.
    #[arg(long)]
    literal_criterion: bool,
    #[arg(long, value_enum, default_value_t = Variant::L2)]
    fusion_variant: Variant,
    /// Also write the joint solver's iteration trace.
    #[arg(long)]
    trace: bool,
    /// Solver iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    L2,
    L2Squared,
}

impl From<Variant> for FusionVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::L2 => FusionVariant::L2,
            Variant::L2Squared => FusionVariant::L2Squared,
        }
    }
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = error
            .chain()
            .find_map(|e| e.downcast_ref::<Error>())
            .map_or(2, |e| match e.root() {
                Error::Precondition(_) => 3,
                Error::Diverged { .. } | Error::NotConverged(_) => 4,
                _ => 2,
            });
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth { config, out } => synth(&config, &out),
        Command::Bounds { data, out } => bounds(&data, out.as_deref()),
        Command::Fit { data, out } => fit(&data, out.as_deref()),
        Command::Run(args) => run(&args),
        Command::Eval { data, thetas, out } => eval(&data, &thetas, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::from)
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), Failure> {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn synth(config: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config)
        .with_context(|| format!("reading scenario {}", config.display()))?;
    let scenario: SyntheticScenario = serde_json::from_str(&text)
        .with_context(|| format!("parsing scenario {}", config.display()))?;
    let datasets = generate_synthetic(&scenario)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut entries = Vec::with_capacity(datasets.len());
    for ds in &datasets {
        let file = format!("{}.csv", ds.name());
        ds.write_csv(&out.join(&file))?;
        let role = if ds.name().ends_with("-1") {
            Role::Estimation
        } else {
            Role::Validation
        };
        entries.push(ManifestEntry {
            name: ds.name().to_string(),
            file: PathBuf::from(file),
            role,
            channels: ds.channel_names().to_vec(),
            output: ds.output_name().to_string(),
        });
    }
    write_manifest(&out.join("manifest.json"), &entries)?;

    let truth = json!({
        "noiseless": scenario.noise_sigma == 0.0,
        "noise_sigma": scenario.noise_sigma,
        "assignment": scenario.assignment,
        "group_truths": scenario.group_truths,
        "irrelevant_channels": scenario.irrelevant_channels,
    });
    write_file(&out.join("truth.json"), &to_json_string(&truth)?)?;
    println!(
        "synth: wrote {} datasets for {} conditions to {}",
        datasets.len(),
        scenario.assignment.len(),
        out.display()
    );
    Ok(())
}

fn structure_for(entries: &[ManifestEntry], taps: usize) -> Result<ModelStructure, Failure> {
    let channels = entries
        .first()
        .map(|e| e.channels.len())
        .ok_or_else(|| Error::InvalidInput("manifest lists no datasets".into()))?;
    Ok(ModelStructure::new(taps, channels)?)
}

/// Regression problems for the datasets with one of `roles`, in condition order.
fn problems(data: &DataArgs, roles: &[Role]) -> Result<Vec<RegressionProblem>, Failure> {
    let entries = load_manifest(&data.manifest)?;
    let structure = structure_for(&entries, data.taps)?;
    let mut selected: Vec<&ManifestEntry> =
        entries.iter().filter(|e| roles.contains(&e.role)).collect();
    selected.sort_by(|a, b| a.name.cmp(&b.name));
    selected
        .into_iter()
        .map(|e| Ok(build_regressor(&load_dataset(&e.file, e)?, structure)?))
        .collect()
}

fn bounds(data: &DataArgs, out: Option<&Path>) -> Result<(), Failure> {
    let problems = problems(data, &[Role::Estimation])?;
    let report = bounds_report(&problems)?;
    emit(out, &to_json_string(&report)?)
}

fn fit(data: &DataArgs, out: Option<&Path>) -> Result<(), Failure> {
    let problems = problems(data, &[Role::Estimation])?;
    let structure = problems
        .first()
        .map(|p| p.structure)
        .ok_or_else(|| Error::InvalidInput("manifest has no estimation datasets".into()))?;
    let fits = problems.iter().map(ls_fit).collect::<Result<Vec<_>, _>>()?;
    let table = thetas_csv(
        structure,
        problems
            .iter()
            .zip(&fits)
            .map(|(p, f)| (p.condition_name.as_str(), f.theta.as_slice())),
    );
    emit(out, &table)
}

fn eval(data: &DataArgs, thetas: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let problems = problems(data, &[Role::Validation, Role::Evaluation])?;
    let structure = problems
        .first()
        .map(|p| p.structure)
        .ok_or_else(|| Error::InvalidInput("manifest has no validation or evaluation datasets".into()))?;
    let text = std::fs::read_to_string(thetas)
        .with_context(|| format!("reading {}", thetas.display()))?;
    let models = parse_thetas_csv(&text, structure)?;
    let fits = cross_evaluate(&models, &problems)?;
    emit(out, &fit_matrix_csv(&fits))
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let entries = load_manifest(&args.data.manifest)?;
    let structure = structure_for(&entries, args.data.taps)?;
    let mut cfg = PipelineConfig::new(structure, args.k);
    if args.auto_k {
        cfg.clusters = ClusterCount::Auto;
    }
    cfg.seed = args.seed;
    cfg.solver.seed = args.seed;
    cfg.solver.trace = args.trace;
    if let Some(m) = args.max_iter {
        cfg.solver.max_iter = m;
    }
    if args.literal_criterion {
        cfg.score = ScoreKind::LiteralCriterion;
    }
    cfg.fusion_variant = args.fusion_variant.into();

    let output = run_pipeline(&entries, &cfg)?;
    let report = &output.report;
    report.write_files(&args.out)?;
    if args.trace {
        write_file(&args.out.join("trace.csv"), &output.joint.trace_csv())?;
    }

    match &report.bounds {
        Some(b) => println!(
            "bounds: lambda1_max={} lambda1_sufficient={} lambda2_max={}",
            b.lambda1_max, b.lambda1_sufficient, report.lambda2_max
        ),
        None => println!("bounds: fusion undefined, lambda2_max={}", report.lambda2_max),
    }
    println!(
        "grid: {} points, selected lambda1={} lambda2={}",
        report.grid.table.len(),
        report.selected.lambda1,
        report.selected.lambda2
    );
    println!(
        "joint: objective={} iterations={} converged={}",
        report.solve.objective.total, report.solve.iterations, report.solve.converged
    );
    for c in &report.categories {
        println!("cluster {}: {}", c.category, c.members.join(" "));
    }
    println!("report: {}", args.out.join("report.json").display());
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    if !report.solve.converged {
        return Err(Failure {
            code: 4,
            error: anyhow::anyhow!("joint estimation did not converge"),
        });
    }
    Ok(())
}
