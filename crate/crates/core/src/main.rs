//! Command-line driver. Every stage reads and writes files under a single
//! `--out` directory; see `--help` of each subcommand for the file names.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or validation
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use raicarn::config::PipelineConfig;
use raicarn::grouping::{self, GroupPlan};
use raicarn::ica::{self, IcaConfig, Nonlinearity};
use raicarn::io::{self, RunManifest};
use raicarn::mixture::{self, Label, MixtureConfig, MixtureError, MixtureFit};
use raicarn::null::{run_raicar_n, NullConfig};
use raicarn::synth::{self, PlantSpec, SourceFamily};

#[derive(Parser)]
#[command(name = "raicarn", version, about = "Reproducibility analysis of component decompositions across runs")]
struct Cli {
    /// Cap on worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML pipeline configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate run collections with planted reproducible components.
    /// Writes manifest.json, run_001.rnm ... and truth.json.
    Simulate(SimulateArgs),
    /// Decompose one dataset, or several with --group. Writes
    /// components.rnm (z-scored unless --raw), mixing.rnm, mean.rnm and
    /// model.json.
    Ica(IcaArgs),
    /// Match components across runs and assign permutation p-values.
    /// Writes report.json and report.null.rnm.
    Raicarn(RaicarnArgs),
    /// Choose a group size and sample subject groups. Writes plan.json.
    PlanGroups(PlanArgs),
    /// Fit the t/Gamma mixture to every significant component. Writes
    /// mixture.json and component_NNN_{tstat,labels,hist}.rnm.
    Mixture(MixtureArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of runs.
    #[arg(long = "K", default_value_t = 20)]
    runs: usize,
    /// Components per run.
    #[arg(long = "nc", default_value_t = 8)]
    components: usize,
    /// Planted reproducible components.
    #[arg(long, default_value_t = 3)]
    planted: usize,
    /// Correlation of each planted copy with its base map.
    #[arg(long, default_value_t = 0.9)]
    overlap: f64,
    /// Locations per map.
    #[arg(long = "n", default_value_t = 2000)]
    locations: usize,
    /// gaussian, laplacian, bernoulli_gaussian or uniform.
    #[arg(long, default_value = "gaussian")]
    family: SourceFamily,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IcaArgs {
    /// Input matrix (observations x locations).
    input: Option<PathBuf>,
    /// Group decomposition of several input matrices.
    #[arg(long, num_args = 1.., conflicts_with = "input")]
    group: Vec<PathBuf>,
    /// Model order.
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// tanh or cubic.
    #[arg(long)]
    nonlinearity: Option<Nonlinearity>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Reduce every group dataset to this many principal components first.
    #[arg(long, requires = "group")]
    subject_dim: Option<usize>,
    /// Write unscaled source maps instead of z-scores.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RaicarnArgs {
    /// Run manifest (JSON).
    manifest: PathBuf,
    /// Null replicates.
    #[arg(long = "R")]
    replicates: Option<usize>,
    #[arg(long)]
    pcrit: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    /// Number of subjects.
    #[arg(long = "N")]
    subjects: Option<usize>,
    /// Largest admissible pair co-occurrence probability.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of groups.
    #[arg(long = "K")]
    groups: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MixtureArgs {
    /// Report written by `raicarn`.
    #[arg(long)]
    report: PathBuf,
    /// Manifest of the runs the report was computed from.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Histogram bins.
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn runtime(msg: impl std::fmt::Display) -> Failure {
    Failure::Runtime(msg.to_string())
}

fn need<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| usage(format!("missing required {flag}")))
}

fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(runtime)?;
    }
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| match e {
            raicarn::config::ConfigError::Io { .. } => runtime(e),
            _ => usage(e),
        })?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => simulate(a, &config),
        Command::Ica(a) => ica_cmd(a, &config),
        Command::Raicarn(a) => raicarn_cmd(a, &config),
        Command::PlanGroups(a) => plan_cmd(a, &config),
        Command::Mixture(a) => mixture_cmd(a, &config),
    }
}

#[derive(Serialize, Deserialize)]
struct TruthDocument {
    spec: PlantSpec,
    /// For each planted map, its one-based component number in every run.
    planted: Vec<Vec<usize>>,
}

fn simulate(a: SimulateArgs, config: &PipelineConfig) -> CliResult<()> {
    let spec = PlantSpec {
        locations: a.locations,
        components: a.components,
        runs: a.runs,
        planted: a.planted,
        overlap: a.overlap,
        family: a.family,
        seed: need(a.seed.or(config.seed), "--seed")?,
    };
    spec.validate().map_err(usage)?;
    let (rc, truth) = synth::planted_runset(&spec).map_err(usage)?;
    create_out(&a.out)?;
    let mut names = Vec::with_capacity(rc.n_runs());
    for (r, m) in rc.runs().iter().enumerate() {
        let name = PathBuf::from(format!("run_{:03}.rnm", r + 1));
        io::write_matrix(m, a.out.join(&name)).map_err(runtime)?;
        names.push(name);
    }
    RunManifest { runs: names, mask: None }
        .write(a.out.join("manifest.json"))
        .map_err(runtime)?;
    let planted = (0..truth.planted_count())
        .map(|b| truth.planted_positions(b).into_iter().map(|c| c + 1).collect())
        .collect();
    io::write_json(&TruthDocument { spec, planted }, a.out.join("truth.json")).map_err(runtime)
}

#[derive(Serialize)]
struct ModelDocument {
    inputs: Vec<PathBuf>,
    order: usize,
    subject_dim: Option<usize>,
    nonlinearity: Nonlinearity,
    seed: u64,
    noise_variance: f64,
    converged: bool,
    iterations: usize,
    z_scored: bool,
}

fn ica_cmd(a: IcaArgs, config: &PipelineConfig) -> CliResult<()> {
    let q = need(a.q.or(config.ica.q), "--q")?;
    let seed = need(a.seed.or(config.seed), "--seed")?;
    let nonlinearity = a.nonlinearity.unwrap_or(config.ica.nonlinearity);
    let cfg = IcaConfig::new(q, seed)
        .nonlinearity(nonlinearity)
        .max_iters(a.max_iters.unwrap_or(config.ica.max_iters))
        .tol(a.tol.unwrap_or(config.ica.tol));
    let inputs: Vec<PathBuf> = match (&a.input, a.group.is_empty()) {
        (Some(p), true) => vec![p.clone()],
        (None, false) => a.group.clone(),
        _ => return Err(usage("give one input matrix or --group with several")),
    };
    if q == 0 {
        return Err(usage("--q must be at least 1"));
    }
    if a.subject_dim == Some(0) {
        return Err(usage("--subject-dim must be at least 1"));
    }
    let datasets = inputs
        .iter()
        .map(io::read_matrix)
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let ica_failure = |e: ica::IcaError| match e {
        ica::IcaError::InvalidConfig(_) => usage(e),
        _ => runtime(e),
    };
    let y = ica::stack_group(&datasets, a.subject_dim).map_err(ica_failure)?;
    let model = match a.subject_dim {
        Some(dim) => ica::run_group_ica_reduced(&datasets, dim, &cfg),
        // a plain group fit is a single fit of the stack
        None => ica::run_single_ica(y.view(), &cfg),
    }
    .map_err(ica_failure)?;
    let maps = if a.raw {
        model.sources.clone()
    } else {
        ica::z_scale(&model.sources, &model.residual_sd(y.view())).map_err(runtime)?
    };
    create_out(&a.out)?;
    io::write_matrix(&maps, a.out.join("components.rnm")).map_err(runtime)?;
    io::write_matrix(&model.mixing, a.out.join("mixing.rnm")).map_err(runtime)?;
    let mean = Array2::from_shape_vec((1, model.mean.len()), model.mean.to_vec()).expect("row vector");
    io::write_matrix(&mean, a.out.join("mean.rnm")).map_err(runtime)?;
    let doc = ModelDocument {
        inputs,
        order: q,
        subject_dim: a.subject_dim,
        nonlinearity,
        seed,
        noise_variance: model.noise_variance,
        converged: model.converged,
        iterations: model.iterations,
        z_scored: !a.raw,
    };
    io::write_json(&doc, a.out.join("model.json")).map_err(runtime)
}

fn raicarn_cmd(a: RaicarnArgs, config: &PipelineConfig) -> CliResult<()> {
    let cfg = NullConfig::new(
        a.replicates.unwrap_or(config.null.replicates),
        need(a.seed.or(config.seed), "--seed")?,
        a.pcrit.unwrap_or(config.null.p_crit),
    )
    .map_err(usage)?;
    let rc = io::load_manifest(&a.manifest).map_err(runtime)?;
    let report = run_raicar_n(&rc, &cfg).map_err(runtime)?;
    create_out(&a.out)?;
    io::write_report(&report, a.out.join("report.json")).map_err(runtime)
}

fn plan_cmd(a: PlanArgs, config: &PipelineConfig) -> CliResult<()> {
    let subjects = need(a.subjects.or(config.grouping.subjects), "--N")?;
    let alpha = a.alpha.unwrap_or(config.grouping.alpha_max);
    let groups = a.groups.unwrap_or(config.grouping.groups);
    let seed = need(a.seed.or(config.seed), "--seed")?;
    let plan: GroupPlan = grouping::plan_groups(subjects, alpha, groups, seed)
        .map_err(usage)?
        .ok_or_else(|| {
            usage(format!(
                "no group size in [2, {subjects}] keeps the pair co-occurrence probability at or below {alpha}"
            ))
        })?;
    create_out(&a.out)?;
    io::write_json(&plan, a.out.join("plan.json")).map_err(runtime)
}

#[derive(Serialize)]
struct ComponentMixture {
    rank: usize,
    p_value: f64,
    degenerate_locations: usize,
    positive: usize,
    negative: usize,
    /// Absent when the t map has no spread to fit.
    fit: Option<MixtureFit>,
}

#[derive(Serialize)]
struct MixtureDocument {
    components: Vec<ComponentMixture>,
}

fn mixture_cmd(a: MixtureArgs, config: &PipelineConfig) -> CliResult<()> {
    let cfg = MixtureConfig {
        max_iters: a.max_iters.unwrap_or(config.mixture.max_iters),
        tol: a.tol.unwrap_or(config.mixture.tol),
    };
    cfg.validate().map_err(usage)?;
    if a.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let report = io::read_report(&a.report).map_err(runtime)?;
    let rc = io::load_manifest(&a.manifest).map_err(runtime)?;
    let first = report.matched().first().ok_or_else(|| runtime("report lists no components"))?;
    if first.members().len() != rc.n_runs() || report.matched().len() != rc.n_components() {
        return Err(runtime(format!(
            "report covers {} runs of {} components but the manifest has {} runs of {}",
            first.members().len(),
            report.matched().len(),
            rc.n_runs(),
            rc.n_components()
        )));
    }
    let selected: Vec<usize> = (0..report.matched().len()).filter(|&i| report.significant()[i]).collect();
    let results = selected
        .par_iter()
        .map(|&i| {
            let aligned = report.matched()[i].aligned_maps(&rc);
            let normalized = mixture::normalize_maps(aligned.view()).map_err(runtime)?;
            let tstat = mixture::group_tstat(normalized.view()).map_err(runtime)?;
            let t = tstat.t.to_vec();
            let fit = match mixture::fit_mixture(&t, &cfg) {
                Ok(fit) => Some(fit),
                Err(MixtureError::Degenerate) => None,
                Err(e) => return Err(runtime(format!("component {}: {e}", i + 1))),
            };
            let labels = match &fit {
                Some(fit) => mixture::classify_voxels(fit, &t),
                None => vec![Label::Null; t.len()],
            };
            Ok((i, tstat, labels, fit))
        })
        .collect::<CliResult<Vec<_>>>()?;

    create_out(&a.out)?;
    let mut components = Vec::with_capacity(results.len());
    for (i, tstat, labels, fit) in results {
        let rank = i + 1;
        let n = labels.len();
        let row = |v: Vec<f64>| Array2::from_shape_vec((1, n), v).expect("row vector");
        io::write_matrix(&row(tstat.t.to_vec()), a.out.join(format!("component_{rank:03}_tstat.rnm")))
            .map_err(runtime)?;
        io::write_matrix(
            &row(labels.iter().map(|l| l.code()).collect()),
            a.out.join(format!("component_{rank:03}_labels.rnm")),
        )
        .map_err(runtime)?;
        if let Some(fit) = &fit {
            io::write_matrix(
                &mixture::histogram(fit, &tstat.t.to_vec(), a.bins),
                a.out.join(format!("component_{rank:03}_hist.rnm")),
            )
            .map_err(runtime)?;
        }
        components.push(ComponentMixture {
            rank,
            p_value: report.p_values()[i],
            degenerate_locations: tstat.degenerate_count(),
            positive: labels.iter().filter(|&&l| l == Label::Positive).count(),
            negative: labels.iter().filter(|&&l| l == Label::Negative).count(),
            fit,
        });
    }
    io::write_json(&MixtureDocument { components }, a.out.join("mixture.json")).map_err(runtime)
}
