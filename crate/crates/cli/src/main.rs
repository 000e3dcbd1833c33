//! `nifty`: pretrain, fit, post-process, generate from and evaluate the
//! nonparametric identifiable factor model.
//!
//! Exit codes: 0 on success, 1 for numerical failures, 2 for usage or input errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nifty::metrics::{sliced_wasserstein_report, DEFAULT_PROJECTIONS};
use nifty::model::{DataMatrix, FactorAssignment, Hyperparameters};
use nifty::postprocess::{match_align_with, summarize, OrthogonalizationMethod};
use nifty::pretrain::{external_anchor, pretrain_with_report, AnchorSet, DiffusionConfig};
use nifty::rundir::{
    read_anchor, read_data, read_matrix, read_run, write_anchor, write_json, write_matrix,
    write_run,
};
use nifty::sampler::{run_chain_stream, PosteriorChain};
use nifty::simulate::{
    gen_hetero_clusters, gen_setting1, gen_setting2, gen_setting3, gen_swiss_roll,
    posterior_predictive, shift_columns, CurveLaw, DEFAULT_CLUSTER_SPACING,
};
use nifty::NiftyError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "nifty",
    version,
    about = "Identifiable nonparametric Bayesian factor analysis"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and a `.truth.json` sidecar.
    Simulate(SimulateArgs),
    /// Diffusion-map pretraining: anchor coordinates and their residual variances.
    Pretrain(PretrainArgs),
    /// Run the sampler and persist the chains to a run directory.
    Fit(FitArgs),
    /// Align the retained samples and write posterior summaries.
    Postprocess(PostprocessArgs),
    /// Draw posterior-predictive rows from a run directory.
    Generate(GenerateArgs),
    /// Sliced Wasserstein distance between two data files.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SimSetting {
    /// Independent Beta and Gamma coordinates.
    Setting1,
    /// Gaussian linear two-factor model in 20 dimensions.
    Setting2,
    /// Curve `(z, z^2)` with two latent coordinates.
    Setting3,
    SwissRoll,
    Clusters,
}

#[derive(Clone, Copy, ValueEnum)]
enum Law {
    Uniform,
    Arcsine,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    setting: SimSetting,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Latent law of the curve setting.
    #[arg(long, value_enum, default_value = "uniform")]
    law: Law,
    /// Distance between neighbouring cluster means.
    #[arg(long, default_value_t = DEFAULT_CLUSTER_SPACING)]
    spacing: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DiffusionArgs {
    /// Diffusion-map bandwidth; median pairwise distance when unset.
    #[arg(long)]
    epsilon_dm: Option<f64>,
    /// Number of diffusion coordinates; `min(4, N - 1)` when unset.
    #[arg(long)]
    q: Option<usize>,
    /// Local-PCA bandwidth; chosen from the coordinates when unset.
    #[arg(long)]
    epsilon_local: Option<f64>,
    /// Eigenvalue-ratio threshold of the dimension rule.
    #[arg(long, default_value_t = DiffusionConfig::default().delta)]
    delta: f64,
    /// Added to the estimated dimension.
    #[arg(long, default_value_t = 0)]
    dimension_offset: usize,
    /// Rotate the anchor columns towards maximal non-Gaussianity (helps when
    /// diffusion eigenvalues are tied).
    #[arg(long)]
    unmix_anchors: bool,
}

impl DiffusionArgs {
    fn config(&self) -> DiffusionConfig {
        DiffusionConfig {
            epsilon_dm: self.epsilon_dm,
            q: self.q,
            epsilon_local: self.epsilon_local,
            delta: self.delta,
            dimension_offset: self.dimension_offset,
            unmix_anchors: self.unmix_anchors,
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory receiving `anchor.csv`, `anchor.json` and `pretrain.json`.
    #[arg(long)]
    out: PathBuf,
    /// Use these coordinates as anchors instead of a diffusion embedding.
    #[arg(long)]
    anchors: Option<PathBuf>,
    #[arg(long, default_value_t = Hyperparameters::default().pieces)]
    pieces: usize,
    #[command(flatten)]
    diffusion: DiffusionArgs,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Directory written by `pretrain`; pretraining runs inline when absent.
    #[arg(long)]
    anchor_dir: Option<PathBuf>,
    /// Number of factors H; defaults to the number of anchors K.
    #[arg(long)]
    factors: Option<usize>,
    /// Comma-separated 1-based location of every factor; round-robin by default.
    #[arg(long, value_delimiter = ',')]
    k_of_h: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    diffusion: DiffusionArgs,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, default_value_t = Hyperparameters::default().nu)]
    nu: f64,
    #[arg(long, default_value_t = Hyperparameters::default().sigma_a_sq)]
    sigma_a_sq: f64,
    #[arg(long, default_value_t = Hyperparameters::default().a_sigma)]
    a_sigma: f64,
    #[arg(long, default_value_t = Hyperparameters::default().b_sigma)]
    b_sigma: f64,
    #[arg(long, default_value_t = Hyperparameters::default().pieces)]
    pieces: usize,
    #[arg(long, default_value_t = Hyperparameters::default().mala_step)]
    mala_step: f64,
    #[arg(long, default_value_t = Hyperparameters::default().iterations)]
    iterations: usize,
    #[arg(long, default_value_t = Hyperparameters::default().burn_in)]
    burn_in: usize,
    #[arg(long, default_value_t = Hyperparameters::default().thin)]
    thin: usize,
    #[arg(long, default_value_t = Hyperparameters::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = Hyperparameters::default().sigma_fix_iterations)]
    sigma_fix_iterations: usize,
}

impl HyperArgs {
    fn resolve(&self) -> Hyperparameters {
        Hyperparameters {
            nu: self.nu,
            sigma_a_sq: self.sigma_a_sq,
            a_sigma: self.a_sigma,
            b_sigma: self.b_sigma,
            pieces: self.pieces,
            mala_step: self.mala_step,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            sigma_fix_iterations: self.sigma_fix_iterations,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    PrincipalAxes,
    Varimax,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "principal-axes")]
    method: Method,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    first: PathBuf,
    second: PathBuf,
    /// A second test set; its distance to SECOND is reported as the floor.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PROJECTIONS)]
    projections: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Fit(a) => fit(a),
        Command::Postprocess(a) => postprocess(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 1 } else { 2 })
        }
    }
}

type Result<T> = std::result::Result<T, NiftyError>;

fn config_err(msg: impl Into<String>) -> NiftyError {
    NiftyError::Config(msg.into())
}

fn column_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|c| format!("{prefix}{c}")).collect()
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (data, truth) = match a.setting {
        SimSetting::Setting1 => (gen_setting1(a.n, a.seed)?, json!({})),
        SimSetting::Setting2 => {
            let s = gen_setting2(a.n, a.seed)?;
            let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
                m.row_iter().map(|r| r.iter().copied().collect()).collect()
            };
            (
                s.data,
                json!({ "loadings": rows(&s.loadings), "factors": rows(&s.factors) }),
            )
        }
        SimSetting::Setting3 => {
            let law = match a.law {
                Law::Uniform => CurveLaw::Uniform,
                Law::Arcsine => CurveLaw::Arcsine,
            };
            (gen_setting3(a.n, a.seed, law)?, json!({}))
        }
        SimSetting::SwissRoll => {
            let s = gen_swiss_roll(a.n, a.seed)?;
            (s.data, json!({ "u": s.u.as_slice(), "v": s.v.as_slice() }))
        }
        SimSetting::Clusters => {
            let s = gen_hetero_clusters(a.n, a.seed, a.spacing)?;
            (s.data, json!({ "labels": s.labels }))
        }
    };
    write_matrix(&a.out, data.values(), Some(&column_header("x", data.p())))?;
    let mut sidecar = json!({ "n": a.n, "seed": a.seed });
    if let (Value::Object(side), Value::Object(t)) = (&mut sidecar, truth) {
        side.extend(t);
    }
    write_json(&a.out.with_extension("truth.json"), &sidecar)?;
    println!(
        "wrote {} rows x {} columns to {}",
        data.n(),
        data.p(),
        a.out.display()
    );
    Ok(())
}

/// Diffusion or external anchors for `data`, with a JSON description of how they were made.
fn make_anchor(
    data: &DataMatrix<f64>,
    external: Option<&Path>,
    cfg: &DiffusionConfig,
    pieces: usize,
) -> Result<(AnchorSet<f64>, Value)> {
    if let Some(path) = external {
        let (coords, _) = read_matrix::<f64>(path)?;
        if coords.nrows() != data.n() {
            return Err(NiftyError::Shape(format!(
                "{} has {} rows, data has {}",
                path.display(),
                coords.nrows(),
                data.n()
            )));
        }
        let anchor = external_anchor(coords, pieces)?;
        return Ok((anchor, json!({ "external": path.display().to_string() })));
    }
    let report = pretrain_with_report(data, cfg, pieces)?;
    println!("selected K = {}", report.anchor.k());
    println!("{:>4} {:>14} {:>10}", "k", "eigenvalue", "ratio");
    for (k, value) in report.dimension.profile.iter().enumerate() {
        let ratio = report
            .dimension
            .ratios
            .get(k)
            .map_or(String::new(), |r| format!("{r:.4}"));
        println!("{:>4} {:>14.6e} {:>10}", k + 1, value, ratio);
    }
    let details = json!({
        "config": cfg,
        "epsilon_dm": report.epsilon_dm,
        "epsilon_local": report.epsilon_local,
        "q": report.q,
        "dimension": report.dimension,
    });
    Ok((report.anchor, details))
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let data = read_data::<f64>(&a.input)?;
    let cfg = a.diffusion.config();
    let (anchor, details) = make_anchor(&data, a.anchors.as_deref(), &cfg, a.pieces)?;
    write_anchor(&a.out, "anchor", &anchor, details.clone())?;
    write_json(&a.out.join("pretrain.json"), &details)?;
    Ok(())
}

fn assignment_for(args: &FitArgs, k: usize) -> Result<FactorAssignment> {
    match &args.k_of_h {
        Some(list) => {
            if let Some(h) = args.factors {
                if h != list.len() {
                    return Err(config_err(format!(
                        "--factors {h} but --k-of-h lists {} factors",
                        list.len()
                    )));
                }
            }
            if list.contains(&0) {
                return Err(config_err("--k-of-h locations are 1-based"));
            }
            FactorAssignment::new(list.iter().map(|l| l - 1).collect(), k)
        }
        None => FactorAssignment::round_robin(args.factors.unwrap_or(k), k),
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let raw = read_data::<f64>(&a.input)?;
    let hp = a.hyper.resolve();
    hp.validate()?;
    if a.chains == 0 {
        return Err(config_err("--chains must be at least 1"));
    }
    let (anchor, anchor_details) = match &a.anchor_dir {
        Some(dir) => (
            read_anchor::<f64>(dir, "anchor")?,
            json!({ "anchor_dir": dir.display().to_string() }),
        ),
        None => make_anchor(&raw, None, &a.diffusion.config(), hp.pieces)?,
    };
    if anchor.n() != raw.n() {
        return Err(NiftyError::Shape(format!(
            "anchors have {} rows, data has {}",
            anchor.n(),
            raw.n()
        )));
    }
    let assignment = assignment_for(&a, anchor.k())?;
    // the model has no intercept; means are stored and added back by `generate`
    let (centered, means) = raw.centered();
    let data = centered.prepend_columns(&anchor.coordinates)?;

    info!(
        "sampling {} chain(s) of {} iterations",
        a.chains, hp.iterations
    );
    let chains: Vec<PosteriorChain<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..a.chains)
            .map(|c| {
                let (data, anchor, hp, assignment) = (&data, &anchor, &hp, &assignment);
                scope.spawn(move || run_chain_stream(data, anchor, hp, assignment, c as u64))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect::<Result<_>>()
    })?;

    let config = json!({
        "input": a.input.display().to_string(),
        "hyperparameters": hp,
        "anchor": anchor_details,
        "k_of_h": assignment.as_slice().iter().map(|k| k + 1).collect::<Vec<_>>(),
        "chains": a.chains,
        "feature_names": raw.feature_names(),
        "column_means": means.as_slice(),
    });
    write_run(&a.out, &data, &chains, &config)?;
    for (c, chain) in chains.iter().enumerate() {
        println!(
            "chain {c}: {} samples, MALA acceptance {:.3}, final step {:.3e}",
            chain.samples.len(),
            chain.diagnostics.mala_acceptance_rate,
            chain.diagnostics.final_step
        );
    }
    println!("run directory: {}", a.out.display());
    Ok(())
}

/// All chains of a run pooled into one.
fn pooled_chain(run: &Path) -> Result<(PosteriorChain<f64>, Value)> {
    let dir = read_run::<f64>(run)?;
    let mut chains = dir.chains.into_iter();
    let mut pooled = chains.next().ok_or(NiftyError::EmptyChain)?;
    for c in chains {
        pooled.samples.extend(c.samples);
        pooled
            .diagnostics
            .log_posterior_trace
            .extend(c.diagnostics.log_posterior_trace);
    }
    Ok((pooled, dir.config))
}

fn postprocess(a: PostprocessArgs) -> Result<()> {
    let (chain, _) = pooled_chain(&a.run)?;
    let method = match a.method {
        Method::PrincipalAxes => OrthogonalizationMethod::PrincipalAxes,
        Method::Varimax => OrthogonalizationMethod::Varimax,
    };
    let aligned = match_align_with(&chain, method)?;
    let summary = summarize(&aligned)?;
    let out = a.run.join("summary");
    let h = summary.loadings.mean.ncols();
    let factors = column_header("factor_", h);
    for (name, m) in [
        ("loadings_mean", &summary.loadings.mean),
        ("loadings_lower", &summary.loadings.lower),
        ("loadings_upper", &summary.loadings.upper),
    ] {
        write_matrix(&out.join(format!("{name}.csv")), m, Some(&factors))?;
    }
    let variances =
        nalgebra::DMatrix::from_fn(summary.residual_variances.mean.nrows(), 3, |j, c| match c {
            0 => summary.residual_variances.mean[(j, 0)],
            1 => summary.residual_variances.lower[(j, 0)],
            _ => summary.residual_variances.upper[(j, 0)],
        });
    let interval_header = ["mean", "lower", "upper"].map(String::from);
    write_matrix(
        &out.join("residual_variances.csv"),
        &variances,
        Some(&interval_header),
    )?;
    let grid_header: Vec<String> = summary.grid.iter().map(|u| format!("u={u:.2}")).collect();
    for (name, m) in [
        ("splines_mean", &summary.splines.mean),
        ("splines_lower", &summary.splines.lower),
        ("splines_upper", &summary.splines.upper),
    ] {
        write_matrix(&out.join(format!("{name}.csv")), m, Some(&grid_header))?;
    }
    write_json(&out.join("alignment.json"), &aligned.report)?;
    println!(
        "aligned {} samples; max |Lambda g(u) change| over the grid {:.3e}; greedy ties {}",
        aligned.samples.len(),
        aligned.report.max_mean_change,
        aligned.report.ties
    );
    println!("summaries: {}", out.display());
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let (chain, config) = pooled_chain(&a.run)?;
    let means: Vec<f64> = serde_json::from_value(config["column_means"].clone()).map_err(|e| {
        config_err(format!(
            "{}: column_means: {e}",
            a.run.join("config.json").display()
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut draws = posterior_predictive(&chain, a.n, &mut rng)?;
    shift_columns(&mut draws, &nalgebra::DVector::from_vec(means))?;
    let names: Option<Vec<String>> =
        serde_json::from_value(config["feature_names"].clone()).unwrap_or(None);
    let header = names.unwrap_or_else(|| column_header("x", draws.ncols()));
    write_matrix(&a.out, &draws, Some(&header))?;
    println!(
        "wrote {} rows x {} columns to {}",
        draws.nrows(),
        draws.ncols(),
        a.out.display()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (x, _) = read_matrix::<f64>(&a.first)?;
    let (y, _) = read_matrix::<f64>(&a.second)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let report = sliced_wasserstein_report(&x, &y, a.projections, &mut rng)?;
    println!("sliced_wasserstein {:.6}", report.distance);
    println!("std_error {:.6}", report.std_error);
    println!("projections {}", report.projections);
    if let Some(reference) = &a.reference {
        let (z, _) = read_matrix::<f64>(reference)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let floor = sliced_wasserstein_report(&y, &z, a.projections, &mut rng)?;
        println!("floor {:.6}", floor.distance);
        println!("floor_std_error {:.6}", floor.std_error);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn explicit_assignment_is_one_based() {
        let args = FitArgs::try_parse_from_fit(&["--k-of-h", "1,2,1"]);
        let a = assignment_for(&args, 2).unwrap();
        assert_eq!(a.as_slice(), &[0, 1, 0]);
        let args = FitArgs::try_parse_from_fit(&["--k-of-h", "0,1"]);
        assert!(assignment_for(&args, 2).is_err());
        let args = FitArgs::try_parse_from_fit(&["--factors", "4"]);
        assert_eq!(assignment_for(&args, 2).unwrap().as_slice(), &[0, 1, 0, 1]);
    }

    impl FitArgs {
        fn try_parse_from_fit(extra: &[&str]) -> FitArgs {
            let mut argv = vec!["nifty", "fit", "--input", "x.csv", "--out", "run"];
            argv.extend_from_slice(extra);
            match Cli::try_parse_from(argv).unwrap().command {
                Command::Fit(a) => a,
                _ => unreachable!(),
            }
        }
    }
}
