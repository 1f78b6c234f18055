use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use facar::design::{load_design_csv, DesignInstance};
use facar::eval::{preset, run_experiment, ExperimentConfig, PRESETS};
use facar::factor::{adjust_auto, KRule};
use facar::glm::{score_facar_glm, score_mr_glm, Family, MarginalVariant};
use facar::oracle::{rate_oracle, RateMethod};
use facar::perturbation::{bounds_csv, row_violates, run_sweep, BoundKind, SparseShape, SweepParams};
use facar::scores::{
    rank_facar, score_famr, score_holp, score_lsr_block, score_mr_with, score_rrcs, scores_csv,
    FacarParams, Method, RankingResult,
};
use facar::Error;

#[derive(Parser)]
#[command(name = "facar", version, about = "Factor-adjusted covariate-assisted variable ranking")]
struct Cli {
    /// Worker threads; changes wall time only, never outputs.
    #[arg(long, global = true, env = "FACAR_THREADS")]
    threads: Option<usize>,

    /// Base seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank variables of a linear model from CSV input.
    Rank(RankArgs),
    /// Rank variables of a logistic model from CSV input.
    GlmRank(RankArgs),
    /// Run a Monte Carlo experiment from a config file or preset.
    Simulate(SimulateArgs),
    /// Phase exponents for the blockwise-diagonal design.
    OracleExponents(OracleArgs),
    /// Empirical checks of the eigenvector perturbation bounds.
    CheckBounds(BoundsArgs),
}

#[derive(Args)]
struct RankArgs {
    /// Design matrix, one row per observation.
    #[arg(long)]
    design: PathBuf,
    /// Response, one value per line.
    #[arg(long)]
    response: PathBuf,
    /// Methods to run (comma separated).
    #[arg(long = "method", value_delimiter = ',')]
    methods: Vec<Method>,
    /// threshold, elbow, or fixed:K.
    #[arg(long, default_value = "threshold")]
    k_rule: KRule,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Exclude zero-variance columns instead of failing.
    #[arg(long)]
    drop_degenerate: bool,
    /// Ridge added to XX' for HOLP.
    #[arg(long, default_value_t = 0.0)]
    holp_ridge: f64,
    /// Within-block correlation for the block least-squares baseline.
    #[arg(long)]
    lsr_h: Option<f64>,
    /// Output directory; scores go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present_any = ["preset", "list_presets"])]
    config: Option<PathBuf>,
    /// Built-in config by name.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    list_presets: bool,
    /// Override the number of repetitions.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the retained count for SP and Type II.
    #[arg(long)]
    retain: Option<usize>,
    #[arg(long, required_unless_present = "list_presets")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// A (theta,r,h) triple; repeatable.
    #[arg(long = "triple", value_parser = parse_triple)]
    triples: Vec<(f64, f64, f64)>,
    /// Grid axes; their product is appended to the triples.
    #[arg(long, value_delimiter = ',')]
    theta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    r: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    h: Vec<f64>,
    /// Append the three reference settings (.8,1.5,.4), (.5,2,.8), (.3,2,.2).
    #[arg(long)]
    table1: bool,
    /// Write 17 significant digits instead of the shortest round-trip form.
    #[arg(long)]
    digits17: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value = "lemma2")]
    which: BoundKind,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Dimensions to sweep (default 100 for lemma2, 100,200,400,800 for theorem2).
    #[arg(long, value_delimiter = ',')]
    p_list: Vec<usize>,
    /// Ranks to sweep for theorem2.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    k_list: Vec<usize>,
    /// Common leading eigenvalue.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// ||G0||_inf as a fraction of lambda.
    #[arg(long, default_value_t = 0.3)]
    g0_frac: f64,
    /// Nonzeros per row of G0.
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value = "banded", value_parser = parse_shape)]
    shape: SparseShape,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_triple(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected theta,r,h; got {s:?}"));
    }
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((num(parts[0])?, num(parts[1])?, num(parts[2])?))
}

fn parse_shape(s: &str) -> Result<SparseShape, String> {
    match s {
        "banded" => Ok(SparseShape::Banded),
        "scattered" => Ok(SparseShape::Scattered),
        other => Err(format!("unknown shape {other:?}; expected banded or scattered")),
    }
}

/// Exit code 2 for bad input, 1 for failed runs or assertions.
enum Failure {
    Usage(String),
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(_) | Error::Format { .. } | Error::Io(_) | Error::Cost(_) | Error::DegenerateVariable(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let result = match cli.command {
        Command::Rank(args) => cmd_rank(args, cli.seed, false),
        Command::GlmRank(args) => cmd_rank(args, cli.seed, true),
        Command::Simulate(args) => cmd_simulate(args, cli.seed),
        Command::OracleExponents(args) => cmd_oracle(args),
        Command::CheckBounds(args) => cmd_check_bounds(args, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn write_outputs(out: &Option<PathBuf>, files: &[(&str, String)], stdout_file: &str) -> CliResult {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for (name, body) in files {
                fs::write(dir.join(name), body)?;
            }
        }
        None => {
            if let Some((_, body)) = files.iter().find(|(n, _)| *n == stdout_file) {
                print!("{body}");
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RankResolved<'a> {
    command: &'a str,
    design: String,
    response: String,
    methods: Vec<&'static str>,
    seed: Option<u64>,
    holp_ridge: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lsr_h: Option<f64>,
    facar: FacarParams,
}

fn load(design: &Path, response: &Path) -> Result<DesignInstance, Failure> {
    if !response.is_file() {
        return Err(Failure::Usage(format!("response file {} not found", response.display())));
    }
    if !design.is_file() {
        return Err(Failure::Usage(format!("design file {} not found", design.display())));
    }
    Ok(load_design_csv(design, Some(response))?)
}

fn cmd_rank(args: RankArgs, seed: Option<u64>, glm: bool) -> CliResult {
    let mut methods = args.methods.clone();
    if methods.is_empty() {
        methods.push(if glm { Method::GlmFaCar } else { Method::FaCar });
    }
    if let Some(m) = methods.iter().find(|m| m.is_glm() != glm) {
        let hint = if glm { "rank" } else { "glm-rank" };
        return Err(Failure::Usage(format!("method {m} belongs to `{hint}`")));
    }
    let inst = load(&args.design, &args.response)?;
    let (x, y) = (&inst.x, inst.y.as_ref().expect("response loaded"));
    let params = FacarParams {
        delta: args.delta,
        m: args.m,
        k_rule: args.k_rule,
        drop_degenerate: args.drop_degenerate,
    };
    let mut results: Vec<RankingResult> = Vec::new();
    let mut fa = None;
    for &method in &methods {
        let r = match method {
            Method::FaCar => {
                let (r, adjusted) = rank_facar(x, y, &params)?;
                log::info!("FA step removed K = {} factors", adjusted.k);
                fa = Some(adjusted);
                r
            }
            Method::FaMr => {
                if fa.is_none() {
                    fa = Some(adjust_auto(x, y, params.k_rule)?);
                }
                score_famr(fa.as_ref().expect("set above"))?
            }
            Method::Mr => score_mr_with(x, y, args.drop_degenerate)?,
            Method::Holp => score_holp(x, y, args.holp_ridge)?,
            Method::Rrcs => score_rrcs(x, y)?,
            Method::Lsr => {
                let h = args
                    .lsr_h
                    .ok_or_else(|| Failure::Usage("lsr needs --lsr-h".into()))?;
                score_lsr_block(x, y, h)?
            }
            Method::GlmFaCar => score_facar_glm(y, x, &params, Family::Logistic)?,
            Method::GlmMr1 => score_mr_glm(y, x, Family::Logistic, MarginalVariant::MleCoef)?,
            Method::GlmMr2 => score_mr_glm(y, x, Family::Logistic, MarginalVariant::MaxLoglik)?,
        };
        if r.skipped > 0 {
            log::warn!("{method}: {} neighborhoods or variables skipped", r.skipped);
        }
        results.push(r);
    }
    let resolved = RankResolved {
        command: if glm { "glm-rank" } else { "rank" },
        design: args.design.display().to_string(),
        response: args.response.display().to_string(),
        methods: methods.iter().map(Method::name).collect(),
        seed,
        holp_ridge: args.holp_ridge,
        lsr_h: args.lsr_h,
        facar: params,
    };
    let resolved = toml::to_string(&resolved).map_err(|e| Failure::Failed(e.to_string()))?;
    write_outputs(
        &args.out,
        &[("scores.csv", scores_csv(&results)), ("config_resolved.toml", resolved)],
        "scores.csv",
    )
}

fn cmd_simulate(args: SimulateArgs, seed: Option<u64>) -> CliResult {
    if args.list_presets {
        for (name, _) in PRESETS {
            println!("{name}");
        }
        return Ok(());
    }
    let text = match (&args.config, &args.preset) {
        (Some(path), _) => fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        (None, Some(name)) => preset(name)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                Failure::Usage(format!("unknown preset {name:?} (available: {})", names.join(", ")))
            })?
            .to_string(),
        (None, None) => unreachable!("clap requires one of --config/--preset"),
    };
    let mut config = ExperimentConfig::from_toml_str(&text)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(r) = args.reps {
        config.reps = r;
    }
    if let Some(r) = args.retain {
        config.retain = r;
    }
    // re-validate overrides through the same schema
    let config = ExperimentConfig::from_toml_str(&config.to_toml())?;
    let result = run_experiment(&config)?;
    let out = args.out.expect("clap requires --out");
    write_outputs(
        &Some(out),
        &[
            ("roc.csv", result.roc_csv()),
            ("metrics.csv", result.metrics_csv()),
            ("per_rep.csv", result.per_rep_csv()),
            ("config_resolved.toml", config.to_toml()),
        ],
        "",
    )?;
    for r in &result.reports {
        eprintln!(
            "{:>10}  SP {:.3}  TypeII {:.3}  Size median {}  ({} ok, {} failed)",
            r.method.to_string(),
            r.sp,
            r.type2_mean,
            r.size_median,
            r.reps_ok,
            r.reps_failed
        );
    }
    if result.failures() > 0 {
        return Err(Failure::Failed(format!(
            "{} method-repetitions failed; see per_rep.csv",
            result.failures()
        )));
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> CliResult {
    let mut triples = args.triples.clone();
    for &theta in &args.theta {
        for &r in &args.r {
            for &h in &args.h {
                triples.push((theta, r, h));
            }
        }
    }
    if args.table1 {
        triples.extend([(0.8, 1.5, 0.4), (0.5, 2.0, 0.8), (0.3, 2.0, 0.2)]);
    }
    if triples.is_empty() {
        return Err(Failure::Usage(
            "no settings given; use --triple, --theta/--r/--h, or --table1".into(),
        ));
    }
    let f = |x: f64| {
        if args.digits17 {
            facar::fmt::sig17(x)
        } else {
            facar::fmt::shortest(x)
        }
    };
    let mut csv = String::from("theta,r,h,method,q_star,eta_star\n");
    for (theta, r, h) in triples {
        let o = rate_oracle(theta, r, h)?;
        for m in RateMethod::ALL {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f(theta),
                f(r),
                f(h),
                m,
                f(o.q_star(m)),
                f(o.eta_star(m))
            ));
        }
    }
    write_outputs(&args.out, &[("exponents.csv", csv)], "exponents.csv")
}

fn cmd_check_bounds(args: BoundsArgs, seed: Option<u64>) -> CliResult {
    let p_list = if args.p_list.is_empty() {
        match args.which {
            BoundKind::Lemma2 => vec![100],
            BoundKind::Theorem2 => vec![100, 200, 400, 800],
        }
    } else {
        args.p_list.clone()
    };
    let params = SweepParams {
        which: args.which,
        p_list,
        k_list: args.k_list.clone(),
        seeds: args.seeds,
        base_seed: seed.unwrap_or(1),
        lambda: args.lambda,
        g0_frac: args.g0_frac,
        d: args.d,
        shape: args.shape,
    };
    let rows = run_sweep(&params)?;
    let resolved = toml::to_string(&params).map_err(|e| Failure::Failed(e.to_string()))?;
    write_outputs(
        &args.out,
        &[("bounds.csv", bounds_csv(&rows)), ("config_resolved.toml", resolved)],
        "bounds.csv",
    )?;
    let bad = rows.iter().filter(|r| row_violates(r)).count();
    if bad > 0 {
        return Err(Failure::Failed(format!("{bad} hypothesis-satisfying instances violate their bound")));
    }
    Ok(())
}
