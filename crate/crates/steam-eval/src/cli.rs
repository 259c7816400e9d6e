//! Command-line surface: `evaluate` scores a fitted classifier on a
//! partially labeled study CSV and writes a JSON report with resampling
//! intervals, `simulate` runs the Monte-Carlo harness against oracle truth,
//! and `roc-plot` renders saved reports as SVG. All outputs are
//! byte-deterministic under a fixed seed.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::accuracy::Method;
use crate::config::RunConfig;
use crate::data_model::{load_study_csv, CsvSchema};
use crate::inference::{perturb_approx, perturb_exact, PerturbationDraws, Variant};
use crate::pipeline::evaluate_all;
use crate::plot::plot_reports;
use crate::report::{build_artifact, read_report_json, write_report_json, write_roc_csv};
use crate::sim::{
    self, equivalent_labels, run_coverage_experiment, run_experiment, target_labeled_curve,
    Misspec, ShiftStrength, SimScenario,
};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "STEAM_EVAL_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "steam-eval",
    version,
    about = "Estimate ROC accuracy of a fitted binary classifier on an unlabeled target population"
)]
pub struct Cli {
    /// Worker threads (0 = all cores); STEAM_EVAL_THREADS is the fallback.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a study CSV and write report.json / roc.csv (optionally roc.svg)
    Evaluate(EvaluateArgs),
    /// Run replicated synthetic experiments against oracle truth
    Simulate(SimulateArgs),
    /// Render one or more saved reports as an SVG ROC overlay
    RocPlot(RocPlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PerturbKind {
    /// re-run the propensity smoother inside every draw
    Exact,
    /// first-order propensity update per draw
    Approx,
}

impl From<PerturbKind> for Variant {
    fn from(k: PerturbKind) -> Self {
        match k {
            PerturbKind::Exact => Variant::Exact,
            PerturbKind::Approx => Variant::Approx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    #[value(name = "source")]
    Source,
    #[value(name = "target_labeled")]
    TargetLabeled,
    #[value(name = "weighted")]
    Weighted,
    #[value(name = "dr_aug")]
    DrAug,
    #[value(name = "steam")]
    Steam,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Source => Method::Source,
            MethodArg::TargetLabeled => Method::TargetLabeled,
            MethodArg::Weighted => Method::Weighted,
            MethodArg::DrAug => Method::DrAug,
            MethodArg::Steam => Method::Steam,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Study CSV: source/target indicator, labeling flag, outcome, covariates
    #[arg(long)]
    pub input: PathBuf,
    /// Column with the source indicator (1 = source, 0 = target)
    #[arg(long, default_value = "s")]
    pub s_col: String,
    /// Column flagging labeled source rows
    #[arg(long, default_value = "labeled")]
    pub label_col: String,
    /// Outcome column (0/1; required on labeled rows)
    #[arg(long, default_value = "y")]
    pub y_col: String,
    /// Covariate columns in order (default: every non-role column)
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// FPR constraints at which operating points are reported
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05])]
    pub u0: Vec<f64>,
    /// Folds for the cross-validated bias correction (0 disables CV)
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Run resampling inference with this propensity update
    #[arg(long, value_enum)]
    pub perturb: Option<PerturbKind>,
    /// Resampling draws
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Confidence level of the resampling intervals
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Propensity clip bound
    #[arg(long, default_value_t = 0.01)]
    pub pi_min: f64,
    /// Multiplier on the propensity-smoother bandwidths
    #[arg(long, default_value_t = 1.0)]
    pub h1_scale: f64,
    /// Multiplier on the risk-curve bandwidth
    #[arg(long, default_value_t = 1.0)]
    pub h2_scale: f64,
    /// Undersmoothing exponent of the risk-curve bandwidth, in (1/4, 1/2)
    #[arg(long, default_value_t = 0.4)]
    pub nu2: f64,
    /// Estimators to run (default: all)
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodArg>>,
    /// Outcome-model interactions as 1-based index pairs, e.g. 1:2,3:4
    #[arg(long, value_delimiter = ',')]
    pub mu_interactions: Vec<String>,
    /// Selection-model interactions as 1-based index pairs
    #[arg(long, value_delimiter = ',')]
    pub pi_interactions: Vec<String>,
    /// Also render roc.svg
    #[arg(long)]
    pub svg: bool,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShiftArg {
    Weak,
    Moderate,
    Strong,
}

impl From<ShiftArg> for ShiftStrength {
    fn from(s: ShiftArg) -> Self {
        match s {
            ShiftArg::Weak => ShiftStrength::Weak,
            ShiftArg::Moderate => ShiftStrength::Moderate,
            ShiftArg::Strong => ShiftStrength::Strong,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MisspecArg {
    #[value(name = "both_correct")]
    BothCorrect,
    #[value(name = "pi_mis")]
    PiMis,
    #[value(name = "mu_mis")]
    MuMis,
    /// run all three in sequence
    #[value(name = "all")]
    All,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Selection-shift strength of the scenario
    #[arg(long, value_enum, default_value_t = ShiftArg::Moderate)]
    pub scenario: ShiftArg,
    /// Which working models are deprived of their interaction terms
    #[arg(long, value_enum, default_value_t = MisspecArg::BothCorrect)]
    pub misspec: MisspecArg,
    /// Labeled source size
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Source cohort size (labeled + unlabeled)
    #[arg(long, default_value_t = 10_000)]
    pub big_n: usize,
    /// Target cohort size
    #[arg(long, default_value_t = 10_000)]
    pub n_t: usize,
    /// Validation labels drawn on the target (for the labeled comparator)
    #[arg(long, default_value_t = 100)]
    pub validation_labels: usize,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    /// Monte-Carlo draws behind the oracle truth
    #[arg(long, default_value_t = 1_000_000)]
    pub oracle_draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05])]
    pub u0: Vec<f64>,
    /// Also check resampling-interval calibration with this variant
    #[arg(long, value_enum)]
    pub perturb: Option<PerturbKind>,
    /// Resampling draws per replicate (with --perturb)
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Label budgets for the labels-equivalence curve, e.g. 20,60,100,160,220
    #[arg(long, value_delimiter = ',')]
    pub labels_grid: Option<Vec<usize>>,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RocPlotArgs {
    /// One or more report.json files to overlay
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// Output SVG path
    #[arg(long, default_value = "roc.svg")]
    pub out: PathBuf,
}

/// Entry point used by the binary: converts errors into a nonzero exit with
/// a structured stderr line.
pub fn run(cli: Cli) -> ExitCode {
    match try_run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

/// Resolves the thread cap and dispatches the subcommand.
pub fn try_run(cli: Cli) -> anyhow::Result<()> {
    let threads = resolve_threads(cli.threads);
    if threads > 0 {
        // a second initialization (e.g. in tests) keeps the first pool; the
        // cap is best-effort
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::Evaluate(args) => cmd_evaluate(args, threads),
        Command::Simulate(args) => cmd_simulate(args, threads),
        Command::RocPlot(args) => cmd_roc_plot(args),
    }
}

pub fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0)
}

fn parse_pairs(raw: &[String]) -> anyhow::Result<Vec<(usize, usize)>> {
    raw.iter()
        .map(|s| {
            let (a, b) = s
                .split_once(':')
                .with_context(|| format!("interaction `{s}` is not of the form A:B"))?;
            let a: usize = a.trim().parse().context("left index")?;
            let b: usize = b.trim().parse().context("right index")?;
            Ok((a, b))
        })
        .collect()
}

fn resolve_methods(arg: &Option<Vec<MethodArg>>) -> Vec<Method> {
    match arg {
        Some(list) => list.iter().map(|&m| m.into()).collect(),
        None => vec![
            Method::Source,
            Method::TargetLabeled,
            Method::Weighted,
            Method::DrAug,
            Method::Steam,
        ],
    }
}

fn cmd_evaluate(args: EvaluateArgs, threads: usize) -> anyhow::Result<()> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let schema = CsvSchema {
        s_col: args.s_col.clone(),
        label_col: args.label_col.clone(),
        y_col: args.y_col.clone(),
        feature_cols: args.features.clone(),
    };
    let data = load_study_csv(&args.input, &schema)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let config = RunConfig {
        seed: args.seed,
        h1_scale: args.h1_scale,
        h2_scale: args.h2_scale,
        nu2: args.nu2,
        pi_min: args.pi_min,
        folds: args.folds,
        draws: args.draws,
        level: args.level,
        u0: args.u0.clone(),
        methods: resolve_methods(&args.methods),
        mu_interactions: parse_pairs(&args.mu_interactions)?,
        pi_interactions: parse_pairs(&args.pi_interactions)?,
        threads,
    };
    let eval = evaluate_all(&data, &config).context("evaluation failed")?;
    let draws: Option<PerturbationDraws> = match args.perturb {
        Some(kind) if config.methods.contains(&Method::Steam) => Some(match kind.into() {
            Variant::Exact => perturb_exact(&eval, &config)?,
            Variant::Approx => perturb_approx(&eval, &config)?,
        }),
        Some(_) => {
            eprintln!("warning: --perturb ignored because `steam` is not among --methods");
            None
        }
        None => None,
    };
    let artifact = build_artifact(&eval, &config, draws.as_ref())?;
    write_report_json(&artifact, &args.out.join("report.json"))?;
    write_roc_csv(&artifact, &args.out.join("roc.csv"))?;
    if args.svg {
        let svg = plot_reports(std::slice::from_ref(&artifact))?;
        fs::write(args.out.join("roc.svg"), svg)?;
    }

    for w in &artifact.warnings {
        eprintln!("warning: {w}");
    }
    for f in &artifact.failures {
        eprintln!("warning: {} failed: {}", f.method.name(), f.message);
    }
    let mut out = std::io::stdout().lock();
    for block in &artifact.methods {
        write!(out, "{:>14}: auc {:.4}", block.method.name(), block.report.auc)?;
        if let Some(inf) = &block.inference {
            let auc = &inf.scalars[0];
            write!(
                out,
                " (se {:.4}, {:.0}% ci {:.4}-{:.4})",
                auc.se,
                100.0 * inf.level,
                auc.ci_lower,
                auc.ci_upper
            )?;
        }
        for op in &block.report.at_fpr {
            write!(
                out,
                "; tpr@{} {:.4}, ppv {:.4}, npv {:.4}",
                op.u0, op.tpr, op.ppv, op.npv
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn misspec_tag(m: Misspec) -> &'static str {
    match m {
        Misspec::BothCorrect => "both_correct",
        Misspec::PiMis => "pi_mis",
        Misspec::MuMis => "mu_mis",
    }
}

fn cmd_simulate(args: SimulateArgs, threads: usize) -> anyhow::Result<()> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let base = RunConfig {
        seed: args.seed,
        folds: args.folds,
        draws: args.draws,
        u0: args.u0.clone(),
        threads,
        ..RunConfig::default()
    };
    let misspecs = match args.misspec {
        MisspecArg::BothCorrect => vec![Misspec::BothCorrect],
        MisspecArg::PiMis => vec![Misspec::PiMis],
        MisspecArg::MuMis => vec![Misspec::MuMis],
        MisspecArg::All => vec![Misspec::BothCorrect, Misspec::PiMis, Misspec::MuMis],
    };
    let config_echo = serde_json::to_string(&base)?;
    for misspec in misspecs {
        let scenario = SimScenario {
            shift: args.scenario.into(),
            misspec,
            n: args.n,
            big_n: args.big_n,
            n_t: args.n_t,
            n_target_labeled: args.validation_labels,
            seed: args.seed,
            ..SimScenario::default()
        };
        let tag = misspec_tag(misspec);
        let summary = run_experiment(&scenario, &base, args.replicates, args.oracle_draws)?;
        println!(
            "scenario {tag} ({:?} shift, n={}, N={}, N_t={}, {} replicates)",
            args.scenario, args.n, args.big_n, args.n_t, args.replicates
        );
        print!("{summary}");
        for note in &summary.failure_notes {
            eprintln!("warning [{tag}]: {note}");
        }
        let path = args.out.join(format!("summary_{tag}.csv"));
        let mut file = fs::File::create(&path)?;
        writeln!(file, "# scenario: {tag}; config: {config_echo}")?;
        sim::write_summary_csv(&summary, &mut file)?;

        if let Some(kind) = args.perturb {
            let coverage = run_coverage_experiment(
                &scenario,
                &base,
                args.replicates,
                kind.into(),
                args.oracle_draws,
            )?;
            print!("{coverage}");
            for note in &coverage.failure_notes {
                eprintln!("warning [{tag}]: {note}");
            }
            let path = args.out.join(format!("coverage_{tag}.csv"));
            let mut file = fs::File::create(&path)?;
            writeln!(file, "# scenario: {tag}; config: {config_echo}")?;
            sim::write_coverage_csv(&coverage, &mut file)?;
        }

        if let Some(grid) = &args.labels_grid {
            let sample = sim::OracleSample::generate(&scenario, args.oracle_draws)?;
            let curve = target_labeled_curve(&scenario, &base, grid, args.replicates, &sample)?;
            let path = args.out.join(format!("label_curve_{tag}.csv"));
            let mut file = fs::File::create(&path)?;
            writeln!(file, "# scenario: {tag}; config: {config_echo}")?;
            writeln!(file, "size,measure,rmse,n_fail")?;
            for (s, &size) in curve.sizes.iter().enumerate() {
                for (k, name) in curve.measure_names.iter().enumerate() {
                    writeln!(
                        file,
                        "{size},{name},{:.6},{}",
                        curve.rmse[s][k], curve.n_fail[s][k]
                    )?;
                }
            }

            let path = args.out.join(format!("equivalent_labels_{tag}.csv"));
            let mut file = fs::File::create(&path)?;
            writeln!(file, "# scenario: {tag}; config: {config_echo}")?;
            writeln!(file, "measure,method,labels,at_boundary")?;
            for (k, name) in curve.measure_names.iter().enumerate() {
                let mut sizes = Vec::new();
                let mut rmse = Vec::new();
                for (s, &size) in curve.sizes.iter().enumerate() {
                    if curve.rmse[s][k].is_finite() {
                        sizes.push(size);
                        rmse.push(curve.rmse[s][k]);
                    }
                }
                if sizes.len() < 2 {
                    continue;
                }
                for method in &base.methods {
                    if *method == Method::TargetLabeled {
                        continue;
                    }
                    let Some(cell) = summary.cell(name, *method) else {
                        continue;
                    };
                    let eq = equivalent_labels(&sizes, &rmse, cell.rmse)?;
                    writeln!(
                        file,
                        "{name},{},{:.2},{}",
                        method.name(),
                        eq.labels,
                        eq.at_boundary
                    )?;
                }
            }
        }
    }
    Ok(())
}

fn cmd_roc_plot(args: RocPlotArgs) -> anyhow::Result<()> {
    let artifacts = args
        .input
        .iter()
        .map(|p| read_report_json(p).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let svg = plot_reports(&artifacts)?;
    fs::write(&args.out, svg)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse_with_documented_defaults() {
        let cli = Cli::try_parse_from([
            "steam-eval",
            "evaluate",
            "--input",
            "study.csv",
            "--u0",
            "0.05,0.1",
            "--perturb",
            "approx",
            "--methods",
            "source,weighted,steam",
            "--mu-interactions",
            "1:2,3:4",
        ])
        .unwrap();
        let Command::Evaluate(args) = cli.command else {
            panic!("wrong subcommand");
        };
        assert_eq!(args.u0, vec![0.05, 0.1]);
        assert_eq!(args.folds, 5);
        assert_eq!(args.draws, 1000);
        assert_eq!(args.seed, 1);
        assert_eq!(args.perturb, Some(PerturbKind::Approx));
        assert_eq!(
            resolve_methods(&args.methods),
            vec![Method::Source, Method::Weighted, Method::Steam]
        );
        assert_eq!(
            parse_pairs(&args.mu_interactions).unwrap(),
            vec![(1, 2), (3, 4)]
        );
        assert!(parse_pairs(&["1-2".to_string()]).is_err());
    }

    #[test]
    fn simulate_flags_cover_the_scenario_grid() {
        let cli = Cli::try_parse_from([
            "steam-eval",
            "simulate",
            "--scenario",
            "strong",
            "--misspec",
            "all",
            "--replicates",
            "2",
            "--labels-grid",
            "20,60,100",
        ])
        .unwrap();
        let Command::Simulate(args) = cli.command else {
            panic!("wrong subcommand");
        };
        assert_eq!(args.scenario, ShiftArg::Strong);
        assert_eq!(args.misspec, MisspecArg::All);
        assert_eq!(args.labels_grid, Some(vec![20, 60, 100]));
        assert_eq!(args.n, 200);
        assert_eq!(args.big_n, 10_000);
        assert!(Cli::try_parse_from(["steam-eval", "simulate", "--misspec", "nope"]).is_err());
    }

    #[test]
    fn thread_cap_falls_back_to_the_environment() {
        assert_eq!(resolve_threads(Some(3)), 3);
        std::env::remove_var(THREADS_ENV);
        assert_eq!(resolve_threads(None), 0);
        std::env::set_var(THREADS_ENV, "7");
        assert_eq!(resolve_threads(None), 7);
        assert_eq!(resolve_threads(Some(2)), 2); // flag wins
        std::env::set_var(THREADS_ENV, "junk");
        assert_eq!(resolve_threads(None), 0);
        std::env::remove_var(THREADS_ENV);
    }
}
