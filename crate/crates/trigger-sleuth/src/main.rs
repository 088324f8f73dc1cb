//! Command-line pipeline: simulate → fit → verify → detect → eval.
//!
//! Every command is a pure function of its input files and flags; rerunning
//! with the same inputs produces byte-identical outputs. Exit codes: 0
//! success, 2 usage error, 3 data-format error, 4 numeric-guard violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trigger_sleuth::datamodel_fit::{fit_datamodels, verify_datamodel_accuracy, FitConfig};
use trigger_sleuth::detect::{aggregate_scores, auroc, flag_top, EvalLabels, ScoreProvenance};
use trigger_sleuth::feature_math::{strength_estimate, DatamodelMatrix, FeatureIndicator};
use trigger_sleuth::formats;
use trigger_sleuth::maxsum::{default_candidate_sizes, multi_search, MaxSumInstance};
use trigger_sleuth::subset_sim::{
    empirical_k_output, plant_backdoor, sample_subsets, synth_outputs, SubsetRecord,
};
use trigger_sleuth::{Error, Result};

#[derive(Parser)]
#[command(name = "trigger-sleuth", version, about = "Planted-feature detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic instance and its subset/output records.
    Simulate(SimulateArgs),
    /// Fit per-target datamodels from a records file.
    Fit(FitArgs),
    /// Check datamodel accuracy and strength agreement on a records file.
    Verify(VerifyArgs),
    /// Search the weight matrix for candidate supports and score examples.
    Detect(DetectArgs),
    /// Compute AUROC and flagged-set metrics from scores and labels.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of training examples (and output targets).
    #[arg(long)]
    n: usize,
    /// Subset fraction for the sampled training subsets.
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    /// Number of (subset, outputs) records to generate.
    #[arg(long)]
    records: usize,
    /// Planted support size.
    #[arg(long)]
    p: usize,
    /// Planted per-column weight on support rows.
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// Background weight scale: entries off the plant are Normal(0, tau^2).
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Per-record output noise scale Normal(0, sigma^2).
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Clip linear outputs at this ceiling (before noise).
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Records file (.csv or DMRC binary).
    #[arg(long)]
    records: PathBuf,
    /// Indicator length, required when reading CSV records.
    #[arg(long)]
    n: Option<usize>,
    /// Ridge penalty; 0 selects the minimum-norm least-squares solution.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    records: PathBuf,
    /// Weights file (.csv or DMWT binary).
    #[arg(long)]
    weights: PathBuf,
    /// Indicator length, required when reading CSV records.
    #[arg(long)]
    n: Option<usize>,
    /// Planted labels file; enables the strength-pair comparison.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Comma-separated candidate support sizes; defaults to a doubling
    /// schedule derived from n.
    #[arg(long, value_delimiter = ',')]
    k_set: Option<Vec<usize>>,
    /// Local-search restarts per candidate size.
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of examples to flag for removal.
    #[arg(long, default_value_t = 0.1)]
    removal_fraction: f64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Scores CSV produced by `detect`.
    #[arg(long)]
    scores: PathBuf,
    /// Ground-truth labels file, one 0/1 per line.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    removal_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Format(_) | Error::Io(_) => 3,
                Error::BudgetExceeded(_) => 4,
                _ => 2,
            })
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var("TRIGGER_SLEUTH_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| {
                Error::InvalidArgument(format!("TRIGGER_SLEUTH_THREADS={v} is not a number"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_records(path: &Path, n: Option<usize>) -> Result<Vec<SubsetRecord>> {
    if is_csv(path) {
        let n = n.ok_or_else(|| {
            Error::InvalidArgument("--n is required when reading CSV records".into())
        })?;
        formats::read_records_csv(path, n)
    } else {
        formats::read_records(path)
    }
}

fn load_weights(path: &Path) -> Result<DatamodelMatrix> {
    if is_csv(path) {
        formats::read_weights_csv(path)
    } else {
        formats::read_weights(path)
    }
}

fn write_config(out: &Path, pairs: Vec<(String, String)>) -> Result<()> {
    formats::write_key_values(&out.join("config.txt"), &pairs)
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    init_threads(args.threads)?;
    std::fs::create_dir_all(&args.out)?;
    let mut gt = plant_backdoor(args.n, args.p, args.theta, args.tau, args.sigma, args.seed)?;
    if let Some(c) = args.clip {
        gt = gt.with_clip_ceiling(c);
    }
    let indicators = sample_subsets(
        args.n,
        args.alpha,
        args.records,
        trigger_sleuth::seeding::derive_seed(args.seed, 1, 0),
    )?;
    let records = synth_outputs(&gt, &indicators, trigger_sleuth::seeding::derive_seed(args.seed, 2, 0))?;

    formats::write_records(&args.out.join("records.dmrc"), &records)?;
    formats::write_weights(&args.out.join("truth.dmwt"), &gt.true_weights)?;
    formats::write_labels(&args.out.join("labels.txt"), gt.planted.bits())?;
    let mut config = vec![
        kv("command", "simulate"),
        kv("n", args.n),
        kv("alpha", args.alpha),
        kv("records", args.records),
        kv("p", args.p),
        kv("theta", args.theta),
        kv("tau", args.tau),
        kv("sigma", args.sigma),
        kv("seed", args.seed),
    ];
    if let Some(c) = args.clip {
        config.push(kv("clip", c));
    }
    write_config(&args.out, config)?;

    let support: Vec<String> =
        gt.planted.support_indices().iter().map(|i| i.to_string()).collect();
    println!("planted support: {}", support.join(" "));
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    init_threads(args.threads)?;
    std::fs::create_dir_all(&args.out)?;
    let records = load_records(&args.records, args.n)?;
    let config = FitConfig { ridge_lambda: args.ridge, ..FitConfig::default() };
    let fit = fit_datamodels(&records, &config)?;
    let report = verify_datamodel_accuracy(&records, &fit.weights)?;

    formats::write_weights(&args.out.join("weights.dmwt"), &fit.weights)?;
    formats::write_key_values(
        &args.out.join("metrics.txt"),
        &[
            kv("records", records.len()),
            kv("targets", fit.weights.rows()),
            kv("epsilon_hat", format!("{:.17e}", report.epsilon_hat)),
        ],
    )?;
    write_config(
        &args.out,
        vec![
            kv("command", "fit"),
            kv("records_path", args.records.display()),
            kv("ridge", args.ridge),
        ],
    )?;
    println!("epsilon_hat = {:.6e}", report.epsilon_hat);
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    init_threads(args.threads)?;
    std::fs::create_dir_all(&args.out)?;
    let records = load_records(&args.records, args.n)?;
    let weights = load_weights(&args.weights)?;
    let report = verify_datamodel_accuracy(&records, &weights)?;
    let mut metrics = vec![
        kv("records", records.len()),
        kv("epsilon_hat", format!("{:.17e}", report.epsilon_hat)),
    ];

    if let Some(labels_path) = &args.labels {
        let labels = formats::read_labels(labels_path)?;
        let v = FeatureIndicator::from_bits(labels.clone());
        v.check_nondegenerate()?;
        let strength = strength_estimate(&weights, &v)?;
        if let Some(mean) = strength.mean_over_support {
            metrics.push(kv("mean_strength_over_support", format!("{mean:.17e}")));
        }
        metrics.push(kv(
            "strength_auroc",
            format!("{:.6}", auroc(&strength.per_target, &EvalLabels { is_poisoned: labels })?),
        ));

        // Per-target empirical strengths at the best-populated count k:
        // the Fig.-style (datamodel strength, empirical strength) pairs.
        let curve = empirical_k_output(&records, &v, true)?;
        let ks = curve.populated_ks();
        let pair_k = ks
            .iter()
            .copied()
            .filter(|&k| ks.contains(&(k + 1)))
            .max_by_key(|&k| {
                v.support_indices()
                    .iter()
                    .enumerate()
                    .map(|(pos, _)| curve.per_target(pos, k).map_or(0, |(_, c)| c))
                    .min()
                    .unwrap_or(0)
            });
        if let Some(k) = pair_k {
            let support = v.support_indices();
            let mut lines = vec!["target,datamodel_strength,empirical_strength".to_string()];
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (pos, &z) in support.iter().enumerate() {
                if let (Some((lo, _)), Some((hi, _))) =
                    (curve.per_target(pos, k), curve.per_target(pos, k + 1))
                {
                    let dm = strength.per_target[z];
                    let emp = hi - lo;
                    lines.push(format!("{z},{dm:.17e},{emp:.17e}"));
                    xs.push(dm);
                    ys.push(emp);
                }
            }
            std::fs::write(args.out.join("strength_pairs.csv"), lines.join("\n") + "\n")?;
            if let Some(r) = pearson(&xs, &ys) {
                metrics.push(kv("strength_pearson_r", format!("{r:.6}")));
            }
            metrics.push(kv("pair_k", k));
        }
    }

    formats::write_key_values(&args.out.join("metrics.txt"), &metrics)?;
    write_config(
        &args.out,
        vec![
            kv("command", "verify"),
            kv("records_path", args.records.display()),
            kv("weights_path", args.weights.display()),
        ],
    )?;
    for (k, v) in &metrics {
        println!("{k} = {v}");
    }
    Ok(())
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    init_threads(args.threads)?;
    std::fs::create_dir_all(&args.out)?;
    let weights = load_weights(&args.weights)?;
    let n = weights.cols();
    let k_set = match args.k_set {
        Some(ks) if !ks.is_empty() => ks,
        _ => default_candidate_sizes(n),
    };
    let inst = MaxSumInstance::new(weights)?;
    let candidates = multi_search(&inst, &k_set, args.restarts, args.seed)?;
    let scores = aggregate_scores(&candidates, n)?.with_provenance(ScoreProvenance {
        k_set: k_set.clone(),
        restarts: args.restarts,
        base_seed: args.seed,
    });
    let flagged = flag_top(&scores, args.removal_fraction)?;

    formats::write_candidates(&args.out.join("candidates.txt"), &candidates)?;
    formats::write_scores_csv(&args.out.join("scores.csv"), &scores.scores, &flagged)?;
    write_config(
        &args.out,
        vec![
            kv("command", "detect"),
            kv("weights_path", args.weights.display()),
            kv("k_set", k_set.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")),
            kv("restarts", args.restarts),
            kv("seed", args.seed),
            kv("removal_fraction", args.removal_fraction),
        ],
    )?;
    println!(
        "searched {} candidates; flagged {} of {} examples",
        candidates.len(),
        flagged.iter().filter(|&&f| f).count(),
        n
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let (scores, _) = formats::read_scores_csv(&args.scores)?;
    let labels = formats::read_labels(&args.labels)?;
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let eval = EvalLabels { is_poisoned: labels };
    let area = auroc(&scores, &eval)?;
    let score_vec = trigger_sleuth::detect::ScoreVector { scores, provenance: None };
    let flagged = flag_top(&score_vec, args.removal_fraction)?;
    let captured = flagged
        .iter()
        .zip(&eval.is_poisoned)
        .filter(|&(&f, &p)| f && p)
        .count();
    let positives = eval.positives();

    let metrics = vec![
        kv("auroc", format!("{area:.6}")),
        kv("removal_fraction", args.removal_fraction),
        kv("flagged", flagged.iter().filter(|&&f| f).count()),
        kv("positives", positives),
        kv("positives_flagged", captured),
        kv("recall_at_fraction", format!("{:.6}", captured as f64 / positives as f64)),
    ];
    formats::write_key_values(&args.out.join("metrics.txt"), &metrics)?;
    for (k, v) in &metrics {
        println!("{k} = {v}");
    }
    Ok(())
}
