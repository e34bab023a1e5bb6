//! Subcommands. Each one reads its inputs, runs the library, and writes its
//! result file(s) plus a manifest sidecar.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpuq_core::conformal::{calibrate, fmt_f64, Calibrator, ScoringConfig};
use cpuq_core::eval::{
    alpha_sweep, calibration_size_sweep, compare_methods, empirical_coverage, histogram,
    set_size_stats, split_indices, stratify_uncertainty, SetCounts, StratifiedStats,
};
use cpuq_core::scores::predicted_label;
use cpuq_core::synth::{
    evidence_from_scores, generate, generate_mcd_stacks, shift, OracleConfig, ShiftConfig,
};
use cpuq_core::{LabeledScores, ScoreMatrix};

use crate::error::CliError;
use crate::format::{
    atomic_write, emit_labels, emit_predictions, emit_scores, header_line, join_labeled,
    parse_labels, parse_mcd, parse_predictions, parse_scores, read_text, PredictionRecord, Table,
};
use crate::manifest::{sidecar_path, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "cpuq",
    version,
    about = "Conformal prediction sets and uncertainty baselines over classifier scores"
)]
pub struct Cli {
    /// Worker threads for internal parallelism (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labelled scores from the synthetic classifier.
    Synth(SynthArgs),
    /// Check a score file (and optionally a label file).
    Validate(ValidateArgs),
    /// Fit a conformal calibrator.
    Calibrate(CalibrateArgs),
    /// Emit prediction sets for a score file.
    Predict(PredictArgs),
    /// Coverage and uncertainty statistics for a predictions file.
    Evaluate(EvaluateArgs),
    /// Sweep alpha or calibration-set size.
    Sweep(SweepArgs),
    /// Compare conformal, dropout and evidential uncertainty on the same samples.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Aps,
    Raps,
}

#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    #[arg(long, value_enum, default_value_t = Variant::Aps)]
    pub variant: Variant,
    /// RAPS penalty per rank beyond --k-reg.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// RAPS rank threshold.
    #[arg(long = "k-reg")]
    pub k_reg: Option<usize>,
}

impl ScoringArgs {
    pub fn resolve(&self) -> Result<ScoringConfig, CliError> {
        match self.variant {
            Variant::Aps => {
                if self.lambda.is_some() || self.k_reg.is_some() {
                    return Err(CliError::Usage(
                        "--lambda/--k-reg only apply to --variant raps".into(),
                    ));
                }
                Ok(ScoringConfig::Aps)
            }
            Variant::Raps => {
                let (Some(lambda), Some(k_reg)) = (self.lambda, self.k_reg) else {
                    return Err(CliError::Usage(
                        "--variant raps needs --lambda and --k-reg".into(),
                    ));
                };
                Ok(ScoringConfig::raps(lambda, k_reg)?)
            }
        }
    }

    fn record(&self, m: &mut RunManifest, cfg: &ScoringConfig) {
        m.param("variant", cfg.name());
        if let ScoringConfig::Raps { lambda, k_reg } = cfg {
            m.param("lambda", fmt_f64(*lambda)).param("k_reg", k_reg);
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub concentration: f64,
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    /// Score-space shift: rows become p^(1/temperature).
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long = "label-corruption", default_value_t = 0.0)]
    pub label_corruption: f64,
    #[arg(long, env = "CPUQ_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output prefix; writes <out>.scores.csv, <out>.labels.csv, <out>.manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub calibrator: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Adds the marginal coverage interval to the report.
    #[arg(long)]
    pub calibrator: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Alpha,
    Calibsize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub mode: SweepMode,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Comma-separated, strictly increasing alphas or calibration sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<String>,
    /// Alpha mode: calibration rows drawn from the pool (rest are test). Defaults to half.
    #[arg(long = "n-calib")]
    pub n_calib: Option<usize>,
    /// Calibsize mode: held-out test rows per resample.
    #[arg(long = "test-size")]
    pub test_size: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub resamples: usize,
    /// Calibsize mode: error rate.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long, env = "CPUQ_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub calibrator: PathBuf,
    /// Precomputed dropout stacks; otherwise they are synthesized from the scores.
    #[arg(long = "mcd-stacks")]
    pub mcd_stacks: Option<PathBuf>,
    #[arg(long = "mcd-passes", default_value_t = 100)]
    pub mcd_passes: usize,
    #[arg(long = "mcd-jitter", default_value_t = 0.5)]
    pub mcd_jitter: f64,
    /// Evidence is scale * p for every score row.
    #[arg(long = "evidence-scale", default_value_t = 10.0)]
    pub evidence_scale: f64,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, env = "CPUQ_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Histogram counts per method and correctness group.
    #[arg(long = "hist-out")]
    pub hist_out: Option<PathBuf>,
    /// Per-sample uncertainty triples.
    #[arg(long = "samples-out")]
    pub samples_out: Option<PathBuf>,
}

/// What a command prints on success.
pub type Report = String;

pub fn run(cli: Cli) -> Result<Report, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        // only the first call configures the global pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn load_scores(path: &Path, m: &mut RunManifest) -> Result<ScoreMatrix, CliError> {
    let text = read_text(path)?;
    m.input(path, text.as_bytes());
    parse_scores(&text, &path.display().to_string())
}

fn load_labels(path: &Path, m: &mut RunManifest) -> Result<(usize, Vec<usize>), CliError> {
    let text = read_text(path)?;
    m.input(path, text.as_bytes());
    parse_labels(&text, &path.display().to_string())
}

fn load_labeled(
    scores: &Path,
    labels: &Path,
    m: &mut RunManifest,
) -> Result<LabeledScores, CliError> {
    let s = load_scores(scores, m)?;
    let (k, l) = load_labels(labels, m)?;
    join_labeled(s, k, l)
}

fn load_calibrator(path: &Path, m: &mut RunManifest) -> Result<Calibrator, CliError> {
    let text = read_text(path)?;
    m.input(path, text.as_bytes());
    Calibrator::from_record(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Prepends a manifest-hash comment after the first (header) line.
fn stamp(body: &str, hash: &str) -> String {
    match body.split_once('\n') {
        Some((head, rest)) => format!("{head}\n# manifest-sha256={hash}\n{rest}"),
        None => format!("{body}\n# manifest-sha256={hash}\n"),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<Report, CliError> {
    let oracle = OracleConfig {
        k_classes: a.k,
        concentration: a.concentration,
        signal: a.signal,
        seed: a.seed,
    };
    let shift_cfg = ShiftConfig {
        temperature: a.temperature,
        label_corruption: a.label_corruption,
    };
    shift_cfg.validate()?;
    let mut data = generate(&oracle, a.n)?;
    if shift_cfg.temperature != 1.0 || shift_cfg.label_corruption != 0.0 {
        data = shift(&data, &shift_cfg, a.seed)?;
    }

    let scores_path = with_suffix(&a.out, ".scores.csv");
    let labels_path = with_suffix(&a.out, ".labels.csv");
    let mut m = RunManifest::new("synth");
    m.param("k", a.k)
        .param("n", a.n)
        .param("concentration", fmt_f64(a.concentration))
        .param("signal", fmt_f64(a.signal))
        .param("temperature", fmt_f64(a.temperature))
        .param("label_corruption", fmt_f64(a.label_corruption));
    m.seed = Some(a.seed);
    m.output(&scores_path).output(&labels_path);
    m.derived("accuracy", fmt_f64(data.accuracy()));
    let hash = m.write_beside(&a.out)?;
    atomic_write(
        &scores_path,
        stamp(&emit_scores(data.scores()), &hash).as_bytes(),
    )?;
    atomic_write(
        &labels_path,
        stamp(&emit_labels(data.labels(), a.k), &hash).as_bytes(),
    )?;
    Ok(format!(
        "wrote {} rows x {} classes to {} and {} (argmax accuracy {:.4})\n",
        a.n,
        a.k,
        scores_path.display(),
        labels_path.display(),
        data.accuracy()
    ))
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<Report, CliError> {
    let mut m = RunManifest::new("validate");
    let scores = load_scores(&a.scores, &mut m)?;
    let mut report = format!(
        "{}: ok, {} rows x {} classes\n",
        a.scores.display(),
        scores.n_rows(),
        scores.k_classes()
    );
    if let Some(lp) = &a.labels {
        let (k, labels) = load_labels(lp, &mut m)?;
        let data = join_labeled(scores, k, labels)?;
        report.push_str(&format!(
            "{}: ok, {} labels, argmax accuracy {}\n",
            lp.display(),
            data.len(),
            fmt_f64(data.accuracy())
        ));
    }
    Ok(report)
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<Report, CliError> {
    let cfg = a.scoring.resolve()?;
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(CliError::Usage(format!(
            "--alpha must lie in [0, 1], got {}",
            a.alpha
        )));
    }
    let mut m = RunManifest::new("calibrate");
    let cal = load_labeled(&a.scores, &a.labels, &mut m)?;
    let c = calibrate(&cal, a.alpha, cfg)?;
    m.param("alpha", fmt_f64(a.alpha));
    a.scoring.record(&mut m, &cfg);
    m.output(&a.out);
    m.derived("n_calib", c.n_calib())
        .derived("quantile_rank", c.quantile_rank())
        .derived("q_hat", fmt_f64(c.q_hat()))
        .derived("coverage_lower", fmt_f64(c.coverage_bound().lower))
        .derived("coverage_upper", fmt_f64(c.coverage_bound().upper));
    let hash = m.write_beside(&a.out)?;
    atomic_write(&a.out, stamp(&c.to_record(), &hash).as_bytes())?;
    Ok(format!(
        "q_hat = {} (rank {} of {}), coverage interval {}\n",
        fmt_f64(c.q_hat()),
        c.quantile_rank(),
        c.n_calib(),
        c.coverage_bound()
    ))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<Report, CliError> {
    let mut m = RunManifest::new("predict");
    let scores = load_scores(&a.scores, &mut m)?;
    let c = load_calibrator(&a.calibrator, &mut m)?;
    let sets = c.predict_all(&scores)?;
    let records: Vec<PredictionRecord> = scores
        .rows()
        .zip(sets)
        .map(|(row, set)| PredictionRecord {
            predicted: predicted_label(row),
            set,
        })
        .collect();
    let counts = SetCounts::tally(&records.iter().map(|r| r.set.clone()).collect::<Vec<_>>());
    m.output(&a.out);
    m.derived("certain", counts.certain)
        .derived("uncertain", counts.uncertain)
        .derived("empty", counts.empty);
    let hash = m.write_beside(&a.out)?;
    atomic_write(
        &a.out,
        emit_predictions(&records, c.k_classes(), &hash).as_bytes(),
    )?;
    Ok(format!(
        "{} prediction sets: {} singleton, {} multi-label, {} empty\n",
        records.len(),
        counts.certain,
        counts.uncertain,
        counts.empty
    ))
}

fn push_stats(t: &mut Table, prefix: &str, s: &StratifiedStats) {
    for (k, v) in [
        ("mean_correct", fmt_f64(s.mean_correct)),
        ("std_correct", fmt_f64(s.std_correct)),
        ("mean_wrong", fmt_f64(s.mean_wrong)),
        ("std_wrong", fmt_f64(s.std_wrong)),
        ("n_correct", s.n_correct.to_string()),
        ("n_wrong", s.n_wrong.to_string()),
        ("excluded_empty", s.excluded_empty.to_string()),
    ] {
        t.push(vec![format!("{prefix}{k}"), v]);
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<Report, CliError> {
    let mut m = RunManifest::new("evaluate");
    let ptext = read_text(&a.predictions)?;
    m.input(&a.predictions, ptext.as_bytes());
    let (k, records) = parse_predictions(&ptext, &a.predictions.display().to_string())?;
    let (kl, labels) = load_labels(&a.labels, &mut m)?;
    if kl != k {
        return Err(CliError::Data(format!(
            "labels declare k={kl}, predictions k={k}"
        )));
    }
    let bound = match &a.calibrator {
        Some(p) => Some(load_calibrator(p, &mut m)?.coverage_bound()),
        None => None,
    };
    let sets: Vec<_> = records.iter().map(|r| r.set.clone()).collect();
    let predicted: Vec<usize> = records.iter().map(|r| r.predicted).collect();
    let coverage = empirical_coverage(&sets, &labels)?;
    let counts = SetCounts::tally(&sets);
    let uncertainty: Vec<f64> = sets.iter().map(|s| s.uncertainty()).collect();
    let empty: Vec<bool> = sets.iter().map(|s| s.is_empty()).collect();
    let strat = stratify_uncertainty(&uncertainty, &predicted, &labels, &empty)?;
    let sizes = set_size_stats(&sets, &predicted, &labels)?;
    let accuracy = predicted
        .iter()
        .zip(&labels)
        .filter(|(p, y)| p == y)
        .count() as f64
        / labels.len().max(1) as f64;

    let mut t = Table::new("evaluation", &["metric", "value"]);
    t.push(vec!["n".into(), labels.len().to_string()]);
    t.push(vec!["accuracy".into(), fmt_f64(accuracy)]);
    t.push(vec!["coverage".into(), fmt_f64(coverage)]);
    if let Some(b) = bound {
        t.push(vec!["coverage_lower".into(), fmt_f64(b.lower)]);
        t.push(vec!["coverage_upper".into(), fmt_f64(b.upper)]);
    }
    t.push(vec!["certain".into(), counts.certain.to_string()]);
    t.push(vec!["uncertain".into(), counts.uncertain.to_string()]);
    t.push(vec!["empty".into(), counts.empty.to_string()]);
    push_stats(&mut t, "cp_", &strat);
    t.push(vec!["c_correct".into(), fmt_f64(sizes.c_correct)]);
    t.push(vec!["c_wrong".into(), fmt_f64(sizes.c_wrong)]);
    t.push(vec!["c_average".into(), fmt_f64(sizes.c_average)]);

    m.output(&a.out);
    let hash = m.write_beside(&a.out)?;
    atomic_write(&a.out, t.emit(&hash).as_bytes())?;
    Ok(format!(
        "coverage {} over {} samples; mean set size {} (correct {}, wrong {})\n",
        fmt_f64(coverage),
        labels.len(),
        fmt_f64(sizes.c_average),
        fmt_f64(sizes.c_correct),
        fmt_f64(sizes.c_wrong)
    ))
}

fn parse_grid<T: std::str::FromStr>(grid: &[String], what: &str) -> Result<Vec<T>, CliError> {
    grid.iter()
        .map(|g| {
            g.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--grid: `{g}` is not a valid {what}")))
        })
        .collect()
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<Report, CliError> {
    let cfg = a.scoring.resolve()?;
    let mut m = RunManifest::new("sweep");
    let pool = load_labeled(&a.scores, &a.labels, &mut m)?;
    m.param("grid", a.grid.join(","));
    a.scoring.record(&mut m, &cfg);
    m.seed = Some(a.seed);
    let table = match a.mode {
        SweepMode::Alpha => {
            m.param("mode", "alpha");
            let alphas: Vec<f64> = parse_grid(&a.grid, "alpha")?;
            if let Some(bad) = alphas.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(CliError::Usage(format!(
                    "--grid: alpha {bad} outside [0, 1]"
                )));
            }
            let n_calib = a.n_calib.unwrap_or(pool.len() / 2);
            if n_calib == 0 || n_calib >= pool.len() {
                return Err(CliError::Usage(format!(
                    "--n-calib {n_calib} must leave at least one test row out of {}",
                    pool.len()
                )));
            }
            m.param("n_calib", n_calib);
            let (ci, ti) = split_indices(pool.len(), n_calib, pool.len() - n_calib, a.seed, 0);
            let points = alpha_sweep(&pool.select(&ci), &pool.select(&ti), &alphas, cfg)?;
            let mut t = Table::new(
                "alpha-sweep",
                &[
                    "alpha",
                    "q_hat",
                    "certain",
                    "uncertain",
                    "empty",
                    "coverage",
                ],
            );
            for p in points {
                t.push(vec![
                    fmt_f64(p.alpha),
                    fmt_f64(p.q_hat),
                    p.counts.certain.to_string(),
                    p.counts.uncertain.to_string(),
                    p.counts.empty.to_string(),
                    fmt_f64(p.coverage),
                ]);
            }
            t
        }
        SweepMode::Calibsize => {
            m.param("mode", "calibsize");
            let sizes: Vec<usize> = parse_grid(&a.grid, "calibration size")?;
            let largest = sizes.iter().copied().max().unwrap_or(0);
            let test_size = a.test_size.unwrap_or(pool.len().saturating_sub(largest));
            m.param("test_size", test_size)
                .param("resamples", a.resamples)
                .param("alpha", fmt_f64(a.alpha));
            let points = calibration_size_sweep(
                &pool,
                &sizes,
                test_size,
                a.resamples,
                a.alpha,
                cfg,
                a.seed,
            )?;
            let mut t = Table::new(
                "calibsize-sweep",
                &[
                    "n_calib",
                    "mean_coverage",
                    "std_coverage",
                    "min_coverage",
                    "max_coverage",
                    "resamples",
                    "bound_lower",
                    "bound_upper",
                ],
            );
            for p in points {
                let b = cpuq_core::conformal::coverage_bound(a.alpha, p.n_calib);
                t.push(vec![
                    p.n_calib.to_string(),
                    fmt_f64(p.mean_coverage),
                    fmt_f64(p.std_coverage),
                    fmt_f64(p.min_coverage),
                    fmt_f64(p.max_coverage),
                    p.resamples.to_string(),
                    fmt_f64(b.lower),
                    fmt_f64(b.upper),
                ]);
            }
            t
        }
    };
    m.output(&a.out);
    let hash = m.write_beside(&a.out)?;
    atomic_write(&a.out, table.emit(&hash).as_bytes())?;
    Ok(format!(
        "{} sweep points written to {}\n",
        table.rows.len(),
        a.out.display()
    ))
}

pub fn cmd_compare(a: &CompareArgs) -> Result<Report, CliError> {
    let mut m = RunManifest::new("compare");
    let data = load_labeled(&a.scores, &a.labels, &mut m)?;
    let c = load_calibrator(&a.calibrator, &mut m)?;
    let stacks = match &a.mcd_stacks {
        Some(p) => {
            let text = read_text(p)?;
            m.input(p, text.as_bytes());
            parse_mcd(&text, &p.display().to_string())?
        }
        None => {
            m.param("mcd_passes", a.mcd_passes)
                .param("mcd_jitter", fmt_f64(a.mcd_jitter));
            generate_mcd_stacks(data.scores(), a.mcd_passes, a.mcd_jitter, a.seed)?
        }
    };
    let evidence = evidence_from_scores(data.scores(), a.evidence_scale)?;
    m.param("evidence_scale", fmt_f64(a.evidence_scale))
        .param("bins", a.bins);
    m.seed = Some(a.seed);
    if a.bins == 0 {
        return Err(CliError::Usage("--bins must be >= 1".into()));
    }
    let cmp = compare_methods(&data, &stacks, &evidence, &c)?;

    let mut t = Table::new(
        "comparison",
        &[
            "method",
            "mean_correct",
            "std_correct",
            "mean_wrong",
            "std_wrong",
            "n_correct",
            "n_wrong",
            "excluded_empty",
        ],
    );
    for (name, s) in [("cp", &cmp.cp), ("mcd", &cmp.mcd), ("edl", &cmp.edl)] {
        if s.n_total() != data.len() {
            return Err(CliError::Internal(format!(
                "{name}: {} of {} samples accounted for",
                s.n_total(),
                data.len()
            )));
        }
        t.push(vec![
            name.into(),
            fmt_f64(s.mean_correct),
            fmt_f64(s.std_correct),
            fmt_f64(s.mean_wrong),
            fmt_f64(s.std_wrong),
            s.n_correct.to_string(),
            s.n_wrong.to_string(),
            s.excluded_empty.to_string(),
        ]);
    }
    m.output(&a.out);
    if let Some(h) = &a.hist_out {
        m.output(h);
    }
    if let Some(s) = &a.samples_out {
        m.output(s);
    }
    let hash = m.write_beside(&a.out)?;

    if let Some(h) = &a.hist_out {
        let mut ht = Table::new(
            "histogram",
            &["method", "group", "bin", "lower", "upper", "count"],
        );
        type Pick = fn(&cpuq_core::eval::SampleUncertainty) -> f64;
        let methods: [(&str, Pick, bool); 3] = [
            ("cp", |s| s.cp, true),
            ("mcd", |s| s.mcd, false),
            ("edl", |s| s.edl, false),
        ];
        for (name, pick, skip_empty) in methods {
            for (group, want) in [("correct", true), ("wrong", false)] {
                let values: Vec<f64> = cmp
                    .samples
                    .iter()
                    .filter(|s| s.correct == want && !(skip_empty && s.empty_set))
                    .map(pick)
                    .collect();
                let counts = histogram(&values, a.bins)?;
                for (b, count) in counts.iter().enumerate() {
                    ht.push(vec![
                        name.into(),
                        group.into(),
                        b.to_string(),
                        fmt_f64(b as f64 / a.bins as f64),
                        fmt_f64((b + 1) as f64 / a.bins as f64),
                        count.to_string(),
                    ]);
                }
            }
        }
        atomic_write(h, ht.emit(&hash).as_bytes())?;
    }
    if let Some(sp) = &a.samples_out {
        let mut st = Table::new(
            "samples",
            &["index", "correct", "empty_set", "cp", "mcd", "edl"],
        );
        for (i, s) in cmp.samples.iter().enumerate() {
            st.push(vec![
                i.to_string(),
                u8::from(s.correct).to_string(),
                u8::from(s.empty_set).to_string(),
                fmt_f64(s.cp),
                fmt_f64(s.mcd),
                fmt_f64(s.edl),
            ]);
        }
        atomic_write(sp, st.emit(&hash).as_bytes())?;
    }
    atomic_write(&a.out, t.emit(&hash).as_bytes())?;
    Ok(format!(
        "mean uncertainty correct/wrong: cp {:.4}/{:.4}, mcd {:.4}/{:.4}, edl {:.4}/{:.4}\n",
        cmp.cp.mean_correct,
        cmp.cp.mean_wrong,
        cmp.mcd.mean_correct,
        cmp.mcd.mean_wrong,
        cmp.edl.mean_correct,
        cmp.edl.mean_wrong
    ))
}

/// Header line used by `synth`-style data files; exposed for golden tests.
pub fn data_header(kind: &str, k: usize) -> String {
    header_line(kind, &[("k", k.to_string())])
}

/// Path of the manifest written for `output`.
pub fn manifest_path(output: &Path) -> PathBuf {
    sidecar_path(output)
}
