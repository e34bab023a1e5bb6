//! Split conformal prediction with APS and RAPS scoring.
//!
//! A calibration set of labelled score rows is turned into one nonconformity
//! score per row: the cumulative probability mass of the classes ranked at or
//! above the true label (plus a per-rank penalty for RAPS). The
//! `ceil((N+1)(1-alpha))`-th smallest of those scores is the threshold `q_hat`.
//! At test time a row's prediction set is the longest prefix of its
//! descending-sorted classes whose running score stays `<= q_hat`.
//!
//! Score computation and set construction share one running-sum routine, so a
//! test label is in its set exactly when its own score is `<= q_hat`.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConformalError;
use crate::scores::{rank_order, LabeledScores, ScoreMatrix};

/// Current version of the calibrator text record.
pub const RECORD_VERSION: u32 = 1;

/// Nonconformity score family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScoringConfig {
    /// Adaptive prediction sets: plain cumulative sorted mass.
    Aps,
    /// Regularized APS: adds `lambda` for every included rank beyond `k_reg`.
    Raps { lambda: f64, k_reg: usize },
}

impl ScoringConfig {
    pub fn raps(lambda: f64, k_reg: usize) -> Result<Self, ConformalError> {
        let cfg = ScoringConfig::Raps { lambda, k_reg };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConformalError> {
        match *self {
            ScoringConfig::Aps => Ok(()),
            ScoringConfig::Raps { lambda, k_reg } => {
                if !lambda.is_finite() || lambda < 0.0 {
                    return Err(ConformalError::InvalidLambda(lambda));
                }
                if k_reg == 0 {
                    return Err(ConformalError::InvalidKReg);
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoringConfig::Aps => "aps",
            ScoringConfig::Raps { .. } => "raps",
        }
    }

    /// Penalty added at 1-based rank `rank`.
    fn penalty(&self, rank: usize) -> f64 {
        match *self {
            ScoringConfig::Aps => 0.0,
            ScoringConfig::Raps { lambda, k_reg } => {
                if rank > k_reg {
                    lambda
                } else {
                    0.0
                }
            }
        }
    }
}

/// Running (regularized) score along the descending rank order of `row`.
///
/// Returns the rank order and, for each rank, the score accumulated up to and
/// including it.
fn running_scores(row: &[f64], config: &ScoringConfig) -> (Vec<usize>, Vec<f64>) {
    let order = rank_order(row);
    let mut acc = 0.0;
    let cumsum = order
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            acc += row[class];
            if let ScoringConfig::Raps { .. } = config {
                acc += config.penalty(i + 1);
            }
            acc
        })
        .collect();
    (order, cumsum)
}

fn true_label_score(
    row: &[f64],
    label: usize,
    config: &ScoringConfig,
) -> Result<f64, ConformalError> {
    if label >= row.len() {
        return Err(ConformalError::LabelOutOfRange {
            label,
            k: row.len(),
        });
    }
    let (order, cumsum) = running_scores(row, config);
    let rank = order
        .iter()
        .position(|&c| c == label)
        .expect("label is a class");
    Ok(cumsum[rank])
}

/// APS score: probability mass of all classes ranked at or above `label`.
pub fn aps_score(row: &[f64], label: usize) -> Result<f64, ConformalError> {
    true_label_score(row, label, &ScoringConfig::Aps)
}

/// RAPS score: the APS mass plus `lambda` per included rank strictly above `k_reg`.
pub fn raps_score(
    row: &[f64],
    label: usize,
    lambda: f64,
    k_reg: usize,
) -> Result<f64, ConformalError> {
    let cfg = ScoringConfig::raps(lambda, k_reg)?;
    true_label_score(row, label, &cfg)
}

/// Score of `label` under either scoring family.
pub fn nonconformity_score(
    row: &[f64],
    label: usize,
    config: &ScoringConfig,
) -> Result<f64, ConformalError> {
    config.validate()?;
    true_label_score(row, label, config)
}

/// 1-based order-statistic index `ceil((1+N)(1-alpha))`.
///
/// Products that land within 1e-9 of an integer are treated as that integer,
/// so decimal alphas such as 0.1 do not pick up an off-by-one from binary
/// rounding.
pub fn quantile_rank(n_calib: usize, alpha: f64) -> i64 {
    let x = (1.0 + n_calib as f64) * (1.0 - alpha);
    (x - 1e-9).ceil() as i64
}

/// Calibration threshold for the given scores.
///
/// Returns `+inf` when the required rank exceeds `N` (every label is kept)
/// and `0` when it is `<= 0` (every set is empty).
pub fn conformal_quantile(cal_scores: &[f64], alpha: f64) -> Result<f64, ConformalError> {
    if cal_scores.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    check_alpha(alpha)?;
    let n = cal_scores.len();
    let k = quantile_rank(n, alpha);
    if k > n as i64 {
        return Ok(f64::INFINITY);
    }
    if k <= 0 {
        return Ok(0.0);
    }
    let mut sorted = cal_scores.to_vec();
    let idx = (k - 1) as usize;
    let (_, kth, _) = sorted.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*kth)
}

fn check_alpha(alpha: f64) -> Result<(), ConformalError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    Ok(())
}

/// True-label scores for every calibration pair.
pub fn calibration_scores(
    cal: &LabeledScores,
    config: &ScoringConfig,
) -> Result<Vec<f64>, ConformalError> {
    config.validate()?;
    cal.scores()
        .rows()
        .zip(cal.labels())
        .map(|(row, &y)| true_label_score(row, y, config))
        .collect()
}

/// Frozen conformal state.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrator {
    alpha: f64,
    config: ScoringConfig,
    q_hat: f64,
    n_calib: usize,
    k_classes: usize,
}

impl Calibrator {
    /// Builds a calibrator from precomputed calibration scores.
    pub fn from_scores(
        cal_scores: &[f64],
        alpha: f64,
        config: ScoringConfig,
        k_classes: usize,
    ) -> Result<Self, ConformalError> {
        config.validate()?;
        let q_hat = conformal_quantile(cal_scores, alpha)?;
        Ok(Self {
            alpha,
            config,
            q_hat,
            n_calib: cal_scores.len(),
            k_classes,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn config(&self) -> ScoringConfig {
        self.config
    }

    pub fn q_hat(&self) -> f64 {
        self.q_hat
    }

    pub fn n_calib(&self) -> usize {
        self.n_calib
    }

    pub fn k_classes(&self) -> usize {
        self.k_classes
    }

    /// Order-statistic rank used for `q_hat`.
    pub fn quantile_rank(&self) -> i64 {
        quantile_rank(self.n_calib, self.alpha)
    }

    pub fn coverage_bound(&self) -> CoverageBound {
        coverage_bound(self.alpha, self.n_calib)
    }

    pub fn predict(&self, row: &[f64]) -> Result<PredictionSet, ConformalError> {
        predict_set(row, self)
    }

    /// Prediction sets for every row, in row order.
    pub fn predict_all(&self, scores: &ScoreMatrix) -> Result<Vec<PredictionSet>, ConformalError> {
        if scores.k_classes() != self.k_classes {
            return Err(ConformalError::ClassCountMismatch {
                expected: self.k_classes,
                found: scores.k_classes(),
            });
        }
        Ok(scores
            .as_flat()
            .par_chunks_exact(self.k_classes)
            .map(|row| self.walk(row))
            .collect())
    }

    fn walk(&self, row: &[f64]) -> PredictionSet {
        let (order, cumsum) = running_scores(row, &self.config);
        let k_star = cumsum.iter().take_while(|&&s| s <= self.q_hat).count();
        PredictionSet {
            members: order[..k_star].to_vec(),
            k_classes: self.k_classes,
        }
    }

    /// Serializes to the flat `key=value` text record.
    pub fn to_record(&self) -> String {
        let mut out = String::from("# cpuq conformal calibrator\n");
        out.push_str(&format!("version={RECORD_VERSION}\n"));
        out.push_str(&format!("variant={}\n", self.config.name()));
        out.push_str(&format!("alpha={}\n", fmt_f64(self.alpha)));
        if let ScoringConfig::Raps { lambda, k_reg } = self.config {
            out.push_str(&format!("lambda={}\n", fmt_f64(lambda)));
            out.push_str(&format!("k_reg={k_reg}\n"));
        }
        out.push_str(&format!("q_hat={}\n", fmt_f64(self.q_hat)));
        out.push_str(&format!("n_calib={}\n", self.n_calib));
        out.push_str(&format!("k_classes={}\n", self.k_classes));
        out
    }

    /// Parses and checks a record produced by [`Calibrator::to_record`].
    pub fn from_record(text: &str) -> Result<Self, ConformalError> {
        let corrupt = |m: String| ConformalError::CorruptRecord(m);
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| corrupt(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            if !matches!(
                key,
                "version"
                    | "variant"
                    | "alpha"
                    | "lambda"
                    | "k_reg"
                    | "q_hat"
                    | "n_calib"
                    | "k_classes"
            ) {
                return Err(corrupt(format!("unknown field `{key}`")));
            }
            if fields.insert(key, value.trim()).is_some() {
                return Err(corrupt(format!("duplicate field `{key}`")));
            }
        }
        let get = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| ConformalError::CorruptRecord(format!("missing field `{key}`")))
        };
        let version = get("version")?;
        if version.parse::<u32>().ok() != Some(RECORD_VERSION) {
            return Err(ConformalError::VersionMismatch {
                expected: RECORD_VERSION,
                found: version.to_string(),
            });
        }
        let num = |key: &str| -> Result<f64, ConformalError> {
            get(key)?
                .parse::<f64>()
                .map_err(|_| ConformalError::CorruptRecord(format!("`{key}` is not a number")))
        };
        let count = |key: &str| -> Result<usize, ConformalError> {
            get(key)?
                .parse::<usize>()
                .map_err(|_| ConformalError::CorruptRecord(format!("`{key}` is not a count")))
        };

        let config = match get("variant")? {
            "aps" => {
                if fields.contains_key("lambda") || fields.contains_key("k_reg") {
                    return Err(corrupt("aps record carries raps fields".into()));
                }
                ScoringConfig::Aps
            }
            "raps" => {
                let cfg = ScoringConfig::Raps {
                    lambda: num("lambda")?,
                    k_reg: count("k_reg")?,
                };
                cfg.validate().map_err(|e| corrupt(e.to_string()))?;
                cfg
            }
            other => return Err(corrupt(format!("unknown variant `{other}`"))),
        };
        let alpha = num("alpha")?;
        check_alpha(alpha).map_err(|e| corrupt(e.to_string()))?;
        let q_hat = num("q_hat")?;
        if q_hat.is_nan() || q_hat < 0.0 {
            return Err(corrupt(format!("q_hat = {q_hat}")));
        }
        let n_calib = count("n_calib")?;
        if n_calib == 0 {
            return Err(corrupt("n_calib = 0".into()));
        }
        let k_classes = count("k_classes")?;
        if k_classes < 2 {
            return Err(corrupt(format!("k_classes = {k_classes}")));
        }
        let rank = quantile_rank(n_calib, alpha);
        let sentinel_expected = rank > n_calib as i64;
        if sentinel_expected != q_hat.is_infinite() {
            return Err(corrupt(format!(
                "q_hat = {q_hat} inconsistent with quantile rank {rank} of {n_calib}"
            )));
        }
        if rank <= 0 && q_hat != 0.0 {
            return Err(corrupt(format!(
                "q_hat = {q_hat} but quantile rank is {rank}"
            )));
        }
        Ok(Self {
            alpha,
            config,
            q_hat,
            n_calib,
            k_classes,
        })
    }
}

/// Shortest round-tripping decimal; `inf` for the sentinel.
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:?}")
    }
}

/// Computes the true-label score of every calibration pair and freezes `q_hat`.
pub fn calibrate(
    cal: &LabeledScores,
    alpha: f64,
    config: ScoringConfig,
) -> Result<Calibrator, ConformalError> {
    if cal.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    check_alpha(alpha)?;
    let scores = calibration_scores(cal, &config)?;
    Calibrator::from_scores(&scores, alpha, config, cal.k_classes())
}

/// Classes kept for one test row, in descending-probability order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictionSet {
    members: Vec<usize>,
    k_classes: usize,
}

impl PredictionSet {
    /// Builds a set from explicit members; members must be distinct and `< k_classes`.
    pub fn new(members: Vec<usize>, k_classes: usize) -> Option<Self> {
        let mut seen = vec![false; k_classes];
        for &m in &members {
            if m >= k_classes || std::mem::replace(&mut seen[m], true) {
                return None;
            }
        }
        Some(Self { members, k_classes })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn k_star(&self) -> usize {
        self.members.len()
    }

    pub fn k_classes(&self) -> usize {
        self.k_classes
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.members.contains(&label)
    }

    pub fn uncertainty(&self) -> f64 {
        set_uncertainty(self.k_star() as f64, self.k_classes)
    }
}

/// Prediction set for `row` under a fitted calibrator.
pub fn predict_set(row: &[f64], calibrator: &Calibrator) -> Result<PredictionSet, ConformalError> {
    if row.len() != calibrator.k_classes {
        return Err(ConformalError::ClassCountMismatch {
            expected: calibrator.k_classes,
            found: row.len(),
        });
    }
    Ok(calibrator.walk(row))
}

/// Set-size uncertainty `k_star / K`. Accepts fractional sizes so mean set
/// sizes map onto mean uncertainties.
pub fn set_uncertainty(k_star: f64, k_classes: usize) -> f64 {
    k_star / k_classes as f64
}

/// Marginal coverage interval `[1-alpha, 1-alpha + 1/(1+N)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageBound {
    pub lower: f64,
    pub upper: f64,
}

impl CoverageBound {
    pub fn contains(&self, coverage: f64) -> bool {
        coverage >= self.lower && coverage <= self.upper
    }

    /// Interval widened by `tol` on both sides.
    pub fn widened(&self, tol: f64) -> Self {
        Self {
            lower: self.lower - tol,
            upper: self.upper + tol,
        }
    }
}

impl fmt::Display for CoverageBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.6}, {:.6}]", self.lower, self.upper)
    }
}

pub fn coverage_bound(alpha: f64, n_calib: usize) -> CoverageBound {
    let lower = 1.0 - alpha;
    CoverageBound {
        lower,
        upper: lower + 1.0 / (1.0 + n_calib as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::validate_scores;
    use proptest::prelude::*;

    const ROW: [f64; 3] = [0.5, 0.3, 0.2];

    fn labeled(rows: &[Vec<f64>], labels: Vec<usize>) -> LabeledScores {
        LabeledScores::new(validate_scores(rows).unwrap(), labels).unwrap()
    }

    /// Enumerates every permutation of `0..k`.
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn aps_examples() {
        assert!((aps_score(&ROW, 1).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(aps_score(&ROW, 0).unwrap(), 0.5);
        assert!(matches!(
            aps_score(&ROW, 3),
            Err(ConformalError::LabelOutOfRange { label: 3, k: 3 })
        ));
    }

    #[test]
    fn uniform_row_tie_break_by_index() {
        let row = [0.25; 4];
        // Among all orderings of tied classes, exactly those that put class 3
        // last give it score 1.0; lowest-index tie-break is one of them.
        let perms = permutations(4);
        let lowest_first: Vec<usize> = perms
            .iter()
            .find(|p| p.windows(2).all(|w| w[0] < w[1]))
            .unwrap()
            .clone();
        let rank = lowest_first.iter().position(|&c| c == 3).unwrap();
        let oracle: f64 = lowest_first[..=rank].iter().map(|&c| row[c]).sum();
        assert_eq!(oracle, 1.0);
        assert_eq!(aps_score(&row, 3).unwrap(), oracle);
        assert_eq!(aps_score(&row, 0).unwrap(), 0.25);
    }

    #[test]
    fn raps_examples() {
        assert!((raps_score(&ROW, 1, 0.1, 1).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(
            raps_score(&ROW, 1, 0.0, 1).unwrap(),
            aps_score(&ROW, 1).unwrap()
        );
        // brute force: sum over ranks 1..=3 of p_(i) + 0.1 * [i > 1]
        let oracle: f64 = (1..=3)
            .map(|i| ROW[i - 1] + if i > 1 { 0.1 } else { 0.0 })
            .sum();
        assert!((raps_score(&ROW, 2, 0.1, 1).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 1.2).abs() < 1e-12);
        assert!(raps_score(&ROW, 0, -0.1, 1).is_err());
        assert!(raps_score(&ROW, 0, 0.1, 0).is_err());
    }

    #[test]
    fn quantile_examples() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        // order-statistic oracle: sort and index
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(quantile_rank(10, 0.5), 6);
        assert_eq!(conformal_quantile(&scores, 0.5).unwrap(), sorted[5]);
        assert_eq!(conformal_quantile(&scores, 1.0).unwrap(), 0.0);
        assert_eq!(quantile_rank(10, 0.05), 11);
        assert_eq!(conformal_quantile(&scores, 0.05).unwrap(), f64::INFINITY);
        assert!(matches!(
            conformal_quantile(&[], 0.1),
            Err(ConformalError::EmptyCalibration)
        ));
        assert!(conformal_quantile(&scores, 1.5).is_err());
    }

    #[test]
    fn decimal_alpha_rank() {
        assert_eq!(quantile_rank(1000, 0.1), 901);
        assert_eq!(quantile_rank(9, 0.1), 9);
        assert_eq!(quantile_rank(99, 0.1), 90);
        assert_eq!(quantile_rank(1, 0.1), 2);
        assert_eq!(quantile_rank(1000, 1.0), 0);
    }

    #[test]
    fn single_one_hot_calibration_yields_sentinel() {
        let cal = labeled(&[vec![0.0, 1.0, 0.0]], vec![1]);
        let c = calibrate(&cal, 0.1, ScoringConfig::Aps).unwrap();
        assert_eq!(c.quantile_rank(), 2);
        assert_eq!(c.q_hat(), f64::INFINITY);
        assert_eq!(c.predict(&ROW).unwrap().k_star(), 3);
    }

    #[test]
    fn alpha_one_gives_zero_threshold_and_empty_sets() {
        let cal = labeled(&[vec![0.2, 0.8], vec![0.6, 0.4]], vec![0, 0]);
        let c = calibrate(&cal, 1.0, ScoringConfig::Aps).unwrap();
        assert_eq!(c.q_hat(), 0.0);
        let set = c.predict(&[0.5, 0.5]).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.uncertainty(), 0.0);
    }

    #[test]
    fn predict_examples() {
        let c = Calibrator {
            alpha: 0.1,
            config: ScoringConfig::Aps,
            q_hat: 0.85,
            n_calib: 100,
            k_classes: 3,
        };
        let set = c.predict(&ROW).unwrap();
        assert_eq!(set.members(), &[0, 1]);
        assert_eq!(set.k_star(), 2);
        assert_eq!(set.uncertainty(), 2.0 / 3.0);
        assert!(matches!(
            c.predict(&[0.5, 0.5]),
            Err(ConformalError::ClassCountMismatch {
                expected: 3,
                found: 2
            })
        ));
        let full = Calibrator {
            q_hat: f64::INFINITY,
            ..c
        };
        let set = full.predict(&[0.1, 0.2, 0.7]).unwrap();
        assert_eq!(set.members(), &[2, 1, 0]);
        assert_eq!(set.uncertainty(), 1.0);
    }

    #[test]
    fn uncertainty_mapping_matches_reported_tables() {
        assert!((set_uncertainty(2.84, 7) - 0.40).abs() < 0.01);
        assert!((set_uncertainty(5.54, 7) - 0.79).abs() < 0.01);
        assert_eq!(set_uncertainty(7.0, 7), 1.0);
        assert_eq!(set_uncertainty(0.0, 7), 0.0);
    }

    #[test]
    fn coverage_bound_examples() {
        let b = coverage_bound(0.1, 1000);
        assert_eq!(b.lower, 0.9);
        assert!((b.upper - (0.9 + 1.0 / 1001.0)).abs() < 1e-15);
        let b = coverage_bound(0.0, 9);
        assert_eq!((b.lower, b.upper), (1.0, 1.1));
        let b = coverage_bound(1.0, 9);
        assert_eq!((b.lower, b.upper), (0.0, 0.1));
    }

    #[test]
    fn record_round_trip_and_rejections() {
        let c = Calibrator {
            alpha: 0.1,
            config: ScoringConfig::Raps {
                lambda: 0.1,
                k_reg: 2,
            },
            q_hat: 0.934_567_123_456_789,
            n_calib: 1000,
            k_classes: 7,
        };
        assert_eq!(Calibrator::from_record(&c.to_record()).unwrap(), c);

        let inf = Calibrator {
            alpha: 0.05,
            config: ScoringConfig::Aps,
            q_hat: f64::INFINITY,
            n_calib: 10,
            k_classes: 3,
        };
        let rec = inf.to_record();
        assert!(rec.contains("q_hat=inf"));
        let back = Calibrator::from_record(&rec).unwrap();
        assert_eq!(back.q_hat(), f64::INFINITY);
        assert_eq!(back.predict(&ROW).unwrap().k_star(), 3);

        let neg = c.to_record().replace("lambda=0.1", "lambda=-0.1");
        assert!(matches!(
            Calibrator::from_record(&neg),
            Err(ConformalError::CorruptRecord(_))
        ));
        let bad_variant = c.to_record().replace("variant=raps", "variant=lac");
        assert!(matches!(
            Calibrator::from_record(&bad_variant),
            Err(ConformalError::CorruptRecord(_))
        ));
        let v2 = c.to_record().replace("version=1", "version=2");
        assert!(matches!(
            Calibrator::from_record(&v2),
            Err(ConformalError::VersionMismatch { .. })
        ));
        let aps_with_lambda = inf.to_record() + "lambda=0.1\n";
        assert!(Calibrator::from_record(&aps_with_lambda).is_err());
        let inconsistent = inf.to_record().replace("q_hat=inf", "q_hat=0.5");
        assert!(Calibrator::from_record(&inconsistent).is_err());
        let missing = c.to_record().replace("n_calib=1000\n", "");
        assert!(Calibrator::from_record(&missing).is_err());
        let dup = c.to_record() + "alpha=0.1\n";
        assert!(Calibrator::from_record(&dup).is_err());
    }

    fn prob_row(max_k: usize) -> impl Strategy<Value = Vec<f64>> {
        (2..=max_k)
            .prop_flat_map(|k| prop::collection::vec(0.001f64..1.0, k))
            .prop_map(|v| {
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            })
    }

    fn row_and_label(max_k: usize) -> impl Strategy<Value = (Vec<f64>, usize)> {
        prob_row(max_k).prop_flat_map(|r| {
            let k = r.len();
            (Just(r), 0..k)
        })
    }

    /// Longest prefix of the sorted row with running score <= q, found by
    /// trying every prefix length independently.
    fn brute_force_set(row: &[f64], q: f64, lambda: f64, k_reg: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let mut best = 0;
        for len in 1..=row.len() {
            let mut s = 0.0;
            for (i, &c) in idx[..len].iter().enumerate() {
                s += row[c];
                s += if i + 1 > k_reg { lambda } else { 0.0 };
            }
            if s <= q {
                best = len;
            } else {
                break;
            }
        }
        idx[..best].to_vec()
    }

    proptest! {
        #[test]
        fn raps_with_zero_lambda_is_aps((row, y) in row_and_label(8), k_reg in 1usize..6) {
            prop_assert_eq!(
                raps_score(&row, y, 0.0, k_reg).unwrap().to_bits(),
                aps_score(&row, y).unwrap().to_bits()
            );
        }

        #[test]
        fn raps_dominates_aps((row, y) in row_and_label(8), lambda in 0.001f64..1.0, k_reg in 1usize..6) {
            let aps = aps_score(&row, y).unwrap();
            let raps = raps_score(&row, y, lambda, k_reg).unwrap();
            let rank = rank_order(&row).iter().position(|&c| c == y).unwrap() + 1;
            if rank <= k_reg {
                prop_assert_eq!(raps, aps);
            } else {
                prop_assert!(raps > aps);
            }
        }

        #[test]
        fn quantile_non_increasing_in_alpha(
            scores in prop::collection::vec(0.0f64..2.0, 1..60),
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(conformal_quantile(&scores, lo).unwrap() >= conformal_quantile(&scores, hi).unwrap());
        }

        #[test]
        fn sets_are_nested_in_alpha(
            cal in prop::collection::vec(row_and_label(5), 1..40).prop_filter("same K", |v| v.iter().all(|(r, _)| r.len() == v[0].0.len())),
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
            raps in any::<bool>(),
        ) {
            let k = cal[0].0.len();
            let rows: Vec<Vec<f64>> = cal.iter().map(|(r, _)| r.clone()).collect();
            let labels = cal.iter().map(|(_, y)| *y).collect();
            let data = labeled(&rows, labels);
            let cfg = if raps { ScoringConfig::Raps { lambda: 0.05, k_reg: 1 } } else { ScoringConfig::Aps };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let wide = calibrate(&data, lo, cfg).unwrap();
            let narrow = calibrate(&data, hi, cfg).unwrap();
            for row in data.scores().rows() {
                let w = wide.predict(row).unwrap();
                let n = narrow.predict(row).unwrap();
                prop_assert!(n.members().iter().all(|m| w.contains(*m)));
                let u = w.uncertainty() * k as f64;
                prop_assert_eq!(u.round(), u);
            }
        }

        #[test]
        fn predict_matches_prefix_enumeration(
            row in prob_row(5),
            q in 0.0f64..1.6,
            raps in any::<bool>(),
        ) {
            let (cfg, lambda, k_reg) = if raps {
                (ScoringConfig::Raps { lambda: 0.1, k_reg: 2 }, 0.1, 2)
            } else {
                (ScoringConfig::Aps, 0.0, 1)
            };
            let c = Calibrator { alpha: 0.1, config: cfg, q_hat: q, n_calib: 10, k_classes: row.len() };
            let set = c.predict(&row).unwrap();
            let expected = brute_force_set(&row, q, lambda, k_reg);
            prop_assert_eq!(set.members(), expected.as_slice());
        }

        #[test]
        fn label_in_set_iff_score_below_threshold((row, y) in row_and_label(6), q in 0.0f64..1.5) {
            let c = Calibrator { alpha: 0.1, config: ScoringConfig::Aps, q_hat: q, n_calib: 10, k_classes: row.len() };
            let s = aps_score(&row, y).unwrap();
            prop_assert_eq!(c.predict(&row).unwrap().contains(y), s <= q);
        }

        #[test]
        fn record_round_trips_bit_exactly(
            alpha in 0.0f64..=1.0,
            n in 1usize..5000,
            lambda in 0.0f64..2.0,
            k_reg in 1usize..10,
            q in 0.0f64..3.0,
            raps in any::<bool>(),
        ) {
            let rank = quantile_rank(n, alpha);
            let q_hat = if rank > n as i64 { f64::INFINITY } else if rank <= 0 { 0.0 } else { q };
            let config = if raps { ScoringConfig::Raps { lambda, k_reg } } else { ScoringConfig::Aps };
            let c = Calibrator { alpha, config, q_hat, n_calib: n, k_classes: 7 };
            let back = Calibrator::from_record(&c.to_record()).unwrap();
            prop_assert_eq!(back.alpha.to_bits(), c.alpha.to_bits());
            prop_assert_eq!(back.q_hat.to_bits(), c.q_hat.to_bits());
            prop_assert_eq!(back, c);
        }
    }
}
