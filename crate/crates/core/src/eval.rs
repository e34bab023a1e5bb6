//! Coverage, correctness-stratified uncertainty, set-size statistics, sweeps
//! over alpha and calibration size, histograms, and the three-method
//! comparison.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{edl_summarize, mcd_summarize};
use crate::conformal::{calibrate, calibration_scores, Calibrator, PredictionSet, ScoringConfig};
use crate::error::EvalError;
use crate::scores::{predicted_label, EvidenceVector, LabeledScores, SampleStack};
use crate::synth::substream;

const DOMAIN_SPLIT: u64 = 0x7370_6c74;

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), EvalError> {
    if expected != found {
        return Err(EvalError::LengthMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

/// Fraction of samples whose label lies in its set. Empty sets are misses.
pub fn empirical_coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64, EvalError> {
    check_len("labels", sets.len(), labels.len())?;
    if sets.is_empty() {
        return Ok(0.0);
    }
    let hits = sets
        .iter()
        .zip(labels)
        .filter(|(s, &y)| s.contains(y))
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

/// Uncertainty summary split by whether the argmax prediction was right.
///
/// Means and standard deviations are population statistics; a group with no
/// members reports NaN for both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedStats {
    pub mean_correct: f64,
    pub std_correct: f64,
    pub mean_wrong: f64,
    pub std_wrong: f64,
    pub n_correct: usize,
    pub n_wrong: usize,
    pub excluded_empty: usize,
}

impl StratifiedStats {
    pub fn n_total(&self) -> usize {
        self.n_correct + self.n_wrong + self.excluded_empty
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    // offset by the first value so constant inputs come back exactly
    let n = values.len() as f64;
    let base = values[0];
    let mean = base + values.iter().map(|v| v - base).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn stratify_uncertainty(
    uncertainties: &[f64],
    predicted_labels: &[usize],
    true_labels: &[usize],
    empty_mask: &[bool],
) -> Result<StratifiedStats, EvalError> {
    let n = uncertainties.len();
    check_len("predicted_labels", n, predicted_labels.len())?;
    check_len("true_labels", n, true_labels.len())?;
    check_len("empty_mask", n, empty_mask.len())?;
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    let mut excluded_empty = 0;
    for i in 0..n {
        if empty_mask[i] {
            excluded_empty += 1;
        } else if predicted_labels[i] == true_labels[i] {
            correct.push(uncertainties[i]);
        } else {
            wrong.push(uncertainties[i]);
        }
    }
    let (mean_correct, std_correct) = mean_std(&correct);
    let (mean_wrong, std_wrong) = mean_std(&wrong);
    Ok(StratifiedStats {
        mean_correct,
        std_correct,
        mean_wrong,
        std_wrong,
        n_correct: correct.len(),
        n_wrong: wrong.len(),
        excluded_empty,
    })
}

/// Mean set size over correctly classified, misclassified and all samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetSizeStats {
    pub c_correct: f64,
    pub c_wrong: f64,
    pub c_average: f64,
}

pub fn set_size_stats(
    sets: &[PredictionSet],
    predicted_labels: &[usize],
    true_labels: &[usize],
) -> Result<SetSizeStats, EvalError> {
    check_len("predicted_labels", sets.len(), predicted_labels.len())?;
    check_len("true_labels", sets.len(), true_labels.len())?;
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for ((s, &p), &y) in sets.iter().zip(predicted_labels).zip(true_labels) {
        let size = s.k_star() as f64;
        if p == y {
            correct.push(size);
        } else {
            wrong.push(size);
        }
    }
    let all: Vec<f64> = sets.iter().map(|s| s.k_star() as f64).collect();
    Ok(SetSizeStats {
        c_correct: mean_std(&correct).0,
        c_wrong: mean_std(&wrong).0,
        c_average: mean_std(&all).0,
    })
}

/// Singleton / multi-label / empty split of a batch of sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SetCounts {
    pub certain: usize,
    pub uncertain: usize,
    pub empty: usize,
}

impl SetCounts {
    pub fn tally(sets: &[PredictionSet]) -> Self {
        let mut c = SetCounts::default();
        for s in sets {
            match s.k_star() {
                0 => c.empty += 1,
                1 => c.certain += 1,
                _ => c.uncertain += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.certain + self.uncertain + self.empty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweepPoint {
    pub alpha: f64,
    pub q_hat: f64,
    pub counts: SetCounts,
    pub coverage: f64,
}

fn check_grid(grid: &[f64]) -> Result<(), EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if let Some(i) = grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(EvalError::GridNotIncreasing(i + 1));
    }
    Ok(())
}

/// Recalibrates at every alpha and tallies the resulting test sets.
pub fn alpha_sweep(
    cal: &LabeledScores,
    test: &LabeledScores,
    alphas: &[f64],
    config: ScoringConfig,
) -> Result<Vec<AlphaSweepPoint>, EvalError> {
    check_grid(alphas)?;
    let scores = calibration_scores(cal, &config)?;
    alphas
        .par_iter()
        .map(|&alpha| {
            let c = Calibrator::from_scores(&scores, alpha, config, cal.k_classes())?;
            let sets = c.predict_all(test.scores())?;
            Ok(AlphaSweepPoint {
                alpha,
                q_hat: c.q_hat(),
                counts: SetCounts::tally(&sets),
                coverage: empirical_coverage(&sets, test.labels())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSizePoint {
    pub n_calib: usize,
    pub mean_coverage: f64,
    /// Population standard deviation across resamples.
    pub std_coverage: f64,
    pub min_coverage: f64,
    pub max_coverage: f64,
    pub resamples: usize,
}

/// Random disjoint calibration/test split number `resample` for `size`.
pub fn split_indices(
    pool: usize,
    n_calib: usize,
    n_test: usize,
    seed: u64,
    tag: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..pool).collect();
    let mut rng = substream(seed, DOMAIN_SPLIT, tag);
    let (head, _) = idx.partial_shuffle(&mut rng, n_calib + n_test);
    let cal = head[..n_calib].to_vec();
    let test = head[n_calib..].to_vec();
    (cal, test)
}

/// Empirical coverage over `resamples` random splits for every calibration size.
///
/// Resample `r` of the `j`-th size uses split stream `j * resamples + r`, so
/// results do not depend on scheduling.
pub fn calibration_size_sweep(
    pool: &LabeledScores,
    sizes: &[usize],
    test_size: usize,
    resamples: usize,
    alpha: f64,
    config: ScoringConfig,
    seed: u64,
) -> Result<Vec<CalibSizePoint>, EvalError> {
    let as_f: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    check_grid(&as_f)?;
    if resamples < 2 {
        return Err(EvalError::TooFewResamples(resamples));
    }
    let largest = *sizes.last().unwrap();
    if sizes[0] == 0 || test_size == 0 || largest + test_size > pool.len() {
        return Err(EvalError::InsufficientPool {
            pool: pool.len(),
            calib: largest,
            test: test_size,
        });
    }
    let jobs: Vec<(usize, usize)> = (0..sizes.len())
        .flat_map(|j| (0..resamples).map(move |r| (j, r)))
        .collect();
    let coverages: Vec<f64> = jobs
        .par_iter()
        .map(|&(j, r)| {
            let tag = (j * resamples + r) as u64;
            let (cal_idx, test_idx) = split_indices(pool.len(), sizes[j], test_size, seed, tag);
            let cal = pool.select(&cal_idx);
            let test = pool.select(&test_idx);
            let c = calibrate(&cal, alpha, config)?;
            let sets = c.predict_all(test.scores())?;
            empirical_coverage(&sets, test.labels())
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(sizes
        .iter()
        .zip(coverages.chunks_exact(resamples))
        .map(|(&n_calib, cov)| {
            let (mean, std) = mean_std(cov);
            CalibSizePoint {
                n_calib,
                mean_coverage: mean,
                std_coverage: std,
                min_coverage: cov.iter().copied().fold(f64::INFINITY, f64::min),
                max_coverage: cov.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                resamples,
            }
        })
        .collect())
}

/// Equal-width bins over `[0, 1]`; every bin is `[lo, hi)` except the last,
/// which also takes 1.0.
pub fn histogram(values: &[f64], n_bins: usize) -> Result<Vec<usize>, EvalError> {
    if n_bins == 0 {
        return Err(EvalError::NoBins);
    }
    let mut counts = vec![0; n_bins];
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::ValueOutOfRange(v));
        }
        let bin = ((v * n_bins as f64).floor() as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

/// Per-sample uncertainty from each method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleUncertainty {
    pub cp: f64,
    pub mcd: f64,
    pub edl: f64,
    pub correct: bool,
    pub empty_set: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub cp: StratifiedStats,
    pub mcd: StratifiedStats,
    pub edl: StratifiedStats,
    pub samples: Vec<SampleUncertainty>,
}

/// Runs set-size CP, predicted-class MCD variance and `K/S` EDL uncertainty
/// over the same samples. Correctness is judged by the argmax of `data`.
pub fn compare_methods(
    data: &LabeledScores,
    stacks: &[SampleStack],
    evidence: &[EvidenceVector],
    calibrator: &Calibrator,
) -> Result<MethodComparison, EvalError> {
    let n = data.len();
    let k = data.k_classes();
    if stacks.len() != n || evidence.len() != n {
        return Err(EvalError::AlignmentMismatch(format!(
            "{n} samples, {} stacks, {} evidence vectors",
            stacks.len(),
            evidence.len()
        )));
    }
    if let Some(i) = stacks.iter().position(|s| s.k_classes() != k) {
        return Err(EvalError::AlignmentMismatch(format!(
            "stack {i} has the wrong class count"
        )));
    }
    if let Some(i) = evidence.iter().position(|e| e.k_classes() != k) {
        return Err(EvalError::AlignmentMismatch(format!(
            "evidence {i} has the wrong class count"
        )));
    }
    let sets = calibrator.predict_all(data.scores())?;
    let samples: Vec<SampleUncertainty> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mcd = mcd_summarize(&stacks[i])?.uncertainty;
            let edl = edl_summarize(&evidence[i]).uncertainty;
            Ok(SampleUncertainty {
                cp: sets[i].uncertainty(),
                mcd,
                edl,
                correct: predicted_label(data.scores().row(i)) == data.labels()[i],
                empty_set: sets[i].is_empty(),
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let predicted = data.scores().predicted_labels();
    let labels = data.labels();
    let no_mask = vec![false; n];
    let empty: Vec<bool> = samples.iter().map(|s| s.empty_set).collect();
    let pick = |f: fn(&SampleUncertainty) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    Ok(MethodComparison {
        cp: stratify_uncertainty(&pick(|s| s.cp), &predicted, labels, &empty)?,
        mcd: stratify_uncertainty(&pick(|s| s.mcd), &predicted, labels, &no_mask)?,
        edl: stratify_uncertainty(&pick(|s| s.edl), &predicted, labels, &no_mask)?,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{validate_scores, ScoreMatrix};

    fn set(m: &[usize], k: usize) -> PredictionSet {
        PredictionSet::new(m.to_vec(), k).unwrap()
    }

    #[test]
    fn coverage_endpoints() {
        let full: Vec<_> = (0..5).map(|_| set(&[0, 1, 2], 3)).collect();
        let empty: Vec<_> = (0..5).map(|_| set(&[], 3)).collect();
        let labels = [0, 1, 2, 1, 0];
        assert_eq!(empirical_coverage(&full, &labels).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&empty, &labels).unwrap(), 0.0);
        assert!(matches!(
            empirical_coverage(&full, &labels[..3]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn stratify_constant_and_separable() {
        let s = stratify_uncertainty(&[0.3; 4], &[1, 2, 0, 1], &[1, 2, 0, 1], &[false; 4]).unwrap();
        assert_eq!((s.mean_correct, s.std_correct, s.n_wrong), (0.3, 0.0, 0));
        assert!(s.mean_wrong.is_nan());

        let u: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 0.2 } else { 0.8 })
            .collect();
        let pred: Vec<usize> = (0..100).map(|i| if i % 2 == 0 { 1 } else { 0 }).collect();
        let s = stratify_uncertainty(&u, &pred, &[1; 100], &[false; 100]).unwrap();
        assert_eq!(s.mean_correct, 0.2);
        assert_eq!(s.mean_wrong, 0.8);
        assert_eq!(s.n_total(), 100);
    }

    #[test]
    fn stratify_excludes_empty() {
        let s = stratify_uncertainty(
            &[0.0, 0.5, 1.0],
            &[0, 0, 1],
            &[0, 0, 0],
            &[true, false, false],
        )
        .unwrap();
        assert_eq!(s.excluded_empty, 1);
        assert_eq!((s.n_correct, s.n_wrong), (1, 1));
        assert_eq!(s.mean_correct, 0.5);
    }

    #[test]
    fn singleton_set_sizes() {
        let sets: Vec<_> = (0..4).map(|i| set(&[i % 3], 3)).collect();
        let s = set_size_stats(&sets, &[0, 1, 2, 2], &[0, 0, 2, 1]).unwrap();
        assert_eq!((s.c_correct, s.c_wrong, s.c_average), (1.0, 1.0, 1.0));
    }

    #[test]
    fn histogram_conventions() {
        assert_eq!(histogram(&[0.0, 1.0], 2).unwrap(), vec![1, 1]);
        assert_eq!(histogram(&[0.5], 2).unwrap(), vec![0, 1]);
        assert_eq!(histogram(&[0.0, 0.1, 0.9999, 1.0], 1).unwrap(), vec![4]);
        assert!(matches!(
            histogram(&[1.2], 3),
            Err(EvalError::ValueOutOfRange(_))
        ));
        assert!(matches!(
            histogram(&[f64::NAN], 3),
            Err(EvalError::ValueOutOfRange(_))
        ));
        assert!(matches!(histogram(&[0.1], 0), Err(EvalError::NoBins)));
    }

    #[test]
    fn grid_validation() {
        let d = LabeledScores::new(validate_scores(&[[0.5, 0.5]]).unwrap(), vec![0]).unwrap();
        assert!(matches!(
            alpha_sweep(&d, &d, &[0.1, 0.1], ScoringConfig::Aps),
            Err(EvalError::GridNotIncreasing(1))
        ));
        assert!(matches!(
            alpha_sweep(&d, &d, &[], ScoringConfig::Aps),
            Err(EvalError::EmptyGrid)
        ));
        assert!(matches!(
            calibration_size_sweep(&d, &[1], 1, 5, 0.1, ScoringConfig::Aps, 0),
            Err(EvalError::InsufficientPool { .. })
        ));
        assert!(matches!(
            calibration_size_sweep(&d, &[1], 1, 1, 0.1, ScoringConfig::Aps, 0),
            Err(EvalError::TooFewResamples(1))
        ));
    }

    #[test]
    fn split_is_disjoint() {
        let (a, b) = split_indices(100, 30, 50, 1, 0);
        assert_eq!(a.len(), 30);
        assert_eq!(b.len(), 50);
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(split_indices(100, 30, 50, 1, 0), (a, b));
    }

    #[test]
    fn comparison_alignment_is_checked() {
        let scores = ScoreMatrix::from_rows(&[[0.6, 0.4], [0.3, 0.7]]).unwrap();
        let d = LabeledScores::new(scores, vec![0, 0]).unwrap();
        let c = calibrate(&d, 0.5, ScoringConfig::Aps).unwrap();
        let ev = vec![EvidenceVector::new(vec![1.0, 1.0]).unwrap()];
        assert!(matches!(
            compare_methods(&d, &[], &ev, &c),
            Err(EvalError::AlignmentMismatch(_))
        ));
    }
}
