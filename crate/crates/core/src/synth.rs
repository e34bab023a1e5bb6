//! Seeded synthetic classifier: labelled score rows, dropout stacks, evidence
//! vectors and score-space covariate shift.
//!
//! Every sample draws from its own ChaCha stream keyed by (seed, purpose,
//! sample index), so output is identical regardless of how many threads
//! generate it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SynthError;
use crate::scores::{EvidenceVector, LabeledScores, SampleStack, ScoreMatrix};

const DOMAIN_GENERATE: u64 = 0x6765_6e65;
const DOMAIN_SHIFT: u64 = 0x7368_6966;
const DOMAIN_MCD: u64 = 0x6d63_6464;

/// Independent generator for one (seed, purpose, index) triple.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub k_classes: usize,
    /// Symmetric Dirichlet concentration of the base score vector.
    pub concentration: f64,
    /// Mass added to the true class before renormalizing.
    pub signal: f64,
    pub seed: u64,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.k_classes < 2 {
            return Err(SynthError::invalid(
                "k",
                self.k_classes,
                "need at least 2 classes",
            ));
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return Err(SynthError::invalid(
                "concentration",
                self.concentration,
                "must be finite and > 0",
            ));
        }
        if !(self.signal.is_finite() && self.signal >= 0.0) {
            return Err(SynthError::invalid(
                "signal",
                self.signal,
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

/// Draws `n` labelled rows from the oracle.
pub fn generate(config: &OracleConfig, n: usize) -> Result<LabeledScores, SynthError> {
    config.validate()?;
    if n == 0 {
        return Err(SynthError::invalid("n", n, "must be >= 1"));
    }
    let k = config.k_classes;
    let gamma = Gamma::new(config.concentration, 1.0).map_err(|_| {
        SynthError::invalid(
            "concentration",
            config.concentration,
            "rejected by gamma sampler",
        )
    })?;
    let rows: Vec<(Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(config.seed, DOMAIN_GENERATE, i as u64);
            let label = rng.random_range(0..k);
            let mut w: Vec<f64> = (0..k)
                .map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE))
                .collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            w[label] += config.signal;
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (w, label)
        })
        .collect();
    let mut flat = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for (row, label) in rows {
        flat.extend(row);
        labels.push(label);
    }
    let scores = ScoreMatrix::from_flat(k, flat)?;
    Ok(LabeledScores::new(scores, labels)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    /// Rows become `p^(1/temperature)`, renormalized; values above 1 flatten.
    pub temperature: f64,
    /// Probability of replacing a row's label with a uniform draw.
    pub label_corruption: f64,
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(SynthError::invalid(
                "temperature",
                self.temperature,
                "must be finite and > 0",
            ));
        }
        if !(0.0..=1.0).contains(&self.label_corruption) {
            return Err(SynthError::invalid(
                "label_corruption",
                self.label_corruption,
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Tempers one probability row.
pub fn temper_row(row: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return row.to_vec();
    }
    let logs: Vec<f64> = row.iter().map(|p| p.ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Applies a score-space covariate shift (and optional label corruption).
pub fn shift(
    data: &LabeledScores,
    shift: &ShiftConfig,
    seed: u64,
) -> Result<LabeledScores, SynthError> {
    shift.validate()?;
    let k = data.k_classes();
    let rows: Vec<(Vec<f64>, usize)> = data
        .scores()
        .as_flat()
        .par_chunks_exact(k)
        .zip(data.labels().par_iter())
        .enumerate()
        .map(|(i, (row, &label))| {
            let mut label = label;
            if shift.label_corruption > 0.0 {
                let mut rng = substream(seed, DOMAIN_SHIFT, i as u64);
                if rng.random::<f64>() < shift.label_corruption {
                    label = rng.random_range(0..k);
                }
            }
            (temper_row(row, shift.temperature), label)
        })
        .collect();
    let mut flat = Vec::with_capacity(data.len() * k);
    let mut labels = Vec::with_capacity(data.len());
    for (row, label) in rows {
        flat.extend(row);
        labels.push(label);
    }
    Ok(LabeledScores::new(
        ScoreMatrix::from_flat(k, flat)?,
        labels,
    )?)
}

fn check_stack_params(passes: usize, jitter: f64) -> Result<(), SynthError> {
    if passes == 0 {
        return Err(SynthError::invalid("passes", passes, "must be >= 1"));
    }
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(SynthError::invalid(
            "jitter",
            jitter,
            "must be finite and >= 0",
        ));
    }
    Ok(())
}

fn jittered_stack(
    row: &[f64],
    passes: usize,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampleStack, SynthError> {
    let k = row.len();
    let mut flat = Vec::with_capacity(passes * k);
    if jitter == 0.0 {
        for _ in 0..passes {
            flat.extend_from_slice(row);
        }
    } else {
        let logits: Vec<f64> = row.iter().map(|p| p.ln()).collect();
        for _ in 0..passes {
            let noisy: Vec<f64> = logits
                .iter()
                .map(|&l| {
                    let z: f64 = StandardNormal.sample(rng);
                    l + jitter * z
                })
                .collect();
            let max = noisy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = noisy.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = w.iter().sum();
            flat.extend(w.iter().map(|v| v / total));
        }
    }
    Ok(SampleStack::new(ScoreMatrix::from_flat(k, flat)?))
}

/// `passes` copies of `row` with Gaussian logit noise of scale `jitter`.
pub fn generate_mcd_stack(
    row: &[f64],
    passes: usize,
    jitter: f64,
    seed: u64,
) -> Result<SampleStack, SynthError> {
    check_stack_params(passes, jitter)?;
    let row = ScoreMatrix::from_rows(&[row])?;
    jittered_stack(
        row.row(0),
        passes,
        jitter,
        &mut substream(seed, DOMAIN_MCD, 0),
    )
}

/// One dropout stack per row of `scores`, each on its own substream.
pub fn generate_mcd_stacks(
    scores: &ScoreMatrix,
    passes: usize,
    jitter: f64,
    seed: u64,
) -> Result<Vec<SampleStack>, SynthError> {
    check_stack_params(passes, jitter)?;
    scores
        .as_flat()
        .par_chunks_exact(scores.k_classes())
        .enumerate()
        .map(|(i, row)| {
            jittered_stack(
                row,
                passes,
                jitter,
                &mut substream(seed, DOMAIN_MCD, i as u64),
            )
        })
        .collect()
}

/// Evidence `e_k = scale * p_k` for every row.
pub fn generate_evidence(
    data: &LabeledScores,
    scale: f64,
) -> Result<Vec<EvidenceVector>, SynthError> {
    evidence_from_scores(data.scores(), scale)
}

pub fn evidence_from_scores(
    scores: &ScoreMatrix,
    scale: f64,
) -> Result<Vec<EvidenceVector>, SynthError> {
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(SynthError::invalid(
            "scale",
            scale,
            "must be finite and >= 0",
        ));
    }
    scores
        .rows()
        .map(|row| {
            EvidenceVector::new(row.iter().map(|p| scale * p).collect()).map_err(SynthError::from)
        })
        .collect()
}
