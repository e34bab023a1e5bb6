//! Monte Carlo dropout aggregation and evidential (Dirichlet) uncertainty.

use serde::{Deserialize, Serialize};

use crate::error::BaselineError;
use crate::scores::{predicted_label, EvidenceVector, SampleStack};
use crate::special::{digamma, ln_gamma, trigamma};

/// Mean and per-class population variance over T stochastic passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Variance of the class with the highest mean probability.
    pub uncertainty: f64,
}

/// Aggregates a stack of dropout passes.
///
/// The mean is taken relative to the first pass so a constant stack yields
/// that row back exactly, with zero variance.
pub fn mcd_summarize(stack: &SampleStack) -> Result<McdSummary, BaselineError> {
    let t = stack.n_passes();
    if t == 0 {
        return Err(BaselineError::EmptyStack);
    }
    let k = stack.k_classes();
    let first = stack.pass(0);
    let mut shift = vec![0.0; k];
    for pass in stack.passes() {
        for (s, (&v, &f)) in shift.iter_mut().zip(pass.iter().zip(first)) {
            *s += v - f;
        }
    }
    let tf = t as f64;
    let mean: Vec<f64> = first
        .iter()
        .zip(&shift)
        .map(|(&f, &s)| f + s / tf)
        .collect();
    let mut variance = vec![0.0; k];
    for pass in stack.passes() {
        for (var, (&v, &m)) in variance.iter_mut().zip(pass.iter().zip(&mean)) {
            let d = v - m;
            *var += d * d;
        }
    }
    variance.iter_mut().for_each(|v| *v /= tf);
    let uncertainty = variance[predicted_label(&mean)];
    Ok(McdSummary {
        mean,
        variance,
        uncertainty,
    })
}

/// Belief masses, uncertainty and Dirichlet expectation for one evidence vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdlSummary {
    pub belief: Vec<f64>,
    /// `K / S`.
    pub uncertainty: f64,
    pub dirichlet_alpha: Vec<f64>,
    pub strength: f64,
    pub expected_probs: Vec<f64>,
}

pub fn edl_summarize(e: &EvidenceVector) -> EdlSummary {
    let alpha = e.dirichlet_alpha();
    let strength: f64 = alpha.iter().sum();
    EdlSummary {
        belief: e.values().iter().map(|v| v / strength).collect(),
        uncertainty: e.k_classes() as f64 / strength,
        expected_probs: alpha.iter().map(|a| a / strength).collect(),
        dirichlet_alpha: alpha,
        strength,
    }
}

/// Validating variant of [`edl_summarize`] for raw evidence.
pub fn edl_summarize_raw(evidence: &[f64]) -> Result<EdlSummary, BaselineError> {
    let e = EvidenceVector::new(evidence.to_vec()).map_err(|_| {
        let class = evidence
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0)
            .unwrap_or(0);
        BaselineError::NegativeEvidence {
            class,
            value: evidence.get(class).copied().unwrap_or(f64::NAN),
        }
    })?;
    Ok(edl_summarize(&e))
}

fn check_alpha(alpha: &[f64], min: f64) -> Result<(), BaselineError> {
    match alpha
        .iter()
        .position(|a| !a.is_finite() || *a < min || *a <= 0.0)
    {
        Some(index) => Err(BaselineError::InvalidAlpha {
            index,
            value: alpha[index],
        }),
        None => Ok(()),
    }
}

/// `ln B(α)^-1 = ln Γ(Σα) - Σ ln Γ(α_k)`.
fn ln_inv_beta(alpha: &[f64]) -> f64 {
    ln_gamma(alpha.iter().sum()) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
}

/// Log density of `Dir(alpha)` at an interior simplex point `p`.
pub fn dirichlet_log_density(p: &[f64], alpha: &[f64]) -> Result<f64, BaselineError> {
    if p.len() != alpha.len() {
        return Err(BaselineError::LengthMismatch {
            left: p.len(),
            right: alpha.len(),
        });
    }
    check_alpha(alpha, 0.0)?;
    if let Some(k) = p.iter().position(|&v| !(v > 0.0)) {
        return Err(BaselineError::BoundaryPoint(k));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(BaselineError::NotOnSimplex(sum));
    }
    let kernel: f64 = p
        .iter()
        .zip(alpha)
        .map(|(&pk, &ak)| (ak - 1.0) * pk.ln())
        .sum();
    Ok(ln_inv_beta(alpha) + kernel)
}

/// `KL[Dir(α̃) || Dir(1)]`, the evidential regularizer.
pub fn edl_kl_to_uniform(alpha_tilde: &[f64]) -> Result<f64, BaselineError> {
    check_alpha(alpha_tilde, 1.0)?;
    Ok(kl_unchecked(alpha_tilde))
}

fn kl_unchecked(alpha_tilde: &[f64]) -> f64 {
    let k = alpha_tilde.len() as f64;
    let total: f64 = alpha_tilde.iter().sum();
    let psi_total = digamma(total);
    let lg: f64 = alpha_tilde.iter().map(|&a| ln_gamma(a)).sum();
    let tail: f64 = alpha_tilde
        .iter()
        .filter(|&&a| a != 1.0)
        .map(|&a| (a - 1.0) * (digamma(a) - psi_total))
        .sum();
    let kl = ln_gamma(total) - ln_gamma(k) - lg + tail;
    kl.max(0.0)
}

/// `α̃ = y + (1-y)·α`: the true-class parameter is reset to 1.
pub fn remove_true_class_evidence(alpha: &[f64], onehot: &[f64]) -> Vec<f64> {
    alpha
        .iter()
        .zip(onehot)
        .map(|(&a, &y)| y + (1.0 - y) * a)
        .collect()
}

fn check_onehot(onehot: &[f64], k: usize) -> Result<(), BaselineError> {
    if onehot.len() != k {
        return Err(BaselineError::LengthMismatch {
            left: k,
            right: onehot.len(),
        });
    }
    let ones = onehot.iter().filter(|&&y| y == 1.0).count();
    let zeros = onehot.iter().filter(|&&y| y == 0.0).count();
    if ones != 1 || ones + zeros != k {
        return Err(BaselineError::InvalidOneHot);
    }
    Ok(())
}

fn check_kl_weight(w: f64) -> Result<(), BaselineError> {
    if !w.is_finite() || w < 0.0 {
        return Err(BaselineError::InvalidKlWeight(w));
    }
    Ok(())
}

/// Evidential MSE loss with the KL regularizer scaled by `kl_weight`.
///
/// `Σ_j (y_j - α_j/S)² + α_j(S-α_j)/(S²(S+1))  +  kl_weight · KL[Dir(α̃) || Dir(1)]`
pub fn edl_loss(
    evidence: &EvidenceVector,
    onehot: &[f64],
    kl_weight: f64,
) -> Result<f64, BaselineError> {
    check_onehot(onehot, evidence.k_classes())?;
    check_kl_weight(kl_weight)?;
    let alpha = evidence.dirichlet_alpha();
    let s: f64 = alpha.iter().sum();
    let mse: f64 = alpha
        .iter()
        .zip(onehot)
        .map(|(&a, &y)| {
            let p = a / s;
            (y - p) * (y - p) + a * (s - a) / (s * s * (s + 1.0))
        })
        .sum();
    let kl = if kl_weight == 0.0 {
        0.0
    } else {
        kl_weight * kl_unchecked(&remove_true_class_evidence(&alpha, onehot))
    };
    Ok(mse + kl)
}

/// Analytic gradient of [`edl_loss`] with respect to the evidence.
pub fn edl_loss_grad(
    evidence: &EvidenceVector,
    onehot: &[f64],
    kl_weight: f64,
) -> Result<Vec<f64>, BaselineError> {
    check_onehot(onehot, evidence.k_classes())?;
    check_kl_weight(kl_weight)?;
    let alpha = evidence.dirichlet_alpha();
    let s: f64 = alpha.iter().sum();
    let p: Vec<f64> = alpha.iter().map(|a| a / s).collect();

    // Loss as a function of p and S: Σ (y-p)² + p(1-p)/(S+1).
    // dp_j/dα_m = (δ_jm - p_j)/S and dS/dα_m = 1.
    let g: Vec<f64> = p
        .iter()
        .zip(onehot)
        .map(|(&pj, &y)| -2.0 * (y - pj) + (1.0 - 2.0 * pj) / (s + 1.0))
        .collect();
    let g_dot_p: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
    let var_sum: f64 = p.iter().map(|pj| pj * (1.0 - pj)).sum();
    let mut grad: Vec<f64> = g
        .iter()
        .map(|&gm| (gm - g_dot_p) / s - var_sum / ((s + 1.0) * (s + 1.0)))
        .collect();

    if kl_weight > 0.0 {
        let at = remove_true_class_evidence(&alpha, onehot);
        let total: f64 = at.iter().sum();
        let excess: f64 = at.iter().map(|a| a - 1.0).sum();
        let tri_total = trigamma(total);
        for ((gm, &a), &y) in grad.iter_mut().zip(&at).zip(onehot) {
            let d_kl = (a - 1.0) * trigamma(a) - tri_total * excess;
            *gm += kl_weight * (1.0 - y) * d_kl;
        }
    }
    Ok(grad)
}
