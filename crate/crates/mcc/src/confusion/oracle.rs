//! Scalar-loop reference implementation of the confusion pipeline.
//!
//! Written straight from the formulas with nested `Vec<f64>` rows and no
//! shared numerics with the tape (no stabilized softmax, no matrix type),
//! so a bug would have to be made twice to slip past the comparison tests.

use super::MccToggles;

#[derive(Debug, Clone)]
pub struct OracleOutputs {
    pub probs: Vec<Vec<f64>>,
    pub entropy: Vec<f64>,
    pub weights: Vec<f64>,
    pub confusion: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
    pub loss: f64,
}

fn softmax_naive(logits: &[Vec<f64>], temperature: f64) -> Vec<Vec<f64>> {
    logits
        .iter()
        .map(|row| {
            let exps: Vec<f64> = row.iter().map(|z| (z / temperature).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.iter().map(|e| e / total).collect()
        })
        .collect()
}

fn row_entropy(probs: &[Vec<f64>]) -> Vec<f64> {
    probs
        .iter()
        .map(|row| -row.iter().map(|&p| p * p.max(1e-12).ln()).sum::<f64>())
        .collect()
}

fn uncertainty_weights(entropy: &[f64]) -> Vec<f64> {
    let batch = entropy.len() as f64;
    let raw: Vec<f64> = entropy.iter().map(|h| 1.0 + (-h).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| batch * r / total).collect()
}

fn weighted_confusion(probs: &[Vec<f64>], weights: &[f64]) -> Vec<Vec<f64>> {
    let classes = probs[0].len();
    let mut c = vec![vec![0.0; classes]; classes];
    for (row, &w) in probs.iter().zip(weights) {
        for j in 0..classes {
            for jp in 0..classes {
                c[j][jp] += w * row[j] * row[jp];
            }
        }
    }
    c
}

fn row_normalize(confusion: &[Vec<f64>]) -> Vec<Vec<f64>> {
    confusion
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum::<f64>().max(1e-12);
            row.iter().map(|v| v / total).collect()
        })
        .collect()
}

fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let classes = m.len();
    let mut total = 0.0;
    for (j, row) in m.iter().enumerate() {
        for (jp, &v) in row.iter().enumerate() {
            if j != jp {
                total += v.abs();
            }
        }
    }
    total / classes as f64
}

/// Full pipeline on one batch of logits.
pub fn mcc_loss_oracle(logits: &[Vec<f64>], temperature: f64, toggles: MccToggles) -> OracleOutputs {
    let t = if toggles.probability_rescaling {
        temperature
    } else {
        1.0
    };
    let probs = softmax_naive(logits, t);
    let entropy = row_entropy(&probs);
    let weights = if toggles.uncertainty_reweighting {
        uncertainty_weights(&entropy)
    } else {
        vec![1.0; probs.len()]
    };
    let confusion = weighted_confusion(&probs, &weights);
    let normalized = row_normalize(&confusion);
    let loss = if toggles.category_normalization {
        mean_off_diagonal(&normalized)
    } else {
        mean_off_diagonal(&confusion)
    };
    OracleOutputs {
        probs,
        entropy,
        weights,
        confusion,
        normalized,
        loss,
    }
}

/// Pipeline with externally fixed row weights. This is the probe used to
/// finite-difference the loss when the analytic gradient treats the weights
/// as constants.
pub fn mcc_loss_frozen_weights(
    logits: &[Vec<f64>],
    temperature: f64,
    weights: &[f64],
    toggles: MccToggles,
) -> f64 {
    let t = if toggles.probability_rescaling {
        temperature
    } else {
        1.0
    };
    let probs = softmax_naive(logits, t);
    let confusion = weighted_confusion(&probs, weights);
    if toggles.category_normalization {
        mean_off_diagonal(&row_normalize(&confusion))
    } else {
        mean_off_diagonal(&confusion)
    }
}

/// Mean cross-entropy against integer labels.
pub fn cross_entropy_oracle(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let probs = softmax_naive(logits, 1.0);
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(row, &label)| -row[label].max(1e-12).ln())
        .sum();
    total / logits.len() as f64
}

/// Mean prediction entropy.
pub fn mean_entropy_oracle(logits: &[Vec<f64>], temperature: f64) -> f64 {
    let probs = softmax_naive(logits, temperature);
    row_entropy(&probs).iter().sum::<f64>() / logits.len() as f64
}
