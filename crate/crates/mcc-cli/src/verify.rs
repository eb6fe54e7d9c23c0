//! Self-check suites behind `mcc verify`: every structural invariant of the
//! loss stack, checked against independent scalar-loop oracles and central
//! finite differences. Each suite prints one line; any failure makes the
//! command exit with the verification code.

use rand::Rng;

use mcc::autodiff::finite_diff::{central_diff, max_rel_err, FD_STEP, GRAD_TOL};
use mcc::autodiff::{Matrix, Tape};
use mcc::confusion::oracle::{
    cross_entropy_oracle, mcc_loss_frozen_weights, mcc_loss_oracle, mean_entropy_oracle,
};
use mcc::confusion::{confusion_forward, cross_entropy, mcc_loss, mean_entropy, MccToggles};
use mcc::rng::stream_rng;

use crate::error::{CliError, Result};

const TEMPERATURES: [f64; 4] = [0.5, 1.0, 2.5, 5.0];

struct Suite {
    name: &'static str,
    run: fn() -> std::result::Result<String, String>,
}

const SUITES: [Suite; 6] = [
    Suite {
        name: "softmax-probabilities",
        run: softmax_probabilities,
    },
    Suite {
        name: "confusion-invariants",
        run: confusion_invariants,
    },
    Suite {
        name: "oracle-equivalence",
        run: oracle_equivalence,
    },
    Suite {
        name: "classifier-losses",
        run: classifier_losses,
    },
    Suite {
        name: "analytic-anchors",
        run: analytic_anchors,
    },
    Suite {
        name: "gradient-checks",
        run: gradient_checks,
    },
];

/// Runs every suite, printing one `ok`/`FAIL` line per suite.
pub fn run_all(quiet: bool) -> Result<()> {
    let mut failures = 0usize;
    for suite in &SUITES {
        match (suite.run)() {
            Ok(detail) => {
                if !quiet {
                    println!("ok   {} ({detail})", suite.name);
                }
            }
            Err(message) => {
                failures += 1;
                println!("FAIL {}: {message}", suite.name);
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Verification(format!(
            "{failures} of {} verification suites failed",
            SUITES.len()
        )));
    }
    Ok(())
}

fn random_logits(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn as_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn toggle_combo(bits: usize) -> MccToggles {
    MccToggles {
        probability_rescaling: bits & 1 != 0,
        uncertainty_reweighting: bits & 2 != 0,
        category_normalization: bits & 4 != 0,
        detach_weights: bits & 8 != 0,
    }
}

/// Temperature-scaled softmax rows are distributions, match the naive
/// exp/normalize formula, and are invariant to constant logit shifts.
fn softmax_probabilities() -> std::result::Result<String, String> {
    let mut rng = stream_rng(11, 0x50f7);
    let mut checked = 0usize;
    for draw in 0..200 {
        let rows = rng.random_range(1..=48);
        let cols = rng.random_range(2..=12);
        let t = TEMPERATURES[draw % TEMPERATURES.len()];
        let logits = random_logits(&mut rng, rows, cols, 6.0);
        let probs = logits.softmax_rows(t).map_err(|e| e.to_string())?;

        for i in 0..rows {
            let row = probs.row(i);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(format!("row sum {sum} at draw {draw}"));
            }
            let mut naive_norm = 0.0;
            for j in 0..cols {
                naive_norm += (logits.get(i, j) / t).exp();
            }
            for j in 0..cols {
                let naive = (logits.get(i, j) / t).exp() / naive_norm;
                if (probs.get(i, j) - naive).abs() > 1e-12 {
                    return Err(format!("softmax disagrees with naive formula at draw {draw}"));
                }
            }
        }

        let shifted = logits.map(|v| v + 37.5);
        let shifted_probs = shifted.softmax_rows(t).map_err(|e| e.to_string())?;
        if probs.max_abs_diff(&shifted_probs).map_err(|e| e.to_string())? > 1e-12 {
            return Err(format!("softmax not shift-invariant at draw {draw}"));
        }
        checked += rows;
    }
    Ok(format!("200 random matrices, {checked} rows"))
}

/// Structural invariants of the confusion pipeline on random batches and
/// random toggle combinations.
fn confusion_invariants() -> std::result::Result<String, String> {
    let mut rng = stream_rng(12, 0xc0f7);
    for draw in 0..200 {
        let rows = rng.random_range(2..=32);
        let cols = rng.random_range(2..=9);
        let t = TEMPERATURES[draw % TEMPERATURES.len()];
        let toggles = toggle_combo(rng.random_range(0..16));
        let logits = random_logits(&mut rng, rows, cols, 5.0);
        confusion_forward(&logits, t, toggles)
            .and_then(|out| out.check_invariants())
            .map_err(|e| format!("draw {draw}: {e}"))?;
    }
    Ok("200 random batches across all toggle combinations".into())
}

/// The taped loss agrees with the independent scalar-loop oracle.
fn oracle_equivalence() -> std::result::Result<String, String> {
    let mut rng = stream_rng(13, 0x0a_c1e);
    let mut worst = 0.0f64;
    for draw in 0..1000 {
        let rows = rng.random_range(2..=64);
        let cols = rng.random_range(2..=12);
        let t = TEMPERATURES[draw % TEMPERATURES.len()];
        let toggles = toggle_combo(draw % 16);
        let logits = random_logits(&mut rng, rows, cols, 5.0);

        let mut tape = Tape::new();
        let z = tape.leaf(logits.clone());
        let nodes = mcc_loss(&mut tape, z, t, toggles).map_err(|e| e.to_string())?;
        let taped = tape.value(nodes.loss).scalar().map_err(|e| e.to_string())?;
        let oracle = mcc_loss_oracle(&as_rows(&logits), t, toggles).loss;

        let delta = (taped - oracle).abs();
        worst = worst.max(delta);
        if delta > 1e-10 {
            return Err(format!(
                "loss {taped} vs oracle {oracle} (|delta| = {delta:.3e}) at draw {draw}"
            ));
        }
    }
    Ok(format!("1000 draws, max |delta| {worst:.3e}"))
}

/// Cross-entropy and mean-entropy match their oracles.
fn classifier_losses() -> std::result::Result<String, String> {
    let mut rng = stream_rng(14, 0xce_e7);
    let mut worst = 0.0f64;
    for draw in 0..200 {
        let rows = rng.random_range(1..=32);
        let cols = rng.random_range(2..=9);
        let logits = random_logits(&mut rng, rows, cols, 5.0);
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..cols)).collect();

        let mut tape = Tape::new();
        let z = tape.leaf(logits.clone());
        let ce = cross_entropy(&mut tape, z, &labels).map_err(|e| e.to_string())?;
        let ce_taped = tape.value(ce).scalar().map_err(|e| e.to_string())?;
        let ce_oracle = cross_entropy_oracle(&as_rows(&logits), &labels);

        let t = TEMPERATURES[draw % TEMPERATURES.len()];
        let mut tape = Tape::new();
        let z = tape.leaf(logits.clone());
        let ent = mean_entropy(&mut tape, z, t).map_err(|e| e.to_string())?;
        let ent_taped = tape.value(ent).scalar().map_err(|e| e.to_string())?;
        let ent_oracle = mean_entropy_oracle(&as_rows(&logits), t);

        let delta = (ce_taped - ce_oracle).abs().max((ent_taped - ent_oracle).abs());
        worst = worst.max(delta);
        if delta > 1e-10 {
            return Err(format!("|delta| = {delta:.3e} at draw {draw}"));
        }
    }
    Ok(format!("200 draws, max |delta| {worst:.3e}"))
}

/// Closed-form anchor points of the confusion loss.
fn analytic_anchors() -> std::result::Result<String, String> {
    for classes in [2usize, 3, 12] {
        // One-hot predictions: every row fully confident -> zero confusion.
        let one_hot = Matrix::from_fn(24, classes, |i, j| {
            if i % classes == j {
                40.0
            } else {
                -40.0
            }
        });
        let out = confusion_forward(&one_hot, 1.0, MccToggles::default())
            .map_err(|e| e.to_string())?;
        if out.loss.abs() > 1e-12 {
            return Err(format!("one-hot loss {} for {classes} classes", out.loss));
        }

        // Uniform predictions: loss hits its (classes-1)/classes ceiling.
        let uniform = Matrix::zeros(24, classes);
        let out = confusion_forward(&uniform, 1.0, MccToggles::default())
            .map_err(|e| e.to_string())?;
        let want = (classes as f64 - 1.0) / classes as f64;
        if (out.loss - want).abs() > 1e-12 {
            return Err(format!(
                "uniform loss {} vs {want} for {classes} classes",
                out.loss
            ));
        }
    }
    Ok("one-hot and uniform batches for 2, 3, 12 classes".into())
}

/// Reverse-mode logit gradients match central finite differences for every
/// toggle combination. With detached weights the probe freezes the weights
/// at their base value, which is what the analytic gradient computes.
fn gradient_checks() -> std::result::Result<String, String> {
    let mut worst = 0.0f64;
    let mut configs = 0usize;
    for combo in 0..16usize {
        let toggles = toggle_combo(combo);
        for seed in 0..2u64 {
            let mut rng = stream_rng(seed, 0x9d_c7e0 + combo as u64);
            let logits = random_logits(&mut rng, 5, 4, 3.0);
            let t = TEMPERATURES[(combo + seed as usize) % TEMPERATURES.len()];

            let mut tape = Tape::new();
            let z = tape.leaf(logits.clone());
            let nodes = mcc_loss(&mut tape, z, t, toggles).map_err(|e| e.to_string())?;
            let grads = tape.backward(nodes.loss).map_err(|e| e.to_string())?;

            let frozen = toggles.detach_weights && toggles.uncertainty_reweighting;
            let base_weights = confusion_forward(&logits, t, toggles)
                .map_err(|e| e.to_string())?
                .weights;
            let numeric = central_diff(
                |m| {
                    if frozen {
                        mcc_loss_frozen_weights(&as_rows(m), t, &base_weights, toggles)
                    } else {
                        mcc_loss_oracle(&as_rows(m), t, toggles).loss
                    }
                },
                &logits,
                FD_STEP,
            );
            let err = max_rel_err(&grads[z], &numeric).map_err(|e| e.to_string())?;
            worst = worst.max(err);
            if err > GRAD_TOL {
                return Err(format!(
                    "rel err {err:.3e} for toggles {toggles:?} seed {seed}"
                ));
            }
            configs += 1;
        }
    }
    Ok(format!("{configs} configurations, max rel err {worst:.3e}"))
}
