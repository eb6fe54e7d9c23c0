//! Class-confusion minimization and companion objectives.
//!
//! The central loss measures, on a batch of unlabeled predictions, how much
//! probability mass ends up shared between *pairs of classes*, and drives
//! that cross-class mass down. It is assembled from four independently
//! toggleable stages:
//!
//! 1. probability rescaling: a temperature above 1 softens predictions so
//!    that ambiguous classes keep visible mass;
//! 2. uncertainty reweighting: batch rows with low prediction entropy
//!    (confident examples) get proportionally more say;
//! 3. pairwise confusion: `C = P^T diag(w) P` accumulates weighted
//!    co-activation of every class pair;
//! 4. category normalization: each confusion row is rescaled to sum to one,
//!    balancing classes of different prevalence.
//!
//! The loss is the mean absolute off-diagonal mass of the (optionally
//! normalized) confusion matrix. Also provided: cross-entropy on labeled
//! logits, mean prediction entropy, and a domain-adversarial objective with
//! gradient reversal.
//!
//! [`oracle`] holds an independently written scalar-loop reference used by
//! the tests; it shares no numerics with this module.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::nn::{ModelParams, TapedParams};

/// Confusion row sums are clamped to at least this value before dividing,
/// so empty rows normalize to zero instead of poisoning the backward pass.
/// A clamp (rather than adding the epsilon) keeps each populated row of the
/// normalized matrix summing to exactly 1, which the trace identity check
/// relies on: with `sum + eps` the identity drifts by `eps / sum` per row,
/// noticeable once a class holds little probability mass.
pub const ROW_NORM_EPS: f64 = 1e-12;

/// Which stages of the confusion pipeline are active.
///
/// Defaults enable everything except `detach_weights`; that switch stops
/// gradients from flowing through the uncertainty weights, treating them as
/// per-batch constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MccToggles {
    pub probability_rescaling: bool,
    pub uncertainty_reweighting: bool,
    pub category_normalization: bool,
    pub detach_weights: bool,
}

impl Default for MccToggles {
    fn default() -> Self {
        MccToggles {
            probability_rescaling: true,
            uncertainty_reweighting: true,
            category_normalization: true,
            detach_weights: false,
        }
    }
}

impl MccToggles {
    /// Bare pairwise-confusion loss: every stage off.
    pub fn confusion_only() -> Self {
        MccToggles {
            probability_rescaling: false,
            uncertainty_reweighting: false,
            category_normalization: false,
            detach_weights: false,
        }
    }

    /// Ablation ladder from the bare loss to the full pipeline, each rung
    /// adding one stage.
    pub fn ladder() -> [(&'static str, MccToggles); 4] {
        let base = MccToggles::confusion_only();
        [
            ("cc", base),
            (
                "cc+pr",
                MccToggles {
                    probability_rescaling: true,
                    ..base
                },
            ),
            (
                "cc+pr+ur",
                MccToggles {
                    probability_rescaling: true,
                    uncertainty_reweighting: true,
                    ..base
                },
            ),
            ("full", MccToggles::default()),
        ]
    }
}

/// Tape nodes of one confusion-loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MccNodes {
    /// Batch x classes prediction matrix.
    pub probs: NodeId,
    /// Batch x 1 prediction entropies; present when reweighting is active.
    pub entropy: Option<NodeId>,
    /// Batch x 1 row weights (all ones when reweighting is off).
    pub weights: NodeId,
    /// Classes x classes weighted pairwise confusion.
    pub confusion: NodeId,
    /// Row-normalized confusion; present when normalization is active.
    pub normalized: Option<NodeId>,
    /// 1x1 scalar loss.
    pub loss: NodeId,
}

/// Records the confusion loss of a batch of logits.
pub fn mcc_loss(
    tape: &mut Tape,
    logits: NodeId,
    temperature: f64,
    toggles: MccToggles,
) -> Result<MccNodes> {
    let t = if toggles.probability_rescaling {
        temperature
    } else {
        1.0
    };
    let probs = tape.softmax_rows(logits, t)?;
    mcc_loss_from_probs(tape, probs, toggles)
}

/// Confusion loss over an already-recorded prediction matrix. Split out so
/// tests can feed exact probability rows (one-hot, uniform) that a softmax
/// can only approach asymptotically.
pub fn mcc_loss_from_probs(
    tape: &mut Tape,
    probs: NodeId,
    toggles: MccToggles,
) -> Result<MccNodes> {
    let (batch, classes) = tape.value(probs).shape();
    if batch == 0 || classes == 0 {
        return Err(Error::Contract(
            "confusion loss needs a non-empty prediction matrix".into(),
        ));
    }

    let ones_row = tape.leaf(Matrix::filled(1, classes, 1.0));

    // Per-row weights, optionally fenced off from the gradient.
    let (entropy, weights) = if toggles.uncertainty_reweighting {
        let basis = if toggles.detach_weights {
            tape.detach(probs)
        } else {
            probs
        };
        let log_p = tape.log_clamped(basis);
        let p_log_p = tape.mul(basis, log_p)?;
        let neg_entropy = tape.row_sums(p_log_p);
        let entropy = tape.scale(neg_entropy, -1.0);
        // w_i = batch * (1 + exp(-H_i)) / sum_k (1 + exp(-H_k))
        let certainty = tape.exp(neg_entropy)?;
        let raw = tape.add_scalar(certainty, 1.0);
        let total = tape.sum(raw);
        let one = tape.leaf(Matrix::filled(1, 1, 1.0));
        let inv_total = tape.div(one, total)?;
        let normalized = tape.matmul(raw, inv_total)?;
        let weights = tape.scale(normalized, batch as f64);
        (Some(entropy), weights)
    } else {
        (None, tape.leaf(Matrix::filled(batch, 1, 1.0)))
    };

    // C = P^T diag(w) P, built by broadcasting w across columns first.
    let weights_wide = tape.matmul(weights, ones_row)?;
    let weighted_probs = tape.mul(weights_wide, probs)?;
    let probs_t = tape.transpose(probs);
    let confusion = tape.matmul(probs_t, weighted_probs)?;

    let (normalized, loss_input) = if toggles.category_normalization {
        let row_sums = tape.row_sums(confusion);
        let guarded = tape.max_scalar(row_sums, ROW_NORM_EPS);
        let ones_col = tape.leaf(Matrix::filled(classes, 1, 1.0));
        let inv = tape.div(ones_col, guarded)?;
        let inv_wide = tape.matmul(inv, ones_row)?;
        let normalized = tape.mul(confusion, inv_wide)?;
        (Some(normalized), normalized)
    } else {
        (None, confusion)
    };

    // Mean absolute off-diagonal mass.
    let off_diag_mask = tape.leaf(Matrix::from_fn(classes, classes, |i, j| {
        if i == j {
            0.0
        } else {
            1.0
        }
    }));
    let magnitudes = tape.abs(loss_input);
    let off_diag = tape.mul(magnitudes, off_diag_mask)?;
    let total = tape.sum(off_diag);
    let loss = tape.scale(total, 1.0 / classes as f64);

    Ok(MccNodes {
        probs,
        entropy,
        weights,
        confusion,
        normalized,
        loss,
    })
}

/// Forward-only confusion evaluation on plain matrices, for diagnostics and
/// reports. Runs the same graph as [`mcc_loss`] on a throwaway tape.
#[derive(Debug, Clone)]
pub struct ConfusionOutputs {
    pub toggles: MccToggles,
    pub probs: Matrix,
    pub weights: Vec<f64>,
    pub confusion: Matrix,
    /// Row-normalized confusion when normalization is on; otherwise the raw
    /// confusion matrix that the loss was computed from.
    pub normalized: Matrix,
    pub loss: f64,
}

pub fn confusion_forward(
    logits: &Matrix,
    temperature: f64,
    toggles: MccToggles,
) -> Result<ConfusionOutputs> {
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone());
    let nodes = mcc_loss(&mut tape, z, temperature, toggles)?;
    Ok(ConfusionOutputs {
        toggles,
        probs: tape.value(nodes.probs).clone(),
        weights: tape.value(nodes.weights).data().to_vec(),
        confusion: tape.value(nodes.confusion).clone(),
        normalized: tape
            .value(nodes.normalized.unwrap_or(nodes.confusion))
            .clone(),
        loss: tape.value(nodes.loss).scalar()?,
    })
}

impl ConfusionOutputs {
    /// Structural invariants that hold for any input batch:
    /// rows of `probs` are distributions, the confusion matrix is symmetric
    /// and nonnegative, weights average to one with entries in `[0.5, 2]`,
    /// and with normalization active the loss equals
    /// `1 - trace(normalized) / classes`.
    pub fn check_invariants(&self) -> Result<()> {
        let (batch, classes) = self.probs.shape();
        let fail = |msg: String| Err(Error::Contract(msg));

        for i in 0..batch {
            let row = self.probs.row(i);
            if row.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
                return fail(format!("probability out of range in row {i}"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return fail(format!("probability row {i} sums to {s}"));
            }
        }

        let sum_w: f64 = self.weights.iter().sum();
        if (sum_w - batch as f64).abs() > 1e-9 {
            return fail(format!("weights sum to {sum_w}, want {batch}"));
        }
        if self.toggles.uncertainty_reweighting {
            if let Some(w) = self
                .weights
                .iter()
                .find(|w| !(0.5..=2.0).contains(*w))
            {
                return fail(format!("weight {w} outside [0.5, 2]"));
            }
        }

        for j in 0..classes {
            for jp in 0..classes {
                let v = self.confusion.get(j, jp);
                if v < -1e-12 {
                    return fail(format!("negative confusion entry at ({j}, {jp})"));
                }
                let d = (v - self.confusion.get(jp, j)).abs();
                if d > 1e-9 {
                    return fail(format!("confusion asymmetry {d} at ({j}, {jp})"));
                }
            }
        }

        if self.loss < -1e-12 {
            return fail(format!("negative loss {}", self.loss));
        }
        if self.toggles.category_normalization {
            let identity = 1.0 - self.normalized.trace() / classes as f64;
            if (self.loss - identity).abs() > 1e-10 {
                return fail(format!(
                    "loss {} disagrees with 1 - trace/classes = {identity}",
                    self.loss
                ));
            }
        }
        Ok(())
    }
}

/// Mean cross-entropy of logits against integer labels, with the log
/// clamped at 1e-12.
pub fn cross_entropy(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (batch, classes) = tape.value(logits).shape();
    if labels.len() != batch {
        return Err(Error::Contract(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let probs = tape.softmax_rows(logits, 1.0)?;
    let log_p = tape.log_clamped(probs);
    let mask = tape.leaf(Matrix::one_hot(labels, classes)?);
    let picked = tape.mul(mask, log_p)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / batch as f64))
}

/// Mean prediction entropy of a batch of logits; minimizing it sharpens
/// predictions without any pairwise term.
pub fn mean_entropy(tape: &mut Tape, logits: NodeId, temperature: f64) -> Result<NodeId> {
    let batch = tape.value(logits).rows();
    if batch == 0 {
        return Err(Error::Contract("mean entropy of an empty batch".into()));
    }
    let probs = tape.softmax_rows(logits, temperature)?;
    let log_p = tape.log_clamped(probs);
    let p_log_p = tape.mul(probs, log_p)?;
    let total = tape.sum(p_log_p);
    Ok(tape.scale(total, -1.0 / batch as f64))
}

/// Domain-adversarial objective: a discriminator is trained to tell source
/// rows (class 0) from target rows (class 1) while the reversed gradient,
/// scaled by `coeff`, pushes the feature extractor the other way.
pub fn domain_adversarial_loss(
    tape: &mut Tape,
    discriminator: &ModelParams,
    taped: &TapedParams,
    source_features: NodeId,
    target_features: NodeId,
    coeff: f64,
) -> Result<NodeId> {
    let n_source = tape.value(source_features).rows();
    let n_target = tape.value(target_features).rows();
    if n_source == 0 || n_target == 0 {
        return Err(Error::Contract(
            "adversarial loss needs rows from both domains".into(),
        ));
    }
    let stacked = tape.concat_rows(source_features, target_features)?;
    let reversed = tape.grad_reverse(stacked, coeff);
    let logits = discriminator.forward(tape, reversed, taped)?;
    let mut labels = vec![0usize; n_source];
    labels.extend(std::iter::repeat(1).take(n_target));
    cross_entropy(tape, logits, &labels)
}

/// Warm-up factor for the adversarial coefficient: `2 / (1 + e^(-10 p)) - 1`
/// for training progress `p` in `[0, 1]`, rising smoothly from 0 to ~1.
pub fn grl_schedule(progress: f64) -> f64 {
    2.0 / (1.0 + (-10.0 * progress.clamp(0.0, 1.0)).exp()) - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff::{central_diff, max_rel_err, FD_STEP, GRAD_TOL};
    use crate::nn::{Activation, LayerSpec};
    use crate::rng::stream_rng;

    use proptest::prelude::*;

    /// Shared fixture: 4 samples, 3 classes.
    fn fixture_logits() -> Matrix {
        Matrix::new(
            4,
            3,
            vec![
                2.0, -1.0, 0.5, //
                0.0, 0.0, 0.0, //
                -0.5, 1.5, 1.0, //
                3.0, 2.5, -2.0,
            ],
        )
        .unwrap()
    }

    fn rows(m: &Matrix) -> Vec<Vec<f64>> {
        (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
    }

    // Reference values for the fixture, frozen from an independent
    // implementation (plain loops over the published formulas).
    const FULL_LOSS: f64 = 0.6214893112416214;
    const CC_LOSS: f64 = 0.6782609756897792;
    const CC_PR_LOSS: f64 = 0.8179268975776783;
    const CC_PR_UR_LOSS: f64 = 0.8167906459443409;
    const FIXTURE_WEIGHTS: [f64; 4] = [
        1.0042446314238782,
        0.9758598388272162,
        0.9881122817720276,
        1.031783247976878,
    ];

    #[test]
    fn full_pipeline_matches_frozen_reference() {
        let out = confusion_forward(&fixture_logits(), 2.5, MccToggles::default()).unwrap();
        assert!((out.loss - FULL_LOSS).abs() <= 1e-10, "loss {}", out.loss);
        for (got, want) in out.weights.iter().zip(FIXTURE_WEIGHTS) {
            assert!((got - want).abs() <= 1e-10, "weight {got} vs {want}");
        }
        // Spot-check first rows of the intermediate matrices.
        let want_probs = [0.5405388318516458, 0.16280716746749876, 0.29665400068085557];
        for (j, want) in want_probs.iter().enumerate() {
            assert!((out.probs.get(0, j) - want).abs() <= 1e-12);
        }
        let want_confusion = [0.7108482840879617, 0.5043497427698499, 0.37669693990822756];
        for (j, want) in want_confusion.iter().enumerate() {
            assert!((out.confusion.get(0, j) - want).abs() <= 1e-10);
        }
        let want_normalized = [0.4465422021728074, 0.31682350487867167, 0.23663429294789276];
        for (j, want) in want_normalized.iter().enumerate() {
            assert!((out.normalized.get(0, j) - want).abs() <= 1e-10);
        }
        out.check_invariants().unwrap();
    }

    #[test]
    fn each_ablation_rung_matches_frozen_reference() {
        let expectations = [CC_LOSS, CC_PR_LOSS, CC_PR_UR_LOSS, FULL_LOSS];
        for ((name, toggles), want) in MccToggles::ladder().into_iter().zip(expectations) {
            let out = confusion_forward(&fixture_logits(), 2.5, toggles).unwrap();
            assert!(
                (out.loss - want).abs() <= 1e-10,
                "{name}: loss {} vs {want}",
                out.loss
            );
            out.check_invariants().unwrap();
        }
    }

    #[test]
    fn one_hot_predictions_have_zero_loss() {
        // Exact one-hot rows: every off-diagonal confusion entry is exactly
        // zero regardless of which stages are active.
        let probs = Matrix::one_hot(&[0, 2, 1, 0, 2], 3).unwrap();
        for (_, toggles) in MccToggles::ladder() {
            let mut tape = Tape::new();
            let p = tape.leaf(probs.clone());
            let nodes = mcc_loss_from_probs(&mut tape, p, toggles).unwrap();
            let loss = tape.value(nodes.loss).scalar().unwrap();
            assert!(loss.abs() <= 1e-12, "loss {loss}");
        }
    }

    #[test]
    fn uniform_predictions_hit_the_upper_plateau() {
        // All-equal logits make every prediction uniform; with normalization
        // the loss lands on (classes - 1) / classes.
        for classes in [2usize, 3, 5] {
            let logits = Matrix::zeros(6, classes);
            let out = confusion_forward(&logits, 2.5, MccToggles::default()).unwrap();
            let want = (classes as f64 - 1.0) / classes as f64;
            assert!(
                (out.loss - want).abs() <= 1e-12,
                "classes {classes}: loss {} vs {want}",
                out.loss
            );
        }
    }

    #[test]
    fn cross_entropy_matches_frozen_reference_and_closed_form_gradient() {
        let logits = fixture_logits();
        let labels = [0usize, 2, 1, 0];
        let mut tape = Tape::new();
        let z = tape.leaf(logits.clone());
        let loss = cross_entropy(&mut tape, z, &labels).unwrap();
        assert!((tape.value(loss).scalar().unwrap() - 0.5932857041040204).abs() <= 1e-10);

        // d(mean CE)/d(logits) = (softmax - one_hot) / batch.
        let grads = tape.backward(loss).unwrap();
        let probs = logits.softmax_rows(1.0).unwrap();
        let one_hot = Matrix::one_hot(&labels, 3).unwrap();
        let expected = probs.sub(&one_hot).unwrap().scale(1.0 / 4.0);
        assert!(grads[z].max_abs_diff(&expected).unwrap() <= 1e-12);
    }

    #[test]
    fn cross_entropy_limits() {
        // Confident correct predictions give a loss near zero; uniform
        // predictions give ln(classes).
        let peaked = Matrix::new(2, 3, vec![25.0, 0.0, 0.0, 0.0, 0.0, 25.0]).unwrap();
        let mut tape = Tape::new();
        let z = tape.leaf(peaked);
        let loss = cross_entropy(&mut tape, z, &[0, 2]).unwrap();
        assert!(tape.value(loss).scalar().unwrap() <= 1e-10);

        let uniform = Matrix::zeros(5, 4);
        let mut tape = Tape::new();
        let z = tape.leaf(uniform);
        let loss = cross_entropy(&mut tape, z, &[0, 1, 2, 3, 0]).unwrap();
        assert!((tape.value(loss).scalar().unwrap() - 4.0f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn mean_entropy_matches_frozen_reference() {
        let mut tape = Tape::new();
        let z = tape.leaf(fixture_logits());
        let loss = mean_entropy(&mut tape, z, 1.0).unwrap();
        assert!((tape.value(loss).scalar().unwrap() - 0.8229439553624154).abs() <= 1e-10);

        let numeric = central_diff(
            |m| {
                let mut t = Tape::new();
                let z = t.leaf(m.clone());
                let l = mean_entropy(&mut t, z, 1.0).unwrap();
                t.value(l).scalar().unwrap()
            },
            &fixture_logits(),
            FD_STEP,
        );
        let grads = tape.backward(loss).unwrap();
        assert!(max_rel_err(&grads[z], &numeric).unwrap() <= GRAD_TOL);
    }

    #[test]
    fn gradients_match_finite_differences_for_every_toggle_combination() {
        // All 16 combinations. With detached weights the finite-difference
        // probe freezes the weights at their base value, which is exactly
        // what the analytic gradient claims to compute.
        let logits = fixture_logits();
        for bits in 0..16u32 {
            let toggles = MccToggles {
                probability_rescaling: bits & 1 != 0,
                uncertainty_reweighting: bits & 2 != 0,
                category_normalization: bits & 4 != 0,
                detach_weights: bits & 8 != 0,
            };
            let mut tape = Tape::new();
            let z = tape.leaf(logits.clone());
            let nodes = mcc_loss(&mut tape, z, 2.5, toggles).unwrap();
            let grads = tape.backward(nodes.loss).unwrap();

            let frozen = toggles.detach_weights && toggles.uncertainty_reweighting;
            let base_weights = confusion_forward(&logits, 2.5, toggles).unwrap().weights;
            let numeric = central_diff(
                |m| {
                    if frozen {
                        oracle::mcc_loss_frozen_weights(&rows(m), 2.5, &base_weights, toggles)
                    } else {
                        oracle::mcc_loss_oracle(&rows(m), 2.5, toggles).loss
                    }
                },
                &logits,
                FD_STEP,
            );
            let err = max_rel_err(&grads[z], &numeric).unwrap();
            assert!(err <= GRAD_TOL, "toggles {toggles:?}: max relative error {err}");
        }
    }

    #[test]
    fn adversarial_loss_reverses_feature_gradients_only() {
        let mut rng = stream_rng(21, 0);
        let disc = ModelParams::init(
            &[
                LayerSpec::new(3, 8, Activation::Relu),
                LayerSpec::new(8, 2, Activation::Linear),
            ],
            &mut rng,
        )
        .unwrap();
        let source = Matrix::from_fn(4, 3, |i, j| ((i + j) as f64 * 0.43).sin());
        let target = Matrix::from_fn(5, 3, |i, j| ((i * 2 + j) as f64 * 0.29).cos() + 0.5);

        // Same graph twice: once with gradient reversal at coeff, once with
        // the reversal disabled (coeff such that it forwards -1 * grad).
        let run = |coeff: f64| {
            let mut tape = Tape::new();
            let s = tape.leaf(source.clone());
            let t = tape.leaf(target.clone());
            let taped = disc.to_tape(&mut tape);
            let loss = domain_adversarial_loss(&mut tape, &disc, &taped, s, t, coeff).unwrap();
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).scalar().unwrap(),
                grads[s].clone(),
                grads[taped.layers[0].weight].clone(),
            )
        };
        let (loss_a, feat_a, disc_a) = run(1.0);
        let (loss_b, feat_b, disc_b) = run(0.5);

        // Forward value and discriminator gradients ignore the coefficient;
        // feature gradients scale linearly with it (and flip sign).
        assert_eq!(loss_a, loss_b);
        assert!(disc_a.max_abs_diff(&disc_b).unwrap() <= 1e-15);
        assert!(feat_a.max_abs_diff(&feat_b.scale(2.0)).unwrap() <= 1e-12);

        // Discriminator gradients match finite differences of its own loss.
        let numeric = central_diff(
            |w| {
                let mut d = disc.clone();
                d.layers[0].weight = w.clone();
                let mut tape = Tape::new();
                let s = tape.leaf(source.clone());
                let t = tape.leaf(target.clone());
                let taped = d.to_tape(&mut tape);
                let loss = domain_adversarial_loss(&mut tape, &d, &taped, s, t, 1.0).unwrap();
                tape.value(loss).scalar().unwrap()
            },
            &disc.layers[0].weight,
            FD_STEP,
        );
        assert!(max_rel_err(&disc_a, &numeric).unwrap() <= GRAD_TOL);
    }

    #[test]
    fn grl_schedule_ramps_from_zero_to_one() {
        assert_eq!(grl_schedule(0.0), 0.0);
        assert!(grl_schedule(1.0) > 0.9999 && grl_schedule(1.0) < 1.0);
        let mut prev = -1.0;
        for step in 0..=20 {
            let v = grl_schedule(step as f64 / 20.0);
            assert!(v > prev);
            prev = v;
        }
        // Out-of-range progress is clamped.
        assert_eq!(grl_schedule(-0.5), 0.0);
        assert_eq!(grl_schedule(2.0), grl_schedule(1.0));
    }

    #[test]
    fn empty_batches_are_rejected() {
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::zeros(0, 3));
        assert!(mcc_loss(&mut tape, z, 2.5, MccToggles::default()).is_err());
        assert!(mean_entropy(&mut tape, z, 1.0).is_err());
        assert!(cross_entropy(&mut tape, z, &[0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// The taped pipeline agrees with the scalar-loop oracle to 1e-10
        /// for every toggle combination, and all structural invariants hold.
        #[test]
        fn pipeline_matches_oracle_on_random_batches(
            values in proptest::collection::vec(-6.0f64..6.0, 5 * 4),
            bits in 0u32..16,
        ) {
            let logits = Matrix::new(5, 4, values).unwrap();
            let toggles = MccToggles {
                probability_rescaling: bits & 1 != 0,
                uncertainty_reweighting: bits & 2 != 0,
                category_normalization: bits & 4 != 0,
                detach_weights: bits & 8 != 0,
            };
            let out = confusion_forward(&logits, 2.5, toggles).unwrap();
            let reference = oracle::mcc_loss_oracle(&rows(&logits), 2.5, toggles);
            prop_assert!((out.loss - reference.loss).abs() <= 1e-10);
            for (got, want) in out.weights.iter().zip(&reference.weights) {
                prop_assert!((got - want).abs() <= 1e-10);
            }
            for j in 0..4 {
                for jp in 0..4 {
                    prop_assert!(
                        (out.confusion.get(j, jp) - reference.confusion[j][jp]).abs() <= 1e-10
                    );
                }
            }
            out.check_invariants().unwrap();
        }

        /// With normalization active, the loss always equals
        /// 1 - trace(normalized) / classes.
        #[test]
        fn loss_equals_one_minus_normalized_trace(
            values in proptest::collection::vec(-8.0f64..8.0, 6 * 3),
        ) {
            let logits = Matrix::new(6, 3, values).unwrap();
            let out = confusion_forward(&logits, 2.5, MccToggles::default()).unwrap();
            let identity = 1.0 - out.normalized.trace() / 3.0;
            prop_assert!((out.loss - identity).abs() <= 1e-10);
        }

        /// Uncertainty weights always sum to the batch size and stay inside
        /// [0.5, 2].
        #[test]
        fn weights_sum_to_batch_and_stay_bounded(
            values in proptest::collection::vec(-10.0f64..10.0, 7 * 3),
        ) {
            let logits = Matrix::new(7, 3, values).unwrap();
            let out = confusion_forward(&logits, 2.5, MccToggles::default()).unwrap();
            let sum: f64 = out.weights.iter().sum();
            prop_assert!((sum - 7.0).abs() <= 1e-9);
            for w in &out.weights {
                prop_assert!((0.5..=2.0).contains(w));
            }
        }
    }
}
