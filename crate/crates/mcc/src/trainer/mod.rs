//! Scenario-aware adaptation training.
//!
//! A scenario bundles labeled source domains with unlabeled target domains.
//! Multi-source and multi-target flavors are *normalized away* before any
//! optimization: extra domains are merged into a single source and a single
//! target dataset, and from that point on every flavor runs the exact same
//! loop. Partial flavors (targets exercising a subset of the source label
//! space) need no code at all here — the data is simply missing classes.
//!
//! The loop trains a feature extractor and classifier head on source
//! cross-entropy, optionally plus a target-side adaptation term (class
//! confusion or entropy minimization) and/or a domain-adversarial term with
//! a warm-up ramp. Target labels are never read by the optimizer; they are
//! used only for curve accuracy and the final report.

pub mod diagnostics;
pub mod report;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::confusion::{
    cross_entropy, domain_adversarial_loss, grl_schedule, mcc_loss, mean_entropy, MccToggles,
};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, Activation, LayerSpec, ModelParams, OptState};
use crate::rng::stream_rng;
use crate::synthdata::{merge_domains, BatchIter, DomainDataset};

pub use diagnostics::{a_distance, extract_features, ideal_joint_error};
pub use report::{iterations_to_threshold, write_atomic, CurvePoint, Report};

/// Random-stream labels, one per independent consumer. Keeping them apart
/// means adding or removing one consumer (say, the discriminator) cannot
/// perturb the draws seen by the others.
pub const STREAM_MODEL: u64 = 1;
pub const STREAM_DISCRIMINATOR: u64 = 2;
pub const STREAM_SOURCE_BATCHES: u64 = 3;
pub const STREAM_TARGET_BATCHES: u64 = 4;

/// Adaptation flavor, named by how many domains sit on each side and
/// whether the target exercises only part of the label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// One source, one target.
    Uda,
    /// One source, one target covering a label subset.
    Pda,
    /// Several sources, one target.
    Msda,
    /// One source, several targets.
    Mtda,
    /// Several sources, one partial target.
    Mspda,
    /// One source, several partial targets.
    Mtpda,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Uda => "uda",
            ScenarioKind::Pda => "pda",
            ScenarioKind::Msda => "msda",
            ScenarioKind::Mtda => "mtda",
            ScenarioKind::Mspda => "mspda",
            ScenarioKind::Mtpda => "mtpda",
        }
    }

    fn multi_source(self) -> bool {
        matches!(self, ScenarioKind::Msda | ScenarioKind::Mspda)
    }

    fn multi_target(self) -> bool {
        matches!(self, ScenarioKind::Mtda | ScenarioKind::Mtpda)
    }

    /// A multi-source or multi-target kind declared with a single domain on
    /// the multi side is the same run as its single-domain counterpart, so
    /// normalization relabels it. Degenerate specs then produce output
    /// identical to the canonical form, bytes included.
    fn canonical(self, num_sources: usize, num_targets: usize) -> ScenarioKind {
        match self {
            ScenarioKind::Msda if num_sources == 1 => ScenarioKind::Uda,
            ScenarioKind::Mspda if num_sources == 1 => ScenarioKind::Pda,
            ScenarioKind::Mtda if num_targets == 1 => ScenarioKind::Uda,
            ScenarioKind::Mtpda if num_targets == 1 => ScenarioKind::Pda,
            kind => kind,
        }
    }
}

/// Raw scenario as assembled by a caller: any number of domains per side.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub sources: Vec<DomainDataset>,
    pub targets: Vec<DomainDataset>,
    /// Size of the full (source) label space.
    pub num_classes: usize,
}

/// Scenario reduced to exactly one source and one target dataset. This is
/// the only shape the training loop ever sees.
#[derive(Debug, Clone)]
pub struct NormalizedScenario {
    pub kind: ScenarioKind,
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub num_classes: usize,
}

/// Validates a scenario and merges its domains down to one per side.
pub fn normalize_scenario(spec: ScenarioSpec) -> Result<NormalizedScenario> {
    if spec.num_classes < 2 {
        return Err(Error::Parameter {
            name: "num_classes",
            message: format!("need at least 2 classes, got {}", spec.num_classes),
        });
    }
    if spec.sources.is_empty() || spec.targets.is_empty() {
        return Err(Error::Contract(
            "a scenario needs at least one source and one target domain".into(),
        ));
    }
    if !spec.kind.multi_source() && spec.sources.len() != 1 {
        return Err(Error::Contract(format!(
            "{} takes exactly one source domain, got {}",
            spec.kind.as_str(),
            spec.sources.len()
        )));
    }
    if !spec.kind.multi_target() && spec.targets.len() != 1 {
        return Err(Error::Contract(format!(
            "{} takes exactly one target domain, got {}",
            spec.kind.as_str(),
            spec.targets.len()
        )));
    }
    for (side, domains) in [("source", &spec.sources), ("target", &spec.targets)] {
        for d in domains {
            if let Some(bad) = d.labels.iter().flatten().find(|&&l| l >= spec.num_classes) {
                return Err(Error::Contract(format!(
                    "{side} label {bad} exceeds class space {}",
                    spec.num_classes
                )));
            }
        }
    }
    let source = merge_domains(&spec.sources)?;
    let target = merge_domains(&spec.targets)?;
    if source.dim() != target.dim() {
        return Err(Error::dimension(
            "normalize_scenario",
            (source.len(), source.dim()),
            (target.len(), target.dim()),
        ));
    }
    Ok(NormalizedScenario {
        kind: spec.kind.canonical(spec.sources.len(), spec.targets.len()),
        source,
        target,
        num_classes: spec.num_classes,
    })
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Source cross-entropy only; the no-adaptation baseline.
    SourceOnly,
    /// Source cross-entropy plus target prediction-entropy minimization.
    Minent,
    /// Source cross-entropy plus the class-confusion loss on the target.
    Mcc,
    /// Source cross-entropy plus a domain-adversarial term.
    Dann,
    /// Adversarial term and confusion loss together.
    DannMcc,
    /// Adversarial term and entropy minimization together.
    DannMinent,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::Minent => "minent",
            Method::Mcc => "mcc",
            Method::Dann => "dann",
            Method::DannMcc => "dann_mcc",
            Method::DannMinent => "dann_minent",
        }
    }

    pub fn uses_confusion(self) -> bool {
        matches!(self, Method::Mcc | Method::DannMcc)
    }

    pub fn uses_entropy_min(self) -> bool {
        matches!(self, Method::Minent | Method::DannMinent)
    }

    pub fn uses_discriminator(self) -> bool {
        matches!(self, Method::Dann | Method::DannMcc | Method::DannMinent)
    }
}

/// Hyperparameters of one training run. `Default` gives the tuned
/// desk-scale settings used by the command-line presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub seed: u64,
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Softmax temperature of the confusion loss.
    pub temperature: f64,
    /// Weight of the unsupervised adaptation term (confusion or entropy).
    pub adapt_weight: f64,
    /// Peak weight of the adversarial term; ramped up over training.
    pub adversarial_weight: f64,
    pub toggles: MccToggles,
    /// Width of the two hidden feature-extractor layers (and of the
    /// discriminator).
    pub hidden_dim: usize,
    /// Curve-sampling cadence in iterations.
    pub curve_every: u64,
    /// Target-accuracy thresholds reported as convergence times.
    pub eval_thresholds: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Mcc,
            seed: 0,
            iterations: 2000,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            temperature: 2.5,
            adapt_weight: 1.0,
            adversarial_weight: 1.0,
            toggles: MccToggles::default(),
            hidden_dim: 32,
            curve_every: 10,
            eval_thresholds: vec![0.80, 0.85, 0.90, 0.95],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, message: String| Err(Error::Parameter { name, message });
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("must be in [0, 1), got {}", self.momentum));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", format!("must be positive, got {}", self.temperature));
        }
        if !(self.adapt_weight >= 0.0 && self.adapt_weight.is_finite()) {
            return bad("adapt_weight", format!("must be nonnegative, got {}", self.adapt_weight));
        }
        if !(self.adversarial_weight >= 0.0 && self.adversarial_weight.is_finite()) {
            return bad(
                "adversarial_weight",
                format!("must be nonnegative, got {}", self.adversarial_weight),
            );
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim", "must be at least 1".into());
        }
        if self.curve_every == 0 {
            return bad("curve_every", "must be at least 1".into());
        }
        if self
            .eval_thresholds
            .iter()
            .any(|t| !(0.0 < *t && *t <= 1.0))
        {
            return bad("eval_thresholds", "thresholds must lie in (0, 1]".into());
        }
        Ok(())
    }
}

/// Trained models of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub feature: ModelParams,
    pub head: ModelParams,
    pub discriminator: Option<ModelParams>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Everything a finished run hands back. Wall time lives here rather than
/// in the report so that report bytes stay reproducible.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: Report,
    pub checkpoint: Checkpoint,
    pub wall_time_secs: f64,
}

/// Classification quality of a model on one labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// Recall per class; classes with no samples report 1.0 vacuously.
    pub per_class_accuracy: Vec<f64>,
    /// Fraction of samples predicted into each class.
    pub predicted_fraction: Vec<f64>,
    /// Mean predicted probability mass per class.
    pub class_mass: Vec<f64>,
    /// Row-normalized class error matrix: entry (j, j') is the fraction of
    /// true-class-j samples predicted as j'. Rows of absent classes are
    /// zero.
    pub class_error_matrix: Matrix,
}

/// Runs the classifier over a labeled dataset and tabulates accuracy,
/// per-class recalls, prediction proportions and probability mass.
pub fn evaluate(
    feature: &ModelParams,
    head: &ModelParams,
    data: &DomainDataset,
    num_classes: usize,
) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    let labels = data.oracle_labels()?;
    let logits = head.forward_plain(&feature.forward_plain(&data.features)?)?;
    let probs = logits.softmax_rows(1.0)?;
    let predictions = logits.argmax_rows();

    let n = labels.len();
    let mut correct = 0usize;
    let mut class_total = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut mass = vec![0.0; num_classes];
    let mut counts = Matrix::zeros(num_classes, num_classes);
    for i in 0..n {
        let (truth, pred) = (labels[i], predictions[i]);
        if truth >= num_classes || pred >= num_classes {
            return Err(Error::Contract(format!(
                "label {truth} or prediction {pred} outside class space {num_classes}"
            )));
        }
        if truth == pred {
            correct += 1;
        }
        class_total[truth] += 1;
        predicted[pred] += 1;
        counts.set(truth, pred, counts.get(truth, pred) + 1.0);
        for j in 0..num_classes {
            mass[j] += probs.get(i, j);
        }
    }

    let mut per_class = vec![1.0; num_classes];
    let mut error_matrix = Matrix::zeros(num_classes, num_classes);
    for j in 0..num_classes {
        if class_total[j] > 0 {
            let total = class_total[j] as f64;
            per_class[j] = counts.get(j, j) / total;
            for jp in 0..num_classes {
                error_matrix.set(j, jp, counts.get(j, jp) / total);
            }
        }
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / n as f64,
        per_class_accuracy: per_class,
        predicted_fraction: predicted.iter().map(|&c| c as f64 / n as f64).collect(),
        class_mass: mass.iter().map(|m| m / n as f64).collect(),
        class_error_matrix: error_matrix,
    })
}

/// Trains one scenario under one configuration.
pub fn train(scenario: &NormalizedScenario, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let started = Instant::now();
    let classes = scenario.num_classes;
    let method = config.method;

    let source_labels = scenario.source.oracle_labels()?;
    // Target labels are needed for reporting only; insisting on them up
    // front beats failing after a long run.
    scenario.target.oracle_labels()?;

    let input_dim = scenario.source.dim();
    let hidden = config.hidden_dim;
    let mut model_rng = stream_rng(config.seed, STREAM_MODEL);
    let mut feature = ModelParams::init(
        &[
            LayerSpec::new(input_dim, hidden, Activation::Relu),
            LayerSpec::new(hidden, hidden, Activation::Relu),
        ],
        &mut model_rng,
    )?;
    let mut head = ModelParams::init(
        &[LayerSpec::new(hidden, classes, Activation::Linear)],
        &mut model_rng,
    )?;
    let mut discriminator = if method.uses_discriminator() {
        Some(ModelParams::init(
            &[
                LayerSpec::new(hidden, hidden, Activation::Relu),
                LayerSpec::new(hidden, 2, Activation::Linear),
            ],
            &mut stream_rng(config.seed, STREAM_DISCRIMINATOR),
        )?)
    } else {
        None
    };

    let mut feature_opt = OptState::new(&feature);
    let mut head_opt = OptState::new(&head);
    let mut disc_opt = discriminator.as_ref().map(OptState::new);

    // An adaptation term weighted zero is skipped outright, not added as a
    // zero-scaled node: the tape then matches the unadapted run exactly.
    let adapt_active =
        (method.uses_confusion() || method.uses_entropy_min()) && config.adapt_weight > 0.0;
    let needs_target = adapt_active || method.uses_discriminator();

    let mut source_batches = BatchIter::new(
        scenario.source.len(),
        config.batch_size,
        stream_rng(config.seed, STREAM_SOURCE_BATCHES),
    )?;
    let mut target_batches = if needs_target {
        Some(BatchIter::new(
            scenario.target.len(),
            config.batch_size,
            stream_rng(config.seed, STREAM_TARGET_BATCHES),
        )?)
    } else {
        None
    };

    let mut curves = Vec::new();
    let ramp_span = (config.iterations - 1).max(1) as f64;

    for iteration in 0..config.iterations {
        let mut step = || -> Result<(f64, f64, f64, f64)> {
            let mut tape = Tape::new();
            let taped_feature = feature.to_tape(&mut tape);
            let taped_head = head.to_tape(&mut tape);

            let batch = source_batches.next_batch().to_vec();
            let x = tape.leaf(scenario.source.features.select_rows(&batch)?);
            let batch_labels: Vec<usize> = batch.iter().map(|&i| source_labels[i]).collect();
            let source_feats = feature.forward(&mut tape, x, &taped_feature)?;
            let source_logits = head.forward(&mut tape, source_feats, &taped_head)?;
            let ce = cross_entropy(&mut tape, source_logits, &batch_labels)?;

            let mut total = ce;
            let mut adaptation_value = 0.0;
            let mut adversarial_value = 0.0;

            let target_feats: Option<NodeId> = if let Some(batches) = target_batches.as_mut() {
                let batch = batches.next_batch().to_vec();
                let x = tape.leaf(scenario.target.features.select_rows(&batch)?);
                Some(feature.forward(&mut tape, x, &taped_feature)?)
            } else {
                None
            };

            if adapt_active {
                let feats = target_feats.expect("adaptation requires a target batch");
                let target_logits = head.forward(&mut tape, feats, &taped_head)?;
                let term = if method.uses_confusion() {
                    mcc_loss(&mut tape, target_logits, config.temperature, config.toggles)?.loss
                } else {
                    mean_entropy(&mut tape, target_logits, 1.0)?
                };
                adaptation_value = tape.value(term).scalar()?;
                let scaled = tape.scale(term, config.adapt_weight);
                total = tape.add(total, scaled)?;
            }

            let taped_disc = discriminator.as_ref().map(|d| d.to_tape(&mut tape));
            if let (Some(disc), Some(taped_disc)) = (discriminator.as_ref(), taped_disc.as_ref()) {
                let feats = target_feats.expect("adversarial training requires a target batch");
                let coeff =
                    config.adversarial_weight * grl_schedule(iteration as f64 / ramp_span);
                let term = domain_adversarial_loss(
                    &mut tape,
                    disc,
                    taped_disc,
                    source_feats,
                    feats,
                    coeff,
                )?;
                adversarial_value = tape.value(term).scalar()?;
                total = tape.add(total, term)?;
            }

            let loss_value = tape.value(total).scalar()?;
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss_value}")));
            }
            let classifier_value = tape.value(ce).scalar()?;

            let grads = tape.backward(total)?;
            sgd_step(
                &mut feature,
                &taped_feature,
                &grads,
                config.learning_rate,
                config.momentum,
                &mut feature_opt,
            )?;
            sgd_step(
                &mut head,
                &taped_head,
                &grads,
                config.learning_rate,
                config.momentum,
                &mut head_opt,
            )?;
            if let (Some(disc), Some(taped_disc), Some(opt)) = (
                discriminator.as_mut(),
                taped_disc.as_ref(),
                disc_opt.as_mut(),
            ) {
                sgd_step(
                    disc,
                    taped_disc,
                    &grads,
                    config.learning_rate,
                    config.momentum,
                    opt,
                )?;
            }
            Ok((loss_value, classifier_value, adaptation_value, adversarial_value))
        };

        let (loss, classifier_loss, adaptation_loss, adversarial_loss) =
            step().map_err(|e| match e {
                Error::NonFinite(message) => Error::Diverged { iteration, message },
                other => other,
            })?;

        if (iteration + 1) % config.curve_every == 0 {
            let source_eval = evaluate(&feature, &head, &scenario.source, classes)?;
            let target_eval = evaluate(&feature, &head, &scenario.target, classes)?;
            curves.push(CurvePoint {
                iteration: iteration + 1,
                loss,
                classifier_loss,
                adaptation_loss,
                adversarial_loss,
                source_accuracy: source_eval.accuracy,
                target_accuracy: target_eval.accuracy,
            });
        }
    }

    let source_eval = evaluate(&feature, &head, &scenario.source, classes)?;
    let target_eval = evaluate(&feature, &head, &scenario.target, classes)?;
    let thresholds = config
        .eval_thresholds
        .iter()
        .map(|&t| (t, iterations_to_threshold(&curves, t)))
        .collect();

    let report = Report {
        scenario: scenario.kind.as_str().to_string(),
        method: method.as_str().to_string(),
        seed: config.seed,
        num_classes: classes,
        source_size: scenario.source.len(),
        target_size: scenario.target.len(),
        final_source_accuracy: source_eval.accuracy,
        final_target_accuracy: target_eval.accuracy,
        per_class_target_accuracy: target_eval.per_class_accuracy,
        target_class_mass: target_eval.class_mass,
        target_predicted_fraction: target_eval.predicted_fraction,
        target_error_matrix: (0..classes)
            .map(|j| target_eval.class_error_matrix.row(j).to_vec())
            .collect(),
        iterations_to_threshold: thresholds,
        curves,
    };
    Ok(TrainOutcome {
        report,
        checkpoint: Checkpoint {
            feature,
            head,
            discriminator,
        },
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
