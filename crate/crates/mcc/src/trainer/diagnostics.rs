//! Post-hoc diagnostics on learned feature spaces.
//!
//! `a_distance` quantifies how separable two feature clouds are (0 when a
//! probe cannot tell them apart, 2 when it separates them perfectly), and
//! `ideal_joint_error` measures whether one classifier can serve both
//! domains at once. Together they explain *why* a transfer succeeded or
//! failed: good adaptation drives the distance down while keeping the
//! joint error low.

use rand::seq::SliceRandom;

use crate::autodiff::{Matrix, Tape};
use crate::confusion::cross_entropy;
use crate::error::{Error, Result};
use crate::nn::{sgd_step, Activation, LayerSpec, ModelParams, OptState};
use crate::rng::stream_rng;
use crate::synthdata::DomainDataset;

/// Feature-space image of a dataset under a trained extractor.
pub fn extract_features(feature: &ModelParams, data: &DomainDataset) -> Result<Matrix> {
    feature.forward_plain(&data.features)
}

/// Independently initialized probe fits per diagnostic. Both quantities
/// below are defined as optima over a hypothesis class, so a single SGD run
/// only bounds them; taking the best of a few restarts tightens the
/// estimate and keeps it from hinging on one initialization.
const PROBE_RESTARTS: u64 = 5;

/// Proxy distance between two feature clouds.
///
/// A width-8 two-layer probe is trained to classify rows as source (0) or
/// target (1) on a per-domain 50/50 split; with the best held-out error `e`
/// across restarts, the distance is `2 (1 - 2 e)`, clamped to `[0, 2]`.
pub fn a_distance(source: &Matrix, target: &Matrix, seed: u64) -> Result<f64> {
    if source.cols() != target.cols() {
        return Err(Error::dimension("a_distance", source.shape(), target.shape()));
    }
    if source.rows() < 2 || target.rows() < 2 {
        return Err(Error::Contract(
            "a_distance needs at least two rows per domain".into(),
        ));
    }
    let (source, target) = standardize_pair(source, target)?;
    let (train_s, test_s) = split_half(&source, seed, 0xad_50_11)?;
    let (train_t, test_t) = split_half(&target, seed, 0xad_50_22)?;

    let train = train_s.concat_rows(&train_t)?;
    let mut labels = vec![0usize; train_s.rows()];
    labels.extend(std::iter::repeat(1).take(train_t.rows()));

    let mut best_error = f64::INFINITY;
    for restart in 0..PROBE_RESTARTS {
        let probe = fit_probe(&train, &labels, 2, seed, restart)?;
        let errors = |features: &Matrix, label: usize| -> Result<usize> {
            let logits = probe.forward_plain(features)?;
            Ok(logits
                .argmax_rows()
                .into_iter()
                .filter(|&p| p != label)
                .count())
        };
        let wrong = errors(&test_s, 0)? + errors(&test_t, 1)?;
        let error_rate = wrong as f64 / (test_s.rows() + test_t.rows()) as f64;
        best_error = best_error.min(error_rate);
    }
    Ok((2.0 * (1.0 - 2.0 * best_error)).clamp(0.0, 2.0))
}

/// Error of the best single classifier serving both domains at once: a
/// probe is fit on the union of both labeled feature clouds and the larger
/// of the two per-domain error rates is returned, minimized over restarts.
pub fn ideal_joint_error(
    source: &Matrix,
    source_labels: &[usize],
    target: &Matrix,
    target_labels: &[usize],
    num_classes: usize,
    seed: u64,
) -> Result<f64> {
    if source.rows() != source_labels.len() || target.rows() != target_labels.len() {
        return Err(Error::Contract(
            "feature rows and label counts must match".into(),
        ));
    }
    let (source, target) = standardize_pair(source, target)?;
    let union = source.concat_rows(&target)?;
    let mut labels = source_labels.to_vec();
    labels.extend_from_slice(target_labels);

    let mut best = f64::INFINITY;
    for restart in 0..PROBE_RESTARTS {
        let probe = fit_probe(&union, &labels, num_classes, seed, restart)?;
        let error_rate = |features: &Matrix, labels: &[usize]| -> Result<f64> {
            let predictions = probe.forward_plain(features)?.argmax_rows();
            let wrong = predictions
                .iter()
                .zip(labels)
                .filter(|(p, l)| p != l)
                .count();
            Ok(wrong as f64 / labels.len() as f64)
        };
        let joint = error_rate(&source, source_labels)?.max(error_rate(&target, target_labels)?);
        best = best.min(joint);
    }
    Ok(best)
}

/// Z-scores both clouds with their pooled per-column mean and deviation.
/// Probes see O(1) inputs regardless of the feature scale a trained
/// extractor happens to produce, which keeps their logits away from the
/// saturated region where clamped logarithms stop providing gradient.
fn standardize_pair(source: &Matrix, target: &Matrix) -> Result<(Matrix, Matrix)> {
    let pooled = source.concat_rows(target)?;
    let n = pooled.rows() as f64;
    let cols = pooled.cols();
    let mut mean = vec![0.0; cols];
    let mut sq = vec![0.0; cols];
    for i in 0..pooled.rows() {
        for (j, (m, s)) in mean.iter_mut().zip(&mut sq).enumerate() {
            let v = pooled.get(i, j);
            *m += v;
            *s += v * v;
        }
    }
    for (m, s) in mean.iter_mut().zip(&mut sq) {
        *m /= n;
        *s = (*s / n - *m * *m).max(0.0).sqrt() + 1e-8;
    }
    let apply = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |i, j| (m.get(i, j) - mean[j]) / sq[j]);
    Ok((apply(source), apply(target)))
}

/// Shuffles rows with a seeded stream and splits them into two halves.
fn split_half(features: &Matrix, seed: u64, stream: u64) -> Result<(Matrix, Matrix)> {
    let mut indices: Vec<usize> = (0..features.rows()).collect();
    indices.shuffle(&mut stream_rng(seed, stream));
    let mid = indices.len() / 2;
    Ok((
        features.select_rows(&indices[..mid])?,
        features.select_rows(&indices[mid..])?,
    ))
}

/// Full-batch probe shared by both diagnostics: one hidden layer of width
/// 8, 800 cross-entropy steps of SGD at learning rate 0.05, momentum 0.9.
fn fit_probe(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    seed: u64,
    restart: u64,
) -> Result<ModelParams> {
    let specs = [
        LayerSpec::new(features.cols(), 8, Activation::Relu),
        LayerSpec::new(8, classes, Activation::Linear),
    ];
    let mut params = ModelParams::init(&specs, &mut stream_rng(seed, 0x9e0b_e5ee + restart))?;
    let mut state = OptState::new(&params);
    for _ in 0..800 {
        let mut tape = Tape::new();
        let x = tape.leaf(features.clone());
        let taped = params.to_tape(&mut tape);
        let logits = params.forward(&mut tape, x, &taped)?;
        let loss = cross_entropy(&mut tape, logits, labels)?;
        let grads = tape.backward(loss)?;
        sgd_step(&mut params, &taped, &grads, 0.05, 0.9, &mut state)?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::gen_blobs;

    #[test]
    fn identical_clouds_are_indistinguishable() {
        let data = gen_blobs(3, 100, 4.0, 0.5, 5).unwrap();
        let d = a_distance(&data.features, &data.features, 1).unwrap();
        assert!(d <= 0.2, "distance {d} for identical clouds");
    }

    #[test]
    fn disjoint_clouds_are_fully_separable() {
        let near = gen_blobs(2, 100, 1.0, 0.2, 6).unwrap();
        let far = Matrix::from_fn(200, 2, |i, j| near.features.get(i, j) + 50.0);
        let d = a_distance(&near.features, &far, 1).unwrap();
        assert!(d >= 1.8, "distance {d} for disjoint clouds");
    }

    #[test]
    fn a_distance_is_seed_deterministic_and_validates_shapes() {
        let a = gen_blobs(2, 50, 4.0, 0.5, 7).unwrap();
        let b = gen_blobs(2, 50, 4.0, 0.5, 8).unwrap();
        let d1 = a_distance(&a.features, &b.features, 3).unwrap();
        let d2 = a_distance(&a.features, &b.features, 3).unwrap();
        assert_eq!(d1, d2);
        assert!(a_distance(&a.features, &Matrix::zeros(10, 5), 0).is_err());
    }

    #[test]
    fn joint_error_is_low_when_domains_agree() {
        // Same well-separated blobs in both roles: one classifier fits both.
        let data = gen_blobs(3, 80, 4.0, 0.3, 9).unwrap();
        let labels = data.oracle_labels().unwrap();
        let err = ideal_joint_error(&data.features, &labels, &data.features, &labels, 3, 1).unwrap();
        assert!(err <= 0.02, "joint error {err}");
    }

    #[test]
    fn joint_error_is_high_when_labels_conflict() {
        // Identical features with permuted labels: no single classifier can
        // satisfy both domains, so the error approaches 50%.
        let data = gen_blobs(2, 80, 4.0, 0.3, 10).unwrap();
        let labels = data.oracle_labels().unwrap();
        let flipped: Vec<usize> = labels.iter().map(|&l| 1 - l).collect();
        let err =
            ideal_joint_error(&data.features, &labels, &data.features, &flipped, 2, 1).unwrap();
        assert!(err >= 0.4, "joint error {err}");
    }
}
