//! Training reports: loss/accuracy curves, convergence lookups, and the
//! serializable summary a run leaves behind.
//!
//! Reports are deliberately free of wall-clock fields: rerunning the same
//! configuration must produce byte-identical JSON, and timings live in
//! [`super::TrainOutcome`] instead.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sampled point of the training trajectory. Loss values come from the
/// minibatch that produced the parameter update at this iteration;
/// accuracies are measured on the full datasets. Inactive loss terms stay
/// at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    /// Total objective the optimizer stepped on.
    pub loss: f64,
    /// Supervised cross-entropy on the source batch.
    pub classifier_loss: f64,
    /// Unsupervised adaptation term (confusion or entropy) on the target
    /// batch.
    pub adaptation_loss: f64,
    /// Domain-discriminator cross-entropy.
    pub adversarial_loss: f64,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
}

/// First recorded iteration whose target accuracy reaches `threshold`.
pub fn iterations_to_threshold(curves: &[CurvePoint], threshold: f64) -> Option<u64> {
    curves
        .iter()
        .find(|p| p.target_accuracy >= threshold)
        .map(|p| p.iteration)
}

/// Serializable outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub num_classes: usize,
    pub source_size: usize,
    pub target_size: usize,
    pub final_source_accuracy: f64,
    pub final_target_accuracy: f64,
    /// Recall per class on the target, indexed by class id; `NaN`-free:
    /// classes absent from the target report recall 1.0.
    pub per_class_target_accuracy: Vec<f64>,
    /// Mean predicted probability mass per class on the target.
    pub target_class_mass: Vec<f64>,
    /// Fraction of target samples whose argmax lands in each class.
    pub target_predicted_fraction: Vec<f64>,
    /// Row-normalized target error matrix: entry `[j][j']` is the fraction
    /// of true-class-`j` samples predicted as `j'`. Rows of classes absent
    /// from the target are all zero; the others sum to 1.
    pub target_error_matrix: Vec<Vec<f64>>,
    /// `[threshold, first iteration reaching it (or null)]` pairs, in
    /// ascending threshold order.
    pub iterations_to_threshold: Vec<(f64, Option<u64>)>,
    pub curves: Vec<CurvePoint>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Curve points as CSV, one row per sample.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from(
            "iteration,loss,classifier_loss,adaptation_loss,adversarial_loss,source_accuracy,target_accuracy\n",
        );
        for p in &self.curves {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.iteration,
                p.loss,
                p.classifier_loss,
                p.adaptation_loss,
                p.adversarial_loss,
                p.source_accuracy,
                p.target_accuracy
            ));
        }
        out
    }

    /// Target error matrix as CSV: one row per true class, one column per
    /// predicted class.
    pub fn error_matrix_csv(&self) -> String {
        let mut out = String::from("true_class");
        for j in 0..self.num_classes {
            out.push_str(&format!(",pred_{j}"));
        }
        out.push('\n');
        for (j, row) in self.target_error_matrix.iter().enumerate() {
            out.push_str(&j.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Writes a file through a sibling temp file and an atomic rename, so a
/// crash never leaves a half-written artifact behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(iteration: u64, target_accuracy: f64) -> CurvePoint {
        CurvePoint {
            iteration,
            loss: 1.0,
            classifier_loss: 0.5,
            adaptation_loss: 0.5,
            adversarial_loss: 0.0,
            source_accuracy: 0.9,
            target_accuracy,
        }
    }

    #[test]
    fn threshold_lookup_returns_first_crossing() {
        let curves = [point(10, 0.5), point(20, 0.86), point(30, 0.84), point(40, 0.9)];
        assert_eq!(iterations_to_threshold(&curves, 0.85), Some(20));
        assert_eq!(iterations_to_threshold(&curves, 0.9), Some(40));
        assert_eq!(iterations_to_threshold(&curves, 0.99), None);
        assert_eq!(iterations_to_threshold(&[], 0.5), None);
    }

    #[test]
    fn report_json_round_trips_bitwise() {
        let report = Report {
            scenario: "uda".into(),
            method: "mcc".into(),
            seed: 3,
            num_classes: 2,
            source_size: 600,
            target_size: 600,
            final_source_accuracy: 0.998_333_333_333_333_4,
            final_target_accuracy: 0.92,
            per_class_target_accuracy: vec![0.9, 0.94],
            target_class_mass: vec![0.51, 0.49],
            target_predicted_fraction: vec![0.5, 0.5],
            target_error_matrix: vec![vec![0.9, 0.1], vec![0.06, 0.94]],
            iterations_to_threshold: vec![(0.8, Some(120)), (0.95, None)],
            curves: vec![point(10, 0.123456789012345678)],
        };
        let json = report.to_json().unwrap();
        let back = Report::from_json(&json).unwrap();
        assert_eq!(report, back);
        // Serializing again yields the same bytes.
        assert_eq!(json, back.to_json().unwrap());
    }

    #[test]
    fn curves_csv_has_header_and_one_row_per_point() {
        let report = Report {
            scenario: "uda".into(),
            method: "mcc".into(),
            seed: 0,
            num_classes: 2,
            source_size: 1,
            target_size: 1,
            final_source_accuracy: 1.0,
            final_target_accuracy: 1.0,
            per_class_target_accuracy: vec![],
            target_class_mass: vec![],
            target_predicted_fraction: vec![],
            target_error_matrix: vec![vec![1.0, 0.0], vec![0.25, 0.75]],
            iterations_to_threshold: vec![],
            curves: vec![point(10, 0.5), point(20, 0.75)],
        };
        let csv = report.curves_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("iteration,loss,"));
        assert!(lines[1].starts_with("10,"));
        assert!(lines[2].starts_with("20,"));

        let matrix = report.error_matrix_csv();
        let lines: Vec<&str> = matrix.lines().collect();
        assert_eq!(lines.len(), 1 + report.num_classes);
        assert_eq!(lines[0], "true_class,pred_0,pred_1");
        assert_eq!(lines[1], "0,1,0");
        assert_eq!(lines[2], "1,0.25,0.75");
    }

    #[test]
    fn atomic_write_replaces_content_and_leaves_no_temp() {
        let dir = std::env::temp_dir().join("mcc-report-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("report.json");
        write_atomic(&path, "first").unwrap();
        write_atomic(&path, "second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert!(!path.with_extension("tmp").exists());
        fs::remove_file(&path).unwrap();
    }
}
