//! Writes the artifact set of a finished run. All files go through the
//! atomic temp-file/rename path, and their bytes are a pure function of the
//! report, so identical runs produce identical files.

use std::path::Path;

use mcc::trainer::{write_atomic, Report};

use crate::error::Result;

/// Writes `report.json`, `curves.csv` and `error_matrix.csv` into `dir`
/// (which must exist).
pub fn write_run_artifacts(report: &Report, dir: &Path) -> Result<()> {
    let mut json = report.to_json()?;
    json.push('\n');
    write_atomic(&dir.join("report.json"), &json)?;
    write_atomic(&dir.join("curves.csv"), &report.curves_csv())?;
    write_atomic(&dir.join("error_matrix.csv"), &report.error_matrix_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcc::trainer::train;

    use crate::config::parse_config;

    #[test]
    fn artifact_set_is_complete_and_deterministic() {
        let config = parse_config(
            r#"{"scenario": "uda-two-moons", "iterations": 30, "curve_every": 10}"#,
            "test",
        )
        .unwrap();
        let resolved = config.resolve(Some(0)).unwrap();
        let outcome = train(&resolved.scenario, &resolved.train).unwrap();

        let dir = std::env::temp_dir().join("mcc-report-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        write_run_artifacts(&outcome.report, &dir).unwrap();

        let report = std::fs::read_to_string(dir.join("report.json")).unwrap();
        let curves = std::fs::read_to_string(dir.join("curves.csv")).unwrap();
        let matrix = std::fs::read_to_string(dir.join("error_matrix.csv")).unwrap();
        assert!(report.contains("\"final_target_accuracy\""));
        assert_eq!(curves.lines().count(), 1 + 3);
        assert_eq!(matrix.lines().count(), 1 + 2);

        // A re-run writes byte-identical artifacts.
        let rerun = train(&resolved.scenario, &resolved.train).unwrap();
        write_run_artifacts(&rerun.report, &dir).unwrap();
        assert_eq!(std::fs::read_to_string(dir.join("report.json")).unwrap(), report);
        assert_eq!(std::fs::read_to_string(dir.join("curves.csv")).unwrap(), curves);
    }
}
