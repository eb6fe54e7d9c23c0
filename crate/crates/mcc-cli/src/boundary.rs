//! Decision-boundary export: evaluates a trained checkpoint over a regular
//! 2-D grid so the learned class regions can be plotted.

use mcc::autodiff::Matrix;
use mcc::trainer::Checkpoint;

use crate::error::{CliError, Result};

/// Inclusive plot window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    /// Parses `"xmin,xmax,ymin,ymax"`.
    pub fn parse(raw: &str) -> Result<Self> {
        let parts: Vec<&str> = raw.split(',').collect();
        if parts.len() != 4 {
            return Err(CliError::Config(format!(
                "bounds must be `xmin,xmax,ymin,ymax`, got `{raw}`"
            )));
        }
        let mut values = [0.0; 4];
        for (v, part) in values.iter_mut().zip(&parts) {
            *v = part.trim().parse().map_err(|_| {
                CliError::Config(format!("bounds component `{part}` is not a number"))
            })?;
        }
        let bounds = Bounds {
            xmin: values[0],
            xmax: values[1],
            ymin: values[2],
            ymax: values[3],
        };
        if !(bounds.xmin < bounds.xmax && bounds.ymin < bounds.ymax) {
            return Err(CliError::Config(format!(
                "bounds must satisfy xmin < xmax and ymin < ymax, got `{raw}`"
            )));
        }
        Ok(bounds)
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            xmin: -3.0,
            xmax: 3.0,
            ymin: -3.0,
            ymax: 3.0,
        }
    }
}

/// Renders an `N x N` grid of predictions as CSV with columns
/// `x,y,pred,confidence`, row-major in y then x. Confidence is the largest
/// softmax probability at temperature 1.
pub fn export_boundary_grid(
    checkpoint: &Checkpoint,
    bounds: Bounds,
    resolution: usize,
) -> Result<String> {
    if checkpoint.feature.in_dim() != 2 {
        return Err(CliError::Config(format!(
            "boundary export needs a model over 2-D inputs, got {}-D",
            checkpoint.feature.in_dim()
        )));
    }
    if resolution < 2 {
        return Err(CliError::Config(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }

    let n = resolution;
    let step_x = (bounds.xmax - bounds.xmin) / (n - 1) as f64;
    let step_y = (bounds.ymax - bounds.ymin) / (n - 1) as f64;
    let mut points = Matrix::zeros(n * n, 2);
    for iy in 0..n {
        for ix in 0..n {
            let row = iy * n + ix;
            points.set(row, 0, bounds.xmin + ix as f64 * step_x);
            points.set(row, 1, bounds.ymin + iy as f64 * step_y);
        }
    }

    let logits = checkpoint
        .head
        .forward_plain(&checkpoint.feature.forward_plain(&points)?)?;
    let probs = logits.softmax_rows(1.0)?;
    let predictions = logits.argmax_rows();

    let mut out = String::from("x,y,pred,confidence\n");
    for row in 0..n * n {
        let confidence = probs
            .row(row)
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        out.push_str(&format!(
            "{},{},{},{}\n",
            points.get(row, 0),
            points.get(row, 1),
            predictions[row],
            confidence
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcc::nn::{Activation, LayerSpec, ModelParams};
    use mcc::rng::stream_rng;

    /// A checkpoint whose feature map is the identity and whose head is the
    /// given 2 x 2 linear map.
    fn linear_checkpoint(head_weights: [[f64; 2]; 2], head_bias: [f64; 2]) -> Checkpoint {
        let mut rng = stream_rng(0, 0);
        let mut feature =
            ModelParams::init(&[LayerSpec::new(2, 2, Activation::Linear)], &mut rng).unwrap();
        let w = feature.layers[0].weight.data_mut();
        w.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);

        let mut head =
            ModelParams::init(&[LayerSpec::new(2, 2, Activation::Linear)], &mut rng).unwrap();
        let w = head.layers[0].weight.data_mut();
        w.copy_from_slice(&[
            head_weights[0][0],
            head_weights[0][1],
            head_weights[1][0],
            head_weights[1][1],
        ]);
        head.layers[0].bias.data_mut().copy_from_slice(&head_bias);

        Checkpoint {
            feature,
            head,
            discriminator: None,
        }
    }

    #[test]
    fn minimal_grid_has_four_rows_in_y_then_x_order() {
        let checkpoint = linear_checkpoint([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        let csv =
            export_boundary_grid(&checkpoint, Bounds::parse("0,1,10,11").unwrap(), 2).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "x,y,pred,confidence");
        assert!(lines[1].starts_with("0,10,"));
        assert!(lines[2].starts_with("1,10,"));
        assert!(lines[3].starts_with("0,11,"));
        assert!(lines[4].starts_with("1,11,"));
    }

    #[test]
    fn constant_predictor_covers_the_grid_with_one_class() {
        // Zero weights, bias (1, 0): logits constant, class 0 everywhere.
        let checkpoint = linear_checkpoint([[0.0, 0.0], [0.0, 0.0]], [1.0, 0.0]);
        let csv = export_boundary_grid(&checkpoint, Bounds::default(), 11).unwrap();
        let expected_conf = 1.0 / (1.0 + (-1.0f64).exp());
        for line in csv.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[2], "0");
            let conf: f64 = fields[3].parse().unwrap();
            assert!((conf - expected_conf).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_classifier_boundary_matches_the_analytic_line() {
        // logit0 = x, logit1 = -x: the class flips across the line x = 0.
        let checkpoint = linear_checkpoint([[1.0, -1.0], [0.0, 0.0]], [0.0, 0.0]);
        let n = 21;
        let bounds = Bounds::parse("-1,1,-1,1").unwrap();
        let cell = 2.0 / (n - 1) as f64;
        let csv = export_boundary_grid(&checkpoint, bounds, n).unwrap();

        let rows: Vec<Vec<String>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        for iy in 0..n {
            for ix in 0..n {
                let fields = &rows[iy * n + ix];
                let x: f64 = fields[0].parse().unwrap();
                let pred: usize = fields[2].parse().unwrap();
                let analytic = if x > 0.0 { 0 } else { 1 };
                // Grid points within one cell of the line may go either way.
                if x.abs() > cell {
                    assert_eq!(pred, analytic, "at x = {x}");
                }
            }
        }
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let checkpoint = linear_checkpoint([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        assert!(export_boundary_grid(&checkpoint, Bounds::default(), 1).is_err());
        assert!(Bounds::parse("1,0,0,1").is_err());
        assert!(Bounds::parse("0,1,0").is_err());
        assert!(Bounds::parse("a,b,c,d").is_err());

        let mut rng = stream_rng(0, 0);
        let feature =
            ModelParams::init(&[LayerSpec::new(3, 2, Activation::Relu)], &mut rng).unwrap();
        let head =
            ModelParams::init(&[LayerSpec::new(2, 2, Activation::Linear)], &mut rng).unwrap();
        let bad = Checkpoint {
            feature,
            head,
            discriminator: None,
        };
        let err = export_boundary_grid(&bad, Bounds::default(), 5).unwrap_err();
        assert!(err.to_string().contains("2-D"), "{err}");
    }
}
