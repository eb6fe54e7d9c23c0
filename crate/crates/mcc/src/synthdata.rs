//! Synthetic 2-D domain-shift datasets: interleaved moons and radial blob
//! rings, plus the transforms and plumbing (shifting, label restriction,
//! merging, batching, CSV) that turn them into adaptation problems.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// A labeled point cloud from one or more domains.
///
/// Labels are oracle labels: adaptation never shows target labels to the
/// optimizer, but evaluation and diagnostics need them, so they travel with
/// the data and `None` marks rows whose label is genuinely unknown (only
/// possible for data loaded from CSV).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    /// One row per sample.
    pub features: Matrix,
    pub labels: Vec<Option<usize>>,
    /// Per-row domain provenance; survives merging.
    pub domain_ids: Vec<usize>,
}

impl DomainDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, domain_id: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Contract(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        let n = features.rows();
        Ok(DomainDataset {
            features,
            labels: labels.into_iter().map(Some).collect(),
            domain_ids: vec![domain_id; n],
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Highest label plus one, counting only labeled rows.
    pub fn num_classes(&self) -> usize {
        self.labels
            .iter()
            .flatten()
            .max()
            .map_or(0, |&max| max + 1)
    }

    /// All labels, failing loudly if any row is unlabeled. Training reads
    /// source labels through this; evaluation reads target labels.
    pub fn oracle_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| Error::Contract(format!("row {i} has no oracle label")))
            })
            .collect()
    }

    /// Rows (features and labels) at the given indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<DomainDataset> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let domain_ids = indices.iter().map(|&i| self.domain_ids[i]).collect();
        Ok(DomainDataset {
            features,
            labels,
            domain_ids,
        })
    }
}

/// Rigid motion plus isotropic Gaussian noise, applied to 2-D features to
/// manufacture a shifted domain. Rotation is about the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftTransform {
    pub rotation_deg: f64,
    pub translate: [f64; 2],
    pub noise_std: f64,
}

impl Default for ShiftTransform {
    fn default() -> Self {
        ShiftTransform {
            rotation_deg: 30.0,
            translate: [0.0, 0.0],
            noise_std: 0.1,
        }
    }
}

/// Two interleaved half-circles, the classic nonlinear binary benchmark.
/// Class 0 runs along the upper unit half-circle centered at `(-0.5, -0.25)`;
/// class 1 is its point reflection through the origin, so the two arcs
/// interlock and no line separates them. The configuration is centered on the
/// origin so that a [`ShiftTransform`] rotation turns the moons in place
/// instead of slinging one arc across the other. Angles are drawn uniformly
/// and isotropic Gaussian noise of `noise_std` is added per point.
pub fn gen_two_moons(n_per_class: usize, noise_std: f64, seed: u64) -> Result<DomainDataset> {
    if n_per_class == 0 {
        return Err(Error::Parameter {
            name: "n_per_class",
            message: "need at least one sample per class".into(),
        });
    }
    let mut rng = stream_rng(seed, 0x5eed_da7a);
    let noise = gaussian(noise_std)?;
    let mut points = Vec::with_capacity(n_per_class * 2 * 2);
    let mut labels = Vec::with_capacity(n_per_class * 2);
    for class in 0..2usize {
        for _ in 0..n_per_class {
            let t = rng.random_range(0.0..std::f64::consts::PI);
            let (x, y) = if class == 0 {
                (t.cos() - 0.5, t.sin() - 0.25)
            } else {
                (0.5 - t.cos(), 0.25 - t.sin())
            };
            points.push(x + noise.sample(&mut rng));
            points.push(y + noise.sample(&mut rng));
            labels.push(class);
        }
    }
    let features = Matrix::new(n_per_class * 2, 2, points)?;
    DomainDataset::new(features, labels, 0)
}

/// Radial blob ring: `num_classes` isotropic Gaussian clusters with centers
/// evenly spaced on a circle of the given radius.
pub fn gen_blobs(
    num_classes: usize,
    n_per_class: usize,
    radius: f64,
    noise_std: f64,
    seed: u64,
) -> Result<DomainDataset> {
    if num_classes < 2 {
        return Err(Error::Parameter {
            name: "num_classes",
            message: format!("need at least 2 classes, got {num_classes}"),
        });
    }
    if n_per_class == 0 {
        return Err(Error::Parameter {
            name: "n_per_class",
            message: "need at least one sample per class".into(),
        });
    }
    let mut rng = stream_rng(seed, 0xb10b_da7a);
    let noise = gaussian(noise_std)?;
    let mut points = Vec::with_capacity(num_classes * n_per_class * 2);
    let mut labels = Vec::with_capacity(num_classes * n_per_class);
    for class in 0..num_classes {
        let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
        let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
        for _ in 0..n_per_class {
            points.push(cx + noise.sample(&mut rng));
            points.push(cy + noise.sample(&mut rng));
            labels.push(class);
        }
    }
    let features = Matrix::new(num_classes * n_per_class, 2, points)?;
    DomainDataset::new(features, labels, 0)
}

/// Applies a [`ShiftTransform`] to every row, producing a new domain with
/// the given id. Labels are preserved; fresh noise is drawn from `seed`.
pub fn shift_domain(
    source: &DomainDataset,
    transform: &ShiftTransform,
    seed: u64,
    domain_id: usize,
) -> Result<DomainDataset> {
    if source.dim() != 2 {
        return Err(Error::Contract(format!(
            "shift_domain expects 2-D features, got {}-D",
            source.dim()
        )));
    }
    let mut rng = stream_rng(seed, 0x5021_da7a);
    let noise = gaussian(transform.noise_std)?;
    let theta = transform.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut features = Matrix::zeros(source.len(), 2);
    for i in 0..source.len() {
        let x = source.features.get(i, 0);
        let y = source.features.get(i, 1);
        let rx = cos * x - sin * y + transform.translate[0] + noise.sample(&mut rng);
        let ry = sin * x + cos * y + transform.translate[1] + noise.sample(&mut rng);
        features.set(i, 0, rx);
        features.set(i, 1, ry);
    }
    Ok(DomainDataset {
        features,
        labels: source.labels.clone(),
        domain_ids: vec![domain_id; source.len()],
    })
}

/// Keeps only rows whose label is in `keep`, preserving the original label
/// ids — the classifier keeps the full label space, the domain just stops
/// exercising part of it.
pub fn restrict_labels(dataset: &DomainDataset, keep: &[usize]) -> Result<DomainDataset> {
    if keep.is_empty() {
        return Err(Error::Parameter {
            name: "keep",
            message: "kept class set must not be empty".into(),
        });
    }
    let indices: Vec<usize> = dataset
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.map_or(false, |l| keep.contains(&l)))
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(Error::Contract(
            "label restriction removed every sample".into(),
        ));
    }
    dataset.subset(&indices)
}

/// Concatenates several domains into one dataset, keeping per-row domain
/// provenance. This is the only mechanism behind multi-source and
/// multi-target flavors: downstream training code always sees exactly one
/// source and one target dataset.
pub fn merge_domains(domains: &[DomainDataset]) -> Result<DomainDataset> {
    let first = domains
        .first()
        .ok_or_else(|| Error::Contract("cannot merge zero domains".into()))?;
    let mut merged = first.clone();
    for d in &domains[1..] {
        if d.dim() != merged.dim() {
            return Err(Error::dimension(
                "merge_domains",
                (merged.len(), merged.dim()),
                (d.len(), d.dim()),
            ));
        }
        merged.features = merged.features.concat_rows(&d.features)?;
        merged.labels.extend_from_slice(&d.labels);
        merged.domain_ids.extend_from_slice(&d.domain_ids);
    }
    Ok(merged)
}

/// Endless shuffled batch supply. Each pass hands out disjoint batches of
/// `batch_size` row indices and reshuffles once fewer than a full batch
/// remains, so short tail batches are never emitted. Batches larger than
/// the dataset are truncated to its size.
#[derive(Debug)]
pub struct BatchIter {
    indices: Vec<usize>,
    batch_size: usize,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchIter {
    pub fn new(n: usize, batch_size: usize, rng: ChaCha8Rng) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Parameter {
                name: "batch_iter",
                message: format!("need n > 0 and batch_size > 0, got n={n}, batch={batch_size}"),
            });
        }
        let mut iter = BatchIter {
            indices: (0..n).collect(),
            batch_size: batch_size.min(n),
            pos: 0,
            rng,
        };
        iter.indices.shuffle(&mut iter.rng);
        Ok(iter)
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos + self.batch_size > self.indices.len() {
            self.indices.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = &self.indices[self.pos..self.pos + self.batch_size];
        self.pos += self.batch_size;
        batch
    }
}

/// Writes `x1,...,xd,label,domain_id` rows; unlabeled rows get label -1.
/// Floats are printed in shortest round-trip form, so dump/load is exact.
pub fn dump_csv(dataset: &DomainDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let dim = dataset.dim();
    for j in 0..dim {
        out.push_str(&format!("x{},", j + 1));
    }
    out.push_str("label,domain_id\n");
    for i in 0..dataset.len() {
        for j in 0..dim {
            out.push_str(&format!("{},", dataset.features.get(i, j)));
        }
        let label = dataset.labels[i].map_or(-1, |l| l as i64);
        out.push_str(&format!("{label},{}\n", dataset.domain_ids[i]));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<DomainDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3
        || columns[columns.len() - 2] != "label"
        || columns[columns.len() - 1] != "domain_id"
    {
        return Err(Error::Parse(format!(
            "{}: expected header x1,...,label,domain_id, got {header:?}",
            path.display()
        )));
    }
    let dim = columns.len() - 2;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut domain_ids = Vec::new();
    for (line_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Parse(format!(
                "{}: line {}: expected {} fields, got {}",
                path.display(),
                line_no + 2,
                dim + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| {
            Error::Parse(format!("{}: line {}: bad {what}", path.display(), line_no + 2))
        };
        for field in &fields[..dim] {
            data.push(field.parse::<f64>().map_err(|_| bad("feature"))?);
        }
        let label: i64 = fields[dim].parse().map_err(|_| bad("label"))?;
        labels.push(if label < 0 { None } else { Some(label as usize) });
        domain_ids.push(fields[dim + 1].parse().map_err(|_| bad("domain_id"))?);
    }
    let features = Matrix::new(labels.len(), dim, data)?;
    Ok(DomainDataset {
        features,
        labels,
        domain_ids,
    })
}

fn gaussian(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::Parameter {
        name: "noise_std",
        message: e.to_string(),
    })
}
