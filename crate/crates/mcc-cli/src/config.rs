//! Run configuration: a single JSON file naming a scenario (by preset or by
//! inline generator descriptors) plus any training overrides.
//!
//! Parsing fails closed: unknown keys are errors, so a misspelled
//! hyper-parameter can never silently fall back to its default. Resolution
//! turns a config into fully explicit form — every field populated, every
//! dataset seed pinned — which is what run manifests store.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use mcc::confusion::MccToggles;
use mcc::synthdata::{
    gen_blobs, gen_two_moons, restrict_labels, shift_domain, DomainDataset, ShiftTransform,
};
use mcc::trainer::{
    normalize_scenario, Method, NormalizedScenario, ScenarioKind, ScenarioSpec, TrainConfig,
};

use crate::error::{CliError, Result};

/// One training run as the user writes it: a scenario plus optional
/// overrides of the [`TrainConfig`] defaults. Unset fields resolve to the
/// defaults listed in `--help`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapt_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toggles: Option<MccToggles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_every: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_thresholds: Option<Vec<f64>>,
}

/// Either a named preset or an inline scenario with explicit generators.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioDescriptor {
    Preset(String),
    Custom(CustomScenario),
}

impl Serialize for ScenarioDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ScenarioDescriptor::Preset(name) => name.serialize(s),
            ScenarioDescriptor::Custom(custom) => custom.serialize(s),
        }
    }
}

// Hand-rolled so that a typo inside an inline scenario still reports the
// offending key; an untagged enum would collapse it into "no variant
// matched".
impl<'de> Deserialize<'de> for ScenarioDescriptor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        match value {
            serde_json::Value::String(name) => Ok(ScenarioDescriptor::Preset(name)),
            serde_json::Value::Object(_) => serde_json::from_value(value)
                .map(ScenarioDescriptor::Custom)
                .map_err(D::Error::custom),
            other => Err(D::Error::custom(format!(
                "scenario must be a preset name or an object, got {other}"
            ))),
        }
    }
}

/// Fully spelled-out scenario: adaptation kind, label-space size, and one
/// generator descriptor per domain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CustomScenario {
    pub kind: ScenarioKind,
    pub num_classes: usize,
    pub sources: Vec<DatasetDescriptor>,
    pub targets: Vec<DatasetDescriptor>,
}

/// Recipe for one synthetic domain: a generator, its parameters, and
/// optional shift / label-restriction post-steps. Parameters that do not
/// apply to the named generator are rejected.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    /// `two_moons` or `blobs`.
    pub generator: String,
    /// Blob ring only; two moons are always binary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    /// Blob ring only: radius of the circle the class centers sit on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Rigid motion plus fresh noise applied after generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftDescriptor>,
    /// Keep only these class labels (partial-domain targets).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_classes: Option<Vec<usize>>,
}

/// Serializable form of [`ShiftTransform`] plus the seed of its noise draw.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ShiftDescriptor {
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default)]
    pub translate: [f64; 2],
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ShiftDescriptor {
    fn transform(&self) -> ShiftTransform {
        ShiftTransform {
            rotation_deg: self.rotation_deg,
            translate: self.translate,
            noise_std: self.noise_std,
        }
    }
}

/// A config with everything resolved: explicit descriptors, pinned seeds,
/// instantiated datasets, and the final [`TrainConfig`].
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    /// Preset name, or `custom-<kind>` for inline scenarios.
    pub name: String,
    /// Echo of the configuration in fully explicit form.
    pub config: RunConfig,
    pub scenario: NormalizedScenario,
    pub train: TrainConfig,
}

pub const PRESET_NAMES: [&str; 6] = [
    "uda-two-moons",
    "pda-blobs",
    "msda-blobs",
    "mtda-blobs",
    "mspda-blobs",
    "mtpda-blobs",
];

/// Expands a preset name into its explicit scenario for a given run seed.
/// Dataset seeds are derived from the run seed so that different seeds
/// replicate the whole experiment, not just the weight initialization.
pub fn preset_scenario(name: &str, seed: u64) -> Result<CustomScenario> {
    let moons = |gen_seed: u64, shift: Option<ShiftDescriptor>| DatasetDescriptor {
        generator: "two_moons".into(),
        num_classes: None,
        n_per_class: Some(300),
        noise_std: Some(0.1),
        radius: None,
        seed: Some(gen_seed),
        shift,
        keep_classes: None,
    };
    let blobs = |gen_seed: u64, shift: Option<ShiftDescriptor>, keep: Option<Vec<usize>>| {
        DatasetDescriptor {
            generator: "blobs".into(),
            num_classes: Some(4),
            n_per_class: Some(150),
            noise_std: Some(0.5),
            radius: Some(4.0),
            seed: Some(gen_seed),
            shift,
            keep_classes: keep,
        }
    };
    let rotate = |deg: f64, noise: f64, shift_seed: u64| {
        Some(ShiftDescriptor {
            rotation_deg: deg,
            translate: [0.0, 0.0],
            noise_std: noise,
            seed: Some(shift_seed),
        })
    };

    let multi_blob_sources = || {
        vec![
            blobs(1000 + seed, None, None),
            blobs(1100 + seed, rotate(-15.0, 0.5, 3000 + seed), None),
            blobs(1200 + seed, rotate(15.0, 0.5, 3100 + seed), None),
        ]
    };
    let multi_blob_targets = |keep: Option<Vec<usize>>| {
        vec![
            blobs(1300 + seed, rotate(20.0, 0.5, 2000 + seed), keep.clone()),
            blobs(1400 + seed, rotate(30.0, 0.5, 2100 + seed), keep.clone()),
            blobs(1500 + seed, rotate(40.0, 0.5, 2200 + seed), keep),
        ]
    };

    let scenario = match name {
        "uda-two-moons" => CustomScenario {
            kind: ScenarioKind::Uda,
            num_classes: 2,
            sources: vec![moons(1000 + seed, None)],
            targets: vec![moons(1000 + seed, rotate(30.0, 0.1, 2000 + seed))],
        },
        "pda-blobs" => CustomScenario {
            kind: ScenarioKind::Pda,
            num_classes: 4,
            sources: vec![blobs(1000 + seed, None, None)],
            targets: vec![blobs(
                1000 + seed,
                rotate(30.0, 0.5, 2000 + seed),
                Some(vec![0, 1]),
            )],
        },
        "msda-blobs" => CustomScenario {
            kind: ScenarioKind::Msda,
            num_classes: 4,
            sources: multi_blob_sources(),
            targets: vec![blobs(1300 + seed, rotate(30.0, 0.5, 2000 + seed), None)],
        },
        "mtda-blobs" => CustomScenario {
            kind: ScenarioKind::Mtda,
            num_classes: 4,
            sources: vec![blobs(1000 + seed, None, None)],
            targets: multi_blob_targets(None),
        },
        "mspda-blobs" => CustomScenario {
            kind: ScenarioKind::Mspda,
            num_classes: 4,
            sources: multi_blob_sources(),
            targets: vec![blobs(
                1300 + seed,
                rotate(30.0, 0.5, 2000 + seed),
                Some(vec![0, 1]),
            )],
        },
        "mtpda-blobs" => CustomScenario {
            kind: ScenarioKind::Mtpda,
            num_classes: 4,
            sources: vec![blobs(1000 + seed, None, None)],
            targets: multi_blob_targets(Some(vec![0, 1])),
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown scenario preset `{other}`; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(scenario)
}

/// Parses a config file, reporting JSON syntax errors with line/column and
/// unknown keys by name.
pub fn parse_config(text: &str, path_label: &str) -> Result<RunConfig> {
    serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("{path_label}: {e}")))
}

impl RunConfig {
    /// Resolves the config: expands presets, pins every dataset seed,
    /// instantiates the datasets, and validates the result. `seed_override`
    /// (the `--seed` flag) wins over the config's own seed.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<ResolvedRun> {
        let defaults = TrainConfig::default();
        let seed = seed_override
            .or(self.seed)
            .unwrap_or(defaults.seed);

        let (name, mut custom) = match &self.scenario {
            ScenarioDescriptor::Preset(preset) => {
                (preset.clone(), preset_scenario(preset, seed)?)
            }
            ScenarioDescriptor::Custom(custom) => {
                (format!("custom-{}", custom.kind.as_str()), custom.clone())
            }
        };
        fill_descriptor_seeds(&mut custom, seed);

        let train = TrainConfig {
            method: self.method.unwrap_or(defaults.method),
            seed,
            iterations: self.iterations.unwrap_or(defaults.iterations),
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            momentum: self.momentum.unwrap_or(defaults.momentum),
            temperature: self.temperature.unwrap_or(defaults.temperature),
            adapt_weight: self.adapt_weight.unwrap_or(defaults.adapt_weight),
            adversarial_weight: self
                .adversarial_weight
                .unwrap_or(defaults.adversarial_weight),
            toggles: self.toggles.unwrap_or(defaults.toggles),
            hidden_dim: self.hidden_dim.unwrap_or(defaults.hidden_dim),
            curve_every: self.curve_every.unwrap_or(defaults.curve_every),
            eval_thresholds: self
                .eval_thresholds
                .clone()
                .unwrap_or(defaults.eval_thresholds),
        };
        train.validate()?;

        let scenario = instantiate_scenario(&custom)?;

        let config = RunConfig {
            scenario: ScenarioDescriptor::Custom(custom),
            method: Some(train.method),
            seed: Some(train.seed),
            iterations: Some(train.iterations),
            batch_size: Some(train.batch_size),
            learning_rate: Some(train.learning_rate),
            momentum: Some(train.momentum),
            temperature: Some(train.temperature),
            adapt_weight: Some(train.adapt_weight),
            adversarial_weight: Some(train.adversarial_weight),
            toggles: Some(train.toggles),
            hidden_dim: Some(train.hidden_dim),
            curve_every: Some(train.curve_every),
            eval_thresholds: Some(train.eval_thresholds.clone()),
        };

        Ok(ResolvedRun {
            name,
            config,
            scenario,
            train,
        })
    }
}

/// Pins every unset dataset/shift seed so the resolved config reproduces
/// the exact draws. Generator seeds default to distinct values per domain;
/// shift seeds likewise.
fn fill_descriptor_seeds(custom: &mut CustomScenario, run_seed: u64) {
    let sides = [(&mut custom.sources, 1000u64), (&mut custom.targets, 1300u64)];
    for (descriptors, base) in sides {
        for (idx, d) in descriptors.iter_mut().enumerate() {
            let offset = 100 * idx as u64;
            d.seed.get_or_insert(base + offset + run_seed);
            if let Some(shift) = d.shift.as_mut() {
                shift.seed.get_or_insert(base + 1000 + offset + run_seed);
            }
        }
    }
}

/// Builds the datasets and runs the structural validation: generator
/// parameters checked per generator, labels within the class space, and
/// partial-domain targets exercising a strict subset of the source labels.
pub fn instantiate_scenario(custom: &CustomScenario) -> Result<NormalizedScenario> {
    let mut sources = Vec::with_capacity(custom.sources.len());
    for (idx, d) in custom.sources.iter().enumerate() {
        sources.push(instantiate_dataset(d, idx)?);
    }
    let mut targets = Vec::with_capacity(custom.targets.len());
    for (idx, d) in custom.targets.iter().enumerate() {
        targets.push(instantiate_dataset(d, custom.sources.len() + idx)?);
    }

    let partial = matches!(
        custom.kind,
        ScenarioKind::Pda | ScenarioKind::Mspda | ScenarioKind::Mtpda
    );
    if partial {
        let source_classes: std::collections::BTreeSet<usize> = sources
            .iter()
            .flat_map(|d| d.labels.iter().flatten().copied())
            .collect();
        for (idx, t) in targets.iter().enumerate() {
            let target_classes: std::collections::BTreeSet<usize> =
                t.labels.iter().flatten().copied().collect();
            if !target_classes.is_subset(&source_classes) {
                return Err(CliError::Config(format!(
                    "partial-domain target {idx} uses labels outside the source label set"
                )));
            }
            if target_classes.len() >= source_classes.len() {
                return Err(CliError::Config(format!(
                    "partial-domain target {idx} must use a strict subset of the {} source classes; \
                     use keep_classes to restrict it",
                    source_classes.len()
                )));
            }
        }
    }

    normalize_scenario(ScenarioSpec {
        kind: custom.kind,
        sources,
        targets,
        num_classes: custom.num_classes,
    })
    .map_err(CliError::from)
}

fn instantiate_dataset(d: &DatasetDescriptor, domain_id: usize) -> Result<DomainDataset> {
    let seed = d.seed.ok_or_else(|| {
        CliError::Config("dataset seed unresolved; resolve the config first".into())
    })?;
    let reject = |field: &str| {
        Err(CliError::Config(format!(
            "`{field}` does not apply to generator `{}`",
            d.generator
        )))
    };
    let mut data = match d.generator.as_str() {
        "two_moons" => {
            if d.num_classes.is_some() {
                return reject("num_classes");
            }
            if d.radius.is_some() {
                return reject("radius");
            }
            gen_two_moons(
                d.n_per_class.unwrap_or(300),
                d.noise_std.unwrap_or(0.1),
                seed,
            )?
        }
        "blobs" => gen_blobs(
            d.num_classes.unwrap_or(4),
            d.n_per_class.unwrap_or(150),
            d.radius.unwrap_or(4.0),
            d.noise_std.unwrap_or(0.5),
            seed,
        )?,
        other => {
            return Err(CliError::Config(format!(
                "unknown generator `{other}`; expected `two_moons` or `blobs`"
            )))
        }
    };
    if let Some(shift) = &d.shift {
        let shift_seed = shift.seed.ok_or_else(|| {
            CliError::Config("shift seed unresolved; resolve the config first".into())
        })?;
        data = shift_domain(&data, &shift.transform(), shift_seed, domain_id)?;
    }
    if let Some(keep) = &d.keep_classes {
        data = restrict_labels(&data, keep)?;
    }
    data.domain_ids = vec![domain_id; data.len()];
    Ok(data)
}

/// Applies one `key=value` sweep override onto a config.
pub fn apply_grid_value(config: &mut RunConfig, key: &str, raw: &str) -> Result<()> {
    fn parse<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            CliError::Config(format!("grid value `{raw}` is not valid for `{key}`"))
        })
    }
    match key {
        "method" => config.method = Some(parse_method(raw)?),
        "seed" => config.seed = Some(parse(key, raw)?),
        "iterations" => config.iterations = Some(parse(key, raw)?),
        "batch_size" => config.batch_size = Some(parse(key, raw)?),
        "learning_rate" => config.learning_rate = Some(parse(key, raw)?),
        "momentum" => config.momentum = Some(parse(key, raw)?),
        "temperature" => config.temperature = Some(parse(key, raw)?),
        "adapt_weight" => config.adapt_weight = Some(parse(key, raw)?),
        "adversarial_weight" => config.adversarial_weight = Some(parse(key, raw)?),
        "hidden_dim" => config.hidden_dim = Some(parse(key, raw)?),
        "curve_every" => config.curve_every = Some(parse(key, raw)?),
        other => {
            return Err(CliError::Config(format!(
                "unknown grid key `{other}`; valid keys: method, seed, iterations, batch_size, \
                 learning_rate, momentum, temperature, adapt_weight, adversarial_weight, \
                 hidden_dim, curve_every"
            )))
        }
    }
    Ok(())
}

pub fn parse_method(raw: &str) -> Result<Method> {
    const ALL: [Method; 6] = [
        Method::SourceOnly,
        Method::Minent,
        Method::Mcc,
        Method::Dann,
        Method::DannMcc,
        Method::DannMinent,
    ];
    ALL.into_iter()
        .find(|m| m.as_str() == raw)
        .ok_or_else(|| {
            let names: Vec<&str> = ALL.iter().map(|m| m.as_str()).collect();
            CliError::Config(format!(
                "unknown method `{raw}`; expected one of {}",
                names.join(", ")
            ))
        })
}
