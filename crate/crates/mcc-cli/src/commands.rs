//! Implementations of the CLI subcommands. Every run validates its full
//! configuration before touching the filesystem, writes its manifest before
//! training, and leaves a reproducible artifact set behind.

use std::path::{Path, PathBuf};

use mcc::trainer::{train, write_atomic, TrainOutcome};

use crate::boundary::{export_boundary_grid, Bounds};
use crate::config::{apply_grid_value, ResolvedRun};
use crate::error::{CliError, Result};
use crate::manifest::{load_run_input, RunInput, RunManifest};
use crate::report_io::write_run_artifacts;

/// Environment variable naming the directory default output paths live
/// under (`runs` in the working directory otherwise).
pub const OUT_ROOT_ENV: &str = "MCC_OUT_ROOT";

/// Values of the global flags.
#[derive(Debug, Clone, Default)]
pub struct GlobalOpts {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn default_out_dir(run_name: &str) -> PathBuf {
    out_root().join(run_name)
}

fn run_dir_name(resolved: &ResolvedRun) -> String {
    format!(
        "{}_{}_seed{}",
        resolved.name,
        resolved.train.method.as_str(),
        resolved.train.seed
    )
}

/// Trains one run, then writes manifest, report, curves, error matrix and
/// checkpoint under the chosen output directory.
fn execute_run(
    command: &str,
    resolved: &ResolvedRun,
    out_dir: &Path,
    quiet: bool,
) -> Result<TrainOutcome> {
    let manifest = RunManifest::new(
        command,
        resolved.train.seed,
        out_dir,
        resolved.config.clone(),
    );
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", out_dir.display())))?;
    manifest.write(&out_dir.join("manifest.json"))?;

    let outcome = train(&resolved.scenario, &resolved.train)?;

    write_run_artifacts(&outcome.report, out_dir)?;
    outcome.checkpoint.save(&out_dir.join("checkpoint.json"))?;

    if !quiet {
        println!(
            "{} {} seed {}: source acc {:.4}, target acc {:.4} ({:.1}s) -> {}",
            resolved.name,
            resolved.train.method.as_str(),
            resolved.train.seed,
            outcome.report.final_source_accuracy,
            outcome.report.final_target_accuracy,
            outcome.wall_time_secs,
            out_dir.display()
        );
    }
    Ok(outcome)
}

/// `mcc train <config-or-manifest>`.
pub fn cmd_train(path: &Path, opts: &GlobalOpts) -> Result<()> {
    let (resolved, out_dir) = match load_run_input(path)? {
        RunInput::Config(mut config) => {
            if let Some(seed) = opts.seed {
                config.seed = Some(seed);
            }
            let resolved = config.resolve(None)?;
            let out_dir = opts
                .out
                .clone()
                .unwrap_or_else(|| default_out_dir(&run_dir_name(&resolved)));
            (resolved, out_dir)
        }
        RunInput::Manifest(manifest) => {
            // A manifest's datasets are already pinned; `--seed` here only
            // reseeds the training streams.
            let mut config = manifest.config.clone();
            if let Some(seed) = opts.seed {
                config.seed = Some(seed);
            }
            let resolved = config.resolve(None)?;
            let out_dir = opts
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(&manifest.out_dir));
            (resolved, out_dir)
        }
    };
    execute_run("train", &resolved, &out_dir, opts.quiet)?;
    Ok(())
}

/// One parsed `--grid key=v1,v2,...` flag.
fn parse_grid_flag(raw: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = raw.split_once('=').ok_or_else(|| {
        CliError::Config(format!("grid flag must look like key=v1,v2,..., got `{raw}`"))
    })?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("grid flag `{key}` lists no values")));
    }
    Ok((key.trim().to_string(), values))
}

/// `mcc sweep <config> --grid k=v1,v2,...`: trains the cartesian product of
/// grid values and ranks the runs by final target accuracy.
pub fn cmd_sweep(path: &Path, grid_flags: &[String], opts: &GlobalOpts) -> Result<()> {
    let base = match load_run_input(path)? {
        RunInput::Config(config) => config,
        RunInput::Manifest(_) => {
            return Err(CliError::Config(
                "sweep expects a run config, not a manifest".into(),
            ))
        }
    };

    let mut grid: Vec<(String, Vec<String>)> = Vec::new();
    for flag in grid_flags {
        let (key, values) = parse_grid_flag(flag)?;
        if grid.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Config(format!("grid key `{key}` given twice")));
        }
        grid.push((key, values));
    }

    // Validate every combination before training anything.
    let combos = cartesian(&grid);
    let mut runs: Vec<(Vec<(String, String)>, ResolvedRun)> = Vec::with_capacity(combos.len());
    for combo in &combos {
        let mut config = base.clone();
        if let Some(seed) = opts.seed {
            config.seed = Some(seed);
        }
        for (key, value) in combo {
            apply_grid_value(&mut config, key, value)?;
        }
        runs.push((combo.clone(), config.resolve(None)?));
    }

    let sweep_root = opts.out.clone().unwrap_or_else(|| {
        default_out_dir(&format!(
            "sweep_{}",
            runs.first().map_or("empty", |(_, r)| r.name.as_str())
        ))
    });

    let mut rows: Vec<(Vec<(String, String)>, f64, f64)> = Vec::with_capacity(runs.len());
    for (combo, resolved) in &runs {
        let sub: Vec<String> = combo.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let out_dir = sweep_root.join(sub.join("_"));
        let outcome = execute_run("sweep", resolved, &out_dir, opts.quiet)?;
        rows.push((
            combo.clone(),
            outcome.report.final_target_accuracy,
            outcome.report.final_source_accuracy,
        ));
    }

    // Rank by target accuracy, best first; ties keep grid order.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[b].1.partial_cmp(&rows[a].1).unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut csv = String::from("rank");
    for (key, _) in &grid {
        csv.push_str(&format!(",{key}"));
    }
    csv.push_str(",final_target_accuracy,final_source_accuracy\n");
    for (rank, &idx) in order.iter().enumerate() {
        let (combo, target, source) = &rows[idx];
        csv.push_str(&(rank + 1).to_string());
        for (_, value) in combo {
            csv.push_str(&format!(",{value}"));
        }
        csv.push_str(&format!(",{target},{source}\n"));
    }
    std::fs::create_dir_all(&sweep_root)
        .map_err(|e| CliError::Config(format!("{}: {e}", sweep_root.display())))?;
    write_atomic(&sweep_root.join("summary.csv"), &csv)?;
    if !opts.quiet {
        println!("sweep summary -> {}", sweep_root.join("summary.csv").display());
    }
    Ok(())
}

fn cartesian(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in grid {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    combos
}

/// `mcc ablate <config>`: trains the loss-component ladder (confusion only,
/// + probability rescaling, + uncertainty reweighting, + normalization) and
/// writes a four-row summary in ladder order.
pub fn cmd_ablate(path: &Path, opts: &GlobalOpts) -> Result<()> {
    let base = match load_run_input(path)? {
        RunInput::Config(config) => config,
        RunInput::Manifest(_) => {
            return Err(CliError::Config(
                "ablate expects a run config, not a manifest".into(),
            ))
        }
    };
    if let Some(method) = base.method {
        if method != mcc::trainer::Method::Mcc {
            return Err(CliError::Config(format!(
                "ablate always trains the mcc objective; drop `method` or set it to mcc \
                 (config says {})",
                method.as_str()
            )));
        }
    }

    let ladder = mcc::confusion::MccToggles::ladder();

    // Resolve all variants before any filesystem writes.
    let mut variants = Vec::with_capacity(ladder.len());
    for (name, toggles) in ladder {
        let mut config = base.clone();
        if let Some(seed) = opts.seed {
            config.seed = Some(seed);
        }
        config.method = Some(mcc::trainer::Method::Mcc);
        config.toggles = Some(toggles);
        variants.push((name, config.resolve(None)?));
    }

    let root = opts.out.clone().unwrap_or_else(|| {
        default_out_dir(&format!("ablate_{}", variants[0].1.name))
    });

    let mut csv = String::from("variant,final_target_accuracy,final_source_accuracy\n");
    for (name, resolved) in &variants {
        let outcome = execute_run("ablate", resolved, &root.join(name), opts.quiet)?;
        csv.push_str(&format!(
            "{name},{},{}\n",
            outcome.report.final_target_accuracy, outcome.report.final_source_accuracy
        ));
    }
    write_atomic(&root.join("summary.csv"), &csv)?;
    if !opts.quiet {
        println!("ablation summary -> {}", root.join("summary.csv").display());
    }
    Ok(())
}

/// `mcc boundary <checkpoint> --grid-res N [--bounds ...]`.
pub fn cmd_boundary(
    checkpoint_path: &Path,
    grid_res: usize,
    bounds: Option<&str>,
    opts: &GlobalOpts,
) -> Result<()> {
    let checkpoint = mcc::trainer::Checkpoint::load(checkpoint_path)?;
    let bounds = match bounds {
        Some(raw) => Bounds::parse(raw)?,
        None => Bounds::default(),
    };
    let csv = export_boundary_grid(&checkpoint, bounds, grid_res)?;

    let dir = match &opts.out {
        Some(dir) => dir.clone(),
        None => checkpoint_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    let out_path = dir.join("boundary.csv");
    write_atomic(&out_path, &csv)?;
    if !opts.quiet {
        println!("boundary grid -> {}", out_path.display());
    }
    Ok(())
}
