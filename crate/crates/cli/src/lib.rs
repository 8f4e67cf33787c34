//! Library backing the `mmprl` binary: each subcommand is an ordinary
//! function over paths so integration tests can drive it directly.

pub mod manifest;

use manifest::{file_digest, fnv1a64, RunManifest};
use mmprl::archive::{Archive, ArchiveStats, BehaviorDescriptor, STATS_CSV_HEADER};
use mmprl::env::CrawlerEnv;
use mmprl::mapgen::{evaluate_policy, run_mapelites, run_mmprl, MapCreationContext};
use mmprl::mboa::{adapt, adapt_trace_csv, AdaptOutcome, ADAPT_TRACE_CSV_HEADER};
use mmprl::nnet::ParamNet;
use mmprl::{Error, ExperimentConfig, Result};
use std::fs;
use std::path::{Path, PathBuf};

/// Exit-code policy: 0 success, 2 configuration, 3 data/format, 4 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Format(_) | Error::Io(_) | Error::EmptyArchive => 3,
        Error::Numeric(_) | Error::Shape(_) => 4,
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn config_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}

pub struct MapRunPaths {
    pub archive: PathBuf,
    pub archive_digest: String,
    pub stats_csv: PathBuf,
    pub agents_csv: Option<PathBuf>,
    pub stats: ArchiveStats,
}

/// `create-map`: run the multi-agent map-creation phase on the intact
/// crawler and persist the archive plus its CSV streams.
pub fn cmd_create_map(
    config_path: &Path,
    seed: u64,
    out: &Path,
    workers: usize,
) -> Result<MapRunPaths> {
    let cfg = load_config(config_path)?;
    ensure_out_dir(out)?;
    let mut manifest = RunManifest::new("create-map", seed);
    manifest.config_path = Some(config_path.display().to_string());
    manifest.config_digest = Some(config_digest(config_path)?);

    let intact = mmprl::DamageConfig::default();
    let ctx = MapCreationContext {
        env_spec: &cfg.env,
        damage: &intact,
        ddpg: &cfg.ddpg,
    };
    let workers = if workers == 0 { cfg.mapgen.n_agents } else { workers };
    let result = run_mmprl(&cfg.mapgen, &ctx, seed, workers)?;
    write_map_run(result, out, manifest, true)
}

/// `baseline-mapelites`: the random-perturbation baseline at the same
/// archive shape and budget.
pub fn cmd_baseline(config_path: &Path, seed: u64, out: &Path) -> Result<MapRunPaths> {
    let cfg = load_config(config_path)?;
    ensure_out_dir(out)?;
    let mut manifest = RunManifest::new("baseline-mapelites", seed);
    manifest.config_path = Some(config_path.display().to_string());
    manifest.config_digest = Some(config_digest(config_path)?);

    let intact = mmprl::DamageConfig::default();
    let ctx = MapCreationContext {
        env_spec: &cfg.env,
        damage: &intact,
        ddpg: &cfg.ddpg,
    };
    let result = run_mapelites(
        &cfg.mapelites,
        &ctx,
        cfg.mapgen.descriptor_bins,
        cfg.mapgen.snapshot_every,
        cfg.mapgen.budget,
        seed,
    )?;
    write_map_run(result, out, manifest, false)
}

fn write_map_run(
    result: mmprl::MapRunResult,
    out: &Path,
    mut manifest: RunManifest,
    with_agents: bool,
) -> Result<MapRunPaths> {
    let archive_path = out.join("archive.qdm");
    let stats_path = out.join("stats.csv");
    result.archive.save(&archive_path)?;
    fs::write(&stats_path, &result.stats_csv)?;
    let agents_path = if with_agents {
        let p = out.join("agents.csv");
        fs::write(&p, &result.agents_csv)?;
        Some(p)
    } else {
        None
    };
    let digest = file_digest(&archive_path)?;
    manifest.archive_path = Some(archive_path.display().to_string());
    manifest.archive_digest = Some(digest.clone());
    manifest.outputs = vec![
        archive_path.display().to_string(),
        stats_path.display().to_string(),
    ];
    if let Some(p) = &agents_path {
        manifest.outputs.push(p.display().to_string());
    }
    manifest.write(&out.join("manifest.toml"))?;
    Ok(MapRunPaths {
        archive: archive_path,
        archive_digest: digest,
        stats_csv: stats_path,
        agents_csv: agents_path,
        stats: result.archive.stats(),
    })
}

fn load_archive(path: &Path) -> Result<Archive> {
    Archive::load(path)
}

/// Evaluation callback for adaptation and eval: roll the cell's stored actor
/// through one episode on the (damaged) crawler.
fn rollout_cell(
    archive: &Archive,
    cfg: &ExperimentConfig,
    cell_actor: &[f64],
    seed: u64,
) -> Result<f64> {
    let actor = ParamNet::from_params(archive.actor_spec().clone(), cell_actor.to_vec())?;
    let mut env = CrawlerEnv::new(cfg.env.clone(), cfg.damage.clone())?;
    let eval = evaluate_policy(&actor, &mut env, cfg.env.max_steps, seed)?;
    Ok(eval.distance)
}

fn check_archive_matches_env(archive: &Archive, cfg: &ExperimentConfig) -> Result<()> {
    let expected = cfg
        .ddpg
        .actor_spec(cfg.env.observation_dim(), cfg.env.action_dim())?;
    if archive.actor_spec().input_len() != expected.input_len()
        || archive.actor_spec().output_len() != expected.output_len()
    {
        return Err(Error::Config(format!(
            "archive policies take {} observations / {} actions but the configured crawler \
             provides {} / {}",
            archive.actor_spec().input_len(),
            archive.actor_spec().output_len(),
            expected.input_len(),
            expected.output_len(),
        )));
    }
    Ok(())
}

pub struct AdaptReport {
    pub outcome: AdaptOutcome,
    pub trace_csv: PathBuf,
}

/// `adapt`: run map-based Bayesian optimization against the damaged crawler.
pub fn cmd_adapt(
    archive_path: &Path,
    config_path: &Path,
    seed: u64,
    out: &Path,
    max_trials: usize,
) -> Result<AdaptReport> {
    let cfg = load_config(config_path)?;
    let archive = load_archive(archive_path)?;
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    check_archive_matches_env(&archive, &cfg)?;
    ensure_out_dir(out)?;
    let mut manifest = RunManifest::new("adapt", seed);
    manifest.config_path = Some(config_path.display().to_string());
    manifest.config_digest = Some(config_digest(config_path)?);
    manifest.archive_path = Some(archive_path.display().to_string());
    manifest.archive_digest = Some(file_digest(archive_path)?);

    let outcome = adapt(
        &archive,
        |cell| rollout_cell(&archive, &cfg, &cell.actor_params, seed),
        &cfg.mboa,
        max_trials,
    )?;

    let trace_path = out.join("trace.csv");
    let mut csv = String::from(ADAPT_TRACE_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&adapt_trace_csv(&outcome.trace));
    fs::write(&trace_path, &csv)?;

    let report = format!(
        "best_coords = \"{}\"\nbest_performance = {}\ntrials = {}\nstopped_early = {}\n",
        outcome.best_coords, outcome.best_performance, outcome.trials, outcome.stopped_early
    );
    let report_path = out.join("report.toml");
    fs::write(&report_path, report)?;
    manifest.outputs = vec![
        trace_path.display().to_string(),
        report_path.display().to_string(),
    ];
    manifest.write(&out.join("manifest.toml"))?;
    Ok(AdaptReport {
        outcome,
        trace_csv: trace_path,
    })
}

/// Batch `adapt`: one adaptation run per seed, one CSV row per seed, plus a
/// trailing median summary row.
pub fn cmd_adapt_batch(
    archive_path: &Path,
    config_path: &Path,
    first_seed: u64,
    n_seeds: u64,
    out: &Path,
    max_trials: usize,
) -> Result<PathBuf> {
    if n_seeds == 0 {
        return Err(Error::Config("batch mode needs at least one seed".into()));
    }
    let cfg = load_config(config_path)?;
    let archive = load_archive(archive_path)?;
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    check_archive_matches_env(&archive, &cfg)?;
    ensure_out_dir(out)?;
    let mut manifest = RunManifest::new("adapt", first_seed);
    manifest.batch_seeds = Some(n_seeds);
    manifest.config_path = Some(config_path.display().to_string());
    manifest.config_digest = Some(config_digest(config_path)?);
    manifest.archive_path = Some(archive_path.display().to_string());
    manifest.archive_digest = Some(file_digest(archive_path)?);

    let mut rows = String::from("seed,trials,best_performance,best_coords,stopped_early\n");
    let mut trials: Vec<u64> = Vec::new();
    let mut bests: Vec<f64> = Vec::new();
    for s in first_seed..first_seed + n_seeds {
        let outcome = adapt(
            &archive,
            |cell| rollout_cell(&archive, &cfg, &cell.actor_params, s),
            &cfg.mboa,
            max_trials,
        )?;
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            s,
            outcome.trials,
            outcome.best_performance,
            outcome.best_coords.to_string().replace(',', ";"),
            outcome.stopped_early
        ));
        trials.push(outcome.trials as u64);
        bests.push(outcome.best_performance);
    }
    trials.sort_unstable();
    bests.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med_trials = median_u64(&trials);
    let med_best = median_f64(&bests);
    rows.push_str(&format!("median,{med_trials},{med_best},,\n"));

    let batch_path = out.join("batch.csv");
    fs::write(&batch_path, rows)?;
    manifest.outputs = vec![batch_path.display().to_string()];
    manifest.write(&out.join("manifest.toml"))?;
    Ok(batch_path)
}

pub fn median_u64(sorted: &[u64]) -> f64 {
    let n = sorted.len();
    (sorted[n / 2] + sorted[(n - 1) / 2]) as f64 / 2.0
}

pub fn median_f64(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    (sorted[n / 2] + sorted[(n - 1) / 2]) / 2.0
}

pub struct EvalResult {
    pub coords: BehaviorDescriptor,
    pub distance: f64,
    pub steps: usize,
}

/// `eval`: deterministic rollout of one stored cell ("best" or explicit
/// coordinates) under the configured damage.
pub fn cmd_eval(
    archive_path: &Path,
    config_path: &Path,
    cell_arg: &str,
    seed: u64,
    trace_out: Option<&Path>,
) -> Result<EvalResult> {
    let cfg = load_config(config_path)?;
    let archive = load_archive(archive_path)?;
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    check_archive_matches_env(&archive, &cfg)?;
    let cell = resolve_cell(&archive, cell_arg)?;

    let actor = ParamNet::from_params(archive.actor_spec().clone(), cell.actor_params.clone())?;
    let mut env = CrawlerEnv::new(cfg.env.clone(), cfg.damage.clone())?;

    if let Some(trace_path) = trace_out {
        // Re-run collecting the full step trace.
        let mut obs = env.reset(seed);
        let mut actions = Vec::new();
        let mut outcomes = Vec::new();
        for _ in 0..cfg.env.max_steps {
            let action = actor.forward(&obs)?;
            let out = env.step(&action)?;
            obs = out.obs.clone();
            let done = out.done;
            actions.push(action);
            outcomes.push(out);
            if done {
                break;
            }
        }
        fs::write(trace_path, mmprl::env::episode_trace_csv(&actions, &outcomes))?;
        let distance: f64 = outcomes.iter().map(|o| o.delta_x).sum();
        return Ok(EvalResult {
            coords: cell.descriptor.clone(),
            distance,
            steps: outcomes.len(),
        });
    }

    let eval = evaluate_policy(&actor, &mut env, cfg.env.max_steps, seed)?;
    Ok(EvalResult {
        coords: cell.descriptor.clone(),
        distance: eval.distance,
        steps: eval.steps,
    })
}

fn resolve_cell<'a>(archive: &'a Archive, cell_arg: &str) -> Result<&'a mmprl::ArchiveCell> {
    if cell_arg == "best" {
        return archive.best_cell().ok_or(Error::EmptyArchive);
    }
    let coords: std::result::Result<Vec<u8>, _> =
        cell_arg.split(',').map(|p| p.trim().parse::<u8>()).collect();
    let coords = coords
        .map_err(|e| Error::Config(format!("cell coordinates must be integers: {e}")))?;
    if coords.len() != archive.dims() {
        return Err(Error::Config(format!(
            "cell has {} coordinates, archive has {} dimensions",
            coords.len(),
            archive.dims()
        )));
    }
    let descriptor = BehaviorDescriptor::new(coords);
    match archive.get(&descriptor) {
        Some(cell) => Ok(cell),
        None => {
            let mut near: Vec<(f64, String)> = archive
                .cells()
                .map(|c| {
                    let d2: f64 = c
                        .descriptor
                        .coords
                        .iter()
                        .zip(&descriptor.coords)
                        .map(|(&a, &b)| {
                            let d = a as f64 - b as f64;
                            d * d
                        })
                        .sum();
                    (d2, c.descriptor.to_string())
                })
                .collect();
            near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let nearest: Vec<String> = near.into_iter().take(5).map(|(_, s)| s).collect();
            Err(Error::Format(format!(
                "cell {descriptor} is unoccupied; nearest occupied cells: {}",
                nearest.join(" | ")
            )))
        }
    }
}

/// `export`: dump occupied cells as CSV, one row per cell in coordinate order.
pub fn cmd_export(archive_path: &Path, out: &Path) -> Result<usize> {
    let archive = load_archive(archive_path)?;
    let mut csv = String::new();
    for d in 0..archive.dims() {
        csv.push_str(&format!("c{d},"));
    }
    csv.push_str("performance\n");
    for cell in archive.cells() {
        for c in &cell.descriptor.coords {
            csv.push_str(&format!("{c},"));
        }
        csv.push_str(&format!("{}\n", cell.performance));
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, csv)?;
    Ok(archive.len())
}

/// One stats CSV line for an archive file, matching the snapshot schema.
pub fn archive_stats_line(archive: &Archive) -> String {
    format!(
        "{}\n{}",
        STATS_CSV_HEADER,
        mmprl::archive::stats_csv_row(archive.update_counter(), &archive.stats())
    )
}
