//! End-to-end runs and sweeps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{mpsc, Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::datagen::{label_dataset, measure_noise_rate, sample_generation_pairs};
use crate::error::{Error, Result, StageExt};
use crate::eval;
use crate::filtering;
use crate::oracles::{self, NoiseFamily, NoiseSpec};
use crate::rng;
use crate::training::{self, DpoConfig, SftOutcome};
use crate::world::{build_world, World};

/// One seed of one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub fingerprint: String,
    pub base_fingerprint: String,
    pub noise_family: NoiseFamily,
    pub target_rate: f64,
    /// Calibrated oracle hyperparameter (`n`, `γ` or `δ`).
    pub hyperparameter: Option<f64>,
    pub measured_noise_rate: Option<f64>,
    pub filter_threshold: Option<f64>,
    pub kept_fraction: Option<f64>,
    pub filtered_noise_rate: Option<f64>,
    pub n_train_pairs: Option<usize>,
    pub beta: f64,
    pub dropout_rate: f64,
    pub seed_index: usize,
    pub seed: u64,
    pub win_rate: Option<f64>,
    pub kl_diagnostic: Option<f64>,
    pub failed: bool,
    pub error: Option<String>,
    /// Seconds; the only field that differs between identical runs.
    pub wall_time: f64,
}

impl ResultRecord {
    fn skeleton(config: &ExperimentConfig, seed_index: usize) -> Self {
        Self {
            fingerprint: config.fingerprint(),
            base_fingerprint: config.base_fingerprint(),
            noise_family: config.noise.family,
            target_rate: config.noise.target_rate,
            hyperparameter: None,
            measured_noise_rate: None,
            filter_threshold: config.filter_threshold,
            kept_fraction: None,
            filtered_noise_rate: None,
            n_train_pairs: None,
            beta: config.dpo.beta,
            dropout_rate: config.dpo.dropout_rate,
            seed_index,
            seed: config.run_seed(seed_index),
            win_rate: None,
            kl_diagnostic: None,
            failed: false,
            error: None,
            wall_time: 0.0,
        }
    }

    fn key(&self) -> (String, u64) {
        (self.fingerprint.clone(), self.seed)
    }
}

/// World plus fitted reference policy.
#[derive(Debug)]
pub struct Reference {
    pub world: World,
    pub sft: SftOutcome,
}

impl Reference {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let world = build_world(&config.world).stage("world")?;
        let sft = training::train_sft(&world, &config.policy, &config.sft).stage("sft")?;
        Ok(Self { world, sft })
    }
}

/// Reference policies shared by every cell with the same base fingerprint.
#[derive(Default)]
pub struct ReferenceCache {
    entries: Mutex<HashMap<String, Arc<Reference>>>,
}

impl ReferenceCache {
    pub fn get(&self, config: &ExperimentConfig) -> Result<Arc<Reference>> {
        let key = config.base_fingerprint();
        // Held across the build so concurrent workers fit each reference once.
        let mut entries = self.entries.lock().expect("reference cache poisoned");
        if let Some(r) = entries.get(&key) {
            return Ok(Arc::clone(r));
        }
        let r = Arc::new(Reference::build(config)?);
        entries.insert(key, Arc::clone(&r));
        Ok(r)
    }
}

/// Seeds of the per-run random streams.
#[derive(Debug, Clone, Copy)]
pub struct RunSeeds {
    pub generation: u64,
    pub label: u64,
    pub dpo: u64,
    pub eval: u64,
}

impl RunSeeds {
    pub fn new(seed: u64) -> Self {
        Self {
            generation: rng::stream_seed(seed, "generation"),
            label: rng::stream_seed(seed, "label"),
            dpo: rng::stream_seed(seed, "dpo"),
            eval: rng::stream_seed(seed, "eval"),
        }
    }
}

/// Runs the pipeline for repeat `seed_index` of `config`. Stage failures are
/// reported inside the record rather than returned.
pub fn run_seed(config: &ExperimentConfig, seed_index: usize, cache: &ReferenceCache) -> ResultRecord {
    let start = Instant::now();
    let mut record = ResultRecord::skeleton(config, seed_index);
    if let Err(e) = run_stages(config, cache, &mut record) {
        log::warn!("run {} seed {} failed: {e}", record.fingerprint, record.seed);
        record.failed = true;
        record.error = Some(e.to_string());
    }
    record.wall_time = start.elapsed().as_secs_f64();
    record
}

fn run_stages(config: &ExperimentConfig, cache: &ReferenceCache, record: &mut ResultRecord) -> Result<()> {
    let reference = cache.get(config)?;
    let (world, sft) = (&reference.world, &reference.sft.params);
    let seeds = RunSeeds::new(record.seed);

    let generation =
        sample_generation_pairs(world, sft, world.train_prompts(), &config.datagen, seeds.generation).stage("generate")?;
    let calibration = oracles::calibrate_report(
        config.noise.family,
        config.noise.target_rate,
        &generation.reward_pairs(world),
    )
    .stage("calibrate")?;
    record.hyperparameter = Some(calibration.hyperparameter);
    let spec = noise_spec(config.noise.family, config.noise.target_rate, calibration.hyperparameter).stage("calibrate")?;
    let labeled = label_dataset(&generation, world, &spec, seeds.label).stage("label")?;
    record.measured_noise_rate = Some(measure_noise_rate(&labeled).stage("label")?);

    let train_set = match config.filter_threshold {
        Some(t) => {
            let kept = filtering::filter_dataset_with(&labeled, t, config.filter_mode).stage("filter")?;
            record.kept_fraction = Some(kept.len() as f64 / labeled.len() as f64);
            record.filtered_noise_rate = measure_noise_rate(&kept).ok();
            kept
        }
        None => labeled,
    };
    record.n_train_pairs = Some(train_set.len());

    let dpo_config = DpoConfig {
        seed: seeds.dpo,
        ..config.dpo.clone()
    };
    let aligned = training::train_dpo(world, sft, &train_set, &dpo_config).stage("dpo")?;
    let wr = eval::win_rate(
        world,
        &aligned.params,
        sft,
        world.test_prompts(),
        config.eval.decoding(),
        seeds.eval,
    )
    .stage("eval")?;
    record.win_rate = Some(wr.win_rate);
    record.kl_diagnostic = Some(eval::kl_diagnostic(world, &aligned.params, sft, world.test_prompts()).stage("eval")?);
    Ok(())
}

/// The oracle for a calibrated hyperparameter; a zero target is the clean oracle.
pub fn noise_spec(family: NoiseFamily, target_rate: f64, hyperparameter: f64) -> Result<NoiseSpec> {
    if target_rate == 0.0 {
        Ok(NoiseSpec::CLEAN)
    } else {
        family.spec(hyperparameter)
    }
}

/// Runs every seed of `config`, one record per seed in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    run_experiment_with(config, &ReferenceCache::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, cache: &ReferenceCache) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    Ok((0..config.n_seeds).map(|i| run_seed(config, i, cache)).collect())
}

/// Expands the grid into one config per cell, in a fixed nested order:
/// family, target rate, threshold, beta, dropout rate.
pub fn expand_grid(base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    base.validate()?;
    if base.grid.is_empty() {
        return Err(Error::usage("sweep grid is empty"));
    }
    let g = &base.grid;
    let or = |axis: &Vec<f64>, default: f64| if axis.is_empty() { vec![default] } else { axis.clone() };
    let families = if g.families.is_empty() {
        vec![base.noise.family]
    } else {
        g.families.clone()
    };
    let thresholds: Vec<Option<f64>> = if g.thresholds.is_empty() {
        vec![base.filter_threshold]
    } else {
        g.thresholds.iter().map(|&t| Some(t)).collect()
    };
    let mut cells = Vec::new();
    for &family in &families {
        for &rate in &or(&g.target_rates, base.noise.target_rate) {
            for &threshold in &thresholds {
                for &beta in &or(&g.betas, base.dpo.beta) {
                    for &dropout in &or(&g.dropout_rates, base.dpo.dropout_rate) {
                        let mut c = base.clone();
                        c.grid = Default::default();
                        c.noise.family = family;
                        c.noise.target_rate = rate;
                        c.filter_threshold = threshold;
                        c.dpo.beta = beta;
                        c.dpo.dropout_rate = dropout;
                        cells.push(c);
                    }
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub total_runs: usize,
    pub already_done: usize,
    pub written: usize,
    pub failed: usize,
}

/// Reads a results file; a missing file is an empty list.
pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Appends records to a JSON-lines file, one per line.
pub fn append_records(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let mut line = serde_json::to_vec(r)?;
        line.push(b'\n');
        file.write_all(&line).map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))
}

/// Writes the CSV view of a record list.
pub fn write_records_csv(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every (cell, seed) of the grid whose record is not yet in `records_path`,
/// appending new records in job order as they complete.
///
/// Records already present (matched by fingerprint and seed, failed or not)
/// are skipped, so re-running an interrupted sweep only fills the gaps.
pub fn sweep(base: &ExperimentConfig, records_path: &Path) -> Result<SweepSummary> {
    let cells = expand_grid(base)?;
    let done: HashSet<(String, u64)> = read_records(records_path)?.iter().map(ResultRecord::key).collect();
    let mut pending = Vec::new();
    for cell in &cells {
        let fp = cell.fingerprint();
        for i in 0..cell.n_seeds {
            if !done.contains(&(fp.clone(), cell.run_seed(i))) {
                pending.push((cell, i));
            }
        }
    }
    let total_runs = cells.iter().map(|c| c.n_seeds).sum();
    let mut summary = SweepSummary {
        cells: cells.len(),
        total_runs,
        already_done: total_runs - pending.len(),
        written: 0,
        failed: 0,
    };
    if pending.is_empty() {
        return Ok(summary);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(base.workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let cache = ReferenceCache::default();
    let (tx, rx) = mpsc::channel::<(usize, ResultRecord)>();

    let written = std::thread::scope(|scope| {
        let appender = scope.spawn(move || -> Result<(usize, usize)> {
            // Buffer out-of-order completions so the file order is the job order.
            let mut buffer = BTreeMap::new();
            let mut next = 0;
            let (mut written, mut failed) = (0, 0);
            for (i, record) in rx {
                buffer.insert(i, record);
                while let Some(r) = buffer.remove(&next) {
                    append_records(records_path, std::slice::from_ref(&r))?;
                    written += 1;
                    failed += r.failed as usize;
                    next += 1;
                }
            }
            Ok((written, failed))
        });
        pool.install(|| {
            pending
                .par_iter()
                .enumerate()
                .for_each_with(tx, |tx, (i, (cell, seed_index))| {
                    let record = run_seed(cell, *seed_index, &cache);
                    log::info!(
                        "{} {} rate {} seed {}: win rate {:?}",
                        record.fingerprint,
                        record.noise_family,
                        record.target_rate,
                        record.seed,
                        record.win_rate
                    );
                    // The appender only stops early on an i/o error, reported below.
                    let _ = tx.send((i, record));
                });
        });
        appender.join().expect("appender thread panicked")
    })?;
    summary.written = written.0;
    summary.failed = written.1;
    Ok(summary)
}
