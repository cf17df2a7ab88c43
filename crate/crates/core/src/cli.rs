//! Command-line front end. Every subcommand reads `--config`, honours
//! `--seed`, and writes into `--out` (or `$PREFNOISE_OUT` when set).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::datagen::{label_dataset, measure_noise_rate, sample_generation_pairs, PreferenceDataset};
use crate::error::{Error, Result, StageExt};
use crate::eval;
use crate::filtering;
use crate::harness::config::ExperimentConfig;
use crate::harness::external;
use crate::harness::plot::{self, XVar};
use crate::harness::run::{self, noise_spec, Reference, RunSeeds};
use crate::oracles::{self, NoiseFamily};
use crate::policy::PolicyParams;
use crate::training::{self, DpoConfig};

pub const OUT_ENV: &str = "PREFNOISE_OUT";

#[derive(Debug, Parser)]
#[command(name = "prefnoise", version, about = "Preference-noise laboratory for DPO alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overridden by $PREFNOISE_OUT).
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate every oracle family to the configured target noise rate.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Overrides `noise.target_rate`.
        #[arg(long)]
        target_rate: Option<f64>,
    },
    /// Sample generation pairs from the reference policy and label them.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Retention and post-filter noise rate across confidence thresholds.
    FilterStats {
        #[command(flatten)]
        common: Common,
        /// Labeled dataset to analyse instead of generating one.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
    },
    /// Fit the reference policy and align it with DPO on a labeled dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Labeled dataset to train on instead of generating one.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
    },
    /// Win rate and KL of a trained policy against the reference.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/policy.json`.
        #[arg(long, value_name = "PATH")]
        policy: Option<PathBuf>,
        /// Defaults to `<out>/sft.json`.
        #[arg(long, value_name = "PATH")]
        reference: Option<PathBuf>,
    },
    /// Run the configured grid, appending to `<out>/records.jsonl`.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate records into a tidy CSV for plotting.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/records.jsonl`.
        #[arg(long, value_name = "PATH")]
        records: Option<PathBuf>,
        /// target_rate, beta, dropout_rate or filter_threshold.
        #[arg(long, default_value = "target_rate")]
        x_var: String,
    },
    /// Audit an external scored-pair file.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate { .. } => "calibrate",
            Command::Gen { .. } => "gen",
            Command::FilterStats { .. } => "filter-stats",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::PlotData { .. } => "plot-data",
            Command::Ingest { .. } => "ingest",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Calibrate { common, .. }
            | Command::Gen { common }
            | Command::FilterStats { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Sweep { common }
            | Command::PlotData { common, .. }
            | Command::Ingest { common, .. } => common,
        }
    }
}

/// Resolved settings shared by every command.
struct Context {
    config: ExperimentConfig,
    out: PathBuf,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(p) => ExperimentConfig::load(p).stage("config")?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        let out = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| common.out.clone());
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Records the resolved config next to a command's outputs.
    fn write_manifest(&self, command: &str, outputs: &[&Path]) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            version: &'a str,
            config: &'a ExperimentConfig,
            outputs: Vec<String>,
        }
        self.write_json(
            &format!("{command}_manifest.json"),
            &Manifest {
                command,
                version: env!("CARGO_PKG_VERSION"),
                config: &self.config,
                outputs: outputs
                    .iter()
                    .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned()))
                    .collect(),
            },
        )?;
        Ok(())
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::usage(e.to_string()))?;
    run(cli.command)
}

pub fn run(command: Command) -> Result<()> {
    let name = command.name();
    let ctx = Context::new(command.common())?;
    ctx.config.validate().stage("config")?;
    match &command {
        Command::Calibrate { target_rate, .. } => calibrate(&ctx, *target_rate),
        Command::Gen { .. } => gen(&ctx),
        Command::FilterStats { dataset, .. } => filter_stats(&ctx, dataset.as_deref()),
        Command::Train { dataset, .. } => train(&ctx, dataset.as_deref()),
        Command::Eval { policy, reference, .. } => evaluate(&ctx, policy.as_deref(), reference.as_deref()),
        Command::Sweep { .. } => sweep(&ctx),
        Command::PlotData { records, x_var, .. } => plot_data(&ctx, records.as_deref(), x_var),
        Command::Ingest { input, .. } => ingest(&ctx, input),
    }
    .map_err(|e| e.in_stage(name))
}

fn calibrate(ctx: &Context, target_rate: Option<f64>) -> Result<()> {
    let target = target_rate.unwrap_or(ctx.config.noise.target_rate);
    let reference = Reference::build(&ctx.config)?;
    let seeds = RunSeeds::new(ctx.config.seed);
    let generation = sample_generation_pairs(
        &reference.world,
        &reference.sft.params,
        reference.world.train_prompts(),
        &ctx.config.datagen,
        seeds.generation,
    )
    .stage("generate")?;
    let rewards = generation.reward_pairs(&reference.world);
    let reports = NoiseFamily::ALL
        .iter()
        .map(|&f| oracles::calibrate_report(f, target, &rewards))
        .collect::<Result<Vec<_>>>()
        .stage("calibrate")?;
    for r in &reports {
        println!(
            "{:<10} target {:.3} -> hyperparameter {:.2} (expected noise {:.4} on {} pairs)",
            r.family.name(),
            r.target_rate,
            r.hyperparameter,
            r.expected_noise_rate,
            r.sample_size
        );
    }
    let out = ctx.write_json("calibration.json", &reports)?;
    ctx.write_manifest("calibrate", &[&out])
}

/// World, reference policy and the labeled dataset for the config's base seed.
fn labeled_dataset(ctx: &Context) -> Result<(Reference, PreferenceDataset, f64)> {
    let reference = Reference::build(&ctx.config)?;
    let seeds = RunSeeds::new(ctx.config.seed);
    let (world, sft) = (&reference.world, &reference.sft.params);
    let generation =
        sample_generation_pairs(world, sft, world.train_prompts(), &ctx.config.datagen, seeds.generation).stage("generate")?;
    let noise = ctx.config.noise;
    let h = oracles::calibrate(noise.family, noise.target_rate, &generation.reward_pairs(world), oracles::CALIBRATION_STEP)
        .stage("calibrate")?;
    let spec = noise_spec(noise.family, noise.target_rate, h).stage("calibrate")?;
    let dataset = label_dataset(&generation, world, &spec, seeds.label).stage("label")?;
    Ok((reference, dataset, h))
}

fn gen(ctx: &Context) -> Result<()> {
    let (_, dataset, hyperparameter) = labeled_dataset(ctx)?;
    let path = ctx.path("dataset.jsonl");
    dataset.write_jsonl(&path)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        n_pairs: usize,
        hyperparameter: f64,
        measured_noise_rate: f64,
        provenance: &'a Option<crate::datagen::Provenance>,
    }
    let summary = Summary {
        n_pairs: dataset.len(),
        hyperparameter,
        measured_noise_rate: measure_noise_rate(&dataset).stage("label")?,
        provenance: &dataset.provenance,
    };
    println!(
        "{} pairs, measured noise rate {:.4}",
        summary.n_pairs, summary.measured_noise_rate
    );
    let s = ctx.write_json("dataset_summary.json", &summary)?;
    ctx.write_manifest("gen", &[&path, &s])
}

fn filter_stats(ctx: &Context, dataset: Option<&Path>) -> Result<()> {
    let dataset = match dataset {
        Some(p) => PreferenceDataset::read_jsonl(p)?,
        None => labeled_dataset(ctx)?.1,
    };
    let reports = filtering::retention_stats_with(&dataset, &ctx.config.filter_thresholds, ctx.config.filter_mode)
        .stage("filter")?;
    for r in &reports {
        println!(
            "t={:.2} kept {:>6} ({:.3}) noise {:.4} -> {}",
            r.threshold,
            r.kept,
            r.kept_fraction,
            r.noise_before,
            r.noise_after.map_or("n/a".to_string(), |n| format!("{n:.4}"))
        );
    }
    let path = ctx.path("filter_stats.csv");
    filtering::write_reports_csv(&reports, &path)?;
    ctx.write_manifest("filter-stats", &[&path])
}

fn train(ctx: &Context, dataset_path: Option<&Path>) -> Result<()> {
    let (reference, mut dataset) = match dataset_path {
        Some(p) => (Reference::build(&ctx.config)?, PreferenceDataset::read_jsonl(p)?),
        None => {
            let (r, d, _) = labeled_dataset(ctx)?;
            (r, d)
        }
    };
    if let Some(t) = ctx.config.filter_threshold {
        dataset = filtering::filter_dataset_with(&dataset, t, ctx.config.filter_mode).stage("filter")?;
    }
    let seeds = RunSeeds::new(ctx.config.seed);
    let dpo = DpoConfig {
        seed: seeds.dpo,
        ..ctx.config.dpo.clone()
    };
    let outcome = training::train_dpo(&reference.world, &reference.sft.params, &dataset, &dpo).stage("dpo")?;
    let sft_path = ctx.path("sft.json");
    reference.sft.params.save_json(&sft_path, ctx.config.policy.seed)?;
    let policy_path = ctx.path("policy.json");
    outcome.params.save_json(&policy_path, seeds.dpo)?;
    let log_path = ctx.path("training_log.csv");
    training::write_log_csv(&outcome.log, &log_path)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained on {} pairs: final loss {:.4}, KL {:.4}",
            dataset.len(),
            last.loss,
            last.kl
        );
    }
    ctx.write_manifest("train", &[&sft_path, &policy_path, &log_path])
}

fn evaluate(ctx: &Context, policy: Option<&Path>, reference: Option<&Path>) -> Result<()> {
    let world = crate::world::build_world(&ctx.config.world).stage("world")?;
    let policy_path = policy.map_or_else(|| ctx.path("policy.json"), Path::to_path_buf);
    let reference_path = reference.map_or_else(|| ctx.path("sft.json"), Path::to_path_buf);
    let (theta, _) = PolicyParams::load_json(&policy_path)?;
    let (sft, _) = PolicyParams::load_json(&reference_path)?;
    if theta.embedding_dim() != world.embedding_dim() || sft.embedding_dim() != world.embedding_dim() {
        return Err(Error::usage("policy embedding dimension does not match the configured world"));
    }
    let seeds = RunSeeds::new(ctx.config.seed);
    let prompts = world.test_prompts();
    let wr = eval::win_rate(&world, &theta, &sft, prompts, ctx.config.eval.decoding(), seeds.eval).stage("eval")?;
    let kl = eval::kl_diagnostic(&world, &theta, &sft, prompts).stage("eval")?;
    #[derive(Serialize)]
    struct EvalReport {
        #[serde(flatten)]
        win: eval::WinRateResult,
        kl_diagnostic: f64,
    }
    println!(
        "win rate {:.4} ({} wins, {} ties, {} losses), KL {:.4}",
        wr.win_rate, wr.wins, wr.ties, wr.losses, kl
    );
    let out = ctx.write_json("eval.json", &EvalReport { win: wr, kl_diagnostic: kl })?;
    ctx.write_manifest("eval", &[&out])
}

fn sweep(ctx: &Context) -> Result<()> {
    let records_path = ctx.path("records.jsonl");
    let summary = run::sweep(&ctx.config, &records_path)?;
    let records = run::read_records(&records_path)?;
    let csv_path = ctx.path("records.csv");
    run::write_records_csv(&csv_path, &records)?;
    println!(
        "{} cells, {} runs: {} already done, {} written ({} failed)",
        summary.cells, summary.total_runs, summary.already_done, summary.written, summary.failed
    );
    ctx.write_manifest("sweep", &[&records_path, &csv_path])
}

fn plot_data(ctx: &Context, records: Option<&Path>, x_var: &str) -> Result<()> {
    let x: XVar = x_var.parse()?;
    let path = records.map_or_else(|| ctx.path("records.jsonl"), Path::to_path_buf);
    let records = run::read_records(&path)?;
    if records.is_empty() {
        return Err(Error::usage(format!("no records in {}", path.display())));
    }
    let rows = plot::emit_plot_data(&records, x)?;
    let out = ctx.path("plot_data.csv");
    plot::write_plot_csv(&out, &rows)?;
    println!("{} rows -> {}", rows.len(), out.display());
    ctx.write_manifest("plot-data", &[&out])
}

fn ingest(ctx: &Context, input: &Path) -> Result<()> {
    let pairs = external::ingest_external(input)?;
    let report = external::ingest_report(&pairs, &ctx.config.filter_thresholds).stage("filter")?;
    println!(
        "{} pairs ({} labeled), label/score disagreement {}",
        report.n_pairs,
        report.n_labeled,
        report.disagreement_rate.map_or("n/a".to_string(), |d| format!("{d:.4}"))
    );
    let out = ctx.write_json("ingest_report.json", &report)?;
    ctx.write_manifest("ingest", &[&out])
}
