//! Command-line interface.

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sslab_core::data::{make_synthetic_dataset, Split, SyntheticKind};
use sslab_core::models::PooledDim;

use crate::config::{DatasetSpec, DiagnosticKind, ExperimentConfig, ProbeSpec, RunKind};
use crate::error::{config, HarnessError, Result};
use crate::ledger::Appended;
use crate::ops::{
    applicable, diagnose_run, export_features, make_dataset, probe_run, run_pipeline, train_run, DiagnoseSettings,
};
use crate::registry::{run_id, Registry};
use crate::report::write_report;

pub const DEFAULT_OUT: &str = "sslab-out";

#[derive(Debug, Parser)]
#[command(name = "sslab", version, about = "Self-supervised pretext training, linear probes and diagnostics")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config's top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root. Defaults to the config's `out`, then `sslab-out`.
    #[arg(long, global = true, env = "SSLAB_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the config's runs (skips runs that are already complete).
    Train(TrainArgs),
    /// Fit a linear probe on a run's frozen features and append a ledger row.
    Probe(ProbeArgs),
    /// Run diagnostics on completed runs.
    Diagnose(DiagnoseArgs),
    /// Render charts and tables from the ledger and diagnostics.
    Report,
    /// Write one feature matrix of a run to a file.
    ExportFeatures(ExportArgs),
    /// Generate a synthetic dataset in the directory format.
    MakeDataset(MakeDatasetArgs),
    /// Train, probe, diagnose and report in one go.
    Pipeline,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Only these kinds (rotation, jigsaw, instance_discrimination, autoencoder, supervised, random_init).
    #[arg(long = "kind", value_parser = parse_kind)]
    pub kinds: Vec<RunKind>,
    /// Train on a seeded half of the classes, for the generalization diagnostic.
    #[arg(long)]
    pub half_classes: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub run: String,
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[arg(long, default_value = "256", value_parser = parse_pooled)]
    pub pooled: PooledDim,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Run ids; defaults to every run of the config.
    #[arg(long = "run")]
    pub runs: Vec<String>,
    /// Comma-separated subset of generalization, random_labels, pca, knn, id_loss.
    #[arg(long, value_delimiter = ',', value_parser = parse_diagnostic)]
    pub which: Vec<DiagnosticKind>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: String,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// 256, 4096, 9216 or `flat` for the unpooled maps.
    #[arg(long, default_value = "256")]
    pub pooled: String,
    #[arg(long)]
    pub dest: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeDatasetArgs {
    /// Synthetic kind; taken from the config's dataset when omitted.
    #[arg(long, value_parser = parse_synthetic)]
    pub kind: Option<SyntheticKind>,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    #[arg(long)]
    pub dest: PathBuf,
}

fn parse_kind(s: &str) -> std::result::Result<RunKind, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn parse_pooled(s: &str) -> std::result::Result<PooledDim, String> {
    s.parse::<usize>().map_err(|e| e.to_string()).and_then(|d| PooledDim::from_nominal(d).map_err(|e| e.to_string()))
}

fn parse_diagnostic(s: &str) -> std::result::Result<DiagnosticKind, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: sslab_core::Error| e.to_string())
}

fn parse_synthetic(s: &str) -> std::result::Result<SyntheticKind, String> {
    s.parse().map_err(|e: sslab_core::Error| e.to_string())
}

struct Context {
    config: Option<ExperimentConfig>,
    registry: Registry,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
        if let (Some(c), Some(seed)) = (cfg.as_mut(), cli.seed) {
            c.seed = seed;
        }
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.as_ref().and_then(|c| c.out.clone()))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok(Self { config: cfg, registry: Registry::new(out) })
    }

    fn config(&self, cmd: &str) -> Result<&ExperimentConfig> {
        self.config.as_ref().ok_or_else(|| config(format!("`{cmd}` needs --config")))
    }
}

fn parse_pool_arg(s: &str) -> Result<Option<PooledDim>> {
    if s == "flat" {
        return Ok(None);
    }
    parse_pooled(s).map(Some).map_err(config)
}

/// Execute one parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let ctx = Context::new(cli)?;
    let reg = &ctx.registry;
    match &cli.command {
        Command::Train(args) => {
            let cfg = ctx.config("train")?;
            let kinds = if args.kinds.is_empty() { cfg.run_kinds() } else { args.kinds.clone() };
            for kind in kinds {
                let outcome = train_run(reg, &cfg.run_spec(kind, args.half_classes))?;
                let r = &outcome.record;
                if outcome.cached {
                    println!("cache hit: run {} ({} on {}) already complete, skipped", r.run_id, r.kind, r.dataset);
                } else {
                    println!("trained run {} ({} on {}, {} epochs)", r.run_id, r.kind, r.dataset, r.epochs_run);
                }
            }
        }
        Command::Probe(args) => {
            let spec = ctx.config.as_ref().map(|c| c.probe.clone()).unwrap_or_else(ProbeSpec::default);
            let appended = probe_run(reg, &args.run, args.pooled, args.fraction, &spec)?;
            let row = appended.row();
            let verb = if matches!(appended, Appended::Written(_)) { "appended" } else { "already in ledger" };
            println!(
                "{verb}: run {} {} pooled {} fraction {} train {:.4} test {}",
                row.run_id,
                row.kind,
                args.pooled,
                row.label_fraction,
                row.train_acc,
                row.test_acc.map_or("-".to_string(), |a| format!("{a:.4}"))
            );
        }
        Command::Diagnose(args) => {
            let settings = ctx.config.as_ref().map(DiagnoseSettings::from_config).unwrap_or_default();
            let mut which: BTreeSet<DiagnosticKind> = args.which.iter().copied().collect();
            if which.is_empty() {
                which = ctx.config.as_ref().map(|c| c.diagnostics.which.clone()).unwrap_or_default();
            }
            if which.is_empty() {
                which = DiagnosticKind::ALL.into_iter().collect();
            }
            let (ids, explicit) = if args.runs.is_empty() {
                let cfg = ctx.config("diagnose without --run")?;
                let ids = cfg.run_kinds().into_iter().map(|k| run_id(&cfg.run_spec(k, false))).collect::<Result<Vec<_>>>()?;
                (ids, false)
            } else {
                (args.runs.clone(), true)
            };
            for id in ids {
                let wanted = if explicit { which.clone() } else { applicable(reg.load_record(&id)?.kind, &which) };
                if wanted.is_empty() {
                    continue;
                }
                let report = diagnose_run(reg, &id, &wanted, &settings)?;
                println!("diagnostics for run {id} written to {}", reg.diagnostics_dir(&report.run_id).display());
            }
        }
        Command::Report => {
            let artifacts = write_report(reg)?;
            for f in &artifacts.files {
                println!("{}", f.display());
            }
        }
        Command::ExportFeatures(args) => {
            let fm = export_features(reg, &args.run, args.split, parse_pool_arg(&args.pooled)?, &args.dest)?;
            println!("{} rows x {} dims, sha256 {}", fm.rows(), fm.dim(), fm.checksum());
        }
        Command::MakeDataset(args) => {
            let seed = cli.seed.or(ctx.config.as_ref().map(|c| c.seed)).unwrap_or(0);
            let dataset = match (args.kind, ctx.config.as_ref().map(|c| &c.dataset)) {
                (Some(kind), _) => make_synthetic_dataset(kind, args.per_class, args.classes, args.side, seed)?,
                (None, Some(spec @ DatasetSpec::Synthetic { .. })) => spec.build()?,
                _ => return Err(config("make-dataset needs --kind or a config with a synthetic dataset")),
            };
            make_dataset(&dataset, &args.dest)?;
            println!("wrote {} images in {} classes to {}", dataset.images().len(), dataset.class_count(), args.dest.display());
        }
        Command::Pipeline => {
            let outcome = run_pipeline(reg, ctx.config("pipeline")?)?;
            for run in &outcome.runs {
                let note = if run.cached { " (cache hit)" } else { "" };
                println!("run {} {}{note}", run.record.run_id, run.record.kind);
            }
            println!("{} ledger rows, report in {}", outcome.ledger_rows.len(), outcome.artifacts.dir.display());
        }
    }
    Ok(())
}

/// Parse `args`, run, and map the outcome to an exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
