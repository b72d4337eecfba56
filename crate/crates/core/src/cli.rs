//! Command implementations behind the `memsplit` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::archspace::{ArchFamily, FamilyKind, MlpShape};
use crate::config::{BudgetSpec, RunConfig};
use crate::datagen;
use crate::error::{Error, Result};
use crate::hypertune::{BoOptions, TuneCache, TuneRecord, Tuner};
use crate::plotgen::{self, ChartKind, ChartSpec};
use crate::seed;
use crate::splitsweep::{self, FixedHyperparams, HyperparamSource, Metric, SweepPlan};
use crate::store::RunStore;

/// Relative run directories are resolved against this directory when set.
pub const RUN_ROOT_ENV: &str = "MEMSPLIT_RUN_ROOT";
pub const CONFIG_FILE: &str = "config.toml";
pub const TUNE_FILE: &str = "tune.jsonl";

#[derive(Debug, Parser)]
#[command(name = "memsplit", version, about = "Fixed-budget ensemble memory-split experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter count of a width, or the width that best fits a budget.
    Count(CountArgs),
    /// Train and evaluate every split of every configured budget.
    Sweep(SweepArgs),
    /// Tune (or echo) the hyperparameters of one member width.
    Tune(TuneArgs),
    /// Write a chart and summarize the optimal split of each budget.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub family: FamilyKind,
    #[arg(long, conflicts_with = "budget", required_unless_present = "budget")]
    pub k: Option<u64>,
    /// Parameter count, or a multiple of the standard budget such as `0.25std`.
    #[arg(long)]
    pub budget: Option<BudgetSpec>,
    /// Output classes of vgg16-cifar and wrn28.
    #[arg(long, default_value_t = 100)]
    pub classes: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub config: PathBuf,
    /// Maximum number of worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Run directory, overriding the config's `output`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub k: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
    #[arg(long, default_value = "memory-split")]
    pub chart: ChartKind,
    /// Ranking metric; `nll-split` charts always use calibrated NLL.
    #[arg(long)]
    pub metric: Option<Metric>,
}

pub fn resolve_run_dir(path: &Path) -> PathBuf {
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Count(a) => cmd_count(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Tune(a) => cmd_tune(&a, out),
        Command::Report(a) => cmd_report(&a, out),
    }
}

fn family_for_count(kind: FamilyKind, classes: u64) -> Result<ArchFamily> {
    Ok(match kind {
        FamilyKind::Mlp => ArchFamily::mlp(&MlpShape::default())?,
        FamilyKind::Vgg16Cifar => ArchFamily::vgg16_cifar(classes),
        FamilyKind::Wrn28 => ArchFamily::wrn28(classes),
        FamilyKind::Transformer6 => ArchFamily::by_kind(kind),
    })
}

pub fn cmd_count(a: &CountArgs, out: &mut dyn Write) -> Result<()> {
    let family = family_for_count(a.family, a.classes)?;
    if let Some(k) = a.k {
        writeln!(out, "{}", family.param_count(k)?)?;
        return Ok(());
    }
    let budget = a.budget.expect("clap requires --k or --budget").resolve(&family)?;
    let sol = family.solve_width(budget.params)?;
    if sol.clamped {
        return Err(Error::WidthOutOfRange {
            family: family.name().into(),
            k: sol.k,
            min: family.k_min,
            max: family.k_max,
        });
    }
    writeln!(out, "{}", sol.k)?;
    Ok(())
}

fn load_config(path: &Path, output: Option<&PathBuf>) -> Result<(RunConfig, PathBuf)> {
    let cfg = RunConfig::load(path)?;
    let dir = resolve_run_dir(output.unwrap_or(&cfg.output));
    Ok((cfg, dir))
}

/// Records the config in the run directory, refusing to mix two different
/// configs in one directory.
fn pin_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(CONFIG_FILE);
    let text = cfg.to_toml();
    match std::fs::read_to_string(&path) {
        Ok(existing) if RunConfig::parse(&existing).ok().as_ref() != Some(cfg) => Err(Error::InvalidInput(format!(
            "{} holds a different config; use another output directory",
            dir.display()
        ))),
        Ok(_) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(std::fs::write(path, text)?),
        Err(e) => Err(e.into()),
    }
}

fn tuner_for(cfg: &RunConfig, dir: &Path) -> Result<Option<Tuner>> {
    let Some(t) = &cfg.tune else {
        return Ok(None);
    };
    let cache = TuneCache::open(dir.join(TUNE_FILE))?;
    let mut tuner = Tuner::new(t.method, t.search_space(cfg.family), cfg.hp.clone(), cfg.seed, cache)?;
    tuner.bo = BoOptions {
        iterations: t.bo_iterations,
        init_points: t.bo_init_points,
        seed: seed::derive(cfg.seed, &[0xB0]),
    };
    tuner.staged_pin = t.staged_pin;
    Ok(Some(tuner))
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let (cfg, dir) = load_config(&a.config, a.output.as_ref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    sweep_in(&cfg, &dir, &pool, out)
}

fn sweep_in(cfg: &RunConfig, dir: &Path, pool: &rayon::ThreadPool, out: &mut dyn Write) -> Result<()> {
    pin_config(cfg, dir)?;
    let store = RunStore::open(dir)?;
    let family = cfg.family()?;
    let data = datagen::generate(&cfg.dataset)?;
    let tuner = tuner_for(cfg, dir)?;
    let fixed = FixedHyperparams(cfg.hp.clone());
    let source: &dyn HyperparamSource = match &tuner {
        Some(t) => t,
        None => &fixed,
    };
    let budgets = cfg.resolved_budgets()?;
    for (i, budget) in budgets.iter().enumerate() {
        let plan = SweepPlan {
            family: family.clone(),
            budget: *budget,
            n_grid: cfg.n_grid.clone(),
            replicates: cfg.replicates,
            root_seed: cfg.seed,
            retrain_full: cfg.retrain_full,
        };
        writeln!(
            out,
            "[{}/{}] budget {} ({:.4} std)",
            i + 1,
            budgets.len(),
            budget.params,
            budget.standard_units
        )?;
        let records = pool.install(|| splitsweep::run_sweep(&plan, source, &data, Some(&store)))?;
        let curve = splitsweep::optimal_split(&records, Metric::Accuracy)?;
        for p in &curve.points {
            writeln!(
                out,
                "  N={:<3} k={:<4} accuracy {:.4} +- {:.4} ({} replicates)",
                p.n, p.k, p.mean, p.stddev, p.replicates
            )?;
        }
    }
    store.canonicalize()?;
    writeln!(out, "records: {}", store.records_path().display())?;
    Ok(())
}

pub fn cmd_tune(a: &TuneArgs, out: &mut dyn Write) -> Result<()> {
    let (cfg, dir) = load_config(&a.config, a.output.as_ref())?;
    let family = cfg.family()?;
    family.check_width(a.k)?;
    let Some(tuner) = tuner_for_dir(&cfg, &dir)? else {
        writeln!(out, "{}", serde_json::to_string(&cfg.hp)?)?;
        return Ok(());
    };
    let data = datagen::generate(&cfg.dataset)?;
    let before = tuner.cache.len();
    let record: TuneRecord = tuner.tuned_hp_for_size(&family, a.k, &data)?;
    if tuner.cache.len() == before {
        log::info!("cache hit for k = {}", a.k);
    }
    writeln!(out, "{}", serde_json::to_string(&record)?)?;
    Ok(())
}

fn tuner_for_dir(cfg: &RunConfig, dir: &Path) -> Result<Option<Tuner>> {
    if cfg.tune.is_some() {
        std::fs::create_dir_all(dir)?;
    }
    tuner_for(cfg, dir)
}

pub fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let dir = resolve_run_dir(&a.run_dir);
    let store = RunStore::open_existing(&dir)?;
    let records = store.records();
    let spec = match a.metric {
        Some(m) if a.chart != ChartKind::NllSplit => ChartSpec::with_metric(a.chart, m),
        _ => ChartSpec::new(a.chart),
    };
    let (csv_path, svg_path, rendered) = plotgen::write_chart(&dir, &records, spec)?;
    let curves = splitsweep::split_curves(&records, spec.metric)?;
    writeln!(out, "metric: {}", spec.metric.as_str())?;
    for c in &curves {
        let p = c.optimum();
        writeln!(
            out,
            "budget {} ({:.4} std): N* = {} (k = {}, {} = {:.4} +- {:.4}), msa_holds = {}",
            c.budget.params,
            c.budget.standard_units,
            c.optimal_n,
            p.k,
            spec.metric.as_str(),
            p.mean,
            p.stddev,
            c.msa_holds
        )?;
    }
    writeln!(out, "csv: {}", csv_path.display())?;
    writeln!(out, "svg: {}", svg_path.display())?;
    log::debug!("{} chart rows", rendered.rows.len());
    Ok(())
}
