//! Command-line driver: `synth`, `lifetable`, `train`, `evaluate`, `importance`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::baselines::{fit_age_table, fit_logistic, fit_unconditional, BaselineModel};
use crate::boosting::{fit_gbm, BoostModel, BOOST_MAGIC};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::eval::{default_snapshots, run_rolling_origin, write_report, ExperimentPlan};
use crate::forest::{fit_forest, ForestModel, FOREST_MAGIC};
use crate::importance::{aggregate_importance, gain_importance, subset_gains, AggregateOptions, Dimension, Ensemble, GainSource};
use crate::model_io::peek_magic;
use crate::panel::{assemble_design, cohort_partition, ingest_panel, DesignMatrix, PanelDataset, VariableCatalog};
use crate::synth::{generate_panel, SynthConfig};

pub const THREADS_ENV: &str = "CREDLIFE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "credlife", version, about = "Mortality prediction from lagged credit panels")]
pub struct Cli {
    /// Worker threads (falls back to CREDLIFE_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainModel {
    Gb,
    Rf,
    Logit,
    Age,
    Uncond,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel from a key = value config.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the variable catalog CSV here.
        #[arg(long)]
        catalog_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_persons: Option<usize>,
    },
    /// Print the age life table of the risk set for a target year.
    Lifetable {
        #[arg(long, required = true, num_args = 1..)]
        panel: Vec<PathBuf>,
        #[arg(long)]
        catalog: PathBuf,
        /// Target year (defaults to the last panel year).
        #[arg(long)]
        year: Option<i32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one model on the training year before `--year` and save it.
    Train {
        #[arg(long, value_enum)]
        model: TrainModel,
        /// Test year; training rows have target year `year - 1`.
        #[arg(long)]
        year: i32,
        #[arg(long, num_args = 1..)]
        panel: Vec<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Plan-style key = value file with model parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Columnar design cache: read if present, written otherwise.
        #[arg(long)]
        design_cache: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        snapshots: Option<usize>,
        /// Write the boosting loss curve CSV here.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Run the rolling-origin experiment and write the report files.
    Evaluate {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        panel: Vec<PathBuf>,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate gain importance of a saved ensemble.
    Importance {
        #[arg(long)]
        model: PathBuf,
        /// group, lag, group_lag or group_cohort.
        #[arg(long)]
        by: String,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Training design cache (needed for group_cohort).
        #[arg(long)]
        design: Option<PathBuf>,
        /// Keep the age/state/moves cell in the report.
        #[arg(long)]
        include_noncredit: bool,
    },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer"))),
        Err(_) => Ok(None),
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let n = threads(cli.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn load_kv(path: Option<&Path>) -> Result<KvConfig> {
    match path {
        Some(p) => KvConfig::load(p),
        None => Ok(KvConfig::default()),
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            config,
            out,
            catalog_out,
            seed,
            n_persons,
        } => {
            let mut kv = load_kv(config.as_deref())?;
            if let Some(s) = seed {
                kv.set("seed", s);
            }
            if let Some(n) = n_persons {
                kv.set("n_persons", n);
            }
            let cfg = SynthConfig::from_kv(&kv)?;
            let digest = kv.digest();
            let panel = generate_panel(&cfg)?;
            let w = create(&out)?;
            panel
                .write_csv(&cfg.catalog, w, Some(&format!("config_digest={digest}")))
                .map_err(|e| Error::io(&out, e))?;
            if let Some(path) = catalog_out {
                let mut w = create(&path)?;
                cfg.catalog.write_csv(&mut w).map_err(|e| Error::io(&path, e))?;
                w.flush().map_err(|e| Error::io(&path, e))?;
            }
            eprintln!(
                "wrote {} snapshots for {} persons to {}",
                panel.n_snapshots(),
                panel.persons().len(),
                out.display()
            );
            Ok(())
        }
        Command::Lifetable {
            panel,
            catalog,
            year,
            out,
        } => {
            let catalog = VariableCatalog::load(&catalog)?;
            let data = ingest_panel(&panel, &catalog)?;
            let year = year.unwrap_or(data.year_range().1);
            let design = assemble_design(&data, &catalog, year, 1, Default::default())?;
            let table = fit_age_table(design.ages(), design.target())?;
            let mut kv = KvConfig::default();
            kv.set("command", "lifetable");
            kv.set("year", year);
            let mut text = format!("# config_digest={}\nage,deaths,at_risk,prob\n", kv.digest());
            for (age, c) in &table.cells {
                text.push_str(&format!("{age},{},{},{}\n", c.deaths, c.at_risk, c.prob()));
            }
            match out {
                Some(path) => {
                    let mut w = create(&path)?;
                    w.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
                    w.flush().map_err(|e| Error::io(&path, e))?;
                }
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Train {
            model,
            year,
            panel,
            catalog,
            out,
            config,
            design_cache,
            seed,
            snapshots,
            loss_csv,
        } => train(TrainArgs {
            model,
            year,
            panel,
            catalog,
            out,
            config,
            design_cache,
            seed,
            snapshots,
            loss_csv,
        }),
        Command::Evaluate {
            plan,
            panel,
            catalog,
            out,
            seed,
        } => {
            let mut kv = load_kv(plan.as_deref())?;
            if let Some(s) = seed {
                kv.set("seed", s);
            }
            let plan = ExperimentPlan::from_kv(&kv)?;
            let catalog = VariableCatalog::load(&catalog)?;
            let data = ingest_panel(&panel, &catalog)?;
            let report = run_rolling_origin(&data, &catalog, &plan)?;
            write_report(&report, &out)?;
            eprintln!("wrote {} AUC rows to {}", report.auc.len(), out.display());
            Ok(())
        }
        Command::Importance {
            model,
            by,
            top,
            out,
            design,
            include_noncredit,
        } => importance(&model, &by, top, &out, design.as_deref(), include_noncredit),
    }
}

struct TrainArgs {
    model: TrainModel,
    year: i32,
    panel: Vec<PathBuf>,
    catalog: Option<PathBuf>,
    out: PathBuf,
    config: Option<PathBuf>,
    design_cache: Option<PathBuf>,
    seed: Option<u64>,
    snapshots: Option<usize>,
    loss_csv: Option<PathBuf>,
}

fn load_panel(panel: &[PathBuf], catalog: Option<&Path>) -> Result<(PanelDataset, VariableCatalog)> {
    let catalog = catalog.ok_or_else(|| Error::Config("--catalog is required to read a panel".into()))?;
    let catalog = VariableCatalog::load(catalog)?;
    if panel.is_empty() {
        return Err(Error::Config("--panel is required when no design cache exists".into()));
    }
    Ok((ingest_panel(panel, &catalog)?, catalog))
}

fn training_design(args: &TrainArgs, options: crate::panel::DesignOptions) -> Result<DesignMatrix> {
    let target = args.year - 1;
    if let Some(cache) = args.design_cache.as_deref().filter(|p| p.exists()) {
        let d = DesignMatrix::load(cache)?;
        if d.target_year() != target || args.snapshots.is_some_and(|l| l != d.snapshots()) {
            return Err(Error::Config(format!(
                "design cache {} holds target year {} with {} snapshots",
                cache.display(),
                d.target_year(),
                d.snapshots()
            )));
        }
        return Ok(d);
    }
    let (data, catalog) = load_panel(&args.panel, args.catalog.as_deref())?;
    let l = match args.snapshots {
        Some(l) => l,
        None => {
            let l = default_snapshots(data.year_range().0, args.year);
            if l < 1 {
                return Err(Error::InfeasibleYear {
                    year: args.year,
                    reason: "panel too short for a training year".into(),
                });
            }
            l as usize
        }
    };
    let d = assemble_design(&data, &catalog, target, l, options)?;
    if let Some(cache) = args.design_cache.as_deref() {
        d.save(cache)?;
    }
    Ok(d)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut kv = load_kv(args.config.as_deref())?;
    if let Some(s) = args.seed {
        kv.set("seed", s);
    }
    let plan = ExperimentPlan::from_kv(&kv)?;
    let mut digest_kv = kv.clone();
    digest_kv.set("command", "train");
    digest_kv.set("model", format!("{:?}", args.model).to_lowercase());
    digest_kv.set("year", args.year);
    if let Some(l) = args.snapshots {
        digest_kv.set("snapshots", l);
    }
    let digest = digest_kv.digest();

    let design = training_design(&args, plan.design)?;
    let write_json = |model: BaselineModel| -> Result<()> {
        let mut doc = model.to_json();
        doc["config_digest"] = digest.clone().into();
        doc["target_year"] = design.target_year().into();
        let mut w = create(&args.out)?;
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w).map_err(|e| Error::io(&args.out, e))?;
        w.flush().map_err(|e| Error::io(&args.out, e))
    };
    match args.model {
        TrainModel::Gb => {
            let mut m = fit_gbm(&design, &plan.boost)?;
            m.meta.config_digest = digest.clone();
            m.save(&args.out)?;
            if let Some(path) = &args.loss_csv {
                let mut w = create(path)?;
                writeln!(w, "# config_digest={digest}").map_err(|e| Error::io(path, e))?;
                m.write_loss_csv(&mut w)?;
            }
        }
        TrainModel::Rf => {
            let mut m = fit_forest(&design, &plan.forest)?;
            m.meta.config_digest = digest.clone();
            m.save(&args.out)?;
        }
        TrainModel::Logit => {
            let cols: Vec<usize> = design
                .columns_where(|m| m.is_age_or_state())
                .into_iter()
                .filter(|&j| design.features().column(j).iter().any(|&v| v != 0.0))
                .collect();
            let names = cols.iter().map(|&j| design.column_meta()[j].label()).collect();
            let m = fit_logistic(&design.features().select_columns(&cols), design.target(), names)?;
            write_json(BaselineModel::Logistic(m))?;
        }
        TrainModel::Age => write_json(BaselineModel::LifeTable(fit_age_table(design.ages(), design.target())?))?,
        TrainModel::Uncond => write_json(BaselineModel::Unconditional(fit_unconditional(design.target())?))?,
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

enum Loaded {
    Forest(ForestModel),
    Boost(BoostModel),
}

fn importance(
    model_path: &Path,
    by: &str,
    top: Option<usize>,
    out: &Path,
    design: Option<&Path>,
    include_noncredit: bool,
) -> Result<()> {
    let dimension = Dimension::parse(by)?;
    let magic = peek_magic(model_path)?;
    let loaded = if &magic == FOREST_MAGIC {
        Loaded::Forest(ForestModel::load(model_path)?)
    } else if &magic == BOOST_MAGIC {
        Loaded::Boost(BoostModel::load(model_path)?)
    } else {
        return Err(Error::BadModelFile(format!(
            "{} is not a forest or boosting model",
            model_path.display()
        )));
    };
    let (ensemble, meta) = match &loaded {
        Loaded::Forest(m) => (Ensemble::Forest(m), &m.meta),
        Loaded::Boost(m) => (Ensemble::Boost(m), &m.meta),
    };
    let source = if dimension == Dimension::GroupCohort {
        let path = design.ok_or_else(|| Error::Config("group_cohort importance needs --design".into()))?;
        let d = DesignMatrix::load(path)?;
        meta.check_design(&d)?;
        let partition = cohort_partition(d.ages(), &Default::default());
        let per = partition
            .cells
            .iter()
            .map(|(label, rows)| Ok((label.clone(), subset_gains(ensemble, d.features(), d.target(), rows)?)))
            .collect::<Result<Vec<_>>>()?;
        GainSource::ByCohort(per)
    } else {
        GainSource::Pooled(gain_importance(ensemble))
    };
    let report = aggregate_importance(
        &source,
        &meta.column_meta,
        dimension,
        AggregateOptions {
            top_k: top,
            exclude_noncredit: !include_noncredit,
        },
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(format!("importance_{}.csv", dimension.as_str()));
    report.write_csv(create(&path)?, &meta.config_digest)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["credlife", "frobnicate"]), 2);
        assert_eq!(run(["credlife", "train", "--bogus"]), 2);
    }

    #[test]
    fn unreadable_input_exits_1() {
        assert_eq!(
            run([
                "credlife",
                "evaluate",
                "--panel",
                "/nonexistent/panel.csv",
                "--catalog",
                "/nonexistent/catalog.csv",
                "--out",
                "/tmp/never"
            ]),
            1
        );
    }
}
