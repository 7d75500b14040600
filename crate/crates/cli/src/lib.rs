//! The `segconf` command line: `synth`, `confmap`, `eval`, `report` and
//! `catalog-dump`.
//!
//! Exit status is 0 on success, 1 for invalid arguments or inputs, 2 for
//! file-system and scorer-process failures.

mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use segconf::augment::build_catalog;
use segconf::confmap::{
    generate_synthetic_dataset, mc_dropout_map, pre_threshold_map, serve_job, tta_map,
    ChannelEchoScorer, ConfidenceMap, ExternalScorer, McDropoutParams, Method, Scorer,
    SyntheticScorer, SyntheticSpec,
};
use segconf::dataset::{write_dataset, DatasetManifest};
use segconf::eval::{evaluate, AucPooling, EvalOptions, ThresholdGrid};
use segconf::grid::{read_pfm, read_pgm, write_pfm, Task};
use segconf::report::{ReportSet, REPORT_FILE};

pub use config::{CatalogInfo, RunConfig, ScorerSpec, RUN_FILE};
pub use error::CliError;
use error::{canonical, io_error};

#[derive(Debug, Parser)]
#[command(
    name = "segconf",
    version,
    about = "Confidence maps for binary segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Build confidence maps for every sample of a dataset.
    Confmap(ConfmapArgs),
    /// Evaluate confidence maps against the dataset's truth masks.
    Eval(EvalArgs),
    /// Draw calibration, ROC and gain plots from a report.
    Report(ReportArgs),
    /// Print the augmentation catalog.
    CatalogDump(CatalogDumpArgs),
    /// Serve one job directory with a built-in scorer.
    #[command(hide = true)]
    Adapter(AdapterArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_blobs: usize,
    #[arg(long, default_value_t = 4)]
    pub max_blobs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = Task::Multi)]
    pub task: Task,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfmapArgs {
    /// Dataset manifest.json.
    #[arg(long, required_unless_present = "replay")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "prethresh,mcdropout,tta")]
    pub method: Vec<Method>,
    /// `synthetic` or `external:PATH`.
    #[arg(long, default_value = "synthetic")]
    pub scorer: ScorerSpec,
    /// MC-dropout trial i draws with seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 286)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Defaults to the manifest's task; `single` drops pre-event images.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Rerun the configuration recorded in a run.json.
    #[arg(long, conflicts_with_all = ["manifest", "scorer", "seed", "trials", "tau", "task", "method"])]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory of `confmap`.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to every method with a map directory.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<Method>,
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub grid: ThresholdGrid,
    #[arg(long, default_value_t = 0.5)]
    pub default_tau: f64,
    #[arg(long, default_value_t = 3)]
    pub min_samples: usize,
    #[arg(long, default_value_t = AucPooling::Pooled)]
    pub auc_pooling: AucPooling,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json, or the directory holding it.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CatalogDumpArgs {
    /// Write the catalog JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print only `<size> <sha256>`.
    #[arg(long)]
    pub checksum: bool,
}

#[derive(Debug, Args)]
pub struct AdapterArgs {
    /// `synthetic` or `echo[:CHANNEL]`.
    #[arg(long, default_value = "synthetic")]
    pub scorer: String,
    pub job_dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => {
            let manifest = synth(&args)?;
            println!(
                "wrote {} samples to {}",
                manifest.samples.len(),
                args.out.display()
            );
        }
        Command::Confmap(args) => {
            let cfg = confmap(&args)?;
            let methods: Vec<&str> = cfg.methods.iter().map(|m| m.as_str()).collect();
            println!(
                "wrote {} maps to {}",
                methods.join(", "),
                args.out.display()
            );
        }
        Command::Eval(args) => {
            for r in eval(&args)?.reports {
                println!("{:<10} auc={:.4} iou_a={:.4}", r.method, r.auc, r.iou_a);
            }
        }
        Command::Report(args) => {
            for path in report(&args)? {
                println!("{}", path.display());
            }
        }
        Command::CatalogDump(args) => {
            let text = catalog_dump(&args);
            match &args.out {
                Some(path) => fs::write(path, text).map_err(io_error(path))?,
                None => print!("{text}"),
            }
        }
        Command::Adapter(args) => {
            adapter(&args)?;
        }
    }
    Ok(())
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match workers {
        None => f(),
        Some(0) => Err(CliError::invalid("workers must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?
            .install(f),
    }
}

pub fn synth(args: &SynthArgs) -> Result<DatasetManifest, CliError> {
    let spec = SyntheticSpec {
        blob_count_range: [args.min_blobs, args.max_blobs],
        noise_level: args.noise,
        ..SyntheticSpec::new(args.seed, args.count, args.size)
    };
    let samples = generate_synthetic_dataset(&spec)?;
    fs::create_dir_all(&args.out).map_err(io_error(&args.out))?;
    Ok(write_dataset(&samples, args.task, &args.out)?)
}

fn build_scorer(spec: &ScorerSpec) -> Box<dyn Scorer> {
    match spec {
        ScorerSpec::Synthetic => Box::new(SyntheticScorer),
        ScorerSpec::External(program) => Box::new(ExternalScorer::new(program)),
    }
}

/// Runs (or replays) a confmap configuration and writes
/// `<out>/<method>/<id>.pfm` plus `<out>/run.json`.
pub fn confmap(args: &ConfmapArgs) -> Result<RunConfig, CliError> {
    fs::create_dir_all(&args.out).map_err(io_error(&args.out))?;
    let out = canonical(&args.out)?;
    let catalog = build_catalog();
    let catalog_info = CatalogInfo {
        size: catalog.len(),
        checksum: catalog.checksum(),
    };

    let (cfg, manifest_path) = match &args.replay {
        Some(run_path) => {
            let cfg = RunConfig::read(run_path)?;
            if cfg.catalog != catalog_info {
                return Err(CliError::invalid(format!(
                    "{}: recorded catalog {} ({} entries) differs from this build's {}",
                    run_path.display(),
                    cfg.catalog.checksum,
                    cfg.catalog.size,
                    catalog_info.checksum
                )));
            }
            let base = run_path.parent().unwrap_or(Path::new(""));
            let manifest_path = canonical(&base.join(&cfg.manifest))?;
            let cfg = RunConfig {
                manifest: relative_to(&manifest_path, &out),
                ..cfg
            };
            (cfg, manifest_path)
        }
        None => {
            let given = args.manifest.as_ref().expect("clap requires manifest");
            let manifest_path = canonical(given)?;
            let task = match args.task {
                Some(task) => task,
                None => DatasetManifest::read(&manifest_path)?.task,
            };
            let cfg = RunConfig {
                task,
                methods: args.method.clone(),
                scorer: args.scorer.clone(),
                seed: args.seed,
                trials: args.trials,
                tau: args.tau,
                manifest: relative_to(&manifest_path, &out),
                catalog: catalog_info,
            };
            cfg.validate()?;
            (cfg, manifest_path)
        }
    };
    if manifest_path.parent() == Some(out.as_path()) {
        return Err(CliError::invalid(
            "output directory must differ from the dataset directory",
        ));
    }

    let manifest = DatasetManifest::read(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let samples = match (manifest.task, cfg.task) {
        (Task::Single, Task::Multi) => {
            return Err(CliError::invalid(
                "multi-image run requested on a single-image dataset",
            ))
        }
        (Task::Multi, Task::Single) => manifest
            .load(base)?
            .into_iter()
            .map(|s| s.without_pre())
            .collect(),
        _ => manifest.load(base)?,
    };

    let scorer = build_scorer(&cfg.scorer);
    let params = McDropoutParams {
        trials: cfg.trials,
        tau: cfg.tau,
        base_seed: cfg.seed,
    };
    with_workers(args.workers, || {
        for &method in &cfg.methods {
            let dir = out.join(method.as_str());
            fs::create_dir_all(&dir).map_err(io_error(&dir))?;
            let results: Vec<Result<(), CliError>> = samples
                .par_iter()
                .map(|sample| {
                    let map = match method {
                        Method::PreThreshold => pre_threshold_map(scorer.as_ref(), sample),
                        Method::McDropout => mc_dropout_map(scorer.as_ref(), sample, &params),
                        Method::Tta => tta_map(scorer.as_ref(), sample, &catalog),
                    }
                    .map_err(|e| prefix(sample.id(), e.into()))?;
                    let path = dir.join(format!("{}.pfm", sample.id()));
                    write_pfm(&map.to_score_map(), &path)?;
                    Ok(())
                })
                .collect();
            results.into_iter().collect::<Result<(), _>>()?;
        }
        Ok(())
    })?;
    let run_path = out.join(RUN_FILE);
    fs::write(&run_path, cfg.to_json()).map_err(io_error(&run_path))?;
    Ok(cfg)
}

fn prefix(id: &str, err: CliError) -> CliError {
    match err {
        CliError::Validation(m) => CliError::Validation(format!("sample {id}: {m}")),
        CliError::Io(m) => CliError::Io(format!("sample {id}: {m}")),
    }
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    pathdiff::diff_paths(path, base).unwrap_or_else(|| path.to_path_buf())
}

/// Evaluates every selected method and writes the report tables.
pub fn eval(args: &EvalArgs) -> Result<ReportSet, CliError> {
    let manifest = DatasetManifest::read(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new(""));
    let methods: Vec<Method> = if args.method.is_empty() {
        Method::ALL
            .into_iter()
            .filter(|m| args.maps.join(m.as_str()).is_dir())
            .collect()
    } else {
        args.method.clone()
    };
    if methods.is_empty() {
        return Err(CliError::invalid(format!(
            "no map directories under {}",
            args.maps.display()
        )));
    }
    let options = EvalOptions {
        grid: args.grid.clone(),
        default_tau: args.default_tau,
        min_samples: args.min_samples,
        auc_pooling: args.auc_pooling,
    };
    let ids: Vec<String> = manifest.ids().map(str::to_owned).collect();

    let set = with_workers(args.workers, || {
        let truths = manifest
            .samples
            .par_iter()
            .map(|s| read_pgm(base.join(&s.truth)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let mut reports = Vec::with_capacity(methods.len());
        for &method in &methods {
            let dir = args.maps.join(method.as_str());
            let maps = ids
                .par_iter()
                .map(|id| {
                    let path = dir.join(format!("{id}.pfm"));
                    if !path.is_file() {
                        return Err(CliError::Io(format!(
                            "no {method} map for sample {id} at {}",
                            path.display()
                        )));
                    }
                    let map = read_pfm(&path)?;
                    Ok(ConfidenceMap::from_score_map(method, &map))
                })
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Result<Vec<_>, CliError>>()?;
            reports.push(evaluate(method, &ids, &maps, &truths, &options)?);
        }
        Ok(ReportSet::new(reports)?)
    })?;
    set.write_tables(&args.out)?;
    Ok(set)
}

pub fn report(args: &ReportArgs) -> Result<Vec<PathBuf>, CliError> {
    let path = if args.report.is_dir() {
        args.report.join(REPORT_FILE)
    } else {
        args.report.clone()
    };
    let set = ReportSet::read(&path)?;
    Ok(set.write_plots(&args.out)?)
}

pub fn catalog_dump(args: &CatalogDumpArgs) -> String {
    let catalog = build_catalog();
    if args.checksum {
        format!("{} {}\n", catalog.len(), catalog.checksum())
    } else {
        let mut text = catalog.to_json();
        text.push('\n');
        text
    }
}

pub fn adapter(args: &AdapterArgs) -> Result<usize, CliError> {
    let scorer: Box<dyn Scorer> = match args.scorer.split_once(':') {
        None if args.scorer == "synthetic" => Box::new(SyntheticScorer),
        None if args.scorer == "echo" => Box::new(ChannelEchoScorer { channel: 0 }),
        Some(("echo", ch)) => Box::new(ChannelEchoScorer {
            channel: ch
                .parse()
                .map_err(|_| CliError::invalid(format!("bad echo channel `{ch}`")))?,
        }),
        _ => {
            return Err(CliError::invalid(format!(
                "unknown adapter scorer `{}` (expected synthetic or echo[:CHANNEL])",
                args.scorer
            )))
        }
    };
    Ok(serve_job(&args.job_dir, scorer.as_ref())?)
}
