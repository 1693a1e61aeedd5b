//! Command-line front end. `run` parses arguments, writes the resolved
//! configuration next to the outputs and dispatches to the harness.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_idx, make_rotation_domains, DomainDataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::harness::{
    ablate_branch_points, collect_style_dump, hyperparameter_search, run_leave_one_out, train_with,
    write_outputs, write_table, ExperimentConfig, ResultTable, SearchSpace, Study, TrainOptions,
    DEFAULT_SEARCH_TRIALS,
};
use crate::network::BranchingNetwork;
use crate::style::write_style_dump;

/// Default output directory when `--out` is absent.
pub const OUT_ENV: &str = "EARLYBRANCH_OUT";
pub const SNAPSHOT_NAME: &str = "config.resolved.toml";

#[derive(Parser, Debug)]
#[command(name = "earlybranch", version, about = "Early-branching domain generalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML file with [experiment], [data], [run] and [search] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (a file path for gen-data).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for the subcommand's main random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// CEBD dataset file; overrides `data_file` and the [data] section.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset, or rotate IDX digits into domains.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "idx_labels")]
        idx_images: Option<PathBuf>,
        #[arg(long, requires = "idx_images")]
        idx_labels: Option<PathBuf>,
    },
    /// Train one trial.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        target: Option<usize>,
    },
    /// Leave-one-out over target domains and seeds.
    Loo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        domains: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Leave-one-out for each branch point, augmentation off.
    AblateBranch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "k", value_delimiter = ',')]
        branch_points: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        domains: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Random search over alpha, beta and learning rate.
    Search {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        target: Option<usize>,
    },
    /// Write original and augmented trunk styles of one batch to styles.csv.
    StyleDump {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Full-network checkpoint to use instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rebuild summary.json from one or more rows.csv files.
    Report {
        #[command(flatten)]
        common: Common,
        /// Row files; defaults to <out>/rows.csv.
        #[arg(long, num_args = 1..)]
        rows: Vec<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target domains for loo and ablate-branch; all when absent.
    pub domains: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
    pub branch_points: Vec<usize>,
    pub trials: usize,
    pub search_seed: u64,
    /// Number of images in a style dump batch.
    pub dump_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domains: None,
            seeds: vec![0, 1, 2],
            branch_points: vec![0, 1, 2, 3, 4],
            trials: DEFAULT_SEARCH_TRIALS,
            search_seed: 0,
            dump_batch: 64,
        }
    }
}

/// Everything a CLI run reads; this is what gets snapshotted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub data_file: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    pub data: SyntheticConfig,
    pub run: RunConfig,
    pub search: SearchSpace,
    /// IDX sources used by gen-data, when any.
    pub idx: Option<IdxSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn resolve(common: &Common) -> std::result::Result<(CliConfig, PathBuf), Failure> {
    init_logging(common.verbose);
    let cfg = match &common.config {
        Some(p) if !p.is_file() => {
            return Err(Failure::Usage(format!("--config: no such file `{}`", p.display())));
        }
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    Ok((cfg, common.out.clone().unwrap_or_else(default_out)))
}

fn snapshot(dir: &Path, cfg: &CliConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SNAPSHOT_NAME);
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn check_file(flag: &str, path: &Path) -> std::result::Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{flag}: no such file `{}`", path.display())))
    }
}

/// Applies `--data` and validates paths before anything is written.
fn resolve_data(cfg: &mut CliConfig, data: &DataArgs) -> std::result::Result<(), Failure> {
    if let Some(p) = &data.data {
        cfg.data_file = Some(p.clone());
    }
    if let Some(p) = &cfg.data_file {
        check_file("--data", p)?;
    }
    Ok(())
}

fn load_dataset(cfg: &CliConfig) -> Result<DomainDataset> {
    match &cfg.data_file {
        Some(p) => DomainDataset::load(p),
        None => generate_synthetic(&cfg.data),
    }
}

fn validate(cfg: &CliConfig) -> std::result::Result<(), Failure> {
    cfg.experiment.validate()?;
    cfg.search.validate()?;
    if cfg.data_file.is_none() {
        cfg.data.validate()?;
    }
    Ok(())
}

fn finish_study(out: &Path, study: &Study) -> Result<()> {
    write_outputs(out, &study.table, &study.trials)?;
    let trials = out.join("trials.json");
    std::fs::write(&trials, serde_json::to_string_pretty(&study.trials)?).map_err(|e| Error::io(&trials, e))?;
    print!("{}", study.table.render());
    Ok(())
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::GenData {
            common,
            idx_images,
            idx_labels,
        } => {
            let (mut cfg, _) = resolve(&common)?;
            let out = common.out.clone().unwrap_or_else(|| default_out().join("data.cebd"));
            if let Some(s) = common.seed {
                cfg.data.seed = s;
            }
            if let (Some(images), Some(labels)) = (idx_images, idx_labels) {
                check_file("--idx-images", &images)?;
                check_file("--idx-labels", &labels)?;
                cfg.idx = Some(IdxSource { images, labels });
            }
            cfg.data.validate()?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            snapshot(dir, &cfg)?;
            let ds = match &cfg.idx {
                Some(src) => {
                    let (x, y) = load_idx(&src.images, &src.labels)?;
                    make_rotation_domains(&x, &y, &cfg.data.angles)?
                }
                None => generate_synthetic(&cfg.data)?,
            };
            let digest = ds.save(&out)?;
            println!("{}  {} samples  sha256 {digest}", out.display(), ds.len());
            Ok(())
        }
        Command::Train { common, data, target } => {
            let (mut cfg, out) = resolve(&common)?;
            resolve_data(&mut cfg, &data)?;
            if let Some(s) = common.seed {
                cfg.experiment.seed = s;
            }
            if let Some(t) = target {
                cfg.experiment.target_domain = t;
            }
            validate(&cfg)?;
            snapshot(&out, &cfg)?;
            let ds = load_dataset(&cfg)?;
            let opts = TrainOptions {
                checkpoint_dir: Some(out.join("checkpoints")),
                log_every: Some(cfg.experiment.eval_interval),
            };
            let outcome = train_with(&cfg.experiment, &ds, &opts)?;
            outcome.network.save(&out.join("checkpoints").join("selected.full.ceb1"))?;
            let study = Study {
                table: ResultTable::from_trials([&outcome.result]),
                trials: vec![outcome.result],
            };
            finish_study(&out, &study)?;
            Ok(())
        }
        Command::Loo {
            common,
            data,
            domains,
            seeds,
        } => {
            let (mut cfg, out) = resolve(&common)?;
            resolve_data(&mut cfg, &data)?;
            override_run(&mut cfg, domains, seeds, common.seed);
            validate(&cfg)?;
            snapshot(&out, &cfg)?;
            let ds = load_dataset(&cfg)?;
            let domains = cfg.run.domains.clone().unwrap_or_else(|| (0..ds.num_domains()).collect());
            let study = run_leave_one_out(&cfg.experiment, &ds, &domains, &cfg.run.seeds)?;
            finish_study(&out, &study)?;
            Ok(())
        }
        Command::AblateBranch {
            common,
            data,
            branch_points,
            domains,
            seeds,
        } => {
            let (mut cfg, out) = resolve(&common)?;
            resolve_data(&mut cfg, &data)?;
            override_run(&mut cfg, domains, seeds, common.seed);
            if let Some(k) = branch_points {
                cfg.run.branch_points = k;
            }
            if let Some(&bad) = cfg.run.branch_points.iter().find(|&&k| k > crate::network::TOTAL_BLOCKS) {
                return Err(Failure::Usage(format!("--k: branch point {bad} out of range 0..=4")));
            }
            validate(&cfg)?;
            snapshot(&out, &cfg)?;
            let ds = load_dataset(&cfg)?;
            let domains = cfg.run.domains.clone().unwrap_or_else(|| (0..ds.num_domains()).collect());
            let study = ablate_branch_points(&cfg.experiment, &ds, &cfg.run.branch_points, &domains, &cfg.run.seeds)?;
            finish_study(&out, &study)?;
            Ok(())
        }
        Command::Search {
            common,
            data,
            trials,
            target,
        } => {
            let (mut cfg, out) = resolve(&common)?;
            resolve_data(&mut cfg, &data)?;
            if let Some(s) = common.seed {
                cfg.run.search_seed = s;
            }
            if let Some(t) = trials {
                cfg.run.trials = t;
            }
            if let Some(t) = target {
                cfg.experiment.target_domain = t;
            }
            if cfg.run.trials == 0 {
                return Err(Failure::Usage("--trials must be at least 1".into()));
            }
            validate(&cfg)?;
            snapshot(&out, &cfg)?;
            let ds = load_dataset(&cfg)?;
            let found = hyperparameter_search(&cfg.experiment, &ds, &cfg.search, cfg.run.trials, cfg.run.search_seed)?;
            finish_study(&out, &found.study)?;
            let best = out.join("best.toml");
            std::fs::write(&best, found.best.to_toml()?).map_err(|e| Error::io(&best, e))?;
            println!("best trial {} -> {}", found.best_index, best.display());
            Ok(())
        }
        Command::StyleDump {
            common,
            data,
            checkpoint,
        } => {
            let (mut cfg, out) = resolve(&common)?;
            resolve_data(&mut cfg, &data)?;
            if let Some(p) = &checkpoint {
                check_file("--checkpoint", p)?;
            }
            if let Some(s) = common.seed {
                cfg.experiment.seed = s;
            }
            cfg.experiment.batch_size = cfg.run.dump_batch;
            validate(&cfg)?;
            snapshot(&out, &cfg)?;
            let ds = load_dataset(&cfg)?;
            let net = match &checkpoint {
                Some(p) => Some(BranchingNetwork::load(cfg.experiment.plan(&ds)?.network, p)?),
                None => None,
            };
            let entries = collect_style_dump(&cfg.experiment, &ds, net.as_ref())?;
            let path = out.join("styles.csv");
            let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_style_dump(std::io::BufWriter::new(f), &entries)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Report { common, rows } => {
            let (cfg, out) = resolve(&common)?;
            let rows = if rows.is_empty() { vec![out.join("rows.csv")] } else { rows };
            for p in &rows {
                check_file("--rows", p)?;
            }
            snapshot(&out, &cfg)?;
            let mut table = ResultTable::default();
            for p in &rows {
                table.merge(ResultTable::load(p)?);
            }
            write_table(&out, &table)?;
            print!("{}", table.render());
            Ok(())
        }
    }
}

fn override_run(cfg: &mut CliConfig, domains: Option<Vec<usize>>, seeds: Option<Vec<u64>>, seed: Option<u64>) {
    if let Some(d) = domains {
        cfg.run.domains = Some(d);
    }
    if let Some(s) = seed {
        cfg.run.seeds = vec![s];
    }
    if let Some(s) = seeds {
        cfg.run.seeds = s;
    }
}
