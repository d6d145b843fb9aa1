use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "ets",
    version,
    about = "Augment-then-search toolkit for few-shot object detection",
    propagate_version = true
)]
pub struct Cli {
    /// Global config file (TOML).
    #[arg(long, global = true, env = "ETS_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Work directory for search artifacts [env: ETS_WORKDIR when unset here and in the config].
    #[arg(long, global = true, value_name = "DIR")]
    pub workdir: Option<PathBuf>,

    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<log::LevelFilter>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest datasets, draw K-shot episodes and validation sets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Inspect augmentation pipelines.
    #[command(subcommand)]
    Augment(AugmentCmd),
    /// Score detections against ground truth (COCO mAP).
    Eval(EvalArgs),
    /// Grid search over training configurations.
    Search(SearchArgs),
    /// Trainer-side helpers.
    #[command(subcommand)]
    Runner(RunnerCmd),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Validate a COCO annotation file and summarize it.
    Ingest {
        #[arg(long, value_name = "FILE")]
        ann: PathBuf,
        /// Drop or clip bad boxes instead of failing.
        #[arg(long)]
        lenient: bool,
        /// Write the normalized dataset here.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Draw K instances per category.
    Episode {
        #[arg(long, value_name = "FILE")]
        ann: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Sample a stratified, coarse-labeled validation set from a test set.
    Valset {
        #[arg(long, value_name = "FILE")]
        ann: PathBuf,
        /// Sampling rate in (0, 1].
        #[arg(long, value_parser = parse_rate)]
        rate: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the images not drawn, as a separate test set.
        #[arg(long)]
        disjoint: bool,
        /// `fine_id coarse_id coarse_name` per line; identity when absent.
        #[arg(long, value_name = "FILE")]
        coarse_map: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Remainder output in disjoint mode [default: <out stem>.remainder.json].
        #[arg(long, value_name = "FILE", requires = "disjoint")]
        remainder_out: Option<PathBuf>,
    },
    /// Compare per-category proportions of two datasets.
    Report {
        #[arg(long, value_name = "FILE")]
        val: PathBuf,
        #[arg(long, value_name = "FILE")]
        reference: PathBuf,
        /// Relabel the reference with this map first.
        #[arg(long, value_name = "FILE")]
        coarse_map: Option<PathBuf>,
    },
}

pub fn parse_rate(s: &str) -> Result<f64, String> {
    let r: f64 = s.parse().map_err(|_| format!("`{s}` is not a number; rate must lie in (0, 1]"))?;
    if r > 0.0 && r <= 1.0 {
        Ok(r)
    } else {
        Err(format!("rate must lie in (0, 1], got {s}"))
    }
}

#[derive(Debug, Subcommand)]
pub enum AugmentCmd {
    /// Write augmented images and a box sidecar JSON per image.
    Preview {
        /// Pipeline spec (TOML) [default: config `aug_spec`, else the built-in default].
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "FILE")]
        ann: PathBuf,
        #[arg(long, value_name = "DIR")]
        images: PathBuf,
        /// Number of images to process, in image-id order.
        #[arg(long, default_value_t = 8)]
        limit: usize,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub dets: PathBuf,
    /// Comma-separated IoU thresholds [default: 0.50:0.05:0.95].
    #[arg(long, value_delimiter = ',', value_parser = parse_iou)]
    pub iou_thrs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_dets: u64,
}

fn parse_iou(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(t) if (0.0..=1.0).contains(&t) => Ok(t),
        _ => Err(format!("IoU threshold must lie in [0, 1], got {s}")),
    }
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct SearchArgs {
    #[command(subcommand)]
    pub cmd: Option<SearchCmd>,
    #[command(flatten)]
    pub run: Option<RunArgs>,
}

#[derive(Debug, Subcommand)]
pub enum SearchCmd {
    /// Run every grid point and record the ledger (same as `ets search --grid ...`).
    Run(RunArgs),
    /// Best trial of a ledger.
    Best {
        #[arg(long, value_name = "FILE")]
        ledger: PathBuf,
    },
    /// Train the best configuration once and evaluate it on the test set.
    Final(FinalArgs),
    /// Canonical (timestamp-free) serialization of a ledger.
    Canonical {
        #[arg(long, value_name = "FILE")]
        ledger: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "FILE")]
    pub grid: PathBuf,
    /// Trainer description (TOML).
    #[arg(long, value_name = "FILE")]
    pub trainer: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub episode: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub valset: PathBuf,
    /// Image directory handed to the trainer [default: directory of the episode file].
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub parallelism: u64,
    /// Stop after this many trials without improvement.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub patience: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ledger path [default: <workdir>/ledger.jsonl].
    #[arg(long, value_name = "FILE")]
    pub ledger: Option<PathBuf>,
    /// Comma-separated IoU thresholds for validation mAP.
    #[arg(long, value_delimiter = ',', value_parser = parse_iou)]
    pub iou_thrs: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct FinalArgs {
    #[arg(long, value_name = "FILE")]
    pub ledger: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub testset: PathBuf,
    /// Defaults to the trainer recorded in the ledger.
    #[arg(long, value_name = "FILE")]
    pub trainer: Option<PathBuf>,
    /// Defaults to the episode recorded in the ledger.
    #[arg(long, value_name = "FILE")]
    pub episode: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_iou)]
    pub iou_thrs: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum RunnerCmd {
    /// Synthetic trainer speaking the file protocol; use it in a trainer
    /// command template to exercise the subprocess path.
    Synthetic {
        /// Trial config file written by the runner (the `{config}` placeholder).
        #[arg(long, value_name = "FILE")]
        trial: PathBuf,
        /// Annotations to produce detections for.
        #[arg(long, value_name = "FILE")]
        val: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// `name=optimum:width`, repeatable.
        #[arg(long = "target", value_name = "SPEC")]
        targets: Vec<String>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn bare_search_means_run() {
        let cli = Cli::try_parse_from([
            "ets", "search", "--grid", "g", "--trainer", "t", "--episode", "e", "--valset", "v",
        ])
        .unwrap();
        match cli.command {
            Command::Search(SearchArgs { cmd: None, run: Some(r) }) => assert_eq!(r.parallelism, 1),
            other => panic!("{other:?}"),
        }
        let cli = Cli::try_parse_from(["ets", "search", "best", "--ledger", "l"]).unwrap();
        assert!(matches!(cli.command, Command::Search(SearchArgs { cmd: Some(SearchCmd::Best { .. }), .. })));
    }

    #[test]
    fn rate_range_is_checked() {
        let err = Cli::try_parse_from(["ets", "dataset", "valset", "--rate", "1.5"]).unwrap_err();
        assert!(err.to_string().contains("(0, 1]"));
        assert_eq!(err.exit_code(), 2);
    }
}
