//! `cyclemix <command> --config <path>` front end.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{parse_config, ExperimentConfig};
use crate::data::write_image_tree;
use crate::error::Result;
use crate::pipeline::{
    build_caches, load_datasets, report, run_benchmark, train_gans, write_artifact_index, write_resolved_config, Layout,
    RunOptions, Selection,
};

#[derive(Debug, Parser)]
#[command(name = "cyclemix", version, about = "Cross-domain style mixing benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict to the fold whose held-out target is this domain.
    #[arg(long)]
    pub fold: Option<String>,
    /// Restrict to one of the configured seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic domains as a PNG folder tree.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Destination root (`<dest>/<domain>/<class>/<n>.png`).
        #[arg(long)]
        dest: PathBuf,
    },
    /// Train CycleGANs for every source pair of each fold.
    TrainGans {
        #[command(flatten)]
        common: Common,
    },
    /// Translate every source image through the fold's translators to disk.
    BuildCache {
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate every (method, fold, seed) cell; finished cells are skipped.
    Run {
        #[command(flatten)]
        common: Common,
        /// Stop after this many newly computed cells.
        #[arg(long)]
        max_cells: Option<usize>,
    },
    /// Aggregate cell results into report.md / report.csv.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn prepare(common: &Common) -> Result<(ExperimentConfig, Layout, Selection)> {
    let mut cfg = parse_config(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let layout = Layout::new(&cfg.output_dir);
    write_resolved_config(&cfg, &layout.root)?;
    Ok((cfg, layout, Selection { fold: common.fold.clone(), seed: common.seed }))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { common, dest } => {
            let cfg = parse_config(&common.config)?;
            let datasets = load_datasets(&cfg)?;
            write_image_tree(&dest, &datasets)?;
            println!("wrote {} domains to {}", datasets.len(), dest.display());
        }
        Command::TrainGans { common } => {
            let (cfg, layout, sel) = prepare(&common)?;
            let datasets = load_datasets(&cfg)?;
            for m in train_gans(&cfg, &datasets, &layout, &sel)? {
                println!("{}", m.display());
            }
            write_artifact_index(&layout)?;
        }
        Command::BuildCache { common } => {
            let (cfg, layout, sel) = prepare(&common)?;
            let datasets = load_datasets(&cfg)?;
            let writes = build_caches(&cfg, &datasets, &layout, &sel)?;
            println!("{writes} translations written");
            write_artifact_index(&layout)?;
        }
        Command::Run { common, max_cells } => {
            let (cfg, layout, sel) = prepare(&common)?;
            let datasets = load_datasets(&cfg)?;
            let summary = run_benchmark(&cfg, datasets, &layout, &sel, &RunOptions { max_new_cells: max_cells })?;
            for r in &summary.results {
                println!("{},{},{},{:.4},{}", r.method, r.target, r.seed, r.top1, r.n_eval);
            }
            println!("{} computed, {} reused", summary.computed.len(), summary.skipped.len());
            write_artifact_index(&layout)?;
        }
        Command::Report { common } => {
            let (cfg, layout, _) = prepare(&common)?;
            let datasets = load_datasets(&cfg)?;
            let table = report(&cfg, &datasets, &layout)?;
            print!("{}", table.to_markdown());
            write_artifact_index(&layout)?;
        }
    }
    Ok(())
}
