use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leafbench::dataset::{class_distribution, load_manifest, verify_images, ClassRegistry};
use leafbench::experiment::plots::bar_chart;
use leafbench::experiment::{self, compare, generate_synthetic, ExperimentConfig, SyntheticDatasetSpec};
use leafbench::metrics::fmt3;
use leafbench::model_zoo::Architecture;
use leafbench::splitter::split_report;
use leafbench::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "leafbench", version, about = "Benchmark CNN classifiers on imbalanced leaf-disease images")]
struct Cli {
    /// Overrides the seed of the config or synthetic spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config, for commands that take one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Class distribution and unreadable images of a manifest.
    Eda { manifest: PathBuf },
    /// Generates a synthetic image set from a JSON spec.
    Synth { spec: PathBuf, out: Option<PathBuf> },
    /// Writes the stratified split files of every configured architecture.
    Split {
        #[arg(value_name = "CONFIG")]
        config_file: Option<PathBuf>,
    },
    /// Trains one architecture and evaluates it on the test split.
    Train {
        #[arg(value_name = "CONFIG")]
        config_file: Option<PathBuf>,
        #[arg(long)]
        arch: String,
    },
    /// Re-evaluates the best checkpoint of a finished run.
    Eval {
        #[arg(value_name = "CONFIG")]
        config_file: Option<PathBuf>,
        #[arg(long)]
        arch: String,
    },
    /// Tabulates finished runs by weighted F1.
    Compare {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli, positional: Option<&PathBuf>) -> Result<ExperimentConfig> {
    let path = positional
        .or(cli.config.as_ref())
        .ok_or_else(|| Error::ConfigInvalid("no config given; pass a path or --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn registry(cli: &Cli) -> Result<ClassRegistry> {
    match &cli.config {
        Some(path) => Ok(ExperimentConfig::load(path)?.registry),
        None => Ok(ClassRegistry::cassava()),
    }
}

fn eda(cli: &Cli, manifest: &Path) -> Result<()> {
    let registry = registry(cli)?;
    let m = load_manifest(manifest, &registry)?;
    let dist = class_distribution(&m);
    println!("{:<10} {:>8} {:>8}", "class", "count", "share");
    for entry in registry.entries() {
        println!(
            "{:<10} {:>8} {:>8}",
            entry.code,
            dist.counts[entry.id],
            fmt3(dist.fractions[entry.id])
        );
    }
    println!("{:<10} {:>8}", "total", dist.total());
    match verify_images(&m) {
        Ok(bad) if bad.is_empty() => println!("all {} images decode", m.len()),
        Ok(bad) => {
            println!("{} unreadable images:", bad.len());
            for id in bad {
                println!("  {id}");
            }
        }
        Err(e) => log::warn!("images not checked: {e}"),
    }
    if let Some(out) = &cli.out {
        fs::create_dir_all(out).map_err(Error::Io)?;
        let path = out.join("class_distribution.png");
        bar_chart(&dist)
            .save(&path)
            .map_err(|e| Error::PlotBackendUnavailable(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn synth(cli: &Cli, spec_path: &Path, out: Option<&PathBuf>) -> Result<()> {
    let bytes = fs::read(spec_path).map_err(Error::Io)?;
    let mut spec: SyntheticDatasetSpec =
        serde_json::from_slice(&bytes).map_err(|e| Error::InvalidSpec(format!("{}: {e}", spec_path.display())))?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let out = out
        .or(cli.out.as_ref())
        .ok_or_else(|| Error::InvalidSpec("no output directory given".into()))?;
    let m = generate_synthetic(&spec, out, &registry(cli)?)?;
    println!("wrote {} images and {}", m.len(), out.join("manifest.csv").display());
    Ok(())
}

fn split(cfg: &ExperimentConfig) -> Result<()> {
    let codes: Vec<&str> = cfg.registry.entries().iter().map(|e| e.code.as_str()).collect();
    for arch in cfg.architectures()? {
        let (manifest, assignment) = experiment::prepare_split(cfg, arch)?;
        for w in &assignment.warnings {
            log::warn!("{w}");
        }
        println!("{arch} -> {}", cfg.run_dir(arch).display());
        print!("{}", split_report(&assignment, &manifest)?.render(&codes));
    }
    Ok(())
}

fn print_run(art: &experiment::RunArtifacts) {
    print!("{}", art.report.render());
    println!(
        "best epoch {} (val loss {:.4}), {} epochs run; artifacts in {}",
        art.checkpoint.best_epoch,
        art.checkpoint.best_val_loss,
        art.history.len(),
        art.run_dir.display()
    );
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Eda { manifest } => eda(cli, manifest),
        Command::Synth { spec, out } => synth(cli, spec, out.as_ref()),
        Command::Split { config_file } => split(&load_config(cli, config_file.as_ref())?),
        Command::Train { config_file, arch } => {
            let cfg = load_config(cli, config_file.as_ref())?;
            print_run(&experiment::run(&cfg, arch)?);
            Ok(())
        }
        Command::Eval { config_file, arch } => {
            let cfg = load_config(cli, config_file.as_ref())?;
            print_run(&experiment::evaluate(&cfg, arch)?);
            Ok(())
        }
        Command::Compare { run_dirs } => {
            let table = compare(run_dirs)?;
            print!("{}", table.render());
            if let Some(out) = &cli.out {
                fs::create_dir_all(out).map_err(Error::Io)?;
                let path = out.join("comparison.csv");
                fs::write(&path, table.to_csv()).map_err(Error::Io)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::UnknownArchitecture(_) | Error::ConfigInvalid(_) = e {
                let names: Vec<&str> = Architecture::ALL.iter().map(|a| a.name()).collect();
                eprintln!("known architectures: {}", names.join(", "));
            }
            ExitCode::from(u8::try_from(e.code()).unwrap_or(1))
        }
    }
}
