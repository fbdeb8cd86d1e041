use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use timemm::checkpoint::Checkpoint;
use timemm::config::RunConfig;
use timemm::error::{Error, Result};
use timemm::eval::{evaluate, metrics_csv, EvalTarget};
use timemm::pipeline::{
    diagnose, perturbation_csv, perturbation_study, prepare, run, write_file, Dataset, REPORT_KS,
};
use timemm::spectral::run_oracle_suite;
use timemm::synth::{generate, SynthConfig};
use timemm::training::history_csv;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "timemm", version, about = "Temporal multi-scale graph recommender")]
struct Cli {
    /// Worker threads; 1 gives the fully deterministic mode. Default: all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (overrides `output_dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train, then write the checkpoint, history and metrics.
    Train(ConfigArgs),
    /// Load a checkpoint and write validation/test metrics.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Timestamp-perturbation study: Original, Shuffle, Constant, Noise.
    Perturb {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of seeds, starting at the configured seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Span buckets, energy decay, gate mixing and modality mixtures.
    Diagnose {
        /// Checkpoint to analyse; trains from the config when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Check the spectral identities on random small graphs.
    OracleCheck {
        #[arg(long, default_value_t = 50)]
        graphs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic drift dataset and a matching config.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        users: usize,
        #[arg(long, default_value_t = 1000)]
        items: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(args: &ConfigArgs, base: Option<&str>) -> Result<RunConfig> {
    let mut text = match (&args.config, base) {
        (Some(path), _) => std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?,
        (None, Some(echo)) => echo.to_string(),
        (None, None) => String::new(),
    };
    for o in &args.overrides {
        if !o.contains('=') {
            return Err(Error::config(o.as_str(), "override must look like key=value"));
        }
        text.push('\n');
        text.push_str(o);
    }
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("timemm-out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            let cfg = load_config(&args, None)?;
            let dir = output_dir(&cfg)?;
            write_file(&dir.join("config.txt"), &cfg.echo())?;
            let data = Dataset::load(&cfg)?;
            let result = run(&cfg, &data.split, &data.features)?;
            Checkpoint::from_parameters(cfg.echo(), &result.model.params).save(dir.join("checkpoint.tmmc"))?;
            write_file(&dir.join("history.csv"), &history_csv(&result.outcome.history))?;
            write_file(
                &dir.join("metrics.csv"),
                &metrics_csv(&[("valid", &result.valid), ("test", &result.test)]),
            )?;
            println!(
                "best epoch {} of {}; valid recall@20 {:.4}; test recall@20 {:.4} ndcg@20 {:.4}",
                result.outcome.best_epoch,
                result.outcome.history.len(),
                result.valid.recall(20).unwrap_or(0.0),
                result.test.recall(20).unwrap_or(0.0),
                result.test.ndcg(20).unwrap_or(0.0)
            );
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Evaluate { checkpoint, config } => {
            let (cfg, model, bank, data) = restore(&checkpoint, &config)?;
            let dir = output_dir(&cfg)?;
            let fwd = model.forward(&bank)?;
            let valid = evaluate(&fwd, &data.split, EvalTarget::Valid, &REPORT_KS);
            let test = evaluate(&fwd, &data.split, EvalTarget::Test, &REPORT_KS);
            write_file(&dir.join("metrics.csv"), &metrics_csv(&[("valid", &valid), ("test", &test)]))?;
            print!("{}", metrics_csv(&[("valid", &valid), ("test", &test)]));
            Ok(())
        }
        Command::Perturb { config, seeds } => {
            let cfg = load_config(&config, None)?;
            let dir = output_dir(&cfg)?;
            write_file(&dir.join("config.txt"), &cfg.echo())?;
            let data = Dataset::load(&cfg)?;
            let seed_list: Vec<u64> = (0..seeds).map(|s| cfg.seed + s).collect();
            let runs = perturbation_study(&cfg, &data, &seed_list)?;
            let table = perturbation_csv(&runs);
            write_file(&dir.join("perturbation.csv"), &table)?;
            print!("{table}");
            Ok(())
        }
        Command::Diagnose { checkpoint, config } => {
            let (cfg, model, bank, data) = match checkpoint {
                Some(path) => restore(&path, &config)?,
                None => {
                    let cfg = load_config(&config, None)?;
                    let data = Dataset::load(&cfg)?;
                    let result = run(&cfg, &data.split, &data.features)?;
                    (cfg, result.model, result.bank, data)
                }
            };
            let dir = output_dir(&cfg)?;
            write_file(&dir.join("config.txt"), &cfg.echo())?;
            let bundle = diagnose(&model, &bank, &data.split)?;
            bundle.write_all(&dir)?;
            println!(
                "energy monotonic rate {:.4}; interior entropy fraction {:.4}",
                bundle.energy.overall.monotonic_rate, bundle.mixing.entropy_interior_fraction
            );
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::OracleCheck { graphs, seed } => {
            let summary = run_oracle_suite(graphs, seed)?;
            print!("{}", summary.table());
            if summary.passed() {
                Ok(())
            } else {
                Err(Error::Oracle("at least one spectral check exceeded its tolerance".into()))
            }
        }
        Command::Synth { out, users, items, seed } => {
            let data = generate(&SynthConfig {
                users,
                items,
                seed,
                ..SynthConfig::default()
            })?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let log_path = out.join("interactions.tsv");
            data.log.write_tsv(&log_path)?;
            let mut feature_paths = Vec::new();
            for f in &data.features {
                let p = out.join(format!("{}.tmmf", f.name));
                f.write_binary(&p)?;
                feature_paths.push(p);
            }
            let cfg = RunConfig {
                interactions: Some(log_path),
                features: feature_paths,
                output_dir: Some(out.join("run")),
                ..RunConfig::default()
            };
            write_file(&out.join("synth.conf"), &cfg.echo())?;
            println!(
                "{} users, {} items, {} interactions -> {}",
                data.log.num_users(),
                data.log.num_items(),
                data.log.len(),
                out.display()
            );
            Ok(())
        }
    }
}

/// Rebuilds data, bank and model from a checkpoint's config echo, then loads
/// the stored parameters. Flags override the echoed config.
fn restore(
    path: &Path,
    args: &ConfigArgs,
) -> Result<(RunConfig, timemm::model::Model, timemm::operators::OperatorBank, Dataset)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg = load_config(args, Some(&ckpt.config_echo))?;
    let data = Dataset::load(&cfg)?;
    let (bank, mut model) = prepare(&cfg, &data.split, &data.features)?;
    ckpt.restore(&mut model.params)?;
    Ok((cfg, model, bank, data))
}
