use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sleepstage::aggregate::{decide, fuse_grid, read_grid, read_hypnogram, write_grid, write_hypnogram, VotingRule};
use sleepstage::experiment::{
    image_builder, load_bundles, predict_grid, prepare_caches, render_hypnogram, run_experiment, train_fold,
    ExperimentConfig, ResolvedConfig, CACHE_MANIFEST,
};
use sleepstage::metrics::EvalReport;
use sleepstage::network::{read_checkpoint, write_checkpoint};
use sleepstage::signal_io::{load_bundle, write_bundle, StageLabel};
use sleepstage::synth::{calibrate_transition_matrix, generate_corpus, SignatureSet, DEFAULT_STATIONARY};
use sleepstage::tfr::TfCache;
use sleepstage::training::history_csv;
use sleepstage::{Error, Result};

#[derive(Parser)]
#[command(name = "sleepstage", version, about = "Multi-task CNN sleep staging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic recording bundles.
    Synth {
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        #[arg(long, default_value_t = 500)]
        epochs_per_subject: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// 1 to 3 of EEG, EOG, EMG.
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 0.833)]
        lag1: f64,
        #[arg(long, default_value_t = 0.793)]
        lag2: f64,
        /// Log-normal sigma of the per-epoch band gains.
        #[arg(long)]
        jitter: Option<f64>,
        /// Seconds over which a differing neighbour bleeds into an epoch.
        #[arg(long)]
        transition_span: Option<f64>,
        /// Share of a differing neighbour's signal at the epoch boundary.
        #[arg(long)]
        transition_blend: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Build time-frequency caches for every bundle of a config.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train the model of one fold.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Cache directory, reused when up to date.
        #[arg(long)]
        cache_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write the posterior grid of one bundle.
    Predict {
        /// Supplies the channel selection and filter bank.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a posterior grid into a hypnogram.
    Aggregate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "multiplicative")]
        voting: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score hypnograms against ground truth.
    Evaluate {
        /// Ground-truth hypnograms or bundle directories.
        #[arg(long, required = true, num_args = 1..)]
        truth: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        /// Writes report.txt and report.csv here besides printing the report.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Cross-validate end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Plot ground truth above prediction (SVG plus a text rendering).
    RenderHypnogram {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, jobs: Option<usize>) -> Result<(ExperimentConfig, ResolvedConfig)> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(j) = jobs {
        config.run.jobs = j;
    }
    let resolved = config.resolve()?;
    Ok((config, resolved))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A hypnogram file, or the labels of a bundle directory.
fn read_labels(path: &Path) -> Result<Vec<StageLabel>> {
    if path.is_dir() {
        Ok(load_bundle(path)?.labels)
    } else {
        Ok(read_hypnogram(path)?.labels)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            subjects,
            epochs_per_subject,
            seed,
            channels,
            lag1,
            lag2,
            jitter,
            transition_span,
            transition_blend,
            out_dir,
            jobs,
        } => {
            let chain = calibrate_transition_matrix(lag1, lag2, DEFAULT_STATIONARY)?;
            let mut sig = SignatureSet::default_for(channels)?;
            if let Some(v) = jitter {
                sig.jitter = v;
            }
            if let Some(v) = transition_span {
                sig.transition_span_s = v;
            }
            if let Some(v) = transition_blend {
                sig.transition_blend = v;
            }
            sig.validate()?;
            let corpus = generate_corpus(&chain, &sig, subjects, epochs_per_subject, seed, jobs)?;
            create_dir(&out_dir)?;
            for b in &corpus {
                write_bundle(b, out_dir.join(&b.subject_id))?;
            }
            println!("wrote {} bundles to {}", corpus.len(), out_dir.display());
        }
        Command::Preprocess { config, out_dir, jobs } => {
            let (_, cfg) = load_config(&config, jobs)?;
            let bundles = load_bundles(&cfg.bundles)?;
            let caches = prepare_caches(&bundles, &cfg, Some(&out_dir), cfg.jobs)?;
            for (c, hash) in &caches {
                println!("{} {hash}", c.subject_id);
            }
            println!("manifest {}", out_dir.join(CACHE_MANIFEST).display());
        }
        Command::Train {
            config,
            cache_dir,
            fold,
            out_dir,
            jobs,
        } => {
            let (_, cfg) = load_config(&config, jobs)?;
            let bundles = load_bundles(&cfg.bundles)?;
            let caches = prepare_caches(&bundles, &cfg, Some(&cache_dir), cfg.jobs)?;
            let fitted = train_fold(&cfg, &caches, fold)?;
            create_dir(&out_dir)?;
            write_checkpoint(out_dir.join("model.ssck"), &fitted.checkpoint)?;
            write_text(&out_dir.join("history.csv"), &history_csv(&fitted.history))?;
            println!("fold {fold}: best pass {}", fitted.best_pass);
        }
        Command::Predict {
            config,
            checkpoint,
            bundle,
            out,
        } => {
            let (_, cfg) = load_config(&config, None)?;
            let ck = read_checkpoint(&checkpoint)?;
            if ck.spec.epoch_dims() != cfg.spec.epoch_dims() {
                return Err(Error::shape(format!(
                    "checkpoint takes {:?} images, the config builds {:?}",
                    ck.spec.epoch_dims(),
                    cfg.spec.epoch_dims()
                )));
            }
            let b = load_bundle(&bundle)?;
            let cache = TfCache::from_bundle(&b, &image_builder(&cfg)?)?;
            write_grid(&out, &predict_grid(&ck, &cache)?)?;
        }
        Command::Aggregate { grid, voting, out } => {
            let rule: VotingRule = voting.parse()?;
            let g = read_grid(&grid)?;
            write_hypnogram(&out, &decide(&fuse_grid(&g, rule)?)?)?;
        }
        Command::Evaluate { truth, pred, out_dir } => {
            if truth.len() != pred.len() {
                return Err(Error::invalid(format!(
                    "{} ground-truth files for {} predictions",
                    truth.len(),
                    pred.len()
                )));
            }
            let truth = truth.iter().map(|p| read_labels(p)).collect::<Result<Vec<_>>>()?;
            let pred = pred.iter().map(|p| read_labels(p)).collect::<Result<Vec<_>>>()?;
            let pairs: Vec<(&[StageLabel], &[StageLabel])> = truth
                .iter()
                .zip(&pred)
                .map(|(t, p)| (t.as_slice(), p.as_slice()))
                .collect();
            let report = EvalReport::evaluate(&pairs)?;
            print!("{}", report.to_text());
            if let Some(dir) = out_dir {
                create_dir(&dir)?;
                write_text(&dir.join("report.txt"), &report.to_text())?;
                write_text(&dir.join("report.csv"), &report.to_csv())?;
            }
        }
        Command::Run { config, out_dir, jobs } => {
            let (cfg, resolved) = load_config(&config, jobs)?;
            let result = run_experiment(&cfg, &out_dir)?;
            print!("{}", result.summary_text(&resolved.spec));
        }
        Command::RenderHypnogram { truth, pred, out } => {
            render_hypnogram(&read_labels(&truth)?, &read_labels(&pred)?, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
