use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use spel::dsp::Frontend;
use spel::harness::evaluate::{evaluate_files, mcnemar_files, Metric};
use spel::harness::files::{matrix_csv, write_atomic};
use spel::harness::{experiment, load_wav, ExperimentConfig, ResultsRecord};
use spel::learner::Head;

#[derive(Parser)]
#[command(name = "spel", version, about = "Self-paced ensemble learning for audio classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Accuracy,
    Uar,
    Lrap,
    Wlrap,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    MultiClass,
    MultiLabel,
}

impl From<TaskArg> for Head {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::MultiClass => Head::MultiClass,
            TaskArg::MultiLabel => Head::MultiLabel,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Turn a PCM16 mono WAV file into a normalized log-mel matrix (CSV, one frame per line).
    Preprocess {
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Take the frontend settings from an experiment config instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pad or crop to this length; defaults to the clip's own length.
        #[arg(long)]
        clip_seconds: Option<f64>,
    },
    /// Run one experiment and write its result files.
    Run { config: PathBuf },
    /// Run every legal (m, k) pair of the config's sweep grid.
    Sweep { config: PathBuf },
    /// Score a predictions CSV against a truth CSV.
    Evaluate {
        predictions: PathBuf,
        truth: PathBuf,
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long, value_enum, default_value = "multi-class")]
        task: TaskArg,
    },
    /// Continuity-corrected McNemar test of two prediction files on the same truth.
    Mcnemar {
        pred_a: PathBuf,
        pred_b: PathBuf,
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "multi-class")]
        task: TaskArg,
    },
}

fn print_record(record: &ResultsRecord) {
    let primary = &record.primary_metric;
    println!("{} (config {})", record.name, &record.config_hash[..12]);
    println!("round  pseudo  test_{primary}  improvement");
    for row in &record.rounds {
        println!(
            "{:>5}  {:>6}  {:>10.4}  {:>+11.4}",
            row.round, row.pseudo_count, row.test[primary], row.improvement
        );
    }
    let m = &record.mcnemar;
    println!(
        "mcnemar vs baseline: statistic {:.3} (b={}, c={}) {}",
        m.statistic,
        m.b,
        m.c,
        if m.significant { "significant at 0.01" } else { "not significant at 0.01" }
    );
    println!("time: {:.1} s", record.timings.total_seconds);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess {
            wav,
            out,
            config,
            clip_seconds,
        } => {
            let signal = load_wav(&wav).with_context(|| format!("reading {}", wav.display()))?;
            let base = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            let seconds = clip_seconds.unwrap_or_else(|| signal.duration_seconds());
            let frontend = Frontend::new(base.stft()?, base.dsp.n_mels, signal.sample_rate(), seconds)?;
            let image = frontend.process(&signal)?;
            write_atomic(&out, &matrix_csv(image.values()))?;
            let (frames, mels) = image.shape();
            println!("{}: {frames} frames x {mels} mel bands", out.display());
        }
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config)?;
            let output = experiment::run_config(&config)?;
            print_record(&output.record);
            println!("results in {}", config.output_path().display());
        }
        Command::Sweep { config } => {
            let config = ExperimentConfig::load(&config)?;
            let entries = experiment::run_sweep(&config)?;
            println!("m    k  baseline  final     improvement");
            for e in &entries {
                let p = e.record.primary_metric.as_str();
                let (b, f) = (e.record.baseline_test[p], e.record.final_test[p]);
                println!("{:<4} {:<2} {b:.4}    {f:.4}    {:+.4}", e.m, e.k, f - b);
            }
            println!("results in {}", config.output_path().display());
        }
        Command::Evaluate {
            predictions,
            truth,
            metric,
            task,
        } => {
            let metric = match metric {
                MetricArg::Accuracy => Metric::Accuracy,
                MetricArg::Uar => Metric::Uar,
                MetricArg::Lrap => Metric::Lrap,
                MetricArg::Wlrap => Metric::Wlrap,
            };
            println!("{:.6}", evaluate_files(&predictions, &truth, metric, task.into())?);
        }
        Command::Mcnemar {
            pred_a,
            pred_b,
            truth,
            task,
        } => {
            let m = mcnemar_files(&pred_a, &pred_b, &truth, task.into())?;
            println!(
                "statistic {:.6} b {} c {} significant {}",
                m.statistic, m.b, m.c, m.significant
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
