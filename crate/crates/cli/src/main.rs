use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mmerc::dataio::{load_corpus, synth_corpus, write_corpus, CorpusMeta, SynthSpec};
use mmerc::graph::{export_graph, ExportFormat, GraphSpec, MultimodalGraph};
use mmerc::harness::{
    ablate, parse_variants, run_training, write_confusion_csv, Checkpoint, RunConfig,
};
use mmerc::modality::parse_modalities;

#[derive(Parser)]
#[command(
    name = "mmerc",
    version,
    about = "Multimodal emotion recognition in conversation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log and metrics to a directory.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Print metrics as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write a planted-signal synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of conversations.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Class-block shift.
        #[arg(long, default_value_t = 3.0)]
        mu: f64,
        #[arg(long, value_enum, default_value_t = LabelSet::Six)]
        labels: LabelSet,
        #[arg(long, default_value_t = 4)]
        min_len: usize,
        #[arg(long, default_value_t = 8)]
        max_len: usize,
    },
    /// Graph utilities.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Train and evaluate a list of ablation variants on one split.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variants, e.g. `full,no_rtgcn,no_pcm,modalities=t`.
        #[arg(long)]
        flags: String,
        #[arg(long)]
        json: bool,
    },
    /// Reports derived from a checkpoint.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Write the multimodal graph of an N-utterance conversation.
    Export {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        past: usize,
        #[arg(long)]
        future: usize,
        #[arg(long, value_enum, default_value_t = Format::Edgelist)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "avt")]
        modalities: String,
        #[arg(long)]
        no_rmulti: bool,
        #[arg(long)]
        no_rtemp: bool,
        #[arg(long)]
        strict_window: bool,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Write the confusion matrix as CSV.
    Confusion {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> mmerc::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(e) = self.epochs {
            overrides.push(format!("epochs={e}"));
        }
        base.with_overrides(&overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Edgelist,
    Dot,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelSet {
    #[value(name = "4")]
    Four,
    #[value(name = "6")]
    Six,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> mmerc::Result<()> {
    match command {
        Command::Train {
            run,
            data,
            out,
            quiet,
        } => {
            let cfg = run.resolve()?;
            let corpus = load_corpus(&data)?;
            let (outcome, report) = run_training(&cfg, &corpus, &out, |e| {
                if !quiet {
                    eprintln!(
                        "epoch {:>4}  loss {:.5}  train acc {:.4} w-F1 {:.4}{}",
                        e.epoch,
                        e.train_loss,
                        e.train_accuracy,
                        e.train_weighted_f1,
                        match (e.valid_accuracy, e.valid_weighted_f1) {
                            (Some(a), Some(f)) => format!("  valid acc {a:.4} w-F1 {f:.4}"),
                            _ => String::new(),
                        }
                    );
                }
            })?;
            println!(
                "best epoch {}; held-out accuracy {:.4}, w-F1 {:.4}; wrote {}",
                outcome.best.epoch,
                report.accuracy,
                report.weighted_f1,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            json,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let report = ckpt.evaluate(&load_corpus(&data)?)?.report;
            if json {
                println!("{}", report.to_json());
            } else {
                println!("utterances   {}", report.total());
                println!("accuracy     {:.4}", report.accuracy);
                println!("weighted F1  {:.4}", report.weighted_f1);
                for (k, f1) in report.per_class_f1.iter().enumerate() {
                    let name = ckpt.meta.label_names.get(k).map_or("?", String::as_str);
                    println!("  F1 {name:<12} {f1:.4}");
                }
            }
        }
        Command::Synth {
            out,
            n,
            seed,
            mu,
            labels,
            min_len,
            max_len,
        } => {
            let meta = match labels {
                LabelSet::Four => CorpusMeta::iemocap4(),
                LabelSet::Six => CorpusMeta::iemocap6(),
            };
            let spec = SynthSpec {
                mu,
                min_len,
                max_len,
                ..SynthSpec::new(meta, n, seed)
            };
            let corpus = synth_corpus(&spec)?;
            write_corpus(&out, &corpus)?;
            println!(
                "wrote {} conversations ({} utterances) to {}",
                corpus.conversations.len(),
                corpus.utterance_count(),
                out.display()
            );
        }
        Command::Graph {
            command:
                GraphCommand::Export {
                    n,
                    past,
                    future,
                    format,
                    out,
                    modalities,
                    no_rmulti,
                    no_rtemp,
                    strict_window,
                },
        } => {
            let spec = GraphSpec {
                multimodal: !no_rmulti,
                temporal: !no_rtemp,
                strict_window,
                modalities: parse_modalities(&modalities)?,
                ..GraphSpec::full(past, future)
            };
            let graph = MultimodalGraph::build_with(n, &spec)?;
            let format = match format {
                Format::Edgelist => ExportFormat::Edgelist,
                Format::Dot => ExportFormat::Dot,
            };
            export_graph(&graph, &out, format)?;
            eprintln!("{} nodes, {} edges", graph.node_count(), graph.edges.len());
        }
        Command::Ablate {
            run,
            data,
            flags,
            json,
        } => {
            let cfg = run.resolve()?;
            let variants = parse_variants(&flags)?;
            let report = ablate(&cfg, &load_corpus(&data)?, &variants)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Report {
            command:
                ReportCommand::Confusion {
                    checkpoint,
                    data,
                    out,
                },
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let report = ckpt.evaluate(&load_corpus(&data)?)?.report;
            write_confusion_csv(&out, &report, &ckpt.meta.label_names)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}
