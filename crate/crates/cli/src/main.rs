//! `kgalign`: synthetic data, training, evaluation, dataset statistics and
//! theory checks for label-free knowledge graph alignment.
//!
//! Exit codes: 0 success, 1 a theory check failed, 2 any error.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgalign_core::eval::{evaluate, rank_dump, LinkProbe};
use kgalign_core::kg::neighbor_similarity_of_pairs;
use kgalign_core::synth::write_dataset;
use kgalign_core::theory::{check_proposition1, check_theorem2_decay, check_theorem3_gap};
use kgalign_core::trainer::metrics_tsv;
use kgalign_core::{Dataset, EncoderParams, MetricRow, OracleReport, Split, TrainState, Trainer};

use config::Settings;

const CONFIG_ECHO: &str = "config.txt";
const CHECKPOINT: &str = "checkpoint.bin";
const ENCODER: &str = "encoder.bin";
const METRICS: &str = "metrics.tsv";

#[derive(Parser)]
#[command(name = "kgalign", version, about = "Label-free entity alignment between two knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train an encoder; writes checkpoint, best encoder and metrics log.
    Train {
        #[command(flatten)]
        data: DataArg,
        /// Continue from the checkpoint already in the output directory.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score an encoder on one split; writes Hit@k and per-pair ranks.
    Eval {
        #[command(flatten)]
        data: DataArg,
        /// Encoder file from `train`; defaults to the untrained encoder for the seed.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[command(flatten)]
        common: Common,
    },
    /// Graph sizes and neighbor similarity of the aligned pairs.
    Stats {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo checks of the loss bounds; exits 1 if any check fails.
    Theory {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl SplitArg {
    fn split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Dev => "dev",
            SplitArg::Test => "test",
        }
    }
}

/// Flags shared by every subcommand. Values stay strings so that every bad
/// value is reported together with config file problems.
#[derive(Args)]
struct Common {
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    #[arg(long, value_name = "on|off")]
    self_negatives: Option<String>,
    #[arg(long, value_name = "on|off")]
    relation_mode: Option<String>,
    /// Extra Hit@k cutoff reported next to 1 and 10.
    #[arg(long, allow_hyphen_values = true)]
    k: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    queue_k: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    batch_size: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    momentum: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lr: Option<String>,
    #[arg(long, value_name = "x2y|y2x")]
    direction: Option<String>,
    #[arg(long, value_name = "test|full")]
    candidates: Option<String>,
}

impl Common {
    fn resolve(&self, errors: &mut Vec<String>) -> Settings {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path, errors);
        }
        let flags = [
            ("seed", &self.seed),
            ("self_negatives", &self.self_negatives),
            ("relation_mode", &self.relation_mode),
            ("k", &self.k),
            ("queue_k", &self.queue_k),
            ("batch_size", &self.batch_size),
            ("tau", &self.tau),
            ("momentum", &self.momentum),
            ("lr", &self.lr),
            ("direction", &self.direction),
            ("candidates", &self.candidates),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                if let Err(e) = s.set(key, v) {
                    errors.push(format!("flag {e}"));
                }
            }
        }
        s
    }
}

/// Configuration problems, all reported before exiting.
struct ConfigErrors(Vec<String>);

fn check(errors: Vec<String>) -> Result<()> {
    if errors.is_empty() {
        Ok(())
    } else {
        Err(ConfigErrors(errors).into())
    }
}

impl std::fmt::Debug for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Display::fmt(self, f)
    }
}

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} configuration error(s)", self.0.len())
    }
}

impl std::error::Error for ConfigErrors {}

/// The error chain, skipping causes whose text the message already contains.
fn render(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn prepare_out(dir: &Path, settings: &Settings) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(CONFIG_ECHO);
    fs::write(&path, settings.to_text()).with_context(|| format!("writing {}", path.display()))
}

fn load(data: &Path, settings: &Settings) -> Result<Dataset> {
    let opts = kgalign_core::LoadOptions {
        relations: settings.train.relation_mode,
        ..settings.load.clone()
    };
    Dataset::load(data, &opts).with_context(|| format!("loading dataset {}", data.display()))
}

fn synth(common: &Common) -> Result<ExitCode> {
    let mut errors = Vec::new();
    let s = common.resolve(&mut errors);
    if let Err(e) = s.synth.validate() {
        errors.push(e.to_string());
    }
    check(errors)?;
    prepare_out(&common.out, &s)?;
    let data = write_dataset(&s.synth, &common.out)?;
    println!(
        "wrote {} entities per graph, {} train / {} test links to {}",
        data.names_x.len(),
        data.train.len(),
        data.test.len(),
        common.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train(data: &Path, resume: bool, common: &Common) -> Result<ExitCode> {
    let mut errors = Vec::new();
    let s = common.resolve(&mut errors);
    let ds = match load(data, &s) {
        Ok(ds) => ds,
        Err(e) => {
            errors.push(render(&e));
            return check(errors).map(|_| ExitCode::FAILURE);
        }
    };
    let (ex, ey) = (ds.gx.num_entities(), ds.gy.num_entities());
    errors.extend(s.train.problems(ex, ey).iter().map(ToString::to_string));
    check(errors)?;
    prepare_out(&common.out, &s)?;

    let (vx, vy) = ds.views(s.train.relation_mode)?;
    let checkpoint = common.out.join(CHECKPOINT);
    let metrics_path = common.out.join(METRICS);
    let mut trainer = if resume {
        let state = TrainState::load(&checkpoint)?;
        Trainer::resume(s.train.clone(), vx, vy, state)?
    } else {
        fs::write(&metrics_path, metrics_tsv(&[]))?;
        Trainer::new(s.train.clone(), vx, vy)?
    };
    let mut log = BufWriter::new(
        File::options()
            .append(true)
            .create(true)
            .open(&metrics_path)
            .with_context(|| format!("opening {}", metrics_path.display()))?,
    );
    let mut log_error = None;
    let mut sink = |row: &MetricRow| {
        eprintln!(
            "epoch {:>3}  step {:>6}  loss {:.6}  dev hit@1 {:.4}  hit@10 {:.4}",
            row.epoch, row.step, row.loss, row.dev_hit1, row.dev_hit10
        );
        if let Err(e) = writeln!(log, "{}", row.to_tsv()).and_then(|_| log.flush()) {
            log_error.get_or_insert(e);
        }
        Ok(())
    };
    let mut probe = LinkProbe::new(vx, vy, ds.links.pairs(Split::Dev), s.eval);
    trainer.train(&mut probe, &mut sink)?;
    if let Some(e) = log_error {
        return Err(e).context(format!("writing {}", metrics_path.display()));
    }
    let state = trainer.into_state();
    state.save(&checkpoint)?;
    state.best_params().save(&common.out.join(ENCODER))?;
    println!(
        "trained {} epochs ({} optimizer steps); checkpoint and encoder in {}",
        state.epoch,
        state.optimizer_steps,
        common.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval(data: &Path, encoder: Option<&Path>, split: SplitArg, common: &Common) -> Result<ExitCode> {
    let mut errors = Vec::new();
    let s = common.resolve(&mut errors);
    if s.k == Some(0) {
        errors.push("--k: must be at least 1".into());
    }
    check(errors)?;
    let ds = load(data, &s)?;
    let (vx, vy) = ds.views(s.train.relation_mode)?;
    let params = match encoder {
        Some(path) => EncoderParams::load(path)?,
        None => TrainState::new(&s.train, vx.dim())?.pair.online,
    };
    if params.dim() != vx.dim() {
        bail!("encoder dim {} does not match embedding dim {}", params.dim(), vx.dim());
    }
    prepare_out(&common.out, &s)?;
    let pairs = ds.links.pairs(split.split());
    let report = evaluate(&params, &vx, &vy, &pairs, s.eval, split.name())?;
    let extra: Vec<usize> = s.k.into_iter().collect();
    report.write_tsv(&common.out.join(format!("eval_{}.tsv", split.name())), &extra)?;
    let ranks = common.out.join(format!("ranks_{}.tsv", split.name()));
    fs::write(&ranks, rank_dump(&report, &vx, &vy, &pairs))?;
    print!("{}", report.to_tsv(&extra));
    Ok(ExitCode::SUCCESS)
}

fn stats(data: &Path, common: &Common) -> Result<ExitCode> {
    let mut errors = Vec::new();
    let s = common.resolve(&mut errors);
    check(errors)?;
    let ds = load(data, &s)?;
    prepare_out(&common.out, &s)?;
    let mut graphs = String::from("graph\tentities\trelations\ttriples\n");
    for (name, g) in [("x", &ds.gx), ("y", &ds.gy)] {
        graphs += &format!("{name}\t{}\t{}\t{}\n", g.num_entities(), g.num_relations(), g.triples().len());
    }
    let mut sim = String::from("split\tpairs\tneighbor_similarity\n");
    let splits = [
        ("train", ds.links.pairs(Split::Train)),
        ("dev", ds.links.pairs(Split::Dev)),
        ("test", ds.links.pairs(Split::Test)),
        ("all", ds.links.all_pairs()),
    ];
    for (name, pairs) in splits {
        if pairs.is_empty() {
            continue;
        }
        let v = neighbor_similarity_of_pairs(&ds.gx, &ds.gy, &pairs)?;
        sim += &format!("{name}\t{}\t{v}\n", pairs.len());
    }
    fs::write(common.out.join("graphs.tsv"), &graphs)?;
    fs::write(common.out.join("stats.tsv"), &sim)?;
    print!("{graphs}{sim}");
    Ok(ExitCode::SUCCESS)
}

fn theory(common: &Common) -> Result<ExitCode> {
    let mut errors = Vec::new();
    let s = common.resolve(&mut errors);
    if let Err(e) = s.oracle.validate() {
        errors.push(e.to_string());
    }
    check(errors)?;
    prepare_out(&common.out, &s)?;
    type Check = fn(&kgalign_core::OracleConfig) -> kgalign_core::Result<OracleReport>;
    let checks: [Check; 3] = [check_proposition1, check_theorem2_decay, check_theorem3_gap];
    let mut all = true;
    for run in checks {
        let report = run(&s.oracle)?;
        report.write_tsv(&common.out.join(format!("{}.tsv", report.check)))?;
        let summary: Vec<String> = report.summary.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
        println!(
            "{} {} {}",
            report.check,
            if report.passed { "PASS" } else { "FAIL" },
            summary.join(" ")
        );
        all &= report.passed;
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Synth { common } => synth(common),
        Command::Train { data, resume, common } => train(&data.data, *resume, common),
        Command::Eval {
            data,
            encoder,
            split,
            common,
        } => eval(&data.data, encoder.as_deref(), *split, common),
        Command::Stats { data, common } => stats(&data.data, common),
        Command::Theory { common } => theory(common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            match e.downcast_ref::<ConfigErrors>() {
                Some(ConfigErrors(list)) => {
                    for msg in list {
                        eprintln!("error: {msg}");
                    }
                }
                None => eprintln!("error: {}", render(&e)),
            }
            ExitCode::from(2)
        }
    }
}
