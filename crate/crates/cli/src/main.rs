use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cane::data::{self, class_centers, parse_feature_line, DataError, Dataset};
use cane::persist::{self, MetricRecord, PersistError};
use cane::search::{evaluate, predict_top_j};
use cane::statlab::{self, StatError};
use cane::label_tree::TreeError;
use cane::trainer::{self, SamplerKind, TrainConfig, TrainError};
use cane::LabelTree;

mod verify;

#[derive(Parser)]
#[command(name = "cane", version, about = "Candidates-vs-noises training over a label tree")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster class centers into a balanced b-ary label tree.
    BuildTree {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        branching: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train edge parameters with beam-selected candidates.
    Train(TrainArgs),
    /// Report top-1..top-J accuracy and coverage as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Print the top-J dense class ids for each feature line.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        top: usize,
    },
    /// Shuffle a LIBSVM file into train and test parts.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Run a numerical check; exits with status 2 when it fails.
    #[command(subcommand)]
    Verify(verify::Check),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 5)]
    candidates: usize,
    #[arg(long, default_value_t = 5)]
    noises: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Scale the learning rate by 1/sqrt(1 + t) after t updates.
    #[arg(long)]
    lr_decay: bool,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, value_enum, default_value_t = Sampler::Uniform)]
    sampler: Sampler,
    /// Unigram exponent; only used with `--sampler unigram`.
    #[arg(long, default_value_t = 0.75)]
    power: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Held-out LIBSVM file for per-epoch accuracy and coverage.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampler {
    Uniform,
    Unigram,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Verification(String),
    Io(String),
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<PersistError> for Failure {
    fn from(e: PersistError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<TreeError> for Failure {
    fn from(e: TreeError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => Failure::Io(d.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<StatError> for Failure {
    fn from(e: StatError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (1, m),
                Failure::Verification(m) => (2, m),
                Failure::Io(m) => (3, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::BuildTree { input, branching, seed, output } => {
            let ds = data::load_libsvm(&input)?;
            let centers = class_centers(&ds)?;
            let tree = LabelTree::build_clustering(&centers, branching, seed)?;
            persist::save_tree(&output, &tree)?;
            Ok(())
        }
        Command::Train(args) => train(args),
        Command::Eval { model, data, top } => {
            let (model, _) = persist::load_model(&model)?;
            let ds = data::load_libsvm_with_dictionary(&data, &model.labels, model.num_features)?;
            let report = evaluate(&model, &ds, top);
            println!("{}", serde_json::to_string(&report).expect("serializable"));
            Ok(())
        }
        Command::Predict { model, input, top } => {
            let (model, _) = persist::load_model(&model)?;
            let reader = BufReader::new(File::open(&input)?);
            let stdout = io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            for (i, line) in reader.lines().enumerate() {
                let x = parse_feature_line(i + 1, &line?)?;
                let ids = predict_top_j(&model, &x, top);
                let text: Vec<String> = ids.iter().map(|c| c.to_string()).collect();
                writeln!(out, "{}", text.join(" "))?;
            }
            out.flush()?;
            Ok(())
        }
        Command::Split { input, train_fraction, seed, train_out, test_out } => {
            let ds = data::load_libsvm(&input)?;
            let (train, test) = data::split(&ds, train_fraction, seed)?;
            write_dataset(&train, &train_out)?;
            write_dataset(&test, &test_out)?;
            Ok(())
        }
        Command::Verify(check) => verify::run(check),
    }
}

fn write_dataset(ds: &Dataset, path: &PathBuf) -> Result<(), Failure> {
    let mut out = BufWriter::new(File::create(path)?);
    ds.write_libsvm(&mut out)?;
    out.flush()?;
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let ds = data::load_libsvm(&args.data)?;
    let tree = persist::load_tree(&args.tree)?;
    let sampler = match args.sampler {
        Sampler::Uniform => SamplerKind::Uniform,
        Sampler::Unigram => SamplerKind::Unigram { power: args.power },
    };
    let config = TrainConfig {
        candidates: args.candidates,
        noises: args.noises,
        learning_rate: args.lr,
        epochs: args.epochs,
        branching: tree.branching(),
        sampler,
        seed: args.seed,
        eval_every: args.eval_every,
        lr_decay: args.lr_decay,
    };
    let eval = match &args.eval_data {
        Some(p) => Some(data::load_libsvm_with_dictionary(p, ds.label_dictionary(), ds.num_features())?),
        None => None,
    };
    let mut metrics = match &args.metrics_out {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut write_error: Option<PersistError> = None;
    let (model, _) = trainer::train_beam_tree_with(&ds, tree, &config, |report, model| {
        let Some(out) = metrics.as_mut() else { return };
        let (top1, coverage) = match &eval {
            Some(test) => (
                Some(evaluate(model, test, 1).accuracy[0]),
                Some(statlab::coverage_probability(model, test, config.candidates)),
            ),
            None => (None, None),
        };
        let record = MetricRecord {
            epoch: report.epoch,
            examples_seen: report.examples_seen,
            sampled_objective_mean: report.sampled_objective_mean,
            test_accuracy_top1: top1,
            coverage_top_nc: coverage,
            wall_seconds: report.wall_seconds,
        };
        if let Err(e) = record.write_line(&mut *out).and_then(|()| out.flush().map_err(Into::into)) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    persist::save_model(&args.model_out, &model, Some(&config))?;
    Ok(())
}
