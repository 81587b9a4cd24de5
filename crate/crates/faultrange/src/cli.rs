//! The `faultrange` command line.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use faultrange_core::campaign::{Campaign, CampaignConfig};
use faultrange_core::data::{generate_shapes, Dataset, ShapesConfig};
use faultrange_core::fault::{
    faulted_copy, sample_faults, weight_bit_histogram, NeuronFaultHook, SamplingOptions, SiteSampling,
};
use faultrange_core::nn::{forward, InferenceOutcome, LayerHook, RecordingHook};
use faultrange_core::protection::extract_bounds;
use faultrange_core::rng::StreamKey;
use faultrange_core::train::{evaluate_accuracy, train_fixture, TrainConfig};
use faultrange_core::{BitIndex, FaultKind, Policy, ProtectionHook};

use crate::container::{load_dataset, load_model, save_dataset, save_model};
use crate::error::Error;
use crate::fmap::dump_fmap;
use crate::idx::load_mnist;
use crate::json::{load_bounds, load_clusters, load_plan, load_report, load_subset, write_json, EvalSubset};
use crate::parallel::{run_campaign, run_campaign_records};
use crate::report::{parse_bits, report_row, to_csv, to_table, RiskInputs};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage: invalid arguments
  3  io: a file could not be read or written
  4  format: malformed container, IDX or JSON input
  5  config: inputs that are well formed but inconsistent
  6  training: the fixture trainer diverged

Errors are printed to stderr as a single line:
  error kind=<kind> code=<code>: <message>";

#[derive(Debug, Parser)]
#[command(
    name = "faultrange",
    version,
    about = "Fault injection and range supervision for FP32 CNN classifiers",
    after_help = EXIT_CODES
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic shapes set, or convert an IDX image/label pair
    GenData(GenDataArgs),
    /// Train the LeNet-style fixture network
    TrainFixture(TrainArgs),
    /// Fault-free accuracy and the correctly classified subset
    Eval(EvalArgs),
    /// Per-protection-point activation bounds from fault-free runs
    ExtractBounds(BoundsArgs),
    /// Fraction of conv weights holding a one at each bit position
    BitHist(BitHistArgs),
    /// Print the fault plan a campaign would draw
    Plan(PlanArgs),
    /// Run a fault injection campaign
    Run(RunArgs),
    /// Summarize campaign reports as a table and CSV
    Report(ReportArgs),
    /// Write every layer output of one inference as text
    DumpFmaps(DumpArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Every sample
    All,
    /// Even per-class ordinals
    Train,
    /// Odd per-class ordinals
    Test,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Master seed [falls back to a random seed, which is printed]
    #[arg(long, env = "FAULTRANGE_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset container
    #[arg(long)]
    pub data: PathBuf,
    /// Part of the dataset to use
    #[arg(long, value_enum)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output dataset container
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Samples per class
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    /// Uniform pixel noise amplitude
    #[arg(long, default_value_t = 0.1)]
    pub noise: f32,
    /// IDX image file to convert instead of generating
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    /// IDX label file matching --idx-images
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output model container
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Passes over the training data
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// SGD learning rate
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model container
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Where to write the correct subset as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Model container
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Use only the first N samples
    #[arg(long)]
    pub limit: Option<usize>,
    /// Output bounds JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BitHistArgs {
    /// Model container
    #[arg(long)]
    pub model: PathBuf,
    /// Bit positions, `a:b` or a comma list (0 = sign, 1..8 exponent)
    #[arg(long, default_value = "0:8", value_parser = parse_bit_spec)]
    pub bits: BitSpec,
    /// CSV output [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FaultArgs {
    /// Weight faults persist for an epoch, neuron faults hit one inference
    #[arg(long, value_parser = PossibleValuesParser::new(["weight", "neuron"])
        .map(|s| s.parse::<FaultKind>().expect("listed kind")), default_value = "weight")]
    pub kind: FaultKind,
    /// Faults per plan
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Bit positions, `a:b` or a comma list (0 = sign, 1..8 exponent)
    #[arg(long, default_value = "0:8", value_parser = parse_bit_spec)]
    pub bits: BitSpec,
    /// Draw a layer uniformly before the element
    #[arg(long)]
    pub layer_uniform: bool,
    /// Let weight faults hit bias tensors too
    #[arg(long)]
    pub include_bias: bool,
}

impl FaultArgs {
    fn sampling(&self) -> SamplingOptions {
        SamplingOptions {
            sites: if self.layer_uniform {
                SiteSampling::Layer
            } else {
                SiteSampling::Element
            },
            include_bias: self.include_bias,
        }
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Model container
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub fault: FaultArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Campaign epoch the plan belongs to
    #[arg(long, default_value_t = 0)]
    pub epoch: u64,
    /// Dataset index of the image (neuron plans only)
    #[arg(long, default_value_t = 0)]
    pub image: usize,
    /// Output plan JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A parsed `--bits` value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitSpec(pub Vec<BitIndex>);

fn parse_bit_spec(s: &str) -> Result<BitSpec, String> {
    parse_bits(s).map(BitSpec)
}

fn policy_parser() -> impl TypedValueParser<Value = Policy> {
    PossibleValuesParser::new(Policy::ALL.map(Policy::name)).map(|s| s.parse::<Policy>().expect("listed policy"))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Model container
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Bounds JSON from extract-bounds
    #[arg(long)]
    pub bounds: PathBuf,
    /// Correct subset from `eval` [default: evaluate now]
    #[arg(long)]
    pub subset: Option<PathBuf>,
    /// Restriction applied at every protection point
    #[arg(long, value_parser = policy_parser())]
    pub policy: Policy,
    #[command(flatten)]
    pub fault: FaultArgs,
    /// Fault epochs; a weight epoch applies one plan to every image [default: 100 weight, 20 neuron]
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Worker threads [default: available cores]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run this single plan instead of sampling
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Also write every run as JSON lines
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Output report JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Campaign report JSON files
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Write one CSV row per report here
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Class to cluster assignment for severity analysis
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Failure probability of the fault type in the risk score
    #[arg(long, default_value_t = 1.0)]
    pub p_failure: f64,
    /// Severity weight in the risk score
    #[arg(long, default_value_t = 1.0)]
    pub severity: f64,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// Model container
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Dataset index (after --split) of the image
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Protection bounds; required unless the policy is none
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    /// Restriction applied at every protection point
    #[arg(long, value_parser = policy_parser(), default_value = "none")]
    pub policy: Policy,
    /// Apply this fault plan
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Directory for the layer{i}_ch{c}.txt files
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Io,
    Format,
    Config,
    Training,
}

impl ErrorKind {
    pub fn code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Io => 3,
            ErrorKind::Format => 4,
            ErrorKind::Config => 5,
            ErrorKind::Training => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Io => "io",
            ErrorKind::Format => "format",
            ErrorKind::Config => "config",
            ErrorKind::Training => "training",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error kind={} code={}: {one_line}", self.kind.name(), self.kind.code())
    }
}

impl From<faultrange_core::Error> for CliError {
    fn from(e: faultrange_core::Error) -> Self {
        let kind = match e {
            faultrange_core::Error::Diverged { .. } => ErrorKind::Training,
            _ => ErrorKind::Config,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(c) => c.into(),
            Error::Io { .. } => CliError {
                kind: ErrorKind::Io,
                message: e.to_string(),
            },
            _ => CliError {
                kind: ErrorKind::Format,
                message: e.to_string(),
            },
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn seed_or_random(arg: &SeedArg) -> u64 {
    arg.seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("using random seed {s}");
        s
    })
}

fn load_split(args: &DataArgs, default: Split) -> CliResult<Dataset> {
    let ds = load_dataset(&args.data)?;
    Ok(match args.split.unwrap_or(default) {
        Split::All => ds,
        Split::Train => ds.parity_split().0,
        Split::Test => ds.parity_split().1,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn gen_data(a: &GenDataArgs) -> CliResult {
    let ds = match (&a.idx_images, &a.idx_labels) {
        (Some(images), Some(labels)) => load_mnist(images, labels)?,
        _ => generate_shapes(&ShapesConfig {
            seed: seed_or_random(&a.seed),
            per_class: a.per_class,
            noise: a.noise,
        })?,
    };
    save_dataset(&ds, &a.out)?;
    println!("{}: {} images, {} classes", ds.id, ds.len(), ds.num_classes());
    Ok(())
}

fn train(a: &TrainArgs) -> CliResult {
    let ds = load_dataset(&a.data.data)?;
    let (train, test) = match a.data.split.unwrap_or(Split::Train) {
        Split::All => (ds, None),
        Split::Train => {
            let (tr, te) = ds.parity_split();
            (tr, Some(te))
        }
        Split::Test => (ds.parity_split().1, None),
    };
    let cfg = TrainConfig {
        seed: seed_or_random(&a.seed),
        epochs: a.epochs,
        lr: a.lr,
    };
    let (model, report) = train_fixture(&train, test.as_ref(), &cfg)?;
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {i} loss {loss}");
    }
    println!("train accuracy {:.4}", report.train_accuracy);
    if let Some(acc) = report.test_accuracy {
        println!("test accuracy {acc:.4}");
    }
    save_model(&model, &a.out)?;
    Ok(())
}

fn eval(a: &EvalArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let ds = load_split(&a.data, Split::Test)?;
    let acc = evaluate_accuracy(&model, &ds)?;
    println!("{}: {}/{} correct, accuracy {:.4}", ds.id, acc.correct(), acc.total, acc.accuracy());
    if let Some(out) = &a.out {
        let subset = EvalSubset {
            dataset_id: ds.id.clone(),
            total: acc.total,
            correct: acc.correct(),
            accuracy: acc.accuracy(),
            correct_indices: acc.correct_indices,
        };
        write_json(&subset, out)?;
    }
    Ok(())
}

fn bounds(a: &BoundsArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let ds = load_split(&a.data, Split::Train)?;
    let n = a.limit.unwrap_or(ds.len()).min(ds.len());
    let profile = extract_bounds(&model, &ds.images[..n], &ds.id)?;
    for e in &profile.entries {
        println!("layer {} [{}, {}]", e.protection_point, e.t_low, e.t_up);
    }
    write_json(&profile, &a.out)?;
    Ok(())
}

fn bit_hist(a: &BitHistArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let hist = weight_bit_histogram(&model, &a.bits.0)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bit", "fraction_one"]).expect("in-memory csv");
    for (bit, frac) in hist {
        w.write_record([bit.position().to_string(), frac.to_string()])
            .expect("in-memory csv");
    }
    let bytes = w.into_inner().expect("in-memory csv");
    match &a.out {
        Some(p) => write_file(p, &bytes),
        None => {
            std::io::stdout().write_all(&bytes).ok();
            Ok(())
        }
    }
}

fn plan(a: &PlanArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let cfg = CampaignConfig {
        policy: Policy::None,
        kind: a.fault.kind,
        k: a.fault.k,
        bits: a.fault.bits.0.clone(),
        epochs: 1,
        master_seed: seed_or_random(&a.seed),
        sampling: a.fault.sampling(),
    };
    let key: StreamKey = cfg.plan_key(a.epoch, a.image);
    let plan = sample_faults(&model, cfg.kind, cfg.k, &cfg.bits, key, cfg.sampling)?;
    match &a.out {
        Some(p) => write_json(&plan, p)?,
        None => print!("{}", String::from_utf8(crate::json::to_json(&plan)).expect("utf8 json")),
    }
    Ok(())
}

fn run(a: &RunArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let ds = load_split(&a.data, Split::Test)?;
    let profile = load_bounds(&a.bounds)?;
    let subset = match &a.subset {
        Some(p) => {
            let s = load_subset(p)?;
            if s.dataset_id != ds.id {
                return Err(faultrange_core::Error::Config(format!(
                    "subset was computed on {:?}, dataset is {:?}",
                    s.dataset_id, ds.id
                ))
                .into());
            }
            s.correct_indices
        }
        None => evaluate_accuracy(&model, &ds)?.correct_indices,
    };
    let replay = a.replay.as_deref().map(load_plan).transpose()?;
    let mut cfg = CampaignConfig {
        policy: a.policy,
        kind: a.fault.kind,
        k: a.fault.k,
        bits: a.fault.bits.0.clone(),
        epochs: a.epochs.unwrap_or(match a.fault.kind {
            FaultKind::Weight => 100,
            FaultKind::Neuron => 20,
        }),
        master_seed: 0,
        sampling: a.fault.sampling(),
    };
    if let Some(p) = &replay {
        p.validate(&model)?;
        cfg.kind = p.kind;
        cfg.k = p.specs.len();
        let mut bits: Vec<BitIndex> = p.bits().collect();
        bits.sort();
        bits.dedup();
        cfg.bits = bits;
        cfg.epochs = 1;
        cfg.master_seed = p.provenance.master_seed;
    } else {
        cfg.master_seed = seed_or_random(&a.seed);
    }
    let campaign = Campaign::new(&model, &profile, &ds, subset, cfg)?;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let (report, records) = match &replay {
        Some(p) => {
            let records = campaign.run_plan(p.provenance.epoch, p)?;
            (campaign.report(campaign.count(&records)), Some(records))
        }
        None if a.records.is_some() => {
            let (r, rec) = run_campaign_records(&campaign, workers)?;
            (r, Some(rec))
        }
        None => (run_campaign(&campaign, workers)?, None),
    };
    if let (Some(path), Some(records)) = (&a.records, records) {
        let mut text = String::new();
        for r in &records {
            text.push_str(&serde_json::to_string(r).expect("record serializes"));
            text.push('\n');
        }
        write_file(path, text.as_bytes())?;
    }
    write_json(&report, &a.out)?;
    print!("{}", to_table(&[report_row(&report, None, RiskInputs::default())?]));
    Ok(())
}

fn report(a: &ReportArgs) -> CliResult {
    let clusters = a.clusters.as_deref().map(load_clusters).transpose()?;
    let risk_in = RiskInputs {
        p_failure: a.p_failure,
        severity: a.severity,
    };
    let rows = a
        .reports
        .iter()
        .map(|p| Ok(report_row(&load_report(p)?, clusters.as_ref(), risk_in)?))
        .collect::<CliResult<Vec<_>>>()?;
    print!("{}", to_table(&rows));
    if let Some(path) = &a.csv {
        write_file(path, to_csv(&rows).as_bytes())?;
    }
    Ok(())
}

fn dump(a: &DumpArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let ds = load_split(&a.data, Split::Test)?;
    let input = ds.images.get(a.index).ok_or_else(|| {
        faultrange_core::Error::Config(format!("index {} outside {} samples", a.index, ds.len()))
    })?;
    let plan = a.replay.as_deref().map(load_plan).transpose()?;
    if let Some(p) = &plan {
        p.validate(&model)?;
    }
    let faulted;
    let target = match &plan {
        Some(p) if p.kind == FaultKind::Weight => {
            faulted = faulted_copy(&model, p)?;
            &faulted
        }
        _ => &model,
    };
    let mut neuron = match &plan {
        Some(p) if p.kind == FaultKind::Neuron => Some(NeuronFaultHook::new(&model, p)?),
        _ => None,
    };
    let mut protection = match (a.policy, &a.bounds) {
        (Policy::None, None) => None,
        (policy, Some(b)) => Some(ProtectionHook::new(&model, &load_bounds(b)?, policy)?),
        (policy, None) => {
            return Err(CliError::usage(format!("policy {policy} needs --bounds")));
        }
    };
    let mut recorder = RecordingHook::default();
    let mut hooks: Vec<&mut dyn LayerHook> = Vec::new();
    if let Some(n) = neuron.as_mut() {
        hooks.push(n);
    }
    if let Some(p) = protection.as_mut() {
        hooks.push(p);
    }
    hooks.push(&mut recorder);
    let outcome = forward(target, input, &mut hooks)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mut files = 0;
    for (layer, t) in &recorder.outputs {
        files += dump_fmap(&a.out_dir, *layer, t)?.len();
    }
    println!("wrote {files} files to {}", a.out_dir.display());
    if let InferenceOutcome::Due { layer, index, kind } = outcome {
        println!("non-finite {kind:?} at layer {layer} element {index}");
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainFixture(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::ExtractBounds(a) => bounds(a),
        Command::BitHist(a) => bit_hist(a),
        Command::Plan(a) => plan(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::DumpFmaps(a) => dump(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first));
            return ErrorKind::Usage.code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.kind.code()
        }
    }
}
