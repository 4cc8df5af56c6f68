use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "styleshift", version, about = "Attribute-controlled text rewriting by controlled denoising")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic template corpus (train.jsonl, test.jsonl).
    GenCorpus(GenCorpusArgs),
    /// Write controlled-denoising training pairs as JSON Lines.
    BuildData(BuildDataArgs),
    /// Train the backend and evaluators into a model directory.
    Train(TrainArgs),
    /// Rewrite one sentence or a JSON Lines batch.
    Transfer(TransferArgs),
    /// Score transfer outputs.
    Eval(EvalArgs),
    /// Distill a teacher model directory into a single-pass student.
    Distill(DistillArgs),
    /// Run the ablation grid and write results.csv and summary.csv.
    Experiment(ExperimentArgs),
    /// Run protocol conformance checks against an external backend.
    BridgeCheck(BridgeCheckArgs),
}

/// Overrides for experiment config keys.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// JSON config file.
    #[arg(long, env = "STYLESHIFT_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Label names in order, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// count or neural.
    #[arg(long)]
    pub backend: Option<String>,
    /// hard or soft.
    #[arg(long)]
    pub mask_mode: Option<String>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    pub span_mean: Option<f64>,
    #[arg(long)]
    pub blend: Option<f64>,
    #[arg(long)]
    pub variants_per_example: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Conditions such as TEACHER,NO_CONTROL,STUDENT_K1.
    #[arg(long, value_delimiter = ',')]
    pub conditions: Option<Vec<String>>,
    /// Classifier probability a candidate needs to pass the filter.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// best_prob or copy_source.
    #[arg(long)]
    pub fallback: Option<String>,
    #[arg(long)]
    pub similarity_floor: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lm_k: Option<f64>,
    #[arg(long)]
    pub teacher_k: Option<usize>,
    /// corpus or per_example.
    #[arg(long)]
    pub g_mode: Option<String>,
    /// vs_reference or vs_source.
    #[arg(long)]
    pub semantic_mode: Option<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// JSON corpus spec (templates, lexicons, counts, seed).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_per_template_label: Option<usize>,
    #[arg(long)]
    pub test_per_label: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BuildDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub model_dir: PathBuf,
    /// Pairs written by build-data; built from the corpus when absent.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["text", "input"]))]
pub struct TransferArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub model_dir: PathBuf,
    /// Sentence to rewrite.
    #[arg(long, requires = "target")]
    pub text: Option<String>,
    /// Target label for --text.
    #[arg(long)]
    pub target: Option<String>,
    /// JSON Lines test set (source, reference, target_label).
    #[arg(long, requires = "output")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Masked variants per input.
    #[arg(long, short = 'k', default_value_t = 32)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub model_dir: PathBuf,
    /// JSON Lines with source, output, reference, target_label.
    #[arg(long)]
    pub input: PathBuf,
    /// Writes report.json and rows.csv here.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Teacher model directory.
    #[arg(long)]
    pub model_dir: PathBuf,
    /// Student model directory.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct BridgeCheckArgs {
    /// Label names the backend serves, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "positive,negative")]
    pub labels: Vec<String>,
    /// Seconds to wait for any single reply.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    /// Backend command and its arguments.
    #[arg(required = true, last = true)]
    pub command: Vec<String>,
}
