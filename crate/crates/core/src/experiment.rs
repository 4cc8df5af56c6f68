//! Ablation runner: trains every component, transfers the test set for each
//! (condition, K, seed) cell, evaluates, and writes CSV reports.
//!
//! Cells are independent and fully seeded, so output does not depend on the
//! worker count or scheduling. Rows are sorted by condition (in config
//! order), then K, then seed.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    train_backend, BackendKind, BackendModel, ConstantControl, DecodeMode, GenOptions, InfillBackend,
    NeuralModel, NeuralTrainOptions, TrainOptions,
};
use crate::classifier::{annotate, NaiveBayes};
use crate::corpus::{label_names, read_jsonl, test_items, labeled_examples, CorpusLine, TestItem, TestLine};
use crate::embedder::TfIdf;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalRecord, EvalReport, GMode, NgramLm, SemanticMode};
use crate::noising::{MaskMode, MaskSpec};
use crate::pipeline::{
    build_denoising_data, build_student_data, student_pairs, transfer, Components, ControlSource,
    SelectionPolicy, StudentDataOptions, TransferRequest,
};
use crate::rng;
use crate::text::{build_vocab, LabelSet, LabeledExample, Vocab};

/// One ablation arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Condition {
    /// Hard span masking.
    Hard,
    /// Soft masking (neural backend only).
    Soft,
    /// One constant control label at training and inference.
    NoControl,
    /// The configured mask mode.
    Teacher,
    /// Student distilled from the teacher, decoded with this many samples.
    Student(usize),
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Hard => f.write_str("HARD"),
            Condition::Soft => f.write_str("SOFT"),
            Condition::NoControl => f.write_str("NO_CONTROL"),
            Condition::Teacher => f.write_str("TEACHER"),
            Condition::Student(k) => write!(f, "STUDENT_K{k}"),
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HARD" => Ok(Condition::Hard),
            "SOFT" => Ok(Condition::Soft),
            "NO_CONTROL" => Ok(Condition::NoControl),
            "TEACHER" => Ok(Condition::Teacher),
            _ => s
                .strip_prefix("STUDENT_K")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k >= 1)
                .map(Condition::Student)
                .ok_or_else(|| Error::invalid(format!("unknown condition `{s}`"))),
        }
    }
}

impl TryFrom<String> for Condition {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> String {
        c.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    /// Label names in order; taken from the training corpus when absent.
    pub labels: Option<Vec<String>>,
    pub mask: MaskSpec,
    pub backend: BackendKind,
    pub neural: NeuralTrainOptions,
    /// Training options of distilled students.
    pub student: NeuralTrainOptions,
    pub variants_per_example: usize,
    pub k_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub conditions: Vec<Condition>,
    pub policy: SelectionPolicy,
    pub temperature: f64,
    pub alpha: f64,
    pub lm_k: f64,
    pub control_source: ControlSource,
    pub g_mode: GMode,
    pub semantic_mode: SemanticMode,
    /// Teacher samples per input when building student data.
    pub teacher_k: usize,
    pub output_dir: PathBuf,
    /// Worker threads; all cores when absent.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: PathBuf::from("train.jsonl"),
            test: PathBuf::from("test.jsonl"),
            labels: None,
            mask: MaskSpec::default(),
            backend: BackendKind::Count,
            neural: NeuralTrainOptions::default(),
            student: NeuralTrainOptions::student(),
            variants_per_example: 4,
            k_values: vec![1, 8, 32],
            seeds: (0..5).collect(),
            conditions: vec![Condition::Teacher],
            policy: SelectionPolicy::default(),
            temperature: 1.0,
            alpha: 1.0,
            lm_k: 0.1,
            control_source: ControlSource::Predicted,
            g_mode: GMode::Corpus,
            semantic_mode: SemanticMode::VsReference,
            teacher_k: 32,
            output_dir: PathBuf::from("results"),
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.train, &self.test] {
            if !p.exists() {
                return Err(Error::invalid(format!("{} does not exist", p.display())));
            }
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(Error::invalid("k_values must be non-empty and positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must be non-empty"));
        }
        if self.conditions.is_empty() {
            return Err(Error::invalid("conditions must be non-empty"));
        }
        if self.variants_per_example == 0 || self.teacher_k == 0 {
            return Err(Error::invalid("variants_per_example and teacher_k must be >= 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be >= 1"));
        }
        self.mask.validate()?;
        self.policy.validate()?;
        GenOptions {
            temperature: self.temperature,
            ..GenOptions::default()
        }
        .validate()?;
        for c in &self.conditions {
            let mode = self.condition_mode(*c);
            if mode == MaskMode::Soft && self.backend == BackendKind::Count {
                return Err(Error::invalid(format!("{c} needs soft masking, which the count backend cannot use")));
            }
        }
        if self.backend == BackendKind::Bridge {
            return Err(Error::invalid("the experiment runner trains built-in backends only"));
        }
        Ok(())
    }

    fn condition_mode(&self, c: Condition) -> MaskMode {
        match c {
            Condition::Hard => MaskMode::Hard,
            Condition::Soft => MaskMode::Soft,
            _ => self.mask.mode,
        }
    }
}

/// Classifier, similarity index, and fluency model fitted on a corpus.
pub struct Evaluators {
    pub labels: LabelSet,
    pub classifier: NaiveBayes<f64>,
    pub embedder: TfIdf<f64>,
    pub lm: NgramLm<f64>,
}

impl Evaluators {
    pub fn fit(corpus: &[LabeledExample], labels: &LabelSet, alpha: f64, lm_k: f64) -> Result<Self> {
        Ok(Evaluators {
            labels: labels.clone(),
            classifier: NaiveBayes::train(corpus, labels, alpha).map_err(|e| e.at_stage("train classifier"))?,
            embedder: TfIdf::fit(corpus).map_err(|e| e.at_stage("fit embedder"))?,
            lm: NgramLm::train(corpus.iter().map(|e| &e.seq), lm_k).map_err(|e| e.at_stage("train language model"))?,
        })
    }

    pub fn components<'a>(&'a self, backend: &'a dyn InfillBackend) -> Components<'a> {
        Components {
            backend,
            classifier: &self.classifier,
            embedder: &self.embedder,
        }
    }
}

/// Transfer every test item with `samples` variants; item `j` uses request
/// seed `mix(splitmix64(seed), j)`, so smaller K sees a prefix of the
/// variants of larger K.
pub fn transfer_test_set(
    components: &Components,
    items: &[TestItem],
    samples: usize,
    mask: &MaskSpec,
    generation: &GenOptions,
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    let base = rng::splitmix64(seed);
    items
        .par_iter()
        .enumerate()
        .map(|(j, item)| {
            let req_seed = rng::mix(base, j as u64);
            let req = TransferRequest {
                source: item.source.clone(),
                source_label: None,
                target_label: item.target.clone(),
                samples,
                mask: *mask,
                generation: GenOptions {
                    seed: rng::splitmix64(req_seed),
                    ..generation.clone()
                },
                seed: req_seed,
                policy: policy.clone(),
            };
            let result = transfer(components, &req)?;
            Ok(EvalRecord {
                source: item.source.clone(),
                output: result.output,
                reference: item.reference.clone(),
                target_label: item.target.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub condition: Condition,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub semantic: f64,
    pub g: f64,
    pub s_bleu: f64,
    pub fluency: f64,
}

impl ResultRow {
    fn from_report(condition: Condition, k: usize, seed: u64, r: &EvalReport) -> Self {
        ResultRow {
            condition,
            k,
            seed,
            accuracy: r.accuracy,
            semantic: r.semantic,
            g: r.g,
            s_bleu: r.s_bleu,
            fluency: r.fluency,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: Condition,
    #[serde(rename = "K")]
    pub k: usize,
    pub runs: usize,
    pub accuracy: f64,
    pub semantic: f64,
    pub g: f64,
    pub s_bleu: f64,
    pub fluency: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    /// Mean G of one (condition, K) cell over seeds.
    pub fn mean_g(&self, condition: Condition, k: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.condition == condition && s.k == k)
            .map(|s| s.g)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let fmt = |x: f64| format!("{x:.6}");
        let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
        w.write_record(["condition", "K", "seed", "accuracy", "semantic", "g", "s_bleu", "fluency"])?;
        for r in &self.rows {
            w.write_record([
                r.condition.to_string(),
                r.k.to_string(),
                r.seed.to_string(),
                fmt(r.accuracy),
                fmt(r.semantic),
                fmt(r.g),
                fmt(r.s_bleu),
                fmt(r.fluency),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["condition", "K", "runs", "accuracy", "semantic", "g", "s_bleu", "fluency"])?;
        for s in &self.summary {
            w.write_record([
                s.condition.to_string(),
                s.k.to_string(),
                s.runs.to_string(),
                fmt(s.accuracy),
                fmt(s.semantic),
                fmt(s.g),
                fmt(s.s_bleu),
                fmt(s.fluency),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some(s) if s.condition == r.condition && s.k == r.k => {
                s.runs += 1;
                s.accuracy += r.accuracy;
                s.semantic += r.semantic;
                s.g += r.g;
                s.s_bleu += r.s_bleu;
                s.fluency += r.fluency;
            }
            _ => out.push(SummaryRow {
                condition: r.condition,
                k: r.k,
                runs: 1,
                accuracy: r.accuracy,
                semantic: r.semantic,
                g: r.g,
                s_bleu: r.s_bleu,
                fluency: r.fluency,
            }),
        }
    }
    for s in &mut out {
        let n = s.runs as f64;
        s.accuracy /= n;
        s.semantic /= n;
        s.g /= n;
        s.s_bleu /= n;
        s.fluency /= n;
    }
    out
}

/// Loaded inputs shared by every cell.
pub struct ExperimentData {
    pub labels: LabelSet,
    pub corpus: Vec<LabeledExample>,
    pub test: Vec<TestItem>,
    pub vocab: Vocab,
    pub evaluators: Evaluators,
}

impl ExperimentData {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let lines: Vec<CorpusLine> = read_jsonl(&config.train).map_err(|e| e.at_stage("read training corpus"))?;
        let names = config.labels.clone().unwrap_or_else(|| label_names(&lines));
        let labels = LabelSet::new(names).map_err(|e| e.at_stage("resolve labels"))?;
        let test_lines: Vec<TestLine> = read_jsonl(&config.test).map_err(|e| e.at_stage("read test set"))?;
        Self::from_lines(config, labels, &lines, &test_lines)
    }

    pub fn from_lines(
        config: &ExperimentConfig,
        labels: LabelSet,
        train: &[CorpusLine],
        test: &[TestLine],
    ) -> Result<Self> {
        let mut corpus = labeled_examples(train, &labels).map_err(|e| e.at_stage("read training corpus"))?;
        let test = test_items(test, &labels).map_err(|e| e.at_stage("read test set"))?;
        if test.is_empty() {
            return Err(Error::invalid("empty test set").at_stage("read test set"));
        }
        let evaluators = Evaluators::fit(&corpus, &labels, config.alpha, config.lm_k)?;
        annotate(&mut corpus, &evaluators.classifier).map_err(|e| e.at_stage("annotate corpus"))?;
        let vocab = build_vocab(&corpus, &labels).map_err(|e| e.at_stage("build vocabulary"))?;
        Ok(ExperimentData {
            labels,
            corpus,
            test,
            vocab,
            evaluators,
        })
    }
}

fn train_teacher(
    config: &ExperimentConfig,
    data: &ExperimentData,
    mode: MaskMode,
    control: &ControlSource,
    seed: u64,
) -> Result<BackendModel> {
    let spec = config.mask.with_mode(mode);
    let pairs = build_denoising_data(
        &data.corpus,
        &data.evaluators.classifier,
        &spec,
        config.variants_per_example,
        control,
        seed,
    )?;
    let options = TrainOptions {
        neural: config.neural.clone(),
    };
    train_backend(config.backend, &data.vocab, &pairs, &options, seed)
}

fn sampling(config: &ExperimentConfig) -> GenOptions {
    GenOptions {
        temperature: config.temperature,
        ..GenOptions::default()
    }
}

/// Rows of one (condition, seed) cell, one per K (one for students).
fn run_cell(config: &ExperimentConfig, data: &ExperimentData, condition: Condition, seed: u64) -> Result<Vec<ResultRow>> {
    let stage = |what: &str| format!("{what} ({condition}, seed {seed})");
    let ev = &data.evaluators;
    let evaluate_records = |records: &[EvalRecord]| {
        evaluate(records, &ev.classifier, &ev.embedder, &ev.lm, config.g_mode, config.semantic_mode)
            .map_err(|e| e.at_stage(stage("evaluate")))
    };
    let mode = config.condition_mode(condition);
    let spec = config.mask.with_mode(mode);
    let gen = sampling(config);

    let mut rows = Vec::new();
    match condition {
        Condition::Hard | Condition::Soft | Condition::Teacher | Condition::NoControl => {
            let constant = data.labels.get(0).expect("label set has >= 2 labels");
            let control = match condition {
                Condition::NoControl => ControlSource::Constant(constant.name.clone()),
                _ => config.control_source.clone(),
            };
            let model = train_teacher(config, data, mode, &control, seed).map_err(|e| e.at_stage(stage("train backend")))?;
            let fixed = ConstantControl {
                inner: &model,
                control: constant,
            };
            let backend: &dyn InfillBackend = match condition {
                Condition::NoControl => &fixed,
                _ => &model,
            };
            let components = ev.components(backend);
            for &k in &config.k_values {
                let records = transfer_test_set(&components, &data.test, k, &spec, &gen, &config.policy, seed)
                    .map_err(|e| e.at_stage(stage("transfer")))?;
                rows.push(ResultRow::from_report(condition, k, seed, &evaluate_records(&records)?));
            }
        }
        Condition::Student(k) => {
            let student = train_student(config, data, seed).map_err(|e| e.at_stage(stage("distill student")))?;
            let components = ev.components(&student);
            let gen = if k == 1 {
                GenOptions {
                    mode: DecodeMode::Greedy,
                    ..gen
                }
            } else {
                gen
            };
            let no_mask = MaskSpec { ratio: 0.0, ..spec };
            let records = transfer_test_set(&components, &data.test, k, &no_mask, &gen, &config.policy, seed)
                .map_err(|e| e.at_stage(stage("transfer")))?;
            rows.push(ResultRow::from_report(condition, k, seed, &evaluate_records(&records)?));
        }
    }
    Ok(rows)
}

/// Teacher (configured mask mode, `teacher_k` samples) transfers the whole
/// training corpus; a fresh rewrite model is trained on the kept outputs.
pub fn train_student(config: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<NeuralModel<f64>> {
    let teacher = train_teacher(config, data, config.mask.mode, &config.control_source, seed)?;
    let components = data.evaluators.components(&teacher);
    let options = StudentDataOptions {
        samples: config.teacher_k,
        mask: config.mask,
        generation: sampling(config),
        policy: config.policy.clone(),
        keep_fallbacks: false,
        seed: rng::mix(seed, 0x5747),
    };
    let records = build_student_data(&components, &data.corpus, &options)?;
    let (pairs, _) = student_pairs(&records, &data.labels)?;
    if pairs.is_empty() {
        return Err(Error::invalid("teacher produced no usable student pairs"));
    }
    NeuralModel::train_rewrite(&data.vocab, &pairs, &config.student, seed)
}

/// Run every cell on pre-loaded data.
pub fn run_with_data(config: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentReport> {
    let cells: Vec<(usize, Condition, u64)> = config
        .conditions
        .iter()
        .enumerate()
        .flat_map(|(ci, &c)| config.seeds.iter().map(move |&s| (ci, c, s)))
        .collect();
    let work = || -> Result<Vec<(usize, Vec<ResultRow>)>> {
        cells
            .par_iter()
            .map(|&(ci, c, s)| run_cell(config, data, c, s).map(|rows| (ci, rows)))
            .collect()
    };
    let results = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut keyed: Vec<(usize, ResultRow)> = results
        .into_iter()
        .flat_map(|(ci, rows)| rows.into_iter().map(move |r| (ci, r)))
        .collect();
    keyed.sort_by(|(ca, a), (cb, b)| (ca, a.k, a.seed).cmp(&(cb, b.k, b.seed)));
    let rows: Vec<ResultRow> = keyed.into_iter().map(|(_, r)| r).collect();
    let summary = summarize(&rows);
    Ok(ExperimentReport { rows, summary })
}

/// Validate the config, run all cells, and write `results.csv` and
/// `summary.csv` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate().map_err(|e| e.at_stage("validate config"))?;
    let data = ExperimentData::load(config)?;
    let report = run_with_data(config, &data)?;
    report.write(&config.output_dir).map_err(|e| e.at_stage("write reports"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_names_round_trip() {
        for c in [
            Condition::Hard,
            Condition::Soft,
            Condition::NoControl,
            Condition::Teacher,
            Condition::Student(4),
        ] {
            assert_eq!(c.to_string().parse::<Condition>().unwrap(), c);
        }
        assert!("STUDENT_K0".parse::<Condition>().is_err());
        assert!("soft".parse::<Condition>().is_err());
        let json = serde_json::to_string(&vec![Condition::Student(2)]).unwrap();
        assert_eq!(json, "[\"STUDENT_K2\"]");
    }

    #[test]
    fn config_defaults_parse() {
        let c: ExperimentConfig = serde_json::from_str("{\"k_values\": [2], \"conditions\": [\"HARD\"]}").unwrap();
        assert_eq!(c.k_values, vec![2]);
        assert_eq!(c.seeds.len(), 5);
        assert!(serde_json::from_str::<ExperimentConfig>("{\"bogus\": 1}").is_err());
    }
}
