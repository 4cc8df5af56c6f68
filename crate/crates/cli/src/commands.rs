use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use styleshift::backend::bridge::{conformance, BridgeClient};
use styleshift::backend::{
    train_backend, BackendModel, DecodeMode, GenOptions, NeuralModel, Objective, TrainOptions,
    TrainingPair,
};
use styleshift::classifier::{annotate, AttributeClassifier, NaiveBayes};
use styleshift::corpus::{label_names, labeled_examples, read_jsonl, test_items, write_jsonl, CorpusLine, TestLine, ToyCorpusSpec};
use styleshift::embedder::TfIdf;
use styleshift::experiment::{run_experiment, Evaluators, ExperimentConfig};
use styleshift::metrics::{evaluate, EvalRecord, NgramLm};
use styleshift::noising::MaskSpec;
use styleshift::persist::{load_model, save_model};
use styleshift::pipeline::{
    build_denoising_data, build_student_data, student_pairs, transfer, Components, StudentDataOptions, TransferRequest,
};
use styleshift::rng;
use styleshift::text::{build_vocab, detokenize, tokenize, LabelSet, LabeledExample, Vocab};

use crate::args::*;
use crate::Failure;

type CliResult<T = ()> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::BuildData(a) => build_data(a),
        Command::Train(a) => train(a),
        Command::Transfer(a) => transfer_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Distill(a) => distill(a),
        Command::Experiment(a) => experiment(a),
        Command::BridgeCheck(a) => bridge_check(a),
    }
}

/// Parse a flag value the way the config file spells it.
fn parse_key<T: DeserializeOwned>(flag: &str, value: &str) -> CliResult<T> {
    serde_json::from_value(json!(value)).map_err(|e| Failure::usage(format!("--{flag} {value:?}: {e}")))
}

pub fn load_config(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let mut c = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)
            .map_err(|e| Failure::from(e.at_stage(format!("read config {}", path.display()))))?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = &args.$field { $target = v.clone(); })*
        };
    }
    set! {
        train => c.train,
        test => c.test,
        mask_ratio => c.mask.ratio,
        span_mean => c.mask.span_mean,
        blend => c.mask.blend,
        variants_per_example => c.variants_per_example,
        k_values => c.k_values,
        seeds => c.seeds,
        threshold => c.policy.threshold,
        temperature => c.temperature,
        alpha => c.alpha,
        lm_k => c.lm_k,
        teacher_k => c.teacher_k,
        output_dir => c.output_dir,
    }
    if let Some(v) = &args.labels {
        c.labels = Some(v.clone());
    }
    if let Some(v) = args.similarity_floor {
        c.policy.similarity_floor = Some(v);
    }
    if let Some(v) = args.workers {
        c.workers = Some(v);
    }
    if let Some(v) = &args.backend {
        c.backend = parse_key("backend", v)?;
    }
    if let Some(v) = &args.mask_mode {
        c.mask.mode = parse_key("mask-mode", v)?;
    }
    if let Some(v) = &args.fallback {
        c.policy.fallback = parse_key("fallback", v)?;
    }
    if let Some(v) = &args.g_mode {
        c.g_mode = parse_key("g-mode", v)?;
    }
    if let Some(v) = &args.semantic_mode {
        c.semantic_mode = parse_key("semantic-mode", v)?;
    }
    if let Some(v) = &args.conditions {
        c.conditions = v.iter().map(|s| parse_key("conditions", s)).collect::<CliResult<_>>()?;
    }
    c.mask.validate().map_err(Failure::usage)?;
    c.policy.validate().map_err(Failure::usage)?;
    Ok(c)
}

/// Training corpus annotated with classifier predictions, plus everything
/// fitted on it.
struct Corpus {
    examples: Vec<LabeledExample>,
    evaluators: Evaluators,
    vocab: Vocab,
}

fn load_corpus(config: &ExperimentConfig) -> CliResult<Corpus> {
    let lines: Vec<CorpusLine> = read_jsonl(&config.train).map_err(|e| e.at_stage("read training corpus"))?;
    let names = config.labels.clone().unwrap_or_else(|| label_names(&lines));
    let labels = LabelSet::new(names).map_err(|e| e.at_stage("resolve labels"))?;
    let mut examples = labeled_examples(&lines, &labels).map_err(|e| e.at_stage("read training corpus"))?;
    let evaluators = Evaluators::fit(&examples, &labels, config.alpha, config.lm_k)?;
    annotate(&mut examples, &evaluators.classifier)?;
    let vocab = build_vocab(&examples, &labels)?;
    Ok(Corpus { examples, evaluators, vocab })
}

fn denoising_pairs(config: &ExperimentConfig, corpus: &Corpus, seed: u64) -> CliResult<Vec<TrainingPair>> {
    Ok(build_denoising_data(
        &corpus.examples,
        &corpus.evaluators.classifier,
        &config.mask,
        config.variants_per_example,
        &config.control_source,
        seed,
    )?)
}

/// A trained backend with its evaluators, as stored on disk.
struct ModelDir {
    backend: BackendModel,
    evaluators: Evaluators,
}

impl ModelDir {
    const BACKEND: &'static str = "backend.json";
    const CLASSIFIER: &'static str = "classifier.json";
    const EMBEDDER: &'static str = "embedder.json";
    const LM: &'static str = "lm.json";

    fn save(backend: &BackendModel, ev: &Evaluators, dir: &Path) -> CliResult {
        fs::create_dir_all(dir)?;
        save_model(backend, &dir.join(Self::BACKEND))?;
        save_model(&ev.classifier, &dir.join(Self::CLASSIFIER))?;
        save_model(&ev.embedder, &dir.join(Self::EMBEDDER))?;
        save_model(&ev.lm, &dir.join(Self::LM))?;
        Ok(())
    }

    fn load(dir: &Path) -> CliResult<Self> {
        let classifier: NaiveBayes<f64> = load_model(&dir.join(Self::CLASSIFIER))?;
        let embedder: TfIdf<f64> = load_model(&dir.join(Self::EMBEDDER))?;
        let lm: NgramLm<f64> = load_model(&dir.join(Self::LM))?;
        let backend: BackendModel = load_model(&dir.join(Self::BACKEND))?;
        let labels = classifier.labels().clone();
        if backend.vocab().labels() != &labels {
            return Err(Failure::from(styleshift::Error::InvalidArgument(format!(
                "{}: backend and classifier disagree on labels",
                dir.display()
            ))));
        }
        Ok(ModelDir {
            backend,
            evaluators: Evaluators { labels, classifier, embedder, lm },
        })
    }

    fn components(&self) -> Components<'_> {
        self.evaluators.components(&self.backend)
    }

    /// Students rewrite unmasked input; denoisers get the configured mask.
    fn is_student(&self) -> bool {
        matches!(&self.backend, BackendModel::Neural(m) if m.objective() == Objective::Rewrite)
    }
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen_corpus(a: GenCorpusArgs) -> CliResult {
    let mut spec: ToyCorpusSpec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => ToyCorpusSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.train_per_template_label {
        spec.train_per_template_label = n;
    }
    if let Some(n) = a.test_per_label {
        spec.test_per_label = n;
    }
    let (train, test) = spec.generate()?;
    fs::create_dir_all(&a.out_dir)?;
    write_jsonl(&a.out_dir.join("train.jsonl"), &train)?;
    write_jsonl(&a.out_dir.join("test.jsonl"), &test)?;
    eprintln!("wrote {} train and {} test lines to {}", train.len(), test.len(), a.out_dir.display());
    Ok(())
}

fn build_data(a: BuildDataArgs) -> CliResult {
    let config = load_config(&a.config)?;
    let corpus = load_corpus(&config)?;
    let pairs = denoising_pairs(&config, &corpus, a.seed)?;
    write_jsonl(&a.out, &pairs)?;
    eprintln!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let config = load_config(&a.config)?;
    let corpus = load_corpus(&config)?;
    let pairs = match &a.pairs {
        Some(p) => read_jsonl::<TrainingPair>(p)?,
        None => denoising_pairs(&config, &corpus, a.seed)?,
    };
    let options = TrainOptions { neural: config.neural.clone() };
    let backend = train_backend(config.backend, &corpus.vocab, &pairs, &options, a.seed)
        .map_err(|e| e.at_stage("train backend"))?;
    ModelDir::save(&backend, &corpus.evaluators, &a.model_dir)?;
    eprintln!("trained {:?} backend on {} pairs into {}", config.backend, pairs.len(), a.model_dir.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TransferLine {
    source: String,
    output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
    target_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    similarity: Option<f64>,
}

fn transfer_cmd(a: TransferArgs) -> CliResult {
    let config = load_config(&a.config)?;
    let model = ModelDir::load(&a.model_dir)?;
    let labels = &model.evaluators.labels;
    if a.samples == 0 {
        return Err(Failure::usage("--samples must be >= 1"));
    }
    let mask = if model.is_student() {
        MaskSpec { ratio: 0.0, ..config.mask }
    } else {
        config.mask
    };
    let mode = if model.is_student() && a.samples == 1 {
        DecodeMode::Greedy
    } else {
        DecodeMode::Sample
    };
    let components = model.components();
    let request = |source, target, seed| {
        let mut req = TransferRequest::new(source, target, a.samples, mask, seed);
        req.generation.temperature = config.temperature;
        req.generation.mode = mode;
        req.policy = config.policy.clone();
        req
    };

    if let Some(text) = &a.text {
        let target = labels.label(a.target.as_deref().expect("clap requires --target"))?;
        let r = transfer(&components, &request(tokenize(text), target.clone(), a.seed))?;
        let chosen = r.chosen_index.map(|i| &r.candidates[i]);
        return print_json(&json!({
            "source": text,
            "output": detokenize(&r.output),
            "target_label": target.name,
            "chosen_index": r.chosen_index,
            "target_prob": chosen.map(|c| c.target_prob),
            "similarity": chosen.map(|c| c.similarity),
        }));
    }

    let input = a.input.as_ref().expect("clap requires --input or --text");
    let output = a.output.as_ref().expect("clap requires --output");
    let lines: Vec<TestLine> = read_jsonl(input)?;
    let items = test_items(&lines, labels)?;
    let base = rng::splitmix64(a.seed);
    let mut out = Vec::with_capacity(items.len());
    for (j, (item, line)) in items.iter().zip(&lines).enumerate() {
        let r = transfer(&components, &request(item.source.clone(), item.target.clone(), rng::mix(base, j as u64)))?;
        let chosen = r.chosen_index.map(|i| &r.candidates[i]);
        out.push(TransferLine {
            source: line.source.clone(),
            output: detokenize(&r.output),
            reference: line.reference.clone(),
            target_label: line.target_label.clone(),
            target_prob: chosen.map(|c| c.target_prob),
            similarity: chosen.map(|c| c.similarity),
        });
    }
    write_jsonl(output, &out)?;
    eprintln!("wrote {} transfers to {}", out.len(), output.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let config = load_config(&a.config)?;
    let model = ModelDir::load(&a.model_dir)?;
    let ev = &model.evaluators;
    let lines: Vec<TransferLine> = read_jsonl(&a.input)?;
    let records = lines
        .iter()
        .map(|l| {
            Ok(EvalRecord {
                source: tokenize(&l.source),
                output: tokenize(&l.output),
                reference: l.reference.as_deref().map(tokenize),
                target_label: ev.labels.label(&l.target_label)?,
            })
        })
        .collect::<styleshift::Result<Vec<_>>>()?;
    let report = evaluate(&records, &ev.classifier, &ev.embedder, &ev.lm, config.g_mode, config.semantic_mode)?;
    if let Some(dir) = &a.report_dir {
        fs::create_dir_all(dir)?;
        report.write_json(&dir.join("report.json"))?;
        report.write_csv(&dir.join("rows.csv"))?;
    }
    print_json(&json!({
        "n": records.len(),
        "accuracy": report.accuracy,
        "semantic": report.semantic,
        "g": report.g,
        "s_bleu": report.s_bleu,
        "fluency": report.fluency,
    }))
}

fn distill(a: DistillArgs) -> CliResult {
    let config = load_config(&a.config)?;
    let teacher = ModelDir::load(&a.model_dir)?;
    if teacher.is_student() {
        return Err(Failure::usage("--model-dir holds a student; distill from a denoising teacher"));
    }
    let mut examples = labeled_examples(&read_jsonl::<CorpusLine>(&config.train)?, &teacher.evaluators.labels)?;
    annotate(&mut examples, &teacher.evaluators.classifier)?;
    let options = StudentDataOptions {
        samples: config.teacher_k,
        mask: config.mask,
        generation: GenOptions { temperature: config.temperature, ..GenOptions::default() },
        policy: config.policy.clone(),
        keep_fallbacks: false,
        seed: a.seed,
    };
    let records = build_student_data(&teacher.components(), &examples, &options)
        .map_err(|e| e.at_stage("teacher transfer"))?;
    fs::create_dir_all(&a.out_dir)?;
    write_jsonl(&a.out_dir.join("teacher_outputs.jsonl"), &records)?;
    let (pairs, dropped) = student_pairs(&records, &teacher.evaluators.labels)?;
    if pairs.is_empty() {
        return Err(Failure::from(styleshift::Error::InvalidArgument(
            "teacher produced no length-preserving outputs to learn from".into(),
        )));
    }
    let student = NeuralModel::train_rewrite(teacher.backend.vocab(), &pairs, &config.student, a.seed)
        .map_err(|e| e.at_stage("train student"))?;
    ModelDir::save(&BackendModel::Neural(student), &teacher.evaluators, &a.out_dir)?;
    eprintln!(
        "{} teacher outputs, {} student pairs ({} dropped for length), student in {}",
        records.len(),
        pairs.len(),
        dropped,
        a.out_dir.display()
    );
    Ok(())
}

fn experiment(a: ExperimentArgs) -> CliResult {
    let config = load_config(&a.config)?;
    let report = run_experiment(&config)?;
    for s in &report.summary {
        println!("{}", serde_json::to_string(s)?);
    }
    eprintln!("wrote {} rows to {}", report.rows.len(), config.output_dir.join("results.csv").display());
    Ok(())
}

fn bridge_check(a: BridgeCheckArgs) -> CliResult {
    let labels = LabelSet::new(a.labels.clone()).map_err(Failure::usage)?;
    if !(a.timeout > 0.0 && a.timeout.is_finite()) {
        return Err(Failure::usage("--timeout must be positive"));
    }
    let (program, rest) = a.command.split_first().expect("clap requires a command");
    let mut cmd = std::process::Command::new(program);
    cmd.args(rest);
    let client = BridgeClient::from_command(cmd, Duration::from_secs_f64(a.timeout)).map_err(|e| {
        let mut f = Failure::from(e.at_stage(format!("start {}", PathBuf::from(program).display())));
        f.code = 3;
        f
    })?;
    let client = Arc::new(client);
    let outcomes = conformance(&client, &labels);
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(Failure {
            code: 3,
            error: anyhow::anyhow!("{failed} of {} bridge checks failed", outcomes.len()),
        });
    }
    Ok(())
}
