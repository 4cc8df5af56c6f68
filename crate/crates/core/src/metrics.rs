//! Evaluation: Accuracy, Semantic, G, S-BLEU, and Fluency.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::AttributeClassifier;
use crate::embedder::SentenceSimilarity;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::text::{detokenize, AttributeLabel, TokenSeq};

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 on a 0–100 scale. Unigram precision is unsmoothed,
/// orders 2–4 use add-one smoothing, and the brevity penalty is
/// `exp(1 - r/c)` for candidates shorter than the reference.
pub fn bleu(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let (c, r) = (candidate.len(), reference.len());
    if c == 0 {
        return if r == 0 { 100.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate.tokens(), n);
        let refc = ngram_counts(reference.tokens(), n);
        let matched: usize = cand
            .iter()
            .map(|(g, &k)| k.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let total = c.saturating_sub(n - 1);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    100.0 * bp * (log_sum / 4.0).exp()
}

/// Geometric mean of accuracy and semantic preservation.
pub fn g_score(accuracy: f64, semantic: f64) -> Result<f64> {
    for (name, v) in [("accuracy", accuracy), ("semantic", semantic)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} {v} not in [0,1]")));
        }
    }
    Ok((accuracy * semantic).sqrt())
}

pub trait LanguageModel: Send + Sync {
    fn perplexity(&self, seq: &TokenSeq) -> f64;
}

const BOS: usize = usize::MAX;

/// Bigram language model with add-k smoothing over the training tokens plus
/// end-of-sentence and unknown symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramLm<T> {
    k: T,
    /// Training tokens; ids `len` and `len + 1` are end and unknown.
    vocabulary: BTreeMap<String, usize>,
    /// `context -> (total, next -> count)`; the start context is `usize::MAX`.
    counts: BTreeMap<usize, (u64, BTreeMap<usize, u64>)>,
}

impl<T: Real> NgramLm<T> {
    pub const ORDER: usize = 2;
    pub const DEFAULT_K: f64 = 0.1;

    pub fn train<'a>(corpus: impl IntoIterator<Item = &'a TokenSeq>, k: T) -> Result<Self> {
        if k == T::zero() {
            return Err(Error::UnsmoothedLm);
        }
        if !(k > T::zero() && k.is_finite()) {
            return Err(Error::invalid("add-k constant must be positive"));
        }
        let seqs: Vec<&TokenSeq> = corpus.into_iter().collect();
        if seqs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut vocabulary = BTreeMap::new();
        for t in seqs.iter().flat_map(|s| s.iter()) {
            let next = vocabulary.len();
            vocabulary.entry(t.to_string()).or_insert(next);
        }
        let mut lm = NgramLm {
            k,
            vocabulary,
            counts: BTreeMap::new(),
        };
        let eos = lm.eos();
        for seq in seqs {
            let mut prev = BOS;
            for t in seq.iter().map(|t| lm.vocabulary[t]).chain([eos]) {
                let (total, next) = lm.counts.entry(prev).or_default();
                *total += 1;
                *next.entry(t).or_insert(0) += 1;
                prev = t;
            }
        }
        Ok(lm)
    }

    fn eos(&self) -> usize {
        self.vocabulary.len()
    }

    fn unk(&self) -> usize {
        self.vocabulary.len() + 1
    }

    /// Size of the predicted vocabulary (training tokens, end, unknown).
    pub fn outcome_count(&self) -> usize {
        self.vocabulary.len() + 2
    }

    pub fn k(&self) -> T {
        self.k
    }

    fn id(&self, token: &str) -> usize {
        self.vocabulary.get(token).copied().unwrap_or_else(|| self.unk())
    }

    fn prob(&self, prev: usize, next: usize) -> T {
        let v = T::from_usize(self.outcome_count()).unwrap();
        let (total, count) = match self.counts.get(&prev) {
            Some((total, table)) => (*total, table.get(&next).copied().unwrap_or(0)),
            None => (0, 0),
        };
        (T::from_u64(count).unwrap() + self.k) / (T::from_u64(total).unwrap() + self.k * v)
    }

    /// `P(next | prev)`; `None` stands for the sentence start (as `prev`) or
    /// the sentence end (as `next`).
    pub fn conditional(&self, prev: Option<&str>, next: Option<&str>) -> T {
        let prev = prev.map_or(BOS, |t| self.id(t));
        let next = next.map_or(self.eos(), |t| self.id(t));
        self.prob(prev, next)
    }

    /// Every conditional distribution over the outcome vocabulary, one per
    /// context (start, each token, unknown).
    pub fn distributions(&self) -> Vec<Vec<T>> {
        let contexts = std::iter::once(BOS).chain(0..self.vocabulary.len()).chain([self.unk()]);
        contexts
            .map(|ctx| (0..self.outcome_count()).map(|w| self.prob(ctx, w)).collect())
            .collect()
    }

    /// `exp` of the mean negative log probability per predicted symbol,
    /// counting the end symbol.
    pub fn perplexity_of(&self, seq: &TokenSeq) -> T {
        let mut prev = BOS;
        let mut nll = T::zero();
        for t in seq.iter().map(|t| self.id(t)).chain([self.eos()]) {
            nll -= self.prob(prev, t).ln();
            prev = t;
        }
        (nll / T::from_usize(seq.len() + 1).unwrap()).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > T::zero()) {
            return Err(Error::UnsmoothedLm);
        }
        let n = self.outcome_count();
        let bad = self.counts.iter().any(|(&ctx, (total, table))| {
            (ctx != BOS && ctx >= n) || table.keys().any(|&w| w >= n) || table.values().sum::<u64>() != *total
        });
        if bad {
            return Err(Error::invalid("n-gram model: inconsistent count table"));
        }
        Ok(())
    }
}

impl<T: Real> LanguageModel for NgramLm<T> {
    fn perplexity(&self, seq: &TokenSeq) -> f64 {
        self.perplexity_of(seq).to_f64_lossy()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GMode {
    /// `sqrt(accuracy * semantic)` of the corpus means.
    #[default]
    Corpus,
    /// Mean over records of `sqrt(hit_i * semantic_i)`.
    PerExample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticMode {
    /// Output compared to the human reference.
    #[default]
    VsReference,
    /// Output compared to its source.
    VsSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub source: TokenSeq,
    pub output: TokenSeq,
    pub reference: Option<TokenSeq>,
    pub target_label: AttributeLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub source: String,
    pub output: String,
    pub reference: Option<String>,
    pub target: String,
    pub acc_hit: bool,
    pub semantic: f64,
    pub bleu: f64,
    pub ppl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub semantic: f64,
    pub g: f64,
    pub s_bleu: f64,
    pub fluency: f64,
    pub g_mode: GMode,
    pub semantic_mode: SemanticMode,
    pub rows: Vec<EvalRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

pub fn evaluate(
    records: &[EvalRecord],
    classifier: &dyn AttributeClassifier,
    embedder: &dyn SentenceSimilarity,
    lm: &dyn LanguageModel,
    g_mode: GMode,
    semantic_mode: SemanticMode,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    if semantic_mode == SemanticMode::VsReference {
        if let Some(i) = records.iter().position(|r| r.reference.is_none()) {
            return Err(Error::MissingReference(i));
        }
    }
    let rows: Vec<EvalRow> = records
        .par_iter()
        .map(|r| {
            if !classifier.labels().contains(&r.target_label) {
                return Err(Error::UnknownLabel(r.target_label.name.clone()));
            }
            let acc_hit = classifier.predict(&r.output)? == r.target_label;
            let anchor = match semantic_mode {
                SemanticMode::VsReference => r.reference.as_ref().expect("checked above"),
                SemanticMode::VsSource => &r.source,
            };
            Ok(EvalRow {
                source: detokenize(&r.source),
                output: detokenize(&r.output),
                reference: r.reference.as_ref().map(detokenize),
                target: r.target_label.name.clone(),
                acc_hit,
                semantic: embedder.similarity(&r.output, anchor)?.clamp(0.0, 1.0),
                bleu: bleu(&r.output, &r.source),
                ppl: lm.perplexity(&r.output),
            })
        })
        .collect::<Result<_>>()?;
    let hit = |r: &EvalRow| if r.acc_hit { 1.0 } else { 0.0 };
    let accuracy = mean(rows.iter().map(hit));
    let semantic = mean(rows.iter().map(|r| r.semantic));
    let g = match g_mode {
        GMode::Corpus => g_score(accuracy, semantic)?,
        GMode::PerExample => mean(rows.iter().map(|r| (hit(r) * r.semantic).sqrt())),
    };
    Ok(EvalReport {
        accuracy,
        semantic,
        g,
        s_bleu: mean(rows.iter().map(|r| r.bleu)),
        fluency: mean(rows.iter().map(|r| r.ppl)),
        g_mode,
        semantic_mode,
        rows,
    })
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// One CSV row per record.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source", "output", "reference", "target", "acc_hit", "semantic", "bleu", "ppl"])?;
        for r in &self.rows {
            w.write_record([
                r.source.as_str(),
                r.output.as_str(),
                r.reference.as_deref().unwrap_or(""),
                r.target.as_str(),
                if r.acc_hit { "1" } else { "0" },
                &format!("{:.6}", r.semantic),
                &format!("{:.6}", r.bleu),
                &format!("{:.6}", r.ppl),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn s(t: &str) -> TokenSeq {
        tokenize(t)
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu(&s("a b c d"), &s("a b c d")), 100.0);
        assert_eq!(bleu(&s("a b"), &s("a b")), 100.0);
        assert_eq!(bleu(&s("x y z"), &s("a b c")), 0.0);
        assert_eq!(bleu(&s(""), &s("")), 100.0);
        assert_eq!(bleu(&s(""), &s("a")), 0.0);
        // p1 = 3/4, p2 = 3/4, p3 = 2/3, p4 = 1/2 after smoothing, no penalty
        let expected = 100.0 * (0.75f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((bleu(&s("a b c d"), &s("a b c e")) - expected).abs() < 1e-12);
        // short candidate: all precisions 1, penalty exp(1 - 4/2)
        assert!((bleu(&s("a b"), &s("a b c d")) - 100.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn g_examples() {
        assert!((g_score(0.97, 0.68).unwrap() - 0.8).abs() <= 0.02);
        assert_eq!(g_score(0.0, 0.7).unwrap(), 0.0);
        assert_eq!(g_score(1.0, 1.0).unwrap(), 1.0);
        assert!(g_score(1.2, 0.5).is_err());
        assert!(g_score(0.5, -0.1).is_err());
    }

    #[test]
    fn lm_guards_and_normalization() {
        let corpus = [s("a b"), s("b c a"), s("")];
        assert!(matches!(NgramLm::<f64>::train(&corpus, 0.0), Err(Error::UnsmoothedLm)));
        assert!(matches!(NgramLm::<f64>::train(&[], 0.1), Err(Error::EmptyCorpus)));
        let lm = NgramLm::<f64>::train(&corpus, 0.1).unwrap();
        for dist in lm.distributions() {
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        lm.validate().unwrap();
    }

    #[test]
    fn chain_perplexity() {
        let lm = NgramLm::<f64>::train(&[s("a b")], 0.1).unwrap();
        // outcomes {a, b, end, unk}: every step has probability 1.1 / 1.4
        assert!((lm.perplexity_of(&s("a b")) - 1.4 / 1.1).abs() < 1e-12);
        let sharp = NgramLm::<f64>::train(&[s("a b")], 1e-9).unwrap();
        assert!((sharp.perplexity_of(&s("a b")) - 1.0).abs() < 1e-6);
        let flat = NgramLm::<f64>::train(&[s("a b")], 1e12).unwrap();
        assert!((flat.perplexity_of(&s("b a b a")) - 4.0).abs() < 1e-6);
        // the empty sentence scores the end symbol alone
        assert!((lm.perplexity_of(&TokenSeq::empty()) - 1.4 / 0.1).abs() < 1e-9);
    }

    #[test]
    fn repeated_sentence_is_most_fluent() {
        let train = vec![s("the food was great"); 5];
        let lm = NgramLm::<f64>::train(&train, 0.1).unwrap();
        let best = lm.perplexity_of(&s("the food was great"));
        for other in ["great was food the", "the food", "the food was great great", "a b c"] {
            assert!(lm.perplexity_of(&s(other)) > best);
        }
    }

    proptest! {
        #[test]
        fn bleu_self_is_perfect(tokens in prop::collection::vec("[a-e]", 1..12)) {
            let seq = tokenize(&tokens.join(" "));
            prop_assert_eq!(bleu(&seq, &seq), 100.0);
        }

        #[test]
        fn g_bounded_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.0f64..0.5) {
            let g = g_score(a, b).unwrap();
            prop_assert!(g <= a.max(b) + 1e-15 && g >= a.min(b) - 1e-15);
            prop_assert!(g_score((a + d).min(1.0), b).unwrap() >= g);
        }

        #[test]
        fn shuffled_sentence_no_more_fluent(perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
            let corpus = [s("the food was really great"), s("the staff was kind"), s("food was fine")];
            let lm = NgramLm::<f64>::train(&corpus, 0.1).unwrap();
            let words = corpus[0].tokens();
            let shuffled: Vec<&str> = perm.iter().map(|&i| words[i].as_str()).collect();
            prop_assert!(lm.perplexity_of(&tokenize(&shuffled.join(" "))) >= lm.perplexity_of(&corpus[0]) - 1e-12);
        }
    }
}
