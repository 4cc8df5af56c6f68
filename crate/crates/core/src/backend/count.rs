//! Count-based span infiller.
//!
//! Per control label it keeps bigram continuation counts observed inside
//! masked runs (keyed by the previous token, or sentence start), a unigram
//! backoff over span tokens, and one histogram of masked-run lengths. Each
//! sentinel is filled with a span whose length comes from the histogram and
//! whose tokens follow the label's bigram chain from the left context.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_pairs, copy_through, require_kind, BackendKind, DecodeMode, GenOptions, InfillBackend, TrainingPair};
use crate::error::{Error, Result};
use crate::noising::{MaskMode, MaskedVariant};
use crate::rng::{self, StreamRng};
use crate::text::{AttributeLabel, TokenId, TokenSeq, Vocab, MASK_TOKEN};

/// Context key for a span that opens the sentence.
pub const SENTENCE_START: TokenId = TokenId::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountModel {
    vocab: Vocab,
    continuations: Vec<BTreeMap<TokenId, BTreeMap<TokenId, u64>>>,
    unigrams: Vec<BTreeMap<TokenId, u64>>,
    span_lengths: BTreeMap<usize, u64>,
}

impl CountModel {
    /// Accumulate counts from HARD denoising pairs.
    pub fn train(vocab: &Vocab, pairs: &[TrainingPair]) -> Result<Self> {
        check_pairs(vocab, pairs)?;
        let n_labels = vocab.labels().len();
        let mut model = CountModel {
            vocab: vocab.clone(),
            continuations: vec![BTreeMap::new(); n_labels],
            unigrams: vec![BTreeMap::new(); n_labels],
            span_lengths: BTreeMap::new(),
        };
        for pair in pairs {
            require_kind(&pair.variant, &[MaskMode::Hard], "count backend")?;
            let label = pair.control.index;
            let ids: Vec<TokenId> = pair.source().iter().map(|t| vocab.id_or_unk(t)).collect();
            for run in pair.variant.masked_runs() {
                *model.span_lengths.entry(run.len()).or_default() += 1;
                let mut prev = if run.start == 0 {
                    SENTENCE_START
                } else {
                    ids[run.start - 1]
                };
                for &next in &ids[run] {
                    *model.continuations[label]
                        .entry(prev)
                        .or_default()
                        .entry(next)
                        .or_default() += 1;
                    *model.unigrams[label].entry(next).or_default() += 1;
                    prev = next;
                }
            }
        }
        Ok(model)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Longest span the generator will emit.
    pub fn span_cap(&self) -> usize {
        2 * self.span_lengths.keys().next_back().copied().unwrap_or(0)
    }

    /// Continuation counts for `prev` under `label`. Unseen contexts back off
    /// first to the continuations of `prev` pooled over labels, then to the
    /// label's span unigrams, then to span unigrams pooled over labels.
    fn continuation(&self, label: usize, prev: TokenId) -> Vec<(TokenId, u64)> {
        if let Some(next) = self.continuations[label].get(&prev) {
            return next.iter().map(|(&t, &c)| (t, c)).collect();
        }
        let pooled_bigram = pool(self.continuations.iter().filter_map(|table| table.get(&prev)));
        if !pooled_bigram.is_empty() {
            return pooled_bigram;
        }
        if !self.unigrams[label].is_empty() {
            return self.unigrams[label].iter().map(|(&t, &c)| (t, c)).collect();
        }
        pool(self.unigrams.iter())
    }

    /// Normalized continuation distribution after `prev` (`None` = sentence
    /// start), as used by the generator.
    pub fn continuation_probabilities(
        &self,
        label: &AttributeLabel,
        prev: Option<&str>,
    ) -> Result<Vec<(String, f64)>> {
        self.vocab.control_id(label)?;
        let prev = prev.map_or(SENTENCE_START, |t| self.vocab.id_or_unk(t));
        let dist = self.continuation(label.index, prev);
        let total: u64 = dist.iter().map(|(_, c)| c).sum();
        Ok(dist
            .into_iter()
            .map(|(t, c)| (self.vocab.token(t).unwrap_or_default().to_string(), c as f64 / total as f64))
            .collect())
    }

    /// Normalized span-length distribution.
    pub fn span_length_probabilities(&self) -> Vec<(usize, f64)> {
        let total: u64 = self.span_lengths.values().sum();
        self.span_lengths
            .iter()
            .map(|(&l, &c)| (l, c as f64 / total as f64))
            .collect()
    }

    /// Labels, contexts and counts as `(label, prev, next, count)`.
    pub fn continuation_counts(&self) -> impl Iterator<Item = (usize, TokenId, TokenId, u64)> + '_ {
        self.continuations.iter().enumerate().flat_map(|(l, table)| {
            table.iter().flat_map(move |(&prev, next)| {
                next.iter().map(move |(&t, &c)| (l, prev, t, c))
            })
        })
    }

    fn draw_span(&self, label: usize, mut prev: TokenId, len: usize, budget: usize, opts: &GenOptions, rng: &mut StreamRng) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(len);
        while out.len() < len.min(budget) {
            let dist = self.continuation(label, prev);
            if dist.is_empty() {
                break;
            }
            let counts: Vec<f64> = dist.iter().map(|&(_, c)| c as f64).collect();
            let next = dist[choose(&counts, opts, rng)].0;
            out.push(next);
            prev = next;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vocab.labels().len();
        if self.continuations.len() != n || self.unigrams.len() != n {
            return Err(Error::invalid("count model: table count does not match labels"));
        }
        let ok_id = |id: TokenId| (id as usize) < self.vocab.len() && !self.vocab.is_reserved(id);
        for (_, prev, next, _) in self.continuation_counts() {
            if !(prev == SENTENCE_START || (prev as usize) < self.vocab.len()) || !ok_id(next) {
                return Err(Error::invalid("count model: token id out of range"));
            }
        }
        Ok(())
    }
}

fn pool<'a>(tables: impl Iterator<Item = &'a BTreeMap<TokenId, u64>>) -> Vec<(TokenId, u64)> {
    let mut pooled: BTreeMap<TokenId, u64> = BTreeMap::new();
    for table in tables {
        for (&t, &c) in table {
            *pooled.entry(t).or_default() += c;
        }
    }
    pooled.into_iter().collect()
}

/// Pick an index from raw counts: argmax for greedy decoding, otherwise a
/// draw from counts raised to `1 / temperature`.
fn choose(counts: &[f64], opts: &GenOptions, rng: &mut StreamRng) -> usize {
    match opts.mode {
        DecodeMode::Greedy => rng::argmax(counts),
        DecodeMode::Sample => {
            let max = counts.iter().copied().fold(0.0, f64::max);
            let weights: Vec<f64> = counts
                .iter()
                .map(|&c| (c / max).powf(1.0 / opts.temperature))
                .collect();
            rng::weighted_index(rng, &weights)
        }
    }
}

impl InfillBackend for CountModel {
    fn kind(&self) -> BackendKind {
        BackendKind::Count
    }

    fn generate(
        &self,
        variant: &MaskedVariant,
        control: &AttributeLabel,
        opts: &GenOptions,
    ) -> Result<Vec<TokenSeq>> {
        opts.validate()?;
        require_kind(variant, &[MaskMode::Hard], "count backend")?;
        let label = self.vocab.control_id(control).map(|_| control.index)?;
        if let Some(copies) = copy_through(variant, opts.n) {
            return Ok(copies);
        }
        if self.span_lengths.is_empty() {
            return Err(Error::invalid("count model saw no masked spans in training"));
        }
        let cap = self.span_cap();
        let lengths: Vec<(usize, f64)> = self
            .span_lengths
            .iter()
            .filter(|(&l, _)| l <= cap)
            .map(|(&l, &c)| (l, c as f64))
            .collect();
        let length_counts: Vec<f64> = lengths.iter().map(|&(_, c)| c).collect();
        let hard = variant.collapsed();

        let mut outputs = Vec::with_capacity(opts.n);
        for sample in 0..opts.n {
            let mut rng = rng::stream(rng::mix(opts.seed, sample as u64));
            let mut out: Vec<String> = Vec::with_capacity(variant.source.len() + cap);
            let kept = hard.iter().filter(|t| *t != MASK_TOKEN).count();
            let mut kept_left = kept;
            for tok in hard.iter() {
                if tok == MASK_TOKEN {
                    let len = lengths[choose(&length_counts, opts, &mut rng)].0;
                    let prev = out.last().map_or(SENTENCE_START, |t| self.vocab.id_or_unk(t));
                    let budget = opts.max_len.saturating_sub(out.len() + kept_left);
                    for id in self.draw_span(label, prev, len, budget, opts, &mut rng) {
                        out.push(self.vocab.token(id).expect("id from vocab").to_string());
                    }
                } else {
                    out.push(tok.to_string());
                    kept_left -= 1;
                }
            }
            outputs.push(TokenSeq::new(out)?);
        }
        Ok(outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noising::{make_variants, MaskSpec};
    use crate::text::{tokenize, LabelSet};

    fn labels() -> LabelSet {
        LabelSet::new(["pos", "neg"]).unwrap()
    }

    fn pair(text: &str, masked: &[usize], label: &str) -> TrainingPair {
        TrainingPair {
            control: labels().label(label).unwrap(),
            variant: MaskedVariant::with_positions(&tokenize(text), masked, MaskMode::Hard, 1.0)
                .unwrap(),
        }
    }

    fn vocab(texts: &[&str]) -> Vocab {
        let seqs: Vec<TokenSeq> = texts.iter().map(|t| tokenize(t)).collect();
        Vocab::from_sequences(&seqs, &labels()).unwrap()
    }

    #[test]
    fn point_mass_continuation_and_greedy_fill() {
        let texts = ["the food was great", "the food was awful"];
        let v = vocab(&texts);
        let pairs = vec![
            pair(texts[0], &[3], "pos"),
            pair(texts[0], &[3], "pos"),
            pair(texts[1], &[3], "neg"),
        ];
        let m = CountModel::train(&v, &pairs).unwrap();
        let pos = labels().label("pos").unwrap();
        let dist = m.continuation_probabilities(&pos, Some("was")).unwrap();
        assert_eq!(dist, vec![("great".to_string(), 1.0)]);

        let query = MaskedVariant::with_positions(&tokenize("the food was awful"), &[3], MaskMode::Hard, 1.0).unwrap();
        let out = m.generate(&query, &pos, &GenOptions::greedy()).unwrap();
        assert_eq!(out, vec![tokenize("the food was great")]);
        let again = m
            .generate(&query, &pos, &GenOptions { seed: 99, ..GenOptions::greedy() })
            .unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn tables_normalize_and_respect_copy_constraint() {
        let texts = [
            "the food was great and cheap",
            "the food was awful and cold",
            "service here is great",
            "service here is awful",
        ];
        let v = vocab(&texts);
        let mut pairs = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let label = if i % 2 == 0 { "pos" } else { "neg" };
            for var in make_variants(&tokenize(t), &MaskSpec::hard(0.4), 8, i as u64).unwrap() {
                pairs.push(TrainingPair {
                    control: labels().label(label).unwrap(),
                    variant: var,
                });
            }
        }
        let m = CountModel::train(&v, &pairs).unwrap();
        for label in labels().iter() {
            for prev in [None, Some("the"), Some("was"), Some("zzz")] {
                let s: f64 = m
                    .continuation_probabilities(&label, prev)
                    .unwrap()
                    .iter()
                    .map(|(_, p)| p)
                    .sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let s: f64 = m.span_length_probabilities().iter().map(|(_, p)| p).sum();
        assert!((s - 1.0).abs() < 1e-9);

        let src = tokenize(texts[0]);
        let neg = labels().label("neg").unwrap();
        for var in make_variants(&src, &MaskSpec::hard(0.4), 16, 5).unwrap() {
            let outs = m.generate(&var, &neg, &GenOptions::sample(4, 11)).unwrap();
            assert_eq!(outs.len(), 4);
            let collapsed = var.collapsed();
            let expected: Vec<&str> = collapsed.iter().filter(|t| *t != MASK_TOKEN).collect();
            for out in &outs {
                assert!(out.iter().all(|t| !crate::text::is_reserved_spelling(t)));
                // kept tokens appear in order
                let mut j = 0;
                for t in out.iter() {
                    if j < expected.len() && expected[j] == t {
                        j += 1;
                    }
                }
                assert_eq!(j, expected.len());
            }
            assert_eq!(outs, m.generate(&var, &neg, &GenOptions::sample(4, 11)).unwrap());
        }
    }

    #[test]
    fn rejects_soft_and_greedy_n() {
        let texts = ["a b c"];
        let v = vocab(&texts);
        let soft = TrainingPair {
            control: labels().label("pos").unwrap(),
            variant: MaskedVariant::with_positions(&tokenize("a b c"), &[1], MaskMode::Soft, 0.5).unwrap(),
        };
        assert!(matches!(CountModel::train(&v, std::slice::from_ref(&soft)), Err(Error::UnsupportedVariant(_))));
        let m = CountModel::train(&v, &[pair("a b c", &[1], "pos")]).unwrap();
        let pos = labels().label("pos").unwrap();
        assert!(m.generate(&soft.variant, &pos, &GenOptions::greedy()).is_err());
        let hard = MaskedVariant::with_positions(&tokenize("a b c"), &[1], MaskMode::Hard, 1.0).unwrap();
        let bad = GenOptions { n: 2, ..GenOptions::greedy() };
        assert!(m.generate(&hard, &pos, &bad).is_err());
        assert!(CountModel::train(&v, &[]).is_err());
    }

    #[test]
    fn unmasked_variant_is_copied() {
        let v = vocab(&["a b c"]);
        let m = CountModel::train(&v, &[pair("a b c", &[0], "neg")]).unwrap();
        let src = tokenize("a b zzz");
        let var = MaskedVariant::unmasked(&src, MaskMode::Hard);
        let out = m
            .generate(&var, &labels().label("pos").unwrap(), &GenOptions::sample(3, 1))
            .unwrap();
        assert_eq!(out, vec![src; 3]);
    }
}
