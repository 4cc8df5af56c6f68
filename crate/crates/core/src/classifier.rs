//! The attribute classifier. It defines the attribute: it assigns the control
//! labels used for training, filters candidates, and scores Accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Real};
use crate::text::{AttributeLabel, LabelSet, LabeledExample, TokenSeq};

/// Anything that maps a sentence to a probability vector over a label set.
pub trait AttributeClassifier: Send + Sync {
    fn labels(&self) -> &LabelSet;

    /// Probabilities in label-set order, summing to one.
    fn probabilities(&self, seq: &TokenSeq) -> Result<Vec<f64>>;

    /// Argmax label; ties go to the lowest label index.
    fn predict(&self, seq: &TokenSeq) -> Result<AttributeLabel> {
        let probs = self.probabilities(seq)?;
        let best = crate::rng::argmax(&probs);
        Ok(self.labels().get(best).expect("probability per label"))
    }
}

/// Multinomial naive Bayes over token counts with add-alpha smoothing.
///
/// Token likelihood tables range over the training vocabulary. A token never
/// seen in training receives the smoothing mass alone, `alpha / (N_c + alpha |V|)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes<T> {
    labels: LabelSet,
    alpha: T,
    log_prior: Vec<T>,
    vocabulary: BTreeMap<String, usize>,
    /// `[label][token]` smoothed log likelihood.
    log_likelihood: Vec<Vec<T>>,
    unseen_log_likelihood: Vec<T>,
}

impl<T: Real> NaiveBayes<T> {
    pub fn train(corpus: &[LabeledExample], labels: &LabelSet, alpha: T) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if !(alpha > T::zero() && alpha.is_finite()) {
            return Err(Error::invalid("smoothing constant must be positive"));
        }
        let mut vocabulary = BTreeMap::new();
        for ex in corpus {
            for t in ex.seq.iter() {
                let next = vocabulary.len();
                vocabulary.entry(t.to_string()).or_insert(next);
            }
        }
        let n_labels = labels.len();
        let mut docs = vec![0usize; n_labels];
        let mut counts = vec![vec![0u64; vocabulary.len()]; n_labels];
        let mut totals = vec![0u64; n_labels];
        for (i, ex) in corpus.iter().enumerate() {
            let label = ex.label.as_ref().ok_or(Error::MissingGoldLabel(i))?;
            if !labels.contains(label) {
                return Err(Error::UnknownLabel(label.name.clone()));
            }
            docs[label.index] += 1;
            for t in ex.seq.iter() {
                counts[label.index][vocabulary[t]] += 1;
                totals[label.index] += 1;
            }
        }
        if let Some(missing) = docs.iter().position(|&d| d == 0) {
            return Err(Error::UnrepresentedLabel(labels.names()[missing].clone()));
        }

        let n_docs = T::from_usize(corpus.len()).unwrap();
        let v = T::from_usize(vocabulary.len()).unwrap();
        let log_prior = docs
            .iter()
            .map(|&d| (T::from_usize(d).unwrap() / n_docs).ln())
            .collect();
        let mut log_likelihood = Vec::with_capacity(n_labels);
        let mut unseen_log_likelihood = Vec::with_capacity(n_labels);
        for (row, &total) in counts.iter().zip(&totals) {
            let denom = (T::from_u64(total).unwrap() + alpha * v).ln();
            log_likelihood.push(
                row.iter()
                    .map(|&c| (T::from_u64(c).unwrap() + alpha).ln() - denom)
                    .collect(),
            );
            unseen_log_likelihood.push(alpha.ln() - denom);
        }
        Ok(NaiveBayes {
            labels: labels.clone(),
            alpha,
            log_prior,
            vocabulary,
            log_likelihood,
            unseen_log_likelihood,
        })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn prior(&self, label: usize) -> T {
        self.log_prior[label].exp()
    }

    /// Smoothed `P(token | label)`.
    pub fn likelihood(&self, label: usize, token: &str) -> T {
        self.token_log_likelihood(label, token).exp()
    }

    fn token_log_likelihood(&self, label: usize, token: &str) -> T {
        match self.vocabulary.get(token) {
            Some(&i) => self.log_likelihood[label][i],
            None => self.unseen_log_likelihood[label],
        }
    }

    /// `P(token | label)` over the training vocabulary, in token order.
    pub fn likelihood_table(&self, label: usize) -> Vec<(String, T)> {
        self.vocabulary
            .iter()
            .map(|(t, &i)| (t.clone(), self.log_likelihood[label][i].exp()))
            .collect()
    }

    pub fn predict_proba(&self, seq: &TokenSeq) -> Vec<T> {
        let scores: Vec<T> = (0..self.labels.len())
            .map(|l| {
                self.log_prior[l]
                    + seq
                        .iter()
                        .map(|t| self.token_log_likelihood(l, t))
                        .sum::<T>()
            })
            .collect();
        let norm = log_sum_exp(&scores);
        scores.into_iter().map(|s| (s - norm).exp()).collect()
    }

    /// Check the invariants a deserialized model must satisfy.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let bad = |m: &str| Err(Error::invalid(format!("naive Bayes model: {m}")));
        if self.log_prior.len() != n
            || self.log_likelihood.len() != n
            || self.unseen_log_likelihood.len() != n
        {
            return bad("table count does not match label count");
        }
        if !(self.alpha > T::zero()) {
            return bad("alpha must be positive");
        }
        let prior_sum: T = self.log_prior.iter().map(|p| p.exp()).sum();
        if (prior_sum - T::one()).abs() > T::lit(1e-6) {
            return bad("priors do not sum to one");
        }
        for row in &self.log_likelihood {
            if row.len() != self.vocabulary.len() || row.iter().any(|x| !x.is_finite()) {
                return bad("malformed likelihood row");
            }
        }
        if self.vocabulary.values().any(|&i| i >= self.vocabulary.len()) {
            return bad("vocabulary index out of range");
        }
        Ok(())
    }
}

impl<T: Real> AttributeClassifier for NaiveBayes<T> {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn probabilities(&self, seq: &TokenSeq) -> Result<Vec<f64>> {
        Ok(self
            .predict_proba(seq)
            .into_iter()
            .map(Real::to_f64_lossy)
            .collect())
    }
}

/// Fill `predicted_label` on every example from the classifier argmax.
pub fn annotate(corpus: &mut [LabeledExample], classifier: &dyn AttributeClassifier) -> Result<()> {
    for ex in corpus.iter_mut() {
        ex.predicted_label = Some(classifier.predict(&ex.seq)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn labels() -> LabelSet {
        LabelSet::new(["pos", "neg"]).unwrap()
    }

    fn ex(text: &str, label: &str) -> LabeledExample {
        LabeledExample::new(text, Some(labels().label(label).unwrap()))
    }

    fn toy() -> NaiveBayes<f64> {
        NaiveBayes::train(&[ex("good", "pos"), ex("bad", "neg")], &labels(), 1.0).unwrap()
    }

    #[test]
    fn add_one_hand_computation() {
        let m = toy();
        assert!((m.likelihood(0, "good") - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.likelihood(1, "good") - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.prior(0) - 0.5).abs() < 1e-12);
        assert!((m.prior(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn posterior_examples() {
        let m = toy();
        let p = m.predict_proba(&tokenize("good"));
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        let p = m.predict_proba(&TokenSeq::empty());
        assert!((p[0] - 0.5).abs() < 1e-12);
        let p = m.predict_proba(&tokenize("good good"));
        let expected = (2.0f64 / 3.0).powi(2) / ((2.0f64 / 3.0).powi(2) + (1.0f64 / 3.0).powi(2));
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] - 0.8).abs() < 1e-12);
        // unseen tokens carry equal smoothing mass under both labels here
        let p = m.predict_proba(&tokenize("zebra"));
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn training_errors() {
        let r = NaiveBayes::<f64>::train(&[ex("good", "pos")], &labels(), 1.0);
        assert!(matches!(r, Err(Error::UnrepresentedLabel(l)) if l == "neg"));
        let unlabeled = LabeledExample::new("x", None);
        assert!(matches!(
            NaiveBayes::<f64>::train(&[ex("good", "pos"), unlabeled], &labels(), 1.0),
            Err(Error::MissingGoldLabel(1))
        ));
        assert!(NaiveBayes::<f64>::train(&[ex("a", "pos"), ex("b", "neg")], &labels(), 0.0).is_err());
    }

    #[test]
    fn duplicated_corpus_gives_identical_probabilities() {
        let base = vec![ex("good food", "pos"), ex("bad food", "neg"), ex("good", "pos")];
        let mut doubled = base.clone();
        doubled.extend(base.clone());
        let a = NaiveBayes::<f64>::train(&base, &labels(), 1.0).unwrap();
        let b = NaiveBayes::<f64>::train(&doubled, &labels(), 1.0).unwrap();
        assert!((a.prior(0) - b.prior(0)).abs() < 1e-12);
        // smoothing mass shrinks relative to the doubled counts, so only the
        // priors and the decisions are unchanged
        for text in ["good", "bad", "food", "good bad food", ""] {
            let s = tokenize(text);
            assert_eq!(a.predict(&s).unwrap(), b.predict(&s).unwrap());
        }
    }

    #[test]
    fn likelihood_tables_normalize() {
        let corpus = vec![ex("a b c a", "pos"), ex("c d", "neg"), ex("e", "neg")];
        let m = NaiveBayes::<f64>::train(&corpus, &labels(), 0.5).unwrap();
        for l in 0..2 {
            let s: f64 = m.likelihood_table(l).iter().map(|(_, p)| p).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        m.validate().unwrap();
    }

    #[test]
    fn f32_model_agrees() {
        let m32 =
            NaiveBayes::<f32>::train(&[ex("good", "pos"), ex("bad", "neg")], &labels(), 1.0).unwrap();
        let p = m32.predict_proba(&tokenize("good good"));
        assert!((p[0] - 0.8).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn posterior_normalized_and_order_free(tokens in prop::collection::vec(prop::sample::select(vec!["good", "bad", "food", "the", "new"]), 0..10)) {
            let corpus = vec![ex("good food", "pos"), ex("the bad food", "neg"), ex("good good the", "pos")];
            let m = NaiveBayes::<f64>::train(&corpus, &labels(), 1.0).unwrap();
            let seq = tokenize(&tokens.join(" "));
            let p = m.predict_proba(&seq);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let mut rev = tokens.clone();
            rev.reverse();
            let q = m.predict_proba(&tokenize(&rev.join(" ")));
            prop_assert!((p[0] - q[0]).abs() < 1e-12);
            // "good" is likelier under pos, so appending it never lowers P(pos)
            let mut more = tokens.clone();
            more.push("good");
            let r = m.predict_proba(&tokenize(&more.join(" ")));
            prop_assert!(r[0] >= p[0] - 1e-15);
        }
    }
}
