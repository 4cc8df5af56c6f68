//! Sentence similarity for candidate selection and the Semantic metric.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::text::{LabeledExample, TokenSeq};

pub trait SentenceSimilarity: Send + Sync {
    /// Similarity in `[0, 1]`, symmetric in its arguments.
    fn similarity(&self, a: &TokenSeq, b: &TokenSeq) -> Result<f64>;
}

/// TF-IDF vectors compared by cosine. Term frequency is the raw count and
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdf<T> {
    documents: usize,
    idf: BTreeMap<String, T>,
}

impl<T: Real> TfIdf<T> {
    pub fn fit(corpus: &[LabeledExample]) -> Result<Self> {
        Self::fit_sequences(corpus.iter().map(|e| &e.seq))
    }

    pub fn fit_sequences<'a>(docs: impl IntoIterator<Item = &'a TokenSeq>) -> Result<Self> {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut documents = 0;
        for doc in docs {
            documents += 1;
            let unique: BTreeSet<&str> = doc.iter().collect();
            for t in unique {
                *df.entry(t.to_string()).or_default() += 1;
            }
        }
        if documents == 0 {
            return Err(Error::EmptyCorpus);
        }
        let n = T::from_usize(documents).unwrap();
        let idf = df
            .into_iter()
            .map(|(t, d)| {
                let d = T::from_usize(d).unwrap();
                (t, ((T::one() + n) / (T::one() + d)).ln() + T::one())
            })
            .collect();
        Ok(TfIdf { documents, idf })
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn idf(&self, token: &str) -> T {
        self.idf.get(token).copied().unwrap_or_else(|| {
            (T::one() + T::from_usize(self.documents).unwrap()).ln() + T::one()
        })
    }

    fn weights<'a>(&self, seq: &'a TokenSeq) -> BTreeMap<&'a str, T> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in seq.iter() {
            *counts.entry(t).or_default() += 1;
        }
        counts
            .into_iter()
            .map(|(t, c)| (t, T::from_usize(c).unwrap() * self.idf(t)))
            .collect()
    }

    pub fn cosine(&self, a: &TokenSeq, b: &TokenSeq) -> T {
        match (a.is_empty(), b.is_empty()) {
            (true, true) => return T::one(),
            (true, false) | (false, true) => return T::zero(),
            _ => {}
        }
        let wa = self.weights(a);
        let wb = self.weights(b);
        if wa.keys().eq(wb.keys()) && wa.values().zip(wb.values()).all(|(x, y)| x == y) {
            return T::one();
        }
        let dot: T = wa
            .iter()
            .filter_map(|(t, &x)| wb.get(t).map(|&y| x * y))
            .sum();
        let na: T = wa.values().map(|&x| x * x).sum();
        let nb: T = wb.values().map(|&y| y * y).sum();
        (dot / (na.sqrt() * nb.sqrt())).min(T::one()).max(T::zero())
    }

    pub fn validate(&self) -> Result<()> {
        if self.documents == 0 {
            return Err(Error::invalid("tf-idf index: zero documents"));
        }
        if self.idf.values().any(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(Error::invalid("tf-idf index: invalid idf value"));
        }
        Ok(())
    }
}

impl<T: Real> SentenceSimilarity for TfIdf<T> {
    fn similarity(&self, a: &TokenSeq, b: &TokenSeq) -> Result<f64> {
        Ok(self.cosine(a, b).to_f64_lossy())
    }
}

/// Cosine of two dense vectors clamped to `[0, 1]`.
pub fn clamped_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        return Ok(1.0);
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn index(docs: &[&str]) -> TfIdf<f64> {
        let seqs: Vec<TokenSeq> = docs.iter().map(|d| tokenize(d)).collect();
        TfIdf::fit_sequences(&seqs).unwrap()
    }

    #[test]
    fn idf_formula() {
        let one = index(&["a"]);
        assert!((one.idf("a") - 1.0).abs() < 1e-15);
        assert!((one.idf("unseen") - (2.0f64.ln() + 1.0)).abs() < 1e-15);
        let idx = index(&["a b", "a c", "a"]);
        assert!(idx.idf("a") < idx.idf("b"));
        assert!((idx.idf("b") - ((4.0f64 / 2.0).ln() + 1.0)).abs() < 1e-15);
        assert!(TfIdf::<f64>::fit_sequences(std::iter::empty()).is_err());
    }

    #[test]
    fn cosine_examples() {
        let idx = index(&["x y z"]);
        // every idf equals 1 in a one-document corpus
        let s = |t: &str| tokenize(t);
        assert_eq!(idx.cosine(&s("x y"), &s("x y")), 1.0);
        assert_eq!(idx.cosine(&s("x y"), &s("z")), 0.0);
        assert!((idx.cosine(&s("x y"), &s("x z")) - 0.5).abs() < 1e-12);
        assert_eq!(idx.cosine(&s(""), &s("")), 1.0);
        assert_eq!(idx.cosine(&s(""), &s("x")), 0.0);
    }

    proptest! {
        #[test]
        fn symmetric_bounded_scale_invariant(
            a in prop::collection::vec(prop::sample::select(vec!["p", "q", "r", "s", "t"]), 0..8),
            b in prop::collection::vec(prop::sample::select(vec!["p", "q", "r", "s", "u"]), 0..8),
            k in 1usize..4,
        ) {
            let idx = index(&["p q r", "q r s", "r s t", "p"]);
            let sa = tokenize(&a.join(" "));
            let sb = tokenize(&b.join(" "));
            let ab = idx.cosine(&sa, &sb);
            prop_assert!((ab - idx.cosine(&sb, &sa)).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab));
            let repeated: Vec<&str> = a.iter().flat_map(|t| std::iter::repeat_n(*t, k)).collect();
            let sk = tokenize(&repeated.join(" "));
            prop_assert!((idx.cosine(&sk, &sb) - ab).abs() < 1e-9);
        }
    }
}
