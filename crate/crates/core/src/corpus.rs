//! JSON Lines corpora, test sets, and the synthetic lexicon-swap corpus.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::text::{tokenize, LabelSet, LabeledExample, TokenSeq};

/// Placeholder replaced by a lexicon word in toy templates.
pub const SLOT: &str = "__SLOT__";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestLine {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub target_label: String,
}

fn data_error(path: &Path, line: usize, detail: impl std::fmt::Display) -> Error {
    Error::invalid(format!("{}:{}: {detail}", path.display(), line + 1))
}

/// Parse a JSON Lines file, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| data_error(path, i, e))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Resolve corpus lines against a label set.
pub fn labeled_examples(lines: &[CorpusLine], labels: &LabelSet) -> Result<Vec<LabeledExample>> {
    lines
        .iter()
        .map(|l| {
            let label = l.label.as_deref().map(|n| labels.label(n)).transpose()?;
            Ok(LabeledExample::new(l.text.clone(), label))
        })
        .collect()
}

pub fn read_corpus(path: &Path, labels: &LabelSet) -> Result<Vec<LabeledExample>> {
    labeled_examples(&read_jsonl(path)?, labels)
}

/// Distinct label names in corpus order of first appearance.
pub fn label_names(lines: &[CorpusLine]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    lines
        .iter()
        .filter_map(|l| l.label.clone())
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

/// A test item resolved against a label set.
#[derive(Clone, Debug, PartialEq)]
pub struct TestItem {
    pub source: TokenSeq,
    pub reference: Option<TokenSeq>,
    pub target: crate::text::AttributeLabel,
}

pub fn test_items(lines: &[TestLine], labels: &LabelSet) -> Result<Vec<TestItem>> {
    lines
        .iter()
        .map(|l| {
            Ok(TestItem {
                source: tokenize(&l.source),
                reference: l.reference.as_deref().map(tokenize),
                target: labels.label(&l.target_label)?,
            })
        })
        .collect()
}

pub fn read_test_set(path: &Path, labels: &LabelSet) -> Result<Vec<TestItem>> {
    test_items(&read_jsonl(path)?, labels)
}

/// Template sentences with one slot each and a disjoint lexicon per label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyCorpusSpec {
    pub templates: Vec<String>,
    /// `(label, words)` in label order.
    pub lexicons: Vec<(String, Vec<String>)>,
    /// Training lines per (template, label) combination.
    pub train_per_template_label: usize,
    /// Test lines per source label.
    pub test_per_label: usize,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        ToyCorpusSpec {
            templates: [
                "the food was __SLOT__ .",
                "i found the service __SLOT__ overall .",
                "this place is __SLOT__ for lunch",
                "the staff here seemed __SLOT__ today",
            ]
            .map(String::from)
            .to_vec(),
            lexicons: vec![
                ("positive".into(), words(&["great", "excellent", "wonderful", "amazing", "superb"])),
                ("negative".into(), words(&["awful", "terrible", "horrible", "bland", "dreadful"])),
            ],
            train_per_template_label: 25,
            test_per_label: 25,
            seed: 0,
        }
    }
}

impl ToyCorpusSpec {
    pub fn labels(&self) -> Result<LabelSet> {
        LabelSet::new(self.lexicons.iter().map(|(n, _)| n.clone()))
    }

    pub fn validate(&self) -> Result<()> {
        self.labels()?;
        if self.templates.is_empty() {
            return Err(Error::invalid("toy corpus needs at least one template"));
        }
        for t in &self.templates {
            let seq = tokenize(t);
            if seq.iter().filter(|w| *w == SLOT.to_lowercase()).count() != 1 {
                return Err(Error::invalid(format!("template {t:?} must contain exactly one {SLOT}")));
            }
        }
        let mut seen = BTreeSet::new();
        for (label, words) in &self.lexicons {
            if words.is_empty() {
                return Err(Error::invalid(format!("lexicon for `{label}` is empty")));
            }
            for w in words {
                let toks = tokenize(w);
                if toks.len() != 1 || toks.tokens()[0] != *w {
                    return Err(Error::invalid(format!("lexicon entry {w:?} must be one lowercase token")));
                }
                if !seen.insert(w.clone()) {
                    return Err(Error::invalid(format!("lexicons overlap on {w:?}")));
                }
            }
        }
        Ok(())
    }

    /// Tokens of template `t` with the slot filled by `word`.
    pub fn fill(&self, template: usize, word: &str) -> TokenSeq {
        let slot = SLOT.to_lowercase();
        let tokens = tokenize(&self.templates[template])
            .into_tokens()
            .into_iter()
            .map(|t| if t == slot { word.to_string() } else { t })
            .collect();
        TokenSeq::new(tokens).expect("lexicon words are single tokens")
    }

    /// Every single-slot swap of `source` into a word of `target_label`'s
    /// lexicon, or `None` if `source` is not a filled template.
    pub fn swap_set(&self, source: &TokenSeq, target_label: &str) -> Option<Vec<TokenSeq>> {
        let (_, target_words) = self.lexicons.iter().find(|(n, _)| n == target_label)?;
        let all_words: BTreeSet<&String> = self.lexicons.iter().flat_map(|(_, w)| w).collect();
        (0..self.templates.len()).find_map(|t| {
            let matches = all_words.iter().any(|w| self.fill(t, w) == *source);
            matches.then(|| target_words.iter().map(|w| self.fill(t, w)).collect())
        })
    }

    /// Generate `(train, test)` lines. Training lines cycle through labels
    /// within each template; test sources cycle through templates and target
    /// the next label, with a reference that swaps the slot word to a
    /// uniformly drawn word of the target lexicon.
    pub fn generate(&self) -> Result<(Vec<CorpusLine>, Vec<TestLine>)> {
        self.validate()?;
        let mut rng = rng::stream(self.seed);
        let mut pick = |words: &[String]| words[rng.gen_range(0..words.len())].clone();
        let mut train = Vec::new();
        for t in 0..self.templates.len() {
            for _ in 0..self.train_per_template_label {
                for (label, words) in &self.lexicons {
                    train.push(CorpusLine {
                        text: crate::text::detokenize(&self.fill(t, &pick(words))),
                        label: Some(label.clone()),
                    });
                }
            }
        }
        let mut test = Vec::new();
        let n_labels = self.lexicons.len();
        for (l, (_, words)) in self.lexicons.iter().enumerate() {
            let (target, target_words) = &self.lexicons[(l + 1) % n_labels];
            for i in 0..self.test_per_label {
                let t = i % self.templates.len();
                test.push(TestLine {
                    source: crate::text::detokenize(&self.fill(t, &pick(words))),
                    reference: Some(crate::text::detokenize(&self.fill(t, &pick(target_words)))),
                    target_label: target.clone(),
                });
            }
        }
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_corpus_shape() {
        let spec = ToyCorpusSpec::default();
        let (train, test) = spec.generate().unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 50);
        assert_eq!(spec.generate().unwrap(), (train.clone(), test.clone()));
        for line in &test {
            let s = tokenize(&line.source);
            let r = tokenize(line.reference.as_ref().unwrap());
            assert_eq!(s.len(), r.len());
            assert_eq!(s.iter().zip(r.iter()).filter(|(a, b)| a != b).count(), 1);
            let swaps = spec.swap_set(&s, &line.target_label).unwrap();
            assert_eq!(swaps.len(), 5);
            assert!(swaps.contains(&r));
        }
    }

    #[test]
    fn two_templates_fifty_each() {
        let spec = ToyCorpusSpec {
            templates: vec!["a __SLOT__ b".into(), "__SLOT__ c".into()],
            train_per_template_label: 50,
            ..Default::default()
        };
        assert_eq!(spec.generate().unwrap().0.len(), 200);
    }

    #[test]
    fn invalid_specs() {
        let overlap = ToyCorpusSpec {
            lexicons: vec![("a".into(), vec!["x".into()]), ("b".into(), vec!["x".into()])],
            ..Default::default()
        };
        assert!(overlap.generate().is_err());
        let two_slots = ToyCorpusSpec {
            templates: vec!["__SLOT__ and __SLOT__".into()],
            ..Default::default()
        };
        assert!(two_slots.generate().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let lines = vec![
            CorpusLine { text: "a b".into(), label: Some("x".into()) },
            CorpusLine { text: "c".into(), label: None },
        ];
        write_jsonl(&path, &lines).unwrap();
        assert_eq!(read_jsonl::<CorpusLine>(&path).unwrap(), lines);
        std::fs::write(&path, "{\"text\": 3}\n").unwrap();
        let err = read_jsonl::<CorpusLine>(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
    }
}
