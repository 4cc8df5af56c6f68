//! Controlled-denoising data, K-sample transfer with classifier-guided
//! selection, and student data distilled from filtered transfers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{GenOptions, InfillBackend, RewritePair, TrainingPair};
use crate::classifier::AttributeClassifier;
use crate::embedder::SentenceSimilarity;
use crate::error::{Error, Result};
use crate::noising::{make_variants, MaskSpec, MaskedVariant};
use crate::rng;
use crate::text::{detokenize, AttributeLabel, LabeledExample, TokenSeq};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Take the candidate with the highest target probability.
    BestProb,
    /// Return the source unchanged.
    CopySource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionPolicy {
    /// Minimum target-label probability for a candidate to pass.
    pub threshold: f64,
    pub fallback: Fallback,
    pub similarity_floor: Option<f64>,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy {
            threshold: 0.5,
            fallback: Fallback::BestProb,
            similarity_floor: None,
        }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} not in [0,1]", self.threshold)));
        }
        if let Some(f) = self.similarity_floor {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("similarity floor {f} not in [0,1]")));
            }
        }
        Ok(())
    }

    pub fn passes(&self, target_prob: f64, similarity: f64) -> bool {
        target_prob >= self.threshold && self.similarity_floor.is_none_or(|f| similarity >= f)
    }
}

/// Pick a candidate from `(target_prob, similarity)` scores: the most
/// similar passing candidate, else the policy fallback. Ties go to the
/// lowest index. `None` means the source should be copied.
pub fn select_candidate(scored: &[(f64, f64)], policy: &SelectionPolicy) -> Result<Option<usize>> {
    if scored.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    let best_by = |key: &dyn Fn(usize) -> Option<f64>| {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..scored.len() {
            if let Some(v) = key(i) {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
        }
        best.map(|(i, _)| i)
    };
    let passing = best_by(&|i| {
        let (p, s) = scored[i];
        policy.passes(p, s).then_some(s)
    });
    if passing.is_some() {
        return Ok(passing);
    }
    Ok(match policy.fallback {
        Fallback::BestProb => best_by(&|i| Some(scored[i].0)),
        Fallback::CopySource => None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRequest {
    pub source: TokenSeq,
    pub source_label: Option<AttributeLabel>,
    pub target_label: AttributeLabel,
    /// Number of masked variants.
    pub samples: usize,
    pub mask: MaskSpec,
    /// Decoding options per variant; `n` is samples per variant and variant
    /// `i` decodes with seed `mix(generation.seed, i)`.
    pub generation: GenOptions,
    /// Base seed of the masked variants.
    pub seed: u64,
    pub policy: SelectionPolicy,
}

impl TransferRequest {
    pub fn new(source: TokenSeq, target_label: AttributeLabel, samples: usize, mask: MaskSpec, seed: u64) -> Self {
        TransferRequest {
            source,
            source_label: None,
            target_label,
            samples,
            mask,
            generation: GenOptions {
                seed: rng::splitmix64(seed),
                ..GenOptions::default()
            },
            seed,
            policy: SelectionPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: TokenSeq,
    pub target_prob: f64,
    pub similarity: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub output: TokenSeq,
    /// `None` when the source was copied by the fallback.
    pub chosen_index: Option<usize>,
    pub candidates: Vec<Candidate>,
}

/// The trained parts a transfer needs, shared read-only.
#[derive(Clone, Copy)]
pub struct Components<'a> {
    pub backend: &'a dyn InfillBackend,
    pub classifier: &'a dyn AttributeClassifier,
    pub embedder: &'a dyn SentenceSimilarity,
}

fn score(c: &Components, candidate: TokenSeq, source: &TokenSeq, target: usize, policy: &SelectionPolicy) -> Result<Candidate> {
    let probs = c.classifier.probabilities(&candidate)?;
    let target_prob = probs[target].clamp(0.0, 1.0);
    let similarity = c.embedder.similarity(&candidate, source)?.clamp(0.0, 1.0);
    Ok(Candidate {
        passed: policy.passes(target_prob, similarity),
        tokens: candidate,
        target_prob,
        similarity,
    })
}

pub fn transfer(c: &Components, req: &TransferRequest) -> Result<TransferResult> {
    if req.samples == 0 {
        return Err(Error::invalid("samples must be >= 1"));
    }
    req.policy.validate()?;
    req.generation.validate()?;
    if !c.classifier.labels().contains(&req.target_label) {
        return Err(Error::UnknownLabel(req.target_label.name.clone()));
    }
    let variants = make_variants(&req.source, &req.mask, req.samples, req.seed)?;
    let target = req.target_label.index;
    let per_variant: Vec<Vec<Candidate>> = variants
        .par_iter()
        .enumerate()
        .map(|(i, variant)| {
            let opts = GenOptions {
                seed: rng::mix(req.generation.seed, i as u64),
                ..req.generation.clone()
            };
            c.backend
                .generate(variant, &req.target_label, &opts)?
                .into_iter()
                .map(|cand| score(c, cand, &req.source, target, &req.policy))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let candidates: Vec<Candidate> = per_variant.into_iter().flatten().collect();
    let scored: Vec<(f64, f64)> = candidates.iter().map(|c| (c.target_prob, c.similarity)).collect();
    let chosen_index = select_candidate(&scored, &req.policy)?;
    let output = match chosen_index {
        Some(i) => candidates[i].tokens.clone(),
        None => req.source.clone(),
    };
    Ok(TransferResult {
        output,
        chosen_index,
        candidates,
    })
}

/// Where training control labels come from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSource {
    /// Classifier argmax.
    #[default]
    Predicted,
    /// The corpus gold label.
    Gold,
    /// One label for every example, which removes the control signal.
    Constant(String),
}

/// `variants_per_example` masked variants of every non-empty corpus sentence,
/// each paired with its control label. Example `i` masks with base seed
/// `mix(seed, i)`.
pub fn build_denoising_data(
    corpus: &[LabeledExample],
    classifier: &dyn AttributeClassifier,
    spec: &MaskSpec,
    variants_per_example: usize,
    control: &ControlSource,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    spec.validate()?;
    let constant = match control {
        ControlSource::Constant(name) => Some(classifier.labels().label(name)?),
        _ => None,
    };
    let per_example: Vec<Vec<TrainingPair>> = corpus
        .par_iter()
        .enumerate()
        .filter(|(_, ex)| !ex.seq.is_empty())
        .map(|(i, ex)| {
            let label = match control {
                ControlSource::Predicted => match &ex.predicted_label {
                    Some(l) => l.clone(),
                    None => classifier.predict(&ex.seq)?,
                },
                ControlSource::Gold => ex.label.clone().ok_or(Error::MissingGoldLabel(i))?,
                ControlSource::Constant(_) => constant.clone().expect("resolved above"),
            };
            Ok(make_variants(&ex.seq, spec, variants_per_example, rng::mix(seed, i as u64))?
                .into_iter()
                .map(|variant| TrainingPair {
                    control: label.clone(),
                    variant,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_example.into_iter().flatten().collect())
}

/// Teacher settings for building student data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentDataOptions {
    pub samples: usize,
    pub mask: MaskSpec,
    pub generation: GenOptions,
    pub policy: SelectionPolicy,
    /// Keep pairs whose transfer fell back to copying the source.
    pub keep_fallbacks: bool,
    pub seed: u64,
}

impl Default for StudentDataOptions {
    fn default() -> Self {
        StudentDataOptions {
            samples: 32,
            mask: MaskSpec::default(),
            generation: GenOptions::default(),
            policy: SelectionPolicy::default(),
            keep_fallbacks: false,
            seed: 0,
        }
    }
}

/// One line of the teacher-output dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub source: String,
    pub control: String,
    pub output: String,
    pub target_prob: f64,
    pub similarity: f64,
}

impl StudentRecord {
    pub fn to_pair(&self, labels: &crate::text::LabelSet) -> Result<RewritePair> {
        Ok(RewritePair {
            control: labels.label(&self.control)?,
            input: crate::text::tokenize(&self.source),
            output: crate::text::tokenize(&self.output),
        })
    }
}

/// Transfer every non-empty corpus sentence to each label other than its own
/// (classifier-predicted unless already annotated) and keep the results as
/// text-to-text pairs with unmasked inputs. Example `i`, label `l` uses
/// request seed `mix(seed, i * labels + l)`.
pub fn build_student_data(
    teacher: &Components,
    corpus: &[LabeledExample],
    options: &StudentDataOptions,
) -> Result<Vec<StudentRecord>> {
    let labels = teacher.classifier.labels();
    let n_labels = labels.len() as u64;
    let per_example: Vec<Vec<StudentRecord>> = corpus
        .par_iter()
        .enumerate()
        .filter(|(_, ex)| !ex.seq.is_empty())
        .map(|(i, ex)| {
            let own = match &ex.predicted_label {
                Some(l) => l.clone(),
                None => teacher.classifier.predict(&ex.seq)?,
            };
            let mut records = Vec::new();
            for target in labels.iter().filter(|l| *l != own) {
                let seed = rng::mix(options.seed, i as u64 * n_labels + target.index as u64);
                let req = TransferRequest {
                    source: ex.seq.clone(),
                    source_label: Some(own.clone()),
                    target_label: target.clone(),
                    samples: options.samples,
                    mask: options.mask,
                    generation: GenOptions {
                        seed: rng::splitmix64(seed),
                        ..options.generation.clone()
                    },
                    seed,
                    policy: options.policy.clone(),
                };
                let result = transfer(teacher, &req)?;
                if result.chosen_index.is_none() && !options.keep_fallbacks {
                    continue;
                }
                let (target_prob, similarity) = match result.chosen_index {
                    Some(k) => (result.candidates[k].target_prob, result.candidates[k].similarity),
                    None => (teacher.classifier.probabilities(&ex.seq)?[target.index], 1.0),
                };
                records.push(StudentRecord {
                    source: detokenize(&ex.seq),
                    control: target.name.clone(),
                    output: detokenize(&result.output),
                    target_prob,
                    similarity,
                });
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(per_example.into_iter().flatten().collect())
}

/// Student pairs of equal input/output length; a length-preserving student
/// cannot learn from the rest. Returns the kept pairs and the number dropped.
pub fn student_pairs(records: &[StudentRecord], labels: &crate::text::LabelSet) -> Result<(Vec<RewritePair>, usize)> {
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for r in records {
        let pair = r.to_pair(labels)?;
        if pair.input.len() == pair.output.len() && !pair.input.is_empty() {
            kept.push(pair);
        } else {
            dropped += 1;
        }
    }
    Ok((kept, dropped))
}

/// An unmasked view of `source`, the input form a student decodes from.
pub fn student_input(source: &TokenSeq) -> MaskedVariant {
    MaskedVariant::unmasked(source, crate::noising::MaskMode::Soft)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy(threshold: f64, fallback: Fallback) -> SelectionPolicy {
        SelectionPolicy {
            threshold,
            fallback,
            similarity_floor: None,
        }
    }

    #[test]
    fn selection_examples() {
        let p = policy(0.5, Fallback::BestProb);
        assert_eq!(select_candidate(&[(0.9, 0.5), (0.6, 0.9), (0.4, 0.99)], &p).unwrap(), Some(1));
        assert_eq!(select_candidate(&[(0.4, 0.9), (0.3, 0.99)], &p).unwrap(), Some(0));
        assert_eq!(select_candidate(&[(0.8, 0.7), (0.8, 0.7)], &p).unwrap(), Some(0));
        let copy = policy(0.5, Fallback::CopySource);
        assert_eq!(select_candidate(&[(0.4, 0.9), (0.3, 0.99)], &copy).unwrap(), None);
        assert!(select_candidate(&[], &p).is_err());
        let floor = SelectionPolicy {
            similarity_floor: Some(0.95),
            ..p
        };
        assert_eq!(select_candidate(&[(0.9, 0.5), (0.6, 0.9)], &floor).unwrap(), Some(0));
    }

    proptest! {
        #[test]
        fn selection_dominates_passing(
            scored in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40),
            threshold in 0.0f64..=1.0,
        ) {
            let p = policy(threshold, Fallback::CopySource);
            let chosen = select_candidate(&scored, &p).unwrap();
            let passing: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].0 >= threshold).collect();
            match chosen {
                None => prop_assert!(passing.is_empty()),
                Some(c) => {
                    prop_assert!(scored[c].0 >= threshold);
                    let first_best = passing
                        .iter()
                        .copied()
                        .fold(None::<usize>, |b, i| match b {
                            Some(j) if scored[j].1 >= scored[i].1 => Some(j),
                            _ => Some(i),
                        })
                        .unwrap();
                    prop_assert_eq!(c, first_best);
                }
            }
        }
    }
}
