//! Window-context infiller with a learned embedding table.
//!
//! Each input position `j` is represented by a blend of its token embedding
//! and the mask embedding, `x_j = (1 - w_j) E[token_j] + w_j E[MASK]`, where
//! `w_j` is the soft-mask weight (1 for hard-masked positions). A position
//! `i` is predicted from
//!
//! ```text
//! h_i = E[control] + mean { x_j : |j - i| <= c, j != i }
//! p_i = softmax(W h_i + b)
//! ```
//!
//! over corpus tokens only, so sentinels and control tokens are never emitted.
//! Masked positions are predicted independently of one another.
//!
//! Parameters start uniform in `[-init_scale, init_scale]` (embeddings first,
//! then output rows, row-major, from the training seed) with zero bias, and
//! are trained by plain SGD on one pair per step with learning rate
//! `learning_rate / sqrt(step)`, pairs reshuffled every epoch.

use serde::{Deserialize, Serialize};

use super::{
    check_pairs, copy_through, require_kind, BackendKind, DecodeMode, GenOptions, InfillBackend,
    RewritePair, TrainingPair,
};
use crate::error::{Error, Result};
use crate::noising::{MaskMode, MaskedVariant};
use crate::rng;
use crate::scalar::{log_sum_exp, softmax, Real};
use crate::text::{AttributeLabel, TokenId, TokenSeq, Vocab};
use rand::seq::SliceRandom;

/// What a model is trained to do with its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Reconstruct masked positions; unmasked tokens are copied.
    Denoise,
    /// Rewrite every position of an unmasked input. Each position is
    /// predicted from its neighbors and the control, as in denoising.
    Rewrite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralTrainOptions {
    pub dim: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_scale: f64,
    /// Stop after this many SGD steps, if set.
    pub max_steps: Option<usize>,
}

impl NeuralTrainOptions {
    /// Defaults for distilled rewriters: a wider, narrower-window model
    /// trained longer, since student sets are small and every position is
    /// supervised.
    pub fn student() -> Self {
        NeuralTrainOptions {
            dim: 64,
            window: 2,
            learning_rate: 0.5,
            epochs: 100,
            init_scale: 0.5,
            max_steps: None,
        }
    }
}

impl Default for NeuralTrainOptions {
    fn default() -> Self {
        NeuralTrainOptions {
            dim: 32,
            window: 3,
            learning_rate: 0.1,
            epochs: 5,
            init_scale: 0.05,
            max_steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel<T> {
    vocab: Vocab,
    objective: Objective,
    dim: usize,
    window: usize,
    /// One row per vocabulary id, sentinels and controls included.
    embeddings: Vec<Vec<T>>,
    /// One row per corpus token; class `k` is vocabulary id `reserved + k`.
    output: Vec<Vec<T>>,
    bias: Vec<T>,
}

/// Gradient with the same shape as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralGradient<T> {
    pub embeddings: Vec<Vec<T>>,
    pub output: Vec<Vec<T>>,
    pub bias: Vec<T>,
}

impl<T: Real> NeuralGradient<T> {
    fn zeros_like(model: &NeuralModel<T>) -> Self {
        NeuralGradient {
            embeddings: vec![vec![T::zero(); model.dim]; model.embeddings.len()],
            output: vec![vec![T::zero(); model.dim]; model.output.len()],
            bias: vec![T::zero(); model.bias.len()],
        }
    }

    /// Entry `index` in the flat order used by [`NeuralModel::param`].
    pub fn flat(&self, index: usize) -> T {
        let d = self.embeddings.first().map_or(0, Vec::len);
        let e = self.embeddings.len() * d;
        let w = self.output.len() * d;
        if index < e {
            self.embeddings[index / d][index % d]
        } else if index < e + w {
            let k = index - e;
            self.output[k / d][k % d]
        } else {
            self.bias[index - e - w]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings
            .iter()
            .chain(&self.output)
            .flatten()
            .chain(&self.bias)
            .all(|x| x.is_finite())
    }
}

/// Encoded input: token ids, blend weights, control id.
struct Encoded<T> {
    ids: Vec<TokenId>,
    weights: Vec<T>,
    control: TokenId,
}

struct Example<T> {
    input: Encoded<T>,
    /// `(position, output class)` pairs contributing to the loss.
    targets: Vec<(usize, usize)>,
}

impl<T: Real> NeuralModel<T> {
    /// Freshly initialized, untrained model.
    pub fn init(vocab: &Vocab, objective: Objective, options: &NeuralTrainOptions, seed: u64) -> Result<Self> {
        if options.dim == 0 {
            return Err(Error::invalid("embedding dimension must be >= 1"));
        }
        if vocab.corpus_len() == 0 {
            return Err(Error::invalid("vocabulary has no corpus tokens"));
        }
        let scale = options.init_scale;
        let mut rng = rng::stream(seed);
        let mut row = |d: usize| -> Vec<T> {
            (0..d)
                .map(|_| T::lit((2.0 * rng::unit(&mut rng) - 1.0) * scale))
                .collect()
        };
        let embeddings = (0..vocab.len()).map(|_| row(options.dim)).collect();
        let output = (0..vocab.corpus_len()).map(|_| row(options.dim)).collect();
        Ok(NeuralModel {
            vocab: vocab.clone(),
            objective,
            dim: options.dim,
            window: options.window,
            embeddings,
            output,
            bias: vec![T::zero(); vocab.corpus_len()],
        })
    }

    /// Train a denoiser on controlled-denoising pairs. Pairs without masked
    /// positions carry no supervision and are skipped.
    pub fn train(vocab: &Vocab, pairs: &[TrainingPair], options: &NeuralTrainOptions, seed: u64) -> Result<Self> {
        check_pairs(vocab, pairs)?;
        let mut model = Self::init(vocab, Objective::Denoise, options, seed)?;
        let examples = pairs
            .iter()
            .filter(|p| !p.variant.masked_positions.is_empty())
            .map(|p| model.denoise_example(p))
            .collect::<Result<Vec<_>>>()?;
        model.fit(&examples, options, seed)?;
        Ok(model)
    }

    /// Train a student on text-to-text pairs of equal length.
    pub fn train_rewrite(vocab: &Vocab, pairs: &[RewritePair], options: &NeuralTrainOptions, seed: u64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("no training pairs"));
        }
        let mut model = Self::init(vocab, Objective::Rewrite, options, seed)?;
        let examples = pairs
            .iter()
            .filter(|p| !p.input.is_empty())
            .map(|p| model.rewrite_example(p))
            .collect::<Result<Vec<_>>>()?;
        model.fit(&examples, options, seed)?;
        Ok(model)
    }

    fn fit(&mut self, examples: &[Example<T>], options: &NeuralTrainOptions, seed: u64) -> Result<()> {
        if examples.is_empty() {
            return Err(Error::NoSupervisedPositions);
        }
        let max_steps = options.max_steps.unwrap_or(usize::MAX);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut step = 0usize;
        'epochs: for epoch in 0..options.epochs {
            let mut rng = rng::stream(rng::mix(seed, epoch as u64 + 1));
            order.shuffle(&mut rng);
            for &i in &order {
                if step >= max_steps {
                    break 'epochs;
                }
                step += 1;
                let lr = T::lit(options.learning_rate / (step as f64).sqrt());
                let (_, grad) = self.example_forward_backward(&examples[i]);
                self.apply(&grad, lr);
            }
        }
        Ok(())
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn output_classes(&self) -> usize {
        self.output.len()
    }

    fn class_of(&self, token: &str) -> Result<usize> {
        match self.vocab.id(token) {
            Some(id) if !self.vocab.is_reserved(id) => Ok(id as usize - self.vocab.reserved_count()),
            _ => Err(Error::VocabularyMismatch(format!(
                "target token {token:?} is not an output class"
            ))),
        }
    }

    fn encode(&self, seq: &TokenSeq, weights: Vec<f64>, control: &AttributeLabel) -> Result<Encoded<T>> {
        Ok(Encoded {
            ids: seq.iter().map(|t| self.vocab.id_or_unk(t)).collect(),
            weights: weights.into_iter().map(T::lit).collect(),
            control: self.vocab.control_id(control)?,
        })
    }

    fn denoise_example(&self, pair: &TrainingPair) -> Result<Example<T>> {
        let v = &pair.variant;
        let input = self.encode(&v.source, v.position_weights(), &pair.control)?;
        let targets = v
            .masked_positions
            .iter()
            .map(|&i| Ok((i, self.class_of(&v.source.tokens()[i])?)))
            .collect::<Result<Vec<_>>>()?;
        if targets.is_empty() {
            return Err(Error::NoSupervisedPositions);
        }
        Ok(Example { input, targets })
    }

    fn rewrite_example(&self, pair: &RewritePair) -> Result<Example<T>> {
        if pair.input.len() != pair.output.len() {
            return Err(Error::invalid(format!(
                "rewrite pair lengths differ ({} vs {})",
                pair.input.len(),
                pair.output.len()
            )));
        }
        let input = self.encode(&pair.input, vec![0.0; pair.input.len()], &pair.control)?;
        let targets = pair
            .output
            .iter()
            .enumerate()
            .map(|(i, t)| Ok((i, self.class_of(t)?)))
            .collect::<Result<Vec<_>>>()?;
        if targets.is_empty() {
            return Err(Error::NoSupervisedPositions);
        }
        Ok(Example { input, targets })
    }

    fn neighbors(&self, len: usize, i: usize) -> impl Iterator<Item = usize> {
        let lo = i.saturating_sub(self.window);
        let hi = (i + self.window).min(len.saturating_sub(1));
        (lo..=hi).filter(move |&j| j != i)
    }

    fn blended(&self, input: &Encoded<T>, j: usize) -> impl Iterator<Item = T> + '_ {
        let w = input.weights[j];
        let token = &self.embeddings[input.ids[j] as usize];
        let mask = &self.embeddings[Vocab::MASK_ID as usize];
        token
            .iter()
            .zip(mask)
            .map(move |(&e, &m)| (T::one() - w) * e + w * m)
    }

    fn context(&self, input: &Encoded<T>, i: usize) -> Vec<T> {
        let mut h = self.embeddings[input.control as usize].clone();
        let nbrs: Vec<usize> = self.neighbors(input.ids.len(), i).collect();
        if nbrs.is_empty() {
            return h;
        }
        let mut acc = vec![T::zero(); self.dim];
        for &j in &nbrs {
            for (a, x) in acc.iter_mut().zip(self.blended(input, j)) {
                *a += x;
            }
        }
        let m = T::from_usize(nbrs.len()).unwrap();
        for (hk, a) in h.iter_mut().zip(acc) {
            *hk += a / m;
        }
        h
    }

    fn logits_for(&self, h: &[T]) -> Vec<T> {
        self.output
            .iter()
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(h).map(|(&w, &x)| w * x).sum::<T>() + b)
            .collect()
    }

    /// Output logits at `position` for a variant under `control`.
    pub fn logits_at(&self, variant: &MaskedVariant, control: &AttributeLabel, position: usize) -> Result<Vec<T>> {
        if position >= variant.source.len() {
            return Err(Error::invalid(format!("position {position} out of range")));
        }
        let input = self.encode(&variant.source, variant.position_weights(), control)?;
        Ok(self.logits_for(&self.context(&input, position)))
    }

    fn example_forward_backward(&self, ex: &Example<T>) -> (T, NeuralGradient<T>) {
        let mut grad = NeuralGradient::zeros_like(self);
        let scale = T::one() / T::from_usize(ex.targets.len()).unwrap();
        let mut loss = T::zero();
        let len = ex.input.ids.len();
        for &(i, target) in &ex.targets {
            let h = self.context(&ex.input, i);
            let logits = self.logits_for(&h);
            let norm = log_sum_exp(&logits);
            loss += norm - logits[target];

            let mut dh = vec![T::zero(); self.dim];
            for (k, &z) in logits.iter().enumerate() {
                let mut dz = (z - norm).exp();
                if k == target {
                    dz -= T::one();
                }
                dz *= scale;
                grad.bias[k] += dz;
                for ((g, &x), (d, &w)) in grad.output[k]
                    .iter_mut()
                    .zip(&h)
                    .zip(dh.iter_mut().zip(&self.output[k]))
                {
                    *g += dz * x;
                    *d += dz * w;
                }
            }
            for (g, &d) in grad.embeddings[ex.input.control as usize].iter_mut().zip(&dh) {
                *g += d;
            }
            let nbrs: Vec<usize> = self.neighbors(len, i).collect();
            if nbrs.is_empty() {
                continue;
            }
            let m = T::from_usize(nbrs.len()).unwrap();
            for j in nbrs {
                let w = ex.input.weights[j];
                let token_coef = (T::one() - w) / m;
                let mask_coef = w / m;
                let tok = ex.input.ids[j] as usize;
                for (g, &d) in grad.embeddings[tok].iter_mut().zip(&dh) {
                    *g += token_coef * d;
                }
                for (g, &d) in grad.embeddings[Vocab::MASK_ID as usize].iter_mut().zip(&dh) {
                    *g += mask_coef * d;
                }
            }
        }
        (loss * scale, grad)
    }

    /// Mean cross-entropy over the masked positions of `pair` and its
    /// analytic gradient.
    pub fn forward_backward(&self, pair: &TrainingPair) -> Result<(T, NeuralGradient<T>)> {
        let ex = self.denoise_example(pair)?;
        Ok(self.example_forward_backward(&ex))
    }

    pub fn forward_backward_rewrite(&self, pair: &RewritePair) -> Result<(T, NeuralGradient<T>)> {
        let ex = self.rewrite_example(pair)?;
        Ok(self.example_forward_backward(&ex))
    }

    pub fn loss(&self, pair: &TrainingPair) -> Result<T> {
        self.forward_backward(pair).map(|(l, _)| l)
    }

    /// Mean loss over pairs that have masked positions.
    pub fn mean_loss(&self, pairs: &[TrainingPair]) -> Result<T> {
        let losses = pairs
            .iter()
            .filter(|p| !p.variant.masked_positions.is_empty())
            .map(|p| self.loss(p))
            .collect::<Result<Vec<T>>>()?;
        if losses.is_empty() {
            return Err(Error::NoSupervisedPositions);
        }
        Ok(losses.iter().copied().sum::<T>() / T::from_usize(losses.len()).unwrap())
    }

    fn apply(&mut self, grad: &NeuralGradient<T>, lr: T) {
        let rows = self
            .embeddings
            .iter_mut()
            .zip(&grad.embeddings)
            .chain(self.output.iter_mut().zip(&grad.output));
        for (row, g) in rows {
            for (p, &d) in row.iter_mut().zip(g) {
                *p -= lr * d;
            }
        }
        for (b, &d) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * d;
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        (self.embeddings.len() + self.output.len()) * self.dim + self.bias.len()
    }

    /// Which table, row, and column flat index `index` addresses.
    fn locate(&self, index: usize) -> (usize, usize, usize) {
        let d = self.dim;
        let e = self.embeddings.len() * d;
        let w = self.output.len() * d;
        if index < e {
            (0, index / d, index % d)
        } else if index < e + w {
            (1, (index - e) / d, (index - e) % d)
        } else {
            (2, index - e - w, 0)
        }
    }

    /// Parameter `index` in flat order: embeddings, output rows, bias.
    pub fn param(&self, index: usize) -> T {
        match self.locate(index) {
            (0, r, c) => self.embeddings[r][c],
            (1, r, c) => self.output[r][c],
            (_, r, _) => self.bias[r],
        }
    }

    pub fn set_param(&mut self, index: usize, value: T) {
        match self.locate(index) {
            (0, r, c) => self.embeddings[r][c] = value,
            (1, r, c) => self.output[r][c] = value,
            (_, r, _) => self.bias[r] = value,
        }
    }

    /// Flat index of embedding component `(token id, k)`.
    pub fn embedding_index(&self, id: TokenId, k: usize) -> usize {
        id as usize * self.dim + k
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("neural model: {m}")));
        if self.embeddings.len() != self.vocab.len()
            || self.output.len() != self.vocab.corpus_len()
            || self.bias.len() != self.vocab.corpus_len()
        {
            return bad("parameter shapes do not match the vocabulary");
        }
        if self
            .embeddings
            .iter()
            .chain(&self.output)
            .any(|r| r.len() != self.dim)
        {
            return bad("row width differs from dim");
        }
        let finite = self
            .embeddings
            .iter()
            .chain(&self.output)
            .flatten()
            .chain(&self.bias)
            .all(|x| x.is_finite());
        if !finite {
            return bad("non-finite parameter");
        }
        Ok(())
    }
}

impl<T: Real> InfillBackend for NeuralModel<T> {
    fn kind(&self) -> BackendKind {
        BackendKind::Neural
    }

    fn generate(&self, variant: &MaskedVariant, control: &AttributeLabel, opts: &GenOptions) -> Result<Vec<TokenSeq>> {
        opts.validate()?;
        require_kind(variant, &[MaskMode::Hard, MaskMode::Soft], "neural backend")?;
        let free: Vec<usize> = match self.objective {
            Objective::Denoise => {
                if let Some(copies) = copy_through(variant, opts.n) {
                    self.vocab.control_id(control)?;
                    return Ok(copies);
                }
                variant.masked_positions.clone()
            }
            Objective::Rewrite => (0..variant.source.len()).collect(),
        };
        let input = self.encode(&variant.source, variant.position_weights(), control)?;
        let reserved = self.vocab.reserved_count();
        let temperature = T::lit(opts.temperature);
        let dists: Vec<Vec<f64>> = free
            .iter()
            .map(|&i| {
                let logits = self.logits_for(&self.context(&input, i));
                match opts.mode {
                    DecodeMode::Greedy => logits.into_iter().map(Real::to_f64_lossy).collect(),
                    DecodeMode::Sample => softmax(&logits, temperature)
                        .into_iter()
                        .map(Real::to_f64_lossy)
                        .collect(),
                }
            })
            .collect();

        let mut outputs = Vec::with_capacity(opts.n);
        for sample in 0..opts.n {
            let mut rng = rng::stream(rng::mix(opts.seed, sample as u64));
            let mut tokens = variant.source.tokens().to_vec();
            for (&i, dist) in free.iter().zip(&dists) {
                let class = match opts.mode {
                    DecodeMode::Greedy => rng::argmax(dist),
                    DecodeMode::Sample => rng::weighted_index(&mut rng, dist),
                };
                tokens[i] = self
                    .vocab
                    .token((reserved + class) as TokenId)
                    .expect("class maps to a corpus token")
                    .to_string();
            }
            outputs.push(TokenSeq::new(tokens)?);
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

    fn corpus() -> Vec<(TokenSeq, AttributeLabel)> {
        let texts = [
            ("the food was great", "pos"),
            ("the food was awful", "neg"),
            ("service here is great today", "pos"),
            ("service here is awful today", "neg"),
            ("i liked the great staff", "pos"),
        ];
        texts
            .iter()
            .map(|(t, l)| (tokenize(t), labels().label(l).unwrap()))
            .collect()
    }

    fn vocab() -> Vocab {
        let c = corpus();
        Vocab::from_sequences(c.iter().map(|(s, _)| s), &labels()).unwrap()
    }

    fn pairs(spec: MaskSpec, per: usize) -> Vec<TrainingPair> {
        corpus()
            .into_iter()
            .enumerate()
            .flat_map(|(i, (seq, control))| {
                make_variants(&seq, &spec, per, i as u64)
                    .unwrap()
                    .into_iter()
                    .map(move |variant| TrainingPair {
                        control: control.clone(),
                        variant,
                    })
            })
            .collect()
    }

    #[test]
    fn zero_steps_keeps_initialization() {
        let opts = NeuralTrainOptions {
            epochs: 0,
            ..Default::default()
        };
        let trained = NeuralModel::<f64>::train(&vocab(), &pairs(MaskSpec::hard(0.4), 2), &opts, 5).unwrap();
        let init = NeuralModel::<f64>::init(&vocab(), Objective::Denoise, &opts, 5).unwrap();
        assert_eq!(trained, init);
        for i in 0..init.param_count() {
            let p = init.param(i);
            if i < init.embeddings.len() * init.dim + init.output.len() * init.dim {
                assert!(p.abs() <= 0.05);
            } else {
                assert_eq!(p, 0.0);
            }
        }
    }

    #[test]
    fn untrained_loss_near_log_classes() {
        let v = vocab();
        let m = NeuralModel::<f64>::init(&v, Objective::Denoise, &Default::default(), 3).unwrap();
        let expected = (v.corpus_len() as f64).ln();
        for p in pairs(MaskSpec::hard(0.4), 3) {
            let loss = m.loss(&p).unwrap();
            assert!((loss - expected).abs() < 0.1, "{loss} vs {expected}");
        }
    }

    #[test]
    fn no_supervised_positions() {
        let v = vocab();
        let m = NeuralModel::<f64>::init(&v, Objective::Denoise, &Default::default(), 3).unwrap();
        let pair = TrainingPair {
            control: labels().get(0).unwrap(),
            variant: MaskedVariant::unmasked(&tokenize("the food was great"), MaskMode::Soft),
        };
        assert!(matches!(m.forward_backward(&pair), Err(Error::NoSupervisedPositions)));
    }

    #[test]
    fn full_blend_zeroes_token_gradient() {
        let v = vocab();
        let opts = NeuralTrainOptions {
            init_scale: 0.5,
            ..Default::default()
        };
        let m = NeuralModel::<f64>::init(&v, Objective::Denoise, &opts, 9).unwrap();
        // "today" occurs once and is fully replaced by the mask representation
        let seq = tokenize("service here is awful today");
        let variant = MaskedVariant::with_positions(&seq, &[3, 4], MaskMode::Soft, 1.0).unwrap();
        let pair = TrainingPair {
            control: labels().get(1).unwrap(),
            variant,
        };
        let (_, grad) = m.forward_backward(&pair).unwrap();
        let today = v.id("today").unwrap() as usize;
        assert!(grad.embeddings[today].iter().all(|&g| g == 0.0));
        assert!(grad.embeddings[Vocab::MASK_ID as usize].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn soft_mask_limits_are_exact() {
        let v = vocab();
        let opts = NeuralTrainOptions {
            init_scale: 0.3,
            ..Default::default()
        };
        let m = NeuralModel::<f64>::init(&v, Objective::Denoise, &opts, 21).unwrap();
        let seq = tokenize("service here is great today");
        let ctrl = labels().get(0).unwrap();
        let plain = MaskedVariant::unmasked(&seq, MaskMode::Soft);
        let zero = MaskedVariant {
            weights: Some(vec![0.0; 5]),
            masked_positions: vec![],
            ..plain.clone()
        };
        let full = MaskedVariant::with_positions(&seq, &[1, 3], MaskMode::Soft, 1.0).unwrap();
        let substituted = MaskedVariant::unmasked(&tokenize("service <mask> is <mask> today"), MaskMode::Soft);
        for i in 0..5 {
            assert_eq!(m.logits_at(&zero, &ctrl, i).unwrap(), m.logits_at(&plain, &ctrl, i).unwrap());
            assert_eq!(m.logits_at(&full, &ctrl, i).unwrap(), m.logits_at(&substituted, &ctrl, i).unwrap());
        }
    }

    #[test]
    fn training_reduces_loss() {
        let v = vocab();
        let data = pairs(MaskSpec::hard(0.4), 10);
        assert_eq!(data.len(), 50);
        let before = NeuralModel::<f64>::init(&v, Objective::Denoise, &Default::default(), 1)
            .unwrap()
            .mean_loss(&data)
            .unwrap();
        let opts = NeuralTrainOptions {
            max_steps: Some(200),
            ..Default::default()
        };
        let trained = NeuralModel::<f64>::train(&v, &data, &opts, 1).unwrap();
        let after = trained.mean_loss(&data).unwrap();
        assert!(after < before, "{after} !< {before}");
        trained.validate().unwrap();
    }

    #[test]
    fn generation_contract() {
        let v = vocab();
        let m = NeuralModel::<f64>::train(&v, &pairs(MaskSpec::soft(0.4, 0.5), 8), &Default::default(), 2).unwrap();
        let seq = tokenize("the food was great");
        let neg = labels().get(1).unwrap();
        let var = MaskedVariant::with_positions(&seq, &[2, 3], MaskMode::Soft, 0.5).unwrap();
        let outs = m.generate(&var, &neg, &GenOptions::sample(5, 8)).unwrap();
        assert_eq!(outs.len(), 5);
        for o in &outs {
            assert_eq!(o.len(), 4);
            assert_eq!(&o.tokens()[..2], &seq.tokens()[..2]);
            assert!(o.iter().all(|t| !crate::text::is_reserved_spelling(t)));
        }
        assert_eq!(outs, m.generate(&var, &neg, &GenOptions::sample(5, 8)).unwrap());
        let g1 = m.generate(&var, &neg, &GenOptions::greedy()).unwrap();
        let g2 = m.generate(&var, &neg, &GenOptions { seed: 1234, ..GenOptions::greedy() }).unwrap();
        assert_eq!(g1, g2);
        let none = MaskedVariant::unmasked(&seq, MaskMode::Hard);
        assert_eq!(m.generate(&none, &neg, &GenOptions::greedy()).unwrap(), vec![seq]);
    }

    #[test]
    fn f32_model_trains() {
        let v = vocab();
        let data = pairs(MaskSpec::hard(0.4), 4);
        let m = NeuralModel::<f32>::train(&v, &data, &Default::default(), 4).unwrap();
        assert!(m.mean_loss(&data).unwrap().is_finite());
    }
}
