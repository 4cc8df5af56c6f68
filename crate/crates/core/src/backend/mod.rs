//! Conditional infilling generators behind one contract.
//!
//! A backend reconstructs text from a control label and a masked variant.
//! Denoising backends keep every unmasked token in place (copy constraint);
//! student models trained with [`neural::Objective::Rewrite`] regenerate
//! every position of an unmasked input instead.

pub mod bridge;
pub mod count;
pub mod neural;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noising::{MaskMode, MaskedVariant};
use crate::text::{AttributeLabel, TokenSeq, Vocab};

pub use count::CountModel;
pub use neural::{NeuralModel, NeuralTrainOptions, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Count,
    Neural,
    Bridge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Decoding request for one masked variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenOptions {
    pub n: usize,
    pub temperature: f64,
    pub mode: DecodeMode,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            n: 1,
            temperature: 1.0,
            mode: DecodeMode::Sample,
            seed: 0,
            max_len: 256,
        }
    }
}

impl GenOptions {
    pub fn greedy() -> Self {
        GenOptions {
            mode: DecodeMode::Greedy,
            ..Default::default()
        }
    }

    pub fn sample(n: usize, seed: u64) -> Self {
        GenOptions {
            n,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be >= 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.mode == DecodeMode::Greedy && self.n > 1 {
            return Err(Error::invalid("greedy decoding with n > 1 yields identical samples"));
        }
        Ok(())
    }
}

/// Controlled-denoising supervision: control label plus masked variant, with
/// the variant's source as the reconstruction target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub control: AttributeLabel,
    pub variant: MaskedVariant,
}

impl TrainingPair {
    pub fn source(&self) -> &TokenSeq {
        &self.variant.source
    }
}

/// Text-to-text supervision used to train a student: unmasked input plus a
/// control label mapped to a teacher output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewritePair {
    pub control: AttributeLabel,
    pub input: TokenSeq,
    pub output: TokenSeq,
}

pub trait InfillBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// `opts.n` reconstructions of `variant` steered toward `control`.
    fn generate(
        &self,
        variant: &MaskedVariant,
        control: &AttributeLabel,
        opts: &GenOptions,
    ) -> Result<Vec<TokenSeq>>;
}

/// Ignores the requested control and always decodes with a fixed one.
/// Paired with constant-control training this removes attribute steering.
pub struct ConstantControl<'a> {
    pub inner: &'a dyn InfillBackend,
    pub control: AttributeLabel,
}

impl InfillBackend for ConstantControl<'_> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn generate(
        &self,
        variant: &MaskedVariant,
        _control: &AttributeLabel,
        opts: &GenOptions,
    ) -> Result<Vec<TokenSeq>> {
        self.inner.generate(variant, &self.control, opts)
    }
}

/// Hyperparameters for the built-in backends.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub neural: NeuralTrainOptions,
}

/// A trained built-in backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendModel {
    Count(CountModel),
    Neural(NeuralModel<f64>),
}

impl BackendModel {
    pub fn vocab(&self) -> &Vocab {
        match self {
            BackendModel::Count(m) => m.vocab(),
            BackendModel::Neural(m) => m.vocab(),
        }
    }
}

impl InfillBackend for BackendModel {
    fn kind(&self) -> BackendKind {
        match self {
            BackendModel::Count(_) => BackendKind::Count,
            BackendModel::Neural(_) => BackendKind::Neural,
        }
    }

    fn generate(
        &self,
        variant: &MaskedVariant,
        control: &AttributeLabel,
        opts: &GenOptions,
    ) -> Result<Vec<TokenSeq>> {
        match self {
            BackendModel::Count(m) => m.generate(variant, control, opts),
            BackendModel::Neural(m) => m.generate(variant, control, opts),
        }
    }
}

/// Train a built-in backend on controlled-denoising pairs.
pub fn train_backend(
    kind: BackendKind,
    vocab: &Vocab,
    pairs: &[TrainingPair],
    options: &TrainOptions,
    seed: u64,
) -> Result<BackendModel> {
    match kind {
        BackendKind::Count => CountModel::train(vocab, pairs).map(BackendModel::Count),
        BackendKind::Neural => {
            NeuralModel::train(vocab, pairs, &options.neural, seed).map(BackendModel::Neural)
        }
        BackendKind::Bridge => Err(Error::invalid(
            "bridge backends train in the external process; use BridgeBackend::train",
        )),
    }
}

/// Shared checks for training data: non-empty, one vocabulary, known labels.
pub(crate) fn check_pairs(vocab: &Vocab, pairs: &[TrainingPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    for (i, pair) in pairs.iter().enumerate() {
        if !vocab.labels().contains(&pair.control) {
            return Err(Error::UnknownLabel(pair.control.name.clone()));
        }
        if let Some(t) = pair.variant.source.iter().find(|t| vocab.id(t).is_none()) {
            return Err(Error::VocabularyMismatch(format!(
                "pair {i}: token {t:?} is not in the training vocabulary"
            )));
        }
    }
    Ok(())
}

/// Output equals source whenever nothing is masked, for any denoiser.
pub(crate) fn copy_through(variant: &MaskedVariant, n: usize) -> Option<Vec<TokenSeq>> {
    variant
        .masked_positions
        .is_empty()
        .then(|| vec![variant.source.clone(); n])
}

pub(crate) fn require_kind(variant: &MaskedVariant, allowed: &[MaskMode], who: &str) -> Result<()> {
    if allowed.contains(&variant.kind) {
        Ok(())
    } else {
        Err(Error::UnsupportedVariant(format!(
            "{who} cannot decode {:?} variants",
            variant.kind
        )))
    }
}
