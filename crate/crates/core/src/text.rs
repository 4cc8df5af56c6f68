//! Tokens, attribute labels, and the vocabulary with its reserved sentinels.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MASK_TOKEN: &str = "<mask>";
pub const UNK_TOKEN: &str = "<unk>";
const CONTROL_PREFIX: &str = "<attr:";
const CONTROL_SUFFIX: &str = ">";

/// True for the sentinel spellings the vocabulary reserves.
pub fn is_reserved_spelling(token: &str) -> bool {
    token == MASK_TOKEN
        || token == UNK_TOKEN
        || (token.starts_with(CONTROL_PREFIX) && token.ends_with(CONTROL_SUFFIX))
}

/// A tokenized sentence: lowercased, whitespace-free, non-empty tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        for t in &tokens {
            if t.is_empty() {
                return Err(Error::InvalidTokens("empty token".into()));
            }
            if t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidTokens(format!("token {t:?} contains whitespace")));
            }
        }
        Ok(TokenSeq(tokens))
    }

    pub fn empty() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    // callers guarantee the tokenizer invariants
    pub(crate) fn from_trusted(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
        TokenSeq(tokens)
    }
}

impl TryFrom<Vec<String>> for TokenSeq {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        TokenSeq::new(tokens)
    }
}

impl From<TokenSeq> for Vec<String> {
    fn from(seq: TokenSeq) -> Self {
        seq.0
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&detokenize(self))
    }
}

/// Lowercase and split on runs of whitespace.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(text.split_whitespace().map(str::to_lowercase).collect())
}

pub fn detokenize(seq: &TokenSeq) -> String {
    seq.0.join(" ")
}

/// An attribute value: its name and its position in the label set.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeLabel {
    pub name: String,
    pub index: usize,
}

impl fmt::Display for AttributeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Ordered set of at least two uniquely named attribute labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidLabelSet(format!(
                "need at least 2 labels, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() || name.contains(char::is_whitespace) || name.contains('>') {
                return Err(Error::InvalidLabelSet(format!("bad label name {name:?}")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidLabelSet(format!("duplicate label {name:?}")));
            }
        }
        Ok(LabelSet { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, index: usize) -> Option<AttributeLabel> {
        self.names.get(index).map(|name| AttributeLabel {
            name: name.clone(),
            index,
        })
    }

    pub fn label(&self, name: &str) -> Result<AttributeLabel> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|index| AttributeLabel {
                name: name.to_string(),
                index,
            })
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn contains(&self, label: &AttributeLabel) -> bool {
        self.names.get(label.index) == Some(&label.name)
    }

    pub fn iter(&self) -> impl Iterator<Item = AttributeLabel> + '_ {
        (0..self.names.len()).filter_map(|i| self.get(i))
    }

    /// The canonical control token `<attr:NAME>` for `label`.
    pub fn control_token(&self, label: &AttributeLabel) -> Result<String> {
        if !self.contains(label) {
            return Err(Error::UnknownLabel(label.name.clone()));
        }
        Ok(control_spelling(&label.name))
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        LabelSet::new(names)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.names
    }
}

fn control_spelling(name: &str) -> String {
    format!("{CONTROL_PREFIX}{name}{CONTROL_SUFFIX}")
}

/// A corpus sentence with its gold and/or classifier-assigned attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub text: String,
    pub seq: TokenSeq,
    pub label: Option<AttributeLabel>,
    pub predicted_label: Option<AttributeLabel>,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: Option<AttributeLabel>) -> Self {
        let text = text.into();
        let seq = tokenize(&text);
        LabeledExample {
            text,
            seq,
            label,
            predicted_label: None,
        }
    }

    /// Predicted label when present, otherwise the gold one.
    pub fn effective_label(&self) -> Option<&AttributeLabel> {
        self.predicted_label.as_ref().or(self.label.as_ref())
    }
}

pub type TokenId = u32;

/// Dense token/id table. Ids `0` and `1` are `<mask>` and `<unk>`, followed
/// by one control token per label, then corpus tokens in first-occurrence
/// order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    labels: LabelSet,
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    labels: LabelSet,
    tokens: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;

    fn try_from(repr: VocabRepr) -> Result<Self> {
        let reserved = reserved_tokens(&repr.labels);
        if repr.tokens.len() < reserved.len() || repr.tokens[..reserved.len()] != reserved[..] {
            return Err(Error::VocabularyMismatch(
                "reserved tokens missing or out of order".into(),
            ));
        }
        let mut vocab = Vocab {
            labels: repr.labels,
            tokens: reserved,
            ids: HashMap::new(),
        };
        for (i, t) in vocab.tokens.iter().enumerate() {
            vocab.ids.insert(t.clone(), i as TokenId);
        }
        let n = vocab.tokens.len();
        for t in &repr.tokens[n..] {
            vocab.push_corpus_token(t)?;
        }
        if vocab.tokens.len() != repr.tokens.len() {
            return Err(Error::VocabularyMismatch("duplicate corpus token".into()));
        }
        Ok(vocab)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            labels: v.labels,
            tokens: v.tokens,
        }
    }
}

fn reserved_tokens(labels: &LabelSet) -> Vec<String> {
    let mut tokens = vec![MASK_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(labels.names().iter().map(|n| control_spelling(n)));
    tokens
}

impl Vocab {
    pub const MASK_ID: TokenId = 0;
    pub const UNK_ID: TokenId = 1;

    /// Build from token sequences; fails on empty input or reserved spellings.
    pub fn from_sequences<'a>(
        seqs: impl IntoIterator<Item = &'a TokenSeq>,
        labels: &LabelSet,
    ) -> Result<Self> {
        let mut vocab = Vocab::try_from(VocabRepr {
            labels: labels.clone(),
            tokens: reserved_tokens(labels),
        })?;
        let mut any = false;
        for seq in seqs {
            any = true;
            for t in seq.iter() {
                vocab.push_corpus_token(t)?;
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        Ok(vocab)
    }

    fn push_corpus_token(&mut self, token: &str) -> Result<()> {
        if is_reserved_spelling(token) {
            return Err(Error::ReservedToken(token.to_string()));
        }
        if self.ids.contains_key(token) {
            return Ok(());
        }
        self.ids.insert(token.to_string(), self.tokens.len() as TokenId);
        self.tokens.push(token.to_string());
        Ok(())
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of reserved ids preceding the corpus tokens.
    pub fn reserved_count(&self) -> usize {
        2 + self.labels.len()
    }

    pub fn corpus_len(&self) -> usize {
        self.len() - self.reserved_count()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn control_id(&self, label: &AttributeLabel) -> Result<TokenId> {
        if !self.labels.contains(label) {
            return Err(Error::UnknownLabel(label.name.clone()));
        }
        Ok((2 + label.index) as TokenId)
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        (id as usize) < self.reserved_count()
    }

    /// Corpus tokens in id order.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[self.reserved_count()..]
    }
}

/// Vocabulary over a labeled corpus.
pub fn build_vocab(corpus: &[LabeledExample], labels: &LabelSet) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Vocab::from_sequences(corpus.iter().map(|e| &e.seq), labels)
}
