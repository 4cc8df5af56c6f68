//! JSON model files: `{"format": NAME, "version": N, "model": {...}}`.
//!
//! Files are written to a temporary sibling and renamed into place, so a
//! reader never observes a partial file. Loading checks the envelope and the
//! model's own invariants before returning anything.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{BackendModel, CountModel, NeuralModel};
use crate::classifier::NaiveBayes;
use crate::embedder::TfIdf;
use crate::error::{Error, Result};
use crate::metrics::NgramLm;
use crate::scalar::Real;

pub const FORMAT_VERSION: u32 = 1;

pub trait Persist: Serialize + DeserializeOwned {
    const FORMAT: &'static str;

    fn check(&self) -> Result<()>;
}

impl<T: Real> Persist for NaiveBayes<T> {
    const FORMAT: &'static str = "styleshift.classifier";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl<T: Real> Persist for TfIdf<T> {
    const FORMAT: &'static str = "styleshift.embedder";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl<T: Real> Persist for NgramLm<T> {
    const FORMAT: &'static str = "styleshift.lm";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Persist for CountModel {
    const FORMAT: &'static str = "styleshift.count";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl<T: Real> Persist for NeuralModel<T> {
    const FORMAT: &'static str = "styleshift.neural";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Persist for BackendModel {
    const FORMAT: &'static str = "styleshift.backend";

    fn check(&self) -> Result<()> {
        match self {
            BackendModel::Count(m) => m.validate(),
            BackendModel::Neural(m) => m.validate(),
        }
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a, M> {
    format: &'a str,
    version: u32,
    model: &'a M,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    format: String,
    version: u32,
    model: Value,
}

pub fn save_model<M: Persist>(model: &M, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&EnvelopeOut {
        format: M::FORMAT,
        version: FORMAT_VERSION,
        model,
    })?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::invalid("model path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    };
    write().inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

pub fn load_model<M: Persist>(path: &Path) -> Result<M> {
    let fail = |detail: String| Error::Format {
        expected: M::FORMAT,
        version: FORMAT_VERSION,
        detail,
    };
    let text = fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let env: EnvelopeIn = serde_json::from_str(&text).map_err(|e| fail(format!("not a model file: {e}")))?;
    if env.format != M::FORMAT {
        return Err(fail(format!("file holds `{}`", env.format)));
    }
    if env.version != FORMAT_VERSION {
        return Err(fail(format!("file has version {}", env.version)));
    }
    let model: M = serde_json::from_value(env.model).map_err(|e| fail(format!("malformed model: {e}")))?;
    model.check().map_err(|e| fail(e.to_string()))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{tokenize, LabelSet, LabeledExample};

    fn classifier() -> NaiveBayes<f64> {
        let labels = LabelSet::new(["pos", "neg"]).unwrap();
        let corpus = vec![
            LabeledExample::new("good food", Some(labels.label("pos").unwrap())),
            LabeledExample::new("bad food", Some(labels.label("neg").unwrap())),
        ];
        NaiveBayes::train(&corpus, &labels, 1.0).unwrap()
    }

    #[test]
    fn envelope_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nb.json");
        let m = classifier();
        save_model(&m, &path).unwrap();
        let back: NaiveBayes<f64> = load_model(&path).unwrap();
        assert_eq!(back.predict_proba(&tokenize("good")), m.predict_proba(&tokenize("good")));

        let wrong = load_model::<TfIdf<f64>>(&path).unwrap_err().to_string();
        assert!(wrong.contains("styleshift.embedder") && wrong.contains("version 1"), "{wrong}");

        let text = fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":7");
        fs::write(&path, text).unwrap();
        let err = load_model::<NaiveBayes<f64>>(&path).unwrap_err().to_string();
        assert!(err.contains("version 7"), "{err}");

        fs::write(&path, "{\"format\": \"styleshift.classifier\", \"ver").unwrap();
        assert!(load_model::<NaiveBayes<f64>>(&path).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn backend_model_round_trip() {
        use crate::backend::TrainingPair;
        use crate::noising::{MaskMode, MaskedVariant};
        use crate::text::Vocab;

        let labels = LabelSet::new(["pos", "neg"]).unwrap();
        let seqs: Vec<_> = (0..12).map(|i| tokenize(&format!("w{i} good food"))).collect();
        let vocab = Vocab::from_sequences(&seqs, &labels).unwrap();
        let pairs: Vec<TrainingPair> = seqs
            .iter()
            .map(|s| TrainingPair {
                control: labels.label("pos").unwrap(),
                variant: MaskedVariant::with_positions(s, &[1], MaskMode::Hard, 1.0).unwrap(),
            })
            .collect();
        let model = BackendModel::Count(CountModel::train(&vocab, &pairs).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("backend.json");
        save_model(&model, &path).unwrap();
        assert_eq!(load_model::<BackendModel>(&path).unwrap(), model);
    }
}
