//! Model persistence.
//!
//! Every trained model saves to one JSON document with four top-level
//! keys: `format_version` (currently 1), `model_kind` (one of `mrf`,
//! `dn_lr`, `dn_mlp`, `backbone`, `ddn`), `dims` (the `[d, m, n]` triple:
//! raw feature width, evidence width, label count), and `payload` (the
//! model's own parameters). Floats are written in shortest-round-trip
//! decimal form, so `load(save(model))` reproduces every weight bitwise.
//!
//! For a standalone head (`dn_lr`/`dn_mlp`) no backbone is recorded and
//! `d = m`: the head consumes evidence vectors directly. For a standalone
//! `backbone`, `n = m`: pretraining supervises each embedding coordinate
//! with one label.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::ddn::{Backbone, DeepDependencyNetwork};
use crate::dn::{ClassifierKind, ConditionalDn};
use crate::error::{Error, Result};
use crate::mrf::PairwiseMrf;

pub const FORMAT_VERSION: u32 = 1;

/// Any model this crate can persist.
#[derive(Debug, Clone)]
pub enum Model {
    Mrf(PairwiseMrf),
    Dn(ConditionalDn),
    Backbone(Backbone),
    Ddn(DeepDependencyNetwork),
}

impl Model {
    /// The `model_kind` string written to the archive.
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Mrf(_) => "mrf",
            Model::Dn(dn) => match dn.kind() {
                ClassifierKind::Lr => "dn_lr",
                ClassifierKind::Mlp => "dn_mlp",
            },
            Model::Backbone(_) => "backbone",
            Model::Ddn(_) => "ddn",
        }
    }

    /// The `(d, m, n)` triple written to the archive (see module docs for
    /// the per-kind conventions).
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            Model::Mrf(mrf) => (mrf.n_evidence(), mrf.n_evidence(), mrf.n_labels()),
            Model::Dn(dn) => (dn.evidence_dim, dn.evidence_dim, dn.label_count),
            Model::Backbone(b) => (b.feature_dim(), b.embedding_dim(), b.embedding_dim()),
            Model::Ddn(ddn) => (
                ddn.feature_dim(),
                ddn.backbone.embedding_dim(),
                ddn.label_count(),
            ),
        }
    }

    fn has_non_finite(&self) -> bool {
        fn dn_bad(dn: &ConditionalDn) -> bool {
            use crate::dn::ConditionalClassifier;
            dn.classifiers.iter().any(|c| match c {
                ConditionalClassifier::Lr(lr) => {
                    !lr.bias.is_finite() || lr.weights.iter().any(|w| !w.is_finite())
                }
                ConditionalClassifier::Mlp { net } => net.has_non_finite(),
            })
        }
        match self {
            Model::Mrf(mrf) => mrf.weights().iter().any(|w| !w.is_finite()),
            Model::Dn(dn) => dn_bad(dn),
            Model::Backbone(b) => b.net.has_non_finite(),
            Model::Ddn(ddn) => ddn.backbone.net.has_non_finite() || dn_bad(&ddn.head),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ArchiveDoc {
    format_version: u32,
    model_kind: String,
    dims: (usize, usize, usize),
    payload: serde_json::Value,
}

/// Saves a model archive (atomically: to a temp file, then rename).
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    if model.has_non_finite() {
        return Err(Error::Validation(
            "refusing to save a model with non-finite parameters".into(),
        ));
    }
    let payload = match model {
        Model::Mrf(m) => serde_json::to_value(m),
        Model::Dn(m) => serde_json::to_value(m),
        Model::Backbone(m) => serde_json::to_value(m),
        Model::Ddn(m) => serde_json::to_value(m),
    }
    .expect("model serialization cannot fail on finite parameters");
    let doc = ArchiveDoc {
        format_version: FORMAT_VERSION,
        model_kind: model.kind().to_string(),
        dims: model.dims(),
        payload,
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .expect("archive serialization cannot fail");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Loads any model archive, checking version, kind, and declared
/// dimensions.
pub fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ArchiveDoc = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: format!("not a model archive: {e}"),
    })?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Version { found: doc.format_version, expected: FORMAT_VERSION });
    }
    let decode_err = |e: serde_json::Error| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: format!("payload does not decode as {:?}: {e}", doc.model_kind),
    };
    let model = match doc.model_kind.as_str() {
        "mrf" => Model::Mrf(serde_json::from_value(doc.payload).map_err(decode_err)?),
        "dn_lr" | "dn_mlp" => {
            let dn: ConditionalDn =
                serde_json::from_value(doc.payload).map_err(decode_err)?;
            dn.validate()?;
            let found = match dn.kind() {
                ClassifierKind::Lr => "dn_lr",
                ClassifierKind::Mlp => "dn_mlp",
            };
            if found != doc.model_kind {
                return Err(Error::Validation(format!(
                    "archive says {:?} but the payload holds a {found} head",
                    doc.model_kind
                )));
            }
            Model::Dn(dn)
        }
        "backbone" => {
            Model::Backbone(serde_json::from_value(doc.payload).map_err(decode_err)?)
        }
        "ddn" => {
            let ddn: DeepDependencyNetwork =
                serde_json::from_value(doc.payload).map_err(decode_err)?;
            ddn.head.validate()?;
            if ddn.backbone.embedding_dim() != ddn.head.evidence_dim {
                return Err(Error::Dimension(
                    "archived backbone and head disagree on the evidence width".into(),
                ));
            }
            Model::Ddn(ddn)
        }
        other => {
            return Err(Error::Validation(format!("unknown model_kind {other:?}")))
        }
    };
    if doc.dims != model.dims() {
        return Err(Error::Dimension(format!(
            "archive declares dims {:?} but the payload has {:?}",
            doc.dims,
            model.dims()
        )));
    }
    Ok(model)
}
