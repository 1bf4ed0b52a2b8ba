//! Versioned JSON files holding one trained model each.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edn::EdnModel;
use crate::error::{Error, Result};
use crate::kema::KemaModel;
use crate::svm::SvmModel;

pub const MODEL_FORMAT: &str = "xmorph-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum StoredModel {
    Edn(EdnModel),
    Kema(KemaModel),
    Svm(SvmModel),
}

impl StoredModel {
    pub fn kind(&self) -> &'static str {
        match self {
            StoredModel::Edn(_) => "edn",
            StoredModel::Kema(_) => "kema",
            StoredModel::Svm(_) => "svm",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: StoredModel,
}

pub fn save_model(model: &StoredModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<StoredModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(MODEL_FORMAT) => {}
        other => {
            return Err(Error::ModelFormat(format!(
                "{}: expected format tag `{MODEL_FORMAT}`, found {other:?}",
                path.display()
            )))
        }
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MODEL_VERSION) => {}
        other => {
            return Err(Error::ModelFormat(format!(
                "{}: unsupported version {other:?}",
                path.display()
            )))
        }
    }
    let file: ModelFile = serde_json::from_value(value)?;
    Ok(file.model)
}
