//! Versioned JSON persistence for fitted models.
//!
//! ```json
//! { "schema_version": 1, "model": { "gene_ids": [...], "lambda": [...], ... } }
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::classifier::NbldaModel;
use crate::error::{NbldaError, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: u32,
    model: &'a NbldaModel,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

#[derive(Deserialize)]
struct DocumentIn {
    model: NbldaModel,
}

pub fn model_to_json(model: &NbldaModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&DocumentOut {
        schema_version: MODEL_SCHEMA_VERSION,
        model,
    })?)
}

pub fn write_model<W: Write>(model: &NbldaModel, mut writer: W) -> Result<()> {
    writer.write_all(model_to_json(model)?.as_bytes())?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Parses a model document, rejecting any schema version but the current one.
pub fn model_from_json(text: &str) -> Result<NbldaModel> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    match probe.schema_version {
        Some(MODEL_SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(NbldaError::Model(format!(
                "unsupported model schema version {v} (expected {MODEL_SCHEMA_VERSION})"
            )))
        }
        None => return Err(NbldaError::Model("model document has no schema_version".into())),
    }
    let doc: DocumentIn = serde_json::from_str(text)?;
    doc.model.revalidate()
}

pub fn read_model<R: Read>(mut reader: R) -> Result<NbldaModel> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{fit_nblda, FitOptions};
    use crate::count_data::{CountMatrix, LabeledDataset};

    fn model() -> NbldaModel {
        let m = CountMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            (0..6).map(|i| format!("s{i}")).collect(),
            vec![vec![3, 5, 4, 30, 41, 25], vec![9, 12, 7, 8, 11, 10], vec![0, 1, 0, 6, 2, 9]],
        )
        .unwrap();
        let d = LabeledDataset::new(m, vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        fit_nblda(&d, &FitOptions::default()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unknown_version_rejected() {
        let text = model_to_json(&model()).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
        let err = model_from_json(&text).unwrap_err();
        assert!(err.to_string().contains("schema version 2"), "{err}");
        assert!(model_from_json("{\"model\": {}}").is_err());
    }

    #[test]
    fn invalid_parameters_rejected_on_load() {
        let m = model();
        let mut v: serde_json::Value = serde_json::from_str(&model_to_json(&m).unwrap()).unwrap();
        v["model"]["class_diff"][0][0] = serde_json::json!(-1.0);
        assert!(model_from_json(&v.to_string()).is_err());
    }
}
