use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{layout, Forecaster, ModelConfig, ModelError};
use crate::domain::VariableCatalog;
use crate::sampling::{NormStats, SplitConfig, WindowSpec};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A model together with everything needed to rebuild its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub forecaster: Forecaster,
    pub norm_stats: NormStats,
    pub catalog: VariableCatalog,
    pub window: WindowSpec,
    pub split: SplitConfig,
}

#[derive(Serialize, Deserialize)]
struct ConfigSection {
    model: ModelConfig,
    window: WindowSpec,
    split: SplitConfig,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: [usize; 2],
    /// Little-endian `f32`, base64.
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ConfigSection,
    norm_stats: NormStats,
    catalog: VariableCatalog,
    tensors: BTreeMap<String, StoredTensor>,
}

fn encode(t: &Tensor) -> StoredTensor {
    let mut bytes = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    StoredTensor { shape: [t.rows(), t.cols()], data: STANDARD.encode(bytes) }
}

fn decode(name: &str, s: &StoredTensor) -> Result<Tensor, ModelError> {
    let bytes = STANDARD
        .decode(&s.data)
        .map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
    if bytes.len() != s.shape[0] * s.shape[1] * 4 {
        return Err(ModelError::Checkpoint(format!(
            "{name}: {} bytes for shape {:?}",
            bytes.len(),
            s.shape
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Tensor::from_vec(s.shape[0], s.shape[1], data)?)
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: ConfigSection {
            model: model.forecaster.config,
            window: model.window,
            split: model.split,
        },
        norm_stats: model.norm_stats.clone(),
        catalog: model.catalog.clone(),
        tensors: model
            .forecaster
            .params
            .iter()
            .map(|(_, name, t)| (name.to_string(), encode(t)))
            .collect(),
    };
    let json = serde_json::to_string(&file).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::fs::write(path, json).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format_version {}", file.format_version)));
    }
    let n_vars = file.catalog.len();
    let mut params = ParamStore::new();
    for (name, _, _) in layout(&file.config.model, n_vars) {
        let stored = file
            .tensors
            .get(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
        params.add(name.clone(), decode(&name, stored)?);
    }
    if file.tensors.len() != params.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} tensors stored, {} expected",
            file.tensors.len(),
            params.len()
        )));
    }
    Ok(TrainedModel {
        forecaster: Forecaster::from_params(file.config.model, n_vars, params)?,
        norm_stats: file.norm_stats,
        catalog: file.catalog,
        window: file.config.window,
        split: file.config.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{catalog_default, VariableId};
    use crate::sampling::{MeanStd, Token, WindowSample};

    #[test]
    fn round_trip_is_bit_exact() {
        let catalog = catalog_default();
        let cfg = ModelConfig { d_model: 8, n_blocks: 1, n_heads: 2, ..Default::default() };
        let model = TrainedModel {
            forecaster: Forecaster::new(cfg, catalog.len()).unwrap(),
            norm_stats: NormStats {
                variables: vec![MeanStd::IDENTITY; catalog.len()],
                static_fields: [MeanStd { mean: 61.5, std: 10.2 }, MeanStd::IDENTITY, MeanStd::IDENTITY],
                time_scale_days: 28.0,
            },
            catalog,
            window: WindowSpec::default(),
            split: SplitConfig::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        let s = WindowSample {
            patient_id: "p".into(),
            cutoff_days: 14.0,
            tokens: vec![Token { t_rel: -0.3, var: VariableId(2), v_norm: 0.4 }],
            static_vec: [0.1, 0.0, -0.2],
            label: 0,
        };
        let a = model.forecaster.predict(&s).unwrap();
        let b = back.forecaster.predict(&s).unwrap();
        assert_eq!(a.risk.to_bits(), b.risk.to_bits());

        save_checkpoint(&back, &dir.path().join("again.json")).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("again.json")).unwrap());
    }

    #[test]
    fn version_and_missing_tensors_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"format_version":2}"#).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
