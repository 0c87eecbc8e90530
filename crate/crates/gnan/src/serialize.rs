//! Versioned on-disk model container.
//!
//! Models are stored as JSON: a small header (`version`, `precision`)
//! followed by the full parameter payload. The header alone decides which
//! scalar type to parse into, so callers can open a model file without
//! being told its precision up front. JSON floats print in shortest
//! round-trip form, which makes save/load bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GnanError, Result};
use crate::model::GnanModel;
use crate::scalar::{Precision, Scalar};

/// Bumped whenever the container layout changes incompatibly.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct ContainerRef<'a, F> {
    version: u32,
    precision: Precision,
    model: &'a GnanModel<F>,
}

/// Header-only view; the parameter payload is skipped. Version and
/// precision are always checked through this before the payload parse.
#[derive(Deserialize)]
struct Header {
    version: u32,
    precision: Precision,
}

#[derive(Deserialize)]
struct Payload<F> {
    model: GnanModel<F>,
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(GnanError::schema(
            path,
            format!("container version {version}, this build reads version {FORMAT_VERSION}"),
        ));
    }
    Ok(())
}

fn parse_error(path: &Path, e: serde_json::Error) -> GnanError {
    GnanError::parse_at(path, format!("line {}, column {}", e.line(), e.column()), e.to_string())
}

pub fn save_model<F: Scalar>(path: impl AsRef<Path>, model: &GnanModel<F>) -> Result<()> {
    let path = path.as_ref();
    model.validate()?;
    let container = ContainerRef { version: FORMAT_VERSION, precision: F::PRECISION, model };
    let mut text = serde_json::to_string(&container)
        .map_err(|e| GnanError::Contract(format!("model serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| GnanError::io(path, e))
}

/// Reads only the header, telling the caller which scalar type
/// [`load_model`] must be instantiated with.
pub fn peek_precision(path: impl AsRef<Path>) -> Result<Precision> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GnanError::io(path, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    check_version(path, header.version)?;
    Ok(header.precision)
}

pub fn load_model<F: Scalar>(path: impl AsRef<Path>) -> Result<GnanModel<F>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GnanError::io(path, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    check_version(path, header.version)?;
    if header.precision != F::PRECISION {
        return Err(GnanError::Config(format!(
            "model stores {} parameters, caller expects {}",
            header.precision,
            F::PRECISION
        )));
    }
    let payload: Payload<F> = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    payload.model.validate()?;
    Ok(payload.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Task};
    use crate::synth::SynthConfig;

    fn small_model<F: Scalar>() -> GnanModel<F> {
        let cfg = ModelConfig {
            task: Task::GraphBinary,
            output_dim: 1,
            hidden_layers: 2,
            hidden_width: 4,
            dropout: 0.0,
            per_feature_distance: false,
            normalize_by_count: true,
        };
        GnanModel::new(&cfg, 3, 7).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = small_model::<f64>();
        save_model(&path, &model).unwrap();
        let loaded: GnanModel<f64> = load_model(&path).unwrap();
        assert_eq!(loaded, model);

        let mut synth = SynthConfig { graphs: 1, feature_dim: 3, seed: 11, ..SynthConfig::default() };
        synth.rule.linear = vec![1.0, 1.0, -0.5];
        synth.rule.quadratic = vec![0.0; 3];
        let g = &crate::synth::generate(&synth).unwrap()[0];
        let prof = crate::distance::all_pairs_distances(g);
        let before = model.predict_nodes(g, &prof).unwrap();
        let after = loaded.predict_nodes(g, &prof).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn round_trip_is_bit_exact_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = small_model::<f32>();
        save_model(&path, &model).unwrap();
        let loaded: GnanModel<f32> = load_model(&path).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn peek_reports_saved_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &small_model::<f32>()).unwrap();
        assert_eq!(peek_precision(&path).unwrap(), Precision::F32);
        save_model(&path, &small_model::<f64>()).unwrap();
        assert_eq!(peek_precision(&path).unwrap(), Precision::F64);
    }

    #[test]
    fn precision_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &small_model::<f32>()).unwrap();
        let err = load_model::<f64>(&path).unwrap_err();
        assert!(matches!(err, GnanError::Config(_)), "{err}");
        assert!(err.to_string().contains("f32") && err.to_string().contains("f64"));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &small_model::<f64>()).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        value["version"] = serde_json::json!(99);
        fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let err = load_model::<f64>(&path).unwrap_err();
        assert!(matches!(err, GnanError::Schema { .. }), "{err}");
        assert!(peek_precision(&path).is_err());
    }

    #[test]
    fn malformed_json_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        fs::write(&path, "{\"version\": 1, \"precision\":").unwrap();
        let err = load_model::<f64>(&path).unwrap_err();
        match err {
            GnanError::Parse { location, .. } => assert!(location.is_some()),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn inconsistent_shapes_fail_validation_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &small_model::<f64>()).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        value["model"]["per_feature_distance"] = serde_json::json!(true);
        fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let err = load_model::<f64>(&path).unwrap_err();
        assert!(matches!(err, GnanError::Validation(_)), "{err}");
    }
}
